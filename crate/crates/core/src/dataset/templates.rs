//! Template banks that verbalize a scripted modulation at two levels of
//! specificity. Every produced string parses back to the scripted operation.

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::labels::{LabelRegistry, TargetRef};
use crate::modlang::{ModulationOp, Position, SkipTarget, SpeedSetting};
use crate::scene::ObjectId;
use crate::tasks::{ActionKind, TaskPlan};
use crate::SceneState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Specificity {
    /// Brief, possibly vague phrasing.
    LS,
    /// Detailed, unambiguous phrasing.
    HS,
}

impl Specificity {
    pub fn as_str(self) -> &'static str {
        match self {
            Specificity::LS => "ls",
            Specificity::HS => "hs",
        }
    }
}

/// Scene facts a template may verbalize.
pub struct TemplateContext<'a> {
    pub task_id: &'a str,
    pub scene: &'a SceneState,
    pub plan: &'a TaskPlan,
    pub registry: &'a LabelRegistry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub template_id: String,
    pub text: String,
}

struct Bank {
    heads: Vec<String>,
    tails: &'static [&'static str],
}

const SHORT_TAILS: &[&str] = &["", "!", " now", " please", ", please"];
const SPEED_LS_TAILS: &[&str] = &["", "!", " now", " please", ", please", " there", " with it", " a bit", " from here"];
const SPEED_HS_TAILS: &[&str] = &[
    " to move it",
    " when you carry it, it is fragile",
    " for the rest of the task and keep the motion smooth",
    " with every object from now on",
    " because the objects can easily tip over",
    " while you finish the remaining steps",
    " and keep the same path as before",
    " until the task is complete",
];
const REORDER_HS_TAILS: &[&str] = &[
    ", before the other one",
    ", then continue with the rest",
    " and then finish the task as planned",
    ", so the remaining steps follow afterwards",
];
const SUBSTITUTE_LS_TAILS: &[&str] = &["", "!", " please"];
const SUBSTITUTE_HS_TAILS: &[&str] = &[
    " instead, and hand it over to me",
    ", because that is the one I need",
    ", then bring it to me as planned",
    " instead, the rest of the task stays the same",
    ", and keep the rest of the plan unchanged",
    " since the other one is not what I asked for",
];
const AVOID_LS_TAILS: &[&str] = &["", "!", " please"];
const AVOID_HS_TAILS: &[&str] = &[
    ", on the way to me go above it instead",
    ", keep well clear of it when you hand me the object",
    " and take a higher path over it",
    ", then continue the handover as planned",
    " while carrying the object to me",
    " because nothing should touch it",
    " so the path stays well above it",
    ", and otherwise keep the plan",
];
const SKIP_LS_TAILS: &[&str] = &["", "!", " please", " now", ", for now", ", please", ", this time", " instead"];
const SKIP_HS_TAILS: &[&str] = &[
    ", leave it on the table",
    " and only place the other one",
    ", the rest stays as planned",
    " because it is not needed",
    ", do not move it at all",
    " and finish with the remaining subtask",
    ", then return to the start position",
    " since it already has a place",
    " while keeping everything else the same",
    ", it should stay where it is",
];

fn describe_label(ctx: &TemplateContext<'_>, id: ObjectId) -> Option<(String, String)> {
    let o = ctx.scene.object(id)?;
    Some((o.color.as_str().to_string(), o.shape.as_str().to_string()))
}

/// Surface forms of `target` that parse back to the same reference.
fn target_forms(ctx: &TemplateContext<'_>, target: &TargetRef, spec: Specificity) -> Vec<String> {
    match target {
        TargetRef::ByLabel { label } => {
            let k = label.k();
            let mut out = vec![format!("object #{k}")];
            match spec {
                Specificity::LS => out.push(format!("object {k}")),
                Specificity::HS => {
                    if let Some((c, s)) = ctx.registry.object_of(*label).and_then(|id| describe_label(ctx, id)) {
                        out = vec![format!("the {s} labeled object #{k}"), format!("the {c} {s} labeled object #{k}")];
                    }
                }
            }
            out
        }
        TargetRef::ByAttributes { color: Some(c), shape: None } => match spec {
            Specificity::LS => vec![format!("the {c}"), format!("{c}"), format!("the {c} one")],
            Specificity::HS => vec![format!("the {c}"), format!("the {c} one")],
        },
        TargetRef::ByAttributes { color: None, shape: Some(s) } => match spec {
            Specificity::LS => vec![format!("the {s}"), format!("{s}")],
            Specificity::HS => vec![format!("the {s}")],
        },
        TargetRef::ByAttributes { color: Some(c), shape: Some(s) } => match spec {
            Specificity::LS => vec![format!("the {c} {s}"), format!("{c} {s}")],
            Specificity::HS => vec![format!("the {c} {s}")],
        },
        TargetRef::ByAttributes { color: None, shape: None } => Vec::new(),
        TargetRef::OtherOf { shape } => vec![format!("the other {shape}")],
        TargetRef::HeldTarget => vec!["it".to_string()],
    }
}

/// Placement target of the subtask that grasps the object `target` names.
fn destination(ctx: &TemplateContext<'_>, target: &TargetRef) -> Option<String> {
    let TargetRef::ByLabel { label } = target else {
        return None;
    };
    let id = ctx.registry.object_of(*label)?;
    let (name, _) = ctx
        .plan
        .subtask_blocks()
        .into_iter()
        .find(|(name, _)| ctx.plan.subtask_object(name) == Some(id))?;
    let base = ctx.plan.actions.iter().find_map(|a| match a.kind {
        ActionKind::PlaceOn { target } if a.subtask == name => Some(target),
        _ => None,
    })?;
    ctx.registry.label_of(base).map(|l| l.to_string())
}

fn bank(ctx: &TemplateContext<'_>, op: &ModulationOp, spec: Specificity) -> Option<Bank> {
    use Specificity::{HS, LS};
    let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let bank = match (op, spec) {
        (ModulationOp::Reorder { target, position }, _) => {
            let pos = match position {
                Position::First => "first",
                Position::Last => "last",
            };
            match spec {
                LS => Bank {
                    heads: vec![format!("{{t}} {pos}"), format!("stack {{t}} {pos}"), format!("do {{t}} {pos}")],
                    tails: SHORT_TAILS,
                },
                HS => {
                    let mut heads = vec![format!("grasp {{t}} {pos}"), format!("take {{t}} {pos}"), format!("move {{t}} {pos}")];
                    if let Some(dest) = destination(ctx, target) {
                        heads.push(format!("stack {{t}} onto {dest} {pos}"));
                        heads.push(format!("please stack {{t}} into {dest} {pos}"));
                        heads.push(format!("put {{t}} on {dest} {pos}"));
                    } else {
                        heads.push(format!("please place {{t}} {pos}"));
                    }
                    Bank {
                        heads,
                        tails: REORDER_HS_TAILS,
                    }
                }
            }
        }
        (ModulationOp::SubstituteTarget { old: Some(_), .. }, LS) => Bank {
            heads: strings(&["not {old}, but {new}", "not {old} but {new}", "not {old}, use {new}", "please not {old}, but {new}"]),
            tails: SUBSTITUTE_LS_TAILS,
        },
        (ModulationOp::SubstituteTarget { old: Some(_), .. }, HS) => Bank {
            heads: strings(&["not {old}, but {new}", "please not {old}, but {new}", "not {old} but {new}"]),
            tails: SUBSTITUTE_HS_TAILS,
        },
        (ModulationOp::SubstituteTarget { old: None, .. }, LS) => Bank {
            heads: strings(&["use {new}", "use {new} instead", "please use {new}"]),
            tails: SUBSTITUTE_LS_TAILS,
        },
        (ModulationOp::SubstituteTarget { old: None, .. }, HS) => Bank {
            heads: strings(&["use {new} instead", "please use {new} instead"]),
            tails: SUBSTITUTE_HS_TAILS,
        },
        (ModulationOp::SetSpeed { speed }, _) => {
            let heads = match speed {
                SpeedSetting::Scale(x) => vec![format!("speed {x}"), format!("please speed {x}")],
                preset => {
                    let p = match preset {
                        SpeedSetting::Gentle => "gentle",
                        SpeedSetting::Slow => "slow",
                        _ => "fast",
                    };
                    vec![format!("be {p}"), p.to_string(), format!("please be {p}"), format!("please {p}")]
                }
            };
            let tails = match (speed, spec) {
                (SpeedSetting::Scale(_), LS) => SHORT_TAILS,
                (SpeedSetting::Scale(_), HS) => REORDER_HS_TAILS,
                (_, LS) => SPEED_LS_TAILS,
                (_, HS) => SPEED_HS_TAILS,
            };
            Bank { heads, tails }
        }
        (ModulationOp::AddAvoid { .. }, LS) => Bank {
            heads: strings(&[
                "avoid {t}",
                "avoid stepping on {t}",
                "avoid going over {t}",
                "avoid walking on {t}",
                "avoid passing over {t}",
                "please avoid {t}",
            ]),
            tails: AVOID_LS_TAILS,
        },
        (ModulationOp::AddAvoid { .. }, HS) => Bank {
            heads: strings(&[
                "avoid stepping on {t}",
                "please avoid passing over {t}",
                "avoid moving across {t}",
                "avoid driving over {t}",
                "please avoid going near {t}",
                "avoid passing across {t}",
            ]),
            tails: AVOID_HS_TAILS,
        },
        (ModulationOp::SkipSubtask { .. }, LS) => Bank {
            heads: strings(&["skip {t}", "please skip {t}"]),
            tails: SKIP_LS_TAILS,
        },
        (ModulationOp::SkipSubtask { .. }, HS) => Bank {
            heads: strings(&["skip {t}", "please skip {t}", "skip {t} now"]),
            tails: SKIP_HS_TAILS,
        },
        (ModulationOp::Abort, _) => return None,
    };
    Some(bank)
}

/// Every distinct string the bank produces for `op`, in a fixed order.
pub fn render_bank(ctx: &TemplateContext<'_>, op: &ModulationOp, spec: Specificity) -> Result<Vec<Rendered>, DatasetError> {
    let no_templates = || DatasetError::NoTemplates {
        task: ctx.task_id.to_string(),
        op: op.name().to_string(),
    };
    let bank = bank(ctx, op, spec).ok_or_else(no_templates)?;
    // slot name -> surface forms
    let slots: Vec<(&str, Vec<String>)> = match op {
        ModulationOp::Reorder { target, .. } | ModulationOp::AddAvoid { target } => {
            vec![("{t}", target_forms(ctx, target, spec))]
        }
        ModulationOp::SkipSubtask { target: SkipTarget::Target(t) } => vec![("{t}", target_forms(ctx, t, spec))],
        ModulationOp::SkipSubtask { target: SkipTarget::Subtask(name) } => vec![("{t}", vec![name.clone()])],
        ModulationOp::SubstituteTarget { old, new } => {
            let mut v = vec![("{new}", target_forms(ctx, new, spec))];
            if let Some(old) = old {
                v.push(("{old}", target_forms(ctx, old, spec)));
            }
            v
        }
        ModulationOp::SetSpeed { .. } | ModulationOp::Abort => Vec::new(),
    };
    if slots.iter().any(|(_, forms)| forms.is_empty()) {
        return Err(no_templates());
    }

    let mut fills: Vec<(String, Vec<usize>)> = Vec::new();
    for (hi, head) in bank.heads.iter().enumerate() {
        let mut partial = vec![(head.clone(), Vec::new())];
        for (slot, forms) in &slots {
            partial = partial
                .into_iter()
                .flat_map(|(text, idx)| {
                    forms.iter().enumerate().map(move |(fi, f)| {
                        let mut idx = idx.clone();
                        idx.push(fi);
                        (text.replace(slot, f), idx)
                    })
                })
                .collect();
        }
        fills.extend(partial.into_iter().map(|(t, mut idx)| {
            idx.insert(0, hi);
            (t, idx)
        }));
    }

    let mut out: Vec<Rendered> = Vec::new();
    for (text, idx) in fills {
        for (ti, tail) in bank.tails.iter().enumerate() {
            let text = format!("{text}{tail}");
            if out.iter().any(|r| r.text == text) {
                continue;
            }
            let slots: Vec<_> = idx[1..].iter().map(|i| format!(".v{i}")).collect();
            out.push(Rendered {
                template_id: format!("{}.{}.{}.h{}{}.t{ti}", ctx.task_id, op.name(), spec.as_str(), idx[0], slots.concat()),
                text,
            });
        }
    }
    Ok(out)
}
