use super::{ModulationOp, Position, SkipTarget, SpeedSetting};
use crate::labels::TargetRef;

/// Canonical surface form of a target reference.
pub fn render_target(target: &TargetRef) -> String {
    match target {
        TargetRef::ByLabel { label } => label.to_string(),
        TargetRef::ByAttributes { color: Some(c), shape: Some(s) } => format!("the {c} {s}"),
        TargetRef::ByAttributes { color: Some(c), shape: None } => format!("the {c} one"),
        TargetRef::ByAttributes { color: None, shape: Some(s) } => format!("the {s}"),
        TargetRef::ByAttributes { color: None, shape: None } => "it".into(),
        TargetRef::OtherOf { shape } => format!("the other {shape}"),
        TargetRef::HeldTarget => "it".into(),
    }
}

/// Canonical command text; `parse(render(op))` yields `op` again.
pub fn render(op: &ModulationOp) -> String {
    match op {
        ModulationOp::SubstituteTarget { old: Some(old), new } => {
            format!("not {}, but {}", render_target(old), render_target(new))
        }
        ModulationOp::SubstituteTarget { old: None, new } => format!("use {} instead", render_target(new)),
        ModulationOp::SetSpeed { speed } => match speed {
            SpeedSetting::Gentle => "be gentle".into(),
            SpeedSetting::Slow => "be slow".into(),
            SpeedSetting::Fast => "be fast".into(),
            SpeedSetting::Scale(x) => format!("speed {x}"),
        },
        ModulationOp::Reorder { target, position } => {
            let pos = match position {
                Position::First => "first",
                Position::Last => "last",
            };
            format!("stack {} {pos}", render_target(target))
        }
        ModulationOp::SkipSubtask { target: SkipTarget::Target(t) } => format!("skip {}", render_target(t)),
        ModulationOp::SkipSubtask { target: SkipTarget::Subtask(name) } => format!("skip {name}"),
        ModulationOp::AddAvoid { target } => format!("avoid {}", render_target(target)),
        ModulationOp::Abort => "stop".into(),
    }
}
