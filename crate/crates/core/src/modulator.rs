//! Rewrites an in-flight plan according to a modulation command.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::executor::predicted_segments;
use crate::labels::{resolve, LabelRegistry, ResolveError, TargetRef};
use crate::modlang::{ModulationIR, ModulationOp, Position, SkipTarget};
use crate::scene::ObjectId;
use crate::tasks::{ActionKind, Goal, PrimitiveAction, TaskPlan};
use crate::{SceneState, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModulatorConfig {
    /// Minimum distance kept between pending motion and an avoided object.
    pub clearance: f64,
    /// Height of a detour waypoint above the avoided object's top.
    pub detour_height: f64,
}

impl Default for ModulatorConfig {
    fn default() -> Self {
        Self {
            clearance: 0.15,
            detour_height: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    TooLate,
    NotFound,
    Ambiguous,
    NoPendingMatch,
    AlreadyApplied,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::TooLate => "TooLate",
            RejectReason::NotFound => "NotFound",
            RejectReason::Ambiguous => "Ambiguous",
            RejectReason::NoPendingMatch => "NoPendingMatch",
            RejectReason::AlreadyApplied => "AlreadyApplied",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{reason}: {detail}")]
pub struct Rejection {
    pub reason: RejectReason,
    pub detail: String,
}

fn reject(reason: RejectReason, detail: impl Into<String>) -> Rejection {
    Rejection {
        reason,
        detail: detail.into(),
    }
}

impl From<ResolveError> for Rejection {
    fn from(e: ResolveError) -> Self {
        let reason = match e {
            ResolveError::Ambiguous(_) => RejectReason::Ambiguous,
            ResolveError::NotFound | ResolveError::NoContext => RejectReason::NotFound,
        };
        reject(reason, e.to_string())
    }
}

/// The object a contextual reference ("it", "the white one", "the other
/// cup") is relative to: the held object, else the next pending grasp target.
pub fn context_object(plan: &TaskPlan, scene: &SceneState) -> Option<ObjectId> {
    scene.gripper.held.or_else(|| {
        plan.actions[plan.cursor.min(plan.len())..].iter().find_map(|a| match a.kind {
            ActionKind::Grasp { target } => Some(target),
            _ => None,
        })
    })
}

pub fn apply(
    plan: &TaskPlan,
    ir: &ModulationIR,
    scene: &SceneState,
    registry: &LabelRegistry,
) -> Result<TaskPlan, Rejection> {
    apply_with(&ModulatorConfig::default(), plan, ir, scene, registry)
}

/// Pure: the input plan is never modified, and a rejection carries no
/// partial rewrite.
pub fn apply_with(
    config: &ModulatorConfig,
    plan: &TaskPlan,
    ir: &ModulationIR,
    scene: &SceneState,
    registry: &LabelRegistry,
) -> Result<TaskPlan, Rejection> {
    if plan.cursor >= plan.len() {
        return Err(reject(RejectReason::TooLate, "no pending actions"));
    }
    let ctx = context_object(plan, scene);
    let mut out = plan.clone();
    match &ir.op {
        ModulationOp::SubstituteTarget { old, new } => substitute(&mut out, old.as_ref(), new, scene, registry, ctx)?,
        ModulationOp::SetSpeed { speed } => {
            let s = speed.scale();
            let cursor = out.cursor;
            for a in &mut out.actions[cursor..] {
                a.speed_scale = s;
            }
        }
        ModulationOp::Reorder { target, position } => {
            let id = resolve(target, scene, registry, ctx)?;
            reorder(&mut out, id, *position)?;
        }
        ModulationOp::SkipSubtask { target } => {
            let name = match target {
                SkipTarget::Subtask(name) => name.clone(),
                SkipTarget::Target(t) => {
                    let id = resolve(t, scene, registry, ctx)?;
                    subtask_grasping(&out, id)
                        .ok_or_else(|| reject(RejectReason::NoPendingMatch, format!("no subtask grasps {id}")))?
                }
            };
            skip(&mut out, &name)?;
        }
        ModulationOp::AddAvoid { target } => {
            let id = resolve(target, scene, registry, ctx)?;
            if out.keep_out.contains(&id) {
                return Err(reject(RejectReason::AlreadyApplied, format!("already avoiding {id}")));
            }
            if insert_detours(config, &mut out, scene, id) == 0 {
                return Err(reject(RejectReason::NoPendingMatch, format!("no pending motion passes near {id}")));
            }
            out.keep_out.push(id);
        }
        ModulationOp::Abort => out.actions.truncate(out.cursor),
    }
    if !matches!(ir.op, ModulationOp::AddAvoid { .. } | ModulationOp::Abort) {
        for id in out.keep_out.clone() {
            insert_detours(config, &mut out, scene, id);
        }
    }
    out.recompute_modulation_points();
    Ok(out)
}

fn substitute(
    plan: &mut TaskPlan,
    old: Option<&TargetRef>,
    new: &TargetRef,
    scene: &SceneState,
    registry: &LabelRegistry,
    ctx: Option<ObjectId>,
) -> Result<(), Rejection> {
    let old_id = match old {
        Some(t) => resolve(t, scene, registry, ctx)?,
        None => ctx.ok_or_else(|| reject(RejectReason::NotFound, "nothing to replace"))?,
    };
    let new_id = resolve(new, scene, registry, ctx)?;
    if old_id == new_id {
        return Err(reject(RejectReason::AlreadyApplied, format!("{new_id} is already the target")));
    }
    if scene.gripper.held == Some(old_id) {
        return Err(reject(RejectReason::TooLate, format!("{old_id} is already grasped")));
    }
    let cursor = plan.cursor;
    if !plan.actions[cursor..].iter().any(|a| a.kind.target() == Some(old_id)) {
        let done = plan.actions[..cursor].iter().any(|a| a.kind.target() == Some(old_id));
        let reason = if done { RejectReason::TooLate } else { RejectReason::NoPendingMatch };
        return Err(reject(reason, format!("no pending action uses {old_id}")));
    }
    for a in &mut plan.actions[cursor..] {
        match &mut a.kind {
            ActionKind::Grasp { target } | ActionKind::PlaceOn { target } if *target == old_id => *target = new_id,
            _ => {}
        }
    }
    let pending: Vec<String> = plan.actions[cursor..].iter().map(|a| a.subtask.clone()).collect();
    let new_z = scene.object(new_id).map(|o| o.pose.position.z);
    for g in plan.goals.iter_mut().filter(|g| pending.contains(&g.subtask)) {
        if g.goal.object() == old_id {
            *g.goal.object_mut() = new_id;
            if let (Goal::Raised { min_z, .. }, Some(z)) = (&mut g.goal, new_z) {
                *min_z = z + 0.02;
            }
        }
        if let Goal::StackedOn { base, .. } = &mut g.goal {
            if *base == old_id {
                *base = new_id;
            }
        }
    }
    Ok(())
}

/// Name of the pending subtask whose first grasp targets `id`.
fn subtask_grasping(plan: &TaskPlan, id: ObjectId) -> Option<String> {
    plan.subtask_blocks()
        .into_iter()
        .rev()
        .find(|(name, r)| r.end > plan.cursor && plan.subtask_object(name) == Some(id))
        .or_else(|| plan.subtask_blocks().into_iter().find(|(name, _)| plan.subtask_object(name) == Some(id)))
        .map(|(name, _)| name)
}

fn block_of(plan: &TaskPlan, name: &str) -> Option<std::ops::Range<usize>> {
    plan.subtask_blocks().into_iter().rev().find(|(n, _)| n == name).map(|(_, r)| r)
}

fn reorder(plan: &mut TaskPlan, id: ObjectId, position: Position) -> Result<(), Rejection> {
    let name = subtask_grasping(plan, id)
        .ok_or_else(|| reject(RejectReason::NoPendingMatch, format!("no subtask grasps {id}")))?;
    let range = block_of(plan, &name).expect("named block exists");
    let cursor = plan.cursor;
    if range.start < cursor {
        return Err(reject(RejectReason::TooLate, format!("{name} already started")));
    }
    match position {
        Position::First => {
            if range.start == cursor {
                return Err(reject(RejectReason::AlreadyApplied, format!("{name} is already next")));
            }
            if cursor > 0 && plan.actions[cursor - 1].subtask == plan.actions[cursor].subtask {
                let current = &plan.actions[cursor].subtask;
                return Err(reject(RejectReason::TooLate, format!("{current} is in progress")));
            }
            let block: Vec<_> = plan.actions.drain(range).collect();
            plan.actions.splice(cursor..cursor, block);
        }
        Position::Last => {
            if range.end == plan.len() {
                return Err(reject(RejectReason::AlreadyApplied, format!("{name} is already last")));
            }
            let block: Vec<_> = plan.actions.drain(range).collect();
            plan.actions.extend(block);
        }
    }
    Ok(())
}

fn skip(plan: &mut TaskPlan, name: &str) -> Result<(), Rejection> {
    if plan.skipped.iter().any(|s| s == name) {
        return Err(reject(RejectReason::AlreadyApplied, format!("{name} already skipped")));
    }
    let range = block_of(plan, name).ok_or_else(|| reject(RejectReason::NoPendingMatch, format!("no subtask {name}")))?;
    if range.start < plan.cursor {
        return Err(reject(RejectReason::TooLate, format!("{name} already started")));
    }
    plan.actions.drain(range);
    plan.skipped.push(name.to_string());
    Ok(())
}

/// Inserts detour waypoints in front of pending motions that pass too close
/// to `obstacle`; returns the number of crossing segments found.
fn insert_detours(config: &ModulatorConfig, plan: &mut TaskPlan, scene: &SceneState, obstacle: ObjectId) -> usize {
    let Some(obj) = scene.object(obstacle) else {
        return 0;
    };
    let aabb = obj.world_aabb();
    let center = obj.pose.position;
    let above = aabb.max.z + config.detour_height;
    let too_close = |a: Vec3, b: Vec3| aabb.distance_to_segment(a, b) < config.clearance;

    let mut crossings = 0;
    let mut inserts: Vec<(usize, Vec<Vec3>)> = Vec::new();
    for seg in predicted_segments(plan, scene) {
        let action = &plan.actions[seg.index];
        let movable = matches!(
            action.kind,
            ActionKind::MoveTo { .. } | ActionKind::Grasp { .. } | ActionKind::PlaceOn { .. } | ActionKind::DetourVia { .. }
        );
        if !movable || !too_close(seg.from, seg.to) {
            continue;
        }
        crossings += 1;
        let peak = Vec3::new(center.x, center.y, above);
        let mut via = vec![peak];
        if too_close(seg.from, peak) {
            via.insert(0, Vec3::new(seg.from.x, seg.from.y, above));
        }
        if too_close(peak, seg.to) {
            via.push(Vec3::new(seg.to.x, seg.to.y, above));
        }
        inserts.push((seg.index, via));
    }
    for (index, via) in inserts.into_iter().rev() {
        let template = plan.actions[index].clone();
        let detours = via.into_iter().map(|waypoint| PrimitiveAction {
            kind: ActionKind::DetourVia { waypoint },
            ..template.clone()
        });
        plan.actions.splice(index..index, detours);
    }
    crossings
}
