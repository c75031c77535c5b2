//! Desk-scale household tasks: seeded scene instantiation, executable
//! plans and success predicates.
//!
//! Table top is the plane z = 0. Objects rest on it with their centers at
//! their half height and are spawned in axis-aligned table rectangles with
//! a minimum center spacing enforced by rejection sampling.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3 as GVec3;
use crate::rng::SimRng;
use crate::scene::{default_rig, Color, GripperState, ObjectId, Shape};
use crate::{Aabb, ObjectRecord, Pose, Quat, SceneState, Vec3};

pub const MIN_SPACING: f64 = 0.12;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
pub const HOME: Vec3 = GVec3::new(0.3, 0.0, 0.45);
pub const HANDOVER: Vec3 = GVec3::new(0.25, -0.35, 0.15);
pub const HANDOVER_TOLERANCE: f64 = 0.1;

pub const STACK_CUPS: &str = "stack_cups";
pub const BRING_OBJECT: &str = "bring_object";
pub const PLACE_ON_SHELF: &str = "place_on_shelf";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("task {task:?} has no variation {variation:?}")]
    UnknownVariation { task: String, variation: String },
    #[error("could not place objects for {task:?} after {attempts} attempts")]
    PlacementFailed { task: String, attempts: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleBinding {
    pub color: Color,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variation {
    pub variation_id: String,
    pub bindings: BTreeMap<String, RoleBinding>,
    pub subtask_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub description: String,
    pub variations: Vec<Variation>,
    pub subtasks: Vec<String>,
}

impl TaskSpec {
    pub fn variation(&self, id: &str) -> Option<&Variation> {
        self.variations.iter().find(|v| v.variation_id == id)
    }
}

/// One primitive step of a plan. Object targets are grounded ids; command
/// references are resolved before they reach a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionKind {
    MoveTo { position: Vec3 },
    Grasp { target: ObjectId },
    /// Raise the gripper vertically to an absolute height above the table.
    Lift { height: f64 },
    PlaceOn { target: ObjectId },
    Release,
    DetourVia { waypoint: Vec3 },
}

impl ActionKind {
    pub fn target(&self) -> Option<ObjectId> {
        match self {
            ActionKind::Grasp { target } | ActionKind::PlaceOn { target } => Some(*target),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActionKind::MoveTo { .. } => "move_to",
            ActionKind::Grasp { .. } => "grasp",
            ActionKind::Lift { .. } => "lift",
            ActionKind::PlaceOn { .. } => "place_on",
            ActionKind::Release => "release",
            ActionKind::DetourVia { .. } => "detour_via",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveAction {
    #[serde(flatten)]
    pub kind: ActionKind,
    pub subtask: String,
    pub speed_scale: f64,
}

impl PrimitiveAction {
    pub fn new(kind: ActionKind, subtask: &str) -> Self {
        Self {
            kind,
            subtask: subtask.to_string(),
            speed_scale: 1.0,
        }
    }

    pub fn summary(&self) -> String {
        match &self.kind {
            ActionKind::MoveTo { position: p } => format!("move_to({:.3}, {:.3}, {:.3})", p.x, p.y, p.z),
            ActionKind::Grasp { target } => format!("grasp({target})"),
            ActionKind::Lift { height } => format!("lift({height})"),
            ActionKind::PlaceOn { target } => format!("place_on({target})"),
            ActionKind::Release => "release".to_string(),
            ActionKind::DetourVia { waypoint: p } => format!("detour_via({:.3}, {:.3}, {:.3})", p.x, p.y, p.z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Goal {
    /// Object center inside the base's footprint and above its bottom.
    StackedOn { object: ObjectId, base: ObjectId },
    NearPosition { object: ObjectId, position: Vec3, tolerance: f64 },
    InRegion { object: ObjectId, region: Aabb },
    /// Object center at or above `min_z`.
    Raised { object: ObjectId, min_z: f64 },
}

impl Goal {
    pub fn object(&self) -> ObjectId {
        match self {
            Goal::StackedOn { object, .. }
            | Goal::NearPosition { object, .. }
            | Goal::InRegion { object, .. }
            | Goal::Raised { object, .. } => *object,
        }
    }

    pub fn object_mut(&mut self) -> &mut ObjectId {
        match self {
            Goal::StackedOn { object, .. }
            | Goal::NearPosition { object, .. }
            | Goal::InRegion { object, .. }
            | Goal::Raised { object, .. } => object,
        }
    }

    pub fn holds(&self, scene: &SceneState) -> bool {
        let Some(obj) = scene.object(self.object()) else {
            return false;
        };
        let c = obj.pose.position;
        match self {
            Goal::StackedOn { base, .. } => {
                let Some(b) = scene.object(*base) else {
                    return false;
                };
                let local = b.pose.inverse_transform_point(c);
                let h = b.half_extents;
                local.x.abs() <= h.x && local.y.abs() <= h.y && local.z > -h.z
            }
            Goal::NearPosition { position, tolerance, .. } => c.distance(*position) <= *tolerance,
            Goal::InRegion { region, .. } => region.contains(c),
            Goal::Raised { min_z, .. } => c.z >= *min_z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskGoal {
    pub subtask: String,
    pub goal: Goal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskStatus {
    Done,
    Pending,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub success: bool,
    pub subtasks: Vec<(String, SubtaskStatus)>,
}

/// Skipped subtasks are excluded from the goal instead of counting as
/// failures.
pub fn evaluate_goals(scene: &SceneState, goals: &[SubtaskGoal], skipped: &[String]) -> SuccessReport {
    let subtasks: Vec<_> = goals
        .iter()
        .map(|g| {
            let status = if skipped.contains(&g.subtask) {
                SubtaskStatus::Skipped
            } else if g.goal.holds(scene) {
                SubtaskStatus::Done
            } else {
                SubtaskStatus::Pending
            };
            (g.subtask.clone(), status)
        })
        .collect();
    let success = subtasks.iter().all(|(_, s)| *s != SubtaskStatus::Pending);
    SuccessReport { success, subtasks }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub task_id: String,
    pub actions: Vec<PrimitiveAction>,
    /// Index of the action in progress or next to run; actions before it
    /// are complete.
    pub cursor: usize,
    pub modulation_points: Vec<usize>,
    pub goals: Vec<SubtaskGoal>,
    #[serde(default)]
    pub skipped: Vec<String>,
    /// Objects whose surroundings pending motions must keep clear of.
    #[serde(default)]
    pub keep_out: Vec<ObjectId>,
}

impl TaskPlan {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Contiguous runs of actions sharing a subtask name, in plan order.
    pub fn subtask_blocks(&self) -> Vec<(String, Range<usize>)> {
        let mut out: Vec<(String, Range<usize>)> = Vec::new();
        for (i, a) in self.actions.iter().enumerate() {
            match out.last_mut() {
                Some((name, r)) if *name == a.subtask => r.end = i + 1,
                _ => out.push((a.subtask.clone(), i..i + 1)),
            }
        }
        out
    }

    /// The first grasp target of a subtask.
    pub fn subtask_object(&self, subtask: &str) -> Option<ObjectId> {
        self.actions.iter().find_map(|a| match a.kind {
            ActionKind::Grasp { target } if a.subtask == subtask => Some(target),
            _ => None,
        })
    }

    /// Block starts; each marks a stage where a modulation can be placed.
    pub fn recompute_modulation_points(&mut self) {
        self.modulation_points = self.subtask_blocks().into_iter().map(|(_, r)| r.start).collect();
    }

    pub fn report(&self, scene: &SceneState) -> SuccessReport {
        evaluate_goals(scene, &self.goals, &self.skipped)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cursor > self.actions.len() {
            return Err(format!("cursor {} beyond plan length {}", self.cursor, self.actions.len()));
        }
        if !self.modulation_points.windows(2).all(|w| w[0] < w[1]) {
            return Err("modulation points not strictly increasing".into());
        }
        if self.modulation_points.iter().any(|&m| m >= self.actions.len()) {
            return Err("modulation point beyond plan".into());
        }
        for a in &self.actions {
            if !(a.speed_scale > 0.0 && a.speed_scale <= 1.0) {
                return Err(format!("speed scale {} outside (0, 1]", a.speed_scale));
            }
        }
        for (name, range) in self.subtask_blocks() {
            let mut grasped = false;
            for a in &self.actions[range] {
                match a.kind {
                    ActionKind::Grasp { .. } => grasped = true,
                    ActionKind::PlaceOn { .. } if !grasped => {
                        return Err(format!("place before grasp in subtask {name}"));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

struct RoleTemplate {
    role: &'static str,
    half_extents: Vec3,
    graspable: bool,
    /// Spawn rectangle for the object center: (x range, y range).
    region: ((f64, f64), (f64, f64)),
}

const CUP: Vec3 = GVec3::new(0.035, 0.035, 0.05);
const BOTTLE: Vec3 = GVec3::new(0.03, 0.03, 0.09);
const CARPET: Vec3 = GVec3::new(0.1, 0.08, 0.005);
const BOOK: Vec3 = GVec3::new(0.07, 0.05, 0.02);

pub fn shelf_region() -> Aabb {
    Aabb::new(GVec3::new(0.35, -0.5, 0.2), GVec3::new(0.65, -0.3, 0.4))
}

const SHELF_SLOTS: [Vec3; 2] = [GVec3::new(0.43, -0.4, 0.3), GVec3::new(0.57, -0.4, 0.3)];

fn role_templates(task_id: &str) -> Option<Vec<RoleTemplate>> {
    let t = |role, half_extents, graspable, region| RoleTemplate {
        role,
        half_extents,
        graspable,
        region,
    };
    Some(match task_id {
        STACK_CUPS => {
            let region = ((0.4, 0.7), (-0.25, 0.25));
            vec![
                t("first_cup", CUP, true, region),
                t("second_cup", CUP, true, region),
                t("base_cup", CUP, false, region),
            ]
        }
        BRING_OBJECT => {
            let region = ((0.5, 0.72), (0.24, 0.32));
            vec![
                t("target_bottle", BOTTLE, true, region),
                t("other_bottle", BOTTLE, true, region),
                t("carpet", CARPET, false, ((0.4, 0.46), (-0.08, -0.02))),
            ]
        }
        PLACE_ON_SHELF => {
            let region = ((0.45, 0.7), (0.0, 0.3));
            vec![t("first_book", BOOK, true, region), t("second_book", BOOK, true, region)]
        }
        _ => return None,
    })
}

fn variation(id: &str, roles: &[(&str, Color, Shape)], order: &[&str]) -> Variation {
    Variation {
        variation_id: id.to_string(),
        bindings: roles
            .iter()
            .map(|(r, color, shape)| (r.to_string(), RoleBinding { color: *color, shape: *shape }))
            .collect(),
        subtask_order: order.iter().map(|s| s.to_string()).collect(),
    }
}

/// The task library in a fixed order.
pub fn list_tasks() -> Vec<TaskSpec> {
    use Color::*;
    use Shape::*;
    let stack_order = ["stack_first_cup", "stack_second_cup"];
    let bring_order = ["pick_bottle", "hand_over"];
    let shelf_order = ["shelve_first_book", "shelve_second_book"];
    let spec = |id: &str, description: &str, variations: Vec<Variation>, order: &[&str]| TaskSpec {
        task_id: id.to_string(),
        description: description.to_string(),
        variations,
        subtasks: order.iter().map(|s| s.to_string()).collect(),
    };
    vec![
        spec(
            STACK_CUPS,
            "stack the cups",
            vec![
                variation("v0", &[("first_cup", White, Cup), ("second_cup", White, Cup), ("base_cup", White, Cup)], &stack_order),
                variation("v1", &[("first_cup", Red, Cup), ("second_cup", Green, Cup), ("base_cup", Blue, Cup)], &stack_order),
            ],
            &stack_order,
        ),
        spec(
            BRING_OBJECT,
            "bring me the {target_bottle}",
            vec![
                variation("v0", &[("target_bottle", Brown, Bottle), ("other_bottle", White, Bottle), ("carpet", Blue, Carpet)], &bring_order),
                variation("v1", &[("target_bottle", Red, Bottle), ("other_bottle", White, Bottle), ("carpet", Green, Carpet)], &bring_order),
            ],
            &bring_order,
        ),
        spec(
            PLACE_ON_SHELF,
            "put the books on the shelf",
            vec![
                variation("v0", &[("first_book", Blue, Book), ("second_book", Green, Book)], &shelf_order),
                variation("v1", &[("first_book", Yellow, Book), ("second_book", Red, Book)], &shelf_order),
            ],
            &shelf_order,
        ),
    ]
}

pub fn task(task_id: &str) -> Result<TaskSpec, TaskError> {
    list_tasks()
        .into_iter()
        .find(|t| t.task_id == task_id)
        .ok_or_else(|| TaskError::UnknownTask(task_id.to_string()))
}

fn sample_positions(task_id: &str, templates: &[RoleTemplate], rng: &mut SimRng) -> Result<Vec<(f64, f64)>, TaskError> {
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let pts: Vec<(f64, f64)> = templates
            .iter()
            .map(|t| {
                let ((x0, x1), (y0, y1)) = t.region;
                (rng.uniform(x0, x1), rng.uniform(y0, y1))
            })
            .collect();
        let spaced = pts.iter().enumerate().all(|(i, a)| {
            pts[i + 1..]
                .iter()
                .all(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() >= MIN_SPACING)
        });
        if spaced {
            return Ok(pts);
        }
    }
    Err(TaskError::PlacementFailed {
        task: task_id.to_string(),
        attempts: MAX_PLACEMENT_ATTEMPTS,
    })
}

/// Builds the initial scene and nominal plan; a pure function of its inputs.
pub fn instantiate(task_id: &str, variation_id: &str, seed: u64) -> Result<(SceneState, TaskPlan), TaskError> {
    let spec = task(task_id)?;
    let var = spec.variation(variation_id).ok_or_else(|| TaskError::UnknownVariation {
        task: task_id.to_string(),
        variation: variation_id.to_string(),
    })?;
    let templates = role_templates(task_id).expect("every listed task has role templates");
    let mut rng = SimRng::seed_from_u64(seed);
    let positions = sample_positions(task_id, &templates, &mut rng)?;

    let objects: Vec<ObjectRecord> = templates
        .iter()
        .zip(positions)
        .enumerate()
        .map(|(i, (t, (x, y)))| {
            let yaw = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
            let binding = var.bindings[t.role];
            ObjectRecord {
                object_id: ObjectId(i as u32 + 1),
                role: t.role.to_string(),
                shape: binding.shape,
                color: binding.color,
                pose: Pose::new(GVec3::new(x, y, t.half_extents.z), Quat::from_yaw(yaw)),
                half_extents: t.half_extents,
                graspable: t.graspable,
            }
        })
        .collect();

    let scene = SceneState {
        time: 0.0,
        objects,
        gripper: GripperState::open_at(HOME),
        cameras: default_rig(),
    };
    let id = |role: &str| scene.object_by_role(role).expect("role spawned").object_id;
    let mut blocks: BTreeMap<&str, (Vec<PrimitiveAction>, Goal)> = BTreeMap::new();
    match task_id {
        STACK_CUPS => {
            let base = id("base_cup");
            for (subtask, role) in [("stack_first_cup", "first_cup"), ("stack_second_cup", "second_cup")] {
                let cup = id(role);
                let acts = vec![
                    PrimitiveAction::new(ActionKind::Grasp { target: cup }, subtask),
                    PrimitiveAction::new(ActionKind::Lift { height: 0.2 }, subtask),
                    PrimitiveAction::new(ActionKind::PlaceOn { target: base }, subtask),
                    PrimitiveAction::new(ActionKind::Release, subtask),
                    PrimitiveAction::new(ActionKind::Lift { height: 0.25 }, subtask),
                ];
                blocks.insert(subtask, (acts, Goal::StackedOn { object: cup, base }));
            }
        }
        BRING_OBJECT => {
            let bottle = id("target_bottle");
            let resting = scene.object(bottle).expect("spawned").pose.position.z;
            blocks.insert(
                "pick_bottle",
                (
                    vec![
                        PrimitiveAction::new(ActionKind::Grasp { target: bottle }, "pick_bottle"),
                        PrimitiveAction::new(ActionKind::Lift { height: 0.15 }, "pick_bottle"),
                    ],
                    Goal::Raised { object: bottle, min_z: resting + 0.02 },
                ),
            );
            blocks.insert(
                "hand_over",
                (
                    vec![
                        PrimitiveAction::new(ActionKind::MoveTo { position: HANDOVER }, "hand_over"),
                        PrimitiveAction::new(ActionKind::Release, "hand_over"),
                        PrimitiveAction::new(ActionKind::MoveTo { position: HOME }, "hand_over"),
                    ],
                    Goal::NearPosition { object: bottle, position: HANDOVER, tolerance: HANDOVER_TOLERANCE },
                ),
            );
        }
        PLACE_ON_SHELF => {
            for (i, (subtask, role)) in [("shelve_first_book", "first_book"), ("shelve_second_book", "second_book")]
                .into_iter()
                .enumerate()
            {
                let book = id(role);
                let retreat = if i == 0 {
                    ActionKind::Lift { height: 0.38 }
                } else {
                    ActionKind::MoveTo { position: HOME }
                };
                let acts = vec![
                    PrimitiveAction::new(ActionKind::Grasp { target: book }, subtask),
                    PrimitiveAction::new(ActionKind::Lift { height: 0.3 }, subtask),
                    PrimitiveAction::new(ActionKind::MoveTo { position: SHELF_SLOTS[i] }, subtask),
                    PrimitiveAction::new(ActionKind::Release, subtask),
                    PrimitiveAction::new(retreat, subtask),
                ];
                blocks.insert(subtask, (acts, Goal::InRegion { object: book, region: shelf_region() }));
            }
        }
        _ => unreachable!("templates exist only for listed tasks"),
    }

    let mut actions = Vec::new();
    let mut goals = Vec::new();
    for name in &var.subtask_order {
        let (acts, goal) = blocks.remove(name.as_str()).expect("variation order names known subtasks");
        actions.extend(acts);
        goals.push(SubtaskGoal { subtask: name.clone(), goal });
    }
    let mut plan = TaskPlan {
        task_id: task_id.to_string(),
        actions,
        cursor: 0,
        modulation_points: Vec::new(),
        goals,
        skipped: Vec::new(),
        keep_out: Vec::new(),
    };
    plan.recompute_modulation_points();
    Ok((scene, plan))
}

/// Nominal goals of a task, recovered from the object roles in `scene`.
pub fn nominal_goals(task_id: &str, scene: &SceneState) -> Result<Vec<SubtaskGoal>, TaskError> {
    let id = |role: &str| scene.object_by_role(role).map(|o| o.object_id);
    let goal = |subtask: &str, goal: Option<Goal>| goal.map(|goal| SubtaskGoal { subtask: subtask.to_string(), goal });
    let goals = match task_id {
        STACK_CUPS => {
            let base = id("base_cup");
            vec![
                goal("stack_first_cup", id("first_cup").zip(base).map(|(object, base)| Goal::StackedOn { object, base })),
                goal("stack_second_cup", id("second_cup").zip(base).map(|(object, base)| Goal::StackedOn { object, base })),
            ]
        }
        BRING_OBJECT => {
            let bottle = id("target_bottle");
            let resting = BOTTLE.z;
            vec![
                goal("pick_bottle", bottle.map(|object| Goal::Raised { object, min_z: resting + 0.02 })),
                goal(
                    "hand_over",
                    bottle.map(|object| Goal::NearPosition { object, position: HANDOVER, tolerance: HANDOVER_TOLERANCE }),
                ),
            ]
        }
        PLACE_ON_SHELF => vec![
            goal("shelve_first_book", id("first_book").map(|object| Goal::InRegion { object, region: shelf_region() })),
            goal("shelve_second_book", id("second_book").map(|object| Goal::InRegion { object, region: shelf_region() })),
        ],
        other => return Err(TaskError::UnknownTask(other.to_string())),
    };
    Ok(goals.into_iter().flatten().collect())
}

/// Success predicate of the task's nominal goal.
pub fn success(task_id: &str, scene: &SceneState) -> Result<SuccessReport, TaskError> {
    Ok(evaluate_goals(scene, &nominal_goals(task_id, scene)?, &[]))
}
