//! Fixed-timestep plan execution with modulation injection at step
//! boundaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{overlay, LabelRegistry, SyntheticLabel};
use crate::modlang::{ModulationIR, ModulationOp};
use crate::modulator::{apply_with, ModulatorConfig, RejectReason};
use crate::scene::{Aperture, ObjectId};
use crate::tasks::{instantiate, ActionKind, PrimitiveAction, TaskError, TaskPlan};
use crate::{GripperState, ObjectRecord, Pose, SceneState, Vec3};

pub const DT: f64 = 0.05;
pub const V_MAX: f64 = 1.0;
pub const GRASP_RADIUS: f64 = 0.05;
pub const ARRIVAL_TOLERANCE: f64 = 1e-3;
pub const STEP_CAP: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub dt: f64,
    pub v_max: f64,
    pub grasp_radius: f64,
    pub step_cap: u64,
    /// Stop in `awaiting_modulation` whenever the cursor reaches a
    /// modulation point.
    pub pause_at_modulation_points: bool,
    pub modulator: ModulatorConfig,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            dt: DT,
            v_max: V_MAX,
            grasp_radius: GRASP_RADIUS,
            step_cap: STEP_CAP,
            pause_at_modulation_points: false,
            modulator: ModulatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Running,
    Paused,
    AwaitingModulation,
    Done,
    Failed,
}

impl ExecStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ExecStatus::Done | ExecStatus::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulationPointMark {
    pub frame_index: u64,
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    ActionStarted { index: usize, action: String, subtask: String },
    ActionCompleted { index: usize, action: String, subtask: String },
    SubtaskCompleted { subtask: String, object: Option<ObjectId> },
    ModulationApplied { ir: ModulationIR, mark: ModulationPointMark },
    ModulationRejected { ir: ModulationIR, reason: RejectReason, detail: String },
    Grasped { object: ObjectId },
    Released { object: ObjectId },
    TaskDone { success: bool },
    TaskFailed { reason: String },
}

impl EventKind {
    pub fn is_terminal(&self) -> bool {
        matches!(self, EventKind::TaskDone { .. } | EventKind::TaskFailed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub frame: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub object_id: ObjectId,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub label: SyntheticLabel,
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub camera_id: String,
    pub overlays: Vec<Overlay>,
}

/// Snapshot of the world after `index` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u64,
    pub t: f64,
    pub gripper: GripperState,
    pub objects: Vec<ObjectPose>,
    pub views: Vec<View>,
}

impl Frame {
    pub fn capture(index: u64, scene: &SceneState, registry: &LabelRegistry) -> Self {
        Self {
            index,
            t: scene.time,
            gripper: scene.gripper.clone(),
            objects: scene
                .objects
                .iter()
                .map(|o| ObjectPose {
                    object_id: o.object_id,
                    pose: o.pose,
                })
                .collect(),
            views: views(scene, registry),
        }
    }
}

pub fn views(scene: &SceneState, registry: &LabelRegistry) -> Vec<View> {
    scene
        .cameras
        .iter()
        .map(|cam| View {
            camera_id: cam.camera_id.clone(),
            overlays: overlay(scene, cam, registry)
                .into_iter()
                .map(|(label, bbox)| Overlay {
                    label,
                    bbox: bbox.to_array(),
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub frame: u64,
    pub ir: ModulationIR,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub task_id: String,
    pub variation_id: String,
    pub seed: u64,
    pub script: Vec<ScriptEntry>,
    pub frames: Vec<Frame>,
    pub events: Vec<Event>,
    pub status: ExecStatus,
    pub final_plan: TaskPlan,
}

impl EpisodeTrace {
    pub fn success(&self) -> bool {
        self.status == ExecStatus::Done
    }

    /// Frame indices at which modulations were applied.
    pub fn modulation_marks(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::ModulationApplied { mark, .. } => Some(mark.frame_index),
                _ => None,
            })
            .collect()
    }

    /// Subtasks in the order the log reports them complete.
    pub fn completed_subtasks(&self) -> Vec<String> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::SubtaskCompleted { subtask, .. } => Some(subtask.clone()),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("cannot step while {0:?}")]
    InvalidState(ExecStatus),
    #[error("step cap of {0} frames exceeded")]
    StepCapExceeded(u64),
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// Gripper target of an action in the given world state.
pub fn action_waypoint(kind: &ActionKind, scene: &SceneState) -> Result<Vec3, String> {
    let g = scene.gripper.position;
    match kind {
        ActionKind::MoveTo { position } => Ok(*position),
        ActionKind::DetourVia { waypoint } => Ok(*waypoint),
        ActionKind::Lift { height } => Ok(Vec3::new(g.x, g.y, *height)),
        ActionKind::Release => Ok(g),
        ActionKind::Grasp { target } => {
            let o = scene.object(*target).ok_or_else(|| format!("{target} does not exist"))?;
            if !o.graspable {
                return Err(format!("{target} cannot be grasped"));
            }
            if let Some(h) = scene.gripper.held {
                return Err(format!("gripper already holds {h}"));
            }
            Ok(o.pose.position)
        }
        ActionKind::PlaceOn { target } => {
            let held = scene.gripper.held.ok_or("nothing to place")?;
            let h = scene.object(held).ok_or_else(|| format!("{held} does not exist"))?;
            let base = scene.object(*target).ok_or_else(|| format!("{target} does not exist"))?;
            let offset = h.pose.position - g;
            let top = stack_top(scene, base, held);
            let p = base.pose.position;
            Ok(Vec3::new(p.x, p.y, top + h.half_extents.z) - offset)
        }
    }
}

/// Height of the highest surface resting on `base`'s footprint.
fn stack_top(scene: &SceneState, base: &ObjectRecord, held: ObjectId) -> f64 {
    let on_base = |o: &ObjectRecord| {
        let local = base.pose.inverse_transform_point(o.pose.position);
        local.x.abs() <= base.half_extents.x && local.y.abs() <= base.half_extents.y && local.z > 0.0
    };
    scene
        .objects
        .iter()
        .filter(|o| o.object_id != held && (o.object_id == base.object_id || on_base(o)))
        .map(|o| o.world_aabb().max.z)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub from: Vec3,
    pub to: Vec3,
}

/// Straight-line gripper segments the pending actions will trace, starting
/// from the current gripper position.
pub fn predicted_segments(plan: &TaskPlan, scene: &SceneState) -> Vec<Segment> {
    let mut sim = scene.clone();
    let mut out = Vec::new();
    for (index, action) in plan.actions.iter().enumerate().skip(plan.cursor) {
        let Ok(to) = action_waypoint(&action.kind, &sim) else {
            break;
        };
        let from = sim.gripper.position;
        out.push(Segment { index, from, to });
        let delta = to - from;
        sim.gripper.position = to;
        if let Some(h) = sim.gripper.held.and_then(|id| sim.object_mut(id)) {
            h.pose.position = h.pose.position + delta;
        }
        match action.kind {
            ActionKind::Grasp { target } => sim.gripper.held = Some(target),
            ActionKind::Release => sim.gripper.held = None,
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Active {
    index: usize,
    waypoint: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecState {
    pub scene: SceneState,
    pub plan: TaskPlan,
    pub registry: LabelRegistry,
    pub status: ExecStatus,
    pub step_count: u64,
    pub events: Vec<Event>,
    pub config: ExecConfig,
    active: Option<Active>,
    held_offset: Option<Vec3>,
}

impl ExecState {
    pub fn new(scene: SceneState, plan: TaskPlan, registry: LabelRegistry, config: ExecConfig) -> Self {
        Self {
            scene,
            plan,
            registry,
            status: ExecStatus::Running,
            step_count: 0,
            events: Vec::new(),
            config,
            active: None,
            held_offset: None,
        }
    }

    pub fn from_task(task_id: &str, variation_id: &str, seed: u64, config: ExecConfig) -> Result<Self, TaskError> {
        let (scene, plan) = instantiate(task_id, variation_id, seed)?;
        let registry = LabelRegistry::new(format!("{task_id}.{variation_id}.s{seed}")).assign(&scene);
        Ok(Self::new(scene, plan, registry, config))
    }

    pub fn t(&self) -> f64 {
        self.scene.time
    }

    pub fn frame(&self) -> Frame {
        Frame::capture(self.step_count, &self.scene, &self.registry)
    }

    pub fn pause(&mut self) {
        if matches!(self.status, ExecStatus::Running | ExecStatus::AwaitingModulation) {
            self.status = ExecStatus::Paused;
        }
    }

    pub fn resume(&mut self) {
        if matches!(self.status, ExecStatus::Paused | ExecStatus::AwaitingModulation) {
            self.status = ExecStatus::Running;
        }
    }

    fn emit(&mut self, kind: EventKind) {
        self.events.push(Event {
            t: self.scene.time,
            frame: self.step_count,
            kind,
        });
    }

    /// Ends the episode as failed.
    pub fn fail(&mut self, reason: impl Into<String>) {
        self.status = ExecStatus::Failed;
        self.emit(EventKind::TaskFailed { reason: reason.into() });
    }

    fn finish(&mut self) {
        let report = self.plan.report(&self.scene);
        if report.success {
            self.status = ExecStatus::Done;
            self.emit(EventKind::TaskDone { success: true });
        } else {
            let pending: Vec<_> = report
                .subtasks
                .iter()
                .filter(|(_, s)| *s == crate::tasks::SubtaskStatus::Pending)
                .map(|(n, _)| n.as_str())
                .collect();
            self.fail(format!("goal not met: {}", pending.join(", ")));
        }
    }

    /// Applies `ir` at the current step boundary and returns the resulting
    /// event.
    pub fn inject(&mut self, ir: ModulationIR) -> Event {
        if self.status.is_terminal() {
            self.emit(EventKind::ModulationRejected {
                ir,
                reason: RejectReason::TooLate,
                detail: "episode already ended".into(),
            });
            return self.events.last().expect("just emitted").clone();
        }
        let current = self.plan.actions.get(self.plan.cursor).map(|a| (a.kind.clone(), a.subtask.clone()));
        match apply_with(&self.config.modulator, &self.plan, &ir, &self.scene, &self.registry) {
            Ok(plan) => {
                self.plan = plan;
                let mark = ModulationPointMark {
                    frame_index: self.step_count,
                    cursor: self.plan.cursor,
                };
                let abort = matches!(ir.op, ModulationOp::Abort);
                self.emit(EventKind::ModulationApplied { ir, mark });
                let event = self.events.last().expect("just emitted").clone();
                let now = self.plan.actions.get(self.plan.cursor).map(|a| (a.kind.clone(), a.subtask.clone()));
                if now != current {
                    self.active = None;
                }
                if abort {
                    self.fail("aborted");
                }
                event
            }
            Err(rej) => {
                self.emit(EventKind::ModulationRejected {
                    ir,
                    reason: rej.reason,
                    detail: rej.detail,
                });
                self.events.last().expect("just emitted").clone()
            }
        }
    }

    /// Advances one step and returns the events it produced.
    pub fn step(&mut self) -> Result<&[Event], ExecError> {
        if self.status != ExecStatus::Running {
            return Err(ExecError::InvalidState(self.status));
        }
        let first_new = self.events.len();
        if self.plan.cursor >= self.plan.len() {
            self.finish();
            return Ok(&self.events[first_new..]);
        }
        let index = self.plan.cursor;
        let action: PrimitiveAction = self.plan.actions[index].clone();
        let waypoint = match self.active {
            Some(a) if a.index == index => a.waypoint,
            _ => match action_waypoint(&action.kind, &self.scene) {
                Ok(w) => {
                    self.active = Some(Active { index, waypoint: w });
                    self.emit(EventKind::ActionStarted {
                        index,
                        action: action.summary(),
                        subtask: action.subtask.clone(),
                    });
                    w
                }
                Err(reason) => {
                    self.fail(reason);
                    return Ok(&self.events[first_new..]);
                }
            },
        };

        self.step_count += 1;
        self.scene.time = self.step_count as f64 * self.config.dt;
        let from = self.scene.gripper.position;
        let delta = waypoint - from;
        let dist = delta.norm();
        let max_step = self.config.v_max * action.speed_scale * self.config.dt;
        let to = if dist <= max_step { waypoint } else { from + delta.scale(max_step / dist) };
        self.scene.gripper.position = to;
        if let (Some(id), Some(offset)) = (self.scene.gripper.held, self.held_offset) {
            if let Some(o) = self.scene.object_mut(id) {
                o.pose.position = to + offset;
            }
        }

        if to.distance(waypoint) <= ARRIVAL_TOLERANCE {
            self.complete(index, &action);
        }
        Ok(&self.events[first_new..])
    }

    fn complete(&mut self, index: usize, action: &PrimitiveAction) {
        match action.kind {
            ActionKind::Grasp { target } => {
                let g = self.scene.gripper.position;
                let Some(o) = self.scene.object(target) else {
                    return self.fail(format!("{target} does not exist"));
                };
                if o.pose.position.distance(g) > self.config.grasp_radius {
                    return self.fail(format!("{target} out of reach"));
                }
                self.held_offset = Some(o.pose.position - g);
                self.scene.gripper.held = Some(target);
                self.scene.gripper.aperture = Aperture::Closed;
                self.emit(EventKind::Grasped { object: target });
            }
            ActionKind::Release => {
                self.scene.gripper.aperture = Aperture::Open;
                self.held_offset = None;
                if let Some(object) = self.scene.gripper.held.take() {
                    self.emit(EventKind::Released { object });
                }
            }
            _ => {}
        }
        self.active = None;
        self.plan.cursor += 1;
        self.emit(EventKind::ActionCompleted {
            index,
            action: action.summary(),
            subtask: action.subtask.clone(),
        });
        let next = self.plan.actions.get(self.plan.cursor);
        if next.is_none_or(|n| n.subtask != action.subtask) {
            let object = self.plan.subtask_object(&action.subtask);
            self.emit(EventKind::SubtaskCompleted {
                subtask: action.subtask.clone(),
                object,
            });
        }
        if self.plan.cursor >= self.plan.len() {
            self.finish();
        } else if self.config.pause_at_modulation_points && self.plan.modulation_points.contains(&self.plan.cursor) {
            self.status = ExecStatus::AwaitingModulation;
        }
    }
}

pub fn validate_script(script: &[ScriptEntry]) -> Result<(), ExecError> {
    if script.windows(2).any(|w| w[0].frame > w[1].frame) {
        return Err(ExecError::InvalidScript("frame indices must be ascending".into()));
    }
    Ok(())
}

/// Runs until the episode ends, injecting each script entry when the
/// current frame index equals its `frame`. Entries past the end are
/// injected after termination and rejected as too late.
pub fn run_to_completion(exec: ExecState, task: (&str, &str, u64), script: &[ScriptEntry]) -> Result<EpisodeTrace, ExecError> {
    run_to_completion_with(exec, task, script, |_, _| {})
}

/// As [`run_to_completion`], calling `before_inject` with the state each
/// script entry is about to be applied to.
pub fn run_to_completion_with(
    mut exec: ExecState,
    task: (&str, &str, u64),
    script: &[ScriptEntry],
    mut before_inject: impl FnMut(&ExecState, &ScriptEntry),
) -> Result<EpisodeTrace, ExecError> {
    validate_script(script)?;
    exec.resume();
    let mut frames = vec![exec.frame()];
    let mut next = 0;
    loop {
        while next < script.len() && script[next].frame <= exec.step_count {
            before_inject(&exec, &script[next]);
            exec.inject(script[next].ir.clone());
            next += 1;
        }
        if exec.status == ExecStatus::AwaitingModulation {
            exec.resume();
        }
        if exec.status.is_terminal() {
            break;
        }
        if exec.step_count >= exec.config.step_cap {
            exec.fail("step cap exceeded");
            return Err(ExecError::StepCapExceeded(exec.config.step_cap));
        }
        exec.step()?;
        frames.push(exec.frame());
    }
    for entry in &script[next..] {
        before_inject(&exec, entry);
        exec.inject(entry.ir.clone());
    }
    Ok(EpisodeTrace {
        task_id: task.0.to_string(),
        variation_id: task.1.to_string(),
        seed: task.2,
        script: script.to_vec(),
        frames,
        events: exec.events,
        status: exec.status,
        final_plan: exec.plan,
    })
}

/// Instantiates and runs an episode with the default configuration.
pub fn run_episode(task_id: &str, variation_id: &str, seed: u64, script: &[ScriptEntry]) -> Result<EpisodeTrace, ExecError> {
    run_episode_with(ExecConfig::default(), task_id, variation_id, seed, script)
}

pub fn run_episode_with(
    config: ExecConfig,
    task_id: &str,
    variation_id: &str,
    seed: u64,
    script: &[ScriptEntry],
) -> Result<EpisodeTrace, ExecError> {
    let exec = ExecState::from_task(task_id, variation_id, seed, config)?;
    run_to_completion(exec, (task_id, variation_id, seed), script)
}
