//! Wire messages. One JSON object per line (TCP) or per text message
//! (WebSocket).

use modsim_core::executor::{Event, ExecStatus, ModulationPointMark, ObjectPose, View};
use modsim_core::modlang::ModulationIR;
use modsim_core::GripperState;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;

fn default_variation() -> String {
    "v0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    Start {
        task: String,
        #[serde(default = "default_variation")]
        variation: String,
        #[serde(default)]
        seed: u64,
        /// Step as fast as possible instead of at the frame rate.
        #[serde(default)]
        turbo: bool,
        /// Hold at frame 0 until `resume`.
        #[serde(default)]
        paused: bool,
    },
    Command {
        command_id: Value,
        text: String,
        /// Apply when the frame index reaches this value instead of at the
        /// next step boundary.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_frame: Option<u64>,
    },
    Pause,
    Resume,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub task_id: String,
    pub description: String,
    pub variations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ParseError,
    BadMessage,
    UnknownTask,
    NoSession,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMsg {
    pub index: u64,
    pub t: f64,
    pub views: Vec<View>,
    pub gripper: GripperState,
    pub objects: Vec<ObjectPose>,
    pub status: ExecStatus,
    /// Plan cursor of the action in progress.
    pub cursor: usize,
    /// Action indices where a modulation would still take effect.
    pub modulation_points: Vec<usize>,
    /// Modulations applied so far.
    pub marks: Vec<ModulationPointMark>,
    /// Frames omitted immediately before this one because the client lagged.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dropped_before: u64,
}

fn is_zero(n: &u64) -> bool {
    *n == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Hello {
        protocol_version: u32,
        tasks: Vec<TaskInfo>,
    },
    Frame(Box<FrameMsg>),
    Ack {
        command_id: Value,
        parsed: ModulationIR,
    },
    Event(Event),
    Error {
        code: ErrorCode,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command_id: Option<Value>,
    },
    Done {
        success: bool,
        status: ExecStatus,
    },
}

impl ServerMsg {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMsg::Error {
            code,
            message: message.into(),
            command_id: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

pub fn task_infos() -> Vec<TaskInfo> {
    modsim_core::tasks::list_tasks()
        .into_iter()
        .map(|t| TaskInfo {
            task_id: t.task_id,
            description: t.description,
            variations: t.variations.into_iter().map(|v| v.variation_id).collect(),
        })
        .collect()
}

pub fn hello() -> ServerMsg {
    ServerMsg::Hello {
        protocol_version: PROTOCOL_VERSION,
        tasks: task_infos(),
    }
}
