//! Controlled-language modulation commands.
//!
//! Grammar (case-insensitive, trailing `.`, `!` and `?` ignored):
//!
//! ```text
//! command    = "please"? ( reorder | substitute | speed | avoid | skip | abort ) ;
//! reorder    = verb? target destination? ( "first" | "last" ) rest? ;
//! destination= ( "into" | "onto" | "on" | "in" ) target ;
//! substitute = "not" target ","? ( "but" | "use" ) target rest?
//!            | "use" target "instead"? rest? ;
//! speed      = "be"? ( "gentle" | "slow" | "fast" ) tail? | "speed" number rest? ;
//! avoid      = "avoid" motion? target rest? ;
//! motion     = ( "stepping" | "walking" | "going" | "moving" | "driving" | "passing" )
//!              ( "on" | "over" | "across" | "near" | "into" )? ;
//! skip       = "skip" ( target | subtask-name ) rest? ;
//! abort      = ( "stop" | "abort" ) tail? ;
//! target     = "object" "#"? integer
//!            | "it"
//!            | "the other" shape
//!            | "the"? color? shape? "one"? ( "labeled" "object" "#"? integer )? ;
//! verb       = "stack" | "grasp" | "move" | "bring" | "place" | "put" | "take" | "do" ;
//! rest       = connective tail ;
//! connective = "," | "and" | "then" | "before" | "after" | "because" | "so"
//!            | "while" | "please" | "since" | "instead" | "now" ;
//! tail       = any tokens, ignored ;
//! ```
//!
//! An attribute target needs a color or a shape; a missing shape is filled in
//! from the current target when the reference is resolved. A `labeled`
//! suffix turns the whole target into a label reference.

mod lexer;
mod parser;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::TargetRef;

pub use parser::{parse, parse_with_spans, ParsedCommand, RefRole, RefSpan};
pub use render::{render, render_target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModulationKind {
    /// Changes a parameter of the ongoing action.
    LL,
    /// Adds, removes, reorders or constrains subtasks.
    HL,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedSetting {
    Gentle,
    Slow,
    Fast,
    Scale(f64),
}

impl SpeedSetting {
    pub fn scale(self) -> f64 {
        match self {
            SpeedSetting::Gentle => 0.3,
            SpeedSetting::Slow => 0.5,
            SpeedSetting::Fast => 1.0,
            SpeedSetting::Scale(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    First,
    Last,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipTarget {
    Target(TargetRef),
    Subtask(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ModulationOp {
    SubstituteTarget { old: Option<TargetRef>, new: TargetRef },
    SetSpeed { speed: SpeedSetting },
    Reorder { target: TargetRef, position: Position },
    SkipSubtask { target: SkipTarget },
    AddAvoid { target: TargetRef },
    Abort,
}

impl ModulationOp {
    pub fn name(&self) -> &'static str {
        match self {
            ModulationOp::SubstituteTarget { .. } => "substitute_target",
            ModulationOp::SetSpeed { .. } => "set_speed",
            ModulationOp::Reorder { .. } => "reorder",
            ModulationOp::SkipSubtask { .. } => "skip_subtask",
            ModulationOp::AddAvoid { .. } => "add_avoid",
            ModulationOp::Abort => "abort",
        }
    }
}

/// Parsed modulation command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationIR {
    pub kind: ModulationKind,
    #[serde(flatten)]
    pub op: ModulationOp,
    pub raw_text: String,
}

impl ModulationIR {
    pub fn new(op: ModulationOp, raw_text: impl Into<String>) -> Self {
        Self {
            kind: classify_op(&op),
            op,
            raw_text: raw_text.into(),
        }
    }

    /// Equality of meaning, ignoring the surface text.
    pub fn same_structure(&self, other: &ModulationIR) -> bool {
        self.kind == other.kind && self.op == other.op
    }
}

pub fn classify_op(op: &ModulationOp) -> ModulationKind {
    match op {
        ModulationOp::SubstituteTarget { .. } | ModulationOp::SetSpeed { .. } => ModulationKind::LL,
        ModulationOp::Reorder { .. }
        | ModulationOp::SkipSubtask { .. }
        | ModulationOp::AddAvoid { .. }
        | ModulationOp::Abort => ModulationKind::HL,
    }
}

pub fn classify(ir: &ModulationIR) -> ModulationKind {
    classify_op(&ir.op)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModlangError {
    #[error("parse error at byte {offset}: expected {rule}")]
    Parse { offset: usize, rule: &'static str },
    #[error("unknown word {word:?} at byte {offset}")]
    UnknownWord { word: String, offset: usize },
}
