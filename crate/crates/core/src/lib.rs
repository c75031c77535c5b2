//! Deterministic desk-scale manipulation simulator with real-time language
//! modulation of in-flight robot plans.
//!
//! Objects carry synthetic labels (`object #K`) that are identical in every
//! camera view. Operators steer the robot with short controlled-language
//! commands; the referenced object is replaced by the `TARGET` token in the
//! text and highlighted in every view. Episodes, paired baseline/modulated
//! runs and instruction sets are exported as JSONL.
//!
//! Scene geometry is generic over the scalar type (see [`Real`]); the rest
//! of the crate works in `f64` through the aliases below.

pub mod augment;
pub mod dataset;
pub mod executor;
pub mod geometry;
pub mod labels;
pub mod modlang;
pub mod modulator;
mod real;
pub mod rng;
pub mod scene;
pub mod tasks;

pub use real::Real;

pub type Vec3 = geometry::Vec3<f64>;
pub type Quat = geometry::Quat<f64>;
pub type Pose = geometry::Pose<f64>;
pub type Aabb = geometry::Aabb<f64>;
pub type ObjectRecord = scene::ObjectRecord<f64>;
pub type GripperState = scene::GripperState<f64>;
pub type CameraModel = scene::CameraModel<f64>;
pub type SceneState = scene::SceneState<f64>;
pub type ImageBBox = scene::ImageBBox<f64>;

pub use labels::{LabelRegistry, ResolveError, SyntheticLabel, TargetRef};
pub use scene::{Aperture, Color, ObjectId, Shape};
pub use tasks::{ActionKind, PrimitiveAction, TaskPlan, TaskSpec};
