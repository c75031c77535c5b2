//! Ground-truth world state and multi-camera pinhole projection.
//!
//! World frame is right-handed with z up; lengths are meters, image
//! coordinates are pixels with the origin at the top-left corner. Cameras
//! use the usual optical convention: x right, y down, z along the view
//! direction.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Pose, Quat, Vec3};
use crate::real::Real;

/// Points closer than this to the camera plane are not projected.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cup,
    Bottle,
    Box,
    Cane,
    Book,
    Plate,
    Carpet,
}

impl Shape {
    pub const ALL: [Shape; 7] = [
        Shape::Cup,
        Shape::Bottle,
        Shape::Box,
        Shape::Cane,
        Shape::Book,
        Shape::Plate,
        Shape::Carpet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Cup => "cup",
            Shape::Bottle => "bottle",
            Shape::Box => "box",
            Shape::Cane => "cane",
            Shape::Book => "book",
            Shape::Plate => "plate",
            Shape::Carpet => "carpet",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.as_str() == w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    White,
    Brown,
    Blue,
    Green,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::White,
        Color::Brown,
        Color::Blue,
        Color::Green,
        Color::Yellow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::White => "white",
            Color::Brown => "brown",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == w)
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct ObjectRecord<T: Real> {
    pub object_id: ObjectId,
    /// Task role the object was spawned for, e.g. `base_cup`.
    pub role: String,
    pub shape: Shape,
    pub color: Color,
    pub pose: Pose<T>,
    /// Half sizes of the local axis-aligned box.
    pub half_extents: Vec3<T>,
    pub graspable: bool,
}

impl<T: Real> ObjectRecord<T> {
    /// The 8 corners of the oriented bounding box in world coordinates.
    pub fn corners(&self) -> [Vec3<T>; 8] {
        let h = self.half_extents;
        let mut out = [Vec3::zero(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -h.x } else { h.x };
            let sy = if i & 2 == 0 { -h.y } else { h.y };
            let sz = if i & 4 == 0 { -h.z } else { h.z };
            *c = self.pose.transform_point(Vec3::new(sx, sy, sz));
        }
        out
    }

    /// World-frame axis-aligned box enclosing the oriented box.
    pub fn world_aabb(&self) -> Aabb<T> {
        let cs = self.corners();
        let mut min = cs[0];
        let mut max = cs[0];
        for c in &cs[1..] {
            min = Vec3::new(min.x.min(c.x), min.y.min(c.y), min.z.min(c.z));
            max = Vec3::new(max.x.max(c.x), max.y.max(c.y), max.z.max(c.z));
        }
        Aabb::new(min, max)
    }

    pub fn is_valid(&self) -> bool {
        let h = self.half_extents;
        h.x > T::zero()
            && h.y > T::zero()
            && h.z > T::zero()
            && self.pose.position.is_finite()
            && self.pose.orientation.is_unit()
    }

    pub fn describe(&self) -> String {
        format!("{} {}", self.color, self.shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aperture {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct GripperState<T: Real> {
    pub position: Vec3<T>,
    pub orientation: Quat<T>,
    pub aperture: Aperture,
    pub held: Option<ObjectId>,
}

impl<T: Real> GripperState<T> {
    /// Open gripper pointing straight down at `position`.
    pub fn open_at(position: Vec3<T>) -> Self {
        Self {
            position,
            orientation: Quat::new(T::zero(), T::one(), T::zero(), T::zero()),
            aperture: Aperture::Open,
            held: None,
        }
    }

    pub fn pose(&self) -> Pose<T> {
        Pose::new(self.position, self.orientation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct CameraModel<T: Real> {
    pub camera_id: String,
    /// World-to-camera transform: `p_cam = world_to_camera * p_world`.
    pub world_to_camera: Pose<T>,
    pub focal_px: T,
    pub image_size: (u32, u32),
}

impl<T: Real> CameraModel<T> {
    /// Camera at `eye` looking towards `target`; `up` fixes the roll.
    pub fn look_at(
        camera_id: impl Into<String>,
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        focal_px: T,
        image_size: (u32, u32),
    ) -> Self {
        let forward = (target - eye).normalized();
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        let rot = Quat::from_rotation_matrix([right.to_array(), down.to_array(), forward.to_array()]);
        let translation = -rot.rotate(eye);
        Self {
            camera_id: camera_id.into(),
            world_to_camera: Pose::new(translation, rot),
            focal_px,
            image_size,
        }
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        let p = &self.world_to_camera;
        p.orientation.conjugate().rotate(-p.position)
    }

    /// Same camera with its optical center moved by `delta`.
    pub fn translated(&self, delta: Vec3<T>) -> Self {
        let mut out = self.clone();
        let p = &mut out.world_to_camera;
        p.position = p.position - p.orientation.rotate(delta);
        out
    }

    pub fn to_camera_frame(&self, p: Vec3<T>) -> Vec3<T> {
        self.world_to_camera.transform_point(p)
    }

    pub fn is_valid(&self) -> bool {
        self.focal_px > T::zero()
            && self.image_size.0 > 0
            && self.image_size.1 > 0
            && self.world_to_camera.orientation.is_unit()
    }

    pub fn width(&self) -> T {
        T::lit(self.image_size.0 as f64)
    }

    pub fn height(&self) -> T {
        T::lit(self.image_size.1 as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct SceneState<T: Real> {
    pub time: T,
    pub objects: Vec<ObjectRecord<T>>,
    pub gripper: GripperState<T>,
    pub cameras: Vec<CameraModel<T>>,
}

impl<T: Real> SceneState<T> {
    pub fn object(&self, id: ObjectId) -> Option<&ObjectRecord<T>> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    pub fn object_mut(&mut self, id: ObjectId) -> Option<&mut ObjectRecord<T>> {
        self.objects.iter_mut().find(|o| o.object_id == id)
    }

    pub fn camera(&self, camera_id: &str) -> Option<&CameraModel<T>> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }

    pub fn object_by_role(&self, role: &str) -> Option<&ObjectRecord<T>> {
        self.objects.iter().find(|o| o.role == role)
    }

    /// Checks the structural invariants of a snapshot.
    pub fn validate(&self) -> Result<(), String> {
        if self.time.is_nan() || self.time < T::zero() {
            return Err(format!("negative time {}", self.time));
        }
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.object_id) {
                return Err(format!("duplicate object id {}", o.object_id));
            }
            if !o.is_valid() {
                return Err(format!("invalid object {}", o.object_id));
            }
        }
        if !self.gripper.orientation.is_unit() {
            return Err("gripper orientation not unit".into());
        }
        if self.gripper.held.is_some() && self.gripper.aperture != Aperture::Closed {
            return Err("held object with open gripper".into());
        }
        if let Some(c) = self.cameras.iter().find(|c| !c.is_valid()) {
            return Err(format!("invalid camera {}", c.camera_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBBox<T> {
    pub camera_id: String,
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Real> ImageBBox<T> {
    pub fn area(&self) -> T {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, u: T, v: T) -> bool {
        u >= self.x_min && u <= self.x_max && v >= self.y_min && v <= self.y_max
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        ((self.x_min + self.x_max) * half, (self.y_min + self.y_max) * half)
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Pinhole projection of a world point; `None` when the point is not in
/// front of the camera. The result may fall outside the image.
pub fn project_point<T: Real>(camera: &CameraModel<T>, p: Vec3<T>) -> Option<(T, T)> {
    let c = camera.to_camera_frame(p);
    if c.z <= T::lit(MIN_DEPTH) {
        return None;
    }
    let half = T::lit(0.5);
    let u = camera.focal_px * c.x / c.z + camera.width() * half;
    let v = camera.focal_px * c.y / c.z + camera.height() * half;
    Some((u, v))
}

/// Image-space box of an object's oriented bounding box, clamped to the
/// image. Corners behind the camera are ignored.
pub fn project_object_bbox<T: Real>(
    camera: &CameraModel<T>,
    obj: &ObjectRecord<T>,
) -> Option<ImageBBox<T>> {
    let mut pts = obj.corners().into_iter().filter_map(|c| project_point(camera, c));
    let (u0, v0) = pts.next()?;
    let (mut x_min, mut y_min, mut x_max, mut y_max) = (u0, v0, u0, v0);
    for (u, v) in pts {
        x_min = x_min.min(u);
        x_max = x_max.max(u);
        y_min = y_min.min(v);
        y_max = y_max.max(v);
    }
    let (w, h) = (camera.width(), camera.height());
    let clamp = |x: T, hi: T| x.max(T::zero()).min(hi);
    let bbox = ImageBBox {
        camera_id: camera.camera_id.clone(),
        x_min: clamp(x_min, w),
        y_min: clamp(y_min, h),
        x_max: clamp(x_max, w),
        y_max: clamp(y_max, h),
    };
    if bbox.x_max <= bbox.x_min || bbox.y_max <= bbox.y_min {
        return None;
    }
    Some(bbox)
}

/// Objects with at least one square pixel of visible box, ascending by id.
/// Occlusion is not modeled.
pub fn visible_objects<T: Real>(
    camera: &CameraModel<T>,
    scene: &SceneState<T>,
) -> Vec<(ObjectId, ImageBBox<T>)> {
    let mut out: Vec<_> = scene
        .objects
        .iter()
        .filter_map(|o| project_object_bbox(camera, o).map(|b| (o.object_id, b)))
        .filter(|(_, b)| b.area() >= T::one())
        .collect();
    out.sort_by_key(|(id, _)| *id);
    out
}

pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (640, 480);
pub const DEFAULT_FOCAL_PX: f64 = 500.0;

/// Front, left and overhead cameras aimed at the table workspace.
pub fn default_rig<T: Real>() -> Vec<CameraModel<T>> {
    let v = |x: f64, y: f64, z: f64| Vec3::new(T::lit(x), T::lit(y), T::lit(z));
    let target = v(0.5, 0.0, 0.05);
    let up = v(0.0, 0.0, 1.0);
    let focal = T::lit(DEFAULT_FOCAL_PX);
    vec![
        CameraModel::look_at("front", v(1.7, 0.0, 0.7), target, up, focal, DEFAULT_IMAGE_SIZE),
        CameraModel::look_at("left", v(0.5, 1.3, 0.7), target, up, focal, DEFAULT_IMAGE_SIZE),
        CameraModel::look_at("overhead", v(0.5, 0.0, 1.6), target, v(-1.0, 0.0, 0.0), focal, DEFAULT_IMAGE_SIZE),
    ]
}
