//! Synthetic object labels shared by the operator view and the robot.
//!
//! Labels have the exact form `object #K`. They are handed out in ascending
//! object id order, never change for an object, and are never recycled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scene::{visible_objects, CameraModel, Color, ImageBBox, ObjectId, SceneState, Shape};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SyntheticLabel(u32);

impl SyntheticLabel {
    pub fn new(k: u32) -> Option<Self> {
        (k >= 1).then_some(Self(k))
    }

    pub fn k(self) -> u32 {
        self.0
    }
}

impl fmt::Display for SyntheticLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "object #{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("not a synthetic label: {0:?}")]
pub struct LabelSyntaxError(pub String);

impl FromStr for SyntheticLabel {
    type Err = LabelSyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || LabelSyntaxError(s.to_string());
        let digits = s.strip_prefix("object #").ok_or_else(err)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
            return Err(err());
        }
        digits.parse().ok().and_then(Self::new).ok_or_else(err)
    }
}

impl Serialize for SyntheticLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SyntheticLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Unresolved reference to an object, as written in a command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TargetRef {
    ByLabel {
        label: SyntheticLabel,
    },
    /// `shape: None` is the elided noun of "the white one"; it is filled in
    /// from the context object's shape during resolution.
    ByAttributes {
        color: Option<Color>,
        shape: Option<Shape>,
    },
    OtherOf {
        shape: Shape,
    },
    HeldTarget,
}

impl TargetRef {
    pub fn label(k: u32) -> Self {
        TargetRef::ByLabel {
            label: SyntheticLabel::new(k).expect("label index starts at 1"),
        }
    }

    pub fn attrs(color: Option<Color>, shape: Option<Shape>) -> Self {
        TargetRef::ByAttributes { color, shape }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("no object matches the reference")]
    NotFound,
    #[error("reference matches {0:?}; use a synthetic label")]
    Ambiguous(Vec<ObjectId>),
    #[error("reference needs a current target but none is available")]
    NoContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRegistry {
    pub episode_id: String,
    labels: BTreeMap<ObjectId, SyntheticLabel>,
    next_k: u32,
}

impl LabelRegistry {
    pub fn new(episode_id: impl Into<String>) -> Self {
        Self {
            episode_id: episode_id.into(),
            labels: BTreeMap::new(),
            next_k: 1,
        }
    }

    /// Registry extended with labels for every unlabeled object in `scene`.
    pub fn assign<T: Real>(&self, scene: &SceneState<T>) -> Self {
        let mut out = self.clone();
        out.assign_in_place(scene);
        out
    }

    pub fn assign_in_place<T: Real>(&mut self, scene: &SceneState<T>) {
        let mut fresh: Vec<ObjectId> = scene
            .objects
            .iter()
            .map(|o| o.object_id)
            .filter(|id| !self.labels.contains_key(id))
            .collect();
        fresh.sort();
        for id in fresh {
            self.labels.insert(id, SyntheticLabel(self.next_k));
            self.next_k += 1;
        }
    }

    pub fn label_of(&self, id: ObjectId) -> Option<SyntheticLabel> {
        self.labels.get(&id).copied()
    }

    pub fn object_of(&self, label: SyntheticLabel) -> Option<ObjectId> {
        self.labels.iter().find(|(_, l)| **l == label).map(|(id, _)| *id)
    }

    pub fn next_k(&self) -> u32 {
        self.next_k
    }

    pub fn iter(&self) -> impl Iterator<Item = (ObjectId, SyntheticLabel)> + '_ {
        self.labels.iter().map(|(i, l)| (*i, *l))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn covers<T: Real>(&self, scene: &SceneState<T>) -> bool {
        scene.objects.iter().all(|o| self.labels.contains_key(&o.object_id))
    }
}

/// Resolves `target` against the scene.
///
/// `context` is the object the robot is currently working on; it supplies
/// the elided shape of "the white one" and is excluded by "the other cup".
/// "The other X" only considers graspable objects, so fixtures such as a
/// base cup never count as the other one.
pub fn resolve<T: Real>(
    target: &TargetRef,
    scene: &SceneState<T>,
    reg: &LabelRegistry,
    context: Option<ObjectId>,
) -> Result<ObjectId, ResolveError> {
    let unique = |matches: Vec<ObjectId>| match matches.len() {
        0 => Err(ResolveError::NotFound),
        1 => Ok(matches[0]),
        _ => Err(ResolveError::Ambiguous(matches)),
    };
    match target {
        TargetRef::ByLabel { label } => {
            let id = reg.object_of(*label).ok_or(ResolveError::NotFound)?;
            scene.object(id).map(|o| o.object_id).ok_or(ResolveError::NotFound)
        }
        TargetRef::ByAttributes { color, shape } => {
            let shape = match shape {
                Some(s) => *s,
                None => {
                    let ctx = context.ok_or(ResolveError::NoContext)?;
                    scene.object(ctx).ok_or(ResolveError::NotFound)?.shape
                }
            };
            unique(
                scene
                    .objects
                    .iter()
                    .filter(|o| o.shape == shape && color.is_none_or(|c| o.color == c))
                    .map(|o| o.object_id)
                    .collect(),
            )
        }
        TargetRef::OtherOf { shape } => {
            let held = scene.gripper.held;
            if context.is_none() && held.is_none() {
                return Err(ResolveError::NoContext);
            }
            unique(
                scene
                    .objects
                    .iter()
                    .filter(|o| o.shape == *shape && o.graspable)
                    .map(|o| o.object_id)
                    .filter(|id| Some(*id) != context && Some(*id) != held)
                    .collect(),
            )
        }
        TargetRef::HeldTarget => scene.gripper.held.ok_or(ResolveError::NoContext),
    }
}

/// Labeled boxes for every object visible in `camera`.
pub fn overlay<T: Real>(
    scene: &SceneState<T>,
    camera: &CameraModel<T>,
    reg: &LabelRegistry,
) -> Vec<(SyntheticLabel, ImageBBox<T>)> {
    visible_objects(camera, scene)
        .into_iter()
        .filter_map(|(id, bbox)| reg.label_of(id).map(|l| (l, bbox)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vec3};
    use crate::scene::{default_rig, GripperState, ObjectRecord};

    fn obj(id: u32, shape: Shape, color: Color, x: f64, y: f64) -> ObjectRecord<f64> {
        ObjectRecord {
            object_id: ObjectId(id),
            role: format!("r{id}"),
            shape,
            color,
            pose: Pose::from_position(Vec3::new(x, y, 0.05)),
            half_extents: Vec3::new(0.03, 0.03, 0.05),
            graspable: true,
        }
    }

    fn scene(objects: Vec<ObjectRecord<f64>>) -> SceneState<f64> {
        SceneState {
            time: 0.0,
            objects,
            gripper: GripperState::open_at(Vec3::new(0.3, 0.0, 0.45)),
            cameras: default_rig(),
        }
    }

    fn three_cups() -> SceneState<f64> {
        scene(vec![
            obj(1, Shape::Cup, Color::Red, 0.45, -0.15),
            obj(2, Shape::Cup, Color::Red, 0.55, 0.0),
            obj(3, Shape::Cup, Color::Red, 0.62, 0.15),
        ])
    }

    #[test]
    fn label_text_grammar() {
        assert_eq!(TargetRef::label(2), TargetRef::ByLabel { label: "object #2".parse().unwrap() });
        assert_eq!(SyntheticLabel::new(12).unwrap().to_string(), "object #12");
        for bad in ["object #0", "object #", "Object #1", "object  #1", "object #01", "object #1x"] {
            assert!(bad.parse::<SyntheticLabel>().is_err(), "{bad}");
        }
        assert!(SyntheticLabel::new(0).is_none());
    }

    #[test]
    fn fresh_registry_labels_in_id_order() {
        let reg = LabelRegistry::new("e").assign(&three_cups());
        let texts: Vec<_> = reg.iter().map(|(_, l)| l.to_string()).collect();
        assert_eq!(texts, ["object #1", "object #2", "object #3"]);
        assert_eq!(reg.next_k(), 4);
    }

    #[test]
    fn assignment_is_idempotent_and_stable() {
        let s = three_cups();
        let reg = LabelRegistry::new("e").assign(&s);
        assert_eq!(reg.assign(&s), reg);
        assert_eq!(LabelRegistry::new("e").assign(&scene(vec![])), LabelRegistry::new("e"));

        // removing then adding objects never recycles a label
        let mut s2 = s.clone();
        s2.objects.remove(0);
        s2.objects.push(obj(7, Shape::Plate, Color::Blue, 0.5, 0.2));
        let reg2 = reg.assign(&s2);
        assert_eq!(reg2.label_of(ObjectId(2)), reg.label_of(ObjectId(2)));
        assert_eq!(reg2.label_of(ObjectId(7)).unwrap().k(), 4);
        assert_eq!(reg2.label_of(ObjectId(1)).unwrap().k(), 1);
    }

    #[test]
    fn resolve_by_label_and_attributes() {
        let s = three_cups();
        let reg = LabelRegistry::new("e").assign(&s);
        assert_eq!(resolve(&TargetRef::label(2), &s, &reg, None), Ok(ObjectId(2)));
        assert_eq!(resolve(&TargetRef::label(9), &s, &reg, None), Err(ResolveError::NotFound));
        assert!(matches!(
            resolve(&TargetRef::attrs(None, Some(Shape::Cup)), &s, &reg, None),
            Err(ResolveError::Ambiguous(ids)) if ids.len() == 3
        ));

        let bottles = scene(vec![
            obj(1, Shape::Bottle, Color::Brown, 0.5, 0.2),
            obj(2, Shape::Bottle, Color::White, 0.6, 0.25),
        ]);
        let reg = LabelRegistry::new("e").assign(&bottles);
        let white = TargetRef::attrs(Some(Color::White), Some(Shape::Bottle));
        assert_eq!(resolve(&white, &bottles, &reg, None), Ok(ObjectId(2)));
        let white_one = TargetRef::attrs(Some(Color::White), None);
        assert_eq!(resolve(&white_one, &bottles, &reg, None), Err(ResolveError::NoContext));
        assert_eq!(resolve(&white_one, &bottles, &reg, Some(ObjectId(1))), Ok(ObjectId(2)));
        let green = TargetRef::attrs(Some(Color::Green), Some(Shape::Bottle));
        assert_eq!(resolve(&green, &bottles, &reg, None), Err(ResolveError::NotFound));
    }

    #[test]
    fn resolve_other_and_held() {
        let mut s = three_cups();
        s.objects[2].graspable = false;
        let reg = LabelRegistry::new("e").assign(&s);
        let other = TargetRef::OtherOf { shape: Shape::Cup };
        assert_eq!(resolve(&other, &s, &reg, None), Err(ResolveError::NoContext));
        assert_eq!(resolve(&other, &s, &reg, Some(ObjectId(1))), Ok(ObjectId(2)));
        assert_eq!(resolve(&TargetRef::HeldTarget, &s, &reg, None), Err(ResolveError::NoContext));
        s.gripper.held = Some(ObjectId(2));
        s.gripper.aperture = crate::scene::Aperture::Closed;
        assert_eq!(resolve(&TargetRef::HeldTarget, &s, &reg, None), Ok(ObjectId(2)));
        assert_eq!(resolve(&other, &s, &reg, None), Ok(ObjectId(1)));
    }

    #[test]
    fn overlay_labels_agree_across_cameras() {
        let s = three_cups();
        let reg = LabelRegistry::new("e").assign(&s);
        let per_cam: Vec<Vec<String>> = s
            .cameras
            .iter()
            .map(|c| overlay(&s, c, &reg).into_iter().map(|(l, _)| l.to_string()).collect())
            .collect();
        assert_eq!(per_cam.len(), 3);
        for labels in &per_cam {
            assert_eq!(labels, &per_cam[0]);
            assert_eq!(labels.len(), 3);
        }
    }
}
