//! `TARGET` token substitution and per-camera highlights of the referenced
//! object.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{resolve, LabelRegistry, ResolveError};
use crate::modlang::{parse_with_spans, ModlangError, RefRole};
use crate::scene::{project_object_bbox, project_point, ObjectId};
use crate::{CameraModel, ImageBBox, ObjectRecord, SceneState};

pub const TARGET_TOKEN: &str = "TARGET";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error(transparent)]
    Parse(#[from] ModlangError),
    #[error("command has no object reference")]
    NoReference,
    #[error(transparent)]
    Resolve(#[from] ResolveError),
    #[error("{0} is not visible in any camera")]
    TargetInvisible(ObjectId),
    #[error("{0} is not in the scene")]
    UnknownObject(ObjectId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighlightMode {
    #[default]
    Bbox,
    Mask,
}

/// Run-length encoded binary mask over row-major pixels. `counts`
/// alternates between runs of unset and set pixels, starting with unset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn from_row_runs(width: u32, height: u32, runs: &[(u64, u64)]) -> Self {
        let mut counts = Vec::new();
        let mut pos = 0u64;
        for &(start, len) in runs {
            counts.push((start - pos) as u32);
            counts.push(len as u32);
            pos = start + len;
        }
        let total = width as u64 * height as u64;
        if pos < total {
            counts.push((total - pos) as u32);
        }
        Self { width, height, counts }
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let idx = y as u64 * self.width as u64 + x as u64;
        let mut pos = 0u64;
        for (i, &c) in self.counts.iter().enumerate() {
            pos += c as u64;
            if idx < pos {
                return i % 2 == 1;
            }
        }
        false
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &c) in self.counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub camera_id: String,
    pub bbox: ImageBBox,
    pub mode: HighlightMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Rle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedObservation {
    pub original_text: String,
    pub augmented_text: String,
    pub augmented: bool,
    pub target_object_id: Option<ObjectId>,
    /// Byte range of the replaced reference in `original_text`.
    pub target_span: Option<Range<usize>>,
    pub highlights: Vec<Highlight>,
}

impl AugmentedObservation {
    /// Puts the original reference back in place of `TARGET`.
    pub fn restore(&self) -> String {
        match &self.target_span {
            Some(span) => {
                let mut s = self.augmented_text.clone();
                s.replace_range(span.start..span.start + TARGET_TOKEN.len(), &self.original_text[span.clone()]);
                s
            }
            None => self.augmented_text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub mode: HighlightMode,
    /// Restrict highlights to one camera.
    #[serde(default)]
    pub single_camera: Option<String>,
}

/// Replaces the actionable reference with `TARGET`. For substitutions that
/// is the new object; the old reference stays verbatim.
pub fn augment_text(
    text: &str,
    scene: &SceneState,
    registry: &LabelRegistry,
    context: Option<ObjectId>,
) -> Result<(String, ObjectId, Range<usize>), AugmentError> {
    let parsed = parse_with_spans(text)?;
    let primary = parsed
        .refs
        .iter()
        .find(|r| r.role == RefRole::New)
        .or_else(|| parsed.refs.iter().find(|r| r.role == RefRole::Target))
        .ok_or(AugmentError::NoReference)?;
    let id = resolve(&primary.target, scene, registry, context)?;
    let span = primary.span.clone();
    let augmented = format!("{}{TARGET_TOKEN}{}", &text[..span.start], &text[span.end..]);
    Ok((augmented, id, span))
}

pub fn augment_views(
    scene: &SceneState,
    target: ObjectId,
    config: &AugmentConfig,
) -> Result<Vec<Highlight>, AugmentError> {
    let obj = scene.object(target).ok_or(AugmentError::UnknownObject(target))?;
    let highlights: Vec<_> = scene
        .cameras
        .iter()
        .filter(|c| config.single_camera.as_ref().is_none_or(|id| *id == c.camera_id))
        .filter_map(|cam| {
            let bbox = project_object_bbox(cam, obj)?;
            let mask = (config.mode == HighlightMode::Mask).then(|| hull_mask(cam, obj));
            Some(Highlight {
                camera_id: cam.camera_id.clone(),
                bbox,
                mode: config.mode,
                mask,
            })
        })
        .collect();
    if highlights.is_empty() {
        return Err(AugmentError::TargetInvisible(target));
    }
    Ok(highlights)
}

/// Composition of [`augment_text`] and [`augment_views`]. Commands without
/// an object reference come back unaugmented.
pub fn augment(
    text: &str,
    scene: &SceneState,
    registry: &LabelRegistry,
    context: Option<ObjectId>,
    config: &AugmentConfig,
) -> Result<AugmentedObservation, AugmentError> {
    match augment_text(text, scene, registry, context) {
        Ok((augmented_text, id, span)) => Ok(AugmentedObservation {
            original_text: text.to_string(),
            augmented_text,
            augmented: true,
            target_object_id: Some(id),
            target_span: Some(span),
            highlights: augment_views(scene, id, config)?,
        }),
        Err(AugmentError::NoReference) => Ok(AugmentedObservation {
            original_text: text.to_string(),
            augmented_text: text.to_string(),
            augmented: false,
            target_object_id: None,
            target_span: None,
            highlights: Vec::new(),
        }),
        Err(e) => Err(e),
    }
}

/// Monotone-chain convex hull, counter-clockwise without collinear points.
pub fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_convex(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0
    })
}

/// Pixels whose centers fall inside the hull of the projected corners.
pub fn hull_mask(camera: &CameraModel, obj: &ObjectRecord) -> Rle {
    let (w, h) = camera.image_size;
    let hull = convex_hull(obj.corners().into_iter().filter_map(|c| project_point(camera, c)).collect());
    let mut runs = Vec::new();
    if hull.len() >= 3 {
        let lo = |v: f64, max: u32| (v.floor().max(0.0) as u64).min(max as u64);
        let hi = |v: f64, max: u32| (v.ceil().max(0.0) as u64).min(max as u64);
        let (xs, ys): (Vec<f64>, Vec<f64>) = hull.iter().copied().unzip();
        let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().copied().fold(init, f);
        let (x0, x1) = (lo(fold(&xs, f64::min, f64::INFINITY), w), hi(fold(&xs, f64::max, f64::NEG_INFINITY), w));
        let (y0, y1) = (lo(fold(&ys, f64::min, f64::INFINITY), h), hi(fold(&ys, f64::max, f64::NEG_INFINITY), h));
        for j in y0..y1 {
            let mut run: Option<(u64, u64)> = None;
            for i in x0..x1 {
                if inside_convex(&hull, (i as f64 + 0.5, j as f64 + 0.5)) {
                    let idx = j * w as u64 + i;
                    run = Some(run.map_or((idx, 1), |(s, n)| (s, n + 1)));
                }
            }
            runs.extend(run);
        }
    }
    Rle::from_row_runs(w, h, &runs)
}
