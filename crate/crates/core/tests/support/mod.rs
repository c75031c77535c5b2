//! Reference oracles and suite checks shared by the integration tests and
//! the acceptance target. Each `suite_*` returns a one-line summary on
//! success and a description of the first violation otherwise.

#![allow(dead_code, clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};

use modsim_core::augment::{augment, hull_mask, AugmentConfig, HighlightMode, TARGET_TOKEN};
use modsim_core::dataset::{self, render_bank, Condition, DatasetConfig, Specificity, TemplateContext};
use modsim_core::executor::{run_episode, EventKind, ExecConfig, ExecState, ScriptEntry};
use modsim_core::geometry::Quat;
use modsim_core::labels::{overlay, resolve, ResolveError};
use modsim_core::modlang::{classify, parse, render, ModulationKind, ModulationOp, Position, SkipTarget, SpeedSetting};
use modsim_core::modulator::context_object;
use modsim_core::rng::SimRng;
use modsim_core::scene::{project_object_bbox, project_point, Color, ObjectId, Shape};
use modsim_core::tasks::{instantiate, BRING_OBJECT, PLACE_ON_SHELF, STACK_CUPS};
use modsim_core::{CameraModel, LabelRegistry, ObjectRecord, Pose, TargetRef, Vec3};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub const TASKS: [&str; 3] = [STACK_CUPS, BRING_OBJECT, PLACE_ON_SHELF];
pub const VARIATIONS: [&str; 2] = ["v0", "v1"];

// ---------------------------------------------------------------------------
// Geometry oracle: plain arrays, camera basis rebuilt from the look-at inputs.

type V = [f64; 3];

fn sub(a: V, b: V) -> V {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: V, b: V) -> V {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn dot(a: V, b: V) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: V, b: V) -> V {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
fn unit(a: V) -> V {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}
fn arr(v: Vec3) -> V {
    [v.x, v.y, v.z]
}

#[derive(Debug, Clone)]
pub struct OracleCamera {
    pub eye: V,
    pub right: V,
    pub down: V,
    pub forward: V,
    pub focal: f64,
    pub size: (u32, u32),
}

impl OracleCamera {
    pub fn look_at(eye: V, target: V, up: V, focal: f64, size: (u32, u32)) -> Self {
        let forward = unit(sub(target, eye));
        let right = unit(cross(forward, up));
        let down = cross(forward, right);
        Self { eye, right, down, forward, focal, size }
    }

    pub fn model(&self, id: &str, target: V, up: V) -> CameraModel {
        let v = |a: V| Vec3::new(a[0], a[1], a[2]);
        CameraModel::look_at(id, v(self.eye), v(target), v(up), self.focal, self.size)
    }

    pub fn depth(&self, p: V) -> f64 {
        dot(sub(p, self.eye), self.forward)
    }

    pub fn project(&self, p: V) -> Option<(f64, f64)> {
        let d = sub(p, self.eye);
        let z = dot(d, self.forward);
        if z <= 1e-6 {
            return None;
        }
        let u = self.focal * dot(d, self.right) / z + self.size.0 as f64 / 2.0;
        let v = self.focal * dot(d, self.down) / z + self.size.1 as f64 / 2.0;
        Some((u, v))
    }

    /// World-space direction of the ray through image point `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> V {
        let x = (u - self.size.0 as f64 / 2.0) / self.focal;
        let y = (v - self.size.1 as f64 / 2.0) / self.focal;
        let mut d = self.forward;
        for i in 0..3 {
            d[i] += x * self.right[i] + y * self.down[i];
        }
        d
    }
}

/// Rotation matrix of a unit quaternion, written out directly.
pub fn quat_matrix(q: Quat<f64>) -> [[f64; 3]; 3] {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn mat_vec(m: &[[f64; 3]; 3], v: V) -> V {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn mat_t_vec(m: &[[f64; 3]; 3], v: V) -> V {
    let col = |j: usize| [m[0][j], m[1][j], m[2][j]];
    [dot(col(0), v), dot(col(1), v), dot(col(2), v)]
}

/// Point on the box surface at local coordinates in `[-1, 1]^3`.
fn box_point(obj: &ObjectRecord, local: V) -> V {
    let m = quat_matrix(obj.pose.orientation);
    let h = arr(obj.half_extents);
    add(arr(obj.pose.position), mat_vec(&m, [local[0] * h[0], local[1] * h[1], local[2] * h[2]]))
}

/// Box of the projected object surface, found by projecting a dense grid on
/// every face, clamped to the image. `None` when empty.
pub fn oracle_bbox(cam: &OracleCamera, obj: &ObjectRecord) -> Option<[f64; 4]> {
    const N: usize = 24;
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for axis in 0..3 {
        for side in [-1.0, 1.0] {
            for i in 0..=N {
                for j in 0..=N {
                    let s = -1.0 + 2.0 * i as f64 / N as f64;
                    let t = -1.0 + 2.0 * j as f64 / N as f64;
                    let mut local = [0.0; 3];
                    local[axis] = side;
                    local[(axis + 1) % 3] = s;
                    local[(axis + 2) % 3] = t;
                    if let Some((u, v)) = cam.project(box_point(obj, local)) {
                        b = [b[0].min(u), b[1].min(v), b[2].max(u), b[3].max(v)];
                    }
                }
            }
        }
    }
    let (w, h) = (cam.size.0 as f64, cam.size.1 as f64);
    let b = [b[0].clamp(0.0, w), b[1].clamp(0.0, h), b[2].clamp(0.0, w), b[3].clamp(0.0, h)];
    (b[2] > b[0] && b[3] > b[1]).then_some(b)
}

/// Whether the ray from the camera through `(u, v)` meets the box, and the
/// slack of that decision in ray-parameter units.
pub fn ray_hits(cam: &OracleCamera, obj: &ObjectRecord, u: f64, v: f64) -> (bool, f64) {
    let m = quat_matrix(obj.pose.orientation);
    let o = mat_t_vec(&m, sub(cam.eye, arr(obj.pose.position)));
    let d = mat_t_vec(&m, cam.ray(u, v));
    let h = arr(obj.half_extents);
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if o[i].abs() > h[i] {
                return (false, o[i].abs() - h[i]);
            }
            continue;
        }
        let a = (-h[i] - o[i]) / d[i];
        let b = (h[i] - o[i]) / d[i];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 >= t0, (t1 - t0).abs())
}

pub struct GeometryCase {
    pub camera: OracleCamera,
    pub model: CameraModel,
    pub object: ObjectRecord,
    pub point: V,
}

pub fn geometry_case(seed: u64) -> GeometryCase {
    let mut rng = SimRng::seed_from_u64(seed);
    let mut r = |lo: f64, hi: f64| rng.uniform(lo, hi);
    let target = [r(-0.5, 0.5), r(-0.5, 0.5), r(0.0, 0.3)];
    let (dist, az, el) = (r(0.8, 3.0), r(-3.1, 3.1), r(-1.2, 1.2));
    let eye = add(target, [dist * el.cos() * az.cos(), dist * el.cos() * az.sin(), dist * el.sin()]);
    let up = [r(-0.3, 0.3), r(-0.3, 0.3), 1.0];
    let focal = r(200.0, 900.0);
    let size = (320 + 32 * (r(0.0, 10.0) as u32), 240 + 24 * (r(0.0, 10.0) as u32));
    let camera = OracleCamera::look_at(eye, target, up, focal, size);
    let model = camera.model("c", target, up);
    let axis = Vec3::new(r(-1.0, 1.0), r(-1.0, 1.0), r(-1.0, 1.0) + 1e-3);
    let object = ObjectRecord {
        object_id: ObjectId(1),
        role: "probe".into(),
        shape: Shape::Box,
        color: Color::Red,
        pose: Pose::new(
            Vec3::new(target[0] + r(-0.3, 0.3), target[1] + r(-0.3, 0.3), target[2] + r(-0.2, 0.2)),
            Quat::from_axis_angle(axis, r(-3.1, 3.1)),
        ),
        half_extents: Vec3::new(r(0.01, 0.12), r(0.01, 0.12), r(0.01, 0.12)),
        graspable: true,
    };
    // Visible-range points at depth >= 0.1 m, or points behind the camera.
    let (w, h) = (size.0 as f64, size.1 as f64);
    let z = if r(0.0, 1.0) < 0.2 { r(-3.0, 0.0) } else { r(0.1, 5.0) };
    let (u, v) = (r(-w, 2.0 * w), r(-h, 2.0 * h));
    let (x, y) = (z.abs() * (u - w / 2.0) / focal, z.abs() * (v - h / 2.0) / focal);
    let mut point = camera.eye;
    for i in 0..3 {
        point[i] += z * camera.forward[i] + x * camera.right[i] + y * camera.down[i];
    }
    GeometryCase { camera, model, object, point }
}

/// Points within 1e-9, boxes within 1 px.
pub fn check_geometry_case(c: &GeometryCase) -> Result<(), String> {
    let p = Vec3::new(c.point[0], c.point[1], c.point[2]);
    let depth = c.camera.depth(c.point);
    match (project_point(&c.model, p), c.camera.project(c.point)) {
        (Some(a), Some(b)) => ensure!(
            (a.0 - b.0).abs() <= 1e-9 && (a.1 - b.1).abs() <= 1e-9,
            "point {:?}: {a:?} vs oracle {b:?}",
            c.point
        ),
        (None, None) => {}
        _ if (depth - 1e-6).abs() < 1e-9 => {}
        (a, b) => return Err(format!("point {:?}: {a:?} vs oracle {b:?}", c.point)),
    }
    let got = project_object_bbox(&c.model, &c.object).map(|b| b.to_array());
    match (got, oracle_bbox(&c.camera, &c.object)) {
        (Some(a), Some(b)) => {
            let err = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            ensure!(err <= 1.0, "bbox {a:?} vs oracle {b:?}");
        }
        (None, None) => {}
        (a, b) => return Err(format!("bbox {a:?} vs oracle {b:?}")),
    }
    Ok(())
}

/// Pixels whose membership differs from the ray-cast silhouette, ignoring
/// pixels whose ray grazes the box.
pub fn mask_mismatches(c: &GeometryCase) -> Result<usize, String> {
    let mask = hull_mask(&c.model, &c.object);
    let (w, h) = c.camera.size;
    let mut bad = 0;
    for y in 0..h {
        for x in 0..w {
            let (hit, slack) = ray_hits(&c.camera, &c.object, x as f64 + 0.5, y as f64 + 0.5);
            if slack > 1e-9 && hit != mask.contains(x, y) {
                bad += 1;
            }
        }
    }
    ensure!(mask.decode().len() == (w * h) as usize, "mask size");
    Ok(bad)
}

pub fn suite_geometry(cases: u64) -> Check {
    let mut behind = 0;
    for seed in 0..cases {
        let c = geometry_case(seed);
        check_geometry_case(&c).map_err(|e| format!("case {seed}: {e}"))?;
        behind += usize::from(c.camera.depth(c.point) <= 0.0);
    }
    ensure!(behind > 0, "no case exercised a point behind the camera");
    Ok(format!("{cases} random cases, {behind} points behind the camera"))
}

pub fn suite_mask(cases: u64) -> Check {
    for seed in 0..cases {
        let c = geometry_case(10_000 + seed);
        let bad = mask_mismatches(&c)?;
        ensure!(bad == 0, "case {seed}: {bad} pixels differ from the ray-cast silhouette");
    }
    Ok(format!("{cases} masks match ray casting"))
}

// ---------------------------------------------------------------------------
// Labels.

pub fn scene_tuples(n: usize) -> Vec<(&'static str, &'static str, u64)> {
    (0..n)
        .map(|i| (TASKS[i % 3], VARIATIONS[(i / 3) % 2], (i / 6) as u64 + 100))
        .collect()
}

pub fn suite_labels(scenes: usize) -> Check {
    let mut ambiguous = 0;
    for (task, var, seed) in scene_tuples(scenes) {
        let tag = format!("{task}/{var}/{seed}");
        let mut exec = ExecState::from_task(task, var, seed, ExecConfig::default()).map_err(|e| e.to_string())?;
        let reg = exec.registry.clone();
        let ids: Vec<_> = exec.scene.objects.iter().map(|o| o.object_id).collect();
        let labels: BTreeSet<_> = ids.iter().filter_map(|id| reg.label_of(*id)).collect();
        ensure!(labels.len() == ids.len(), "{tag}: labels not unique or missing");
        let expected: BTreeSet<u32> = (1..=ids.len() as u32).collect();
        ensure!(labels.iter().map(|l| l.k()).collect::<BTreeSet<_>>() == expected, "{tag}: labels not 1..=n");
        for id in &ids {
            let l = reg.label_of(*id).expect("labeled");
            ensure!(
                resolve(&TargetRef::ByLabel { label: l }, &exec.scene, &reg, None) == Ok(*id),
                "{tag}: {l} does not resolve to {id}"
            );
        }
        let mut by_shape: BTreeMap<Shape, Vec<ObjectId>> = BTreeMap::new();
        for o in &exec.scene.objects {
            by_shape.entry(o.shape).or_default().push(o.object_id);
        }
        for (shape, ids) in by_shape.into_iter().filter(|(_, v)| v.len() > 1) {
            ambiguous += 1;
            let got = resolve(&TargetRef::attrs(None, Some(shape)), &exec.scene, &reg, None);
            ensure!(got == Err(ResolveError::Ambiguous(ids.clone())), "{tag}: {shape} gave {got:?}");
        }
        loop {
            ensure!(exec.registry == reg, "{tag}: labels changed at frame {}", exec.step_count);
            for cam in &exec.scene.cameras {
                for (label, bbox) in overlay(&exec.scene, cam, &exec.registry) {
                    let id = reg.object_of(label).expect("known label");
                    let obj = exec.scene.object(id).expect("object");
                    ensure!(
                        project_object_bbox(cam, obj).as_ref() == Some(&bbox),
                        "{tag}: {label} in {} is not drawn on its own object",
                        cam.camera_id
                    );
                }
            }
            if exec.status.is_terminal() {
                break;
            }
            exec.step().map_err(|e| e.to_string())?;
        }
        ensure!(exec.scene.cameras.len() == 3, "{tag}: expected 3 cameras");
    }
    ensure!(ambiguous > 0, "no ambiguous reference exercised");
    Ok(format!("{scenes} scenes, {ambiguous} ambiguous references"))
}

// ---------------------------------------------------------------------------
// Template banks and augmentation.

/// Role of the object each scripted modulation is about, if any.
pub fn scripted_role(task: &str, kind: ModulationKind) -> Option<&'static str> {
    match (task, kind) {
        (STACK_CUPS, ModulationKind::HL) => Some("second_cup"),
        (BRING_OBJECT, ModulationKind::LL) => Some("other_bottle"),
        (BRING_OBJECT, ModulationKind::HL) => Some("carpet"),
        (PLACE_ON_SHELF, ModulationKind::HL) => Some("second_book"),
        _ => None,
    }
}

pub fn suite_augmentation(seeds: u64) -> Check {
    let mut referential = 0;
    let mut plain = 0;
    for task in TASKS {
        for var in VARIATIONS {
            for seed in 0..seeds {
                let (scene, plan) = instantiate(task, var, seed).map_err(|e| e.to_string())?;
                let reg = LabelRegistry::new("").assign(&scene);
                let ctx = context_object(&plan, &scene);
                let tctx = TemplateContext { task_id: task, scene: &scene, plan: &plan, registry: &reg };
                for kind in [ModulationKind::LL, ModulationKind::HL] {
                    let entry = dataset::scripted_modulation(task, var, seed, kind).map_err(|e| e.to_string())?;
                    let expected = scripted_role(task, kind).map(|r| scene.object_by_role(r).expect("role").object_id);
                    for spec in [Specificity::LS, Specificity::HS] {
                        let bank = render_bank(&tctx, &entry.ir.op, spec).map_err(|e| e.to_string())?;
                        for r in bank {
                            let obs = augment(&r.text, &scene, &reg, ctx, &AugmentConfig::default())
                                .map_err(|e| format!("{:?}: {e}", r.text))?;
                            ensure!(obs.restore() == r.text, "{:?} restores to {:?}", r.text, obs.restore());
                            let tokens = obs.augmented_text.matches(TARGET_TOKEN).count();
                            match expected {
                                Some(id) => {
                                    referential += 1;
                                    ensure!(tokens == 1, "{:?} -> {:?}", r.text, obs.augmented_text);
                                    ensure!(obs.target_object_id == Some(id), "{:?} highlights {:?}", r.text, obs.target_object_id);
                                    let obj = scene.object(id).expect("object");
                                    let visible: Vec<_> = scene
                                        .cameras
                                        .iter()
                                        .filter_map(|c| project_object_bbox(c, obj).map(|b| (c.camera_id.clone(), b)))
                                        .collect();
                                    let got: Vec<_> = obs.highlights.iter().map(|h| (h.camera_id.clone(), h.bbox.clone())).collect();
                                    ensure!(!visible.is_empty() && got == visible, "{:?}: highlights {got:?}", r.text);
                                }
                                None => {
                                    plain += 1;
                                    ensure!(tokens == 0 && !obs.augmented, "{:?} was augmented", r.text);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{referential} referential and {plain} non-referential bank commands"))
}

/// Masks on every camera for the referential scripted commands.
pub fn suite_augmentation_masks() -> Check {
    let config = AugmentConfig { mode: HighlightMode::Mask, single_camera: None };
    let mut n = 0;
    for task in TASKS {
        let (scene, plan) = instantiate(task, "v0", 0).map_err(|e| e.to_string())?;
        let reg = LabelRegistry::new("").assign(&scene);
        let entry = dataset::scripted_modulation(task, "v0", 0, ModulationKind::HL).map_err(|e| e.to_string())?;
        let obs = augment(&entry.ir.raw_text, &scene, &reg, context_object(&plan, &scene), &config).map_err(|e| e.to_string())?;
        for h in &obs.highlights {
            let mask = h.mask.as_ref().ok_or("mask missing")?;
            ensure!(mask.area() > 0, "{task}: empty mask in {}", h.camera_id);
            n += 1;
        }
    }
    Ok(format!("{n} masks"))
}

// ---------------------------------------------------------------------------
// Parser.

fn pick<T: Copy>(rng: &mut SimRng, items: &[T]) -> T {
    items[rng.below(items.len() as u64) as usize]
}

pub fn random_target(rng: &mut SimRng) -> TargetRef {
    match rng.below(4) {
        0 => TargetRef::label(1 + rng.below(199) as u32),
        1 => {
            let color = (rng.below(2) == 0).then(|| pick(rng, &Color::ALL));
            let shape = (color.is_none() || rng.below(2) == 0).then(|| pick(rng, &Shape::ALL));
            TargetRef::attrs(color, shape)
        }
        2 => TargetRef::OtherOf { shape: pick(rng, &Shape::ALL) },
        _ => TargetRef::HeldTarget,
    }
}

pub fn random_op(rng: &mut SimRng) -> ModulationOp {
    match rng.below(7) {
        0 => ModulationOp::SubstituteTarget {
            old: (rng.below(2) == 0).then(|| random_target(rng)),
            new: random_target(rng),
        },
        1 => ModulationOp::SetSpeed {
            speed: match rng.below(4) {
                0 => SpeedSetting::Gentle,
                1 => SpeedSetting::Slow,
                2 => SpeedSetting::Fast,
                _ => SpeedSetting::Scale((1 + rng.below(1000)) as f64 / 1000.0),
            },
        },
        2 => ModulationOp::Reorder {
            target: random_target(rng),
            position: pick(rng, &[Position::First, Position::Last]),
        },
        3 => ModulationOp::SkipSubtask { target: SkipTarget::Target(random_target(rng)) },
        4 => ModulationOp::SkipSubtask {
            target: SkipTarget::Subtask(pick(rng, &["stack_first_cup", "hand_over", "shelve_second_book"]).into()),
        },
        5 => ModulationOp::AddAvoid { target: random_target(rng) },
        _ => ModulationOp::Abort,
    }
}

pub fn suite_parser(instruction_texts: &[(String, ModulationKind, Specificity)], irs: u64) -> Check {
    let mut per_condition: BTreeMap<(ModulationKind, Specificity), usize> = BTreeMap::new();
    for (text, kind, spec) in instruction_texts {
        let ir = parse(text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(classify(&ir) == *kind, "{text:?} classified as {:?}", classify(&ir));
        *per_condition.entry((*kind, *spec)).or_default() += 1;
    }
    ensure!(instruction_texts.len() >= 500, "only {} instructions", instruction_texts.len());
    ensure!(per_condition.len() == 4, "conditions covered: {per_condition:?}");
    let mut rng = SimRng::seed_from_u64(0x5eed);
    for _ in 0..irs {
        let op = random_op(&mut rng);
        let text = render(&op);
        let ir = parse(&text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(ir.op == op, "{text:?} parsed to {:?}", ir.op);
    }
    for (text, kind) in [
        ("be gentle to move it", ModulationKind::LL),
        ("avoid stepping on the carpet", ModulationKind::HL),
        ("stack object #2 first", ModulationKind::HL),
        ("not the brown, but the white one", ModulationKind::LL),
    ] {
        let ir = parse(text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(classify(&ir) == kind, "{text:?} classified as {:?}", classify(&ir));
    }
    Ok(format!("{} instructions parse, {irs} render/parse round trips", instruction_texts.len()))
}

/// Every bank string for every scripted modulation over `seeds`.
pub fn bank_texts(seeds: u64) -> Result<Vec<(String, ModulationKind, Specificity)>, String> {
    let mut out = vec![];
    for task in TASKS {
        for var in VARIATIONS {
            for seed in 0..seeds {
                let (scene, plan) = instantiate(task, var, seed).map_err(|e| e.to_string())?;
                let reg = LabelRegistry::new("").assign(&scene);
                let tctx = TemplateContext { task_id: task, scene: &scene, plan: &plan, registry: &reg };
                for c in Condition::ALL {
                    let entry = dataset::scripted_modulation(task, var, seed, c.modulation_kind).map_err(|e| e.to_string())?;
                    for r in render_bank(&tctx, &entry.ir.op, c.specificity).map_err(|e| e.to_string())? {
                        out.push((r.text, c.modulation_kind, c.specificity));
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scenario and semantics.

pub fn entry(frame: u64, text: &str) -> ScriptEntry {
    ScriptEntry { frame, ir: parse(text).expect("script text parses") }
}

/// Baseline stacks cup #1 then #2; "stack object #2 first" before the
/// first grasp reverses that.
pub fn suite_reorder_scenario() -> Check {
    let started = std::time::Instant::now();
    let order = |script: &[ScriptEntry]| -> Result<(bool, Vec<u32>, Vec<u64>), String> {
        let trace = run_episode(STACK_CUPS, "v0", 7, script).map_err(|e| e.to_string())?;
        let (scene, _) = instantiate(STACK_CUPS, "v0", 7).map_err(|e| e.to_string())?;
        let reg = LabelRegistry::new("").assign(&scene);
        let stacked = trace
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::SubtaskCompleted { object: Some(o), .. } => reg.label_of(*o).map(|l| l.k()),
                _ => None,
            })
            .collect();
        let grasps = trace
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Grasped { .. }))
            .map(|e| e.frame)
            .collect();
        Ok((trace.success(), stacked, grasps))
    };
    let (ok, base, base_grasps) = order(&[])?;
    ensure!(ok, "baseline failed");
    ensure!(base == [1, 2], "baseline stacked {base:?}");
    let inject_at = 3;
    ensure!(base_grasps.first().is_some_and(|g| *g > inject_at), "first grasp at {base_grasps:?}");
    let (ok, modulated, _) = order(&[entry(inject_at, "stack object #2 first")])?;
    ensure!(ok, "modulated run failed");
    ensure!(modulated == [2, 1], "modulated stacked {modulated:?}");
    let elapsed = started.elapsed();
    ensure!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    Ok(format!("baseline #1 then #2, modulated #2 then #1, {:.0} ms", elapsed.as_secs_f64() * 1e3))
}

pub fn random_script(rng: &mut SimRng, task: &str, var: &str, seed: u64) -> Vec<ScriptEntry> {
    let mut script = vec![];
    let mut frame = 0;
    for _ in 0..1 + rng.below(3) {
        frame += rng.below(25);
        let ir = if rng.below(2) == 0 {
            let kind = pick(rng, &[ModulationKind::LL, ModulationKind::HL]);
            dataset::scripted_modulation(task, var, seed, kind).expect("scripted").ir
        } else {
            let op = random_op(rng);
            modsim_core::modlang::ModulationIR::new(op.clone(), render(&op))
        };
        script.push(ScriptEntry { frame, ir });
    }
    script
}

pub fn determinism_tuples(n: usize) -> Vec<(&'static str, &'static str, u64, Vec<ScriptEntry>)> {
    let mut rng = SimRng::seed_from_u64(2024);
    (0..n)
        .map(|_| {
            let task = pick(&mut rng, &TASKS);
            let var = pick(&mut rng, &VARIATIONS);
            let seed = rng.below(1000);
            let script = random_script(&mut rng, task, var, seed);
            (task, var, seed, script)
        })
        .collect()
}

pub fn suite_determinism(n: usize) -> Check {
    for (task, var, seed, script) in determinism_tuples(n) {
        let a = run_episode(task, var, seed, &script).map_err(|e| e.to_string())?;
        let b = run_episode(task, var, seed, &script).map_err(|e| e.to_string())?;
        let bytes = |t: &modsim_core::executor::EpisodeTrace| serde_json::to_vec(t).expect("serializes");
        ensure!(a == b && bytes(&a) == bytes(&b), "{task}/{var}/{seed} differs between runs");
    }
    Ok(format!("{n} tuples bit-identical"))
}

fn distance(a: V, b: V) -> f64 {
    dot(sub(b, a), sub(b, a)).sqrt()
}

fn per_step_displacements(trace: &modsim_core::executor::EpisodeTrace) -> Vec<(u64, f64)> {
    trace
        .frames
        .windows(2)
        .map(|w| (w[1].index, distance(arr(w[0].gripper.position), arr(w[1].gripper.position))))
        .collect()
}

fn point_box_distance(p: V, min: V, max: V) -> f64 {
    let d: Vec<f64> = (0..3).map(|i| (min[i] - p[i]).max(p[i] - max[i]).max(0.0)).collect();
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn oracle_aabb(obj: &ObjectRecord) -> (V, V) {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for i in 0..8 {
        let local = [
            if i & 1 == 0 { -1.0 } else { 1.0 },
            if i & 2 == 0 { -1.0 } else { 1.0 },
            if i & 4 == 0 { -1.0 } else { 1.0 },
        ];
        let p = box_point(obj, local);
        for k in 0..3 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    (min, max)
}

fn applied(trace: &modsim_core::executor::EpisodeTrace) -> usize {
    trace.events.iter().filter(|e| matches!(e.kind, EventKind::ModulationApplied { .. })).count()
}

pub fn suite_modulation_semantics(seeds: u64) -> Check {
    let config = ExecConfig::default();
    let mut cases = 0;
    for var in VARIATIONS {
        for seed in 0..seeds {
            // substitute: the grasp ends within reach of the new object
            let (scene, _) = instantiate(BRING_OBJECT, var, seed).map_err(|e| e.to_string())?;
            let new = scene.object_by_role("other_bottle").expect("role").object_id;
            let old = scene.object_by_role("target_bottle").expect("role").object_id;
            let sub = dataset::scripted_modulation(BRING_OBJECT, var, seed, ModulationKind::LL).map_err(|e| e.to_string())?;
            let trace = run_episode(BRING_OBJECT, var, seed, &[sub]).map_err(|e| e.to_string())?;
            ensure!(applied(&trace) == 1, "substitute not applied ({var}/{seed})");
            let grasps: Vec<_> = trace
                .events
                .iter()
                .filter_map(|e| match e.kind {
                    EventKind::Grasped { object } => Some((e.frame, object)),
                    _ => None,
                })
                .collect();
            ensure!(grasps.iter().all(|(_, o)| *o == new) && !grasps.is_empty(), "grasped {grasps:?}, wanted {new}");
            for (frame, _) in &grasps {
                let f = &trace.frames[*frame as usize];
                let obj = f.objects.iter().find(|o| o.object_id == new).expect("pose");
                let d = distance(arr(f.gripper.position), arr(obj.pose.position));
                ensure!(d <= config.grasp_radius, "grasp endpoint {d} from new object");
            }
            ensure!(
                trace.final_plan.actions[trace.final_plan.cursor.min(trace.final_plan.len())..]
                    .iter()
                    .all(|a| a.kind.target() != Some(old)),
                "old target still pending"
            );

            // set_speed(0.3): every later step is short enough
            for task in TASKS {
                let at = 4 + seed;
                let trace = run_episode(task, var, seed, &[entry(at, "speed 0.3")]).map_err(|e| e.to_string())?;
                ensure!(applied(&trace) == 1 && trace.success(), "{task}: speed run failed");
                let bound = 0.3 * config.v_max * config.dt + 1e-12;
                for (i, d) in per_step_displacements(&trace) {
                    ensure!(i <= at || d <= bound, "{task}/{var}/{seed}: step {i} moved {d}");
                }
            }

            // add_avoid: brute-force clearance scan along the executed path
            let avoid = dataset::scripted_modulation(BRING_OBJECT, var, seed, ModulationKind::HL).map_err(|e| e.to_string())?;
            let at = avoid.frame;
            let trace = run_episode(BRING_OBJECT, var, seed, &[avoid]).map_err(|e| e.to_string())?;
            ensure!(applied(&trace) == 1 && trace.success(), "avoid run failed ({var}/{seed})");
            let carpet = scene.object_by_role("carpet").expect("role");
            let (min, max) = oracle_aabb(carpet);
            let mut closest = f64::INFINITY;
            for w in trace.frames[at as usize..].windows(2) {
                let (a, b) = (arr(w[0].gripper.position), arr(w[1].gripper.position));
                for k in 0..=100 {
                    let t = k as f64 / 100.0;
                    let p = add(a, [t * (b[0] - a[0]), t * (b[1] - a[1]), t * (b[2] - a[2])]);
                    closest = closest.min(point_box_distance(p, min, max));
                }
            }
            ensure!(closest >= 0.15, "{var}/{seed}: path came within {closest} of the carpet");
            cases += 1;
        }
    }

    // rejected modulations leave the plan untouched
    let mut rejections = 0;
    for (task, frame, text) in [
        (STACK_CUPS, 3, "use object #9 instead"),
        (STACK_CUPS, 3, "stack the cup first"),
        (STACK_CUPS, 30, "stack object #1 first"),
        (STACK_CUPS, 3, "skip fly_away"),
        (BRING_OBJECT, 3, "avoid the plate"),
        (PLACE_ON_SHELF, 60, "skip object #1"),
    ] {
        let ir = parse(text).map_err(|e| format!("{text:?}: {e}"))?;
        let mut exec = ExecState::from_task(task, "v0", 1, config).map_err(|e| e.to_string())?;
        while exec.step_count < frame && !exec.status.is_terminal() {
            exec.step().map_err(|e| e.to_string())?;
        }
        let before = exec.clone();
        let ev = exec.inject(ir);
        ensure!(matches!(ev.kind, EventKind::ModulationRejected { .. }), "{text:?} was applied");
        ensure!(exec.plan == before.plan && exec.scene == before.scene, "{text:?} changed the plan");
        rejections += 1;
    }
    Ok(format!("{cases} seeds of substitute/speed/avoid, {rejections} rejections leave plans equal"))
}

// ---------------------------------------------------------------------------
// Dataset.

pub fn suite_dataset(out: &std::path::Path) -> Check {
    let started = std::time::Instant::now();
    let config = DatasetConfig::default();
    let ds = dataset::generate(&config).map_err(|e| e.to_string())?;
    dataset::export(&ds, out).map_err(|e| e.to_string())?;
    let back = dataset::load(out).map_err(|e| e.to_string())?;
    let per_kind = config.tasks.len() * config.variations.len() * config.seeds.len();
    let want = per_kind * config.instructions_per_condition;
    let counts = back.condition_counts();
    for c in Condition::ALL {
        ensure!(counts.get(&c) == Some(&want), "{}: {:?} instead of {want}", c.name(), counts.get(&c));
    }
    let lines = std::fs::read_to_string(out.join(dataset::INSTRUCTIONS_FILE)).map_err(|e| e.to_string())?;
    ensure!(lines.lines().count() == 4 * want, "instructions.jsonl has {} lines", lines.lines().count());
    let episodes: BTreeMap<_, _> = back.episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
    let mut instances = BTreeMap::new();
    for inst in &back.instances {
        let base = episodes[inst.baseline_episode_id.as_str()];
        let modu = episodes[inst.modulated_episode_id.as_str()];
        ensure!(base.modulation_script.is_empty(), "{}: baseline scripted", inst.instance_id);
        let first = *inst.modulation_points.first().ok_or("no modulation point")? as usize;
        ensure!(base.frames[..first] == modu.frames[..first], "{}: prefix differs", inst.instance_id);
        ensure!(modu.frames.len() > first && base.frames.len() > first, "{}: too short", inst.instance_id);
        instances.insert(inst.instance_id.as_str(), inst);
    }
    for ins in &back.instructions {
        let inst = instances[ins.instance_id.as_str()];
        let ir = parse(&ins.text).map_err(|e| format!("{:?}: {e}", ins.text))?;
        ensure!(ir.same_structure(&inst.script[ins.script_index].ir), "{:?} differs from the script", ins.text);
        ensure!(classify(&ir) == ins.modulation_kind, "{:?} misclassified", ins.text);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed.as_secs() < 120, "took {elapsed:?}");
    Ok(format!(
        "{} instances, {} instructions ({want} per condition), {:.1} s",
        back.instances.len(),
        back.instructions.len(),
        elapsed.as_secs_f64()
    ))
}
