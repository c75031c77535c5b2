//! Episode recording, baseline/modulated pairing, instruction generation
//! and JSONL export.
//!
//! Every record carries `schema_version`. Files:
//!
//! - `episodes.jsonl`: one [`EpisodeRecord`] per line
//! - `instances.jsonl`: one [`ModulationInstance`] per line
//! - `instructions.jsonl`: one [`Instruction`] per line
//! - `manifest.jsonl`: one [`ManifestEntry`] per line

mod templates;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use templates::{render_bank, Rendered, Specificity, TemplateContext};

use crate::augment::{augment, AugmentConfig, AugmentedObservation};
use crate::executor::{
    run_to_completion_with, EpisodeTrace, Event, EventKind, ExecConfig, ExecError, ExecState, ExecStatus, Frame,
    ScriptEntry,
};
use crate::labels::{LabelRegistry, TargetRef};
use crate::modlang::{parse, render, ModulationIR, ModulationKind, ModulationOp, Position, SkipTarget, SpeedSetting};
use crate::modulator::context_object;
use crate::rng::SimRng;
use crate::scene::Shape;
use crate::tasks::{instantiate, list_tasks, TaskError, BRING_OBJECT, PLACE_ON_SHELF, STACK_CUPS};

pub const SCHEMA_VERSION: u32 = 1;

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const INSTRUCTIONS_FILE: &str = "instructions.jsonl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const DATASET_FILES: [&str; 4] = [EPISODES_FILE, INSTANCES_FILE, INSTRUCTIONS_FILE, MANIFEST_FILE];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no templates for {op} in {task}")]
    NoTemplates { task: String, op: String },
    #[error("script must not be empty")]
    EmptyScript,
    #[error("modulation rejected in {episode_id}: {detail}")]
    Rejected { episode_id: String, detail: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One cell of (LL|HL) x (LS|HS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub modulation_kind: ModulationKind,
    pub specificity: Specificity,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition { modulation_kind: ModulationKind::LL, specificity: Specificity::LS },
        Condition { modulation_kind: ModulationKind::LL, specificity: Specificity::HS },
        Condition { modulation_kind: ModulationKind::HL, specificity: Specificity::LS },
        Condition { modulation_kind: ModulationKind::HL, specificity: Specificity::HS },
    ];

    pub fn name(self) -> String {
        format!("{:?}-{:?}", self.modulation_kind, self.specificity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub episode_id: String,
    pub task_id: String,
    pub variation_id: String,
    pub seed: u64,
    pub modulation_script: Vec<ScriptEntry>,
    pub frames: Vec<Frame>,
    pub events: Vec<Event>,
    pub status: ExecStatus,
    pub success: bool,
    #[serde(default)]
    pub augmented_observations: Vec<AugmentedObservation>,
}

impl EpisodeRecord {
    pub fn modulation_marks(&self) -> Vec<u64> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::ModulationApplied { mark, .. } => Some(mark.frame_index),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationInstance {
    pub schema_version: u32,
    pub instance_id: String,
    pub task_id: String,
    pub variation_id: String,
    pub seed: u64,
    pub baseline_episode_id: String,
    pub modulated_episode_id: String,
    /// One frame index per script entry.
    pub modulation_points: Vec<u64>,
    pub script: Vec<ScriptEntry>,
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub schema_version: u32,
    pub instruction_id: String,
    pub instance_id: String,
    /// Index into the instance's script of the modulation being described.
    pub script_index: usize,
    pub text: String,
    pub specificity: Specificity,
    pub modulation_kind: ModulationKind,
    pub template_id: String,
    /// 1 to 5; filled in by human raters only.
    pub difficulty_rating: Option<u8>,
    pub could_not_generate_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub schema_version: u32,
    pub instance_id: String,
    pub task_id: String,
    pub baseline_episode_id: String,
    pub modulated_episode_id: String,
    pub modulation_points: Vec<u64>,
    pub conditions: Vec<Condition>,
}

impl From<&ModulationInstance> for ManifestEntry {
    fn from(i: &ModulationInstance) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            instance_id: i.instance_id.clone(),
            task_id: i.task_id.clone(),
            baseline_episode_id: i.baseline_episode_id.clone(),
            modulated_episode_id: i.modulated_episode_id.clone(),
            modulation_points: i.modulation_points.clone(),
            conditions: i.conditions.clone(),
        }
    }
}

pub fn episode_id(task_id: &str, variation_id: &str, seed: u64, suffix: &str) -> String {
    format!("{task_id}.{variation_id}.s{seed}.{suffix}")
}

pub fn record(trace: EpisodeTrace, episode_id: impl Into<String>) -> EpisodeRecord {
    let success = trace.success();
    EpisodeRecord {
        schema_version: SCHEMA_VERSION,
        episode_id: episode_id.into(),
        task_id: trace.task_id,
        variation_id: trace.variation_id,
        seed: trace.seed,
        modulation_script: trace.script,
        frames: trace.frames,
        events: trace.events,
        status: trace.status,
        success,
        augmented_observations: Vec::new(),
    }
}

/// Runs an episode and records it, attaching an augmented observation for
/// every scripted command that references an object.
pub fn run_recorded(
    task_id: &str,
    variation_id: &str,
    seed: u64,
    script: &[ScriptEntry],
    episode_id: &str,
    augment_config: &AugmentConfig,
) -> Result<EpisodeRecord, DatasetError> {
    let exec = ExecState::from_task(task_id, variation_id, seed, ExecConfig::default())?;
    let mut observations = Vec::new();
    let trace = run_to_completion_with(exec, (task_id, variation_id, seed), script, |state, entry| {
        let ctx = context_object(&state.plan, &state.scene);
        if let Ok(obs) = augment(&entry.ir.raw_text, &state.scene, &state.registry, ctx, augment_config) {
            if obs.augmented {
                observations.push(obs);
            }
        }
    })?;
    let mut rec = record(trace, episode_id);
    rec.augmented_observations = observations;
    Ok(rec)
}

/// Re-executes a recorded episode from its task, seed and script.
pub fn replay(rec: &EpisodeRecord) -> Result<EpisodeRecord, DatasetError> {
    run_recorded(
        &rec.task_id,
        &rec.variation_id,
        rec.seed,
        &rec.modulation_script,
        &rec.episode_id,
        &AugmentConfig::default(),
    )
}

/// True when replaying reproduces the recorded frames and events exactly.
pub fn replay_matches(rec: &EpisodeRecord) -> Result<bool, DatasetError> {
    let again = replay(rec)?;
    Ok(again.frames == rec.frames && again.events == rec.events && again.status == rec.status)
}

fn kinds_of(script: &[ScriptEntry]) -> Vec<ModulationKind> {
    let mut kinds: Vec<_> = script.iter().map(|e| e.ir.kind).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

/// Runs the baseline and modulated episodes of one instance.
pub fn make_instance(
    task_id: &str,
    variation_id: &str,
    seed: u64,
    script: &[ScriptEntry],
    augment_config: &AugmentConfig,
) -> Result<(ModulationInstance, EpisodeRecord, EpisodeRecord), DatasetError> {
    if script.is_empty() {
        return Err(DatasetError::EmptyScript);
    }
    let kinds = kinds_of(script);
    let suffix: Vec<_> = kinds.iter().map(|k| format!("{k:?}").to_lowercase()).collect();
    let instance_id = episode_id(task_id, variation_id, seed, &suffix.join("_"));
    let baseline_id = episode_id(task_id, variation_id, seed, "baseline");
    let baseline = run_recorded(task_id, variation_id, seed, &[], &baseline_id, augment_config)?;
    let modulated = run_recorded(task_id, variation_id, seed, script, &instance_id, augment_config)?;
    if let Some(e) = modulated.events.iter().find(|e| matches!(e.kind, EventKind::ModulationRejected { .. })) {
        return Err(DatasetError::Rejected {
            episode_id: instance_id,
            detail: serde_json::to_string(&e.kind)?,
        });
    }
    let conditions = Condition::ALL
        .into_iter()
        .filter(|c| kinds.contains(&c.modulation_kind))
        .collect();
    let instance = ModulationInstance {
        schema_version: SCHEMA_VERSION,
        instance_id,
        task_id: task_id.to_string(),
        variation_id: variation_id.to_string(),
        seed,
        baseline_episode_id: baseline.episode_id.clone(),
        modulated_episode_id: modulated.episode_id.clone(),
        modulation_points: modulated.modulation_marks(),
        script: script.to_vec(),
        conditions,
    };
    Ok((instance, baseline, modulated))
}

/// The dataset's single-entry script for (task, kind), injected at a
/// seeded frame in 2..=5.
pub fn scripted_modulation(
    task_id: &str,
    variation_id: &str,
    seed: u64,
    kind: ModulationKind,
) -> Result<ScriptEntry, DatasetError> {
    let (scene, _) = instantiate(task_id, variation_id, seed)?;
    let reg = LabelRegistry::new("").assign(&scene);
    let salt = match kind {
        ModulationKind::LL => 0x4c4c,
        ModulationKind::HL => 0x484c,
    };
    let mut rng = SimRng::seed_from_u64(seed ^ (salt << 32));
    let frame = 2 + rng.below(4);
    let color_of = |role: &str| scene.object_by_role(role).map(|o| o.color).expect("task role");
    let op = match (task_id, kind) {
        (STACK_CUPS, ModulationKind::HL) => {
            let cup = scene.object_by_role("second_cup").expect("task role").object_id;
            let label = reg.label_of(cup).expect("labeled");
            ModulationOp::Reorder {
                target: TargetRef::ByLabel { label },
                position: Position::First,
            }
        }
        (STACK_CUPS, ModulationKind::LL) => ModulationOp::SetSpeed { speed: SpeedSetting::Gentle },
        (BRING_OBJECT, ModulationKind::LL) => ModulationOp::SubstituteTarget {
            old: Some(TargetRef::attrs(Some(color_of("target_bottle")), None)),
            new: TargetRef::attrs(Some(color_of("other_bottle")), None),
        },
        (BRING_OBJECT, ModulationKind::HL) => ModulationOp::AddAvoid {
            target: TargetRef::attrs(None, Some(Shape::Carpet)),
        },
        (PLACE_ON_SHELF, ModulationKind::LL) => ModulationOp::SetSpeed { speed: SpeedSetting::Slow },
        (PLACE_ON_SHELF, ModulationKind::HL) => ModulationOp::SkipSubtask {
            target: SkipTarget::Target(TargetRef::attrs(Some(color_of("second_book")), Some(Shape::Book))),
        },
        (other, _) => return Err(TaskError::UnknownTask(other.to_string()).into()),
    };
    let text = render(&op);
    Ok(ScriptEntry {
        frame,
        ir: ModulationIR::new(op, text),
    })
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// `n` instructions for one condition, drawn without repetition from a
/// seeded shuffle of the bank and cycling once the bank is exhausted.
pub fn gen_instructions(
    instance: &ModulationInstance,
    condition: Condition,
    n: usize,
) -> Result<Vec<Instruction>, DatasetError> {
    let Some(script_index) = instance.script.iter().position(|e| e.ir.kind == condition.modulation_kind) else {
        return Err(DatasetError::NoTemplates {
            task: instance.task_id.clone(),
            op: format!("{:?} modulation", condition.modulation_kind),
        });
    };
    let ir = &instance.script[script_index].ir;
    let (scene, plan) = instantiate(&instance.task_id, &instance.variation_id, instance.seed)?;
    let registry = LabelRegistry::new("").assign(&scene);
    let ctx = TemplateContext {
        task_id: &instance.task_id,
        scene: &scene,
        plan: &plan,
        registry: &registry,
    };
    let mut bank = render_bank(&ctx, &ir.op, condition.specificity)?;
    let cond_index = Condition::ALL.iter().position(|c| *c == condition).expect("known condition") as u64;
    let mut rng = SimRng::seed_from_u64(fnv1a(&instance.instance_id) ^ cond_index);
    rng.shuffle(&mut bank);
    Ok((0..n)
        .map(|i| {
            let r = &bank[i % bank.len()];
            Instruction {
                schema_version: SCHEMA_VERSION,
                instruction_id: format!("{}.{}.{i:03}", instance.instance_id, condition.name()),
                instance_id: instance.instance_id.clone(),
                script_index,
                text: r.text.clone(),
                specificity: condition.specificity,
                modulation_kind: condition.modulation_kind,
                template_id: r.template_id.clone(),
                difficulty_rating: None,
                could_not_generate_reason: None,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub tasks: Vec<String>,
    pub variations: Vec<String>,
    pub seeds: Vec<u64>,
    pub kinds: Vec<ModulationKind>,
    /// Instructions per (instance, condition) cell.
    pub instructions_per_condition: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            tasks: list_tasks().into_iter().map(|t| t.task_id).collect(),
            variations: vec!["v0".into(), "v1".into()],
            seeds: (0..5).collect(),
            kinds: vec![ModulationKind::LL, ModulationKind::HL],
            instructions_per_condition: 30,
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub episodes: Vec<EpisodeRecord>,
    pub instances: Vec<ModulationInstance>,
    pub instructions: Vec<Instruction>,
}

impl Dataset {
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.instances.iter().map(ManifestEntry::from).collect()
    }

    /// Instruction count per condition.
    pub fn condition_counts(&self) -> BTreeMap<Condition, usize> {
        let mut out = BTreeMap::new();
        for i in &self.instructions {
            let c = Condition {
                modulation_kind: i.modulation_kind,
                specificity: i.specificity,
            };
            *out.entry(c).or_default() += 1;
        }
        out
    }
}

pub fn generate(config: &DatasetConfig) -> Result<Dataset, DatasetError> {
    let mut episodes: BTreeMap<String, EpisodeRecord> = BTreeMap::new();
    let mut ds = Dataset::default();
    for task in &config.tasks {
        for var in &config.variations {
            for &seed in &config.seeds {
                for &kind in &config.kinds {
                    let script = vec![scripted_modulation(task, var, seed, kind)?];
                    let (instance, baseline, modulated) = make_instance(task, var, seed, &script, &config.augment)?;
                    for c in &instance.conditions {
                        ds.instructions.extend(gen_instructions(&instance, *c, config.instructions_per_condition)?);
                    }
                    episodes.entry(baseline.episode_id.clone()).or_insert(baseline);
                    episodes.insert(modulated.episode_id.clone(), modulated);
                    ds.instances.push(instance);
                }
            }
        }
    }
    ds.episodes = episodes.into_values().collect();
    Ok(ds)
}

/// Checks the cross-file invariants that an export must satisfy.
pub fn validate(ds: &Dataset) -> Result<(), DatasetError> {
    let fail = |msg: String| Err(DatasetError::Validation(msg));
    let episodes: BTreeMap<&str, &EpisodeRecord> = ds.episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect();
    if episodes.len() != ds.episodes.len() {
        return fail("duplicate episode ids".into());
    }
    let versions = ds
        .episodes
        .iter()
        .map(|e| e.schema_version)
        .chain(ds.instances.iter().map(|i| i.schema_version))
        .chain(ds.instructions.iter().map(|i| i.schema_version));
    if let Some(v) = versions.into_iter().find(|v| *v != SCHEMA_VERSION) {
        return fail(format!("unsupported schema_version {v}"));
    }
    let mut instances = BTreeMap::new();
    for inst in &ds.instances {
        let (Some(base), Some(modu)) = (
            episodes.get(inst.baseline_episode_id.as_str()),
            episodes.get(inst.modulated_episode_id.as_str()),
        ) else {
            return fail(format!("{}: missing episode", inst.instance_id));
        };
        let key = |e: &EpisodeRecord| (e.task_id.clone(), e.variation_id.clone(), e.seed);
        if key(base) != key(modu) || key(base) != (inst.task_id.clone(), inst.variation_id.clone(), inst.seed) {
            return fail(format!("{}: episodes do not share task, variation and seed", inst.instance_id));
        }
        if !base.modulation_script.is_empty() {
            return fail(format!("{}: baseline has a script", inst.instance_id));
        }
        if inst.modulation_points.len() != inst.script.len() {
            return fail(format!("{}: one modulation point per script entry", inst.instance_id));
        }
        let first = inst.modulation_points.first().copied().unwrap_or(0) as usize;
        if base.frames.len() < first || modu.frames.len() < first || base.frames[..first] != modu.frames[..first] {
            return fail(format!("{}: frames differ before the first modulation point", inst.instance_id));
        }
        if instances.insert(inst.instance_id.as_str(), inst).is_some() {
            return fail(format!("duplicate instance {}", inst.instance_id));
        }
    }
    for ins in &ds.instructions {
        let Some(inst) = instances.get(ins.instance_id.as_str()) else {
            return fail(format!("{}: unknown instance", ins.instruction_id));
        };
        let Some(entry) = inst.script.get(ins.script_index) else {
            return fail(format!("{}: script index out of range", ins.instruction_id));
        };
        match parse(&ins.text) {
            Ok(ir) if ir.same_structure(&entry.ir) && ir.kind == ins.modulation_kind => {}
            Ok(_) => return fail(format!("{}: {:?} does not match the scripted command", ins.instruction_id, ins.text)),
            Err(e) => return fail(format!("{}: {:?} does not parse: {e}", ins.instruction_id, ins.text)),
        }
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<(), DatasetError> {
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        for row in rows {
            serde_json::to_writer(&mut w, row)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

/// Validates and writes the four JSONL files into `out_dir`.
pub fn export(ds: &Dataset, out_dir: &Path) -> Result<(), DatasetError> {
    validate(ds)?;
    fs::create_dir_all(out_dir)?;
    write_jsonl(out_dir, EPISODES_FILE, &ds.episodes)?;
    write_jsonl(out_dir, INSTANCES_FILE, &ds.instances)?;
    write_jsonl(out_dir, INSTRUCTIONS_FILE, &ds.instructions)?;
    write_jsonl(out_dir, MANIFEST_FILE, &ds.manifest())?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let f = io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn load(dir: &Path) -> Result<Dataset, DatasetError> {
    Ok(Dataset {
        episodes: read_jsonl(&dir.join(EPISODES_FILE))?,
        instances: read_jsonl(&dir.join(INSTANCES_FILE))?,
        instructions: read_jsonl(&dir.join(INSTRUCTIONS_FILE))?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Seed-based 80/10/10 partition.
pub fn split_of(seed: u64) -> Split {
    match SimRng::seed_from_u64(seed).below(10) {
        0 => Split::Test,
        1 => Split::Val,
        _ => Split::Train,
    }
}
