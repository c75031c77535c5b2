use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use modsim_core::augment::AugmentConfig;
use modsim_core::dataset::{self, Condition, DatasetConfig, EpisodeRecord};
use modsim_core::executor::{Event, EventKind, ScriptEntry};
use modsim_core::modlang::parse;
use modsim_core::tasks::instantiate;
use modsim_core::LabelRegistry;
use modsim_service::ServiceConfig;
use serde::Deserialize;

/// Scripted runs, dataset generation, replay and the live session server
/// for the modulation simulator.
#[derive(Parser)]
#[command(name = "modsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode. Exits 0 if the task succeeds, 2 if it fails, 1 on error.
    Run {
        /// Task id, e.g. stack_cups.
        #[arg(long)]
        task: String,
        #[arg(long, default_value = "v0")]
        variation: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Modulation script: a JSON file or inline JSON, as
        /// `[{"frame": 3, "text": "stack object #2 first"}]`, or inline
        /// `FRAME:TEXT` entries separated by `;`.
        #[arg(long)]
        script: Option<String>,
        /// Write the episode record here as one JSON line.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the log immediately instead of at simulated real time.
        #[arg(long)]
        turbo: bool,
    },
    /// Generate the dataset and write the four JSONL files.
    GenDataset {
        /// Dataset config as JSON; defaults cover every task with v0 and v1,
        /// seeds 0..5 and 30 instructions per condition.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Added to every configured episode seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-execute recorded episodes. With --verify, exits 0 only if every
    /// frame and event is reproduced bit for bit.
    Replay {
        /// JSONL file of episode records.
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        verify: bool,
    },
    /// Run the session server until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Service config as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
struct TextEntry {
    frame: u64,
    text: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
}

fn load_script(arg: &str) -> Result<Vec<ScriptEntry>> {
    let path = Path::new(arg);
    let raw = if path.is_file() {
        std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?
    } else {
        arg.to_string()
    };
    let entries: Vec<TextEntry> = if raw.trim_start().starts_with('[') {
        serde_json::from_str(&raw).context("parsing script")?
    } else {
        raw.split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                let (frame, text) = s.split_once(':').context("script entries are FRAME:TEXT")?;
                Ok(TextEntry {
                    frame: frame.trim().parse().context("script frame")?,
                    text: text.trim().to_string(),
                })
            })
            .collect::<Result<_>>()?
    };
    entries
        .into_iter()
        .map(|e| {
            let ir = parse(&e.text).with_context(|| format!("script command {:?}", e.text))?;
            Ok(ScriptEntry { frame: e.frame, ir })
        })
        .collect()
}

fn describe(e: &Event, reg: &LabelRegistry) -> String {
    let label = |id| reg.label_of(id).map_or_else(|| format!("id {id}"), |l| l.to_string());
    let what = match &e.kind {
        EventKind::ActionStarted { action, .. } => format!("start     {action}"),
        EventKind::ActionCompleted { action, .. } => format!("complete  {action}"),
        EventKind::SubtaskCompleted { subtask, object } => match object {
            Some(o) => format!("subtask   {subtask} ({})", label(*o)),
            None => format!("subtask   {subtask}"),
        },
        EventKind::ModulationApplied { ir, mark } => {
            format!("modulate  {:?} applied at action {}", ir.raw_text, mark.cursor)
        }
        EventKind::ModulationRejected { ir, reason, detail } => {
            format!("modulate  {:?} rejected: {reason} ({detail})", ir.raw_text)
        }
        EventKind::Grasped { object } => format!("grasp     {}", label(*object)),
        EventKind::Released { object } => format!("release   {}", label(*object)),
        EventKind::TaskDone { success } => format!("done      success={success}"),
        EventKind::TaskFailed { reason } => format!("failed    {reason}"),
    };
    format!("{:>6} {:>8.2}s  {what}", e.frame, e.t)
}

fn print_log(rec: &EpisodeRecord, paced: bool) -> Result<()> {
    let (scene, _) = instantiate(&rec.task_id, &rec.variation_id, rec.seed)?;
    let reg = LabelRegistry::new("").assign(&scene);
    let started = std::time::Instant::now();
    for e in &rec.events {
        if paced {
            let due = Duration::from_secs_f64(e.t);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        println!("{}", describe(e, &reg));
    }
    Ok(())
}

fn run(
    task: &str,
    variation: &str,
    seed: u64,
    script: Option<&str>,
    out: Option<&Path>,
    turbo: bool,
) -> Result<ExitCode> {
    let script = script.map(load_script).transpose()?.unwrap_or_default();
    let id = dataset::episode_id(task, variation, seed, if script.is_empty() { "baseline" } else { "run" });
    let rec = dataset::run_recorded(task, variation, seed, &script, &id, &AugmentConfig::default())?;
    print_log(&rec, !turbo)?;
    println!("{} frames, status {:?}", rec.frames.len(), rec.status);
    if let Some(out) = out {
        let mut line = serde_json::to_string(&rec)?;
        line.push('\n');
        std::fs::write(out, line).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(if rec.success { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn gen_dataset(config: Option<&Path>, out: &Path, seed: u64) -> Result<ExitCode> {
    let mut config: DatasetConfig = match config {
        Some(p) => read_json(p)?,
        None => DatasetConfig::default(),
    };
    for s in &mut config.seeds {
        *s = s.checked_add(seed).context("seed overflow")?;
    }
    let ds = dataset::generate(&config)?;
    dataset::export(&ds, out)?;
    println!("{} episodes, {} instances, {} instructions", ds.episodes.len(), ds.instances.len(), ds.instructions.len());
    println!("{:<10} {:>8}", "condition", "count");
    let counts = ds.condition_counts();
    for c in Condition::ALL {
        println!("{:<10} {:>8}", c.name(), counts.get(&c).copied().unwrap_or(0));
    }
    Ok(ExitCode::SUCCESS)
}

fn replay(path: &Path, verify: bool) -> Result<ExitCode> {
    let records: Vec<EpisodeRecord> = dataset::read_jsonl(path)?;
    if records.is_empty() {
        bail!("{} holds no episodes", path.display());
    }
    let mut mismatched = 0;
    for rec in &records {
        let again = dataset::replay(rec)?;
        let same = again.frames == rec.frames && again.events == rec.events && again.status == rec.status;
        if verify {
            println!("{} {}", if same { "identical" } else { "MISMATCH " }, rec.episode_id);
        } else {
            println!("{}", rec.episode_id);
            print_log(&again, false)?;
        }
        mismatched += usize::from(!same);
    }
    if verify && mismatched > 0 {
        eprintln!("{mismatched} of {} episodes differ", records.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn serve(bind: &str, config: Option<&Path>) -> Result<ExitCode> {
    let config: ServiceConfig = match config {
        Some(p) => read_json(p)?,
        None => ServiceConfig::default(),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let server = modsim_service::Server::bind(bind, config).await?;
        eprintln!("listening on {}", server.local_addr()?);
        if let Some(tcp) = server.tcp_addr() {
            eprintln!("tcp sessions on {tcp}");
        }
        server
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            task,
            variation,
            seed,
            script,
            out,
            turbo,
        } => run(task, variation, *seed, script.as_deref(), out.as_deref(), *turbo),
        Command::GenDataset { config, out, seed } => gen_dataset(config.as_deref(), out, *seed),
        Command::Replay { episode, verify } => replay(episode, *verify),
        Command::Serve { bind, config } => serve(bind, config.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
