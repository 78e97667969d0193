//! Batch front end: every stage reads scene directories under `--input`
//! and writes per-scene results under `--output`.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use stages::Ctx;

#[derive(Parser)]
#[command(name = "vidscene", version, about = "Posed video to 3D scene-understanding data")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Dataset root (one subdirectory per scene) or a single scene directory.
    #[arg(long, default_value = ".")]
    input: PathBuf,
    /// Output root; results go to one subdirectory per scene.
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// JSON configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fuse depth into a mesh and a filtered point cloud.
    Reconstruct(Common),
    /// Lift 2D masks into 3D instances.
    Segment(Common),
    /// Build scene graphs from instances.
    Scenegraph(Common),
    /// Generate spatial QA pairs.
    GenVqa(Common),
    /// Generate navigation episodes from camera tours.
    GenVln(Common),
    /// Score navigation predictions (JSONL of episode_id, executed_path).
    EvalVln {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Score QA predictions (JSONL of id, prediction).
    EvalVqa {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Score 3D boxes against gt_detections.jsonl; defaults to the segment output.
    EvalDet {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Write synthetic scenes with exact ground truth.
    Synth(Common),
}

fn context(c: &Common) -> Result<Ctx> {
    Ok(Ctx {
        input: c.input.clone(),
        output: c.output.clone(),
        config: PipelineConfig::load(c.config.as_deref(), c.seed)?,
    })
}

fn dispatch(cmd: Cmd) -> Result<()> {
    let common = match &cmd {
        Cmd::Reconstruct(c) | Cmd::Segment(c) | Cmd::Scenegraph(c) | Cmd::GenVqa(c) | Cmd::GenVln(c) | Cmd::Synth(c) => c,
        Cmd::EvalVln { common, .. } | Cmd::EvalVqa { common, .. } | Cmd::EvalDet { common, .. } => common,
    }
    .clone();
    let ctx = context(&common)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(common.jobs).build().context("starting worker pool")?;
    pool.install(|| match cmd {
        Cmd::Reconstruct(_) => stages::cmd_reconstruct(&ctx),
        Cmd::Segment(_) => stages::cmd_segment(&ctx),
        Cmd::Scenegraph(_) => stages::cmd_scenegraph(&ctx),
        Cmd::GenVqa(_) => stages::cmd_gen_vqa(&ctx),
        Cmd::GenVln(_) => stages::cmd_gen_vln(&ctx),
        Cmd::EvalVln { predictions, .. } => stages::cmd_eval_vln(&ctx, &predictions),
        Cmd::EvalVqa { predictions, .. } => stages::cmd_eval_vqa(&ctx, &predictions),
        Cmd::EvalDet { predictions, .. } => stages::cmd_eval_det(&ctx, predictions.as_deref()),
        Cmd::Synth(_) => stages::cmd_synth(&ctx),
    })
}

/// Machine-readable failure record for standard error.
fn error_record(err: &anyhow::Error) -> serde_json::Value {
    let inner = err.chain().find_map(|e| e.downcast_ref::<vidscene::Error>());
    let path = inner.and_then(|e| e.path()).map(|p| p.display().to_string());
    serde_json::json!({
        "error": inner.map(|e| e.kind()).unwrap_or("runtime"),
        "message": format!("{err:#}"),
        "path": path,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_record(&err));
            ExitCode::FAILURE
        }
    }
}
