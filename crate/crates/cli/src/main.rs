mod bench;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcc_core::data::dataset::family_library;
use pcc_core::data::{generate_dataset, generate_sequence, load_sequence, read_cloud, write_cloud, Dataset, Family, Split};
use pcc_core::training::{eval_csv, evaluate, evaluate_sequence, load_model, train_dataset, EvalRow, EvalSource};
use pcc_core::{pipeline, Error, Result};

use config::RunConfig;

/// Two-phase point cloud completion.
#[derive(Parser)]
#[command(name = "pcc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration with `gen`, `pipeline` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set pipeline.tau=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset (or, with --sequence, one scan sequence).
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Write an orbiting scan sequence of this family instead of a dataset.
        #[arg(long, value_name = "FAMILY")]
        sequence: Option<String>,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 10.0)]
        step_deg: f64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train all networks on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the state saved in --out.
        #[arg(long)]
        resume: bool,
        /// Ablation switch to turn on. Repeatable.
        #[arg(long)]
        ablation: Vec<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Complete one point cloud file (.ply, otherwise XYZ).
    Complete {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write the refined sparse cloud instead of the dense one.
        #[arg(long)]
        no_upsample: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint on a dataset split or a scan sequence.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Frame-sequence directory (from `gen --sequence`).
        #[arg(long)]
        sequence: Option<PathBuf>,
        /// Sequence metrics: any of fidelity, mmd, consistency.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// Score the ground truth itself instead of a model.
        #[arg(long)]
        gt_passthrough: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Time spatial kernels against brute force.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1000, 4000, 16000])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        queries: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) | Error::State(_) => 4,
        _ => 3,
    }
}

/// Pipeline configuration stored next to a checkpoint by `train`, if any.
fn run_config_near(checkpoint: &Path) -> Option<serde_json::Value> {
    let meta = checkpoint.parent()?.join("run.json");
    let text = std::fs::read_to_string(meta).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("pipeline").cloned()
}

/// Run config for commands that use a checkpoint: the checkpoint's own
/// pipeline settings unless a config file is given, then overrides.
fn load_for_checkpoint(checkpoint: Option<&Path>, args: &ConfigArgs) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    if args.config.is_none() {
        if let Some(p) = checkpoint.and_then(run_config_near) {
            overrides.push(format!("pipeline={p}"));
        }
    }
    overrides.extend(args.set.iter().cloned());
    RunConfig::load(args.config.as_deref(), &overrides)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen {
            out,
            sequence,
            frames,
            step_deg,
            cfg,
        } => {
            let rc = RunConfig::load(cfg.config.as_deref(), &cfg.set)?;
            if let Some(fam) = sequence {
                let family: Family = fam.parse()?;
                let meta = generate_sequence(&out, family, frames, step_deg, &rc.gen, rc.gen.seed)?;
                println!("sequence: {} frames of {} in {}", meta.frames, meta.family, out.display());
            } else {
                let m = generate_dataset(&out, &rc.gen)?;
                println!("samples: {}", m.samples.len());
                println!("hash: {}", m.hash);
            }
        }
        Cmd::Train {
            data,
            out,
            resume,
            ablation,
            cfg,
        } => {
            let mut rc = RunConfig::load(cfg.config.as_deref(), &cfg.set)?;
            for a in &ablation {
                rc.pipeline.ablation.set(a, true)?;
            }
            let ds = Dataset::open(&data)?;
            let outcome = train_dataset(&ds, &rc.train, &rc.pipeline, Some(&out), resume)?;
            println!(
                "best validation CD1 {:.6} at step {} (checkpoint {})",
                outcome.best_val_cd1,
                outcome.best_step,
                out.join("best.pcck").display()
            );
        }
        Cmd::Complete {
            checkpoint,
            input,
            output,
            no_upsample,
            cfg,
        } => {
            let rc = load_for_checkpoint(Some(&checkpoint), &cfg)?;
            let model = load_model(&checkpoint, &rc.pipeline)?;
            let partial = read_cloud(&input)?;
            if partial.len() < 16 {
                return Err(Error::Data(format!(
                    "{} has {} points; at least 16 are needed",
                    input.display(),
                    partial.len()
                )));
            }
            let r = pipeline::complete(&model, &partial, &rc.pipeline)?;
            write_cloud(&output, if no_upsample { &r.sparse } else { &r.dense })?;
            println!("gate: {}", if r.gate_passed { "passed" } else { "rejected" });
            match r.plane {
                Some(p) => println!("plane: n = [{:.6}, {:.6}, {:.6}], d = {:.6}", p.n[0], p.n[1], p.n[2], p.d),
                None => println!("plane: none (symnet disabled)"),
            }
            for t in &r.timings {
                println!("time {:<16} {:>9.3} ms", t.stage, t.ms);
            }
        }
        Cmd::Eval {
            checkpoint,
            data,
            split,
            sequence,
            metrics,
            gt_passthrough,
            out,
            cfg,
        } => {
            let rc = load_for_checkpoint(checkpoint.as_deref(), &cfg)?;
            let split: Split = split.parse()?;
            for m in &metrics {
                if !["fidelity", "mmd", "consistency"].contains(&m.as_str()) {
                    return Err(Error::Config(format!("unknown metric `{m}` (expected fidelity, mmd or consistency)")));
                }
            }
            let model = match (&checkpoint, gt_passthrough) {
                (_, true) => None,
                (Some(c), false) => Some(load_model(c, &rc.pipeline)?),
                (None, false) => return Err(Error::Config("--checkpoint is required unless --gt-passthrough".into())),
            };
            let rows: Vec<EvalRow> = if let Some(seq) = sequence {
                let model = model.ok_or_else(|| Error::Config("sequence evaluation needs a checkpoint".into()))?;
                let frames = load_sequence(&seq)?;
                let library = family_library(&Family::ALL, 4, rc.gen.n_dense, rc.gen.seed)?;
                let all = evaluate_sequence(&model, &frames, &library, &rc.pipeline)?;
                let chosen = if metrics.is_empty() {
                    all
                } else {
                    all.into_iter().filter(|(n, _)| metrics.iter().any(|m| m == n)).collect()
                };
                let id = seq.file_name().map_or("sequence".into(), |n| n.to_string_lossy().into_owned());
                vec![EvalRow {
                    id,
                    family: "sequence".into(),
                    metrics: chosen,
                }]
            } else {
                let data = data.ok_or_else(|| Error::Config("--data or --sequence is required".into()))?;
                let ds = Dataset::open(&data)?;
                let samples = ds.load_split(split)?;
                let source = match &model {
                    Some(m) => EvalSource::Model(m),
                    None => EvalSource::GroundTruth,
                };
                evaluate(source, &samples, &rc.pipeline)?
            };
            write(&out, &eval_csv(&rows))?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Cmd::Bench { sizes, queries } => {
            if sizes.is_empty() || sizes.contains(&0) || queries == 0 {
                return Err(Error::Config("sizes and queries must be positive".into()));
            }
            print!("{}", bench::table(&bench::run(&sizes, queries, 0)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
