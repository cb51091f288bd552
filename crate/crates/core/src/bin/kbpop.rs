use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kbpop::pipeline::{self, evaluate_files, EvalInput, PipelineConfig, RunOptions, Stage};
use kbpop::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "kbpop", version, about = "Knowledge base population with confidence re-estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Global seed; stages derive their own seeds from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run even when cached outputs are current.
    #[arg(long)]
    force: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum Source {
    Kb,
    Ie,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline (or the stages named by --stages).
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated stage names, e.g. `extract` or `train-kbv,score`.
        #[arg(long)]
        stages: Option<String>,
        #[arg(long)]
        external_quads: Option<PathBuf>,
        #[arg(long)]
        negatives: Option<PathBuf>,
    },
    /// Split the KB and build the context index.
    Supervise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Train the relation extractor on distantly labeled bags.
    TrainRe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        na_ratio: Option<f64>,
    },
    /// Produce Q_IE with the trained extractor, or import external quads.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        min_confidence: Option<f64>,
        #[arg(long)]
        external_quads: Option<PathBuf>,
    },
    /// Train a validation model on the training KB or on Q_IE.
    TrainKbv {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        source: Source,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Negative samples per query.
        #[arg(long)]
        neg: Option<usize>,
        #[arg(long)]
        min_count: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Attach validation confidences to every extracted triple.
    Score {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the stackers and rescore Q_IE.
    Restack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        l1: Option<f64>,
        /// Comma-separated feature sets: ie, ie+kbv, ie+kbvie, all.
        #[arg(long)]
        features: Option<String>,
    },
    /// Evaluate scored quad files against a truth file.
    Eval {
        /// Scored quad files; the first one is the bucket baseline.
        #[arg(long, num_args = 1.., required = true)]
        scored: Vec<PathBuf>,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Triples used to count connectivity (defaults to the base).
        #[arg(long)]
        support: Option<PathBuf>,
        /// Known-false triples; unlabeled triples are then ignored.
        #[arg(long)]
        negatives: Option<PathBuf>,
        /// KB file whose vocabulary is loaded first.
        #[arg(long)]
        kb: Option<PathBuf>,
    },
    /// Generate the synthetic benchmark.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        entities: usize,
        #[arg(long, default_value_t = 8)]
        relations: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
}

fn resolve(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = &common.workdir {
        cfg.paths.workdir = w.clone();
    }
    if let Some(kb) = &common.kb {
        cfg.paths.kb = kb.clone();
    }
    if let Some(c) = &common.corpus {
        cfg.paths.corpus = Some(c.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if cfg.paths.workdir.as_os_str().is_empty() {
        cfg.paths.workdir = PathBuf::from("work");
    }
    Ok(cfg)
}

fn run_stages(cfg: &PipelineConfig, force: bool, stages: Option<Vec<Stage>>) -> Result<()> {
    let manifest = pipeline::run(cfg, &RunOptions { force, stages })?;
    for r in &manifest.stages {
        let status = if r.skipped { "skipped" } else { "ran" };
        println!("{:<14} {:<8} {:>8} ms  {}", r.stage.name(), status, r.duration_ms, r.report);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            common,
            stages,
            external_quads,
            negatives,
        } => {
            let mut cfg = resolve(&common)?;
            if external_quads.is_some() {
                cfg.paths.external_quads = external_quads;
            }
            if negatives.is_some() {
                cfg.paths.negatives = negatives;
            }
            let stages = stages.as_deref().map(Stage::parse_list).transpose()?;
            run_stages(&cfg, common.force, stages)
        }
        Command::Supervise { common, window } => {
            let mut cfg = resolve(&common)?;
            if let Some(w) = window {
                cfg.supervise.window = w;
            }
            run_stages(&cfg, common.force, Some(vec![Stage::Supervise]))
        }
        Command::TrainRe {
            common,
            epochs,
            lr,
            na_ratio,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = epochs {
                cfg.re.epochs = v;
            }
            if let Some(v) = lr {
                cfg.re.learning_rate = v;
            }
            if let Some(v) = na_ratio {
                cfg.re.na_ratio = v;
            }
            run_stages(&cfg, common.force, Some(vec![Stage::TrainRe]))
        }
        Command::Extract {
            common,
            min_confidence,
            external_quads,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = min_confidence {
                cfg.extract.min_confidence = v;
            }
            if external_quads.is_some() {
                cfg.paths.external_quads = external_quads;
            }
            run_stages(&cfg, common.force, Some(vec![Stage::Extract]))
        }
        Command::TrainKbv {
            common,
            source,
            dim,
            epochs,
            neg,
            min_count,
            lr,
        } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = dim {
                cfg.kbv.dim = v;
            }
            if let Some(v) = epochs {
                cfg.kbv.epochs = v;
            }
            if let Some(v) = neg {
                cfg.kbv.negatives = v;
            }
            if let Some(v) = min_count {
                cfg.kbv.min_count = v;
            }
            if let Some(v) = lr {
                cfg.kbv.learning_rate = v;
            }
            let stage = match source {
                Source::Kb => Stage::TrainKbvKb,
                Source::Ie => Stage::TrainKbvIe,
            };
            run_stages(&cfg, common.force, Some(vec![stage]))
        }
        Command::Score { common } => {
            let cfg = resolve(&common)?;
            run_stages(&cfg, common.force, Some(vec![Stage::Score]))
        }
        Command::Restack { common, l1, features } => {
            let mut cfg = resolve(&common)?;
            if let Some(v) = l1 {
                cfg.restack.l1 = v;
            }
            if let Some(f) = features {
                cfg.restack.feature_sets = f.split(',').map(|s| s.trim().to_owned()).collect();
            }
            run_stages(&cfg, common.force, Some(vec![Stage::Restack]))
        }
        Command::Eval {
            scored,
            truth,
            base,
            out_dir,
            support,
            negatives,
            kb,
        } => {
            let variants: Vec<EvalInput> = scored
                .iter()
                .map(|p| {
                    let stem = p
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| "scored".into());
                    EvalInput {
                        name: stem.clone(),
                        slug: stem,
                        path: p.clone(),
                    }
                })
                .collect();
            let mut slugs: Vec<&str> = variants.iter().map(|v| v.slug.as_str()).collect();
            slugs.sort_unstable();
            if slugs.windows(2).any(|w| w[0] == w[1]) {
                bail!("scored files must have distinct file names");
            }
            let summary = evaluate_files(
                kb.as_deref(),
                &variants,
                &truth,
                &base,
                support.as_deref(),
                negatives.as_deref(),
                &out_dir,
            )?;
            print!("{}", summary.table.to_text());
            Ok(())
        }
        Command::Synth {
            seed,
            entities,
            relations,
            noise,
            out,
        } => {
            let cfg = SynthConfig {
                seed,
                entities,
                relations,
                noise,
                ..SynthConfig::default()
            };
            let data = generate(&cfg)?;
            data.write_to(&out)
                .with_context(|| format!("writing benchmark to {}", out.display()))?;
            println!("{}", serde_json::to_string_pretty(&data.stats)?);
            Ok(())
        }
    }
}
