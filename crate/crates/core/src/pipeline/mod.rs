//! File-based stage orchestration with digest caching.
//!
//! Work directory layout:
//!
//! ```text
//! <workdir>/config.toml        resolved configuration of the last run
//! <workdir>/manifest.json      per-stage input/output digests and timings
//! <workdir>/contexts/          context index dump
//! <workdir>/models/            extractor, validation and stacker models
//! <workdir>/quads/             KB splits, Q_IE, score table, Q_final, evaluation inputs
//! <workdir>/eval/              PR curves, ablation table, bucket analysis
//! ```

pub mod config;
pub mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use config::PipelineConfig;
pub use stages::{evaluate_files, EvalInput, EvalSummary, KbvSource};

use crate::error::{Error, Result};
use crate::restack::FeatureSet;

/// Paths of every artifact inside a work directory.
#[derive(Clone, Debug)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn contexts(&self) -> PathBuf {
        self.root.join("contexts/contexts.tsv")
    }

    pub fn kb_train(&self) -> PathBuf {
        self.root.join("quads/kb_train.tsv")
    }

    pub fn kb_valid(&self) -> PathBuf {
        self.root.join("quads/kb_valid.tsv")
    }

    pub fn kb_test(&self) -> PathBuf {
        self.root.join("quads/kb_test.tsv")
    }

    pub fn re_model(&self) -> PathBuf {
        self.root.join("models/re.bin")
    }

    pub fn q_ie(&self) -> PathBuf {
        self.root.join("quads/q_ie.tsv")
    }

    pub fn kbv_model(&self, source: KbvSource) -> PathBuf {
        self.root.join(match source {
            KbvSource::Kb => "models/kbv_kb.bin",
            KbvSource::Ie => "models/kbv_ie.bin",
        })
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("quads/scores.tsv")
    }

    pub fn stacker_model(&self, set: FeatureSet) -> PathBuf {
        self.root.join(format!("models/stacker_{}.json", set.slug()))
    }

    pub fn final_quads(&self, set: FeatureSet) -> PathBuf {
        self.root.join(format!("quads/final_{}.tsv", set.slug()))
    }

    pub fn q_final(&self) -> PathBuf {
        self.root.join("quads/q_final.tsv")
    }

    pub fn eval_variant(&self, set: FeatureSet) -> PathBuf {
        self.root.join(format!("quads/eval_{}.tsv", set.slug()))
    }

    pub fn eval_base(&self) -> PathBuf {
        self.root.join("quads/eval_base.tsv")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Supervise,
    TrainRe,
    Extract,
    TrainKbvKb,
    TrainKbvIe,
    Score,
    Restack,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Supervise,
        Stage::TrainRe,
        Stage::Extract,
        Stage::TrainKbvKb,
        Stage::TrainKbvIe,
        Stage::Score,
        Stage::Restack,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Supervise => "supervise",
            Stage::TrainRe => "train-re",
            Stage::Extract => "extract",
            Stage::TrainKbvKb => "train-kbv-kb",
            Stage::TrainKbvIe => "train-kbv-ie",
            Stage::Score => "score",
            Stage::Restack => "restack",
            Stage::Eval => "eval",
        }
    }

    /// Parses a comma-separated list; `train-kbv` selects both validation models.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part == "train-kbv" {
                out.extend([Stage::TrainKbvKb, Stage::TrainKbvIe]);
            } else {
                out.push(part.parse()?);
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn inputs(self, cfg: &PipelineConfig, l: &Layout) -> Vec<PathBuf> {
        let kb = cfg.paths.kb.clone();
        match self {
            Stage::Supervise => [Some(kb), cfg.paths.corpus.clone()].into_iter().flatten().collect(),
            Stage::TrainRe => vec![kb, l.contexts(), l.kb_train()],
            Stage::Extract => match &cfg.paths.external_quads {
                Some(ext) => vec![kb, ext.clone()],
                None => vec![kb, l.contexts(), l.re_model()],
            },
            Stage::TrainKbvKb => vec![kb, l.kb_train()],
            Stage::TrainKbvIe => vec![kb, l.q_ie()],
            Stage::Score => vec![kb, l.q_ie(), l.kbv_model(KbvSource::Kb), l.kbv_model(KbvSource::Ie)],
            Stage::Restack => vec![kb, l.kb_train(), l.kb_valid(), l.kb_test(), l.scores()],
            Stage::Eval => {
                let mut v = vec![kb, l.kb_test(), l.eval_base(), l.q_ie()];
                v.extend(cfg.paths.negatives.clone());
                v.extend(
                    stages::pipeline_variants(cfg, l)
                        .unwrap_or_default()
                        .into_iter()
                        .map(|e| e.path),
                );
                v
            }
        }
    }

    fn outputs(self, cfg: &PipelineConfig, l: &Layout) -> Vec<PathBuf> {
        match self {
            Stage::Supervise => vec![l.kb_train(), l.kb_valid(), l.kb_test(), l.contexts()],
            Stage::TrainRe => vec![l.re_model()],
            Stage::Extract => vec![l.q_ie()],
            Stage::TrainKbvKb => vec![l.kbv_model(KbvSource::Kb)],
            Stage::TrainKbvIe => vec![l.kbv_model(KbvSource::Ie)],
            Stage::Score => vec![l.scores()],
            Stage::Restack => {
                let mut v = vec![l.q_final(), l.eval_base(), l.eval_variant(FeatureSet::Ie)];
                for set in cfg.restack.sets().unwrap_or_default() {
                    v.extend([l.stacker_model(set), l.final_quads(set), l.eval_variant(set)]);
                }
                v.dedup();
                v
            }
            Stage::Eval => {
                let d = l.eval_dir();
                let mut v: Vec<PathBuf> = ["ablation.csv", "ablation.txt", "buckets.csv", "pr.svg", "summary.json"]
                    .iter()
                    .map(|f| d.join(f))
                    .collect();
                for e in stages::pipeline_variants(cfg, l).unwrap_or_default() {
                    v.push(d.join(format!("pr_{}.csv", e.slug)));
                }
                v
            }
        }
    }

    /// The configuration slice a stage depends on; part of its cache key.
    fn params(self, cfg: &PipelineConfig) -> Value {
        use serde_json::json;
        match self {
            Stage::Supervise => json!({ "seed": cfg.seed, "split": cfg.split, "supervise": cfg.supervise }),
            Stage::TrainRe => json!({ "seed": cfg.seed, "re": cfg.re }),
            Stage::Extract => json!({ "extract": cfg.extract, "external": cfg.paths.external_quads }),
            Stage::TrainKbvKb | Stage::TrainKbvIe => json!({ "seed": cfg.seed, "kbv": cfg.kbv }),
            Stage::Score => json!({}),
            Stage::Restack => json!({ "seed": cfg.seed, "split": cfg.split, "restack": cfg.restack }),
            Stage::Eval => json!({ "negatives": cfg.paths.negatives }),
        }
    }

    fn execute(self, cfg: &PipelineConfig, l: &Layout) -> Result<Value> {
        match self {
            Stage::Supervise => stages::supervise(cfg, l),
            Stage::TrainRe => {
                if cfg.paths.external_quads.is_some() {
                    return Ok(serde_json::json!({ "skipped": "external quads supplied" }));
                }
                stages::train_extractor(cfg, l)
            }
            Stage::Extract => stages::extract_quads(cfg, l),
            Stage::TrainKbvKb => stages::train_validator(cfg, l, KbvSource::Kb),
            Stage::TrainKbvIe => stages::train_validator(cfg, l, KbvSource::Ie),
            Stage::Score => stages::score(cfg, l),
            Stage::Restack => stages::restack(cfg, l),
            Stage::Eval => stages::evaluate(cfg, l),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub params_digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub duration_ms: u64,
    pub skipped: bool,
    pub report: Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Option<Self>> {
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| Error::Format(format!("manifest: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    fn upsert(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|r| r.stage == record.stage) {
            Some(r) => *r = record,
            None => {
                self.stages.push(record);
                self.stages.sort_by_key(|r| r.stage);
            }
        }
    }
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn digest_value(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

fn key(path: &Path, layout: &Layout) -> String {
    path.strip_prefix(layout.root())
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

fn digests(paths: &[PathBuf], layout: &Layout) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((key(p, layout), file_digest(p)?))).collect()
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Re-run stages even when their cached outputs are current.
    pub force: bool,
    /// Restrict the run to these stages (pipeline order is kept).
    pub stages: Option<Vec<Stage>>,
}

/// Runs the selected stages in pipeline order, skipping any stage whose
/// inputs, parameters and outputs match the previous manifest. The returned
/// manifest holds this run's records only; the one on disk keeps every stage.
pub fn run(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.paths.workdir);
    for dir in ["contexts", "models", "quads", "eval"] {
        let d = layout.root().join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let cfg_path = layout.config();
    std::fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;

    let mut manifest = RunManifest::load(&layout.manifest())?.unwrap_or_default();
    manifest.version = env!("CARGO_PKG_VERSION").to_owned();
    let mut this_run = RunManifest {
        version: manifest.version.clone(),
        stages: Vec::new(),
    };
    for stage in Stage::ALL {
        if opts.stages.as_ref().is_some_and(|s| !s.contains(&stage)) {
            continue;
        }
        let record = run_stage(stage, cfg, &layout, manifest.record(stage), opts.force).map_err(|e| Error::Stage {
            stage: stage.name().to_owned(),
            source: Box::new(e),
        })?;
        manifest.upsert(record.clone());
        write_manifest(&manifest, &layout)?;
        this_run.stages.push(record);
    }
    write_manifest(&manifest, &layout)?;
    Ok(this_run)
}

fn write_manifest(manifest: &RunManifest, layout: &Layout) -> Result<()> {
    let path = layout.manifest();
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn run_stage(
    stage: Stage,
    cfg: &PipelineConfig,
    layout: &Layout,
    previous: Option<&StageRecord>,
    force: bool,
) -> Result<StageRecord> {
    let inputs = stage.inputs(cfg, layout);
    if let Some(missing) = inputs.iter().find(|p| !p.exists()) {
        return Err(Error::InvalidArgument(format!(
            "missing input {} (run the stage that produces it first)",
            missing.display()
        )));
    }
    let input_digests = digests(&inputs, layout)?;
    let params_digest = digest_value(&stage.params(cfg));
    let outputs = stage.outputs(cfg, layout);

    if !force {
        if let Some(prev) = previous {
            let current_outputs = outputs
                .iter()
                .all(|p| p.exists())
                .then(|| digests(&outputs, layout))
                .transpose()?;
            if prev.params_digest == params_digest
                && prev.inputs == input_digests
                && current_outputs.as_ref() == Some(&prev.outputs)
            {
                info!("{stage}: up to date, skipped");
                return Ok(StageRecord {
                    skipped: true,
                    duration_ms: 0,
                    ..prev.clone()
                });
            }
        }
    }

    info!("{stage}: running");
    let start = Instant::now();
    let report = stage.execute(cfg, layout)?;
    let duration_ms = start.elapsed().as_millis() as u64;
    Ok(StageRecord {
        stage,
        params_digest,
        inputs: input_digests,
        outputs: digests(&outputs, layout)?,
        duration_ms,
        skipped: false,
        report,
    })
}
