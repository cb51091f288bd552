//! Serializable pipeline configuration. Every section has defaults, so a
//! config file only needs the input paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{ReConfig, DEFAULT_HASH_DIM};
use crate::kbv::KbvConfig;
use crate::restack::{FeatureConfig, FeatureSet, StackerConfig};

/// Fixed offsets added to the global seed so every stage draws an independent stream.
pub mod seed_offset {
    pub const SPLIT: u64 = 1;
    pub const LABEL: u64 = 2;
    pub const RE: u64 = 3;
    pub const KBV_KB: u64 = 4;
    pub const KBV_IE: u64 = 5;
    pub const RESTACK: u64 = 6;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub kb: PathBuf,
    /// Optional when `external_quads` supplies the extraction output.
    pub corpus: Option<PathBuf>,
    pub workdir: PathBuf,
    /// Pre-computed extraction output used in place of the built-in extractor.
    pub external_quads: Option<PathBuf>,
    /// Known-false triples; when given, evaluation ignores unlabeled triples.
    pub negatives: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperviseParams {
    /// Tokens kept before the first and after the second mention.
    pub window: usize,
}

impl Default for SuperviseParams {
    fn default() -> Self {
        Self { window: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReParams {
    pub na_ratio: f64,
    pub hash_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub batch_size: usize,
}

impl Default for ReParams {
    fn default() -> Self {
        let re = ReConfig::default();
        Self {
            na_ratio: 1.0,
            hash_dim: DEFAULT_HASH_DIM,
            learning_rate: re.learning_rate,
            epochs: re.epochs,
            l2: re.l2,
            batch_size: re.batch_size,
        }
    }
}

impl ReParams {
    pub fn to_config(&self, seed: u64) -> ReConfig {
        ReConfig {
            hash_dim: self.hash_dim,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2: self.l2,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractParams {
    pub min_confidence: f64,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self { min_confidence: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbvParams {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub min_count: usize,
    pub ignore_confidence: bool,
}

impl Default for KbvParams {
    fn default() -> Self {
        let k = KbvConfig::default();
        Self {
            dim: k.dim,
            learning_rate: k.learning_rate,
            epochs: k.epochs,
            negatives: k.negatives,
            min_count: k.min_count,
            ignore_confidence: k.ignore_confidence,
        }
    }
}

impl KbvParams {
    pub fn to_config(&self, seed: u64) -> KbvConfig {
        KbvConfig {
            dim: self.dim,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            negatives: self.negatives,
            min_count: self.min_count,
            seed,
            ignore_confidence: self.ignore_confidence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestackParams {
    /// Feature sets to fit, by command-line name.
    pub feature_sets: Vec<String>,
    pub l1: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub quadratic: bool,
    pub rel_quadratic: bool,
    pub shared_bins: bool,
    pub prune: bool,
}

impl Default for RestackParams {
    fn default() -> Self {
        let s = StackerConfig::default();
        let f = FeatureConfig::new(FeatureSet::All, 1);
        Self {
            feature_sets: [FeatureSet::IeKbv, FeatureSet::IeKbvIe, FeatureSet::All]
                .iter()
                .map(|s| s.cli_name().to_owned())
                .collect(),
            l1: s.l1,
            max_epochs: s.max_epochs,
            tolerance: s.tolerance,
            quadratic: f.quadratic,
            rel_quadratic: f.rel_quadratic,
            shared_bins: f.shared_bins,
            prune: f.prune,
        }
    }
}

impl RestackParams {
    pub fn sets(&self) -> Result<Vec<FeatureSet>> {
        self.feature_sets.iter().map(|s| s.parse()).collect()
    }

    pub fn feature_config(&self, set: FeatureSet, num_relations: usize) -> FeatureConfig {
        FeatureConfig {
            set,
            num_relations,
            quadratic: self.quadratic,
            rel_quadratic: self.rel_quadratic,
            shared_bins: self.shared_bins,
            prune: self.prune,
        }
    }

    pub fn stacker_config(&self, seed: u64) -> StackerConfig {
        StackerConfig {
            l1: self.l1,
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub split: SplitParams,
    pub supervise: SuperviseParams,
    pub re: ReParams,
    pub extract: ExtractParams,
    pub kbv: KbvParams,
    pub restack: RestackParams,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths.kb.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("config: paths.kb is required".into()));
        }
        if self.paths.workdir.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("config: paths.workdir is required".into()));
        }
        if self.paths.corpus.is_none() && self.paths.external_quads.is_none() {
            return Err(Error::InvalidArgument(
                "config: paths.corpus is required unless paths.external_quads is set".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.extract.min_confidence) {
            return Err(Error::InvalidArgument("config: extract.min_confidence outside [0, 1]".into()));
        }
        let s = &self.split;
        if [s.train, s.valid, s.test].iter().any(|f| f.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) || (s.train + s.valid + s.test - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "config: split fractions must be positive and sum to 1".into(),
            ));
        }
        if self.restack.sets()?.is_empty() {
            return Err(Error::InvalidArgument("config: restack.feature_sets is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_defaults() {
        let cfg = PipelineConfig::from_toml(
            "seed = 7\n[paths]\nkb = \"kb.tsv\"\ncorpus = \"c.jsonl\"\nworkdir = \"w\"\n[kbv]\ndim = 16\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.kbv.dim, 16);
        assert_eq!(cfg.kbv.min_count, 3);
        assert_eq!(cfg.extract.min_confidence, 0.1);
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml("[kbv]\ndimension = 3\n").is_err());
        let mut cfg = PipelineConfig::from_toml("[paths]\nkb = \"k\"\ncorpus = \"c\"\nworkdir = \"w\"\n").unwrap();
        cfg.split.test = 0.5;
        assert!(cfg.validate().is_err());
        cfg.split = SplitParams::default();
        cfg.restack.feature_sets = vec!["bogus".into()];
        assert!(cfg.validate().is_err());
    }
}
