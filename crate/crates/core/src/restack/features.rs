//! Feature ledger for confidence re-estimation.
//!
//! Base features per included system: raw confidence, logit
//! `ln(1/s - 1)`, five range indicators over `[0,.2) [.2,.4) [.4,.6) [.6,.8)
//! [.8,1]`; a missing indicator for each validation system; one indicator per
//! relation. The quadratic block holds the product of every unordered pair of
//! distinct base features, minus pairs that are identically zero (two bins of
//! the same system, two relation indicators).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ScoredTriple;
use crate::error::{Error, Result};

pub const LOGIT_EPS: f64 = 1e-6;
pub const BIN_EDGES: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
pub const NUM_BINS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum System {
    Ie,
    Kbv,
    KbvIe,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Ie => "ie",
            System::Kbv => "kbv",
            System::KbvIe => "kbv_ie",
        }
    }
}

/// Which system confidences feed the re-estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSet {
    /// The raw extractor confidence alone.
    Ie,
    IeKbv,
    IeKbvIe,
    All,
}

impl FeatureSet {
    pub const ALL_SETS: [FeatureSet; 4] = [
        FeatureSet::Ie,
        FeatureSet::IeKbv,
        FeatureSet::IeKbvIe,
        FeatureSet::All,
    ];

    pub fn systems(self) -> &'static [System] {
        match self {
            FeatureSet::Ie => &[System::Ie],
            FeatureSet::IeKbv => &[System::Ie, System::Kbv],
            FeatureSet::IeKbvIe => &[System::Ie, System::KbvIe],
            FeatureSet::All => &[System::Ie, System::Kbv, System::KbvIe],
        }
    }

    /// Command-line name (`ie`, `ie+kbv`, `ie+kbvie`, `all`).
    pub fn cli_name(self) -> &'static str {
        match self {
            FeatureSet::Ie => "ie",
            FeatureSet::IeKbv => "ie+kbv",
            FeatureSet::IeKbvIe => "ie+kbvie",
            FeatureSet::All => "all",
        }
    }

    /// Row label used in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            FeatureSet::Ie => "IE",
            FeatureSet::IeKbv => "IE+KBV",
            FeatureSet::IeKbvIe => "IE+KBV_IE",
            FeatureSet::All => "ALL",
        }
    }

    /// File-name friendly identifier.
    pub fn slug(self) -> &'static str {
        match self {
            FeatureSet::Ie => "ie",
            FeatureSet::IeKbv => "ie_kbv",
            FeatureSet::IeKbvIe => "ie_kbvie",
            FeatureSet::All => "all",
        }
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ie" => Ok(FeatureSet::Ie),
            "ie+kbv" => Ok(FeatureSet::IeKbv),
            "ie+kbvie" | "ie+kbv_ie" => Ok(FeatureSet::IeKbvIe),
            "all" => Ok(FeatureSet::All),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature set `{other}` (expected ie, ie+kbv, ie+kbvie or all)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub set: FeatureSet,
    pub num_relations: usize,
    pub quadratic: bool,
    /// Include products involving relation indicators.
    pub rel_quadratic: bool,
    /// One set of five range indicators counting all present systems.
    pub shared_bins: bool,
    /// Drop products that are identically zero.
    pub prune: bool,
}

impl FeatureConfig {
    pub fn new(set: FeatureSet, num_relations: usize) -> Self {
        Self {
            set,
            num_relations,
            quadratic: true,
            rel_quadratic: true,
            shared_bins: false,
            prune: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Base {
    Raw(System),
    Logit(System),
    Bin(Option<System>, usize),
    Missing(System),
    Rel(usize),
}

impl Base {
    fn name(self) -> String {
        match self {
            Base::Raw(s) => format!("raw_{}", s.name()),
            Base::Logit(s) => format!("logit_{}", s.name()),
            Base::Bin(Some(s), b) => format!("bin{b}_{}", s.name()),
            Base::Bin(None, b) => format!("bin{b}"),
            Base::Missing(s) => format!("missing_{}", s.name()),
            Base::Rel(r) => format!("rel{r}"),
        }
    }
}

/// Concrete feature order for a [`FeatureConfig`].
#[derive(Clone, Debug)]
pub struct FeatureLayout {
    pub config: FeatureConfig,
    base: Vec<Base>,
    pairs: Vec<(usize, usize)>,
}

fn structurally_zero(a: Base, b: Base) -> bool {
    match (a, b) {
        (Base::Bin(Some(s1), _), Base::Bin(Some(s2), _)) => s1 == s2,
        (Base::Rel(_), Base::Rel(_)) => true,
        _ => false,
    }
}

impl FeatureLayout {
    pub fn new(config: FeatureConfig) -> Self {
        let mut base = Vec::new();
        if config.set == FeatureSet::Ie {
            base.push(Base::Raw(System::Ie));
            return Self {
                config,
                base,
                pairs: Vec::new(),
            };
        }
        let systems = config.set.systems();
        base.extend(systems.iter().map(|&s| Base::Raw(s)));
        base.extend(systems.iter().map(|&s| Base::Logit(s)));
        if config.shared_bins {
            base.extend((0..NUM_BINS).map(|b| Base::Bin(None, b)));
        } else {
            for &s in systems {
                base.extend((0..NUM_BINS).map(|b| Base::Bin(Some(s), b)));
            }
        }
        base.extend(
            systems
                .iter()
                .filter(|&&s| s != System::Ie)
                .map(|&s| Base::Missing(s)),
        );
        base.extend((0..config.num_relations).map(Base::Rel));

        let mut pairs = Vec::new();
        if config.quadratic {
            for i in 0..base.len() {
                for j in i + 1..base.len() {
                    let (a, b) = (base[i], base[j]);
                    if config.prune && structurally_zero(a, b) {
                        continue;
                    }
                    let touches_rel = matches!(a, Base::Rel(_)) || matches!(b, Base::Rel(_));
                    if !config.rel_quadratic && touches_rel {
                        continue;
                    }
                    pairs.push((i, j));
                }
            }
        }
        Self { config, base, pairs }
    }

    pub fn base_dim(&self) -> usize {
        self.base.len()
    }

    pub fn dim(&self) -> usize {
        self.base.len() + self.pairs.len()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.base.iter().map(|b| b.name()).collect();
        for &(i, j) in &self.pairs {
            names.push(format!("{}*{}", self.base[i].name(), self.base[j].name()));
        }
        names
    }

    pub fn featurize(&self, st: &ScoredTriple) -> Result<Vec<f64>> {
        st.validate()?;
        let r = st.triple.relation.index();
        if self.config.set != FeatureSet::Ie && r >= self.config.num_relations {
            return Err(Error::InvalidArgument(format!(
                "relation id {r} outside feature range {}",
                self.config.num_relations
            )));
        }
        let mut x: Vec<f64> = self
            .base
            .iter()
            .map(|&b| match b {
                Base::Raw(s) => st.get(s).unwrap_or(0.0),
                Base::Logit(s) => st.get(s).map_or(0.0, logit),
                Base::Bin(Some(s), k) => st.get(s).map_or(0.0, |v| (bin_index(v) == k) as u8 as f64),
                Base::Bin(None, k) => self
                    .config
                    .set
                    .systems()
                    .iter()
                    .filter_map(|&s| st.get(s))
                    .filter(|&v| bin_index(v) == k)
                    .count() as f64,
                Base::Missing(s) => st.get(s).is_none() as u8 as f64,
                Base::Rel(k) => (k == r) as u8 as f64,
            })
            .collect();
        let base_len = x.len();
        x.reserve(self.pairs.len());
        for &(i, j) in &self.pairs {
            debug_assert!(i < base_len && j < base_len);
            x.push(x[i] * x[j]);
        }
        Ok(x)
    }
}

/// `ln(1/s - 1)` with `s` clamped to `[1e-6, 1 - 1e-6]`.
pub fn logit(s: f64) -> f64 {
    let s = s.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (1.0 / s - 1.0).ln()
}

/// Range index in `0..5`; the last range is closed at 1.
pub fn bin_index(s: f64) -> usize {
    BIN_EDGES.iter().take_while(|&&edge| s >= edge).count()
}

/// Closed-form feature count for a configuration.
pub fn closed_form_dim(config: &FeatureConfig) -> usize {
    if config.set == FeatureSet::Ie {
        return 1;
    }
    let s = config.set.systems().len();
    let r = config.num_relations;
    let bins = if config.shared_bins { NUM_BINS } else { NUM_BINS * s };
    let base = 2 * s + bins + (s - 1) + r;
    if !config.quadratic {
        return base;
    }
    let choose2 = |n: usize| n * n.saturating_sub(1) / 2;
    let mut pairs = choose2(base);
    if config.prune {
        if !config.shared_bins {
            pairs -= s * choose2(NUM_BINS);
        }
        pairs -= choose2(r);
    }
    if !config.rel_quadratic {
        let rel_pairs_left = if config.prune { 0 } else { choose2(r) };
        pairs -= rel_pairs_left + r * (base - r);
    }
    base + pairs
}
