//! Confidence re-estimation: fuse extractor and validation confidences with
//! an L1-regularized logistic regression over the feature ledger.

pub mod features;
mod logistic;

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{
    bin_index, closed_form_dim, logit, FeatureConfig, FeatureLayout, FeatureSet, System,
};
pub use logistic::{fit_logistic, LogisticFit, LogisticOptions};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Quad, Triple};
use crate::math::{dot, sigmoid};

/// A triple with the extractor confidence and, when available, both validation confidences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub triple: Triple,
    pub s_ie: f64,
    pub s_kbv: Option<f64>,
    pub s_kbv_ie: Option<f64>,
    pub s_final: Option<f64>,
}

impl ScoredTriple {
    pub fn new(triple: Triple, s_ie: f64, s_kbv: Option<f64>, s_kbv_ie: Option<f64>) -> Self {
        Self {
            triple,
            s_ie,
            s_kbv,
            s_kbv_ie,
            s_final: None,
        }
    }

    pub fn get(&self, system: System) -> Option<f64> {
        match system {
            System::Ie => Some(self.s_ie),
            System::Kbv => self.s_kbv,
            System::KbvIe => self.s_kbv_ie,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("s_ie", Some(self.s_ie)),
            ("s_kbv", self.s_kbv),
            ("s_kbv_ie", self.s_kbv_ie),
        ] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

/// Writes `subject, relation, object, s_ie, s_kbv|NA, s_kbv_ie|NA`.
pub fn write_score_table<W: Write>(kg: &KnowledgeGraph, rows: &[ScoredTriple], writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<score table>", e);
    for st in rows {
        let (s, r, o) = kg.triple_labels(&st.triple);
        writeln!(
            w,
            "{s}\t{r}\t{o}\t{}\t{}\t{}",
            st.s_ie,
            fmt_opt(st.s_kbv),
            fmt_opt(st.s_kbv_ie)
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a score table, interning labels into `kg`.
pub fn read_score_table<R: Read>(reader: R, kg: &mut KnowledgeGraph) -> Result<Vec<ScoredTriple>> {
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(lineno, format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno, format!("`{s}` is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parse(lineno, format!("confidence {v} outside [0, 1]")));
            }
            Ok(v)
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.trim() == "NA" {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let triple = Triple::new(
            kg.intern_entity(f[0]),
            kg.intern_relation(f[1]),
            kg.intern_entity(f[2]),
        );
        rows.push(ScoredTriple::new(triple, num(f[3])?, opt(f[4])?, opt(f[5])?));
    }
    Ok(rows)
}

pub fn load_score_table(path: impl AsRef<Path>, kg: &mut KnowledgeGraph) -> Result<Vec<ScoredTriple>> {
    let path = path.as_ref();
    read_score_table(File::open(path).map_err(|e| Error::io(path, e))?, kg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackerConfig {
    pub l1: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for StackerConfig {
    fn default() -> Self {
        Self {
            l1: 1e-3,
            max_epochs: 3000,
            tolerance: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackerModel {
    pub features: FeatureConfig,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l1: f64,
    pub seed: u64,
    pub epochs: usize,
    pub converged: bool,
    pub zero_fraction: f64,
}

impl StackerModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: x.len(),
            });
        }
        Ok(sigmoid(self.intercept + dot(&self.weights, x)))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Fits the stacker on featurized examples (label true = triple in the held-out KB).
pub fn train_stacker(
    examples: &[(Vec<f64>, bool)],
    features: &FeatureConfig,
    config: &StackerConfig,
) -> Result<StackerModel> {
    let dim = FeatureLayout::new(features.clone()).dim();
    if let Some((x, _)) = examples.iter().find(|(x, _)| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: x.len(),
        });
    }
    let (xs, ys): (Vec<&[f64]>, Vec<bool>) = examples.iter().map(|(x, y)| (x.as_slice(), *y)).unzip();
    let fit = fit_logistic(
        &xs,
        &ys,
        &LogisticOptions {
            l1: config.l1,
            max_epochs: config.max_epochs,
            tolerance: config.tolerance,
        },
    )?;
    let zeros = fit.weights.iter().filter(|&&w| w == 0.0).count();
    Ok(StackerModel {
        features: features.clone(),
        zero_fraction: if dim == 0 { 0.0 } else { zeros as f64 / dim as f64 },
        weights: fit.weights,
        intercept: fit.intercept,
        l1: config.l1,
        seed: config.seed,
        epochs: fit.epochs,
        converged: fit.converged,
    })
}

/// Featurizes scored triples and fits the stacker.
pub fn fit_stacker(
    scored: &[ScoredTriple],
    labels: &[bool],
    features: &FeatureConfig,
    config: &StackerConfig,
) -> Result<StackerModel> {
    if scored.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scored.len(),
            actual: labels.len(),
        });
    }
    let layout = FeatureLayout::new(features.clone());
    let examples = scored
        .iter()
        .zip(labels)
        .map(|(st, &y)| Ok((layout.featurize(st)?, y)))
        .collect::<Result<Vec<_>>>()?;
    train_stacker(&examples, features, config)
}

/// Sets `s_final = sigmoid(w . phi + b)` on every triple; output sorted by
/// descending `s_final` (ties by triple id).
pub fn rescore(model: &StackerModel, scored: &[ScoredTriple]) -> Result<Vec<ScoredTriple>> {
    let layout = FeatureLayout::new(model.features.clone());
    if layout.dim() != model.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.dim(),
            actual: model.weights.len(),
        });
    }
    let mut out = scored
        .iter()
        .map(|st| {
            let x = layout.featurize(st)?;
            Ok(ScoredTriple {
                s_final: Some(model.predict(&x)?),
                ..*st
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_by_final(&mut out);
    Ok(out)
}

pub fn sort_by_final(rows: &mut [ScoredTriple]) {
    rows.sort_by(|a, b| {
        b.s_final
            .partial_cmp(&a.s_final)
            .unwrap_or(Ordering::Equal)
            .then(a.triple.cmp(&b.triple))
    });
}

/// Q_final as quads (confidence = `s_final`), in the given order.
pub fn final_quads(rows: &[ScoredTriple]) -> Vec<Quad> {
    rows.iter()
        .filter_map(|st| {
            st.s_final.map(|s| Quad {
                triple: st.triple,
                confidence: s.clamp(0.0, 1.0),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{EntityId, RelationId};

    fn st(i: u32, ie: f64) -> ScoredTriple {
        ScoredTriple::new(
            Triple::new(EntityId(i), RelationId(0), EntityId(i + 1)),
            ie,
            Some(0.5),
            None,
        )
    }

    #[test]
    fn score_table_roundtrip() {
        let mut kg = KnowledgeGraph::new();
        kg.intern_entity("a");
        kg.intern_entity("b");
        kg.intern_relation("r");
        let rows = vec![ScoredTriple::new(
            Triple::new(EntityId(0), RelationId(0), EntityId(1)),
            0.25,
            None,
            Some(0.75),
        )];
        let mut buf = Vec::new();
        write_score_table(&kg, &rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "a\tr\tb\t0.25\tNA\t0.75\n");
        let back = read_score_table(&buf[..], &mut kg).unwrap();
        assert_eq!(back, rows);
        assert!(read_score_table(&b"a\tr\tb\t2\tNA\tNA\n"[..], &mut kg).is_err());
    }

    #[test]
    fn zero_model_gives_half() {
        let features = FeatureConfig::new(FeatureSet::All, 1);
        let dim = FeatureLayout::new(features.clone()).dim();
        let model = StackerModel {
            features,
            weights: vec![0.0; dim],
            intercept: 0.0,
            l1: 0.0,
            seed: 0,
            epochs: 0,
            converged: true,
            zero_fraction: 1.0,
        };
        let out = rescore(&model, &[st(0, 0.1), st(1, 0.9)]).unwrap();
        assert!(out.iter().all(|s| s.s_final == Some(0.5)));
    }

    #[test]
    fn monotone_in_ie_weight() {
        let features = FeatureConfig::new(FeatureSet::IeKbv, 1);
        let layout = FeatureLayout::new(features.clone());
        let mut weights = vec![0.0; layout.dim()];
        weights[0] = 2.0; // raw_ie
        let model = StackerModel {
            features,
            weights,
            intercept: -1.0,
            l1: 0.0,
            seed: 0,
            epochs: 0,
            converged: true,
            zero_fraction: 0.0,
        };
        let out = rescore(&model, &[st(0, 0.3), st(1, 0.7)]).unwrap();
        assert_eq!(out[0].triple.subject, EntityId(1));
        assert!(out[0].s_final > out[1].s_final);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let model = StackerModel {
            features: FeatureConfig::new(FeatureSet::All, 3),
            weights: vec![0.0; 5],
            intercept: 0.0,
            l1: 0.0,
            seed: 0,
            epochs: 0,
            converged: true,
            zero_fraction: 0.0,
        };
        assert!(matches!(
            rescore(&model, &[st(0, 0.5)]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_class_rejected() {
        let features = FeatureConfig::new(FeatureSet::Ie, 1);
        let examples = vec![(vec![0.2], true), (vec![0.4], true)];
        assert!(train_stacker(&examples, &features, &StackerConfig::default()).is_err());
    }

    #[test]
    fn separable_one_feature_fits_perfectly() {
        let features = FeatureConfig::new(FeatureSet::Ie, 1);
        let examples: Vec<(Vec<f64>, bool)> = (0..20)
            .map(|i| {
                let s = i as f64 / 19.0;
                (vec![s], s > 0.5)
            })
            .collect();
        let cfg = StackerConfig {
            l1: 0.0,
            max_epochs: 2000,
            ..StackerConfig::default()
        };
        let m = train_stacker(&examples, &features, &cfg).unwrap();
        let correct = examples
            .iter()
            .filter(|(x, y)| (m.predict(x).unwrap() > 0.5) == *y)
            .count();
        assert_eq!(correct, examples.len());
    }

    #[test]
    fn heavy_l1_collapses_to_prior() {
        let features = FeatureConfig::new(FeatureSet::IeKbv, 1);
        let layout = FeatureLayout::new(features.clone());
        let rows: Vec<ScoredTriple> = (0..40).map(|i| st(i, (i % 10) as f64 / 10.0)).collect();
        let labels: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let cfg = StackerConfig {
            l1: 1e3,
            ..StackerConfig::default()
        };
        let m = fit_stacker(&rows, &labels, &features, &cfg).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_eq!(m.zero_fraction, 1.0);
        let p = m.predict(&layout.featurize(&rows[3]).unwrap()).unwrap();
        assert!((p - 0.25).abs() < 1e-6, "{p}");
    }
}
