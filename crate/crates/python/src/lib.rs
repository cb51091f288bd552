//! Python bindings: knowledge graphs, the validation network, the stacker,
//! PU evaluation, the synthetic benchmark and the staged pipeline.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use kbpop::eval;
use kbpop::kbv::{self, KbvConfig};
use kbpop::kg::{self as core_kg, EntityId, Quad, RelationId, Triple};
use kbpop::pipeline::{self, PipelineConfig, RunOptions, Stage};
use kbpop::restack::{self, FeatureConfig, FeatureSet, ScoredTriple, StackerConfig};
use kbpop::synth::{self, SynthConfig};

fn py_err(e: kbpop::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A deduplicated quad store with string labels.
#[pyclass(name = "KnowledgeGraph", module = "pykbpop", skip_from_py_object)]
#[derive(Clone)]
pub struct PyKnowledgeGraph {
    inner: core_kg::KnowledgeGraph,
}

impl PyKnowledgeGraph {
    fn triple(&self, s: &str, r: &str, o: &str) -> PyResult<Triple> {
        let e = |label: &str| {
            self.inner
                .entity_id(label)
                .ok_or_else(|| PyKeyError::new_err(format!("unknown entity `{label}`")))
        };
        let rel = self
            .inner
            .relation_id(r)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown relation `{r}`")))?;
        Ok(Triple::new(e(s)?, rel, e(o)?))
    }
}

#[pymethods]
impl PyKnowledgeGraph {
    #[new]
    fn new() -> Self {
        Self {
            inner: core_kg::KnowledgeGraph::new(),
        }
    }

    /// Reads a TSV file of triples or quads; triples get `default_confidence`.
    #[staticmethod]
    #[pyo3(signature = (path, default_confidence = 1.0))]
    fn load(path: PathBuf, default_confidence: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core_kg::load_quads(path, default_confidence).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, default_confidence = 1.0))]
    fn from_tsv(text: &str, default_confidence: f64) -> PyResult<Self> {
        Ok(Self {
            inner: core_kg::KnowledgeGraph::read_quads(text.as_bytes(), default_confidence).map_err(py_err)?,
        })
    }

    /// Inserts a quad; a repeated triple keeps the higher confidence.
    #[pyo3(signature = (subject, relation, object, confidence = 1.0))]
    fn add(&mut self, subject: &str, relation: &str, object: &str, confidence: f64) -> PyResult<()> {
        self.inner
            .insert_labels(subject, relation, object, confidence)
            .map(|_| ())
            .map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_quads(path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, t: (String, String, String)) -> bool {
        self.triple(&t.0, &t.1, &t.2).is_ok_and(|t| self.inner.contains(&t))
    }

    #[getter]
    fn num_entities(&self) -> usize {
        self.inner.num_entities()
    }

    #[getter]
    fn num_relations(&self) -> usize {
        self.inner.num_relations()
    }

    fn confidence(&self, subject: &str, relation: &str, object: &str) -> Option<f64> {
        let t = self.triple(subject, relation, object).ok()?;
        self.inner.confidence(&t)
    }

    /// Number of quads mentioning the entity (0 for unknown labels).
    fn connectivity(&self, entity: &str) -> usize {
        self.inner.entity_id(entity).map_or(0, |e| self.inner.connectivity(e))
    }

    /// All quads as `(subject, relation, object, confidence)` tuples.
    fn quads(&self) -> Vec<(String, String, String, f64)> {
        self.inner
            .quads()
            .iter()
            .map(|q| {
                let (s, r, o) = self.inner.triple_labels(&q.triple);
                (s.to_owned(), r.to_owned(), o.to_owned(), q.confidence)
            })
            .collect()
    }

    /// Seeded train / validation / test split.
    #[pyo3(signature = (train = 0.6, valid = 0.2, test = 0.2, seed = 0))]
    fn split(&self, train: f64, valid: f64, test: f64, seed: u64) -> PyResult<(Self, Self, Self)> {
        let parts = core_kg::split(&self.inner, (train, valid, test), seed).map_err(py_err)?;
        let wrap = |inner| Self { inner };
        Ok((wrap(parts.train), wrap(parts.validation), wrap(parts.test)))
    }

    fn __repr__(&self) -> String {
        format!(
            "KnowledgeGraph(quads={}, entities={}, relations={})",
            self.inner.len(),
            self.inner.num_entities(),
            self.inner.num_relations()
        )
    }
}

/// The embedding-based validation network trained on a knowledge graph.
#[pyclass(name = "Validator", module = "pykbpop")]
pub struct PyValidator {
    model: kbv::KbvModel,
    graph: core_kg::KnowledgeGraph,
    #[pyo3(get)]
    loss_trace: Vec<f64>,
}

#[pymethods]
impl PyValidator {
    #[staticmethod]
    #[pyo3(signature = (graph, dim = 4, epochs = 50, negatives = 64, min_count = 3, learning_rate = 0.05, seed = 0, ignore_confidence = false))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        graph: &PyKnowledgeGraph,
        dim: usize,
        epochs: usize,
        negatives: usize,
        min_count: usize,
        learning_rate: f64,
        seed: u64,
        ignore_confidence: bool,
    ) -> PyResult<Self> {
        let cfg = KbvConfig {
            dim,
            learning_rate,
            epochs,
            negatives,
            min_count,
            seed,
            ignore_confidence,
        };
        let kg = &graph.inner;
        let trained = py
            .detach(|| kbv::train_kbv(kg.quads(), kg.num_relations(), &cfg))
            .map_err(py_err)?;
        Ok(Self {
            model: trained.model,
            graph: graph.inner.clone(),
            loss_trace: trained.loss_trace,
        })
    }

    /// Mean of the forward and inverse probabilities, or `None` when either
    /// argument has no embedding.
    fn score(&self, subject: &str, relation: &str, object: &str) -> Option<f64> {
        let t = Triple::new(
            self.graph.entity_id(subject)?,
            self.graph.relation_id(relation)?,
            self.graph.entity_id(object)?,
        );
        self.model.score_triple(&t).ok()
    }

    /// Whether the entity received an embedding.
    fn has_embedding(&self, entity: &str) -> bool {
        self.graph
            .entity_id(entity)
            .is_some_and(|e| self.model.vocab.contains(e))
    }

    #[getter]
    fn num_embedded(&self) -> usize {
        self.model.vocab.len()
    }
}

fn feature_set(name: &str) -> PyResult<FeatureSet> {
    name.parse().map_err(py_err)
}

type Row = (u32, f64, Option<f64>, Option<f64>);

fn scored_rows(rows: &[Row]) -> Vec<ScoredTriple> {
    rows.iter()
        .enumerate()
        .map(|(i, &(r, s_ie, s_kbv, s_kbv_ie))| {
            let i = i as u32;
            ScoredTriple::new(
                Triple::new(EntityId(2 * i), RelationId(r), EntityId(2 * i + 1)),
                s_ie,
                s_kbv,
                s_kbv_ie,
            )
        })
        .collect()
}

/// L1-regularized logistic re-estimator over system confidences. Rows are
/// `(relation_index, s_ie, s_kbv or None, s_kbv_ie or None)`.
#[pyclass(name = "Stacker", module = "pykbpop")]
pub struct PyStacker {
    model: restack::StackerModel,
}

#[pymethods]
impl PyStacker {
    #[staticmethod]
    #[pyo3(signature = (rows, labels, num_relations, features = "all", l1 = 1e-3, max_epochs = 3000))]
    fn fit(
        rows: Vec<Row>,
        labels: Vec<bool>,
        num_relations: usize,
        features: &str,
        l1: f64,
        max_epochs: usize,
    ) -> PyResult<Self> {
        let cfg = FeatureConfig::new(feature_set(features)?, num_relations);
        let stacker = StackerConfig {
            l1,
            max_epochs,
            ..StackerConfig::default()
        };
        let model = restack::fit_stacker(&scored_rows(&rows), &labels, &cfg, &stacker).map_err(py_err)?;
        Ok(Self { model })
    }

    /// Re-estimated confidences, in input order.
    fn predict(&self, rows: Vec<Row>) -> PyResult<Vec<f64>> {
        let layout = restack::FeatureLayout::new(self.model.features.clone());
        scored_rows(&rows)
            .iter()
            .map(|st| layout.featurize(st).and_then(|x| self.model.predict(&x)))
            .collect::<kbpop::Result<_>>()
            .map_err(py_err)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.model.weights.clone()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.model.intercept
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        restack::FeatureLayout::new(self.model.features.clone()).names()
    }

    #[getter]
    fn zero_fraction(&self) -> f64 {
        self.model.zero_fraction
    }
}

/// Confidence-weighted cross-entropy `-sum s_i ln v_i` of one query.
#[pyfunction]
fn query_loss(v: Vec<f64>, s: Vec<f64>) -> PyResult<f64> {
    if v.len() != s.len() {
        return Err(PyValueError::new_err("prediction and target lengths differ"));
    }
    Ok(kbv::query_loss(&v, &s))
}

/// Feature count of a re-estimator configuration.
#[pyfunction]
#[pyo3(signature = (features, num_relations))]
fn feature_dim(features: &str, num_relations: usize) -> PyResult<usize> {
    Ok(restack::closed_form_dim(&FeatureConfig::new(feature_set(features)?, num_relations)))
}

/// One `(threshold, recall, precision)` point of a PR curve.
type PrPoint = (f64, f64, f64);

/// PR curve and trapezoidal AUC of scores against boolean labels. Returns
/// `(auc, [(threshold, recall, precision), ...])`.
#[pyfunction]
fn pr_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(f64, Vec<PrPoint>)> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    let quads: Vec<Quad> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| Quad {
            triple: Triple::new(EntityId(2 * i as u32), RelationId(0), EntityId(2 * i as u32 + 1)),
            confidence: s,
        })
        .collect();
    let truth: HashSet<Triple> = quads
        .iter()
        .zip(&labels)
        .filter(|(_, &y)| y)
        .map(|(q, _)| q.triple)
        .collect();
    let curve = eval::pr_curve(&quads, &truth, &eval::triple_set(&quads)).map_err(py_err)?;
    let points = curve.points.iter().map(|p| (p.threshold, p.recall, p.precision)).collect();
    Ok((curve.auc, points))
}

/// Spearman rank correlation with average ranks, or `None` when undefined.
#[pyfunction]
fn spearman(xs: Vec<f64>, ys: Vec<f64>) -> Option<f64> {
    eval::spearman(&xs, &ys)
}

/// Writes the synthetic benchmark to `out_dir` and returns its statistics.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 1, entities = 300, relations = 8, noise = 0.3))]
fn generate_synth(
    out_dir: PathBuf,
    seed: u64,
    entities: usize,
    relations: usize,
    noise: f64,
) -> PyResult<BTreeMap<String, usize>> {
    let data = synth::generate(&SynthConfig {
        seed,
        entities,
        relations,
        noise,
        ..SynthConfig::default()
    })
    .map_err(py_err)?;
    data.write_to(&out_dir).map_err(py_err)?;
    let s = &data.stats;
    Ok(BTreeMap::from([
        ("world_facts".into(), s.world_facts),
        ("kb_facts".into(), s.kb_facts),
        ("false_facts".into(), s.false_facts),
        ("fact_sentences".into(), s.fact_sentences),
        ("false_sentences".into(), s.false_sentences),
        ("distractor_sentences".into(), s.distractor_sentences),
        ("documents".into(), s.documents),
    ]))
}

/// Runs the staged pipeline. `config` is an optional TOML file whose paths
/// and seed are overridden by the keyword arguments. Returns
/// `[(stage, skipped), ...]` for the stages of this run.
#[pyfunction]
#[pyo3(signature = (workdir, kb = None, corpus = None, config = None, seed = None, stages = None, force = false))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    py: Python<'_>,
    workdir: PathBuf,
    kb: Option<PathBuf>,
    corpus: Option<PathBuf>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    stages: Option<String>,
    force: bool,
) -> PyResult<Vec<(String, bool)>> {
    let mut cfg = match config {
        Some(path) => PipelineConfig::load(path).map_err(py_err)?,
        None => PipelineConfig::default(),
    };
    cfg.paths.workdir = workdir;
    if let Some(kb) = kb {
        cfg.paths.kb = kb;
    }
    if corpus.is_some() {
        cfg.paths.corpus = corpus;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let stages = stages.as_deref().map(Stage::parse_list).transpose().map_err(py_err)?;
    let manifest = py
        .detach(|| pipeline::run(&cfg, &RunOptions { force, stages }))
        .map_err(py_err)?;
    Ok(manifest
        .stages
        .iter()
        .map(|r| (r.stage.name().to_owned(), r.skipped))
        .collect())
}

#[pymodule]
fn pykbpop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKnowledgeGraph>()?;
    m.add_class::<PyValidator>()?;
    m.add_class::<PyStacker>()?;
    m.add_function(wrap_pyfunction!(query_loss, m)?)?;
    m.add_function(wrap_pyfunction!(feature_dim, m)?)?;
    m.add_function(wrap_pyfunction!(pr_auc, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synth, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
