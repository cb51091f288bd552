//! Stage bodies. Each stage reads its declared inputs from disk and writes its
//! outputs, so any stage can be replaced by an external tool producing the
//! same files.

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{seed_offset, PipelineConfig};
use super::Layout;
use crate::error::{Error, Result};
use crate::eval::{
    ablation_table, bucket_analysis, render_svg, restrict_to_labeled, triple_set, AblationTable, BucketReport,
};
use crate::extraction::{extract, train_re, ReModel};
use crate::extraction::features::fnv1a;
use crate::kbv::{read_model, train_kbv, write_model, KbvModel};
use crate::kg::{load_quads, split, write_quad_records, KnowledgeGraph, Quad, Triple};
use crate::restack::{
    final_quads, fit_stacker, read_score_table, rescore, write_score_table, FeatureSet, ScoredTriple,
};
use crate::supervision::{build_context_index, label_bags, read_corpus, ContextIndex, Gazetteer};

/// Loads files on a growing shared vocabulary so ids agree across them.
pub struct Loader {
    vocab: KnowledgeGraph,
}

impl Loader {
    /// Starts from the KB file; returns the loader and the KB itself.
    pub fn from_kb(kb: &Path) -> Result<(Self, KnowledgeGraph)> {
        let kg = load_quads(kb, 1.0)?;
        Ok((Self { vocab: kg.empty_like() }, kg))
    }

    pub fn empty() -> Self {
        Self {
            vocab: KnowledgeGraph::new(),
        }
    }

    pub fn load(&mut self, path: &Path) -> Result<KnowledgeGraph> {
        let mut kg = self.vocab.empty_like();
        kg.extend_from_path(path, 1.0)?;
        self.vocab = kg.empty_like();
        Ok(kg)
    }

    pub fn vocab(&self) -> &KnowledgeGraph {
        &self.vocab
    }

    pub fn vocab_mut(&mut self) -> &mut KnowledgeGraph {
        &mut self.vocab
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn write_quads_to(path: &Path, vocab: &KnowledgeGraph, quads: impl IntoIterator<Item = Quad>) -> Result<()> {
    write_quad_records(vocab, quads, create(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json(v: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))
}

/// Splits the KB and builds the context index from the corpus.
pub fn supervise(cfg: &PipelineConfig, layout: &Layout) -> Result<Value> {
    let (_, kb) = Loader::from_kb(&cfg.paths.kb)?;
    let s = &cfg.split;
    let parts = split(&kb, (s.train, s.valid, s.test), cfg.seed + seed_offset::SPLIT)?;
    parts.train.save_quads(layout.kb_train())?;
    parts.validation.save_quads(layout.kb_valid())?;
    parts.test.save_quads(layout.kb_test())?;

    let (contexts, pairs, docs, skipped) = match &cfg.paths.corpus {
        Some(corpus_path) => {
            let corpus = read_corpus(open(corpus_path)?)?;
            let gazetteer = Gazetteer::build(&kb)?;
            let (index, stats) = build_context_index(&corpus, &gazetteer, cfg.supervise.window)?;
            index.write_dump(&kb, create(&layout.contexts())?)?;
            (index.contexts().len(), index.pairs().len(), stats.documents, corpus.skipped)
        }
        None => {
            create(&layout.contexts())?;
            (0, 0, 0, 0)
        }
    };
    info!("supervise: {contexts} contexts over {pairs} pairs from {docs} documents");
    Ok(json!({
        "kb_train": parts.train.len(),
        "kb_valid": parts.validation.len(),
        "kb_test": parts.test.len(),
        "contexts": contexts,
        "pairs": pairs,
        "documents": docs,
        "skipped_lines": skipped,
    }))
}

fn read_index(kb: &KnowledgeGraph, path: &Path) -> Result<ContextIndex> {
    ContextIndex::read_dump(kb, open(path)?)
}

pub fn train_extractor(cfg: &PipelineConfig, layout: &Layout) -> Result<Value> {
    let (mut loader, kb) = Loader::from_kb(&cfg.paths.kb)?;
    let kb_train = loader.load(&layout.kb_train())?;
    let index = read_index(&kb, &layout.contexts())?;
    let bags = label_bags(&index, &kb_train, cfg.re.na_ratio, cfg.seed + seed_offset::LABEL)?;
    let na = bags.iter().filter(|b| b.is_na()).count();
    let (model, trace) = train_re(&bags, kb.num_relations(), &cfg.re.to_config(cfg.seed + seed_offset::RE))?;
    model.save(layout.re_model())?;
    info!("train-re: {} bags ({na} NA), final loss {:?}", bags.len(), trace.last());
    Ok(json!({
        "bags": bags.len(),
        "na_bags": na,
        "final_loss": trace.last(),
    }))
}

pub fn extract_quads(cfg: &PipelineConfig, layout: &Layout) -> Result<Value> {
    let (mut loader, kb) = Loader::from_kb(&cfg.paths.kb)?;
    let q_ie = match &cfg.paths.external_quads {
        Some(path) => {
            let q = loader.load(path)?;
            if q.num_relations() != kb.num_relations() {
                return Err(Error::InvalidArgument(format!(
                    "{} uses relations missing from the KB",
                    path.display()
                )));
            }
            write_quads_to(&layout.q_ie(), loader.vocab(), q.sorted_quads())?;
            q
        }
        None => {
            let model = ReModel::load(layout.re_model())?;
            let index = read_index(&kb, &layout.contexts())?;
            let q = extract(&model, &index, &kb, cfg.extract.min_confidence)?;
            q.save_quads(layout.q_ie())?;
            q
        }
    };
    info!("extract: {} quads", q_ie.len());
    Ok(json!({ "quads": q_ie.len(), "external": cfg.paths.external_quads.is_some() }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KbvSource {
    Kb,
    Ie,
}

pub fn train_validator(cfg: &PipelineConfig, layout: &Layout, source: KbvSource) -> Result<Value> {
    let (mut loader, kb) = Loader::from_kb(&cfg.paths.kb)?;
    let (input, seed) = match source {
        KbvSource::Kb => (layout.kb_train(), cfg.seed + seed_offset::KBV_KB),
        KbvSource::Ie => {
            // Entities new to the extraction output extend the vocabulary after the KB.
            (layout.q_ie(), cfg.seed + seed_offset::KBV_IE)
        }
    };
    let quads = loader.load(&input)?;
    let trained = train_kbv(quads.quads(), kb.num_relations(), &cfg.kbv.to_config(seed))?;
    let out = layout.kbv_model(source);
    let mut w = std::io::BufWriter::new(create(&out)?);
    write_model(&trained.model, &mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(&out, e))?;
    info!(
        "train-kbv: {} quads, {} kept entities, final loss {:?}",
        quads.len(),
        trained.model.vocab.len(),
        trained.loss_trace.last()
    );
    Ok(json!({
        "quads": quads.len(),
        "kept_entities": trained.model.vocab.len(),
        "final_loss": trained.loss_trace.last(),
    }))
}

fn load_kbv(path: &Path, num_relations: usize) -> Result<KbvModel> {
    let model = read_model(&mut std::io::BufReader::new(open(path)?))?;
    if model.num_relations != num_relations {
        return Err(Error::DimensionMismatch {
            expected: num_relations,
            actual: model.num_relations,
        });
    }
    Ok(model)
}

/// Attaches both validation confidences to every extracted triple.
pub fn score(cfg: &PipelineConfig, layout: &Layout) -> Result<Value> {
    let (mut loader, kb) = Loader::from_kb(&cfg.paths.kb)?;
    let q_ie = loader.load(&layout.q_ie())?;
    let kbv = load_kbv(&layout.kbv_model(KbvSource::Kb), kb.num_relations())?;
    let kbv_ie = load_kbv(&layout.kbv_model(KbvSource::Ie), kb.num_relations())?;
    let quads = q_ie.sorted_quads();
    let triples: Vec<Triple> = quads.iter().map(|q| q.triple).collect();
    let s_kbv = kbv.score_triples(&triples);
    let s_kbv_ie = kbv_ie.score_triples(&triples);
    let rows: Vec<ScoredTriple> = quads
        .iter()
        .zip(s_kbv.into_iter().zip(s_kbv_ie))
        .map(|(q, (a, b))| ScoredTriple::new(q.triple, q.confidence, a.ok(), b.ok()))
        .collect();
    write_score_table(loader.vocab(), &rows, create(&layout.scores())?)?;
    let missing = |f: fn(&ScoredTriple) -> bool| rows.iter().filter(|r| f(r)).count();
    let report = json!({
        "triples": rows.len(),
        "missing_kbv": missing(|r| r.s_kbv.is_none()),
        "missing_kbv_ie": missing(|r| r.s_kbv_ie.is_none()),
    });
    info!("score: {report}");
    Ok(report)
}

/// Which part of the extraction output a triple serves: stacker training or evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pool {
    Stacker,
    Eval,
}

/// Triples of the training KB are excluded. Validation-KB triples train the
/// stacker, test-KB triples are evaluated, and the remaining (unlabeled)
/// triples are divided in proportion to the validation and test fractions
/// by a seeded hash of their labels.
pub fn assign_pool(
    labels: (&str, &str, &str),
    t: &Triple,
    kb: (&KnowledgeGraph, &KnowledgeGraph, &KnowledgeGraph),
    valid_share: f64,
    seed: u64,
) -> Option<Pool> {
    let (train, valid, test) = kb;
    if train.contains(t) {
        None
    } else if valid.contains(t) {
        Some(Pool::Stacker)
    } else if test.contains(t) {
        Some(Pool::Eval)
    } else {
        let key = format!("{}\t{}\t{}\t{seed}", labels.0, labels.1, labels.2);
        let u = fnv1a(key.as_bytes()) as f64 / u64::MAX as f64;
        Some(if u < valid_share { Pool::Stacker } else { Pool::Eval })
    }
}

pub fn restack(cfg: &PipelineConfig, layout: &Layout) -> Result<Value> {
    let (mut loader, kb) = Loader::from_kb(&cfg.paths.kb)?;
    let train = loader.load(&layout.kb_train())?;
    let valid = loader.load(&layout.kb_valid())?;
    let test = loader.load(&layout.kb_test())?;
    let scored = read_score_table(open(&layout.scores())?, loader.vocab_mut())?;
    let vocab = loader.vocab().empty_like();
    let seed = cfg.seed + seed_offset::RESTACK;
    let valid_share = cfg.split.valid / (cfg.split.valid + cfg.split.test);

    let (mut stack, mut labels, mut eval_rows) = (Vec::new(), Vec::new(), Vec::new());
    for st in &scored {
        match assign_pool(vocab.triple_labels(&st.triple), &st.triple, (&train, &valid, &test), valid_share, seed) {
            Some(Pool::Stacker) => {
                stack.push(*st);
                labels.push(valid.contains(&st.triple));
            }
            Some(Pool::Eval) => eval_rows.push(*st),
            None => {}
        }
    }
    let eval_set: HashSet<Triple> = eval_rows.iter().map(|s| s.triple).collect();
    let mut ie_rows: Vec<Quad> = eval_rows
        .iter()
        .map(|s| Quad {
            triple: s.triple,
            confidence: s.s_ie,
        })
        .collect();
    ie_rows.sort_by_key(|q| q.triple);
    write_quads_to(&layout.eval_variant(FeatureSet::Ie), &vocab, ie_rows.iter().copied())?;
    write_quads_to(&layout.eval_base(), &vocab, ie_rows.iter().copied())?;

    let sets = cfg.restack.sets()?;
    let mut models = Vec::new();
    let mut final_all = None;
    for &set in &sets {
        let features = cfg.restack.feature_config(set, kb.num_relations());
        let model = fit_stacker(&stack, &labels, &features, &cfg.restack.stacker_config(seed))
            .map_err(|e| Error::InvalidArgument(format!("stacker {}: {e}", set.label())))?;
        model.save(layout.stacker_model(set))?;
        let rescored = rescore(&model, &scored)?;
        let quads = final_quads(&rescored);
        write_quads_to(&layout.final_quads(set), &vocab, quads.iter().copied())?;
        let eval_quads = quads.iter().filter(|q| eval_set.contains(&q.triple)).copied();
        write_quads_to(&layout.eval_variant(set), &vocab, eval_quads)?;
        if set == FeatureSet::All || final_all.is_none() {
            final_all = Some(quads);
        }
        models.push(json!({
            "set": set.label(),
            "dim": model.weights.len(),
            "zero_fraction": model.zero_fraction,
            "epochs": model.epochs,
            "converged": model.converged,
        }));
    }
    write_quads_to(&layout.q_final(), &vocab, final_all.unwrap_or_default())?;
    let positives = labels.iter().filter(|&&l| l).count();
    info!(
        "restack: {} stacker triples ({positives} positive), {} evaluation triples",
        stack.len(),
        eval_rows.len()
    );
    Ok(json!({
        "stacker_triples": stack.len(),
        "stacker_positives": positives,
        "eval_triples": eval_rows.len(),
        "models": models,
    }))
}

/// One scored file in an evaluation.
#[derive(Clone, Debug)]
pub struct EvalInput {
    pub name: String,
    pub slug: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalSummary {
    pub base: usize,
    pub true_in_base: usize,
    pub auc: Vec<(String, f64)>,
    pub buckets: BucketReport,
    #[serde(skip)]
    pub table: AblationTable,
}

/// Evaluates scored files against a truth file. Connectivity for the bucket
/// analysis is counted over `support` (the extraction output) when given.
/// The first variant is the bucket baseline.
pub fn evaluate_files(
    kb: Option<&Path>,
    variants: &[EvalInput],
    truth: &Path,
    base: &Path,
    support: Option<&Path>,
    negatives: Option<&Path>,
    out_dir: &Path,
) -> Result<EvalSummary> {
    if variants.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut loader = match kb {
        Some(kb) => Loader::from_kb(kb)?.0,
        None => Loader::empty(),
    };
    let support = support.map(|p| loader.load(p)).transpose()?;
    let base_kg = loader.load(base)?;
    let truth_set = triple_set(loader.load(truth)?.quads());
    let negatives = negatives.map(|p| loader.load(p)).transpose()?;
    let mut scored = Vec::with_capacity(variants.len());
    for v in variants {
        let kg = loader.load(&v.path)?;
        let mut quads = kg.quads().to_vec();
        if let Some(neg) = &negatives {
            quads = restrict_to_labeled(&quads, &truth_set, &triple_set(neg.quads()));
        }
        scored.push((v.name.clone(), quads));
    }
    let mut base_quads = base_kg.quads().to_vec();
    if let Some(neg) = &negatives {
        base_quads = restrict_to_labeled(&base_quads, &truth_set, &triple_set(neg.quads()));
    }
    let base_set = triple_set(&base_quads);

    let table = if scored.len() >= 2 {
        ablation_table(&scored, &truth_set, &base_set)?
    } else {
        // A single variant still gets its curve.
        let doubled = [scored[0].clone(), scored[0].clone()];
        let mut t = ablation_table(&doubled, &truth_set, &base_set)?;
        t.rows.truncate(1);
        t.curves.truncate(1);
        t
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (v, (_, curve)) in variants.iter().zip(&table.curves) {
        write_text(&out_dir.join(format!("pr_{}.csv", v.slug)), &curve.to_csv())?;
    }
    write_text(&out_dir.join("pr.svg"), &render_svg(&table.curves))?;
    write_text(&out_dir.join("ablation.csv"), &table.to_csv())?;
    write_text(&out_dir.join("ablation.txt"), &table.to_text())?;

    let by_name = scored.iter().cloned().collect();
    let support_quads = support.as_ref().map(|s| s.quads());
    let buckets = bucket_analysis(&by_name, &truth_set, &scored[0].0, support_quads)?;
    write_text(&out_dir.join("buckets.csv"), &buckets.to_csv())?;

    let summary = EvalSummary {
        base: base_set.len(),
        true_in_base: base_set.iter().filter(|t| truth_set.contains(t)).count(),
        auc: table.rows.iter().map(|r| (r.name.clone(), r.auc)).collect(),
        buckets,
        table,
    };
    write_text(&out_dir.join("summary.json"), &(to_json(&summary)? + "\n"))?;
    Ok(summary)
}

/// Pipeline variants in ablation order: the extractor alone, then every fitted feature set.
pub fn pipeline_variants(cfg: &PipelineConfig, layout: &Layout) -> Result<Vec<EvalInput>> {
    let mut sets = vec![FeatureSet::Ie];
    sets.extend(cfg.restack.sets()?.into_iter().filter(|s| *s != FeatureSet::Ie));
    Ok(sets
        .into_iter()
        .map(|set| EvalInput {
            name: set.label().to_owned(),
            slug: set.slug().to_owned(),
            path: layout.eval_variant(set),
        })
        .collect())
}

pub fn evaluate(cfg: &PipelineConfig, layout: &Layout) -> Result<Value> {
    let variants = pipeline_variants(cfg, layout)?;
    let summary = evaluate_files(
        Some(&cfg.paths.kb),
        &variants,
        &layout.kb_test(),
        &layout.eval_base(),
        Some(&layout.q_ie()),
        cfg.paths.negatives.as_deref(),
        &layout.eval_dir(),
    )?;
    info!("eval:\n{}", summary.table.to_text());
    Ok(json!({ "auc": summary.auc, "base": summary.base, "true_in_base": summary.true_in_base }))
}
