//! Positive-unlabeled evaluation: PR curves with trapezoidal AUC, ablation
//! tables and the minimum-connectivity bucket analysis.

mod svg;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

pub use svg::render_svg;

use crate::error::{Error, Result};
use crate::kg::{EntityId, Quad, Triple};

/// Published NYT-FB AUCs for the extractor alone and the full fusion. Kept for
/// reference only; desk-scale runs are not expected to reproduce them.
pub const REFERENCE_NYT_FB_IE_AUC: f64 = 0.499;
pub const REFERENCE_NYT_FB_ALL_AUC: f64 = 0.630;

/// Connectivity bucket edges `[lo, hi)`; the last bucket is unbounded.
pub const BUCKETS: [(usize, Option<usize>); 5] = [
    (1, Some(2)),
    (2, Some(4)),
    (4, Some(8)),
    (8, Some(16)),
    (16, None),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrCurve {
    /// One point per distinct confidence, in descending confidence order.
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub total_true: usize,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,recall,precision\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.recall, p.precision);
        }
        s
    }
}

pub fn triple_set(quads: &[Quad]) -> HashSet<Triple> {
    quads.iter().map(|q| q.triple).collect()
}

/// PR curve of `scored` against `truth`, with recall measured over the true
/// triples of `base`. Tied confidences form a single threshold step. The
/// curve is integrated by trapezoids starting at `(0, first precision)`.
pub fn pr_curve(scored: &[Quad], truth: &HashSet<Triple>, base: &HashSet<Triple>) -> Result<PrCurve> {
    if let Some(q) = scored.iter().find(|q| !base.contains(&q.triple)) {
        return Err(Error::InvalidArgument(format!(
            "scored triple {:?} is not in the evaluation base",
            q.triple
        )));
    }
    if let Some(q) = scored.iter().find(|q| !q.confidence.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite confidence for {:?}", q.triple)));
    }
    let total_true = base.iter().filter(|t| truth.contains(t)).count();
    if total_true == 0 {
        return Err(Error::InvalidArgument("no true triples in the evaluation base".into()));
    }
    let mut order: Vec<(f64, bool)> = scored
        .iter()
        .map(|q| (q.confidence, truth.contains(&q.triple)))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = order[i].0;
        while i < order.len() && order[i].0 == threshold {
            seen += 1;
            tp += order[i].1 as usize;
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            recall: tp as f64 / total_true as f64,
            precision: tp as f64 / seen as f64,
        });
    }
    Ok(PrCurve {
        auc: trapezoid_auc(&points),
        points,
        total_true,
    })
}

fn trapezoid_auc(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (mut r0, mut p0) = (0.0, first.precision);
    let mut auc = 0.0;
    for p in points {
        auc += (p.recall - r0) * (p.precision + p0) / 2.0;
        r0 = p.recall;
        p0 = p.precision;
    }
    auc
}

/// Keeps only triples with a known label when an explicit negative set is
/// available, so unlabeled triples no longer count as false positives.
pub fn restrict_to_labeled(scored: &[Quad], truth: &HashSet<Triple>, negatives: &HashSet<Triple>) -> Vec<Quad> {
    scored
        .iter()
        .filter(|q| truth.contains(&q.triple) || negatives.contains(&q.triple))
        .copied()
        .collect()
}

/// Number of triples in `support` that contain each entity (self-loops once).
pub fn connectivity_counts(support: &[Quad]) -> HashMap<EntityId, usize> {
    let mut counts = HashMap::new();
    for q in support {
        *counts.entry(q.triple.subject).or_insert(0) += 1;
        if q.triple.object != q.triple.subject {
            *counts.entry(q.triple.object).or_insert(0) += 1;
        }
    }
    counts
}

pub fn min_connectivity(t: &Triple, counts: &HashMap<EntityId, usize>) -> usize {
    let c = |e| counts.get(&e).copied().unwrap_or(0);
    c(t.subject).min(c(t.object))
}

/// Bucket of a minimum connectivity; values below 1 fall into the first bucket.
pub fn bucket_index(min_conn: usize) -> usize {
    BUCKETS
        .iter()
        .position(|&(_, hi)| hi.is_none_or(|h| min_conn < h))
        .expect("last bucket is unbounded")
}

pub fn bucket_label(i: usize) -> String {
    match BUCKETS[i] {
        (lo, Some(hi)) => format!("[{lo},{hi})"),
        (lo, None) => format!("[{lo},inf)"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketRow {
    pub range: String,
    pub count: usize,
    pub num_true: usize,
    /// AUC per variant; `None` when the bucket has no true triple.
    pub auc: BTreeMap<String, Option<f64>>,
    /// AUC minus the baseline's AUC per variant.
    pub delta: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketReport {
    pub baseline: String,
    pub rows: Vec<BucketRow>,
}

impl BucketReport {
    pub fn to_csv(&self) -> String {
        let names: Vec<&String> = self.rows.first().map(|r| r.auc.keys().collect()).unwrap_or_default();
        let mut s = String::from("bucket,count,num_true");
        for n in &names {
            let _ = write!(s, ",auc_{n}");
        }
        for n in &names {
            let _ = write!(s, ",delta_{n}");
        }
        s.push('\n');
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.6}"));
        for r in &self.rows {
            let _ = write!(s, "{},{},{}", r.range, r.count, r.num_true);
            for n in &names {
                let _ = write!(s, ",{}", fmt(r.auc[*n]));
            }
            for n in &names {
                let _ = write!(s, ",{}", fmt(r.delta[*n]));
            }
            s.push('\n');
        }
        s
    }

    /// Per-bucket delta of one variant, in bucket order.
    pub fn deltas(&self, variant: &str) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| r.delta.get(variant).copied().flatten())
            .collect()
    }
}

/// Splits the base into minimum-connectivity buckets and reports each
/// variant's AUC per bucket, with its delta against `baseline`.
/// Connectivity is counted over `support`, or over the scored triples of the
/// baseline when no support set is given.
pub fn bucket_analysis(
    variants: &BTreeMap<String, Vec<Quad>>,
    truth: &HashSet<Triple>,
    baseline: &str,
    support: Option<&[Quad]>,
) -> Result<BucketReport> {
    let base_quads = variants
        .get(baseline)
        .ok_or_else(|| Error::InvalidArgument(format!("baseline variant `{baseline}` missing")))?;
    let base = triple_set(base_quads);
    for (name, v) in variants {
        if v.len() != base.len() || v.iter().any(|q| !base.contains(&q.triple)) {
            return Err(Error::InvalidArgument(format!(
                "variant `{name}` does not score the same triples as `{baseline}`"
            )));
        }
    }
    let counts = connectivity_counts(support.unwrap_or(base_quads));
    let bucket_of: HashMap<Triple, usize> = base
        .iter()
        .map(|t| (*t, bucket_index(min_connectivity(t, &counts))))
        .collect();

    let per_variant: BTreeMap<&String, Vec<Option<f64>>> = variants
        .par_iter()
        .map(|(name, quads)| {
            let aucs = (0..BUCKETS.len())
                .map(|b| {
                    let subset: Vec<Quad> = quads.iter().filter(|q| bucket_of[&q.triple] == b).copied().collect();
                    let sub_base = triple_set(&subset);
                    pr_curve(&subset, truth, &sub_base).ok().map(|c| c.auc)
                })
                .collect();
            (name, aucs)
        })
        .collect();

    let rows = (0..BUCKETS.len())
        .map(|b| {
            let members: Vec<&Triple> = bucket_of.iter().filter(|(_, &i)| i == b).map(|(t, _)| t).collect();
            let base_auc = per_variant[&baseline.to_owned()][b];
            let auc: BTreeMap<String, Option<f64>> =
                per_variant.iter().map(|(n, a)| ((*n).clone(), a[b])).collect();
            let delta = auc
                .iter()
                .map(|(n, a)| (n.clone(), a.zip(base_auc).map(|(x, y)| x - y)))
                .collect();
            BucketRow {
                range: bucket_label(b),
                count: members.len(),
                num_true: members.iter().filter(|t| truth.contains(t)).count(),
                auc,
                delta,
            }
        })
        .collect();
    Ok(BucketReport {
        baseline: baseline.to_owned(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub auc: f64,
    pub scored: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub curves: Vec<(String, PrCurve)>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,auc,scored\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{}", r.name, r.auc, r.scored);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(7);
        let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "variant", "AUC", "scored");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>8.4}  {:>8}", r.name, r.auc, r.scored);
        }
        s
    }

    pub fn auc(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.auc)
    }
}

/// AUC of every variant, evaluated in parallel; rows keep the input order.
pub fn ablation_table(
    variants: &[(String, Vec<Quad>)],
    truth: &HashSet<Triple>,
    base: &HashSet<Triple>,
) -> Result<AblationTable> {
    if variants.len() < 2 {
        return Err(Error::InvalidArgument("an ablation needs at least two variants".into()));
    }
    let curves = variants
        .par_iter()
        .map(|(name, quads)| Ok((name.clone(), pr_curve(quads, truth, base)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = variants
        .iter()
        .zip(&curves)
        .map(|((name, quads), (_, c))| AblationRow {
            name: name.clone(),
            auc: c.auc,
            scored: quads.len(),
        })
        .collect();
    Ok(AblationTable { rows, curves })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// side is constant or fewer than two points are given.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::RelationId;

    fn q(i: u32, c: f64) -> Quad {
        Quad::new(Triple::new(EntityId(i), RelationId(0), EntityId(i + 1000)), c).unwrap()
    }

    fn setup(labels: &[bool]) -> (Vec<Quad>, HashSet<Triple>, HashSet<Triple>) {
        let n = labels.len();
        let quads: Vec<Quad> = (0..n).map(|i| q(i as u32, 1.0 - i as f64 / n as f64)).collect();
        let truth = quads
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l)
            .map(|(q, _)| q.triple)
            .collect();
        let base = triple_set(&quads);
        (quads, truth, base)
    }

    #[test]
    fn perfect_ranking_has_unit_auc() {
        let (quads, truth, base) = setup(&[true, true, true, false, false]);
        assert_eq!(pr_curve(&quads, &truth, &base).unwrap().auc, 1.0);
    }

    #[test]
    fn four_step_hand_enumeration() {
        let (quads, truth, base) = setup(&[true, false, true, false]);
        let c = pr_curve(&quads, &truth, &base).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.recall, p.precision)).collect();
        assert_eq!(pts, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0), (1.0, 0.5)]);
        let expected = 0.5 * 1.0 + 0.5 * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((c.auc - expected).abs() < 1e-15);
    }

    #[test]
    fn ties_form_one_step() {
        let quads = vec![q(0, 0.5), q(1, 0.5), q(2, 0.1)];
        let truth: HashSet<Triple> = [quads[1].triple].into();
        let base = triple_set(&quads);
        let c = pr_curve(&quads, &truth, &base).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.points[0].precision, 0.5);
        assert_eq!(c.points[0].recall, 1.0);
    }

    #[test]
    fn errors() {
        let (quads, _, base) = setup(&[false, false]);
        assert!(pr_curve(&quads, &HashSet::new(), &base).is_err());
        let truth: HashSet<Triple> = [quads[0].triple].into();
        assert!(pr_curve(&quads, &truth, &HashSet::from([quads[0].triple])).is_err());
    }

    #[test]
    fn recall_basis_counts_unscored_truths() {
        let (quads, truth, base) = setup(&[true, false, true]);
        let c = pr_curve(&quads[..2], &truth, &base).unwrap();
        assert_eq!(c.points.last().unwrap().recall, 0.5);
    }

    #[test]
    fn bucket_examples() {
        let mut counts = HashMap::new();
        counts.insert(EntityId(0), 5);
        counts.insert(EntityId(1), 9);
        let t = Triple::new(EntityId(0), RelationId(0), EntityId(1));
        assert_eq!(bucket_index(min_connectivity(&t, &counts)), 2);
        assert_eq!(bucket_label(2), "[4,8)");
        counts.insert(EntityId(1), 1);
        assert_eq!(bucket_index(min_connectivity(&t, &counts)), 0);
        assert_eq!(bucket_index(16), 4);
        assert_eq!(bucket_index(15), 3);
        assert_eq!(bucket_index(2), 1);
    }

    #[test]
    fn bucket_partition_and_empty_buckets() {
        let (quads, truth, _) = setup(&[true, false, true, false, true]);
        let variants: BTreeMap<String, Vec<Quad>> =
            [("IE".to_owned(), quads.clone()), ("ALL".to_owned(), quads.clone())].into();
        let report = bucket_analysis(&variants, &truth, "IE", None).unwrap();
        assert_eq!(report.rows.iter().map(|r| r.count).sum::<usize>(), quads.len());
        assert_eq!(report.rows[0].count, quads.len());
        assert_eq!(report.rows[0].delta["ALL"], Some(0.0));
        assert_eq!(report.rows[4].auc["ALL"], None);
        assert!(report.to_csv().contains("NA"));
    }

    #[test]
    fn ablation_identical_variants() {
        let (quads, truth, base) = setup(&[true, false, true, false]);
        let t = ablation_table(
            &[("a".into(), quads.clone()), ("b".into(), quads.clone())],
            &truth,
            &base,
        )
        .unwrap();
        assert_eq!(t.rows[0].auc, t.rows[1].auc);
        assert_eq!(t.to_csv().lines().count(), 3);
        assert!(ablation_table(&[("a".into(), quads)], &truth, &base).is_err());
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
    }

    #[test]
    fn negatives_filter() {
        let (quads, truth, _) = setup(&[true, false, false]);
        let neg: HashSet<Triple> = [quads[2].triple].into();
        let kept = restrict_to_labeled(&quads, &truth, &neg);
        assert_eq!(kept.len(), 2);
    }
}
