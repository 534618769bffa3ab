//! Per-segment metrics: accuracy at a threshold, F1-max, ROC/AUC and the
//! files that carry them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.json";
pub const ROC_FILE: &str = "roc.csv";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores with binary labels (1 = cry).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub provenance: String,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        Self::with_ids(ids, scores, labels, "")
    }

    pub fn with_ids(
        ids: Vec<String>,
        scores: Vec<f64>,
        labels: Vec<u8>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if scores.len() != labels.len() || ids.len() != scores.len() {
            return Err(Error::Contract(format!(
                "{} ids, {} scores and {} labels",
                ids.len(),
                scores.len(),
                labels.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score {s}")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Validation(format!("label {l} is not 0 or 1")));
        }
        Ok(ScoredSet {
            ids,
            scores,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (pos, self.len() - pos)
    }
}

fn require_nonempty(set: &ScoredSet) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Contract("metric over an empty score set".into()));
    }
    Ok(())
}

/// Fraction of items where (score ≥ threshold) agrees with the label.
pub fn accuracy_at(set: &ScoredSet, threshold: f64) -> Result<f64> {
    require_nonempty(set)?;
    let correct = set
        .scores
        .iter()
        .zip(&set.labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// F1 of the cry class at `threshold`; 0 when nothing is predicted positive.
pub fn f1_at(set: &ScoredSet, threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &l) in set.scores.iter().zip(&set.labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

fn distinct_sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Best F1 over thresholds {0, 1} and the midpoints of adjacent distinct
/// scores. Returns (f1, threshold); the lowest threshold wins ties.
pub fn f1_max(set: &ScoredSet) -> Result<(f64, f64)> {
    require_nonempty(set)?;
    if set.counts().0 == 0 {
        return Err(Error::Contract("F1-max needs at least one positive".into()));
    }
    let d = distinct_sorted(&set.scores);
    let mut thresholds = vec![0.0, 1.0];
    thresholds.extend(d.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in thresholds {
        let f = f1_at(set, t);
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC sweep over distinct score thresholds (descending) starting at
/// (0, 0) with an infinite threshold; AUC by the trapezoid rule.
pub fn roc_auc(set: &ScoredSet) -> Result<(Vec<RocPoint>, f64)> {
    require_nonempty(set)?;
    let (pos, neg) = set.counts();
    if pos == 0 || neg == 0 {
        return Err(Error::Contract("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the area in units of 1/(pos·neg), kept integral for exactness.
    let mut area2 = 0u128;
    let mut i = 0;
    while i < order.len() {
        let t = set.scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && set.scores[order[i]] == t {
            if set.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: t,
        });
    }
    let auc = area2 as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((points, auc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub positives: usize,
    pub threshold: f64,
    pub accuracy_at_default: f64,
    pub f1_max: f64,
    pub f1_max_threshold: f64,
    pub accuracy_at_f1_max: f64,
    pub auc: f64,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

/// All metrics of a set; `threshold` is the fixed operating point.
pub fn compute_report(set: &ScoredSet, threshold: f64) -> Result<MetricsReport> {
    let (f1, f1_thr) = f1_max(set)?;
    let (roc, auc) = roc_auc(set)?;
    Ok(MetricsReport {
        n: set.len(),
        positives: set.counts().0,
        threshold,
        accuracy_at_default: accuracy_at(set, threshold)?,
        f1_max: f1,
        f1_max_threshold: f1_thr,
        accuracy_at_f1_max: accuracy_at(set, f1_thr)?,
        auc,
        roc,
    })
}

/// Writes `metrics.json` (scalars, exact) and `roc.csv` (6 decimals).
pub fn emit_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    if report.roc.is_empty() {
        return Err(Error::Contract("report has no ROC points".into()));
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    let mpath = dir.join(METRICS_FILE);
    std::fs::write(&mpath, json + "\n")
        .map_err(|e| Error::io(format!("writing {}", mpath.display()), e))?;
    let mut csv = String::from("fpr,tpr,threshold\n");
    for p in &report.roc {
        let thr = if p.threshold.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.6}", p.threshold)
        };
        csv.push_str(&format!("{:.6},{:.6},{thr}\n", p.fpr, p.tpr));
    }
    let rpath = dir.join(ROC_FILE);
    std::fs::write(&rpath, csv).map_err(|e| Error::io(format!("writing {}", rpath.display()), e))
}

/// Reads back a report written by [`emit_report`].
pub fn read_report(dir: &Path) -> Result<MetricsReport> {
    let mpath = dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| Error::io(format!("reading {}", mpath.display()), e))?;
    let mut report: MetricsReport = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
    report.roc = read_roc_csv(&dir.join(ROC_FILE))?;
    Ok(report)
}

pub fn read_roc_csv(path: &Path) -> Result<Vec<RocPoint>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in r.deserialize::<RocPoint>() {
        out.push(rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    id: String,
    score: f64,
    label: u8,
}

/// Reads `id,score,label` rows.
pub fn read_scores_csv(path: &Path) -> Result<ScoredSet> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("reading {}", path.display()), io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    })?;
    let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.deserialize::<ScoreRow>() {
        let row = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        ids.push(row.id);
        scores.push(row.score);
        labels.push(row.label);
    }
    ScoredSet::with_ids(ids, scores, labels, path.display().to_string())
}

pub fn write_scores_csv(path: &Path, set: &ScoredSet) -> Result<()> {
    let mut text = String::from("id,score,label\n");
    for ((id, s), l) in set.ids.iter().zip(&set.scores).zip(&set.labels) {
        text.push_str(&format!("{id},{s},{l}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// P(score_pos > score_neg) + ½ P(tie), by enumerating all pairs.
    fn pairwise_auc(s: &ScoredSet) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in s.labels.iter().enumerate() {
            for (j, &lj) in s.labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    den += 1.0;
                    if s.scores[i] > s.scores[j] {
                        num += 1.0;
                    } else if s.scores[i] == s.scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_at(&set(&[0.9, 0.1], &[1, 0]), 0.5).unwrap(), 1.0);
        assert_eq!(accuracy_at(&set(&[0.9, 0.1], &[0, 1]), 0.5).unwrap(), 0.0);
        assert_eq!(accuracy_at(&set(&[0.5], &[1]), 0.5).unwrap(), 1.0);
        assert!(matches!(
            accuracy_at(&set(&[], &[]), 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1_max(&set(&[0.9, 0.7, 0.2], &[1, 1, 0])).unwrap().0, 1.0);
        let (f, t) = f1_max(&set(&[0.9, 0.8, 0.3], &[1, 0, 0])).unwrap();
        assert_eq!(f, 1.0);
        assert!(t > 0.8 && t <= 0.9);
        // Exhaustive scan over a fine grid never beats it.
        let s = set(&[0.9, 0.8, 0.3], &[1, 0, 0]);
        assert!((0..=1000).all(|i| f1_at(&s, i as f64 / 1000.0) <= f));
        assert_eq!(f1_max(&set(&[1.0, 0.0], &[1, 0])).unwrap(), (1.0, 0.5));
        assert!(f1_max(&set(&[0.3], &[0])).is_err());
    }

    #[test]
    fn roc_examples() {
        let (pts, auc) = roc_auc(&set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
        assert_eq!(
            (pts.last().unwrap().fpr, pts.last().unwrap().tpr),
            (1.0, 1.0)
        );
        assert_eq!(roc_auc(&set(&[0.4; 5], &[1, 0, 1, 0, 0])).unwrap().1, 0.5);
        let mixed = set(&[0.8, 0.4, 0.4, 0.7, 0.1, 0.6], &[1, 0, 1, 0, 0, 1]);
        assert!((roc_auc(&mixed).unwrap().1 - pairwise_auc(&mixed)).abs() < 1e-12);
        assert!(roc_auc(&set(&[0.1, 0.2], &[1, 1])).is_err());
    }

    #[test]
    fn report_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let s = set(&[0.91, 0.35, 0.35, 0.72, 0.12, 0.6], &[1, 0, 1, 0, 0, 1]);
        let report = compute_report(&s, DEFAULT_THRESHOLD).unwrap();
        emit_report(&report, tmp.path()).unwrap();
        let back = read_report(tmp.path()).unwrap();
        let scalars = |r: &MetricsReport| MetricsReport {
            roc: vec![],
            ..r.clone()
        };
        assert_eq!(scalars(&back), scalars(&report));
        assert_eq!(back.roc.len(), report.roc.len());
        for (a, b) in back.roc.iter().zip(&report.roc) {
            assert!((a.fpr - b.fpr).abs() <= 5e-7 && (a.tpr - b.tpr).abs() <= 5e-7);
            assert!(a.threshold == b.threshold || (a.threshold - b.threshold).abs() <= 5e-7);
        }
        assert!(back.roc.windows(2).all(|w| w[0].fpr <= w[1].fpr));
        let text = std::fs::read_to_string(tmp.path().join(ROC_FILE)).unwrap();
        assert!(text.starts_with("fpr,tpr,threshold\n0.000000,0.000000,inf\n"));
    }

    #[test]
    fn scores_csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("s.csv");
        let s = ScoredSet::with_ids(
            vec!["a".into(), "b".into()],
            vec![0.25, 0.1 + 0.2],
            vec![1, 0],
            "x",
        )
        .unwrap();
        write_scores_csv(&p, &s).unwrap();
        let back = read_scores_csv(&p).unwrap();
        assert_eq!(
            (back.ids, back.scores, back.labels),
            (s.ids, s.scores, s.labels)
        );
        std::fs::write(&p, "id,score,label\na,0.3,2\n").unwrap();
        assert!(read_scores_csv(&p).is_err());
        std::fs::write(&p, "id,score,label\na,zz,1\n").unwrap();
        assert!(matches!(read_scores_csv(&p), Err(Error::Parse { .. })));
    }

    fn scored_sets() -> impl Strategy<Value = ScoredSet> {
        prop::collection::vec((0u8..20, 0u8..2), 2..40).prop_filter_map("both classes", |v| {
            let labels: Vec<u8> = v.iter().map(|x| x.1).collect();
            if labels.contains(&0) && labels.contains(&1) {
                Some(ScoredSet::new(v.iter().map(|x| x.0 as f64 / 19.0).collect(), labels).unwrap())
            } else {
                None
            }
        })
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise(s in scored_sets()) {
            prop_assert!((roc_auc(&s).unwrap().1 - pairwise_auc(&s)).abs() <= 1e-9);
        }

        #[test]
        fn f1_max_dominates_default(s in scored_sets()) {
            prop_assert!(f1_max(&s).unwrap().0 >= f1_at(&s, 0.5));
        }

        #[test]
        fn roc_monotone_endpoints(s in scored_sets()) {
            let (pts, _) = roc_auc(&s).unwrap();
            prop_assert_eq!((pts[0].fpr, pts[0].tpr), (0.0, 0.0));
            let last = pts.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            prop_assert!(pts.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
        }

        #[test]
        fn accuracy_invariant_under_monotone_transform(s in scored_sets(), t in 0.0f64..1.0) {
            let transformed = ScoredSet::new(s.scores.iter().map(|v| (3.0 * v).exp()).collect(), s.labels.clone()).unwrap();
            prop_assert_eq!(accuracy_at(&s, t).unwrap(), accuracy_at(&transformed, (3.0 * t).exp()).unwrap());
        }
    }
}
