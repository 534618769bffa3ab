use std::fmt;
use std::str::FromStr;

use super::topk_by_magnitude;
use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Clamp applied to the averaged score before the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossVariant {
    /// Score ranking on bag maxima plus smoothness and sparsity.
    Eq3ScoreMil,
    /// Top-k score cross-entropy plus the magnitude hinge and both regularizers.
    Eq6Rtfm,
}

impl LossVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Eq3ScoreMil => "eq3_score_mil",
            LossVariant::Eq6Rtfm => "eq6_rtfm",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq3_score_mil" => Ok(LossVariant::Eq3ScoreMil),
            "eq6_rtfm" => Ok(LossVariant::Eq6Rtfm),
            other => Err(Error::Config(format!(
                "unknown loss variant '{other}' (expected eq3_score_mil or eq6_rtfm)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub k: usize,
    pub variant: LossVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 100.0,
            alpha: 1e-4,
            lambda1: 8e-4,
            lambda2: 8e-4,
            k: 2,
            variant: LossVariant::Eq6Rtfm,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Config(format!(
                "margin must be > 0, got {}",
                self.margin
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("top-k must be at least 1".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-segment scores and refined-feature magnitudes of one bag.
#[derive(Clone, Debug, PartialEq)]
pub struct BagScores {
    pub scores: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl BagScores {
    pub fn new(scores: Vec<f64>, magnitudes: Vec<f64>) -> Result<Self> {
        if scores.is_empty() || scores.len() != magnitudes.len() {
            return Err(Error::Contract(format!(
                "bag scores ({}) and magnitudes ({}) must be non-empty and equal length",
                scores.len(),
                magnitudes.len()
            )));
        }
        Ok(BagScores { scores, magnitudes })
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// max(0, 1 − max abnormal score + max normal score).
pub fn mil_ranking_loss(scores_a: &[f64], scores_n: &[f64]) -> f64 {
    (1.0 - max_of(scores_a) + max_of(scores_n)).max(0.0)
}

pub fn smoothness(scores_a: &[f64]) -> f64 {
    scores_a.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
}

pub fn sparsity(scores_a: &[f64]) -> f64 {
    scores_a.iter().map(|s| s * s).sum()
}

pub fn total_loss_eq3(scores_a: &[f64], scores_n: &[f64], cfg: &LossConfig) -> f64 {
    mil_ranking_loss(scores_a, scores_n)
        + cfg.lambda1 * smoothness(scores_a)
        + cfg.lambda2 * sparsity(scores_a)
}

fn topk_mean(values: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64
}

/// Hinge on squared mean top-k magnitudes: max(0, m − (s_a − s_n)).
pub fn magnitude_loss(mags_a: &[f64], mags_n: &[f64], cfg: &LossConfig) -> Result<f64> {
    let sa = topk_mean(mags_a, &topk_by_magnitude(mags_a, cfg.k)?).powi(2);
    let sn = topk_mean(mags_n, &topk_by_magnitude(mags_n, cfg.k)?).powi(2);
    Ok((cfg.margin - (sa - sn)).max(0.0))
}

/// Cross-entropy of the mean score over the top-k-magnitude segments.
pub fn topk_score_bce(scores: &[f64], mags: &[f64], y: u8, k: usize) -> Result<f64> {
    if scores.len() != mags.len() {
        return Err(Error::Contract(
            "scores and magnitudes differ in length".into(),
        ));
    }
    let s = topk_mean(scores, &topk_by_magnitude(mags, k)?).clamp(BCE_EPS, 1.0 - BCE_EPS);
    Ok(if y == 1 { -s.ln() } else { -(1.0 - s).ln() })
}

pub fn total_loss_eq6(a: &BagScores, n: &BagScores, cfg: &LossConfig) -> Result<f64> {
    let ls = topk_score_bce(&a.scores, &a.magnitudes, 1, cfg.k)?
        + topk_score_bce(&n.scores, &n.magnitudes, 0, cfg.k)?;
    let lf = magnitude_loss(&a.magnitudes, &n.magnitudes, cfg)?;
    Ok(ls
        + cfg.alpha * lf
        + cfg.lambda1 * smoothness(&a.scores)
        + cfg.lambda2 * sparsity(&a.scores))
}

/// Loss of one abnormal/normal pair under `cfg.variant`.
pub fn total_loss(a: &BagScores, n: &BagScores, cfg: &LossConfig) -> Result<f64> {
    match cfg.variant {
        LossVariant::Eq3ScoreMil => Ok(total_loss_eq3(&a.scores, &n.scores, cfg)),
        LossVariant::Eq6Rtfm => total_loss_eq6(a, n, cfg),
    }
}

/// Graph handles of one bag: length-S score and magnitude vectors.
#[derive(Clone, Copy, Debug)]
pub struct BagVars {
    pub scores: Var,
    pub magnitudes: Var,
}

fn regularizers<T: Real>(g: &mut Graph<T>, scores_a: Var, cfg: &LossConfig) -> Result<Var> {
    let s = g.shape(scores_a)[0];
    let smooth = if s > 1 {
        let next: Vec<usize> = (1..s).collect();
        let prev: Vec<usize> = (0..s - 1).collect();
        let hi = g.select(scores_a, &next)?;
        let lo = g.select(scores_a, &prev)?;
        let d = g.sub(hi, lo)?;
        let d2 = g.square(d);
        g.sum(d2)
    } else {
        g.input(Tensor::scalar(T::ZERO))
    };
    let sq = g.square(scores_a);
    let sparse = g.sum(sq);
    let smooth = g.scale(smooth, cfg.lambda1);
    let sparse = g.scale(sparse, cfg.lambda2);
    g.add(smooth, sparse)
}

pub fn eq3_graph<T: Real>(
    g: &mut Graph<T>,
    scores_a: Var,
    scores_n: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let ma = g.max(scores_a)?;
    let mn = g.max(scores_n)?;
    let d = g.sub(mn, ma)?;
    let d = g.add_scalar(d, 1.0);
    let hinge = g.relu(d);
    let reg = regularizers(g, scores_a, cfg)?;
    g.add(hinge, reg)
}

fn topk_mean_graph<T: Real>(g: &mut Graph<T>, values: Var, by: Var, k: usize) -> Result<Var> {
    let idx = topk_by_magnitude(g.value(by).data(), k)?;
    let picked = g.select(values, &idx)?;
    g.mean(picked, 0)
}

fn bce_graph<T: Real>(g: &mut Graph<T>, bag: BagVars, y: u8, k: usize) -> Result<Var> {
    let mean = topk_mean_graph(g, bag.scores, bag.magnitudes, k)?;
    let s = g.clamp(mean, BCE_EPS, 1.0 - BCE_EPS);
    let p = if y == 1 {
        s
    } else {
        let neg = g.scale(s, -1.0);
        g.add_scalar(neg, 1.0)
    };
    let l = g.log(p);
    Ok(g.scale(l, -1.0))
}

pub fn eq6_graph<T: Real>(
    g: &mut Graph<T>,
    a: BagVars,
    n: BagVars,
    cfg: &LossConfig,
) -> Result<Var> {
    let la = bce_graph(g, a, 1, cfg.k)?;
    let ln = bce_graph(g, n, 0, cfg.k)?;
    let ls = g.add(la, ln)?;
    let ma = topk_mean_graph(g, a.magnitudes, a.magnitudes, cfg.k)?;
    let mn = topk_mean_graph(g, n.magnitudes, n.magnitudes, cfg.k)?;
    let sa = g.square(ma);
    let sn = g.square(mn);
    let d = g.sub(sn, sa)?;
    let d = g.add_scalar(d, cfg.margin);
    let hinge = g.relu(d);
    let lf = g.scale(hinge, cfg.alpha);
    let reg = regularizers(g, a.scores, cfg)?;
    let total = g.add(ls, lf)?;
    g.add(total, reg)
}

pub fn loss_graph<T: Real>(
    g: &mut Graph<T>,
    a: BagVars,
    n: BagVars,
    cfg: &LossConfig,
) -> Result<Var> {
    match cfg.variant {
        LossVariant::Eq3ScoreMil => eq3_graph(g, a.scores, n.scores, cfg),
        LossVariant::Eq6Rtfm => eq6_graph(g, a, n, cfg),
    }
}
