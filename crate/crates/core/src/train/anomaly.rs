use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_finite, dual_iterator, LogRow};
use crate::audio::Split;
use crate::diffcore::{Graph, OptimizerKind, OptimizerState, Tensor, Var};
use crate::error::{Error, Result};
use crate::mil::{load_bag_dir, loss_graph, BagVars, FeatureBag, LossConfig, BCE_EPS};
use crate::model::{head_graph, AnomalyHead, ParamVars, DROPOUT};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalyHyper {
    pub lr: f64,
    pub steps: usize,
    /// Bags per step, half abnormal and half normal.
    pub batch: usize,
    pub segments: usize,
    pub loss: LossConfig,
    pub seed: u64,
    pub dropout: f64,
    /// Validation period in steps.
    pub val_every: usize,
    pub threshold: f64,
}

impl Default for AnomalyHyper {
    fn default() -> Self {
        AnomalyHyper {
            lr: 1e-3,
            steps: 20_000,
            batch: 128,
            segments: 10,
            loss: LossConfig::default(),
            seed: 0,
            dropout: DROPOUT,
            val_every: 100,
            threshold: 0.5,
        }
    }
}

impl AnomalyHyper {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.segments == 0 {
            return Err(Error::Config("segments must be >= 1".into()));
        }
        if self.loss.k > self.segments {
            return Err(Error::Config(format!(
                "top-k {} exceeds segment count {}",
                self.loss.k, self.segments
            )));
        }
        if self.batch == 0 || !self.batch.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "batch {} must be a positive even number",
                self.batch
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.val_every == 0 {
            return Err(Error::Config("val_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HeadRun {
    pub head: AnomalyHead,
    pub best_val_acc: Option<f64>,
    pub best_step: Option<usize>,
    pub log: Vec<LogRow>,
}

/// Per-frame head scores of every bag, without interpolation.
pub fn segment_scores(head: &AnomalyHead, bags: &[FeatureBag]) -> Result<Vec<Vec<f64>>> {
    bags.iter()
        .map(|b| {
            Ok(head
                .forward(b.features())?
                .scores
                .iter()
                .map(|&s| s as f64)
                .collect())
        })
        .collect()
}

/// Bag-level accuracy: a bag is called abnormal when its highest segment
/// score (after interpolation to `segments`) reaches `threshold`.
pub fn bag_accuracy(
    head: &AnomalyHead,
    bags: &[FeatureBag],
    segments: usize,
    threshold: f64,
) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::Contract("accuracy over no bags".into()));
    }
    let mut correct = 0;
    for b in bags {
        let out = head.forward(b.interpolated(segments)?.features())?;
        let max = out.scores.iter().fold(f32::MIN, |a, &s| a.max(s)) as f64;
        if (max >= threshold) == b.is_abnormal() {
            correct += 1;
        }
    }
    Ok(correct as f64 / bags.len() as f64)
}

/// Loads `bags_dir/train` and `bags_dir/val` and trains the head.
pub fn train_anomaly(
    bags_dir: &Path,
    hyper: &AnomalyHyper,
    head_input_dim: usize,
) -> Result<HeadRun> {
    let train = load_bag_dir(&bags_dir.join(Split::Train.as_str()))?;
    let val = load_bag_dir(&bags_dir.join(Split::Val.as_str()))?;
    train_anomaly_on(&train, &val, hyper, head_input_dim)
}

struct Prepared {
    abnormal: Vec<Tensor<f32>>,
    normal: Vec<Tensor<f32>>,
}

fn prepare(train: &[FeatureBag], segments: usize, dim: usize) -> Result<Prepared> {
    let mut p = Prepared {
        abnormal: Vec::new(),
        normal: Vec::new(),
    };
    for b in train {
        if b.dim() != dim {
            return Err(Error::Dimension(format!(
                "bag {} has {}-D features, head expects {dim}",
                b.source(),
                b.dim()
            )));
        }
        let x = b.interpolated(segments)?.features().clone();
        if b.is_abnormal() {
            p.abnormal.push(x);
        } else {
            p.normal.push(x);
        }
    }
    Ok(p)
}

/// Stacks the chosen bags row-wise: abnormal bags first, then normal.
fn stack(p: &Prepared, a: &[usize], n: &[usize], dim: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    for &i in a {
        data.extend_from_slice(p.abnormal[i].data());
    }
    for &i in n {
        data.extend_from_slice(p.normal[i].data());
    }
    let rows = data.len() / dim;
    Tensor::new(&[rows, dim], data)
}

fn bag_rows(g: &mut Graph<f32>, v: Var, bag: usize, segments: usize) -> Result<Var> {
    let rows: Vec<usize> = (bag * segments..(bag + 1) * segments).collect();
    g.select(v, &rows)
}

/// Weakly supervised head training: each step draws a paired batch,
/// runs the head with dropout over every segment and minimizes the mean
/// pair loss with Adam. Keeps the best bag-level validation checkpoint.
pub fn train_anomaly_on(
    train: &[FeatureBag],
    val: &[FeatureBag],
    hyper: &AnomalyHyper,
    head_input_dim: usize,
) -> Result<HeadRun> {
    hyper.validate()?;
    let s = hyper.segments;
    let prepared = prepare(train, s, head_input_dim)?;
    if let Some(b) = val.iter().find(|b| b.dim() != head_input_dim) {
        return Err(Error::Dimension(format!(
            "validation bag {} has {}-D features, head expects {head_input_dim}",
            b.source(),
            b.dim()
        )));
    }
    let mut head = AnomalyHead::new(head_input_dim, hyper.seed)?;
    if hyper.steps == 0 {
        return Ok(HeadRun {
            head,
            best_val_acc: None,
            best_step: None,
            log: Vec::new(),
        });
    }
    if val.is_empty() {
        return Err(Error::Validation(
            "head training needs validation bags".into(),
        ));
    }
    let mut batches = dual_iterator(
        prepared.abnormal.len(),
        prepared.normal.len(),
        hyper.batch,
        hyper.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(2));
    let mut opt = OptimizerState::<f32>::new(OptimizerKind::adam_default());
    let mut best: Option<(f64, usize, AnomalyHead)> = None;
    let mut log = Vec::new();
    let (mut running, mut count) = (0.0, 0usize);
    for step in 0..hyper.steps {
        let (a, n) = batches.next_batch();
        let pairs = a.len();
        let mut g = Graph::<f32>::new();
        let vars = ParamVars::trainable(&mut g, head.params());
        let x = g.input(stack(&prepared, &a, &n, head_input_dim)?);
        let out = head_graph(&mut g, &vars, x, Some((&mut rng, hyper.dropout)))?;
        let mut total = None;
        for p in 0..pairs {
            let bag_a = BagVars {
                scores: bag_rows(&mut g, out.scores, p, s)?,
                magnitudes: bag_rows(&mut g, out.magnitudes, p, s)?,
            };
            let bag_n = BagVars {
                scores: bag_rows(&mut g, out.scores, pairs + p, s)?,
                magnitudes: bag_rows(&mut g, out.magnitudes, pairs + p, s)?,
            };
            let l = loss_graph(&mut g, bag_a, bag_n, &hyper.loss)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let total = total.expect("batch holds at least one pair");
        let loss = g.scale(total, 1.0 / pairs as f64);
        let value = g.value(loss).item()? as f64;
        check_finite(value, &format!("step {step}"))?;
        running += value;
        count += 1;
        let grads = g.backward(loss)?.to_param_set();
        opt.step(head.params_mut(), &grads, hyper.lr)?;

        if (step + 1) % hyper.val_every == 0 || step + 1 == hyper.steps {
            let acc = bag_accuracy(&head, val, s, hyper.threshold)?;
            let mean = running / count as f64;
            log::info!("step {}: loss {mean:.5} val_acc {acc:.4}", step + 1);
            log.push(LogRow {
                epoch_or_step: step + 1,
                loss: mean,
                val_acc: Some(acc),
                lr: hyper.lr,
            });
            (running, count) = (0.0, 0);
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, step + 1, head.clone()));
            }
        }
    }
    let (acc, step, head) = best.expect("validation runs on the final step");
    Ok(HeadRun {
        head,
        best_val_acc: Some(acc),
        best_step: Some(step),
        log,
    })
}

/// Reference classifier on the same weak labels: the head architecture
/// trained with per-segment cross-entropy where every segment inherits
/// its bag label. Returns the final weights.
pub fn train_bag_label_baseline(
    train: &[FeatureBag],
    hyper: &AnomalyHyper,
    head_input_dim: usize,
) -> Result<AnomalyHead> {
    hyper.validate()?;
    let s = hyper.segments;
    let prepared = prepare(train, s, head_input_dim)?;
    let mut head = AnomalyHead::new(head_input_dim, hyper.seed)?;
    if hyper.steps == 0 {
        return Ok(head);
    }
    let mut batches = dual_iterator(
        prepared.abnormal.len(),
        prepared.normal.len(),
        hyper.batch,
        hyper.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(2));
    let mut opt = OptimizerState::<f32>::new(OptimizerKind::adam_default());
    for step in 0..hyper.steps {
        let (a, n) = batches.next_batch();
        let pos_rows = a.len() * s;
        let mut g = Graph::<f32>::new();
        let vars = ParamVars::trainable(&mut g, head.params());
        let x = g.input(stack(&prepared, &a, &n, head_input_dim)?);
        let out = head_graph(&mut g, &vars, x, Some((&mut rng, hyper.dropout)))?;
        let rows = g.shape(out.scores)[0];
        let p = g.clamp(out.scores, BCE_EPS, 1.0 - BCE_EPS);
        let pos: Vec<usize> = (0..pos_rows).collect();
        let neg: Vec<usize> = (pos_rows..rows).collect();
        let lp = g.log(p);
        let lp = g.select(lp, &pos)?;
        let lp = g.sum(lp);
        let q = g.scale(p, -1.0);
        let q = g.add_scalar(q, 1.0);
        let lq = g.log(q);
        let lq = g.select(lq, &neg)?;
        let lq = g.sum(lq);
        let ll = g.add(lp, lq)?;
        let loss = g.scale(ll, -1.0 / rows as f64);
        check_finite(
            g.value(loss).item()? as f64,
            &format!("baseline step {step}"),
        )?;
        let grads = g.backward(loss)?.to_param_set();
        opt.step(head.params_mut(), &grads, hyper.lr)?;
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Label;

    fn bags() -> Vec<FeatureBag> {
        let mut out = Vec::new();
        for i in 0..6 {
            let abnormal = i % 2 == 0;
            let feats = Tensor::from_fn(&[5, 4], |j| {
                let seg = j / 4;
                if abnormal && seg == i % 5 {
                    3.0
                } else {
                    ((i * 7 + j) % 5) as f32 * 0.1
                }
            });
            let label = if abnormal { Label::Cry } else { Label::Other };
            out.push(FeatureBag::new(feats, label, format!("b{i}")).unwrap());
        }
        out
    }

    fn small() -> AnomalyHyper {
        AnomalyHyper {
            steps: 6,
            batch: 4,
            segments: 5,
            val_every: 3,
            ..AnomalyHyper::default()
        }
    }

    #[test]
    fn validation_rules() {
        assert!(AnomalyHyper::default().validate().is_ok());
        let mut h = small();
        h.loss.k = 6;
        assert!(matches!(h.validate(), Err(Error::Config(_))));
        assert!(AnomalyHyper {
            batch: 3,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let h = AnomalyHyper {
            steps: 0,
            seed: 4,
            ..small()
        };
        let run = train_anomaly_on(&bags(), &bags(), &h, 4).unwrap();
        assert_eq!(run.head, AnomalyHead::new(4, 4).unwrap());
    }

    #[test]
    fn short_run_is_reproducible() {
        let a = train_anomaly_on(&bags(), &bags(), &small(), 4).unwrap();
        let b = train_anomaly_on(&bags(), &bags(), &small(), 4).unwrap();
        assert_eq!(a.head, b.head);
        assert_eq!(a.log.len(), 2);
        assert!(a.log.iter().all(|r| r.loss.is_finite()));
        let base = train_bag_label_baseline(&bags(), &small(), 4).unwrap();
        assert_ne!(base, AnomalyHead::new(4, 0).unwrap());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            train_anomaly_on(&bags(), &bags(), &small(), 5),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn five_frame_bags_are_not_reinterpolated() {
        for b in bags() {
            assert_eq!(b.interpolated(5).unwrap(), b);
        }
    }
}
