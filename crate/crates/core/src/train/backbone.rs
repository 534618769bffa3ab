use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_finite, LogRow};
use crate::audio::{
    read_wav, spectrograms_for_clip, DatasetManifest, Label, LogMel, MelProfile, Spectrogram, Split,
};
use crate::diffcore::{Graph, OptimizerKind, OptimizerState};
use crate::error::{Error, Result};
use crate::model::{blazenet_graph, input_tensor, BlazeNet, ParamVars, CRY_CLASS};

const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackboneHyper {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch: usize,
    pub seed: u64,
    /// Operating point for validation accuracy.
    pub threshold: f64,
}

impl Default for BackboneHyper {
    fn default() -> Self {
        BackboneHyper {
            lr: 1e-3,
            momentum: 0.9,
            epochs: 60,
            decay_factor: 0.1,
            decay_every: 20,
            batch: 32,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl BackboneHyper {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("lr", self.lr)?;
        positive("decay_factor", self.decay_factor)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch == 0 || self.decay_every == 0 {
            return Err(Error::Config("batch and decay_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Step schedule: lr · factor^⌊epoch / decay_every⌋.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// A 64×64 spectrogram with its clip label.
#[derive(Clone, Debug)]
pub struct LabeledSpec {
    pub spec: Spectrogram,
    pub label: Label,
    pub source: String,
}

#[derive(Clone, Debug)]
pub struct BackboneData {
    pub train: Vec<LabeledSpec>,
    pub val: Vec<LabeledSpec>,
}

/// Decodes every train/val file of the manifest into 1 s BlazeNet frames;
/// each frame inherits its file's label.
pub fn prepare_backbone_data(manifest: &DatasetManifest) -> Result<BackboneData> {
    manifest.require_splits(&[Split::Train, Split::Val])?;
    let front = LogMel::new(MelProfile::blazenet())?;
    let load = |split: Split| -> Result<Vec<LabeledSpec>> {
        let mut out = Vec::new();
        for e in manifest.split(split) {
            let clip = read_wav(&e.path)?;
            for spec in spectrograms_for_clip(&clip, &front)? {
                out.push(LabeledSpec {
                    spec,
                    label: e.label,
                    source: e.path.display().to_string(),
                });
            }
        }
        if out.is_empty() {
            return Err(Error::Validation(format!(
                "{} split yields no 1 s frames",
                split.as_str()
            )));
        }
        Ok(out)
    };
    Ok(BackboneData {
        train: load(Split::Train)?,
        val: load(Split::Val)?,
    })
}

/// Fraction of frames whose cry score at `threshold` matches the label.
pub fn backbone_accuracy(net: &BlazeNet, data: &[LabeledSpec], threshold: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("accuracy over no frames".into()));
    }
    let mut correct = 0;
    for chunk in data.chunks(EVAL_CHUNK) {
        let specs: Vec<&Spectrogram> = chunk.iter().map(|d| &d.spec).collect();
        for (out, d) in net.forward_batch(&specs)?.iter().zip(chunk) {
            if (out.cry_score() as f64 >= threshold) == d.label.is_cry() {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Clone, Debug)]
pub struct BackboneRun {
    /// Weights of the best validation epoch (the initialization if no epoch ran).
    pub net: BlazeNet,
    pub best_val_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub log: Vec<LogRow>,
}

pub fn train_backbone(manifest: &DatasetManifest, hyper: &BackboneHyper) -> Result<BackboneRun> {
    train_backbone_on(&prepare_backbone_data(manifest)?, hyper)
}

/// Cross-entropy training with SGD + momentum; keeps the weights of the
/// epoch with the highest validation accuracy (earliest on ties).
pub fn train_backbone_on(data: &BackboneData, hyper: &BackboneHyper) -> Result<BackboneRun> {
    hyper.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Validation(
            "backbone training needs non-empty train and val frames".into(),
        ));
    }
    let mut net = BlazeNet::new(hyper.seed);
    let mut opt = OptimizerState::<f32>::new(OptimizerKind::SgdMomentum {
        momentum: hyper.momentum,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best: Option<(f64, usize, BlazeNet)> = None;
    let mut log = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let lr = hyper.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(hyper.batch) {
            let specs: Vec<&Spectrogram> = batch.iter().map(|&i| &data.train[i].spec).collect();
            let labels: Vec<usize> = batch
                .iter()
                .map(|&i| {
                    if data.train[i].label.is_cry() {
                        CRY_CLASS
                    } else {
                        1 - CRY_CLASS
                    }
                })
                .collect();
            let mut g = Graph::<f32>::new();
            let vars = ParamVars::trainable(&mut g, net.params());
            let x = g.input(input_tensor(&specs)?);
            let (_, logits) = blazenet_graph(&mut g, &vars, x)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            let value = g.value(loss).item()? as f64;
            check_finite(value, &format!("epoch {epoch}"))?;
            total += value * batch.len() as f64;
            let grads = g.backward(loss)?.to_param_set();
            opt.step(net.params_mut(), &grads, lr)?;
        }
        let loss = total / data.train.len() as f64;
        let acc = backbone_accuracy(&net, &data.val, hyper.threshold)?;
        log::info!("epoch {epoch}: loss {loss:.5} val_acc {acc:.4} lr {lr:e}");
        log.push(LogRow {
            epoch_or_step: epoch,
            loss,
            val_acc: Some(acc),
            lr,
        });
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, net.clone()));
        }
    }
    Ok(match best {
        Some((acc, epoch, net)) => BackboneRun {
            net,
            best_val_acc: Some(acc),
            best_epoch: Some(epoch),
            log,
        },
        None => BackboneRun {
            net,
            best_val_acc: None,
            best_epoch: None,
            log,
        },
    })
}
