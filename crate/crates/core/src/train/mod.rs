//! Supervised backbone training, weakly supervised head training and
//! top-t segment mining.

mod anomaly;
mod backbone;
mod mine;

pub use anomaly::{
    bag_accuracy, segment_scores, train_anomaly, train_anomaly_on, train_bag_label_baseline,
    AnomalyHyper, HeadRun,
};
pub use backbone::{
    backbone_accuracy, prepare_backbone_data, train_backbone, train_backbone_on, BackboneData,
    BackboneHyper, BackboneRun, LabeledSpec,
};
pub use mine::{mine_topt, read_mined_csv, write_mined_csv, MinedDataset, MinedRecord, Origin};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Endless shuffled index stream over one dataset; reshuffles on wrap.
#[derive(Clone, Debug)]
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        let mut c = Cycler {
            order: (0..len).collect(),
            pos: 0,
            rng,
        };
        c.order.shuffle(&mut c.rng);
        c
    }

    fn draw(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Paired batches of abnormal and normal indices: each step yields
/// `batch / 2` of each, drawn from independently shuffled streams.
#[derive(Clone, Debug)]
pub struct DualIterator {
    abnormal: Cycler,
    normal: Cycler,
    half: usize,
}

impl DualIterator {
    pub fn new(n_abnormal: usize, n_normal: usize, batch: usize, seed: u64) -> Result<Self> {
        if n_abnormal == 0 || n_normal == 0 {
            return Err(Error::Contract(format!(
                "dual iterator needs both sides non-empty ({n_abnormal} abnormal, {n_normal} normal)"
            )));
        }
        if batch == 0 || !batch.is_multiple_of(2) {
            return Err(Error::Contract(format!(
                "batch {batch} must be a positive even number"
            )));
        }
        let mut root = ChaCha8Rng::seed_from_u64(seed);
        let a = ChaCha8Rng::from_rng(&mut root).expect("seeding from ChaCha cannot fail");
        let n = ChaCha8Rng::from_rng(&mut root).expect("seeding from ChaCha cannot fail");
        Ok(DualIterator {
            abnormal: Cycler::new(n_abnormal, a),
            normal: Cycler::new(n_normal, n),
            half: batch / 2,
        })
    }

    /// (abnormal indices, normal indices); pair i is (a[i], n[i]).
    pub fn next_batch(&mut self) -> (Vec<usize>, Vec<usize>) {
        let a = (0..self.half).map(|_| self.abnormal.draw()).collect();
        let n = (0..self.half).map(|_| self.normal.draw()).collect();
        (a, n)
    }
}

impl Iterator for DualIterator {
    type Item = (Vec<usize>, Vec<usize>);
    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_batch())
    }
}

pub fn dual_iterator(
    n_abnormal: usize,
    n_normal: usize,
    batch: usize,
    seed: u64,
) -> Result<DualIterator> {
    DualIterator::new(n_abnormal, n_normal, batch, seed)
}

/// One row of a training log: `epoch_or_step,loss,val_acc,lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch_or_step: usize,
    pub loss: f64,
    /// Absent on rows where validation did not run.
    pub val_acc: Option<f64>,
    pub lr: f64,
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut text = String::from("epoch_or_step,loss,val_acc,lr\n");
    for r in rows {
        let acc = r.val_acc.map_or(String::new(), |a| format!("{a:.6}"));
        text.push_str(&format!(
            "{},{:.6},{acc},{:e}\n",
            r.epoch_or_step, r.loss, r.lr
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub(crate) fn check_finite(loss: f64, at: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss became {loss} at {at}; aborting"
        )));
    }
    Ok(())
}
