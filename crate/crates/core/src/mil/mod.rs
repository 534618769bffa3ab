//! Bags of segment features and the multiple-instance ranking losses.

mod bags;
mod loss;

pub use bags::{
    feature_path, load_bag_dir, read_bag_meta, write_bag_dir, write_bag_meta, BagMeta,
    BAG_META_FILE,
};
pub use loss::{
    eq3_graph, eq6_graph, loss_graph, magnitude_loss, mil_ranking_loss, smoothness, sparsity,
    topk_score_bce, total_loss, total_loss_eq3, total_loss_eq6, BagScores, BagVars, LossConfig,
    LossVariant, BCE_EPS,
};

use crate::audio::Label;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// One audio file as an ordered S×D matrix of segment features with a
/// file-level label (cry = abnormal).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    features: Tensor<f32>,
    label: Label,
    source: String,
}

impl FeatureBag {
    pub fn new(features: Tensor<f32>, label: Label, source: impl Into<String>) -> Result<Self> {
        if features.rank() != 2 || features.shape()[0] == 0 || features.shape()[1] == 0 {
            return Err(Error::Validation(format!(
                "bag features must be a non-empty S x D matrix, got {:?}",
                features.shape()
            )));
        }
        if !features.all_finite() {
            return Err(Error::NonFinite("bag contains non-finite features".into()));
        }
        Ok(FeatureBag {
            features,
            label,
            source: source.into(),
        })
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn is_abnormal(&self) -> bool {
        self.label.is_cry()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn segments(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// The bag resampled to `s` segments.
    pub fn interpolated(&self, s: usize) -> Result<FeatureBag> {
        Ok(FeatureBag {
            features: interpolate_segments(&self.features, s)?,
            label: self.label,
            source: self.source.clone(),
        })
    }
}

/// Resamples F×D frame features to S×D. Row j is the linear interpolation
/// at position j·(F−1)/(S−1); S = 1 gives the mean row.
pub fn interpolate_segments(frames: &Tensor<f32>, s: usize) -> Result<Tensor<f32>> {
    let shape = frames.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Contract(format!(
            "need F x D frames with F >= 1, got {shape:?}"
        )));
    }
    if s == 0 {
        return Err(Error::Contract("segment count must be at least 1".into()));
    }
    let (f, d) = (shape[0], shape[1]);
    let mut out = Vec::with_capacity(s * d);
    if s == 1 {
        for c in 0..d {
            let sum: f64 = (0..f).map(|r| frames.data()[r * d + c] as f64).sum();
            out.push((sum / f as f64) as f32);
        }
    } else {
        for j in 0..s {
            // Exact rational position j(F-1)/(S-1) split into floor and fraction.
            let num = j * (f - 1);
            let (lo, rem) = (num / (s - 1), num % (s - 1));
            let t = rem as f64 / (s - 1) as f64;
            let hi = (lo + 1).min(f - 1);
            for c in 0..d {
                let a = frames.data()[lo * d + c] as f64;
                let b = frames.data()[hi * d + c] as f64;
                out.push(if rem == 0 {
                    a as f32
                } else {
                    (a + t * (b - a)) as f32
                });
            }
        }
    }
    Tensor::new(&[s, d], out)
}

/// Indices of the `k` largest values, largest first; equal values go to the
/// lower index.
pub fn topk_by_magnitude<T: Copy + PartialOrd>(values: &[T], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return Err(Error::Contract(format!(
            "top-{k} of a bag with {} segments",
            values.len()
        )));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(v: &[f32]) -> Tensor<f32> {
        Tensor::new(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn interpolation_examples() {
        let x = Tensor::from_fn(&[5, 3], |i| i as f32 * 0.7 - 2.0);
        assert_eq!(interpolate_segments(&x, 5).unwrap(), x);
        let y = interpolate_segments(&col(&[0.0, 1.0, 2.0]), 5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        let c = interpolate_segments(&Tensor::full(&[7, 2], 3.25), 16).unwrap();
        assert!(c.data().iter().all(|&v| v == 3.25));
        let m = interpolate_segments(&col(&[1.0, 2.0, 6.0]), 1).unwrap();
        assert_eq!(m.data(), &[3.0]);
        let r = interpolate_segments(&col(&[4.0]), 4).unwrap();
        assert_eq!(r.data(), &[4.0; 4]);
        assert!(interpolate_segments(&col(&[1.0]), 0).is_err());
    }

    #[test]
    fn topk_examples() {
        assert_eq!(
            topk_by_magnitude(&[1.0, 5.0, 3.0, 5.0], 2).unwrap(),
            vec![1, 3]
        );
        let mut all = topk_by_magnitude(&[0.2, 0.1, 0.3], 3).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
        assert!(matches!(
            topk_by_magnitude(&[1.0], 2),
            Err(Error::Contract(_))
        ));
        assert_eq!(topk_by_magnitude(&[2.0; 4], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn bag_validation() {
        assert!(FeatureBag::new(Tensor::zeros(&[0, 4]), Label::Cry, "a").is_err());
        assert!(FeatureBag::new(Tensor::full(&[2, 2], f32::NAN), Label::Cry, "a").is_err());
        let b = FeatureBag::new(Tensor::zeros(&[3, 4]), Label::Other, "a").unwrap();
        assert_eq!((b.segments(), b.dim(), b.is_abnormal()), (3, 4, false));
        assert_eq!(b.interpolated(10).unwrap().segments(), 10);
    }

    proptest! {
        #[test]
        fn interpolation_stays_within_neighbour_bounds(
            rows in prop::collection::vec(-100.0f32..100.0, 1..20),
            s in 1usize..24,
        ) {
            let out = interpolate_segments(&col(&rows), s).unwrap();
            let (lo, hi) = rows.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            for &v in out.data() {
                prop_assert!(v >= lo - 1e-4 && v <= hi + 1e-4);
            }
            if s > 1 {
                let f = rows.len();
                for j in 0..s {
                    let p = j as f64 * (f - 1) as f64 / (s - 1) as f64;
                    let (a, b) = (rows[p.floor() as usize], rows[(p.ceil() as usize).min(f - 1)]);
                    let v = out.data()[j];
                    prop_assert!(v >= a.min(b) - 1e-4 && v <= a.max(b) + 1e-4);
                }
            }
        }

        #[test]
        fn topk_matches_sort_and_permutation(vals in prop::collection::vec(0u8..6, 1..12), k in 1usize..12) {
            let k = k.min(vals.len());
            let got = topk_by_magnitude(&vals, k).unwrap();
            let mut oracle: Vec<(u8, std::cmp::Reverse<usize>)> =
                vals.iter().enumerate().map(|(i, &v)| (v, std::cmp::Reverse(i))).collect();
            oracle.sort();
            oracle.reverse();
            let want: Vec<usize> = oracle.iter().take(k).map(|(_, r)| r.0).collect();
            prop_assert_eq!(&got, &want);
            let rev: Vec<u8> = vals.iter().rev().copied().collect();
            let mut got_vals: Vec<u8> = got.iter().map(|&i| vals[i]).collect();
            let mut rev_vals: Vec<u8> = topk_by_magnitude(&rev, k).unwrap().iter().map(|&i| rev[i]).collect();
            got_vals.sort();
            rev_vals.sort();
            prop_assert_eq!(got_vals, rev_vals);
        }
    }
}
