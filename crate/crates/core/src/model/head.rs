use rand::Rng;

use super::blazenet::{init_params, ParamVars};
use super::weights::ModelWeights;
use crate::diffcore::{Graph, ParamSet, Real, Tensor, Var};
use crate::error::{Error, Result};

pub const HIDDEN1: usize = 512;
pub const HIDDEN2: usize = 128;
pub const DROPOUT: f64 = 0.7;

/// Per-segment anomaly scorer: FC(D→512) → ReLU → dropout → FC(512→128) →
/// ReLU gives the refined feature; FC(128→1) → sigmoid gives the score.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyHead {
    input_dim: usize,
    params: ParamSet<f32>,
}

/// Head output for a batch of segments.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput {
    /// N×128 refined features.
    pub refined: Tensor<f32>,
    pub scores: Vec<f32>,
    /// L2 norm of each refined feature.
    pub magnitudes: Vec<f32>,
}

pub fn head_layout(input_dim: usize) -> Vec<(String, Vec<usize>)> {
    vec![
        ("head.fc1.weight".into(), vec![input_dim, HIDDEN1]),
        ("head.fc1.bias".into(), vec![HIDDEN1]),
        ("head.fc2.weight".into(), vec![HIDDEN1, HIDDEN2]),
        ("head.fc2.bias".into(), vec![HIDDEN2]),
        ("head.score.weight".into(), vec![HIDDEN2, 1]),
        ("head.score.bias".into(), vec![1]),
    ]
}

impl AnomalyHead {
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Validation(
                "head input dimension must be positive".into(),
            ));
        }
        Ok(AnomalyHead {
            input_dim,
            params: init_params(&head_layout(input_dim), seed),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn weights(&self) -> ModelWeights {
        ModelWeights::new(self.params.clone())
    }

    /// Scores an N×D batch without dropout.
    pub fn forward(&self, features: &Tensor<f32>) -> Result<HeadOutput> {
        let s = features.shape();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::Dimension(format!(
                "head expects N x {}, got {s:?}",
                self.input_dim
            )));
        }
        let mut g = Graph::<f32>::new();
        let vars = ParamVars::constants(&mut g, &self.params);
        let x = g.input(features.clone());
        let out = head_graph(&mut g, &vars, x, None::<(&mut rand::rngs::ThreadRng, f64)>)?;
        Ok(HeadOutput {
            refined: g.value(out.refined).clone(),
            scores: g.value(out.scores).data().to_vec(),
            magnitudes: g.value(out.magnitudes).data().to_vec(),
        })
    }

    /// Single-feature convenience: (refined, score, magnitude).
    pub fn forward_one(&self, feature: &[f32]) -> Result<(Vec<f32>, f32, f32)> {
        let out = self.forward(&Tensor::new(&[1, feature.len()], feature.to_vec())?)?;
        Ok((out.refined.into_data(), out.scores[0], out.magnitudes[0]))
    }
}

impl TryFrom<ModelWeights> for AnomalyHead {
    type Error = Error;
    fn try_from(w: ModelWeights) -> Result<Self> {
        let input_dim = w
            .tensors
            .get("head.fc1.weight")
            .filter(|t| t.rank() == 2)
            .map(|t| t.shape()[0])
            .unwrap_or(0);
        w.check_layout(&head_layout(input_dim.max(1)), "anomaly head")?;
        Ok(AnomalyHead {
            input_dim,
            params: w.tensors,
        })
    }
}

/// Graph handles of a head pass.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub refined: Var,
    /// Length-N vector of scores in (0, 1).
    pub scores: Var,
    /// Length-N vector of refined-feature norms.
    pub magnitudes: Var,
}

/// Builds the head on `x` (N×D). With `dropout = Some((rng, p))`, inverted
/// dropout with drop probability `p` follows the first ReLU.
pub fn head_graph<T: Real, R: Rng>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    x: Var,
    dropout: Option<(&mut R, f64)>,
) -> Result<HeadVars> {
    let n = g.shape(x)[0];
    let h1 = g.linear(x, vars.get("head.fc1.weight")?, vars.get("head.fc1.bias")?)?;
    let mut h1 = g.relu(h1);
    if let Some((rng, p)) = dropout {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Validation(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if p > 0.0 {
            let keep = 1.0 / (1.0 - p);
            let shape = g.shape(h1).to_vec();
            let mask = Tensor::from_fn(&shape, |_| {
                if rng.gen::<f64>() < p {
                    T::ZERO
                } else {
                    T::from_f64(keep)
                }
            });
            let m = g.input(mask);
            h1 = g.mul(h1, m)?;
        }
    }
    let h2 = g.linear(h1, vars.get("head.fc2.weight")?, vars.get("head.fc2.bias")?)?;
    let refined = g.relu(h2);
    let logit = g.linear(
        refined,
        vars.get("head.score.weight")?,
        vars.get("head.score.bias")?,
    )?;
    let logit = g.reshape(logit, &[n])?;
    let scores = g.sigmoid(logit);
    let magnitudes = g.l2_norm(refined)?;
    Ok(HeadVars {
        refined,
        scores,
        magnitudes,
    })
}
