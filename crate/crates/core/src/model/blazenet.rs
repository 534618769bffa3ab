use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::weights::ModelWeights;
use crate::audio::{Label, Spectrogram};
use crate::diffcore::{softmax, Graph, ParamSet, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Input side length of the backbone (a 64×64 log-Mel patch).
pub const INPUT_SIZE: usize = 64;
pub const INPUT_CHANNELS: usize = 3;
pub const FEATURE_DIM: usize = 224;
pub const PARAM_COUNT: usize = 89_680;
/// Class index of "cry" in the logits.
pub const CRY_CLASS: usize = 1;

const STEM_OUT: usize = 24;
const STEM_KERNEL: usize = 5;
const STEM_STRIDE: usize = 2;
const FC1_OUT: usize = 2;
const FC2_OUT: usize = 6;
/// 1-based index of the block feeding FC1.
const FC1_BLOCK: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlazeBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

const fn block(in_channels: usize, out_channels: usize, stride: usize) -> BlazeBlockSpec {
    BlazeBlockSpec {
        in_channels,
        out_channels,
        kernel: 3,
        stride,
    }
}

pub const BLAZE_BLOCKS: [BlazeBlockSpec; 16] = [
    block(24, 24, 1),
    block(24, 28, 1),
    block(28, 32, 2),
    block(32, 36, 1),
    block(36, 42, 1),
    block(42, 48, 2),
    block(48, 56, 1),
    block(56, 64, 1),
    block(64, 72, 1),
    block(72, 80, 1),
    block(80, 88, 1),
    block(88, 96, 2),
    block(96, 96, 1),
    block(96, 96, 1),
    block(96, 96, 1),
    block(96, 96, 1),
];

impl BlazeBlockSpec {
    pub fn param_count(&self) -> usize {
        let (i, o, k) = (self.in_channels, self.out_channels, self.kernel);
        i * k * k + i + i * o + o
    }
}

fn block_name(i: usize, part: &str) -> String {
    format!("block{:02}.{part}", i + 1)
}

/// Name and shape of every backbone tensor, in storage order.
pub fn blazenet_layout() -> Vec<(String, Vec<usize>)> {
    let mut l = vec![
        (
            "stem.weight".to_string(),
            vec![STEM_OUT, INPUT_CHANNELS, STEM_KERNEL, STEM_KERNEL],
        ),
        ("stem.bias".to_string(), vec![STEM_OUT]),
    ];
    for (i, b) in BLAZE_BLOCKS.iter().enumerate() {
        l.push((
            block_name(i, "dw.weight"),
            vec![b.in_channels, 1, b.kernel, b.kernel],
        ));
        l.push((block_name(i, "dw.bias"), vec![b.in_channels]));
        l.push((
            block_name(i, "pw.weight"),
            vec![b.out_channels, b.in_channels, 1, 1],
        ));
        l.push((block_name(i, "pw.bias"), vec![b.out_channels]));
    }
    let c11 = BLAZE_BLOCKS[FC1_BLOCK - 1].out_channels;
    let c16 = BLAZE_BLOCKS[15].out_channels;
    l.push(("fc1.weight".into(), vec![FC1_OUT, c11, 1, 1]));
    l.push(("fc1.bias".into(), vec![FC1_OUT]));
    l.push(("fc2.weight".into(), vec![FC2_OUT, c16, 1, 1]));
    l.push(("fc2.bias".into(), vec![FC2_OUT]));
    l.push(("fc.weight".into(), vec![FEATURE_DIM, 2]));
    l.push(("fc.bias".into(), vec![2]));
    l
}

fn fan_in(shape: &[usize]) -> usize {
    match shape.len() {
        4 => shape[1] * shape[2] * shape[3],
        2 => shape[0],
        _ => 1,
    }
}

/// Uniform(±1/√fan_in) for every weight, and for every bias using the fan-in
/// of the weight it belongs to.
pub(crate) fn init_params(layout: &[(String, Vec<usize>)], seed: u64) -> ParamSet<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    let mut last_fan = 1;
    for (name, shape) in layout {
        if !name.ends_with("bias") {
            last_fan = fan_in(shape);
        }
        let bound = 1.0 / (last_fan as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32);
        set.insert(name.clone(), t)
            .expect("layout names are unique");
    }
    set
}

/// Backbone output for one input patch.
#[derive(Clone, Debug, PartialEq)]
pub struct BlazeOutput {
    pub feature: Vec<f32>,
    pub logits: [f32; 2],
}

impl BlazeOutput {
    /// Softmax probability of the cry class.
    pub fn cry_score(&self) -> f32 {
        softmax(&self.logits)[CRY_CLASS] as f32
    }
}

/// The 16-block depthwise-separable backbone with its two per-position
/// projections and final 224→2 classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct BlazeNet {
    params: ParamSet<f32>,
}

impl BlazeNet {
    pub fn new(seed: u64) -> Self {
        BlazeNet {
            params: init_params(&blazenet_layout(), seed),
        }
    }

    pub fn zeros() -> Self {
        BlazeNet {
            params: blazenet_layout()
                .into_iter()
                .map(|(n, s)| (n, Tensor::zeros(&s)))
                .collect(),
        }
    }

    pub fn from_params(params: ParamSet<f32>) -> Result<Self> {
        ModelWeights::new(params).try_into()
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn weights(&self) -> ModelWeights {
        ModelWeights::new(self.params.clone())
    }

    /// Forward pass over a batch of 64×64 spectrograms.
    pub fn forward_batch(&self, specs: &[&Spectrogram]) -> Result<Vec<BlazeOutput>> {
        if specs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::<f32>::new();
        let vars = ParamVars::constants(&mut g, &self.params);
        let x = g.input(input_tensor(specs)?);
        let (feature, logits) = blazenet_graph(&mut g, &vars, x)?;
        let (f, l) = (g.value(feature), g.value(logits));
        Ok((0..specs.len())
            .map(|i| BlazeOutput {
                feature: f.row(i).to_vec(),
                logits: [l.row(i)[0], l.row(i)[1]],
            })
            .collect())
    }

    pub fn forward(&self, spec: &Spectrogram) -> Result<BlazeOutput> {
        Ok(self.forward_batch(&[spec])?.remove(0))
    }
}

impl TryFrom<ModelWeights> for BlazeNet {
    type Error = Error;
    fn try_from(w: ModelWeights) -> Result<Self> {
        w.check_layout(&blazenet_layout(), "BlazeNet backbone")?;
        Ok(BlazeNet { params: w.tensors })
    }
}

pub fn build_blazenet(seed: u64) -> BlazeNet {
    BlazeNet::new(seed)
}

/// Returns the 224-D feature and the 2 logits.
pub fn blazenet_forward(net: &BlazeNet, spec: &Spectrogram) -> Result<(Vec<f32>, [f32; 2])> {
    let out = net.forward(spec)?;
    Ok((out.feature, out.logits))
}

/// Cry probability and the label at `threshold` (score ≥ threshold is cry).
pub fn classify(net: &BlazeNet, spec: &Spectrogram, threshold: f32) -> Result<(f32, Label)> {
    let score = net.forward(spec)?.cry_score();
    Ok((score, label_at(score, threshold)))
}

pub fn label_at(score: f32, threshold: f32) -> Label {
    if score >= threshold {
        Label::Cry
    } else {
        Label::Other
    }
}

/// Stacks spectrograms into N×3×64×64, replicating the single log-Mel
/// channel across the three input channels.
pub fn input_tensor<T: Real>(specs: &[&Spectrogram]) -> Result<Tensor<T>> {
    let plane = INPUT_SIZE * INPUT_SIZE;
    let mut data = Vec::with_capacity(specs.len() * INPUT_CHANNELS * plane);
    for s in specs {
        if s.data().shape() != [INPUT_SIZE, INPUT_SIZE] {
            return Err(Error::Dimension(format!(
                "backbone input must be {INPUT_SIZE}x{INPUT_SIZE}, got {:?}",
                s.data().shape()
            )));
        }
        for _ in 0..INPUT_CHANNELS {
            data.extend(s.data().data().iter().map(|&v| T::from_f64(v as f64)));
        }
    }
    Tensor::new(&[specs.len(), INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE], data)
}

/// Graph vars of a parameter set, looked up by name.
pub struct ParamVars {
    vars: HashMap<String, Var>,
}

impl ParamVars {
    /// Registers every tensor as a trainable parameter.
    pub fn trainable<T: Real>(g: &mut Graph<T>, set: &ParamSet<T>) -> Self {
        ParamVars {
            vars: set
                .iter()
                .map(|(n, t)| (n.to_string(), g.param(n, t.clone())))
                .collect(),
        }
    }

    /// Registers every tensor as a constant (inference).
    pub fn constants<T: Real>(g: &mut Graph<T>, set: &ParamSet<T>) -> Self {
        ParamVars {
            vars: set
                .iter()
                .map(|(n, t)| (n.to_string(), g.input(t.clone())))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }
}

/// One BlazeBlock: depthwise k×k (stride s) → pointwise 1×1, plus a
/// parameter-free shortcut (max-pool for stride 2, zero channels for
/// widening), then ReLU.
pub fn blaze_block<T: Real>(
    g: &mut Graph<T>,
    vars: &ParamVars,
    index: usize,
    x: Var,
) -> Result<Var> {
    let spec = BLAZE_BLOCKS[index];
    let dw = g.depthwise_conv2d(
        x,
        vars.get(&block_name(index, "dw.weight"))?,
        vars.get(&block_name(index, "dw.bias"))?,
        spec.stride,
        spec.kernel / 2,
    )?;
    let pw = g.conv2d(
        dw,
        vars.get(&block_name(index, "pw.weight"))?,
        vars.get(&block_name(index, "pw.bias"))?,
        1,
        0,
    )?;
    let mut shortcut = x;
    if spec.stride == 2 {
        shortcut = g.max_pool2d(shortcut, 2, 2)?;
    }
    if spec.out_channels > spec.in_channels {
        shortcut = g.pad_channels(shortcut, spec.out_channels)?;
    }
    let sum = g.add(pw, shortcut)?;
    Ok(g.relu(sum))
}

/// Builds the backbone on `x` (N×3×64×64); returns (feature N×224, logits N×2).
pub fn blazenet_graph<T: Real>(g: &mut Graph<T>, vars: &ParamVars, x: Var) -> Result<(Var, Var)> {
    let stem = g.conv2d(
        x,
        vars.get("stem.weight")?,
        vars.get("stem.bias")?,
        STEM_STRIDE,
        STEM_KERNEL / 2,
    )?;
    let mut h = g.relu(stem);
    let n = g.shape(x)[0];
    let mut head1 = None;
    for i in 0..BLAZE_BLOCKS.len() {
        h = blaze_block(g, vars, i, h)?;
        if i + 1 == FC1_BLOCK {
            let p = g.conv2d(h, vars.get("fc1.weight")?, vars.get("fc1.bias")?, 1, 0)?;
            let len = g.value(p).len() / n;
            head1 = Some(g.reshape(p, &[n, len])?);
        }
    }
    let p2 = g.conv2d(h, vars.get("fc2.weight")?, vars.get("fc2.bias")?, 1, 0)?;
    let len2 = g.value(p2).len() / n;
    let head2 = g.reshape(p2, &[n, len2])?;
    let head1 = head1.expect("FC1 block is inside the stack");
    let feature = g.concat(&[head1, head2], 1)?;
    if g.shape(feature)[1] != FEATURE_DIM {
        return Err(Error::Dimension(format!(
            "feature width {} != {FEATURE_DIM}",
            g.shape(feature)[1]
        )));
    }
    let logits = g.linear(feature, vars.get("fc.weight")?, vars.get("fc.bias")?)?;
    Ok((feature, logits))
}
