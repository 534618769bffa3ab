use super::graph::{Graph, Var};
use super::tensor::{Real, Tensor};
use crate::error::Result;

/// Denominator floor for the relative error, so that near-zero gradient
/// pairs are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// Compares analytic gradients against central finite differences.
///
/// `build` receives a fresh graph and one trainable var per entry of
/// `inputs` and must return a scalar loss. Each input element is perturbed
/// by `±h` with `h = 1e-3·scale`. Returns the largest
/// `|analytic − numeric| / max(|analytic|, |numeric|, REL_ERR_FLOOR)`.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], scale: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params_for(&mut g, inputs);
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.wrt(*v)).collect();
    worst_error(&build, inputs, &analytic, scale)
}

/// Single-precision variant: analytic gradients come from a `Graph<f32>`
/// built by `build32`, the reference from central differences of the
/// same function built by `build64` in double precision. Inputs are first
/// rounded to `f32` so both sides see the same point.
pub fn grad_check_f32<F32, F64>(
    build32: F32,
    build64: F64,
    inputs: &[Tensor<f64>],
    scale: f64,
) -> Result<f64>
where
    F32: Fn(&mut Graph<f32>, &[Var]) -> Result<Var>,
    F64: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let single: Vec<Tensor<f32>> = inputs.iter().map(Tensor::cast).collect();
    let rounded: Vec<Tensor<f64>> = single.iter().map(Tensor::cast).collect();
    let mut g = Graph::new();
    let vars = params_for(&mut g, &single);
    let loss = build32(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.wrt(*v).cast()).collect();
    worst_error(&build64, &rounded, &analytic, scale)
}

fn params_for<T: Real>(g: &mut Graph<T>, inputs: &[Tensor<T>]) -> Vec<Var> {
    inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.param(&format!("in{i}"), t.clone()))
        .collect()
}

fn worst_error<F>(
    build: &F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    scale: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = params_for(&mut g, vals);
        let loss = build(&mut g, &vars)?;
        g.value(loss).item()
    };
    let h = 1e-3 * scale;
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
