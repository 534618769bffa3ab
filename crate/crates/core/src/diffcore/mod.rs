//! Dense tensors with reverse-mode gradients for the operators the backbone
//! and anomaly head use, plus optimizers and a finite-difference checker.

mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_f32, REL_ERR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, sgd_momentum_step, OptimizerKind, OptimizerState};
pub use params::ParamSet;
pub use tensor::{Real, Tensor};

pub(crate) use graph::softmax;

/// Output length of a convolution or pooling window along one axis.
pub fn conv_out_size(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    kernels::out_size(input, k, stride, pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct-definition grouped convolution, independent of the kernels.
    #[allow(clippy::too_many_arguments)]
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &[f64],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> (Vec<usize>, Vec<f64>) {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, cg, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let opg = o / groups;
        let mut out = vec![0.0; n * o * ho * wo];
        for ni in 0..n {
            for oi in 0..o {
                let gidx = oi / opg;
                for y in 0..ho {
                    for xx in 0..wo {
                        let mut s = b[oi];
                        for ci in 0..cg {
                            let cin = gidx * cg + ci;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as isize - pad as isize;
                                    let ix = (xx * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += w.data()[((oi * cg + ci) * k + ky) * k + kx]
                                        * x.data()
                                            [((ni * c + cin) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out[((ni * o + oi) * ho + y) * wo + xx] = s;
                    }
                }
            }
        }
        (vec![n, o, ho, wo], out)
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn conv2d_stem_shape() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 3, 64, 64]));
        let w = g.input(Tensor::zeros(&[24, 3, 5, 5]));
        let b = g.input(Tensor::zeros(&[24]));
        let y = g.conv2d(x, w, b, 2, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 24, 32, 32]);
    }

    #[test]
    fn conv2d_pointwise_is_per_pixel_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[2, 3, 4, 5]);
        let w = rand_tensor(&mut rng, &[4, 3, 1, 1]);
        let b = rand_tensor(&mut rng, &[4]);
        let mut g = Graph::<f64>::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let y = g.conv2d(xv, wv, bv, 1, 0).unwrap();
        for n in 0..2 {
            for p in 0..20 {
                for o in 0..4 {
                    let mut s = b.data()[o];
                    for c in 0..3 {
                        s += w.data()[o * 3 + c] * x.data()[(n * 3 + c) * 20 + p];
                    }
                    let got = g.value(y).data()[(n * 4 + o) * 20 + p];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[1, 1, 6, 6]);
        let mut g = Graph::<f64>::new();
        let xv = g.input(x.clone());
        let w = g.input(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = g.input(Tensor::zeros(&[1]));
        let y = g.conv2d(xv, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), x.data());
    }

    #[test]
    fn conv2d_matches_oracle_over_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [1usize, 3, 5] {
            for stride in 1..=3 {
                for pad in 0..=2 {
                    let x = rand_tensor(&mut rng, &[2, 3, 7, 6]);
                    let w = rand_tensor(&mut rng, &[2, 3, k, k]);
                    let b = rand_tensor(&mut rng, &[2]);
                    let mut g = Graph::<f64>::new();
                    let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
                    let y = g.conv2d(xv, wv, bv, stride, pad).unwrap();
                    let (shape, expect) = conv_oracle(&x, &w, b.data(), stride, pad, 1);
                    assert_eq!(g.shape(y), shape.as_slice());
                    assert_eq!(shape[2], conv_out_size(7, k, stride, pad).unwrap());
                    assert_close(g.value(y).data(), &expect, 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 2, 8, 8]));
        let w = g.input(Tensor::zeros(&[4, 3, 3, 3]));
        let b = g.input(Tensor::zeros(&[4]));
        assert!(matches!(
            g.conv2d(x, w, b, 1, 1),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn depthwise_all_ones_interior() {
        let c = 1.75f32;
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::full(&[1, 2, 6, 6], c));
        let w = g.input(Tensor::full(&[2, 1, 3, 3], 1.0));
        let b = g.input(Tensor::zeros(&[2]));
        let y = g.depthwise_conv2d(x, w, b, 1, 1).unwrap();
        let v = g.value(y);
        for ch in 0..2 {
            for yy in 1..5 {
                for xx in 1..5 {
                    assert_eq!(v.data()[(ch * 6 + yy) * 6 + xx], 9.0 * c);
                }
            }
        }
        // Corner sees a 2x2 window.
        assert_eq!(v.data()[0], 4.0 * c);
    }

    #[test]
    fn depthwise_stride_two_shape() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 4, 16, 16]));
        let w = g.input(Tensor::zeros(&[4, 1, 3, 3]));
        let b = g.input(Tensor::zeros(&[4]));
        let y = g.depthwise_conv2d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 4, 8, 8]);
    }

    #[test]
    fn depthwise_matches_grouped_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for stride in 1..=2 {
            let x = rand_tensor(&mut rng, &[1, 3, 4, 4]);
            let w = rand_tensor(&mut rng, &[3, 1, 3, 3]);
            let b = rand_tensor(&mut rng, &[3]);
            let mut g = Graph::<f64>::new();
            let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
            let y = g.depthwise_conv2d(xv, wv, bv, stride, 1).unwrap();
            let (shape, expect) = conv_oracle(&x, &w, b.data(), stride, 1, 3);
            assert_eq!(g.shape(y), shape.as_slice());
            assert_close(g.value(y).data(), &expect, 1e-12);
        }
    }

    #[test]
    fn linear_identity_and_shape() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let w = g.input(Tensor::from_fn(
            &[3, 3],
            |i| if i % 4 == 0 { 1.0 } else { 0.0 },
        ));
        let b = g.input(Tensor::zeros(&[3]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 224]));
        let w = g.input(Tensor::zeros(&[224, 2]));
        let b = g.input(Tensor::zeros(&[2]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.shape(y), &[1, 2]);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d, m) = (4, 7, 3);
        let x = rand_tensor(&mut rng, &[n, d]);
        let w = rand_tensor(&mut rng, &[d, m]);
        let b = rand_tensor(&mut rng, &[m]);
        let mut g = Graph::<f64>::new();
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(b.clone()));
        let y = g.linear(xv, wv, bv).unwrap();
        let mut expect = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut s = b.data()[j];
                for k in 0..d {
                    s += x.data()[i * d + k] * w.data()[k * m + j];
                }
                expect[i * m + j] = s;
            }
        }
        assert_close(g.value(y).data(), &expect, 1e-12);
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = g.input(Tensor::scalar(0.0));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).item().unwrap(), 0.5);
        let v = g.input(Tensor::from_vec(vec![3.0, 4.0]));
        let n = g.l2_norm(v).unwrap();
        assert_eq!(g.value(n).item().unwrap(), 5.0);
        assert!(g.shape(n).is_empty());
    }

    #[test]
    fn concat_mean_pool_pad() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap());
        let b = g.input(Tensor::new(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let m = g.mean(c, 0).unwrap();
        assert_eq!(g.value(m).data(), &[1.5, 4.0, 5.0]);

        let x = g.input(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64));
        let p = g.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(g.value(p).data(), &[5.0, 7.0, 13.0, 15.0]);
        let q = g.pad_channels(p, 3).unwrap();
        assert_eq!(g.shape(q), &[1, 3, 2, 2]);
        assert_eq!(&g.value(q).data()[4..], &[0.0; 8]);
    }

    #[test]
    fn backward_of_weighted_sum_is_input() {
        let mut g = Graph::<f64>::new();
        let xs = vec![0.5, -2.0, 3.0];
        let w = g.param("w", Tensor::from_vec(vec![1.0, 1.0, 1.0]));
        let x = g.input(Tensor::from_vec(xs.clone()));
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("w").unwrap().data(), xs.as_slice());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let w = g.param("w", Tensor::from_vec(vec![1.0, 2.0]));
        let y = g.relu(w);
        assert!(matches!(g.backward(y), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn disconnected_param_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param("a", Tensor::from_vec(vec![1.0, 2.0]));
        let _b = g.param("b", Tensor::from_vec(vec![5.0, 6.0, 7.0]));
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("b").unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w0 = rand_tensor(&mut rng, &[3, 2]);
        let x0 = rand_tensor(&mut rng, &[4, 3]);
        let b0 = rand_tensor(&mut rng, &[2]);
        let run = |which: u8| {
            let mut g = Graph::<f64>::new();
            let w = g.param("w", w0.clone());
            let b = g.param("b", b0.clone());
            let x = g.input(x0.clone());
            let y = g.linear(x, w, b).unwrap();
            let s = g.sigmoid(y);
            let l1 = g.sum(s);
            let sq = g.square(y);
            let l2 = g.sum(sq);
            let loss = match which {
                1 => l1,
                2 => l2,
                _ => g.add(l1, l2).unwrap(),
            };
            g.backward(loss).unwrap().param("w").unwrap()
        };
        let (g1, g2, g12) = (run(1), run(2), run(3));
        for i in 0..6 {
            assert!((g1.data()[i] + g2.data()[i] - g12.data()[i]).abs() < 1e-12);
        }
    }

    // Finite-difference checks at 64-bit precision: h = 1e-3 * 1e-2.
    const FD_SCALE: f64 = 1e-2;
    const FD_TOL: f64 = 1e-6;

    fn check<F>(seed: u64, shapes: &[&[usize]], build: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> crate::Result<Var> + Copy,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let inputs: Vec<Tensor<f64>> =
                shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
            let err = grad_check(build, &inputs, FD_SCALE).unwrap();
            assert!(err < FD_TOL, "relative error {err}");
        }
    }

    #[test]
    fn gradcheck_conv_and_depthwise() {
        check(10, &[&[2, 2, 5, 5], &[3, 2, 3, 3], &[3]], |g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
            let y = g.square(y);
            Ok(g.sum(y))
        });
        check(11, &[&[1, 3, 5, 4], &[3, 1, 3, 3], &[3]], |g, v| {
            let y = g.depthwise_conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = g.square(y);
            Ok(g.sum(y))
        });
    }

    #[test]
    fn gradcheck_linear_sigmoid_l2() {
        check(12, &[&[3, 4], &[4, 2], &[2]], |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            let s = g.sigmoid(y);
            let n = g.l2_norm(s)?;
            Ok(g.sum(n))
        });
    }
}
