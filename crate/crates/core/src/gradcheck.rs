//! Central finite differences for verifying analytic gradients.
//!
//! The checker never touches [`crate::autodiff::Graph::backward`]: it
//! evaluates a forward-only loss closure at perturbed inputs, so it stays
//! an independent oracle for the reverse-mode path.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Coordinates where both gradients are below this magnitude count as
/// matching; relative error is not meaningful at that scale.
pub const ZERO_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `loss` with respect to every entry of
/// every tensor in `inputs`. `loss` must be a pure function of the inputs.
pub fn numerical_gradient<S, F>(mut loss: F, inputs: &[Tensor<S>], step: S) -> Vec<Tensor<S>>
where
    S: Scalar,
    F: FnMut(&[Tensor<S>]) -> S,
{
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    let two = S::from_f64(2.0).expect("2 fits scalar");
    let mut grads = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = Tensor::zeros_like(&inputs[t]);
        for i in 0..inputs[t].len() {
            let original = work[t].at(i);
            work[t].data_mut()[i] = original + step;
            let up = loss(&work);
            work[t].data_mut()[i] = original - step;
            let down = loss(&work);
            work[t].data_mut()[i] = original;
            grad.data_mut()[i] = (up - down) / (two * step);
        }
        grads.push(grad);
    }
    grads
}

/// Worst relative error between an analytic gradient and its numerical
/// counterpart, over all coordinates.
///
/// Per coordinate: `|a - n| / max(|a|, |n|, ZERO_FLOOR)`.
pub fn max_relative_error<S: Scalar>(analytic: &Tensor<S>, numerical: &Tensor<S>) -> f64 {
    assert_eq!(
        analytic.shape(),
        numerical.shape(),
        "gradient shapes differ"
    );
    let floor = ZERO_FLOOR;
    let mut worst = 0.0f64;
    for i in 0..analytic.len() {
        let a = analytic.at(i).to_f64().unwrap_or(f64::NAN);
        let n = numerical.at(i).to_f64().unwrap_or(f64::NAN);
        let denom = a.abs().max(n.abs()).max(floor);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random composition of graph primitives up to depth 4, built from
    /// plain input tensors so the same function can be evaluated with or
    /// without recording gradients.
    fn random_case(seed: u64) -> (Vec<Tensor<f64>>, impl Fn(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..5usize);
        let m = rng.gen_range(2..5usize);
        let uniform = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        let inputs = vec![
            Tensor::vector(uniform(&mut rng, n)),
            Tensor::matrix(m, n, uniform(&mut rng, m * n)),
            Tensor::vector(uniform(&mut rng, m)),
            Tensor::matrix(m, m, uniform(&mut rng, m * m)),
            Tensor::vector(uniform(&mut rng, m)),
        ];
        let path = rng.gen_range(0..3u8);
        let eval = move |ts: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let x = g.parameter(ts[0].clone());
            let w1 = g.parameter(ts[1].clone());
            let b1 = g.parameter(ts[2].clone());
            let w2 = g.parameter(ts[3].clone());
            let b2 = g.parameter(ts[4].clone());
            let h = g.affine(x, w1, b1).unwrap();
            let h = match path {
                0 => g.relu(h).unwrap(),
                1 => g.sigmoid(h).unwrap(),
                _ => g.softmax(h).unwrap(),
            };
            let h2 = g.affine(h, w2, b2).unwrap();
            let s = g.sigmoid(h2).unwrap();
            let sm = g.softmax(s).unwrap();
            let joined = g.concat(&[h, sm]).unwrap();
            let total = g.sum_all(joined).unwrap();
            let grads = g.backward(total).unwrap();
            let analytic = [x, w1, b1, w2, b2]
                .iter()
                .map(|&id| grads.get(id).unwrap().clone())
                .collect();
            (g.value(total).item(), analytic)
        };
        (inputs, eval)
    }

    #[test]
    fn random_compositions_match_finite_differences() {
        for seed in 0..40u64 {
            let (inputs, eval) = random_case(seed);
            let (_, analytic) = eval(&inputs);
            let numeric = numerical_gradient(|ts| eval(ts).0, &inputs, DEFAULT_STEP);
            for (a, n) in analytic.iter().zip(&numeric) {
                let err = max_relative_error(a, n);
                assert!(err < 1e-4, "seed {seed}: relative error {err}");
            }
        }
    }

    #[test]
    fn weighted_sum_and_embed_match_finite_differences() {
        let inputs = vec![
            Tensor::matrix(4, 3, (0..12).map(|i| 0.3 * (i as f64) - 1.5).collect()),
            Tensor::vector(vec![0.4, -0.8, 1.3]),
        ];
        let eval = |ts: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let table = g.parameter(ts[0].clone());
            let w = g.parameter(ts[1].clone());
            let e = g.embed(table, &[0, 2, 3]).unwrap();
            let sw = g.softmax(w).unwrap();
            let ctx = g.weighted_sum(sw, e).unwrap();
            let mean = g.row_mean(e).unwrap();
            let prod = g.mul(ctx, mean).unwrap();
            let total = g.sum_all(prod).unwrap();
            let grads = g.backward(total).unwrap();
            (
                g.value(total).item(),
                vec![
                    grads.get(table).unwrap().clone(),
                    grads.get(w).unwrap().clone(),
                ],
            )
        };
        let (_, analytic) = eval(&inputs);
        let numeric = numerical_gradient(|ts| eval(ts).0, &inputs, DEFAULT_STEP);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(max_relative_error(a, n) < 1e-4);
        }
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        for &(p0, y) in &[(0.3, 1.0), (0.7, 0.0), (0.999, 1.0), (0.001, 0.0)] {
            let inputs = vec![Tensor::scalar(p0)];
            let eval = |ts: &[Tensor<f64>]| {
                let mut g = Graph::new();
                let p = g.parameter(ts[0].clone());
                let l = g.bce_loss(p, y).unwrap();
                let grads = g.backward(l).unwrap();
                (g.value(l).item(), grads.get(p).unwrap().item())
            };
            let (_, analytic) = eval(&inputs);
            let numeric = numerical_gradient(|ts| eval(ts).0, &inputs, 1e-6);
            let diff = (analytic - numeric[0].item()).abs();
            let denom = analytic.abs().max(numeric[0].item().abs()).max(1e-6);
            assert!(diff / denom < 1e-4, "p={p0} y={y}");
        }
    }
}
