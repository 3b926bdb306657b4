use rand::Rng;

use super::{Graph, Result, Tensor, TensorError, Var};
use crate::rng::stream_rng;

/// Gradient check on random inputs drawn from U(-1, 1), with every value
/// pushed at least 1e-3 away from zero so ReLU kinks are not straddled.
pub fn grad_check<F>(builder: F, input_shapes: &[Vec<usize>], eps: f64, seed: u64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = stream_rng(seed, &[0x6772_6164]);
    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    if v.abs() < 1e-3 {
                        v + 1e-3f64.copysign(v)
                    } else {
                        v
                    }
                })
                .collect();
            Tensor::new(shape.clone(), data)
        })
        .collect::<Result<_>>()?;
    grad_check_at(builder, &inputs, eps)
}

/// Compares analytic gradients of `builder`'s scalar output against central
/// differences and returns the largest `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check_at<F>(builder: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Invalid(format!("eps must be > 0, got {eps}")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = builder(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = builder(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut worst: f64 = 0.0;
    let mut probe = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            if !a.is_finite() || !numeric.is_finite() {
                return Err(TensorError::NonFinite("grad_check"));
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_eps() {
        let r = grad_check(|g, v| g.sum(v[0]), &[vec![2]], 0.0, 1);
        assert!(matches!(r, Err(TensorError::Invalid(_))));
    }

    #[test]
    fn exact_on_a_sum() {
        let err = grad_check(|g, v| g.sum(v[0]), &[vec![3, 2]], 1e-5, 3).unwrap();
        assert!(err < 1e-9);
    }
}
