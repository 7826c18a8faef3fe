//! Central finite-difference checking of analytic gradients.

use super::{Elem, Tensor};

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences at every coordinate of `x`. Returns the maximum of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must rebuild its graph on every call; it receives a fresh tensor each
/// time, so captured parameters stay fixed while `x` varies.
pub fn finite_diff_check<E: Elem>(
    f: impl Fn(&Tensor<E>) -> Tensor<E>,
    x: &Tensor<E>,
    step: f64,
) -> f64 {
    let all: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_sampled(f, x, step, &all)
}

/// [`finite_diff_check`] restricted to the given coordinates of `x`.
pub fn finite_diff_check_sampled<E: Elem>(
    f: impl Fn(&Tensor<E>) -> Tensor<E>,
    x: &Tensor<E>,
    step: f64,
    coords: &[usize],
) -> f64 {
    let shape = x.shape().to_vec();
    let base = x.to_vec();

    let leaf = Tensor::param(&shape, base.clone());
    let out = f(&leaf);
    assert_eq!(out.numel(), 1, "finite_diff_check requires a scalar-valued f");
    out.backward();
    let analytic = leaf
        .grad()
        .expect("f does not depend on x: no gradient reached the input");

    let h = E::of(step);
    let mut max_rel = 0.0f64;
    for &i in coords {
        let mut plus = base.clone();
        plus[i] += h;
        let fp = f(&Tensor::from_vec(&shape, plus)).item().as_f64();
        let mut minus = base.clone();
        minus[i] -= h;
        let fm = f(&Tensor::from_vec(&shape, minus)).item().as_f64();
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}

/// Finite-difference check against a live parameter tensor: `loss_fn`
/// evaluates the model as-is, the parameter is perturbed in place at the
/// given coordinates. The analytic gradient comes from one backward pass.
pub fn finite_diff_check_param<E: Elem>(
    loss_fn: impl Fn() -> Tensor<E>,
    param: &Tensor<E>,
    step: f64,
    coords: &[usize],
) -> f64 {
    param.zero_grad();
    let loss = loss_fn();
    loss.backward();
    let analytic = param
        .grad()
        .expect("loss does not depend on the parameter: no gradient reached it");
    let base = param.to_vec();
    let h = E::of(step);
    let mut max_rel = 0.0f64;
    for &i in coords {
        param.update_data(|d| d[i] = base[i] + h);
        let fp = loss_fn().item().as_f64();
        param.update_data(|d| d[i] = base[i] - h);
        let fm = loss_fn().item().as_f64();
        param.update_data(|d| d[i] = base[i]);
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic[i].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    param.zero_grad();
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_exact() {
        let x = Tensor::<f64>::from_f64s(&[2, 3], &[0.3, -1.2, 2.0, 0.7, -0.5, 1.1]);
        let err = finite_diff_check(|t| t.sum_all(), &x, 1e-5);
        assert!(err <= 1e-10, "sum gradient error {err}");
    }

    #[test]
    fn sigmoid_gradient_matches() {
        let x = Tensor::<f64>::from_f64s(&[2, 2], &[0.25, -0.8, 1.6, -2.2]);
        let err = finite_diff_check(|t| t.sigmoid().sum_all(), &x, 1e-5);
        assert!(err <= 1e-6, "sigmoid gradient error {err}");
    }
}
