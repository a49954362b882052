//! Central finite-difference checks for the hand-written backward passes.

use super::{ForwardCtx, Layer, Tensor};
use crate::error::{Error, Result};

/// Relative tolerance used by the gradient checks.
pub const REL_TOL: f64 = 1e-4;
/// Absolute differences below this always pass.
pub const ABS_FLOOR: f64 = 1e-6;

/// `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps` for every coordinate `i`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, ABS_FLOOR / REL_TOL)` over all coordinates.
///
/// Staying below [`REL_TOL`] means every entry matches to 1e-4 relative or
/// 1e-6 absolute, whichever is looser.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR / REL_TOL))
        .fold(0.0, f64::max)
}

/// Checks the input gradient and every parameter gradient of `layer` at `x`
/// against central differences of `loss = sum(proj * layer(x))`, returning the
/// worst [`max_relative_error`].
pub fn check_layer(layer: &Layer, x: &Tensor, proj: &Tensor, eps: f64) -> Result<f64> {
    let loss = |l: &Layer, input: &Tensor| -> f64 {
        let (y, _) = l.forward(input, &mut ForwardCtx::inference()).expect("forward during gradient check");
        y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let (y, cache) = layer.forward(x, &mut ForwardCtx::inference())?;
    proj.expect_shape(y.shape())?;
    let (gx, grads) = layer.backward(&cache, proj)?;

    let numeric = numeric_gradient(
        |v| loss(layer, &Tensor::from_vec(x.shape(), v.to_vec()).unwrap()),
        x.data(),
        eps,
    );
    let mut worst = max_relative_error(gx.data(), &numeric);
    let count = layer.params().len();
    if grads.len() != count {
        return Err(Error::Invalid(format!(
            "layer {} returned {} gradients for {count} parameters",
            layer.name,
            grads.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        let base = layer.params()[i].1.clone();
        g.expect_shape(base.shape())?;
        let mut probe = layer.clone();
        let numeric = numeric_gradient(
            |v| {
                probe.params_mut()[i].data_mut().copy_from_slice(v);
                loss(&probe, x)
            },
            base.data(),
            eps,
        );
        worst = worst.max(max_relative_error(g.data(), &numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-5);
        assert!(max_relative_error(&[4.0, 3.0], &g) < 1e-9);
    }

    #[test]
    fn floor_absorbs_tiny_differences() {
        assert!(max_relative_error(&[1e-9], &[0.0]) < REL_TOL);
        assert!(max_relative_error(&[1.0], &[1.001]) > REL_TOL);
    }
}
