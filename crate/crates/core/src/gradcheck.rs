//! Central finite-difference verification of tape gradients.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::rng::RandomSource;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Smallest denominator used by [`relative_error`]. Central differences at
/// `h = 1e-5` on an `O(1)` loss carry about `1e-11` of rounding noise, so
/// smaller gradients cannot be resolved to `1e-4` relative accuracy.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    math::abs(analytic - numeric)
        / math::abs(analytic)
            .max(math::abs(numeric))
            .max(RELATIVE_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::dim("check_gradients", v.shape(), &[1]));
    }
    let loss = v.data()[0];
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {loss}")));
    }
    Ok(loss)
}

/// Worst relative error between tape gradients and central differences
/// `(f(θ+h) - f(θ-h)) / 2h` over every coordinate of every tensor in
/// `params`.
///
/// `f` builds a scalar from the bound parameters. It is re-run for every
/// perturbation, so any randomness inside it must be replayed from a fixed
/// seed on each call.
pub fn check_gradients<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_coordinates(&f, params, h, |p| (0..p.len()).collect())
}

/// Like [`check_gradients`], but probes at most `per_tensor` randomly chosen
/// coordinates of each tensor.
pub fn check_gradients_sampled<F>(
    f: F,
    params: &[Tensor],
    h: f64,
    per_tensor: usize,
    rng: &mut RandomSource,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_coordinates(&f, params, h, |p| {
        let mut idx = rng.permutation(p.len());
        idx.truncate(per_tensor);
        idx
    })
}

fn check_coordinates<F>(
    f: &F,
    params: &[Tensor],
    h: f64,
    mut coords: impl FnMut(&Tensor) -> Vec<usize>,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::param("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = tape.value(out).data().first().copied().unwrap_or(f64::NAN);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss evaluated to {loss}")));
    }
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]);
        for e in coords(p) {
            let a = analytic.map_or(0.0, |g| g[e]);
            let orig = p.data()[e];
            probe[pi].data_mut()[e] = orig + h;
            let plus = evaluate(f, &probe)?;
            probe[pi].data_mut()[e] = orig - h;
            let minus = evaluate(f, &probe)?;
            probe[pi].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let err =
            check_gradients(|t, v| t.mul(v[0], v[0]), &[Tensor::vector(&[3.0])], 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_is_exact() {
        let err = check_gradients(
            |t, v| {
                let y = t.affine(v[0], 2.5, -1.0);
                Ok(t.sum(y))
            },
            &[Tensor::vector(&[0.3, -0.7, 1.1])],
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let r = check_gradients(
            |t, v| {
                let big = t.affine(v[0], f64::INFINITY, 0.0);
                Ok(t.sum(big))
            },
            &[Tensor::vector(&[1.0])],
            1e-5,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-7, 0.0) - 0.1).abs() < 1e-12);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
