//! Finite-difference gradient checking.

use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Divisor floor for the relative-error formula.
pub const GRAD_EPS_DIV: f64 = 1e-8;

/// Outcome of a gradient check: analytic vs central-difference gradients
/// of a scalar-valued tensor function.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

impl GradReport {
    fn from_pair(analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        for (&a, &n) in analytic.iter().zip(&numeric) {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(GRAD_EPS_DIV);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        GradReport {
            analytic,
            numeric,
            max_abs_err: max_abs,
            max_rel_err: max_rel,
        }
    }
}

fn eval_scalar<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let out = f(&mut tape, v)?;
    let value = tape.value(out);
    if value.numel() != 1 {
        return Err(Error::Shape(format!(
            "grad_check: f must be scalar-valued, got shape {:?}",
            value.shape()
        )));
    }
    Ok(value.data()[0])
}

/// Checks the tape gradient of `f` at `x` against central differences
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
///
/// `f` must be scalar-valued and deterministic; `x` must be small
/// (at most 10^4 elements) since the numeric pass is O(numel) forwards.
pub fn grad_check<F>(f: &F, x: &Tensor<f64>, eps: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if x.numel() > 10_000 {
        return Err(Error::Config(format!(
            "grad_check: input has {} elements, limit is 10000",
            x.numel()
        )));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::Config("grad_check: eps must be positive".into()));
    }

    // A non-deterministic f invalidates the comparison.
    let first = eval_scalar(f, x)?;
    let second = eval_scalar(f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Numeric(
            "grad_check: f is non-deterministic; check invalidated".into(),
        ));
    }

    let analytic = {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone(), true);
        let out = f(&mut tape, v)?;
        if tape.value(out).numel() != 1 {
            return Err(Error::Shape(
                "grad_check: f must be scalar-valued".into(),
            ));
        }
        tape.backward(out)?;
        tape.grad(v)
            .map(|g| g.to_f64_vec())
            .unwrap_or_else(|| vec![0.0; x.numel()])
    };

    let mut numeric = Vec::with_capacity(x.numel());
    let base = x.data().to_vec();
    for i in 0..x.numel() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let f_plus = eval_scalar(f, &Tensor::from_vec(x.shape(), plus)?)?;
        let f_minus = eval_scalar(f, &Tensor::from_vec(x.shape(), minus)?)?;
        numeric.push((f_plus - f_minus) / (2.0 * eps));
    }

    Ok(GradReport::from_pair(analytic, numeric))
}
