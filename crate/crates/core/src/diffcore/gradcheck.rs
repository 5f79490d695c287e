//! Central-difference gradient checking.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// An objective recorded on a tape, together with the differentiable leaves
/// whose concatenated gradients correspond to the parameter vector.
pub struct Recorded {
    pub root: Var,
    pub params: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest `|g - ĝ| / max(|g|, |ĝ|, 1e-8)` over parameters.
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
    pub tol: f64,
}

impl FiniteDiffReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

pub fn relative_error(g: f64, g_hat: f64) -> f64 {
    (g - g_hat).abs() / g.abs().max(g_hat.abs()).max(1e-8)
}

/// Compares tape gradients of `build` at `theta` with central differences
/// `(f(θ + h eᵢ) - f(θ - h eᵢ)) / 2h`.
///
/// `build` must create its differentiable leaves from the parameter slice in
/// order so that their flattened gradients line up with `theta`.
pub fn finite_diff_check<F>(build: F, theta: &[f64], h: f64, tol: f64) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Tape, &[f64]) -> Result<Recorded>,
{
    if h <= 0.0 {
        return Err(Error::Contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut tape = Tape::new();
    let rec = build(&mut tape, theta)?;
    let grads = tape.backward(rec.root)?;
    let analytic: Vec<f64> = rec
        .params
        .iter()
        .flat_map(|&v| grads.wrt(v).data().to_vec())
        .collect();
    if analytic.len() != theta.len() {
        return Err(Error::Contract(format!(
            "objective exposes {} gradient entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }

    let eval = |point: &[f64]| -> Result<f64> {
        let mut t = Tape::new();
        let r = build(&mut t, point)?;
        Ok(t.scalar(r.root))
    };

    let mut numeric = Vec::with_capacity(theta.len());
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = eval(&probe)?;
        probe[i] = theta[i] - h;
        let down = eval(&probe)?;
        probe[i] = theta[i];
        numeric.push((up - down) / (2.0 * h));
    }

    let mut max_rel_err = 0.0;
    let mut worst_index = None;
    for (i, (g, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(*g, *n);
        if e > max_rel_err || worst_index.is_none() {
            max_rel_err = e;
            worst_index = Some(i);
        }
    }
    Ok(FiniteDiffReport {
        analytic,
        numeric,
        max_rel_err,
        worst_index,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn quadratic_matches_tightly() {
        // f(θ) = Σ θᵢ² + 3 θ₀
        let build = |tape: &mut Tape, th: &[f64]| {
            let x = tape.var(Tensor::row(th));
            let sq = tape.mul(x, x)?;
            let s = tape.sum(sq);
            let first = tape.masked_mean(x, &[1.0, 0.0, 0.0])?;
            let root = tape.weighted_sum(&[s, first], &[1.0, 3.0])?;
            Ok(Recorded {
                root,
                params: vec![x],
            })
        };
        let rep = finite_diff_check(build, &[0.5, -1.25, 2.0], 1e-6, 1e-6).unwrap();
        assert!(rep.passed(), "max rel err {}", rep.max_rel_err);
        assert!((rep.analytic[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_positive_step() {
        let build = |tape: &mut Tape, th: &[f64]| {
            let x = tape.var(Tensor::row(th));
            Ok(Recorded {
                root: tape.sum(x),
                params: vec![x],
            })
        };
        assert!(finite_diff_check(build, &[1.0], 0.0, 1e-6).is_err());
    }

    #[test]
    fn relu_gradient_matches_central_differences() {
        let build = |tape: &mut Tape, th: &[f64]| {
            let x = tape.var(Tensor::row(th));
            let r = tape.relu(x);
            let w = tape.constant(Tensor::row(&[0.7, -1.3]));
            let prod = tape.mul(r, w)?;
            Ok(Recorded {
                root: tape.sum(prod),
                params: vec![x],
            })
        };
        let rep = finite_diff_check(build, &[-1.0, 2.0], 1e-6, 1e-5).unwrap();
        assert!(rep.passed(), "max rel err {}", rep.max_rel_err);
    }
}
