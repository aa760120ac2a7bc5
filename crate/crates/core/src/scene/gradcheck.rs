//! Central-difference verification of hand-derived gradients.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the analytic gradient returned by `loss` at `params` with central
/// differences of step `eps` on every coordinate.
///
/// The per-coordinate error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(loss: F, params: &[f64], eps: f64) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    grad_check_coords(loss, params, eps, 0..params.len())
}

/// As [`grad_check`], restricted to the given coordinates.
pub fn grad_check_coords<F, I>(loss: F, params: &[f64], eps: f64, coords: I) -> Result<GradCheck>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
    I: IntoIterator<Item = usize>,
{
    let (value, analytic) = loss(params);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss("at the unperturbed parameters".into()));
    }
    assert_eq!(analytic.len(), params.len(), "gradient length mismatch");
    let mut numeric = vec![0.0; params.len()];
    let mut worst = (0.0, 0);
    let mut x = params.to_vec();
    for i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = loss(&x).0;
        x[i] = orig - eps;
        let fm = loss(&x).0;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteLoss(format!("perturbing coordinate {i}")));
        }
        numeric[i] = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let n = numeric[i];
        let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_index: worst.1,
        analytic,
        numeric,
    })
}
