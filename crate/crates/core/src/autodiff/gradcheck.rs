//! Central-difference verification of reverse-mode gradients.

use crate::autodiff::params::ParamSet;
use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Lower bound on the relative-error denominator; gradients smaller
    /// than this are compared absolutely.
    pub floor: f64,
    /// Negates the analytic gradient before comparison (test hook for
    /// demonstrating that the check catches a wrong pullback).
    pub sign_flip: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-4,
            sign_flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// (parameter name, flat index, analytic, numeric) at the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar `f` against
/// `(f(x+eps) − f(x−eps)) / 2eps` for every trainable scalar in `params`.
pub fn grad_check<F>(f: F, params: &ParamSet<f64>, eps: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamSet<f64>) -> Result<Var<'t, f64>>,
{
    grad_check_with(
        f,
        params,
        &GradCheckOptions {
            eps,
            ..Default::default()
        },
    )
}

pub fn grad_check_with<F>(
    f: F,
    params: &ParamSet<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamSet<f64>) -> Result<Var<'t, f64>>,
{
    let analytic = {
        let tape = Tape::new();
        let loss = f(&tape, params)?;
        tape.backward(loss)?.param_grads(params)
    };
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let tape = Tape::new();
        Ok(f(&tape, p)?.item())
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let ids: Vec<_> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        for k in 0..params.get(id).tensor.len() {
            let orig = params.get(id).tensor.data()[k];
            probe.get_mut(id).tensor.data_mut()[k] = orig + opts.eps;
            let up = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[k] = orig - opts.eps;
            let down = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * opts.eps);
            let mut a = analytic[id.index()].data()[k];
            if opts.sign_flip {
                a = -a;
            }
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.get(id).name.clone(), k, a, numeric));
            }
        }
    }
    Ok(report)
}
