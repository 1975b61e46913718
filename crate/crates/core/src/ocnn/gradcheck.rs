//! Central finite-difference checks of network gradients.

use super::layers::{Mode, ParamKind};
use super::loss::{batch_cross_entropy, batch_mse};
use super::network::Network;
use crate::error::{OcuError, Result};
use crate::tensorize::FeatureMap;

#[derive(Debug, Clone)]
pub enum Targets {
    Labels(Vec<usize>),
    Maps(Vec<FeatureMap>),
}

/// Mean loss of `outputs` against `targets` and its output gradients.
pub fn batch_loss(outputs: &[FeatureMap], targets: &Targets) -> Result<(f64, Vec<FeatureMap>)> {
    match targets {
        Targets::Labels(l) => batch_cross_entropy(outputs, l),
        Targets::Maps(m) => batch_mse(outputs, m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub kind: ParamKind,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Acceptance rule: `|a − n| ≤ max(abs_tol, rel_tol·max(|a|, |n|))`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { rel: 1e-4, abs: 1e-8 }
    }
}

fn loss_at(net: &mut Network, inputs: &[FeatureMap], targets: &Targets) -> Result<f64> {
    let out = net.forward(inputs, Mode::Train)?;
    Ok(batch_loss(&out, targets)?.0)
}

fn set_param(net: &mut Network, flat: usize, value: f64) {
    let mut seen = 0;
    net.visit_params(&mut |_, p, _| {
        if flat >= seen && flat < seen + p.len() {
            p[flat - seen] = value;
        }
        seen += p.len();
    });
}

/// Compares every analytic parameter gradient with a central difference.
///
/// Detection gains are checked with respect to `ln κ` (the coordinate the
/// optimizer steps in), i.e. `κ·∂L/∂κ` against a difference in `ln κ`;
/// their SI magnitudes make a plain absolute step meaningless.
pub fn check_gradients(
    net: &mut Network,
    inputs: &[FeatureMap],
    targets: &Targets,
    step: f64,
    tol: Tolerance,
) -> Result<GradCheckReport> {
    net.zero_grad();
    let out = net.forward(inputs, Mode::Train)?;
    let (_, grads) = batch_loss(&out, targets)?;
    net.backward(grads)?;
    let mut analytic = Vec::new();
    net.visit_params(&mut |kind, p, g| {
        for (i, (&v, &gv)) in p.iter().zip(g).enumerate() {
            analytic.push((kind, i, v, gv));
        }
    });
    let mut report = GradCheckReport::default();
    for (flat, &(kind, index, value, a)) in analytic.iter().enumerate() {
        let log_space = kind == ParamKind::Gain && value > 0.0;
        let (plus, minus) = if log_space {
            (value * step.exp(), value * (-step).exp())
        } else {
            (value + step, value - step)
        };
        set_param(net, flat, plus);
        let up = loss_at(net, inputs, targets)?;
        set_param(net, flat, minus);
        let down = loss_at(net, inputs, targets)?;
        set_param(net, flat, value);
        if !up.is_finite() || !down.is_finite() {
            return Err(OcuError::NonFinite("finite-difference loss"));
        }
        let n = (up - down) / (2.0 * step);
        let a = if log_space { a * value } else { a };
        let scale = a.abs().max(n.abs());
        let err = (a - n).abs();
        if scale > 0.0 {
            report.max_rel_error = report.max_rel_error.max(err / scale);
        }
        if err > tol.abs.max(tol.rel * scale) {
            report.mismatches.push(Mismatch {
                kind,
                index,
                analytic: a,
                numeric: n,
            });
        }
        report.checked += 1;
    }
    Ok(report)
}
