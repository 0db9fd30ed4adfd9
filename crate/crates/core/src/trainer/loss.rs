//! Loss terms and their gradients with respect to predicted values.

use crate::error::{MapError, Result};
use crate::field::FieldView;
use crate::sampler::SampleBatch;

pub const LOG_CLAMP: f64 = 1e-12;

/// Occupancy `1 / (1 + exp(s / sigma))` of a signed distance.
pub fn occupancy(s: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(MapError::Config(format!("temperature must be positive, got {sigma}")));
    }
    Ok(sigmoid(-s / sigma))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Mean binary cross-entropy between target and predicted occupancies, plus
/// its gradient with respect to each predicted signed distance.
///
/// Log arguments are clamped at `1e-12`; a clamped term contributes no
/// gradient.
pub fn bce(gt_sdf: &[f64], pred_sdf: &[f64], sigma: f64) -> Result<(f64, Vec<f64>)> {
    if gt_sdf.is_empty() {
        return Err(MapError::Empty("binary cross-entropy of an empty batch"));
    }
    if gt_sdf.len() != pred_sdf.len() {
        return Err(MapError::Shape("target and prediction lengths differ".into()));
    }
    if !(sigma > 0.0) {
        return Err(MapError::Config(format!("temperature must be positive, got {sigma}")));
    }
    let n = gt_sdf.len() as f64;
    let ln_clamp = LOG_CLAMP.ln();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(gt_sdf.len());
    for (&s, &p) in gt_sdf.iter().zip(pred_sdf) {
        let o = sigmoid(-s / sigma);
        let x = p / sigma;
        // ln(o_hat) = -softplus(x), ln(1 - o_hat) = -softplus(-x).
        let ln_o = -softplus(x);
        let ln_1mo = -softplus(-x);
        let o_hat = sigmoid(-x);
        let one_minus = sigmoid(x);
        let mut g = 0.0;
        let l1 = if ln_o > ln_clamp {
            // d/dp [-o ln o_hat] = o (1 - o_hat) / sigma
            g += o * one_minus / sigma;
            ln_o
        } else {
            ln_clamp
        };
        let l2 = if ln_1mo > ln_clamp {
            // d/dp [-(1 - o) ln(1 - o_hat)] = -(1 - o) o_hat / sigma
            g -= (1.0 - o) * o_hat / sigma;
            ln_1mo
        } else {
            ln_clamp
        };
        loss -= o * l1 + (1.0 - o) * l2;
        grad.push(g / n);
    }
    Ok((loss / n, grad))
}

/// Mean binary entropy of the target occupancies: the minimum of [`bce`].
pub fn target_entropy(gt_sdf: &[f64], sigma: f64) -> Result<f64> {
    bce(gt_sdf, gt_sdf, sigma).map(|(l, _)| l)
}

/// Mean `(|g| - 1)^2` over per-sample gradients, and its derivative with
/// respect to each gradient component.
pub fn eikonal(grads: &[[f64; 3]]) -> Result<(f64, Vec<[f64; 3]>)> {
    if grads.is_empty() {
        return Err(MapError::Empty("eikonal loss of an empty batch"));
    }
    let n = grads.len() as f64;
    let mut loss = 0.0;
    let mut d = Vec::with_capacity(grads.len());
    for g in grads {
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        loss += (norm - 1.0) * (norm - 1.0);
        if norm > 0.0 {
            let k = 2.0 * (norm - 1.0) / (norm * n);
            d.push([k * g[0], k * g[1], k * g[2]]);
        } else {
            d.push([0.0; 3]);
        }
    }
    Ok((loss / n, d))
}

/// Raw L1 distance between student and frozen teacher features, with
/// per-row multiplicities, and the student gradient `mult * sign(diff)`.
pub fn align_l1(student: &[f64], teacher: &[f64], width: usize, mult: &[f64]) -> Result<(f64, Vec<f64>)> {
    if student.len() != teacher.len() || student.len() != mult.len() * width {
        return Err(MapError::Shape("alignment feature shapes differ".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; student.len()];
    for (r, &m) in mult.iter().enumerate() {
        for k in r * width..(r + 1) * width {
            let diff = student[k] - teacher[k];
            loss += m * diff.abs();
            grad[k] = if diff > 0.0 {
                m
            } else if diff < 0.0 {
                -m
            } else {
                0.0
            };
        }
    }
    Ok((loss, grad))
}

/// Field-level cross-entropy over a sample batch.
pub fn bce_loss(batch: &SampleBatch, field: &FieldView<'_>, sigma: f64) -> Result<f64> {
    let gt: Vec<f64> = batch.samples.iter().map(|s| s.gt_sdf).collect();
    let pred = batch
        .samples
        .iter()
        .map(|s| field.predict_sdf(&s.position))
        .collect::<Result<Vec<_>>>()?;
    bce(&gt, &pred, sigma).map(|(l, _)| l)
}

/// Field-level eikonal loss using forward differences with step `h` (m).
pub fn eikonal_loss(batch: &SampleBatch, field: &FieldView<'_>, h: f64) -> Result<f64> {
    let grads = batch
        .samples
        .iter()
        .map(|s| field.sdf_forward_gradient(&s.position, h).map(|g| [g.x, g.y, g.z]))
        .collect::<Result<Vec<_>>>()?;
    eikonal(&grads).map(|(l, _)| l)
}
