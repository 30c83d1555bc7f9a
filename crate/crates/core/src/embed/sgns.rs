//! Skip-gram negative-sampling loss for a single (center, context) pair.

use crate::error::{Error, Result};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `(σ(x), ln σ(x), ln σ(−x))` from a single exponential.
#[inline]
pub(crate) fn sigmoid_terms(x: f64) -> (f64, f64, f64) {
    let e = (-x.abs()).exp();
    let l = e.ln_1p();
    if x >= 0.0 {
        (1.0 / (1.0 + e), -l, -x - l)
    } else {
        (e / (1.0 + e), x - l, -l)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgnsGrad {
    /// `−log σ(c·t) − Σ_k log σ(−c·n_k)`
    pub loss: f64,
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Per-pair loss (to be minimized) and its exact gradients with respect to
/// the center vector, the context vector and every negative vector.
pub fn sgns_loss_and_grad(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> Result<SgnsGrad> {
    let dim = center.len();
    for v in std::iter::once(context).chain(negatives.iter().copied()) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: v.len(),
            });
        }
    }
    let mut grad_center = vec![0.0; dim];

    let f = dot(center, context);
    let mut loss = -log_sigmoid(f);
    // d/df [−log σ(f)] = σ(f) − 1
    let g = sigmoid(f) - 1.0;
    axpy(g, context, &mut grad_center);
    let grad_context: Vec<f64> = center.iter().map(|c| g * c).collect();

    let grad_negatives = negatives
        .iter()
        .map(|n| {
            let f = dot(center, n);
            loss -= log_sigmoid(-f);
            // d/df [−log σ(−f)] = σ(f)
            let g = sigmoid(f);
            axpy(g, n, &mut grad_center);
            center.iter().map(|c| g * c).collect()
        })
        .collect();

    Ok(SgnsGrad {
        loss,
        center: grad_center,
        context: grad_context,
        negatives: grad_negatives,
    })
}
