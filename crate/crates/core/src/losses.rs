//! Training objectives with analytic gradients w.r.t. the prediction rasters.
//!
//! Inputs are generic over any `Copy + Into<f64>` element so the same code
//! serves `f32` network outputs and `f64` finite-difference probes. All
//! reductions accumulate in `f64` in row-major order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Raster2D, Raster3D};
use crate::targets::OffsetField;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult<G> {
    pub value: f64,
    pub gradient: G,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub w_semantic: f64,
    pub w_heatmap: f64,
    pub w_offset: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_semantic: 1.0,
            w_heatmap: 200.0,
            w_offset: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_semantic, self.w_heatmap, self.w_offset];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "loss weights must be finite and non-negative: {all:?}"
            )))
        }
    }
}

/// Mean softmax cross-entropy over pixels whose label is not `void_label`.
pub fn semantic_ce_loss<T>(
    logits: &Raster3D<T>,
    labels: &Raster2D<u32>,
    void_label: u32,
) -> Result<LossResult<Raster3D<f64>>>
where
    T: Copy + Into<f64>,
{
    let (h, w, classes) = logits.shape();
    if (h, w) != labels.shape() {
        return Err(Error::ShapeMismatch(format!(
            "logits {h}x{w} vs labels {}x{}",
            labels.height(),
            labels.width()
        )));
    }
    let mut n_valid = 0usize;
    for &label in labels.data() {
        if label == void_label {
            continue;
        }
        if label as usize >= classes {
            return Err(Error::InvalidParams(format!(
                "label {label} outside 0..{classes}"
            )));
        }
        n_valid += 1;
    }
    if n_valid == 0 {
        return Err(Error::DegenerateInput(
            "every pixel is void; cross-entropy is undefined".into(),
        ));
    }
    let inv_n = 1.0 / n_valid as f64;

    let mut grad = vec![0.0f64; h * w * classes];
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; classes];
    for (px, (&label, g)) in labels
        .data()
        .iter()
        .zip(grad.chunks_exact_mut(classes))
        .enumerate()
    {
        if label == void_label {
            continue;
        }
        let z = &logits.data()[px * classes..(px + 1) * classes];
        let max = z
            .iter()
            .map(|&v| v.into())
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &v) in probs.iter_mut().zip(z) {
            *p = (v.into() - max).exp();
            sum += *p;
        }
        // -log softmax[label] = log(sum) - (z_label - max)
        total += sum.ln() - (z[label as usize].into() - max);
        for (k, (gk, p)) in g.iter_mut().zip(&probs).enumerate() {
            let onehot = if k == label as usize { 1.0 } else { 0.0 };
            *gk = (p / sum - onehot) * inv_n;
        }
    }
    Ok(LossResult {
        value: total * inv_n,
        gradient: Raster3D::from_vec(h, w, classes, grad)?,
    })
}

/// Mean squared error over all pixels.
pub fn heatmap_mse_loss<T>(
    pred: &Raster2D<T>,
    gt: &Raster2D<T>,
) -> Result<LossResult<Raster2D<f64>>>
where
    T: Copy + Into<f64>,
{
    pred.ensure_same_shape(gt, "heatmap mse")?;
    let inv_n = 1.0 / pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| {
            let d = p.into() - g.into();
            total += d * d;
            2.0 * d * inv_n
        })
        .collect();
    Ok(LossResult {
        value: total * inv_n,
        gradient: Raster2D::from_vec(pred.height(), pred.width(), grad)?,
    })
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of sigmoid(logits) against soft targets, averaged
/// over all pixels.
pub fn heatmap_sigmoid_ce_loss<T, U>(
    pred_logits: &Raster2D<T>,
    gt: &Raster2D<U>,
) -> Result<LossResult<Raster2D<f64>>>
where
    T: Copy + Into<f64>,
    U: Copy + Into<f64>,
{
    pred_logits.ensure_same_shape(gt, "heatmap sigmoid ce")?;
    let inv_n = 1.0 / pred_logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred_logits.len());
    for (&x, &g) in pred_logits.data().iter().zip(gt.data()) {
        let (x, g) = (x.into(), g.into());
        if !(0.0..=1.0).contains(&g) {
            return Err(Error::InvalidParams(format!("target {g} outside [0, 1]")));
        }
        total += softplus(x) - g * x;
        grad.push((sigmoid(x) - g) * inv_n);
    }
    // softplus(x) - g x is bounded below by the target entropy, not by zero;
    // rounding can push a perfect fit a hair negative.
    Ok(LossResult {
        value: (total * inv_n).max(0.0),
        gradient: Raster2D::from_vec(pred_logits.height(), pred_logits.width(), grad)?,
    })
}

/// L1 distance over both channels at pixels marked in `valid`, normalized by
/// `max(1, #valid)`. Subgradient `sign(0) = 0`.
pub fn offset_l1_loss<T>(
    pred: &Raster3D<T>,
    gt: &Raster3D<T>,
    valid: &Raster2D<bool>,
) -> Result<LossResult<Raster3D<f64>>>
where
    T: Copy + Into<f64>,
{
    pred.ensure_same_shape(gt, "offset l1")?;
    if (pred.height(), pred.width()) != valid.shape() {
        return Err(Error::ShapeMismatch("offset l1: mask shape".into()));
    }
    let ch = pred.channels();
    let n_valid = valid.data().iter().filter(|&&m| m).count();
    let inv_n = 1.0 / n_valid.max(1) as f64;
    let mut total = 0.0;
    let mut grad = vec![0.0f64; pred.data().len()];
    for (px, _) in valid.data().iter().enumerate().filter(|(_, &m)| m) {
        let span = px * ch..(px + 1) * ch;
        for ((g, &p), &t) in grad[span.clone()]
            .iter_mut()
            .zip(&pred.data()[span.clone()])
            .zip(&gt.data()[span])
        {
            let d = p.into() - t.into();
            total += d.abs();
            *g = if d > 0.0 {
                inv_n
            } else if d < 0.0 {
                -inv_n
            } else {
                0.0
            };
        }
    }
    Ok(LossResult {
        value: total * inv_n,
        gradient: Raster3D::from_vec(pred.height(), pred.width(), ch, grad)?,
    })
}

/// [`offset_l1_loss`] activated by the ground-truth field's valid mask.
pub fn offset_field_l1_loss(
    pred: &OffsetField,
    gt: &OffsetField,
) -> Result<LossResult<Raster3D<f64>>> {
    offset_l1_loss(pred.offsets(), gt.offsets(), gt.valid_mask())
}

/// Weighted sum of the semantic, heatmap and offset loss values.
pub fn total_loss(semantic: f64, heatmap: f64, offset: f64, weights: &LossWeights) -> f64 {
    weights.w_semantic * semantic + weights.w_heatmap * heatmap + weights.w_offset * offset
}
