//! Seeded corruption of ground-truth targets into stand-in network outputs.

use serde::{Deserialize, Serialize};

use super::rng::SeededRng;
use crate::error::{Error, Result};
use crate::panoptic::{DatasetSpec, SemanticRaster};
use crate::targets::{CenterHeatmap, OffsetField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub semantic_flip_rate: f64,
    pub heatmap_noise_std: f32,
    /// Standard deviation per offset channel, in pixels.
    pub offset_noise_std: f32,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            semantic_flip_rate: 0.0,
            heatmap_noise_std: 0.0,
            offset_noise_std: 0.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.semantic_flip_rate) {
            return Err(Error::InvalidParams(format!(
                "semantic_flip_rate {} outside [0, 1]",
                self.semantic_flip_rate
            )));
        }
        if !(self.heatmap_noise_std >= 0.0 && self.heatmap_noise_std.is_finite())
            || !(self.offset_noise_std >= 0.0 && self.offset_noise_std.is_finite())
        {
            return Err(Error::InvalidParams(
                "noise std must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub semantic: SemanticRaster,
    pub heatmap: CenterHeatmap,
    pub offsets: OffsetField,
}

/// Flips labels, jitters the heatmap and the offsets, in that order, from a
/// single stream seeded with `noise.seed`.
///
/// Every non-void pixel draws one uniform; a flipped pixel draws one more to
/// choose among the other `num_classes - 1` classes. Every heatmap pixel then
/// draws one normal, and every offset channel one normal, in row-major
/// order. The valid mask passes through unchanged.
pub fn perturb_predictions(
    semantic: &SemanticRaster,
    heatmap: &CenterHeatmap,
    offsets: &OffsetField,
    noise: &NoiseConfig,
    spec: &DatasetSpec,
) -> Result<Predictions> {
    noise.validate()?;
    semantic.ensure_same_shape(heatmap.raster(), "perturb: semantic vs heatmap")?;
    if offsets.shape() != semantic.shape() {
        return Err(Error::ShapeMismatch("perturb: semantic vs offsets".into()));
    }
    let mut rng = SeededRng::new(noise.seed);
    let classes = u64::from(spec.num_classes);

    let mut sem = semantic.clone();
    for label in sem.data_mut() {
        if *label >= spec.num_classes {
            continue;
        }
        if rng.uniform() < noise.semantic_flip_rate && classes > 1 {
            let k = rng.below(classes - 1) as u32;
            *label = if k < *label { k } else { k + 1 };
        }
    }

    let std = f64::from(noise.heatmap_noise_std);
    let mut heat = heatmap.raster().clone();
    for v in heat.data_mut() {
        let z = rng.normal();
        *v = (f64::from(*v) + std * z).clamp(0.0, 1.0) as f32;
    }

    let std = f64::from(noise.offset_noise_std);
    let (mut field, mask) = offsets.clone().into_parts();
    for v in field.data_mut() {
        let z = rng.normal();
        *v = (f64::from(*v) + std * z) as f32;
    }

    Ok(Predictions {
        semantic: sem,
        heatmap: CenterHeatmap::new(heat)?,
        offsets: OffsetField::new(field, mask)?,
    })
}
