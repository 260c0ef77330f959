//! Training targets for the instance branch: a Gaussian center heatmap and a
//! per-pixel offset field pointing at each instance's center of mass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panoptic::{DatasetSpec, PanopticId, PanopticMap};
use crate::raster::{Raster2D, Raster3D};

/// Per-pixel center confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterHeatmap {
    raster: Raster2D<f32>,
}

impl CenterHeatmap {
    pub fn new(raster: Raster2D<f32>) -> Result<Self> {
        if let Some(v) = raster.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParams(format!(
                "heatmap value {v} outside [0, 1]"
            )));
        }
        Ok(Self { raster })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            raster: Raster2D::filled(height, width, 0.0)?,
        })
    }

    #[inline]
    pub fn raster(&self) -> &Raster2D<f32> {
        &self.raster
    }

    pub fn into_raster(self) -> Raster2D<f32> {
        self.raster
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.raster.shape()
    }
}

/// Per-pixel `(row, col)` offsets to the owning instance's center, plus the
/// mask of pixels where the offset is meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    offsets: Raster3D<f32>,
    valid_mask: Raster2D<bool>,
}

impl OffsetField {
    pub fn new(offsets: Raster3D<f32>, valid_mask: Raster2D<bool>) -> Result<Self> {
        if offsets.channels() != 2 {
            return Err(Error::InvalidShape(format!(
                "offset field needs 2 channels, got {}",
                offsets.channels()
            )));
        }
        if (offsets.height(), offsets.width()) != valid_mask.shape() {
            return Err(Error::ShapeMismatch(format!(
                "offsets {}x{} vs mask {}x{}",
                offsets.height(),
                offsets.width(),
                valid_mask.height(),
                valid_mask.width()
            )));
        }
        Ok(Self {
            offsets,
            valid_mask,
        })
    }

    #[inline]
    pub fn offsets(&self) -> &Raster3D<f32> {
        &self.offsets
    }

    #[inline]
    pub fn valid_mask(&self) -> &Raster2D<bool> {
        &self.valid_mask
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        self.valid_mask.shape()
    }

    /// `(row, col)` offset at a pixel.
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> (f32, f32) {
        let px = self.offsets.pixel(row, col);
        (px[0], px[1])
    }

    pub fn into_parts(self) -> (Raster3D<f32>, Raster2D<bool>) {
        (self.offsets, self.valid_mask)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderParams {
    /// Standard deviation of the center Gaussian, in pixels.
    pub sigma: f32,
}

impl EncoderParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_finite() && self.sigma > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "sigma must be positive, got {}",
                self.sigma
            )))
        }
    }
}

impl Default for EncoderParams {
    fn default() -> Self {
        Self { sigma: 8.0 }
    }
}

/// Arithmetic mean of a set of pixel coordinates.
pub fn center_of_mass(instance_pixels: &[(usize, usize)]) -> Result<(f32, f32)> {
    let mut acc = MassAccumulator::default();
    for &(r, c) in instance_pixels {
        acc.push(r, c);
    }
    acc.center().ok_or(Error::EmptyInstance)
}

#[derive(Debug, Default, Clone, Copy)]
struct MassAccumulator {
    sum_row: u64,
    sum_col: u64,
    count: u64,
}

impl MassAccumulator {
    #[inline]
    fn push(&mut self, row: usize, col: usize) {
        self.sum_row += row as u64;
        self.sum_col += col as u64;
        self.count += 1;
    }

    fn center(&self) -> Option<(f32, f32)> {
        (self.count > 0).then(|| {
            let n = self.count as f64;
            (
                (self.sum_row as f64 / n) as f32,
                (self.sum_col as f64 / n) as f32,
            )
        })
    }
}

/// Centers of mass of every thing instance in `gt`, keyed by panoptic id.
pub fn instance_centers(gt: &PanopticMap, spec: &DatasetSpec) -> BTreeMap<PanopticId, (f32, f32)> {
    let void = spec.void_id();
    let mut acc: BTreeMap<PanopticId, MassAccumulator> = BTreeMap::new();
    for ((r, c), &id) in gt.raster().indexed_iter() {
        if id != void && spec.is_thing(spec.class_of(id)) {
            acc.entry(id).or_default().push(r, c);
        }
    }
    acc.into_iter()
        .filter_map(|(id, a)| a.center().map(|center| (id, center)))
        .collect()
}

/// Unit-peak Gaussian around every thing instance's center of mass, combined
/// by pixelwise maximum.
pub fn encode_center_heatmap(
    gt: &PanopticMap,
    spec: &DatasetSpec,
    params: &EncoderParams,
) -> Result<CenterHeatmap> {
    params.validate()?;
    let (height, width) = gt.shape();
    let mut heat = vec![0.0f32; height * width];
    let inv_two_var = 1.0 / (2.0 * f64::from(params.sigma).powi(2));
    for &(cr, cc) in instance_centers(gt, spec).values() {
        let (cr, cc) = (f64::from(cr), f64::from(cc));
        // exp(-(dr^2 + dc^2) k) = exp(-dr^2 k) * exp(-dc^2 k) would be cheaper
        // but is not bit-identical to the direct form.
        for (r, row) in heat.chunks_exact_mut(width).enumerate() {
            let dr2 = (r as f64 - cr).powi(2);
            for (c, v) in row.iter_mut().enumerate() {
                let g = (-(dr2 + (c as f64 - cc).powi(2)) * inv_two_var).exp() as f32;
                if g > *v {
                    *v = g;
                }
            }
        }
    }
    Ok(CenterHeatmap {
        raster: Raster2D::from_vec(height, width, heat)?,
    })
}

/// Offset from each thing pixel to its instance's center of mass; zero with
/// the mask cleared everywhere else.
pub fn encode_offsets(gt: &PanopticMap, spec: &DatasetSpec) -> Result<OffsetField> {
    let (height, width) = gt.shape();
    let centers = instance_centers(gt, spec);
    let mut offsets = Raster3D::filled(height, width, 2, 0.0f32)?;
    let mut mask = Raster2D::filled(height, width, false)?;
    for ((r, c), id) in gt.raster().indexed_iter() {
        if let Some(&(cr, cc)) = centers.get(id) {
            offsets.set(r, c, 0, cr - r as f32);
            offsets.set(r, c, 1, cc - c as f32);
            mask.set(r, c, true);
        }
    }
    OffsetField::new(offsets, mask)
}
