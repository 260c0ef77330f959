//! Bottom-up inference: center extraction, offset-based pixel grouping,
//! majority-vote fusion with the semantic prediction and the stuff-area
//! filter.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panoptic::{
    encode_panoptic_id, ClassId, DatasetSpec, PanopticId, PanopticMap, SemanticRaster,
};
use crate::raster::Raster2D;
use crate::targets::{CenterHeatmap, OffsetField};

/// A detected heatmap peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceCenter {
    pub row: usize,
    pub col: usize,
    pub score: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessParams {
    pub center_threshold: f32,
    pub nms_kernel: usize,
    pub max_centers: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            center_threshold: 0.1,
            nms_kernel: 7,
            max_centers: 200,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.center_threshold) {
            return Err(Error::InvalidParams(format!(
                "center_threshold {} outside [0, 1]",
                self.center_threshold
            )));
        }
        if self.nms_kernel.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "nms_kernel must be odd, got {}",
                self.nms_kernel
            )));
        }
        if self.max_centers == 0 {
            return Err(Error::InvalidParams("max_centers must be positive".into()));
        }
        Ok(())
    }
}

/// Class-agnostic instance ids; 0 marks pixels owned by no instance.
pub type InstanceIdMap = Raster2D<u32>;

/// Thresholded peaks that win their `nms_kernel x nms_kernel` window, ties
/// going to the smallest `(row, col)`. Sorted by descending score, then
/// ascending `(row, col)`, and truncated to `max_centers`.
pub fn find_instance_centers(
    heatmap: &CenterHeatmap,
    params: &PostprocessParams,
) -> Result<Vec<InstanceCenter>> {
    params.validate()?;
    let heat = heatmap.raster();
    let (h, w) = heat.shape();
    let radius = params.nms_kernel / 2;
    let mut centers = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = heat.get(r, c);
            if v < params.center_threshold || v <= 0.0 {
                continue;
            }
            if wins_window(heat, r, c, radius) {
                centers.push(InstanceCenter {
                    row: r,
                    col: c,
                    score: v,
                });
            }
        }
    }
    centers.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.row, a.col).cmp(&(b.row, b.col)))
    });
    centers.truncate(params.max_centers);
    Ok(centers)
}

fn wins_window(heat: &Raster2D<f32>, r: usize, c: usize, radius: usize) -> bool {
    let v = heat.get(r, c);
    let (h, w) = heat.shape();
    for rr in r.saturating_sub(radius)..=(r + radius).min(h - 1) {
        for cc in c.saturating_sub(radius)..=(c + radius).min(w - 1) {
            let u = heat.get(rr, cc);
            if u > v || (u == v && (rr, cc) < (r, c)) {
                return false;
            }
        }
    }
    true
}

/// Assigns each pixel of `thing_mask` to the center nearest its regressed
/// position `p + offset(p)`. Ids are `1 + index into centers`; ties go to the
/// lower index.
pub fn group_pixels(
    centers: &[InstanceCenter],
    offsets: &OffsetField,
    thing_mask: &Raster2D<bool>,
) -> Result<InstanceIdMap> {
    let (h, w) = thing_mask.shape();
    if offsets.shape() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "offsets {:?} vs thing mask {h}x{w}",
            offsets.shape()
        )));
    }
    let mut ids = vec![0u32; h * w];
    if centers.is_empty() {
        return Raster2D::from_vec(h, w, ids);
    }
    let anchors: Vec<(f64, f64)> = centers
        .iter()
        .map(|c| (c.row as f64, c.col as f64))
        .collect();
    let field = offsets.offsets().data();
    let mask = thing_mask.data();
    ids.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        for (c, id) in row.iter_mut().enumerate() {
            let px = r * w + c;
            if !mask[px] {
                continue;
            }
            let qr = f64::from(r as f32 + field[2 * px]);
            let qc = f64::from(c as f32 + field[2 * px + 1]);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, &(ar, ac)) in anchors.iter().enumerate() {
                let d = (qr - ar).powi(2) + (qc - ac).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            *id = best as u32 + 1;
        }
    });
    Raster2D::from_vec(h, w, ids)
}

/// Thing-class mask of a semantic prediction.
pub fn thing_mask(semantic: &SemanticRaster, spec: &DatasetSpec) -> Raster2D<bool> {
    let things = spec.thing_table();
    semantic.map(|&c| things.get(c as usize).copied().unwrap_or(false))
}

/// Fusion result that keeps track of which grouping id produced each
/// output segment.
#[derive(Debug, Clone)]
pub struct FusedPanoptic {
    pub panoptic: PanopticMap,
    /// Output panoptic id -> grouping instance id (`1 + center index`).
    pub segment_sources: BTreeMap<PanopticId, u32>,
}

/// Labels each instance mask with the majority thing class among its pixels
/// (ties to the smaller class id) and re-numbers instances densely per class
/// in ascending grouping-id order.
pub fn majority_vote_fuse(
    semantic: &SemanticRaster,
    instances: &InstanceIdMap,
    spec: &DatasetSpec,
) -> Result<PanopticMap> {
    Ok(fuse_with_sources(semantic, instances, spec)?.panoptic)
}

pub fn fuse_with_sources(
    semantic: &SemanticRaster,
    instances: &InstanceIdMap,
    spec: &DatasetSpec,
) -> Result<FusedPanoptic> {
    semantic.ensure_same_shape(instances, "majority vote")?;
    let things = spec.thing_table();
    let is_thing = |c: ClassId| things.get(c as usize).copied().unwrap_or(false);

    // instance id -> class -> votes
    let mut votes: BTreeMap<u32, BTreeMap<ClassId, u64>> = BTreeMap::new();
    for (&class, &inst) in semantic.data().iter().zip(instances.data()) {
        if inst != 0 && is_thing(class) {
            *votes.entry(inst).or_default().entry(class).or_insert(0) += 1;
        }
    }

    let mut next_per_class: BTreeMap<ClassId, u32> = BTreeMap::new();
    let mut assigned: BTreeMap<u32, PanopticId> = BTreeMap::new();
    let mut segment_sources = BTreeMap::new();
    for (&inst, counts) in &votes {
        // BTreeMap iterates classes ascending, so `>` keeps the smaller class on ties
        let (mut class, mut best) = (0, 0);
        for (&c, &n) in counts {
            if n > best {
                class = c;
                best = n;
            }
        }
        let next = next_per_class.entry(class).or_insert(0);
        *next += 1;
        let id = encode_panoptic_id(class, *next, spec)?;
        assigned.insert(inst, id);
        segment_sources.insert(id, inst);
    }

    let void = spec.void_id();
    let data = semantic
        .data()
        .iter()
        .zip(instances.data())
        .map(|(&class, &inst)| {
            if class >= spec.num_classes {
                void
            } else if !is_thing(class) {
                class * spec.label_divisor
            } else if inst == 0 {
                void
            } else {
                assigned[&inst]
            }
        })
        .collect();
    Ok(FusedPanoptic {
        panoptic: PanopticMap::from_raster_unchecked(Raster2D::from_vec(
            semantic.height(),
            semantic.width(),
            data,
        )?),
        segment_sources,
    })
}

/// Voids every stuff class whose total area in the map is below
/// `spec.stuff_area_threshold`.
pub fn stuff_area_filter(panoptic: &PanopticMap, spec: &DatasetSpec) -> PanopticMap {
    let void = spec.void_id();
    let mut area: BTreeMap<ClassId, u64> = BTreeMap::new();
    for &id in panoptic.raster().data() {
        let class = spec.class_of(id);
        if id != void && spec.is_stuff(class) {
            *area.entry(class).or_insert(0) += 1;
        }
    }
    let small: Vec<ClassId> = area
        .into_iter()
        .filter(|&(_, a)| a < spec.stuff_area_threshold)
        .map(|(c, _)| c)
        .collect();
    if small.is_empty() {
        return panoptic.clone();
    }
    let raster = panoptic.raster().map(|&id| {
        if id != void && small.contains(&spec.class_of(id)) {
            void
        } else {
            id
        }
    });
    PanopticMap::from_raster_unchecked(raster)
}

/// Panoptic prediction plus the center score behind every thing segment.
#[derive(Debug, Clone)]
pub struct PanopticPrediction {
    pub panoptic: PanopticMap,
    pub centers: Vec<InstanceCenter>,
    /// Thing segment id -> score of the center that seeded it.
    pub segment_scores: BTreeMap<PanopticId, f32>,
}

/// Full post-processing chain: centers, grouping, fusion, stuff filter.
pub fn panoptic_inference(
    semantic: &SemanticRaster,
    heatmap: &CenterHeatmap,
    offsets: &OffsetField,
    spec: &DatasetSpec,
    params: &PostprocessParams,
) -> Result<PanopticMap> {
    Ok(panoptic_inference_scored(semantic, heatmap, offsets, spec, params)?.panoptic)
}

pub fn panoptic_inference_scored(
    semantic: &SemanticRaster,
    heatmap: &CenterHeatmap,
    offsets: &OffsetField,
    spec: &DatasetSpec,
    params: &PostprocessParams,
) -> Result<PanopticPrediction> {
    semantic.ensure_same_shape(heatmap.raster(), "semantic vs heatmap")?;
    if offsets.shape() != semantic.shape() {
        return Err(Error::ShapeMismatch(format!(
            "semantic {:?} vs offsets {:?}",
            semantic.shape(),
            offsets.shape()
        )));
    }
    let centers = find_instance_centers(heatmap, params)?;
    let mask = thing_mask(semantic, spec);
    let instances = group_pixels(&centers, offsets, &mask)?;
    let fused = fuse_with_sources(semantic, &instances, spec)?;
    let panoptic = stuff_area_filter(&fused.panoptic, spec);
    let segment_scores = fused
        .segment_sources
        .iter()
        .map(|(&id, &inst)| (id, centers[inst as usize - 1].score))
        .collect();
    Ok(PanopticPrediction {
        panoptic,
        centers,
        segment_scores,
    })
}
