//! Seeded synthetic scenes: horizontal stuff bands with non-overlapping,
//! well-separated thing instances on top.

use serde::{Deserialize, Serialize};

use super::rng::SeededRng;
use crate::error::{Error, Result};
use crate::panoptic::{encode_panoptic_id, ClassId, DatasetSpec, PanopticMap, SemanticRaster};
use crate::raster::Raster2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// Inclusive `[min, max]` range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub min: u32,
    pub max: u32,
}

impl Range {
    pub const fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub num_instances: Range,
    pub shapes: Vec<ShapeKind>,
    /// Bounding-box side length of each instance.
    pub size: Range,
    /// One horizontal band per entry, top to bottom.
    pub stuff_classes: Vec<ClassId>,
    pub thing_classes: Vec<ClassId>,
    /// Minimum distance between instance centers of mass.
    pub min_center_distance: f32,
    /// Placement attempts per instance before giving up.
    pub max_retries: u32,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            num_instances: Range::new(1, 6),
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Ellipse],
            size: Range::new(6, 24),
            stuff_classes: vec![0, 10],
            thing_classes: (11..19).collect(),
            min_center_distance: 14.0,
            max_retries: 1000,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self, spec: &DatasetSpec) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(format!("scene: {msg}")));
        if self.height == 0 || self.width == 0 {
            return bad(format!("empty image {}x{}", self.height, self.width));
        }
        if self.num_instances.min > self.num_instances.max {
            return bad("num_instances range is empty".into());
        }
        if self.size.min == 0 || self.size.min > self.size.max {
            return bad(format!("size range {:?} invalid", self.size));
        }
        if self.size.max as usize > self.height.min(self.width) {
            return bad(format!("size {} exceeds the image", self.size.max));
        }
        if self.shapes.is_empty() {
            return bad("no shape kinds".into());
        }
        if self.stuff_classes.is_empty() || self.stuff_classes.len() > self.height {
            return bad("need between 1 and height stuff bands".into());
        }
        if let Some(c) = self.stuff_classes.iter().find(|&&c| !spec.is_stuff(c)) {
            return bad(format!("class {c} is not a stuff class"));
        }
        if self.num_instances.max > 0 && self.thing_classes.is_empty() {
            return bad("instances requested but no thing classes".into());
        }
        if let Some(c) = self.thing_classes.iter().find(|&&c| !spec.is_thing(c)) {
            return bad(format!("class {c} is not a thing class"));
        }
        if self.num_instances.max >= spec.label_divisor {
            return bad("more instances than the label divisor can encode".into());
        }
        if self.min_center_distance.is_nan() || self.min_center_distance < 0.0 {
            return bad("min_center_distance must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub panoptic: PanopticMap,
    pub semantic: SemanticRaster,
}

struct Placed {
    pixels: Vec<(usize, usize)>,
    center: (f64, f64),
}

fn shape_pixels(
    kind: ShapeKind,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) -> Vec<(usize, usize)> {
    match kind {
        ShapeKind::Rectangle => (top..top + h)
            .flat_map(|r| (left..left + w).map(move |c| (r, c)))
            .collect(),
        ShapeKind::Ellipse => {
            let (cr, cc) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let (a, b) = (h as f64 / 2.0, w as f64 / 2.0);
            let mut out = Vec::new();
            for r in 0..h {
                for c in 0..w {
                    let d = ((r as f64 - cr) / a).powi(2) + ((c as f64 - cc) / b).powi(2);
                    if d <= 1.0 {
                        out.push((top + r, left + c));
                    }
                }
            }
            out
        }
    }
}

/// Draws a scene. Draw order per instance: class, then per attempt shape
/// kind, bbox height, bbox width, top, left.
pub fn generate_scene(config: &SceneConfig, spec: &DatasetSpec) -> Result<SyntheticScene> {
    config.validate(spec)?;
    let (h, w) = (config.height, config.width);
    let mut rng = SeededRng::new(config.seed);

    let bands = config.stuff_classes.len();
    let mut ids = Raster2D::from_fn(h, w, |r, _| {
        config.stuff_classes[r * bands / h] * spec.label_divisor
    })?;

    let n = rng.range_inclusive(
        u64::from(config.num_instances.min),
        u64::from(config.num_instances.max),
    ) as usize;
    let mut occupied = vec![false; h * w];
    let mut placed: Vec<Placed> = Vec::with_capacity(n);
    let mut per_class = vec![0u32; spec.num_classes as usize];
    let min_d2 = f64::from(config.min_center_distance).powi(2);
    let size = (u64::from(config.size.min), u64::from(config.size.max));

    for i in 0..n {
        let class = config.thing_classes[rng.below(config.thing_classes.len() as u64) as usize];
        let mut accepted = None;
        for _ in 0..config.max_retries.max(1) {
            let kind = config.shapes[rng.below(config.shapes.len() as u64) as usize];
            let bh = rng.range_inclusive(size.0, size.1) as usize;
            let bw = rng.range_inclusive(size.0, size.1) as usize;
            let top = rng.below((h - bh + 1) as u64) as usize;
            let left = rng.below((w - bw + 1) as u64) as usize;
            let pixels = shape_pixels(kind, top, left, bh, bw);
            if pixels.iter().any(|&(r, c)| occupied[r * w + c]) {
                continue;
            }
            let count = pixels.len() as f64;
            let center = pixels.iter().fold((0.0, 0.0), |acc, &(r, c)| {
                (acc.0 + r as f64, acc.1 + c as f64)
            });
            let center = (center.0 / count, center.1 / count);
            if placed
                .iter()
                .any(|p| (p.center.0 - center.0).powi(2) + (p.center.1 - center.1).powi(2) < min_d2)
            {
                continue;
            }
            accepted = Some(Placed { pixels, center });
            break;
        }
        let Some(instance) = accepted else {
            return Err(Error::SceneGeneration(format!(
                "instance {} of {n} could not be placed in {h}x{w} after {} attempts \
                 (size {:?}, min_center_distance {})",
                i + 1,
                config.max_retries.max(1),
                config.size,
                config.min_center_distance
            )));
        };
        per_class[class as usize] += 1;
        let id = encode_panoptic_id(class, per_class[class as usize], spec)?;
        for &(r, c) in &instance.pixels {
            occupied[r * w + c] = true;
            ids.set(r, c, id);
        }
        placed.push(instance);
    }

    let panoptic = PanopticMap::new(ids, spec)?;
    let semantic = panoptic.semantic(spec);
    Ok(SyntheticScene { panoptic, semantic })
}
