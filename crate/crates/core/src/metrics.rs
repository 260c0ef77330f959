//! Panoptic quality, semantic mIoU and COCO-style mask AP.
//!
//! Each metric has an accumulator whose `merge` is exact on integer counts;
//! floating-point sums are merged in caller order, so reducing per-image
//! accumulators in image order gives results independent of how the images
//! were scheduled.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panoptic::{
    decode_panoptic_id, ClassId, DatasetSpec, PanopticId, PanopticMap, SemanticRaster,
};
use crate::raster::Raster2D;

// ---------------------------------------------------------------------------
// Panoptic quality

/// Per-class match counts. Matched IoUs are summed in 64.64 fixed point so
/// merging is exactly associative and commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PqCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    iou_fixed: u128,
}

impl PqCounts {
    fn merge(&mut self, other: &PqCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_fixed += other.iou_fixed;
    }

    fn add_match(&mut self, intersection: u64, union: u64) {
        self.tp += 1;
        self.iou_fixed += (u128::from(intersection) << 64) / u128::from(union);
    }

    pub fn iou_sum(&self) -> f64 {
        self.iou_fixed as f64 / 2f64.powi(64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPq {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

impl From<PqCounts> for ClassPq {
    fn from(c: PqCounts) -> Self {
        let iou_sum = c.iou_sum();
        let sq = if c.tp == 0 {
            0.0
        } else {
            iou_sum / c.tp as f64
        };
        let denom = c.tp as f64 + 0.5 * c.fp as f64 + 0.5 * c.fn_ as f64;
        let rq = if denom == 0.0 {
            0.0
        } else {
            c.tp as f64 / denom
        };
        Self {
            pq: sq * rq,
            sq,
            rq,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            iou_sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqReport {
    pub per_class: BTreeMap<ClassId, ClassPq>,
    pub pq_all: f64,
    pub pq_things: f64,
    pub pq_stuff: f64,
}

/// Per-class PQ counts, mergeable across images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PqAccumulator {
    per_class: BTreeMap<ClassId, PqCounts>,
}

impl PqAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counts(&self) -> &BTreeMap<ClassId, PqCounts> {
        &self.per_class
    }

    pub fn merge(&mut self, other: &PqAccumulator) {
        for (class, counts) in &other.per_class {
            self.per_class.entry(*class).or_default().merge(counts);
        }
    }

    /// Adds one image.
    pub fn add(&mut self, pred: &PanopticMap, gt: &PanopticMap, spec: &DatasetSpec) -> Result<()> {
        if pred.shape() != gt.shape() {
            return Err(Error::ShapeMismatch(format!(
                "pq: pred {:?} vs gt {:?}",
                pred.shape(),
                gt.shape()
            )));
        }
        let void = spec.void_id();
        let mut gt_area: HashMap<PanopticId, u64> = HashMap::new();
        let mut pred_area: HashMap<PanopticId, u64> = HashMap::new();
        let mut pred_on_void: HashMap<PanopticId, u64> = HashMap::new();
        let mut inter: HashMap<(PanopticId, PanopticId), u64> = HashMap::new();
        for (&p, &g) in pred.raster().data().iter().zip(gt.raster().data()) {
            if g != void {
                *gt_area.entry(g).or_insert(0) += 1;
            }
            if p != void {
                *pred_area.entry(p).or_insert(0) += 1;
                if g == void {
                    *pred_on_void.entry(p).or_insert(0) += 1;
                } else {
                    *inter.entry((g, p)).or_insert(0) += 1;
                }
            }
        }
        for &id in gt_area.keys().chain(pred_area.keys()) {
            decode_panoptic_id(id, spec)?;
        }

        let mut pairs: Vec<_> = inter.into_iter().collect();
        pairs.sort_unstable_by_key(|&(k, _)| k);
        let mut gt_matched = std::collections::HashSet::new();
        let mut pred_matched = std::collections::HashSet::new();
        for ((g, p), n) in pairs {
            let class = spec.class_of(g);
            if class != spec.class_of(p) {
                continue;
            }
            let union =
                pred_area[&p] + gt_area[&g] - n - pred_on_void.get(&p).copied().unwrap_or(0);
            // IoU > 1/2, in integers
            if 2 * n > union {
                gt_matched.insert(g);
                pred_matched.insert(p);
                self.per_class.entry(class).or_default().add_match(n, union);
            }
        }

        let mut gt_ids: Vec<_> = gt_area.keys().copied().collect();
        gt_ids.sort_unstable();
        for g in gt_ids {
            if !gt_matched.contains(&g) {
                self.per_class.entry(spec.class_of(g)).or_default().fn_ += 1;
            }
        }
        let mut pred_ids: Vec<_> = pred_area.iter().map(|(&k, &v)| (k, v)).collect();
        pred_ids.sort_unstable();
        for (p, area) in pred_ids {
            if pred_matched.contains(&p) {
                continue;
            }
            // mostly on ground-truth void: neither TP nor FP
            if 2 * pred_on_void.get(&p).copied().unwrap_or(0) > area {
                continue;
            }
            self.per_class.entry(spec.class_of(p)).or_default().fp += 1;
        }
        Ok(())
    }

    pub fn report(&self, spec: &DatasetSpec) -> PqReport {
        let per_class: BTreeMap<ClassId, ClassPq> = self
            .per_class
            .iter()
            .filter(|(_, c)| c.tp + c.fp + c.fn_ > 0)
            .map(|(&k, &c)| (k, ClassPq::from(c)))
            .collect();
        let mean = |pred: &dyn Fn(ClassId) -> bool| {
            let vals: Vec<f64> = per_class
                .iter()
                .filter(|(k, _)| pred(**k))
                .map(|(_, c)| c.pq)
                .collect();
            if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        PqReport {
            pq_all: mean(&|_| true),
            pq_things: mean(&|c| spec.is_thing(c)),
            pq_stuff: mean(&|c| spec.is_stuff(c)),
            per_class,
        }
    }
}

/// Panoptic quality of a single image.
pub fn compute_pq(pred: &PanopticMap, gt: &PanopticMap, spec: &DatasetSpec) -> Result<PqReport> {
    let mut acc = PqAccumulator::new();
    acc.add(pred, gt, spec)?;
    Ok(acc.report(spec))
}

// ---------------------------------------------------------------------------
// Semantic mIoU

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// `confusion[gt][pred]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
    pub per_class_iou: BTreeMap<ClassId, f64>,
    pub miou: f64,
}

/// Confusion counts over non-void ground-truth pixels. Predictions outside
/// the class range (void) count as misses of the ground-truth class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionAccumulator {
    num_classes: usize,
    counts: Vec<u64>,
    missed: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
            missed: vec![0; num_classes],
        }
    }

    pub fn add(
        &mut self,
        pred: &SemanticRaster,
        gt: &SemanticRaster,
        spec: &DatasetSpec,
    ) -> Result<()> {
        pred.ensure_same_shape(gt, "miou")?;
        let n = self.num_classes;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == spec.void_label {
                continue;
            }
            let g = g as usize;
            if g >= n {
                return Err(Error::InvalidParams(format!(
                    "ground-truth label {g} outside 0..{n}"
                )));
            }
            if (p as usize) < n {
                self.counts[g * n + p as usize] += 1;
            } else {
                self.missed[g] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.missed.iter_mut().zip(&other.missed) {
            *a += b;
        }
    }

    pub fn report(&self) -> IouReport {
        let n = self.num_classes;
        let mut per_class_iou = BTreeMap::new();
        for k in 0..n {
            let tp = self.counts[k * n + k];
            let gt_total: u64 =
                self.counts[k * n..(k + 1) * n].iter().sum::<u64>() + self.missed[k];
            let pred_total: u64 = (0..n).map(|g| self.counts[g * n + k]).sum();
            let denom = gt_total + pred_total - tp;
            if denom > 0 {
                per_class_iou.insert(k as ClassId, tp as f64 / denom as f64);
            }
        }
        let miou = if per_class_iou.is_empty() {
            0.0
        } else {
            per_class_iou.values().sum::<f64>() / per_class_iou.len() as f64
        };
        IouReport {
            confusion: self.counts.chunks(n).map(<[u64]>::to_vec).collect(),
            per_class_iou,
            miou,
        }
    }
}

pub fn compute_miou(
    pred: &SemanticRaster,
    gt: &SemanticRaster,
    spec: &DatasetSpec,
) -> Result<IouReport> {
    let mut acc = ConfusionAccumulator::new(spec.num_classes as usize);
    acc.add(pred, gt, spec)?;
    Ok(acc.report())
}

// ---------------------------------------------------------------------------
// Mask AP

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub class: ClassId,
    pub mask: Raster2D<bool>,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    /// `(threshold, AP)` in threshold order.
    pub per_threshold: Vec<(f64, f64)>,
    pub mean_ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Detection {
    score: f32,
    image: u64,
    index: usize,
    true_positive: bool,
}

/// Scored detections per `(threshold, class)` and ground-truth counts per
/// class, pooled over images.
#[derive(Debug, Clone, PartialEq)]
pub struct ApAccumulator {
    thresholds: Vec<f64>,
    detections: Vec<BTreeMap<ClassId, Vec<Detection>>>,
    num_gt: BTreeMap<ClassId, u64>,
}

fn mask_iou(a: &Raster2D<bool>, b: &Raster2D<bool>) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

impl ApAccumulator {
    pub fn new(thresholds: &[f64]) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            detections: vec![BTreeMap::new(); thresholds.len()],
            num_gt: BTreeMap::new(),
        }
    }

    /// Matches one image's predictions against its ground truth. `image` keys
    /// the deterministic tie order between equal scores across images.
    pub fn add(&mut self, image: u64, preds: &[InstanceMask], gts: &[InstanceMask]) -> Result<()> {
        if let Some(shape) = preds.first().or(gts.first()).map(|m| m.mask.shape()) {
            if preds.iter().chain(gts).any(|m| m.mask.shape() != shape) {
                return Err(Error::ShapeMismatch(
                    "mask AP: masks differ in shape".into(),
                ));
            }
        }
        if let Some(p) = preds.iter().find(|p| !p.score.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "non-finite score {}",
                p.score
            )));
        }
        for g in gts {
            *self.num_gt.entry(g.class).or_insert(0) += 1;
        }
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));

        // IoU against every same-class ground truth, computed once.
        let ious: Vec<Vec<(usize, f64)>> = order
            .iter()
            .map(|&i| {
                gts.iter()
                    .enumerate()
                    .filter(|(_, g)| g.class == preds[i].class)
                    .map(|(j, g)| (j, mask_iou(&preds[i].mask, &g.mask)))
                    .collect()
            })
            .collect();

        for (t, &threshold) in self.thresholds.iter().enumerate() {
            let mut taken = vec![false; gts.len()];
            for (&i, cands) in order.iter().zip(&ious) {
                let mut best: Option<(usize, f64)> = None;
                for &(j, iou) in cands {
                    if taken[j] || iou < threshold {
                        continue;
                    }
                    if best.is_none_or(|(_, b)| iou > b) {
                        best = Some((j, iou));
                    }
                }
                if let Some((j, _)) = best {
                    taken[j] = true;
                }
                self.detections[t]
                    .entry(preds[i].class)
                    .or_default()
                    .push(Detection {
                        score: preds[i].score,
                        image,
                        index: i,
                        true_positive: best.is_some(),
                    });
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ApAccumulator) {
        assert_eq!(self.thresholds, other.thresholds);
        for (mine, theirs) in self.detections.iter_mut().zip(&other.detections) {
            for (class, dets) in theirs {
                mine.entry(*class).or_default().extend_from_slice(dets);
            }
        }
        for (class, n) in &other.num_gt {
            *self.num_gt.entry(*class).or_insert(0) += n;
        }
    }

    pub fn report(&self) -> ApReport {
        let per_threshold: Vec<(f64, f64)> = self
            .thresholds
            .iter()
            .zip(&self.detections)
            .map(|(&t, by_class)| {
                let aps: Vec<f64> = self
                    .num_gt
                    .iter()
                    .filter(|(_, &n)| n > 0)
                    .map(|(class, &n)| {
                        let mut dets = by_class.get(class).cloned().unwrap_or_default();
                        dets.sort_by(|a, b| {
                            b.score
                                .total_cmp(&a.score)
                                .then(a.image.cmp(&b.image))
                                .then(a.index.cmp(&b.index))
                        });
                        average_precision(dets.iter().map(|d| d.true_positive), n)
                    })
                    .collect();
                let ap = if aps.is_empty() {
                    0.0
                } else {
                    aps.iter().sum::<f64>() / aps.len() as f64
                };
                (t, ap)
            })
            .collect();
        let mean_ap = if per_threshold.is_empty() {
            0.0
        } else {
            per_threshold.iter().map(|(_, ap)| ap).sum::<f64>() / per_threshold.len() as f64
        };
        ApReport {
            per_threshold,
            mean_ap,
        }
    }
}

/// Area under the precision envelope for a ranked list of TP/FP flags.
fn average_precision(ranked: impl Iterator<Item = bool>, num_gt: u64) -> f64 {
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    let (mut tp, mut seen) = (0u64, 0u64);
    for hit in ranked {
        seen += 1;
        tp += u64::from(hit);
        precision.push(tp as f64 / seen as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

pub fn compute_mask_ap(
    pred_instances: &[InstanceMask],
    gt_instances: &[InstanceMask],
    thresholds: &[f64],
) -> Result<ApReport> {
    let mut acc = ApAccumulator::new(thresholds);
    acc.add(0, pred_instances, gt_instances)?;
    Ok(acc.report())
}

/// One mask per thing segment, in ascending panoptic id order. Scores come
/// from `center_scores` when given (missing ids score 0), else 1.0.
pub fn instance_masks_from_panoptic(
    pan: &PanopticMap,
    spec: &DatasetSpec,
    center_scores: Option<&BTreeMap<PanopticId, f32>>,
) -> Vec<InstanceMask> {
    let void = spec.void_id();
    let mut segments: BTreeMap<PanopticId, Vec<usize>> = BTreeMap::new();
    for (i, &id) in pan.raster().data().iter().enumerate() {
        if id != void && spec.is_thing(spec.class_of(id)) {
            segments.entry(id).or_default().push(i);
        }
    }
    let (h, w) = pan.shape();
    segments
        .into_iter()
        .map(|(id, pixels)| {
            let mut data = vec![false; h * w];
            for i in pixels {
                data[i] = true;
            }
            let score = match center_scores {
                Some(scores) => scores.get(&id).copied().unwrap_or(0.0),
                None => 1.0,
            };
            InstanceMask {
                class: spec.class_of(id),
                mask: Raster2D::from_vec(h, w, data).expect("shape taken from a valid raster"),
                score,
            }
        })
        .collect()
}
