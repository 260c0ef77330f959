//! Independent oracles and seeded case generators shared by the integration
//! and acceptance targets.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use panoptic_core::harness::rng::SeededRng;
use panoptic_core::losses::{
    heatmap_mse_loss, heatmap_sigmoid_ce_loss, offset_l1_loss, semantic_ce_loss,
};
use panoptic_core::postprocess::InstanceCenter;
use panoptic_core::targets::OffsetField;
use panoptic_core::{DatasetSpec, PanopticMap, Raster2D, Raster3D};

// ---------------------------------------------------------------------------
// Grouping

pub struct GroupingCase {
    pub centers: Vec<InstanceCenter>,
    pub offsets: OffsetField,
    pub mask: Raster2D<bool>,
}

pub fn grouping_case(seed: u64, size: usize) -> GroupingCase {
    let mut rng = SeededRng::new(seed);
    let k = rng.range_inclusive(0, 10) as usize;
    let mut centers: Vec<InstanceCenter> = (0..k)
        .map(|_| InstanceCenter {
            row: rng.below(size as u64) as usize,
            col: rng.below(size as u64) as usize,
            score: rng.uniform() as f32,
        })
        .collect();
    centers.sort_by(|a, b| b.score.total_cmp(&a.score));
    // Quarter-pixel offsets make exact distance ties common.
    let field: Vec<f32> = (0..size * size * 2)
        .map(|_| (rng.range_inclusive(0, 64) as f32 - 32.0) * 0.25)
        .collect();
    let mask = Raster2D::from_fn(size, size, |_, _| rng.uniform() < 0.7).unwrap();
    GroupingCase {
        centers,
        offsets: OffsetField::new(
            Raster3D::from_vec(size, size, 2, field).unwrap(),
            mask.clone(),
        )
        .unwrap(),
        mask,
    }
}

/// Scans every center for every pixel; the winner is the smallest
/// `(squared distance, index)` pair.
pub fn nearest_center_oracle(case: &GroupingCase) -> Vec<u32> {
    let (h, w) = case.mask.shape();
    let mut out = vec![0u32; h * w];
    for r in 0..h {
        for c in 0..w {
            if !case.mask.get(r, c) || case.centers.is_empty() {
                continue;
            }
            let (dr, dc) = case.offsets.at(r, c);
            let q = (f64::from(r as f32 + dr), f64::from(c as f32 + dc));
            let mut scored: Vec<(f64, usize)> = case
                .centers
                .iter()
                .enumerate()
                .map(|(k, ctr)| {
                    let d = (q.0 - ctr.row as f64) * (q.0 - ctr.row as f64)
                        + (q.1 - ctr.col as f64) * (q.1 - ctr.col as f64);
                    (d, k)
                })
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            out[r * w + c] = scored[0].1 as u32 + 1;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Panoptic quality

/// 3 classes: 0 stuff, 1 and 2 things; void 255.
pub fn pq_spec() -> DatasetSpec {
    DatasetSpec::new(3, [1, 2], [0], 255, 1000, 0).unwrap()
}

/// Random rectangles painted over a stuff background, ground truth and a
/// jittered, partly relabelled prediction of the same layout.
pub fn pq_case(seed: u64, size: usize) -> (PanopticMap, PanopticMap) {
    let spec = pq_spec();
    let void = spec.void_id();
    let mut rng = SeededRng::new(seed);
    let mut gt = vec![0u32; size * size];
    let mut pred = vec![0u32; size * size];
    let n = rng.range_inclusive(2, 7);
    let mut next = [0u32; 3];
    for _ in 0..n {
        let (h, w) = (
            rng.range_inclusive(3, 14) as usize,
            rng.range_inclusive(3, 14) as usize,
        );
        let top = rng.below((size - h + 1) as u64) as usize;
        let left = rng.below((size - w + 1) as u64) as usize;
        let roll = rng.below(10);
        let gt_id = match roll {
            0 => void,
            1 => 0,
            _ => {
                let class = 1 + rng.below(2) as usize;
                next[class] += 1;
                class as u32 * 1000 + next[class]
            }
        };
        // prediction: jittered box, sometimes relabelled, sometimes dropped
        let jitter = |rng: &mut SeededRng, v: usize, ext: usize| {
            let d = rng.range_inclusive(0, 6) as i64 - 3;
            (v as i64 + d).clamp(0, (size - ext) as i64) as usize
        };
        let ptop = jitter(&mut rng, top, h);
        let pleft = jitter(&mut rng, left, w);
        let action = rng.below(8);
        let pred_id = match (gt_id, action) {
            (_, 0) => None,
            (id, 1) if id == void => Some(1050 + rng.below(3) as u32),
            (id, _) if id == void || id == 0 => Some(if id == void { 2060 } else { 0 }),
            (id, 2) => Some((3 - id / 1000) * 1000 + 70 + rng.below(3) as u32),
            (id, _) => Some(id + 100),
        };
        for r in top..top + h {
            for c in left..left + w {
                gt[r * size + c] = gt_id;
            }
        }
        if let Some(pid) = pred_id {
            for r in ptop..ptop + h {
                for c in pleft..pleft + w {
                    pred[r * size + c] = pid;
                }
            }
        }
    }
    if rng.below(2) == 0 {
        // a void-prediction stripe
        let r = rng.below(size as u64) as usize;
        for c in 0..size {
            pred[r * size + c] = void;
        }
    }
    (
        PanopticMap::new(Raster2D::from_vec(size, size, pred).unwrap(), &spec).unwrap(),
        PanopticMap::new(Raster2D::from_vec(size, size, gt).unwrap(), &spec).unwrap(),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

impl OracleCounts {
    pub fn pq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom == 0.0 {
            0.0
        } else {
            self.iou_sum / denom
        }
    }
}

fn segments(map: &PanopticMap, void: u32) -> BTreeMap<u32, BTreeSet<usize>> {
    let mut out: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (i, &id) in map.raster().data().iter().enumerate() {
        if id != void {
            out.entry(id).or_default().insert(i);
        }
    }
    out
}

/// Best assignment over all injective gt -> pred maps restricted to pairs
/// with IoU > 0.5: most matches first, then largest IoU sum.
fn best_matching(
    ious: &[Vec<Option<f64>>],
    gi: usize,
    used: &mut Vec<bool>,
) -> (usize, f64, Vec<Option<usize>>) {
    if gi == ious.len() {
        return (0, 0.0, Vec::new());
    }
    let (n0, s0, mut m0) = best_matching(ious, gi + 1, used);
    m0.insert(0, None);
    let mut best = (n0, s0, m0);
    for pj in 0..used.len() {
        if used[pj] {
            continue;
        }
        if let Some(iou) = ious[gi][pj] {
            used[pj] = true;
            let (n, s, mut m) = best_matching(ious, gi + 1, used);
            used[pj] = false;
            m.insert(0, Some(pj));
            let cand = (n + 1, s + iou, m);
            if cand.0 > best.0 || (cand.0 == best.0 && cand.1 > best.1) {
                best = cand;
            }
        }
    }
    best
}

pub fn exhaustive_pq(
    pred: &PanopticMap,
    gt: &PanopticMap,
    spec: &DatasetSpec,
) -> BTreeMap<u32, OracleCounts> {
    let void = spec.void_id();
    let gt_void: BTreeSet<usize> = gt
        .raster()
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &id)| id == void)
        .map(|(i, _)| i)
        .collect();
    let gts = segments(gt, void);
    let preds = segments(pred, void);
    let classes: BTreeSet<u32> = gts
        .keys()
        .chain(preds.keys())
        .map(|id| id / spec.label_divisor)
        .collect();
    let mut out = BTreeMap::new();
    for class in classes {
        let g: Vec<&BTreeSet<usize>> = gts
            .iter()
            .filter(|(id, _)| *id / spec.label_divisor == class)
            .map(|(_, s)| s)
            .collect();
        let p: Vec<&BTreeSet<usize>> = preds
            .iter()
            .filter(|(id, _)| *id / spec.label_divisor == class)
            .map(|(_, s)| s)
            .collect();
        let ious: Vec<Vec<Option<f64>>> = g
            .iter()
            .map(|gs| {
                p.iter()
                    .map(|ps| {
                        let p_eff: BTreeSet<usize> = ps.difference(&gt_void).copied().collect();
                        let inter = gs.intersection(&p_eff).count();
                        let union = gs.union(&p_eff).count();
                        let iou = inter as f64 / union as f64;
                        (iou > 0.5).then_some(iou)
                    })
                    .collect()
            })
            .collect();
        let (tp, iou_sum, assignment) = best_matching(&ious, 0, &mut vec![false; p.len()]);
        let matched: BTreeSet<usize> = assignment.iter().flatten().copied().collect();
        let fp = p
            .iter()
            .enumerate()
            .filter(|(j, ps)| {
                !matched.contains(j) && 2 * ps.intersection(&gt_void).count() <= ps.len()
            })
            .count();
        let counts = OracleCounts {
            tp: tp as u64,
            fp: fp as u64,
            fn_: (g.len() - tp) as u64,
            iou_sum,
        };
        if counts.tp + counts.fp + counts.fn_ > 0 {
            out.insert(class, counts);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Finite differences

pub const FD_STEP: f64 = 1e-5;

pub fn central_diff(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale == 0.0 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

pub fn ce_gradient_error(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let (h, w, c) = (4, 4, 3);
    let x: Vec<f64> = (0..h * w * c)
        .map(|_| uniform(&mut rng, -2.0, 2.0))
        .collect();
    let labels = Raster2D::from_fn(h, w, |_, _| {
        let k = rng.below(4) as u32;
        if k == 3 {
            255
        } else {
            k
        }
    })
    .unwrap();
    let mut labels = labels;
    labels.set(0, 0, 1);
    let f = |v: &[f64]| {
        semantic_ce_loss(
            &Raster3D::from_vec(h, w, c, v.to_vec()).unwrap(),
            &labels,
            255,
        )
        .unwrap()
        .value
    };
    let analytic = semantic_ce_loss(
        &Raster3D::from_vec(h, w, c, x.clone()).unwrap(),
        &labels,
        255,
    )
    .unwrap();
    max_rel_err(analytic.gradient.data(), &central_diff(&x, f))
}

pub fn mse_gradient_error(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let x: Vec<f64> = (0..64).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
    let gt = Raster2D::from_fn(8, 8, |_, _| uniform(&mut rng, 0.0, 1.0)).unwrap();
    let f = |v: &[f64]| {
        heatmap_mse_loss(&Raster2D::from_vec(8, 8, v.to_vec()).unwrap(), &gt)
            .unwrap()
            .value
    };
    let analytic = heatmap_mse_loss(&Raster2D::from_vec(8, 8, x.clone()).unwrap(), &gt).unwrap();
    max_rel_err(analytic.gradient.data(), &central_diff(&x, f))
}

pub fn sigmoid_ce_gradient_error(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let x: Vec<f64> = (0..64).map(|_| uniform(&mut rng, -4.0, 4.0)).collect();
    let gt = Raster2D::from_fn(8, 8, |_, _| uniform(&mut rng, 0.0, 1.0)).unwrap();
    let f = |v: &[f64]| {
        heatmap_sigmoid_ce_loss(&Raster2D::from_vec(8, 8, v.to_vec()).unwrap(), &gt)
            .unwrap()
            .value
    };
    let analytic =
        heatmap_sigmoid_ce_loss(&Raster2D::from_vec(8, 8, x.clone()).unwrap(), &gt).unwrap();
    max_rel_err(analytic.gradient.data(), &central_diff(&x, f))
}

pub fn l1_gradient_error(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let gt: Vec<f64> = (0..128).map(|_| uniform(&mut rng, -10.0, 10.0)).collect();
    // keep |pred - gt| well clear of the kink at 0
    let x: Vec<f64> = gt
        .iter()
        .map(|&g| {
            let d = uniform(&mut rng, 1e-3, 5.0);
            if rng.below(2) == 0 {
                g + d
            } else {
                g - d
            }
        })
        .collect();
    let valid = Raster2D::from_fn(8, 8, |_, _| rng.uniform() < 0.6).unwrap();
    let gt = Raster3D::from_vec(8, 8, 2, gt).unwrap();
    let f = |v: &[f64]| {
        offset_l1_loss(
            &Raster3D::from_vec(8, 8, 2, v.to_vec()).unwrap(),
            &gt,
            &valid,
        )
        .unwrap()
        .value
    };
    let analytic = offset_l1_loss(
        &Raster3D::from_vec(8, 8, 2, x.clone()).unwrap(),
        &gt,
        &valid,
    )
    .unwrap();
    max_rel_err(analytic.gradient.data(), &central_diff(&x, f))
}
