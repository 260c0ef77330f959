//! Scene -> targets -> noisy predictions -> panoptic output -> metrics, and
//! order-stable aggregation of per-image metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::noise::{perturb_predictions, NoiseConfig, Predictions};
use super::scene::{generate_scene, SceneConfig, SyntheticScene};
use crate::error::{Error, Result};
use crate::metrics::{
    coco_thresholds, instance_masks_from_panoptic, ApAccumulator, ClassPq, ConfusionAccumulator,
    PqAccumulator,
};
use crate::panoptic::{ClassId, DatasetSpec, PanopticId, PanopticMap};
use crate::postprocess::{panoptic_inference_scored, PanopticPrediction, PostprocessParams};
use crate::targets::{
    encode_center_heatmap, encode_offsets, CenterHeatmap, EncoderParams, OffsetField,
};

/// Everything a run needs; mirrors the JSON accepted by `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub postprocess: PostprocessParams,
    pub encoder: EncoderParams,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.scene.validate(&self.dataset)?;
        self.noise.validate()?;
        self.postprocess.validate()?;
        self.encoder.validate()
    }

    /// Scene `index` of a multi-scene run: seeds are offset by the index.
    pub fn scene_config(&self, index: u64) -> SceneConfig {
        SceneConfig {
            seed: self.scene.seed.wrapping_add(index),
            ..self.scene.clone()
        }
    }

    pub fn noise_config(&self, index: u64) -> NoiseConfig {
        NoiseConfig {
            seed: self.noise.seed.wrapping_add(index),
            ..self.noise
        }
    }
}

#[derive(Debug, Clone)]
pub struct Targets {
    pub heatmap: CenterHeatmap,
    pub offsets: OffsetField,
}

pub fn encode_targets(
    gt: &PanopticMap,
    spec: &DatasetSpec,
    params: &EncoderParams,
) -> Result<Targets> {
    Ok(Targets {
        heatmap: encode_center_heatmap(gt, spec, params)?,
        offsets: encode_offsets(gt, spec)?,
    })
}

#[derive(Debug, Clone)]
pub struct SceneRun {
    pub scene: SyntheticScene,
    pub targets: Targets,
    pub predictions: Predictions,
    pub output: PanopticPrediction,
}

pub fn run_scene(config: &ExperimentConfig, index: u64) -> Result<SceneRun> {
    let spec = &config.dataset;
    let scene = generate_scene(&config.scene_config(index), spec)?;
    let targets = encode_targets(&scene.panoptic, spec, &config.encoder)?;
    let predictions = perturb_predictions(
        &scene.semantic,
        &targets.heatmap,
        &targets.offsets,
        &config.noise_config(index),
        spec,
    )?;
    let output = panoptic_inference_scored(
        &predictions.semantic,
        &predictions.heatmap,
        &predictions.offsets,
        spec,
        &config.postprocess,
    )?;
    Ok(SceneRun {
        scene,
        targets,
        predictions,
        output,
    })
}

/// PQ, confusion and AP state for any number of images.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pq: PqAccumulator,
    confusion: ConfusionAccumulator,
    ap: ApAccumulator,
    images: u64,
}

impl Evaluation {
    pub fn new(spec: &DatasetSpec) -> Self {
        Self {
            pq: PqAccumulator::new(),
            confusion: ConfusionAccumulator::new(spec.num_classes as usize),
            ap: ApAccumulator::new(&coco_thresholds()),
            images: 0,
        }
    }

    /// Semantic mIoU is taken from the class component of the panoptic maps.
    pub fn add_image(
        &mut self,
        image: u64,
        pred: &PanopticMap,
        gt: &PanopticMap,
        scores: Option<&BTreeMap<PanopticId, f32>>,
        spec: &DatasetSpec,
    ) -> Result<()> {
        self.pq.add(pred, gt, spec)?;
        self.confusion
            .add(&pred.semantic(spec), &gt.semantic(spec), spec)?;
        self.ap.add(
            image,
            &instance_masks_from_panoptic(pred, spec, scores),
            &instance_masks_from_panoptic(gt, spec, None),
        )?;
        self.images += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Evaluation) {
        self.pq.merge(&other.pq);
        self.confusion.merge(&other.confusion);
        self.ap.merge(&other.ap);
        self.images += other.images;
    }

    pub fn report(&self, spec: &DatasetSpec) -> EvaluationReport {
        let pq = self.pq.report(spec);
        let iou = self.confusion.report();
        let ap = self.ap.report();
        EvaluationReport {
            images: self.images,
            pq_all: pq.pq_all,
            pq_things: pq.pq_things,
            pq_stuff: pq.pq_stuff,
            miou: iou.miou,
            mean_ap: ap.mean_ap,
            per_class: pq.per_class,
            per_class_iou: iou.per_class_iou,
            ap_per_threshold: ap
                .per_threshold
                .into_iter()
                .map(|(threshold, ap)| ApPoint { threshold, ap })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApPoint {
    pub threshold: f64,
    pub ap: f64,
}

/// Machine-readable metrics; key names are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub images: u64,
    pub pq_all: f64,
    pub pq_things: f64,
    pub pq_stuff: f64,
    pub miou: f64,
    pub mean_ap: f64,
    pub per_class: BTreeMap<ClassId, ClassPq>,
    pub per_class_iou: BTreeMap<ClassId, f64>,
    pub ap_per_threshold: Vec<ApPoint>,
}

impl EvaluationReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "images     {}", self.images);
        let _ = writeln!(
            s,
            "PQ {:.4}  PQ_th {:.4}  PQ_st {:.4}  mIoU {:.4}  AP {:.4}",
            self.pq_all, self.pq_things, self.pq_stuff, self.miou, self.mean_ap
        );
        let _ = writeln!(
            s,
            "{:>6} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6} {:>8}",
            "class", "PQ", "SQ", "RQ", "TP", "FP", "FN", "IoU"
        );
        for (class, c) in &self.per_class {
            let iou = self
                .per_class_iou
                .get(class)
                .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                s,
                "{class:>6} {:>8.4} {:>8.4} {:>8.4} {:>6} {:>6} {:>6} {iou:>8}",
                c.pq, c.sq, c.rq, c.tp, c.fp, c.fn_
            );
        }
        s
    }
}

/// Runs `count` scenes on the current rayon pool and merges their metrics in
/// scene order.
pub fn run_experiment(config: &ExperimentConfig, count: u64) -> Result<EvaluationReport> {
    config.validate()?;
    let spec = &config.dataset;
    let per_image: Vec<Evaluation> = (0..count)
        .into_par_iter()
        .map(|i| {
            let run = run_scene(config, i)?;
            let mut eval = Evaluation::new(spec);
            eval.add_image(
                i,
                &run.output.panoptic,
                &run.scene.panoptic,
                Some(&run.output.segment_scores),
                spec,
            )?;
            Ok(eval)
        })
        .collect::<Result<_>>()?;
    let mut total = Evaluation::new(spec);
    for eval in &per_image {
        total.merge(eval);
    }
    Ok(total.report(spec))
}
