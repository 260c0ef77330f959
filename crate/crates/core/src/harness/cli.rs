//! `panoptic` command-line driver.
//!
//! Every subcommand reads and writes `.ptns` files inside a directory and
//! writes `report.json` there as well; a human-readable summary goes to
//! stdout.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use super::noise::perturb_predictions;
use super::pipeline::{
    encode_targets, run_experiment, Evaluation, EvaluationReport, ExperimentConfig,
};
use super::scene::generate_scene;
use super::tensor::{read_tensor, write_tensor, Tensor};
use crate::error::{Error, Result};
use crate::panoptic::{PanopticId, PanopticMap};
use crate::postprocess::panoptic_inference_scored;
use crate::raster::{Raster2D, Raster3D};
use crate::targets::{CenterHeatmap, OffsetField};

pub const GT_PANOPTIC: &str = "gt_panoptic.ptns";
pub const GT_SEMANTIC: &str = "gt_semantic.ptns";
pub const TARGET_HEATMAP: &str = "target_heatmap.ptns";
pub const TARGET_OFFSETS: &str = "target_offsets.ptns";
pub const TARGET_OFFSET_MASK: &str = "target_offset_mask.ptns";
pub const PRED_SEMANTIC: &str = "pred_semantic.ptns";
pub const PRED_HEATMAP: &str = "pred_heatmap.ptns";
pub const PRED_OFFSETS: &str = "pred_offsets.ptns";
pub const PRED_PANOPTIC: &str = "pred_panoptic.ptns";
pub const PRED_SEGMENTS: &str = "pred_segments.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Parser)]
#[command(
    name = "panoptic",
    version,
    about = "Bottom-up panoptic segmentation toolkit"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for scene generation and noise (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Image size, `N` or `HxW` (overrides the config file).
    #[arg(long, global = true, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    /// JSON config with optional `dataset`, `scene`, `noise`, `postprocess`,
    /// `encoder` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth scene.
    Synth,
    /// Encode center heatmap and offset targets from `gt_panoptic.ptns`.
    EncodeTargets(InputDir),
    /// Corrupt ground-truth semantic and targets into predictions.
    Perturb(InputDir),
    /// Turn predictions into a panoptic map.
    Postprocess(InputDir),
    /// Score a predicted panoptic map against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate, encode, perturb, post-process and evaluate in memory.
    Roundtrip(RoundtripArgs),
}

#[derive(Debug, Args)]
struct InputDir {
    /// Directory holding the inputs; defaults to `--out`.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// JSON map of panoptic id -> center score, as written by `postprocess`.
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RoundtripArgs {
    /// Number of scenes; scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    count: u64,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("invalid size component {v:?}"))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.scene.seed = seed;
        config.noise.seed = seed;
    }
    if let Some((h, w)) = common.size {
        config.scene.height = h;
        config.scene.width = w;
    }
    config.validate()?;
    Ok(config)
}

fn read_panoptic(path: &Path, config: &ExperimentConfig) -> Result<PanopticMap> {
    PanopticMap::new(read_tensor(path)?.into_raster2d()?, &config.dataset)
}

fn read_offsets(dir: &Path, field: &str, mask: &str) -> Result<OffsetField> {
    let offsets: Raster3D<f32> = read_tensor(dir.join(field))?.into_raster3d()?;
    let valid: Raster2D<bool> = read_tensor(dir.join(mask))?.into_raster2d()?;
    OffsetField::new(offsets, valid)
}

fn write_offsets(dir: &Path, field_name: &str, mask_name: &str, field: &OffsetField) -> Result<()> {
    write_tensor(
        dir.join(field_name),
        &Tensor::from_raster3d(field.offsets()),
    )?;
    write_tensor(
        dir.join(mask_name),
        &Tensor::from_raster2d(field.valid_mask()),
    )
}

#[derive(Serialize)]
struct SceneSummary {
    command: &'static str,
    height: usize,
    width: usize,
    thing_segments: usize,
    class_areas: BTreeMap<u32, u64>,
}

#[derive(Serialize)]
struct EvaluationOutput<'a> {
    command: &'static str,
    #[serde(flatten)]
    report: &'a EvaluationReport,
}

fn summarize(command: &'static str, pan: &PanopticMap, config: &ExperimentConfig) -> SceneSummary {
    let spec = &config.dataset;
    let mut class_areas = BTreeMap::new();
    let mut things = std::collections::BTreeSet::new();
    for &id in pan.raster().data() {
        let class = spec.class_of(id);
        *class_areas.entry(class).or_insert(0) += 1;
        if id != spec.void_id() && spec.is_thing(class) {
            things.insert(id);
        }
    }
    SceneSummary {
        command,
        height: pan.shape().0,
        width: pan.shape().1,
        thing_segments: things.len(),
        class_areas,
    }
}

fn print_summary(s: &SceneSummary) {
    println!(
        "{}: {}x{} scene, {} thing segments",
        s.command, s.height, s.width, s.thing_segments
    );
}

fn execute(cli: Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    let spec = &config.dataset;
    let out = &cli.common.out;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let input_dir = |input: &InputDir| input.input.clone().unwrap_or_else(|| out.clone());

    match &cli.command {
        Command::Synth => {
            let scene = generate_scene(&config.scene, spec)?;
            write_tensor(
                out.join(GT_PANOPTIC),
                &Tensor::from_raster2d(scene.panoptic.raster()),
            )?;
            write_tensor(
                out.join(GT_SEMANTIC),
                &Tensor::from_raster2d(&scene.semantic),
            )?;
            let summary = summarize("synth", &scene.panoptic, &config);
            print_summary(&summary);
            write_json(&out.join(REPORT), &summary)
        }
        Command::EncodeTargets(input) => {
            let dir = input_dir(input);
            let gt = read_panoptic(&dir.join(GT_PANOPTIC), &config)?;
            let targets = encode_targets(&gt, spec, &config.encoder)?;
            write_tensor(
                out.join(TARGET_HEATMAP),
                &Tensor::from_raster2d(targets.heatmap.raster()),
            )?;
            write_offsets(out, TARGET_OFFSETS, TARGET_OFFSET_MASK, &targets.offsets)?;
            let summary = summarize("encode-targets", &gt, &config);
            print_summary(&summary);
            write_json(&out.join(REPORT), &summary)
        }
        Command::Perturb(input) => {
            let dir = input_dir(input);
            let semantic: Raster2D<u32> = read_tensor(dir.join(GT_SEMANTIC))?.into_raster2d()?;
            let heatmap =
                CenterHeatmap::new(read_tensor(dir.join(TARGET_HEATMAP))?.into_raster2d()?)?;
            let offsets = read_offsets(&dir, TARGET_OFFSETS, TARGET_OFFSET_MASK)?;
            let pred = perturb_predictions(&semantic, &heatmap, &offsets, &config.noise, spec)?;
            write_tensor(
                out.join(PRED_SEMANTIC),
                &Tensor::from_raster2d(&pred.semantic),
            )?;
            write_tensor(
                out.join(PRED_HEATMAP),
                &Tensor::from_raster2d(pred.heatmap.raster()),
            )?;
            write_offsets(out, PRED_OFFSETS, TARGET_OFFSET_MASK, &pred.offsets)?;
            let flipped = pred
                .semantic
                .data()
                .iter()
                .zip(semantic.data())
                .filter(|(a, b)| a != b)
                .count();
            println!("perturb: {flipped} semantic labels flipped");
            write_json(
                &out.join(REPORT),
                &serde_json::json!({
                    "command": "perturb",
                    "noise": config.noise,
                    "flipped_labels": flipped,
                }),
            )
        }
        Command::Postprocess(input) => {
            let dir = input_dir(input);
            let semantic: Raster2D<u32> = read_tensor(dir.join(PRED_SEMANTIC))?.into_raster2d()?;
            let heatmap =
                CenterHeatmap::new(read_tensor(dir.join(PRED_HEATMAP))?.into_raster2d()?)?;
            let offsets = read_offsets(&dir, PRED_OFFSETS, TARGET_OFFSET_MASK)?;
            let pred = panoptic_inference_scored(
                &semantic,
                &heatmap,
                &offsets,
                spec,
                &config.postprocess,
            )?;
            write_tensor(
                out.join(PRED_PANOPTIC),
                &Tensor::from_raster2d(pred.panoptic.raster()),
            )?;
            write_json(&out.join(PRED_SEGMENTS), &pred.segment_scores)?;
            let summary = summarize("postprocess", &pred.panoptic, &config);
            println!("postprocess: {} centers", pred.centers.len());
            print_summary(&summary);
            write_json(&out.join(REPORT), &summary)
        }
        Command::Evaluate(args) => {
            let pred = read_panoptic(&args.pred, &config)?;
            let gt = read_panoptic(&args.gt, &config)?;
            let scores: Option<BTreeMap<PanopticId, f32>> = match &args.scores {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(io_err(path))?;
                    Some(
                        serde_json::from_str(&text)
                            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                    )
                }
                None => None,
            };
            let mut eval = Evaluation::new(spec);
            eval.add_image(0, &pred, &gt, scores.as_ref(), spec)?;
            let report = eval.report(spec);
            print!("{}", report.to_table());
            write_json(
                &out.join(REPORT),
                &EvaluationOutput {
                    command: "evaluate",
                    report: &report,
                },
            )
        }
        Command::Roundtrip(args) => {
            let report = run_experiment(&config, args.count)?;
            print!("{}", report.to_table());
            write_json(
                &out.join(REPORT),
                &EvaluationOutput {
                    command: "roundtrip",
                    report: &report,
                },
            )
        }
    }
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.workers)
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} workers: {e}", cli.common.workers);
            return 1;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
