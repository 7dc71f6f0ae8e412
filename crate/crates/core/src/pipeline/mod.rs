//! End-to-end runner: mask → grid → classify → stitch → downsample → fuse →
//! refine → postprocess → eval, one directory per stage.

mod experiment;

pub use experiment::{compare_reports, run_experiment_matrix, ConfigOutcome, ExperimentReport, ExperimentSpec, NamedConfig, Pairing};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::bridge::{classify_batch, BackendDescriptor, Patch, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::heatmap::{fuse_inputs, resize_heatmap, resize_heatmap_registered, stitch_heatmap, DEFAULT_REFINEMENT_SIZE};
use crate::metrics::{overlap_metrics, overlay, MetricsReport};
use crate::phantom::TUMOR_TRUTH_FILE;
use crate::postprocess::{postprocess, refine, PostprocessConfig, Refiner};
use crate::raster::BinaryMask;
use crate::slide::{import_raster, write_rgb_png, TiledSlide, MANIFEST_NAME};
use crate::stats::{aggregate, boxplot_csv, CohortSummary};
use crate::tissue::{
    build_patch_grid, compute_tissue_mask, extract_patch, DEFAULT_BRIGHTNESS_CEILING,
    DEFAULT_GRADIENT_THRESHOLD, DEFAULT_PATCH_SIZE,
};

pub const CONFIG_ECHO_FILE: &str = "effective_config.json";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const BOXPLOT_FILE: &str = "boxplot.csv";

pub const STAGES: [&str; 9] = [
    "mask",
    "grid",
    "classify",
    "stitch",
    "downsample",
    "fuse",
    "refine",
    "postprocess",
    "eval",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideSource {
    /// Slide directory (with a manifest) or a PNG/TIFF raster.
    pub path: PathBuf,
    /// Level-aligned tumor truth mask, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

impl SlideSource {
    /// Uses `tumor_truth.png` next to the slide when present.
    pub fn discover(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let candidate = path.join(TUMOR_TRUTH_FILE);
        let truth = path.is_dir().then_some(candidate).filter(|p| p.is_file());
        Self { path, truth }
    }
}

/// How the patch lattice is brought to refinement resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMapping {
    /// Lattice corners pinned to raster corners.
    AlignCorners,
    /// Patch centres kept at their slide position.
    #[default]
    Registered,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub slides: Vec<SlideSource>,
    pub classifier: BackendDescriptor,
    pub refiner: Refiner,
    pub patch_size: u32,
    pub patch_level: u32,
    /// Defaults to the level whose downsample factor is nearest 32.
    pub mask_level: Option<u32>,
    pub gradient_threshold: f64,
    pub brightness_ceiling: f64,
    pub refinement_size: u32,
    pub heatmap_mapping: HeatmapMapping,
    /// Tile size used when importing raster files.
    pub import_tile_size: u32,
    /// Carried for training-time patch export; inference does not augment.
    pub augment: AugmentConfig,
    pub postprocess: PostprocessConfig,
    /// Also write the final mask upscaled to the truth resolution.
    pub write_level0_mask: bool,
    /// Write the fused 4-channel tensor (large).
    pub write_tensor: bool,
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            slides: Vec::new(),
            classifier: BackendDescriptor::heuristic(),
            refiner: Refiner::Identity,
            patch_size: DEFAULT_PATCH_SIZE,
            patch_level: 0,
            mask_level: None,
            gradient_threshold: DEFAULT_GRADIENT_THRESHOLD,
            brightness_ceiling: DEFAULT_BRIGHTNESS_CEILING,
            refinement_size: DEFAULT_REFINEMENT_SIZE,
            heatmap_mapping: HeatmapMapping::default(),
            import_tile_size: 512,
            augment: AugmentConfig::default(),
            postprocess: PostprocessConfig::default(),
            write_level0_mask: false,
            write_tensor: true,
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: default_workers(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_slice(&raw)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.refinement_size == 0 {
            return Err(Error::Config("refinement_size must be at least 1".into()));
        }
        self.classifier.validate()?;
        self.postprocess.validate()?;
        if let Refiner::External { backend } = &self.refiner {
            backend.validate()?;
        }
        for s in &self.slides {
            if !s.path.exists() {
                return Err(Error::Input(format!("slide {} does not exist", s.path.display())));
            }
            if let Some(t) = &s.truth {
                if !t.is_file() {
                    return Err(Error::Input(format!("truth mask {} does not exist", t.display())));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideResult {
    pub slide_id: String,
    pub source: PathBuf,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub n_patches: usize,
    #[serde(default)]
    pub n_classified: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub slides: Vec<SlideResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<CohortSummary>,
}

impl PipelineReport {
    pub fn all_ok(&self) -> bool {
        self.slides.iter().all(|s| s.ok)
    }

    pub fn metrics(&self) -> impl Iterator<Item = &MetricsReport> {
        self.slides.iter().filter_map(|s| s.metrics.as_ref())
    }
}

/// Outcome of a run. Timings are returned, never written into the output
/// tree, so repeated runs produce identical files.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub timings: Vec<(String, Vec<StageTiming>)>,
    pub wall: Duration,
}

/// In-memory output of [`run_slide`].
#[derive(Debug, Clone)]
pub struct SlideOutput {
    pub final_mask: BinaryMask,
    pub metrics: Option<MetricsReport>,
    pub n_patches: usize,
    pub n_classified: usize,
    pub timings: Vec<StageTiming>,
}

struct Stopwatch {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            timings: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage,
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

fn stage_dir(root: &Path, stage: &str) -> Result<PathBuf> {
    let d = root.join(stage);
    fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    Ok(d)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every stage on one slide, writing artifacts under `slide_root`
/// (normally `<out>/<slide_id>`). Must be called inside the worker pool.
pub fn run_slide(
    slide: &TiledSlide,
    truth: Option<&BinaryMask>,
    cfg: &PipelineConfig,
    slide_root: &Path,
) -> Result<SlideOutput> {
    let mut sw = Stopwatch::new();

    let mask_level = cfg.mask_level.unwrap_or_else(|| slide.level_nearest_factor(32.0));
    let tissue = compute_tissue_mask(slide, mask_level, cfg.gradient_threshold, cfg.brightness_ceiling)?;
    let d = stage_dir(slide_root, "mask")?;
    tissue.mask.save_png(&d.join("tissue_mask.png"))?;
    write_json(
        &d.join("mask.json"),
        &serde_json::json!({
            "level": mask_level,
            "width": tissue.mask.width(),
            "height": tissue.mask.height(),
            "gradient_threshold": cfg.gradient_threshold,
            "brightness_ceiling": cfg.brightness_ceiling,
            "tissue_pixels": tissue.mask.count_ones(),
        }),
    )?;
    sw.lap("mask");

    let grid = build_patch_grid(slide, cfg.patch_level, cfg.patch_size, &tissue, truth)?;
    grid.save(&stage_dir(slide_root, "grid")?)?;
    sw.lap("grid");

    let targets: Vec<_> = grid.tissue_records().collect();
    let patches = targets
        .par_iter()
        .map(|r| {
            Ok(Patch {
                grid_x: r.grid_x,
                grid_y: r.grid_y,
                pixels: extract_patch(slide, &grid, r, PATCH_SIDE)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let probs = classify_batch(&cfg.classifier, &patches)?;
    drop(patches);
    let mut csv_text = String::from("grid_x,grid_y,p_tumor\n");
    for p in &probs {
        csv_text.push_str(&format!("{},{},{}\n", p.grid_x, p.grid_y, p.p_tumor));
    }
    write_text(&stage_dir(slide_root, "classify")?.join("probabilities.csv"), &csv_text)?;
    sw.lap("classify");

    let heatmap = stitch_heatmap(&grid, &probs)?;
    heatmap.save(&stage_dir(slide_root, "stitch")?, &grid)?;
    sw.lap("stitch");

    let size = cfg.refinement_size;
    let rgb = slide.downsample_to(size, size)?;
    write_rgb_png(&stage_dir(slide_root, "downsample")?.join("rgb.png"), &rgb)?;
    sw.lap("downsample");

    let resized = match cfg.heatmap_mapping {
        HeatmapMapping::AlignCorners => resize_heatmap(&heatmap, size)?,
        HeatmapMapping::Registered => resize_heatmap_registered(&heatmap, &grid.header(), size, size)?,
    };
    let fused = fuse_inputs(&rgb, &resized)?;
    let d = stage_dir(slide_root, "fuse")?;
    resized.save_png16(&d.join("heatmap_resized.png"))?;
    if cfg.write_tensor {
        fused.save(&d, "refinement_input")?;
    }
    sw.lap("fuse");

    let refined = refine(&fused, &cfg.refiner)?;
    drop(fused);
    refined.save_png16(&stage_dir(slide_root, "refine")?.join("refined.png"))?;
    sw.lap("refine");

    let final_mask = postprocess(&refined, &cfg.postprocess)?;
    let d = stage_dir(slide_root, "postprocess")?;
    final_mask.save_png(&d.join("final_mask.png"))?;
    if cfg.write_level0_mask {
        let level0 = slide.level(0)?;
        final_mask
            .resize_nearest(level0.width, level0.height)
            .save_png(&d.join("final_mask_level0.png"))?;
    }
    sw.lap("postprocess");

    let metrics = match truth {
        Some(t) => {
            let t_small = t.resize_nearest(size, size);
            let report = overlap_metrics(slide.slide_id(), &final_mask, &t_small)?;
            let d = stage_dir(slide_root, "eval")?;
            write_json(&d.join("metrics.json"), &report)?;
            write_rgb_png(&d.join("overlay.png"), &overlay(&final_mask, &t_small)?)?;
            Some(report)
        }
        None => None,
    };
    sw.lap("eval");

    Ok(SlideOutput {
        final_mask,
        metrics,
        n_patches: grid.records.len(),
        n_classified: probs.len(),
        timings: sw.timings,
    })
}

/// Opens a slide directory or imports a raster file.
pub fn load_slide(path: &Path, tile_size: u32) -> Result<TiledSlide> {
    if path.is_dir() && path.join(MANIFEST_NAME).is_file() {
        TiledSlide::open(path)
    } else {
        import_raster(path, tile_size)
    }
}

fn load_and_run(src: &SlideSource, cfg: &PipelineConfig) -> (SlideResult, Vec<StageTiming>) {
    let fallback_id = src
        .path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut result = SlideResult {
        slide_id: fallback_id,
        source: src.path.clone(),
        ok: false,
        error: None,
        n_patches: 0,
        n_classified: 0,
        metrics: None,
    };
    let run = || -> Result<SlideOutput> {
        let slide = load_slide(&src.path, cfg.import_tile_size)?;
        let truth = src.truth.as_deref().map(BinaryMask::load_png).transpose()?;
        let root = cfg.output_dir.join(slide.slide_id());
        run_slide(&slide, truth.as_ref(), cfg, &root)
    };
    let slide_id = load_slide_id(&src.path);
    if let Some(id) = slide_id {
        result.slide_id = id;
    }
    match run() {
        Ok(out) => {
            result.ok = true;
            result.n_patches = out.n_patches;
            result.n_classified = out.n_classified;
            result.metrics = out.metrics;
            (result, out.timings)
        }
        Err(e) => {
            result.error = Some(e.to_string());
            (result, Vec::new())
        }
    }
}

fn load_slide_id(path: &Path) -> Option<String> {
    let manifest = path.join(MANIFEST_NAME);
    let raw = fs::read(manifest).ok()?;
    let v: serde_json::Value = serde_json::from_slice(&raw).ok()?;
    v.get("slide_id")?.as_str().map(str::to_string)
}

/// Runs the cohort. A failing slide is recorded and the rest continue; the
/// caller decides the exit status from [`PipelineReport::all_ok`].
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let start = Instant::now();
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write_json(&cfg.output_dir.join(CONFIG_ECHO_FILE), cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<(SlideResult, Vec<StageTiming>)> =
        pool.install(|| cfg.slides.par_iter().map(|s| load_and_run(s, cfg)).collect());

    let mut slides = Vec::with_capacity(outcomes.len());
    let mut timings = Vec::with_capacity(outcomes.len());
    for (r, t) in outcomes {
        timings.push((r.slide_id.clone(), t));
        slides.push(r);
    }
    let metrics: Vec<MetricsReport> = slides.iter().filter_map(|s| s.metrics.clone()).collect();
    let summary = if metrics.is_empty() { None } else { Some(aggregate(&metrics)?) };
    if let Some(s) = &summary {
        write_text(&cfg.output_dir.join(SUMMARY_FILE), &s.to_csv())?;
        write_text(
            &cfg.output_dir.join(BOXPLOT_FILE),
            &boxplot_csv(metrics.iter().map(|m| ("pipeline", m))),
        )?;
    }
    let report = PipelineReport { slides, summary };
    write_json(&cfg.output_dir.join(REPORT_FILE), &report)?;
    Ok(PipelineRun {
        report,
        timings,
        wall: start.elapsed(),
    })
}
