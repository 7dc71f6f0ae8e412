use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use slideseg::augment::{augment_patch, draw_grid_overlay, AugmentConfig, RadiusRange};
use slideseg::bridge::stub::{run_stub, StubMode};
use slideseg::bridge::{classify_batch, extract_features, BackendDescriptor, Patch, PATCH_SIDE};
use slideseg::cluster::{balanced_sample, evolve_cluster_count_traced, EvolutionConfig};
use slideseg::heatmap::{fuse_inputs, resize_heatmap, resize_heatmap_registered, stitch_heatmap, Heatmap, RefinementInput};
use slideseg::metrics::{overlap_metrics, overlay, MetricsReport};
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::pipeline::{
    load_slide, run_experiment_matrix, run_pipeline, run_slide, ExperimentSpec, PipelineConfig, SlideSource,
};
use slideseg::postprocess::{postprocess, refine, PostprocessConfig, Refiner};
use slideseg::rng::{mix, stream};
use slideseg::slide::import_raster;
use slideseg::stats::{aggregate, boxplot_csv};
use slideseg::tissue::{build_patch_grid, compute_tissue_mask, extract_patch, PatchGrid, TissueMask};
use slideseg::{BinaryMask, Error, Result, ScalarRaster};

#[derive(Parser)]
#[command(name = "slideseg", version, about = "Whole-slide tumor segmentation toolkit")]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a PNG/TIFF raster into a tiled slide directory.
    Import {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        tile_size: u32,
    },
    /// Generate a synthetic slide with truth masks.
    Phantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4096)]
        size: u32,
        #[arg(long)]
        blobs: Option<usize>,
        /// JSON phantom spec; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compute the tissue mask of a slide.
    Mask(MaskArgs),
    /// Lay the patch lattice and label every patch.
    Grid(GridArgs),
    /// Write augmented copies of an image.
    Augment(AugmentArgs),
    /// Classify the tissue patches of a slide.
    Classify {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "heuristic")]
        backend: String,
    },
    /// Stitch patch probabilities into a heatmap.
    Stitch {
        /// Directory holding grid.json.
        #[arg(long)]
        grid: PathBuf,
        /// CSV with grid_x,grid_y,p_tumor.
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a heatmap with the down-sampled slide and run the refiner.
    Refine {
        slide: PathBuf,
        /// Directory holding heatmap.json.
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "identity")]
        refiner: String,
        #[arg(long, default_value_t = 1120)]
        size: u32,
        /// Pin lattice corners to raster corners instead of keeping patch
        /// centres registered to the slide.
        #[arg(long)]
        align_corners: bool,
    },
    /// Threshold and clean a probability raster (16-bit PNG).
    Postprocess {
        raster: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON post-processing config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare predicted masks with truth masks (files or directories).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage on a cohort.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Slide directories or rasters; `tumor_truth.png` beside a slide is used as truth.
        #[arg(long, num_args = 1..)]
        slides: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        refiner: Option<String>,
    },
    /// Run named configs on one cohort and compare them.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cluster patch features and draw a cluster-balanced sample.
    Cluster {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, default_value = "heuristic")]
        backend: String,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 8)]
        k_max: usize,
        #[arg(long, default_value_t = 16)]
        population: usize,
        #[arg(long, default_value_t = 20)]
        generations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        per_cluster: usize,
    },
    /// Time each stage on a generated phantom.
    Bench {
        #[arg(long, default_value_t = 4096)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    #[command(hide = true)]
    StubBackend {
        #[arg(long)]
        mode: String,
    },
}

#[derive(Args)]
struct MaskArgs {
    slide: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mask_level: Option<u32>,
    #[arg(long, default_value_t = slideseg::tissue::DEFAULT_GRADIENT_THRESHOLD)]
    gradient_threshold: f64,
    #[arg(long, default_value_t = slideseg::tissue::DEFAULT_BRIGHTNESS_CEILING)]
    brightness_ceiling: f64,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    mask: MaskArgs,
    #[arg(long, default_value_t = slideseg::tissue::DEFAULT_PATCH_SIZE)]
    patch_size: u32,
    #[arg(long, default_value_t = 0)]
    level: u32,
    /// Tumor truth mask aligned with some pyramid level.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    count: u32,
    /// JSON augmentation config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lenses: Option<u32>,
    /// Radius range in pixels, `lo,hi`.
    #[arg(long, value_parser = parse_pair)]
    radius_range: Option<(f64, f64)>,
    /// Strength magnitude range, `lo,hi`.
    #[arg(long, value_parser = parse_pair)]
    strength_range: Option<(f64, f64)>,
    /// Draw a grid with this spacing before augmenting, to visualise the warp.
    #[arg(long)]
    grid_overlay: Option<u32>,
    /// Apply only the lens distortion.
    #[arg(long)]
    lens_only: bool,
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_slice(&raw)?)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        mkdir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn tissue_for(slide: &slideseg::TiledSlide, a: &MaskArgs) -> Result<TissueMask> {
    let level = a.mask_level.unwrap_or_else(|| slide.level_nearest_factor(32.0));
    compute_tissue_mask(slide, level, a.gradient_threshold, a.brightness_ceiling)
}

fn grid_for(a: &GridArgs) -> Result<(slideseg::TiledSlide, PatchGrid)> {
    let slide = load_slide(&a.mask.slide, 512)?;
    let tissue = tissue_for(&slide, &a.mask)?;
    let truth = a.truth.as_deref().map(BinaryMask::load_png).transpose()?;
    let grid = build_patch_grid(&slide, a.level, a.patch_size, &tissue, truth.as_ref())?;
    Ok((slide, grid))
}

fn tissue_patches(slide: &slideseg::TiledSlide, grid: &PatchGrid) -> Result<Vec<Patch>> {
    use rayon::prelude::*;
    let recs: Vec<_> = grid.tissue_records().collect();
    recs.par_iter()
        .map(|r| {
            Ok(Patch {
                grid_x: r.grid_x,
                grid_y: r.grid_y,
                pixels: extract_patch(slide, grid, r, PATCH_SIDE)?,
            })
        })
        .collect()
}

fn read_probs(path: &Path) -> Result<Vec<slideseg::bridge::PatchProbability>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Input(format!("{}: {e}", path.display()))))
        .collect()
}

fn mask_files(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_file() {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(stem, path.to_path_buf())]);
    }
    let entries = fs::read_dir(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out: Vec<(String, PathBuf)> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    Ok(out)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Import { input, out, tile_size } => {
            let slide = import_raster(&input, tile_size)?;
            slide.save(&out)?;
            println!("{} levels={} -> {}", slide.slide_id(), slide.levels().len(), out.display());
        }
        Command::Phantom {
            out,
            seed,
            size,
            blobs,
            config,
        } => {
            let mut spec: PhantomSpec = match &config {
                Some(p) => read_json(p)?,
                None => PhantomSpec::default(),
            };
            spec.seed = seed;
            if config.is_none() {
                spec = spec.scaled_to(size);
            } else if size != 4096 {
                spec.width = size;
                spec.height = size;
            }
            if let Some(b) = blobs {
                spec.n_tumor_blobs = b;
            }
            let p = generate_phantom(&spec)?;
            p.save(&out)?;
            println!(
                "{} tissue_px={} tumor_px={} -> {}",
                spec.slide_id(),
                p.tissue_truth.count_ones(),
                p.tumor_truth.count_ones(),
                out.display()
            );
        }
        Command::Mask(a) => {
            let slide = load_slide(&a.slide, 512)?;
            let tissue = tissue_for(&slide, &a)?;
            let dir = a.out.join(slide.slide_id()).join("mask");
            mkdir(&dir)?;
            tissue.mask.save_png(&dir.join("tissue_mask.png"))?;
            println!("level {} tissue_px={}", tissue.level, tissue.mask.count_ones());
        }
        Command::Grid(a) => {
            let (slide, grid) = grid_for(&a)?;
            grid.save(&a.mask.out.join(slide.slide_id()).join("grid"))?;
            println!("{}x{} patches, {} tissue", grid.cols, grid.rows, grid.tissue_records().count());
        }
        Command::Augment(a) => {
            let mut cfg: AugmentConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => AugmentConfig::default(),
            };
            if let Some(n) = a.lenses {
                cfg.num_lenses = n;
            }
            if let Some((lo, hi)) = a.radius_range {
                cfg.radius_range = RadiusRange::Pixels(lo, hi);
            }
            if let Some(r) = a.strength_range {
                cfg.strength_range = r;
            }
            if a.lens_only {
                cfg.flip = false;
                cfg.rot90 = false;
                cfg.contrast = false;
                cfg.hue = false;
                cfg.brightness = false;
                cfg.crop = false;
                cfg.lens = true;
                cfg.apply_probability = 1.0;
            }
            cfg.validate()?;
            let mut img = image::open(&a.input)?.into_rgb8();
            if let Some(s) = a.grid_overlay {
                img = draw_grid_overlay(&img, s, [0, 0, 0]);
            }
            mkdir(&a.out)?;
            for i in 0..a.count {
                let mut rng = stream(mix(&[a.seed, u64::from(i)]));
                let out = augment_patch(&img, &cfg, &mut rng)?;
                out.save(a.out.join(format!("aug_{i:04}.png")))?;
            }
            println!("{} images -> {}", a.count, a.out.display());
        }
        Command::Classify { grid: a, backend } => {
            let backend = BackendDescriptor::parse(&backend)?;
            let (slide, grid) = grid_for(&a)?;
            let patches = tissue_patches(&slide, &grid)?;
            let probs = classify_batch(&backend, &patches)?;
            let root = a.mask.out.join(slide.slide_id());
            grid.save(&root.join("grid"))?;
            let mut text = String::from("grid_x,grid_y,p_tumor\n");
            for p in &probs {
                text.push_str(&format!("{},{},{}\n", p.grid_x, p.grid_y, p.p_tumor));
            }
            write(&root.join("classify").join("probabilities.csv"), text)?;
            println!("{} patches classified", probs.len());
        }
        Command::Stitch { grid, probs, out } => {
            let grid = PatchGrid::load(&grid)?;
            let hm = stitch_heatmap(&grid, &read_probs(&probs)?)?;
            hm.save(&out, &grid)?;
            println!("{}x{} heatmap, mass {:.3}", hm.cols, hm.rows, hm.total_mass());
        }
        Command::Refine {
            slide,
            heatmap,
            out,
            refiner,
            size,
            align_corners,
        } => {
            let slide = load_slide(&slide, 512)?;
            let (hm, grid) = Heatmap::load_with_grid(&heatmap)?;
            let resized = if align_corners {
                resize_heatmap(&hm, size)?
            } else {
                resize_heatmap_registered(&hm, &grid, size, size)?
            };
            let input: RefinementInput = fuse_inputs(&slide.downsample_to(size, size)?, &resized)?;
            input.save(&out, "refinement_input")?;
            let refined = refine(&input, &Refiner::parse(&refiner)?)?;
            refined.save_png16(&out.join("refined.png"))?;
            println!("refined {size}x{size} -> {}", out.display());
        }
        Command::Postprocess { raster, out, config } => {
            let cfg: PostprocessConfig = match &config {
                Some(p) => read_json(p)?,
                None => PostprocessConfig::default(),
            };
            let r = ScalarRaster::load_png16(&raster)?;
            let mask = postprocess(&r, &cfg)?;
            mkdir(&out)?;
            mask.save_png(&out.join("final_mask.png"))?;
            println!("{} foreground pixels", mask.count_ones());
        }
        Command::Eval { pred, truth, out } => {
            let preds = mask_files(&pred)?;
            let truths = mask_files(&truth)?;
            let mut reports: Vec<MetricsReport> = Vec::new();
            mkdir(&out)?;
            for (name, p) in &preds {
                let t = if truth.is_file() {
                    truth.clone()
                } else {
                    match truths.iter().find(|(n, _)| n == name) {
                        Some((_, t)) => t.clone(),
                        None => return Err(Error::Input(format!("no truth mask named {name}.png"))),
                    }
                };
                let pm = BinaryMask::load_png(p)?;
                let tm = BinaryMask::load_png(&t)?.resize_nearest(pm.width(), pm.height());
                let r = overlap_metrics(name, &pm, &tm)?;
                write(&out.join(format!("{name}.json")), serde_json::to_vec_pretty(&r)?)?;
                overlay(&pm, &tm)?.save(out.join(format!("{name}_overlay.png")))?;
                println!("{name}: dsc={:.4} iou={:.4}", r.dsc, r.iou);
                reports.push(r);
            }
            let summary = aggregate(&reports)?;
            write(&out.join("summary.csv"), summary.to_csv())?;
            write(&out.join("boxplot.csv"), boxplot_csv(reports.iter().map(|r| ("eval", r))))?;
        }
        Command::Pipeline {
            config,
            slides,
            out,
            seed,
            backend,
            refiner,
        } => {
            let mut cfg = match &config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            cfg.slides.extend(slides.into_iter().map(SlideSource::discover));
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(b) = backend {
                cfg.classifier = BackendDescriptor::parse(&b)?;
            }
            if let Some(r) = refiner {
                cfg.refiner = Refiner::parse(&r)?;
            }
            if let Some(w) = cli.workers {
                cfg.workers = w;
            }
            let run = run_pipeline(&cfg)?;
            for s in &run.report.slides {
                match (&s.metrics, &s.error) {
                    (_, Some(e)) => eprintln!("{}: FAILED: {e}", s.slide_id),
                    (Some(m), None) => println!("{}: dsc={:.4} iou={:.4}", s.slide_id, m.dsc, m.iou),
                    (None, None) => println!("{}: ok", s.slide_id),
                }
            }
            for (id, t) in &run.timings {
                let parts: Vec<String> = t.iter().map(|s| format!("{}={:.3}s", s.stage, s.seconds)).collect();
                eprintln!("timing {id}: {}", parts.join(" "));
            }
            eprintln!("total {:.3}s", run.wall.as_secs_f64());
            if !run.report.all_ok() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Experiment { config } => {
            let mut spec: ExperimentSpec = read_json(&config)?;
            if let Some(w) = cli.workers {
                for c in &mut spec.configs {
                    c.config.workers = w;
                }
            }
            let report = run_experiment_matrix(&spec)?;
            for c in &report.configs {
                let dsc = c.summary.as_ref().and_then(|s| s.get("dsc"));
                println!(
                    "{}: mean_dsc={} failed={}",
                    c.name,
                    dsc.map_or("-".into(), |s| format!("{:.4}", s.mean)),
                    c.n_failed
                );
            }
            for p in &report.pairings {
                match &p.wilcoxon {
                    Some(w) => println!("{} vs {}: n={} p={:.4e}", p.a, p.b, p.n_pairs, w.p_value),
                    None => println!("{} vs {}: degenerate", p.a, p.b),
                }
            }
        }
        Command::Cluster {
            grid: a,
            backend,
            k_min,
            k_max,
            population,
            generations,
            seed,
            per_cluster,
        } => {
            let backend = BackendDescriptor::parse(&backend)?;
            let (slide, grid) = grid_for(&a)?;
            let patches = tissue_patches(&slide, &grid)?;
            let features = extract_features(&backend, &patches)?;
            let cfg = EvolutionConfig {
                population,
                generations,
                k_min,
                k_max,
                seed,
                ..EvolutionConfig::default()
            };
            let trace = evolve_cluster_count_traced(&features, &cfg)?;
            let root = a.mask.out.join(slide.slide_id()).join("cluster");
            mkdir(&root)?;
            trace.model.save(&root.join("model.json"))?;
            let mut text = String::from("grid_x,grid_y,cluster\n");
            for (p, c) in patches.iter().zip(&trace.model.assignment) {
                text.push_str(&format!("{},{},{c}\n", p.grid_x, p.grid_y));
            }
            write(&root.join("assignment.csv"), text)?;
            let sample = balanced_sample(&grid, &trace.model, per_cluster, seed)?;
            let mut wtr = csv::Writer::from_writer(Vec::new());
            for r in &sample {
                wtr.serialize((r.grid_x, r.grid_y, r.origin_x, r.origin_y))
                    .map_err(|e| Error::Input(e.to_string()))?;
            }
            let bytes = wtr.into_inner().map_err(|e| Error::Input(e.to_string()))?;
            write(&root.join("balanced_sample.csv"), bytes)?;
            println!(
                "k={} objective={:.3} sampled={}",
                trace.model.k,
                trace.model.objective,
                sample.len()
            );
        }
        Command::Bench { size, seed, repeats } => {
            let spec = PhantomSpec::with_seed(seed).scaled_to(size);
            let t0 = Instant::now();
            let p = generate_phantom(&spec)?;
            println!("generate {:.3}s", t0.elapsed().as_secs_f64());
            let dir = std::env::temp_dir().join(format!("slideseg-bench-{}", std::process::id()));
            let cfg = PipelineConfig {
                workers: cli.workers.unwrap_or(PipelineConfig::default().workers),
                ..PipelineConfig::default()
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            for i in 0..repeats {
                let t = Instant::now();
                let out = pool.install(|| run_slide(&p.slide, Some(&p.tumor_truth), &cfg, &dir))?;
                let total = t.elapsed().as_secs_f64();
                let parts: Vec<String> = out.timings.iter().map(|s| format!("{}={:.3}s", s.stage, s.seconds)).collect();
                println!(
                    "run {i}: total={total:.3}s dsc={:.4} {}",
                    out.metrics.map_or(f64::NAN, |m| m.dsc),
                    parts.join(" ")
                );
            }
            let _ = fs::remove_dir_all(&dir);
        }
        Command::StubBackend { mode } => {
            let mode: StubMode = mode.parse()?;
            let stdin = io::stdin();
            run_stub(&mode, stdin.lock(), io::stdout().lock()).map_err(|e| Error::Protocol(e.to_string()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
