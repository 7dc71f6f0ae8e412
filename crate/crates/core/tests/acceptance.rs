//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Pass a substring to run a subset:
//! `cargo test --test acceptance -- phantom`.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use rayon::prelude::*;
use slideseg::augment::{apply_multi_lens_distortion, lens_source, LensSpec};
use slideseg::bridge::{classify_batch, extract_features, BackendDescriptor, ExternalSession, Patch, PATCH_SIDE};
use slideseg::cluster::{evolve_cluster_count_traced, kmeans_assign, kmeans_seed_for, EvolutionConfig};
use slideseg::heatmap::{resize_heatmap_registered, Heatmap, RefinementInput};
use slideseg::metrics::{average_hausdorff, overlap_metrics};
use slideseg::phantom::{generate_phantom, PhantomSpec};
use slideseg::pipeline::{run_pipeline, run_slide, PipelineConfig, SlideSource};
use slideseg::postprocess::{connected_components, dilate, erode, median_blur, morphological_open, remove_small_fragments};
use slideseg::stats::wilcoxon_signed_rank;
use slideseg::tissue::{build_patch_grid, label_for, PatchLabel, TissueMask};
use slideseg::{BinaryMask, Error, RgbBlock, TiledSlide};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---- augmentation ----

fn random_lens(r: &mut impl Rng, w: u32, h: u32) -> LensSpec {
    LensSpec {
        cx: f64::from(r.gen_range(0..w)),
        cy: f64::from(r.gen_range(0..h)),
        radius: r.gen_range(0.5..f64::from(w.max(h)) + 1.0),
        strength: r.gen_range(-0.99..0.99),
    }
}

fn augmentation_suite() -> Outcome {
    const CASES: u64 = 100_000;
    let start = Instant::now();
    let failures: Vec<String> = (0..CASES)
        .into_par_iter()
        .filter_map(|case| {
            let mut r = rng(case);
            let (w, h) = (r.gen_range(1..=32), r.gen_range(1..=32));
            let img = random_image(&mut r, w, h);
            let lens = random_lens(&mut r, w, h);
            let out = apply_multi_lens_distortion(&img, &[lens]);
            let zero = apply_multi_lens_distortion(&img, &[LensSpec { strength: 0.0, ..lens }]);
            if zero != img {
                return Some(format!("case {case}: zero strength changed the image"));
            }
            for (x, y, px) in img.enumerate_pixels() {
                let (sx, sy) = lens_source(&lens, x, y, w, h);
                if sx >= w || sy >= h {
                    return Some(format!("case {case}: source ({sx},{sy}) outside {w}x{h}"));
                }
                let outside = (f64::from(x) - lens.cx).hypot(f64::from(y) - lens.cy) >= lens.radius;
                if outside && out.get_pixel(x, y) != px {
                    return Some(format!("case {case}: pixel ({x},{y}) outside the disc changed"));
                }
            }
            let (cx, cy) = (lens.cx as u32, lens.cy as u32);
            if out.get_pixel(cx, cy) != img.get_pixel(cx, cy) {
                return Some(format!("case {case}: lens centre moved"));
            }
            None
        })
        .collect();
    let elapsed = start.elapsed();
    check(failures.is_empty(), || format!("{} failing cases, first: {}", failures.len(), failures[0]))?;
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:.1?}, limit 60 s"))?;
    Ok(format!("{CASES} cases in {elapsed:.1?}"))
}

fn lens_arithmetic_golden() -> Outcome {
    let lens = LensSpec { cx: 4.0, cy: 4.0, radius: 4.0, strength: 0.5 };
    // Pixel at column 2, row 4: r = 2, scaling 0.5, source column
    // (2 - 4) * 0.75 + 4 = 2.5, rounded half up to 3.
    let (dx, dy) = (2.0f64 - 4.0, 0.0f64);
    let raw = dx * (1.0 - 0.5 * (1.0 - (dx * dx + dy * dy).sqrt() / 4.0)) + 4.0;
    check(raw == 2.5, || format!("unrounded source {raw}"))?;
    check(lens_source(&lens, 2, 4, 9, 9) == (3, 4), || format!("{:?}", lens_source(&lens, 2, 4, 9, 9)))?;
    check(lens_source(&lens, 4, 2, 9, 9) == (4, 3), || format!("{:?}", lens_source(&lens, 4, 2, 9, 9)))?;
    let img = RgbBlock::from_fn(9, 9, |x, y| image::Rgb([x as u8, y as u8, 0]));
    let out = apply_multi_lens_distortion(&img, &[lens]);
    check(out.get_pixel(2, 4).0 == [3, 4, 0], || format!("pixel (2,4) took {:?}", out.get_pixel(2, 4)))?;
    check(out == apply_lenses_ref(&img, &[lens]), || "9x9 image differs from the reference".into())?;

    for case in 0..50u64 {
        let mut r = rng(1_000 + case);
        let (w, h) = (r.gen_range(2..=48), r.gen_range(2..=48));
        let img = random_image(&mut r, w, h);
        let lenses: Vec<LensSpec> = (0..r.gen_range(1..=4)).map(|_| random_lens(&mut r, w, h)).collect();
        check(apply_multi_lens_distortion(&img, &lenses) == apply_lenses_ref(&img, &lenses), || {
            format!("case {case} differs from the reference")
        })?;
    }
    Ok("worked example plus 50 cases exact".into())
}

// ---- morphology ----

fn morphology_oracles() -> Outcome {
    let failures: Vec<String> = (0..1000u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut r = rng(50_000 + i);
            let (w, h) = (r.gen_range(1..=64), r.gen_range(1..=64));
            let m = if i % 2 == 0 { random_mask(&mut r, w, h) } else { blobby_mask(&mut r, w, h) };
            if connected_components(&m) != components_ref(&m) {
                return Some(format!("mask {i}: components"));
            }
            let area = r.gen_range(0..60);
            if remove_small_fragments(&m, area) != remove_fragments_ref(&m, area) {
                return Some(format!("mask {i}: fragments >= {area}"));
            }
            for k in [3, 5, 7, 11] {
                let ok = erode(&m, k).ok() == Some(erode_ref(&m, k))
                    && dilate(&m, k).ok() == Some(dilate_ref(&m, k))
                    && morphological_open(&m, k).ok() == Some(open_ref(&m, k))
                    && median_blur(&m, k).ok() == Some(median_ref(&m, k));
                if !ok {
                    return Some(format!("mask {i} ({w}x{h}) kernel {k}"));
                }
            }
            None
        })
        .collect();
    check(failures.is_empty(), || format!("{} failures, first: {}", failures.len(), failures[0]))?;
    Ok("1000 masks x 4 kernels bit-exact".into())
}

// ---- metrics and statistics ----

fn metric_oracles() -> Outcome {
    let mut worst_hd = 0.0f64;
    for i in 0..500u64 {
        let mut r = rng(70_000 + i);
        let (w, h) = (r.gen_range(1..=32), r.gen_range(1..=32));
        let (a, b) = if i % 2 == 0 {
            (random_mask(&mut r, w, h), random_mask(&mut r, w, h))
        } else {
            (blobby_mask(&mut r, w, h), blobby_mask(&mut r, w, h))
        };
        let m = overlap_metrics("pair", &a, &b).map_err(|e| e.to_string())?;
        let (tp, fp, fn_, tn) = confusion_ref(&a, &b);
        check((m.tp, m.fp, m.fn_, m.tn) == (tp, fp, fn_, tn), || format!("pair {i}: counts"))?;
        let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
        if tp > 0.0 {
            let p = tp / (tp + fp);
            let rc = tp / (tp + fn_);
            check(m.dsc == 2.0 * tp / (2.0 * tp + fp + fn_), || format!("pair {i}: dsc"))?;
            check(m.iou == tp / (tp + fp + fn_), || format!("pair {i}: iou"))?;
            check(m.precision == p && m.recall == rc, || format!("pair {i}: precision/recall"))?;
            check(m.f1 == 2.0 * tp / (2.0 * tp + fp + fn_), || format!("pair {i}: f1 {} vs {}", m.f1, m.dsc))?;
        }
        check((m.dsc - 2.0 * m.iou / (1.0 + m.iou)).abs() <= 1e-12, || format!("pair {i}: dsc/iou identity"))?;
        match (average_hausdorff(&a, &b), avg_hausdorff_ref(&a, &b)) {
            (Ok(fast), Some(slow)) => {
                worst_hd = worst_hd.max((fast - slow).abs());
                check((fast - slow).abs() <= 1e-9, || format!("pair {i}: hausdorff {fast} vs {slow}"))?;
            }
            (Err(Error::UndefinedMetric(_)), None) => {}
            (got, want) => return Err(format!("pair {i}: hausdorff {got:?} vs {want:?}")),
        }
    }
    Ok(format!("500 pairs, worst Hausdorff error {worst_hd:.1e}"))
}

fn wilcoxon_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for n in 1..=12usize {
        for trial in 0..100u64 {
            let mut r = rng(n as u64 * 1000 + trial);
            let ties = trial % 2 == 1;
            let mut draw = || if ties { f64::from(r.gen_range(0..4u8)) } else { r.gen::<f64>() };
            let a: Vec<f64> = (0..n).map(|_| draw()).collect();
            let b: Vec<f64> = (0..n).map(|_| draw()).collect();
            match wilcoxon_signed_rank(&a, &b) {
                Ok(w) => {
                    let p = wilcoxon_enumerated(&a, &b);
                    worst = worst.max((w.p_value - p).abs());
                    check((w.p_value - p).abs() <= 1e-12, || format!("n={n} trial {trial}: {} vs {p}", w.p_value))?;
                    checked += 1;
                }
                Err(Error::DegenerateTest(_)) => {}
                Err(e) => return Err(format!("n={n}: {e}")),
            }
        }
    }
    let fixture = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5]).map_err(|e| e.to_string())?;
    check(fixture.p_value == 0.0625, || format!("five positive differences gave p = {}", fixture.p_value))?;
    Ok(format!("{checked} samples n<=12, worst error {worst:.1e}; fixture p = 0.0625"))
}

// ---- patch rules ----

fn patch_rules() -> Outcome {
    check(label_for(0.25, None) == PatchLabel::GlassExcluded, || "0.25 tissue".into())?;
    check(label_for(0.25 + f64::EPSILON, None) == PatchLabel::Eligible, || "0.25+eps tissue".into())?;
    check(label_for(1.0, Some(0.0)) == PatchLabel::NonTumor, || "0.0 tumor".into())?;
    check(label_for(1.0, Some(0.03)) == PatchLabel::AmbiguousExcluded, || "0.03 tumor".into())?;
    check(label_for(1.0, Some(0.05)) == PatchLabel::Tumor, || "0.05 tumor".into())?;

    // The same fractions built from pixel masks on a 20x20 patch.
    let img = RgbBlock::from_pixel(20, 20, image::Rgb([255; 3]));
    let slide = TiledSlide::from_image("rules", &img, 32).map_err(|e| e.to_string())?;
    let cases = [
        (100, None, PatchLabel::GlassExcluded),
        (101, None, PatchLabel::Eligible),
        (400, Some(0), PatchLabel::NonTumor),
        (400, Some(12), PatchLabel::AmbiguousExcluded),
        (400, Some(20), PatchLabel::Tumor),
    ];
    for (tissue_px, tumor_px, want) in cases {
        let tissue = TissueMask {
            level: 0,
            mask: BinaryMask::from_fn(20, 20, |x, y| y * 20 + x < tissue_px),
        };
        let tumor = tumor_px.map(|t| BinaryMask::from_fn(20, 20, |x, y| y * 20 + x < t));
        let grid = build_patch_grid(&slide, 0, 20, &tissue, tumor.as_ref()).map_err(|e| e.to_string())?;
        let got = grid.records[0].label;
        check(got == want, || format!("tissue {tissue_px}/400, tumor {tumor_px:?}/400: {got:?}, want {want:?}"))?;
    }
    Ok("five boundary fractions labelled as required".into())
}

// ---- end to end ----

fn pipeline_config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: out.to_path_buf(),
        ..PipelineConfig::default()
    }
}

fn phantom_segmentation() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = pipeline_config(tmp.path());
    let mut dsc = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..20u64 {
        let ph = generate_phantom(&PhantomSpec::with_seed(seed)).map_err(|e| format!("seed {seed}: {e}"))?;
        let t = Instant::now();
        let out = run_slide(&ph.slide, Some(&ph.tumor_truth), &cfg, &tmp.path().join(ph.spec.slide_id()))
            .map_err(|e| format!("seed {seed}: {e}"))?;
        slowest = slowest.max(t.elapsed());
        dsc.push(out.metrics.expect("truth given").dsc);
    }
    let mean = dsc.iter().sum::<f64>() / dsc.len() as f64;
    let mut sorted = dsc.clone();
    sorted.sort_by(f64::total_cmp);
    let median = (sorted[9] + sorted[10]) / 2.0;
    let summary = format!(
        "mean DSC {mean:.4}, median {median:.4}, min {:.4}, slowest slide {slowest:.2?}",
        sorted[0]
    );
    check(mean >= 0.90 && median >= 0.90, || summary.clone())?;
    check(slowest < Duration::from_secs(10), || summary.clone())?;
    Ok(summary)
}

// ---- clustering ----

fn sweep_best_k(pts: &[Vec<f64>], cfg: &EvolutionConfig) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for k in cfg.k_min..=cfg.k_max {
        let o = kmeans_assign(pts, k, kmeans_seed_for(cfg.seed, k)).map_or(f64::NEG_INFINITY, |m| m.objective);
        if o > best.0 {
            best = (o, k);
        }
    }
    best.1
}

fn evolutionary_clustering() -> Outcome {
    let mut hits = 0;
    let mut disagreements = Vec::new();
    for seed in 0..100u64 {
        let pts = gaussian_blobs(seed, 3, 40, 2, 10.0, 1.0);
        let cfg = EvolutionConfig { seed, ..EvolutionConfig::default() };
        let trace = evolve_cluster_count_traced(&pts, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let best_of = |gen: &[usize]| gen.iter().map(|k| trace.fitness[k]).fold(f64::NEG_INFINITY, f64::max);
        for (g, pair) in trace.generations.windows(2).enumerate() {
            check(best_of(&pair[1]) >= best_of(&pair[0]), || format!("seed {seed}: elite lost in generation {}", g + 1))?;
        }
        check(trace.fitness.values().all(|&f| trace.model.objective >= f), || {
            format!("seed {seed}: returned model is not the best evaluated")
        })?;
        if trace.model.k == 3 {
            hits += 1;
        }
        let oracle = sweep_best_k(&pts, &cfg);
        if oracle != trace.model.k {
            disagreements.push(format!("seed {seed}: evolved {} vs sweep {oracle}", trace.model.k));
        }
    }
    check(disagreements.is_empty(), || disagreements.join("; "))?;
    check(hits >= 95, || format!("k = 3 in only {hits}/100 seeds"))?;
    Ok(format!("k = 3 in {hits}/100 seeds, sweep agrees on all"))
}

// ---- determinism ----

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut slides = Vec::new();
    for seed in [100u64, 101, 102] {
        let ph = generate_phantom(&PhantomSpec::with_seed(seed)).map_err(|e| e.to_string())?;
        let dir = tmp.path().join("slides").join(ph.spec.slide_id());
        ph.save(&dir).map_err(|e| e.to_string())?;
        slides.push(SlideSource::discover(dir));
    }
    let mut trees = Vec::new();
    for workers in [1usize, 4, 16] {
        let cfg = PipelineConfig {
            slides: slides.clone(),
            workers,
            ..pipeline_config(&tmp.path().join(format!("w{workers}")))
        };
        let run = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        check(run.report.all_ok(), || format!("workers {workers}: a slide failed"))?;
        trees.push((workers, tree_snapshot(&cfg.output_dir)));
    }
    let (_, reference) = &trees[0];
    for (workers, tree) in &trees[1..] {
        check(tree == reference, || format!("workers {workers} tree differs from workers 1"))?;
    }
    Ok(format!("3 phantoms, {} files identical across 1/4/16 workers", reference.len()))
}

// ---- refinement input ----

fn refinement_input_contract() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ph = generate_phantom(&PhantomSpec::with_seed(0)).map_err(|e| e.to_string())?;
    let root = tmp.path().join("phantom-0");
    run_slide(&ph.slide, None, &pipeline_config(tmp.path()), &root).map_err(|e| e.to_string())?;
    let tensor = RefinementInput::load(&root.join("fuse"), "refinement_input").map_err(|e| e.to_string())?;
    check((tensor.width, tensor.height) == (1120, 1120), || format!("{}x{}", tensor.width, tensor.height))?;
    check(tensor.data.len() == 1120 * 1120 * 4, || format!("{} values", tensor.data.len()))?;
    let (hm, header) = Heatmap::load_with_grid(&root.join("stitch")).map_err(|e| e.to_string())?;
    let resized = resize_heatmap_registered(&hm, &header, 1120, 1120).map_err(|e| e.to_string())?;
    check(tensor.channel(3) == resized.data(), || "channel 3 differs from the resized heatmap".into())?;
    let rgb = ph.slide.downsample_to(1120, 1120).map_err(|e| e.to_string())?;
    for c in 0..3 {
        let want: Vec<f32> = rgb.pixels().map(|p| f32::from(p[c]) / 255.0).collect();
        check(tensor.channel(c) == want.as_slice(), || format!("channel {c} differs from the down-sampled slide"))?;
    }
    Ok("1120x1120x4, heatmap channel exact".into())
}

// ---- bridge ----

fn bridge_protocol() -> Outcome {
    let mut session = ExternalSession::spawn(&stub_command("first-pixel"), Duration::from_secs(60)).map_err(|e| e.to_string())?;
    let patches: Vec<Patch> = (0..10_000u32)
        .map(|i| Patch {
            grid_x: i,
            grid_y: 0,
            pixels: RgbBlock::from_pixel(8, 8, image::Rgb([(i % 251) as u8, 0, 0])),
        })
        .collect();
    let mut answers = Vec::new();
    for chunk in patches.chunks(500) {
        answers.extend(session.classify(chunk).map_err(|e| e.to_string())?);
    }
    let mismatches = answers
        .iter()
        .enumerate()
        .filter(|(i, p)| **p != f64::from((*i % 251) as u8) / 255.0)
        .count();
    check(answers.len() == 10_000 && mismatches == 0, || format!("{mismatches} mismatched of {}", answers.len()))?;

    let full: Vec<Patch> = (0..3u32)
        .map(|i| Patch {
            grid_x: i,
            grid_y: 0,
            pixels: RgbBlock::from_pixel(PATCH_SIDE, PATCH_SIDE, image::Rgb([9, 9, 9])),
        })
        .collect();
    for mode in ["nan", "out-of-range", "bad-json", "wrong-id", "error"] {
        match classify_batch(&BackendDescriptor::external(stub_command(mode)), &full) {
            Err(Error::Protocol(_)) => {}
            other => return Err(format!("{mode}: {other:?}")),
        }
    }
    let mut features = BackendDescriptor::external(stub_command("wrong-dims"));
    features.feature_dim = 6;
    match extract_features(&features, &full) {
        Err(Error::Protocol(_)) => {}
        other => return Err(format!("wrong-dims: {other:?}")),
    }
    Ok("10000 roundtrips, 0 id mismatches; 6 malformed modes rejected".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("augmentation correctness suite", augmentation_suite),
        ("lens arithmetic golden", lens_arithmetic_golden),
        ("morphology, median and components oracles", morphology_oracles),
        ("metric oracle equivalence", metric_oracles),
        ("wilcoxon exactness", wilcoxon_exactness),
        ("patch-rule conformance", patch_rules),
        ("end-to-end phantom segmentation", phantom_segmentation),
        ("evolutionary clustering", evolutionary_clustering),
        ("determinism across worker counts", determinism),
        ("refinement input contract", refinement_input_contract),
        ("bridge protocol", bridge_protocol),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail} ({secs:.1}s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
