mod common;

use common::{blobby_mask, components_ref, dilate_ref, erode_ref, median_ref, open_ref, random_mask, remove_fragments_ref, rng, stub_command};
use proptest::prelude::*;
use rand::Rng;
use slideseg::bridge::BackendDescriptor;
use slideseg::heatmap::fuse_inputs;
use slideseg::metrics::overlap_metrics;
use slideseg::postprocess::{
    connected_components, dilate, erode, median_blur, morphological_open, postprocess, refine, remove_small_fragments,
    threshold_mask, PostprocessConfig, Refiner,
};
use slideseg::{BinaryMask, Error, RgbBlock, ScalarRaster};

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1u32..=64, 1u32..=64, any::<u64>(), any::<bool>()).prop_map(|(w, h, seed, blobby)| {
        let mut r = rng(seed);
        if blobby {
            blobby_mask(&mut r, w, h)
        } else {
            random_mask(&mut r, w, h)
        }
    })
}

fn kernel() -> impl Strategy<Value = u32> {
    prop_oneof![Just(1u32), Just(3), Just(5), Just(7), Just(11)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn erosion_and_dilation_match_naive_windows(m in mask_strategy(), k in kernel()) {
        prop_assert_eq!(erode(&m, k).unwrap(), erode_ref(&m, k));
        prop_assert_eq!(dilate(&m, k).unwrap(), dilate_ref(&m, k));
    }

    #[test]
    fn opening_matches_naive_and_is_anti_extensive(m in mask_strategy(), k in kernel()) {
        let opened = morphological_open(&m, k).unwrap();
        prop_assert_eq!(&opened, &open_ref(&m, k));
        prop_assert!(opened.is_subset_of(&m));
        prop_assert_eq!(morphological_open(&opened, k).unwrap(), opened);
    }

    #[test]
    fn median_matches_sorted_window(m in mask_strategy(), k in kernel()) {
        prop_assert_eq!(median_blur(&m, k).unwrap(), median_ref(&m, k));
    }

    #[test]
    fn components_match_flood_fill(m in mask_strategy()) {
        prop_assert_eq!(connected_components(&m), components_ref(&m));
    }

    #[test]
    fn fragment_removal_matches_oracle_and_is_idempotent(m in mask_strategy(), min_area in 0u64..40) {
        let once = remove_small_fragments(&m, min_area);
        prop_assert_eq!(&once, &remove_fragments_ref(&m, min_area));
        prop_assert_eq!(remove_small_fragments(&once, min_area), once.clone());
        prop_assert!(once.is_subset_of(&m));
    }

    #[test]
    fn threshold_matches_scalar_loop(w in 1u32..40, h in 1u32..40, seed in any::<u64>(), t in 0.01f64..0.99) {
        let mut r = rng(seed);
        let raster = ScalarRaster::from_fn(w, h, |_, _| if r.gen_bool(0.1) { t as f32 } else { r.gen::<f32>() });
        let mask = threshold_mask(&raster, t);
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(mask.get(x, y), f64::from(raster.get(x, y)) >= t);
            }
        }
    }

    #[test]
    fn every_stage_preserves_dims(m in mask_strategy(), k in kernel()) {
        let d = m.dims();
        prop_assert_eq!(erode(&m, k).unwrap().dims(), d);
        prop_assert_eq!(dilate(&m, k).unwrap().dims(), d);
        prop_assert_eq!(median_blur(&m, k).unwrap().dims(), d);
        prop_assert_eq!(remove_small_fragments(&m, 5).dims(), d);
    }
}

#[test]
fn even_kernels_are_rejected() {
    let m = BinaryMask::new(8, 8);
    for k in [0, 2, 4] {
        assert!(matches!(erode(&m, k), Err(Error::Config(_))));
        assert!(matches!(median_blur(&m, k), Err(Error::Config(_))));
    }
}

#[test]
fn hundred_pixel_blob_survives_a_threshold_of_one_hundred() {
    let m = BinaryMask::from_fn(30, 30, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
    assert_eq!(m.count_ones(), 100);
    assert_eq!(remove_small_fragments(&m, 100), m);
    assert!(remove_small_fragments(&m, 101).is_empty());
}

#[test]
fn zero_raster_gives_empty_mask() {
    let r = ScalarRaster::new(200, 200, 0.0);
    assert!(postprocess(&r, &PostprocessConfig::default()).unwrap().is_empty());
}

/// A heatmap shaped like the pipeline's: noisy per-patch probabilities on a
/// 16 px lattice, bilinearly upsampled, then per-pixel jitter and scattered
/// impulse specks on top.
fn noisy_fixture(seed: u64, size: u32) -> (ScalarRaster, BinaryMask) {
    let mut r = rng(seed);
    let discs: Vec<(f64, f64, f64)> = (0..r.gen_range(1..4))
        .map(|_| {
            let rad = r.gen_range(0.08..0.18) * f64::from(size);
            (
                r.gen_range(rad..f64::from(size) - rad),
                r.gen_range(rad..f64::from(size) - rad),
                rad,
            )
        })
        .collect();
    let truth = BinaryMask::from_fn(size, size, |x, y| {
        discs.iter().any(|&(cx, cy, rad)| (f64::from(x) - cx).hypot(f64::from(y) - cy) < rad)
    });
    let cell = 16u32;
    let cells = size / cell;
    let lattice: Vec<f64> = (0..cells * cells)
        .map(|i| {
            let (cx, cy) = ((i % cells) * cell + cell / 2, (i / cells) * cell + cell / 2);
            let base: f64 = if truth.get(cx, cy) { 0.75 } else { 0.25 };
            (base + r.gen_range(-0.3..0.3)).clamp(0.0, 1.0)
        })
        .collect();
    let at = |gx: i64, gy: i64| {
        let c = |v: i64| v.clamp(0, i64::from(cells) - 1) as u32;
        lattice[(c(gy) * cells + c(gx)) as usize]
    };
    let raster = ScalarRaster::from_fn(size, size, |x, y| {
        let gx = (f64::from(x) + 0.5) / f64::from(cell) - 0.5;
        let gy = (f64::from(y) + 0.5) / f64::from(cell) - 0.5;
        let (x0, y0) = (gx.floor(), gy.floor());
        let (fx, fy) = (gx - x0, gy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let smooth = (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
            + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1));
        let speck = if r.gen_bool(0.002) { 0.6 } else { 0.0 };
        (smooth + r.gen_range(-0.15..0.15) + speck).clamp(0.0, 1.0) as f32
    });
    (raster, truth)
}

#[test]
fn chain_beats_plain_threshold_on_noisy_fixtures() {
    let cfg = PostprocessConfig::default();
    for seed in 0..5 {
        let (raster, truth) = noisy_fixture(seed, 560);
        let raw = overlap_metrics("raw", &threshold_mask(&raster, cfg.threshold), &truth).unwrap();
        let cleaned = overlap_metrics("clean", &postprocess(&raster, &cfg).unwrap(), &truth).unwrap();
        assert!(
            cleaned.dsc >= raw.dsc,
            "fixture {seed}: post-processed dsc {} below raw threshold dsc {}",
            cleaned.dsc,
            raw.dsc
        );
        assert!(cleaned.avg_hausdorff.unwrap() < raw.avg_hausdorff.unwrap());
    }
}

fn tensor(size: u32, seed: u64) -> slideseg::heatmap::RefinementInput {
    let mut r = rng(seed);
    let rgb = RgbBlock::from_fn(size, size, |_, _| image::Rgb([r.gen(), r.gen(), r.gen()]));
    let hm = ScalarRaster::from_fn(size, size, |_, _| r.gen::<f32>());
    fuse_inputs(&rgb, &hm).unwrap()
}

#[test]
fn identity_refiner_is_bit_exact() {
    let input = tensor(40, 1);
    let out = refine(&input, &Refiner::Identity).unwrap();
    assert_eq!(out.data(), input.channel(3));
}

#[test]
fn external_refiner_halving_stub() {
    let input = tensor(64, 2);
    let refiner = Refiner::External {
        backend: BackendDescriptor::external(stub_command("scale:0.5")),
    };
    let out = refine(&input, &refiner).unwrap();
    assert_eq!(out.dims(), (64, 64));
    for (o, h) in out.data().iter().zip(input.channel(3)) {
        assert_eq!(*o, h * 0.5);
    }
}

#[test]
fn external_refiner_bad_rasters_are_protocol_errors() {
    let input = tensor(16, 3);
    for mode in ["wrong-dims", "scale:3.0", "bad-json"] {
        let refiner = Refiner::External {
            backend: BackendDescriptor::external(stub_command(mode)),
        };
        let err = refine(&input, &refiner).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)), "{mode}: {err}");
    }
}
