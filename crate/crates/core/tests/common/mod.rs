//! Naive reference implementations used as oracles by the integration tests.
//! Each one is written for clarity, not speed, and shares no code with the
//! library beyond the plain data types.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slideseg::augment::LensSpec;
use slideseg::{BinaryMask, RgbBlock};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bin_path() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_slideseg"))
}

/// Command line that runs the scriptable stub backend in `mode`.
pub fn stub_command(mode: &str) -> Vec<String> {
    vec![
        bin_path().to_string_lossy().into_owned(),
        "stub-backend".into(),
        "--mode".into(),
        mode.into(),
    ]
}

pub fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> RgbBlock {
    RgbBlock::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

/// Random mask whose density is itself random, so both sparse and dense
/// masks show up.
pub fn random_mask(rng: &mut impl Rng, w: u32, h: u32) -> BinaryMask {
    let density: f64 = rng.gen_range(0.05..0.95);
    BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(density))
}

/// Random mask made of a few filled rectangles plus salt noise; closer to
/// what segmentation produces than i.i.d. pixels.
pub fn blobby_mask(rng: &mut impl Rng, w: u32, h: u32) -> BinaryMask {
    let rects: Vec<(u32, u32, u32, u32)> = (0..rng.gen_range(1..5))
        .map(|_| {
            let x0 = rng.gen_range(0..w);
            let y0 = rng.gen_range(0..h);
            (x0, y0, x0 + rng.gen_range(1..=w / 2 + 1), y0 + rng.gen_range(1..=h / 2 + 1))
        })
        .collect();
    let salt: f64 = rng.gen_range(0.0..0.05);
    BinaryMask::from_fn(w, h, |x, y| {
        rects.iter().any(|&(x0, y0, x1, y1)| x >= x0 && x < x1 && y >= y0 && y < y1) ^ rng.gen_bool(salt)
    })
}

// ---- multi-lens distortion, transcribed directly from the algorithm ----

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Source coordinate that one lens pulls into output pixel `(x, y)`.
pub fn lens_source_ref(lens: &LensSpec, x: u32, y: u32, w: u32, h: u32) -> (i64, i64) {
    let dx = x as f64 - lens.cx;
    let dy = y as f64 - lens.cy;
    let r = (dx * dx + dy * dy).sqrt();
    let normalized_r = r / lens.radius;
    let scaling_factor = f64::max(1.0 - normalized_r, 0.0);
    let distorted_x = dx * (1.0 - lens.strength * scaling_factor) + lens.cx;
    let distorted_y = dy * (1.0 - lens.strength * scaling_factor) + lens.cy;
    let distorted_x = distorted_x.max(0.0).min((w - 1) as f64);
    let distorted_y = distorted_y.max(0.0).min((h - 1) as f64);
    (round_half_up(distorted_x), round_half_up(distorted_y))
}

/// Whole-image sequential application, every pixel of every lens.
pub fn apply_lenses_ref(img: &RgbBlock, lenses: &[LensSpec]) -> RgbBlock {
    let (w, h) = img.dimensions();
    let mut current = img.clone();
    for lens in lenses {
        let mut next = current.clone();
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = lens_source_ref(lens, x, y, w, h);
                next.put_pixel(x, y, *current.get_pixel(sx as u32, sy as u32));
            }
        }
        current = next;
    }
    current
}

// ---- binary morphology ----

fn window(x: u32, y: u32, kernel: u32) -> impl Iterator<Item = (i64, i64)> {
    let r = (kernel / 2) as i64;
    let (x, y) = (x as i64, y as i64);
    (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (x + dx, y + dy)))
}

fn inside(mask: &BinaryMask, x: i64, y: i64) -> bool {
    x >= 0 && y >= 0 && x < mask.width() as i64 && y < mask.height() as i64
}

/// Zero padding: a window reaching outside the image never erodes to 1.
pub fn erode_ref(mask: &BinaryMask, kernel: u32) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        window(x, y, kernel).all(|(u, v)| inside(mask, u, v) && mask.get(u as u32, v as u32))
    })
}

pub fn dilate_ref(mask: &BinaryMask, kernel: u32) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        window(x, y, kernel).any(|(u, v)| inside(mask, u, v) && mask.get(u as u32, v as u32))
    })
}

pub fn open_ref(mask: &BinaryMask, kernel: u32) -> BinaryMask {
    dilate_ref(&erode_ref(mask, kernel), kernel)
}

/// Sorts the edge-replicated window and takes the middle element.
pub fn median_ref(mask: &BinaryMask, kernel: u32) -> BinaryMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let mut vals: Vec<u8> = window(x, y, kernel)
            .map(|(u, v)| u8::from(mask.get(u.clamp(0, w - 1) as u32, v.clamp(0, h - 1) as u32)))
            .collect();
        vals.sort_unstable();
        vals[vals.len() / 2] == 1
    })
}

/// Depth-first 8-connected labelling; components numbered from 1 in the
/// raster order of their first pixel. Returns labels and per-label sizes
/// (index 0 unused).
pub fn components_ref(mask: &BinaryMask) -> (Vec<u32>, Vec<u64>) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut labels = vec![0u32; (w * h) as usize];
    let mut sizes = vec![0u64];
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(x0 as u32, y0 as u32) || labels[(y0 * w + x0) as usize] != 0 {
                continue;
            }
            let label = sizes.len() as u32;
            let mut size = 0;
            let mut stack = vec![(x0, y0)];
            labels[(y0 * w + x0) as usize] = label;
            while let Some((x, y)) = stack.pop() {
                size += 1;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (u, v) = (x + dx, y + dy);
                        if u < 0 || v < 0 || u >= w || v >= h {
                            continue;
                        }
                        let i = (v * w + u) as usize;
                        if mask.get(u as u32, v as u32) && labels[i] == 0 {
                            labels[i] = label;
                            stack.push((u, v));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }
    (labels, sizes)
}

pub fn remove_fragments_ref(mask: &BinaryMask, min_area: u64) -> BinaryMask {
    let (labels, sizes) = components_ref(mask);
    let w = mask.width();
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let l = labels[(y * w + x) as usize];
        l != 0 && sizes[l as usize] >= min_area
    })
}

// ---- metrics ----

fn ones(mask: &BinaryMask) -> Vec<(f64, f64)> {
    let mut v = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                v.push((x as f64, y as f64));
            }
        }
    }
    v
}

fn mean_min_distance(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
    from.iter()
        .map(|a| to.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// All-pairs symmetric average Hausdorff distance.
pub fn avg_hausdorff_ref(a: &BinaryMask, b: &BinaryMask) -> Option<f64> {
    let (pa, pb) = (ones(a), ones(b));
    if pa.is_empty() || pb.is_empty() {
        return None;
    }
    Some((mean_min_distance(&pa, &pb) + mean_min_distance(&pb, &pa)) / 2.0)
}

/// (tp, fp, fn, tn) by counting.
pub fn confusion_ref(pred: &BinaryMask, truth: &BinaryMask) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            match (pred.get(x, y), truth.get(x, y)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => c.3 += 1,
            }
        }
    }
    c
}

// ---- Wilcoxon by enumeration ----

/// Two-sided exact p by listing all `2^n` sign patterns of the mid-ranked
/// absolute differences: the share of patterns whose smaller rank sum is at
/// most the observed one.
pub fn wilcoxon_enumerated(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    // Mid-rank = 1 + #smaller + (#equal - 1)/2.
    let ranks: Vec<f64> = abs
        .iter()
        .map(|&v| {
            let smaller = abs.iter().filter(|&&u| u < v).count() as f64;
            let equal = abs.iter().filter(|&&u| u == v).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let observed = w_plus.min(total - w_plus);
    let mut extreme = 0u64;
    for pattern in 0u64..(1 << n) {
        let wp: f64 = (0..n).filter(|i| pattern >> i & 1 == 1).map(|i| ranks[i]).sum();
        if wp.min(total - wp) <= observed {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

// ---- filesystem ----

/// Every file under `root`, relative path and contents, sorted by path.
pub fn tree_snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.push((rel, std::fs::read(&path).expect("readable file")));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

// ---- fixtures ----

/// Standard normal draw (Box–Muller).
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Isotropic Gaussian blobs in `dim` dimensions, `per_blob` points each,
/// centres on a line `spacing` apart.
pub fn gaussian_blobs(seed: u64, blobs: usize, per_blob: usize, dim: usize, spacing: f64, sigma: f64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(blobs * per_blob);
    for b in 0..blobs {
        for _ in 0..per_blob {
            out.push(
                (0..dim)
                    .map(|d| if d == 0 { b as f64 * spacing } else { 0.0 } + sigma * normal(&mut r))
                    .collect(),
            );
        }
    }
    out
}

/// A phantom small enough for quick tests that still has room for whole
/// 224 px windows inside every blob.
pub fn small_phantom_spec(seed: u64) -> slideseg::phantom::PhantomSpec {
    slideseg::phantom::PhantomSpec {
        width: 2048,
        height: 2048,
        tile_size: 512,
        n_tumor_blobs: 2,
        blob_radius_range: (260.0, 340.0),
        ..slideseg::phantom::PhantomSpec::with_seed(seed)
    }
}

/// `count` windows of `side` pixels lying wholly inside tumor and `count`
/// lying wholly in tumor-free tissue, checked against the truth masks.
pub fn phantom_windows(
    ph: &slideseg::phantom::Phantom,
    count: usize,
    side: u32,
    seed: u64,
) -> (Vec<RgbBlock>, Vec<RgbBlock>) {
    use slideseg::slide::Region;
    let mut r = rng(seed);
    let half = f64::from(side) / 2.0;
    let reach = half * std::f64::consts::SQRT_2 + 2.0;
    let all_set = |m: &BinaryMask, x0: u32, y0: u32| (y0..y0 + side).all(|y| (x0..x0 + side).all(|x| m.get(x, y)));
    let none_set = |m: &BinaryMask, x0: u32, y0: u32| (y0..y0 + side).all(|y| (x0..x0 + side).all(|x| !m.get(x, y)));
    let read = |x0: u32, y0: u32| ph.slide.read_region(&Region::new(0, x0, y0, side, side)).expect("window in bounds");

    let mut tumor = Vec::with_capacity(count);
    while tumor.len() < count {
        let blob = &ph.tumor_shapes[r.gen_range(0..ph.tumor_shapes.len())];
        let room = blob.min_radius() - reach;
        assert!(room > 0.0, "blob too small for a {side} px window");
        let (rad, ang) = (room * r.gen::<f64>().sqrt(), std::f64::consts::TAU * r.gen::<f64>());
        let x0 = (blob.cx + rad * ang.cos() - half).round() as u32;
        let y0 = (blob.cy + rad * ang.sin() - half).round() as u32;
        if all_set(&ph.tumor_truth, x0, y0) {
            tumor.push(read(x0, y0));
        }
    }
    let tissue = &ph.tissue_shape;
    let mut stroma = Vec::with_capacity(count);
    while stroma.len() < count {
        let room = tissue.min_radius() - reach;
        let (rad, ang) = (room * r.gen::<f64>().sqrt(), std::f64::consts::TAU * r.gen::<f64>());
        let (cx, cy) = (tissue.cx + rad * ang.cos(), tissue.cy + rad * ang.sin());
        let clear = ph
            .tumor_shapes
            .iter()
            .all(|b| (cx - b.cx).hypot(cy - b.cy) > b.max_radius() + reach);
        if !clear {
            continue;
        }
        let (x0, y0) = ((cx - half).round() as u32, (cy - half).round() as u32);
        if all_set(&ph.tissue_truth, x0, y0) && none_set(&ph.tumor_truth, x0, y0) {
            stroma.push(read(x0, y0));
        }
    }
    (tumor, stroma)
}
