//! Synthetic slides with exactly known tissue and tumor masks.
//!
//! Glass is near-white with one-level noise. Tissue is a single deformed
//! disc filled with pink value-noise texture; tumors are non-overlapping
//! deformed discs inside it, purple-shifted, darker and speckled.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use image::Rgb;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RgbBlock};
use crate::rng::{mix, stream, Stream};
use crate::slide::TiledSlide;

pub const TISSUE_TRUTH_FILE: &str = "tissue_truth.png";
pub const TUMOR_TRUTH_FILE: &str = "tumor_truth.png";

const GLASS: [f64; 3] = [252.0, 252.0, 252.0];
const TISSUE: [f64; 3] = [225.0, 160.0, 190.0];
const TUMOR: [f64; 3] = [175.0, 110.0, 195.0];
const HARMONICS: usize = 3;
const MAX_HARMONIC_AMPLITUDE: f64 = 0.04;
const PLACEMENT_MARGIN: f64 = 32.0;
const PLACEMENT_RETRIES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub n_tumor_blobs: usize,
    /// Nominal blob radius range in level-0 pixels.
    pub blob_radius_range: (f64, f64),
    /// Tissue area as a fraction of the slide area.
    pub tissue_coverage: f64,
    pub texture_seed: u64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            width: 4096,
            height: 4096,
            tile_size: 512,
            n_tumor_blobs: 2,
            blob_radius_range: (350.0, 600.0),
            tissue_coverage: 0.55,
            texture_seed: 7,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Square slide of side `size`, blob radii scaled by the same factor so
    /// the proportions of this spec are kept.
    pub fn scaled_to(self, size: u32) -> Self {
        let k = f64::from(size) / f64::from(self.width);
        Self {
            width: size,
            height: size,
            blob_radius_range: (self.blob_radius_range.0 * k, self.blob_radius_range.1 * k),
            ..self
        }
    }

    pub fn slide_id(&self) -> String {
        format!("phantom-{}", self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::Config("phantom must be at least 64x64".into()));
        }
        if !(self.tissue_coverage > 0.0 && self.tissue_coverage <= 1.0) {
            return Err(Error::Config("tissue_coverage must lie in (0, 1]".into()));
        }
        let (lo, hi) = self.blob_radius_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("bad blob radius range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// A disc whose radius is modulated by low-order cosine harmonics:
/// `r(θ) = radius · (1 + Σ a_j cos((j+2)θ + φ_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformedDisc {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub harmonics: Vec<(f64, f64)>,
}

impl DeformedDisc {
    fn random_harmonics(rng: &mut Stream) -> Vec<(f64, f64)> {
        (0..HARMONICS)
            .map(|_| (rng.gen_range(0.0..MAX_HARMONIC_AMPLITUDE), rng.gen_range(0.0..TAU)))
            .collect()
    }

    fn amplitude_sum(&self) -> f64 {
        self.harmonics.iter().map(|h| h.0).sum()
    }

    pub fn min_radius(&self) -> f64 {
        self.radius * (1.0 - self.amplitude_sum())
    }

    pub fn max_radius(&self) -> f64 {
        self.radius * (1.0 + self.amplitude_sum())
    }

    pub fn radius_at(&self, theta: f64) -> f64 {
        let m: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(j, &(a, phi))| a * ((j as f64 + 2.0) * theta + phi).cos())
            .sum();
        self.radius * (1.0 + m)
    }

    /// Exact area of the continuous shape: `π R² (1 + Σ a_j² / 2)`.
    pub fn area(&self) -> f64 {
        let s: f64 = self.harmonics.iter().map(|h| h.0 * h.0).sum();
        PI * self.radius * self.radius * (1.0 + s / 2.0)
    }

    /// Whether the pixel centre `(x + 0.5, y + 0.5)` lies inside.
    pub fn contains(&self, x: u32, y: u32) -> bool {
        let dx = f64::from(x) + 0.5 - self.cx;
        let dy = f64::from(y) + 0.5 - self.cy;
        let r2 = dx * dx + dy * dy;
        let lo = self.min_radius();
        if r2 <= lo * lo {
            return true;
        }
        let hi = self.max_radius();
        if r2 > hi * hi {
            return false;
        }
        r2.sqrt() <= self.radius_at(dy.atan2(dx))
    }

    fn bbox(&self, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let r = self.max_radius() + 1.0;
        let clamp = |v: f64, hi: u32| v.max(0.0).min(f64::from(hi)) as u32;
        (
            clamp((self.cx - r).floor(), width),
            clamp((self.cy - r).floor(), height),
            clamp((self.cx + r).ceil(), width),
            clamp((self.cy + r).ceil(), height),
        )
    }
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
struct ValueNoise {
    cell: f64,
    cols: usize,
    values: Vec<f32>,
}

impl ValueNoise {
    fn new(width: u32, height: u32, cell: u32, rng: &mut Stream) -> Self {
        let cols = (width / cell + 2) as usize;
        let rows = (height / cell + 2) as usize;
        Self {
            cell: f64::from(cell),
            cols,
            values: (0..cols * rows).map(|_| rng.gen::<f32>()).collect(),
        }
    }

    fn sample(&self, x: u32, y: u32) -> f64 {
        let fx = f64::from(x) / self.cell;
        let fy = f64::from(y) / self.cell;
        let (ix, iy) = (fx as usize, fy as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - ix as f64), smooth(fy - iy as f64));
        let at = |cx: usize, cy: usize| f64::from(self.values[cy * self.cols + cx]);
        let top = at(ix, iy) + (at(ix + 1, iy) - at(ix, iy)) * tx;
        let bottom = at(ix, iy + 1) + (at(ix + 1, iy + 1) - at(ix, iy + 1)) * tx;
        top + (bottom - top) * ty
    }
}

struct Fbm {
    octaves: Vec<(ValueNoise, f64)>,
}

impl Fbm {
    fn new(width: u32, height: u32, cells: &[(u32, f64)], rng: &mut Stream) -> Self {
        Self {
            octaves: cells
                .iter()
                .map(|&(c, w)| (ValueNoise::new(width, height, c, rng), w))
                .collect(),
        }
    }

    fn sample(&self, x: u32, y: u32) -> f64 {
        self.octaves.iter().map(|(n, w)| w * n.sample(x, y)).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub slide: TiledSlide,
    pub tissue_truth: BinaryMask,
    pub tumor_truth: BinaryMask,
    pub tissue_shape: DeformedDisc,
    pub tumor_shapes: Vec<DeformedDisc>,
}

impl Phantom {
    /// Slide directory plus the two truth masks alongside it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.slide.save(dir)?;
        self.tissue_truth.save_png(&dir.join(TISSUE_TRUTH_FILE))?;
        self.tumor_truth.save_png(&dir.join(TUMOR_TRUTH_FILE))
    }

    /// Sum of the blobs' continuous areas.
    pub fn expected_tumor_area(&self) -> f64 {
        self.tumor_shapes.iter().map(DeformedDisc::area).sum()
    }
}

fn place_shapes(spec: &PhantomSpec, rng: &mut Stream) -> Result<(DeformedDisc, Vec<DeformedDisc>)> {
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let tissue_harm = DeformedDisc::random_harmonics(rng);
    let s: f64 = tissue_harm.iter().map(|h| h.0 * h.0).sum();
    let tissue_radius = (spec.tissue_coverage * w * h / (PI * (1.0 + s / 2.0))).sqrt();
    let tissue = DeformedDisc {
        cx: w / 2.0,
        cy: h / 2.0,
        radius: tissue_radius,
        harmonics: tissue_harm,
    };
    if tissue.max_radius() + 2.0 > w.min(h) / 2.0 {
        return Err(Error::Config(format!(
            "tissue coverage {} does not fit a {}x{} slide",
            spec.tissue_coverage, spec.width, spec.height
        )));
    }
    let inner = tissue.min_radius() - PLACEMENT_MARGIN;
    let (rlo, rhi) = spec.blob_radius_range;
    let mut blobs: Vec<DeformedDisc> = Vec::with_capacity(spec.n_tumor_blobs);
    for b in 0..spec.n_tumor_blobs {
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let radius = if rhi > rlo { rng.gen_range(rlo..=rhi) } else { rlo };
            let harmonics = DeformedDisc::random_harmonics(rng);
            let cand = DeformedDisc {
                cx: 0.0,
                cy: 0.0,
                radius,
                harmonics,
            };
            let reach = inner - cand.max_radius();
            if reach <= 0.0 {
                continue;
            }
            // Uniform over the admissible disc of centres.
            let rho = reach * rng.gen::<f64>().sqrt();
            let phi = rng.gen_range(0.0..TAU);
            let cand = DeformedDisc {
                cx: tissue.cx + rho * phi.cos(),
                cy: tissue.cy + rho * phi.sin(),
                ..cand
            };
            let clear = blobs.iter().all(|o| {
                let d = ((o.cx - cand.cx).powi(2) + (o.cy - cand.cy).powi(2)).sqrt();
                d >= o.max_radius() + cand.max_radius() + PLACEMENT_MARGIN
            });
            if clear {
                placed = Some(cand);
                break;
            }
        }
        blobs.push(placed.ok_or_else(|| {
            Error::Placement(format!(
                "tumor blob {b} could not be placed after {PLACEMENT_RETRIES} attempts"
            ))
        })?);
    }
    Ok((tissue, blobs))
}

fn paint(base: [f64; 3], factor: f64, jitter: f64) -> Rgb<u8> {
    Rgb(base.map(|c| (c * factor + jitter).round().clamp(0.0, 255.0) as u8))
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut shape_rng = stream(mix(&[spec.seed, 1]));
    let (tissue_shape, tumor_shapes) = place_shapes(spec, &mut shape_rng)?;

    let mut tex_rng = stream(mix(&[spec.texture_seed, spec.seed, 2]));
    let tissue_tex = Fbm::new(w, h, &[(96, 0.5), (24, 0.3), (6, 0.2)], &mut tex_rng);
    let tumor_tex = Fbm::new(w, h, &[(48, 0.6), (12, 0.4)], &mut tex_rng);
    let nuclei = ValueNoise::new(w, h, 5, &mut tex_rng);
    let mut jitter_rng = stream(mix(&[spec.texture_seed, spec.seed, 3]));

    let tissue_truth = {
        let mut m = BinaryMask::new(w, h);
        let (x0, y0, x1, y1) = tissue_shape.bbox(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                if tissue_shape.contains(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    };
    let mut tumor_truth = BinaryMask::new(w, h);
    for blob in &tumor_shapes {
        let (x0, y0, x1, y1) = blob.bbox(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                if blob.contains(x, y) {
                    tumor_truth.set(x, y, true);
                }
            }
        }
    }

    let mut img = RgbBlock::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = if tumor_truth.get(x, y) {
                let mut f = 0.80 + 0.40 * tumor_tex.sample(x, y);
                if nuclei.sample(x, y) > 0.62 {
                    f *= 0.65;
                }
                paint(TUMOR, f, f64::from(jitter_rng.gen_range(-6i8..=6)))
            } else if tissue_truth.get(x, y) {
                let f = 0.90 + 0.16 * tissue_tex.sample(x, y);
                paint(TISSUE, f, f64::from(jitter_rng.gen_range(-4i8..=4)))
            } else {
                paint(GLASS, 1.0, f64::from(jitter_rng.gen_range(-1i8..=1)))
            };
            img.put_pixel(x, y, px);
        }
    }
    let slide = TiledSlide::from_image(spec.slide_id(), &img, spec.tile_size)?;
    Ok(Phantom {
        spec: spec.clone(),
        slide,
        tissue_truth,
        tumor_truth,
        tissue_shape,
        tumor_shapes,
    })
}
