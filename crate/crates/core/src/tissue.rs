//! Tissue/glass separation and the patch lattice.
//!
//! Tissue is detected from luminance gradients and darkness at a coarse
//! pyramid level. The lattice is non-overlapping with stride equal to the
//! patch size; each record carries its tissue and tumor area fractions and a
//! label derived from them:
//!
//! * tissue fraction `<= 0.25` → [`PatchLabel::GlassExcluded`]
//! * otherwise, with ground truth: tumor fraction `>= 0.05` → `Tumor`,
//!   `== 0` → `NonTumor`, anything in between → `AmbiguousExcluded`
//! * otherwise, without ground truth → `Eligible`

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{luminance, BinaryMask, RgbBlock};
use crate::slide::{Region, TiledSlide};

/// Patches must hold strictly more than this fraction of tissue.
pub const MIN_TISSUE_FRACTION: f64 = 0.25;
/// Smallest tumor fraction that labels a patch as tumor.
pub const MIN_TUMOR_FRACTION: f64 = 0.05;

pub const DEFAULT_GRADIENT_THRESHOLD: f64 = 0.02;
pub const DEFAULT_BRIGHTNESS_CEILING: f64 = 0.95;
pub const DEFAULT_PATCH_SIZE: u32 = 224;

// Largest Sobel magnitude attainable on an 8-bit luminance image.
const SOBEL_MAX: f64 = 4.0 * 255.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub level: u32,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PatchLabel {
    GlassExcluded,
    NonTumor,
    Tumor,
    AmbiguousExcluded,
    /// Enough tissue, but no ground truth was supplied.
    Eligible,
}

impl PatchLabel {
    /// Patches the classifier should see.
    pub fn is_tissue(self) -> bool {
        !matches!(self, PatchLabel::GlassExcluded)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub grid_x: u32,
    pub grid_y: u32,
    pub level: u32,
    pub origin_x: u32,
    pub origin_y: u32,
    pub patch_size: u32,
    pub tissue_fraction: f64,
    pub tumor_fraction: Option<f64>,
    pub label: PatchLabel,
}

/// Applies the eligibility and labeling rules to a pair of fractions.
pub fn label_for(tissue_fraction: f64, tumor_fraction: Option<f64>) -> PatchLabel {
    if tissue_fraction <= MIN_TISSUE_FRACTION {
        return PatchLabel::GlassExcluded;
    }
    match tumor_fraction {
        None => PatchLabel::Eligible,
        Some(t) if t >= MIN_TUMOR_FRACTION => PatchLabel::Tumor,
        Some(t) if t == 0.0 => PatchLabel::NonTumor,
        Some(_) => PatchLabel::AmbiguousExcluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub slide_id: String,
    pub level: u32,
    pub patch_size: u32,
    pub cols: u32,
    pub rows: u32,
    pub level_width: u32,
    pub level_height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub slide_id: String,
    pub level: u32,
    pub patch_size: u32,
    pub cols: u32,
    pub rows: u32,
    pub level_width: u32,
    pub level_height: u32,
    /// Row-major, `cols * rows` entries.
    pub records: Vec<PatchRecord>,
}

impl PatchGrid {
    pub fn record(&self, grid_x: u32, grid_y: u32) -> Option<&PatchRecord> {
        if grid_x >= self.cols || grid_y >= self.rows {
            return None;
        }
        self.records.get((grid_y * self.cols + grid_x) as usize)
    }

    pub fn tissue_records(&self) -> impl Iterator<Item = &PatchRecord> {
        self.records.iter().filter(|r| r.label.is_tissue())
    }

    pub fn count(&self, label: PatchLabel) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn header(&self) -> GridHeader {
        GridHeader {
            slide_id: self.slide_id.clone(),
            level: self.level,
            patch_size: self.patch_size,
            cols: self.cols,
            rows: self.rows,
            level_width: self.level_width,
            level_height: self.level_height,
        }
    }

    /// Writes `grid.json` (header) and `grid.csv` (one row per record) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header_path = dir.join("grid.json");
        fs::write(&header_path, serde_json::to_vec_pretty(&self.header())?)
            .map_err(|e| Error::io(&header_path, e))?;
        let csv_path = dir.join("grid.csv");
        let mut w = csv::Writer::from_path(&csv_path)
            .map_err(|e| Error::Input(format!("{}: {e}", csv_path.display())))?;
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| Error::Input(format!("{}: {e}", csv_path.display())))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join("grid.json");
        let raw = fs::read(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let h: GridHeader = serde_json::from_slice(&raw)?;
        let csv_path = dir.join("grid.csv");
        let mut rd = csv::Reader::from_path(&csv_path)
            .map_err(|e| Error::Input(format!("{}: {e}", csv_path.display())))?;
        let records = rd
            .deserialize()
            .collect::<std::result::Result<Vec<PatchRecord>, _>>()
            .map_err(|e| Error::Input(format!("{}: {e}", csv_path.display())))?;
        if records.len() != (h.cols * h.rows) as usize {
            return Err(Error::Consistency(format!(
                "grid.csv has {} records for a {}x{} lattice",
                records.len(),
                h.cols,
                h.rows
            )));
        }
        Ok(Self {
            slide_id: h.slide_id,
            level: h.level,
            patch_size: h.patch_size,
            cols: h.cols,
            rows: h.rows,
            level_width: h.level_width,
            level_height: h.level_height,
            records,
        })
    }
}

/// Luminance of every pixel of `img`, row-major.
pub(crate) fn luminance_plane(img: &RgbBlock) -> Vec<f64> {
    img.pixels().map(|p| luminance(p.0)).collect()
}

/// Tissue iff the 3x3-smoothed, normalised Sobel magnitude of luminance
/// exceeds `gradient_threshold`, or luminance is below
/// `brightness_ceiling * 255`. Borders replicate edge pixels.
pub fn compute_tissue_mask(
    slide: &TiledSlide,
    mask_level: u32,
    gradient_threshold: f64,
    brightness_ceiling: f64,
) -> Result<TissueMask> {
    slide.level(mask_level)?;
    for (name, v) in [
        ("gradient_threshold", gradient_threshold),
        ("brightness_ceiling", brightness_ceiling),
    ] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Config(format!("{name} = {v} is outside (0,1)")));
        }
    }
    let img = slide.level_image(mask_level)?;
    let mask = tissue_mask_from_image(&img, gradient_threshold, brightness_ceiling);
    Ok(TissueMask {
        level: mask_level,
        mask,
    })
}

pub(crate) fn tissue_mask_from_image(img: &RgbBlock, gradient_threshold: f64, brightness_ceiling: f64) -> BinaryMask {
    let (w, h) = img.dimensions();
    let lum = luminance_plane(img);
    let grad = sobel_magnitude(&lum, w as usize, h as usize);
    let smooth = box3(&grad, w as usize, h as usize);
    let dark = brightness_ceiling * 255.0;
    let bits = lum
        .iter()
        .zip(&smooth)
        .map(|(&l, &g)| u8::from(g > gradient_threshold || l < dark))
        .collect();
    BinaryMask::from_bits(w, h, bits).expect("dims match")
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Sobel magnitude normalised to [0,1].
fn sobel_magnitude(lum: &[f64], w: usize, h: usize) -> Vec<f64> {
    let at = |x: isize, y: isize| lum[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            out[y as usize * w + x as usize] = gx.hypot(gy) / SOBEL_MAX;
        }
    }
    out
}

fn box3(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    s += src[clamp_idx(y + dy, h) * w + clamp_idx(x + dx, w)];
                }
            }
            out[y as usize * w + x as usize] = s / 9.0;
        }
    }
    out
}

/// Fraction of the rectangle `[x0,x1) x [y0,y1)` (in `frame` coordinates)
/// covered by set bits of `mask`, where the mask spans the same physical
/// extent as a `frame_w x frame_h` raster. Mask pixels are unit squares and
/// partially covered pixels contribute by overlap area.
pub(crate) fn covered_fraction(
    mask: &BinaryMask,
    frame_w: u32,
    frame_h: u32,
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
) -> f64 {
    let sx = f64::from(mask.width()) / f64::from(frame_w);
    let sy = f64::from(mask.height()) / f64::from(frame_h);
    let (a, b) = (f64::from(x0) * sx, f64::from(x1) * sx);
    let (c, d) = (f64::from(y0) * sy, f64::from(y1) * sy);
    let col_lo = a.floor() as u32;
    let col_hi = (b.ceil() as u32).min(mask.width());
    let row_lo = c.floor() as u32;
    let row_hi = (d.ceil() as u32).min(mask.height());
    let overlap = |i: u32, lo: f64, hi: f64| (f64::from(i + 1).min(hi) - f64::from(i).max(lo)).max(0.0);
    let wx: Vec<f64> = (col_lo..col_hi).map(|i| overlap(i, a, b)).collect();
    let mut covered = 0.0;
    for row in row_lo..row_hi {
        let wy = overlap(row, c, d);
        if wy == 0.0 {
            continue;
        }
        let mut row_sum = 0.0;
        for (k, col) in (col_lo..col_hi).enumerate() {
            if mask.get(col, row) {
                row_sum += wx[k];
            }
        }
        covered += row_sum * wy;
    }
    covered / ((b - a) * (d - c))
}

/// Lays the non-overlapping lattice over `level` and labels every patch.
///
/// The tissue mask and the optional truth mask may sit at any pyramid level
/// of `slide`; their dims must match that level exactly.
pub fn build_patch_grid(
    slide: &TiledSlide,
    level: u32,
    patch_size: u32,
    tissue: &TissueMask,
    truth: Option<&BinaryMask>,
) -> Result<PatchGrid> {
    let desc = *slide.level(level)?;
    if patch_size < 8 {
        return Err(Error::Config(format!("patch size {patch_size} is below 8")));
    }
    let tissue_desc = slide.level(tissue.level)?;
    if tissue.mask.dims() != (tissue_desc.width, tissue_desc.height) {
        return Err(Error::Consistency(format!(
            "tissue mask is {:?} but level {} is {}x{}",
            tissue.mask.dims(),
            tissue.level,
            tissue_desc.width,
            tissue_desc.height
        )));
    }
    if let Some(t) = truth {
        if !slide.levels().iter().any(|d| (d.width, d.height) == t.dims()) {
            return Err(Error::Consistency(format!(
                "truth mask dims {:?} match no pyramid level",
                t.dims()
            )));
        }
    }

    let cols = desc.width.div_ceil(patch_size);
    let rows = desc.height.div_ceil(patch_size);
    let records = (0..cols * rows)
        .into_par_iter()
        .map(|i| {
            let (gx, gy) = (i % cols, i / cols);
            let (ox, oy) = (gx * patch_size, gy * patch_size);
            let x1 = (ox + patch_size).min(desc.width);
            let y1 = (oy + patch_size).min(desc.height);
            let tissue_fraction =
                covered_fraction(&tissue.mask, desc.width, desc.height, ox, oy, x1, y1);
            let tumor_fraction =
                truth.map(|t| covered_fraction(t, desc.width, desc.height, ox, oy, x1, y1));
            PatchRecord {
                grid_x: gx,
                grid_y: gy,
                level,
                origin_x: ox,
                origin_y: oy,
                patch_size,
                tissue_fraction,
                tumor_fraction,
                label: label_for(tissue_fraction, tumor_fraction),
            }
        })
        .collect();

    Ok(PatchGrid {
        slide_id: slide.slide_id().to_string(),
        level,
        patch_size,
        cols,
        rows,
        level_width: desc.width,
        level_height: desc.height,
        records,
    })
}

/// Reads a record's footprint into an `out_size x out_size` block. Edge
/// footprints are zero-padded on the right and bottom; footprints larger than
/// `out_size` keep their top-left corner.
pub fn extract_patch(
    slide: &TiledSlide,
    grid: &PatchGrid,
    record: &PatchRecord,
    out_size: u32,
) -> Result<RgbBlock> {
    if grid.slide_id != slide.slide_id() {
        return Err(Error::Consistency(format!(
            "grid belongs to slide {} not {}",
            grid.slide_id,
            slide.slide_id()
        )));
    }
    let desc = slide.level(record.level)?;
    let stale = record.level != grid.level
        || record.patch_size != grid.patch_size
        || grid.record(record.grid_x, record.grid_y) != Some(record)
        || (desc.width, desc.height) != (grid.level_width, grid.level_height)
        || record.origin_x >= desc.width
        || record.origin_y >= desc.height;
    if stale {
        return Err(Error::Consistency(format!(
            "record ({},{}) does not belong to this slide/grid",
            record.grid_x, record.grid_y
        )));
    }
    if out_size == 0 {
        return Err(Error::Size("patch output size must be positive".into()));
    }
    let w = record.patch_size.min(desc.width - record.origin_x).min(out_size);
    let h = record.patch_size.min(desc.height - record.origin_y).min(out_size);
    let content = slide.read_region(&Region::new(record.level, record.origin_x, record.origin_y, w, h))?;
    if (w, h) == (out_size, out_size) {
        return Ok(content);
    }
    let mut out = RgbBlock::new(out_size, out_size);
    image::imageops::replace(&mut out, &content, 0, 0);
    Ok(out)
}
