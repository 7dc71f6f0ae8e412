//! Heatmap stitching, resizing and fusion with the down-sampled slide.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::bridge::PatchProbability;
use crate::error::{Error, Result};
use crate::raster::{quantize_u16, RgbBlock, ScalarRaster};
use crate::tissue::{GridHeader, PatchGrid, PatchLabel};

pub const DEFAULT_REFINEMENT_SIZE: u32 = 1120;

/// Patch probabilities laid out on the lattice, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub slide_id: String,
    pub cols: u32,
    pub rows: u32,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, col: u32, row: u32) -> f64 {
        self.values[(row * self.cols + col) as usize]
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Writes `heatmap.png` (16-bit, `round(p * 65535)`) and `heatmap.json`.
    pub fn save(&self, dir: &Path, grid: &PatchGrid) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
            self.cols,
            self.rows,
            self.values.iter().map(|&v| quantize_u16(v)).collect(),
        )
        .expect("buffer length matches lattice");
        img.save(dir.join("heatmap.png"))?;
        let sidecar = HeatmapSidecar {
            grid: grid.header(),
            values: self.values.clone(),
        };
        let path = dir.join("heatmap.json");
        fs::write(&path, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&path, e))
    }

    /// Loads the exact values from the JSON sidecar.
    pub fn load(dir: &Path) -> Result<Self> {
        Self::load_with_grid(dir).map(|(hm, _)| hm)
    }

    /// Also returns the lattice header stored beside the values.
    pub fn load_with_grid(dir: &Path) -> Result<(Self, GridHeader)> {
        let path = dir.join("heatmap.json");
        let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let s: HeatmapSidecar = serde_json::from_slice(&raw)?;
        if s.values.len() != (s.grid.cols * s.grid.rows) as usize {
            return Err(Error::Consistency("heatmap sidecar length mismatch".into()));
        }
        let hm = Heatmap {
            slide_id: s.grid.slide_id.clone(),
            cols: s.grid.cols,
            rows: s.grid.rows,
            values: s.values,
        };
        Ok((hm, s.grid))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeatmapSidecar {
    grid: GridHeader,
    values: Vec<f64>,
}

/// Places each probability at its lattice cell. Glass-excluded and
/// unclassified cells hold 0.
pub fn stitch_heatmap(grid: &PatchGrid, probs: &[PatchProbability]) -> Result<Heatmap> {
    let mut values = vec![0.0; (grid.cols * grid.rows) as usize];
    let mut seen = HashSet::with_capacity(probs.len());
    for p in probs {
        let rec = grid.record(p.grid_x, p.grid_y).ok_or_else(|| {
            Error::Consistency(format!("probability for ({},{}) outside the lattice", p.grid_x, p.grid_y))
        })?;
        if !seen.insert((p.grid_x, p.grid_y)) {
            return Err(Error::Consistency(format!(
                "duplicate probability for ({},{})",
                p.grid_x, p.grid_y
            )));
        }
        if !(0.0..=1.0).contains(&p.p_tumor) {
            return Err(Error::Consistency(format!(
                "probability {} for ({},{}) outside [0,1]",
                p.p_tumor, p.grid_x, p.grid_y
            )));
        }
        if rec.label != PatchLabel::GlassExcluded {
            values[(p.grid_y * grid.cols + p.grid_x) as usize] = p.p_tumor;
        }
    }
    Ok(Heatmap {
        slide_id: grid.slide_id.clone(),
        cols: grid.cols,
        rows: grid.rows,
        values,
    })
}

/// Align-corners source coordinate: output `i` of `dst` maps to
/// `i * (src - 1) / (dst - 1)`, or 0 when `dst == 1`.
#[inline]
pub fn align_corners_coord(i: u32, dst: u32, src: u32) -> f64 {
    if dst <= 1 || src <= 1 {
        0.0
    } else {
        f64::from(i) * f64::from(src - 1) / f64::from(dst - 1)
    }
}

type Taps = Vec<(usize, usize, f64)>;

fn taps_from(dst: u32, src: u32, coord: impl Fn(u32) -> f64) -> Taps {
    let last = src as usize - 1;
    (0..dst)
        .map(|i| {
            let s = coord(i).clamp(0.0, last as f64);
            let i0 = (s.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn sample_bilinear(hm: &Heatmap, xt: &Taps, yt: &Taps) -> Result<ScalarRaster> {
    let cols = hm.cols as usize;
    let mut data = Vec::with_capacity(xt.len() * yt.len());
    for &(y0, y1, fy) in yt {
        for &(x0, x1, fx) in xt {
            let v00 = hm.values[y0 * cols + x0];
            let v01 = hm.values[y0 * cols + x1];
            let v10 = hm.values[y1 * cols + x0];
            let v11 = hm.values[y1 * cols + x1];
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            data.push((top + (bot - top) * fy).clamp(0.0, 1.0) as f32);
        }
    }
    ScalarRaster::from_vec(xt.len() as u32, yt.len() as u32, data)
}

/// Bilinear resize of the lattice to `target x target` with align-corners
/// mapping. Interpolation uses `a + (b - a) * t`, so constants stay exact.
pub fn resize_heatmap(hm: &Heatmap, target: u32) -> Result<ScalarRaster> {
    if target == 0 {
        return Err(Error::Input("resize target must be at least 1".into()));
    }
    let xt = taps_from(target, hm.cols, |i| align_corners_coord(i, target, hm.cols));
    let yt = taps_from(target, hm.rows, |i| align_corners_coord(i, target, hm.rows));
    sample_bilinear(hm, &xt, &yt)
}

/// Bilinear resize that keeps the heatmap registered to the slide.
///
/// Output pixel `u` of `width` covers level coordinate
/// `x = (u + 0.5) * level_width / width`; the lattice value there is
/// interpolated between patch centres at `g = x / patch_size - 0.5`,
/// clamped to the outermost centres.
pub fn resize_heatmap_registered(hm: &Heatmap, grid: &GridHeader, width: u32, height: u32) -> Result<ScalarRaster> {
    if width == 0 || height == 0 {
        return Err(Error::Input("resize target must be at least 1".into()));
    }
    if (hm.cols, hm.rows) != (grid.cols, grid.rows) {
        return Err(Error::Consistency(format!(
            "heatmap {}x{} does not match grid {}x{}",
            hm.cols, hm.rows, grid.cols, grid.rows
        )));
    }
    let patch = f64::from(grid.patch_size);
    let coord = |u: u32, dst: u32, extent: u32| {
        (f64::from(u) + 0.5) * f64::from(extent) / f64::from(dst) / patch - 0.5
    };
    let xt = taps_from(width, hm.cols, |u| coord(u, width, grid.level_width));
    let yt = taps_from(height, hm.rows, |u| coord(u, height, grid.level_height));
    sample_bilinear(hm, &xt, &yt)
}

/// Four-channel planar tensor `[R, G, B, heatmap]`, each in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementInput {
    pub width: u32,
    pub height: u32,
    /// Planar: channel-major, then row-major.
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub dtype: String,
    pub layout: String,
}

impl RefinementInput {
    pub const CHANNELS: u32 = 4;

    pub fn plane_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn heatmap_channel(&self) -> ScalarRaster {
        ScalarRaster::from_vec(self.width, self.height, self.channel(3).to_vec())
            .expect("plane matches dims")
    }

    pub fn header(&self) -> TensorHeader {
        TensorHeader {
            width: self.width,
            height: self.height,
            channels: Self::CHANNELS,
            dtype: "f32le".into(),
            layout: "planar".into(),
        }
    }

    /// Writes `<stem>.f32` (raw little-endian planar floats) and `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let raw_path = dir.join(format!("{stem}.f32"));
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))?;
        let header_path = dir.join(format!("{stem}.json"));
        fs::write(&header_path, serde_json::to_vec_pretty(&self.header())?)
            .map_err(|e| Error::io(&header_path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let header_path = dir.join(format!("{stem}.json"));
        let raw = fs::read(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let h: TensorHeader = serde_json::from_slice(&raw)?;
        if h.channels != Self::CHANNELS || h.dtype != "f32le" || h.layout != "planar" {
            return Err(Error::UnsupportedFormat(format!("tensor header {h:?}")));
        }
        let raw_path = dir.join(format!("{stem}.f32"));
        let data = read_f32_le(&raw_path)?;
        if data.len() != h.width as usize * h.height as usize * 4 {
            return Err(Error::Consistency(format!(
                "{} holds {} floats, header says {}x{}x4",
                raw_path.display(),
                data.len(),
                h.width,
                h.height
            )));
        }
        Ok(Self {
            width: h.width,
            height: h.height,
            data,
        })
    }
}

pub(crate) fn read_f32_le(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Consistency(format!("{} is not a whole number of f32", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Concatenates `[R/255, G/255, B/255, heatmap]`.
pub fn fuse_inputs(rgb: &RgbBlock, hm: &ScalarRaster) -> Result<RefinementInput> {
    if rgb.dimensions() != hm.dims() {
        return Err(Error::Consistency(format!(
            "rgb {:?} and heatmap {:?} differ in size",
            rgb.dimensions(),
            hm.dims()
        )));
    }
    let (w, h) = hm.dims();
    let n = w as usize * h as usize;
    let mut data = vec![0f32; n * 4];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = f32::from(px.0[c]) / 255.0;
        }
    }
    data[3 * n..].copy_from_slice(hm.data());
    Ok(RefinementInput {
        width: w,
        height: h,
        data,
    })
}
