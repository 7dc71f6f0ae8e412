//! Refinement and binary post-processing.
//!
//! The chain is threshold → fragment removal → opening → median, applied at
//! refinement scale.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::bridge::BackendDescriptor;
use crate::error::{Error, Result};
use crate::heatmap::RefinementInput;
use crate::raster::{BinaryMask, ScalarRaster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    pub threshold: f64,
    pub min_fragment_area: u64,
    pub opening_kernel: u32,
    pub median_kernel: u32,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_fragment_area: 100,
            opening_kernel: 7,
            median_kernel: 11,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0,1)", self.threshold)));
        }
        check_kernel(self.opening_kernel)?;
        check_kernel(self.median_kernel)
    }
}

fn check_kernel(k: u32) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::Config(format!("kernel size {k} must be odd and positive")));
    }
    Ok(())
}

/// Refinement stage: either pass the heatmap channel through, or hand the
/// fused tensor to an external backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Refiner {
    Identity,
    External { backend: BackendDescriptor },
}

impl Refiner {
    /// Parses `identity` or `exec:<cmd>`.
    pub fn parse(selector: &str) -> Result<Self> {
        if selector == "identity" {
            Ok(Refiner::Identity)
        } else {
            Ok(Refiner::External {
                backend: BackendDescriptor::parse(selector)?,
            })
        }
    }
}

static SCRATCH_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn refine(input: &RefinementInput, refiner: &Refiner) -> Result<ScalarRaster> {
    match refiner {
        Refiner::Identity => Ok(input.heatmap_channel()),
        Refiner::External { backend } => {
            let stem = format!(
                "slideseg-refine-{}-{}",
                std::process::id(),
                SCRATCH_COUNTER.fetch_add(1, Ordering::Relaxed)
            );
            let dir = std::env::temp_dir();
            input.save(&dir, &stem)?;
            let raw = dir.join(format!("{stem}.f32"));
            let result = backend
                .spawn()
                .and_then(|mut s| s.refine(&raw, input.width, input.height));
            let _ = std::fs::remove_file(&raw);
            let _ = std::fs::remove_file(dir.join(format!("{stem}.json")));
            result
        }
    }
}

/// `1` where the value is at least `t`.
pub fn threshold_mask(raster: &ScalarRaster, t: f64) -> BinaryMask {
    let bits = raster.data().iter().map(|&v| u8::from(f64::from(v) >= t)).collect();
    BinaryMask::from_bits(raster.width(), raster.height(), bits).expect("dims match")
}

/// 8-connected component labels (0 = background, components numbered from 1
/// in raster order) and the pixel count of each component.
pub fn connected_components(mask: &BinaryMask) -> (Vec<u32>, Vec<u64>) {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0u64];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if bits[j] != 0 && labels[j] == 0 {
                        labels[j] = label;
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Clears 8-connected components with fewer than `min_area` pixels.
pub fn remove_small_fragments(mask: &BinaryMask, min_area: u64) -> BinaryMask {
    let (labels, sizes) = connected_components(mask);
    let bits = labels
        .iter()
        .map(|&l| u8::from(l != 0 && sizes[l as usize] >= min_area))
        .collect();
    BinaryMask::from_bits(mask.width(), mask.height(), bits).expect("dims match")
}

/// Sliding-window test along one axis: `want_all` → every sample in the
/// window is set (window must fit inside the line); otherwise → any sample
/// in the clipped window is set.
fn line_pass(line: &[u8], r: usize, want_all: bool, out: &mut [u8]) {
    let n = line.len();
    let mut prefix = vec![0u32; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + u32::from(line[i]);
    }
    for i in 0..n {
        out[i] = if want_all {
            u8::from(i >= r && i + r < n && prefix[i + r + 1] - prefix[i - r] == (2 * r + 1) as u32)
        } else {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(n);
            u8::from(prefix[hi] - prefix[lo] > 0)
        };
    }
}

fn separable(mask: &BinaryMask, kernel: u32, want_all: bool) -> BinaryMask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let r = (kernel / 2) as usize;
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        line_pass(&mask.bits()[y * w..(y + 1) * w], r, want_all, &mut rows[y * w..(y + 1) * w]);
    }
    let mut out = vec![0u8; w * h];
    let mut col = vec![0u8; h];
    let mut col_out = vec![0u8; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        line_pass(&col, r, want_all, &mut col_out);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    BinaryMask::from_bits(mask.width(), mask.height(), out).expect("dims match")
}

/// Erosion by a `kernel x kernel` square; pixels outside the image count as 0.
pub fn erode(mask: &BinaryMask, kernel: u32) -> Result<BinaryMask> {
    check_kernel(kernel)?;
    Ok(separable(mask, kernel, true))
}

/// Dilation by a `kernel x kernel` square.
pub fn dilate(mask: &BinaryMask, kernel: u32) -> Result<BinaryMask> {
    check_kernel(kernel)?;
    Ok(separable(mask, kernel, false))
}

pub fn morphological_open(mask: &BinaryMask, kernel: u32) -> Result<BinaryMask> {
    dilate(&erode(mask, kernel)?, kernel)
}

/// Majority vote over a `kernel x kernel` window with edge-replicated
/// borders; on a binary image this is the median.
pub fn median_blur(mask: &BinaryMask, kernel: u32) -> Result<BinaryMask> {
    check_kernel(kernel)?;
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let r = (kernel / 2) as isize;
    let (pw, ph) = (w + 2 * r as usize, h + 2 * r as usize);
    // Summed-area table over the replicated padding, (pw+1) x (ph+1).
    let mut sat = vec![0u32; (pw + 1) * (ph + 1)];
    for py in 0..ph {
        let sy = (py as isize - r).clamp(0, h as isize - 1) as usize;
        let mut run = 0u32;
        for px in 0..pw {
            let sx = (px as isize - r).clamp(0, w as isize - 1) as usize;
            run += u32::from(mask.bits()[sy * w + sx]);
            sat[(py + 1) * (pw + 1) + px + 1] = sat[py * (pw + 1) + px + 1] + run;
        }
    }
    let k = kernel as usize;
    let half = (k * k / 2) as u32;
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x0, y0, x1, y1) = (x, y, x + k, y + k);
            let s = sat[y1 * (pw + 1) + x1] + sat[y0 * (pw + 1) + x0]
                - sat[y0 * (pw + 1) + x1]
                - sat[y1 * (pw + 1) + x0];
            out[y * w + x] = u8::from(s > half);
        }
    }
    BinaryMask::from_bits(mask.width(), mask.height(), out)
}

/// threshold → remove_small_fragments → morphological_open → median_blur.
pub fn postprocess(raster: &ScalarRaster, cfg: &PostprocessConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    let mask = threshold_mask(raster, cfg.threshold);
    let mask = remove_small_fragments(&mask, cfg.min_fragment_area);
    let mask = morphological_open(&mask, cfg.opening_kernel)?;
    median_blur(&mask, cfg.median_kernel)
}
