//! Patch augmentation: multi-lens distortion plus the flip / rot90 /
//! contrast / hue / brightness / crop set.
//!
//! A lens warps the disc of `radius` around `(cx, cy)`. For a pixel at
//! distance `r` the scaling factor is `max(1 - r / radius, 0)` and the pixel
//! is fetched (backward warp, nearest neighbour, round-half-up) from
//!
//! ```text
//! src = (p - c) * (1 - strength * scaling) + c      per axis, clipped to the image
//! ```
//!
//! Positive strength magnifies the centre (barrel), negative strength
//! shrinks it (pincushion). Lenses compose in list order, each reading the
//! image left by its predecessors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{round_u8, RgbBlock};
use crate::rng::Stream;

pub const DEFAULT_CROP: u32 = 224;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensSpec {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub strength: f64,
}

/// Radius sampling interval, either absolute or relative to `min(H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusRange {
    Pixels(f64, f64),
    Relative(f64, f64),
}

impl RadiusRange {
    pub fn resolve(self, height: u32, width: u32) -> (f64, f64) {
        match self {
            RadiusRange::Pixels(lo, hi) => (lo, hi),
            RadiusRange::Relative(lo, hi) => {
                let m = f64::from(height.min(width));
                (lo * m, hi * m)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub num_lenses: u32,
    pub radius_range: RadiusRange,
    /// Range of `|strength|`; the sign is drawn separately.
    pub strength_range: (f64, f64),
    pub flip: bool,
    pub rot90: bool,
    pub contrast: bool,
    pub hue: bool,
    pub brightness: bool,
    pub lens: bool,
    pub crop: bool,
    pub contrast_range: (f64, f64),
    pub hue_range_deg: (f64, f64),
    pub brightness_range: (f64, f64),
    /// Probability of each coin flip.
    pub apply_probability: f64,
    pub crop_size: u32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            num_lenses: 4,
            radius_range: RadiusRange::Relative(0.1, 0.3),
            strength_range: (0.2, 0.4),
            flip: true,
            rot90: true,
            contrast: true,
            hue: true,
            brightness: true,
            lens: true,
            crop: true,
            contrast_range: (0.8, 1.2),
            hue_range_deg: (-10.0, 10.0),
            brightness_range: (-20.0, 20.0),
            apply_probability: 0.5,
            crop_size: DEFAULT_CROP,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Config with every transform off except the final crop.
    pub fn crop_only() -> Self {
        Self {
            flip: false,
            rot90: false,
            contrast: false,
            hue: false,
            brightness: false,
            lens: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f64, f64)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} ({lo}, {hi}) is not well ordered")))
            }
        };
        ordered("strength_range", self.strength_range)?;
        ordered("contrast_range", self.contrast_range)?;
        ordered("hue_range_deg", self.hue_range_deg)?;
        ordered("brightness_range", self.brightness_range)?;
        let (slo, shi) = self.strength_range;
        if slo < 0.0 || shi >= 1.0 {
            return Err(Error::Config(format!(
                "strength magnitudes ({slo}, {shi}) must lie in [0, 1)"
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_probability) {
            return Err(Error::Config("apply_probability outside [0,1]".into()));
        }
        if self.crop && self.crop_size == 0 {
            return Err(Error::Config("crop_size must be positive".into()));
        }
        Ok(())
    }
}

#[inline]
fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Draws `num_lenses` lenses for an `height x width` image. Per lens the
/// draws are: radius, strength magnitude, strength sign, `cx`, `cy`. Centres
/// are integers in `[0, dim - radius]`.
pub fn sample_lenses(config: &AugmentConfig, dims: (u32, u32), rng: &mut Stream) -> Result<Vec<LensSpec>> {
    let (height, width) = dims;
    if height == 0 || width == 0 {
        return Err(Error::Input("image dims must be positive".into()));
    }
    config.validate()?;
    let (rlo, rhi) = config.radius_range.resolve(height, width);
    if !(rlo > 0.0 && rlo <= rhi) {
        return Err(Error::Config(format!("radius range ({rlo}, {rhi}) invalid")));
    }
    if rhi > f64::from(height.min(width)) {
        return Err(Error::Config(format!(
            "max radius {rhi} exceeds image dims {height}x{width}"
        )));
    }
    let (slo, shi) = config.strength_range;
    let mut lenses = Vec::with_capacity(config.num_lenses as usize);
    for _ in 0..config.num_lenses {
        let radius = uniform(rng, rlo, rhi);
        let magnitude = uniform(rng, slo, shi);
        let strength = if rng.gen_bool(0.5) { magnitude } else { -magnitude };
        let cx = rng.gen_range(0..=(f64::from(width) - radius).floor() as u32);
        let cy = rng.gen_range(0..=(f64::from(height) - radius).floor() as u32);
        lenses.push(LensSpec {
            cx: f64::from(cx),
            cy: f64::from(cy),
            radius,
            strength,
        });
    }
    Ok(lenses)
}

/// Source pixel `(x, y)` that `lens` assigns to output pixel `(x, y)` of a
/// `width x height` image.
#[inline]
pub fn lens_source(lens: &LensSpec, x: u32, y: u32, width: u32, height: u32) -> (u32, u32) {
    let (px, py) = (f64::from(x), f64::from(y));
    // Integer offsets make the sum exact, so `sqrt` is correctly rounded.
    let (dx, dy) = (px - lens.cx, py - lens.cy);
    let r = (dx * dx + dy * dy).sqrt();
    let scaling = (1.0 - r / lens.radius).max(0.0);
    let factor = 1.0 - lens.strength * scaling;
    let sx = (dx * factor + lens.cx).clamp(0.0, f64::from(width - 1));
    let sy = (dy * factor + lens.cy).clamp(0.0, f64::from(height - 1));
    ((sx + 0.5).floor() as u32, (sy + 0.5).floor() as u32)
}

pub fn apply_multi_lens_distortion(image: &RgbBlock, lenses: &[LensSpec]) -> RgbBlock {
    let (w, h) = image.dimensions();
    let mut current = image.clone();
    for lens in lenses {
        let mut next = current.clone();
        // Only the lens's bounding box can move.
        let x_lo = (lens.cx - lens.radius).floor().max(0.0) as u32;
        let y_lo = (lens.cy - lens.radius).floor().max(0.0) as u32;
        let x_hi = ((lens.cx + lens.radius).ceil().max(0.0) as u32).min(w - 1);
        let y_hi = ((lens.cy + lens.radius).ceil().max(0.0) as u32).min(h - 1);
        if x_lo <= x_hi && y_lo <= y_hi {
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let (sx, sy) = lens_source(lens, x, y, w, h);
                    next.put_pixel(x, y, *current.get_pixel(sx, sy));
                }
            }
        }
        current = next;
    }
    current
}

pub fn flip_horizontal(img: &RgbBlock) -> RgbBlock {
    image::imageops::flip_horizontal(img)
}

pub fn flip_vertical(img: &RgbBlock) -> RgbBlock {
    image::imageops::flip_vertical(img)
}

/// Clockwise rotation by `k * 90` degrees.
pub fn rotate90(img: &RgbBlock, k: u32) -> RgbBlock {
    match k % 4 {
        0 => img.clone(),
        1 => image::imageops::rotate90(img),
        2 => image::imageops::rotate180(img),
        _ => image::imageops::rotate270(img),
    }
}

/// `c * (p - 128) + 128` per channel, clamped and rounded half-up.
pub fn adjust_contrast(img: &RgbBlock, factor: f64) -> RgbBlock {
    map_channels(img, |p| round_u8(factor * (f64::from(p) - 128.0) + 128.0))
}

pub fn adjust_brightness(img: &RgbBlock, delta: f64) -> RgbBlock {
    map_channels(img, |p| round_u8(f64::from(p) + delta))
}

fn map_channels(img: &RgbBlock, f: impl Fn(u8) -> u8) -> RgbBlock {
    let mut lut = [0u8; 256];
    for (i, v) in lut.iter_mut().enumerate() {
        *v = f(i as u8);
    }
    let mut out = img.clone();
    for p in out.iter_mut() {
        *p = lut[*p as usize];
    }
    out
}

/// RGB (0..255) to HSV with hue in degrees [0,360) and s, v in [0,1].
pub fn rgb_to_hsv(px: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = px.map(|c| f64::from(c) / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r1, g1, b1].map(|ch| round_u8((ch + m) * 255.0))
}

/// Rotates hue by `degrees` in HSV space.
pub fn rotate_hue(img: &RgbBlock, degrees: f64) -> RgbBlock {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let (h, s, v) = rgb_to_hsv(p.0);
        p.0 = hsv_to_rgb(h + degrees, s, v);
    }
    out
}

/// Random `size x size` window; offset drawn as `x` then `y`.
pub fn random_crop(img: &RgbBlock, size: u32, rng: &mut Stream) -> Result<RgbBlock> {
    let (w, h) = img.dimensions();
    if w < size || h < size {
        return Err(Error::Size(format!("{w}x{h} image is smaller than the {size}px crop")));
    }
    let x = rng.gen_range(0..=w - size);
    let y = rng.gen_range(0..=h - size);
    Ok(image::imageops::crop_imm(img, x, y, size, size).to_image())
}

/// Applies the enabled transforms in a fixed order, each behind its own coin
/// flip: horizontal flip, vertical flip, rot90, contrast, hue, brightness,
/// multi-lens distortion; then the random crop.
pub fn augment_patch(image: &RgbBlock, config: &AugmentConfig, rng: &mut Stream) -> Result<RgbBlock> {
    config.validate()?;
    let (w, h) = image.dimensions();
    if config.crop && (w < config.crop_size || h < config.crop_size) {
        return Err(Error::Size(format!(
            "{w}x{h} image is smaller than the {}px crop",
            config.crop_size
        )));
    }
    let p = config.apply_probability;
    let mut img = image.clone();
    if config.flip {
        if rng.gen_bool(p) {
            img = flip_horizontal(&img);
        }
        if rng.gen_bool(p) {
            img = flip_vertical(&img);
        }
    }
    if config.rot90 && rng.gen_bool(p) {
        let k = rng.gen_range(0..4);
        img = rotate90(&img, k);
    }
    if config.contrast && rng.gen_bool(p) {
        let (lo, hi) = config.contrast_range;
        img = adjust_contrast(&img, uniform(rng, lo, hi));
    }
    if config.hue && rng.gen_bool(p) {
        let (lo, hi) = config.hue_range_deg;
        img = rotate_hue(&img, uniform(rng, lo, hi));
    }
    if config.brightness && rng.gen_bool(p) {
        let (lo, hi) = config.brightness_range;
        img = adjust_brightness(&img, uniform(rng, lo, hi));
    }
    if config.lens && config.num_lenses > 0 && rng.gen_bool(p) {
        let lenses = sample_lenses(config, (img.height(), img.width()), rng)?;
        img = apply_multi_lens_distortion(&img, &lenses);
    }
    if config.crop {
        img = random_crop(&img, config.crop_size, rng)?;
    }
    Ok(img)
}

/// Draws grid lines every `spacing` pixels, for eyeballing the warp.
pub fn draw_grid_overlay(img: &RgbBlock, spacing: u32, color: [u8; 3]) -> RgbBlock {
    let mut out = img.clone();
    let spacing = spacing.max(2);
    for (x, y, p) in out.enumerate_pixels_mut() {
        if x % spacing == 0 || y % spacing == 0 {
            p.0 = color;
        }
    }
    out
}
