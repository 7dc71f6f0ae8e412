//! Tiled multi-resolution slide model.
//!
//! A slide is a pyramid of RGB levels, each split into square tiles. Level 0
//! holds the full-resolution raster and every further level halves both
//! dimensions (rounding up) with a 2x2 box filter. The on-disk form is a
//! directory holding `manifest.json` and one PNG per tile named
//! `L{level}_x{tx}_y{ty}.png`; edge tiles keep their true (partial) size.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ColorType, ImageEncoder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{round_u8, RgbBlock};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDesc {
    pub level: u32,
    pub width: u32,
    pub height: u32,
    pub downsample_factor: u32,
}

impl LevelDesc {
    pub fn tiles_across(&self, tile_size: u32) -> u32 {
        self.width.div_ceil(tile_size)
    }

    pub fn tiles_down(&self, tile_size: u32) -> u32 {
        self.height.div_ceil(tile_size)
    }
}

/// Rectangle at a given pyramid level, in that level's pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub level: u32,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl Region {
    pub fn new(level: u32, x: u32, y: u32, width: u32, height: u32) -> Self {
        Self {
            level,
            x,
            y,
            width,
            height,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    slide_id: String,
    tile_size: u32,
    channels: u32,
    levels: Vec<LevelDesc>,
    #[serde(default)]
    source_path: Option<PathBuf>,
}

/// Immutable tiled pyramid. Cloning is cheap; tiles are shared.
#[derive(Debug, Clone)]
pub struct TiledSlide {
    slide_id: String,
    levels: Vec<LevelDesc>,
    tile_size: u32,
    source_path: Option<PathBuf>,
    // tiles[level][ty * tiles_across + tx]
    tiles: Arc<Vec<Vec<RgbBlock>>>,
}

impl TiledSlide {
    /// Builds the pyramid from an in-memory level-0 raster.
    pub fn from_image(slide_id: impl Into<String>, image: &RgbBlock, tile_size: u32) -> Result<Self> {
        check_tile_size(tile_size)?;
        let (w, h) = image.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Input("image has zero extent".into()));
        }

        let mut rasters = vec![image.clone()];
        while {
            let last = rasters.last().expect("at least level 0");
            last.width().max(last.height()) > tile_size
        } {
            let next = halve(rasters.last().expect("non-empty"));
            rasters.push(next);
        }

        let levels = rasters
            .iter()
            .enumerate()
            .map(|(i, r)| LevelDesc {
                level: i as u32,
                width: r.width(),
                height: r.height(),
                downsample_factor: 1 << i,
            })
            .collect();
        let tiles = rasters.iter().map(|r| cut_tiles(r, tile_size)).collect();

        Ok(Self {
            slide_id: slide_id.into(),
            levels,
            tile_size,
            source_path: None,
            tiles: Arc::new(tiles),
        })
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn levels(&self) -> &[LevelDesc] {
        &self.levels
    }

    pub fn level(&self, level: u32) -> Result<&LevelDesc> {
        self.levels.get(level as usize).ok_or_else(|| {
            Error::Bounds(format!(
                "level {level} does not exist (slide has {})",
                self.levels.len()
            ))
        })
    }

    pub fn tile_size(&self) -> u32 {
        self.tile_size
    }

    pub fn channels(&self) -> u32 {
        3
    }

    pub fn source_path(&self) -> Option<&Path> {
        self.source_path.as_deref()
    }

    /// Stored tile at `(tx, ty)` of `level`.
    pub fn tile(&self, level: u32, tx: u32, ty: u32) -> Result<&RgbBlock> {
        let desc = self.level(level)?;
        let across = desc.tiles_across(self.tile_size);
        if tx >= across || ty >= desc.tiles_down(self.tile_size) {
            return Err(Error::Bounds(format!(
                "tile ({tx},{ty}) outside level {level}"
            )));
        }
        Ok(&self.tiles[level as usize][(ty * across + tx) as usize])
    }

    /// Assembles `region` from tiles. Regions extending past the level are
    /// rejected, never clamped.
    pub fn read_region(&self, region: &Region) -> Result<RgbBlock> {
        let desc = self.level(region.level)?;
        if region.width == 0 || region.height == 0 {
            return Err(Error::Bounds("region has zero extent".into()));
        }
        let x_end = u64::from(region.x) + u64::from(region.width);
        let y_end = u64::from(region.y) + u64::from(region.height);
        if x_end > u64::from(desc.width) || y_end > u64::from(desc.height) {
            return Err(Error::Bounds(format!(
                "region {}x{}+{}+{} exceeds level {} ({}x{})",
                region.width, region.height, region.x, region.y, region.level, desc.width, desc.height
            )));
        }

        let ts = self.tile_size;
        let across = desc.tiles_across(ts);
        let tiles = &self.tiles[region.level as usize];
        let mut out = RgbBlock::new(region.width, region.height);
        let out_stride = region.width as usize * 3;
        let out_buf: &mut [u8] = &mut out;

        let (tx0, tx1) = (region.x / ts, (x_end as u32 - 1) / ts);
        let (ty0, ty1) = (region.y / ts, (y_end as u32 - 1) / ts);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let tile = &tiles[(ty * across + tx) as usize];
                let (tile_x, tile_y) = (tx * ts, ty * ts);
                let x_lo = region.x.max(tile_x);
                let x_hi = (x_end as u32).min(tile_x + tile.width());
                let y_lo = region.y.max(tile_y);
                let y_hi = (y_end as u32).min(tile_y + tile.height());
                let run = (x_hi - x_lo) as usize * 3;
                let tile_stride = tile.width() as usize * 3;
                let tile_buf: &[u8] = tile;
                for y in y_lo..y_hi {
                    let src = (y - tile_y) as usize * tile_stride + (x_lo - tile_x) as usize * 3;
                    let dst = (y - region.y) as usize * out_stride + (x_lo - region.x) as usize * 3;
                    out_buf[dst..dst + run].copy_from_slice(&tile_buf[src..src + run]);
                }
            }
        }
        Ok(out)
    }

    /// Whole raster of one level.
    pub fn level_image(&self, level: u32) -> Result<RgbBlock> {
        let desc = *self.level(level)?;
        self.read_region(&Region::new(level, 0, 0, desc.width, desc.height))
    }

    /// Resamples the slide to exactly `target_w x target_h`, reading from the
    /// smallest level that is still at least the target in both dimensions
    /// (level 0 when the target exceeds it). Aspect ratio is not preserved.
    pub fn downsample_to(&self, target_w: u32, target_h: u32) -> Result<RgbBlock> {
        if target_w == 0 || target_h == 0 {
            return Err(Error::Input("downsample target must be at least 1x1".into()));
        }
        let level = self
            .levels
            .iter()
            .rev()
            .find(|d| d.width >= target_w && d.height >= target_h)
            .map_or(0, |d| d.level);
        let src = self.level_image(level)?;
        Ok(resize_bilinear_rgb(&src, target_w, target_h))
    }

    /// Writes the slide directory (manifest plus tile PNGs).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            slide_id: self.slide_id.clone(),
            tile_size: self.tile_size,
            channels: 3,
            levels: self.levels.clone(),
            source_path: self.source_path.clone(),
        };
        let manifest_path = dir.join(MANIFEST_NAME);
        let json = serde_json::to_vec_pretty(&manifest)?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

        let jobs: Vec<(u32, u32, u32, &RgbBlock)> = self
            .levels
            .iter()
            .flat_map(|d| {
                let across = d.tiles_across(self.tile_size);
                self.tiles[d.level as usize]
                    .iter()
                    .enumerate()
                    .map(move |(i, t)| (d.level, i as u32 % across, i as u32 / across, t))
            })
            .collect();
        jobs.into_par_iter().try_for_each(|(level, tx, ty, tile)| {
            let path = dir.join(tile_file_name(level, tx, ty));
            write_rgb_png(&path, tile)
        })
    }

    /// Loads a slide directory written by [`TiledSlide::save`].
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_NAME);
        let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_slice(&raw)?;
        check_tile_size(manifest.tile_size)?;
        if manifest.channels != 3 {
            return Err(Error::UnsupportedFormat(format!(
                "slide {} declares {} channels",
                manifest.slide_id, manifest.channels
            )));
        }
        if manifest.levels.is_empty() {
            return Err(Error::Consistency("manifest lists no levels".into()));
        }
        let ts = manifest.tile_size;
        let mut tiles = Vec::with_capacity(manifest.levels.len());
        for (i, d) in manifest.levels.iter().enumerate() {
            if d.level as usize != i || d.downsample_factor != 1 << i || d.width == 0 || d.height == 0 {
                return Err(Error::Consistency(format!("malformed level entry {d:?}")));
            }
            let coords: Vec<(u32, u32)> = (0..d.tiles_down(ts))
                .flat_map(|ty| (0..d.tiles_across(ts)).map(move |tx| (tx, ty)))
                .collect();
            let level_tiles = coords
                .into_par_iter()
                .map(|(tx, ty)| {
                    let path = dir.join(tile_file_name(d.level, tx, ty));
                    let tile = read_rgb(&path)?;
                    let want_w = ts.min(d.width - tx * ts);
                    let want_h = ts.min(d.height - ty * ts);
                    if tile.dimensions() != (want_w, want_h) {
                        return Err(Error::Consistency(format!(
                            "tile {} is {:?}, expected {}x{}",
                            path.display(),
                            tile.dimensions(),
                            want_w,
                            want_h
                        )));
                    }
                    Ok(tile)
                })
                .collect::<Result<Vec<_>>>()?;
            tiles.push(level_tiles);
        }
        Ok(Self {
            slide_id: manifest.slide_id,
            levels: manifest.levels,
            tile_size: ts,
            source_path: manifest.source_path,
            tiles: Arc::new(tiles),
        })
    }

    /// Level whose downsample factor is closest to `factor` (ties go to the finer level).
    pub fn level_nearest_factor(&self, factor: f64) -> u32 {
        let mut best = 0;
        let mut best_err = f64::INFINITY;
        for d in &self.levels {
            let err = (f64::from(d.downsample_factor).log2() - factor.log2()).abs();
            if err < best_err - 1e-12 {
                best = d.level;
                best_err = err;
            }
        }
        best
    }
}

/// Reads a PNG or TIFF raster and builds a tiled slide from it. The slide id
/// is the file stem.
pub fn import_raster(path: &Path, tile_size: u32) -> Result<TiledSlide> {
    let image = read_rgb(path)?;
    let slide_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "slide".to_string());
    let mut slide = TiledSlide::from_image(slide_id, &image, tile_size)?;
    slide.source_path = Some(path.to_path_buf());
    Ok(slide)
}

pub fn tile_file_name(level: u32, tx: u32, ty: u32) -> String {
    format!("L{level}_x{tx}_y{ty}.png")
}

fn check_tile_size(tile_size: u32) -> Result<()> {
    if tile_size == 0 || !tile_size.is_power_of_two() {
        return Err(Error::Config(format!(
            "tile size {tile_size} is not a power of two"
        )));
    }
    Ok(())
}

fn read_rgb(path: &Path) -> Result<RgbBlock> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?
        .with_guessed_format()
        .map_err(|e| Error::Input(format!("cannot probe {}: {e}", path.display())))?
        .decode()
        .map_err(|e| match e {
            image::ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
            other => Error::Input(format!("cannot decode {}: {other}", path.display())),
        })?;
    match img.color() {
        ColorType::Rgb8 => Ok(img.into_rgb8()),
        other => Err(Error::UnsupportedFormat(format!(
            "{} is {other:?}, expected 8-bit RGB",
            path.display()
        ))),
    }
}

pub(crate) fn write_rgb_png(path: &Path, img: &RgbBlock) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder =
        PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Fast, FilterType::Sub);
    encoder.write_image(img, img.width(), img.height(), image::ExtendedColorType::Rgb8)?;
    Ok(())
}

/// 2x2 box average with edge clamping and round-half-up.
fn halve(src: &RgbBlock) -> RgbBlock {
    let (w, h) = src.dimensions();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = RgbBlock::new(nw, nh);
    for y in 0..nh {
        let y0 = 2 * y;
        let y1 = (2 * y + 1).min(h - 1);
        for x in 0..nw {
            let x0 = 2 * x;
            let x1 = (2 * x + 1).min(w - 1);
            let (a, b, c, d) = (
                src.get_pixel(x0, y0).0,
                src.get_pixel(x1, y0).0,
                src.get_pixel(x0, y1).0,
                src.get_pixel(x1, y1).0,
            );
            let mut px = [0u8; 3];
            for ch in 0..3 {
                let sum = u32::from(a[ch]) + u32::from(b[ch]) + u32::from(c[ch]) + u32::from(d[ch]);
                px[ch] = ((sum + 2) / 4) as u8;
            }
            out.put_pixel(x, y, image::Rgb(px));
        }
    }
    out
}

fn cut_tiles(raster: &RgbBlock, tile_size: u32) -> Vec<RgbBlock> {
    let (w, h) = raster.dimensions();
    let mut tiles = Vec::new();
    for ty in 0..h.div_ceil(tile_size) {
        for tx in 0..w.div_ceil(tile_size) {
            let (x0, y0) = (tx * tile_size, ty * tile_size);
            let tw = tile_size.min(w - x0);
            let th = tile_size.min(h - y0);
            tiles.push(image::imageops::crop_imm(raster, x0, y0, tw, th).to_image());
        }
    }
    tiles
}

/// Bilinear resample with half-pixel-centre mapping
/// `src = (dst + 0.5) * src_dim / dst_dim - 0.5`, clamped to the source
/// extent, rounded half-up per channel.
pub fn resize_bilinear_rgb(src: &RgbBlock, width: u32, height: u32) -> RgbBlock {
    let (sw, sh) = src.dimensions();
    if (sw, sh) == (width, height) {
        return src.clone();
    }
    let xt = axis_taps(width, sw);
    let yt = axis_taps(height, sh);
    let src_buf: &[u8] = src;
    let stride = sw as usize * 3;
    let mut out = RgbBlock::new(width, height);
    let out_stride = width as usize * 3;
    out.par_chunks_mut(out_stride)
        .zip(yt.par_iter())
        .for_each(|(row, &(y0, y1, fy))| {
            let r0 = &src_buf[y0 * stride..(y0 + 1) * stride];
            let r1 = &src_buf[y1 * stride..(y1 + 1) * stride];
            for (ox, &(x0, x1, fx)) in xt.iter().enumerate() {
                for ch in 0..3 {
                    let p00 = f64::from(r0[x0 * 3 + ch]);
                    let p01 = f64::from(r0[x1 * 3 + ch]);
                    let p10 = f64::from(r1[x0 * 3 + ch]);
                    let p11 = f64::from(r1[x1 * 3 + ch]);
                    let top = p00 + (p01 - p00) * fx;
                    let bot = p10 + (p11 - p10) * fx;
                    row[ox * 3 + ch] = round_u8(top + (bot - top) * fy);
                }
            }
        });
    out
}

fn axis_taps(dst: u32, src: u32) -> Vec<(usize, usize, f64)> {
    let scale = f64::from(src) / f64::from(dst);
    let max = f64::from(src - 1);
    (0..dst)
        .map(|d| {
            let s = ((f64::from(d) + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src as usize - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn noise_image(w: u32, h: u32, salt: u32) -> RgbBlock {
        RgbBlock::from_fn(w, h, |x, y| {
            let v = x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663) ^ salt.wrapping_mul(83_492_791);
            Rgb([(v & 0xff) as u8, ((v >> 8) & 0xff) as u8, ((v >> 16) & 0xff) as u8])
        })
    }

    #[test]
    fn level_halving_sequence() {
        let img = RgbBlock::new(4096, 4096);
        let slide = TiledSlide::from_image("s", &img, 512).unwrap();
        let widths: Vec<u32> = slide.levels().iter().map(|d| d.width).collect();
        assert_eq!(widths, vec![4096, 2048, 1024, 512]);
        for d in slide.levels() {
            assert_eq!(d.downsample_factor, 1 << d.level);
        }
    }

    #[test]
    fn odd_dims_round_up() {
        let img = noise_image(1001, 333, 1);
        let slide = TiledSlide::from_image("s", &img, 256).unwrap();
        let dims: Vec<(u32, u32)> = slide.levels().iter().map(|d| (d.width, d.height)).collect();
        assert_eq!(dims, vec![(1001, 333), (501, 167), (251, 84)]);
    }

    #[test]
    fn single_pixel_slide() {
        let img = RgbBlock::from_pixel(1, 1, Rgb([9, 8, 7]));
        let slide = TiledSlide::from_image("one", &img, 256).unwrap();
        assert_eq!(slide.levels().len(), 1);
        assert_eq!(slide.tile(0, 0, 0).unwrap().dimensions(), (1, 1));
        assert!(slide.tile(0, 1, 0).is_err());
    }

    #[test]
    fn uniform_gray_stays_uniform() {
        let img = RgbBlock::from_pixel(777, 513, Rgb([128, 128, 128]));
        let slide = TiledSlide::from_image("g", &img, 64).unwrap();
        for d in slide.levels() {
            let lvl = slide.level_image(d.level).unwrap();
            assert!(lvl.pixels().all(|p| p.0 == [128, 128, 128]));
        }
    }

    #[test]
    fn pyramid_matches_box_filter_oracle() {
        let img = noise_image(67, 45, 3);
        let slide = TiledSlide::from_image("p", &img, 8).unwrap();
        for l in 1..slide.levels().len() as u32 {
            let prev = slide.level_image(l - 1).unwrap();
            let cur = slide.level_image(l).unwrap();
            let (pw, ph) = prev.dimensions();
            for (x, y, px) in cur.enumerate_pixels() {
                for ch in 0..3 {
                    let mut sum = 0u32;
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let sx = (2 * x + dx).min(pw - 1);
                        let sy = (2 * y + dy).min(ph - 1);
                        sum += u32::from(prev.get_pixel(sx, sy)[ch]);
                    }
                    let mean = f64::from(sum) / 4.0;
                    assert_eq!(px[ch], (mean + 0.5).floor() as u8);
                }
            }
        }
    }

    #[test]
    fn region_reads_match_crop_oracle() {
        let img = noise_image(300, 200, 7);
        let slide = TiledSlide::from_image("r", &img, 64).unwrap();
        assert_eq!(slide.level_image(0).unwrap(), img);
        for &(x, y, w, h) in &[(60, 60, 10, 10), (0, 0, 1, 1), (63, 127, 130, 73), (299, 199, 1, 1), (5, 190, 295, 10)] {
            let got = slide.read_region(&Region::new(0, x, y, w, h)).unwrap();
            let want = image::imageops::crop_imm(&img, x, y, w, h).to_image();
            assert_eq!(got, want, "region {x},{y} {w}x{h}");
        }
    }

    #[test]
    fn out_of_bounds_region_rejected() {
        let slide = TiledSlide::from_image("r", &noise_image(50, 40, 0), 32).unwrap();
        for r in [
            Region::new(0, 45, 0, 6, 1),
            Region::new(0, 0, 40, 1, 1),
            Region::new(0, 0, 0, 0, 1),
            Region::new(5, 0, 0, 1, 1),
        ] {
            assert!(matches!(slide.read_region(&r), Err(Error::Bounds(_))), "{r:?}");
        }
    }

    #[test]
    fn downsample_checkerboard_to_single_pixel() {
        let img = RgbBlock::from_fn(2, 2, |x, y| {
            if (x + y) % 2 == 0 {
                Rgb([0, 10, 255])
            } else {
                Rgb([255, 20, 0])
            }
        });
        let slide = TiledSlide::from_image("c", &img, 2).unwrap();
        let out = slide.downsample_to(1, 1).unwrap();
        // (0+0+255+255)/4 = 127.5 -> 128; (10+10+20+20)/4 = 15
        assert_eq!(out.get_pixel(0, 0).0, [128, 15, 128]);
    }

    #[test]
    fn downsample_to_level_dims_is_exact() {
        let img = noise_image(256, 256, 11);
        let slide = TiledSlide::from_image("d", &img, 64).unwrap();
        assert_eq!(slide.downsample_to(128, 128).unwrap(), slide.level_image(1).unwrap());
        let sq = slide.downsample_to(100, 37).unwrap();
        assert_eq!(sq.dimensions(), (100, 37));
    }

    #[test]
    fn save_open_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = noise_image(130, 70, 5);
        let slide = TiledSlide::from_image("rt", &img, 32).unwrap();
        slide.save(dir.path()).unwrap();
        assert!(dir.path().join("L0_x4_y2.png").exists());
        let back = TiledSlide::open(dir.path()).unwrap();
        assert_eq!(back.levels(), slide.levels());
        for d in slide.levels() {
            assert_eq!(back.level_image(d.level).unwrap(), slide.level_image(d.level).unwrap());
        }
    }

    #[test]
    fn import_rejects_non_rgb_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let gray = dir.path().join("gray.png");
        image::GrayImage::new(4, 4).save(&gray).unwrap();
        assert!(matches!(import_raster(&gray, 64), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(
            import_raster(&dir.path().join("missing.png"), 64),
            Err(Error::Input(_))
        ));
        let rgb = dir.path().join("ok.tiff");
        noise_image(20, 10, 2).save(&rgb).unwrap();
        let slide = import_raster(&rgb, 64).unwrap();
        assert_eq!(slide.slide_id(), "ok");
        assert_eq!(slide.level_image(0).unwrap(), noise_image(20, 10, 2));
    }
}
