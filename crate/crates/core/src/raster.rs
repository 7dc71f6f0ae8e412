//! Plain raster containers shared by every stage: binary masks, scalar
//! probability rasters and RGB blocks.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// 8-bit RGB pixel block, row-major, 3 bytes per pixel.
pub type RgbBlock = image::RgbImage;

/// ITU-R BT.601 luma on the 0..255 scale.
#[inline]
pub fn luminance(px: [u8; 3]) -> f64 {
    0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2])
}

/// Round-half-up to the nearest integer and clamp into `u8`.
#[inline]
pub fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dims must be positive");
        Self {
            width,
            height,
            bits: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut mask = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.bits[y as usize * width as usize + x as usize] = 1;
                }
            }
        }
        mask
    }

    /// Builds a mask from row-major bits; any nonzero byte counts as set.
    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input("mask dims must be positive".into()));
        }
        if bits.len() != width as usize * height as usize {
            return Err(Error::Consistency(format!(
                "mask buffer has {} entries, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        let bits = bits.into_iter().map(|b| u8::from(b != 0)).collect();
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Row-major bits, each 0 or 1.
    #[inline]
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = u8::from(on);
    }

    pub fn count_ones(&self) -> u64 {
        self.bits.iter().map(|&b| u64::from(b)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// `true` when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(&a, &b)| a == 0 || b != 0)
    }

    /// Nearest-neighbour resample using pixel-centre mapping
    /// `src = floor((dst + 0.5) * src_dim / dst_dim)`.
    pub fn resize_nearest(&self, width: u32, height: u32) -> BinaryMask {
        let xs: Vec<u32> = (0..width)
            .map(|x| nearest_src(x, width, self.width))
            .collect();
        let ys: Vec<u32> = (0..height)
            .map(|y| nearest_src(y, height, self.height))
            .collect();
        let mut out = BinaryMask::new(width, height);
        for (oy, &sy) in ys.iter().enumerate() {
            let src_row = sy as usize * self.width as usize;
            let dst_row = oy * width as usize;
            for (ox, &sx) in xs.iter().enumerate() {
                out.bits[dst_row + ox] = self.bits[src_row + sx as usize];
            }
        }
        out
    }

    /// Writes a 1-bit grayscale PNG (set bits are white).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::One);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Input(format!("png header for {}: {e}", path.display())))?;
        let stride = (self.width as usize).div_ceil(8);
        let mut packed = vec![0u8; stride * self.height as usize];
        for y in 0..self.height as usize {
            for x in 0..self.width as usize {
                if self.bits[y * self.width as usize + x] != 0 {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        writer
            .write_image_data(&packed)
            .map_err(|e| Error::Input(format!("png data for {}: {e}", path.display())))?;
        writer
            .finish()
            .map_err(|e| Error::Input(format!("png finish for {}: {e}", path.display())))
    }

    /// Reads any grayscale/RGB PNG or TIFF; nonzero luma counts as set.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Input(format!("cannot read mask {}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Self::from_bits(w, h, img.into_raw())
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.bits.iter().map(|&b| b * 255).collect(),
        )
        .expect("buffer length matches dims")
    }
}

#[inline]
fn nearest_src(dst: u32, dst_dim: u32, src_dim: u32) -> u32 {
    let s = ((f64::from(dst) + 0.5) * f64::from(src_dim) / f64::from(dst_dim)).floor() as u32;
    s.min(src_dim - 1)
}

/// Dense `f32` raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarRaster {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl ScalarRaster {
    pub fn new(width: u32, height: u32, fill: f32) -> Self {
        assert!(width > 0 && height > 0, "raster dims must be positive");
        Self {
            width,
            height,
            data: vec![fill; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize {
            return Err(Error::Consistency(format!(
                "raster buffer of {} values does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f32) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Writes the raster as 16-bit grayscale, `round(v * 65535)` after clamping to [0,1].
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&v| quantize_u16(f64::from(v))).collect(),
        )
        .expect("buffer length matches dims");
        img.save(path)?;
        Ok(())
    }

    /// Reads a 16-bit (or 8-bit) grayscale PNG as values in [0,1].
    pub fn load_png16(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
            .into_luma16();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| f32::from(v) / 65535.0).collect();
        Self::from_vec(w, h, data)
    }
}

#[inline]
pub(crate) fn quantize_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}
