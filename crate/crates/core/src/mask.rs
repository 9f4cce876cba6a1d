//! Binary segmentation masks: loading, saving and nearest-neighbour resampling
//! onto a square analysis grid.

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{Error, Result};

/// Side length of the default analysis grid.
pub const DEFAULT_GRID_SIDE: usize = 256;

/// A dense foreground/background raster.
///
/// Pixels are stored row-major; `(row, col)` addresses `row * width + col`.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("foreground", &self.foreground_count())
            .finish()
    }
}

impl BinaryMask {
    /// All-background mask.
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroSized);
        }
        Ok(Self {
            width,
            height,
            bits: vec![false; width * height],
        })
    }

    /// All-foreground mask.
    pub fn full(width: usize, height: usize) -> Result<Self> {
        let mut mask = Self::empty(width, height)?;
        mask.bits.fill(true);
        Ok(mask)
    }

    /// Builds a mask from row-major pixel flags.
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroSized);
        }
        if bits.len() != width * height {
            return Err(Error::InvalidMask(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Builds a mask from a list of `(row, col)` foreground coordinates.
    /// Duplicate coordinates collapse to one pixel.
    pub fn from_points(width: usize, height: usize, points: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::empty(width, height)?;
        for &(row, col) in points {
            if row >= height || col >= width {
                return Err(Error::InvalidMask(format!(
                    "pixel ({row}, {col}) outside {width}x{height} grid"
                )));
            }
            mask.bits[row * width + col] = true;
        }
        Ok(mask)
    }

    /// Builds a mask from rows of 0/1 values. Any nonzero value is foreground.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != width) {
            return Err(Error::InvalidMask("ragged rows".into()));
        }
        let bits = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().map(|&v| v > 0))
            .collect();
        Self::from_bits(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground coordinates as `(row, col)` in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / width, i % width))
    }

    /// Errors unless both masks share width and height.
    pub fn check_same_grid(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            });
        }
        Ok(())
    }

    /// Decodes a raster image; any pixel value above zero is foreground.
    pub fn from_image(img: &DynamicImage) -> Result<Self> {
        let (width, height) = (img.width() as usize, img.height() as usize);
        if width == 0 || height == 0 {
            return Err(Error::ZeroSized);
        }
        let bits = match img {
            DynamicImage::ImageLuma8(g) => g.pixels().map(|p| p.0[0] > 0).collect(),
            DynamicImage::ImageLuma16(g) => g.pixels().map(|p| p.0[0] > 0).collect(),
            DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] > 0).collect(),
            DynamicImage::ImageLumaA16(g) => g.pixels().map(|p| p.0[0] > 0).collect(),
            other => {
                // Colour-typed files are accepted only when they are gray in disguise.
                let rgb = other.to_rgb16();
                let mut bits = Vec::with_capacity(width * height);
                for (x, y, p) in rgb.enumerate_pixels() {
                    let [r, g, b] = p.0;
                    if r != g || g != b {
                        return Err(Error::ChannelDisagreement {
                            x: x as usize,
                            y: y as usize,
                        });
                    }
                    bits.push(r > 0);
                }
                bits
            }
        };
        Self::from_bits(width, height, bits)
    }

    /// 8-bit gray image with foreground 255 and background 0.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Reads a mask file from disk.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    BinaryMask::from_image(&img)
}

/// The square grid every mask is resampled onto before comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CanonicalGrid {
    side: usize,
}

impl Default for CanonicalGrid {
    fn default() -> Self {
        Self {
            side: DEFAULT_GRID_SIDE,
        }
    }
}

impl CanonicalGrid {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 {
            return Err(Error::ZeroSized);
        }
        Ok(Self { side })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn contains(&self, mask: &BinaryMask) -> bool {
        mask.dims() == (self.side, self.side)
    }
}

/// Centre-aligned source index for output index `i`: `floor((i + 0.5) * src / dst)`.
#[inline]
fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    // (2i + 1) * src / (2 dst) in integers is the same floor without rounding error.
    ((2 * i + 1) * src / (2 * dst)).min(src - 1)
}

/// Nearest-neighbour resample onto `target`.
pub fn resize_nearest(mask: &BinaryMask, target: CanonicalGrid) -> BinaryMask {
    let side = target.side();
    if target.contains(mask) {
        return mask.clone();
    }
    let rows: Vec<usize> = (0..side)
        .map(|r| nearest_index(r, mask.height(), side))
        .collect();
    let cols: Vec<usize> = (0..side)
        .map(|c| nearest_index(c, mask.width(), side))
        .collect();
    let mut bits = Vec::with_capacity(side * side);
    for &sr in &rows {
        for &sc in &cols {
            bits.push(mask.get(sr, sc));
        }
    }
    BinaryMask {
        width: side,
        height: side,
        bits,
    }
}
