//! Spatial-domain image container and geometry-free pixel operations.

use crate::{Error, Result};

/// Minimum height/width accepted by the loaders and the detection pipeline.
///
/// Constructors stay permissive so that tiny grids can be built in tests and
/// for padding arithmetic; anything entering the pipeline is checked against
/// this floor.
pub const MIN_PIPELINE_DIM: usize = 16;

/// A dense H×W grid of finite real intensities, row-major.
///
/// Pipeline images are normalized to `[0, 1]` on load; the container itself
/// only requires finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    /// Wrap a row-major pixel buffer, checking shape and finiteness.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Dimension(format!(
                "pixel buffer has {} values, expected {}x{} = {}",
                pixels.len(),
                height,
                width,
                height * width
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "image pixel".into(), step: i });
        }
        Ok(Self { height, width, pixels })
    }

    /// All-zero image of the given shape.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width] }
    }

    /// Build from a `(row, col) -> value` function.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(row, col));
            }
        }
        Self { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    /// Bilinear sample at fractional pixel coordinates; zero outside.
    pub fn sample_bilinear(&self, row: f64, col: f64) -> f64 {
        if row <= -1.0 || col <= -1.0 || row >= self.height as f64 || col >= self.width as f64 {
            return 0.0;
        }
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let r0 = r0 as isize;
        let c0 = c0 as isize;
        let mut acc = 0.0;
        for (dr, wr) in [(0isize, 1.0 - fr), (1, fr)] {
            let r = r0 + dr;
            if r < 0 || r >= self.height as isize || wr == 0.0 {
                continue;
            }
            for (dc, wc) in [(0isize, 1.0 - fc), (1, fc)] {
                let c = c0 + dc;
                if c < 0 || c >= self.width as isize || wc == 0.0 {
                    continue;
                }
                acc += wr * wc * self.get(r as usize, c as usize);
            }
        }
        acc
    }

    /// Min-max rescale to `[0, 1]`. Constant images map to all zeros.
    ///
    /// Idempotent: a second application returns the values unchanged.
    pub fn normalized(&self) -> Image {
        let min = self.pixels.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == min {
            return Image::zeros(self.height, self.width);
        }
        let span = max - min;
        let pixels = self.pixels.iter().map(|&v| (v - min) / span).collect();
        Image { height: self.height, width: self.width, pixels }
    }

    /// Check the pipeline size floor.
    pub fn check_pipeline_dims(&self) -> Result<()> {
        if self.height < MIN_PIPELINE_DIM || self.width < MIN_PIPELINE_DIM {
            return Err(Error::Dimension(format!(
                "image {}x{} is below the minimum pipeline size {}x{}",
                self.height, self.width, MIN_PIPELINE_DIM, MIN_PIPELINE_DIM
            )));
        }
        Ok(())
    }
}

/// Center `img` on a zero canvas of size `h`×`w`.
///
/// The top-left of the original lands at `((h - img.h)/2, (w - img.w)/2)`.
pub fn pad_to(img: &Image, h: usize, w: usize) -> Result<Image> {
    if h < img.height || w < img.width {
        return Err(Error::Dimension(format!(
            "pad target {}x{} is smaller than source {}x{}",
            h, w, img.height, img.width
        )));
    }
    let off_r = (h - img.height) / 2;
    let off_c = (w - img.width) / 2;
    let mut out = Image::zeros(h, w);
    for row in 0..img.height {
        for col in 0..img.width {
            out.set(off_r + row, off_c + col, img.get(row, col));
        }
    }
    Ok(out)
}
