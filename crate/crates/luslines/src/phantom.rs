//! Synthetic line-artifact phantoms with exact ground truth.
//!
//! Desk-scale stand-ins for clinical images: a bright horizontal pleural
//! band, equally spaced dimmer repeats below it, and vertical bands running
//! from the pleural depth to the bottom edge. All randomness flows from the
//! explicit seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Image, Result};

/// Line-artifact class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineKind {
    #[serde(rename = "pleural")]
    Pleural,
    #[serde(rename = "A")]
    ALine,
    #[serde(rename = "B")]
    BLine,
}

/// Horizontal extent of one annotated line artifact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub x_min: i64,
    pub x_max: i64,
    pub kind: LineKind,
}

/// Annotated extents for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub boxes: Vec<GtBox>,
}

impl GroundTruth {
    pub fn validate(&self) -> Result<()> {
        for b in &self.boxes {
            if b.x_min >= b.x_max {
                return Err(Error::Config(format!(
                    "ground-truth box has x_min {} >= x_max {}",
                    b.x_min, b.x_max
                )));
            }
        }
        Ok(())
    }

    /// Boxes of one kind.
    pub fn of_kind(&self, kind: LineKind) -> Vec<GtBox> {
        self.boxes.iter().copied().filter(|b| b.kind == kind).collect()
    }
}

fn default_aline_decay() -> f64 {
    0.7
}

fn default_band_fwhm() -> f64 {
    3.0
}

/// Recipe for one phantom.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Pleural depth in pixels from the top; must lie in `[H/4, H/3]` so the
    /// phantom falls inside the pleural search band.
    pub pleural_depth: usize,
    #[serde(default)]
    pub bline_columns: Vec<usize>,
    #[serde(default = "default_bline_width")]
    pub bline_width: usize,
    #[serde(default)]
    pub n_alines: usize,
    #[serde(default = "default_amplitude")]
    pub line_amplitude: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Brightness decay per successive repeated horizontal line.
    #[serde(default = "default_aline_decay")]
    pub aline_decay: f64,
    /// Full width at half maximum of the horizontal band profile, pixels.
    #[serde(default = "default_band_fwhm")]
    pub band_fwhm: f64,
}

fn default_bline_width() -> usize {
    4
}

fn default_amplitude() -> f64 {
    0.8
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let h = self.height as f64;
        let d = self.pleural_depth as f64;
        if d < h / 4.0 || d > h / 3.0 {
            return Err(Error::Config(format!(
                "pleural_depth {} outside [H/4, H/3] = [{}, {}]",
                self.pleural_depth,
                h / 4.0,
                h / 3.0
            )));
        }
        if let Some(&c) = self.bline_columns.iter().find(|&&c| c >= self.width) {
            return Err(Error::Config(format!("bline_column {c} outside image width {}", self.width)));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.line_amplitude > 0.0 && self.line_amplitude <= 1.0) {
            return Err(Error::Config(format!(
                "line_amplitude must be in (0, 1], got {}",
                self.line_amplitude
            )));
        }
        if self.bline_width == 0 {
            return Err(Error::Config("bline_width must be positive".into()));
        }
        if !(self.aline_decay > 0.0 && self.aline_decay <= 1.0) {
            return Err(Error::Config(format!(
                "aline_decay must be in (0, 1], got {}",
                self.aline_decay
            )));
        }
        Ok(())
    }
}

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3; // 2·sqrt(2 ln 2)

/// Noise-free analytic intensity at one pixel, before clipping.
fn analytic_pixel(spec: &PhantomSpec, row: usize, col: usize) -> f64 {
    let sigma_h = spec.band_fwhm / FWHM_TO_SIGMA;
    let d_p = spec.pleural_depth as f64;
    let a = spec.line_amplitude;

    // Pleural band plus decaying repeats at multiples of the pleural depth.
    let mut v = 0.0;
    let mut depth = d_p;
    let mut amp = a;
    let mut n = 0usize;
    while depth < spec.height as f64 && n <= spec.n_alines {
        let dr = row as f64 - depth;
        v += amp * (-dr * dr / (2.0 * sigma_h * sigma_h)).exp();
        depth += d_p;
        amp *= spec.aline_decay;
        n += 1;
    }

    // Vertical bands replace whatever they cover from the pleural depth
    // down, matching how a bright reverberation column erases the pattern
    // behind it.
    if row as f64 >= d_p.floor() {
        let sigma_b = spec.bline_width as f64 / FWHM_TO_SIGMA;
        for &c in &spec.bline_columns {
            let dc = col as f64 - c as f64;
            let m = (-dc * dc / (2.0 * sigma_b * sigma_b)).exp();
            v = (1.0 - m) * v + m * a;
        }
    }
    v
}

/// Generate a phantom image and its ground truth.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Image, GroundTruth)> {
    spec.validate()?;
    let mut img = Image::from_fn(spec.height, spec.width, |r, c| analytic_pixel(spec, r, c));
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        for p in img.pixels_mut() {
            *p += normal.sample(&mut rng);
        }
    }
    for p in img.pixels_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    img.check_pipeline_dims()?;

    let w = spec.width as i64;
    let bw = spec.bline_width as i64;
    let boxes = spec
        .bline_columns
        .iter()
        .map(|&c| GtBox {
            x_min: (c as i64 - bw).max(0),
            x_max: (c as i64 + bw).min(w - 1),
            kind: LineKind::BLine,
        })
        .collect();
    Ok((img, GroundTruth { boxes }))
}
