//! Line-artifact identification in the restored Radon grid.
//!
//! The pipeline walks four steps: find the pleural line as the brightest
//! peak in a depth-restricted horizontal band; zero the image above it and
//! re-project; find A-lines (deeper horizontal repeats, validated against
//! the pleural intensity) and B-line candidates (near-vertical peaks); then
//! reject Z-lines, candidates that cross a surviving A-line.

use serde::{Deserialize, Serialize};

use crate::phantom::LineKind;
use crate::radon::forward_radon;
use crate::solvers::{cps_solve, ducps_forward, estimate_operator_norm, DucpsParams};
use crate::{Error, Geometry, Image, Result, Sinogram};

/// One identified line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub kind: LineKind,
    /// Signed offset from the image center, pixels, positive downward.
    pub r: f64,
    /// Normal angle, degrees in `[0°, 180°)`.
    pub omega: f64,
    /// Radon-domain peak value.
    pub intensity: f64,
    /// For near-vertical lines: column at mid-depth between the pleural
    /// line and the image bottom.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_x: Option<f64>,
    /// For horizontal lines: depth in pixels from the top.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spatial_depth: Option<f64>,
}

/// Rectangular Radon-domain search region, optionally wrapping in angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBand {
    pub omega_lo: f64,
    pub omega_hi: f64,
    /// When set, the angle interval is `[omega_lo, 180°) ∪ [0°, omega_hi]`.
    pub wrap: bool,
    pub r_lo: f64,
    pub r_hi: f64,
}

impl SearchBand {
    fn contains(&self, r: f64, omega: f64) -> bool {
        if r < self.r_lo || r > self.r_hi {
            return false;
        }
        if self.wrap {
            omega >= self.omega_lo || omega <= self.omega_hi
        } else {
            (self.omega_lo..=self.omega_hi).contains(&omega)
        }
    }
}

/// Detection knobs; all config-exposed with working defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LineIdConfig {
    /// A-line validation fraction of the pleural intensity.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Peaks below this fraction of the band maximum are ignored.
    #[serde(default = "default_floor_frac")]
    pub floor_frac: f64,
    /// Non-maximum-suppression radius in grid cells.
    #[serde(default = "default_nms_radius")]
    pub nms_radius: usize,
    /// A-line band lower bound: `H/2 − coeff·H_p − guard` in centered r.
    #[serde(default = "default_aline_coeff")]
    pub aline_coeff: f64,
    #[serde(default = "default_aline_guard")]
    pub aline_guard: f64,
    /// Rows kept above the pleural depth when dimming.
    #[serde(default = "default_dim_guard")]
    pub dim_guard: usize,
    /// Z-line test patch side, pixels.
    #[serde(default = "default_zline_patch")]
    pub zline_patch: usize,
    /// A candidate crossing an A-line whose patch mean is at least this
    /// fraction of the A-line band mean is discarded.
    #[serde(default = "default_zline_factor")]
    pub zline_factor: f64,
    /// Near-vertical peaks whose columns differ by at most this many pixels
    /// are the same physical line (one peak per wrap side); only the
    /// brightest is kept.
    #[serde(default = "default_bline_merge_px")]
    pub bline_merge_px: f64,
}

fn default_lambda() -> f64 {
    0.3
}
fn default_floor_frac() -> f64 {
    0.3
}
fn default_nms_radius() -> usize {
    3
}
fn default_aline_coeff() -> f64 {
    2.0
}
fn default_aline_guard() -> f64 {
    2.0
}
fn default_dim_guard() -> usize {
    2
}
fn default_zline_patch() -> usize {
    5
}
fn default_zline_factor() -> f64 {
    0.5
}
fn default_bline_merge_px() -> f64 {
    4.0
}

impl Default for LineIdConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            floor_frac: default_floor_frac(),
            nms_radius: default_nms_radius(),
            aline_coeff: default_aline_coeff(),
            aline_guard: default_aline_guard(),
            dim_guard: default_dim_guard(),
            zline_patch: default_zline_patch(),
            zline_factor: default_zline_factor(),
            bline_merge_px: default_bline_merge_px(),
        }
    }
}

/// A local peak: grid indices, physical coordinates, and value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub r_idx: usize,
    pub omega_idx: usize,
    pub r: f64,
    pub omega: f64,
    pub value: f64,
}

/// Strict local maxima inside a band, floored at `floor_frac` of the band
/// maximum, sorted by value descending (ties by `(r, ω)`), then greedily
/// non-maximum suppressed at `nms_radius` (Chebyshev distance in cells).
pub fn local_maxima(
    s: &Sinogram,
    band: &SearchBand,
    nms_radius: usize,
    floor_frac: f64,
) -> Result<Vec<Peak>> {
    let geo = s.geometry();
    let nr = geo.n_r();
    let nw = geo.n_angles();
    let in_band: Vec<(usize, usize)> = (0..nr)
        .flat_map(|i| (0..nw).map(move |k| (i, k)))
        .filter(|&(i, k)| band.contains(geo.r_value(i), geo.angle_deg(k)))
        .collect();
    if in_band.is_empty() {
        return Err(Error::Dimension("search band is empty after clipping to the grid".into()));
    }
    let band_max = in_band.iter().map(|&(i, k)| s.get(i, k)).fold(f64::NEG_INFINITY, f64::max);
    let floor = floor_frac * band_max;
    let radius = nms_radius as isize;

    let mut peaks: Vec<Peak> = Vec::new();
    'cells: for &(i, k) in &in_band {
        let v = s.get(i, k);
        if v < floor {
            continue;
        }
        for di in -radius..=radius {
            for dk in -radius..=radius {
                if di == 0 && dk == 0 {
                    continue;
                }
                let ni = i as isize + di;
                let nk = k as isize + dk;
                if ni < 0 || ni >= nr as isize || nk < 0 || nk >= nw as isize {
                    continue;
                }
                if s.get(ni as usize, nk as usize) >= v {
                    continue 'cells;
                }
            }
        }
        peaks.push(Peak {
            r_idx: i,
            omega_idx: k,
            r: geo.r_value(i),
            omega: geo.angle_deg(k),
            value: v,
        });
    }
    peaks.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then(a.r.total_cmp(&b.r))
            .then(a.omega.total_cmp(&b.omega))
    });
    let mut kept: Vec<Peak> = Vec::new();
    for p in peaks {
        let suppressed = kept.iter().any(|q| {
            (p.r_idx as isize - q.r_idx as isize).unsigned_abs() <= nms_radius
                && (p.omega_idx as isize - q.omega_idx as isize).unsigned_abs() <= nms_radius
        });
        if !suppressed {
            kept.push(p);
        }
    }
    Ok(kept)
}

/// Angle band for near-horizontal lines: 90° ± 20°.
const HORIZONTAL_LO: f64 = 70.0;
const HORIZONTAL_HI: f64 = 110.0;
/// Half-width of the near-vertical band around 0°/180°.
const VERTICAL_HALF: f64 = 10.0;

/// Step 1: brightest peak in the pleural search band (depth between H/4 and
/// H/3, angles 90° ± 20°).
pub fn detect_pleural(s: &Sinogram, cfg: &LineIdConfig) -> Result<Detection> {
    let geo = s.geometry();
    let h = geo.image_h() as f64;
    let center = (h - 1.0) / 2.0;
    let band = SearchBand {
        omega_lo: HORIZONTAL_LO,
        omega_hi: HORIZONTAL_HI,
        wrap: false,
        r_lo: h / 4.0 - center,
        r_hi: h / 3.0 - center,
    };
    let peaks = match local_maxima(s, &band, cfg.nms_radius, cfg.floor_frac) {
        Ok(p) => p,
        Err(Error::Dimension(_)) => return Err(Error::PleuralNotFound),
        Err(e) => return Err(e),
    };
    let best = peaks.into_iter().next().ok_or(Error::PleuralNotFound)?;
    Ok(Detection {
        kind: LineKind::Pleural,
        r: best.r,
        omega: best.omega,
        intensity: best.value,
        spatial_x: None,
        spatial_depth: Some(best.r + center),
    })
}

/// Step 2: zero every row strictly above the pleural depth minus a small
/// guard, so the pleural line itself survives re-projection.
pub fn dim_above_pleural(y: &Image, pleural: &Detection, cfg: &LineIdConfig) -> Image {
    let depth = pleural.spatial_depth.unwrap_or(0.0);
    let cutoff = depth - cfg.dim_guard as f64;
    Image::from_fn(y.height(), y.width(), |row, col| {
        if (row as f64) < cutoff {
            0.0
        } else {
            y.get(row, col)
        }
    })
}

/// Step 3a: horizontal peaks in the deep band below the pleural line,
/// validated against the pleural intensity; the brightest survivor wins.
///
/// The band spans centered offsets `[H/2 − coeff·H_p − guard, H/2]` with
/// `H_p` the pleural distance from the center, placing its edge at the
/// first repeat of the skin-to-pleura spacing.
pub fn detect_alines(
    s_dim: &Sinogram,
    pleural: &Detection,
    lambda: f64,
    cfg: &LineIdConfig,
) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let geo = s_dim.geometry();
    let h = geo.image_h() as f64;
    let center = (h - 1.0) / 2.0;
    let h_p = pleural.r.abs();
    let band = SearchBand {
        omega_lo: HORIZONTAL_LO,
        omega_hi: HORIZONTAL_HI,
        wrap: false,
        r_lo: h / 2.0 - cfg.aline_coeff * h_p - cfg.aline_guard,
        r_hi: h / 2.0,
    };
    let peaks = match local_maxima(s_dim, &band, cfg.nms_radius, cfg.floor_frac) {
        Ok(p) => p,
        Err(Error::Dimension(_)) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let best = peaks
        .into_iter()
        .filter(|p| p.value >= lambda * pleural.intensity)
        .max_by(|a, b| a.value.total_cmp(&b.value));
    Ok(best
        .map(|p| Detection {
            kind: LineKind::ALine,
            r: p.r,
            omega: p.omega,
            intensity: p.value,
            spatial_x: None,
            spatial_depth: Some(p.r + center),
        })
        .into_iter()
        .collect())
}

/// Column where the line `(r, ω)` crosses the given depth, with angles near
/// 180° folded onto the near-0° convention (same spatial line).
fn line_column_at_depth(geo: &Geometry, r: f64, omega: f64, depth: f64) -> f64 {
    let (r_eff, omega_eff) = if omega >= 90.0 { (-r, omega - 180.0) } else { (r, omega) };
    let (s, c) = omega_eff.to_radians().sin_cos();
    let y = depth - (geo.image_h() as f64 - 1.0) / 2.0;
    let x = (r_eff - y * s) / c;
    x + (geo.image_w() as f64 - 1.0) / 2.0
}

/// Step 3b: near-vertical peaks across the full width, each mapped to its
/// column at mid-depth between the pleural line and the image bottom.
pub fn detect_bline_candidates(
    s_dim: &Sinogram,
    pleural: &Detection,
    cfg: &LineIdConfig,
) -> Result<Vec<Detection>> {
    let geo = s_dim.geometry();
    let w = geo.image_w() as f64;
    let h = geo.image_h() as f64;
    let band = SearchBand {
        omega_lo: 180.0 - VERTICAL_HALF,
        omega_hi: VERTICAL_HALF,
        wrap: true,
        r_lo: -w / 2.0,
        r_hi: w / 2.0,
    };
    let peaks = match local_maxima(s_dim, &band, cfg.nms_radius, cfg.floor_frac) {
        Ok(p) => p,
        Err(Error::Dimension(_)) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mid_depth = (pleural.spatial_depth.unwrap_or(0.0) + (h - 1.0)) / 2.0;
    // Peaks arrive brightest-first; collapse wrap-side duplicates that land
    // on the same column.
    let mut kept: Vec<Detection> = Vec::new();
    for p in peaks {
        let x = line_column_at_depth(geo, p.r, p.omega, mid_depth);
        if kept
            .iter()
            .any(|d| (d.spatial_x.unwrap_or(f64::INFINITY) - x).abs() <= cfg.bline_merge_px)
        {
            continue;
        }
        kept.push(Detection {
            kind: LineKind::BLine,
            r: p.r,
            omega: p.omega,
            intensity: p.value,
            spatial_x: Some(x),
            spatial_depth: None,
        });
    }
    Ok(kept)
}

/// Step 4: discard candidates that cross an intact A-line.
///
/// At each detected A-line depth the dimmed image is sampled in a small
/// patch around the candidate column and compared against the A-line band's
/// mean over the same rows across the full width. A patch mean at or above
/// `zline_factor` times the band mean means the A-line persists there, so
/// the candidate did not erase it and is a Z-line.
pub fn filter_zlines(
    candidates: Vec<Detection>,
    alines: &[Detection],
    y_dim: &Image,
    cfg: &LineIdConfig,
) -> Vec<Detection> {
    if alines.is_empty() {
        return candidates;
    }
    let half = (cfg.zline_patch / 2) as isize;
    candidates
        .into_iter()
        .filter(|cand| {
            let Some(x) = cand.spatial_x else { return true };
            let x = x.round() as isize;
            for aline in alines {
                let Some(depth) = aline.spatial_depth else { continue };
                let depth = depth.round() as isize;
                let band_mean = slab_mean(y_dim, depth, half);
                let patch = patch_mean(y_dim, depth, x, half);
                if patch >= cfg.zline_factor * band_mean {
                    return false;
                }
            }
            true
        })
        .collect()
}

/// Mean over the full-width horizontal slab `row ± half`.
fn slab_mean(img: &Image, row: isize, half: isize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for dr in -half..=half {
        let r = row + dr;
        if r < 0 || r >= img.height() as isize {
            continue;
        }
        for c in 0..img.width() {
            sum += img.get(r as usize, c);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn patch_mean(img: &Image, row: isize, col: isize, half: isize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for dr in -half..=half {
        for dc in -half..=half {
            let r = row + dr;
            let c = col + dc;
            if r >= 0 && (r as usize) < img.height() && c >= 0 && (c as usize) < img.width() {
                sum += img.get(r as usize, c as usize);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Which restoration backs the pipeline.
#[derive(Debug, Clone)]
pub enum Restoration {
    /// Classic iterative solver; `gamma`/`mu` default per input when unset.
    Cps { gamma: Option<f64>, mu: Option<f64>, max_iter: usize, tol: f64 },
    /// Unrolled network with the given parameters.
    Ducps(DucpsParams),
    /// Unrolled network at the near-identity initialization, layer count
    /// and optional prior scale supplied.
    DucpsUntrained { gamma: Option<f64>, k: usize },
}

/// Full detection result for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub pleural_found: bool,
    pub pleural: Option<Detection>,
    pub alines: Vec<Detection>,
    pub blines: Vec<Detection>,
}

impl PipelineOutput {
    fn empty() -> Self {
        Self { pleural_found: false, pleural: None, alines: Vec::new(), blines: Vec::new() }
    }

    /// External JSON shape: `{"pleural_found":…,"pleural":{…},"alines":[…],
    /// "blines":[{"x":…,"r":…,"omega":…,"intensity":…}]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let bline = |d: &Detection| {
            serde_json::json!({
                "x": d.spatial_x.map(|x| x.round() as i64).unwrap_or(0),
                "r": d.r,
                "omega": d.omega,
                "intensity": d.intensity,
            })
        };
        serde_json::json!({
            "pleural_found": self.pleural_found,
            "pleural": self.pleural,
            "alines": self.alines,
            "blines": self.blines.iter().map(bline).collect::<Vec<_>>(),
        })
    }
}

fn restore(y: &Image, geo: &Geometry, solver: &Restoration) -> Result<Sinogram> {
    match solver {
        Restoration::Cps { gamma, mu, max_iter, tol } => {
            let r0 = forward_radon(y, geo)?;
            let gamma = gamma.unwrap_or(0.1 * r0.max_value().max(1e-6));
            let mu = match mu {
                Some(m) => *m,
                None => 0.5 / estimate_operator_norm(geo, 20, 0)?,
            };
            Ok(cps_solve(y, geo, gamma, mu, *max_iter, *tol)?.0)
        }
        Restoration::Ducps(params) => {
            let r0 = forward_radon(y, geo)?;
            Ok(ducps_forward(&r0, &r0, params)?.0)
        }
        Restoration::DucpsUntrained { gamma, k } => {
            let r0 = forward_radon(y, geo)?;
            let gamma = gamma.unwrap_or(0.1 * r0.max_value().max(1e-6));
            let params = crate::solvers::ducps_init(geo, gamma, *k)?;
            Ok(ducps_forward(&r0, &r0, &params)?.0)
        }
    }
}

/// Restore, then run identification Steps 1–4. A missing pleural line
/// yields an empty flagged result rather than an error.
pub fn detect_pipeline(
    y: &Image,
    geo: &Geometry,
    solver: &Restoration,
    cfg: &LineIdConfig,
) -> Result<PipelineOutput> {
    y.check_pipeline_dims()?;
    let restored = restore(y, geo, solver)?;
    let pleural = match detect_pleural(&restored, cfg) {
        Ok(p) => p,
        Err(Error::PleuralNotFound) => return Ok(PipelineOutput::empty()),
        Err(e) => return Err(e),
    };
    let y_dim = dim_above_pleural(y, &pleural, cfg);
    let restored_dim = restore(&y_dim, geo, solver)?;
    let alines = detect_alines(&restored_dim, &pleural, cfg.lambda, cfg)?;
    let candidates = detect_bline_candidates(&restored_dim, &pleural, cfg)?;
    let blines = filter_zlines(candidates, &alines, &y_dim, cfg);
    Ok(PipelineOutput { pleural_found: true, pleural: Some(pleural), alines, blines })
}
