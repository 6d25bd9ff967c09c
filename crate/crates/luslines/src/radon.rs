//! Discrete Radon transform, filtered back-projection, and adjoints.
//!
//! Conventions: centered pixel coordinates `x = col − (W−1)/2`,
//! `y = row − (H−1)/2` with `y` positive downward. The line for grid point
//! `(r, ω)` is `{(x, y) : x·cos ω + y·sin ω = r}`, sampled at 1 px steps with
//! bilinear interpolation. Horizontal lines peak at `ω = 90°`, vertical ones
//! near `0°`/`180°`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::exec::fill_indexed;
use crate::{Error, Geometry, Image, Result, Sinogram};

fn check_match(img: &Image, geo: &Geometry) -> Result<()> {
    if img.height() != geo.image_h() || img.width() != geo.image_w() {
        return Err(Error::Dimension(format!(
            "image {}x{} does not match geometry {}x{}",
            img.height(),
            img.width(),
            geo.image_h(),
            geo.image_w()
        )));
    }
    Ok(())
}

/// Line-integral projection of an image onto the Radon grid.
pub fn forward_radon(img: &Image, geo: &Geometry) -> Result<Sinogram> {
    forward_radon_impl(img, geo, true)
}

/// Single-threaded reference path of [`forward_radon`]; identical output.
pub fn forward_radon_seq(img: &Image, geo: &Geometry) -> Result<Sinogram> {
    forward_radon_impl(img, geo, false)
}

/// Surrogate adjoint of the inverse transform used in the gradient step of
/// the solvers; identified with the forward projection.
pub fn adjoint_inverse(img: &Image, geo: &Geometry) -> Result<Sinogram> {
    forward_radon(img, geo)
}

fn forward_radon_impl(img: &Image, geo: &Geometry, parallel: bool) -> Result<Sinogram> {
    check_match(img, geo)?;
    let nr = geo.n_r();
    let nw = geo.n_angles();
    let trig: Vec<(f64, f64)> = (0..nw).map(|k| geo.angle_rad(k).sin_cos()).collect();
    // Sample span: any in-image point projects onto the line direction
    // within the half diagonal, which r_max covers.
    let t_max = geo.r_max().ceil() as i64;
    let cy = (img.height() as f64 - 1.0) / 2.0;
    let cx = (img.width() as f64 - 1.0) / 2.0;

    let values = fill_indexed(nr * nw, parallel, |idx| {
        let i = idx / nw;
        let k = idx % nw;
        let r = geo.r_value(i);
        let (s, c) = trig[k];
        // Base point r·(cos, sin); direction (−sin, cos).
        let bx = r * c;
        let by = r * s;
        let mut acc = 0.0;
        for t in -t_max..=t_max {
            let t = t as f64;
            let x = bx - t * s;
            let y = by + t * c;
            acc += img.sample_bilinear(y + cy, x + cx);
        }
        acc
    });
    Sinogram::new(geo.clone(), values)
}

/// Frequency response of the ramp filter on a circular domain of length `m`.
///
/// Built from the band-limited real-space kernel (1/4 at zero lag,
/// −1/(πn)² at odd lags) so the DC bin is slightly positive rather than
/// exactly zero, which keeps flat regions reconstructable.
fn ramp_filter(m: usize) -> Vec<f64> {
    let mut kernel = vec![0.0f64; m];
    kernel[0] = 0.25;
    let mut n = 1usize;
    while n <= m / 2 {
        let v = -1.0 / (std::f64::consts::PI * n as f64).powi(2);
        kernel[n] = v;
        kernel[m - n] = v;
        n += 2;
    }
    let mut buf: Vec<Complex<f64>> = kernel.into_iter().map(|v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    buf.into_iter().map(|c| 2.0 * c.re).collect()
}

fn next_pow2(n: usize) -> usize {
    let mut m = 1;
    while m < n {
        m *= 2;
    }
    m
}

/// Ramp-filter every angle column of a sinogram; returns `[angle][r]`.
fn filter_columns(sino: &Sinogram, parallel: bool) -> Vec<Vec<f64>> {
    let geo = sino.geometry();
    let nr = geo.n_r();
    let nw = geo.n_angles();
    let m = next_pow2(2 * nr);
    let filter = ramp_filter(m);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let inv_r_step = 1.0 / geo.r_step();

    let run = |k: usize| -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); m];
        for i in 0..nr {
            buf[i].re = sino.get(i, k);
        }
        fwd.process(&mut buf);
        for (b, f) in buf.iter_mut().zip(&filter) {
            *b *= *f;
        }
        inv.process(&mut buf);
        // rustfft leaves the inverse unnormalized.
        let norm = 1.0 / m as f64;
        (0..nr).map(|i| buf[i].re * norm * inv_r_step).collect()
    };

    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return (0..nw).into_par_iter().map(run).collect();
    }
    let _ = parallel;
    (0..nw).map(run).collect()
}

/// Filtered back-projection reconstruction.
pub fn inverse_radon(sino: &Sinogram) -> Image {
    inverse_radon_impl(sino, true)
}

/// Single-threaded reference path of [`inverse_radon`]; identical output.
pub fn inverse_radon_seq(sino: &Sinogram) -> Image {
    inverse_radon_impl(sino, false)
}

fn inverse_radon_impl(sino: &Sinogram, parallel: bool) -> Image {
    let geo = sino.geometry();
    let h = geo.image_h();
    let w = geo.image_w();
    let nr = geo.n_r();
    let nw = geo.n_angles();
    let filtered = filter_columns(sino, parallel);
    let trig: Vec<(f64, f64)> = (0..nw).map(|k| geo.angle_rad(k).sin_cos()).collect();
    let scale = std::f64::consts::PI / (2.0 * nw as f64);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;

    let pixels = fill_indexed(h * w, parallel, |idx| {
        let row = idx / w;
        let col = idx % w;
        let x = col as f64 - cx;
        let y = row as f64 - cy;
        let mut acc = 0.0;
        for (k, &(s, c)) in trig.iter().enumerate() {
            let t = x * c + y * s;
            let pos = geo.r_index(t);
            let i0 = pos.floor();
            let frac = pos - i0;
            let i0 = i0 as isize;
            if i0 >= 0 && (i0 as usize) < nr {
                acc += (1.0 - frac) * filtered[k][i0 as usize];
            }
            let i1 = i0 + 1;
            if i1 >= 0 && (i1 as usize) < nr && frac != 0.0 {
                acc += frac * filtered[k][i1 as usize];
            }
        }
        acc * scale
    });
    Image::new(h, w, pixels).expect("finite projections back-project to finite pixels")
}

/// Exact adjoint of [`inverse_radon`] as a linear map.
///
/// Needed when a loss is defined on the reconstruction and its gradient must
/// be pulled back to the Radon grid; satisfies
/// `<inverse_radon(s), v> = <s, inverse_radon_adjoint(v)>`.
pub fn inverse_radon_adjoint(img: &Image, geo: &Geometry) -> Result<Sinogram> {
    check_match(img, geo)?;
    let h = geo.image_h();
    let w = geo.image_w();
    let nr = geo.n_r();
    let nw = geo.n_angles();
    let trig: Vec<(f64, f64)> = (0..nw).map(|k| geo.angle_rad(k).sin_cos()).collect();
    let scale = std::f64::consts::PI / (2.0 * nw as f64);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;

    // Transpose of interpolating back-projection: splat each pixel onto the
    // two bracketing offset cells of every angle column. One task per angle
    // column keeps writes disjoint and accumulation order fixed.
    let run = |k: usize| -> Vec<f64> {
        let (s, c) = trig[k];
        let mut col = vec![0.0f64; nr];
        for row in 0..h {
            let y = row as f64 - cy;
            for cidx in 0..w {
                let x = cidx as f64 - cx;
                let v = img.get(row, cidx) * scale;
                let pos = geo.r_index(x * c + y * s);
                let i0 = pos.floor();
                let frac = pos - i0;
                let i0 = i0 as isize;
                if i0 >= 0 && (i0 as usize) < nr {
                    col[i0 as usize] += (1.0 - frac) * v;
                }
                let i1 = i0 + 1;
                if i1 >= 0 && (i1 as usize) < nr && frac != 0.0 {
                    col[i1 as usize] += frac * v;
                }
            }
        }
        col
    };

    #[cfg(feature = "parallel")]
    let cols: Vec<Vec<f64>> = {
        use rayon::prelude::*;
        (0..nw).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cols: Vec<Vec<f64>> = (0..nw).map(run).collect();

    // The ramp filter is self-adjoint (real, even kernel), so the adjoint
    // applies the same filtering to the splatted columns.
    let mut splat = Sinogram::zeros(geo.clone());
    for (k, col) in cols.iter().enumerate() {
        for i in 0..nr {
            splat.set(i, k, col[i]);
        }
    }
    let filtered = filter_columns(&splat, true);
    let mut out = Sinogram::zeros(geo.clone());
    for (k, col) in filtered.iter().enumerate() {
        for i in 0..nr {
            out.set(i, k, col[i]);
        }
    }
    Ok(out)
}
