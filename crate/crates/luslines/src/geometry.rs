//! Radon-domain sampling grid.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sampling grid for the Radon domain of one image shape.
///
/// Angles `ω_k = k · angle_step` degrees cover `[0°, 180°)` exactly; signed
/// offsets `r_i = r_min + i · r_step` cover the image half-diagonal
/// symmetrically. Offsets are measured from the image center with the
/// positive direction downward, so a horizontal line at depth `d` peaks at
/// `ω = 90°`, `r = d − (H−1)/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    n_angles: usize,
    angle_step: f64,
    r_min: f64,
    r_max: f64,
    r_step: f64,
    image_h: usize,
    image_w: usize,
}

impl Geometry {
    /// Validate and build a geometry.
    pub fn new(
        n_angles: usize,
        angle_step: f64,
        r_min: f64,
        r_max: f64,
        r_step: f64,
        image_h: usize,
        image_w: usize,
    ) -> Result<Self> {
        if n_angles == 0 || angle_step <= 0.0 {
            return Err(Error::Config("geometry needs n_angles >= 1 and angle_step > 0".into()));
        }
        if (n_angles as f64 * angle_step - 180.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "angles must tile [0, 180) exactly: {n_angles} x {angle_step} != 180"
            )));
        }
        if r_step <= 0.0 {
            return Err(Error::Config("geometry needs r_step > 0".into()));
        }
        if (r_min + r_max).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "offset range must be symmetric: r_min {r_min} != -r_max {r_max}"
            )));
        }
        let half_diag = Self::half_diagonal(image_h, image_w);
        if r_max + 1e-9 < half_diag {
            return Err(Error::Config(format!(
                "r_max {r_max} does not cover the half diagonal {half_diag} of {image_h}x{image_w}"
            )));
        }
        let steps = (r_max - r_min) / r_step;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "offset range ({r_min}, {r_max}) is not a whole number of steps of {r_step}"
            )));
        }
        Ok(Self { n_angles, angle_step, r_min, r_max, r_step, image_h, image_w })
    }

    /// Bare index lattice of the given shape, for decimated grids that
    /// carry no projection geometry of their own. Not suitable for
    /// projecting or reconstructing images.
    pub(crate) fn lattice(nr: usize, nw: usize, r_step: f64) -> Self {
        let r_max = (nr.max(1) as f64 - 1.0) / 2.0 * r_step;
        Self {
            n_angles: nw.max(1),
            angle_step: 180.0 / nw.max(1) as f64,
            r_min: -r_max,
            r_max,
            r_step,
            image_h: 1,
            image_w: 1,
        }
    }

    /// Default grid for an image: 1° angles, 1 px offsets out to ⌈diag/2⌉.
    pub fn standard(image_h: usize, image_w: usize) -> Self {
        let r_max = Self::half_diagonal(image_h, image_w);
        Self {
            n_angles: 180,
            angle_step: 1.0,
            r_min: -r_max,
            r_max,
            r_step: 1.0,
            image_h,
            image_w,
        }
    }

    /// ⌈half image diagonal⌉ in pixels.
    pub fn half_diagonal(image_h: usize, image_w: usize) -> f64 {
        let h = image_h as f64;
        let w = image_w as f64;
        ((h * h + w * w).sqrt() / 2.0).ceil()
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn angle_step(&self) -> f64 {
        self.angle_step
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn r_step(&self) -> f64 {
        self.r_step
    }

    pub fn image_h(&self) -> usize {
        self.image_h
    }

    pub fn image_w(&self) -> usize {
        self.image_w
    }

    /// Number of offset samples.
    pub fn n_r(&self) -> usize {
        ((self.r_max - self.r_min) / self.r_step).round() as usize + 1
    }

    /// Angle of column `k`, degrees.
    pub fn angle_deg(&self, k: usize) -> f64 {
        k as f64 * self.angle_step
    }

    /// Angle of column `k`, radians.
    pub fn angle_rad(&self, k: usize) -> f64 {
        self.angle_deg(k).to_radians()
    }

    /// Offset of row `i`, pixels.
    pub fn r_value(&self, i: usize) -> f64 {
        self.r_min + i as f64 * self.r_step
    }

    /// Fractional row index of an offset value.
    pub fn r_index(&self, r: f64) -> f64 {
        (r - self.r_min) / self.r_step
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_covers_diagonal() {
        let g = Geometry::standard(128, 160);
        assert_eq!(g.n_angles(), 180);
        assert_eq!(g.r_max(), 103.0); // ceil(sqrt(128^2+160^2)/2) = ceil(102.4)
        assert_eq!(g.n_r(), 207);
        assert_eq!(g.angle_deg(90), 90.0);
        assert_eq!(g.r_value(0), -103.0);
        assert_eq!(g.r_index(0.0), 103.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Geometry::new(180, 1.5, -103.0, 103.0, 1.0, 128, 160).is_err());
        assert!(Geometry::new(180, 1.0, -103.0, 104.0, 1.0, 128, 160).is_err());
        assert!(Geometry::new(180, 1.0, -50.0, 50.0, 1.0, 128, 160).is_err());
        assert!(Geometry::new(180, 1.0, -103.0, 103.0, 0.0, 128, 160).is_err());
        assert!(Geometry::new(180, 1.0, -103.0, 103.0, 0.7, 128, 160).is_err());
    }

    #[test]
    fn coarse_grid_allowed() {
        // 10 angles x 18 degrees, 3.5 px offsets: legal for small test images.
        let g = Geometry::new(10, 18.0, -12.25, 12.25, 3.5, 16, 16).unwrap();
        assert_eq!(g.n_r(), 8);
        assert_eq!(g.n_angles(), 10);
    }
}
