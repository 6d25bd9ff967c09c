//! Radon-domain grid container.

use crate::{Error, Geometry, Result};

/// Dense Nr×Nω grid of Radon-domain values with its sampling geometry.
///
/// Row-major: row `i` holds offset `r_i` across all angles.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    geometry: Geometry,
    values: Vec<f64>,
}

impl Sinogram {
    /// Wrap a value buffer, checking shape and finiteness.
    pub fn new(geometry: Geometry, values: Vec<f64>) -> Result<Self> {
        let expect = geometry.n_r() * geometry.n_angles();
        if values.len() != expect {
            return Err(Error::Dimension(format!(
                "sinogram buffer has {} values, expected {}x{} = {}",
                values.len(),
                geometry.n_r(),
                geometry.n_angles(),
                expect
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "sinogram cell".into(), step: i });
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let n = geometry.n_r() * geometry.n_angles();
        Self { geometry, values: vec![0.0; n] }
    }

    /// Build from an `(r_index, angle_index) -> value` function.
    pub fn from_fn(geometry: Geometry, f: impl Fn(usize, usize) -> f64) -> Self {
        let (nr, nw) = (geometry.n_r(), geometry.n_angles());
        let mut values = Vec::with_capacity(nr * nw);
        for i in 0..nr {
            for k in 0..nw {
                values.push(f(i, k));
            }
        }
        Self { geometry, values }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn n_r(&self) -> usize {
        self.geometry.n_r()
    }

    pub fn n_angles(&self) -> usize {
        self.geometry.n_angles()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, r_idx: usize, angle_idx: usize) -> f64 {
        self.values[r_idx * self.geometry.n_angles() + angle_idx]
    }

    #[inline]
    pub fn set(&mut self, r_idx: usize, angle_idx: usize, value: f64) {
        self.values[r_idx * self.geometry.n_angles() + angle_idx] = value;
    }

    /// Euclidean norm of the value grid.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest value in the grid (0 for an empty grid).
    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `self - other`, requiring matching geometry.
    pub fn sub(&self, other: &Sinogram) -> Result<Sinogram> {
        self.check_same_geometry(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Sinogram { geometry: self.geometry.clone(), values })
    }

    pub fn check_same_geometry(&self, other: &Sinogram) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::Dimension("sinogram geometries differ".into()));
        }
        Ok(())
    }

    /// First non-finite cell index, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }
}
