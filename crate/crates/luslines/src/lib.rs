//! Restoration and detection of line artifacts in lung-ultrasound-like images.
//!
//! Lines in a noisy image become point peaks in the Radon domain, so line
//! detection is posed as an inverse problem: recover a sparse Radon-domain
//! representation `x` from an observed image `y = R⁻¹x + n`, regularized by
//! a heavy-tailed Cauchy prior. Two solvers are provided:
//!
//! * [`solvers::cps_solve`] — classic forward-backward splitting with the
//!   Cauchy proximal operator, iterated to a relative-change tolerance.
//! * [`solvers::ducps_forward`] — the same iteration unrolled into a fixed
//!   number of layers with learnable weights, trained without labels via
//!   the losses in [`training`].
//!
//! The restored Radon grid feeds a masked peak search ([`lineid`]) that
//! identifies the pleural line, A-lines, and B-line candidates, and rejects
//! Z-lines. Detections are scored against ground-truth extents ([`eval`]).
//!
//! Inner loops (Radon projections, elementwise proximal maps) run on rayon
//! when the default `parallel` feature is enabled; disabling it yields a
//! single-threaded build with identical outputs.

pub mod cauchy;
pub mod eval;
mod exec;
pub mod geometry;
pub mod image;
pub mod io;
pub mod lineid;
pub mod phantom;
pub mod radon;
pub mod sinogram;
pub mod solvers;
pub mod training;

mod error;

pub use error::{Error, Result};
pub use geometry::Geometry;
pub use image::Image;
pub use sinogram::Sinogram;

/// Environment variable that caps the number of worker threads.
pub const THREADS_ENV: &str = "LUSLINES_THREADS";

/// Install a global thread pool honoring `LUSLINES_THREADS`, if set.
///
/// Call once at process start; later calls are ignored. A no-op in
/// single-threaded builds.
pub fn configure_threads() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var(THREADS_ENV) {
            if let Ok(n) = v.parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    }
}
