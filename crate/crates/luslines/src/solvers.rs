//! Classic proximal-splitting solver and its unrolled, trainable form.
//!
//! Both share the same layer: a gradient step on the data-fidelity term
//! followed by the Cauchy proximal map. The classic solver iterates to a
//! relative-change tolerance with fixed parameters; the unrolled network
//! fixes the layer count and reparameterizes the gradient step as
//! `z = W ⊙ x + μ·s` with learnable `(W, μ)` shared across layers, where
//! `s` is the projected input image.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::cauchy::{self, cauchy_prox, prox_grads_or_fd, ProxParams};
use crate::radon::{forward_radon, inverse_radon};
use crate::{Error, Geometry, Image, Result, Sinogram};

const PARAMS_MAGIC: &[u8; 4] = b"DUCP";
const PARAMS_VERSION: u32 = 1;

/// Learnable parameters of the unrolled network.
///
/// `w` is a positive elementwise weight field of the sinogram shape; `mu`
/// a positive scalar step shared with the proximal map; `gamma` the fixed
/// prior scale; `k` the layer count.
#[derive(Debug, Clone, PartialEq)]
pub struct DucpsParams {
    geometry: Geometry,
    w: Vec<f64>,
    pub mu: f64,
    pub gamma: f64,
    pub k: usize,
}

impl DucpsParams {
    pub fn new(geometry: Geometry, w: Vec<f64>, mu: f64, gamma: f64, k: usize) -> Result<Self> {
        let expect = geometry.n_r() * geometry.n_angles();
        if w.len() != expect {
            return Err(Error::Dimension(format!(
                "weight field has {} cells, geometry expects {}",
                w.len(),
                expect
            )));
        }
        if let Some(bad) = w.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("weights must be positive and finite, found {bad}")));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::Config(format!("mu must be positive, got {mu}")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        if k == 0 {
            return Err(Error::Config("layer count must be >= 1".into()));
        }
        Ok(Self { geometry, w, mu, gamma, k })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn prox_params(&self) -> ProxParams {
        ProxParams { gamma: self.gamma, mu: self.mu }
    }

    /// Parameters restricted to a sub-sampled grid: weights gathered by
    /// `index_map`, scalars shared.
    pub fn gather(&self, geometry: Geometry, index_map: &[usize]) -> Result<Self> {
        let w = index_map.iter().map(|&i| self.w[i]).collect();
        DucpsParams::new(geometry, w, self.mu, self.gamma, self.k)
    }
}

/// Default layer count of the unrolled network.
pub const DEFAULT_LAYERS: usize = 7;

/// Near-identity initialization: all weights `1 − 1e-5`, step `1e-5`.
pub fn ducps_init(geo: &Geometry, gamma: f64, k: usize) -> Result<DucpsParams> {
    let n = geo.n_r() * geo.n_angles();
    DucpsParams::new(geo.clone(), vec![1.0 - 1e-5; n], 1e-5, gamma, k)
}

/// Per-layer intermediates cached by the forward pass for reverse mode.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Layer inputs `x^0 .. x^{k−1}`.
    pub xs: Vec<Sinogram>,
    /// Pre-prox intermediates `z^0 .. z^{k−1}`.
    pub zs: Vec<Sinogram>,
    /// The fixed drive term `s`.
    pub drive: Sinogram,
}

/// Run the unrolled network: `z = W ⊙ x + μ·s`, `x⁺ = prox(z)`, `k` times.
pub fn ducps_forward(
    r0: &Sinogram,
    drive: &Sinogram,
    p: &DucpsParams,
) -> Result<(Sinogram, ForwardTrace)> {
    r0.check_same_geometry(drive)?;
    if r0.geometry() != &p.geometry {
        return Err(Error::Dimension("parameters do not match input geometry".into()));
    }
    let prox = p.prox_params();
    let mut x = r0.clone();
    let mut xs = Vec::with_capacity(p.k);
    let mut zs = Vec::with_capacity(p.k);
    for layer in 0..p.k {
        let z_values: Vec<f64> = x
            .values()
            .iter()
            .zip(&p.w)
            .zip(drive.values())
            .map(|((&xv, &wv), &sv)| wv * xv + p.mu * sv)
            .collect();
        let z = Sinogram::new(r0.geometry().clone(), z_values).map_err(|_| Error::NonFinite {
            what: "unrolled forward intermediate".into(),
            step: layer,
        })?;
        let next = cauchy_prox(&z, prox);
        if next.first_non_finite().is_some() {
            return Err(Error::NonFinite { what: "unrolled forward output".into(), step: layer });
        }
        xs.push(x);
        zs.push(z);
        x = next;
    }
    let trace = ForwardTrace { xs, zs, drive: drive.clone() };
    Ok((x, trace))
}

/// Where the loss attaches when walking the layers backwards.
enum Seed<'a> {
    /// Gradient w.r.t. the final post-prox output `x̂`.
    AtFinalX(&'a Sinogram),
    /// Gradient w.r.t. the final pre-prox intermediate `z^{k−1}`.
    AtFinalZ(&'a Sinogram),
}

/// Reverse-mode gradients `(dW, dμ)` of a scalar loss through the unrolled
/// forward pass, with `W` and `μ` shared across layers.
pub fn ducps_backward(
    trace: &ForwardTrace,
    d_loss_d_x_final: &Sinogram,
    p: &DucpsParams,
) -> Result<(Vec<f64>, f64)> {
    backward_impl(trace, Seed::AtFinalX(d_loss_d_x_final), p)
}

/// Reverse-mode gradients when the loss is defined on the last pre-prox
/// intermediate instead of the final output.
pub fn ducps_backward_from_final_z(
    trace: &ForwardTrace,
    d_loss_d_z_final: &Sinogram,
    p: &DucpsParams,
) -> Result<(Vec<f64>, f64)> {
    backward_impl(trace, Seed::AtFinalZ(d_loss_d_z_final), p)
}

fn backward_impl(trace: &ForwardTrace, seed: Seed<'_>, p: &DucpsParams) -> Result<(Vec<f64>, f64)> {
    let k = p.k;
    if trace.xs.len() != k || trace.zs.len() != k {
        return Err(Error::Dimension(format!(
            "trace holds {} layers, parameters expect {k}",
            trace.xs.len()
        )));
    }
    let n = p.w.len();
    let seed_grid = match &seed {
        Seed::AtFinalX(g) => *g,
        Seed::AtFinalZ(g) => *g,
    };
    if seed_grid.values().len() != n {
        return Err(Error::Dimension("loss gradient does not match parameter shape".into()));
    }
    let s = trace.drive.values();
    let mut d_w = vec![0.0f64; n];
    let mut d_mu = 0.0f64;
    let mut g_x: Vec<f64>;

    // Top layer: with a pre-prox seed the prox derivative is skipped.
    let top = k - 1;
    match seed {
        Seed::AtFinalZ(g) => {
            let x = trace.xs[top].values();
            let mut g_prev = vec![0.0f64; n];
            for i in 0..n {
                let gz = g.values()[i];
                d_w[i] += x[i] * gz;
                d_mu += s[i] * gz;
                g_prev[i] = p.w[i] * gz;
            }
            g_x = g_prev;
        }
        Seed::AtFinalX(g) => {
            g_x = g.values().to_vec();
            accumulate_layer(trace, top, p, s, &mut d_w, &mut d_mu, &mut g_x);
        }
    }
    for layer in (0..top).rev() {
        accumulate_layer(trace, layer, p, s, &mut d_w, &mut d_mu, &mut g_x);
    }
    Ok((d_w, d_mu))
}

/// One reverse step through `x⁺ = prox(W ⊙ x + μ·s)`, updating the running
/// gradients in place. Sequential so the accumulation order is fixed.
fn accumulate_layer(
    trace: &ForwardTrace,
    layer: usize,
    p: &DucpsParams,
    s: &[f64],
    d_w: &mut [f64],
    d_mu: &mut f64,
    g_x: &mut Vec<f64>,
) {
    let z = trace.zs[layer].values();
    let x = trace.xs[layer].values();
    let mut g_prev = vec![0.0f64; g_x.len()];
    for i in 0..g_x.len() {
        let u = cauchy::solve_prox_cubic(z[i], p.gamma, p.mu);
        let (du_dz, du_dmu) = prox_grads_or_fd(z[i], u, p.gamma, p.mu);
        let gz = du_dz * g_x[i];
        d_w[i] += x[i] * gz;
        *d_mu += s[i] * gz + du_dmu * g_x[i];
        g_prev[i] = p.w[i] * gz;
    }
    *g_x = g_prev;
}

/// Largest gain of the composed reconstruct→project map, by `iters` power
/// iterations from a seeded random grid. Used to pick a stable step size
/// `μ = 0.5 / L` for the classic solver.
pub fn estimate_operator_norm(geo: &Geometry, iters: usize, seed: u64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = geo.n_r() * geo.n_angles();
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut v = Sinogram::new(geo.clone(), values)?;
    let mut gain = 1.0;
    for _ in 0..iters {
        let norm = v.norm().max(1e-300);
        let scaled =
            Sinogram::new(geo.clone(), v.values().iter().map(|&x| x / norm).collect())?;
        v = forward_radon(&inverse_radon(&scaled), geo)?;
        gain = v.norm();
    }
    Ok(gain)
}

/// Iterate gradient + proximal steps on the observed image until the
/// relative change drops below `tol` or `max_iter` is reached.
///
/// Returns the final Radon-domain estimate and the iteration count.
pub fn cps_solve(
    y: &Image,
    geo: &Geometry,
    gamma: f64,
    mu: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(Sinogram, usize)> {
    if !(gamma > 0.0) || !(mu > 0.0) {
        return Err(Error::Config(format!("cps needs positive gamma and mu, got {gamma}, {mu}")));
    }
    if max_iter == 0 {
        return Err(Error::Config("cps needs max_iter >= 1".into()));
    }
    let prox = ProxParams { gamma, mu };
    let mut x = forward_radon(y, geo)?;
    for iter in 1..=max_iter {
        let recon = inverse_radon(&x);
        let residual = Image::from_fn(recon.height(), recon.width(), |r, c| {
            recon.get(r, c) - y.get(r, c)
        });
        let grad = forward_radon(&residual, geo)?;
        let z_values: Vec<f64> = x
            .values()
            .iter()
            .zip(grad.values())
            .map(|(&xv, &gv)| xv - mu * gv)
            .collect();
        let z = Sinogram::new(geo.clone(), z_values)
            .map_err(|_| Error::NonFinite { what: "cps gradient step".into(), step: iter })?;
        let next = cauchy_prox(&z, prox);
        if next.first_non_finite().is_some() {
            return Err(Error::NonFinite { what: "cps proximal step".into(), step: iter });
        }
        let prev_norm = x.norm();
        let delta = next.sub(&x)?.norm();
        x = next;
        let rel = if prev_norm > 0.0 {
            delta / prev_norm
        } else if delta == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if rel < tol {
            return Ok((x, iter));
        }
    }
    Ok((x, max_iter))
}

/// Serialize parameters: 4-byte magic, `version, Nr, Nω, k` as u32 LE,
/// `γ, μ` as f64 LE, then the weight field as f32 LE, row-major.
pub fn save_params(p: &DucpsParams, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |res: std::io::Result<()>| res.map_err(|e| Error::io(path, e));
    emit(w.write_all(PARAMS_MAGIC))?;
    emit(w.write_all(&PARAMS_VERSION.to_le_bytes()))?;
    emit(w.write_all(&(p.geometry.n_r() as u32).to_le_bytes()))?;
    emit(w.write_all(&(p.geometry.n_angles() as u32).to_le_bytes()))?;
    emit(w.write_all(&(p.k as u32).to_le_bytes()))?;
    emit(w.write_all(&p.gamma.to_le_bytes()))?;
    emit(w.write_all(&p.mu.to_le_bytes()))?;
    for &v in &p.w {
        emit(w.write_all(&(v as f32).to_le_bytes()))?;
    }
    emit(w.flush())
}

/// Load parameters saved by [`save_params`]; the stored grid must match
/// `geo`.
pub fn load_params(path: &Path, geo: &Geometry) -> Result<DucpsParams> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 36 {
        return Err(Error::Format(format!(
            "{}: parameter file shorter than its 36-byte header",
            path.display()
        )));
    }
    if &bytes[0..4] != PARAMS_MAGIC {
        return Err(Error::Format(format!("{}: bad parameter magic", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PARAMS_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported parameter version {version} (expected {PARAMS_VERSION})",
            path.display()
        )));
    }
    let nr = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let nw = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let gamma = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let mu = f64::from_le_bytes(bytes[28..36].try_into().unwrap());
    if nr != geo.n_r() || nw != geo.n_angles() {
        return Err(Error::Dimension(format!(
            "parameter file is {}x{}, geometry expects {}x{}",
            nr,
            nw,
            geo.n_r(),
            geo.n_angles()
        )));
    }
    let need = 36 + 4 * nr * nw;
    if bytes.len() < need {
        return Err(Error::Format(format!(
            "{}: parameter file truncated ({} of {} bytes)",
            path.display(),
            bytes.len(),
            need
        )));
    }
    let w = bytes[36..need]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    DucpsParams::new(geo.clone(), w, mu, gamma, k)
}
