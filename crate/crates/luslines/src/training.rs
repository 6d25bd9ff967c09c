//! Unsupervised losses and the parameter-fitting loop.
//!
//! Two losses are available, neither needing labels: a structural-similarity
//! loss between the reconstruction of the last pre-prox intermediate and the
//! input image, and a neighbor-pair loss that splits the Radon grid of a
//! single noisy input into two half-resolution views and trains one to
//! predict the other, with a consistency regularizer.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::radon::{forward_radon, inverse_radon, inverse_radon_adjoint};
use crate::solvers::{
    ducps_backward, ducps_backward_from_final_z, ducps_forward, ducps_init, DucpsParams,
    DEFAULT_LAYERS,
};
use crate::{Error, Geometry, Image, Result, Sinogram};

/// Which unsupervised loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ssim,
    N2n,
}

/// Which update rule moves the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Per-parameter moment scaling, decays 0.9/0.999, ε = 1e-8.
    Adam,
    /// Plain gradient descent.
    Sgd,
}

fn default_epochs() -> usize {
    20
}
fn default_lr0() -> f64 {
    1e-4
}
fn default_halve() -> usize {
    5
}
fn default_alpha() -> f64 {
    1.0
}
fn default_batch() -> usize {
    1
}
fn default_layers() -> usize {
    DEFAULT_LAYERS
}
fn default_optimizer() -> Optimizer {
    Optimizer::Adam
}

/// Training hyperparameters; JSON-loadable with full defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    /// Learning rate halves every this many epochs.
    #[serde(default = "default_halve")]
    pub lr_halve_every: usize,
    /// Regularizer weight of the neighbor-pair loss.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub loss_kind: LossKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Fixed prior scale; defaults to `0.1 · max` over the projected inputs.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.lr_halve_every == 0 {
            return Err(Error::Config("lr_halve_every must be >= 1".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.batch != 1 {
            return Err(Error::Config("only batch = 1 is supported".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be >= 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Schedule: `lr(e) = lr0 · 0.5^⌊e / lr_halve_every⌋`, epochs 0-based.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr0 * 0.5f64.powi((epoch / self.lr_halve_every) as i32)
    }
}

// ---------------------------------------------------------------------------
// Structural similarity
// ---------------------------------------------------------------------------

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode separable correlation with the Gaussian window: rows first,
/// then columns. Output is `(h−10) × (w−10)`.
fn conv_valid(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            let mut acc = 0.0;
            for (j, wj) in win.iter().enumerate() {
                acc += wj * src[r * w + c + j];
            }
            rows[r * wo + c] = acc;
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            let mut acc = 0.0;
            for (j, wj) in win.iter().enumerate() {
                acc += wj * rows[(r + j) * wo + c];
            }
            out[r * wo + c] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: spread window-position values back onto the
/// pixel grid (columns first, then rows, mirroring the forward order).
fn scatter_full(src: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wo = w - SSIM_WINDOW + 1;
    let ho = h - SSIM_WINDOW + 1;
    let mut cols = vec![0.0; h * wo];
    for r in 0..ho {
        for c in 0..wo {
            let v = src[r * wo + c];
            for (j, wj) in win.iter().enumerate() {
                cols[(r + j) * wo + c] += wj * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..wo {
            let v = cols[r * wo + c];
            for (j, wj) in win.iter().enumerate() {
                out[r * w + c + j] += wj * v;
            }
        }
    }
    out
}

struct SsimFields {
    value: f64,
    // Per-window quantities needed by the gradient.
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    s_map: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn ssim_fields(a: &Image, b: &Image) -> Result<SsimFields> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Dimension(format!(
            "ssim inputs differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let ap = a.pixels();
    let bp = b.pixels();
    let aa: Vec<f64> = ap.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bp.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ap.iter().zip(bp).map(|(x, y)| x * y).collect();

    let mu_a = conv_valid(ap, h, w, &win);
    let mu_b = conv_valid(bp, h, w, &win);
    let m_aa = conv_valid(&aa, h, w, &win);
    let m_bb = conv_valid(&bb, h, w, &win);
    let m_ab = conv_valid(&ab, h, w, &win);

    let n = mu_a.len();
    let mut s_map = vec![0.0; n];
    let mut a1 = vec![0.0; n];
    let mut a2 = vec![0.0; n];
    let mut b1 = vec![0.0; n];
    let mut b2 = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        let va = m_aa[i] - mu_a[i] * mu_a[i];
        let vb = m_bb[i] - mu_b[i] * mu_b[i];
        let cov = m_ab[i] - mu_a[i] * mu_b[i];
        a1[i] = 2.0 * mu_a[i] * mu_b[i] + SSIM_C1;
        a2[i] = 2.0 * cov + SSIM_C2;
        b1[i] = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + SSIM_C1;
        b2[i] = va + vb + SSIM_C2;
        s_map[i] = (a1[i] * a2[i]) / (b1[i] * b2[i]);
        total += s_map[i];
    }
    Ok(SsimFields { value: total / n as f64, mu_a, mu_b, s_map, a1, a2, b1, b2 })
}

/// Mean local structural similarity over 11×11 Gaussian windows
/// (σ = 1.5, unit dynamic range constants).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    Ok(ssim_fields(a, b)?.value)
}

/// Mean SSIM and its gradient with respect to the first image.
pub fn ssim_and_grad(a: &Image, b: &Image) -> Result<(f64, Image)> {
    let f = ssim_fields(a, b)?;
    let (h, w) = (a.height(), a.width());
    let win = gaussian_window();
    let n = f.s_map.len() as f64;

    // d S(p) / d a(q) = w(q−p)·[G1 + G2·(b(q)−μb) − G3·(a(q)−μa)] with
    // G1 = 2S(μb/A1 − μa/B1), G2 = 2S/A2, G3 = 2S/B2.
    let len = f.s_map.len();
    let mut g1 = vec![0.0; len];
    let mut g2 = vec![0.0; len];
    let mut g3 = vec![0.0; len];
    let mut g2_mub = vec![0.0; len];
    let mut g3_mua = vec![0.0; len];
    for i in 0..len {
        let s = f.s_map[i];
        g1[i] = 2.0 * s * (f.mu_b[i] / f.a1[i] - f.mu_a[i] / f.b1[i]);
        g2[i] = 2.0 * s / f.a2[i];
        g3[i] = 2.0 * s / f.b2[i];
        g2_mub[i] = g2[i] * f.mu_b[i];
        g3_mua[i] = g3[i] * f.mu_a[i];
    }
    let t1 = scatter_full(&g1, h, w, &win);
    let t2 = scatter_full(&g2, h, w, &win);
    let t3 = scatter_full(&g3, h, w, &win);
    let t4 = scatter_full(&g2_mub, h, w, &win);
    let t5 = scatter_full(&g3_mua, h, w, &win);

    let ap = a.pixels();
    let bp = b.pixels();
    let grad: Vec<f64> = (0..h * w)
        .map(|q| (t1[q] + bp[q] * t2[q] - t4[q] - ap[q] * t3[q] + t5[q]) / n)
        .collect();
    Ok((f.value, Image::new(h, w, grad)?))
}

/// Similarity loss on a Radon-domain grid: `1 − SSIM(R⁻¹(z), y)` with its
/// gradient pulled back through the exact adjoint of the reconstruction.
pub fn ssim_loss_and_grad(z: &Sinogram, y: &Image) -> Result<(f64, Sinogram)> {
    let recon = inverse_radon(z);
    if recon.height() != y.height() || recon.width() != y.width() {
        return Err(Error::Dimension(format!(
            "reconstruction {}x{} does not match target {}x{}",
            recon.height(),
            recon.width(),
            y.height(),
            y.width()
        )));
    }
    let (value, grad_img) = ssim_and_grad(&recon, y)?;
    let neg = Image::new(
        grad_img.height(),
        grad_img.width(),
        grad_img.pixels().iter().map(|v| -v).collect(),
    )?;
    let d_z = inverse_radon_adjoint(&neg, z.geometry())?;
    Ok((1.0 - value, d_z))
}

// ---------------------------------------------------------------------------
// Neighbor sub-sampling
// ---------------------------------------------------------------------------

/// Two half-resolution views of one grid plus the source index of every
/// output cell.
#[derive(Debug, Clone)]
pub struct SubsamplePair {
    pub g1: Sinogram,
    pub g2: Sinogram,
    /// Flat parent index feeding each `g1` cell.
    pub map1: Vec<usize>,
    /// Flat parent index feeding each `g2` cell.
    pub map2: Vec<usize>,
}

/// Sampling lattice for a decimated ⌊Nr/2⌋×⌊Nω/2⌋ grid. The grid carries no
/// projection geometry of its own; this just gives the container a
/// consistent shape for the elementwise network ops.
pub fn sub_geometry(parent: &Geometry) -> Result<Geometry> {
    let nr = parent.n_r() / 2;
    let nw = parent.n_angles() / 2;
    if nr < 1 || nw < 1 {
        return Err(Error::Dimension("grid smaller than 2x2 cannot be sub-sampled".into()));
    }
    Ok(Geometry::lattice(nr, nw, parent.r_step()))
}

/// Ordered adjacent cell pairs of a 2×2 block, as (first, second) corner
/// offsets `(dr, dc)`. Diagonals excluded.
const ADJACENT_PAIRS: [((usize, usize), (usize, usize)); 8] = [
    ((0, 0), (0, 1)),
    ((0, 1), (0, 0)),
    ((1, 0), (1, 1)),
    ((1, 1), (1, 0)),
    ((0, 0), (1, 0)),
    ((1, 0), (0, 0)),
    ((0, 1), (1, 1)),
    ((1, 1), (0, 1)),
];

/// Split a grid into two half-resolution neighbor views.
///
/// The grid is tiled by disjoint 2×2 blocks (odd edges truncated); in each
/// block one of the eight ordered horizontally- or vertically-adjacent cell
/// pairs is drawn uniformly, the first cell feeding `g1` and the second
/// `g2`. Deterministic for a given seed.
pub fn neighbor_subsample(s: &Sinogram, seed: u64) -> Result<SubsamplePair> {
    let nr = s.n_r();
    let nw = s.n_angles();
    if nr < 2 || nw < 2 {
        return Err(Error::Dimension("grid smaller than 2x2 cannot be sub-sampled".into()));
    }
    let geo = sub_geometry(s.geometry())?;
    let (hr, hw) = (nr / 2, nw / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map1 = Vec::with_capacity(hr * hw);
    let mut map2 = Vec::with_capacity(hr * hw);
    for bi in 0..hr {
        for bk in 0..hw {
            let (first, second) = ADJACENT_PAIRS[rng.random_range(0..ADJACENT_PAIRS.len())];
            map1.push((2 * bi + first.0) * nw + 2 * bk + first.1);
            map2.push((2 * bi + second.0) * nw + 2 * bk + second.1);
        }
    }
    let g1 = Sinogram::new(geo.clone(), map1.iter().map(|&i| s.values()[i]).collect())?;
    let g2 = Sinogram::new(geo, map2.iter().map(|&i| s.values()[i]).collect())?;
    Ok(SubsamplePair { g1, g2, map1, map2 })
}

// ---------------------------------------------------------------------------
// Neighbor-pair loss
// ---------------------------------------------------------------------------

/// The regularizer target `g1(f(r)) − g2(f(r))`, computed on the full grid
/// and sub-sampled with the same maps as the training pair. Held constant
/// during differentiation.
pub fn n2n_reg_target(p: &DucpsParams, r: &Sinogram, seed: u64) -> Result<Sinogram> {
    let (full_out, _) = ducps_forward(r, r, p)?;
    let pair = neighbor_subsample(r, seed)?;
    let values: Vec<f64> = pair
        .map1
        .iter()
        .zip(&pair.map2)
        .map(|(&i1, &i2)| full_out.values()[i1] - full_out.values()[i2])
        .collect();
    Sinogram::new(pair.g1.geometry().clone(), values)
}

/// Neighbor-pair loss and gradients with an explicit (frozen) regularizer
/// target; see [`n2n_loss_and_grads`] for the composed form.
pub fn n2n_loss_given_target(
    p: &DucpsParams,
    r: &Sinogram,
    alpha: f64,
    seed: u64,
    target: &Sinogram,
) -> Result<(f64, Vec<f64>, f64)> {
    let pair = neighbor_subsample(r, seed)?;
    let sub_geo = pair.g1.geometry().clone();
    let p_sub = p.gather(sub_geo.clone(), &pair.map1)?;
    let (out, trace) = ducps_forward(&pair.g1, &pair.g1, &p_sub)?;

    let n = out.values().len();
    let mut loss = 0.0;
    let mut d_out = vec![0.0; n];
    for i in 0..n {
        let e_rec = out.values()[i] - pair.g2.values()[i];
        let e_reg = e_rec - target.values()[i];
        loss += e_rec * e_rec + alpha * e_reg * e_reg;
        d_out[i] = 2.0 * e_rec + 2.0 * alpha * e_reg;
    }
    let d_out = Sinogram::new(sub_geo, d_out)?;
    let (d_w_sub, d_mu) = ducps_backward(&trace, &d_out, &p_sub)?;

    let mut d_w = vec![0.0; p.w().len()];
    for (cell, &src) in pair.map1.iter().enumerate() {
        d_w[src] += d_w_sub[cell];
    }
    Ok((loss, d_w, d_mu))
}

/// Neighbor-pair loss
/// `‖f(g1) − g2‖² + α·‖f(g1) − g2 − (g1(f(r)) − g2(f(r)))‖²`
/// with gradients w.r.t. the shared parameters. The parenthesized term is a
/// constant target. On the half-resolution branch the weight field is
/// gathered through the same index map as `g1`, and the drive equals the
/// branch input.
pub fn n2n_loss_and_grads(
    p: &DucpsParams,
    r: &Sinogram,
    alpha: f64,
    seed: u64,
) -> Result<(f64, Vec<f64>, f64)> {
    let target = n2n_reg_target(p, r, seed)?;
    n2n_loss_given_target(p, r, alpha, seed, &target)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Per-epoch record of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Write the loss history as `epoch,mean_loss,lr` CSV.
pub fn write_loss_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut text = String::from("epoch,mean_loss,lr\n");
    for row in history {
        text.push_str(&format!("{},{:.12e},{:.12e}\n", row.epoch, row.mean_loss, row.lr));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    m_mu: f64,
    v_mu: f64,
    t: u64,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const POSITIVITY_FLOOR: f64 = 1e-8;

fn apply_update(
    params: &mut DucpsParams,
    d_w: &[f64],
    d_mu: f64,
    lr: f64,
    opt: Optimizer,
    state: &mut AdamState,
) {
    match opt {
        Optimizer::Sgd => {
            for (w, g) in params.w_mut().iter_mut().zip(d_w) {
                *w -= lr * g;
            }
            params.mu -= lr * d_mu;
        }
        Optimizer::Adam => {
            state.t += 1;
            let bc1 = 1.0 - ADAM_B1.powi(state.t as i32);
            let bc2 = 1.0 - ADAM_B2.powi(state.t as i32);
            for i in 0..d_w.len() {
                state.m[i] = ADAM_B1 * state.m[i] + (1.0 - ADAM_B1) * d_w[i];
                state.v[i] = ADAM_B2 * state.v[i] + (1.0 - ADAM_B2) * d_w[i] * d_w[i];
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                params.w_mut()[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            state.m_mu = ADAM_B1 * state.m_mu + (1.0 - ADAM_B1) * d_mu;
            state.v_mu = ADAM_B2 * state.v_mu + (1.0 - ADAM_B2) * d_mu * d_mu;
            params.mu -= lr * (state.m_mu / bc1) / ((state.v_mu / bc2).sqrt() + ADAM_EPS);
        }
    }
    // Positivity is a hard constraint; project after every step.
    for w in params.w_mut().iter_mut() {
        *w = w.max(POSITIVITY_FLOOR);
    }
    params.mu = params.mu.max(POSITIVITY_FLOOR);
}

/// Fit `(W, μ)` on a dataset of images sharing one geometry.
///
/// One gradient step per image per epoch, in dataset order. Returns the
/// final parameters and the per-epoch mean loss.
pub fn train(
    dataset: &[Image],
    cfg: &TrainConfig,
    geo: &Geometry,
) -> Result<(DucpsParams, Vec<EpochStats>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut projected = Vec::with_capacity(dataset.len());
    for y in dataset {
        projected.push(forward_radon(y, geo)?);
    }
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => {
            let max = projected.iter().map(|r| r.max_value()).fold(f64::NEG_INFINITY, f64::max);
            if max <= 0.0 {
                return Err(Error::Config(
                    "cannot derive gamma from an all-nonpositive dataset; set it explicitly".into(),
                ));
            }
            0.1 * max
        }
    };
    let mut params = ducps_init(geo, gamma, cfg.layers)?;
    let mut state = AdamState {
        m: vec![0.0; params.w().len()],
        v: vec![0.0; params.w().len()],
        m_mu: 0.0,
        v_mu: 0.0,
        t: 0,
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let mut loss_sum = 0.0;
        for (i, (y, r)) in dataset.iter().zip(&projected).enumerate() {
            let step = epoch * dataset.len() + i;
            let (loss, d_w, d_mu) = match cfg.loss_kind {
                LossKind::N2n => {
                    let step_seed = cfg.seed.wrapping_add(step as u64);
                    n2n_loss_and_grads(&params, r, cfg.alpha, step_seed)?
                }
                LossKind::Ssim => {
                    let (_, trace) = ducps_forward(r, r, &params)?;
                    let z_last = &trace.zs[params.k - 1];
                    let (loss, d_z) = ssim_loss_and_grad(z_last, y)?;
                    let (d_w, d_mu) = ducps_backward_from_final_z(&trace, &d_z, &params)?;
                    (loss, d_w, d_mu)
                }
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: format!("epoch {epoch} loss"), step });
            }
            loss_sum += loss;
            apply_update(&mut params, &d_w, d_mu, lr, cfg.optimizer, &mut state);
        }
        history.push(EpochStats { epoch, mean_loss: loss_sum / dataset.len() as f64, lr });
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn test_geo() -> Geometry {
        Geometry::new(10, 18.0, -12.0, 12.0, 1.6, 16, 16).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = StdRng::seed_from_u64(seed);
        let pixels = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        Image::new(h, w, pixels).unwrap()
    }

    fn random_grid(geo: &Geometry, seed: u64, lo: f64, hi: f64) -> Sinogram {
        let mut rng = StdRng::seed_from_u64(seed);
        let n = geo.n_r() * geo.n_angles();
        let values = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Sinogram::new(geo.clone(), values).unwrap()
    }

    #[test]
    fn ssim_self_is_one() {
        let a = random_image(20, 24, 1);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_anticorrelated_is_negative() {
        let a = Image::from_fn(20, 20, |r, c| ((r / 2 + c / 2) % 2) as f64);
        let b = Image::from_fn(20, 20, |r, c| 1.0 - a.get(r, c));
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_constant_pair_closed_form() {
        let ca = 0.4;
        let cb = 0.5;
        let a = Image::from_fn(16, 16, |_, _| ca);
        let b = Image::from_fn(16, 16, |_, _| cb);
        // Zero variances leave only the luminance term.
        let want = (2.0 * ca * cb + SSIM_C1) / (ca * ca + cb * cb + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_mismatch() {
        let a = Image::zeros(16, 16);
        let b = Image::zeros(16, 18);
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_grad_matches_fd() {
        let a = random_image(14, 13, 3);
        let b = random_image(14, 13, 4);
        let (_, grad) = ssim_and_grad(&a, &b).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for q in (0..14 * 13).step_by(7) {
            let mut ap = a.clone();
            ap.pixels_mut()[q] += h;
            let plus = ssim(&ap, &b).unwrap();
            ap.pixels_mut()[q] -= 2.0 * h;
            let minus = ssim(&ap, &b).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((grad.pixels()[q] - fd).abs() / fd.abs().max(1e-6));
        }
        assert!(worst <= 1e-4, "ssim gradient off by {worst}");
    }

    #[test]
    fn ssim_loss_zero_iff_identical() {
        let geo = test_geo();
        let z = random_grid(&geo, 5, 0.0, 1.0);
        let y = inverse_radon(&z);
        let (loss, _) = ssim_loss_and_grad(&z, &y).unwrap();
        assert!(loss.abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn ssim_loss_grad_matches_fd() {
        // 8 offsets x 10 angles over a 16x16 image.
        let geo = Geometry::new(10, 18.0, -12.25, 12.25, 3.5, 16, 16).unwrap();
        assert_eq!(geo.n_r(), 8);
        let z = random_grid(&geo, 6, 0.0, 1.0);
        let y = random_image(16, 16, 7);
        let (_, d_z) = ssim_loss_and_grad(&z, &y).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..z.values().len() {
            let mut zp = z.clone();
            zp.values_mut()[i] += h;
            let (plus, _) = ssim_loss_and_grad(&zp, &y).unwrap();
            zp.values_mut()[i] -= 2.0 * h;
            let (minus, _) = ssim_loss_and_grad(&zp, &y).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((d_z.values()[i] - fd).abs() / fd.abs().max(1e-6));
        }
        assert!(worst <= 1e-3, "loss gradient off by {worst}");
    }

    #[test]
    fn subsample_constant_input() {
        let geo = test_geo();
        let s = Sinogram::from_fn(geo, |_, _| 0.7);
        let pair = neighbor_subsample(&s, 9).unwrap();
        assert!(pair.g1.values().iter().all(|&v| v == 0.7));
        assert!(pair.g2.values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn subsample_maps_disjoint_and_in_block() {
        let geo = test_geo();
        let s = random_grid(&geo, 10, 0.0, 1.0);
        let nw = s.n_angles();
        let pair = neighbor_subsample(&s, 11).unwrap();
        for (cell, (&i1, &i2)) in pair.map1.iter().zip(&pair.map2).enumerate() {
            assert_ne!(i1, i2);
            let hw = nw / 2;
            let (bi, bk) = (cell / hw, cell % hw);
            for &i in [&i1, &i2] {
                let (r, c) = (i / nw, i % nw);
                assert_eq!(r / 2, bi);
                assert_eq!(c / 2, bk);
            }
            // Adjacent, not diagonal.
            let (r1, c1) = (i1 / nw, i1 % nw);
            let (r2, c2) = (i2 / nw, i2 % nw);
            assert_eq!((r1 == r2) as u8 + (c1 == c2) as u8, 1);
        }
    }

    #[test]
    fn subsample_reproducible() {
        let geo = test_geo();
        let s = random_grid(&geo, 12, 0.0, 1.0);
        let a = neighbor_subsample(&s, 42).unwrap();
        let b = neighbor_subsample(&s, 42).unwrap();
        assert_eq!(a.map1, b.map1);
        assert_eq!(a.map2, b.map2);
        assert_eq!(a.g1.values(), b.g1.values());
    }

    #[test]
    fn subsample_pair_frequencies_uniform() {
        // One 2x2 block; each of the 8 ordered adjacent pairs should appear
        // with frequency 1/8 ± 0.02 over many seeds.
        let geo = Geometry::new(2, 90.0, -2.0, 2.0, 4.0, 1, 1).unwrap();
        assert_eq!(geo.n_r(), 2);
        assert_eq!(geo.n_angles(), 2);
        let s = Sinogram::from_fn(geo, |i, k| (i * 2 + k) as f64);
        let mut counts = std::collections::HashMap::new();
        let trials = 10_000;
        for seed in 0..trials {
            let pair = neighbor_subsample(&s, seed).unwrap();
            *counts.entry((pair.map1[0], pair.map2[0])).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        for (&key, &count) in &counts {
            let freq = count as f64 / trials as f64;
            assert!((freq - 0.125).abs() <= 0.02, "pair {key:?} frequency {freq}");
        }
    }

    #[test]
    fn subsample_rejects_tiny_grid() {
        let geo = Geometry::new(1, 180.0, -1.0, 1.0, 2.0, 1, 1).unwrap();
        let s = Sinogram::zeros(geo);
        assert!(neighbor_subsample(&s, 0).is_err());
    }

    #[test]
    fn n2n_constant_input_near_zero_loss() {
        let geo = test_geo();
        let s = Sinogram::from_fn(geo.clone(), |_, _| 0.6);
        let p = ducps_init(&geo, 1.0, DEFAULT_LAYERS).unwrap();
        let (loss, _, _) = n2n_loss_and_grads(&p, &s, 1.0, 3).unwrap();
        assert!(loss <= 1e-6, "loss {loss}");
    }

    #[test]
    fn n2n_alpha_zero_is_pure_reconstruction() {
        let geo = test_geo();
        let r = random_grid(&geo, 13, 0.1, 1.0);
        let p = ducps_init(&geo, 0.1, 3).unwrap();
        let (loss, _, _) = n2n_loss_and_grads(&p, &r, 0.0, 5).unwrap();
        let pair = neighbor_subsample(&r, 5).unwrap();
        let p_sub = p.gather(pair.g1.geometry().clone(), &pair.map1).unwrap();
        let (out, _) = ducps_forward(&pair.g1, &pair.g1, &p_sub).unwrap();
        let manual: f64 = out
            .values()
            .iter()
            .zip(pair.g2.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert_eq!(loss, manual);
    }

    #[test]
    fn n2n_grads_match_fd() {
        // 8 offsets x 10 angles; frozen regularizer target during the check.
        let geo = Geometry::new(10, 18.0, -12.25, 12.25, 3.5, 16, 16).unwrap();
        let r = random_grid(&geo, 21, 0.1, 1.0);
        let mut rng = StdRng::seed_from_u64(77);
        let n = geo.n_r() * geo.n_angles();
        let w0: Vec<f64> = (0..n).map(|_| rng.random_range(0.7..1.3)).collect();
        let mk = |w: Vec<f64>, mu: f64| DucpsParams::new(geo.clone(), w, mu, 0.25, 7).unwrap();
        let p = mk(w0.clone(), 0.15);
        let seed = 4;
        let alpha = 1.0;
        let target = n2n_reg_target(&p, &r, seed).unwrap();
        let (_, d_w, d_mu) = n2n_loss_given_target(&p, &r, alpha, seed, &target).unwrap();

        let eval = |p: &DucpsParams| {
            n2n_loss_given_target(p, &r, alpha, seed, &target).unwrap().0
        };
        let h = 1e-6;
        let pair = neighbor_subsample(&r, seed).unwrap();
        let mut checked = 0;
        for i in 0..n {
            let mut wp = w0.clone();
            wp[i] += h;
            let plus = eval(&mk(wp.clone(), 0.15));
            wp[i] -= 2.0 * h;
            let minus = eval(&mk(wp, 0.15));
            let fd = (plus - minus) / (2.0 * h);
            if !pair.map1.contains(&i) {
                assert_eq!(d_w[i], 0.0, "cell {i} outside the sampled map must be zero");
                assert!(fd.abs() < 1e-9);
                continue;
            }
            let rel = (d_w[i] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel <= 1e-3, "dW[{i}] {} vs fd {} rel {rel}", d_w[i], fd);
            checked += 1;
        }
        assert_eq!(checked, pair.map1.len(), "every sampled cell must be checked");
        let plus = eval(&mk(w0.clone(), 0.15 + h));
        let minus = eval(&mk(w0, 0.15 - h));
        let fd = (plus - minus) / (2.0 * h);
        let rel = (d_mu - fd).abs() / fd.abs().max(1e-6);
        assert!(rel <= 1e-3, "dmu {d_mu} vs fd {fd} rel {rel}");
    }

    #[test]
    fn lr_schedule_exact() {
        let cfg = TrainConfig {
            epochs: 20,
            lr0: 1e-4,
            lr_halve_every: 5,
            alpha: 1.0,
            loss_kind: LossKind::N2n,
            seed: 0,
            batch: 1,
            layers: 7,
            gamma: None,
            optimizer: Optimizer::Adam,
        };
        for e in 0..20 {
            assert_eq!(cfg.lr_at_epoch(e), 1e-4 * 0.5f64.powi((e / 5) as i32));
        }
    }

    #[test]
    fn config_rejects_zero_epochs() {
        let mut cfg = TrainConfig {
            epochs: 0,
            lr0: 1e-4,
            lr_halve_every: 5,
            alpha: 1.0,
            loss_kind: LossKind::Ssim,
            seed: 0,
            batch: 1,
            layers: 7,
            gamma: None,
            optimizer: Optimizer::Adam,
        };
        assert!(cfg.validate().is_err());
        cfg.epochs = 1;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn train_deterministic_and_positive() {
        let geo = test_geo();
        let dataset: Vec<Image> = (0..3)
            .map(|i| {
                Image::from_fn(16, 16, move |r, c| {
                    if r == 5 + i { 0.8 } else { 0.02 * ((c % 5) as f64) }
                })
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 3,
            lr0: 1e-3,
            lr_halve_every: 5,
            alpha: 1.0,
            loss_kind: LossKind::N2n,
            seed: 11,
            batch: 1,
            layers: 3,
            gamma: None,
            optimizer: Optimizer::Adam,
        };
        let (p1, h1) = train(&dataset, &cfg, &geo).unwrap();
        let (p2, h2) = train(&dataset, &cfg, &geo).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1.w(), p2.w());
        assert!(p1.w().iter().all(|&v| v > 0.0));
        assert!(p1.mu > 0.0);
    }
}
