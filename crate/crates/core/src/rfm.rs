//! Rigidity from motion.
//!
//! The disagreement between optical and rigid flow is normalized into a
//! correlation map, summarized by a 100-bin histogram, and a small MLP maps
//! the histogram to a decision boundary. A sigmoid gate around that boundary
//! gives the soft rigid map. The MLP is trained without labels by minimizing
//! the rigid-region photometric error plus an area-ratio penalty that keeps
//! the rigid region from collapsing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::grid::{FlowField, Image, PixelMask, ScalarMap};
use crate::photometric::{photometric_error, warp_with_fallback, PhotometricConfig};

pub const HISTOGRAM_BINS: usize = 100;
pub const HIDDEN_UNITS: usize = 32;
pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Residual range below which the correlation map is all zeros.
const DEGENERATE_RANGE: f64 = 1e-9;
const EM_MAX_ITERS: usize = 500;
const EM_TOL: f64 = 1e-10;

/// Min-max normalized `|F_o − F_r|`, in `[0, 1]`.
pub fn correlation_map(optical: &FlowField, rigid: &FlowField) -> Result<ScalarMap> {
    let raw = optical.zip_map(rigid, |a, b| (a - b).norm())?;
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    if raw.is_empty() || !(hi - lo >= DEGENERATE_RANGE) {
        return Ok(raw.map(|_| 0.0));
    }
    let span = hi - lo;
    Ok(raw.map(|x| ((x - lo) / span).clamp(0.0, 1.0)))
}

/// Normalized frequencies of a `[0, 1]` map over equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    bins: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn bin_center(i: usize) -> f64 {
        (i as f64 + 0.5) / HISTOGRAM_BINS as f64
    }

    pub fn from_bins(bins: Vec<f64>) -> Result<Self> {
        if bins.len() != HISTOGRAM_BINS {
            return Err(Error::DimensionMismatch {
                expected: (HISTOGRAM_BINS, 1),
                actual: (bins.len(), 1),
            });
        }
        let total: f64 = bins.iter().sum();
        if bins.iter().any(|b| !(b.is_finite() && *b >= 0.0)) || !(total > 0.0) {
            return Err(Error::InvalidArgument("histogram bins must be >= 0 with positive mass".into()));
        }
        Ok(Self {
            bins: bins.into_iter().map(|b| b / total).collect(),
        })
    }
}

/// Histogram of `map`, whose values must lie in `[0, 1]`. The last bin is
/// closed on the right.
pub fn histogram(map: &ScalarMap) -> Histogram {
    let mut bins = vec![0.0; HISTOGRAM_BINS];
    for x in map.iter() {
        let i = ((x.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[i] += 1.0;
    }
    let n = map.len().max(1) as f64;
    bins.iter_mut().for_each(|b| *b /= n);
    Histogram { bins }
}

/// Weights of the 100-32-1 boundary regressor. `w1` is `32 × 100` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsFile", into = "ParamsFile")]
pub struct MlpParams {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format_version: u32,
    inputs: usize,
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl TryFrom<ParamsFile> for MlpParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        if f.format_version != PARAMS_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported parameter format version {}",
                f.format_version
            )));
        }
        if f.inputs != HISTOGRAM_BINS || f.hidden != HIDDEN_UNITS {
            return Err(Error::InvalidConfig(format!(
                "expected a {HISTOGRAM_BINS}-{HIDDEN_UNITS}-1 network, got {}-{}-1",
                f.inputs, f.hidden
            )));
        }
        let p = MlpParams {
            w1: f.w1,
            b1: f.b1,
            w2: f.w2,
            b2: f.b2,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<MlpParams> for ParamsFile {
    fn from(p: MlpParams) -> Self {
        ParamsFile {
            format_version: PARAMS_FORMAT_VERSION,
            inputs: HISTOGRAM_BINS,
            hidden: HIDDEN_UNITS,
            w1: p.w1,
            b1: p.b1,
            w2: p.w2,
            b2: p.b2,
        }
    }
}

impl MlpParams {
    pub fn zeros() -> Self {
        Self {
            w1: vec![0.0; HIDDEN_UNITS * HISTOGRAM_BINS],
            b1: vec![0.0; HIDDEN_UNITS],
            w2: vec![0.0; HIDDEN_UNITS],
            b2: 0.0,
        }
    }

    /// Uniform fan-in scaled initialization with a small positive hidden bias
    /// so that every ReLU starts active.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s1 = (1.0 / HISTOGRAM_BINS as f64).sqrt();
        let s2 = (1.0 / HIDDEN_UNITS as f64).sqrt();
        Self {
            w1: (0..HIDDEN_UNITS * HISTOGRAM_BINS).map(|_| rng.random_range(-s1..s1)).collect(),
            b1: vec![0.1; HIDDEN_UNITS],
            w2: (0..HIDDEN_UNITS).map(|_| rng.random_range(-s2..s2)).collect(),
            b2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w1.len() != HIDDEN_UNITS * HISTOGRAM_BINS || self.b1.len() != HIDDEN_UNITS || self.w2.len() != HIDDEN_UNITS {
            return Err(Error::InvalidConfig("MLP parameter arrays have the wrong length".into()));
        }
        if !self.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidConfig("MLP parameters must be finite".into()));
        }
        Ok(())
    }

    /// All parameters in a fixed order: `w1`, `b1`, `w2`, `b2`.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(std::iter::once(&self.b2))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Forward {
    hidden: Vec<f64>,
    output: f64,
}

fn forward(h: &Histogram, theta: &MlpParams) -> Forward {
    let hidden: Vec<f64> = (0..HIDDEN_UNITS)
        .map(|j| {
            let row = &theta.w1[j * HISTOGRAM_BINS..(j + 1) * HISTOGRAM_BINS];
            let pre = theta.b1[j] + row.iter().zip(&h.bins).map(|(w, x)| w * x).sum::<f64>();
            pre.max(0.0)
        })
        .collect();
    let z = theta.b2 + theta.w2.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>();
    Forward {
        hidden,
        output: sigmoid(z),
    }
}

/// Gradient of the regressor output w.r.t. every parameter, scaled by `upstream`.
fn backward(h: &Histogram, theta: &MlpParams, fwd: &Forward, upstream: f64) -> MlpParams {
    let dz = upstream * fwd.output * (1.0 - fwd.output);
    let mut g = MlpParams::zeros();
    g.b2 = dz;
    for j in 0..HIDDEN_UNITS {
        g.w2[j] = dz * fwd.hidden[j];
        if fwd.hidden[j] > 0.0 {
            let dpre = dz * theta.w2[j];
            g.b1[j] = dpre;
            let row = &mut g.w1[j * HISTOGRAM_BINS..(j + 1) * HISTOGRAM_BINS];
            for (w, x) in row.iter_mut().zip(&h.bins) {
                *w = dpre * x;
            }
        }
    }
    g
}

/// `sigmoid(W2·relu(W1·h + b1) + b2)`, strictly inside `(0, 1)` for finite weights.
pub fn boundary_regress(h: &Histogram, theta: &MlpParams) -> f64 {
    forward(h, theta).output
}

/// A two-component 1D Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
}

impl Gmm {
    /// Point between the components where their weighted densities are
    /// equal. Prefers a crossing between the means; otherwise the crossing
    /// nearest to their midpoint; the midpoint itself if they never cross.
    pub fn decision_point(&self) -> f64 {
        let [p1, p2] = self.weights;
        let [m1, m2] = self.means;
        let [v1, v2] = self.variances;
        let mid = 0.5 * (m1 + m2);
        let a = 0.5 / v2 - 0.5 / v1;
        let b = m1 / v1 - m2 / v2;
        let c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 + (p1 * v2.sqrt() / (p2 * v1.sqrt())).ln();
        let roots: Vec<f64> = if a.abs() < 1e-12 * (0.5 / v1 + 0.5 / v2) {
            if b == 0.0 {
                vec![]
            } else {
                vec![-c / b]
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                vec![]
            } else {
                let s = disc.sqrt();
                vec![(-b + s) / (2.0 * a), (-b - s) / (2.0 * a)]
            }
        };
        let (lo, hi) = (m1.min(m2), m1.max(m2));
        if let Some(r) = roots.iter().find(|r| (lo..=hi).contains(*r)) {
            return *r;
        }
        roots
            .into_iter()
            .min_by(|x, y| (x - mid).abs().total_cmp(&(y - mid).abs()))
            .unwrap_or(mid)
    }
}

/// Fits a two-component mixture to the bin centers weighted by frequency.
pub fn fit_gmm(h: &Histogram) -> Result<Gmm> {
    let xs: Vec<f64> = (0..HISTOGRAM_BINS).map(Histogram::bin_center).collect();
    let ws = &h.bins;
    let bin_width = 1.0 / HISTOGRAM_BINS as f64;
    let floor = bin_width * bin_width / 12.0;

    let quantile = |q: f64| {
        let mut acc = 0.0;
        for (x, w) in xs.iter().zip(ws) {
            acc += w;
            if acc >= q {
                return *x;
            }
        }
        xs[HISTOGRAM_BINS - 1]
    };
    let mean: f64 = xs.iter().zip(ws).map(|(x, w)| x * w).sum();
    let var = xs.iter().zip(ws).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>().max(floor);
    let mut gmm = Gmm {
        weights: [0.5, 0.5],
        means: [quantile(0.25), quantile(0.75)],
        variances: [var, var],
    };
    if gmm.means[0] == gmm.means[1] {
        gmm.means[1] += bin_width;
    }

    let density = |g: &Gmm, k: usize, x: f64| {
        g.weights[k] * (-(x - g.means[k]).powi(2) / (2.0 * g.variances[k])).exp()
            / (2.0 * std::f64::consts::PI * g.variances[k]).sqrt()
    };
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITERS {
        let mut resp = [[0.0; 2]; HISTOGRAM_BINS];
        let mut ll = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            if ws[i] == 0.0 {
                continue;
            }
            let d = [density(&gmm, 0, x), density(&gmm, 1, x)];
            let total = d[0] + d[1];
            if total > 0.0 {
                resp[i] = [d[0] / total, d[1] / total];
                ll += ws[i] * total.ln();
            } else {
                // far from both: assign to the nearer mean
                let k = usize::from((x - gmm.means[1]).abs() < (x - gmm.means[0]).abs());
                resp[i][k] = 1.0;
                ll += ws[i] * f64::MIN_POSITIVE.ln();
            }
        }
        for k in 0..2 {
            let nk: f64 = (0..HISTOGRAM_BINS).map(|i| ws[i] * resp[i][k]).sum();
            if nk <= 1e-12 {
                continue;
            }
            let mk = (0..HISTOGRAM_BINS).map(|i| ws[i] * resp[i][k] * xs[i]).sum::<f64>() / nk;
            let vk = (0..HISTOGRAM_BINS).map(|i| ws[i] * resp[i][k] * (xs[i] - mk).powi(2)).sum::<f64>() / nk;
            gmm.weights[k] = nk;
            gmm.means[k] = mk;
            gmm.variances[k] = vk.max(floor);
        }
        let total_w = gmm.weights[0] + gmm.weights[1];
        gmm.weights.iter_mut().for_each(|w| *w /= total_w);
        if (ll - prev_ll).abs() <= EM_TOL * ll.abs().max(1.0) {
            return Ok(gmm);
        }
        prev_ll = ll;
    }
    Err(Error::EmNotConverged(EM_MAX_ITERS))
}

/// Rigid/non-rigid decision point of a two-component mixture fitted to `h`.
pub fn gmm_boundary_oracle(h: &Histogram) -> Result<f64> {
    Ok(fit_gmm(h)?.decision_point())
}

/// `1 / (1 + exp(alpha·(C − boundary)))`: near 1 well below the boundary
/// (rigid), near 0 well above it (moving).
pub fn rigid_map(correlation: &ScalarMap, boundary: f64, alpha: f64) -> ScalarMap {
    correlation.map(|c| sigmoid(alpha * (boundary - c)))
}

/// Area ratio `Σ(1 − M) / (ΣM + eps_area)`.
pub fn boundary_loss(m: &ScalarMap, eps_area: f64) -> f64 {
    let rigid = m.sum();
    (m.len() as f64 - rigid) / (rigid + eps_area)
}

fn weighted_mean(rho: &ScalarMap, weights: &ScalarMap, eps_area: f64) -> Result<(f64, f64)> {
    let den: f64 = weights.sum();
    if !(den > eps_area) {
        return Err(Error::EmptyRigidRegion { weight: den, eps: eps_area });
    }
    let num: f64 = rho.iter().zip(weights.iter()).map(|(r, w)| r * w).sum();
    Ok((num / den, den))
}

/// Per-pixel photometric error of the rigid reconstruction and the mask of
/// pixels whose rigid-flow target stays in frame.
pub fn rigid_residual(i_t: &Image, i_t1: &Image, rigid: &FlowField, cfg: &PhotometricConfig) -> Result<(ScalarMap, PixelMask)> {
    let (recon, valid) = warp_with_fallback(i_t1, rigid, i_t)?;
    Ok((photometric_error(i_t, &recon, cfg)?, valid))
}

/// Rigid-map weighted mean of the photometric error of `I_t1` warped by the
/// rigid flow, over pixels whose warp stays in frame.
pub fn rigid_photometric_loss(
    i_t: &Image,
    i_t1: &Image,
    rigid: &FlowField,
    m: &ScalarMap,
    cfg: &PhotometricConfig,
    eps_area: f64,
) -> Result<f64> {
    check_dims(i_t.dims(), m.dims())?;
    let (rho, valid) = rigid_residual(i_t, i_t1, rigid, cfg)?;
    let weights = m.zip_map(&valid, |a, b| a * b)?;
    Ok(weighted_mean(&rho, &weights, eps_area)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfmConfig {
    /// Sharpness of the rigid-map gate.
    pub alpha: f64,
    pub lambda_r: f64,
    pub lambda_bnd: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    pub eps_area: f64,
    pub photometric: PhotometricConfig,
}

impl Default for RfmConfig {
    fn default() -> Self {
        Self {
            alpha: 25.0,
            lambda_r: 1.0,
            lambda_bnd: 0.023,
            learning_rate: 20.0,
            epochs: 200,
            rng_seed: 0,
            eps_area: 1e-6,
            photometric: PhotometricConfig::default(),
        }
    }
}

impl RfmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.lambda_bnd >= 0.0 && self.lambda_r >= 0.0) {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.eps_area > 0.0) {
            return Err(Error::InvalidConfig("eps_area must be > 0".into()));
        }
        self.photometric.validate()
    }
}

/// Everything the regressor's objective needs from one frame pair; only the
/// boundary depends on the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RfmSample {
    pub correlation: ScalarMap,
    pub histogram: Histogram,
    /// Photometric error of the rigid reconstruction.
    pub residual: ScalarMap,
    /// 1 where the rigid warp stays in frame.
    pub valid: PixelMask,
}

impl RfmSample {
    pub fn new(i_t: &Image, i_t1: &Image, optical: &FlowField, rigid: &FlowField, cfg: &PhotometricConfig) -> Result<Self> {
        let correlation = correlation_map(optical, rigid)?;
        let (residual, valid) = rigid_residual(i_t, i_t1, rigid, cfg)?;
        check_dims(correlation.dims(), residual.dims())?;
        Ok(Self {
            histogram: histogram(&correlation),
            correlation,
            residual,
            valid,
        })
    }

    pub fn rigid_map(&self, theta: &MlpParams, alpha: f64) -> ScalarMap {
        rigid_map(&self.correlation, boundary_regress(&self.histogram, theta), alpha)
    }
}

/// Objective terms for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfmLoss {
    pub rigid: f64,
    pub boundary: f64,
    pub total: f64,
    pub boundary_value: f64,
    pub mean_rigid: f64,
}

/// `λ_r·L_r + λ_bnd·L_bnd` for one sample.
pub fn rfm_objective(sample: &RfmSample, theta: &MlpParams, cfg: &RfmConfig) -> Result<RfmLoss> {
    Ok(rfm_backward_impl(sample, theta, cfg, false)?.0)
}

/// Exact gradient of `λ_r·L_r + λ_bnd·L_bnd` w.r.t. every regressor parameter.
pub fn rfm_backward(sample: &RfmSample, theta: &MlpParams, cfg: &RfmConfig) -> Result<(RfmLoss, MlpParams)> {
    let (loss, grad) = rfm_backward_impl(sample, theta, cfg, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn rfm_backward_impl(sample: &RfmSample, theta: &MlpParams, cfg: &RfmConfig, with_grad: bool) -> Result<(RfmLoss, Option<MlpParams>)> {
    let fwd = forward(&sample.histogram, theta);
    let g = fwd.output;
    let m = rigid_map(&sample.correlation, g, cfg.alpha);
    let weights = m.zip_map(&sample.valid, |a, b| a * b)?;
    let (l_r, s) = weighted_mean(&sample.residual, &weights, cfg.eps_area)?;
    let n = m.len() as f64;
    let area = m.sum();
    let l_bnd = (n - area) / (area + cfg.eps_area);
    let loss = RfmLoss {
        rigid: l_r,
        boundary: l_bnd,
        total: cfg.lambda_r * l_r + cfg.lambda_bnd * l_bnd,
        boundary_value: g,
        mean_rigid: area / n,
    };
    if !with_grad {
        return Ok((loss, None));
    }
    // dL_bnd/dM_i is the same for every pixel
    let dbnd = -(n + cfg.eps_area) / (area + cfg.eps_area).powi(2);
    let mut dg = 0.0;
    for ((mi, rho), v) in m.iter().zip(sample.residual.iter()).zip(sample.valid.iter()) {
        let dm = cfg.lambda_r * v * (rho - l_r) / s + cfg.lambda_bnd * dbnd;
        dg += dm * cfg.alpha * mi * (1.0 - mi);
    }
    Ok((loss, Some(backward(&sample.histogram, theta, &fwd, dg))))
}

/// Mean objective terms over one training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub rigid: f64,
    pub boundary: f64,
    pub total: f64,
    pub mean_rigid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedRfm {
    pub params: MlpParams,
    pub trace: Vec<EpochStats>,
}

/// Per-sample gradient descent in a seeded order, starting from `init`.
pub fn train_rfm(samples: &[RfmSample], init: &MlpParams, cfg: &RfmConfig) -> Result<TrainedRfm> {
    cfg.validate()?;
    init.validate()?;
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut theta = init.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = EpochStats {
            epoch,
            rigid: 0.0,
            boundary: 0.0,
            total: 0.0,
            mean_rigid: 0.0,
        };
        for &i in &order {
            let (loss, grad) = rfm_backward(&samples[i], &theta, cfg).map_err(|e| match e {
                Error::EmptyRigidRegion { weight, eps } => Error::NonFiniteLoss {
                    epoch,
                    sample: i,
                    detail: format!("rigid region vanished (weight {weight:e} <= {eps:e})"),
                },
                other => other,
            })?;
            if !loss.total.is_finite() || !grad.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    sample: i,
                    detail: format!("loss {:?}", loss),
                });
            }
            theta.add_scaled(&grad, -cfg.learning_rate);
            acc.rigid += loss.rigid;
            acc.boundary += loss.boundary;
            acc.total += loss.total;
            acc.mean_rigid += loss.mean_rigid;
        }
        let k = samples.len() as f64;
        acc.rigid /= k;
        acc.boundary /= k;
        acc.total /= k;
        acc.mean_rigid /= k;
        trace.push(acc);
    }
    Ok(TrainedRfm { params: theta, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use nalgebra::Vector2;

    #[test]
    fn correlation_examples() {
        let f = Grid::filled(4, 3, Vector2::new(1.0, 2.0));
        assert!(correlation_map(&f, &f).unwrap().iter().all(|c| *c == 0.0));

        let zeros = FlowField::zeros(3, 1);
        let fo = Grid::from_vec(3, 1, vec![Vector2::zeros(), Vector2::new(2.0, 0.0), Vector2::new(3.0, 4.0)]).unwrap();
        let c = correlation_map(&fo, &zeros).unwrap();
        assert_eq!(c.data(), &[0.0, 0.4, 1.0]);
    }

    #[test]
    fn histogram_counts() {
        let zeros = Grid::filled(5, 4, 0.0);
        let h = histogram(&zeros);
        assert_eq!(h.bins()[0], 1.0);

        let ramp = Grid::from_fn(100, 1, |u, _| u as f64 / 100.0 + 0.005);
        let h = histogram(&ramp);
        assert!(h.bins().iter().all(|b| (*b - 0.01).abs() < 1e-15));

        let ones = Grid::filled(3, 3, 1.0);
        assert_eq!(histogram(&ones).bins()[HISTOGRAM_BINS - 1], 1.0);
    }

    #[test]
    fn zero_params_give_half() {
        let h = histogram(&Grid::filled(2, 2, 0.3));
        assert_eq!(boundary_regress(&h, &MlpParams::zeros()), 0.5);
    }

    #[test]
    fn gate_values() {
        let c = Grid::from_vec(3, 1, vec![0.4, 0.5, 0.6]).unwrap();
        let m = rigid_map(&c, 0.5, 10.0);
        assert_eq!(*m.get(1, 0), 0.5);
        assert!((m.get(2, 0) - 1.0 / (1.0 + 1f64.exp())).abs() < 1e-15);
        let hard = rigid_map(&c, 0.5, 1e4);
        assert_eq!(*hard.get(0, 0), 1.0);
        assert!(*hard.get(2, 0) < 1e-40);
    }

    #[test]
    fn boundary_loss_examples() {
        assert_eq!(boundary_loss(&Grid::filled(4, 4, 1.0), 1e-6), 0.0);
        assert!((boundary_loss(&Grid::filled(4, 4, 0.5), 1e-6) - 1.0).abs() < 1e-6);
        let collapsed = boundary_loss(&Grid::filled(4, 4, 0.0), 1e-6);
        assert!(collapsed.is_finite());
        assert_eq!(collapsed, 16.0 / 1e-6);
    }

    #[test]
    fn params_json_round_trip() {
        let p = MlpParams::random(4);
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"format_version\":1"));
        let back: MlpParams = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
        let bad = text.replace("\"format_version\":1", "\"format_version\":9");
        assert!(serde_json::from_str::<MlpParams>(&bad).is_err());
    }

    #[test]
    fn decision_point_of_symmetric_mixture() {
        let g = Gmm {
            weights: [0.5, 0.5],
            means: [0.1, 0.9],
            variances: [0.0025, 0.0025],
        };
        assert!((g.decision_point() - 0.5).abs() < 1e-12);
        let swapped = Gmm {
            weights: [0.5, 0.5],
            means: [0.9, 0.1],
            variances: [0.0025, 0.0025],
        };
        assert!((swapped.decision_point() - 0.5).abs() < 1e-12);
    }
}
