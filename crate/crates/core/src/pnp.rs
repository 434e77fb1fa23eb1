//! Ego-motion from flow-derived 2D–3D correspondences.
//!
//! Each pixel with a depth and an optical-flow vector gives one
//! correspondence: the back-projected point at time `t` and the observed
//! pixel `x_t + F(x_t)` at `t + 1`. The pose minimizes squared reprojection
//! error, found by RANSAC over minimal samples, each fitted by
//! Levenberg-Marquardt from the identity, then refined on the best consensus.

use nalgebra::{Matrix2x3, Matrix6, SMatrix, Vector2, Vector6};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{back_project, skew, CameraPose, Intrinsics, Point3, MIN_DEPTH};
use crate::grid::{DepthMap, FlowField};

/// Damping above which LM gives up.
const MAX_DAMPING: f64 = 1e12;
/// Relative eigenvalue floor of `JᵀJ` below which a direction counts as unobservable.
const RANK_TOL: f64 = 1e-10;
/// Upper bound on inlier re-selection rounds after RANSAC.
const CONSENSUS_ROUNDS: usize = 20;

/// Pixel `x_t` with depth `depth` observed at `x_t1` in the next frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x_t: Vector2<f64>,
    pub x_t1: Vector2<f64>,
    pub depth: f64,
}

impl Correspondence {
    pub fn new(x_t: Vector2<f64>, x_t1: Vector2<f64>, depth: f64) -> Result<Self> {
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::InvalidDepth(depth));
        }
        if !(x_t.iter().chain(x_t1.iter()).all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("non-finite correspondence pixel".into()));
        }
        Ok(Self { x_t, x_t1, depth })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnpConfig {
    pub ransac_iters: usize,
    pub min_set: usize,
    pub inlier_thresh_px: f64,
    pub lm_max_iters: usize,
    pub lm_init_damping: f64,
    pub convergence_tol: f64,
    pub rng_seed: u64,
    /// RANSAC scores hypotheses on a seeded subsample of at most this many correspondences.
    pub max_ransac_points: usize,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            ransac_iters: 256,
            min_set: 6,
            inlier_thresh_px: 1.0,
            lm_max_iters: 50,
            lm_init_damping: 1e-3,
            convergence_tol: 1e-10,
            rng_seed: 0,
            max_ransac_points: 5000,
        }
    }
}

impl PnpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ransac_iters < 1 {
            return Err(Error::InvalidConfig("ransac_iters must be >= 1".into()));
        }
        if self.min_set < 3 {
            return Err(Error::InvalidConfig("min_set must be >= 3".into()));
        }
        if !(self.inlier_thresh_px > 0.0) {
            return Err(Error::InvalidConfig("inlier_thresh_px must be > 0".into()));
        }
        if !(self.lm_init_damping > 0.0) || !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig(
                "LM damping and tolerance must be > 0".into(),
            ));
        }
        if self.max_ransac_points < self.min_set {
            return Err(Error::InvalidConfig(
                "max_ransac_points must be >= min_set".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    pub pose: CameraPose,
    pub inlier_mask: Vec<bool>,
    pub final_rms_px: f64,
}

impl PnpResult {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|b| **b).count()
    }

    pub fn inlier_ratio(&self) -> f64 {
        if self.inlier_mask.is_empty() {
            return 0.0;
        }
        self.inlier_count() as f64 / self.inlier_mask.len() as f64
    }
}

/// Back-projected points and their observations, shared by every evaluation.
struct Problem<'a> {
    points: Vec<Point3>,
    observed: Vec<Vector2<f64>>,
    k: &'a Intrinsics,
}

impl<'a> Problem<'a> {
    fn new(corrs: &[Correspondence], k: &'a Intrinsics) -> Result<Self> {
        let points = corrs
            .iter()
            .map(|c| back_project(&c.x_t, c.depth, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            points,
            observed: corrs.iter().map(|c| c.x_t1).collect(),
            k,
        })
    }

    fn subset(&self, idx: &[usize]) -> Problem<'a> {
        Problem {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            observed: idx.iter().map(|&i| self.observed[i]).collect(),
            k: self.k,
        }
    }

    #[inline]
    fn residual(&self, pose: &CameraPose, i: usize) -> Option<Vector2<f64>> {
        let y = pose.transform(&self.points[i]);
        if y.z <= MIN_DEPTH {
            return None;
        }
        let k = self.k;
        Some(self.observed[i] - Vector2::new(k.fx * y.x / y.z + k.cx, k.fy * y.y / y.z + k.cy))
    }

    fn residuals(&self, pose: &CameraPose) -> Vec<Option<Vector2<f64>>> {
        (0..self.points.len()).map(|i| self.residual(pose, i)).collect()
    }

    /// Sum of squared residuals over `active`, or `None` if any active point
    /// ends up behind the camera.
    fn cost(&self, pose: &CameraPose, active: &[usize]) -> Option<f64> {
        let mut sum = 0.0;
        for &i in active {
            sum += self.residual(pose, i)?.norm_squared();
        }
        Some(sum)
    }

    /// Residual and its Jacobian w.r.t. a right perturbation `pose · exp(δ)`.
    fn linearize(&self, pose: &CameraPose, i: usize) -> Option<(Vector2<f64>, SMatrix<f64, 2, 6>)> {
        let x = &self.points[i];
        let y = pose.transform(x);
        if y.z <= MIN_DEPTH {
            return None;
        }
        let k = self.k;
        let iz = 1.0 / y.z;
        let proj = Vector2::new(k.fx * y.x * iz + k.cx, k.fy * y.y * iz + k.cy);
        let d_proj = Matrix2x3::new(
            k.fx * iz,
            0.0,
            -k.fx * y.x * iz * iz,
            0.0,
            k.fy * iz,
            -k.fy * y.y * iz * iz,
        );
        let r = pose.rotation();
        let d_trans: Matrix2x3<f64> = d_proj * r;
        let d_rot: Matrix2x3<f64> = -(d_proj * (r * skew(x)));
        let mut jac = SMatrix::<f64, 2, 6>::zeros();
        // residual = observed − projection, hence the sign flip
        jac.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-d_trans));
        jac.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-d_rot));
        Some((self.observed[i] - proj, jac))
    }

    fn normal_equations(&self, pose: &CameraPose, active: &[usize]) -> (Matrix6<f64>, Vector6<f64>) {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for &i in active {
            if let Some((r, j)) = self.linearize(pose, i) {
                h += j.transpose() * j;
                g += j.transpose() * r;
            }
        }
        (h, g)
    }
}

/// Reprojection residual `x_t1 − π(K·P·X_t)` per correspondence; `None` marks
/// correspondences whose transformed point is behind the camera.
pub fn reprojection_residuals(
    pose: &CameraPose,
    corrs: &[Correspondence],
    k: &Intrinsics,
) -> Result<Vec<Option<Vector2<f64>>>> {
    Ok(Problem::new(corrs, k)?.residuals(pose))
}

/// Analytic 2×6 residual Jacobian for one correspondence, w.r.t. the twist of
/// a right perturbation. `None` when the point is behind the camera.
pub fn residual_jacobian(
    pose: &CameraPose,
    corr: &Correspondence,
    k: &Intrinsics,
) -> Result<Option<SMatrix<f64, 2, 6>>> {
    let p = Problem::new(std::slice::from_ref(corr), k)?;
    Ok(p.linearize(pose, 0).map(|(_, j)| j))
}

/// Levenberg-Marquardt refinement of `initial` over all correspondences.
pub fn lm_refine(
    initial: &CameraPose,
    corrs: &[Correspondence],
    k: &Intrinsics,
    cfg: &PnpConfig,
) -> Result<CameraPose> {
    if corrs.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: corrs.len(),
        });
    }
    let problem = Problem::new(corrs, k)?;
    let all: Vec<usize> = (0..corrs.len()).collect();
    refine(&problem, initial, &all, cfg)
}

fn refine(problem: &Problem, initial: &CameraPose, subset: &[usize], cfg: &PnpConfig) -> Result<CameraPose> {
    let active: Vec<usize> = subset
        .iter()
        .copied()
        .filter(|&i| problem.residual(initial, i).is_some())
        .collect();
    if active.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: active.len(),
        });
    }

    let mut pose = *initial;
    let (mut h, mut g) = problem.normal_equations(&pose, &active);
    let rank = observable_rank(&h);
    if rank < 6 {
        return Err(Error::Degenerate { rank });
    }
    let mut cost = problem.cost(&pose, &active).expect("active points are in front");
    let mut damping = cfg.lm_init_damping;

    for _ in 0..cfg.lm_max_iters {
        if cost == 0.0 {
            break;
        }
        let mut a = h;
        for d in 0..6 {
            a[(d, d)] += damping * h[(d, d)];
        }
        let Some(chol) = a.cholesky() else {
            damping *= 10.0;
            if damping > MAX_DAMPING {
                return Err(Error::NoProgress(MAX_DAMPING));
            }
            continue;
        };
        let step = -chol.solve(&g);
        if step.norm() < cfg.convergence_tol {
            break;
        }
        let candidate = pose.compose(&CameraPose::exp(&step));
        match problem.cost(&candidate, &active) {
            Some(c) if c < cost => {
                pose = candidate;
                cost = c;
                damping = (damping / 10.0).max(1e-15);
                (h, g) = problem.normal_equations(&pose, &active);
            }
            _ => {
                damping *= 10.0;
                if damping > MAX_DAMPING {
                    return Err(Error::NoProgress(MAX_DAMPING));
                }
            }
        }
    }
    Ok(pose)
}

fn observable_rank(h: &Matrix6<f64>) -> usize {
    let eig = h.symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(0.0_f64, f64::max);
    if !(max > 0.0) {
        return 0;
    }
    eig.iter().filter(|e| **e > RANK_TOL * max).count()
}

/// RANSAC + Levenberg-Marquardt pose recovery. Deterministic for a given
/// `cfg.rng_seed` and input.
pub fn solve_pnp(corrs: &[Correspondence], k: &Intrinsics, cfg: &PnpConfig) -> Result<PnpResult> {
    cfg.validate()?;
    if corrs.len() < cfg.min_set {
        return Err(Error::InsufficientData {
            needed: cfg.min_set,
            got: corrs.len(),
        });
    }
    let problem = Problem::new(corrs, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let n = corrs.len();
    let scoring: Vec<usize> = if n > cfg.max_ransac_points {
        let mut idx = index::sample(&mut rng, n, cfg.max_ransac_points).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let thresh2 = cfg.inlier_thresh_px * cfg.inlier_thresh_px;
    let is_inlier = |pose: &CameraPose, i: usize| {
        problem
            .residual(pose, i)
            .is_some_and(|r| r.norm_squared() < thresh2)
    };

    let mut best: Option<(CameraPose, usize)> = None;
    for _ in 0..cfg.ransac_iters {
        let sample: Vec<usize> = index::sample(&mut rng, scoring.len(), cfg.min_set)
            .into_iter()
            .map(|j| scoring[j])
            .collect();
        let sub = problem.subset(&sample);
        let all: Vec<usize> = (0..sample.len()).collect();
        let Ok(pose) = refine(&sub, &CameraPose::identity(), &all, cfg) else {
            continue;
        };
        let count = scoring.iter().filter(|&&i| is_inlier(&pose, i)).count();
        if best.as_ref().is_none_or(|(_, c)| count > *c) {
            best = Some((pose, count));
        }
    }

    let (hypothesis, count) = best.unwrap_or((CameraPose::identity(), 0));
    if count < cfg.min_set {
        return Err(Error::NoConsensus {
            needed: cfg.min_set,
            best: count,
        });
    }
    // re-select inliers under each refined pose until the set settles
    let mut pose = hypothesis;
    let mut consensus: Vec<usize> = (0..n).filter(|&i| is_inlier(&pose, i)).collect();
    for _ in 0..CONSENSUS_ROUNDS {
        let Ok(refined) = refine(&problem, &pose, &consensus, cfg) else {
            break;
        };
        pose = refined;
        let next: Vec<usize> = (0..n).filter(|&i| is_inlier(&pose, i)).collect();
        if next == consensus || next.len() < cfg.min_set {
            break;
        }
        consensus = next;
    }

    let inlier_mask: Vec<bool> = (0..n).map(|i| is_inlier(&pose, i)).collect();
    let (sum, cnt) = inlier_mask
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .filter_map(|(i, _)| problem.residual(&pose, i))
        .fold((0.0, 0usize), |(s, c), r| (s + r.norm_squared(), c + 1));
    if cnt < cfg.min_set {
        return Err(Error::NoConsensus {
            needed: cfg.min_set,
            best: cnt,
        });
    }
    Ok(PnpResult {
        pose,
        inlier_mask,
        final_rms_px: (sum / cnt as f64).sqrt(),
    })
}

/// One correspondence per pixel with valid depth whose flow target stays inside the frame.
pub fn correspondences_from_flow(flow: &FlowField, depth: &DepthMap) -> Result<Vec<Correspondence>> {
    crate::error::check_dims(flow.dims(), depth.dims())?;
    let mut out = Vec::new();
    for (u, v, f) in flow.indexed() {
        let Some(d) = depth.get(u, v) else { continue };
        let x_t = Vector2::new(u as f64, v as f64);
        let x_t1 = x_t + f;
        if flow.contains(x_t1.x, x_t1.y) {
            out.push(Correspondence::new(x_t, x_t1, d)?);
        }
    }
    Ok(out)
}

/// Mean and population standard deviation of a trajectory error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteStats {
    pub mean: f64,
    pub std: f64,
}

/// Absolute trajectory error over sliding windows of `window` relative poses.
///
/// For every window both sequences are composed starting from a shared
/// identity frame, and the error is the distance between the final camera
/// centers.
pub fn accumulate_ate(estimated: &[CameraPose], reference: &[CameraPose], window: usize) -> Result<AteStats> {
    if estimated.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectory lengths differ: {} vs {}",
            estimated.len(),
            reference.len()
        )));
    }
    if window == 0 || estimated.len() < window {
        return Err(Error::InsufficientData {
            needed: window.max(1),
            got: estimated.len(),
        });
    }
    let compose = |poses: &[CameraPose]| {
        poses
            .iter()
            .fold(CameraPose::identity(), |acc, p| p.compose(&acc))
    };
    let errors: Vec<f64> = (0..=estimated.len() - window)
        .map(|s| {
            let e = compose(&estimated[s..s + window]);
            let r = compose(&reference[s..s + window]);
            (e.camera_center() - r.camera_center()).norm()
        })
        .collect();
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(AteStats {
        mean,
        std: var.sqrt(),
    })
}
