//! Unsupervised flow and depth losses, occlusion handling and the
//! uncovered-region regularizer.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::geometry::Intrinsics;
use crate::grid::{DepthMap, FlowField, Grid, Image, PixelMask, ScalarMap};
use crate::photometric::{photometric_error, warp_with_fallback, PhotometricConfig};

/// Forward-backward consistency constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.01,
            alpha2: 0.5,
        }
    }
}

/// Non-occluded mask `M_noc` from the forward-backward check with default constants.
pub fn occlusion_mask(fwd: &FlowField, bwd: &FlowField) -> Result<PixelMask> {
    occlusion_mask_with(fwd, bwd, &OcclusionConfig::default())
}

/// A pixel is non-occluded (1) iff
/// `|F_f + F_b'|² < a1·(|F_f|² + |F_b'|²) + a2`, where `F_b'` is the backward
/// flow sampled at `x + F_f(x)` with replicated borders.
pub fn occlusion_mask_with(fwd: &FlowField, bwd: &FlowField, cfg: &OcclusionConfig) -> Result<PixelMask> {
    check_dims(fwd.dims(), bwd.dims())?;
    Ok(Grid::from_fn(fwd.width(), fwd.height(), |u, v| {
        let f = *fwd.get(u, v);
        let b = bwd.sample_clamped(u as f64 + f.x, v as f64 + f.y);
        let lhs = (f + b).norm_squared();
        let rhs = cfg.alpha1 * (f.norm_squared() + b.norm_squared()) + cfg.alpha2;
        if lhs < rhs {
            1.0
        } else {
            0.0
        }
    }))
}

/// Weighted mean of `photometric_error(target, warp(source, flow))` over
/// `weights`, restricted to pixels whose warp stays in frame.
fn masked_reconstruction_error(
    target: &Image,
    source: &Image,
    flow: &FlowField,
    weights: &ScalarMap,
    cfg: &PhotometricConfig,
) -> Result<(f64, f64)> {
    check_dims(target.dims(), weights.dims())?;
    let (recon, valid) = warp_with_fallback(source, flow, target)?;
    let rho = photometric_error(target, &recon, cfg)?;
    let (mut num, mut den) = (0.0, 0.0);
    for ((r, w), ok) in rho.iter().zip(weights.iter()).zip(valid.iter()) {
        let w = w * ok;
        num += w * r;
        den += w;
    }
    Ok((num, den))
}

/// Optical-flow photometric loss on the non-occluded region.
pub fn flow_loss(
    i_t: &Image,
    i_t1: &Image,
    flow: &FlowField,
    noc: &PixelMask,
    cfg: &PhotometricConfig,
) -> Result<f64> {
    if !(noc.sum() > 0.0) {
        return Err(Error::EmptyMask("non-occluded mask"));
    }
    let (num, den) = masked_reconstruction_error(i_t, i_t1, flow, noc, cfg)?;
    if !(den > 0.0) {
        return Err(Error::EmptyMask("non-occluded pixels with in-frame warp"));
    }
    Ok(num / den)
}

/// Second difference along one axis, with border values replicated from the
/// nearest interior pixel. Axes shorter than 3 yield zeros.
fn second_difference<T>(grid: &Grid<T>, horizontal: bool, value: impl Fn(&T) -> f64) -> ScalarMap {
    let (w, h) = grid.dims();
    let len = if horizontal { w } else { h };
    Grid::from_fn(w, h, |u, v| {
        if len < 3 {
            return 0.0;
        }
        let pos = if horizontal { u } else { v };
        let c = pos.clamp(1, len - 2);
        let at = |p: usize| {
            if horizontal {
                value(grid.get(p, v))
            } else {
                value(grid.get(u, p))
            }
        };
        at(c - 1) - 2.0 * at(c) + at(c + 1)
    })
}

fn image_edge_weights(image: &Image, horizontal: bool) -> ScalarMap {
    let ch = image.channels();
    let mut acc = Grid::filled(image.width(), image.height(), 0.0);
    for c in 0..ch {
        let plane = image.channel(c);
        let d2 = second_difference(&plane, horizontal, |x| *x);
        for (a, d) in acc.data_mut().iter_mut().zip(d2.iter()) {
            *a += d.abs() / ch as f64;
        }
    }
    acc.map(|x| (-x).exp())
}

/// Edge-aware second-order smoothness of a flow field:
/// `Σ_Ω Σ_axis (|∂²F_u| + |∂²F_v|) · exp(-|∂²I|)`.
pub fn smooth_loss(flow: &FlowField, image: &Image) -> Result<f64> {
    check_dims(flow.dims(), image.dims())?;
    let mut total = 0.0;
    for horizontal in [true, false] {
        let weights = image_edge_weights(image, horizontal);
        let du = second_difference(flow, horizontal, |f| f.x);
        let dv = second_difference(flow, horizontal, |f| f.y);
        for ((a, b), w) in du.iter().zip(dv.iter()).zip(weights.iter()) {
            total += (a.abs() + b.abs()) * w;
        }
    }
    Ok(total)
}

/// Same regularizer applied to a scalar map (used for depth).
pub fn smooth_loss_scalar(map: &ScalarMap, image: &Image) -> Result<f64> {
    check_dims(map.dims(), image.dims())?;
    let mut total = 0.0;
    for horizontal in [true, false] {
        let weights = image_edge_weights(image, horizontal);
        let d = second_difference(map, horizontal, |x| *x);
        total += d.iter().zip(weights.iter()).map(|(a, w)| a.abs() * w).sum::<f64>();
    }
    Ok(total)
}

/// The three terms of the stereo depth loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthLoss {
    /// Mean photometric error between the left image and the right image
    /// warped by the disparity of the left depth.
    pub photometric: f64,
    /// Edge-aware second-order smoothness of the left depth.
    pub smoothness: f64,
    /// Mean `|D_L − warp(D_R)|` left-right depth consistency.
    pub consistency: f64,
}

impl DepthLoss {
    pub fn total(&self) -> f64 {
        self.photometric + self.smoothness + self.consistency
    }
}

/// Horizontal flow from the left view into the right view, `(-fx·b/d, 0)`.
pub fn disparity_flow(depth: &DepthMap, k: &Intrinsics, baseline: f64) -> Result<(FlowField, PixelMask)> {
    if !(baseline > 0.0 && baseline.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "stereo baseline must be positive, got {baseline}"
        )));
    }
    let (w, h) = depth.dims();
    let mut valid = Grid::filled(w, h, 0.0);
    let flow = Grid::from_fn(w, h, |u, v| match depth.get(u, v) {
        Some(d) => {
            valid.set(u, v, 1.0);
            Vector2::new(-k.fx * baseline / d, 0.0)
        }
        None => Vector2::zeros(),
    });
    Ok((flow, valid))
}

/// Stereo depth loss for a rectified pair with the right camera displaced by
/// `baseline` along +x. Pixels whose disparity warp leaves the frame or hits
/// invalid right depth are excluded from the means.
pub fn depth_loss(
    left: &Image,
    right: &Image,
    depth_left: &DepthMap,
    depth_right: &DepthMap,
    k: &Intrinsics,
    baseline: f64,
    cfg: &PhotometricConfig,
) -> Result<DepthLoss> {
    check_dims(left.dims(), right.dims())?;
    check_dims(left.dims(), depth_left.dims())?;
    check_dims(left.dims(), depth_right.dims())?;
    let (flow, depth_ok) = disparity_flow(depth_left, k, baseline)?;
    let (synth, warp_ok) = warp_with_fallback(right, &flow, left)?;
    let rho = photometric_error(left, &synth, cfg)?;

    let right_values = depth_right.to_map(0.0);
    let right_valid = depth_right.valid().map(|b| if *b { 1.0 } else { 0.0 });

    let (mut photo, mut cons, mut count) = (0.0, 0.0, 0usize);
    for (u, v, f) in flow.indexed() {
        if *depth_ok.get(u, v) == 0.0 || *warp_ok.get(u, v) == 0.0 {
            continue;
        }
        let (x, y) = (u as f64 + f.x, v as f64 + f.y);
        // all four corners must carry valid right depth
        if right_valid.sample(x, y) != Some(1.0) {
            continue;
        }
        let projected = right_values.sample(x, y).expect("in bounds");
        let d = depth_left.get(u, v).expect("valid");
        photo += rho.get(u, v);
        cons += (d - projected).abs();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask("stereo pixels with valid warp"));
    }
    let smoothness = smooth_loss_scalar(&depth_left.to_map(0.0), left)?;
    Ok(DepthLoss {
        photometric: photo / count as f64,
        smoothness,
        consistency: cons / count as f64,
    })
}

/// `Ω_unc = (1 − M_noc·M_opt) · M_rig`.
pub fn uncover_region(noc: &PixelMask, opt: &PixelMask, rig: &PixelMask) -> Result<PixelMask> {
    check_dims(noc.dims(), opt.dims())?;
    check_dims(noc.dims(), rig.dims())?;
    Ok(Grid::from_fn(noc.width(), noc.height(), |u, v| {
        (1.0 - noc.get(u, v) * opt.get(u, v)) * rig.get(u, v)
    }))
}

/// `Σ_Ω Ω_unc · |F_o − F_r|²`.
pub fn uncover_loss(optical: &FlowField, rigid: &FlowField, omega: &PixelMask) -> Result<f64> {
    check_dims(optical.dims(), rigid.dims())?;
    check_dims(optical.dims(), omega.dims())?;
    Ok(optical
        .iter()
        .zip(rigid.iter())
        .zip(omega.iter())
        .map(|((a, b), w)| w * (a - b).norm_squared())
        .sum())
}
