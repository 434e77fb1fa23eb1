//! End-to-end evaluation of one simulated frame pair: noisy flow and depth
//! intake, pose recovery, rigid flow, rigidity inference, fusion, metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{epe, fl_all, fuse_flow, region_epe, segmentation_metrics, LossTerms, MetricsReport};
use crate::geometry::{rigid_flow, CameraPose};
use crate::grid::{DepthMap, FlowField, Grid, PixelMask, ScalarMap};
use crate::losses::{depth_loss, flow_loss, occlusion_mask, smooth_loss, uncover_loss, uncover_region};
use crate::photometric::PhotometricConfig;
use crate::pnp::{accumulate_ate, correspondences_from_flow, solve_pnp, PnpConfig, PnpResult};
use crate::rfm::{boundary_loss, rigid_photometric_loss, MlpParams, RfmConfig, RfmSample};
use crate::simulator::{perturb_depth, perturb_flow, SceneSample};

/// Stand-in for network estimation error on the flow and depth inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    /// RMS of the added flow noise, in pixels.
    pub flow_amplitude: f64,
    pub flow_correlation: f64,
    /// Standard deviation of the log-depth noise.
    pub depth_sigma: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            flow_amplitude: 0.0,
            flow_correlation: 16.0,
            depth_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PerturbConfig {
    /// Noisy optical flow and depth for `sample`.
    pub fn apply(&self, sample: &SceneSample) -> Result<(FlowField, DepthMap)> {
        let flow = perturb_flow(&sample.optical_flow, self.flow_amplitude, self.flow_correlation, self.seed)?;
        let depth = perturb_depth(&sample.depth, self.depth_sigma, self.seed ^ 0x5DEE_CE66)?;
        Ok((flow, depth))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub perturb: PerturbConfig,
    pub pnp: PnpConfig,
    pub rfm: RfmConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub pnp: PnpResult,
    pub optical: FlowField,
    pub depth: DepthMap,
    pub rigid: FlowField,
    pub rigid_map: ScalarMap,
    pub fused: FlowField,
    pub report: MetricsReport,
    /// EPE of the optical and rigid inputs, for comparison with the fused flow.
    pub optical_epe: f64,
    pub rigid_epe: f64,
}

/// Rigid map for a flow pair, forced to zero where the rigid flow is undefined.
pub fn infer_rigidity(
    sample: &SceneSample,
    optical: &FlowField,
    rigid: &FlowField,
    rigid_valid: &PixelMask,
    theta: &MlpParams,
    cfg: &RfmConfig,
) -> Result<ScalarMap> {
    let rfm = RfmSample::new(&sample.image_t, &sample.image_t1, optical, rigid, &cfg.photometric)?;
    rfm.rigid_map(theta, cfg.alpha).zip_map(rigid_valid, |m, v| m * v)
}

/// Builds the regressor's training sample for one scene under `perturb`,
/// using the pose recovered from the perturbed inputs.
pub fn training_sample(sample: &SceneSample, perturb: &PerturbConfig, pnp: &PnpConfig, rfm: &RfmConfig) -> Result<RfmSample> {
    let (optical, depth) = perturb.apply(sample).map_err(|e| e.in_stage("intake"))?;
    let corrs = correspondences_from_flow(&optical, &depth).map_err(|e| e.in_stage("pose"))?;
    let pose = solve_pnp(&corrs, &sample.intrinsics, pnp).map_err(|e| e.in_stage("pose"))?;
    let (rigid, _) = rigid_flow(&depth, &sample.intrinsics, &pose.pose);
    RfmSample::new(&sample.image_t, &sample.image_t1, &optical, &rigid, &rfm.photometric).map_err(|e| e.in_stage("rfm"))
}

/// Runs the whole chain on `sample` and scores it against the simulator's truth.
pub fn run_pipeline(sample: &SceneSample, theta: &MlpParams, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let (optical, depth) = cfg.perturb.apply(sample).map_err(|e| e.in_stage("intake"))?;

    let corrs = correspondences_from_flow(&optical, &depth).map_err(|e| e.in_stage("pose"))?;
    let pnp = solve_pnp(&corrs, &sample.intrinsics, &cfg.pnp).map_err(|e| e.in_stage("pose"))?;

    let (rigid, rigid_valid) = rigid_flow(&depth, &sample.intrinsics, &pnp.pose);
    if !rigid.is_finite() {
        return Err(Error::InvalidArgument("rigid flow is not finite".into()).in_stage("rigid-flow"));
    }

    let rigid_map = infer_rigidity(sample, &optical, &rigid, &rigid_valid, theta, &cfg.rfm).map_err(|e| e.in_stage("rfm"))?;
    let fused = fuse_flow(&optical, &rigid, &rigid_map).map_err(|e| e.in_stage("fusion"))?;

    let report = evaluate_outputs(sample, &fused, &rigid_map, &pnp.pose).map_err(|e| e.in_stage("metrics"))?;
    let everywhere = Grid::filled(sample.width(), sample.height(), 1.0);
    let optical_epe = epe(&optical, &sample.optical_flow, &everywhere)?;
    let rigid_epe = epe(&rigid, &sample.optical_flow, &everywhere)?;
    Ok(PipelineOutput {
        pnp,
        optical,
        depth,
        rigid,
        rigid_map,
        fused,
        report,
        optical_epe,
        rigid_epe,
    })
}

/// Scores a flow estimate, a rigid map and a pose against the sample's truth.
/// Pixels with rigid map below 0.5 are predicted moving.
pub fn evaluate_outputs(
    sample: &SceneSample,
    flow: &FlowField,
    rigid_map: &ScalarMap,
    pose: &CameraPose,
) -> Result<MetricsReport> {
    let everywhere = Grid::filled(sample.width(), sample.height(), 1.0);
    let moving = &sample.moving_mask;
    let static_mask = sample.rigid_map();
    let predicted_moving = rigid_map.map(|m| if *m < 0.5 { 1.0 } else { 0.0 });
    let seg = segmentation_metrics(&predicted_moving, moving)?;
    let ate = accumulate_ate(std::slice::from_ref(pose), std::slice::from_ref(&sample.pose), 1)?;
    Ok(MetricsReport {
        epe_all: epe(flow, &sample.optical_flow, &everywhere)?,
        epe_move: region_epe(flow, &sample.optical_flow, moving)?,
        epe_static: region_epe(flow, &sample.optical_flow, &static_mask)?,
        fl_all: fl_all(flow, &sample.optical_flow, &everywhere)?,
        pixel_acc: seg.pixel_acc,
        mean_acc: seg.mean_acc,
        mean_iou: seg.mean_iou,
        fw_iou: seg.fw_iou,
        ate_mean: ate.mean,
        ate_std: ate.std,
    })
}

/// Candidate estimates scored by [`evaluate_losses`] against a sample's images.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub optical: &'a FlowField,
    /// Flow from frame `t + 1` back to `t`, used for the occlusion check.
    pub backward: &'a FlowField,
    pub rigid: &'a FlowField,
    /// Where `rigid` is defined; 1 everywhere when unknown.
    pub rigid_valid: &'a PixelMask,
    pub rigid_map: &'a ScalarMap,
    pub depth: &'a DepthMap,
    pub depth_right: &'a DepthMap,
}

impl<'a> LossInputs<'a> {
    /// The sample's own ground truth, with `rigid_valid` supplied by the caller.
    pub fn ground_truth(sample: &'a SceneSample, rigid_valid: &'a PixelMask, rigid_map: &'a ScalarMap) -> Self {
        Self {
            optical: &sample.optical_flow,
            backward: &sample.backward_flow,
            rigid: &sample.rigid_flow,
            rigid_valid,
            rigid_map,
            depth: &sample.depth,
            depth_right: &sample.depth_right,
        }
    }
}

/// Every unsupervised loss term for one frame pair.
pub fn evaluate_losses(
    sample: &SceneSample,
    inputs: &LossInputs,
    photometric: &PhotometricConfig,
    eps_area: f64,
) -> Result<LossTerms> {
    let noc = occlusion_mask(inputs.optical, inputs.backward)?;
    let opt_ok = inputs.optical.target_in_bounds();
    let rig_ok = inputs.rigid.target_in_bounds().zip_map(inputs.rigid_valid, |a, b| a * b)?;
    let omega = uncover_region(&noc, &opt_ok, &rig_ok)?;
    let depth = depth_loss(
        &sample.image_t,
        &sample.image_right,
        inputs.depth,
        inputs.depth_right,
        &sample.intrinsics,
        sample.baseline,
        photometric,
    )?;
    Ok(LossTerms {
        flow: flow_loss(&sample.image_t, &sample.image_t1, inputs.optical, &noc, photometric)?,
        smooth: smooth_loss(inputs.optical, &sample.image_t)?,
        rigid: rigid_photometric_loss(
            &sample.image_t,
            &sample.image_t1,
            inputs.rigid,
            inputs.rigid_map,
            photometric,
            eps_area,
        )?,
        depth: depth.total(),
        boundary: boundary_loss(inputs.rigid_map, eps_area),
        uncover: uncover_loss(inputs.optical, inputs.rigid, &omega)?,
    })
}
