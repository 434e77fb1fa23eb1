//! Flow fusion, the weighted training energy, and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::grid::{FlowField, Grid, PixelMask, ScalarMap};

/// `M·F_r + (1 − M)·F_o` per pixel.
pub fn fuse_flow(optical: &FlowField, rigid: &FlowField, rigid_map: &ScalarMap) -> Result<FlowField> {
    check_dims(optical.dims(), rigid.dims())?;
    check_dims(optical.dims(), rigid_map.dims())?;
    Ok(Grid::from_fn(optical.width(), optical.height(), |u, v| {
        let m = *rigid_map.get(u, v);
        rigid.get(u, v) * m + optical.get(u, v) * (1.0 - m)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_f: f64,
    pub lambda_s: f64,
    pub lambda_r: f64,
    pub lambda_d: f64,
    pub lambda_bnd: f64,
    pub lambda_unc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::joint_stage()
    }
}

impl LossWeights {
    /// Weights of the joint fine-tuning stage: the rigid, depth, boundary and
    /// uncover terms at 1.0, 1.0, 0.023, 1.0 on top of unit flow terms.
    pub fn joint_stage() -> Self {
        Self {
            lambda_f: 1.0,
            lambda_s: 1.0,
            lambda_r: 1.0,
            lambda_d: 1.0,
            lambda_bnd: 0.023,
            lambda_unc: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_f,
            self.lambda_s,
            self.lambda_r,
            self.lambda_d,
            self.lambda_bnd,
            self.lambda_unc,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Values of the individual loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    #[serde(rename = "L_f")]
    pub flow: f64,
    #[serde(rename = "L_s")]
    pub smooth: f64,
    #[serde(rename = "L_r")]
    pub rigid: f64,
    #[serde(rename = "L_d")]
    pub depth: f64,
    #[serde(rename = "L_bnd")]
    pub boundary: f64,
    #[serde(rename = "L_unc")]
    pub uncover: f64,
}

/// Weighted sum of the loss terms.
pub fn total_energy(terms: &LossTerms, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let pairs = [
        (terms.flow, w.lambda_f),
        (terms.smooth, w.lambda_s),
        (terms.rigid, w.lambda_r),
        (terms.depth, w.lambda_d),
        (terms.boundary, w.lambda_bnd),
        (terms.uncover, w.lambda_unc),
    ];
    if pairs.iter().any(|(t, _)| !t.is_finite()) {
        return Err(Error::InvalidArgument("loss terms must be finite".into()));
    }
    Ok(pairs.iter().map(|(t, w)| t * w).sum())
}

fn masked_errors<'a>(
    flow: &'a FlowField,
    truth: &'a FlowField,
    mask: &'a PixelMask,
) -> Result<impl Iterator<Item = (f64, f64, f64)> + 'a> {
    check_dims(flow.dims(), truth.dims())?;
    check_dims(flow.dims(), mask.dims())?;
    if !(mask.sum() > 0.0) {
        return Err(Error::EmptyMask("evaluation mask"));
    }
    Ok(flow
        .iter()
        .zip(truth.iter())
        .zip(mask.iter())
        .map(|((f, t), m)| ((f - t).norm(), t.norm(), *m)))
}

/// Mask-weighted mean end-point error.
pub fn epe(flow: &FlowField, truth: &FlowField, mask: &PixelMask) -> Result<f64> {
    let (num, den) = masked_errors(flow, truth, mask)?.fold((0.0, 0.0), |(n, d), (e, _, m)| (n + m * e, d + m));
    Ok(num / den)
}

/// Fraction of masked pixels whose error exceeds both 3 px and 5% of the
/// true flow magnitude.
pub fn fl_all(flow: &FlowField, truth: &FlowField, mask: &PixelMask) -> Result<f64> {
    let (num, den) = masked_errors(flow, truth, mask)?.fold((0.0, 0.0), |(n, d), (e, mag, m)| {
        let bad = e > 3.0 && e > 0.05 * mag;
        (n + if bad { m } else { 0.0 }, d + m)
    });
    Ok(num / den)
}

/// Two-class (moving, static) segmentation scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub mean_iou: f64,
    pub fw_iou: f64,
}

/// Compares hard masks with the moving class as 1 (values ≥ 0.5 count as
/// moving). Classes absent from both masks are left out of the means.
pub fn segmentation_metrics(pred: &PixelMask, truth: &PixelMask) -> Result<SegmentationScores> {
    check_dims(pred.dims(), truth.dims())?;
    if pred.is_empty() {
        return Err(Error::EmptyMask("segmentation masks"));
    }
    // confusion[truth][pred], class 1 = moving
    let mut confusion = [[0.0f64; 2]; 2];
    for (p, t) in pred.iter().zip(truth.iter()) {
        confusion[usize::from(*t >= 0.5)][usize::from(*p >= 0.5)] += 1.0;
    }
    let total = pred.len() as f64;
    let (mut acc_sum, mut iou_sum, mut fw, mut classes) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..2 {
        let gt = confusion[c][0] + confusion[c][1];
        let predicted = confusion[0][c] + confusion[1][c];
        if gt == 0.0 && predicted == 0.0 {
            continue;
        }
        let tp = confusion[c][c];
        let union = gt + predicted - tp;
        let iou = tp / union;
        acc_sum += if gt > 0.0 { tp / gt } else { 0.0 };
        iou_sum += iou;
        fw += gt / total * iou;
        classes += 1.0;
    }
    Ok(SegmentationScores {
        pixel_acc: (confusion[0][0] + confusion[1][1]) / total,
        mean_acc: acc_sum / classes,
        mean_iou: iou_sum / classes,
        fw_iou: fw,
    })
}

/// Evaluation summary of one frame pair. Region EPEs are absent when the
/// region is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epe_all: f64,
    pub epe_move: Option<f64>,
    pub epe_static: Option<f64>,
    pub fl_all: f64,
    pub pixel_acc: f64,
    pub mean_acc: f64,
    pub mean_iou: f64,
    pub fw_iou: f64,
    pub ate_mean: f64,
    pub ate_std: f64,
}

/// EPE restricted to `mask`, or `None` when the mask is empty.
pub fn region_epe(flow: &FlowField, truth: &FlowField, mask: &PixelMask) -> Result<Option<f64>> {
    match epe(flow, truth, mask) {
        Ok(e) => Ok(Some(e)),
        Err(Error::EmptyMask(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn constant(w: usize, h: usize, x: f64, y: f64) -> FlowField {
        Grid::filled(w, h, Vector2::new(x, y))
    }

    #[test]
    fn fusion_endpoints_and_midpoint() {
        let fo = constant(3, 2, 2.0, 0.0);
        let fr = constant(3, 2, 0.0, 2.0);
        assert_eq!(fuse_flow(&fo, &fr, &Grid::filled(3, 2, 1.0)).unwrap(), fr);
        assert_eq!(fuse_flow(&fo, &fr, &Grid::filled(3, 2, 0.0)).unwrap(), fo);
        let mid = fuse_flow(&fo, &fr, &Grid::filled(3, 2, 0.5)).unwrap();
        assert!(mid.iter().all(|f| *f == Vector2::new(1.0, 1.0)));
    }

    #[test]
    fn energy_examples() {
        let ones = LossTerms {
            flow: 1.0,
            smooth: 1.0,
            rigid: 1.0,
            depth: 1.0,
            boundary: 1.0,
            uncover: 1.0,
        };
        let unit = LossWeights {
            lambda_f: 1.0,
            lambda_s: 1.0,
            lambda_r: 1.0,
            lambda_d: 1.0,
            lambda_bnd: 1.0,
            lambda_unc: 1.0,
        };
        assert_eq!(total_energy(&ones, &unit).unwrap(), 6.0);
        let zero = LossWeights {
            lambda_f: 0.0,
            lambda_s: 0.0,
            lambda_r: 0.0,
            lambda_d: 0.0,
            lambda_bnd: 0.0,
            lambda_unc: 0.0,
        };
        assert_eq!(total_energy(&ones, &zero).unwrap(), 0.0);
        let w = LossWeights::joint_stage();
        assert_eq!((w.lambda_r, w.lambda_d, w.lambda_bnd, w.lambda_unc), (1.0, 1.0, 0.023, 1.0));
    }

    #[test]
    fn epe_examples() {
        let gt = FlowField::zeros(4, 4);
        let all = Grid::filled(4, 4, 1.0);
        assert_eq!(epe(&gt, &gt, &all).unwrap(), 0.0);
        let single = Grid::from_fn(4, 4, |u, v| if (u, v) == (1, 2) { 1.0 } else { 0.0 });
        assert_eq!(epe(&constant(4, 4, 3.0, 4.0), &gt, &single).unwrap(), 5.0);
        assert_eq!(epe(&constant(4, 4, 1.0, 0.0), &gt, &all).unwrap(), 1.0);
        assert!(matches!(epe(&gt, &gt, &Grid::filled(4, 4, 0.0)), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn fl_all_examples() {
        let gt = constant(4, 4, 1.0, 0.0);
        let all = Grid::filled(4, 4, 1.0);
        assert_eq!(fl_all(&gt, &gt, &all).unwrap(), 0.0);
        assert_eq!(fl_all(&constant(4, 4, 11.0, 0.0), &gt, &all).unwrap(), 1.0);
        assert_eq!(fl_all(&constant(4, 4, 3.0, 0.0), &gt, &all).unwrap(), 0.0);
    }

    #[test]
    fn segmentation_examples() {
        let gt = Grid::from_fn(10, 10, |u, _| if u < 5 { 1.0 } else { 0.0 });
        let s = segmentation_metrics(&gt, &gt).unwrap();
        assert_eq!((s.pixel_acc, s.mean_acc, s.mean_iou, s.fw_iou), (1.0, 1.0, 1.0, 1.0));

        let inv = gt.map(|x| 1.0 - x);
        let s = segmentation_metrics(&inv, &gt).unwrap();
        assert_eq!((s.pixel_acc, s.mean_iou), (0.0, 0.0));

        let gt = Grid::from_fn(10, 10, |u, _| if u == 0 { 1.0 } else { 0.0 });
        let s = segmentation_metrics(&Grid::filled(10, 10, 0.0), &gt).unwrap();
        assert!((s.pixel_acc - 0.9).abs() < 1e-15);
        assert!((s.mean_iou - 0.45).abs() < 1e-15);

        let none = Grid::filled(10, 10, 0.0);
        let s = segmentation_metrics(&none, &none).unwrap();
        assert_eq!(s.mean_iou, 1.0);
    }
}
