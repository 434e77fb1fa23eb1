//! Backward warping and the l1 + SSIM photometric error.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::grid::{FlowField, Grid, Image, PixelMask, ScalarMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhotometricConfig {
    /// Weight of the l1 term; SSIM gets `1 - lambda_rho`.
    pub lambda_rho: f64,
    pub ssim_window: usize,
    pub ssim_c1: f64,
    pub ssim_c2: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            lambda_rho: 0.003,
            ssim_window: 3,
            ssim_c1: 1e-4,
            ssim_c2: 9e-4,
        }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_rho) {
            return Err(Error::InvalidConfig(format!(
                "lambda_rho {} outside [0, 1]",
                self.lambda_rho
            )));
        }
        if self.ssim_window < 3 || self.ssim_window % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "ssim_window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_c1 > 0.0 && self.ssim_c2 > 0.0) {
            return Err(Error::InvalidConfig("SSIM stabilizers must be > 0".into()));
        }
        Ok(())
    }
}

/// Samples `image` at `x + flow(x)` with bilinear interpolation.
///
/// The mask is 1 where the sample point lies inside the grid; elsewhere the
/// output is 0.
pub fn warp_image(image: &Image, flow: &FlowField) -> Result<(Image, PixelMask)> {
    check_dims(image.dims(), flow.dims())?;
    let c = image.channels();
    let mut mask = Grid::filled(image.width(), image.height(), 0.0);
    let mut buf = vec![0.0; c];
    let out = Image::from_fn(image.width(), image.height(), c, |u, v, px| {
        let f = flow.get(u, v);
        if image.sample_into(u as f64 + f.x, v as f64 + f.y, &mut buf) {
            px.copy_from_slice(&buf);
            mask.set(u, v, 1.0);
        }
    })?;
    Ok((out, mask))
}

/// Like [`warp_image`], but pixels whose sample falls outside take the value
/// of `fallback`, so later windowed statistics are not polluted by zeros.
pub(crate) fn warp_with_fallback(
    image: &Image,
    flow: &FlowField,
    fallback: &Image,
) -> Result<(Image, PixelMask)> {
    check_dims(fallback.dims(), image.dims())?;
    let (warped, mask) = warp_image(image, flow)?;
    let c = image.channels();
    let out = Image::from_fn(image.width(), image.height(), c, |u, v, px| {
        let src = if *mask.get(u, v) > 0.0 {
            warped.pixel(u, v)
        } else {
            fallback.pixel(u, v)
        };
        px.copy_from_slice(src);
    })?;
    Ok((out, mask))
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    check_dims(a.dims(), b.dims())?;
    if a.channels() != b.channels() {
        return Err(Error::InvalidArgument(format!(
            "channel count mismatch: {} vs {}",
            a.channels(),
            b.channels()
        )));
    }
    Ok(())
}

/// Per-pixel structural dissimilarity `(1 - SSIM) / 2` in `[0, 1]`.
///
/// Statistics are box means over `ssim_window × ssim_window` with replicated
/// borders, computed per channel and averaged over channels.
pub fn ssim_map(a: &Image, b: &Image, cfg: &PhotometricConfig) -> Result<ScalarMap> {
    check_pair(a, b)?;
    cfg.validate()?;
    let (w, h) = a.dims();
    let ch = a.channels();
    let r = (cfg.ssim_window / 2) as isize;
    let n = (cfg.ssim_window * cfg.ssim_window) as f64;
    let clamp = |x: isize, len: usize| x.clamp(0, len as isize - 1) as usize;

    Ok(Grid::from_fn(w, h, |u, v| {
        let mut acc = 0.0;
        for c in 0..ch {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dv in -r..=r {
                let y = clamp(v as isize + dv, h);
                for du in -r..=r {
                    let x = clamp(u as isize + du, w);
                    let pa = a.pixel(x, y)[c];
                    let pb = b.pixel(x, y)[c];
                    sa += pa;
                    sb += pb;
                    saa += pa * pa;
                    sbb += pb * pb;
                    sab += pa * pb;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            let ssim = ((2.0 * ma * mb + cfg.ssim_c1) * (2.0 * cov + cfg.ssim_c2))
                / ((ma * ma + mb * mb + cfg.ssim_c1) * (va + vb + cfg.ssim_c2));
            acc += ((1.0 - ssim) / 2.0).clamp(0.0, 1.0);
        }
        acc / ch as f64
    }))
}

/// `λ·|a − b|₁ + (1 − λ)·(1 − SSIM)/2` per pixel, l1 averaged over channels.
pub fn photometric_error(a: &Image, b: &Image, cfg: &PhotometricConfig) -> Result<ScalarMap> {
    let ssim = ssim_map(a, b, cfg)?;
    let ch = a.channels() as f64;
    let lambda = cfg.lambda_rho;
    Ok(Grid::from_fn(a.width(), a.height(), |u, v| {
        let l1 = a
            .pixel(u, v)
            .iter()
            .zip(b.pixel(u, v))
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / ch;
        lambda * l1 + (1.0 - lambda) * ssim.get(u, v)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| rng.random::<f64>()).collect();
        Image::new(w, h, c, data).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let img = random_image(7, 5, 3, 1);
        let (out, mask) = warp_image(&img, &FlowField::zeros(7, 5)).unwrap();
        assert_eq!(out, img);
        assert!(mask.iter().all(|m| *m == 1.0));
    }

    #[test]
    fn integer_shift_matches_index_shift() {
        let img = random_image(8, 6, 1, 2);
        let flow = Grid::filled(8, 6, Vector2::new(1.0, 0.0));
        let (out, mask) = warp_image(&img, &flow).unwrap();
        for v in 0..6 {
            for u in 0..7 {
                assert_eq!(out.pixel(u, v), img.pixel(u + 1, v));
                assert_eq!(*mask.get(u, v), 1.0);
            }
            assert_eq!(*mask.get(7, v), 0.0);
            assert_eq!(out.pixel(7, v), &[0.0]);
        }
    }

    #[test]
    fn outward_flow_masks_border() {
        let img = random_image(6, 6, 1, 3);
        let flow = Grid::from_fn(6, 6, |u, _| {
            if u == 0 {
                Vector2::new(-0.5, 0.0)
            } else {
                Vector2::zeros()
            }
        });
        let (_, mask) = warp_image(&img, &flow).unwrap();
        for v in 0..6 {
            assert_eq!(*mask.get(0, v), 0.0);
            assert_eq!(*mask.get(1, v), 1.0);
        }
    }

    #[test]
    fn ssim_identical_is_zero() {
        let img = random_image(9, 7, 3, 4);
        let m = ssim_map(&img, &img, &PhotometricConfig::default()).unwrap();
        assert!(m.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn ssim_of_constant_patches() {
        let a = Image::filled(5, 5, 1, 0.3).unwrap();
        let b = Image::filled(5, 5, 1, 0.7).unwrap();
        let m = ssim_map(&a, &b, &PhotometricConfig::default()).unwrap();
        // variances vanish, so SSIM is the luminance term (2·0.21 + 1e-4) / (0.58 + 1e-4)
        let expected = (1.0 - 0.4201 / 0.5801) / 2.0;
        assert!(m.iter().all(|x| (x - expected).abs() < 1e-12));
    }

    #[test]
    fn ssim_anticorrelated_is_large() {
        let a = random_image(16, 12, 3, 5);
        let b = Image::new(16, 12, 3, a.data().iter().map(|x| 1.0 - x).collect()).unwrap();
        let m = ssim_map(&a, &b, &PhotometricConfig::default()).unwrap();
        assert!(m.iter().all(|x| *x > 0.4), "min {}", m.iter().cloned().fold(1.0, f64::min));
    }

    #[test]
    fn pure_l1_branch() {
        let a = Image::from_fn(6, 6, 1, |u, v, p| p[0] = 0.1 + 0.05 * (u + v) as f64).unwrap();
        let b = Image::new(6, 6, 1, a.data().iter().map(|x| x + 0.1).collect()).unwrap();
        let cfg = PhotometricConfig {
            lambda_rho: 1.0,
            ..Default::default()
        };
        let m = photometric_error(&a, &b, &cfg).unwrap();
        assert!(m.iter().all(|x| (x - 0.1).abs() < 1e-12));
    }

    #[test]
    fn default_balance_weight() {
        assert_eq!(PhotometricConfig::default().lambda_rho, 0.003);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PhotometricConfig::default();
        cfg.ssim_window = 4;
        assert!(cfg.validate().is_err());
        cfg.ssim_window = 3;
        cfg.lambda_rho = 1.5;
        assert!(cfg.validate().is_err());
    }
}
