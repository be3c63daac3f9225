//! Similarity-transform augmentation and input-noise perturbation.
//!
//! Landmarks are transformed exactly; images are warped by inverse-mapping
//! each output pixel through the transform and sampling the source bilinearly
//! with zero fill outside the frame.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{apply_affine, AffineParams, LandmarkSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Rotation drawn from [-max_rotation, max_rotation], radians.
    pub max_rotation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation: std::f64::consts::PI / 6.0,
            scale_min: 0.8,
            scale_max: 1.25,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation >= 0.0 && self.max_rotation <= std::f64::consts::PI / 6.0 + 1e-12) {
            return Err(Error::invalid("augment: max_rotation must be in [0, pi/6]"));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max <= 2.0) {
            return Err(Error::invalid("augment: need 0 < scale_min <= scale_max <= 2"));
        }
        Ok(())
    }
}

/// Draw a random similarity transform (rotation and scale about the image
/// center) whose translation keeps the transformed reference points inside
/// the unit square when possible. Draw order: angle, scale, tx, ty.
pub fn sample_augment_params(
    cfg: &AugmentConfig,
    reference: &LandmarkSet,
    rng: &mut ChaCha8Rng,
) -> Result<AffineParams> {
    cfg.validate()?;
    if reference.k() == 0 {
        return Err(Error::invalid("augment: empty reference shape"));
    }
    let angle = if cfg.max_rotation > 0.0 {
        rng.random_range(-cfg.max_rotation..=cfg.max_rotation)
    } else {
        0.0
    };
    let scale = if cfg.scale_min < cfg.scale_max {
        rng.random_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    };
    let base = AffineParams::similarity(angle, scale, [0.5, 0.5], [0.0, 0.0]);
    let moved = apply_affine(reference, &base);
    let (min, max) = moved.bounding_box().expect("non-empty");
    let mut t = [0.0f64; 2];
    for axis in 0..2 {
        let lo = -min[axis];
        let hi = 1.0 - max[axis];
        t[axis] = if lo <= hi { rng.random_range(lo..=hi) } else { (lo + hi) / 2.0 };
    }
    Ok(AffineParams::similarity(angle, scale, [0.5, 0.5], t))
}

fn bilinear_zero_fill(src: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    if !x.is_finite() || !y.is_finite() {
        return 0.0;
    }
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f as i64;
    let y0 = y0f as i64;
    let at = |xi: i64, yi: i64| -> f64 {
        if xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
            0.0
        } else {
            src[yi as usize * w + xi as usize]
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Apply one similarity transform to an image (and its landmarks, if given).
pub fn augment_sample(
    image: &Tensor,
    landmarks: Option<&LandmarkSet>,
    a: &AffineParams,
) -> Result<(Tensor, Option<LandmarkSet>)> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 || s[1] < 2 || s[2] < 2 {
        return Err(Error::invalid(format!("augment: image must be [1,h,w], h,w >= 2, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let inv = a.inverse().ok_or_else(|| Error::invalid("augment: singular transform"))?;
    let src = image.data();
    let sx = (w - 1) as f64;
    let sy = (h - 1) as f64;
    let mut out = Vec::with_capacity(h * w);
    for iy in 0..h {
        for ix in 0..w {
            let p = inv.apply_point([ix as f64 / sx, iy as f64 / sy]);
            out.push(bilinear_zero_fill(src, h, w, p[0] * sx, p[1] * sy));
        }
    }
    let warped = Tensor::new(vec![1, h, w], out)?;
    let lm = landmarks.map(|l| apply_affine(l, a));
    Ok((warped, lm))
}

/// Additive Gaussian pixel noise, clamped back to [0, 1]. `std == 0` returns
/// the input bit-for-bit.
pub fn add_gaussian_noise(image: &Tensor, std: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if !(std >= 0.0) {
        return Err(Error::invalid("noise: std must be >= 0"));
    }
    if std == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, std).expect("std > 0");
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn gradient_image(h: usize, w: usize) -> Tensor {
        let data = (0..h * w).map(|i| (i % w) as f64 / (w - 1) as f64).collect();
        Tensor::new(vec![1, h, w], data).unwrap()
    }

    #[test]
    fn identity_transform_preserves_image_closely() {
        let img = gradient_image(8, 8);
        let (out, _) = augment_sample(&img, None, &AffineParams::identity()).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn landmarks_transform_exactly() {
        let img = gradient_image(4, 4);
        let lm = LandmarkSet::new(vec![[0.25, 0.25], [0.75, 0.5]]);
        let a = AffineParams::similarity(0.0, 1.0, [0.5, 0.5], [0.1, -0.05]);
        let (_, out) = augment_sample(&img, Some(&lm), &a).unwrap();
        let out = out.unwrap();
        assert_eq!(out.points()[0], [0.25 + 0.1, 0.25 - 0.05]);
        assert_eq!(out.points()[1], [0.75 + 0.1, 0.5 - 0.05]);
    }

    #[test]
    fn translation_shifts_pixels() {
        // 5x5 image, single bright pixel at center; shift right by exactly
        // one pixel (normalized 1/4).
        let mut data = vec![0.0; 25];
        data[2 * 5 + 2] = 1.0;
        let img = Tensor::new(vec![1, 5, 5], data).unwrap();
        let a = AffineParams::similarity(0.0, 1.0, [0.5, 0.5], [0.25, 0.0]);
        let (out, _) = augment_sample(&img, None, &a).unwrap();
        assert!((out.data()[2 * 5 + 3] - 1.0).abs() < 1e-9);
        assert!(out.data()[2 * 5 + 2].abs() < 1e-9);
    }

    #[test]
    fn out_of_frame_is_zero_filled() {
        let img = Tensor::full(vec![1, 4, 4], 1.0);
        let a = AffineParams::similarity(0.0, 1.0, [0.5, 0.5], [0.5, 0.0]);
        let (out, _) = augment_sample(&img, None, &a).unwrap();
        // Left half came from outside the source frame.
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[4], 0.0);
        assert!((out.data()[3] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_params_keep_reference_in_frame() {
        let cfg = AugmentConfig::default();
        let reference = LandmarkSet::new(vec![[0.2, 0.2], [0.8, 0.3], [0.5, 0.8]]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let a = sample_augment_params(&cfg, &reference, &mut rng).unwrap();
            let moved = apply_affine(&reference, &a);
            for p in moved.points() {
                assert!((-1e-9..=1.0 + 1e-9).contains(&p[0]), "x out of frame: {}", p[0]);
                assert!((-1e-9..=1.0 + 1e-9).contains(&p[1]), "y out of frame: {}", p[1]);
            }
        }
    }

    #[test]
    fn sampled_params_deterministic_per_seed() {
        let cfg = AugmentConfig::default();
        let reference = LandmarkSet::new(vec![[0.3, 0.3], [0.7, 0.7]]);
        let a = sample_augment_params(&cfg, &reference, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_augment_params(&cfg, &reference, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_zero_is_identity() {
        let img = gradient_image(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_gaussian_noise(&img, 0.0, &mut rng).unwrap(), img);
    }

    #[test]
    fn noise_stays_in_unit_range_and_is_seeded() {
        let img = gradient_image(6, 6);
        let a = add_gaussian_noise(&img, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = add_gaussian_noise(&img, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(a, img);
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig { max_rotation: 1.0, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { scale_min: 0.0, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { scale_min: 1.5, scale_max: 1.0, ..Default::default() }
            .validate()
            .is_err());
    }
}
