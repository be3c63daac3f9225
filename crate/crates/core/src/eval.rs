//! Prediction quality metrics.
//!
//! Landmark coordinates are normalized; errors are reported in pixels by
//! scaling each axis with the image dimensions. An image counts as a failure
//! when any of its landmarks lands farther than a threshold fraction of the
//! image width from its ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphTopology, LandmarkSet, MeanShape};
use crate::model::{predict, ModelParams};
use crate::tensor::Tensor;

pub const DEFAULT_FAILURE_FRACTION: f64 = 0.05;

/// Per-landmark Euclidean error in pixels:
/// sqrt((dx * width)^2 + (dy * height)^2).
pub fn euclidean_errors(
    pred: &LandmarkSet,
    gt: &LandmarkSet,
    width_px: usize,
    height_px: usize,
) -> Result<Vec<f64>> {
    if pred.k() != gt.k() {
        return Err(Error::invalid(format!(
            "euclidean_errors: prediction has {} landmarks, ground truth {}",
            pred.k(),
            gt.k()
        )));
    }
    if width_px == 0 || height_px == 0 {
        return Err(Error::invalid("euclidean_errors: image dims must be >= 1"));
    }
    Ok(pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| {
            let dx = (p[0] - g[0]) * width_px as f64;
            let dy = (p[1] - g[1]) * height_px as f64;
            (dx * dx + dy * dy).sqrt()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub k: usize,
    pub image_w: usize,
    pub image_h: usize,
    /// Mean per-landmark error, pixels.
    pub mean_error_px: f64,
    /// Population standard deviation of per-landmark errors, pixels.
    pub std_error_px: f64,
    /// Mean error as a fraction of image width.
    pub mean_error_frac: f64,
    /// Failure threshold in pixels (fraction of width).
    pub threshold_px: f64,
    /// Fraction of images with at least one landmark beyond the threshold.
    pub failure_rate: f64,
    /// Mean error per landmark index, pixels.
    pub per_landmark_mean_px: Vec<f64>,
    /// Number of beyond-threshold occurrences per landmark index.
    pub per_landmark_failures: Vec<usize>,
}

/// Aggregate errors over (prediction, ground-truth) pairs.
pub fn report_from_errors(
    errors_per_image: &[Vec<f64>],
    k: usize,
    image_w: usize,
    image_h: usize,
    failure_fraction: f64,
) -> Result<EvalReport> {
    if errors_per_image.is_empty() {
        return Err(Error::invalid("evaluate: no images"));
    }
    if !(failure_fraction > 0.0) {
        return Err(Error::invalid("evaluate: failure fraction must be > 0"));
    }
    if errors_per_image.iter().any(|e| e.len() != k) {
        return Err(Error::invalid("evaluate: per-image error count does not match k"));
    }
    let threshold_px = failure_fraction * image_w as f64;
    let n_images = errors_per_image.len();
    let total = (n_images * k) as f64;

    let mut sum = 0.0;
    let mut per_landmark_sum = vec![0.0f64; k];
    let mut per_landmark_failures = vec![0usize; k];
    let mut failed_images = 0usize;
    for errs in errors_per_image {
        let mut any = false;
        for (i, &e) in errs.iter().enumerate() {
            sum += e;
            per_landmark_sum[i] += e;
            if e > threshold_px {
                per_landmark_failures[i] += 1;
                any = true;
            }
        }
        if any {
            failed_images += 1;
        }
    }
    let mean = sum / total;
    let mut var = 0.0;
    for errs in errors_per_image {
        for &e in errs {
            var += (e - mean) * (e - mean);
        }
    }
    var /= total;

    Ok(EvalReport {
        n_images,
        k,
        image_w,
        image_h,
        mean_error_px: mean,
        std_error_px: var.sqrt(),
        mean_error_frac: mean / image_w as f64,
        threshold_px,
        failure_rate: failed_images as f64 / n_images as f64,
        per_landmark_mean_px: per_landmark_sum.iter().map(|s| s / n_images as f64).collect(),
        per_landmark_failures,
    })
}

/// Run the model over labeled samples and aggregate the error statistics.
/// Uses the final cascade output as the prediction.
pub fn evaluate(
    params: &ModelParams,
    samples: &[(&Tensor, &LandmarkSet)],
    mean_shape: &MeanShape,
    topology: &GraphTopology,
    failure_fraction: f64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluate: no samples"));
    }
    let (w, h) = (params.desc.image_w, params.desc.image_h);
    let errors: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|(image, gt)| {
            let pred = predict(params, image, mean_shape, topology)?;
            euclidean_errors(pred.v_local(), gt, w, h)
        })
        .collect::<Result<_>>()?;
    report_from_errors(&errors, params.desc.k, w, h, failure_fraction)
}

/// Mean per-landmark pixel error over a sample list (validation metric).
pub fn mean_error_px(
    params: &ModelParams,
    samples: &[(&Tensor, &LandmarkSet)],
    mean_shape: &MeanShape,
    topology: &GraphTopology,
) -> Result<f64> {
    let report = evaluate(params, samples, mean_shape, topology, DEFAULT_FAILURE_FRACTION)?;
    Ok(report.mean_error_px)
}
