//! Procedural generator of articulated-chain silhouettes.
//!
//! Each sample is a K-joint open polyline ("articulated arm") rendered with
//! anti-aliased strokes and joint disks onto a noisy background. The joints
//! are the landmarks; the chain topology mirrors the landmark graph used by
//! the model. Every sample is fully determined by a single 64-bit seed, so a
//! dataset is reproducible from (config, dataset seed) alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::pgm::quantize_intensity;
use crate::data::splitmix64;
use crate::error::{Error, Result};
use crate::graph::LandmarkSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Number of joints (landmarks).
    pub k: usize,
    pub image_h: usize,
    pub image_w: usize,
    /// Limb length range, normalized units.
    pub limb_min: f64,
    pub limb_max: f64,
    /// Overall chain heading range (radians around horizontal).
    pub heading_range: f64,
    /// Per-joint turn range (radians, relative to previous limb).
    pub turn_range: f64,
    /// Stroke width range, pixels.
    pub stroke_min: f64,
    pub stroke_max: f64,
    /// Joint disk radius range, pixels.
    pub joint_radius_min: f64,
    pub joint_radius_max: f64,
    /// Foreground brightness range.
    pub fg_min: f64,
    pub fg_max: f64,
    /// Uniform background noise amplitude.
    pub background_noise: f64,
    /// Landmarks stay at least this far (normalized) from every border.
    pub margin: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            k: 8,
            image_h: 64,
            image_w: 64,
            limb_min: 0.085,
            limb_max: 0.135,
            heading_range: 0.35,
            turn_range: 0.55,
            stroke_min: 1.4,
            stroke_max: 2.4,
            joint_radius_min: 1.8,
            joint_radius_max: 2.8,
            fg_min: 0.7,
            fg_max: 1.0,
            background_noise: 0.15,
            margin: 0.08,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("generator: k must be >= 1"));
        }
        if self.image_h < 2 || self.image_w < 2 {
            return Err(Error::invalid("generator: image dims must be >= 2"));
        }
        if !(self.limb_min > 0.0 && self.limb_min <= self.limb_max) {
            return Err(Error::invalid("generator: need 0 < limb_min <= limb_max"));
        }
        if !(self.heading_range >= 0.0 && self.turn_range >= 0.0) {
            return Err(Error::invalid("generator: heading/turn ranges must be >= 0"));
        }
        if !(self.stroke_min > 0.0 && self.stroke_min <= self.stroke_max) {
            return Err(Error::invalid("generator: need 0 < stroke_min <= stroke_max"));
        }
        if !(self.joint_radius_min >= 0.0 && self.joint_radius_min <= self.joint_radius_max) {
            return Err(Error::invalid("generator: need 0 <= joint_radius_min <= joint_radius_max"));
        }
        if !(self.fg_min > 0.0 && self.fg_min <= self.fg_max && self.fg_max <= 1.0) {
            return Err(Error::invalid("generator: need 0 < fg_min <= fg_max <= 1"));
        }
        if !(0.0..1.0).contains(&self.background_noise) {
            return Err(Error::invalid("generator: background_noise must be in [0, 1)"));
        }
        if !(0.0..0.4).contains(&self.margin) {
            return Err(Error::invalid("generator: margin must be in [0, 0.4)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub id: String,
    pub seed: u64,
    pub image: Tensor,
    pub landmarks: LandmarkSet,
}

/// Seed of sample `index` in the dataset seeded by `dataset_seed`.
pub fn per_sample_seed(dataset_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(dataset_seed) ^ index)
}

pub fn sample_id(seed: u64) -> String {
    format!("s{seed:016x}")
}

fn dist_point_segment(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let dx = bx - ax;
    let dy = by - ay;
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) };
    let cx = ax + t * dx;
    let cy = ay + t * dy;
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Generate one sample. Draw order (fixed for reproducibility): headings,
/// limb lengths, stroke width, joint radius, foreground level, placement,
/// then per-pixel background noise in row-major order.
pub fn generate_sample(cfg: &GeneratorConfig, seed: u64) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Skeleton in an unplaced frame.
    let base_heading = if cfg.heading_range > 0.0 {
        rng.random_range(-cfg.heading_range..=cfg.heading_range)
    } else {
        0.0
    };
    let mut heading = base_heading;
    let mut pts = vec![[0.0f64, 0.0f64]];
    for i in 0..cfg.k.saturating_sub(1) {
        if i > 0 && cfg.turn_range > 0.0 {
            heading += rng.random_range(-cfg.turn_range..=cfg.turn_range);
        }
        let limb = rng.random_range(cfg.limb_min..=cfg.limb_max);
        let last = *pts.last().expect("non-empty");
        pts.push([last[0] + limb * heading.cos(), last[1] + limb * heading.sin()]);
    }

    let stroke = rng.random_range(cfg.stroke_min..=cfg.stroke_max);
    let joint_radius = rng.random_range(cfg.joint_radius_min..=cfg.joint_radius_max);
    let fg = rng.random_range(cfg.fg_min..=cfg.fg_max);

    // Fit into the safe box: shrink if needed, then place uniformly at random.
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &pts {
        min_x = min_x.min(p[0]);
        min_y = min_y.min(p[1]);
        max_x = max_x.max(p[0]);
        max_y = max_y.max(p[1]);
    }
    let safe = 1.0 - 2.0 * cfg.margin;
    let extent = (max_x - min_x).max(max_y - min_y);
    let scale = if extent > safe { safe / extent } else { 1.0 };
    let span_x = (max_x - min_x) * scale;
    let span_y = (max_y - min_y) * scale;
    let ox = cfg.margin + rng.random_range(0.0..=(safe - span_x).max(0.0)) - min_x * scale;
    let oy = cfg.margin + rng.random_range(0.0..=(safe - span_y).max(0.0)) - min_y * scale;
    let landmarks: Vec<[f64; 2]> =
        pts.iter().map(|p| [p[0] * scale + ox, p[1] * scale + oy]).collect();

    // Render: landmarks live on the corner-aligned pixel grid
    // (x_px = x * (w - 1)), strokes and disks get a 1-pixel soft edge.
    let (h, w) = (cfg.image_h, cfg.image_w);
    let px: Vec<[f64; 2]> = landmarks
        .iter()
        .map(|p| [p[0] * (w - 1) as f64, p[1] * (h - 1) as f64])
        .collect();
    let aa = 1.0;
    let reach = stroke / 2.0 + joint_radius + aa + 1.0;
    let mut data = Vec::with_capacity(h * w);
    for iy in 0..h {
        for ix in 0..w {
            let (x, y) = (ix as f64, iy as f64);
            let mut shape = 0.0f64;
            for s in px.windows(2) {
                let quick = (x - s[0][0].min(s[1][0])).max(s[0][0].max(s[1][0]) - x).max(0.0)
                    + (y - s[0][1].min(s[1][1])).max(s[0][1].max(s[1][1]) - y).max(0.0);
                if quick > 2.0 * reach {
                    continue;
                }
                let d = dist_point_segment(x, y, s[0][0], s[0][1], s[1][0], s[1][1]);
                shape = shape.max((1.0 - (d - stroke / 2.0) / aa).clamp(0.0, 1.0));
            }
            for p in &px {
                let d = ((x - p[0]).powi(2) + (y - p[1]).powi(2)).sqrt();
                shape = shape.max((1.0 - (d - joint_radius) / aa).clamp(0.0, 1.0));
            }
            let noise = if cfg.background_noise > 0.0 {
                rng.random_range(0.0..cfg.background_noise)
            } else {
                0.0
            };
            let fg_v = shape * fg;
            // Screen blend keeps strokes bright and the value in [0, 1].
            data.push(quantize_intensity(fg_v + noise * (1.0 - fg_v)));
        }
    }

    Ok(SynthSample {
        id: sample_id(seed),
        seed,
        image: Tensor::new(vec![1, h, w], data)?,
        landmarks: LandmarkSet::new(landmarks),
    })
}

/// Generate `n` consecutive samples starting at `start_index`.
pub fn generate_samples(
    cfg: &GeneratorConfig,
    dataset_seed: u64,
    start_index: u64,
    n: usize,
) -> Result<Vec<SynthSample>> {
    (0..n as u64)
        .map(|i| generate_sample(cfg, per_sample_seed(dataset_seed, start_index + i)))
        .collect()
}
