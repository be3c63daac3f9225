//! SVG overlays: the input image with skeleton edges, predicted landmarks,
//! and (optionally) ground truth drawn on top.
//!
//! The grayscale image is embedded as a base64 PNG inside the SVG so a
//! single self-contained file can be opened in any browser.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::graph::{GraphTopology, LandmarkSet};
use crate::tensor::Tensor;

const PRED_COLOR: &str = "#e4572e";
const GT_COLOR: &str = "#3cb371";
const EDGE_COLOR: &str = "#4f9dde";

fn png_base64(image: &Tensor) -> Result<(String, usize, usize)> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 || s[1] == 0 || s[2] == 0 {
        return Err(Error::invalid(format!("overlay: image must be [1,h,w], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let pixels: Vec<u8> =
        image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let mut png = Vec::new();
    PngEncoder::new(&mut png)
        .write_image(&pixels, w as u32, h as u32, ExtendedColorType::L8)
        .map_err(|e| Error::format(format!("overlay: png encoding failed: {e}")))?;
    Ok((BASE64.encode(&png), h, w))
}

/// Landmark (normalized) to SVG canvas coordinates: the image pixel grid is
/// corner-aligned, pixel centers sit at (i + 0.5) * scale on the canvas.
fn canvas_xy(p: &[f64; 2], w: usize, h: usize, scale: usize) -> (f64, f64) {
    let x = (p[0] * (w - 1) as f64 + 0.5) * scale as f64;
    let y = (p[1] * (h - 1) as f64 + 0.5) * scale as f64;
    (x, y)
}

/// Render one sample to an SVG string. `scale` is the integer up-scaling of
/// the raster (>= 1); prediction is drawn as filled circles, ground truth
/// (when given) as open circles, skeleton edges along the prediction.
pub fn render_overlay(
    image: &Tensor,
    pred: &LandmarkSet,
    gt: Option<&LandmarkSet>,
    topology: &GraphTopology,
    scale: usize,
) -> Result<String> {
    if scale == 0 {
        return Err(Error::invalid("overlay: scale must be >= 1"));
    }
    if pred.k() != topology.k() {
        return Err(Error::invalid(format!(
            "overlay: prediction has {} landmarks, topology {}",
            pred.k(),
            topology.k()
        )));
    }
    if let Some(gt) = gt {
        if gt.k() != pred.k() {
            return Err(Error::invalid("overlay: ground truth landmark count differs"));
        }
    }
    let (b64, h, w) = png_base64(image)?;
    let (cw, ch) = (w * scale, h * scale);
    let r_pred = (scale as f64 * 0.45).max(1.5);
    let r_gt = r_pred + 1.5;
    let stroke = (scale as f64 * 0.2).max(1.0);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{cw}\" height=\"{ch}\" \
         viewBox=\"0 0 {cw} {ch}\">\n"
    ));
    svg.push_str(&format!(
        "  <image width=\"{cw}\" height=\"{ch}\" style=\"image-rendering: pixelated\" \
         href=\"data:image/png;base64,{b64}\"/>\n"
    ));
    for &(a, b) in topology.edges() {
        let (x1, y1) = canvas_xy(&pred.points()[a], w, h, scale);
        let (x2, y2) = canvas_xy(&pred.points()[b], w, h, scale);
        svg.push_str(&format!(
            "  <line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" \
             stroke=\"{EDGE_COLOR}\" stroke-width=\"{stroke:.2}\" stroke-opacity=\"0.8\"/>\n"
        ));
    }
    if let Some(gt) = gt {
        for p in gt.points() {
            let (x, y) = canvas_xy(p, w, h, scale);
            svg.push_str(&format!(
                "  <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r_gt:.2}\" fill=\"none\" \
                 stroke=\"{GT_COLOR}\" stroke-width=\"{stroke:.2}\"/>\n"
            ));
        }
    }
    for (i, p) in pred.points().iter().enumerate() {
        let (x, y) = canvas_xy(p, w, h, scale);
        svg.push_str(&format!(
            "  <circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r_pred:.2}\" fill=\"{PRED_COLOR}\" \
             fill-opacity=\"0.9\"><title>landmark {i}</title></circle>\n"
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_overlay(
    path: &Path,
    image: &Tensor,
    pred: &LandmarkSet,
    gt: Option<&LandmarkSet>,
    topology: &GraphTopology,
    scale: usize,
) -> Result<()> {
    let svg = render_overlay(image, pred, gt, topology, scale)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
