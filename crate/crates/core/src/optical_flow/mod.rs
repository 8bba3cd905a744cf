//! Pyramidal Lucas-Kanade optical flow, dense and per-point.

mod dense;
mod pyramid;
mod sparse;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dense::compute_flow;
pub use sparse::{track_points, PointFlow, PreparedFrame};

use crate::image::{GrayImage, Mask};
use crate::scene_sim::FrameSequence;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow input: {0}")]
    Input(String),
    #[error("flow dump failed: {0}")]
    Io(#[from] crate::io::IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub window_radius: usize,
    pub pyramid_levels: usize,
    pub iterations_per_level: usize,
    /// Smallest eigenvalue of the window-averaged structure tensor, with
    /// intensities scaled to [0, 1].
    pub min_eigenvalue: f64,
    /// Largest RMS intensity mismatch over the window after convergence.
    pub max_residual: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            window_radius: 7,
            pyramid_levels: 3,
            iterations_per_level: 5,
            min_eigenvalue: 1e-3,
            max_residual: 0.08,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<(), FlowError> {
        if self.window_radius < 1 {
            return Err(FlowError::Input("window_radius must be at least 1".into()));
        }
        if self.pyramid_levels < 1 {
            return Err(FlowError::Input("pyramid_levels must be at least 1".into()));
        }
        if self.pyramid_levels > 8 {
            return Err(FlowError::Input("pyramid_levels above 8 is not supported".into()));
        }
        Ok(())
    }
}

/// Per-pixel displacement from a source frame into a target frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub du: Vec<f32>,
    pub dv: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            du: vec![0.0; width * height],
            dv: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub(crate) fn from_parts(width: usize, height: usize, du: Vec<f32>, dv: Vec<f32>, valid: Vec<bool>) -> Self {
        Self {
            width,
            height,
            du,
            dv,
            valid,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32, bool) {
        let i = y * self.width + x;
        (self.du[i], self.dv[i], self.valid[i])
    }

    pub fn set(&mut self, x: usize, y: usize, du: f32, dv: f32, valid: bool) {
        let i = y * self.width + x;
        if valid {
            self.du[i] = du;
            self.dv[i] = dv;
        } else {
            self.du[i] = 0.0;
            self.dv[i] = 0.0;
        }
        self.valid[i] = valid;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    #[inline]
    pub fn magnitude(&self, i: usize) -> f32 {
        self.du[i].hypot(self.dv[i])
    }

    /// Writes `du` and `dv` as 8-bit images (128 + 8 px per level step, clamped)
    /// plus a JSON sidecar describing the encoding.
    pub fn dump_debug(&self, dir: &Path, stem: &str) -> Result<(), FlowError> {
        const SCALE: f32 = 8.0;
        let encode = |d: &[f32]| {
            GrayImage::from_fn(self.width, self.height, |x, y| {
                (128.0 + SCALE * d[y * self.width + x]).round().clamp(0.0, 255.0) as u8
            })
        };
        crate::io::write_pgm(&dir.join(format!("{stem}_du.pgm")), &encode(&self.du))?;
        crate::io::write_pgm(&dir.join(format!("{stem}_dv.pgm")), &encode(&self.dv))?;
        let meta = serde_json::json!({
            "width": self.width,
            "height": self.height,
            "offset": 128,
            "scale_per_px": SCALE,
            "valid_count": self.valid_count(),
        });
        crate::io::write_json(&dir.join(format!("{stem}.json")), &meta)?;
        Ok(())
    }
}

/// Flow from the anchor frame to every frame of the sequence, evaluated on
/// the mask pixels only. Each target is solved directly against the anchor.
pub fn compute_anchor_flows(
    frames: &FrameSequence,
    anchor_idx: usize,
    mask: &Mask,
    params: &FlowParams,
) -> Result<Vec<FlowField>, FlowError> {
    let guesses = vec![(0.0, 0.0); frames.len()];
    compute_anchor_flows_guided(frames, anchor_idx, mask, params, &guesses)
}

/// Same as [`compute_anchor_flows`] with a predicted displacement per target
/// frame, e.g. from a tracker.
pub fn compute_anchor_flows_guided(
    frames: &FrameSequence,
    anchor_idx: usize,
    mask: &Mask,
    params: &FlowParams,
    guesses: &[(f64, f64)],
) -> Result<Vec<FlowField>, FlowError> {
    params.validate()?;
    if anchor_idx >= frames.len() {
        return Err(FlowError::Input(format!(
            "anchor index {anchor_idx} outside {} frames",
            frames.len()
        )));
    }
    if guesses.len() != frames.len() {
        return Err(FlowError::Input("one displacement guess per frame is required".into()));
    }
    let anchor = &frames.frames[anchor_idx];
    if mask.width() != anchor.width() || mask.height() != anchor.height() {
        return Err(FlowError::Input("mask size differs from the frames".into()));
    }
    if mask.is_empty() {
        return Err(FlowError::Input("anchor mask is empty".into()));
    }
    let points = mask.pixels();
    let reference = PreparedFrame::new(anchor, params);
    Ok(frames
        .frames
        .iter()
        .zip(guesses)
        .enumerate()
        .map(|(j, (img, &guess))| {
            let mut field = FlowField::zeros(anchor.width(), anchor.height());
            if j == anchor_idx {
                for &(x, y) in &points {
                    field.set(x, y, 0.0, 0.0, true);
                }
                return field;
            }
            let target = PreparedFrame::new(img, params);
            for (&(x, y), f) in points
                .iter()
                .zip(track_points(&reference, &target, &points, guess, params))
            {
                field.set(x, y, f.du as f32, f.dv as f32, f.valid);
            }
            field
        })
        .collect())
}

/// Valid pixels moving faster than the threshold, reduced to the largest
/// connected component.
pub fn moving_mask(flow: &FlowField, magnitude_threshold: f32) -> Mask {
    raw_moving(flow, magnitude_threshold).largest_component()
}

/// Every moving component, largest first.
pub fn moving_components(flow: &FlowField, magnitude_threshold: f32) -> Vec<Mask> {
    raw_moving(flow, magnitude_threshold).components()
}

fn raw_moving(flow: &FlowField, threshold: f32) -> Mask {
    Mask::from_fn(flow.width, flow.height, |x, y| {
        let i = y * flow.width + x;
        flow.valid[i] && flow.magnitude(i) > threshold
    })
}

/// Band-limited texture used by the flow tests, sampled at an offset.
pub fn test_pattern(width: usize, height: usize, shift_x: f64, shift_y: f64) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| {
        let u = x as f64 - shift_x;
        let v = y as f64 - shift_y;
        let s = 0.5
            + 0.2 * (u / 2.3).sin() * (v / 2.7).cos()
            + 0.15 * ((u + 0.6 * v) / 3.4).sin()
            + 0.1 * ((v - 0.3 * u) / 2.1).cos();
        (255.0 * s).round().clamp(0.0, 255.0) as u8
    })
}
