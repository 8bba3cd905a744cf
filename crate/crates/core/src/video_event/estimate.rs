use serde::{Deserialize, Serialize};

use super::fit::{estimate_collision_time, fit_pixel, CollisionTimeEstimate, FitParams, PixelTrajectoryFit};
use super::split::{coarse_split_with, CollisionSplit, MIN_DELTA_A_PX};
use super::track::{track_from, CentroidTrack, TrackParams};
use super::VideoEventError;
use crate::image::Mask;
use crate::optical_flow::{track_points, FlowField, FlowParams, PreparedFrame};
use crate::scene_sim::FrameSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineParams {
    pub track: TrackParams,
    /// Flow settings for the anchor-to-frame fields.
    pub flow: FlowParams,
    pub fit: FitParams,
    /// Extra frames tracked on each side of the coarse window.
    pub margin_frames: usize,
    /// Erosion applied to the anchor mask so flow windows stay on the object.
    pub anchor_erode_px: usize,
    /// Track-wide floor for the acceleration-change detector, px/frame.
    pub min_delta_a_px: f64,
    /// Use the first post-collision frame as anchor instead of the last
    /// pre-collision one.
    pub anchor_post: bool,
}

impl Default for FineParams {
    fn default() -> Self {
        let fit = FitParams::default();
        Self {
            track: TrackParams::default(),
            flow: FlowParams {
                iterations_per_level: 20,
                ..FlowParams::default()
            },
            fit,
            margin_frames: fit.k + 3,
            anchor_erode_px: 7,
            min_delta_a_px: 0.25,
            anchor_post: false,
        }
    }
}

/// Result of the fine stage. Frame indices are absolute in the full-rate
/// sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineEstimate {
    pub track: CentroidTrack,
    pub split: CollisionSplit,
    pub anchor_frame: usize,
    pub anchor_pixels: usize,
    pub estimate: CollisionTimeEstimate,
}

/// Sub-frame collision time of the object marked by `mask` in frame
/// `ref_frame`, searched in the frame window `window` (inclusive).
pub fn refine_collision_time(
    frames: &FrameSequence,
    ref_frame: usize,
    mask: &Mask,
    window: (usize, usize),
    params: &FineParams,
) -> Result<FineEstimate, VideoEventError> {
    if frames.is_empty() {
        return Err(VideoEventError::Input("no frames".into()));
    }
    let last = frames.len() - 1;
    let lo = window.0.min(ref_frame).saturating_sub(params.margin_frames);
    let hi = (window.1.max(ref_frame) + params.margin_frames).min(last);
    let track = track_from(frames, ref_frame, mask, (lo, hi), &params.track)?;
    let k = params.fit.k.max(2);
    if track.len() < 2 * k + 2 {
        let end = track.points.last().map_or(ref_frame, |p| p.frame_idx);
        return Err(VideoEventError::TrackingLost { last_good: end });
    }
    let local = coarse_split_with(&track, k, params.min_delta_a_px.max(MIN_DELTA_A_PX))?;
    let base = track.points[0].frame_idx;
    let split = CollisionSplit {
        e: local.e + base,
        s: local.s + base,
        pre_set: local.pre_set.iter().map(|i| i + base).collect(),
        post_set: local.post_set.iter().map(|i| i + base).collect(),
    };
    let (anchor_local, anchor_frame) = if params.anchor_post {
        (local.s, split.s)
    } else {
        (local.e, split.e)
    };
    let ref_local = ref_frame - base;
    let disp = |i: usize| {
        let p = &track.points[i];
        let r = &track.points[ref_local];
        (p.x - r.x, p.y - r.y)
    };
    let (ax, ay) = disp(anchor_local);
    let anchor_mask = anchor_mask(mask, (ax, ay), params.anchor_erode_px);
    if anchor_mask.is_empty() {
        return Err(VideoEventError::Estimation("anchor mask is empty".into()));
    }

    // Flows only to the frames the fits use, anchor last on the pre side.
    let ordered: Vec<usize> = local.pre_set.iter().chain(&local.post_set).copied().collect();
    let points = anchor_mask.pixels();
    let reference = PreparedFrame::new(&frames.frames[anchor_frame], &params.flow);
    let mut flows = Vec::with_capacity(ordered.len());
    let mut times = Vec::with_capacity(ordered.len());
    for &i in &ordered {
        let n = i + base;
        let mut field = FlowField::zeros(frames.width(), frames.height());
        if n == anchor_frame {
            for &(x, y) in &points {
                field.set(x, y, 0.0, 0.0, true);
            }
        } else {
            let (dx, dy) = disp(i);
            let target = PreparedFrame::new(&frames.frames[n], &params.flow);
            let res = track_points(&reference, &target, &points, (dx - ax, dy - ay), &params.flow);
            for (&(x, y), f) in points.iter().zip(res) {
                field.set(x, y, f.du as f32, f.dv as f32, f.valid);
            }
        }
        flows.push(field);
        times.push(frames.timestamps[n]);
    }
    let n_pre = local.pre_set.len();
    let anchor_pos = if params.anchor_post { n_pre } else { n_pre - 1 };
    let fits = fit_ordered(&flows, &times, n_pre, anchor_pos, &params.fit);
    let estimate = estimate_collision_time(&fits)?;
    Ok(FineEstimate {
        track,
        split,
        anchor_frame,
        anchor_pixels: points.len(),
        estimate,
    })
}

/// Fits every valid anchor pixel; `flows[..n_pre]` are pre-collision.
fn fit_ordered(
    flows: &[FlowField],
    times: &[f64],
    n_pre: usize,
    anchor_pos: usize,
    params: &FitParams,
) -> Vec<PixelTrajectoryFit> {
    let anchor = &flows[anchor_pos];
    let sample = |j: usize, i: usize| {
        let f = &flows[j];
        f.valid[i].then(|| (times[j], f64::from(f.du[i]), f64::from(f.dv[i])))
    };
    let contact = (times[n_pre - 1], times[n_pre]);
    anchor
        .valid
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .filter_map(|(i, _)| {
            let pre: Vec<_> = (0..n_pre).filter_map(|j| sample(j, i)).collect();
            let post: Vec<_> = (n_pre..flows.len()).filter_map(|j| sample(j, i)).collect();
            fit_pixel((i % anchor.width, i / anchor.width), &pre, &post, contact, params)
        })
        .collect()
}

fn anchor_mask(mask: &Mask, shift: (f64, f64), erode: usize) -> Mask {
    let moved = mask.shifted(shift.0.round() as i64, shift.1.round() as i64);
    let mut r = erode;
    loop {
        let m = moved.eroded(r);
        if m.count() >= 20 || r == 0 {
            return if m.is_empty() { moved } else { m };
        }
        r /= 2;
    }
}
