use serde::{Deserialize, Serialize};

use super::VideoEventError;
use crate::image::{GrayImage, Mask};
use crate::optical_flow::{track_points, FlowParams, PreparedFrame};
use crate::scene_sim::FrameSequence;
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub frame_idx: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Object centre per frame with finite-difference kinematics in px/frame
/// units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidTrack {
    pub points: Vec<TrackPoint>,
}

impl CentroidTrack {
    pub fn new(points: Vec<TrackPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `v[i] = p[i] - p[i-1]`, defined from index 1.
    pub fn velocities(&self) -> Vec<Option<(f64, f64)>> {
        let p = &self.points;
        (0..p.len())
            .map(|i| (i >= 1).then(|| (p[i].x - p[i - 1].x, p[i].y - p[i - 1].y)))
            .collect()
    }

    /// `a[i] = v[i] - v[i-1]`, defined from index 2.
    pub fn accelerations(&self) -> Vec<Option<(f64, f64)>> {
        diff(&self.velocities())
    }

    /// `delta_a[i] = a[i] - a[i-1]`, defined from index 3.
    pub fn delta_a(&self) -> Vec<Option<(f64, f64)>> {
        diff(&self.accelerations())
    }

    /// `|delta_a|` with undefined entries as `None`.
    pub fn delta_a_magnitude(&self) -> Vec<Option<f64>> {
        self.delta_a().into_iter().map(|d| d.map(|(x, y)| x.hypot(y))).collect()
    }
}

fn diff(v: &[Option<(f64, f64)>]) -> Vec<Option<(f64, f64)>> {
    (0..v.len())
        .map(|i| match (i.checked_sub(1).and_then(|j| v[j]), v[i]) {
            (Some(a), Some(b)) => Some((b.0 - a.0, b.1 - a.1)),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackParams {
    pub flow: FlowParams,
    /// Mask erosion before picking feature points; keeps windows on the object.
    pub erode_px: usize,
    /// Use every n-th eroded mask pixel in both directions.
    pub point_step: usize,
    /// Fraction of points that must stay valid for a frame to count as tracked.
    pub min_valid_fraction: f64,
    /// Radius of the exhaustive search that seeds the first step in each
    /// direction, px. Zero disables it.
    pub search_radius_px: usize,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            flow: FlowParams {
                iterations_per_level: 20,
                ..FlowParams::default()
            },
            erode_px: 7,
            point_step: 2,
            min_valid_fraction: 0.3,
            search_radius_px: 24,
        }
    }
}

/// Feature points inside the mask, shrinking the erosion until enough remain.
pub(crate) fn feature_points(mask: &Mask, erode: usize, step: usize) -> Vec<(usize, usize)> {
    let mut radius = erode;
    loop {
        let pts: Vec<(usize, usize)> = mask
            .eroded(radius)
            .pixels()
            .into_iter()
            .filter(|&(x, y)| x % step.max(1) == 0 && y % step.max(1) == 0)
            .collect();
        if pts.len() >= 12 || radius == 0 {
            return if pts.is_empty() { mask.pixels() } else { pts };
        }
        radius /= 2;
    }
}

/// Displacement of the masked object from `ref_idx` into `target`.
struct Tracker<'a> {
    reference: PreparedFrame,
    points: Vec<(usize, usize)>,
    params: &'a TrackParams,
}

impl Tracker<'_> {
    /// Best hypothesis by valid count, then by mean residual.
    fn solve(&self, target: &PreparedFrame, guesses: &[(f64, f64)]) -> Option<(f64, f64)> {
        let need = ((self.points.len() as f64) * self.params.min_valid_fraction).ceil() as usize;
        let mut best: Option<(usize, f64, (f64, f64))> = None;
        for &g in guesses {
            let flows = track_points(&self.reference, target, &self.points, g, &self.params.flow);
            let valid: Vec<_> = flows.iter().filter(|f| f.valid).collect();
            if valid.len() < need.max(1) {
                continue;
            }
            let res = valid.iter().map(|f| f.residual).sum::<f64>() / valid.len() as f64;
            let du = median(&valid.iter().map(|f| f.du).collect::<Vec<_>>()).unwrap_or(0.0);
            let dv = median(&valid.iter().map(|f| f.dv).collect::<Vec<_>>()).unwrap_or(0.0);
            let better = match best {
                None => true,
                Some((n, r, _)) => {
                    // Count dominates unless the difference is marginal.
                    let n_close = valid.len() * 10 >= n * 9 && n * 10 >= valid.len() * 9;
                    if n_close {
                        res < r
                    } else {
                        valid.len() > n
                    }
                }
            };
            if better {
                best = Some((valid.len(), res, (du, dv)));
            }
            // Early accept of a clean fit.
            if valid.len() == self.points.len() && res < 0.01 {
                break;
            }
        }
        best.map(|b| b.2)
    }
}

/// Prediction hypotheses from the last displacements (most recent last).
fn hypotheses(hist: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = hist.len();
    let last = hist[n - 1];
    let mut out = Vec::with_capacity(5);
    if n >= 2 {
        let v = (last.0 - hist[n - 2].0, last.1 - hist[n - 2].1);
        if n >= 3 {
            let vp = (hist[n - 2].0 - hist[n - 3].0, hist[n - 2].1 - hist[n - 3].1);
            let a = (v.0 - vp.0, v.1 - vp.1);
            out.push((last.0 + v.0 + a.0, last.1 + v.1 + a.1));
        }
        out.push((last.0 + v.0, last.1 + v.1));
        out.push(last);
        out.push((last.0 + v.0, last.1 - v.1));
        out.push((last.0 + v.0, last.1 - 0.5 * v.1));
    } else {
        out.push(last);
    }
    out
}

/// Integer shift of the masked pixels of `a` with the smallest mean absolute
/// difference in `b`. Shifts that push any pixel outside `b` are skipped.
fn block_match(a: &GrayImage, b: &GrayImage, mask: &Mask, radius: usize) -> Option<(f64, f64)> {
    let px = mask.pixels();
    let (w, h) = (b.width() as i64, b.height() as i64);
    let r = radius as i64;
    let mut best: Option<(u64, (i64, i64))> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let mut sad = 0u64;
            let mut inside = true;
            for &(x, y) in &px {
                let (u, v) = (x as i64 + dx, y as i64 + dy);
                if u < 0 || v < 0 || u >= w || v >= h {
                    inside = false;
                    break;
                }
                sad += u64::from(a.get(x, y).abs_diff(b.get(u as usize, v as usize)));
            }
            // Ties go to the smaller shift.
            let better =
                best.is_none_or(|(s, (bx, by))| sad < s || (sad == s && dx * dx + dy * dy < bx * bx + by * by));
            if inside && better {
                best = Some((sad, (dx, dy)));
            }
        }
    }
    best.map(|(_, (dx, dy))| (dx as f64, dy as f64))
}

/// Tracks the masked object of frame `ref_idx` across `range` (inclusive
/// frame indices). Every frame is matched directly against the reference.
/// Tracking stops in a direction once the object is lost; the returned track
/// covers the contiguous tracked frames around `ref_idx`.
pub fn track_from(
    frames: &FrameSequence,
    ref_idx: usize,
    mask: &Mask,
    range: (usize, usize),
    params: &TrackParams,
) -> Result<CentroidTrack, VideoEventError> {
    if ref_idx >= frames.len() || range.0 > ref_idx || range.1 < ref_idx {
        return Err(VideoEventError::Input(format!(
            "reference frame {ref_idx} outside range {range:?} of {} frames",
            frames.len()
        )));
    }
    let (cx, cy) = mask
        .centroid()
        .ok_or_else(|| VideoEventError::Input("reference mask is empty".into()))?;
    let tracker = Tracker {
        reference: PreparedFrame::new(&frames.frames[ref_idx], &params.flow),
        points: feature_points(mask, params.erode_px, params.point_step),
        params,
    };
    let end = range.1.min(frames.len() - 1);
    // The first step has no motion history, so a large frame-to-frame
    // displacement gets a searched starting point.
    let step = |hist: &[(f64, f64)], j: usize| {
        let target = PreparedFrame::new(&frames.frames[j], &params.flow);
        let start = hist.len().saturating_sub(3);
        let mut guesses = hypotheses(&hist[start..]);
        if hist.len() == 1 && params.search_radius_px > 0 {
            guesses.extend(block_match(
                &frames.frames[ref_idx],
                &frames.frames[j],
                mask,
                params.search_radius_px,
            ));
        }
        tracker.solve(&target, &guesses)
    };
    let mut forward = vec![(0.0, 0.0)];
    for j in ref_idx + 1..=end {
        match step(&forward, j) {
            Some(d) => forward.push(d),
            None => break,
        }
    }
    let mut backward = vec![(0.0, 0.0)];
    for j in (range.0..ref_idx).rev() {
        match step(&backward, j) {
            Some(d) => backward.push(d),
            None => break,
        }
    }
    let first = ref_idx + 1 - backward.len();
    let disp = backward.iter().skip(1).rev().chain(forward.iter());
    let points = disp
        .enumerate()
        .map(|(i, &(dx, dy))| {
            let n = first + i;
            TrackPoint {
                frame_idx: n,
                t: frames.timestamps[n],
                x: cx + dx,
                y: cy + dy,
            }
        })
        .collect();
    Ok(CentroidTrack::new(points))
}

/// Tracks the object marked in the first frame through the whole sequence.
pub fn track_centroid(
    frames: &FrameSequence,
    mask: &Mask,
    params: &TrackParams,
) -> Result<CentroidTrack, VideoEventError> {
    if frames.is_empty() {
        return Err(VideoEventError::Input("no frames".into()));
    }
    let track = track_from(frames, 0, mask, (0, frames.len() - 1), params)?;
    if track.len() < frames.len() {
        return Err(VideoEventError::TrackingLost {
            last_good: track.points.last().map_or(0, |p| p.frame_idx),
        });
    }
    Ok(track)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_track(n: usize, f: impl Fn(f64) -> (f64, f64)) -> CentroidTrack {
        CentroidTrack::new(
            (0..n)
                .map(|i| {
                    let (x, y) = f(i as f64);
                    TrackPoint {
                        frame_idx: i,
                        t: i as f64 / 30.0,
                        x,
                        y,
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn constant_velocity_has_no_acceleration() {
        let t = line_track(8, |i| (2.0 * i, -0.5 * i));
        for a in t.accelerations().into_iter().flatten() {
            assert!(a.0.abs() < 1e-12 && a.1.abs() < 1e-12);
        }
        assert!(t.delta_a()[..3].iter().all(Option::is_none));
        assert!(t.delta_a()[3..].iter().all(Option::is_some));
    }

    #[test]
    fn ballistic_track_constant_acceleration() {
        let g = 1.7;
        let t = line_track(10, |i| (i, 0.5 * g * i * i));
        for a in t.accelerations().into_iter().flatten() {
            assert!((a.1 - g).abs() < 1e-9);
        }
        for d in t.delta_a_magnitude().into_iter().flatten() {
            assert!(d < 1e-9);
        }
    }

    #[test]
    fn bounce_peaks_delta_a_after_contact() {
        // Contact between frames 10 and 11.
        let tc = 10.4;
        let t = line_track(20, |i| {
            if i <= tc {
                (0.0, 3.0 * i)
            } else {
                (0.0, 3.0 * tc - 2.0 * (i - tc))
            }
        });
        let mags = t.delta_a_magnitude();
        let best = (0..mags.len())
            .filter_map(|i| mags[i].map(|m| (i, m)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((11..=13).contains(&best.0));
    }

    #[test]
    fn hypotheses_include_reflection() {
        let h = hypotheses(&[(0.0, 0.0), (1.0, 4.0), (2.0, 9.0)]);
        assert!(h.contains(&(3.0, 4.0)));
        assert!(h.contains(&(2.0, 9.0)));
        assert_eq!(h[0], (3.0, 15.0));
    }

    proptest::proptest! {
        #[test]
        fn block_match_recovers_integer_shift(dx in -10i64..=10, dy in -10i64..=10, seed in 0u64..1000) {
            let tex = |x: i64, y: i64| ((x * 37 + y * 91 + (x * y) % 13 + seed as i64) % 251) as u8;
            let a = GrayImage::from_fn(64, 64, |x, y| tex(x as i64, y as i64));
            let b = GrayImage::from_fn(64, 64, |x, y| tex(x as i64 - dx, y as i64 - dy));
            let mask = Mask::from_fn(64, 64, |x, y| (20..44).contains(&x) && (20..44).contains(&y));
            proptest::prop_assert_eq!(block_match(&a, &b, &mask, 12), Some((dx as f64, dy as f64)));
        }
    }
}
