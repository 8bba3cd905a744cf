use serde::{Deserialize, Serialize};

use crate::image::GrayImage;
use crate::image::Mask;
use crate::optical_flow::{compute_flow, FlowError, FlowParams};
use crate::scene_sim::FrameSequence;
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionDetectParams {
    pub flow: FlowParams,
    /// Flow magnitude above which a pixel counts as moving, px/frame.
    pub min_motion_px: f32,
    /// Smaller moving components are ignored.
    pub min_area: usize,
    /// Largest distance between a track's predicted and observed centroid.
    pub gate_px: f64,
    /// Absolute floor for `|delta_a|`, px/frame.
    pub min_delta_a_px: f64,
    /// `|delta_a|` must also exceed this multiple of the track median.
    pub noise_factor: f64,
    /// Frames a vanished object is held in place when it was well inside
    /// the image, so that a dead stop still produces an event.
    pub hold_frames: usize,
    /// Mean absolute difference, in grey levels over a 5x5 box, that marks a
    /// pixel as changed between frames.
    pub change_threshold: f64,
    /// Padding around the changed region when solving flow.
    pub crop_margin_px: usize,
    /// A detection smaller than this fraction of the track's last mask is
    /// not linked to it.
    pub min_area_ratio: f64,
    /// Runs whose peak `|delta_a|` is below this fraction of the strongest
    /// run on the same track are centroid jitter.
    pub min_run_ratio: f64,
}

impl Default for MotionDetectParams {
    fn default() -> Self {
        Self {
            flow: FlowParams {
                pyramid_levels: 4,
                iterations_per_level: 10,
                ..FlowParams::default()
            },
            min_motion_px: 1.0,
            min_area: 40,
            gate_px: 60.0,
            min_delta_a_px: 3.0,
            noise_factor: 5.0,
            hold_frames: 3,
            change_threshold: 2.0,
            crop_margin_px: 24,
            min_area_ratio: 0.25,
            min_run_ratio: 0.25,
        }
    }
}

/// Frames around one detected collision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEventWindow {
    /// Last frame before the detected contact.
    pub first_frame: usize,
    /// First frame after it.
    pub last_frame: usize,
    /// Frame the mask belongs to.
    pub mask_frame: usize,
    #[serde(skip)]
    pub mask: Option<Mask>,
    /// Largest `|delta_a|` in the flagged run, px/frame.
    pub peak_accel_change: f64,
    pub fps: u32,
}

impl MotionEventWindow {
    pub fn frame_time(&self, n: i64) -> f64 {
        n as f64 / f64::from(self.fps)
    }
}

struct Observation {
    frame: usize,
    centre: (f64, f64),
    mask: Option<Mask>,
    /// First held frame of an object whose image did not stay put.
    vanished: bool,
}

/// Bounding box `(x0, y0, x1, y1)` of pixels whose 5x5 mean absolute
/// difference exceeds `threshold` grey levels.
fn changed_region(a: &GrayImage, b: &GrayImage, threshold: f64) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (a.width(), a.height());
    let sw = w + 1;
    let mut sat = vec![0.0f64; sw * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += (f64::from(a.get(x, y)) - f64::from(b.get(x, y))).abs();
            sat[(y + 1) * sw + x + 1] = sat[y * sw + x + 1] + row;
        }
    }
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for y in 2..h.saturating_sub(2) {
        for x in 2..w.saturating_sub(2) {
            let (x0, y0, x1, y1) = (x - 2, y - 2, x + 3, y + 3);
            let sum = sat[y1 * sw + x1] - sat[y0 * sw + x1] - sat[y1 * sw + x0] + sat[y0 * sw + x0];
            if sum / 25.0 > threshold {
                bbox = Some(match bbox {
                    None => (x, y, x, y),
                    Some((a0, b0, a1, b1)) => (a0.min(x), b0.min(y), a1.max(x), b1.max(y)),
                });
            }
        }
    }
    bbox
}

/// Pixels of `a` whose flow into `b` exceeds the motion threshold. Flow is
/// only solved on a padded box around the changed region.
fn moving_pixels(a: &GrayImage, b: &GrayImage, params: &MotionDetectParams) -> Result<Mask, FlowError> {
    let (w, h) = (a.width(), a.height());
    let mut mask = Mask::new(w, h);
    let Some((x0, y0, x1, y1)) = changed_region(a, b, params.change_threshold) else {
        return Ok(mask);
    };
    // Keep the box large enough for every pyramid level.
    let min_side = (2 * params.flow.window_radius + 1) << (params.flow.pyramid_levels - 1);
    let span = |lo: usize, hi: usize, len: usize| {
        let lo = lo.saturating_sub(params.crop_margin_px);
        let hi = (hi + params.crop_margin_px + 1).min(len);
        let grow = min_side.saturating_sub(hi - lo);
        let lo = lo.saturating_sub(grow / 2);
        let hi = (lo + (hi - lo).max(min_side)).min(len);
        (hi.saturating_sub(min_side).min(lo), hi)
    };
    let (cx0, cx1) = span(x0, x1, w);
    let (cy0, cy1) = span(y0, y1, h);
    let (cw, ch) = (cx1 - cx0, cy1 - cy0);
    let flow = compute_flow(&a.crop(cx0, cy0, cw, ch), &b.crop(cx0, cy0, cw, ch), &params.flow)?;
    for y in 0..ch {
        for x in 0..cw {
            let (du, dv, ok) = flow.get(x, y);
            if ok && du.hypot(dv) > params.min_motion_px {
                mask.set(cx0 + x, cy0 + y, true);
            }
        }
    }
    Ok(mask)
}

/// Moving objects per frame from forward and backward flows.
fn frame_objects(frames: &FrameSequence, params: &MotionDetectParams) -> Result<Vec<Vec<Mask>>, FlowError> {
    let n = frames.len();
    let f = &frames.frames;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let forward = (i + 1 < n)
            .then(|| moving_pixels(&f[i], &f[i + 1], params))
            .transpose()?;
        let backward = (i > 0).then(|| moving_pixels(&f[i], &f[i - 1], params)).transpose()?;
        // Union: the net displacement across a bounce frame can be tiny in
        // one direction.
        let m = match (forward, backward) {
            (Some(a), Some(b)) => a.or(&b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => Mask::new(frames.width(), frames.height()),
        };
        out.push(
            m.components()
                .into_iter()
                .filter(|c| c.count() >= params.min_area)
                .collect(),
        );
    }
    Ok(out)
}

fn inside(mask: &Mask, margin: usize) -> bool {
    mask.pixels()
        .iter()
        .all(|&(x, y)| x >= margin && y >= margin && x + margin < mask.width() && y + margin < mask.height())
}

/// Mean absolute difference of two frames over `mask`.
fn masked_change(a: &GrayImage, b: &GrayImage, mask: &Mask) -> f64 {
    let px = mask.pixels();
    let sum: f64 = px
        .iter()
        .map(|&(x, y)| (f64::from(a.get(x, y)) - f64::from(b.get(x, y))).abs())
        .sum();
    sum / px.len().max(1) as f64
}

/// Links per-frame objects into tracks by nearest predicted centroid. A lost
/// object is held in place for a few frames so that dead stops and missed
/// detections keep their track.
fn link_tracks(frames: &FrameSequence, objects: Vec<Vec<Mask>>, params: &MotionDetectParams) -> Vec<Vec<Observation>> {
    let mut open: Vec<(Vec<Observation>, usize)> = Vec::new();
    let mut done = Vec::new();
    for (frame, masks) in objects.into_iter().enumerate() {
        let mut items: Vec<Option<((f64, f64), Mask)>> = masks
            .into_iter()
            .filter_map(|m| m.centroid().map(|c| (c, m)))
            .map(Some)
            .collect();
        let mut still_open = Vec::new();
        for (mut track, held) in open.drain(..) {
            let n = track.len();
            let last = track[n - 1].centre;
            let pred = if n >= 2 {
                let prev = track[n - 2].centre;
                (2.0 * last.0 - prev.0, 2.0 * last.1 - prev.1)
            } else {
                last
            };
            let last_mask = track.iter().rev().find_map(|o| o.mask.as_ref());
            let min_count = last_mask.map_or(0.0, |m| m.count() as f64 * params.min_area_ratio);
            let best = items
                .iter()
                .enumerate()
                .filter_map(|(j, it)| {
                    it.as_ref()
                        .filter(|(_, m)| m.count() as f64 >= min_count)
                        .map(|(c, _)| (j, (c.0 - pred.0).hypot(c.1 - pred.1)))
                })
                .filter(|&(_, d)| d <= params.gate_px)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _)) = best {
                let (centre, mask) = items[j].take().unwrap();
                track.push(Observation {
                    frame,
                    centre,
                    mask: Some(mask),
                    vanished: false,
                });
                still_open.push((track, 0));
                continue;
            }
            let can_hold = held < params.hold_frames && last_mask.is_some_and(|m| inside(m, 4));
            if can_hold {
                // A stopped object leaves the image under it unchanged.
                let vanished = held == 0
                    && last_mask.is_some_and(|m| {
                        masked_change(&frames.frames[track[n - 1].frame], &frames.frames[frame], m)
                            > params.change_threshold
                    });
                track.push(Observation {
                    frame,
                    centre: last,
                    mask: None,
                    vanished,
                });
                still_open.push((track, held + 1));
            } else {
                done.push(track);
            }
        }
        open = still_open;
        for (centre, mask) in items.into_iter().flatten() {
            open.push((
                vec![Observation {
                    frame,
                    centre,
                    mask: Some(mask),
                    vanished: false,
                }],
                0,
            ));
        }
    }
    done.extend(open.into_iter().map(|(t, _)| t));
    // Held frames after a disappearance are not part of the motion.
    for track in &mut done {
        let held = track.iter().rev().take_while(|o| o.mask.is_none()).count();
        if held > 0 && track[track.len() - held].vanished {
            track.truncate(track.len() - held);
        }
    }
    done
}

fn delta_a(track: &[Observation]) -> Vec<f64> {
    let p: Vec<(f64, f64)> = track.iter().map(|o| o.centre).collect();
    (0..p.len())
        .map(|i| {
            if i < 3 {
                return 0.0;
            }
            let d =
                |k: usize, c: fn(&(f64, f64)) -> f64| c(&p[k]) - 3.0 * c(&p[k - 1]) + 3.0 * c(&p[k - 2]) - c(&p[k - 3]);
            d(i, |q| q.0).hypot(d(i, |q| q.1))
        })
        .collect()
}

/// Median `|delta_a|` away from the strongest three-sample window, which
/// would otherwise dominate a short track.
fn noise_level(da: &[f64]) -> f64 {
    let n = da.len();
    if n < 6 {
        return 0.0;
    }
    let best = (3..n - 2)
        .max_by(|&a, &b| (da[a] + da[a + 1] + da[a + 2]).total_cmp(&(da[b] + da[b + 1] + da[b + 2])))
        .unwrap_or(3);
    let rest: Vec<f64> = (3..n)
        .filter(|&i| i + 3 < best || i > best + 5)
        .map(|i| da[i])
        .collect();
    median(&rest).unwrap_or(0.0)
}

/// Collision windows in a (typically 30 FPS) frame sequence.
pub fn detect_motion_events(
    frames: &FrameSequence,
    params: &MotionDetectParams,
) -> Result<Vec<MotionEventWindow>, FlowError> {
    if frames.len() < 3 {
        return Err(FlowError::Input("at least three frames are needed".into()));
    }
    let tracks = link_tracks(frames, frame_objects(frames, params)?, params);
    let mut events = Vec::new();
    for track in tracks.iter().filter(|t| t.len() >= 5) {
        let da = delta_a(track);
        let threshold = (params.noise_factor * noise_level(&da)).max(params.min_delta_a_px);
        let flagged: Vec<usize> = (3..da.len()).filter(|&i| da[i] > threshold).collect();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for i in flagged {
            match runs.last_mut() {
                Some(r) if i <= r.1 + 2 => r.1 = i,
                _ => runs.push((i, i)),
            }
        }
        let peak = |&(a, b): &(usize, usize)| (a..=b).map(|i| da[i]).fold(0.0, f64::max);
        let strongest = runs.iter().map(peak).fold(0.0, f64::max);
        runs.retain(|r| peak(r) >= params.min_run_ratio * strongest);
        let n = track.len();
        let ends_by_exit = track[n - 1].mask.is_some();
        for (a, b) in runs {
            // Partial masks while entering or leaving the view.
            if a == 3 || (ends_by_exit && a + 3 >= n) {
                continue;
            }
            let window_sum = |s: usize| (s..(s + 3).min(n)).map(|i| da[i]).sum::<f64>();
            let s = (a..=b)
                .max_by(|&x, &y| window_sum(x).total_cmp(&window_sum(y)).then(y.cmp(&x)))
                .unwrap_or(a);
            let e = s - 1;
            let Some((mask_frame, mask)) = track[..=e]
                .iter()
                .rev()
                .find_map(|o| o.mask.clone().map(|m| (o.frame, m)))
            else {
                continue;
            };
            events.push(MotionEventWindow {
                first_frame: track[e].frame,
                last_frame: track[s].frame,
                mask_frame,
                mask: Some(mask),
                peak_accel_change: (a..=b).map(|i| da[i]).fold(0.0, f64::max),
                fps: frames.fps,
            });
        }
    }
    events.sort_by_key(|w| (w.first_frame, w.last_frame));
    Ok(events)
}
