use serde::{Deserialize, Serialize};

use super::track::CentroidTrack;
use super::{VideoEventError, DEFAULT_K};
use crate::stats::median;

/// Pre/post-collision partition of a track. Indices are positions in the
/// track, not absolute frame numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionSplit {
    /// Last pre-collision frame.
    pub e: usize,
    /// First post-collision frame.
    pub s: usize,
    pub pre_set: Vec<usize>,
    pub post_set: Vec<usize>,
}

impl CollisionSplit {
    /// Split at `e` with up to `k` frames per side inside `0..len`.
    pub fn at(e: usize, len: usize, k: usize) -> Self {
        let s = e + 1;
        Self {
            e,
            s,
            pre_set: (e.saturating_sub(k - 1)..=e).collect(),
            post_set: (s..len.min(s + k)).collect(),
        }
    }
}

/// Lower bound on the detection threshold in px/frame, so that float noise
/// on an ideal track is never mistaken for an impact.
pub const MIN_DELTA_A_PX: f64 = 1e-6;

/// Split at the strongest acceleration change with the default `k`.
pub fn coarse_split(track: &CentroidTrack) -> Result<CollisionSplit, VideoEventError> {
    coarse_split_with(track, DEFAULT_K, MIN_DELTA_A_PX)
}

/// A bounce between frames `e` and `e+1` shows up in `|delta_a|` at indices
/// `e+1..=e+3`, split between them by the sub-frame contact phase. The split
/// is therefore taken at the three-sample window with the largest total
/// `|delta_a|`, earliest on ties, and `e` is the index before the window.
pub fn coarse_split_with(track: &CentroidTrack, k: usize, floor: f64) -> Result<CollisionSplit, VideoEventError> {
    let k = k.max(2);
    let n = track.len();
    if n < 2 * k + 2 || n < 6 {
        return Err(VideoEventError::TooFewFrames {
            got: n,
            need: (2 * k + 2).max(6),
        });
    }
    let mags: Vec<f64> = track
        .delta_a_magnitude()
        .into_iter()
        .map(|m| m.unwrap_or(0.0))
        .collect();
    let threshold = (5.0 * median(&mags[3..]).unwrap_or(0.0)).max(floor);
    if !mags[3..].iter().any(|&m| m > threshold) {
        return Err(VideoEventError::NoCollision);
    }
    let mut best = (3, f64::NEG_INFINITY);
    for start in 3..=n - 3 {
        let sum = mags[start] + mags[start + 1] + mags[start + 2];
        if sum > best.1 {
            best = (start, sum);
        }
    }
    Ok(CollisionSplit::at(best.0 - 1, n, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video_event::track::TrackPoint;

    fn track(ys: &[f64]) -> CentroidTrack {
        CentroidTrack::new(
            ys.iter()
                .enumerate()
                .map(|(i, &y)| TrackPoint {
                    frame_idx: i,
                    t: i as f64 / 240.0,
                    x: 0.5 * i as f64,
                    y,
                })
                .collect(),
        )
    }

    fn bounce(n: usize, tc: f64, v_in: f64, v_out: f64, g: f64) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                if t <= tc {
                    v_in * t + 0.5 * g * t * t
                } else {
                    let yc = v_in * tc + 0.5 * g * tc * tc;
                    let u = t - tc;
                    yc + v_out * u + 0.5 * g * u * u
                }
            })
            .collect()
    }

    #[test]
    fn bounce_between_10_and_11() {
        for phase in [0.05, 0.3, 0.5, 0.7, 0.95] {
            let ys = bounce(22, 10.0 + phase, 3.0, -1.8, 0.2);
            let s = coarse_split(&track(&ys)).unwrap();
            assert_eq!((s.e, s.s), (10, 11), "phase {phase}");
            assert_eq!(s.pre_set, vec![8, 9, 10]);
            assert_eq!(s.post_set, vec![11, 12, 13]);
        }
    }

    #[test]
    fn uniform_motion_has_no_collision() {
        let ys: Vec<f64> = (0..20).map(|i| 1.5 * i as f64).collect();
        assert!(matches!(coarse_split(&track(&ys)), Err(VideoEventError::NoCollision)));
    }

    #[test]
    fn dead_stop_keeps_adjacent_split() {
        let ys = bounce(20, 9.4, 4.0, 0.0, 0.0);
        let ys: Vec<f64> = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| if i as f64 > 9.4 { ys[9] + 4.0 * 0.4 } else { y })
            .collect();
        let s = coarse_split(&track(&ys)).unwrap();
        assert_eq!((s.e, s.s), (9, 10));
    }

    #[test]
    fn sets_truncate_at_track_end() {
        let ys = bounce(12, 8.5, 3.0, -2.0, 0.1);
        let s = coarse_split(&track(&ys)).unwrap();
        assert_eq!(s.e, 8);
        assert_eq!(s.post_set, vec![9, 10, 11]);
        let s = CollisionSplit::at(9, 12, 3);
        assert_eq!(s.post_set, vec![10, 11]);
    }

    #[test]
    fn short_track_rejected() {
        assert!(matches!(
            coarse_split(&track(&[0.0; 5])),
            Err(VideoEventError::TooFewFrames { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn split_brackets_any_contact_phase(
            e in 4usize..14,
            phase in 0.01f64..0.99,
            v_in in 1.0f64..6.0,
            restitution in 0.3f64..0.9,
            g in 0.05f64..0.4,
        ) {
            let tc = e as f64 + phase;
            let v_hit = v_in + g * tc;
            let ys = bounce(e + 10, tc, v_in, -restitution * v_hit, g);
            let s = coarse_split(&track(&ys)).unwrap();
            proptest::prop_assert_eq!((s.e, s.s), (e, e + 1));
        }
    }
}
