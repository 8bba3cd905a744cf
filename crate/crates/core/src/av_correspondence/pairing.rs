use serde::{Deserialize, Serialize};

use super::audio::AudioImpactWindow;
use super::motion::MotionEventWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairingParams {
    pub tolerance_frames: i64,
    /// Longest sound delay accepted after the motion window, i.e. the
    /// farthest range divided by the speed of sound, plus a guard.
    pub max_delay_s: f64,
}

impl Default for PairingParams {
    fn default() -> Self {
        Self {
            tolerance_frames: 1,
            max_delay_s: 60.0 / crate::scene_sim::DEFAULT_V_SOUND + 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AVEventPair {
    pub audio: AudioImpactWindow,
    pub motion: MotionEventWindow,
    /// Fraction of the audio window inside the admissible interval.
    pub pairing_score: f64,
    /// Another motion window could also explain the sound, or the sound
    /// itself looks like overlapping impacts.
    pub ambiguous: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub pairs: Vec<AVEventPair>,
    pub unmatched_audio: Vec<AudioImpactWindow>,
    pub unmatched_motion: Vec<MotionEventWindow>,
}

/// Scene-time interval in which the onset of a sound caused by `m` may lie.
pub fn admissible_interval(m: &MotionEventWindow, params: &PairingParams) -> (f64, f64) {
    let tol = params.tolerance_frames;
    (
        m.frame_time(m.first_frame as i64 - 1 - tol),
        m.frame_time(m.last_frame as i64 + 1 + tol) + params.max_delay_s,
    )
}

/// Greedy one-to-one matching in time order: each sound takes the earliest
/// free motion window whose admissible interval contains its onset.
pub fn pair_events(audio: &[AudioImpactWindow], motion: &[MotionEventWindow], params: &PairingParams) -> Pairing {
    let mut audio: Vec<&AudioImpactWindow> = audio.iter().collect();
    audio.sort_by(|a, b| a.onset_time_s.total_cmp(&b.onset_time_s));
    let mut order: Vec<usize> = (0..motion.len()).collect();
    order.sort_by_key(|&i| (motion[i].first_frame, motion[i].last_frame));
    let mut used = vec![false; motion.len()];
    let mut out = Pairing::default();
    for a in audio {
        let t = a.onset_time_s;
        let candidates: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| {
                let (lo, hi) = admissible_interval(&motion[i], params);
                t >= lo && t <= hi
            })
            .collect();
        match candidates.iter().copied().find(|&i| !used[i]) {
            Some(i) => {
                used[i] = true;
                let (lo, hi) = admissible_interval(&motion[i], params);
                let (start, end) = a.time_span();
                let inside = (end.min(hi) - start.max(lo)).max(0.0);
                out.pairs.push(AVEventPair {
                    audio: a.clone(),
                    motion: motion[i].clone(),
                    pairing_score: if end > start { inside / (end - start) } else { 1.0 },
                    ambiguous: a.overlapping || candidates.len() > 1,
                });
            }
            None => out.unmatched_audio.push(a.clone()),
        }
    }
    out.unmatched_motion = order
        .into_iter()
        .filter(|&i| !used[i])
        .map(|i| motion[i].clone())
        .collect();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sound(onset_s: f64) -> AudioImpactWindow {
        let k = (onset_s * 48_000.0) as i64;
        AudioImpactWindow {
            start_sample: k - 1600,
            end_sample: k + 1600,
            peak_sample: k + 24,
            peak_energy: 0.1,
            onset_sample: k,
            onset_time_s: onset_s,
            overlapping: false,
            sample_rate: 48_000,
        }
    }

    fn motion(first: usize) -> MotionEventWindow {
        MotionEventWindow {
            first_frame: first,
            last_frame: first + 1,
            mask_frame: first,
            mask: None,
            peak_accel_change: 20.0,
            fps: 30,
        }
    }

    #[test]
    fn aligned_pair() {
        let p = pair_events(&[sound(0.40)], &[motion(10)], &PairingParams::default());
        assert_eq!(p.pairs.len(), 1);
        assert!(!p.pairs[0].ambiguous);
        assert!(p.pairs[0].pairing_score > 0.99);
    }

    #[test]
    fn offscreen_sound_unmatched() {
        let p = pair_events(&[sound(0.1), sound(0.40)], &[motion(10)], &PairingParams::default());
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.unmatched_audio.len(), 1);
        assert!((p.unmatched_audio[0].onset_time_s - 0.1).abs() < 1e-12);
    }

    #[test]
    fn three_events_in_order() {
        let p = pair_events(
            &[sound(1.45), sound(0.40), sound(0.90)],
            &[motion(42), motion(10), motion(25)],
            &PairingParams::default(),
        );
        assert_eq!(p.pairs.len(), 3);
        let firsts: Vec<usize> = p.pairs.iter().map(|x| x.motion.first_frame).collect();
        assert_eq!(firsts, vec![10, 25, 42]);
        assert!(p.unmatched_motion.is_empty() && p.unmatched_audio.is_empty());
    }

    #[test]
    fn sound_before_motion_rejected() {
        let p = pair_events(&[sound(0.20)], &[motion(10)], &PairingParams::default());
        assert!(p.pairs.is_empty());
        assert_eq!(p.unmatched_motion.len(), 1);
    }
}
