use serde::{Deserialize, Serialize};

use super::{FailureKind, PipelineConfig};
use crate::audio_event::{locate_onset, search_window, AudioEventError};
use crate::av_correspondence::{detect_audio_impacts, detect_motion_events, pair_events, AVEventPair};
use crate::depth::{estimate_depth, CalibrationModel, DepthError};
use crate::scene_sim::{AudioClip, FrameSequence};
use crate::video_event::{refine_collision_time, VideoEventError};

/// Timing and depth of one paired collision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEstimate {
    pub t_video: f64,
    pub t_audio: f64,
    pub onset_sample: i64,
    pub depth_m: f64,
    /// Last pre-collision and first post-collision full-rate frames.
    pub split: (usize, usize),
    pub inlier_pixels: usize,
    pub ambiguous: bool,
}

/// A pair that could not be turned into a depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFailure {
    pub kind: FailureKind,
    pub message: String,
    /// Rough collision time from the coarse window, if any.
    pub t_coarse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneEstimate {
    pub events: Vec<EventEstimate>,
    pub failures: Vec<EventFailure>,
    pub unmatched_audio: usize,
    pub unmatched_motion: usize,
}

impl From<VideoEventError> for EventFailure {
    fn from(e: VideoEventError) -> Self {
        let kind = match e {
            VideoEventError::TrackingLost { .. } => FailureKind::TrackingLost,
            _ => FailureKind::NoCollision,
        };
        Self {
            kind,
            message: e.to_string(),
            t_coarse: None,
        }
    }
}

impl From<AudioEventError> for EventFailure {
    fn from(e: AudioEventError) -> Self {
        Self {
            kind: FailureKind::NoOnset,
            message: e.to_string(),
            t_coarse: None,
        }
    }
}

impl From<DepthError> for EventFailure {
    fn from(e: DepthError) -> Self {
        let kind = match e {
            DepthError::NegativeDelay(_) => FailureKind::NegativeDelay,
            _ => FailureKind::Input,
        };
        Self {
            kind,
            message: e.to_string(),
            t_coarse: None,
        }
    }
}

/// Coarse correspondence on the decimated stream, then fine timing, onset
/// and depth for every pair.
pub fn estimate_scene(
    frames: &FrameSequence,
    audio: &AudioClip,
    calibration: &CalibrationModel,
    config: &PipelineConfig,
) -> SceneEstimate {
    let mut out = SceneEstimate::default();
    let fail = |kind, message: String| EventFailure {
        kind,
        message,
        t_coarse: None,
    };
    if !frames.fps.is_multiple_of(config.coarse_fps) || frames.is_empty() {
        out.failures.push(fail(
            FailureKind::Input,
            format!("{} FPS is not a multiple of {}", frames.fps, config.coarse_fps),
        ));
        return out;
    }
    let m = (frames.fps / config.coarse_fps) as usize;
    let coarse = frames.decimate(m as u32);
    let motion = match detect_motion_events(&coarse, &config.motion) {
        Ok(w) => w,
        Err(e) => {
            out.failures.push(fail(FailureKind::Input, e.to_string()));
            return out;
        }
    };
    let sounds = detect_audio_impacts(audio, &config.audio);
    let pairing = pair_events(&sounds, &motion, &config.pairing);
    out.unmatched_audio = pairing.unmatched_audio.len();
    out.unmatched_motion = pairing.unmatched_motion.len();
    if pairing.pairs.is_empty() {
        out.failures.push(fail(
            FailureKind::NoCollision,
            format!(
                "no audio-visual pair ({} sounds, {} motion events)",
                sounds.len(),
                motion.len()
            ),
        ));
    }
    for pair in &pairing.pairs {
        let t_coarse = Some(pair.motion.frame_time(pair.motion.last_frame as i64));
        match estimate_pair(frames, audio, pair, m, calibration, config) {
            Ok(e) => out.events.push(e),
            Err(mut f) => {
                f.t_coarse = t_coarse;
                out.failures.push(f);
            }
        }
    }
    out
}

fn estimate_pair(
    frames: &FrameSequence,
    audio: &AudioClip,
    pair: &AVEventPair,
    m: usize,
    calibration: &CalibrationModel,
    config: &PipelineConfig,
) -> Result<EventEstimate, EventFailure> {
    let w = &pair.motion;
    let mask = w.mask.as_ref().ok_or_else(|| EventFailure {
        kind: FailureKind::NoCollision,
        message: "motion window has no mask".into(),
        t_coarse: None,
    })?;
    let fine = refine_collision_time(
        frames,
        w.mask_frame * m,
        mask,
        (w.first_frame * m, w.last_frame * m),
        &config.fine,
    )?;
    let t_video = fine.estimate.t_video;
    // Read the audio clock through the calibrated offset and stay near the
    // paired sound.
    let (lo, hi) = search_window(t_video, calibration.t_hw_s, audio.sample_rate, &config.onset);
    let guard = (config.onset.pre_guard_s * f64::from(audio.sample_rate)).round() as i64;
    let lo = lo.max(pair.audio.onset_sample - 2 * guard).max(0);
    let hi = hi.min(pair.audio.end_sample).min(audio.samples.len() as i64);
    let onset = locate_onset(audio, (lo, hi), &config.onset)?;
    let depth = estimate_depth(onset.t_audio, t_video, calibration, &config.consts)?;
    Ok(EventEstimate {
        t_video,
        t_audio: onset.t_audio,
        onset_sample: onset.onset_sample,
        depth_m: depth.depth_m,
        split: (fine.split.e, fine.split.s),
        inlier_pixels: fine.estimate.inlier_count,
        ambiguous: pair.ambiguous,
    })
}
