//! Acoustic onset of the impact sound, searched after the video-derived
//! collision time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene_sim::AudioClip;
use crate::stats::median;

#[derive(Debug, Error, PartialEq)]
pub enum AudioEventError {
    #[error("empty onset search region")]
    EmptySearch,
    #[error("no onset found in samples {start}..{end}")]
    NoOnset { start: i64, end: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnsetParams {
    /// Crossing level as a fraction of the envelope peak.
    pub alpha: f64,
    /// Length of the trailing mean-square envelope.
    pub envelope_s: f64,
    /// Backtracking stops where the envelope falls to this multiple of the
    /// noise floor.
    pub floor_factor: f64,
    /// Peak-to-floor ratio below which the region counts as silent.
    pub min_peak_to_floor: f64,
    /// Search starts this long before the mapped video time.
    pub pre_guard_s: f64,
    /// Search ends this long after the farthest expected arrival.
    pub post_guard_s: f64,
    /// Farthest range considered when bounding the search.
    pub max_depth_m: f64,
    pub v_sound: f64,
    pub clip_len: usize,
    pub highlight_len: usize,
}

impl Default for OnsetParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            envelope_s: 0.0005,
            floor_factor: 4.0,
            min_peak_to_floor: 10.0,
            pre_guard_s: 0.005,
            post_guard_s: 0.02,
            max_depth_m: 60.0,
            v_sound: crate::scene_sim::DEFAULT_V_SOUND,
            clip_len: 1600,
            highlight_len: 24,
        }
    }
}

/// Fixed-length audio excerpt with the samples nearest the video time marked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightedClip {
    pub samples: Vec<f32>,
    pub highlight: Vec<bool>,
    /// Absolute index of `samples[0]`; may be negative near the start.
    pub base_sample_index: i64,
    /// Part of the window lies outside the recording and was zero-filled.
    pub clipped: bool,
}

impl HighlightedClip {
    pub fn highlight_range(&self) -> Option<(i64, i64)> {
        let first = self.highlight.iter().position(|&h| h)?;
        let last = self.highlight.iter().rposition(|&h| h)?;
        Some((
            self.base_sample_index + first as i64,
            self.base_sample_index + last as i64 + 1,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AudioOnset {
    /// Audio-clock time, `onset_sample / fs`.
    pub t_audio: f64,
    pub onset_sample: i64,
    /// Envelope peak over the noise floor.
    pub confidence: f64,
}

/// Audio index of a scene (video clock) time.
pub fn video_time_to_sample(audio: &AudioClip, t: f64) -> i64 {
    ((t - audio.clock_offset_s) * f64::from(audio.sample_rate)).round() as i64
}

/// Clip of `params.clip_len` samples with the highlight a quarter of the way
/// in, centred on the audio index of `t_video`.
pub fn build_highlighted_clip(audio: &AudioClip, t_video: f64, params: &OnsetParams) -> HighlightedClip {
    let centre = video_time_to_sample(audio, t_video);
    let base = centre - (params.clip_len / 4) as i64;
    let h0 = centre - (params.highlight_len / 2) as i64;
    let h1 = h0 + params.highlight_len as i64;
    let mut clipped = false;
    let samples = (base..base + params.clip_len as i64)
        .map(|k| match usize::try_from(k).ok().and_then(|k| audio.samples.get(k)) {
            Some(&v) => v,
            None => {
                clipped = true;
                0.0
            }
        })
        .collect();
    let highlight = (base..base + params.clip_len as i64)
        .map(|k| k >= h0 && k < h1)
        .collect();
    HighlightedClip {
        samples,
        highlight,
        base_sample_index: base,
        clipped,
    }
}

/// Unclamped search window in samples for the sound of a collision seen at
/// `t_video`, with the audio clock starting `clock_offset_s` after the video.
pub fn search_window(t_video: f64, clock_offset_s: f64, sample_rate: u32, params: &OnsetParams) -> (i64, i64) {
    let fs = f64::from(sample_rate);
    let at = |t: f64| ((t - clock_offset_s) * fs).round() as i64;
    (
        at(t_video - params.pre_guard_s),
        at(t_video + params.max_depth_m / params.v_sound + params.post_guard_s),
    )
}

/// [`search_window`] on the clip's own clock, clamped to the recording.
pub fn search_region(audio: &AudioClip, t_video: f64, params: &OnsetParams) -> (i64, i64) {
    let (start, end) = search_window(t_video, audio.clock_offset_s, audio.sample_rate, params);
    (start.max(0), end.min(audio.samples.len() as i64))
}

/// First envelope crossing of `alpha * peak` in `[start, end)`, moved back to
/// where the envelope leaves the noise floor.
pub fn locate_onset(
    audio: &AudioClip,
    region: (i64, i64),
    params: &OnsetParams,
) -> Result<AudioOnset, AudioEventError> {
    let (start, end) = (region.0.max(0), region.1.min(audio.samples.len() as i64));
    if end <= start {
        return Err(AudioEventError::EmptySearch);
    }
    let (start, end) = (start as usize, end as usize);
    let fs = f64::from(audio.sample_rate);
    let win = ((params.envelope_s * fs).round() as usize).max(1);
    // Trailing mean square, so the envelope cannot rise before the onset.
    let mut env = Vec::with_capacity(end - start);
    let mut acc = 0.0f64;
    let x = |k: usize| f64::from(audio.samples[k]).powi(2);
    for k in start.saturating_sub(win - 1)..start {
        acc += x(k);
    }
    for k in start..end {
        acc += x(k);
        if k >= win {
            acc -= x(k - win);
        }
        env.push((acc / win as f64).max(0.0));
    }
    let floor = median(&env).unwrap_or(0.0);
    let peak = env.iter().copied().fold(0.0, f64::max);
    let no_onset = AudioEventError::NoOnset {
        start: start as i64,
        end: end as i64,
    };
    if peak <= 1e-20 || peak < params.min_peak_to_floor * floor {
        return Err(no_onset);
    }
    let mut k = env.iter().position(|&e| e >= params.alpha * peak).ok_or(no_onset)?;
    let stop = params.floor_factor * floor;
    while k > 0 && env[k - 1] > stop {
        k -= 1;
    }
    let onset_sample = (start + k) as i64;
    Ok(AudioOnset {
        t_audio: onset_sample as f64 / fs,
        onset_sample,
        confidence: (peak / floor.max(1e-30)).min(1e12),
    })
}

/// Onset of the sound caused by the collision seen at `t_video`.
pub fn onset_after(audio: &AudioClip, t_video: f64, params: &OnsetParams) -> Result<AudioOnset, AudioEventError> {
    locate_onset(audio, search_region(audio, t_video, params), params)
}
