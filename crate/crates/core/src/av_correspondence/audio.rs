use serde::{Deserialize, Serialize};

use crate::scene_sim::AudioClip;
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioDetectParams {
    /// Envelope block length.
    pub hop_s: f64,
    /// Threshold as a multiple of the median block energy.
    pub k: f64,
    /// Absolute energy floor, so a silent recording has no events.
    pub min_energy: f64,
    /// Minimum separation between reported events.
    pub min_separation_s: f64,
    pub window_s: f64,
    /// An active region longer than this holds more than one impact.
    pub max_single_s: f64,
    /// Block-to-block energy rise that marks a second onset inside a region.
    pub rise_factor: f64,
}

impl Default for AudioDetectParams {
    fn default() -> Self {
        Self {
            hop_s: 0.001,
            k: 6.0,
            min_energy: 1e-10,
            min_separation_s: 0.05,
            window_s: 0.0667,
            max_single_s: 0.06,
            rise_factor: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioImpactWindow {
    pub start_sample: i64,
    pub end_sample: i64,
    pub peak_sample: i64,
    /// Mean power of the loudest block.
    pub peak_energy: f64,
    /// First sample of the block that crossed the threshold.
    pub onset_sample: i64,
    /// Scene time of `onset_sample`.
    pub onset_time_s: f64,
    /// The region looks like several overlapping impacts.
    pub overlapping: bool,
    pub sample_rate: u32,
}

impl AudioImpactWindow {
    /// Scene-time span of the window.
    pub fn time_span(&self) -> (f64, f64) {
        let fs = f64::from(self.sample_rate);
        (
            self.onset_time_s - (self.onset_sample - self.start_sample) as f64 / fs,
            self.onset_time_s + (self.end_sample - self.onset_sample) as f64 / fs,
        )
    }
}

/// Impact sounds found by block-energy thresholding, sorted by time.
pub fn detect_audio_impacts(audio: &AudioClip, params: &AudioDetectParams) -> Vec<AudioImpactWindow> {
    let fs = f64::from(audio.sample_rate);
    let hop = ((params.hop_s * fs).round() as usize).max(1);
    let env: Vec<f64> = audio
        .samples
        .chunks(hop)
        .map(|c| c.iter().map(|&s| f64::from(s).powi(2)).sum::<f64>() / c.len() as f64)
        .collect();
    if env.is_empty() {
        return Vec::new();
    }
    let threshold = (params.k * median(&env).unwrap_or(0.0)).max(params.min_energy);

    // Contiguous active regions in blocks.
    let mut regions: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < env.len() {
        if env[i] > threshold {
            let start = i;
            while i < env.len() && env[i] > threshold {
                i += 1;
            }
            regions.push((start, i - 1));
        } else {
            i += 1;
        }
    }

    let sep_blocks = (params.min_separation_s / params.hop_s).round() as usize;
    let mut merged: Vec<(usize, usize, bool)> = Vec::new();
    for (a, b) in regions {
        match merged.last_mut() {
            Some(last) if a <= last.0 + sep_blocks => {
                last.1 = b;
                last.2 = true;
            }
            _ => merged.push((a, b, false)),
        }
    }

    let half = ((params.window_s * fs) / 2.0).round() as i64;
    let max_blocks = (params.max_single_s / params.hop_s).round() as usize;
    let attack = ((0.004 / params.hop_s).ceil() as usize).max(2);
    merged
        .into_iter()
        .map(|(a, b, joined)| {
            let peak = (a..=b).max_by(|&x, &y| env[x].total_cmp(&env[y])).unwrap_or(a);
            // Skip the attack so ramped onsets do not read as second impacts.
            let second_rise = (a + attack..=b).any(|j| env[j] > params.rise_factor * env[j - 1].max(threshold));
            let onset = (a * hop) as i64;
            AudioImpactWindow {
                start_sample: onset - half,
                end_sample: onset + half,
                peak_sample: (peak * hop + hop / 2) as i64,
                peak_energy: env[peak],
                onset_sample: onset,
                onset_time_s: audio.scene_time(onset),
                overlapping: joined || second_rise || b - a + 1 > max_blocks,
                sample_rate: audio.sample_rate,
            }
        })
        .collect()
}
