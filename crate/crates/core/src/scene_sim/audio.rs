use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImpactModel, SceneConfig, SceneError, Trajectory};

pub const BURST_S: f64 = 0.040;
pub const DECAY_S: f64 = 0.005;
pub const RAMP_S: f64 = 0.003;
/// Recording continues this long past the last sound arrival.
const TAIL_S: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    /// Scene time of sample 0.
    pub clock_offset_s: f64,
    /// Set when two impact waveforms overlap in the recording.
    #[serde(default)]
    pub overlapping: bool,
}

impl AudioClip {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Scene time of sample `k`.
    pub fn scene_time(&self, k: i64) -> f64 {
        k as f64 / f64::from(self.sample_rate) + self.clock_offset_s
    }
}

/// Audio-clock sample at which a sound emitted at scene time `t_emit` from
/// `depth_m` away starts.
pub fn onset_sample(t_emit: f64, depth_m: f64, v_sound: f64, t_hw_s: f64, sample_rate: u32) -> i64 {
    ((t_emit + depth_m / v_sound - t_hw_s) * f64::from(sample_rate)).round() as i64
}

/// Ground-truth onset index of every collision in the audio clock.
pub fn onset_samples(traj: &Trajectory, cfg: &SceneConfig) -> Vec<i64> {
    traj.collision_times
        .iter()
        .map(|&tc| onset_sample(tc, cfg.depth_m, cfg.v_sound, cfg.t_hw_s, cfg.sample_rate))
        .collect()
}

/// Peak amplitude of the first impact at this distance.
pub fn base_amplitude(depth_m: f64) -> f64 {
    (1.8 / depth_m).min(0.9)
}

/// One impact waveform. Sample 0 is the physical onset.
pub fn impact_burst(model: ImpactModel, amplitude: f64, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let fs = f64::from(sample_rate);
    let n = (BURST_S * fs).round() as usize;
    let tau = DECAY_S * fs;
    let ramp = RAMP_S * fs;
    (0..n)
        .map(|i| {
            let carrier = if i == 0 {
                1.0
            } else {
                let mag: f64 = rng.gen_range(0.5..=1.0);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            };
            let mut env = (-(i as f64) / tau).exp();
            if model == ImpactModel::RampedOnset {
                env *= (i as f64 / ramp).min(1.0);
            }
            amplitude * env * carrier
        })
        .collect()
}

/// Impact sounds for every collision, delayed by acoustic propagation and
/// indexed in the recorder clock.
pub fn synthesize_audio(traj: &Trajectory, cfg: &SceneConfig) -> Result<AudioClip, SceneError> {
    cfg.validate()?;
    if traj.collision_times.is_empty() {
        return Err(SceneError::Audio("trajectory has no collision".into()));
    }
    let fs = f64::from(cfg.sample_rate);
    let total_s = traj.duration_s.max(*traj.collision_times.last().unwrap()) + cfg.sound_delay_s() + TAIL_S;
    let len = ((total_s - cfg.t_hw_s) * fs).ceil().max(1.0) as usize;
    let mut buf = vec![0.0f64; len];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0xa0d1_0000_0000_0001);
    let amp0 = base_amplitude(cfg.depth_m);
    let v0 = traj.impact_speeds[0].max(f64::EPSILON);
    let onsets = onset_samples(traj, cfg);
    let burst_len = (BURST_S * fs).round() as i64;
    let overlapping = onsets.windows(2).any(|w| w[1] - w[0] < burst_len);
    for (&onset, &speed) in onsets.iter().zip(&traj.impact_speeds) {
        let burst = impact_burst(cfg.impact_model, amp0 * speed / v0, cfg.sample_rate, &mut rng);
        add_at(&mut buf, onset, &burst);
    }
    add_noise(&mut buf, amp0, cfg.noise.audio_snr_db, &mut rng);
    Ok(AudioClip {
        samples: buf.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect(),
        sample_rate: cfg.sample_rate,
        clock_offset_s: cfg.t_hw_s,
        overlapping,
    })
}

pub(crate) fn add_at(buf: &mut [f64], start: i64, wave: &[f64]) {
    for (i, &w) in wave.iter().enumerate() {
        let k = start + i as i64;
        if k >= 0 && (k as usize) < buf.len() {
            buf[k as usize] += w;
        }
    }
}

/// White noise at `snr_db` below `peak`; `snr_db == 0` leaves the buffer clean.
pub(crate) fn add_noise(buf: &mut [f64], peak: f64, snr_db: f64, rng: &mut impl Rng) {
    if snr_db <= 0.0 {
        return;
    }
    let sigma = peak / 10f64.powf(snr_db / 20.0);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in buf.iter_mut() {
        *v += normal.sample(rng);
    }
}
