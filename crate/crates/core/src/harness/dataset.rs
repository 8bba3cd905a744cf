use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::io::{ensure_dir, read_frames, read_json, read_wav, write_frames, write_json, write_wav};
use crate::scene_sim::{
    scene_rng, simulate_scene, AudioClip, CameraSpec, FrameSequence, GroundTruth, ImpactModel, NoiseSpec, SceneConfig,
    SceneSpec, DEFAULT_C_LIGHT, DEFAULT_V_SOUND, SUPPORTED_FPS,
};

pub const DATASET_FORMAT: u32 = 1;
pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactModelMix {
    pub sharp_impulse: f64,
    pub ramped_onset: f64,
}

impl Default for ImpactModelMix {
    fn default() -> Self {
        Self {
            sharp_impulse: 1.0,
            ramped_onset: 0.0,
        }
    }
}

/// Ranges of the per-scene motion parameters, sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRanges {
    pub drop_height_m: (f64, f64),
    pub restitution: (f64, f64),
    pub horizontal_velocity: (f64, f64),
    /// Release is delayed by up to this much so contacts fall at every phase
    /// of the coarse frame grid.
    pub release_jitter_s: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            drop_height_m: (0.35, 0.9),
            restitution: (0.3, 0.8),
            horizontal_velocity: (-0.4, 0.4),
            release_jitter_s: 1.0 / 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub format_version: u32,
    pub n_scenes: usize,
    pub depth_range_m: (f64, f64),
    pub fps_set: Vec<u32>,
    pub impact_model_mix: ImpactModelMix,
    /// Noise levels, shared out evenly over the scenes.
    pub noise_sweep: Vec<NoiseSpec>,
    pub multi_collision_fraction: f64,
    pub seed: u64,
    pub t_hw_s: f64,
    pub sample_rate: u32,
    pub v_sound: f64,
    pub ranges: SceneRanges,
    pub camera: CameraSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            format_version: DATASET_FORMAT,
            n_scenes: 100,
            depth_range_m: (2.0, 50.0),
            fps_set: SUPPORTED_FPS.to_vec(),
            impact_model_mix: ImpactModelMix::default(),
            noise_sweep: vec![NoiseSpec::default()],
            multi_collision_fraction: 0.0,
            seed: 0,
            t_hw_s: 0.001,
            sample_rate: 48_000,
            v_sound: DEFAULT_V_SOUND,
            ranges: SceneRanges::default(),
            camera: CameraSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Spec(m));
        if self.n_scenes == 0 {
            return bad("n_scenes must be positive".into());
        }
        let (lo, hi) = self.depth_range_m;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("depth_range_m must satisfy 0 < min <= max, got ({lo}, {hi})"));
        }
        if self.fps_set.is_empty() {
            return bad("fps_set is empty".into());
        }
        if let Some(f) = self.fps_set.iter().find(|f| !SUPPORTED_FPS.contains(f)) {
            return bad(format!("fps {f} not in {SUPPORTED_FPS:?}"));
        }
        let m = self.impact_model_mix;
        if m.sharp_impulse < 0.0 || m.ramped_onset < 0.0 || (m.sharp_impulse + m.ramped_onset - 1.0).abs() > 1e-9 {
            return bad("impact_model_mix fractions must be non-negative and sum to 1".into());
        }
        if !(0.0..=1.0).contains(&self.multi_collision_fraction) {
            return bad("multi_collision_fraction must lie in [0, 1]".into());
        }
        if self.noise_sweep.is_empty() {
            return bad("noise_sweep is empty; use [{}] for noiseless".into());
        }
        let r = self.ranges;
        for (name, (a, b)) in [
            ("drop_height_m", r.drop_height_m),
            ("restitution", r.restitution),
            ("horizontal_velocity", r.horizontal_velocity),
        ] {
            if !(a <= b && a.is_finite() && b.is_finite()) {
                return bad(format!("ranges.{name} must satisfy min <= max"));
            }
        }
        if !(r.drop_height_m.0 > 0.0) {
            return bad("ranges.drop_height_m must be positive".into());
        }
        Ok(())
    }

    fn max_fps(&self) -> u32 {
        self.fps_set.iter().copied().max().unwrap_or(240)
    }
}

/// One scene of a dataset before rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledScene {
    pub id: usize,
    pub spec: SceneSpec,
}

pub fn scene_dir_name(id: usize) -> String {
    format!("scene_{id:04}")
}

fn fps_dir_name(fps: u32) -> String {
    format!("fps_{fps:03}")
}

/// Exactly `round(fraction * n)` true flags, placed by a seeded shuffle.
fn quota(n: usize, fraction: f64, rng: &mut impl Rng) -> Vec<bool> {
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut v: Vec<bool> = (0..n).map(|i| i < k).collect();
    v.shuffle(rng);
    v
}

/// Scene parameters for the whole dataset. Frame rates are set per variant
/// at render time; the returned specs use the highest rate of `fps_set`.
pub fn sample_scenes(spec: &DatasetSpec) -> Result<Vec<SampledScene>, HarnessError> {
    spec.validate()?;
    let n = spec.n_scenes;
    let mut rng = scene_rng(spec.seed, u64::MAX);
    let multi = quota(n, spec.multi_collision_fraction, &mut rng);
    let ramped = quota(n, spec.impact_model_mix.ramped_onset, &mut rng);
    let mut noise: Vec<usize> = (0..n).map(|i| i % spec.noise_sweep.len()).collect();
    noise.shuffle(&mut rng);

    (0..n)
        .map(|id| {
            let mut rng = scene_rng(spec.seed, id as u64);
            let r = spec.ranges;
            let mut draw = |impact_model| {
                let u = |rng: &mut rand_chacha::ChaCha8Rng, (a, b): (f64, f64)| {
                    if b > a {
                        rng.gen_range(a..b)
                    } else {
                        a
                    }
                };
                SceneConfig {
                    depth_m: u(&mut rng, spec.depth_range_m),
                    drop_height_m: u(&mut rng, r.drop_height_m),
                    restitution: u(&mut rng, r.restitution),
                    horizontal_velocity: u(&mut rng, r.horizontal_velocity),
                    release_time_s: u(&mut rng, (0.0, r.release_jitter_s)),
                    rng_seed: rng.gen(),
                    impact_model,
                    fps: spec.max_fps(),
                    sample_rate: spec.sample_rate,
                    t_hw_s: spec.t_hw_s,
                    noise: spec.noise_sweep[noise[id]],
                    v_sound: spec.v_sound,
                    c_light: DEFAULT_C_LIGHT,
                    camera: spec.camera,
                    ..SceneConfig::default()
                }
            };
            let model = if ramped[id] {
                ImpactModel::RampedOnset
            } else {
                ImpactModel::SharpImpulse
            };
            let base = draw(model);
            let scene = if multi[id] {
                let patch = draw(model);
                SceneSpec::compose(base, patch)?
            } else {
                base.validate()?;
                SceneSpec::single(base)
            };
            Ok(SampledScene { id, spec: scene })
        })
        .collect()
}

/// Writes `dataset.json` and one directory per scene holding `scene.json`,
/// `ground_truth.json`, `audio.wav` and a `fps_NNN/` frame directory for
/// every rate.
pub fn generate_dataset(spec: &DatasetSpec, out: &Path) -> Result<Vec<SampledScene>, HarnessError> {
    let scenes = sample_scenes(spec)?;
    ensure_dir(out)?;
    write_json(&out.join(DATASET_FILE), spec)?;
    scenes.par_iter().try_for_each(|s| -> Result<(), HarnessError> {
        let dir = out.join(scene_dir_name(s.id));
        ensure_dir(&dir)?;
        write_json(&dir.join("scene.json"), &s.spec)?;
        for (i, &fps) in spec.fps_set.iter().enumerate() {
            let sim = simulate_scene(&s.spec.with_fps(fps))?;
            if i == 0 {
                write_json(&dir.join("ground_truth.json"), &sim.ground_truth)?;
                write_wav(&dir.join("audio.wav"), &sim.audio)?;
            }
            write_frames(&dir.join(fps_dir_name(fps)), &sim.frames)?;
        }
        Ok(())
    })?;
    Ok(scenes)
}

pub fn load_dataset_spec(dir: &Path) -> Result<DatasetSpec, HarnessError> {
    let spec: DatasetSpec = read_json(&dir.join(DATASET_FILE))?;
    if spec.format_version != DATASET_FORMAT {
        return Err(HarnessError::Spec(format!(
            "dataset format {} is not supported (expected {DATASET_FORMAT})",
            spec.format_version
        )));
    }
    Ok(spec)
}

/// Frames at `fps`, audio and ground truth of one scene directory. The audio
/// clock offset is taken from the ground truth.
pub fn load_scene(scene_dir: &Path, fps: u32) -> Result<(FrameSequence, AudioClip, GroundTruth), HarnessError> {
    let gt: GroundTruth = read_json(&scene_dir.join("ground_truth.json"))?;
    let audio = read_wav(&scene_dir.join("audio.wav"), gt.t_hw_s)?;
    let frames = read_frames(&scene_dir.join(fps_dir_name(fps)))?;
    Ok((frames, audio, gt))
}
