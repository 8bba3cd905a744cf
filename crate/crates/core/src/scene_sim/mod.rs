//! Synthetic collision scenes: a dropped disc seen by a camera and heard by a
//! microphone whose clock starts `t_hw_s` after the camera's.

mod audio;
mod config;
mod physics;
mod render;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audio::{
    base_amplitude, impact_burst, onset_sample, onset_samples, synthesize_audio, AudioClip, BURST_S, DECAY_S, RAMP_S,
};
pub use config::{CameraSpec, ImpactModel, NoiseSpec, SceneConfig, DEFAULT_C_LIGHT, DEFAULT_V_SOUND, SUPPORTED_FPS};
pub use physics::{simulate_trajectory, Trajectory, TrajectorySample};
pub use render::{
    background_level, disc_level, frame_count, frame_time, render_frames, render_objects, render_with_sprites, Camera,
    FrameSequence, RenderObject, RenderOutput, Sprite,
};

use crate::image::Mask;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene configuration: {0}")]
    Config(String),
    #[error("render failed: {0}")]
    Render(String),
    #[error("audio synthesis failed: {0}")]
    Audio(String),
}

pub const GROUND_TRUTH_FORMAT: u32 = 1;
/// Length of the audio segment carried over from a patch scene.
pub const IMPACT_CLIP_S: f64 = 0.0667;
/// Patch objects are shown this long either side of their collision.
pub const PATCH_VISIBLE_S: (f64, f64) = (0.25, 0.25);
/// Minimum separation between composed collisions.
pub const COMPOSE_GAP_S: f64 = 0.3;

/// A collision copied out of another scene and pasted into the base scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub config: SceneConfig,
    /// Added to the patch's own scene time to obtain base scene time. A
    /// multiple of 1/30 s so both scenes share frame instants at every rate.
    pub time_offset_s: f64,
}

/// One or two collisions rendered into a single recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub base: SceneConfig,
    #[serde(default)]
    pub patch: Option<PatchSpec>,
}

impl SceneSpec {
    pub fn single(base: SceneConfig) -> Self {
        Self { base, patch: None }
    }

    /// Composes two single-collision scenes. The patch collision is placed
    /// first and the base collision follows at least [`COMPOSE_GAP_S`] later.
    pub fn compose(base: SceneConfig, patch: SceneConfig) -> Result<Self, SceneError> {
        Self::compose_with_gap(base, patch, COMPOSE_GAP_S)
    }

    /// [`SceneSpec::compose`] with a chosen minimum gap between the two
    /// collisions. Short gaps with a far patch make the impact sounds overlap.
    pub fn compose_with_gap(mut base: SceneConfig, mut patch: SceneConfig, gap_s: f64) -> Result<Self, SceneError> {
        base.validate()?;
        patch.validate()?;
        let width = base.camera.width as f64;
        base.camera.anchor_column = (0.3 * width).round();
        patch.camera = base.camera;
        patch.camera.anchor_column = (0.72 * width).round();
        patch.fps = base.fps;
        patch.sample_rate = base.sample_rate;
        patch.t_hw_s = base.t_hw_s;
        patch.release_time_s = 0.0;

        let tp = first_collision(&patch)?;
        let target = PATCH_VISIBLE_S.0 + 0.1;
        let time_offset_s = ((target - tp) * 30.0).round() / 30.0;
        let patch_video_tc = tp + time_offset_s;

        base.release_time_s = 0.0;
        let tb = first_collision(&base)?;
        let want = patch_video_tc + gap_s.max(0.0) + 0.02;
        base.release_time_s = (want - tb).max(0.0);
        Ok(Self {
            base,
            patch: Some(PatchSpec {
                config: patch,
                time_offset_s,
            }),
        })
    }

    pub fn with_fps(&self, fps: u32) -> Self {
        Self {
            base: self.base.with_fps(fps),
            patch: self.patch.as_ref().map(|p| PatchSpec {
                config: p.config.with_fps(fps),
                time_offset_s: p.time_offset_s,
            }),
        }
    }

    pub fn collision_count(&self) -> usize {
        1 + usize::from(self.patch.is_some())
    }
}

fn first_collision(cfg: &SceneConfig) -> Result<f64, SceneError> {
    simulate_trajectory(cfg)?
        .collision_times
        .first()
        .copied()
        .ok_or_else(|| SceneError::Config("scene has no collision".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    /// Scene (= video) time of the contact.
    pub collision_time_s: f64,
    pub depth_m: f64,
    /// Audio-clock index of the sound onset.
    pub onset_sample: i64,
    /// 0 for the base object, 1 for a pasted one.
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format_version: u32,
    /// Depth of the base object.
    pub depth_m: f64,
    pub collision_times_s: Vec<f64>,
    pub onset_samples: Vec<i64>,
    pub t_hw_s: f64,
    /// Every collision in the recording, ordered by contact time.
    pub events: Vec<GroundTruthEvent>,
    pub overlapping_audio: bool,
}

#[derive(Debug, Clone)]
pub struct SimulatedScene {
    pub spec: SceneSpec,
    pub frames: FrameSequence,
    pub audio: AudioClip,
    pub ground_truth: GroundTruth,
    pub sprites: Vec<Vec<Option<Sprite>>>,
}

impl SimulatedScene {
    /// Rendered support of object `k` in frame `n` (coverage of at least half
    /// a pixel).
    pub fn object_mask(&self, n: usize, k: usize) -> Option<Mask> {
        self.sprites
            .get(n)?
            .get(k)?
            .as_ref()
            .map(|s| s.to_mask(self.frames.width(), self.frames.height(), 0.5))
    }
}

/// Simulates, renders and records a scene at the spec's frame rate.
pub fn simulate_scene(spec: &SceneSpec) -> Result<SimulatedScene, SceneError> {
    let base = &spec.base;
    let traj = simulate_trajectory(base)?;
    let mut audio = synthesize_audio(&traj, base)?;
    let base_onsets = onset_samples(&traj, base);
    let mut events: Vec<GroundTruthEvent> = traj
        .collision_times
        .iter()
        .zip(&base_onsets)
        .filter(|(&t, _)| t <= traj.duration_s)
        .map(|(&t, &k)| GroundTruthEvent {
            collision_time_s: t,
            depth_m: base.depth_m,
            onset_sample: k,
            object: 0,
        })
        .collect();
    let n_frames = frame_count(traj.duration_s, base.fps);
    let mut objects = vec![render::primary_object(&traj, base)];

    let patch_traj;
    if let Some(patch) = &spec.patch {
        let pc = &patch.config;
        patch_traj = simulate_trajectory(pc)?;
        let tp = *patch_traj
            .collision_times
            .first()
            .ok_or_else(|| SceneError::Config("patch scene has no collision".into()))?;
        let mut obj = render::primary_object(&patch_traj, pc);
        obj.time_offset_s = patch.time_offset_s;
        obj.visible = Some((tp - PATCH_VISIBLE_S.0, tp + PATCH_VISIBLE_S.1));
        obj.texture_phase = 1.3;
        objects.push(obj);

        let patch_audio = synthesize_audio(&patch_traj, pc)?;
        let fs = f64::from(base.sample_rate);
        let shift = (patch.time_offset_s * fs).round() as i64;
        let src_onset = onset_samples(&patch_traj, pc)[0];
        let seg_len = (IMPACT_CLIP_S * fs).round() as i64;
        let src_start = src_onset - (0.01 * fs).round() as i64;
        let dst_start = src_start + shift;
        let segment: Vec<f64> = (src_start..src_start + seg_len)
            .map(|k| {
                usize::try_from(k)
                    .ok()
                    .and_then(|k| patch_audio.samples.get(k))
                    .map_or(0.0, |&v| f64::from(v))
            })
            .collect();
        let overlaps = base_onsets.iter().any(|&b| {
            let b_end = b + (BURST_S * fs).round() as i64;
            b < dst_start + seg_len && dst_start < b_end
        });
        let mut buf: Vec<f64> = audio.samples.iter().map(|&v| f64::from(v)).collect();
        if overlaps {
            audio::add_at(&mut buf, dst_start, &segment);
            audio.overlapping = true;
        } else {
            for (i, &v) in segment.iter().enumerate() {
                let k = dst_start + i as i64;
                if k >= 0 && (k as usize) < buf.len() {
                    buf[k as usize] = v;
                }
            }
        }
        audio.samples = buf.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect();
        events.push(GroundTruthEvent {
            collision_time_s: tp + patch.time_offset_s,
            depth_m: pc.depth_m,
            onset_sample: src_onset + shift,
            object: 1,
        });
    }
    events.sort_by(|a, b| a.collision_time_s.total_cmp(&b.collision_time_s));
    let overlapping = audio.overlapping || {
        let burst = (BURST_S * f64::from(base.sample_rate)).round() as i64;
        let mut on: Vec<i64> = events.iter().map(|e| e.onset_sample).collect();
        on.sort_unstable();
        on.windows(2).any(|w| w[1] - w[0] < burst)
    };
    audio.overlapping = overlapping;

    let out = render_objects(
        &objects,
        base.camera.width,
        base.camera.height,
        base.fps,
        n_frames,
        base.camera.flat_background,
        &base.noise,
        base.rng_seed,
    );
    render::ensure_visible(&out, base.camera.width, base.camera.height)?;
    let ground_truth = GroundTruth {
        format_version: GROUND_TRUTH_FORMAT,
        depth_m: base.depth_m,
        collision_times_s: events.iter().map(|e| e.collision_time_s).collect(),
        onset_samples: events.iter().map(|e| e.onset_sample).collect(),
        t_hw_s: base.t_hw_s,
        events,
        overlapping_audio: overlapping,
    };
    Ok(SimulatedScene {
        spec: spec.clone(),
        frames: out.frames,
        audio,
        ground_truth,
        sprites: out.sprites,
    })
}

/// Deterministic per-scene RNG derived from a dataset seed.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
