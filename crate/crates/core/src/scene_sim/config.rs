use serde::{Deserialize, Serialize};

use super::SceneError;

pub const DEFAULT_V_SOUND: f64 = 343.0;
pub const DEFAULT_C_LIGHT: f64 = 2.998e8;
pub const SUPPORTED_FPS: [u32; 4] = [30, 60, 120, 240];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactModel {
    /// Noise burst that starts at full amplitude.
    SharpImpulse,
    /// Same burst behind a 3 ms linear fade-in.
    RampedOnset,
}

/// Sensor noise levels. Zero disables the corresponding source.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Gaussian pixel noise, in gray levels.
    pub pixel_noise_sigma: f64,
    /// Peak-to-noise ratio of the recording. `0` means no audio noise.
    pub audio_snr_db: f64,
    /// Per-frame random offset of the drawn object, in pixels.
    pub centroid_jitter_px: f64,
}

impl NoiseSpec {
    pub fn is_noiseless(&self) -> bool {
        self.pixel_noise_sigma == 0.0 && self.audio_snr_db == 0.0 && self.centroid_jitter_px == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    /// Diameter of the object on screen. The focal length is chosen per scene
    /// so that this holds at the configured depth.
    pub object_px: f64,
    /// Column of the object at mid-clip.
    pub anchor_column: f64,
    /// Uniform backdrop level in [0, 1] instead of the default texture.
    pub flat_background: Option<f64>,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 192,
            object_px: 32.0,
            anchor_column: 128.0,
            flat_background: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub depth_m: f64,
    pub drop_height_m: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub restitution: f64,
    #[serde(default)]
    pub horizontal_velocity: f64,
    #[serde(default = "default_radius")]
    pub object_radius_m: f64,
    #[serde(default = "default_impact")]
    pub impact_model: ImpactModel,
    #[serde(default = "default_fps")]
    pub fps: u32,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    #[serde(default)]
    pub t_hw_s: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_v_sound")]
    pub v_sound: f64,
    #[serde(default = "default_c_light")]
    pub c_light: f64,
    /// The object hangs still until this scene time.
    #[serde(default)]
    pub release_time_s: f64,
    /// Clip length; derived from the bounce schedule when absent.
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(default)]
    pub camera: CameraSpec,
}

fn default_gravity() -> f64 {
    9.8
}
fn default_radius() -> f64 {
    0.12
}
fn default_impact() -> ImpactModel {
    ImpactModel::SharpImpulse
}
fn default_fps() -> u32 {
    240
}
fn default_sample_rate() -> u32 {
    48_000
}
fn default_v_sound() -> f64 {
    DEFAULT_V_SOUND
}
fn default_c_light() -> f64 {
    DEFAULT_C_LIGHT
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            depth_m: 10.0,
            drop_height_m: 0.6,
            gravity: default_gravity(),
            restitution: 0.6,
            horizontal_velocity: 0.2,
            object_radius_m: default_radius(),
            impact_model: default_impact(),
            fps: default_fps(),
            sample_rate: default_sample_rate(),
            t_hw_s: 0.001,
            noise: NoiseSpec::default(),
            rng_seed: 0,
            v_sound: DEFAULT_V_SOUND,
            c_light: DEFAULT_C_LIGHT,
            release_time_s: 0.0,
            duration_s: None,
            camera: CameraSpec::default(),
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::Config(msg));
        if !(self.depth_m > 0.0 && self.depth_m.is_finite()) {
            return bad(format!("depth_m must be positive, got {}", self.depth_m));
        }
        if !(self.drop_height_m >= 0.0 && self.drop_height_m.is_finite()) {
            return bad(format!(
                "drop_height_m must be non-negative, got {}",
                self.drop_height_m
            ));
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return bad(format!("gravity must be positive, got {}", self.gravity));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return bad(format!("restitution must lie in [0, 1], got {}", self.restitution));
        }
        if !self.horizontal_velocity.is_finite() {
            return bad("horizontal_velocity must be finite".into());
        }
        if !(self.object_radius_m > 0.0 && self.object_radius_m.is_finite()) {
            return bad(format!(
                "object_radius_m must be positive, got {}",
                self.object_radius_m
            ));
        }
        if !SUPPORTED_FPS.contains(&self.fps) {
            return bad(format!("fps must be one of {SUPPORTED_FPS:?}, got {}", self.fps));
        }
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !self.t_hw_s.is_finite() {
            return bad("t_hw_s must be finite".into());
        }
        let n = &self.noise;
        for (name, v) in [
            ("pixel_noise_sigma", n.pixel_noise_sigma),
            ("audio_snr_db", n.audio_snr_db),
            ("centroid_jitter_px", n.centroid_jitter_px),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("noise.{name} must be non-negative, got {v}"));
            }
        }
        if !(self.v_sound > 0.0 && self.v_sound < self.c_light) {
            return bad("need 0 < v_sound < c_light".into());
        }
        if !(self.release_time_s >= 0.0 && self.release_time_s.is_finite()) {
            return bad("release_time_s must be non-negative".into());
        }
        if let Some(d) = self.duration_s {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("duration_s must be positive, got {d}"));
            }
        }
        let cam = &self.camera;
        if cam.width < 16 || cam.height < 16 || cam.object_px < 4.0 {
            return bad("camera must be at least 16x16 px with an object of at least 4 px".into());
        }
        Ok(())
    }

    /// Same scene at another frame rate.
    pub fn with_fps(&self, fps: u32) -> Self {
        Self { fps, ..self.clone() }
    }

    pub fn light_delay_s(&self) -> f64 {
        self.depth_m / self.c_light
    }

    pub fn sound_delay_s(&self) -> f64 {
        self.depth_m / self.v_sound
    }
}
