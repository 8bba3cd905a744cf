use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SceneConfig, SceneError, Trajectory};
use crate::image::{GrayImage, Mask};

/// Rows of floor texture below the contact line.
const FLOOR_ROWS: f64 = 20.0;
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub frames: Vec<GrayImage>,
    /// Video clock; frame `n` is at `n / fps`.
    pub timestamps: Vec<f64>,
    pub fps: u32,
}

impl FrameSequence {
    pub fn new(frames: Vec<GrayImage>, fps: u32) -> Self {
        let timestamps = (0..frames.len()).map(|n| frame_time(n, fps)).collect();
        Self {
            frames,
            timestamps,
            fps,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, GrayImage::width)
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, GrayImage::height)
    }

    /// Keeps every `factor`-th frame starting from frame 0.
    pub fn decimate(&self, factor: u32) -> FrameSequence {
        let factor = factor.max(1) as usize;
        let frames = self.frames.iter().step_by(factor).cloned().collect();
        FrameSequence::new(frames, self.fps / factor as u32)
    }
}

#[inline]
pub fn frame_time(n: usize, fps: u32) -> f64 {
    n as f64 / f64::from(fps)
}

/// Orthographic-equivalent pinhole mapping for an object moving in a plane
/// at fixed depth. The focal length is chosen so that the object diameter
/// covers `object_px` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Pixels per metre in the object plane.
    pub scale: f64,
    pub focal_length_px: f64,
    pub ground_row: f64,
    pub column: f64,
    /// World x that maps onto `column`.
    pub x_ref: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn for_scene(cfg: &SceneConfig, traj: &Trajectory) -> Self {
        let cam = &cfg.camera;
        let scale = cam.object_px / (2.0 * cfg.object_radius_m);
        Self {
            scale,
            focal_length_px: scale * cfg.depth_m,
            ground_row: cam.height as f64 - FLOOR_ROWS,
            column: cam.anchor_column,
            x_ref: traj.position_at(0.5 * traj.duration_s)[0],
            width: cam.width,
            height: cam.height,
        }
    }

    /// Image coordinates of a world point, y up in the world and down in the
    /// image.
    pub fn project(&self, pos: [f64; 3]) -> (f64, f64) {
        let f = self.focal_length_px / pos[2];
        (self.column + f * (pos[0] - self.x_ref), self.ground_row - f * pos[1])
    }

    /// Inverse of [`Camera::project`] for a point at `depth`.
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> [f64; 2] {
        let f = self.focal_length_px / depth;
        [self.x_ref + (u - self.column) / f, (self.ground_row - v) / f]
    }
}

/// A disc drawn into the frames.
#[derive(Debug, Clone)]
pub struct RenderObject<'a> {
    pub traj: &'a Trajectory,
    pub camera: Camera,
    pub radius_px: f64,
    pub depth_m: f64,
    pub c_light: f64,
    /// Video time minus the object's own scene time.
    pub time_offset_s: f64,
    /// Object-time interval in which the disc is shown.
    pub visible: Option<(f64, f64)>,
    pub texture_phase: f64,
}

impl RenderObject<'_> {
    /// Image centre at video time `t`, or `None` while hidden.
    pub fn centre_at(&self, t: f64) -> Option<(f64, f64)> {
        let tau = t - self.time_offset_s - self.depth_m / self.c_light;
        if let Some((a, b)) = self.visible {
            if tau < a || tau > b {
                return None;
            }
        }
        Some(self.camera.project(self.traj.position_at(tau)))
    }
}

/// Per-object coverage in one frame, used for compositing and ground-truth
/// masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub x0: i64,
    pub y0: i64,
    pub w: usize,
    pub h: usize,
    pub alpha: Vec<f32>,
    pub centre: (f64, f64),
}

impl Sprite {
    pub fn to_mask(&self, width: usize, height: usize, min_alpha: f32) -> Mask {
        let mut m = Mask::new(width, height);
        for j in 0..self.h {
            for i in 0..self.w {
                let x = self.x0 + i as i64;
                let y = self.y0 + j as i64;
                if x >= 0
                    && y >= 0
                    && (x as usize) < width
                    && (y as usize) < height
                    && self.alpha[j * self.w + i] >= min_alpha
                {
                    m.set(x as usize, y as usize, true);
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub frames: FrameSequence,
    /// `sprites[n][k]`: object `k` in frame `n`, `None` while hidden.
    pub sprites: Vec<Vec<Option<Sprite>>>,
}

pub fn background_level(x: f64, y: f64, ground_row: f64) -> f64 {
    if y >= ground_row {
        0.22 + 0.06 * (x / 3.1 + 0.4 * (y / 2.3).sin()).sin() + 0.04 * (y / 1.9).cos()
    } else {
        0.42 + 0.07 * (x / 5.3 + 0.7 * (y / 9.0).sin()).sin() + 0.05 * (y / 4.1 - x / 11.0).cos()
    }
}

/// Intensity of the disc texture at an offset from its centre, in pixels.
pub fn disc_level(dx: f64, dy: f64, radius: f64, phase: f64) -> f64 {
    let rho = (dx * dx + dy * dy).sqrt();
    let theta = dy.atan2(dx);
    let spokes = (rho / 4.0).min(1.0) * 0.12 * (3.0 * theta + rho / 5.0 + phase).cos();
    (0.62 + 0.17 * (std::f64::consts::TAU * rho / 7.0 + phase).cos() + spokes + 0.1 * dx / radius).clamp(0.02, 0.98)
}

/// Renders `n_frames` frames at `fps` with the given objects.
pub fn render_objects(
    objects: &[RenderObject<'_>],
    width: usize,
    height: usize,
    fps: u32,
    n_frames: usize,
    flat_background: Option<f64>,
    cfg_noise: &super::NoiseSpec,
    seed: u64,
) -> RenderOutput {
    let ground_row = objects
        .first()
        .map_or(height as f64 - FLOOR_ROWS, |o| o.camera.ground_row);
    let bg: Vec<f64> = (0..width * height)
        .map(|i| {
            flat_background.unwrap_or_else(|| background_level((i % width) as f64, (i / width) as f64, ground_row))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(fps) << 40) ^ 0x5eed_f4a3);
    let jitter = (cfg_noise.centroid_jitter_px > 0.0)
        .then(|| Normal::new(0.0, cfg_noise.centroid_jitter_px).expect("finite sigma"));
    let pixel = (cfg_noise.pixel_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, cfg_noise.pixel_noise_sigma).expect("finite sigma"));

    let mut frames = Vec::with_capacity(n_frames);
    let mut sprites = Vec::with_capacity(n_frames);
    for n in 0..n_frames {
        let t = frame_time(n, fps);
        let mut level = bg.clone();
        let mut frame_sprites = Vec::with_capacity(objects.len());
        for obj in objects {
            let Some((mut cu, mut cv)) = obj.centre_at(t) else {
                frame_sprites.push(None);
                continue;
            };
            if let Some(j) = &jitter {
                cu += j.sample(&mut rng);
                cv += j.sample(&mut rng);
            }
            frame_sprites.push(draw_disc(&mut level, width, height, obj, cu, cv));
        }
        let mut img = GrayImage::new(width, height);
        for (i, v) in level.iter().enumerate() {
            let mut g = v * 255.0;
            if let Some(p) = &pixel {
                g += p.sample(&mut rng);
            }
            img.set(i % width, i / width, g.round().clamp(0.0, 255.0) as u8);
        }
        frames.push(img);
        sprites.push(frame_sprites);
    }
    RenderOutput {
        frames: FrameSequence::new(frames, fps),
        sprites,
    }
}

fn draw_disc(
    level: &mut [f64],
    width: usize,
    height: usize,
    obj: &RenderObject<'_>,
    cu: f64,
    cv: f64,
) -> Option<Sprite> {
    let r = obj.radius_px;
    let x0 = (cu - r - 1.0).floor() as i64;
    let y0 = (cv - r - 1.0).floor() as i64;
    let x1 = (cu + r + 1.0).ceil() as i64;
    let y1 = (cv + r + 1.0).ceil() as i64;
    if x1 < 0 || y1 < 0 || x0 >= width as i64 || y0 >= height as i64 {
        return None;
    }
    let w = (x1 - x0 + 1) as usize;
    let h = (y1 - y0 + 1) as usize;
    let mut alpha = vec![0f32; w * h];
    let ss = SUPERSAMPLE as f64;
    let r2 = r * r;
    for j in 0..h {
        for i in 0..w {
            let px = x0 + i as i64;
            let py = y0 + j as i64;
            let mut inside = 0usize;
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let dx = px as f64 + (sx as f64 + 0.5) / ss - 0.5 - cu;
                    let dy = py as f64 + (sy as f64 + 0.5) / ss - 0.5 - cv;
                    if dx * dx + dy * dy <= r2 {
                        inside += 1;
                        acc += disc_level(dx, dy, r, obj.texture_phase);
                    }
                }
            }
            if inside == 0 {
                continue;
            }
            let a = inside as f64 / (ss * ss);
            alpha[j * w + i] = a as f32;
            if px >= 0 && py >= 0 && (px as usize) < width && (py as usize) < height {
                let k = py as usize * width + px as usize;
                // Later objects are composited over earlier ones.
                level[k] = (1.0 - a) * level[k] + acc / (ss * ss);
            }
        }
    }
    Some(Sprite {
        x0,
        y0,
        w,
        h,
        alpha,
        centre: (cu, cv),
    })
}

/// Number of frames covering `[0, duration]`.
pub fn frame_count(duration_s: f64, fps: u32) -> usize {
    (duration_s * f64::from(fps) + 1e-9).floor() as usize + 1
}

pub(crate) fn primary_object<'a>(traj: &'a Trajectory, cfg: &SceneConfig) -> RenderObject<'a> {
    RenderObject {
        traj,
        camera: Camera::for_scene(cfg, traj),
        radius_px: 0.5 * cfg.camera.object_px,
        depth_m: cfg.depth_m,
        c_light: cfg.c_light,
        time_offset_s: 0.0,
        visible: None,
        texture_phase: 0.0,
    }
}

/// Draws the scene at `cfg.fps`; the disc position in frame `n` reflects the
/// scene state at `n / fps - depth / c`.
pub fn render_frames(traj: &Trajectory, cfg: &SceneConfig) -> Result<FrameSequence, SceneError> {
    render_with_sprites(traj, cfg).map(|out| out.frames)
}

pub fn render_with_sprites(traj: &Trajectory, cfg: &SceneConfig) -> Result<RenderOutput, SceneError> {
    cfg.validate()?;
    let obj = primary_object(traj, cfg);
    let n = frame_count(traj.duration_s, cfg.fps);
    let out = render_objects(
        &[obj],
        cfg.camera.width,
        cfg.camera.height,
        cfg.fps,
        n,
        cfg.camera.flat_background,
        &cfg.noise,
        cfg.rng_seed,
    );
    ensure_visible(&out, cfg.camera.width, cfg.camera.height)?;
    Ok(out)
}

pub(crate) fn ensure_visible(out: &RenderOutput, width: usize, height: usize) -> Result<(), SceneError> {
    let seen = out
        .sprites
        .iter()
        .flatten()
        .flatten()
        .any(|s| s.x0 + (s.w as i64) > 0 && s.y0 + (s.h as i64) > 0 && s.x0 < width as i64 && s.y0 < height as i64);
    if seen {
        Ok(())
    } else {
        Err(SceneError::Render("object is outside the frame in every frame".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::{simulate_trajectory, NoiseSpec};

    fn mass_centroid(img: &GrayImage, bg: &GrayImage) -> (f64, f64) {
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let w = (f64::from(img.get(x, y)) - f64::from(bg.get(x, y))).abs();
                sx += w * x as f64;
                sy += w * y as f64;
                sw += w;
            }
        }
        (sx / sw, sy / sw)
    }

    #[test]
    fn static_scene_frames_identical() {
        let cfg = SceneConfig {
            drop_height_m: 0.0,
            duration_s: Some(0.1),
            ..SceneConfig::default()
        };
        let traj = simulate_trajectory(&cfg).unwrap();
        let seq = render_frames(&traj, &cfg).unwrap();
        assert!(seq.len() > 2);
        for f in &seq.frames[1..] {
            assert_eq!(f, &seq.frames[0]);
        }
    }

    #[test]
    fn timestamps_exact() {
        let cfg = SceneConfig::default();
        let traj = simulate_trajectory(&cfg).unwrap();
        let seq = render_frames(&traj, &cfg).unwrap();
        assert_eq!(seq.frames.len(), seq.timestamps.len());
        for (n, t) in seq.timestamps.iter().enumerate() {
            assert_eq!(*t, n as f64 / 240.0);
        }
    }

    #[test]
    fn horizontal_pixel_per_frame_tracks_centroid() {
        // 1 px/frame at 60 fps for a 32 px disc of radius 0.12 m, drawn on a
        // black backdrop so the intensity centroid belongs to the disc alone.
        let scale = 32.0 / 0.24;
        let cfg = SceneConfig {
            drop_height_m: 0.6,
            horizontal_velocity: 60.0 / scale,
            fps: 60,
            camera: crate::scene_sim::CameraSpec {
                flat_background: Some(0.0),
                ..Default::default()
            },
            ..SceneConfig::default()
        };
        let traj = simulate_trajectory(&cfg).unwrap();
        let out = render_with_sprites(&traj, &cfg).unwrap();
        let empty = GrayImage::new(cfg.camera.width, cfg.camera.height);
        let pre_contact = (traj.collision_times[0] * 60.0) as usize;
        let mut prev: Option<f64> = None;
        for n in 0..pre_contact {
            let x = mass_centroid(&out.frames.frames[n], &empty).0;
            if let Some(p) = prev {
                assert!((x - p - 1.0).abs() < 0.1, "frame {n}: {}", x - p);
            }
            prev = Some(x);
        }
    }

    #[test]
    fn light_delay_below_frame_resolution() {
        let d: f64 = 50.0;
        let delay: f64 = d / 2.998e8;
        assert!((delay - 1.667e-7).abs() < 1e-10);
        assert!(delay * 240.0 < 1e-4);
    }

    #[test]
    fn out_of_frame_is_an_error() {
        let cfg = SceneConfig {
            camera: crate::scene_sim::CameraSpec {
                anchor_column: -500.0,
                ..Default::default()
            },
            ..SceneConfig::default()
        };
        let traj = simulate_trajectory(&cfg).unwrap();
        assert!(matches!(render_frames(&traj, &cfg), Err(SceneError::Render(_))));
    }

    #[test]
    fn deterministic_with_noise() {
        let cfg = SceneConfig {
            noise: NoiseSpec {
                pixel_noise_sigma: 2.0,
                audio_snr_db: 30.0,
                centroid_jitter_px: 0.3,
            },
            rng_seed: 7,
            ..SceneConfig::default()
        };
        let traj = simulate_trajectory(&cfg).unwrap();
        let a = render_frames(&traj, &cfg).unwrap();
        let b = render_frames(&traj, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
