use serde::{Deserialize, Serialize};

use super::{SceneConfig, SceneError};

/// Rebounds slower than this end the bounce sequence.
const REST_SPEED: f64 = 1e-3;
/// Extra simulated time past the clip end.
const TAIL_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    /// x horizontal, y height of the object centre above the floor, z depth.
    pub pos: [f64; 3],
    pub vel: [f64; 3],
}

/// One piece of closed-form motion that starts at `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Segment {
    t0: f64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy0: f64,
    /// `false` for a resting object.
    falling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    /// Scene time of every floor contact, ascending.
    pub collision_times: Vec<f64>,
    /// Vertical speed just before each contact, m/s.
    pub impact_speeds: Vec<f64>,
    /// End of the rendered clip.
    pub duration_s: f64,
    gravity: f64,
    depth_m: f64,
    segments: Vec<Segment>,
}

impl Trajectory {
    /// Closed-form state at scene time `t`. Times before zero return the
    /// initial state.
    pub fn state_at(&self, t: f64) -> TrajectorySample {
        let idx = self.segments.partition_point(|s| s.t0 <= t).saturating_sub(1);
        let seg = &self.segments[idx];
        let dt = (t - seg.t0).max(0.0);
        let (y, vy) = if seg.falling {
            (
                seg.y0 + seg.vy0 * dt - 0.5 * self.gravity * dt * dt,
                seg.vy0 - self.gravity * dt,
            )
        } else {
            (seg.y0, 0.0)
        };
        TrajectorySample {
            t,
            pos: [seg.x0 + seg.vx * dt, y, self.depth_m],
            vel: [seg.vx, vy, 0.0],
        }
    }

    pub fn position_at(&self, t: f64) -> [f64; 3] {
        self.state_at(t).pos
    }

    /// Peak centre height between consecutive contacts, one per rebound.
    pub fn rebound_apex_heights(&self) -> Vec<f64> {
        self.segments
            .iter()
            .filter(|s| s.falling && s.vy0 > 0.0)
            .map(|s| s.y0 + s.vy0 * s.vy0 / (2.0 * self.gravity))
            .collect()
    }
}

/// Ballistic flight in the vertical plane with instantaneous floor contacts.
///
/// The object centre starts `drop_height_m + object_radius_m` above the floor
/// and hangs still until `release_time_s`. A contact scales the vertical
/// speed by the restitution; with zero restitution the object stops.
pub fn simulate_trajectory(cfg: &SceneConfig) -> Result<Trajectory, SceneError> {
    cfg.validate()?;
    let g = cfg.gravity;
    let r = cfg.object_radius_m;
    let e = cfg.restitution;
    let start = Segment {
        t0: 0.0,
        x0: 0.0,
        y0: cfg.drop_height_m + r,
        vx: 0.0,
        vy0: 0.0,
        falling: false,
    };
    let mut segments = vec![start];
    let mut collision_times = Vec::new();
    let mut impact_speeds = Vec::new();

    // Bounce schedule; the horizon is generous and trimmed below.
    let horizon = cfg.duration_s.unwrap_or(0.0) + cfg.release_time_s + 10.0;
    if cfg.drop_height_m > 0.0 {
        let mut seg = Segment {
            t0: cfg.release_time_s,
            x0: 0.0,
            y0: cfg.drop_height_m + r,
            vx: cfg.horizontal_velocity,
            vy0: 0.0,
            falling: true,
        };
        loop {
            // Solve y0 + vy0 t - g t^2 / 2 = r for the positive root.
            let h = seg.y0 - r;
            let dt = (seg.vy0 + (seg.vy0 * seg.vy0 + 2.0 * g * h).sqrt()) / g;
            let tc = seg.t0 + dt;
            segments.push(seg);
            if tc > horizon {
                break;
            }
            let v_in = g * dt - seg.vy0;
            collision_times.push(tc);
            impact_speeds.push(v_in);
            let x_c = seg.x0 + seg.vx * dt;
            let v_out = e * v_in;
            if v_out < REST_SPEED {
                segments.push(Segment {
                    t0: tc,
                    x0: x_c,
                    y0: r,
                    vx: 0.0,
                    vy0: 0.0,
                    falling: false,
                });
                break;
            }
            seg = Segment {
                t0: tc,
                x0: x_c,
                y0: r,
                vx: seg.vx,
                vy0: v_out,
                falling: true,
            };
        }
    }

    let duration_s = match cfg.duration_s {
        Some(d) => d,
        None => match collision_times.as_slice() {
            [] => cfg.release_time_s + 0.5,
            [t1] => t1 + 0.25,
            [t1, t2, ..] => t1 + (0.85 * (t2 - t1)).min(0.25),
        },
    };
    let end = duration_s + TAIL_S;
    collision_times.retain(|&t| t <= duration_s);
    impact_speeds.truncate(collision_times.len());
    segments.retain(|s| s.t0 <= end);

    let mut traj = Trajectory {
        samples: Vec::new(),
        collision_times,
        impact_speeds,
        duration_s,
        gravity: g,
        depth_m: cfg.depth_m,
        segments,
    };
    let dt = 1.0 / (10.0 * f64::from(cfg.fps));
    let n = (end / dt).ceil() as usize + 1;
    traj.samples = (0..n).map(|i| traj.state_at(i as f64 * dt)).collect();
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drop(h: f64, e: f64) -> SceneConfig {
        SceneConfig {
            drop_height_m: h,
            restitution: e,
            horizontal_velocity: 0.0,
            ..SceneConfig::default()
        }
    }

    /// Forward Euler at 1 us steps, stopping at the first floor contact.
    fn euler_first_contact(h: f64, g: f64) -> f64 {
        let dt = 1e-6;
        let (mut y, mut v, mut t) = (h, 0.0f64, 0.0f64);
        while y > 0.0 {
            y += v * dt;
            v -= g * dt;
            t += dt;
        }
        t
    }

    #[test]
    fn free_fall_matches_euler_oracle() {
        let traj = simulate_trajectory(&drop(1.0, 0.0)).unwrap();
        assert_eq!(traj.collision_times.len(), 1);
        let tc = traj.collision_times[0];
        assert!((tc - (2.0f64 / 9.8).sqrt()).abs() < 1e-12);
        assert!((tc - 0.4518).abs() < 1e-4);
        assert!((tc - euler_first_contact(1.0, 9.8)).abs() < 5e-6);
        // Resting after contact.
        let later = traj.state_at(tc + 0.1);
        assert_eq!(later.vel, [0.0, 0.0, 0.0]);
        assert!((later.pos[1] - 0.12).abs() < 1e-12);
    }

    #[test]
    fn apex_scales_with_restitution_squared() {
        let h = 0.7;
        let e = 0.6;
        let traj = simulate_trajectory(&SceneConfig {
            duration_s: Some(3.0),
            ..drop(h, e)
        })
        .unwrap();
        let apex = traj.rebound_apex_heights();
        assert!((apex[0] - 0.12 - e * e * h).abs() < 1e-9);
        for w in apex.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn elastic_contacts_equally_spaced() {
        let traj = simulate_trajectory(&SceneConfig {
            duration_s: Some(2.0),
            ..drop(0.5, 1.0)
        })
        .unwrap();
        let tc = &traj.collision_times;
        assert!(tc.len() >= 3);
        let gap = tc[1] - tc[0];
        for w in tc.windows(2).skip(1) {
            assert!(((w[1] - w[0]) - gap).abs() < 1e-9);
        }
    }

    #[test]
    fn samples_dense_and_increasing() {
        let cfg = drop(0.6, 0.5);
        let traj = simulate_trajectory(&cfg).unwrap();
        let dt_max = 1.0 / (10.0 * f64::from(cfg.fps)) + 1e-12;
        for w in traj.samples.windows(2) {
            assert!(w[1].t > w[0].t);
            assert!(w[1].t - w[0].t <= dt_max);
        }
        assert!(traj.samples.last().unwrap().t >= traj.duration_s);
    }

    #[test]
    fn negative_height_rejected() {
        assert!(matches!(
            simulate_trajectory(&drop(-0.1, 0.5)),
            Err(SceneError::Config(_))
        ));
    }

    #[test]
    fn release_delays_contact() {
        let a = simulate_trajectory(&drop(0.5, 0.0)).unwrap();
        let b = simulate_trajectory(&SceneConfig {
            release_time_s: 0.3,
            ..drop(0.5, 0.0)
        })
        .unwrap();
        assert!((b.collision_times[0] - a.collision_times[0] - 0.3).abs() < 1e-12);
        assert_eq!(b.state_at(0.2).pos, b.state_at(0.0).pos);
    }
}
