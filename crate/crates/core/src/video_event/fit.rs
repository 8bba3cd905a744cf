use serde::{Deserialize, Serialize};

use super::split::CollisionSplit;
use super::{VideoEventError, DEFAULT_K};
use crate::optical_flow::FlowField;
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitParams {
    pub k: usize,
    pub model: FitModel,
    /// Pixels whose RMS fit residual exceeds this are dropped.
    pub max_residual_px: f64,
    /// An axis contributes an intersection only if its pre/post slopes differ
    /// by more than this, in px per frame.
    pub min_slope_diff_px: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            model: FitModel::Linear,
            max_residual_px: 1.0,
            min_slope_diff_px: 0.5,
        }
    }
}

/// `x(t) = intercept + slope * t` per axis, with `t` in seconds. Quadratic
/// fits keep their curvature in `curvature_*`, zero for lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFits {
    pub slope_x: f64,
    pub slope_y: f64,
    pub intercept_x: f64,
    pub intercept_y: f64,
    #[serde(default)]
    pub curvature_x: f64,
    #[serde(default)]
    pub curvature_y: f64,
}

impl AxisFits {
    fn eval(&self, t: f64) -> (f64, f64) {
        (
            self.intercept_x + t * (self.slope_x + t * self.curvature_x),
            self.intercept_y + t * (self.slope_y + t * self.curvature_y),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelTrajectoryFit {
    pub pixel: (usize, usize),
    pub pre_fit: AxisFits,
    pub post_fit: AxisFits,
    /// NaN when no axis has distinct pre and post slopes.
    pub intersection_time: f64,
    /// RMS distance of the samples from their fitted curves, in px.
    pub residual: f64,
}

/// Polynomial least squares of degree 1 or 2. Returns coefficients in
/// ascending order and the sum of squared residuals.
pub(crate) fn polyfit(ts: &[f64], ys: &[f64], degree: usize) -> Option<(Vec<f64>, f64)> {
    let m = degree + 1;
    if ts.len() < m {
        return None;
    }
    // Normal equations on centred times keep the system well conditioned.
    let t0 = ts.iter().sum::<f64>() / ts.len() as f64;
    let mut a = [[0.0f64; 4]; 3];
    for (&t, &y) in ts.iter().zip(ys) {
        let u = t - t0;
        let pows = [1.0, u, u * u];
        for r in 0..m {
            for c in 0..m {
                a[r][c] += pows[r] * pows[c];
            }
            a[r][m] += pows[r] * y;
        }
    }
    let coef = solve(&mut a, m)?;
    // Shift back to absolute time.
    let shifted = match degree {
        1 => vec![coef[0] - coef[1] * t0, coef[1]],
        _ => vec![
            coef[0] - coef[1] * t0 + coef[2] * t0 * t0,
            coef[1] - 2.0 * coef[2] * t0,
            coef[2],
        ],
    };
    let sse = ts
        .iter()
        .zip(ys)
        .map(|(&t, &y)| {
            let u = t - t0;
            let f = coef[0] + u * (coef[1] + if m > 2 { u * coef[2] } else { 0.0 });
            (y - f).powi(2)
        })
        .sum();
    Some((shifted, sse))
}

fn solve(a: &mut [[f64; 4]; 3], m: usize) -> Option<Vec<f64>> {
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..m).map(|r| a[r][m] / a[r][r]).collect())
}

fn fit_side(ts: &[f64], xs: &[f64], ys: &[f64], degree: usize) -> Option<(AxisFits, f64)> {
    let (cx, ex) = polyfit(ts, xs, degree)?;
    let (cy, ey) = polyfit(ts, ys, degree)?;
    let fits = AxisFits {
        intercept_x: cx[0],
        slope_x: cx[1],
        curvature_x: cx.get(2).copied().unwrap_or(0.0),
        intercept_y: cy[0],
        slope_y: cy[1],
        curvature_y: cy.get(2).copied().unwrap_or(0.0),
    };
    Some((fits, ex + ey))
}

/// Time where two per-axis curves cross, if the slopes at the contact region
/// differ enough. Returns the crossing nearest `t_ref` within `range`.
fn axis_crossing(
    pre: (f64, f64, f64),
    post: (f64, f64, f64),
    t_ref: f64,
    min_slope_diff: f64,
    range: (f64, f64),
) -> Option<f64> {
    let slope_at = |c: (f64, f64, f64), t: f64| c.1 + 2.0 * c.2 * t;
    let (a0, a1, a2) = (post.0 - pre.0, post.1 - pre.1, post.2 - pre.2);
    let roots: Vec<f64> = if a2 == 0.0 {
        if a1 == 0.0 {
            return None;
        }
        vec![-a0 / a1]
    } else {
        let disc = a1 * a1 - 4.0 * a2 * a0;
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (a1 + a1.signum() * disc.sqrt());
        let mut r = vec![q / a2];
        if q != 0.0 {
            r.push(a0 / q);
        }
        r
    };
    roots
        .into_iter()
        .filter(|&t| t.is_finite() && t >= range.0 && t <= range.1)
        .filter(|&t| (slope_at(pre, t) - slope_at(post, t)).abs() > min_slope_diff)
        .min_by(|a, b| (a - t_ref).abs().total_cmp(&(b - t_ref).abs()))
}

/// Per-pixel pre/post displacement fits from anchor flows.
///
/// `anchor_flows[j]` holds the flow from the anchor frame into frame `j`, and
/// `timestamps[j]` its time; split indices refer to the same positions. The
/// pixels are those valid in the anchor frame's own field.
pub fn fit_pixel_trajectories(
    anchor_flows: &[FlowField],
    split: &CollisionSplit,
    timestamps: &[f64],
    params: &FitParams,
) -> Result<Vec<PixelTrajectoryFit>, VideoEventError> {
    if anchor_flows.len() != timestamps.len() {
        return Err(VideoEventError::Input(
            "one timestamp per flow field is required".into(),
        ));
    }
    let in_range = |i: &usize| *i < anchor_flows.len();
    if !split.pre_set.iter().chain(&split.post_set).all(in_range) || split.e >= anchor_flows.len() {
        return Err(VideoEventError::Input("split indices exceed the flow list".into()));
    }
    let k = params.k.max(2);
    let pre: Vec<usize> = split.pre_set.iter().rev().take(k).rev().copied().collect();
    let post: Vec<usize> = split.post_set.iter().take(k).copied().collect();
    let anchor = &anchor_flows[split.e];
    let t_e = timestamps[split.e];
    let t_s = timestamps[split.s.min(timestamps.len() - 1)];
    let samples = |set: &[usize], i: usize| -> Vec<(f64, f64, f64)> {
        set.iter()
            .filter(|&&j| anchor_flows[j].valid[i])
            .map(|&j| {
                let f = &anchor_flows[j];
                (timestamps[j], f64::from(f.du[i]), f64::from(f.dv[i]))
            })
            .collect()
    };
    let fits: Vec<PixelTrajectoryFit> = anchor
        .valid
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .filter_map(|(i, _)| {
            let pixel = (i % anchor.width, i / anchor.width);
            fit_pixel(pixel, &samples(&pre, i), &samples(&post, i), (t_e, t_s), params)
        })
        .collect();
    if fits.is_empty() {
        return Err(VideoEventError::Estimation("no pixel produced a usable fit".into()));
    }
    Ok(fits)
}

/// Fits one pixel from `(t, dx, dy)` samples on each side of the impact.
/// `contact` holds the times of the last pre- and first post-collision
/// frames. Returns `None` when a side has too few samples or the residual
/// exceeds the limit.
pub fn fit_pixel(
    pixel: (usize, usize),
    pre: &[(f64, f64, f64)],
    post: &[(f64, f64, f64)],
    contact: (f64, f64),
    params: &FitParams,
) -> Option<PixelTrajectoryFit> {
    let degree = match params.model {
        FitModel::Linear => 1,
        FitModel::Quadratic => 2,
    };
    let (t_e, t_s) = contact;
    let dt = if t_s > t_e { t_s - t_e } else { 1.0 };
    let side = |s: &[(f64, f64, f64)]| {
        if s.len() < degree + 1 {
            return None;
        }
        let ts: Vec<f64> = s.iter().map(|p| p.0 - t_e).collect();
        let xs: Vec<f64> = s.iter().map(|p| p.1).collect();
        let ys: Vec<f64> = s.iter().map(|p| p.2).collect();
        fit_side(&ts, &xs, &ys, degree)
    };
    let (pre_fit, e_pre) = side(pre)?;
    let (post_fit, e_post) = side(post)?;
    let residual = ((e_pre + e_post) / (2 * (pre.len() + post.len())) as f64).sqrt();
    if residual > params.max_residual_px {
        return None;
    }
    let rel = (-dt, t_s - t_e + dt);
    let t_mid = 0.5 * (t_s - t_e);
    let min_diff = params.min_slope_diff_px / dt;
    let axes = [
        (
            (pre_fit.intercept_x, pre_fit.slope_x, pre_fit.curvature_x),
            (post_fit.intercept_x, post_fit.slope_x, post_fit.curvature_x),
        ),
        (
            (pre_fit.intercept_y, pre_fit.slope_y, pre_fit.curvature_y),
            (post_fit.intercept_y, post_fit.slope_y, post_fit.curvature_y),
        ),
    ];
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, q) in axes {
        if let Some(t) = axis_crossing(p, q, t_mid, min_diff, rel) {
            // Weighted by slope contrast over fit residual.
            let w = ((p.1 - q.1) * dt).abs() / (residual + 1e-3);
            num += w * t;
            den += w;
        }
    }
    Some(PixelTrajectoryFit {
        pixel,
        pre_fit: shift_fits(pre_fit, t_e),
        post_fit: shift_fits(post_fit, t_e),
        intersection_time: if den > 0.0 { t_e + num / den } else { f64::NAN },
        residual,
    })
}

/// Re-expresses fits in `t - t_e` as fits in absolute time.
fn shift_fits(f: AxisFits, t_e: f64) -> AxisFits {
    let shift = |c0: f64, c1: f64, c2: f64| (c0 - c1 * t_e + c2 * t_e * t_e, c1 - 2.0 * c2 * t_e, c2);
    let (ix, sx, cx) = shift(f.intercept_x, f.slope_x, f.curvature_x);
    let (iy, sy, cy) = shift(f.intercept_y, f.slope_y, f.curvature_y);
    AxisFits {
        slope_x: sx,
        slope_y: sy,
        intercept_x: ix,
        intercept_y: iy,
        curvature_x: cx,
        curvature_y: cy,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionTimeEstimate {
    pub t_video: f64,
    pub per_pixel_times: Vec<f64>,
    pub inlier_count: usize,
    pub loss: f64,
}

/// Sum of absolute deviations of `times` from `t`.
pub fn intersection_loss(times: &[f64], t: f64) -> f64 {
    times.iter().map(|&p| (t - p).abs()).sum()
}

/// The L1-optimal collision time over the finite pixel intersections.
pub fn estimate_collision_time(fits: &[PixelTrajectoryFit]) -> Result<CollisionTimeEstimate, VideoEventError> {
    let times: Vec<f64> = fits
        .iter()
        .map(|f| f.intersection_time)
        .filter(|t| t.is_finite())
        .collect();
    estimate_from_times(times)
}

pub fn estimate_from_times(times: Vec<f64>) -> Result<CollisionTimeEstimate, VideoEventError> {
    let t_video =
        median(&times).ok_or_else(|| VideoEventError::Estimation("no finite pixel intersection times".into()))?;
    Ok(CollisionTimeEstimate {
        t_video,
        loss: intersection_loss(&times, t_video),
        inlier_count: times.len(),
        per_pixel_times: times,
    })
}

impl PixelTrajectoryFit {
    /// Fitted displacement of the pixel at time `t` before and after impact.
    pub fn predict(&self, t: f64) -> ((f64, f64), (f64, f64)) {
        (self.pre_fit.eval(t), self.post_fit.eval(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(ts: &[f64], f: impl Fn(f64) -> (f64, f64)) -> Vec<FlowField> {
        ts.iter()
            .map(|&t| {
                let mut ff = FlowField::zeros(2, 1);
                let (x, y) = f(t);
                ff.set(0, 0, x as f32, y as f32, true);
                ff.set(1, 0, x as f32, y as f32, true);
                ff
            })
            .collect()
    }

    #[test]
    fn ols_on_exact_line() {
        let ts = [0.1, 0.2, 0.3];
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (t - 0.05)).collect();
        let (c, sse) = polyfit(&ts, &ys, 1).unwrap();
        assert!((c[1] - 2.0).abs() < 1e-9);
        assert!((c[0] + 0.1).abs() < 1e-9);
        assert!(sse < 1e-20);
    }

    #[test]
    fn quadratic_fit_recovers_parabola() {
        let ts = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = ts.iter().map(|t| 0.5 - t + 0.25 * t * t).collect();
        let (c, _) = polyfit(&ts, &ys, 2).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] + 1.0).abs() < 1e-9 && (c[2] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn crossing_lines_meet_at_one() {
        // Pre: 2t, post: -t + 3.
        let ts = [0.7, 0.8, 0.9, 1.1, 1.2, 1.3];
        let flows = fields(&ts, |t| if t < 1.0 { (2.0 * t, 0.0) } else { (-t + 3.0, 0.0) });
        let split = CollisionSplit::at(2, 6, 3);
        let params = FitParams {
            min_slope_diff_px: 0.01,
            ..FitParams::default()
        };
        let fits = fit_pixel_trajectories(&flows, &split, &ts, &params).unwrap();
        assert_eq!(fits.len(), 2);
        assert!((fits[0].intersection_time - 1.0).abs() < 1e-6);
        assert!((fits[0].pre_fit.slope_x - 2.0).abs() < 1e-4);
        assert!((fits[0].post_fit.intercept_x - 3.0).abs() < 1e-4);
    }

    #[test]
    fn parallel_motion_has_no_intersection() {
        let ts = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let flows = fields(&ts, |t| (3.0 * t, -t));
        let split = CollisionSplit::at(2, 6, 3);
        let fits = fit_pixel_trajectories(&flows, &split, &ts, &FitParams::default()).unwrap();
        assert!(fits.iter().all(|f| f.intersection_time.is_nan()));
        assert!(estimate_collision_time(&fits).is_err());
    }

    #[test]
    fn noisy_pixels_dropped() {
        let ts = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let mut flows = fields(&ts, |t| (if t < 0.25 { 20.0 * t } else { 10.0 - 20.0 * t }, 0.0));
        for (j, f) in flows.iter_mut().enumerate() {
            let jitter = if j % 2 == 0 { 5.0 } else { -5.0 };
            f.du[1] += jitter;
        }
        let split = CollisionSplit::at(2, 6, 3);
        let fits = fit_pixel_trajectories(&flows, &split, &ts, &FitParams::default()).unwrap();
        assert_eq!(fits.len(), 1);
        assert_eq!(fits[0].pixel, (0, 0));
        assert!((fits[0].intersection_time - 0.25).abs() < 1e-6);
    }

    #[test]
    fn median_examples() {
        let e = estimate_from_times(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(e.t_video, 1.0);
        assert_eq!(e.loss, 0.0);
        let e = estimate_from_times(vec![0.9, 1.0, 1.3]).unwrap();
        assert_eq!(e.t_video, 1.0);
        assert!((e.loss - 0.4).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn exact_kink_is_recovered(
            phase in 0.02f64..0.98,
            x0 in -20.0f64..20.0,
            y0 in -20.0f64..20.0,
            vx in -3.0f64..3.0,
            vy_in in 2.0f64..15.0,
            restitution in 0.3f64..0.9,
        ) {
            let dt = 1.0 / 240.0;
            let tc = (2.0 + phase) * dt;
            let vy_out = -restitution * vy_in;
            let at = |t: f64| {
                let vy = if t < tc { vy_in } else { vy_out };
                (x0 + vx * (t - tc) / dt, y0 + vy * (t - tc) / dt)
            };
            let pre: Vec<_> = (0..3).map(|i| { let t = i as f64 * dt; let (x, y) = at(t); (t, x, y) }).collect();
            let post: Vec<_> = (3..6).map(|i| { let t = i as f64 * dt; let (x, y) = at(t); (t, x, y) }).collect();
            let fit = fit_pixel((0, 0), &pre, &post, (2.0 * dt, 3.0 * dt), &FitParams::default()).unwrap();
            proptest::prop_assert!((fit.intersection_time - tc).abs() < 1e-9 * dt.max(1.0));
        }
    }
}
