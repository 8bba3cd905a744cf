use super::pyramid::{min_eigenvalue, Pyramid};
use super::FlowParams;
use crate::image::GrayImage;

/// Iterations stop once the update is below this many pixels.
const CONVERGED_PX: f64 = 1e-4;

/// Flow of a single reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFlow {
    pub du: f64,
    pub dv: f64,
    pub valid: bool,
    /// RMS intensity difference over the window after convergence.
    pub residual: f64,
}

impl PointFlow {
    pub const INVALID: PointFlow = PointFlow {
        du: 0.0,
        dv: 0.0,
        valid: false,
        residual: f64::INFINITY,
    };
}

/// A frame prepared for repeated sparse flow queries.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub(crate) pyr: Pyramid,
}

impl PreparedFrame {
    pub fn new(img: &GrayImage, params: &FlowParams) -> Self {
        Self {
            pyr: Pyramid::new(img, params.pyramid_levels, 2 * params.window_radius + 1),
        }
    }
}

/// Per-point pyramidal Lucas-Kanade from `reference` to `target`.
///
/// `guess` seeds the finest-level displacement; each level refines the
/// residual motion around it, so large but well-predicted displacements
/// converge without relying on pyramid reach.
pub fn track_points(
    reference: &PreparedFrame,
    target: &PreparedFrame,
    points: &[(usize, usize)],
    guess: (f64, f64),
    params: &FlowParams,
) -> Vec<PointFlow> {
    points
        .iter()
        .map(|&p| track_point(reference, target, p, guess, params))
        .collect()
}

fn track_point(
    reference: &PreparedFrame,
    target: &PreparedFrame,
    p: (usize, usize),
    guess: (f64, f64),
    params: &FlowParams,
) -> PointFlow {
    let levels = reference.pyr.depth().min(target.pyr.depth());
    let r = params.window_radius as i64;
    let n_win = ((2 * r + 1) * (2 * r + 1)) as f64;
    let top = levels - 1;
    let mut g = (guess.0 / f64::from(1u32 << top), guess.1 / f64::from(1u32 << top));
    let mut tmpl = Vec::with_capacity(n_win as usize);
    for l in (0..levels).rev() {
        let la = &reference.pyr.levels[l];
        let lb = &target.pyr.levels[l].img;
        let scale = f64::from(1u32 << l);
        let px = p.0 as f64 / scale;
        let py = p.1 as f64 / scale;
        tmpl.clear();
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let x = (px + dx as f64) as f32;
                let y = (py + dy as f64) as f32;
                let ix = f64::from(la.gx.sample(x, y));
                let iy = f64::from(la.gy.sample(x, y));
                tmpl.push((dx as f64, dy as f64, f64::from(la.img.sample(x, y)), ix, iy));
                a += ix * ix;
                b += ix * iy;
                c += iy * iy;
            }
        }
        let det = a * c - b * b;
        let lambda = min_eigenvalue(a / n_win, b / n_win, c / n_win);
        let mut d = (0.0, 0.0);
        if det.abs() > 1e-18 && lambda > 0.0 {
            for _ in 0..params.iterations_per_level {
                let (mut ex, mut ey) = (0.0, 0.0);
                for &(dx, dy, t, ix, iy) in &tmpl {
                    let x = (px + dx + g.0 + d.0) as f32;
                    let y = (py + dy + g.1 + d.1) as f32;
                    let grad_t = f64::from(lb.sample(x, y)) - t;
                    ex += ix * grad_t;
                    ey += iy * grad_t;
                }
                let sx = -(c * ex - b * ey) / det;
                let sy = -(a * ey - b * ex) / det;
                d.0 += sx;
                d.1 += sy;
                if sx * sx + sy * sy < CONVERGED_PX * CONVERGED_PX {
                    break;
                }
            }
        }
        if l == 0 {
            let du = g.0 + d.0;
            let dv = g.1 + d.1;
            let mut e2 = 0.0;
            for &(dx, dy, t, _, _) in &tmpl {
                let diff = f64::from(lb.sample((px + dx + du) as f32, (py + dy + dv) as f32)) - t;
                e2 += diff * diff;
            }
            let residual = (e2 / n_win).sqrt();
            let valid = lambda >= params.min_eigenvalue
                && residual <= params.max_residual
                && du.is_finite()
                && dv.is_finite()
                && lb.in_bounds((px + du) as f32, (py + dv) as f32);
            return if valid {
                PointFlow {
                    du,
                    dv,
                    valid,
                    residual,
                }
            } else {
                PointFlow {
                    residual,
                    ..PointFlow::INVALID
                }
            };
        }
        g = (2.0 * (g.0 + d.0), 2.0 * (g.1 + d.1));
    }
    PointFlow::INVALID
}
