use super::pyramid::{min_eigenvalue, Pyramid};
use super::{FlowError, FlowField, FlowParams};
use crate::image::{GrayImage, ImageF32};

/// Dense pyramidal Lucas-Kanade from `frame_a` to `frame_b`.
///
/// Every pixel solves the windowed system `G d = -b` with the structure tensor
/// `G` of `frame_a` and `b = sum(grad * grad_t)`, where `grad_t` is the
/// difference between the warped `frame_b` and `frame_a`. Window sums come
/// from integral images, so the cost per pixel does not depend on the window.
pub fn compute_flow(frame_a: &GrayImage, frame_b: &GrayImage, params: &FlowParams) -> Result<FlowField, FlowError> {
    params.validate()?;
    if !frame_a.same_size(frame_b) {
        return Err(FlowError::Input(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            frame_a.width(),
            frame_a.height(),
            frame_b.width(),
            frame_b.height()
        )));
    }
    let min_side = 2 * params.window_radius + 1;
    let pa = Pyramid::new(frame_a, params.pyramid_levels, min_side);
    let pb = Pyramid::new(frame_b, pa.depth(), min_side);
    let r = params.window_radius;

    let top = pa.depth() - 1;
    let (mut w, mut h) = (pa.levels[top].img.width, pa.levels[top].img.height);
    let mut u = vec![0f32; w * h];
    let mut v = vec![0f32; w * h];
    let mut valid = Vec::new();
    for l in (0..=top).rev() {
        let la = &pa.levels[l];
        let lb = &pb.levels[l].img;
        if l != top {
            (u, v) = upsample_flow(&u, &v, w, h, la.img.width, la.img.height);
            w = la.img.width;
            h = la.img.height;
        }
        let gxx = BoxSum::new(w, h, |i| f64::from(la.gx.data[i] * la.gx.data[i]));
        let gxy = BoxSum::new(w, h, |i| f64::from(la.gx.data[i] * la.gy.data[i]));
        let gyy = BoxSum::new(w, h, |i| f64::from(la.gy.data[i] * la.gy.data[i]));
        // Inverse window tensor per pixel; constant over the iterations.
        let inv: Vec<Option<[f64; 3]>> = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let (a, n) = gxx.mean(x, y, r);
                let (b, _) = gxy.mean(x, y, r);
                let (c, _) = gyy.mean(x, y, r);
                let det = a * c - b * b;
                (n > 0 && det.abs() >= 1e-18).then(|| [c / det, -b / det, a / det])
            })
            .collect();
        let mut grad_t = vec![0f32; w * h];
        for _ in 0..params.iterations_per_level {
            warp_difference(&la.img, lb, &u, &v, &mut grad_t);
            // Linearizing each neighbour's residual around the centre
            // estimate gives u = G^-1 (M - b) with M the tensor-weighted
            // current flow over the window. This stays stable where the flow
            // is not yet uniform across the window.
            let ex = BoxSum::new(w, h, |i| {
                let (gx, gy) = (la.gx.data[i], la.gy.data[i]);
                f64::from(gx * (gx * u[i] + gy * v[i] - grad_t[i]))
            });
            let ey = BoxSum::new(w, h, |i| {
                let (gx, gy) = (la.gx.data[i], la.gy.data[i]);
                f64::from(gy * (gx * u[i] + gy * v[i] - grad_t[i]))
            });
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let Some([ia, ib, ic]) = inv[i] else {
                        continue;
                    };
                    let mx = ex.mean(x, y, r).0;
                    let my = ey.mean(x, y, r).0;
                    u[i] = (ia * mx + ib * my) as f32;
                    v[i] = (ib * mx + ic * my) as f32;
                }
            }
        }
        if l == 0 {
            warp_difference(&la.img, lb, &u, &v, &mut grad_t);
            let res = BoxSum::new(w, h, |i| f64::from(grad_t[i] * grad_t[i]));
            let max_res2 = params.max_residual * params.max_residual;
            valid = vec![false; w * h];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let (a, _) = gxx.mean(x, y, r);
                    let (b, _) = gxy.mean(x, y, r);
                    let (c, _) = gyy.mean(x, y, r);
                    let (e2, _) = res.mean(x, y, r);
                    let tx = x as f32 + u[i];
                    let ty = y as f32 + v[i];
                    valid[i] = min_eigenvalue(a, b, c) >= params.min_eigenvalue
                        && e2 <= max_res2
                        && la.img.in_bounds(tx, ty)
                        && u[i].is_finite()
                        && v[i].is_finite();
                }
            }
        }
    }
    for i in 0..w * h {
        if !valid[i] {
            u[i] = 0.0;
            v[i] = 0.0;
        }
    }
    Ok(FlowField::from_parts(w, h, u, v, valid))
}

fn warp_difference(a: &ImageF32, b: &ImageF32, u: &[f32], v: &[f32], out: &mut [f32]) {
    let w = a.width;
    for y in 0..a.height {
        for x in 0..w {
            let i = y * w + x;
            out[i] = b.sample(x as f32 + u[i], y as f32 + v[i]) - a.data[i];
        }
    }
}

fn upsample_flow(u: &[f32], v: &[f32], w: usize, h: usize, nw: usize, nh: usize) -> (Vec<f32>, Vec<f32>) {
    let su = ImageF32 {
        width: w,
        height: h,
        data: u.to_vec(),
    };
    let sv = ImageF32 {
        width: w,
        height: h,
        data: v.to_vec(),
    };
    let mut ou = vec![0f32; nw * nh];
    let mut ov = vec![0f32; nw * nh];
    for y in 0..nh {
        for x in 0..nw {
            let sx = x as f32 * 0.5;
            let sy = y as f32 * 0.5;
            ou[y * nw + x] = 2.0 * su.sample(sx, sy);
            ov[y * nw + x] = 2.0 * sv.sample(sx, sy);
        }
    }
    (ou, ov)
}

/// Summed-area table for windowed means clipped at the image border.
struct BoxSum {
    w: usize,
    h: usize,
    s: Vec<f64>,
}

impl BoxSum {
    fn new(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Self {
        let sw = w + 1;
        let mut s = vec![0.0; sw * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                s[(y + 1) * sw + x + 1] = s[y * sw + x + 1] + row;
            }
        }
        Self { w, h, s }
    }

    #[inline]
    fn mean(&self, x: usize, y: usize, r: usize) -> (f64, usize) {
        let x0 = x.saturating_sub(r);
        let y0 = y.saturating_sub(r);
        let x1 = (x + r + 1).min(self.w);
        let y1 = (y + r + 1).min(self.h);
        let sw = self.w + 1;
        let sum = self.s[y1 * sw + x1] - self.s[y0 * sw + x1] - self.s[y1 * sw + x0] + self.s[y0 * sw + x0];
        let n = (x1 - x0) * (y1 - y0);
        (sum / n as f64, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optical_flow::test_pattern;

    #[test]
    fn identical_frames_zero_flow() {
        let img = test_pattern(64, 48, 0.0, 0.0);
        let f = compute_flow(&img, &img, &FlowParams::default()).unwrap();
        assert!(f.valid_count() > 0);
        assert!(f.du.iter().chain(&f.dv).all(|&d| d == 0.0));
    }

    #[test]
    fn textureless_frames_invalid() {
        let img = GrayImage::filled(40, 40, 90);
        let f = compute_flow(&img, &img, &FlowParams::default()).unwrap();
        assert_eq!(f.valid_count(), 0);
    }

    #[test]
    fn size_mismatch_rejected() {
        let a = GrayImage::new(10, 10);
        let b = GrayImage::new(11, 10);
        assert!(matches!(
            compute_flow(&a, &b, &FlowParams::default()),
            Err(FlowError::Input(_))
        ));
    }

    #[test]
    fn subpixel_shift_recovered() {
        let a = test_pattern(96, 80, 0.0, 0.0);
        let b = test_pattern(96, 80, 2.4, -1.3);
        let f = compute_flow(&a, &b, &FlowParams::default()).unwrap();
        let mut n = 0;
        for y in 16..64 {
            for x in 16..80 {
                let (du, dv, ok) = f.get(x, y);
                if ok {
                    n += 1;
                    assert!((du - 2.4).abs() < 0.15 && (dv + 1.3).abs() < 0.15, "{du} {dv}");
                }
            }
        }
        assert!(n > 2000);
    }
}
