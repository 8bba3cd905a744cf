use crate::image::{GrayImage, ImageF32};

/// Gaussian image pyramid with precomputed spatial gradients per level.
#[derive(Debug, Clone)]
pub(crate) struct Pyramid {
    pub levels: Vec<Level>,
}

#[derive(Debug, Clone)]
pub(crate) struct Level {
    pub img: ImageF32,
    pub gx: ImageF32,
    pub gy: ImageF32,
}

impl Pyramid {
    /// Builds up to `levels` levels, stopping early once a level would drop
    /// below `min_side` pixels.
    pub fn new(img: &GrayImage, levels: usize, min_side: usize) -> Self {
        let mut out = Vec::with_capacity(levels);
        let mut cur = img.to_f32();
        for l in 0..levels.max(1) {
            if l > 0 {
                let next = downsample(&cur);
                if next.width < min_side || next.height < min_side {
                    break;
                }
                cur = next;
            }
            let (gx, gy) = gradients(&cur);
            out.push(Level {
                img: cur.clone(),
                gx,
                gy,
            });
        }
        Self { levels: out }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// 5-tap binomial blur followed by 2x decimation.
fn downsample(src: &ImageF32) -> ImageF32 {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (src.width, src.height);
    let mut tmp = ImageF32::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in K.iter().enumerate() {
                let sx = (x as i64 + k as i64 - 2).clamp(0, w as i64 - 1) as usize;
                acc += kv * src.at(sx, y);
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = ImageF32::zeros(nw, nh);
    for y in 0..nh {
        for x in 0..nw {
            let mut acc = 0.0;
            for (k, &kv) in K.iter().enumerate() {
                let sy = (2 * y as i64 + k as i64 - 2).clamp(0, h as i64 - 1) as usize;
                acc += kv * tmp.at(2 * x, sy);
            }
            out.data[y * nw + x] = acc;
        }
    }
    out
}

/// Central differences, one-sided at the border.
fn gradients(img: &ImageF32) -> (ImageF32, ImageF32) {
    let (w, h) = (img.width, img.height);
    let mut gx = ImageF32::zeros(w, h);
    let mut gy = ImageF32::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(h - 1);
            gx.data[y * w + x] = (img.at(xr, y) - img.at(xl, y)) / (xr - xl).max(1) as f32;
            gy.data[y * w + x] = (img.at(x, yd) - img.at(x, yu)) / (yd - yu).max(1) as f32;
        }
    }
    (gx, gy)
}

/// Smaller eigenvalue of the symmetric 2x2 matrix [[a, b], [b, c]].
#[inline]
pub(crate) fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let tr = 0.5 * (a + c);
    let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    tr - d
}
