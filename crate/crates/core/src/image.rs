//! Grayscale frames, boolean pixel masks and the float image used internally
//! by the flow solvers.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// An 8-bit grayscale image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Wraps an existing buffer. Returns `None` if the length does not match.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height).then_some(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn same_size(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// The `w` x `h` block starting at `(x0, y0)`; must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop outside image");
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Translates the image content by an integer offset, filling uncovered
    /// pixels with `fill`.
    pub fn translated(&self, dx: i64, dy: i64, fill: u8) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            let sx = x as i64 - dx;
            let sy = y as i64 - dy;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                self.get(sx as usize, sy as usize)
            } else {
                fill
            }
        })
    }

    pub(crate) fn to_f32(&self) -> ImageF32 {
        ImageF32 {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f32::from(v) / 255.0).collect(),
        }
    }
}

/// A per-pixel boolean mask with the same layout as [`GrayImage`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<bool>) -> Option<Self> {
        (data.len() == width * height).then_some(Self { width, height, data })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_raw(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Coordinates of the set pixels in row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    /// Mean pixel coordinate, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.pixels() {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        }
    }

    /// Intersection over union; two empty masks count as identical.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.and(other).count();
        let union = self.or(other).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Shifts the mask by an integer offset; pixels leaving the frame are dropped.
    pub fn shifted(&self, dx: i64, dy: i64) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        for (x, y) in self.pixels() {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                out.set(nx as usize, ny as usize, true);
            }
        }
        out
    }

    /// Erosion with a square structuring element of the given radius.
    /// Pixels closer than `radius` to the image border are cleared.
    pub fn eroded(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let integral = self.integral();
        let w = self.width as i64;
        let h = self.height as i64;
        let full = (2 * r + 1) * (2 * r + 1);
        Mask::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            if x - r < 0 || y - r < 0 || x + r >= w || y + r >= h {
                return false;
            }
            box_count(&integral, self.width, x - r, y - r, x + r, y + r) == full
        })
    }

    /// Dilation with a square structuring element of the given radius.
    pub fn dilated(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let integral = self.integral();
        let w = self.width as i64;
        let h = self.height as i64;
        Mask::from_fn(self.width, self.height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            let x0 = (x - r).max(0);
            let y0 = (y - r).max(0);
            let x1 = (x + r).min(w - 1);
            let y1 = (y + r).min(h - 1);
            box_count(&integral, self.width, x0, y0, x1, y1) > 0
        })
    }

    /// 8-connected components, largest first. Ties keep scan order.
    pub fn components(&self) -> Vec<Mask> {
        let mut label = vec![usize::MAX; self.data.len()];
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.data.len() {
            if !self.data[start] || label[start] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = Vec::new();
            label[start] = id;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                members.push(i);
                let x = (i % self.width) as i64;
                let y = (i / self.width) as i64;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let nx = x + dx;
                        let ny = y + dy;
                        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                            continue;
                        }
                        let j = ny as usize * self.width + nx as usize;
                        if self.data[j] && label[j] == usize::MAX {
                            label[j] = id;
                            queue.push_back(j);
                        }
                    }
                }
            }
            comps.push(members);
        }
        let mut masks: Vec<(usize, Mask)> = comps
            .into_iter()
            .enumerate()
            .map(|(id, members)| {
                let mut m = Mask::new(self.width, self.height);
                for i in members {
                    m.data[i] = true;
                }
                (id, m)
            })
            .collect();
        masks.sort_by(|a, b| b.1.count().cmp(&a.1.count()).then(a.0.cmp(&b.0)));
        masks.into_iter().map(|(_, m)| m).collect()
    }

    /// The largest 8-connected component (empty mask if none).
    pub fn largest_component(&self) -> Mask {
        self.components()
            .into_iter()
            .next()
            .unwrap_or_else(|| Mask::new(self.width, self.height))
    }

    fn integral(&self) -> Vec<u32> {
        let w = self.width + 1;
        let mut s = vec![0u32; w * (self.height + 1)];
        for y in 0..self.height {
            let mut row = 0u32;
            for x in 0..self.width {
                row += u32::from(self.data[y * self.width + x]);
                s[(y + 1) * w + x + 1] = s[y * w + x + 1] + row;
            }
        }
        s
    }
}

fn box_count(integral: &[u32], width: usize, x0: i64, y0: i64, x1: i64, y1: i64) -> i64 {
    let w = width + 1;
    let at = |x: i64, y: i64| integral[y as usize * w + x as usize] as i64;
    at(x1 + 1, y1 + 1) - at(x0, y1 + 1) - at(x1 + 1, y0) + at(x0, y0)
}

/// Float image with intensities in [0, 1].
#[derive(Debug, Clone)]
pub(crate) struct ImageF32 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageF32 {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with coordinates clamped to the image.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let maxx = (self.width - 1) as f32;
        let maxy = (self.height - 1) as f32;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let ax = x - x0 as f32;
        let ay = y - y0 as f32;
        let w = self.width;
        let d = &self.data;
        let top = d[y0 * w + x0] * (1.0 - ax) + d[y0 * w + x1] * ax;
        let bot = d[y1 * w + x0] * (1.0 - ax) + d[y1 * w + x1] * ax;
        top * (1.0 - ay) + bot * ay
    }

    #[inline]
    pub fn in_bounds(&self, x: f32, y: f32) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f32 && y <= (self.height - 1) as f32
    }
}
