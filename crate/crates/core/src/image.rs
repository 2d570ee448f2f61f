//! Dense row-major rasters used for images, masks, depth frames and labels.

use std::collections::VecDeque;

/// Linear RGB triple in `[0, 1]`.
pub type Rgb = [f64; 3];

/// A row-major `width × height` grid of values.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type RgbImage = Grid<Rgb>;
pub type Mask = Grid<bool>;
/// Depth in meters; `NaN` marks invalid pixels.
pub type DepthImage = Grid<f64>;

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Value at signed coordinates, `None` outside the grid.
    #[inline]
    pub fn checked(&self, x: i64, y: i64) -> Option<&T> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.get(x as usize, y as usize))
        }
    }

    /// Nearest-pixel lookup for a continuous coordinate (pixel centers are integers).
    #[inline]
    pub fn nearest(&self, u: f64, v: f64) -> Option<&T> {
        if !u.is_finite() || !v.is_finite() {
            return None;
        }
        self.checked(u.round() as i64, v.round() as i64)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Iterates `(x, y, &value)` in row-major order.
    pub fn iter_xy(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| (i % w, i / w, v))
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.count() + other.count() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Pixel coordinates of set pixels, row-major.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        self.iter_xy()
            .filter(|(_, _, &b)| b)
            .map(|(x, y, _)| (x, y))
            .collect()
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of set pixels.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (x, y, &b) in self.iter_xy() {
            if b {
                bb = Some(match bb {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
        bb
    }

    /// 4-neighbourhood erosion by `radius` pixels; pixels outside the frame count as unset.
    pub fn eroded(&self, radius: usize) -> Mask {
        let mut cur = self.clone();
        for _ in 0..radius {
            let prev = cur.clone();
            for y in 0..self.height {
                for x in 0..self.width {
                    if !*prev.get(x, y) {
                        continue;
                    }
                    let (xi, yi) = (x as i64, y as i64);
                    let keep = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                        .iter()
                        .all(|(dx, dy)| prev.checked(xi + dx, yi + dy).copied().unwrap_or(false));
                    if !keep {
                        cur.set(x, y, false);
                    }
                }
            }
        }
        cur
    }

    /// 8-neighbourhood dilation by `radius` pixels.
    pub fn dilated(&self, radius: usize) -> Mask {
        let mut cur = self.clone();
        for _ in 0..radius {
            let prev = cur.clone();
            for y in 0..self.height {
                for x in 0..self.width {
                    if *prev.get(x, y) {
                        continue;
                    }
                    let (xi, yi) = (x as i64, y as i64);
                    let hit = (-1..=1).any(|dy| {
                        (-1..=1).any(|dx| prev.checked(xi + dx, yi + dy).copied().unwrap_or(false))
                    });
                    if hit {
                        cur.set(x, y, true);
                    }
                }
            }
        }
        cur
    }

    /// 4-connected components; each entry lists pixel coordinates in discovery order.
    pub fn connected_components(&self) -> Vec<Vec<(usize, usize)>> {
        let mut seen = Grid::new(self.width, self.height, false);
        let mut comps = Vec::new();
        let mut queue = VecDeque::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !*self.get(x, y) || *seen.get(x, y) {
                    continue;
                }
                let mut comp = Vec::new();
                seen.set(x, y, true);
                queue.push_back((x, y));
                while let Some((cx, cy)) = queue.pop_front() {
                    comp.push((cx, cy));
                    let (xi, yi) = (cx as i64, cy as i64);
                    for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                        let (nx, ny) = (xi + dx, yi + dy);
                        if self.checked(nx, ny).copied().unwrap_or(false)
                            && !*seen.get(nx as usize, ny as usize)
                        {
                            seen.set(nx as usize, ny as usize, true);
                            queue.push_back((nx as usize, ny as usize));
                        }
                    }
                }
                comps.push(comp);
            }
        }
        comps
    }

    /// City-block distance of every set pixel to the nearest unset pixel
    /// (or frame border); zero outside the mask.
    pub fn distance_transform(&self) -> Grid<u32> {
        let (w, h) = (self.width, self.height);
        let inf = (w + h) as u32 + 1;
        let mut d = self.map(|&b| if b { inf } else { 0 });
        for y in 0..h {
            for x in 0..w {
                if *d.get(x, y) == 0 {
                    continue;
                }
                let up = if y > 0 { *d.get(x, y - 1) } else { 0 };
                let left = if x > 0 { *d.get(x - 1, y) } else { 0 };
                let v = (*d.get(x, y)).min(up + 1).min(left + 1);
                d.set(x, y, v);
            }
        }
        for y in (0..h).rev() {
            for x in (0..w).rev() {
                if *d.get(x, y) == 0 {
                    continue;
                }
                let down = if y + 1 < h { *d.get(x, y + 1) } else { 0 };
                let right = if x + 1 < w { *d.get(x + 1, y) } else { 0 };
                let v = (*d.get(x, y)).min(down + 1).min(right + 1);
                d.set(x, y, v);
            }
        }
        d
    }
}

/// Union of a set of instance masks.
pub fn union_mask(masks: &[Mask], width: usize, height: usize) -> Mask {
    let mut out = Mask::new(width, height, false);
    for m in masks {
        out.union_with(m);
    }
    out
}
