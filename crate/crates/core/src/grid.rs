use serde::{Deserialize, Serialize};

/// Dense row-major 2D buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }
}

impl<T> Grid<T> {
    /// Wraps `data`; returns `None` when its length is not `width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == width * height).then_some(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<&T> {
        if x < self.width && y < self.height {
            self.data.get(y * self.width + x)
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let w = self.width;
        self.data[y * w + x] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Grid<T> {
    type Output = T;

    #[inline]
    fn index(&self, (x, y): (usize, usize)) -> &T {
        debug_assert!(x < self.width && y < self.height);
        &self.data[y * self.width + x]
    }
}

/// Integer corners and weights of a bilinear footprint at continuous
/// coordinate `(u, v)`, where sample `(x, y)` sits at coordinate `(x, y)`.
///
/// Coordinates within `1e-9` of an integer are snapped so that exact grid
/// positions read back bit-exactly. Corners whose weight is zero are reported
/// but flagged as non-contributing. Returns `None` when a contributing corner
/// falls outside `[0, width) x [0, height)`.
pub(crate) fn bilinear_footprint(u: f64, v: f64, width: usize, height: usize) -> Option<[(usize, usize, f64); 4]> {
    if !u.is_finite() || !v.is_finite() {
        return None;
    }
    let snap = |c: f64| {
        let r = c.round();
        if (c - r).abs() < 1e-9 {
            r
        } else {
            c
        }
    };
    let (u, v) = (snap(u), snap(v));
    let (x0, y0) = (u.floor(), v.floor());
    let (tx, ty) = (u - x0, v - y0);
    if x0 < 0.0 || y0 < 0.0 {
        return None;
    }
    let (x0, y0) = (x0 as usize, y0 as usize);
    let corners = [
        (x0, y0, (1.0 - tx) * (1.0 - ty)),
        (x0 + 1, y0, tx * (1.0 - ty)),
        (x0, y0 + 1, (1.0 - tx) * ty),
        (x0 + 1, y0 + 1, tx * ty),
    ];
    for &(x, y, w) in &corners {
        if w != 0.0 && (x >= width || y >= height) {
            return None;
        }
    }
    Some(corners)
}

/// Bilinear sample that treats a contributing non-finite value as invalid.
pub fn sample_bilinear(grid: &Grid<f32>, u: f64, v: f64) -> Option<f64> {
    let corners = bilinear_footprint(u, v, grid.width(), grid.height())?;
    let mut acc = 0.0;
    for (x, y, w) in corners {
        if w == 0.0 {
            continue;
        }
        let s = grid[(x, y)] as f64;
        if !s.is_finite() {
            return None;
        }
        acc += w * s;
    }
    Some(acc)
}
