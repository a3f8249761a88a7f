//! Row-major H×W grids for depth maps, validity masks and gradient maps.

use serde::{Deserialize, Serialize};

/// A dense H×W grid stored row-major. `Grid<f32>` carries depth in meters,
/// `Grid<bool>` carries validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

/// Per-pixel metric depth in meters.
pub type DepthMap = Grid<f32>;
/// Boolean validity companion of a [`DepthMap`].
pub type ValidMask = Grid<bool>;

impl<T: Copy> Grid<T> {
    pub fn filled(h: usize, w: usize, value: T) -> Self {
        Grid { h, w, data: vec![value; h * w] }
    }

    /// Builds a grid from row-major data. Panics if the length is not `h*w`;
    /// grids are always constructed from known-sized buffers.
    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), h * w, "grid data length {} != {}x{}", data.len(), h, w);
        Grid { h, w, data }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x));
            }
        }
        Grid { h, w, data }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.w + x] = value;
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Grid<U> {
        Grid { h: self.h, w: self.w, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn height(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.w
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.h == other.h && self.w == other.w
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Row-major `(y, x, value)` iteration.
    pub fn enumerate(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.w;
        self.data.iter().enumerate().map(move |(i, v)| (i / w, i % w, v))
    }
}

impl Grid<bool> {
    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let g = Grid::from_fn(2, 3, |y, x| (y * 10 + x) as f32);
        assert_eq!(g.get(0, 2), 2.0);
        assert_eq!(g.get(1, 0), 10.0);
        assert_eq!(g.data(), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    #[should_panic(expected = "grid data length")]
    fn length_mismatch_panics() {
        let _ = Grid::from_vec(2, 2, vec![1.0f32; 3]);
    }
}
