//! Lattice points of `Z^d` for `d <= 3`.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

/// A point of `Z^d`; coordinates beyond the active dimension are kept at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point(pub [i64; MAX_DIM]);

impl Point {
    pub const ORIGIN: Point = Point([0; MAX_DIM]);

    /// Builds a point from the first `coords.len()` coordinates.
    ///
    /// Panics if more than [`MAX_DIM`] coordinates are given.
    pub fn from_coords(coords: &[i64]) -> Self {
        assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Point(c)
    }

    pub fn splat(dim: usize, v: i64) -> Self {
        let mut c = [0; MAX_DIM];
        c[..dim].iter_mut().for_each(|x| *x = v);
        Point(c)
    }

    /// Uniform (sup) norm over the first `dim` coordinates.
    #[inline]
    pub fn sup_norm(&self, dim: usize) -> i64 {
        self.0[..dim].iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    /// Scales the first `dim` coordinates.
    pub fn scale(&self, dim: usize, k: i64) -> Self {
        let mut c = self.0;
        c[..dim].iter_mut().for_each(|x| *x *= k);
        Point(c)
    }

    pub fn coords(&self, dim: usize) -> &[i64] {
        &self.0[..dim]
    }

    /// All points of the uniform-norm ball `B_r(0)` in `Z^dim`, in row-major order.
    pub fn ball(dim: usize, r: i64) -> Vec<Point> {
        let side = 2 * r + 1;
        let count = (side as usize).pow(dim as u32);
        let mut out = Vec::with_capacity(count);
        for lin in 0..count {
            let mut rem = lin as i64;
            let mut c = [0; MAX_DIM];
            for axis in (0..dim).rev() {
                c[axis] = rem % side - r;
                rem /= side;
            }
            out.push(Point(c));
        }
        out
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(self, rhs: Point) -> Point {
        Point([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1], self.0[2] + rhs.0[2]])
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(self, rhs: Point) -> Point {
        Point([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_enumerates_box() {
        let b = Point::ball(2, 1);
        assert_eq!(b.len(), 9);
        assert_eq!(b[0], Point::from_coords(&[-1, -1]));
        assert_eq!(b[8], Point::from_coords(&[1, 1]));
        assert!(b.iter().all(|p| p.sup_norm(2) <= 1 && p.0[2] == 0));
    }

    #[test]
    fn sup_norm_ignores_inactive_axes() {
        let p = Point([3, -7, 100]);
        assert_eq!(p.sup_norm(2), 7);
        assert_eq!(p.sup_norm(1), 3);
    }
}
