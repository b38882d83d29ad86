//! Uniform Cartesian sampling of the cube `[-r, r]^n`, fields on it, and
//! central finite differences.
//!
//! Nodes are stored row-major: axis 0 varies slowest. Every field carries a
//! validity mask; operations that need neighbours (stencils, convolution)
//! shrink the mask instead of using one-sided boundary formulas.

mod field;
mod interp;
mod jet;
mod serial;

pub use field::{Field, FieldKind, MetricField, ScalarField};
pub use interp::interpolate;
pub use jet::{differentiate, multi_indices, JetField};
pub use serial::{read_metric_field, read_scalar_field, write_field};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    n: usize,
    r: f64,
    m: usize,
    h: f64,
    len: usize,
}

impl Lattice {
    pub fn new(n: usize, r: f64, m: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidLattice(format!("dimension {n} < 2")));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidLattice(format!(
                "radius {r} must be positive"
            )));
        }
        if m < 5 {
            return Err(Error::InvalidLattice(format!(
                "{m} points per axis, need at least 5"
            )));
        }
        if m % 2 == 0 {
            return Err(Error::InvalidLattice(format!(
                "{m} points per axis is even; the origin must be a node"
            )));
        }
        let len = u32::try_from(n)
            .ok()
            .and_then(|e| m.checked_pow(e))
            .filter(|&l| l <= 1 << 31)
            .ok_or_else(|| Error::InvalidLattice(format!("{m}^{n} nodes is too many")))?;
        Ok(Self {
            n,
            r,
            m,
            h: 2.0 * r / (m - 1) as f64,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Coordinate of the k-th node along any axis; exact at both ends and at 0.
    pub fn coord(&self, k: usize) -> f64 {
        let half = (self.m - 1) as f64;
        self.r * ((2.0 * k as f64 - half) / half)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.n - 1 - axis) as u32)
    }

    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % self.m
    }

    pub fn multi_index(&self, node: usize, out: &mut [usize]) {
        let mut rest = node;
        for axis in (0..self.n).rev() {
            out[axis] = rest % self.m;
            rest /= self.m;
        }
    }

    pub fn node_at(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &k| acc * self.m + k)
    }

    pub fn origin(&self) -> usize {
        let c = (self.m - 1) / 2;
        self.node_at(&vec![c; self.n])
    }

    pub fn point(&self, node: usize, out: &mut [f64]) {
        let mut rest = node;
        for axis in (0..self.n).rev() {
            out[axis] = self.coord(rest % self.m);
            rest /= self.m;
        }
    }

    pub fn point_vec(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        self.point(node, &mut x);
        x
    }

    /// Fractional node index of coordinate `x` along an axis.
    pub fn frac_index(&self, x: f64) -> f64 {
        (x + self.r) / self.h
    }

    pub fn full_mask(&self) -> Vec<bool> {
        vec![true; self.len]
    }

    /// Nodes whose closed box of `radius` nodes lies inside the lattice and `mask`.
    pub fn erode(&self, mask: &[bool], radius: usize) -> Vec<bool> {
        (0..self.n).fold(mask.to_vec(), |cur, axis| {
            self.erode_axis(&cur, axis, radius)
        })
    }

    /// Erosion along a single axis.
    pub fn erode_axis(&self, mask: &[bool], axis: usize, radius: usize) -> Vec<bool> {
        if radius == 0 {
            return mask.to_vec();
        }
        let stride = self.stride(axis);
        (0..self.len)
            .map(|node| {
                let k = self.axis_index(node, axis);
                if k < radius || k + radius >= self.m {
                    return false;
                }
                let base = node - radius * stride;
                (0..=2 * radius).all(|d| mask[base + d * stride])
            })
            .collect()
    }

    /// Nodes with Euclidean norm strictly below `radius`.
    pub fn ball_mask(&self, radius: f64) -> Vec<bool> {
        let mut x = vec![0.0; self.n];
        (0..self.len)
            .map(|node| {
                self.point(node, &mut x);
                x.iter().map(|v| v * v).sum::<f64>().sqrt() < radius
            })
            .collect()
    }

    pub fn same_grid(&self, other: &Lattice) -> bool {
        self.n == other.n && self.m == other.m && self.r == other.r
    }
}

pub fn mask_and(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(&x, &y)| x && y).collect()
}

pub fn mask_count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&b| b).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_with_five_points() {
        let l = Lattice::new(2, 1.0, 5).unwrap();
        assert_eq!(l.spacing(), 0.5);
        assert_eq!(l.len(), 25);
        let mut idx = [0; 2];
        l.multi_index(l.origin(), &mut idx);
        assert_eq!(idx, [2, 2]);
        assert_eq!(l.point_vec(l.origin()), vec![0.0, 0.0]);
    }

    #[test]
    fn three_dimensional_count() {
        let l = Lattice::new(3, 0.5, 9).unwrap();
        assert_eq!(l.spacing(), 0.125);
        assert_eq!(l.len(), 729);
    }

    #[test]
    fn endpoints_are_exact() {
        for m in [5, 7, 41, 161] {
            let l = Lattice::new(2, 0.37, m).unwrap();
            assert_eq!(l.coord(0), -0.37);
            assert_eq!(l.coord(m - 1), 0.37);
            assert_eq!(l.coord((m - 1) / 2), 0.0);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Lattice::new(2, 1.0, 4).is_err());
        assert!(Lattice::new(2, 1.0, 3).is_err());
        assert!(Lattice::new(2, 0.0, 5).is_err());
        assert!(Lattice::new(2, -1.0, 5).is_err());
        assert!(Lattice::new(1, 1.0, 5).is_err());
    }

    #[test]
    fn erosion_shrinks_box() {
        let l = Lattice::new(2, 1.0, 9).unwrap();
        let e = l.erode(&l.full_mask(), 2);
        assert_eq!(mask_count(&e), 25);
        let mut idx = [0; 2];
        for (node, &ok) in e.iter().enumerate() {
            l.multi_index(node, &mut idx);
            let inside = idx.iter().all(|&k| (2..=6).contains(&k));
            assert_eq!(ok, inside);
        }
    }
}
