use rayon::prelude::*;

use super::{Field, Lattice};
use crate::error::{Error, Result};

/// All partial derivatives of a field up to some order.
///
/// A block is addressed by its derivative counts per axis, so `∂₁∂₂` and
/// `∂₂∂₁` share one block and mixed partials are symmetric by construction.
#[derive(Clone, Debug)]
pub struct JetField {
    lattice: Lattice,
    order: usize,
    indices: Vec<Vec<u8>>,
    blocks: Vec<Vec<Vec<f64>>>,
    mask: Vec<bool>,
}

impl JetField {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn channel_count(&self) -> usize {
        self.blocks[0].len()
    }

    /// Derivative counts of every block, ordered by total order.
    pub fn multi_indices(&self) -> &[Vec<u8>] {
        &self.indices
    }

    pub fn block(&self, counts: &[u8]) -> Option<&[Vec<f64>]> {
        self.indices
            .iter()
            .position(|c| c.as_slice() == counts)
            .map(|b| self.blocks[b].as_slice())
    }

    /// Block for the partial derivative along the listed axes (any order).
    pub fn partial(&self, axes: &[usize]) -> &[Vec<f64>] {
        let mut counts = vec![0u8; self.lattice.dim()];
        for &a in axes {
            counts[a] += 1;
        }
        self.block(&counts)
            .unwrap_or_else(|| panic!("derivative {axes:?} beyond jet order {}", self.order))
    }

    /// Blocks of exactly order `k` together with their multi-indices.
    pub fn order_blocks(&self, k: usize) -> impl Iterator<Item = (&[u8], &[Vec<f64>])> {
        self.indices
            .iter()
            .zip(&self.blocks)
            .filter(move |(c, _)| c.iter().map(|&v| v as usize).sum::<usize>() == k)
            .map(|(c, b)| (c.as_slice(), b.as_slice()))
    }
}

/// Multi-indices (counts per axis) of total order `k`, in lexicographically
/// descending order.
pub fn multi_indices(n: usize, k: usize) -> Vec<Vec<u8>> {
    fn rec(n: usize, left: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == n - 1 {
            prefix.push(left as u8);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in (0..=left).rev() {
            prefix.push(c as u8);
            rec(n, left - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k, &mut Vec::new(), &mut out);
    out
}

/// Second-order accurate central stencil for the c-th derivative, unscaled
/// (divide by h^c). Offsets run from -radius to +radius.
fn central_stencil(c: u8) -> &'static [f64] {
    match c {
        0 => &[1.0],
        1 => &[-0.5, 0.0, 0.5],
        2 => &[1.0, -2.0, 1.0],
        3 => &[-0.5, 1.0, 0.0, -1.0, 0.5],
        4 => &[1.0, -4.0, 6.0, -4.0, 1.0],
        _ => unreachable!("stencil order checked by caller"),
    }
}

const MAX_ORDER: usize = 4;

/// All partials up to `order` by tensor products of central stencils.
///
/// The output mask is the input mask eroded by `order` nodes per side.
pub fn differentiate<F: Field>(field: &F, order: usize) -> Result<JetField> {
    let lattice = field.lattice();
    let m = lattice.points_per_axis();
    if order > MAX_ORDER || 2 * order + 1 > m {
        return Err(Error::OrderTooHigh { order, points: m });
    }
    let mask = lattice.erode(field.mask(), order);
    if !mask.iter().any(|&b| b) {
        return Err(Error::OrderTooHigh { order, points: m });
    }
    let n = lattice.dim();
    let h = lattice.spacing();
    let mut indices = Vec::new();
    for k in 0..=order {
        indices.extend(multi_indices(n, k));
    }
    let blocks = indices
        .iter()
        .map(|counts| {
            let taps = product_stencil(lattice, counts, h);
            field
                .channels()
                .iter()
                .map(|values| apply_taps(&taps, values, &mask))
                .collect()
        })
        .collect();
    Ok(JetField {
        lattice: lattice.clone(),
        order,
        indices,
        blocks,
        mask,
    })
}

fn product_stencil(lattice: &Lattice, counts: &[u8], h: f64) -> Vec<(isize, f64)> {
    let mut taps: Vec<(isize, f64)> = vec![(0, 1.0)];
    for (axis, &c) in counts.iter().enumerate() {
        let weights = central_stencil(c);
        let radius = (weights.len() / 2) as isize;
        let stride = lattice.stride(axis) as isize;
        let scale = h.powi(c as i32);
        let mut next = Vec::with_capacity(taps.len() * weights.len());
        for &(off, w) in &taps {
            for (i, &cw) in weights.iter().enumerate() {
                if cw != 0.0 {
                    next.push((off + (i as isize - radius) * stride, w * cw / scale));
                }
            }
        }
        taps = next;
    }
    taps
}

fn apply_taps(taps: &[(isize, f64)], values: &[f64], mask: &[bool]) -> Vec<f64> {
    (0..values.len())
        .into_par_iter()
        .map(|node| {
            if !mask[node] {
                return 0.0;
            }
            taps.iter()
                .map(|&(off, w)| w * values[(node as isize + off) as usize])
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ScalarField;

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(2, 1), vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert_eq!(multi_indices(2, 0), vec![vec![0, 0]]);
    }

    #[test]
    fn affine_function_has_exact_gradient() {
        let l = Lattice::new(2, 1.0, 9).unwrap();
        let f = ScalarField::sample(&l, |x| x[0]).unwrap();
        let jet = differentiate(&f, 1).unwrap();
        for node in 0..l.len() {
            if jet.mask()[node] {
                assert!((jet.partial(&[0])[0][node] - 1.0).abs() < 1e-14);
                assert_eq!(jet.partial(&[1])[0][node], 0.0);
            }
        }
    }

    #[test]
    fn quadratic_has_exact_second_derivative() {
        let l = Lattice::new(2, 1.0, 11).unwrap();
        let f = ScalarField::sample(&l, |x| x[0] * x[0]).unwrap();
        let jet = differentiate(&f, 2).unwrap();
        for node in 0..l.len() {
            if jet.mask()[node] {
                assert!((jet.partial(&[0, 0])[0][node] - 2.0).abs() < 1e-12);
                assert!(jet.partial(&[0, 1])[0][node].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_shrinks_by_order() {
        let l = Lattice::new(2, 1.0, 9).unwrap();
        let f = ScalarField::constant(&l, 3.0);
        let jet = differentiate(&f, 2).unwrap();
        assert_eq!(crate::lattice::mask_count(jet.mask()), 25);
        assert!(differentiate(&f, 5).is_err());
        let small = Lattice::new(2, 1.0, 5).unwrap();
        assert!(differentiate(&ScalarField::constant(&small, 1.0), 3).is_err());
    }

    #[test]
    fn mixed_partials_share_one_block() {
        let l = Lattice::new(3, 1.0, 9).unwrap();
        let f = ScalarField::sample(&l, |x| (x[0] * x[1]).sin() + x[2].exp() * x[0]).unwrap();
        let jet = differentiate(&f, 2).unwrap();
        assert_eq!(jet.partial(&[0, 2])[0], jet.partial(&[2, 0])[0]);
    }
}
