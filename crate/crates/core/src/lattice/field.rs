use rayon::prelude::*;

use super::Lattice;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_ok, sym_index, sym_len, unpack};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Metric,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Scalar => "scalar",
            FieldKind::Metric => "metric",
        }
    }
}

/// Common view of sampled fields as a set of real channels over a lattice.
///
/// Values at nodes outside the mask are stored as zero and carry no meaning.
pub trait Field: Clone + Send + Sync + Sized {
    const KIND: FieldKind;

    fn lattice(&self) -> &Lattice;
    fn mask(&self) -> &[bool];
    fn channels(&self) -> &[Vec<f64>];

    /// Builds a field of the same kind on the same lattice.
    fn with_data(&self, channels: Vec<Vec<f64>>, mask: Vec<bool>) -> Result<Self>;
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    lattice: Lattice,
    channels: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl ScalarField {
    /// Evaluates `f` at every node; fails on the first non-finite value.
    pub fn sample<F>(lattice: &Lattice, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let values: Vec<f64> = (0..lattice.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; lattice.dim()],
                |x, node| {
                    lattice.point(node, x);
                    f(x)
                },
            )
            .collect();
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node,
                coords: lattice.point_vec(node),
            });
        }
        Ok(Self {
            lattice: lattice.clone(),
            channels: vec![values],
            mask: lattice.full_mask(),
        })
    }

    pub fn constant(lattice: &Lattice, c: f64) -> Self {
        Self {
            lattice: lattice.clone(),
            channels: vec![vec![c; lattice.len()]],
            mask: lattice.full_mask(),
        }
    }

    pub fn from_values(lattice: &Lattice, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != lattice.len() || mask.len() != lattice.len() {
            return Err(Error::LatticeMismatch(format!(
                "{} values / {} mask entries for {} nodes",
                values.len(),
                mask.len(),
                lattice.len()
            )));
        }
        for (node, v) in values.iter_mut().enumerate() {
            if !mask[node] {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::NonFinite {
                    node,
                    coords: lattice.point_vec(node),
                });
            }
        }
        Ok(Self {
            lattice: lattice.clone(),
            channels: vec![values],
            mask,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.channels[0]
    }

    pub fn get(&self, node: usize) -> Option<f64> {
        self.mask[node].then(|| self.channels[0][node])
    }

    /// Same values with the mask intersected with `mask`.
    pub fn restrict(&self, mask: &[bool]) -> Self {
        let mask = super::mask_and(&self.mask, mask);
        let values = self.channels[0]
            .iter()
            .zip(&mask)
            .map(|(&v, &ok)| if ok { v } else { 0.0 })
            .collect();
        Self {
            lattice: self.lattice.clone(),
            channels: vec![values],
            mask,
        }
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.channels[0]
            .iter()
            .zip(&self.mask)
            .filter_map(|(&v, &ok)| ok.then_some(v))
    }

    pub fn max_valid(&self) -> Option<f64> {
        self.valid_values().reduce(f64::max)
    }

    pub fn min_valid(&self) -> Option<f64> {
        self.valid_values().reduce(f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.valid_values().map(f64::abs).fold(0.0, f64::max)
    }

    /// `a·f + b·g` on the common mask.
    pub fn linear_combination(a: f64, f: &ScalarField, b: f64, g: &ScalarField) -> Result<Self> {
        if !f.lattice.same_grid(&g.lattice) {
            return Err(Error::LatticeMismatch(
                "fields on different lattices".into(),
            ));
        }
        let mask = super::mask_and(&f.mask, &g.mask);
        let values = f.channels[0]
            .iter()
            .zip(&g.channels[0])
            .zip(&mask)
            .map(|((&x, &y), &ok)| if ok { a * x + b * y } else { 0.0 })
            .collect();
        Self::from_values(&f.lattice, values, mask)
    }
}

impl Field for ScalarField {
    const KIND: FieldKind = FieldKind::Scalar;

    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    fn with_data(&self, mut channels: Vec<Vec<f64>>, mask: Vec<bool>) -> Result<Self> {
        if channels.len() != 1 {
            return Err(Error::LatticeMismatch(format!(
                "scalar field needs 1 channel, got {}",
                channels.len()
            )));
        }
        Self::from_values(&self.lattice, channels.pop().unwrap_or_default(), mask)
    }
}

/// Symmetric positive-definite matrix per node, stored as the packed upper
/// triangle (one channel per independent entry).
#[derive(Clone, Debug)]
pub struct MetricField {
    lattice: Lattice,
    channels: Vec<Vec<f64>>,
    mask: Vec<bool>,
}

impl MetricField {
    /// Evaluates `f`, which writes a full row-major n×n matrix, at every node.
    /// The upper triangle is stored; positive-definiteness is checked.
    pub fn sample<F>(lattice: &Lattice, f: F) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let n = lattice.dim();
        let packed: Vec<Vec<f64>> = (0..lattice.len())
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![0.0; n * n]),
                |(x, g), node| {
                    lattice.point(node, x);
                    g.iter_mut().for_each(|v| *v = 0.0);
                    f(x, g);
                    let mut out = vec![0.0; sym_len(n)];
                    for i in 0..n {
                        for j in i..n {
                            out[sym_index(n, i, j)] = g[i * n + j];
                        }
                    }
                    out
                },
            )
            .collect();
        let mut channels = vec![vec![0.0; lattice.len()]; sym_len(n)];
        for (node, entries) in packed.into_iter().enumerate() {
            for (c, v) in entries.into_iter().enumerate() {
                channels[c][node] = v;
            }
        }
        Self::from_channels(lattice, channels, lattice.full_mask())
    }

    pub fn identity(lattice: &Lattice) -> Self {
        let n = lattice.dim();
        let mut channels = vec![vec![0.0; lattice.len()]; sym_len(n)];
        for i in 0..n {
            channels[sym_index(n, i, i)]
                .iter_mut()
                .for_each(|v| *v = 1.0);
        }
        Self {
            lattice: lattice.clone(),
            channels,
            mask: lattice.full_mask(),
        }
    }

    /// Validates finiteness and positive-definiteness on the mask.
    pub fn from_channels(
        lattice: &Lattice,
        mut channels: Vec<Vec<f64>>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n = lattice.dim();
        if channels.len() != sym_len(n)
            || mask.len() != lattice.len()
            || channels.iter().any(|c| c.len() != lattice.len())
        {
            return Err(Error::LatticeMismatch(format!(
                "metric field needs {} channels of {} nodes",
                sym_len(n),
                lattice.len()
            )));
        }
        for c in channels.iter_mut() {
            for (v, &ok) in c.iter_mut().zip(&mask) {
                if !ok {
                    *v = 0.0;
                }
            }
        }
        let bad: Option<(usize, bool)> = (0..lattice.len())
            .into_par_iter()
            .filter(|&node| mask[node])
            .map_init(
                || vec![0.0; n * n],
                |g, node| {
                    unpack(n, &channels, node, g);
                    if g.iter().any(|v| !v.is_finite()) {
                        Some((node, false))
                    } else if !cholesky_ok(n, g) {
                        Some((node, true))
                    } else {
                        None
                    }
                },
            )
            .flatten()
            .min_by_key(|&(node, _)| node);
        if let Some((node, finite)) = bad {
            let coords = lattice.point_vec(node);
            return Err(if finite {
                Error::NotPositiveDefinite { node, coords }
            } else {
                Error::NonFinite { node, coords }
            });
        }
        Ok(Self {
            lattice: lattice.clone(),
            channels,
            mask,
        })
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn component(&self, i: usize, j: usize) -> &[f64] {
        &self.channels[sym_index(self.dim(), i, j)]
    }

    /// Full row-major matrix at `node`.
    pub fn matrix_at(&self, node: usize, out: &mut [f64]) {
        unpack(self.dim(), &self.channels, node, out);
    }

    pub fn matrix_vec(&self, node: usize) -> Vec<f64> {
        let n = self.dim();
        let mut g = vec![0.0; n * n];
        self.matrix_at(node, &mut g);
        g
    }

    pub fn restrict(&self, mask: &[bool]) -> Self {
        let mask = super::mask_and(&self.mask, mask);
        let channels = self
            .channels
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&mask)
                    .map(|(&v, &ok)| if ok { v } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            lattice: self.lattice.clone(),
            channels,
            mask,
        }
    }

    /// Largest entrywise difference on the common mask.
    pub fn max_abs_difference(&self, other: &MetricField) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.channels.iter().zip(&other.channels) {
            for node in 0..self.lattice.len() {
                if self.mask[node] && other.mask[node] {
                    worst = worst.max((a[node] - b[node]).abs());
                }
            }
        }
        worst
    }
}

impl Field for MetricField {
    const KIND: FieldKind = FieldKind::Metric;

    fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    fn with_data(&self, channels: Vec<Vec<f64>>, mask: Vec<bool>) -> Result<Self> {
        Self::from_channels(&self.lattice, channels, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_one_everywhere() {
        let l = Lattice::new(2, 1.0, 7).unwrap();
        let f = ScalarField::sample(&l, |_| 1.0).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
        assert!(f.mask().iter().all(|&b| b));
    }

    #[test]
    fn identity_metric_at_every_node() {
        let l = Lattice::new(3, 1.0, 5).unwrap();
        let g = MetricField::sample(&l, |_, g| {
            for i in 0..3 {
                g[i * 3 + i] = 1.0;
            }
        })
        .unwrap();
        for node in 0..l.len() {
            assert_eq!(
                g.matrix_vec(node),
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
            );
        }
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let l = Lattice::new(2, 1.0, 5).unwrap();
        let err = MetricField::sample(&l, |x, g| {
            g[0] = x[0] * x[0];
            g[3] = 1.0;
        })
        .unwrap_err();
        match err {
            Error::NotPositiveDefinite { coords, .. } => assert_eq!(coords[0], 0.0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_finite_sample_names_node() {
        let l = Lattice::new(2, 1.0, 5).unwrap();
        let err = ScalarField::sample(&l, |x| 1.0 / x[0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
