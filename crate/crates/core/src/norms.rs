//! Hölder and Sobolev norms of sampled fields, chart-norm conditions, and the
//! harmonic defect of coordinate functions.
//!
//! Hölder quotients use the max-norm distance `|x − y| = max_k |x_k − y_k|`.
//! Multi-component quantities (derivative tensors, metric entries) are measured
//! in the max over components for Hölder norms and in the Euclidean norm over
//! all `n^k` tensor entries for `L^p` norms.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{differentiate, Field, JetField, Lattice, MetricField, ScalarField};
use crate::linalg;

pub const DEFAULT_PAIR_BUDGET: usize = 10_000_000;

/// Offsets up to this max-norm are always scanned in full, so the local
/// (usually dominant) quotients are exact even when sampling.
const NEAR_OFFSET: i64 = 2;

/// Hölder seminorm of a scalar field over all valid node pairs.
pub fn holder_seminorm(f: &ScalarField, alpha: f64, pair_budget: usize) -> Result<f64> {
    holder_seminorm_channels(f.lattice(), &[f.values()], f.mask(), alpha, pair_budget)
}

/// Hölder seminorm of a vector-valued quantity, max over channels.
///
/// Exact when the number of valid pairs is at most `pair_budget`; otherwise
/// far offsets are visited on a strided subset of base nodes, which can only
/// under-estimate.
pub fn holder_seminorm_channels(
    lattice: &Lattice,
    channels: &[&[f64]],
    mask: &[bool],
    alpha: f64,
    pair_budget: usize,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "Hölder exponent {alpha} outside (0, 1]"
        )));
    }
    let n = lattice.dim();
    let m = lattice.points_per_axis();
    let h = lattice.spacing();

    let mut valid_nodes = Vec::new();
    let mut valid_idx: Vec<i64> = Vec::new();
    let mut lo = vec![i64::MAX; n];
    let mut hi = vec![i64::MIN; n];
    let mut idx = vec![0usize; n];
    for (node, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        lattice.multi_index(node, &mut idx);
        valid_nodes.push(node);
        for k in 0..n {
            let v = idx[k] as i64;
            valid_idx.push(v);
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let count = valid_nodes.len();
    if count < 2 {
        return Ok(0.0);
    }
    let total_pairs = (count as u128) * (count as u128 - 1) / 2;
    let stride = if total_pairs <= pair_budget as u128 {
        1
    } else {
        total_pairs.div_ceil(pair_budget.max(1) as u128) as usize
    };

    // Lexicographically positive offsets within the bounding box of the mask.
    let extent: Vec<i64> = (0..n).map(|k| hi[k] - lo[k]).collect();
    let mut offsets = Vec::new();
    let mut d = vec![0i64; n];
    enumerate_offsets(&extent, 0, false, &mut d, &mut offsets);

    let strides: Vec<i64> = (0..n).map(|k| lattice.stride(k) as i64).collect();
    let best = offsets
        .par_iter()
        .enumerate()
        .map(|(oi, d)| {
            let dist = d.iter().map(|v| v.abs()).max().unwrap_or(0);
            let denom = (h * dist as f64).powf(alpha);
            let flat: i64 = d.iter().zip(&strides).map(|(a, b)| a * b).sum();
            let (step, phase) = if stride == 1 || dist <= NEAR_OFFSET {
                (1, 0)
            } else {
                (stride, (oi.wrapping_mul(2_654_435_761)) % stride)
            };
            let mut worst = 0.0f64;
            let mut i = phase;
            while i < count {
                let base = &valid_idx[i * n..(i + 1) * n];
                let inside = base
                    .iter()
                    .zip(d)
                    .all(|(&b, &o)| (0..m as i64).contains(&(b + o)));
                if inside {
                    let x = valid_nodes[i];
                    let y = (x as i64 + flat) as usize;
                    if mask[y] {
                        for c in channels {
                            worst = worst.max((c[y] - c[x]).abs() / denom);
                        }
                    }
                }
                i += step;
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

fn enumerate_offsets(
    extent: &[i64],
    axis: usize,
    positive: bool,
    d: &mut Vec<i64>,
    out: &mut Vec<Vec<i64>>,
) {
    if axis == extent.len() {
        if positive {
            out.push(d.clone());
        }
        return;
    }
    let range = if positive {
        -extent[axis]..=extent[axis]
    } else {
        0..=extent[axis]
    };
    for v in range {
        d[axis] = v;
        enumerate_offsets(extent, axis + 1, positive || v > 0, d, out);
    }
    d[axis] = 0;
}

/// Terms of the `C^{m,α}` norm: per-order sup norms and seminorms, all
/// evaluated on the mask of the order-`m` jet.
#[derive(Clone, Debug, PartialEq)]
pub struct HolderNorm {
    pub alpha: f64,
    pub sup: Vec<f64>,
    pub seminorm: Vec<f64>,
}

impl HolderNorm {
    /// `‖f‖_{C^m} + Σ_k ‖∇^k f‖_α` with `‖f‖_{C^m} = Σ_k sup|∇^k f|`.
    pub fn total(&self) -> f64 {
        self.sup.iter().sum::<f64>() + self.seminorm.iter().sum::<f64>()
    }
}

pub fn holder_norm<F: Field>(
    f: &F,
    order: usize,
    alpha: f64,
    pair_budget: usize,
) -> Result<HolderNorm> {
    let jet = differentiate(f, order)?;
    holder_norm_of_jet(&jet, alpha, pair_budget)
}

pub fn holder_norm_of_jet(jet: &JetField, alpha: f64, pair_budget: usize) -> Result<HolderNorm> {
    let mut sup = Vec::new();
    let mut seminorm = Vec::new();
    for k in 0..=jet.order() {
        let mut s = 0.0f64;
        let mut channels: Vec<&[f64]> = Vec::new();
        for (_, block) in jet.order_blocks(k) {
            for c in block {
                for (node, &v) in c.iter().enumerate() {
                    if jet.mask()[node] {
                        s = s.max(v.abs());
                    }
                }
                channels.push(c);
            }
        }
        sup.push(s);
        seminorm.push(holder_seminorm_channels(
            jet.lattice(),
            &channels,
            jet.mask(),
            alpha,
            pair_budget,
        )?);
    }
    Ok(HolderNorm {
        alpha,
        sup,
        seminorm,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SobolevNorm {
    pub p: f64,
    pub radius: f64,
    /// `‖∇^k f‖_{L^p}` for k = 0..=m.
    pub per_order: Vec<f64>,
}

impl SobolevNorm {
    /// `max_k r^{k−n/p} ‖∇^k f‖_{L^p}`.
    pub fn scaled(&self, n: usize) -> f64 {
        self.per_order
            .iter()
            .enumerate()
            .map(|(k, v)| self.radius.powf(k as f64 - n as f64 / self.p) * v)
            .fold(0.0, f64::max)
    }

    pub fn total(&self) -> f64 {
        self.per_order.iter().sum()
    }
}

/// Node-quadrature `L^p` norms of `∇^k f`, k ≤ `order`, at chart scale `r`.
pub fn sobolev_norm<F: Field>(f: &F, order: usize, p: f64, radius: f64) -> Result<SobolevNorm> {
    let jet = differentiate(f, order)?;
    sobolev_norm_of_jet(
        &jet,
        F::KIND == crate::lattice::FieldKind::Metric,
        p,
        radius,
    )
}

pub fn sobolev_norm_of_jet(
    jet: &JetField,
    metric: bool,
    p: f64,
    radius: f64,
) -> Result<SobolevNorm> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Sobolev exponent {p} outside [1, ∞)"
        )));
    }
    let lattice = jet.lattice();
    let n = lattice.dim();
    let cell = lattice.spacing().powi(n as i32);
    // symmetric metric storage: off-diagonal entries appear twice in g_ij
    let channel_weight: Vec<f64> = if metric {
        (0..n)
            .flat_map(|i| (i..n).map(move |j| if i == j { 1.0 } else { 2.0 }))
            .collect()
    } else {
        vec![1.0]
    };
    let mut per_order = Vec::new();
    for k in 0..=jet.order() {
        let blocks: Vec<(f64, &[Vec<f64>])> = jet
            .order_blocks(k)
            .map(|(counts, b)| (multinomial(counts), b))
            .collect();
        let sum: f64 = (0..lattice.len())
            .into_par_iter()
            .filter(|&node| jet.mask()[node])
            .map(|node| {
                let mut sq = 0.0;
                for (mult, block) in &blocks {
                    for (c, w) in block.iter().zip(&channel_weight) {
                        sq += mult * w * c[node] * c[node];
                    }
                }
                sq.sqrt().powf(p)
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        per_order.push((sum * cell).powf(1.0 / p));
    }
    Ok(SobolevNorm {
        p,
        radius,
        per_order,
    })
}

fn multinomial(counts: &[u8]) -> f64 {
    let fact = |k: u8| (1..=k as u32).map(f64::from).product::<f64>();
    let k: u8 = counts.iter().sum();
    fact(k) / counts.iter().map(|&c| fact(c)).product::<f64>()
}

/// Smallest `Q` with `e^{-2Q} ≤ λ ≤ e^{2Q}` for every eigenvalue on the mask.
pub fn check_n0(g: &MetricField) -> Result<f64> {
    let n = g.dim();
    let lattice = g.lattice();
    let worst = (0..lattice.len())
        .into_par_iter()
        .filter(|&node| g.mask()[node])
        .map(|node| {
            let a = g.matrix_vec(node);
            let ev = linalg::sym_eigenvalues(n, &a);
            if !(ev[0] > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    node,
                    coords: lattice.point_vec(node),
                });
            }
            Ok(ev[0].ln().abs().max(ev[n - 1].ln().abs()))
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    Ok(0.5 * worst)
}

/// Counts nodes where `det g` leaves `[e^{-2Qn}, e^{2Qn}]`.
pub fn det_bound_violations(g: &MetricField, q: f64) -> usize {
    let n = g.dim();
    let lo = (-2.0 * q * n as f64).exp();
    let hi = (2.0 * q * n as f64).exp();
    (0..g.lattice().len())
        .filter(|&node| g.mask()[node])
        .filter(|&node| {
            let d = linalg::determinant(n, &g.matrix_vec(node));
            !(d >= lo * (1.0 - 1e-12) && d <= hi * (1.0 + 1e-12))
        })
        .count()
}

#[derive(Clone, Debug)]
pub struct HarmonicDefect {
    /// `|Δ_g x_k|` per coordinate.
    pub per_coordinate: Vec<ScalarField>,
    pub sup: f64,
}

/// `Δ_g x_k = |g|^{-1/2} ∂_i(|g|^{1/2} g^{ik})` for each coordinate function.
pub fn harmonic_defect(g: &MetricField) -> Result<HarmonicDefect> {
    let n = g.dim();
    let lattice = g.lattice();
    let len = lattice.len();
    let sym = linalg::sym_len(n);
    let mut densitized = vec![vec![0.0; len]; sym];
    let mut root_det = vec![0.0; len];
    let mut a = vec![0.0; n * n];
    let mut inv = vec![0.0; n * n];
    for node in 0..len {
        if !g.mask()[node] {
            continue;
        }
        g.matrix_at(node, &mut a);
        let det = linalg::determinant(n, &a);
        linalg::inverse(n, &a, &mut inv).ok_or(Error::NotPositiveDefinite {
            node,
            coords: lattice.point_vec(node),
        })?;
        root_det[node] = det.sqrt();
        for i in 0..n {
            for j in i..n {
                densitized[linalg::sym_index(n, i, j)][node] = root_det[node] * inv[i * n + j];
            }
        }
    }
    let s = MetricField::from_channels(lattice, densitized, g.mask().to_vec())?;
    let jet = differentiate(&s, 1)?;
    let mut per_coordinate = Vec::with_capacity(n);
    let mut sup = 0.0f64;
    for k in 0..n {
        let mut values = vec![0.0; len];
        for (node, v) in values.iter_mut().enumerate() {
            if jet.mask()[node] {
                let div: f64 = (0..n)
                    .map(|i| jet.partial(&[i])[linalg::sym_index(n, i, k)][node])
                    .sum();
                *v = (div / root_det[node]).abs();
                sup = sup.max(*v);
            }
        }
        per_coordinate.push(ScalarField::from_values(
            lattice,
            values,
            jet.mask().to_vec(),
        )?);
    }
    Ok(HarmonicDefect {
        per_coordinate,
        sup,
    })
}

/// Chart-norm summary for a metric in one chart.
#[derive(Clone, Debug, PartialEq)]
pub struct NormReport {
    pub radius: f64,
    pub n0_q: f64,
    pub holder: HolderNorm,
    pub holder_order: usize,
    pub holder_q: f64,
    pub sobolev: SobolevNorm,
    pub sobolev_q: f64,
    pub harmonic_defect: f64,
}

pub struct NormSettings {
    pub holder_order: usize,
    pub alpha: f64,
    pub sobolev_order: usize,
    pub p: f64,
    pub pair_budget: usize,
}

/// Minimal `Q` for each chart-norm condition on the masked chart domain.
pub fn chart_norms(g: &MetricField, radius: f64, settings: &NormSettings) -> Result<NormReport> {
    let n = g.dim();
    let n0_q = check_n0(g)?;
    let holder = holder_norm(
        g,
        settings.holder_order,
        settings.alpha,
        settings.pair_budget,
    )?;
    let holder_q = holder
        .seminorm
        .iter()
        .enumerate()
        .map(|(k, s)| radius.powf(k as f64 + settings.alpha) * s)
        .fold(n0_q, f64::max);
    let sobolev = sobolev_norm(g, settings.sobolev_order, settings.p, radius)?;
    let sobolev_q = n0_q.max(sobolev.scaled(n));
    let harmonic_defect = harmonic_defect(g)?.sup;
    Ok(NormReport {
        radius,
        n0_q,
        holder_order: settings.holder_order,
        holder,
        holder_q,
        sobolev,
        sobolev_q,
        harmonic_defect,
    })
}

impl fmt::Display for NormReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "radius={:.11e}", self.radius)?;
        writeln!(f, "n0_q={:.11e}", self.n0_q)?;
        writeln!(f, "holder_order={}", self.holder_order)?;
        writeln!(f, "holder_alpha={:.11e}", self.holder.alpha)?;
        for (k, (s, h)) in self
            .holder
            .sup
            .iter()
            .zip(&self.holder.seminorm)
            .enumerate()
        {
            writeln!(f, "holder_sup_{k}={s:.11e}")?;
            writeln!(f, "holder_seminorm_{k}={h:.11e}")?;
        }
        writeln!(f, "holder_q={:.11e}", self.holder_q)?;
        writeln!(f, "sobolev_p={:.11e}", self.sobolev.p)?;
        for (k, v) in self.sobolev.per_order.iter().enumerate() {
            writeln!(f, "sobolev_lp_{k}={v:.11e}")?;
        }
        writeln!(f, "sobolev_q={:.11e}", self.sobolev_q)?;
        writeln!(f, "harmonic_defect={:.11e}", self.harmonic_defect)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_has_zero_seminorm() {
        let l = Lattice::new(2, 1.0, 11).unwrap();
        assert_eq!(
            holder_seminorm(&ScalarField::constant(&l, 2.5), 0.5, 1000).unwrap(),
            0.0
        );
        let hn = holder_norm(&ScalarField::constant(&l, -2.5), 2, 0.3, 1000).unwrap();
        assert_eq!(hn.total(), 2.5);
    }

    #[test]
    fn coordinate_is_one_lipschitz() {
        let l = Lattice::new(2, 1.0, 21).unwrap();
        let f = ScalarField::sample(&l, |x| x[0]).unwrap();
        let s = holder_seminorm(&f, 1.0, DEFAULT_PAIR_BUDGET).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_under_estimates() {
        let l = Lattice::new(2, 1.0, 31).unwrap();
        let f = ScalarField::sample(&l, |x| (4.0 * x[0]).sin() * x[1].cos() + x[0] * x[1] * x[1])
            .unwrap();
        let full = holder_seminorm(&f, 0.7, DEFAULT_PAIR_BUDGET).unwrap();
        let sampled = holder_seminorm(&f, 0.7, 5_000).unwrap();
        assert!(sampled <= full);
        assert!(sampled > 0.5 * full);
    }

    #[test]
    fn rejects_bad_exponent() {
        let l = Lattice::new(2, 1.0, 5).unwrap();
        let f = ScalarField::constant(&l, 1.0);
        assert!(holder_seminorm(&f, 0.0, 10).is_err());
        assert!(holder_seminorm(&f, 1.5, 10).is_err());
    }

    #[test]
    fn n0_of_diagonal_metric() {
        let l = Lattice::new(2, 1.0, 5).unwrap();
        let e2 = std::f64::consts::E.powi(2);
        let g = MetricField::sample(&l, |_, g| {
            g[0] = e2;
            g[1] = 0.0;
            g[2] = 0.0;
            g[3] = 1.0 / e2;
        })
        .unwrap();
        assert!((check_n0(&g).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(check_n0(&MetricField::identity(&l)).unwrap(), 0.0);
    }

    #[test]
    fn flat_metric_is_harmonic() {
        let l = Lattice::new(3, 1.0, 7).unwrap();
        let d = harmonic_defect(&MetricField::identity(&l)).unwrap();
        assert_eq!(d.sup, 0.0);
    }

    #[test]
    fn multinomial_counts() {
        assert_eq!(multinomial(&[1, 1]), 2.0);
        assert_eq!(multinomial(&[2, 0]), 1.0);
        assert_eq!(multinomial(&[1, 1, 1]), 6.0);
    }
}
