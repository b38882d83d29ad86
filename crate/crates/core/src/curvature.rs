//! Christoffel symbols, the Riemann tensor and its split into a part linear in
//! second derivatives (A) and a polynomial remainder (B), sectional and Ricci
//! curvature.
//!
//! Conventions:
//!
//! ```text
//! Γ^i_{kl}     = ½ g^{im} (∂_l g_{mk} + ∂_k g_{ml} − ∂_m g_{kl})
//! R^ρ_{σμν}   = ∂_μ Γ^ρ_{νσ} − ∂_ν Γ^ρ_{μσ} + Γ^ρ_{μλ} Γ^λ_{νσ} − Γ^ρ_{νλ} Γ^λ_{μσ}
//! Sec(v, w)    = g_{αρ} v^α R^ρ_{σμν} w^σ v^μ w^ν / (|v|²|w|² − ⟨v,w⟩²)
//! Ric_{σν}     = R^μ_{σμν}
//! ```
//!
//! All tensors are computed from one order-2 jet of the metric, so every
//! output shares the metric mask eroded by two nodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{differentiate, Field, JetField, Lattice, MetricField};
use crate::linalg;

pub const MAX_CONDITION: f64 = 1e12;
pub const RANDOM_PLANES: usize = 32;

/// Node-wise inverse, rejecting condition numbers above `MAX_CONDITION`.
pub fn invert_metric(g: &MetricField) -> Result<MetricField> {
    let n = g.dim();
    let lattice = g.lattice();
    let sym = linalg::sym_len(n);
    let rows: Vec<Vec<f64>> = (0..lattice.len())
        .into_par_iter()
        .map(|node| {
            if !g.mask()[node] {
                return Ok(vec![0.0; sym]);
            }
            let a = g.matrix_vec(node);
            let mut inv = vec![0.0; n * n];
            checked_inverse(n, &a, &mut inv, node, lattice)?;
            Ok((0..n)
                .flat_map(|i| (i..n).map(move |j| (i, j)))
                .map(|(i, j)| inv[i * n + j])
                .collect())
        })
        .collect::<Result<_>>()?;
    let channels = (0..sym)
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    MetricField::from_channels(lattice, channels, g.mask().to_vec())
}

fn checked_inverse(
    n: usize,
    a: &[f64],
    out: &mut [f64],
    node: usize,
    lattice: &Lattice,
) -> Result<()> {
    let ev = linalg::sym_eigenvalues(n, a);
    if !(ev[0] > 0.0) {
        return Err(Error::NotPositiveDefinite {
            node,
            coords: lattice.point_vec(node),
        });
    }
    let condition = ev[n - 1] / ev[0];
    if condition > MAX_CONDITION {
        return Err(Error::IllConditioned { node, condition });
    }
    linalg::inverse(n, a, out).ok_or(Error::IllConditioned { node, condition })
}

/// Metric derivatives at one node gathered from an order-2 jet.
struct NodeJet {
    n: usize,
    ginv: Vec<f64>,
    /// `dg[(x*n + a)*n + b] = ∂_x g_ab`
    dg: Vec<f64>,
    /// `d2g[((x*n + y)*n + a)*n + b] = ∂_x ∂_y g_ab`
    d2g: Vec<f64>,
}

/// Jet blocks resolved once per field: value, first and second partials.
struct JetBlocks<'a> {
    value: &'a [Vec<f64>],
    first: Vec<&'a [Vec<f64>]>,
    second: Vec<&'a [Vec<f64>]>,
}

impl<'a> JetBlocks<'a> {
    fn new(jet: &'a JetField) -> Self {
        let n = jet.lattice().dim();
        Self {
            value: jet.partial(&[]),
            first: (0..n).map(|x| jet.partial(&[x])).collect(),
            second: (0..n * n).map(|k| jet.partial(&[k / n, k % n])).collect(),
        }
    }
}

impl NodeJet {
    fn gather(blocks: &JetBlocks, lattice: &Lattice, node: usize) -> Result<Self> {
        let n = lattice.dim();
        let mut g = vec![0.0; n * n];
        linalg::unpack(n, blocks.value, node, &mut g);
        let mut ginv = vec![0.0; n * n];
        checked_inverse(n, &g, &mut ginv, node, lattice)?;
        let mut dg = vec![0.0; n * n * n];
        let mut d2g = vec![0.0; n * n * n * n];
        for x in 0..n {
            linalg::unpack(
                n,
                blocks.first[x],
                node,
                &mut dg[x * n * n..(x + 1) * n * n],
            );
            for y in 0..n {
                let o = (x * n + y) * n * n;
                linalg::unpack(n, blocks.second[x * n + y], node, &mut d2g[o..o + n * n]);
            }
        }
        Ok(Self { n, ginv, dg, d2g })
    }
}

/// Christoffel symbols, `T_{mνσ}` and `∂_μ g^{ρm}` at one node.
struct FirstOrder {
    /// `gamma[(ρ*n + ν)*n + σ] = Γ^ρ_{νσ}`
    gamma: Vec<f64>,
    /// `t[(m*n + ν)*n + σ] = ∂_σ g_{mν} + ∂_ν g_{mσ} − ∂_m g_{νσ}`
    t: Vec<f64>,
    /// `dginv[(μ*n + ρ)*n + m] = ∂_μ g^{ρm}`
    dginv: Vec<f64>,
}

fn first_order(n: usize, ginv: &[f64], dg: &[f64]) -> FirstOrder {
    let d = |x: usize, a: usize, b: usize| dg[(x * n + a) * n + b];
    let mut t = vec![0.0; n * n * n];
    for m in 0..n {
        for nu in 0..n {
            for s in 0..n {
                t[(m * n + nu) * n + s] = d(s, m, nu) + d(nu, m, s) - d(m, nu, s);
            }
        }
    }
    let mut gamma = vec![0.0; n * n * n];
    for r in 0..n {
        for nu in 0..n {
            for s in nu..n {
                let v = 0.5
                    * (0..n)
                        .map(|m| ginv[r * n + m] * t[(m * n + nu) * n + s])
                        .sum::<f64>();
                gamma[(r * n + nu) * n + s] = v;
                gamma[(r * n + s) * n + nu] = v;
            }
        }
    }
    let mut dginv = vec![0.0; n * n * n];
    for mu in 0..n {
        for r in 0..n {
            for m in 0..n {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += ginv[r * n + a] * d(mu, a, b) * ginv[b * n + m];
                    }
                }
                dginv[(mu * n + r) * n + m] = -s;
            }
        }
    }
    FirstOrder { gamma, t, dginv }
}

fn r_index(n: usize, r: usize, s: usize, mu: usize, nu: usize) -> usize {
    ((r * n + s) * n + mu) * n + nu
}

/// `(R, A, B)` at one node; each fills only `μ < ν` and is then antisymmetrized.
fn node_curvature(nj: &NodeJet, riem: &mut [f64], mut parts: Option<(&mut [f64], &mut [f64])>) {
    let n = nj.n;
    let FirstOrder { gamma, t, dginv } = first_order(n, &nj.ginv, &nj.dg);
    let gm = |r: usize, a: usize, b: usize| gamma[(r * n + a) * n + b];
    let d2 = |x: usize, y: usize, a: usize, b: usize| nj.d2g[((x * n + y) * n + a) * n + b];
    let tt = |m: usize, a: usize, b: usize| t[(m * n + a) * n + b];
    let dgi = |mu: usize, r: usize, m: usize| dginv[(mu * n + r) * n + m];
    let gi = |a: usize, b: usize| nj.ginv[a * n + b];

    // ∂_μ Γ^ρ_{νσ} by the product rule
    let d_gamma = |mu: usize, r: usize, nu: usize, s: usize| {
        0.5 * (0..n)
            .map(|m| {
                let dt = d2(mu, s, m, nu) + d2(mu, nu, m, s) - d2(mu, m, nu, s);
                dgi(mu, r, m) * tt(m, nu, s) + gi(r, m) * dt
            })
            .sum::<f64>()
    };
    let quad = |r: usize, s: usize, mu: usize, nu: usize| {
        (0..n)
            .map(|l| gm(r, mu, l) * gm(l, nu, s) - gm(r, nu, l) * gm(l, mu, s))
            .sum::<f64>()
    };

    for r in 0..n {
        for s in 0..n {
            for mu in 0..n {
                for nu in mu + 1..n {
                    let q = quad(r, s, mu, nu);
                    let v = d_gamma(mu, r, nu, s) - d_gamma(nu, r, mu, s) + q;
                    riem[r_index(n, r, s, mu, nu)] = v;
                    riem[r_index(n, r, s, nu, mu)] = -v;
                    if let Some((a, b)) = parts.as_mut() {
                        let av = 0.5
                            * (0..n)
                                .map(|m| {
                                    gi(r, m)
                                        * (d2(mu, s, m, nu) - d2(mu, m, nu, s) - d2(nu, s, m, mu)
                                            + d2(nu, m, mu, s))
                                })
                                .sum::<f64>();
                        let bv = 0.5
                            * (0..n)
                                .map(|m| {
                                    dgi(mu, r, m) * tt(m, nu, s) - dgi(nu, r, m) * tt(m, mu, s)
                                })
                                .sum::<f64>()
                            + q;
                        a[r_index(n, r, s, mu, nu)] = av;
                        a[r_index(n, r, s, nu, mu)] = -av;
                        b[r_index(n, r, s, mu, nu)] = bv;
                        b[r_index(n, r, s, nu, mu)] = -bv;
                    }
                }
            }
        }
    }
}

/// The polynomial remainder `B` evaluated from `(g⁻¹, ∂g⁻¹, ∂g)` alone, with
/// layouts as in the module conventions. Output indexed `[ρ][σ][μ][ν]`.
pub fn b_polynomial(n: usize, ginv: &[f64], dginv: &[f64], dg: &[f64]) -> Vec<f64> {
    let d = |x: usize, a: usize, b: usize| dg[(x * n + a) * n + b];
    let t = |m: usize, nu: usize, s: usize| d(s, m, nu) + d(nu, m, s) - d(m, nu, s);
    let gamma = |r: usize, a: usize, b: usize| {
        0.5 * (0..n).map(|m| ginv[r * n + m] * t(m, a, b)).sum::<f64>()
    };
    let mut out = vec![0.0; n * n * n * n];
    for r in 0..n {
        for s in 0..n {
            for mu in 0..n {
                for nu in 0..n {
                    let lin = 0.5
                        * (0..n)
                            .map(|m| {
                                dginv[(mu * n + r) * n + m] * t(m, nu, s)
                                    - dginv[(nu * n + r) * n + m] * t(m, mu, s)
                            })
                            .sum::<f64>();
                    let quad: f64 = (0..n)
                        .map(|l| {
                            gamma(r, mu, l) * gamma(l, nu, s) - gamma(r, nu, l) * gamma(l, mu, s)
                        })
                        .sum();
                    out[r_index(n, r, s, mu, nu)] = lin + quad;
                }
            }
        }
    }
    out
}

/// Telescoping constant `C(M_f, M_g)` with
/// `‖B(u) − B(u′)‖_∞ ≤ C ‖u − u′‖_∞` for inputs bounded by `M_f`, `M_g`.
pub fn b_lipschitz_constant(n: usize, mf: f64, mg: f64) -> f64 {
    let n = n as f64;
    3.0 * n * (mf + mg) + 4.5 * n.powi(3) * (mf.powi(3) + mf * mf * mg + mf * mg * mg + mg.powi(3))
}

/// `∂_μ g^{ρm} = −g^{ρa} ∂_μ g_{ab} g^{bm}` in the `[μ][ρ][m]` layout.
pub fn inverse_derivative(n: usize, ginv: &[f64], dg: &[f64]) -> Vec<f64> {
    first_order(n, ginv, dg).dginv
}

#[derive(Clone, Debug)]
pub struct ChristoffelField {
    lattice: Lattice,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl ChristoffelField {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// `Γ^i_{kl}` at a node.
    pub fn get(&self, node: usize, i: usize, k: usize, l: usize) -> f64 {
        let n = self.lattice.dim();
        self.data[node * n * n * n + (i * n + k) * n + l]
    }
}

pub fn christoffel(g: &MetricField) -> Result<ChristoffelField> {
    let jet = differentiate(g, 1)?;
    let lattice = g.lattice();
    let n = lattice.dim();
    let per_node: Vec<Vec<f64>> = (0..lattice.len())
        .into_par_iter()
        .map(|node| {
            if !jet.mask()[node] {
                return Ok(vec![0.0; n * n * n]);
            }
            let mut gm = vec![0.0; n * n];
            linalg::unpack(n, jet.partial(&[]), node, &mut gm);
            let mut ginv = vec![0.0; n * n];
            checked_inverse(n, &gm, &mut ginv, node, lattice)?;
            let mut dg = vec![0.0; n * n * n];
            for x in 0..n {
                linalg::unpack(
                    n,
                    jet.partial(&[x]),
                    node,
                    &mut dg[x * n * n..(x + 1) * n * n],
                );
            }
            Ok(first_order(n, &ginv, &dg).gamma)
        })
        .collect::<Result<_>>()?;
    Ok(ChristoffelField {
        lattice: lattice.clone(),
        data: per_node.concat(),
        mask: jet.mask().to_vec(),
    })
}

/// A (1,3) curvature-type tensor per node, `[ρ][σ][μ][ν]` layout.
#[derive(Clone, Debug)]
pub struct RiemannField {
    lattice: Lattice,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl RiemannField {
    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let s = self.lattice.dim().pow(4);
        &self.data[node * s..(node + 1) * s]
    }

    pub fn get(&self, node: usize, r: usize, s: usize, mu: usize, nu: usize) -> f64 {
        self.at(node)[r_index(self.lattice.dim(), r, s, mu, nu)]
    }

    /// Largest absolute component over the mask.
    pub fn sup_norm(&self) -> f64 {
        let s = self.lattice.dim().pow(4);
        self.data
            .chunks(s)
            .zip(&self.mask)
            .filter(|(_, &ok)| ok)
            .flat_map(|(c, _)| c.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn max_abs_difference(&self, other: &RiemannField) -> f64 {
        let s = self.lattice.dim().pow(4);
        let mut worst = 0.0f64;
        for node in 0..self.lattice.len() {
            if self.mask[node] && other.mask[node] {
                for k in 0..s {
                    worst = worst.max((self.data[node * s + k] - other.data[node * s + k]).abs());
                }
            }
        }
        worst
    }

    pub fn sum(&self, other: &RiemannField) -> RiemannField {
        RiemannField {
            lattice: self.lattice.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
            mask: crate::lattice::mask_and(&self.mask, &other.mask),
        }
    }
}

fn curvature_fields(
    g: &MetricField,
    want_parts: bool,
) -> Result<(RiemannField, Option<(RiemannField, RiemannField)>)> {
    let jet = differentiate(g, 2)?;
    let blocks = JetBlocks::new(&jet);
    let lattice = g.lattice();
    let n = lattice.dim();
    let size = n.pow(4);
    let mut riem = vec![0.0; size * lattice.len()];
    let mut a = vec![0.0; if want_parts { riem.len() } else { 0 }];
    let mut b = a.clone();
    let node_parts =
        |node: usize, r: &mut [f64], parts: Option<(&mut [f64], &mut [f64])>| -> Result<()> {
            if jet.mask()[node] {
                node_curvature(&NodeJet::gather(&blocks, lattice, node)?, r, parts);
            }
            Ok(())
        };
    if want_parts {
        riem.par_chunks_mut(size)
            .zip(a.par_chunks_mut(size))
            .zip(b.par_chunks_mut(size))
            .enumerate()
            .try_for_each(|(node, ((r, pa), pb))| node_parts(node, r, Some((pa, pb))))?;
    } else {
        riem.par_chunks_mut(size)
            .enumerate()
            .try_for_each(|(node, r)| node_parts(node, r, None))?;
    }
    let mask = jet.mask().to_vec();
    let field = |data: Vec<f64>| RiemannField {
        lattice: lattice.clone(),
        data,
        mask: mask.clone(),
    };
    let parts = want_parts.then(|| (field(a), field(b)));
    Ok((field(riem), parts))
}

pub fn riemann(g: &MetricField) -> Result<RiemannField> {
    Ok(curvature_fields(g, false)?.0)
}

/// `(A, B)` with `A` the terms linear in `∇²g` and `B` the rest.
pub fn ab_decomposition(g: &MetricField) -> Result<(RiemannField, RiemannField)> {
    Ok(curvature_fields(g, true)?.1.expect("parts requested"))
}

/// Riemann tensor together with its split, from a single jet.
pub fn riemann_with_parts(g: &MetricField) -> Result<(RiemannField, RiemannField, RiemannField)> {
    let (r, parts) = curvature_fields(g, true)?;
    let (a, b) = parts.expect("parts requested");
    Ok((r, a, b))
}

/// Three vector fields and a covector field, `n` components per node.
#[derive(Clone, Debug)]
pub struct VectorSection {
    pub v: Vec<f64>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub xi: Vec<f64>,
}

impl VectorSection {
    /// A section with the same coordinate components at every node.
    pub fn constant(lattice: &Lattice, v: &[f64], w1: &[f64], w2: &[f64], xi: &[f64]) -> Self {
        let rep = |a: &[f64]| a.repeat(lattice.len());
        Self {
            v: rep(v),
            w1: rep(w1),
            w2: rep(w2),
            xi: rep(xi),
        }
    }

    fn at<'a>(field: &'a [f64], n: usize, node: usize) -> &'a [f64] {
        &field[node * n..(node + 1) * n]
    }
}

/// `R^ρ_{σμν} ξ_ρ v^σ w₁^μ w₂^ν` at `node` and the product norm
/// `|v|_g |w₁|_g |w₂|_g |ξ|_{g⁻¹}`.
pub fn evaluate_riem(
    riem: &RiemannField,
    g: &MetricField,
    section: &VectorSection,
    node: usize,
) -> Result<(f64, f64)> {
    if !riem.mask()[node] || !g.mask()[node] {
        return Err(Error::OutsideMask { node });
    }
    let n = g.dim();
    let v = VectorSection::at(&section.v, n, node);
    let w1 = VectorSection::at(&section.w1, n, node);
    let w2 = VectorSection::at(&section.w2, n, node);
    let xi = VectorSection::at(&section.xi, n, node);
    let value = contract(n, riem.at(node), xi, v, w1, w2);
    let gm = g.matrix_vec(node);
    let mut ginv = vec![0.0; n * n];
    linalg::inverse(n, &gm, &mut ginv).ok_or(Error::NotPositiveDefinite {
        node,
        coords: g.lattice().point_vec(node),
    })?;
    let norm = |m: &[f64], a: &[f64]| linalg::quad_form(n, m, a, a).max(0.0).sqrt();
    Ok((
        value,
        norm(&gm, v) * norm(&gm, w1) * norm(&gm, w2) * norm(&ginv, xi),
    ))
}

fn contract(n: usize, r: &[f64], xi: &[f64], v: &[f64], w1: &[f64], w2: &[f64]) -> f64 {
    let mut s = 0.0;
    for a in 0..n {
        if xi[a] == 0.0 {
            continue;
        }
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    s += r[r_index(n, a, b, c, d)] * xi[a] * v[b] * w1[c] * w2[d];
                }
            }
        }
    }
    s
}

/// Sectional curvature from the metric matrix and curvature tensor at a node.
pub fn sectional_at(n: usize, gm: &[f64], r: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
    let vv = linalg::quad_form(n, gm, v, v);
    let ww = linalg::quad_form(n, gm, w, w);
    let vw = linalg::quad_form(n, gm, v, w);
    let gram = vv * ww - vw * vw;
    if !(gram >= 1e-12 * vv * ww) || gram <= 0.0 {
        return Err(Error::DegeneratePlane { gram });
    }
    // lower the free index: ⟨R(v,w)w, v⟩ = g_{αρ} v^α R^ρ_{σμν} w^σ v^μ w^ν
    let mut buf = [0.0; 4];
    let mut heap = Vec::new();
    let xi: &mut [f64] = if n <= buf.len() {
        &mut buf[..n]
    } else {
        heap.resize(n, 0.0);
        &mut heap
    };
    for (rho, x) in xi.iter_mut().enumerate() {
        *x = (0..n).map(|a| gm[a * n + rho] * v[a]).sum();
    }
    Ok(contract(n, r, xi, w, v, w) / gram)
}

pub fn sectional(
    g: &MetricField,
    riem: &RiemannField,
    node: usize,
    v: &[f64],
    w: &[f64],
) -> Result<f64> {
    if !riem.mask()[node] || !g.mask()[node] {
        return Err(Error::OutsideMask { node });
    }
    sectional_at(g.dim(), &g.matrix_vec(node), riem.at(node), v, w)
}

/// Per-node RNG stream for plane sampling, independent of evaluation order.
pub fn node_rng(seed: u64, node: usize) -> ChaCha8Rng {
    let mut z = seed
        ^ (node as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Coordinate-pair planes followed by `RANDOM_PLANES` seeded random planes.
pub fn sample_planes(n: usize, seed: u64, node: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut planes = Vec::new();
    visit_planes(n, seed, node, |v, w| {
        planes.push((v.to_vec(), w.to_vec()));
        Ok(())
    })
    .expect("collecting planes cannot fail");
    planes
}

fn visit_planes<F>(n: usize, seed: u64, node: usize, mut f: F) -> Result<()>
where
    F: FnMut(&[f64], &[f64]) -> Result<()>,
{
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            v.iter_mut().for_each(|a| *a = 0.0);
            w.iter_mut().for_each(|a| *a = 0.0);
            v[i] = 1.0;
            w[j] = 1.0;
            f(&v, &w)?;
        }
    }
    let mut rng = node_rng(seed, node);
    let mut found = 0;
    while found < RANDOM_PLANES {
        v.iter_mut().for_each(|a| *a = rng.sample(StandardNormal));
        w.iter_mut().for_each(|a| *a = rng.sample(StandardNormal));
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let ww: f64 = w.iter().map(|a| a * a).sum();
        let vw: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        if vv * ww - vw * vw > 1e-6 * vv * ww {
            f(&v, &w)?;
            found += 1;
        }
    }
    Ok(())
}

/// `⟨R(v,w)w,v⟩` as a bilinear form in `v ⊗ w` and the bivector `v ∧ w`,
/// precomputed once per node so that each plane costs `O(n³)`.
struct SectionalForm<'a> {
    n: usize,
    gm: &'a [f64],
    /// `m[(ρ*n + σ)*P + k] = 2 R_{ρσμν}` for the k-th pair `μ < ν`.
    m: Vec<f64>,
    pairs: Vec<(usize, usize)>,
}

impl<'a> SectionalForm<'a> {
    fn new(n: usize, gm: &'a [f64], r: &[f64]) -> Self {
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|mu| (mu + 1..n).map(move |nu| (mu, nu)))
            .collect();
        let p = pairs.len();
        let mut m = vec![0.0; n * n * p];
        for rho in 0..n {
            for sigma in 0..n {
                for (k, &(mu, nu)) in pairs.iter().enumerate() {
                    // lower the first index; R is antisymmetric in μν by storage
                    let lowered: f64 = (0..n)
                        .map(|a| gm[a * n + rho] * r[r_index(n, a, sigma, mu, nu)])
                        .sum();
                    m[(rho * n + sigma) * p + k] = lowered;
                }
            }
        }
        Self { n, gm, m, pairs }
    }

    fn eval(&self, v: &[f64], w: &[f64]) -> Result<f64> {
        let n = self.n;
        let vv = linalg::quad_form(n, self.gm, v, v);
        let ww = linalg::quad_form(n, self.gm, w, w);
        let vw = linalg::quad_form(n, self.gm, v, w);
        let gram = vv * ww - vw * vw;
        if !(gram >= 1e-12 * vv * ww) || gram <= 0.0 {
            return Err(Error::DegeneratePlane { gram });
        }
        let p = self.pairs.len();
        let mut bivector = [0.0; 6];
        let mut heap = Vec::new();
        let b: &mut [f64] = if p <= bivector.len() {
            &mut bivector[..p]
        } else {
            heap.resize(p, 0.0);
            &mut heap
        };
        for (k, &(mu, nu)) in self.pairs.iter().enumerate() {
            b[k] = v[mu] * w[nu] - v[nu] * w[mu];
        }
        let mut num = 0.0;
        for rho in 0..n {
            if v[rho] == 0.0 {
                continue;
            }
            for sigma in 0..n {
                let row = &self.m[(rho * n + sigma) * p..(rho * n + sigma + 1) * p];
                let s: f64 = row.iter().zip(b.iter()).map(|(a, c)| a * c).sum();
                num += v[rho] * w[sigma] * s;
            }
        }
        Ok(num / gram)
    }
}

/// Per-node minimum and maximum sectional curvature over the sampled planes.
/// Values outside the curvature mask are NaN.
pub fn sec_extremes_per_node(
    g: &MetricField,
    riem: &RiemannField,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = g.dim();
    let pairs: Vec<(f64, f64)> = (0..g.lattice().len())
        .into_par_iter()
        .map(|node| {
            if !riem.mask()[node] || !g.mask()[node] {
                return Ok((f64::NAN, f64::NAN));
            }
            let gm = g.matrix_vec(node);
            let form = SectionalForm::new(n, &gm, riem.at(node));
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            visit_planes(n, seed, node, |v, w| {
                let s = form.eval(v, w)?;
                lo = lo.min(s);
                hi = hi.max(s);
                Ok(())
            })?;
            Ok((lo, hi))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

/// `(minSec, maxSec)` over the nodes of `region` within the curvature mask.
pub fn sec_extremes(
    g: &MetricField,
    riem: &RiemannField,
    region: &[bool],
    seed: u64,
) -> Result<(f64, f64)> {
    let restricted = crate::lattice::mask_and(region, riem.mask());
    if !restricted.iter().any(|&b| b) {
        return Err(Error::InvalidParameter(
            "empty region for curvature extremes".into(),
        ));
    }
    let (lo, hi) = sec_extremes_per_node(&g.restrict(&restricted), riem, seed)?;
    let min = lo
        .iter()
        .filter(|v| !v.is_nan())
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let max = hi
        .iter()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok((min, max))
}

/// Ricci tensor per node as an `n×n` row-major block.
#[derive(Clone, Debug)]
pub struct RicciField {
    lattice: Lattice,
    data: Vec<f64>,
    mask: Vec<bool>,
}

impl RicciField {
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let s = self.lattice.dim().pow(2);
        &self.data[node * s..(node + 1) * s]
    }

    /// Euclidean trace `Σ_i Ric_ii`.
    pub fn trace(&self, node: usize) -> f64 {
        let n = self.lattice.dim();
        (0..n).map(|i| self.at(node)[i * n + i]).sum()
    }

    /// Scalar curvature `g^{σν} Ric_{σν}`.
    pub fn scalar(&self, g: &MetricField, node: usize) -> f64 {
        let n = self.lattice.dim();
        let mut ginv = vec![0.0; n * n];
        if linalg::inverse(n, &g.matrix_vec(node), &mut ginv).is_none() {
            return f64::NAN;
        }
        ginv.iter().zip(self.at(node)).map(|(a, b)| a * b).sum()
    }
}

pub fn ricci(riem: &RiemannField) -> RicciField {
    let n = riem.lattice().dim();
    let mut data = vec![0.0; riem.lattice().len() * n * n];
    for node in 0..riem.lattice().len() {
        if !riem.mask()[node] {
            continue;
        }
        let r = riem.at(node);
        for s in 0..n {
            for nu in 0..n {
                data[node * n * n + s * n + nu] =
                    (0..n).map(|mu| r[r_index(n, mu, s, mu, nu)]).sum();
            }
        }
    }
    RicciField {
        lattice: riem.lattice().clone(),
        data,
        mask: riem.mask().to_vec(),
    }
}

/// Per-node curvature summary.
#[derive(Clone, Debug)]
pub struct CurvatureReport {
    pub mask: Vec<bool>,
    pub min_sec: Vec<f64>,
    pub max_sec: Vec<f64>,
    pub ricci_trace: Vec<f64>,
    pub scalar: Vec<f64>,
}

pub fn curvature_report(g: &MetricField, seed: u64) -> Result<(RiemannField, CurvatureReport)> {
    let riem = riemann(g)?;
    let (min_sec, max_sec) = sec_extremes_per_node(g, &riem, seed)?;
    let ric = ricci(&riem);
    let len = g.lattice().len();
    let mut ricci_trace = vec![f64::NAN; len];
    let mut scalar = vec![f64::NAN; len];
    for node in 0..len {
        if riem.mask()[node] {
            ricci_trace[node] = ric.trace(node);
            scalar[node] = ric.scalar(g, node);
        }
    }
    let report = CurvatureReport {
        mask: riem.mask().to_vec(),
        min_sec,
        max_sec,
        ricci_trace,
        scalar,
    };
    Ok((riem, report))
}
