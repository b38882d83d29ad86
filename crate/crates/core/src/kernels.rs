//! Bump mollifiers, their lattice taps, and the discrete mollification
//! operator `P_t f = φ_t * f`.
//!
//! The kernel is the tensor product of the 1-D profile `exp(-1/(1-s²))`,
//! normalized to unit mass. Lattice taps are renormalized to sum to one, which
//! makes every output value a convex combination of input values: constants are
//! fixed points and the supremum never grows.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{differentiate, Field, ScalarField};

/// The standard one-dimensional bump, supported on `(-1, 1)`.
pub fn bump_profile(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Trapezoid rule for the profile integral. The integrand is flat to all
/// orders at ±1, so the rule converges faster than any power of the spacing.
fn profile_integral(intervals: usize) -> f64 {
    let h = 2.0 / intervals as f64;
    (1..intervals)
        .map(|i| bump_profile(-1.0 + i as f64 * h))
        .sum::<f64>()
        * h
}

const CONSTRUCTION_INTERVALS: usize = 1 << 14;

#[derive(Clone, Debug)]
pub struct BumpKernel {
    n: usize,
    profile_mass: f64,
    normalization: f64,
}

impl BumpKernel {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "kernel dimension must be positive".into(),
            ));
        }
        let profile_mass = profile_integral(CONSTRUCTION_INTERVALS);
        Ok(Self {
            n,
            profile_mass,
            normalization: profile_mass.powi(-(n as i32)),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// The constant `c` with `∫ c·∏ profile(x_k) dx = 1`.
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn profile_mass(&self) -> f64 {
        self.profile_mass
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.normalization * x.iter().map(|&s| bump_profile(s)).product::<f64>()
    }

    /// Kernel mass by tensor trapezoid quadrature with `intervals` per axis.
    pub fn mass(&self, intervals: usize) -> f64 {
        self.normalization * profile_integral(intervals).powi(self.n as i32)
    }
}

/// `φ_t` sampled at lattice offsets, as separable renormalized 1-D taps.
#[derive(Clone, Debug)]
pub struct ScaledKernel {
    base: BumpKernel,
    t: f64,
    h: f64,
    radius: usize,
    weights: Vec<f64>,
}

impl ScaledKernel {
    pub fn new(base: &BumpKernel, t: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale t = {t}, spacing h = {h}"
            )));
        }
        if t < 2.0 * h * (1.0 - 1e-12) {
            return Err(Error::KernelUnderResolved { t, h });
        }
        let ratio = t / h;
        let radius = if (ratio - ratio.round()).abs() < 1e-9 {
            ratio.round()
        } else {
            ratio.ceil()
        } as usize;
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| bump_profile((i as f64 - radius as f64) * h / t))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(Self {
            base: base.clone(),
            t,
            h,
            radius,
            weights,
        })
    }

    pub fn scale(&self) -> f64 {
        self.t
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &BumpKernel {
        &self.base
    }

    /// Support radius in nodes, `ceil(t/h)`.
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn taps_per_axis(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn weights_1d(&self) -> &[f64] {
        &self.weights
    }

    /// n-D tap at the given node offset (zero outside the support).
    pub fn tap(&self, offset: &[isize]) -> f64 {
        offset
            .iter()
            .map(|&o| {
                let i = o + self.radius as isize;
                if (0..self.weights.len() as isize).contains(&i) {
                    self.weights[i as usize]
                } else {
                    0.0
                }
            })
            .product()
    }

    pub fn tap_sum(&self) -> f64 {
        self.weights.iter().sum::<f64>().powi(self.dim() as i32)
    }
}

/// Mollifies with the standard bump at scale `t`.
pub fn mollify<F: Field>(field: &F, t: f64) -> Result<F> {
    let lattice = field.lattice();
    let kernel = ScaledKernel::new(&BumpKernel::new(lattice.dim())?, t, lattice.spacing())?;
    convolve(&kernel, field)
}

/// Discrete convolution `φ_t * f`, channel by channel.
///
/// The output is defined where the whole kernel box lies in the input mask.
/// Each separable pass is clamped to the range of the contributing values,
/// which is where the exact convex combination lies.
pub fn convolve<F: Field>(kernel: &ScaledKernel, field: &F) -> Result<F> {
    let lattice = field.lattice();
    if kernel.dim() != lattice.dim() {
        return Err(Error::LatticeMismatch(format!(
            "{}-dimensional kernel on {}-dimensional lattice",
            kernel.dim(),
            lattice.dim()
        )));
    }
    if (kernel.spacing() - lattice.spacing()).abs() > 1e-12 * lattice.spacing() {
        return Err(Error::LatticeMismatch(format!(
            "kernel spacing {} differs from lattice spacing {}",
            kernel.spacing(),
            lattice.spacing()
        )));
    }
    let radius = kernel.radius();
    let taps: Vec<(isize, f64)> = kernel
        .weights_1d()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, &w)| (i as isize - radius as isize, w))
        .collect();

    let mut masks = Vec::with_capacity(lattice.dim());
    let mut valid = field.mask().to_vec();
    for axis in 0..lattice.dim() {
        valid = lattice.erode_axis(&valid, axis, radius);
        masks.push(valid.clone());
    }
    if !valid.iter().any(|&b| b) {
        return Err(Error::ScaleTooLarge(format!(
            "kernel radius {radius} nodes leaves no valid node"
        )));
    }

    let channels = field
        .channels()
        .iter()
        .map(|values| {
            let mut cur = values.clone();
            for (axis, mask) in masks.iter().enumerate() {
                let stride = lattice.stride(axis) as isize;
                cur = (0..cur.len())
                    .into_par_iter()
                    .map(|node| {
                        if !mask[node] {
                            return 0.0;
                        }
                        let mut sum = 0.0;
                        let mut lo = f64::INFINITY;
                        let mut hi = f64::NEG_INFINITY;
                        for &(off, w) in &taps {
                            let v = cur[(node as isize + off * stride) as usize];
                            sum += w * v;
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                        sum.clamp(lo, hi)
                    })
                    .collect();
            }
            cur
        })
        .collect();
    field.with_data(channels, valid)
}

/// `‖∂_axis(P_t f) − P_t(∂_axis f)‖_∞` on the common mask.
///
/// Both sides use the same central stencil for `∂(P_t f)`. When
/// `exact_derivative` is given it is mollified on the right-hand side;
/// otherwise the stencil derivative of `f` is used, and the defect only
/// measures round-off since the two discrete operators commute.
pub fn commutation_defect(
    kernel: &ScaledKernel,
    f: &ScalarField,
    axis: usize,
    exact_derivative: Option<&ScalarField>,
) -> Result<f64> {
    let lattice = f.lattice();
    if axis >= lattice.dim() {
        return Err(Error::InvalidParameter(format!("axis {axis} out of range")));
    }
    let smoothed = convolve(kernel, f)?;
    let lhs_jet = differentiate(&smoothed, 1)?;
    let lhs = &lhs_jet.partial(&[axis])[0];

    let derivative = match exact_derivative {
        Some(d) => d.clone(),
        None => {
            let jet = differentiate(f, 1)?;
            ScalarField::from_values(
                lattice,
                jet.partial(&[axis])[0].clone(),
                jet.mask().to_vec(),
            )?
        }
    };
    let rhs = convolve(kernel, &derivative)?;
    let mut worst = 0.0f64;
    for node in 0..lattice.len() {
        if lhs_jet.mask()[node] && rhs.mask()[node] {
            worst = worst.max((lhs[node] - rhs.values()[node]).abs());
        }
    }
    Ok(worst)
}

/// Quadrature `L^q` norm of the scaled kernel from its lattice taps.
pub fn kernel_lq_norm(kernel: &ScaledKernel, q: f64) -> Result<f64> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "exponent q = {q} must lie in (1, ∞)"
        )));
    }
    let h = kernel.spacing();
    let per_axis: f64 = kernel
        .weights_1d()
        .iter()
        .map(|&w| (w / h).powf(q) * h)
        .sum();
    Ok(per_axis.powf(kernel.dim() as f64 / q))
}

/// The analytic bound `2^{n/q} t^{-n/p}` with `1/p + 1/q = 1`.
pub fn kernel_lq_bound(n: usize, t: f64, q: f64) -> f64 {
    let p = q / (q - 1.0);
    2f64.powf(n as f64 / q) * t.powf(-(n as f64) / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Lattice, MetricField};

    fn simpson_profile_mass(intervals: usize) -> f64 {
        let h = 2.0 / intervals as f64;
        let mut s = 0.0;
        for i in 0..=intervals {
            let w = if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * bump_profile(-1.0 + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn profile_peaks_at_zero_and_vanishes_at_edges() {
        assert_eq!(bump_profile(1.0), 0.0);
        assert_eq!(bump_profile(-1.0), 0.0);
        for i in 1..100 {
            let s = i as f64 / 100.0;
            assert!(bump_profile(s) < bump_profile(0.0));
            assert_eq!(bump_profile(s), bump_profile(-s));
        }
    }

    #[test]
    fn two_dimensional_kernel_has_unit_mass() {
        let k = BumpKernel::new(2).unwrap();
        assert_eq!(
            k.value(&[0.0, 0.0]),
            k.normalization() * bump_profile(0.0).powi(2)
        );
        // independent rule: Simpson at a different resolution
        let mass = k.normalization() * simpson_profile_mass(20_000).powi(2);
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
        assert!((k.mass(CONSTRUCTION_INTERVALS) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_is_even() {
        let k = BumpKernel::new(3).unwrap();
        for x in [[0.1, -0.4, 0.7], [0.9, 0.0, -0.2], [-0.5, 0.5, 0.25]] {
            let neg = [-x[0], -x[1], -x[2]];
            assert_eq!(k.value(&x), k.value(&neg));
        }
    }

    #[test]
    fn four_spacings_gives_nine_taps() {
        let k = ScaledKernel::new(&BumpKernel::new(1).unwrap(), 0.4, 0.1).unwrap();
        assert_eq!(k.taps_per_axis(), 9);
        let w = k.weights_1d();
        for i in 0..9 {
            assert_eq!(w[i], w[8 - i]);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn halving_scale_halves_taps() {
        let base = BumpKernel::new(2).unwrap();
        let wide = ScaledKernel::new(&base, 0.8, 0.05).unwrap();
        let narrow = ScaledKernel::new(&base, 0.4, 0.05).unwrap();
        assert_eq!(wide.radius(), 16);
        assert_eq!(narrow.radius(), 8);
        assert!(ScaledKernel::new(&base, 0.09, 0.05).is_err());
    }

    #[test]
    fn constants_are_fixed_points() {
        let l = Lattice::new(2, 1.0, 21).unwrap();
        let f = ScalarField::constant(&l, 0.3);
        let out = mollify(&f, 0.2).unwrap();
        assert_eq!(crate::lattice::mask_count(out.mask()), 17 * 17);
        assert!(out.valid_values().all(|v| v == 0.3));
    }

    #[test]
    fn supremum_never_grows() {
        let l = Lattice::new(2, 1.0, 41).unwrap();
        let f =
            ScalarField::sample(&l, |x| (7.0 * x[0]).sin() * (3.0 * x[1]).cos() + x[0]).unwrap();
        let out = mollify(&f, 0.15).unwrap();
        assert!(out.max_valid().unwrap() <= f.max_valid().unwrap());
        assert!(out.min_valid().unwrap() >= f.min_valid().unwrap());
    }

    #[test]
    fn sine_mollification_error_below_lipschitz_bound() {
        let l = Lattice::new(2, 1.0, 81).unwrap();
        let f = ScalarField::sample(&l, |x| x[0].sin()).unwrap();
        let out = mollify(&f, 0.1).unwrap();
        let mut err = 0.0f64;
        for node in 0..l.len() {
            if out.mask()[node] {
                err = err.max((out.values()[node] - f.values()[node]).abs());
            }
        }
        assert!(err < 0.1, "error {err}");
    }

    #[test]
    fn too_wide_kernel_leaves_nothing() {
        let l = Lattice::new(2, 1.0, 11).unwrap();
        let f = ScalarField::constant(&l, 1.0);
        assert!(matches!(mollify(&f, 1.2), Err(Error::ScaleTooLarge(_))));
    }

    #[test]
    fn affine_and_constant_commute_exactly() {
        let l = Lattice::new(2, 1.0, 41).unwrap();
        let k = ScaledKernel::new(&BumpKernel::new(2).unwrap(), 0.2, l.spacing()).unwrap();
        let f = ScalarField::sample(&l, |x| 2.0 * x[0] - x[1] + 0.5).unwrap();
        let df = ScalarField::constant(&l, 2.0);
        assert!(commutation_defect(&k, &f, 0, Some(&df)).unwrap() < 1e-13);
        let c = ScalarField::constant(&l, 4.0);
        assert_eq!(
            commutation_defect(&k, &c, 1, Some(&ScalarField::constant(&l, 0.0))).unwrap(),
            0.0
        );
        assert!(commutation_defect(&k, &f, 1, None).unwrap() < 1e-13);
    }

    #[test]
    fn sine_commutation_defect_is_second_order() {
        let defect = |m: usize| {
            let l = Lattice::new(2, 1.0, m).unwrap();
            let k = ScaledKernel::new(&BumpKernel::new(2).unwrap(), 0.1, l.spacing()).unwrap();
            let f = ScalarField::sample(&l, |x| x[0].sin()).unwrap();
            let df = ScalarField::sample(&l, |x| x[0].cos()).unwrap();
            (
                l.spacing(),
                commutation_defect(&k, &f, 0, Some(&df)).unwrap(),
            )
        };
        let (h1, d1) = defect(41);
        let (h2, d2) = defect(81);
        let (h3, d3) = defect(161);
        let order = crate::fit::loglog_fit(&[h1, h2, h3], &[d1, d2, d3])
            .unwrap()
            .slope;
        assert!((1.8..=2.2).contains(&order), "order {order}");
        // central difference of sin: error ≈ h²/6 · max|cos|
        assert!(d2 <= h2 * h2 / 6.0 * 1.05, "defect {d2}");
    }

    #[test]
    fn lq_norm_respects_bound_and_scaling() {
        let base = BumpKernel::new(2).unwrap();
        let h = 0.01;
        for &q in &[1.5, 2.0, 4.0] {
            let p = q / (q - 1.0);
            let a = kernel_lq_norm(&ScaledKernel::new(&base, 0.2, h).unwrap(), q).unwrap();
            let b = kernel_lq_norm(&ScaledKernel::new(&base, 0.1, h).unwrap(), q).unwrap();
            assert!(a <= kernel_lq_bound(2, 0.2, q) * (1.0 + 1e-9));
            let expected = 2f64.powf(2.0 / p);
            assert!((b / a / expected - 1.0).abs() < 0.05);
        }
        let near_one =
            kernel_lq_norm(&ScaledKernel::new(&base, 0.2, h).unwrap(), 1.0 + 1e-9).unwrap();
        assert!((near_one - 1.0).abs() < 1e-6);
        assert!(kernel_lq_norm(&ScaledKernel::new(&base, 0.2, h).unwrap(), 1.0).is_err());
    }

    #[test]
    fn positive_definite_metrics_stay_positive_definite() {
        let l = Lattice::new(2, 1.0, 41).unwrap();
        let g = MetricField::sample(&l, |x, g| {
            let s = (5.0 * x[0] * x[1]).sin();
            g[0] = 1.0 + 0.9 * s;
            g[1] = 0.3 * (3.0 * x[0]).cos();
            g[2] = g[1];
            g[3] = 1.0 - 0.5 * s;
        })
        .unwrap();
        let out = mollify(&g, 0.2).unwrap();
        let mut m = [0.0; 4];
        for node in 0..l.len() {
            if out.mask()[node] {
                out.matrix_at(node, &mut m);
                assert!(crate::linalg::sym_eigenvalues(2, &m)[0] > 0.0);
            }
        }
    }
}
