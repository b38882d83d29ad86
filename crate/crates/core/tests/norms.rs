use mollify::lattice::{Lattice, MetricField, ScalarField};
use mollify::linalg;
use mollify::norms::{
    check_n0, harmonic_defect, holder_norm, holder_seminorm, sobolev_norm, DEFAULT_PAIR_BUDGET,
};
use proptest::prelude::*;

/// Largest `‖f‖_{C^{0,α}} / ‖f‖_{W^{1,p}}` measured on the calibration waves
/// below at n = 2, r = 1, m = 41, p = 8, α = 1 − n/p, rounded up.
const EMBEDDING_CONSTANT: f64 = 1.2;

fn calibration_wave(k: usize) -> impl Fn(&[f64]) -> f64 + Sync {
    let a = 0.5 + 0.7 * k as f64;
    let b = 1.3 - 0.4 * k as f64;
    let c = 0.3 * k as f64;
    move |x: &[f64]| (a * x[0] + b * x[1] + c).sin() + 0.2 * (b * x[0] * x[1]).cos()
}

fn embedding_ratio(f: &ScalarField, p: f64) -> f64 {
    let alpha = 1.0 - 2.0 / p;
    let c0a = holder_norm(f, 0, alpha, DEFAULT_PAIR_BUDGET)
        .unwrap()
        .total();
    let w1p = sobolev_norm(f, 1, p, 1.0).unwrap().total();
    c0a / w1p
}

#[test]
fn sobolev_embedding_constant_is_stable() {
    let lattice = Lattice::new(2, 1.0, 41).unwrap();
    for k in 0..10 {
        let f = ScalarField::sample(&lattice, calibration_wave(k)).unwrap();
        let ratio = embedding_ratio(&f, 8.0);
        assert!(ratio <= EMBEDDING_CONSTANT, "wave {k}: {ratio}");
    }
}

#[test]
fn square_root_cusp_has_unit_seminorm() {
    let lattice = Lattice::new(2, 1.0, 41).unwrap();
    let f = ScalarField::sample(&lattice, |x| x[0].abs().sqrt()).unwrap();
    let s = holder_seminorm(&f, 0.5, DEFAULT_PAIR_BUDGET).unwrap();
    assert!((0.95..=1.05).contains(&s), "{s}");
}

#[test]
fn l2_norm_of_constant_counts_nodes() {
    for (n, m) in [(2, 21), (3, 11)] {
        let lattice = Lattice::new(n, 0.5, m).unwrap();
        let f = ScalarField::constant(&lattice, 3.0);
        let got = sobolev_norm(&f, 0, 2.0, 0.5).unwrap().per_order[0];
        let expect = 3.0 * (m as f64 * lattice.spacing()).powf(n as f64 / 2.0);
        assert!((got - expect).abs() <= 1e-12 * expect, "{got} {expect}");
    }
}

#[test]
fn l2_norm_of_periodic_sine() {
    let m = 41;
    let lattice = Lattice::new(2, 1.0, m).unwrap();
    let f = ScalarField::sample(&lattice, |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
    let got = sobolev_norm(&f, 0, 2.0, 1.0).unwrap().per_order[0];
    // one factor is the exact periodic sum, the other the node count times h
    let expect = (2.0 * m as f64 / (m - 1) as f64).sqrt();
    assert!((got - expect).abs() < 1e-12, "{got} {expect}");
}

#[test]
fn scaled_identity_has_log_bound() {
    let lattice = Lattice::new(3, 1.0, 5).unwrap();
    for c in [0.25, 1.0, 3.0] {
        let g = MetricField::sample(&lattice, |_, out| {
            (0..3).for_each(|i| out[i * 3 + i] = c);
        })
        .unwrap();
        let q = check_n0(&g).unwrap();
        assert!((q - c.ln().abs() / 2.0).abs() < 1e-12, "{c}: {q}");
    }
}

#[test]
fn conformal_plane_coordinates_are_harmonic() {
    // √g g^{ij} = δ^{ij} for a conformal metric in two dimensions, so even the
    // discrete divergence vanishes
    let defect = |m| {
        let lattice = Lattice::new(2, 0.5, m).unwrap();
        let g = MetricField::sample(&lattice, |x, out| {
            let s = 4.0 / (1.0 - x[0] * x[0] - x[1] * x[1]).powi(2);
            out[0] = s;
            out[3] = s;
        })
        .unwrap();
        harmonic_defect(&g).unwrap().sup
    };
    for m in [21, 41] {
        assert!(defect(m) < 1e-12, "{}", defect(m));
    }
}

fn rotation(theta: f64, phi: f64) -> [f64; 9] {
    let (s, c) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    let a = [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0];
    let b = [1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp];
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn full_scan_dominates_sampling(
        a in -4.0..4.0f64,
        b in -4.0..4.0f64,
        alpha in 0.2..1.0f64,
        budget in 200usize..5000,
    ) {
        let lattice = Lattice::new(2, 1.0, 21).unwrap();
        let f = ScalarField::sample(&lattice, |x| (a * x[0]).sin() + (b * x[0] * x[1]).cos()).unwrap();
        let full = holder_seminorm(&f, alpha, DEFAULT_PAIR_BUDGET).unwrap();
        let sampled = holder_seminorm(&f, alpha, budget).unwrap();
        prop_assert!(sampled <= full);
    }

    #[test]
    fn n0_is_invariant_under_rotation(
        d in prop::array::uniform3(0.2..5.0f64),
        off in prop::array::uniform3(-0.15..0.15f64),
        theta in -3.1..3.1f64,
        phi in -3.1..3.1f64,
    ) {
        let mut a = [d[0], off[0], off[1], off[0], d[1], off[2], off[1], off[2], d[2]];
        for i in 0..3 {
            a[i * 3 + i] += 0.5;
        }
        let q = rotation(theta, phi);
        let mut rotated = [0.0; 9];
        linalg::congruence(3, &q, &a, &mut rotated);
        let lattice = Lattice::new(3, 1.0, 5).unwrap();
        let g = MetricField::sample(&lattice, |_, out| out.copy_from_slice(&a)).unwrap();
        let h = MetricField::sample(&lattice, |_, out| out.copy_from_slice(&rotated)).unwrap();
        let (qa, qb) = (check_n0(&g).unwrap(), check_n0(&h).unwrap());
        prop_assert!((qa - qb).abs() <= 1e-12 * (1.0 + qa), "{} {}", qa, qb);
    }

}
