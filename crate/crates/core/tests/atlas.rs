use mollify::atlas::{
    assemble_mollified, check_cover, consistency_defect, default_region, segment_length,
    verify_partition, Atlas, Chart,
};
use mollify::kernels::mollify;
use mollify::lattice::{Field, Lattice};
use mollify::modelzoo::{
    flat, hyperbolic, parse_geometry, perturb, sphere, transition_compatibility,
    validated_reference, Generator,
};
use mollify::norms::check_n0;
use proptest::prelude::*;

const SHIPPED: [&str; 8] = [
    "flat:n=2",
    "flat:n=3",
    "flat-affine:n=2",
    "flat-affine:n=3",
    "sphere:n=2",
    "sphere:n=3,R=0.7",
    "hyperbolic:n=2",
    "hyperbolic:n=3",
];

#[test]
fn shipped_geometries_are_compatible_across_charts() {
    for spec in SHIPPED {
        let g = parse_geometry(spec).unwrap();
        let defect = transition_compatibility(&g, 500, 11);
        assert!(defect < 1e-10, "{spec}: {defect}");
    }
}

#[test]
fn references_validate_at_desk_resolution() {
    for g in [sphere(2, 1.0, 2.5).unwrap(), hyperbolic(2, 0.5).unwrap()] {
        let declared = g.reference_sec.unwrap();
        let got = validated_reference(&g, 81, 1e-3).unwrap().unwrap();
        assert!((got - declared).abs() <= 1e-3, "{}: {got}", g.name);
    }
}

#[test]
fn wrong_reference_is_refused() {
    let mut g = sphere(2, 1.0, 2.5).unwrap();
    g.reference_sec = Some(0.5);
    assert!(validated_reference(&g, 41, 1e-3).is_err());
}

#[test]
fn sphere_partition_is_exact_on_the_cover() {
    let atlas = sphere(2, 1.0, 2.5).unwrap().atlas;
    let report = verify_partition(&atlas, 81).unwrap();
    assert!(report.max_sum_error <= 1e-12, "{}", report.max_sum_error);
    assert_eq!(report.support_violations, 0);
    assert_eq!(report.max_active, 2);
    let cover = check_cover(&atlas, &default_region(&atlas), 41, 1.0).unwrap();
    assert!(cover.covered);
    assert_eq!(cover.n, 2);
}

#[test]
fn single_chart_assembly_is_plain_mollification() {
    let geometry = hyperbolic(2, 0.5).unwrap();
    let samples = geometry.atlas.sample(41).unwrap();
    let assembled = assemble_mollified(&geometry.atlas, &samples, 0.1).unwrap();
    let direct = mollify(&samples[0], 0.1).unwrap();
    let lattice = direct.lattice();
    for node in 0..lattice.len() {
        if assembled[0].mask()[node] && direct.mask()[node] {
            let (a, b) = (assembled[0].matrix_vec(node), direct.matrix_vec(node));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-13);
            }
        }
    }
}

#[test]
fn sphere_charts_agree_after_assembly() {
    let atlas = sphere(2, 1.0, 2.5).unwrap().atlas;
    let samples = atlas.sample(81).unwrap();
    let assembled = assemble_mollified(&atlas, &samples, 2.5 / 8.0).unwrap();
    let (defect, compared) = consistency_defect(&atlas, &assembled, 4);
    assert!(compared > 1000);
    assert!(defect < 1e-3, "{defect}");
}

#[test]
fn perturbation_leaves_the_outside_untouched() {
    let base = flat(2).unwrap();
    let (center, support) = ([0.2, -0.1], 0.3);
    let p = perturb(&base, 0.4, 0.6, &center, support).unwrap();
    let lattice = Lattice::new(2, 1.0, 41).unwrap();
    let g0 = base.atlas.charts()[0].generator.sample(&lattice).unwrap();
    let g1 = p.atlas.charts()[0].generator.sample(&lattice).unwrap();
    assert_eq!(g0.mask(), g1.mask());
    let mut changed = 0;
    for node in 0..lattice.len() {
        let x = lattice.point_vec(node);
        let d = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
        if d >= support {
            assert_eq!(g0.matrix_vec(node), g1.matrix_vec(node));
        } else if g0.matrix_vec(node) != g1.matrix_vec(node) {
            changed += 1;
        }
    }
    assert!(changed > 0);
}

fn spd(c: [f64; 3]) -> Vec<f64> {
    // L Lᵀ with a positive diagonal
    let l = [c[0].exp(), 0.0, c[1], c[2].exp()];
    vec![
        l[0] * l[0],
        l[0] * l[2],
        l[0] * l[2],
        l[2] * l[2] + l[3] * l[3],
    ]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn partition_ratios_ignore_common_scale(
        x in prop::array::uniform2(-1.2..1.2f64),
        k in -6i32..6,
    ) {
        let atlas = sphere(2, 1.0, 2.5).unwrap().atlas;
        let (weights, total) = atlas.partition(0, &x);
        prop_assume!(total > 0.0);
        let bumps: Vec<f64> = (0..2).map(|i| atlas.bump_in(i, 0, &x)).collect();
        let c = 2f64.powi(k);
        let scaled_total: f64 = bumps.iter().map(|b| c * b).sum();
        for (w, b) in weights.iter().zip(&bumps) {
            prop_assert_eq!(*w, c * b / scaled_total);
        }
    }

    #[test]
    fn constant_metric_lengths_obey_distance_comparison(
        c in prop::array::uniform3(-0.8..0.8f64),
        a in prop::array::uniform2(-0.9..0.9f64),
        b in prop::array::uniform2(-0.9..0.9f64),
    ) {
        let g = spd(c);
        let atlas = Atlas::new(2, vec![Chart::new("c", 1.0, Generator::Constant(g.clone()))], vec![]).unwrap();
        let field = atlas.sample(5).unwrap().remove(0);
        let q = check_n0(&field).unwrap();
        let euclid = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let len = segment_length(&Generator::Constant(g), &a, &b, 16);
        prop_assert!(len >= (-q).exp() * euclid - 1e-3);
        prop_assert!(len <= q.exp() * euclid + 1e-3);
    }

    #[test]
    fn curved_chart_lengths_obey_distance_comparison(
        a in prop::array::uniform2(-0.35..0.35f64),
        b in prop::array::uniform2(-0.35..0.35f64),
    ) {
        let geometry = hyperbolic(2, 0.5).unwrap();
        let field = geometry.atlas.sample(41).unwrap().remove(0);
        let q = check_n0(&field).unwrap();
        let euclid = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let len = segment_length(&Generator::Poincare, &a, &b, 200);
        prop_assert!(len >= (-q).exp() * euclid - 1e-3);
        prop_assert!(len <= q.exp() * euclid + 1e-3);
    }
}
