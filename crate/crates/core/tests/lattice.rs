use mollify::lattice::{
    differentiate, read_metric_field, read_scalar_field, write_field, Field, Lattice, MetricField,
    ScalarField,
};
use proptest::prelude::*;

fn trig(lattice: &Lattice, a: f64, b: f64) -> ScalarField {
    ScalarField::sample(lattice, |x| (a * x[0]).sin() * (b * x[1]).cos()).unwrap()
}

/// Worst error of every first and second partial of `sin(x)cos(2y)` over
/// the nodes of the box `|x|∞ ≤ 1/2`, which are shared by all refinements.
fn derivative_errors(m: usize) -> Vec<f64> {
    let lattice = Lattice::new(2, 1.0, m).unwrap();
    let jet = differentiate(&trig(&lattice, 1.0, 2.0), 2).unwrap();
    let exact: [(&[usize], fn(f64, f64) -> f64); 5] = [
        (&[0], |x, y| x.cos() * (2.0 * y).cos()),
        (&[1], |x, y| -2.0 * x.sin() * (2.0 * y).sin()),
        (&[0, 0], |x, y| -x.sin() * (2.0 * y).cos()),
        (&[0, 1], |x, y| -2.0 * x.cos() * (2.0 * y).sin()),
        (&[1, 1], |x, y| -4.0 * x.sin() * (2.0 * y).cos()),
    ];
    exact
        .iter()
        .map(|(axes, f)| {
            let block = &jet.partial(axes)[0];
            let mut worst = 0.0f64;
            for node in 0..lattice.len() {
                let x = lattice.point_vec(node);
                if x[0].abs() <= 0.5 + 1e-12 && x[1].abs() <= 0.5 + 1e-12 {
                    assert!(jet.mask()[node]);
                    worst = worst.max((block[node] - f(x[0], x[1])).abs());
                }
            }
            worst
        })
        .collect()
}

#[test]
fn derivatives_converge_at_second_order() {
    let errs: Vec<Vec<f64>> = [21, 41, 81].iter().map(|&m| derivative_errors(m)).collect();
    for k in 0..errs[0].len() {
        for w in errs.windows(2) {
            let order = (w[0][k] / w[1][k]).log2();
            assert!((1.8..=2.2).contains(&order), "partial {k}: order {order}");
        }
    }
}

#[test]
fn serialization_round_trips_scalar_fields() {
    let lattice = Lattice::new(3, 0.7, 7).unwrap();
    let f = ScalarField::sample(&lattice, |x| x[0].exp() - x[1] * x[2] / 3.0).unwrap();
    let f = f.restrict(&lattice.ball_mask(0.6));
    let mut buf = Vec::new();
    write_field(&f, &mut buf).unwrap();
    let g = read_scalar_field(buf.as_slice()).unwrap();
    assert_eq!(g.mask(), f.mask());
    for node in 0..lattice.len() {
        if f.mask()[node] {
            assert_eq!(f.values()[node].to_bits(), g.values()[node].to_bits());
        }
    }
}

#[test]
fn metric_file_rejects_scalar_payload() {
    let lattice = Lattice::new(2, 1.0, 5).unwrap();
    let mut buf = Vec::new();
    write_field(&ScalarField::constant(&lattice, 2.0), &mut buf).unwrap();
    assert!(read_metric_field(buf.as_slice()).is_err());
}

fn wave() -> impl Strategy<Value = (f64, f64)> {
    (-3.0..3.0f64, -3.0..3.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn differentiation_is_linear(
        (a1, b1) in wave(),
        (a2, b2) in wave(),
        ca in -5.0..5.0f64,
        cb in -5.0..5.0f64,
    ) {
        let lattice = Lattice::new(2, 1.0, 15).unwrap();
        let f = trig(&lattice, a1, b1);
        let g = trig(&lattice, a2, b2);
        let combo = ScalarField::linear_combination(ca, &f, cb, &g).unwrap();
        let (jf, jg, jc) = (
            differentiate(&f, 2).unwrap(),
            differentiate(&g, 2).unwrap(),
            differentiate(&combo, 2).unwrap(),
        );
        prop_assert_eq!(jc.mask(), jf.mask());
        for counts in jc.multi_indices() {
            let (bc, bf, bg) = (
                &jc.block(counts).unwrap()[0],
                &jf.block(counts).unwrap()[0],
                &jg.block(counts).unwrap()[0],
            );
            for node in 0..lattice.len() {
                if jc.mask()[node] {
                    let expect = ca * bf[node] + cb * bg[node];
                    let scale = 1.0 + ca.abs() * bf[node].abs() + cb.abs() * bg[node].abs();
                    prop_assert!((bc[node] - expect).abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn output_masks_shrink(
        radius in 0.2..1.5f64,
        order in 0usize..3,
        m in prop::sample::select(vec![9usize, 11, 17]),
    ) {
        let lattice = Lattice::new(2, 1.0, m).unwrap();
        let input = MetricField::identity(&lattice).restrict(&lattice.ball_mask(radius));
        // a mask too thin for the stencil is rejected rather than emptied
        let Ok(jet) = differentiate(&input, order) else { return Ok(()) };
        for (out, inp) in jet.mask().iter().zip(input.mask()) {
            prop_assert!(!out || *inp);
        }
        let eroded = lattice.erode(input.mask(), 1);
        for (out, inp) in eroded.iter().zip(input.mask()) {
            prop_assert!(!out || *inp);
        }
    }

    #[test]
    fn mixed_partials_are_symmetric(a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let lattice = Lattice::new(3, 1.0, 9).unwrap();
        let f = ScalarField::sample(&lattice, |x| (a * x[0] + b * x[1] * x[2]).sin()).unwrap();
        let jet = differentiate(&f, 2).unwrap();
        prop_assert_eq!(&jet.partial(&[0, 2])[0], &jet.partial(&[2, 0])[0]);
        prop_assert_eq!(&jet.partial(&[1, 2])[0], &jet.partial(&[2, 1])[0]);
    }
}
