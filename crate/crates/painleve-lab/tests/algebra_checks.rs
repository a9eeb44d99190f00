use num_complex::Complex64;
use painleve_lab::algebra::{
    c, mat_commutator, poly_roots, r, series_gauge_transform, Mat, PuiseuxMatrixSeries,
};
use proptest::prelude::*;

fn mat2(a: f64, b: f64, d: f64, e: f64) -> Mat {
    Mat::from_rows(&[&[c(a, 0.0), c(b, 0.0)], &[c(d, 0.0), c(e, 0.0)]])
}

#[test]
fn commutator_of_ladder_matrices_is_diagonal() {
    let up = mat2(0.0, 1.0, 0.0, 0.0);
    let down = mat2(0.0, 0.0, 1.0, 0.0);
    let k = mat_commutator(&up, &down);
    assert!(k.max_abs_diff(&Mat::diag(&[c(1.0, 0.0), c(-1.0, 0.0)])) < 1e-15);
}

#[test]
fn gauge_of_zero_series_is_minus_log_derivative() {
    // diagonal gauge diag(z^{1/2}, 1) applied to the zero series
    let zero = PuiseuxMatrixSeries::new(2, 2, r(3, 1));
    let t = painleve_lab::htl::shear(&zero, &[r(1, 2), r(0, 1)]);
    // expected: -diag(1/(2z), 0)
    let got = t.coeff(r(-1, 1));
    let mut expected = Mat::zeros(2, 2);
    expected[(0, 0)] = c(-0.5, 0.0);
    assert!(got.max_abs_diff(&expected) < 1e-12);
    for (e, m) in t.terms.iter() {
        if *e != r(-1, 1) {
            assert!(m.norm_inf() < 1e-12, "spurious term at {e}");
        }
    }
}

#[test]
fn char_poly_is_monic_descending_and_roots_match() {
    let m = Mat::from_rows(&[
        &[c(2.0, 0.0), c(1.0, 0.0)],
        &[c(0.0, 0.0), c(-3.0, 0.0)],
    ]);
    let cp = m.char_poly();
    assert_eq!(cp.len(), 3);
    assert!((cp[0] - c(1.0, 0.0)).norm() < 1e-12);
    let mut roots = poly_roots(&cp);
    roots.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
    assert!((roots[0] - c(-3.0, 0.0)).norm() < 1e-9);
    assert!((roots[1] - c(2.0, 0.0)).norm() < 1e-9);
}

fn arb_mat2() -> impl Strategy<Value = Mat> {
    proptest::collection::vec(-1.0f64..1.0, 8).prop_map(|v| {
        Mat::from_rows(&[
            &[c(v[0], v[1]), c(v[2], v[3])],
            &[c(v[4], v[5]), c(v[6], v[7])],
        ])
    })
}

fn arb_series2() -> impl Strategy<Value = PuiseuxMatrixSeries> {
    proptest::collection::vec(arb_mat2(), 3).prop_map(|ms| {
        let mut s = PuiseuxMatrixSeries::new(2, 2, r(4, 1));
        for (i, m) in ms.into_iter().enumerate() {
            s.add_term(r(2 * i as i64 - 3, 2), m);
        }
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn commutator_antisymmetric(a in arb_mat2(), b in arb_mat2()) {
        let ab = mat_commutator(&a, &b);
        let ba = mat_commutator(&b, &a);
        prop_assert!(ab.max_abs_diff(&ba.scale(c(-1.0, 0.0))) < 1e-12);
    }

    #[test]
    fn commutator_bilinear(a in arb_mat2(), b in arb_mat2(), d in arb_mat2(), s in -2.0f64..2.0) {
        let lhs = mat_commutator(&(&a.scale(c(s, 0.0)) + &b), &d);
        let rhs = &mat_commutator(&a, &d).scale(c(s, 0.0)) + &mat_commutator(&b, &d);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn trace_of_commutator_vanishes(a in arb_mat2(), b in arb_mat2()) {
        prop_assert!(mat_commutator(&a, &b).trace().norm() < 1e-12);
    }

    #[test]
    fn series_multiplication_associative(
        a in arb_series2(), b in arb_series2(), d in arb_series2()
    ) {
        let lhs = a.mul(&b).mul(&d);
        let rhs = a.mul(&b.mul(&d));
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
    }

    #[test]
    fn gauge_round_trip_restores_series(a in arb_series2(), g in arb_mat2()) {
        // ensure the constant gauge is invertible
        let gg = &g + &Mat::identity(2).scale(c(3.0, 0.0));
        let mut p = PuiseuxMatrixSeries::new(2, 1, r(6, 1));
        p.add_term(r(0, 1), gg.clone());
        let pinv_mat = gg.inverse().unwrap();
        let mut pinv = PuiseuxMatrixSeries::new(2, 1, r(6, 1));
        pinv.add_term(r(0, 1), pinv_mat);
        let once = series_gauge_transform(&a, &p).unwrap();
        let back = series_gauge_transform(&once, &pinv).unwrap();
        prop_assert!(back.max_abs_diff(&a) < 1e-10);
    }

    #[test]
    fn eigenvalues_sum_to_trace(a in arb_mat2()) {
        let sum: Complex64 = a.eigenvalues().iter().sum();
        prop_assert!((sum - a.trace()).norm() < 1e-8);
    }
}
