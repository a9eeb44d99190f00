mod common;

use num_complex::Complex64;
use painleve_lab::algebra::{c, r, Mat, PuiseuxMatrixSeries};
use painleve_lab::htl::{
    block_diagonalize, block_diagonalize_with_gauge, classify_system, htl_reduce, shear,
    spectral_type, HTLForm,
};
use painleve_lab::lax::build_lax;
use painleve_lab::painleve::Variant;
use rand::Rng;

fn series_from(terms: Vec<(i64, i64, Mat)>, trunc: i64) -> PuiseuxMatrixSeries {
    let dim = terms[0].2.rows;
    let mut s = PuiseuxMatrixSeries::new(dim, 1, r(trunc, 1));
    for (num, den, m) in terms {
        s.add_term(r(num, den), m);
    }
    s
}

fn diag4(a: f64, b: f64, d: f64, e: f64) -> Mat {
    Mat::diag(&[c(a, 0.0), c(b, 0.0), c(d, 0.0), c(e, 0.0)])
}

fn cdiag4(v: [Complex64; 4]) -> Mat {
    Mat::diag(&v)
}

/// Block with -I in the upper-right, scaled residue below: the standard
/// ramified 4x4 example with a rank-2 nilpotent leading term.
fn ramified_example(th1: f64, th2: f64) -> PuiseuxMatrixSeries {
    let mut a0 = Mat::zeros(4, 4);
    a0[(0, 2)] = c(-1.0, 0.0);
    a0[(1, 3)] = c(-1.0, 0.0);
    let mut a1 = Mat::zeros(4, 4);
    a1[(0, 0)] = c(th1, 0.0);
    a1[(1, 1)] = c(th2, 0.0);
    a1[(2, 0)] = c(-1.0, 0.0);
    a1[(3, 1)] = c(-1.0, 0.0);
    series_from(vec![(-2, 1, a0), (-1, 1, a1)], 3)
}

#[test]
fn shear_produces_half_integer_leading_block() {
    let a = ramified_example(0.31, -0.47);
    let exps = [r(0, 1), r(0, 1), r(1, 2), r(1, 2)];
    let sheared = shear(&a, &exps);
    assert_eq!(sheared.valuation().unwrap(), r(-3, 2));
    let lead = sheared.coeff(r(-3, 2));
    let mut expected = Mat::zeros(4, 4);
    expected[(0, 2)] = c(-1.0, 0.0);
    expected[(1, 3)] = c(-1.0, 0.0);
    expected[(2, 0)] = c(-1.0, 0.0);
    expected[(3, 1)] = c(-1.0, 0.0);
    assert!(lead.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn shear_with_equal_exponents_shifts_residue_only() {
    // a term -(1/4) I / z is removed exactly by the z^{-1/4} scalar shear
    let a = series_from(vec![(-1, 1, Mat::identity(2).scale(c(-0.25, 0.0)))], 2);
    let sheared = shear(&a, &[r(-1, 4), r(-1, 4)]);
    assert!(sheared.valuation().is_none() || sheared.coeff(r(-1, 1)).norm_inf() < 1e-12);
}

#[test]
fn ramified_example_reduces_to_half_integer_level() {
    let f = htl_reduce(&ramified_example(0.31, -0.47)).unwrap();
    assert_eq!(f.levels, vec![r(3, 2)]);
    assert_eq!(f.d, 2);
    // leading diagonal has eigenvalues +1, +1, -1, -1 in some order
    let mut vals: Vec<f64> = (0..4).map(|i| f.level_matrices[0][(i, i)].re).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (v, want) in vals.iter().zip([-1.0, -1.0, 1.0, 1.0]) {
        assert!((v - want).abs() < 1e-7, "leading diag {vals:?}");
    }
    assert!(f.gauge_defect < 1e-8, "gauge defect {}", f.gauge_defect);
    assert_eq!(spectral_type(&f).text, "(11)_2");
}

#[test]
fn nilpotent_two_by_two_becomes_ramified() {
    let mut a0 = Mat::zeros(2, 2);
    a0[(0, 1)] = c(1.0, 0.0);
    let mut a1 = Mat::zeros(2, 2);
    a1[(0, 0)] = c(0.4, 0.1);
    a1[(0, 1)] = c(-0.3, 0.0);
    a1[(1, 0)] = c(0.9, -0.2);
    a1[(1, 1)] = c(0.2, 0.0);
    let a = series_from(vec![(-2, 1, a0), (-1, 1, a1)], 3);
    let f = htl_reduce(&a).unwrap();
    assert_eq!(f.d, 2);
    assert_eq!(f.levels, vec![r(3, 2)]);
    assert!(f.gauge_defect < 1e-8, "gauge defect {}", f.gauge_defect);
}

fn direct_form(
    levels: Vec<(i64, i64)>,
    level_diags: Vec<Mat>,
    residues: [f64; 4],
    d: i64,
) -> HTLForm {
    HTLForm {
        levels: levels.into_iter().map(|(n, m)| r(n, m)).collect(),
        level_matrices: level_diags,
        residue: diag4(residues[0], residues[1], residues[2], residues[3]),
        d,
        gauge_defect: 0.0,
    }
}

#[test]
fn spectral_type_catalog_of_example_forms() {
    // residues equal modulo 1/2 within the orbit
    let f1 = direct_form(
        vec![(3, 2)],
        vec![diag4(1.0, 1.0, -1.0, -1.0)],
        [0.3, 0.8, 0.3, 0.8],
        2,
    );
    assert_eq!(spectral_type(&f1).text, "(2)_2");

    let f2 = direct_form(
        vec![(3, 2)],
        vec![diag4(1.0, -1.0, 2.0, -2.0)],
        [0.1, 0.2, 0.3, 0.4],
        2,
    );
    assert_eq!(spectral_type(&f2).text, "(1)_2(1)_2");

    let f3 = direct_form(
        vec![(3, 2)],
        vec![diag4(1.0, -1.0, 0.0, 0.0)],
        [0.1, 0.2, 0.25, 0.55],
        2,
    );
    assert_eq!(spectral_type(&f3).text, "(1)_2 11");

    let om = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    let f4 = direct_form(
        vec![(4, 3)],
        vec![cdiag4([c(1.0, 0.0), om, om * om, c(0.0, 0.0)])],
        [0.1, 0.2, 0.3, 0.4],
        3,
    );
    assert_eq!(spectral_type(&f4).text, "(1)_3 1");

    let f5 = direct_form(
        vec![(5, 4)],
        vec![cdiag4([c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)])],
        [0.1, 0.2, 0.3, 0.4],
        4,
    );
    assert_eq!(spectral_type(&f5).text, "(1)_4");
}

#[test]
fn spectral_type_nested_unramified_form() {
    let f = direct_form(
        vec![(3, 1), (2, 1)],
        vec![
            diag4(0.7, 0.7, -0.4, -0.4),
            diag4(0.2, 0.2, 0.9, -0.6),
        ],
        [0.11, 0.42, 0.3, 0.4],
        1,
    );
    assert_eq!(spectral_type(&f).text, "((11))((1)(1))");
}

#[test]
fn block_diagonalize_splits_eigenvalue_clusters() {
    let mut rng = common::rng(77);
    let lead = diag4(1.0, 1.0, 0.0, 0.0);
    let mut tail = Mat::zeros(4, 4);
    for i in 0..4 {
        for j in 0..4 {
            tail[(i, j)] = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    }
    let a = series_from(vec![(-2, 1, lead), (-1, 1, tail)], 4);
    let (blocks, acc, acc_inv) = block_diagonalize_with_gauge(&a, 6).unwrap();
    assert_eq!(blocks.len(), 2);
    assert_eq!(blocks[0].dim, 2);
    assert_eq!(blocks[1].dim, 2);
    // reconstruction: gauge applied to input must be the direct sum
    let t = acc_inv.mul(&a.mul(&acc)).sub(&acc_inv.mul(&acc.derivative()));
    for (e, m) in t.terms.iter() {
        if *e > r(3, 1) {
            continue;
        }
        let mut direct = Mat::zeros(4, 4);
        for (bi, blk) in blocks.iter().enumerate() {
            let off = 2 * bi;
            let cm = blk.coeff(*e);
            for i in 0..2 {
                for j in 0..2 {
                    direct[(off + i, off + j)] = cm[(i, j)];
                }
            }
        }
        assert!(
            m.max_abs_diff(&direct) < 1e-9,
            "reconstruction mismatch at exponent {e}: {}",
            m.max_abs_diff(&direct)
        );
    }
}

#[test]
fn source_system_splits_into_2_1_1_blocks_at_infinity() {
    let mut rng = common::rng(5);
    let variant = Variant::V6;
    let th = common::rand_theta(&mut rng, variant);
    let s = common::rand_state(&mut rng, common::base_time(variant));
    let pair = build_lax(variant.system(), variant, &th, &s).unwrap();
    let exp = pair.a.expand_at_infinity(r(4, 1));
    let blocks = block_diagonalize(&exp, 5).unwrap();
    let mut sizes: Vec<usize> = blocks.iter().map(|b| b.dim).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, vec![2, 1, 1]);
}

#[test]
fn levels_invariant_under_constant_conjugation() {
    let mut rng = common::rng(13);
    let a = ramified_example(0.27, -0.61);
    let mut g = Mat::identity(4);
    for i in 0..4 {
        for j in 0..4 {
            g[(i, j)] += c(0.3 * rng.gen_range(-1.0..1.0), 0.3 * rng.gen_range(-1.0..1.0));
        }
    }
    let gi = g.inverse().unwrap();
    let mut conj = PuiseuxMatrixSeries::new(4, 1, a.trunc);
    for (e, m) in a.terms.iter() {
        conj.add_term(*e, &(&gi * m) * &g);
    }
    let f1 = htl_reduce(&a).unwrap();
    let f2 = htl_reduce(&conj).unwrap();
    assert_eq!(f1.levels, f2.levels);
    assert_eq!(f1.d, f2.d);
    let sorted = |f: &HTLForm| {
        let mut v: Vec<(i64, i64)> = (0..4)
            .map(|i| {
                let x = f.residue[(i, i)];
                ((x.re * 1e6).round() as i64, (x.im * 1e6).round() as i64)
            })
            .collect();
        v.sort_unstable();
        v
    };
    assert_eq!(sorted(&f1), sorted(&f2));
}

#[test]
fn classify_full_catalog() {
    let expected = [
        (Variant::V6, "1+1+1+1", "22,22,22,211"),
        (Variant::D6a, "3/2+1+1", "(2)_2,22,211"),
        (Variant::D6b, "3/2+1+1", "(11)_2,22,22"),
        (Variant::IIa, "5/2+1", "(((2)))_2,211"),
        (Variant::IIb, "5/2+1", "(((11)))_2,22"),
        (Variant::D7a, "3/2+2", "(2)_2,(2)(11)"),
        (Variant::D7b, "3/2+2", "(11)_2,(2)(2)"),
        (Variant::I1, "7/2", "(((((11)))))_2"),
        (Variant::D8a, "3/2+3/2", "(2)_2,(11)_2"),
    ];
    let mut rng = common::rng(2024);
    for (variant, pattern, types) in expected {
        let th = common::rand_theta(&mut rng, variant);
        let s = common::rand_state(&mut rng, common::base_time(variant));
        let pair = build_lax(variant.system(), variant, &th, &s).unwrap();
        let cls = classify_system(&pair.a)
            .unwrap_or_else(|e| panic!("{variant:?}: classification failed: {e}"));
        assert_eq!(cls.pattern, pattern, "{variant:?} pattern");
        assert_eq!(cls.type_string, types, "{variant:?} type string");
        assert_eq!(cls.type_string, variant.spectral_label(), "{variant:?} label");
        assert_eq!(cls.pattern, variant.singularity_pattern(), "{variant:?} pattern label");
        // leaf sum is the matrix dimension
        let digit_sum: usize = cls
            .type_string
            .chars()
            .filter_map(|ch| ch.to_digit(10))
            .map(|d| d as usize)
            .sum::<usize>()
            - cls
                .type_string
                .split('_')
                .skip(1)
                .filter_map(|s| s.chars().next().and_then(|ch| ch.to_digit(10)))
                .map(|d| d as usize)
                .sum::<usize>();
        let point_count = cls.points.len();
        let orbit_weighted: usize = cls
            .points
            .iter()
            .map(|p| {
                let t = &p.spectral_type.text;
                leaf_sum(t)
            })
            .sum();
        assert_eq!(orbit_weighted, 4 * point_count, "{variant:?} leaf sums {digit_sum}");
    }
}

/// Sum of partition entries weighted by ramification subscript.
fn leaf_sum(t: &str) -> usize {
    let mut total = 0usize;
    for part in t.split(' ') {
        let mut chars = part.chars().peekable();
        let mut digits: Vec<usize> = Vec::new();
        let mut sub = 1usize;
        while let Some(ch) = chars.next() {
            match ch {
                '0'..='9' => digits.push(ch.to_digit(10).unwrap() as usize),
                '_' => {
                    if let Some(d) = chars.next().and_then(|ch| ch.to_digit(10)) {
                        sub = d as usize;
                    }
                    total += digits.iter().sum::<usize>() * sub;
                    digits.clear();
                    sub = 1;
                }
                _ => {}
            }
            if chars.peek().is_none() && !digits.is_empty() {
                total += digits.iter().sum::<usize>();
                digits.clear();
            }
        }
    }
    total
}
