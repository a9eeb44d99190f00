//! 4x4 linear problems attached to the catalog systems: A(x)- and B(x)-sides
//! of the isomonodromic pairs, compatibility residuals, Riemann schemes, and
//! the scalar/matrix gauge consistency checks.

use crate::algebra::{c, AlgebraError, ComplexScalar, LinearSystem, Mat};
use crate::painleve::{
    build_matrix_pair, variant_flow, u_equation, CanonicalState, HamiltonianParams,
    PainleveError, SystemId, ThetaParams, Variant,
};
use num_complex::Complex64;
use num_traits::Zero;
use serde::Serialize;
use std::collections::BTreeMap;

/// A matched pair of linear systems: dY/dx = A(x) Y and dY/dt = B(x) Y.
#[derive(Clone, Debug, Serialize)]
pub struct LaxPair {
    pub a: LinearSystem,
    pub b: LinearSystem,
    /// Current 2x2 gauge factor (identity at build time); it enters through
    /// conjugation by gauge_u (+) I_2.
    pub gauge_u: Mat,
    /// Internal matrices (Z, G blocks) used by the construction.
    pub aux: BTreeMap<String, Mat>,
    pub variant: Variant,
}

#[derive(Debug)]
pub enum LaxError {
    Painleve(PainleveError),
    Algebra(AlgebraError),
    UnknownVariant(String),
    VariantMismatch,
}

impl From<PainleveError> for LaxError {
    fn from(e: PainleveError) -> Self {
        LaxError::Painleve(e)
    }
}
impl From<AlgebraError> for LaxError {
    fn from(e: AlgebraError) -> Self {
        LaxError::Algebra(e)
    }
}

impl std::fmt::Display for LaxError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LaxError::Painleve(e) => write!(f, "{e}"),
            LaxError::Algebra(e) => write!(f, "{e}"),
            LaxError::UnknownVariant(s) => write!(f, "unknown variant {s}"),
            LaxError::VariantMismatch => write!(f, "variant does not belong to system"),
        }
    }
}
impl std::error::Error for LaxError {}

fn i2() -> Mat {
    Mat::identity(2)
}
fn z2() -> Mat {
    Mat::zeros(2, 2)
}

fn blk(a: &Mat, b: &Mat, cm: &Mat, d: &Mat) -> Mat {
    Mat::block2(a, b, cm, d)
}

/// col (4x2) times row (2x4).
fn colrow(top: &Mat, bot: &Mat, left: &Mat, right: &Mat) -> Mat {
    &Mat::vstack(top, bot) * &Mat::hstack(left, right)
}

fn smat(s: ComplexScalar) -> Mat {
    Mat::identity(2).scale(s)
}

/// (U (+) I)^{-1} M (U (+) I)
fn conj_u(u: &Mat, m: &Mat) -> Result<Mat, AlgebraError> {
    let g = blk(u, &z2(), &z2(), &i2());
    Ok(&(&g.inverse()? * m) * &g)
}

struct RawParts {
    a_poles: Vec<(ComplexScalar, Vec<Mat>)>,
    a_poly: Vec<Mat>,
    b_poles: Vec<(ComplexScalar, Vec<Mat>)>,
    b_poly: Vec<Mat>,
    aux: BTreeMap<String, Mat>,
}

fn g(o: Option<ComplexScalar>) -> ComplexScalar {
    o.unwrap_or_else(Complex64::zero)
}

/// Z = pivot^{-1} * numerator, treating the 0/0 case (degenerate exponents
/// with a vanishing numerator) as Z = 0.
fn solve_z(pivot: &Mat, numerator: &Mat) -> Result<Mat, LaxError> {
    match pivot.inverse() {
        Ok(inv) => Ok(&inv * numerator),
        Err(_) if numerator.norm_inf() < 1e-10 => Ok(Mat::zeros(2, 2)),
        Err(e) => Err(LaxError::Algebra(e)),
    }
}

/// The displayed A(x)/B(x) coefficient matrices for each catalog variant,
/// before conjugation by the gauge factor.
fn raw_parts(
    variant: Variant,
    th: &ThetaParams,
    q: &Mat,
    p: &Mat,
    t: ComplexScalar,
) -> Result<RawParts, LaxError> {
    let one = c(1.0, 0.0);
    let mut aux = BTreeMap::new();
    let theta = th.theta_mat();
    let out = match variant {
        Variant::V6 => {
            let (th0, th1, tht, thi1) = (g(th.th0), g(th.th1), g(th.tht), g(th.thi1));
            let thsum = th0 + th1 + tht;
            let qp_s = &(q * p) + &smat(thsum + thi1);
            let num = &(&qp_s.scale(-th1) + &(&qp_s * &qp_s))
                - &(&(&(p * q) + &smat(tht)) * p).scale(t);
            let zm = solve_z(&(&smat(thi1) - &theta), &num)?;
            let x = blk(&i2(), &z2(), &zm, &i2());
            let xi = blk(&i2(), &z2(), &(-&zm), &i2());
            let a0h = colrow(&i2(), &z2(), &smat(th0), &(&q.scale(one / t) - &i2()));
            let a1h = colrow(
                &i2(),
                &(&(p * q) - &theta),
                &(&smat(th1) - &(&(p * q) - &theta)),
                &i2(),
            );
            let ath = colrow(
                &i2(),
                &p.scale(t),
                &(&smat(tht) + &(q * p)),
                &(-&q.scale(one / t)),
            );
            let a0 = &(&xi * &a0h) * &x;
            let a1 = &(&xi * &a1h) * &x;
            let at = &(&xi * &ath) * &x;
            aux.insert("Z".to_string(), zm);
            RawParts {
                a_poles: vec![
                    (Complex64::zero(), vec![a0]),
                    (one, vec![a1]),
                    (t, vec![at.clone()]),
                ],
                a_poly: vec![],
                b_poles: vec![(t, vec![-&at])],
                b_poly: vec![],
                aux,
            }
        }
        Variant::D6a => {
            let (th0, thi1) = (g(th.th0), g(th.thi1));
            let num = &(-&(&(q * p) * q)) - &(&q.scale(th0) + &smat(t));
            let zm = solve_z(&(&smat(thi1) - &theta), &num)?;
            let g1 = blk(&i2(), &z2(), &(-&zm.scale(one / t)), &i2());
            let g1i = blk(&i2(), &z2(), &zm.scale(one / t), &i2());
            let a11 = colrow(
                &i2(),
                &(-&zm.scale(one / t)),
                &(-&zm),
                &smat(-t),
            );
            let a10 = &(&g1
                * &blk(
                    &(&(p * q) - &smat(thi1)),
                    &p.scale(t),
                    &i2(),
                    &(&smat(thi1) - &(p * q)),
                ))
                * &g1i;
            let a00 = colrow(
                &p.clone(),
                &(-&(&(&(&zm * p) + &(q * p)) + &smat(th0)).scale(one / t)),
                &(&(-&zm) - q),
                &smat(-t),
            );
            aux.insert("Z".to_string(), zm);
            aux.insert("G1".to_string(), g1);
            RawParts {
                a_poles: vec![
                    (Complex64::zero(), vec![a00]),
                    (one, vec![a10, a11.clone()]),
                ],
                a_poly: vec![],
                b_poles: vec![(one, vec![a11.scale(-one / t)])],
                b_poly: vec![],
                aux,
            }
        }
        Variant::D6b => {
            let (th0, th1) = (g(th.th0), g(th.th1));
            let n4 = blk(&z2(), &i2(), &z2(), &z2());
            let a0 = colrow(&z2(), &i2(), &(&i2() - p), &smat(th0));
            let a1 = colrow(&(&(q * p) + &smat(th1)), &p.clone(), &i2(), &(-q));
            let b1 = blk(
                &(&(p * q) - &smat(th0)),
                &z2(),
                &i2(),
                &(&(-&(q * p)) - &smat(th1)),
            )
            .scale(one / t);
            RawParts {
                a_poles: vec![(Complex64::zero(), vec![a0]), (one, vec![a1])],
                a_poly: vec![n4.scale(t)],
                b_poles: vec![],
                b_poly: vec![b1, n4],
                aux,
            }
        }
        Variant::IIa => {
            let thi1 = g(th.thi1);
            let num = &(p - &(q * q)) - &smat(t);
            let zm = solve_z(&(&smat(thi1) - &theta), &num)?;
            let g0 = blk(&i2(), &z2(), &zm, &i2());
            let g0i = blk(&i2(), &z2(), &(-&zm), &i2());
            let a2 = &(&g0 * &blk(&z2(), &i2(), &z2(), &z2())) * &g0i;
            let a1 = &(&g0 * &blk(q, &(-p), &i2(), &(-q))) * &g0i;
            let a0 = -&blk(&smat(thi1), &z2(), &z2(), &theta);
            aux.insert("Z".to_string(), zm);
            aux.insert("G0".to_string(), g0);
            RawParts {
                a_poles: vec![(Complex64::zero(), vec![a0, a1, a2.clone()])],
                a_poly: vec![],
                b_poles: vec![(Complex64::zero(), vec![a2])],
                b_poly: vec![],
                aux,
            }
        }
        Variant::IIb => {
            let th0 = g(th.th0);
            let a0 = blk(&z2(), &i2(), &z2(), &z2());
            let a1 = blk(&z2(), &(p - &smat(t)), &i2(), &z2());
            let a2 = colrow(
                &(-q),
                &i2(),
                &(-p),
                &(&(-&(p * q)) + &smat(th0)),
            );
            let b1 = blk(&z2(), &(&p.scale(c(-2.0, 0.0)) + &smat(t)), &(-&i2()), &z2());
            RawParts {
                a_poles: vec![(Complex64::zero(), vec![a2])],
                a_poly: vec![a1, a0.clone()],
                b_poles: vec![],
                b_poly: vec![b1, -&a0],
                aux,
            }
        }
        Variant::D7a => {
            let thi1 = g(th.thi1);
            let a0 = colrow(&i2(), &p.clone(), &(-p), &i2()).scale(t);
            let zm = &(&(&(q * p) + &smat(thi1 * 2.0)) * p) + &i2();
            let a1 = blk(&smat(-thi1), &(-q), &(-&zm), &(-&theta));
            let a2 = blk(&z2(), &z2(), &z2(), &i2());
            aux.insert("Z".to_string(), zm);
            RawParts {
                a_poles: vec![(Complex64::zero(), vec![a1, a0.clone()])],
                a_poly: vec![a2],
                b_poles: vec![(Complex64::zero(), vec![a0.scale(-one / t)])],
                b_poly: vec![],
                aux,
            }
        }
        Variant::D7b => {
            let th0 = g(th.th0);
            let a0 = colrow(&z2(), &i2(), p, &i2()).scale(t);
            let a1 = blk(&(q * p), q, &i2(), &(&(-&(p * q)) + &smat(th0)));
            let a2 = blk(&z2(), &i2(), &z2(), &z2());
            let b0 = blk(&z2(), &(-q), &z2(), &z2()).scale(one / t);
            let b1 = -&colrow(&z2(), &i2(), p, &i2());
            RawParts {
                a_poles: vec![(Complex64::zero(), vec![a1, a0])],
                a_poly: vec![a2],
                b_poles: vec![(Complex64::zero(), vec![b1])],
                b_poly: vec![b0],
                aux,
            }
        }
        Variant::I1 => {
            let a0 = blk(&z2(), &i2(), &z2(), &z2());
            let a1 = blk(&z2(), q, &i2(), &z2());
            let a2 = blk(&(-p), &(&(q * q) + &smat(t)), &(-q), p);
            let b1 = blk(&z2(), &q.scale(c(2.0, 0.0)), &i2(), &z2());
            RawParts {
                a_poles: vec![],
                a_poly: vec![a2, a1, a0.clone()],
                b_poles: vec![],
                b_poly: vec![b1, a0],
                aux,
            }
        }
        Variant::D8a => {
            let qi = q.inverse().map_err(LaxError::Algebra)?;
            let a0 = blk(&z2(), &z2(), &(-&qi.scale(t)), &z2());
            let a1 = blk(&(q * p), &(-q), &i2(), &(&(-&(p * q)) - &i2()));
            let a2 = blk(&z2(), &i2(), &z2(), &z2());
            let b0 = blk(&z2(), q, &z2(), &z2()).scale(one / t);
            let b1 = blk(&z2(), &z2(), &qi, &z2());
            RawParts {
                a_poles: vec![(Complex64::zero(), vec![a1, a0])],
                a_poly: vec![a2],
                b_poles: vec![(Complex64::zero(), vec![b1])],
                b_poly: vec![b0],
                aux,
            }
        }
    };
    Ok(out)
}

/// The 2x2 gauge-rate W(Q,P,t) with dU/dt = W U; zero for variants whose
/// displayed pair needs no extra gauge factor.
pub fn gauge_rate(variant: Variant, th: &ThetaParams, q: &Mat, p: &Mat, t: ComplexScalar) -> Mat {
    let one = c(1.0, 0.0);
    match variant {
        Variant::V6 => {
            let (th0, th1, tht, thi1) = (g(th.th0), g(th.th1), g(th.tht), g(th.thi1));
            let thsum = th0 + th1 + tht;
            let w = &(&q.scale(-th1)
                + &(&(q - &smat(t)) * &(&(p * q) + &(q * p))))
                + &(&q.scale((thsum + thi1) * 2.0) - &smat(tht * t));
            w.scale(one / (t * (t - one)))
        }
        Variant::D6a => {
            (&(p * q).scale(c(-2.0, 0.0)) + &smat(g(th.thi1) * 2.0)).scale(one / t)
        }
        Variant::IIa => q.scale(c(2.0, 0.0)),
        Variant::D7a => {
            (&(q * p) + &smat(g(th.thi1))).scale(c(2.0, 0.0) / t)
        }
        _ => Mat::zeros(2, 2),
    }
}

fn assemble(
    parts: &RawParts,
    u: &Mat,
) -> Result<(LinearSystem, LinearSystem), AlgebraError> {
    let conj_all = |poles: &[(ComplexScalar, Vec<Mat>)], poly: &[Mat]| {
        let mut sys = LinearSystem::new(4);
        for (loc, coeffs) in poles {
            let mut cs = Vec::new();
            for m in coeffs {
                cs.push(conj_u(u, m)?);
            }
            sys = sys.with_pole(*loc, cs);
        }
        if !poly.is_empty() {
            let mut ps = Vec::new();
            for m in poly {
                ps.push(conj_u(u, m)?);
            }
            sys = sys.with_poly(ps);
        }
        Ok::<LinearSystem, AlgebraError>(sys)
    };
    Ok((
        conj_all(&parts.a_poles, &parts.a_poly)?,
        conj_all(&parts.b_poles, &parts.b_poly)?,
    ))
}

/// Build the displayed linear pair at a canonical state, with gauge factor
/// initialized to the identity.
pub fn build_lax(
    id: SystemId,
    variant: Variant,
    th: &ThetaParams,
    s: &CanonicalState,
) -> Result<LaxPair, LaxError> {
    if variant.system() != id {
        return Err(LaxError::VariantMismatch);
    }
    let mp = build_matrix_pair(id, th, s)?;
    let parts = raw_parts(variant, th, &mp.q, &mp.p, s.t)?;
    let u = Mat::identity(2);
    let (a, b) = assemble(&parts, &u)?;
    Ok(LaxPair { a, b, gauge_u: u, aux: parts.aux, variant })
}

/// One RK4 step of the joint (Q, P, U) flow of a variant.
fn flow_step(
    variant: Variant,
    th: &ThetaParams,
    q: &Mat,
    p: &Mat,
    u: &Mat,
    t: ComplexScalar,
    h: ComplexScalar,
) -> Result<(Mat, Mat, Mat), PainleveError> {
    let f = |q: &Mat, p: &Mat, u: &Mat, t: ComplexScalar| -> Result<(Mat, Mat, Mat), PainleveError> {
        let (dq, dp) = variant_flow(variant, th, q, p, t)?;
        let du = &gauge_rate(variant, th, q, p, t) * u;
        Ok((dq, dp, du))
    };
    let (k1q, k1p, k1u) = f(q, p, u, t)?;
    let half = h / 2.0;
    let (k2q, k2p, k2u) = f(
        &(q + &k1q.scale(half)),
        &(p + &k1p.scale(half)),
        &(u + &k1u.scale(half)),
        t + half,
    )?;
    let (k3q, k3p, k3u) = f(
        &(q + &k2q.scale(half)),
        &(p + &k2p.scale(half)),
        &(u + &k2u.scale(half)),
        t + half,
    )?;
    let (k4q, k4p, k4u) = f(
        &(q + &k3q.scale(h)),
        &(p + &k3p.scale(h)),
        &(u + &k3u.scale(h)),
        t + h,
    )?;
    let comb = |a: &Mat, k1: &Mat, k2: &Mat, k3: &Mat, k4: &Mat| {
        a + &(&(k1 + k4) + &(k2 + k3).scale(c(2.0, 0.0))).scale(h / 6.0)
    };
    Ok((
        comb(q, &k1q, &k2q, &k3q, &k4q),
        comb(p, &k1p, &k2p, &k3p, &k4p),
        comb(u, &k1u, &k2u, &k3u, &k4u),
    ))
}

fn eval_sys(sys: &LinearSystem, x: ComplexScalar) -> Result<Mat, AlgebraError> {
    crate::algebra::rational_matrix_eval(sys, x)
}

/// Relative compatibility residual max over x samples:
/// ‖dA/dt − dB/dx + [A, B]‖ / (1 + ‖A‖), with dA/dt a central difference
/// along the variant flow (state, gauge, and explicit t all moving) and
/// dB/dx exact.
pub fn compatibility_residual(
    pair: &LaxPair,
    id: SystemId,
    _hp: &HamiltonianParams,
    th: &ThetaParams,
    s: &CanonicalState,
    x_samples: &[ComplexScalar],
) -> Result<f64, LaxError> {
    let variant = pair.variant;
    if variant.system() != id {
        return Err(LaxError::VariantMismatch);
    }
    let mp = build_matrix_pair(id, th, s)?;
    let u0 = Mat::identity(2);
    let h = c(1e-5, 0.0);
    let (qp, pp, up) = flow_step(variant, th, &mp.q, &mp.p, &u0, s.t, h)?;
    let (qm, pm, um) = flow_step(variant, th, &mp.q, &mp.p, &u0, s.t, -h)?;
    let (ap, _) = assemble(&raw_parts(variant, th, &qp, &pp, s.t + h)?, &up)?;
    let (am, _) = assemble(&raw_parts(variant, th, &qm, &pm, s.t - h)?, &um)?;
    let (a0, b0) = assemble(&raw_parts(variant, th, &mp.q, &mp.p, s.t)?, &u0)?;
    let mut res = 0.0f64;
    let mut scale = 0.0f64;
    for &x in x_samples {
        let dadt = (&eval_sys(&ap, x)? - &eval_sys(&am, x)?).scale(c(1.0, 0.0) / (h * 2.0));
        let dbdx = b0.derivative_at(x)?;
        let av = eval_sys(&a0, x)?;
        let bv = eval_sys(&b0, x)?;
        let r = &(&dadt - &dbdx) + &crate::algebra::mat_commutator(&av, &bv);
        res = res.max(r.norm_inf());
        scale = scale.max(av.norm_inf());
    }
    Ok(res / (1.0 + scale))
}

/// Negative control: the same residual but with the state frozen (only the
/// explicit t-dependence of A moves). For generic states this must NOT
/// vanish — compatibility is a property of the flow, not of the pair alone.
pub fn compatibility_residual_frozen(
    pair: &LaxPair,
    id: SystemId,
    _hp: &HamiltonianParams,
    th: &ThetaParams,
    s: &CanonicalState,
    x_samples: &[ComplexScalar],
) -> Result<f64, LaxError> {
    let variant = pair.variant;
    if variant.system() != id {
        return Err(LaxError::VariantMismatch);
    }
    let mp = build_matrix_pair(id, th, s)?;
    let u0 = Mat::identity(2);
    let h = c(1e-5, 0.0);
    let (ap, _) = assemble(&raw_parts(variant, th, &mp.q, &mp.p, s.t + h)?, &u0)?;
    let (am, _) = assemble(&raw_parts(variant, th, &mp.q, &mp.p, s.t - h)?, &u0)?;
    let (a0, b0) = assemble(&raw_parts(variant, th, &mp.q, &mp.p, s.t)?, &u0)?;
    let mut res = 0.0f64;
    let mut scale = 0.0f64;
    for &x in x_samples {
        let dadt = (&eval_sys(&ap, x)? - &eval_sys(&am, x)?).scale(c(1.0, 0.0) / (h * 2.0));
        let dbdx = b0.derivative_at(x)?;
        let av = eval_sys(&a0, x)?;
        let bv = eval_sys(&b0, x)?;
        let r = &(&dadt - &dbdx) + &crate::algebra::mat_commutator(&av, &bv);
        res = res.max(r.norm_inf());
        scale = scale.max(av.norm_inf());
    }
    Ok(res / (1.0 + scale))
}

/// Location of a Riemann-scheme column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum PointLocation {
    Finite(ComplexScalar),
    Infinity,
}

/// One exponent row: coefficients of the irregular part (highest level
/// first), the residue exponent, and how many solutions share the row.
#[derive(Clone, Debug, Serialize)]
pub struct RiemannRow {
    pub irregular: Vec<ComplexScalar>,
    pub residue: ComplexScalar,
    pub multiplicity: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RiemannColumn {
    pub location: PointLocation,
    pub ramification: usize,
    pub rows: Vec<RiemannRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RiemannScheme {
    pub columns: Vec<RiemannColumn>,
}

impl RiemannScheme {
    /// Sum of residue exponents over all rows weighted by multiplicity;
    /// vanishes for every catalog scheme.
    pub fn fuchs_sum(&self) -> ComplexScalar {
        self.columns
            .iter()
            .flat_map(|col| col.rows.iter())
            .map(|row| row.residue * row.multiplicity as f64)
            .sum()
    }
}

fn row(irr: &[ComplexScalar], residue: ComplexScalar, m: usize) -> RiemannRow {
    RiemannRow { irregular: irr.to_vec(), residue, multiplicity: m }
}

fn plain_col(loc: PointLocation, residues: &[ComplexScalar]) -> RiemannColumn {
    RiemannColumn {
        location: loc,
        ramification: 1,
        rows: residues.iter().map(|&r| row(&[], r, 1)).collect(),
    }
}

/// The exponent tables of the nine catalog variants with θ and t
/// substituted. √t uses the principal branch.
pub fn riemann_scheme_of(
    variant: Variant,
    th: &ThetaParams,
    t: ComplexScalar,
) -> RiemannScheme {
    let z = Complex64::zero();
    let (th0, th1, tht, thi1) = (g(th.th0), g(th.th1), g(th.tht), g(th.thi1));
    let (thi2, thi3) = (th.thi2, th.thi3);
    let sq = t.sqrt();
    let f0 = PointLocation::Finite(z);
    let f1 = PointLocation::Finite(c(1.0, 0.0));
    let inf = PointLocation::Infinity;
    let cols = match variant {
        Variant::V6 => vec![
            plain_col(f0, &[z, z, th0, th0]),
            plain_col(f1, &[z, z, th1, th1]),
            plain_col(PointLocation::Finite(t), &[z, z, tht, tht]),
            plain_col(inf, &[thi1, thi1, thi2, thi3]),
        ],
        Variant::D6a => vec![
            RiemannColumn {
                location: f1,
                ramification: 2,
                rows: vec![row(&[sq], z, 2), row(&[-sq], z, 2)],
            },
            plain_col(f0, &[z, z, th0, th0]),
            plain_col(inf, &[thi1, thi1, thi2, thi3]),
        ],
        Variant::D6b => vec![
            RiemannColumn {
                location: inf,
                ramification: 2,
                rows: vec![
                    row(&[sq], thi2 / 2.0, 1),
                    row(&[sq], thi3 / 2.0, 1),
                    row(&[-sq], thi2 / 2.0, 1),
                    row(&[-sq], thi3 / 2.0, 1),
                ],
            },
            plain_col(f0, &[z, z, th0, th0]),
            plain_col(f1, &[z, z, th1, th1]),
        ],
        Variant::IIa => vec![
            RiemannColumn {
                location: f0,
                ramification: 2,
                rows: vec![
                    row(&[c(1.0, 0.0), z, -t / 2.0], z, 2),
                    row(&[c(-1.0, 0.0), z, t / 2.0], z, 2),
                ],
            },
            plain_col(inf, &[thi1, thi1, thi2, thi3]),
        ],
        Variant::IIb => vec![
            RiemannColumn {
                location: inf,
                ramification: 2,
                rows: vec![
                    row(&[c(1.0, 0.0), z, -t / 2.0], thi2 / 2.0, 1),
                    row(&[c(1.0, 0.0), z, -t / 2.0], thi3 / 2.0, 1),
                    row(&[c(-1.0, 0.0), z, t / 2.0], thi2 / 2.0, 1),
                    row(&[c(-1.0, 0.0), z, t / 2.0], thi3 / 2.0, 1),
                ],
            },
            plain_col(f0, &[z, z, th0, th0]),
        ],
        Variant::D7a => {
            let sqm = (-t).sqrt();
            vec![
                RiemannColumn {
                    location: f0,
                    ramification: 2,
                    rows: vec![row(&[sqm], z, 2), row(&[-sqm], z, 2)],
                },
                RiemannColumn {
                    location: inf,
                    ramification: 1,
                    rows: vec![
                        row(&[z], thi1, 1),
                        row(&[z], thi1, 1),
                        row(&[c(-1.0, 0.0)], thi2, 1),
                        row(&[c(-1.0, 0.0)], thi3, 1),
                    ],
                },
            ]
        }
        Variant::D7b => vec![
            RiemannColumn {
                location: inf,
                ramification: 2,
                rows: vec![
                    row(&[c(1.0, 0.0)], thi2 / 2.0, 1),
                    row(&[c(1.0, 0.0)], thi3 / 2.0, 1),
                    row(&[c(-1.0, 0.0)], thi2 / 2.0, 1),
                    row(&[c(-1.0, 0.0)], thi3 / 2.0, 1),
                ],
            },
            RiemannColumn {
                location: f0,
                ramification: 1,
                rows: vec![
                    row(&[z], z, 1),
                    row(&[z], z, 1),
                    row(&[t], th0, 1),
                    row(&[t], th0, 1),
                ],
            },
        ],
        Variant::I1 => vec![RiemannColumn {
            location: inf,
            ramification: 2,
            rows: vec![
                row(&[c(1.0, 0.0), z, z, z, t / 2.0], thi2 / 2.0, 1),
                row(&[c(1.0, 0.0), z, z, z, t / 2.0], thi3 / 2.0, 1),
                row(&[c(-1.0, 0.0), z, z, z, -t / 2.0], thi2 / 2.0, 1),
                row(&[c(-1.0, 0.0), z, z, z, -t / 2.0], thi3 / 2.0, 1),
            ],
        }],
        Variant::D8a => vec![
            RiemannColumn {
                location: f0,
                ramification: 2,
                rows: vec![row(&[sq], z, 2), row(&[-sq], z, 2)],
            },
            RiemannColumn {
                location: inf,
                ramification: 2,
                rows: vec![
                    row(&[c(1.0, 0.0)], thi2 / 2.0, 1),
                    row(&[c(1.0, 0.0)], thi3 / 2.0, 1),
                    row(&[c(-1.0, 0.0)], thi2 / 2.0, 1),
                    row(&[c(-1.0, 0.0)], thi3 / 2.0, 1),
                ],
            },
        ],
    };
    RiemannScheme { columns: cols }
}

/// Integrate the matrix gauge equation dU/dt = W(Q,P,t) U along a canonical
/// trajectory (RK4 on each segment, states interpolated linearly).
pub fn integrate_gauge(
    variant: Variant,
    th: &ThetaParams,
    trajectory: &[CanonicalState],
) -> Result<Mat, LaxError> {
    let mut u = Mat::identity(2);
    let id = variant.system();
    for w in trajectory.windows(2) {
        let (s0, s1) = (&w[0], &w[1]);
        let h = s1.t - s0.t;
        let lerp = |a: &CanonicalState, b: &CanonicalState, f: f64| CanonicalState {
            q1: a.q1 + (b.q1 - a.q1) * f,
            p1: a.p1 + (b.p1 - a.p1) * f,
            q2: a.q2 + (b.q2 - a.q2) * f,
            p2: a.p2 + (b.p2 - a.p2) * f,
            u: a.u + (b.u - a.u) * f,
            t: a.t + (b.t - a.t) * f,
        };
        let wmat = |s: &CanonicalState| -> Result<Mat, LaxError> {
            let mp = build_matrix_pair(id, th, s)?;
            Ok(gauge_rate(variant, th, &mp.q, &mp.p, s.t))
        };
        let mid = lerp(s0, s1, 0.5);
        let w0 = wmat(s0)?;
        let wm = wmat(&mid)?;
        let w1 = wmat(s1)?;
        let k1 = &w0 * &u;
        let k2 = &wm * &(&u + &k1.scale(h / 2.0));
        let k3 = &wm * &(&u + &k2.scale(h / 2.0));
        let k4 = &w1 * &(&u + &k3.scale(h));
        u = &u + &(&(&k1 + &k4) + &(&k2 + &k3).scale(c(2.0, 0.0))).scale(h / 6.0);
        if u.inverse().is_err() {
            return Err(LaxError::Algebra(AlgebraError::SingularMatrix));
        }
    }
    Ok(u)
}

/// Along a trajectory, the maximum defect between the scalar du/u equation
/// of the variant and the (1,2) entry of the matrix flow of Q (the matrix
/// channel that drives u).
pub fn u_gauge_check(
    id: SystemId,
    variant: Variant,
    th: &ThetaParams,
    _s: &CanonicalState,
    trajectory: &[CanonicalState],
) -> Result<f64, LaxError> {
    if variant.system() != id {
        return Err(LaxError::VariantMismatch);
    }
    // the matrix gauge must stay integrable (nonsingular) along the path
    integrate_gauge(variant, th, trajectory)?;
    let mut worst = 0.0f64;
    for s in trajectory {
        let mp = build_matrix_pair(id, th, s)?;
        let (dq, _) = variant_flow(variant, th, &mp.q, &mp.p, s.t)?;
        let du_flow = dq[(0, 1)];
        let du_eq = u_equation(variant, th, s);
        worst = worst.max((du_flow - du_eq).norm() / (1.0 + du_flow.norm()));
    }
    Ok(worst)
}
