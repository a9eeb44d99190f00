//! The eight matrix Painlevé systems on pairs of 2x2 matrices: trace
//! Hamiltonians, canonical-variable parameterization, non-abelian matrix
//! flows, and RK4 integration.

use crate::algebra::{c, mat_commutator, ComplexScalar, Mat};
use num_complex::Complex64;
use num_traits::Zero;
use serde::Serialize;
use std::fmt;

/// The eight Hamiltonian families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum SystemId {
    MatVI,
    MatV,
    MatIV,
    MatIIID6,
    MatIIID7,
    MatIIID8,
    MatII,
    MatI,
}

impl SystemId {
    pub const ALL: [SystemId; 8] = [
        SystemId::MatVI,
        SystemId::MatV,
        SystemId::MatIV,
        SystemId::MatIIID6,
        SystemId::MatIIID7,
        SystemId::MatIIID8,
        SystemId::MatII,
        SystemId::MatI,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SystemId::MatVI => "VI",
            SystemId::MatV => "V",
            SystemId::MatIV => "IV",
            SystemId::MatIIID6 => "III(D6)",
            SystemId::MatIIID7 => "III(D7)",
            SystemId::MatIIID8 => "III(D8)",
            SystemId::MatII => "II",
            SystemId::MatI => "I",
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// The nine catalog variants that carry explicit 4x4 linear problems,
/// identified by their spectral-type strings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Variant {
    /// "22,22,22,211" (Fuchsian source system, MatVI)
    V6,
    /// "(2)_2,22,211" (MatIII_D6)
    D6a,
    /// "(11)_2,22,22" (MatIII_D6)
    D6b,
    /// "(((2)))_2,211" (MatII)
    IIa,
    /// "(((11)))_2,22" (MatII)
    IIb,
    /// "(2)_2,(2)(11)" (MatIII_D7)
    D7a,
    /// "(11)_2,(2)(2)" (MatIII_D7)
    D7b,
    /// "(((((11)))))_2" (MatI)
    I1,
    /// "(2)_2,(11)_2" (MatIII_D8)
    D8a,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::V6,
        Variant::D6a,
        Variant::D6b,
        Variant::IIa,
        Variant::IIb,
        Variant::D7a,
        Variant::D7b,
        Variant::I1,
        Variant::D8a,
    ];

    pub fn spectral_label(&self) -> &'static str {
        match self {
            Variant::V6 => "22,22,22,211",
            Variant::D6a => "(2)_2,22,211",
            Variant::D6b => "(11)_2,22,22",
            Variant::IIa => "(((2)))_2,211",
            Variant::IIb => "(((11)))_2,22",
            Variant::D7a => "(2)_2,(2)(11)",
            Variant::D7b => "(11)_2,(2)(2)",
            Variant::I1 => "(((((11)))))_2",
            Variant::D8a => "(2)_2,(11)_2",
        }
    }

    pub fn singularity_pattern(&self) -> &'static str {
        match self {
            Variant::V6 => "1+1+1+1",
            Variant::D6a => "3/2+1+1",
            Variant::D6b => "3/2+1+1",
            Variant::IIa => "5/2+1",
            Variant::IIb => "5/2+1",
            Variant::D7a => "3/2+2",
            Variant::D7b => "3/2+2",
            Variant::I1 => "7/2",
            Variant::D8a => "3/2+3/2",
        }
    }

    pub fn from_label(s: &str) -> Option<Variant> {
        Variant::ALL.iter().copied().find(|v| v.spectral_label() == s)
    }

    pub fn system(&self) -> SystemId {
        match self {
            Variant::V6 => SystemId::MatVI,
            Variant::D6a | Variant::D6b => SystemId::MatIIID6,
            Variant::IIa | Variant::IIb => SystemId::MatII,
            Variant::D7a | Variant::D7b => SystemId::MatIIID7,
            Variant::I1 => SystemId::MatI,
            Variant::D8a => SystemId::MatIIID8,
        }
    }

    /// Which residue exponents parameterize this variant (besides thi2/thi3).
    pub fn theta_fields(&self) -> (bool, bool, bool, bool) {
        // (th0, th1, tht, thi1)
        match self {
            Variant::V6 => (true, true, true, true),
            Variant::D6a => (true, false, false, true),
            Variant::D6b => (true, true, false, false),
            Variant::IIa => (false, false, false, true),
            Variant::IIb => (true, false, false, false),
            Variant::D7a => (false, false, false, true),
            Variant::D7b => (true, false, false, false),
            Variant::I1 => (false, false, false, false),
            Variant::D8a => (false, false, false, false),
        }
    }
}

/// Residue exponents of one system; fields not used by a variant are `None`.
/// `thi2` and `thi3` are always present.
#[derive(Clone, Debug, Serialize)]
pub struct ThetaParams {
    pub th0: Option<ComplexScalar>,
    pub th1: Option<ComplexScalar>,
    pub tht: Option<ComplexScalar>,
    pub thi1: Option<ComplexScalar>,
    pub thi2: ComplexScalar,
    pub thi3: ComplexScalar,
}

pub const FUCHS_TOL: f64 = 1e-12;

impl ThetaParams {
    pub fn zero() -> Self {
        ThetaParams {
            th0: None,
            th1: None,
            tht: None,
            thi1: None,
            thi2: Complex64::zero(),
            thi3: Complex64::zero(),
        }
    }

    /// Sum of the finite/first-infinity exponents present.
    pub fn finite_sum(&self) -> ComplexScalar {
        [self.th0, self.th1, self.tht, self.thi1]
            .iter()
            .flatten()
            .sum()
    }

    /// The residue-sum constraint: 2*(sum of doubled exponents) + thi2 + thi3.
    pub fn fuchs_residual(&self) -> f64 {
        (self.finite_sum() * 2.0 + self.thi2 + self.thi3).norm()
    }

    pub fn validate(&self) -> Result<(), PainleveError> {
        if self.fuchs_residual() > FUCHS_TOL {
            return Err(PainleveError::FuchsViolation(self.fuchs_residual()));
        }
        Ok(())
    }

    /// Build from the variant's field pattern, solving thi3 from the
    /// residue-sum constraint.
    pub fn for_variant(variant: Variant, vals: &[ComplexScalar], thi2: ComplexScalar) -> Self {
        let (f0, f1, ft, fi1) = variant.theta_fields();
        let mut it = vals.iter().copied();
        let th0 = if f0 { Some(it.next().expect("missing th0")) } else { None };
        let th1 = if f1 { Some(it.next().expect("missing th1")) } else { None };
        let tht = if ft { Some(it.next().expect("missing tht")) } else { None };
        let thi1 = if fi1 { Some(it.next().expect("missing thi1")) } else { None };
        let mut th = ThetaParams { th0, th1, tht, thi1, thi2, thi3: Complex64::zero() };
        th.thi3 = -th.finite_sum() * 2.0 - th.thi2;
        th
    }

    /// diag(thi2, thi3).
    pub fn theta_mat(&self) -> Mat {
        Mat::diag(&[self.thi2, self.thi3])
    }
}

/// Scalar canonical coordinates plus the gauge scalar u and time t.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CanonicalState {
    pub q1: ComplexScalar,
    pub p1: ComplexScalar,
    pub q2: ComplexScalar,
    pub p2: ComplexScalar,
    pub u: ComplexScalar,
    pub t: ComplexScalar,
}

impl CanonicalState {
    pub fn new(
        q1: ComplexScalar,
        p1: ComplexScalar,
        q2: ComplexScalar,
        p2: ComplexScalar,
        u: ComplexScalar,
        t: ComplexScalar,
    ) -> Self {
        CanonicalState { q1, p1, q2, p2, u, t }
    }
}

/// Tangent of a canonical state (dt = 1 for the time flows used here).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StateTangent {
    pub dq1: ComplexScalar,
    pub dp1: ComplexScalar,
    pub dq2: ComplexScalar,
    pub dp2: ComplexScalar,
    pub du: ComplexScalar,
    pub dt: ComplexScalar,
}

/// The 2x2 pair with its commutator constant: [P, Q] = zeta * K, K=diag(1,-1).
#[derive(Clone, Debug, Serialize)]
pub struct MatrixPair {
    pub q: Mat,
    pub p: Mat,
    pub zeta: ComplexScalar,
}

impl MatrixPair {
    pub fn commutator_residual(&self) -> f64 {
        let k = Mat::k2();
        mat_commutator(&self.p, &self.q)
            .max_abs_diff(&k.scale(self.zeta))
    }
}

/// Generic Hamiltonian parameters; unused slots are zero.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HamiltonianParams {
    pub alpha: ComplexScalar,
    pub beta: ComplexScalar,
    pub gamma: ComplexScalar,
    pub delta: ComplexScalar,
    pub zeta: ComplexScalar,
}

impl HamiltonianParams {
    pub fn new(
        alpha: ComplexScalar,
        beta: ComplexScalar,
        gamma: ComplexScalar,
        delta: ComplexScalar,
        zeta: ComplexScalar,
    ) -> Self {
        HamiltonianParams { alpha, beta, gamma, delta, zeta }
    }

    pub fn zero() -> Self {
        let z = Complex64::zero();
        HamiltonianParams::new(z, z, z, z, z)
    }
}

#[derive(Debug, Clone)]
pub enum PainleveError {
    ZeroGauge,
    FuchsViolation(f64),
    SingularTime(ComplexScalar),
    SingularMatrix,
    StepRejected,
}

impl fmt::Display for PainleveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PainleveError::ZeroGauge => write!(f, "gauge scalar u must be nonzero"),
            PainleveError::FuchsViolation(r) => write!(f, "residue-sum constraint violated ({r:.2e})"),
            PainleveError::SingularTime(t) => write!(f, "time {t} at a fixed singularity"),
            PainleveError::SingularMatrix => write!(f, "singular matrix in flow"),
            PainleveError::StepRejected => write!(f, "integration step rejected after 10 halvings"),
        }
    }
}

impl std::error::Error for PainleveError {}

/// The commutator constant zeta for (id, theta): the sum of all present
/// exponents among {th0, th1, tht, thi1} plus thi2.
pub fn zeta_of(_id: SystemId, th: &ThetaParams) -> ComplexScalar {
    th.finite_sum() + th.thi2
}

/// Build the pair with an explicit commutator constant.
pub fn build_matrix_pair_zeta(zeta: ComplexScalar, s: &CanonicalState) -> Result<MatrixPair, PainleveError> {
    if s.u.norm() < 1e-300 {
        return Err(PainleveError::ZeroGauge);
    }
    let q = Mat::from_rows(&[&[s.q1, s.u], &[-s.q2 / s.u, s.q1]]);
    let p = Mat::from_rows(&[
        &[s.p1 / 2.0, -s.p2 * s.u],
        &[(s.p2 * s.q2 - zeta) / s.u, s.p1 / 2.0],
    ]);
    Ok(MatrixPair { q, p, zeta })
}

/// Build the pair from residue exponents (zeta = zeta_of).
pub fn build_matrix_pair(
    id: SystemId,
    th: &ThetaParams,
    s: &CanonicalState,
) -> Result<MatrixPair, PainleveError> {
    build_matrix_pair_zeta(zeta_of(id, th), s)
}

fn shifted(q: &Mat, a: ComplexScalar) -> Mat {
    // Q - a*I
    let mut m = q.clone();
    m[(0, 0)] -= a;
    m[(1, 1)] -= a;
    m
}

/// Trace Hamiltonian H (for families whose display defines t*H or t(t-1)*H,
/// the returned value is H itself).
pub fn hamiltonian(
    id: SystemId,
    hp: &HamiltonianParams,
    mp: &MatrixPair,
    t: ComplexScalar,
) -> Result<ComplexScalar, PainleveError> {
    let q = &mp.q;
    let p = &mp.p;
    let one = c(1.0, 0.0);
    let (al, be, ga, de, ze) = (hp.alpha, hp.beta, hp.gamma, hp.delta, hp.zeta);
    let h = match id {
        SystemId::MatVI => {
            if t.norm() < 1e-12 || (t - one).norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let q1m = shifted(q, one);
            let qtm = shifted(q, t);
            let pp = p * p;
            let term1 = &(&(q * &q1m) * &qtm) * &pp;
            // (delta - zeta*K) Q(Q-1)
            let dzk = {
                let mut m = Mat::k2().scale(-ze);
                m[(0, 0)] += de;
                m[(1, 1)] += de;
                m
            };
            let brace = &(&dzk * &(q * &q1m))
                + &(&(q * &qtm).scale(-(al * 2.0 + be + ga + de)) + &(&q1m * &qtm).scale(ga));
            let total = &(&term1 + &(&brace * p)) + &q.scale(al * (al + be));
            total.trace() / (t * (t - one))
        }
        SystemId::MatV => {
            if t.norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let q1m = shifted(q, one);
            let pt = {
                let mut m = p.clone();
                m[(0, 0)] += t;
                m[(1, 1)] += t;
                m
            };
            let total = &(&(&(p * &pt) * q) * &q1m)
                + &(&(&(p * q).scale(be) + &p.scale(ga)) + &q.scale(-(al + ga) * t));
            total.trace() / t
        }
        SystemId::MatIV => {
            let inner = &(&(p - q) + &Mat::identity(2).scale(-t)) * &Mat::identity(2);
            let total = &(&(p * q) * &inner) + &(&p.scale(be) + &q.scale(al));
            total.trace()
        }
        SystemId::MatIIID6 => {
            if t.norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            // tr[P^2 Q^2 - (Q^2 - beta*Q - t)P - alpha*Q]
            let q2 = q * q;
            let paren = &(&q2 - &q.scale(be)) - &Mat::identity(2).scale(t);
            let total = &(&(&(p * p) * &q2) - &(&paren * p)) - &q.scale(al);
            total.trace() / t
        }
        SystemId::MatIIID7 => {
            if t.norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let total = &(&(&(p * p) * &(q * q)) + &(p * q).scale(al))
                + &(&p.scale(t) + q);
            total.trace() / t
        }
        SystemId::MatIIID8 => {
            if t.norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let qinv = q.inverse().map_err(|_| PainleveError::SingularMatrix)?;
            let total = &(&(&(p * p) * &(q * q)) + &(p * q)) - &(q + &qinv.scale(t));
            total.trace() / t
        }
        SystemId::MatII => {
            let q2t = {
                let mut m = q * q;
                m[(0, 0)] += t;
                m[(1, 1)] += t;
                m
            };
            let total = &(&(p * p) - &(&q2t * p)) - &q.scale(al);
            total.trace()
        }
        SystemId::MatI => {
            let total = &(&(p * p) - &(&(q * q) * q)) - &q.scale(t);
            total.trace()
        }
    };
    Ok(h)
}

/// The non-abelian matrix flows (dQ/dt, dP/dt) of the eight systems, with
/// generic parameters.
pub fn nonabelian_rhs(
    id: SystemId,
    hp: &HamiltonianParams,
    q: &Mat,
    p: &Mat,
    t: ComplexScalar,
) -> Result<(Mat, Mat), PainleveError> {
    let one = c(1.0, 0.0);
    let i2 = Mat::identity(2);
    let (al, be, ga, de) = (hp.alpha, hp.beta, hp.gamma, hp.delta);
    let out = match id {
        SystemId::MatVI => {
            if t.norm() < 1e-12 || (t - one).norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let n = t * (t - one);
            let q1m = shifted(q, one);
            let qtm = shifted(q, t);
            let coef = -al * 2.0 - be - ga - de;
            let dq = &(&(&(&qtm * p) * &(q * &q1m)) + &(&(q * &q1m) * &(p * &qtm)))
                + &(&(q * &q1m).scale(de) + &(&(q * &qtm).scale(coef) + &(&q1m * &qtm).scale(ga)));
            let cubic = &(&(&(&q1m * p) * &(&qtm * p)) + &(&(p * &qtm) * &(p * q)))
                + &(&(p * &(q * &q1m)) * p);
            let lin = &(&(p * &q1m) + &(q * p)).scale(de)
                + &(&(&(p * &qtm) + &(q * p)).scale(coef)
                    + &(&(p * &qtm) + &(&q1m * p)).scale(ga));
            let dp = &(&(-&cubic) - &lin) - &i2.scale(al * (al + be));
            (dq.scale(one / n), dp.scale(one / n))
        }
        SystemId::MatV => {
            if t.norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let q1m = shifted(q, one);
            let pt = {
                let mut m = p.clone();
                m[(0, 0)] += t;
                m[(1, 1)] += t;
                m
            };
            let dq = &(&(&(q * &q1m) * &pt) + &(&(p * q) * &q1m))
                + &(&q.scale(be) + &i2.scale(ga));
            let dp = &(&(-&(&(&q1m * p) * &pt)) - &(&(p * &pt) * q))
                + &(&p.scale(-be) + &i2.scale((al + ga) * t));
            (dq.scale(one / t), dp.scale(one / t))
        }
        SystemId::MatIV => {
            let pqt = {
                let mut m = p - q;
                m[(0, 0)] -= t;
                m[(1, 1)] -= t;
                m
            };
            let dq = &(&(q * &pqt) + &(p * q)) + &i2.scale(be);
            let dp = &(&(p * &(-&pqt)) + &(q * p)) - &i2.scale(al);
            (dq, dp)
        }
        SystemId::MatIIID6 => {
            if t.norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let dq = &(&(&(q * p) * q).scale(c(2.0, 0.0)) - &(q * q))
                + &(&q.scale(be) + &i2.scale(t));
            let dp = &(&(&(p * q).scale(c(-2.0, 0.0)) * p) + &(&(p * q) + &(q * p)))
                + &(&p.scale(-be) + &i2.scale(al));
            (dq.scale(one / t), dp.scale(one / t))
        }
        SystemId::MatIIID7 => {
            if t.norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let dq = &(&(&(q * p) * q).scale(c(2.0, 0.0)) + &q.scale(al)) + &i2.scale(t);
            let dp = &(&(&(p * q).scale(c(-2.0, 0.0)) * p) - &p.scale(al)) - &i2;
            (dq.scale(one / t), dp.scale(one / t))
        }
        SystemId::MatIIID8 => {
            if t.norm() < 1e-12 {
                return Err(PainleveError::SingularTime(t));
            }
            let qinv = q.inverse().map_err(|_| PainleveError::SingularMatrix)?;
            let dq = &(&(q * p) * q).scale(c(2.0, 0.0)) + q;
            let dp = &(&(&(p * q).scale(c(-2.0, 0.0)) * p) - &(p - &i2)) - &(&qinv * &qinv).scale(t);
            (dq.scale(one / t), dp.scale(one / t))
        }
        SystemId::MatII => {
            let dq = {
                let mut m = &p.scale(c(2.0, 0.0)) - &(q * q);
                m[(0, 0)] -= t;
                m[(1, 1)] -= t;
                m
            };
            let dp = &(&(p * q) + &(q * p)) + &i2.scale(al);
            (dq, dp)
        }
        SystemId::MatI => {
            let dq = p.scale(c(2.0, 0.0));
            let dp = {
                let mut m = (q * q).scale(c(3.0, 0.0));
                m[(0, 0)] += t;
                m[(1, 1)] += t;
                m
            };
            (dq, dp)
        }
    };
    Ok(out)
}

/// Hamiltonian-parameter dictionaries of the catalog variants: how the
/// generic (alpha, beta, gamma, delta) slots are filled from residue
/// exponents, exactly as displayed in the per-variant Hamiltonians.
pub fn hp_of(variant: Variant, th: &ThetaParams) -> HamiltonianParams {
    let z = Complex64::zero();
    let zeta = zeta_of(variant.system(), th);
    let g = |o: Option<ComplexScalar>| o.unwrap_or(z);
    match variant {
        Variant::V6 => HamiltonianParams::new(
            -g(th.th0) - g(th.tht) - g(th.thi1),
            -g(th.th1),
            g(th.tht),
            g(th.th0) + 1.0,
            zeta,
        ),
        Variant::D6a => HamiltonianParams::new(g(th.th0), -g(th.thi1) * 2.0 + 1.0, z, z, zeta),
        Variant::D6b => HamiltonianParams::new(g(th.th1), g(th.th1) - g(th.th0), z, z, zeta),
        Variant::IIa => HamiltonianParams::new(-g(th.thi1) * 2.0 + 1.0, z, z, z, zeta),
        Variant::IIb => HamiltonianParams::new(-g(th.th0), z, z, z, zeta),
        Variant::D7a => HamiltonianParams::new(g(th.thi1) * 2.0, z, z, z, zeta),
        Variant::D7b => HamiltonianParams::new(-g(th.th0), z, z, z, zeta),
        Variant::I1 | Variant::D8a => HamiltonianParams::new(z, z, z, z, zeta),
    }
}

/// The per-variant matrix flow as displayed in each linear-problem section.
/// For most variants this equals the generic non-abelian flow with the
/// variant's parameters; D6b is displayed in a gauge-shifted form that
/// differs from the generic flow by a commutator term.
pub fn variant_flow(
    variant: Variant,
    th: &ThetaParams,
    q: &Mat,
    p: &Mat,
    t: ComplexScalar,
) -> Result<(Mat, Mat), PainleveError> {
    if variant == Variant::D6b {
        if t.norm() < 1e-12 {
            return Err(PainleveError::SingularTime(t));
        }
        let th0 = th.th0.unwrap();
        let th1 = th.th1.unwrap();
        let i2 = Mat::identity(2);
        let q2 = q * q;
        let dq = &(&(&(p * &q2) + &(&q2 * p)) - &q2) + &(&q.scale(-(th0 - th1)) + &i2.scale(t));
        let p2 = p * p;
        let dp = &(&(-&(&(&p2 * q) + &(q * &p2))) + &(&(p * q) + &(q * p)))
            + &(&p.scale(th0 - th1) + &i2.scale(th1));
        let one = c(1.0, 0.0);
        return Ok((dq.scale(one / t), dp.scale(one / t)));
    }
    let hp = hp_of(variant, th);
    nonabelian_rhs(variant.system(), &hp, q, p, t)
}

/// The displayed scalar u-equations, returning du/dt (not du/u).
pub fn u_equation(variant: Variant, th: &ThetaParams, s: &CanonicalState) -> ComplexScalar {
    let z = Complex64::zero();
    let g = |o: Option<ComplexScalar>| o.unwrap_or(z);
    let (q1, p1, q2, p2, u, t) = (s.q1, s.p1, s.q2, s.p2, s.u, s.t);
    let du_over_u = match variant {
        Variant::V6 => {
            let (th0, th1, tht, thi1, thi2) =
                (g(th.th0), g(th.th1), g(th.tht), g(th.thi1), th.thi2);
            let du = -q1 * (q1 - 1.0) * (q1 - t) * p2 * 2.0
                + (q1 * (q1 - 1.0) + q1 * (q1 - t) + (q1 - 1.0) * (q1 - t) - q2) * p1
                + (p2 * q2 * 2.0 - th1 - tht - thi2 * 2.0) * q1
                + (p2 * q2 * 2.0 - th0 - th1 * 2.0 - tht - thi1 * 2.0 - thi2 * 2.0 + 1.0)
                    * (q1 - 1.0)
                + (p2 * q2 * 2.0 + th0 + th1 + tht * 2.0 + thi1 * 2.0 - 1.0) * (q1 - t);
            du / (t * (t - 1.0))
        }
        Variant::D6a => {
            (-q1 * (q1 * p2 + 1.0) * 2.0 + (p1 * q1 + p2 * q2) * 2.0
                - (g(th.th0) + g(th.thi1) * 2.0 + th.thi2) * 2.0
                + 1.0)
                / t
        }
        Variant::D6b => {
            ((p1 * q1 + p2 * q2) * 2.0 - q1 * (q1 * p2 + 1.0) * 2.0 - g(th.th0) + g(th.th1)) / t
        }
        Variant::IIa | Variant::IIb => -(q1 + p2) * 2.0,
        Variant::D7a => (p1 * q1 + p2 * q2 - p2 * q1 * q1 - th.thi2) * 2.0 / t,
        Variant::D7b => {
            (p1 * q1 * 2.0 + p2 * q2 * 2.0 - p2 * q1 * q1 * 2.0 - g(th.th0) * 3.0 - th.thi2 * 2.0)
                / t
        }
        Variant::I1 => -p2 * 2.0,
        Variant::D8a => {
            (p1 * q1 * 2.0 + p2 * q2 * 2.0 - p2 * q1 * q1 * 2.0 - th.thi2 * 2.0 + 1.0) / t
        }
    };
    du_over_u * u
}

/// Resolve the variant from (id, present theta fields), if this combination
/// corresponds to a catalog variant.
pub fn variant_of(id: SystemId, th: &ThetaParams) -> Option<Variant> {
    let pat = (
        th.th0.is_some(),
        th.th1.is_some(),
        th.tht.is_some(),
        th.thi1.is_some(),
    );
    Variant::ALL
        .iter()
        .copied()
        .find(|v| v.system() == id && v.theta_fields() == pat)
}

/// (dq1, dp1, dq2, dp2) by central finite differences of the trace
/// Hamiltonian, du from the variant's displayed u-equation (or from the
/// matrix flow when no catalog variant applies), dt = 1.
pub fn hamiltonian_rhs(
    id: SystemId,
    hp: &HamiltonianParams,
    th: &ThetaParams,
    s: &CanonicalState,
) -> Result<StateTangent, PainleveError> {
    let zeta = hp.zeta;
    let h_of = |s2: &CanonicalState| -> Result<ComplexScalar, PainleveError> {
        let mp = build_matrix_pair_zeta(zeta, s2)?;
        hamiltonian(id, hp, &mp, s2.t)
    };
    let step = |v: ComplexScalar| 1e-6 * v.norm().max(1.0);
    let d_wrt = |pick: fn(&mut CanonicalState) -> &mut ComplexScalar,
                 s0: &CanonicalState|
     -> Result<ComplexScalar, PainleveError> {
        let mut sp = *s0;
        let mut sm = *s0;
        let h = step(*pick(&mut sp.clone()));
        *pick(&mut sp) += h;
        *pick(&mut sm) -= h;
        Ok((h_of(&sp)? - h_of(&sm)?) / (2.0 * h))
    };
    let dh_dq1 = d_wrt(|s| &mut s.q1, s)?;
    let dh_dp1 = d_wrt(|s| &mut s.p1, s)?;
    let dh_dq2 = d_wrt(|s| &mut s.q2, s)?;
    let dh_dp2 = d_wrt(|s| &mut s.p2, s)?;
    let du = match variant_of(id, th) {
        Some(v) => u_equation(v, th, s),
        None => {
            let mp = build_matrix_pair_zeta(zeta, s)?;
            let (dq, _) = nonabelian_rhs(id, hp, &mp.q, &mp.p, s.t)?;
            dq[(0, 1)]
        }
    };
    Ok(StateTangent {
        dq1: dh_dp1,
        dp1: -dh_dq1,
        dq2: dh_dp2,
        dp2: -dh_dq2,
        du,
        dt: c(1.0, 0.0),
    })
}

/// Recover the (dq1, dp1, dq2, dp2, du) induced by a matrix tangent
/// (dQ, dP) on the canonical chart, together with the consistency defect of
/// the overdetermined (2,1)-entry of dP.
pub fn project_matrix_tangent(
    s: &CanonicalState,
    zeta: ComplexScalar,
    dq: &Mat,
    dp: &Mat,
) -> (ComplexScalar, ComplexScalar, ComplexScalar, ComplexScalar, ComplexScalar, f64) {
    let u = s.u;
    let du = dq[(0, 1)];
    let dq1 = dq[(0, 0)];
    let dq2 = s.q2 * du / u - u * dq[(1, 0)];
    let dp1 = dp[(0, 0)] * 2.0;
    let dp2 = -(dp[(0, 1)] + s.p2 * du) / u;
    // check d[(p2 q2 - zeta)/u] against dP(1,0)
    let predicted = (dp2 * s.q2 + s.p2 * dq2) / u - (s.p2 * s.q2 - zeta) * du / (u * u);
    let defect = (predicted - dp[(1, 0)]).norm();
    (dq1, dp1, dq2, dp2, du, defect)
}

/// Which RHS drives `integrate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhsKind {
    /// Finite-difference Hamiltonian flow on canonical coordinates.
    Canonical,
    /// Matrix flow lifted to the raw pair (Q, P), projected back.
    NonAbelian,
}

fn add_scaled(s: &CanonicalState, tg: &StateTangent, h: ComplexScalar) -> CanonicalState {
    CanonicalState {
        q1: s.q1 + tg.dq1 * h,
        p1: s.p1 + tg.dp1 * h,
        q2: s.q2 + tg.dq2 * h,
        p2: s.p2 + tg.dp2 * h,
        u: s.u + tg.du * h,
        t: s.t + tg.dt * h,
    }
}

fn state_norm(s: &CanonicalState) -> f64 {
    [s.q1, s.p1, s.q2, s.p2, s.u]
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
}

fn rk4_step<F>(f: &F, s: &CanonicalState, h: ComplexScalar) -> Result<CanonicalState, PainleveError>
where
    F: Fn(&CanonicalState) -> Result<StateTangent, PainleveError>,
{
    let k1 = f(s)?;
    let k2 = f(&add_scaled(s, &k1, h / 2.0))?;
    let k3 = f(&add_scaled(s, &k2, h / 2.0))?;
    let k4 = f(&add_scaled(s, &k3, h))?;
    let mut out = *s;
    out.q1 += (k1.dq1 + k2.dq1 * 2.0 + k3.dq1 * 2.0 + k4.dq1) * h / 6.0;
    out.p1 += (k1.dp1 + k2.dp1 * 2.0 + k3.dp1 * 2.0 + k4.dp1) * h / 6.0;
    out.q2 += (k1.dq2 + k2.dq2 * 2.0 + k3.dq2 * 2.0 + k4.dq2) * h / 6.0;
    out.p2 += (k1.dp2 + k2.dp2 * 2.0 + k3.dp2 * 2.0 + k4.dp2) * h / 6.0;
    out.u += (k1.du + k2.du * 2.0 + k3.du * 2.0 + k4.du) * h / 6.0;
    out.t += h;
    Ok(out)
}

const STEP_TOL: f64 = 1e-10;

fn adaptive_step<F>(
    f: &F,
    s: &CanonicalState,
    h: ComplexScalar,
    depth: usize,
) -> Result<CanonicalState, PainleveError>
where
    F: Fn(&CanonicalState) -> Result<StateTangent, PainleveError>,
{
    let full = rk4_step(f, s, h)?;
    let half1 = rk4_step(f, s, h / 2.0)?;
    let half2 = rk4_step(f, &half1, h / 2.0)?;
    let err = [
        full.q1 - half2.q1,
        full.p1 - half2.p1,
        full.q2 - half2.q2,
        full.p2 - half2.p2,
        full.u - half2.u,
    ]
    .iter()
    .map(|v| v.norm())
    .fold(0.0, f64::max);
    if err <= STEP_TOL * (1.0 + state_norm(s)) {
        return Ok(half2);
    }
    if depth >= 10 {
        return Err(PainleveError::StepRejected);
    }
    let mid = adaptive_step(f, s, h / 2.0, depth + 1)?;
    adaptive_step(f, &mid, h / 2.0, depth + 1)
}

/// RK4 trajectory of the chosen flow from s0.t to t1 in n_steps steps
/// along the straight line, with per-step halving error control.
pub fn integrate(
    id: SystemId,
    hp: &HamiltonianParams,
    th: &ThetaParams,
    s0: &CanonicalState,
    t1: ComplexScalar,
    n_steps: usize,
    kind: RhsKind,
) -> Result<Vec<CanonicalState>, PainleveError> {
    let mut path = vec![*s0];
    if n_steps == 0 {
        return Ok(path);
    }
    let h = (t1 - s0.t) / n_steps as f64;
    let f = |s: &CanonicalState| -> Result<StateTangent, PainleveError> {
        match kind {
            RhsKind::Canonical => hamiltonian_rhs(id, hp, th, s),
            RhsKind::NonAbelian => {
                let mp = build_matrix_pair_zeta(hp.zeta, s)?;
                let (dq, dp) = nonabelian_rhs(id, hp, &mp.q, &mp.p, s.t)?;
                let (dq1, dp1, dq2, dp2, du, _) =
                    project_matrix_tangent(s, hp.zeta, &dq, &dp);
                Ok(StateTangent { dq1, dp1, dq2, dp2, du, dt: c(1.0, 0.0) })
            }
        }
    };
    let mut s = *s0;
    for _ in 0..n_steps {
        s = adaptive_step(&f, &s, h, 0)?;
        path.push(s);
    }
    Ok(path)
}

/// Raw matrix-pair RK4 trajectory (no canonical chart); used by the
/// commutator-conservation checks.
pub fn integrate_matrix(
    id: SystemId,
    hp: &HamiltonianParams,
    q0: &Mat,
    p0: &Mat,
    t0: ComplexScalar,
    t1: ComplexScalar,
    n_steps: usize,
) -> Result<Vec<(Mat, Mat, ComplexScalar)>, PainleveError> {
    let mut out = vec![(q0.clone(), p0.clone(), t0)];
    if n_steps == 0 {
        return Ok(out);
    }
    let h = (t1 - t0) / n_steps as f64;
    let (mut q, mut p, mut t) = (q0.clone(), p0.clone(), t0);
    for _ in 0..n_steps {
        let (k1q, k1p) = nonabelian_rhs(id, hp, &q, &p, t)?;
        let (k2q, k2p) = nonabelian_rhs(
            id,
            hp,
            &(&q + &k1q.scale(h / 2.0)),
            &(&p + &k1p.scale(h / 2.0)),
            t + h / 2.0,
        )?;
        let (k3q, k3p) = nonabelian_rhs(
            id,
            hp,
            &(&q + &k2q.scale(h / 2.0)),
            &(&p + &k2p.scale(h / 2.0)),
            t + h / 2.0,
        )?;
        let (k4q, k4p) = nonabelian_rhs(
            id,
            hp,
            &(&q + &k3q.scale(h)),
            &(&p + &k3p.scale(h)),
            t + h,
        )?;
        q = &q + &(&(&k1q + &k4q) + &(&k2q + &k3q).scale(c(2.0, 0.0))).scale(h / 6.0);
        p = &p + &(&(&k1p + &k4p) + &(&k2p + &k3p).scale(c(2.0, 0.0))).scale(h / 6.0);
        t += h;
        out.push((q.clone(), p.clone(), t));
    }
    Ok(out)
}
