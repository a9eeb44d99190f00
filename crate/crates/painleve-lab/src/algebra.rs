//! Small complex-matrix arithmetic, Puiseux (fractional-power Laurent) matrix
//! series, and rational-in-x matrix functions.
//!
//! All numeric entries are `Complex64`; exponents of series terms are exact
//! `i64` rationals so that level/ramification bookkeeping never drifts.

use num_complex::Complex64;
use num_rational::Rational64;
use num_traits::{One, Zero};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

pub type ComplexScalar = Complex64;
pub type RationalExponent = Rational64;

pub fn c(re: f64, im: f64) -> ComplexScalar {
    Complex64::new(re, im)
}

pub fn r(num: i64, den: i64) -> RationalExponent {
    Rational64::new(num, den)
}

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq, Serialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<ComplexScalar>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let v = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i  ", v.re, v.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = ComplexScalar;
    fn index(&self, (i, j): (usize, usize)) -> &ComplexScalar {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut ComplexScalar {
        &mut self.data[i * self.cols + j]
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![Complex64::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::one();
        }
        m
    }

    /// diag(1, -1) scaled into the top-left of an n x n identity-free matrix;
    /// the 2x2 constant used in the commutator relation [P,Q] = zeta*K.
    pub fn k2() -> Mat {
        Mat::diag(&[c(1.0, 0.0), c(-1.0, 0.0)])
    }

    pub fn diag(entries: &[ComplexScalar]) -> Mat {
        let n = entries.len();
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = entries[i];
        }
        m
    }

    pub fn from_rows(rows: &[&[ComplexScalar]]) -> Mat {
        let r = rows.len();
        let c = rows[0].len();
        let mut m = Mat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn scale(&self, s: ComplexScalar) -> Mat {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> ComplexScalar {
        assert!(self.is_square());
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn transpose(&self) -> Mat {
        let mut m = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(j, i)] = self[(i, j)];
            }
        }
        m
    }

    /// 2x2 block matrix [[a, b], [c, d]].
    pub fn block2(a: &Mat, b: &Mat, cm: &Mat, d: &Mat) -> Mat {
        assert_eq!(a.rows, b.rows);
        assert_eq!(cm.rows, d.rows);
        assert_eq!(a.cols, cm.cols);
        assert_eq!(b.cols, d.cols);
        let rows = a.rows + cm.rows;
        let cols = a.cols + b.cols;
        let mut m = Mat::zeros(rows, cols);
        for i in 0..a.rows {
            for j in 0..a.cols {
                m[(i, j)] = a[(i, j)];
            }
            for j in 0..b.cols {
                m[(i, a.cols + j)] = b[(i, j)];
            }
        }
        for i in 0..cm.rows {
            for j in 0..cm.cols {
                m[(a.rows + i, j)] = cm[(i, j)];
            }
            for j in 0..d.cols {
                m[(a.rows + i, a.cols + j)] = d[(i, j)];
            }
        }
        m
    }

    /// Column-block times row-block product: col (r x k) * row (k x c).
    pub fn outer(col: &Mat, row: &Mat) -> Mat {
        col * row
    }

    pub fn vstack(top: &Mat, bottom: &Mat) -> Mat {
        assert_eq!(top.cols, bottom.cols);
        let mut m = Mat::zeros(top.rows + bottom.rows, top.cols);
        for i in 0..top.rows {
            for j in 0..top.cols {
                m[(i, j)] = top[(i, j)];
            }
        }
        for i in 0..bottom.rows {
            for j in 0..top.cols {
                m[(top.rows + i, j)] = bottom[(i, j)];
            }
        }
        m
    }

    pub fn hstack(left: &Mat, right: &Mat) -> Mat {
        assert_eq!(left.rows, right.rows);
        let mut m = Mat::zeros(left.rows, left.cols + right.cols);
        for i in 0..left.rows {
            for j in 0..left.cols {
                m[(i, j)] = left[(i, j)];
            }
            for j in 0..right.cols {
                m[(i, left.cols + j)] = right[(i, j)];
            }
        }
        m
    }

    pub fn submatrix(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        m
    }

    /// Gaussian elimination with partial pivoting; errors on (numerically)
    /// singular input.
    pub fn inverse(&self) -> Result<Mat, AlgebraError> {
        assert!(self.is_square(), "inverse requires a square matrix");
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let mut piv = col;
            let mut best = a[(col, col)].norm();
            for row in (col + 1)..n {
                let v = a[(row, col)].norm();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if best < 1e-300 {
                return Err(AlgebraError::SingularMatrix);
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                    inv.data.swap(col * n + j, piv * n + j);
                }
            }
            let d = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= d;
                inv[(col, j)] /= d;
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let f = a[(row, col)];
                if f.norm() == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let av = a[(col, j)];
                    let iv = inv[(col, j)];
                    a[(row, j)] -= f * av;
                    inv[(row, j)] -= f * iv;
                }
            }
        }
        Ok(inv)
    }

    /// Solve self * x = b for a vector b (dense, pivoted).
    pub fn solve(&self, b: &[ComplexScalar]) -> Result<Vec<ComplexScalar>, AlgebraError> {
        assert!(self.is_square());
        let n = self.rows;
        assert_eq!(b.len(), n);
        let mut a = self.clone();
        let mut rhs = b.to_vec();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[(col, col)].norm();
            for row in (col + 1)..n {
                let v = a[(row, col)].norm();
                if v > best {
                    best = v;
                    piv = row;
                }
            }
            if best < 1e-300 {
                return Err(AlgebraError::SingularMatrix);
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(col * n + j, piv * n + j);
                }
                rhs.swap(col, piv);
            }
            let d = a[(col, col)];
            for j in col..n {
                a[(col, j)] /= d;
            }
            rhs[col] /= d;
            for row in 0..n {
                if row == col {
                    continue;
                }
                let f = a[(row, col)];
                if f.norm() == 0.0 {
                    continue;
                }
                for j in col..n {
                    let av = a[(col, j)];
                    a[(row, j)] -= f * av;
                }
                let rv = rhs[col];
                rhs[row] -= f * rv;
            }
        }
        Ok(rhs)
    }

    /// Characteristic polynomial coefficients (monic, descending order) via
    /// the Faddeev-LeVerrier recursion; exact for small dims up to roundoff.
    pub fn char_poly(&self) -> Vec<ComplexScalar> {
        assert!(self.is_square());
        let n = self.rows;
        let mut coeffs = vec![Complex64::one()];
        let mut m = Mat::zeros(n, n);
        for k in 1..=n {
            // M_k = A * M_{k-1} + c_{k-1} I
            let mut am = self * &m;
            let ck_prev = *coeffs.last().unwrap();
            for i in 0..n {
                am[(i, i)] += ck_prev;
            }
            m = am;
            let ck = -(self * &m).trace() / Complex64::new(k as f64, 0.0);
            coeffs.push(ck);
        }
        coeffs
    }

    /// Eigenvalues via Durand-Kerner iteration on the characteristic
    /// polynomial. Adequate for the 2x2..6x6 matrices used here.
    pub fn eigenvalues(&self) -> Vec<ComplexScalar> {
        let coeffs = self.char_poly();
        poly_roots(&coeffs)
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Roots of a monic polynomial given by descending coefficients
/// [1, c1, ..., cn] via Durand-Kerner.
pub fn poly_roots(coeffs: &[ComplexScalar]) -> Vec<ComplexScalar> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return vec![];
    }
    let eval = |z: ComplexScalar| {
        let mut v = Complex64::zero();
        for cc in coeffs {
            v = v * z + cc;
        }
        v
    };
    // scale-aware starting points on a circle
    let scale = 1.0
        + coeffs
            .iter()
            .skip(1)
            .map(|v| v.norm())
            .fold(0.0, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<ComplexScalar> =
        (0..n).map(|k| seed.powu(k as u32 + 1) * scale).collect();
    for _ in 0..500 {
        let mut delta: f64 = 0.0;
        for i in 0..n {
            let mut denom = Complex64::one();
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() < 1e-300 {
                denom = Complex64::new(1e-300, 0.0);
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-14 * scale {
            break;
        }
    }
    roots
}

impl<'a, 'b> Add<&'b Mat> for &'a Mat {
    type Output = Mat;
    fn add(self, rhs: &'b Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a, 'b> Sub<&'b Mat> for &'a Mat {
    type Output = Mat;
    fn sub(self, rhs: &'b Mat) -> Mat {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl<'a, 'b> Mul<&'b Mat> for &'a Mat {
    type Output = Mat;
    fn mul(self, rhs: &'b Mat) -> Mat {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.norm() == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }
}

impl<'a> Neg for &'a Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(c(-1.0, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlgebraError {
    SingularMatrix,
    DimensionMismatch,
    EvaluationAtPole,
    TruncationUnderflow,
    NonInvertibleLeadingTerm,
}

impl fmt::Display for AlgebraError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlgebraError::SingularMatrix => write!(f, "singular matrix"),
            AlgebraError::DimensionMismatch => write!(f, "dimension mismatch"),
            AlgebraError::EvaluationAtPole => write!(f, "evaluation at a pole"),
            AlgebraError::TruncationUnderflow => write!(f, "requested order beyond truncation"),
            AlgebraError::NonInvertibleLeadingTerm => write!(f, "non-invertible leading term"),
        }
    }
}

impl std::error::Error for AlgebraError {}

/// ab - ba.
pub fn mat_commutator(a: &Mat, b: &Mat) -> Mat {
    assert!(a.is_square() && b.is_square() && a.rows == b.rows, "commutator needs equal square dims");
    &(a * b) - &(b * a)
}

// ---------------------------------------------------------------------------
// Puiseux matrix series
// ---------------------------------------------------------------------------

/// Matrix-valued series sum_e A_e z^e with rational exponents e whose
/// denominators divide the ramification `d`. Terms with exponent greater
/// than `trunc` are not represented (they are unknown, not zero).
#[derive(Clone, Debug)]
pub struct PuiseuxMatrixSeries {
    pub dim: usize,
    pub d: i64,
    pub terms: BTreeMap<RationalExponent, Mat>,
    pub trunc: RationalExponent,
}

const SERIES_EPS: f64 = 1e-13;

impl PuiseuxMatrixSeries {
    pub fn new(dim: usize, d: i64, trunc: RationalExponent) -> Self {
        PuiseuxMatrixSeries { dim, d, terms: BTreeMap::new(), trunc }
    }

    pub fn from_terms(
        dim: usize,
        terms: Vec<(RationalExponent, Mat)>,
        trunc: RationalExponent,
    ) -> Self {
        let mut d: i64 = 1;
        for (e, _) in &terms {
            d = lcm(d, *e.denom());
        }
        let mut s = PuiseuxMatrixSeries::new(dim, d, trunc);
        for (e, m) in terms {
            s.add_term(e, m);
        }
        s
    }

    pub fn identity(dim: usize, trunc: RationalExponent) -> Self {
        PuiseuxMatrixSeries::from_terms(dim, vec![(r(0, 1), Mat::identity(dim))], trunc)
    }

    pub fn add_term(&mut self, e: RationalExponent, m: Mat) {
        assert_eq!(m.rows, self.dim);
        assert_eq!(m.cols, self.dim);
        if e > self.trunc {
            return;
        }
        self.d = lcm(self.d, *e.denom());
        let entry = self.terms.entry(e).or_insert_with(|| Mat::zeros(self.dim, self.dim));
        *entry = &*entry + &m;
    }

    /// Remove numerically-zero terms (relative to the largest coefficient).
    pub fn prune(&mut self) {
        let scale = self
            .terms
            .values()
            .map(|m| m.norm_inf())
            .fold(0.0, f64::max)
            .max(1.0);
        self.terms.retain(|_, m| m.norm_inf() > SERIES_EPS * scale);
    }

    /// Lowest exponent present (valuation), if any term is nonzero.
    pub fn valuation(&self) -> Option<RationalExponent> {
        self.terms.keys().next().copied()
    }

    pub fn leading_coeff(&self) -> Option<&Mat> {
        self.terms.values().next()
    }

    pub fn coeff(&self, e: RationalExponent) -> Mat {
        self.terms.get(&e).cloned().unwrap_or_else(|| Mat::zeros(self.dim, self.dim))
    }

    pub fn scale(&self, s: ComplexScalar) -> Self {
        let mut out = self.clone();
        for m in out.terms.values_mut() {
            *m = m.scale(s);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let trunc = self.trunc.min(other.trunc);
        let mut out = PuiseuxMatrixSeries::new(self.dim, lcm(self.d, other.d), trunc);
        for (e, m) in self.terms.iter().chain(other.terms.iter()) {
            if *e <= trunc {
                out.add_term(*e, m.clone());
            }
        }
        out.prune();
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(c(-1.0, 0.0)))
    }

    /// Product with pessimistic truncation: a term of the product at
    /// exponent e is only complete if e <= min(t1 + v2, t2 + v1).
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let trunc = match (self.valuation(), other.valuation()) {
            (Some(v1), Some(v2)) => (self.trunc + v2).min(other.trunc + v1),
            _ => self.trunc.min(other.trunc),
        };
        let mut out = PuiseuxMatrixSeries::new(self.dim, lcm(self.d, other.d), trunc);
        for (e1, m1) in &self.terms {
            for (e2, m2) in &other.terms {
                let e = e1 + e2;
                if e <= trunc {
                    out.add_term(e, m1 * m2);
                }
            }
        }
        out.prune();
        out
    }

    /// Term-by-term derivative d/dz: A z^e -> e A z^{e-1}.
    pub fn derivative(&self) -> Self {
        let mut out = PuiseuxMatrixSeries::new(self.dim, self.d, self.trunc - r(1, 1));
        for (e, m) in &self.terms {
            if e.is_zero() {
                continue;
            }
            let factor = c(*e.numer() as f64 / *e.denom() as f64, 0.0);
            out.add_term(e - r(1, 1), m.scale(factor));
        }
        out.prune();
        out
    }

    /// Series inverse. Requires an invertible leading coefficient.
    pub fn inverse(&self) -> Result<Self, AlgebraError> {
        let v = self.valuation().ok_or(AlgebraError::NonInvertibleLeadingTerm)?;
        let lead = self.leading_coeff().unwrap().clone();
        let lead_inv = lead.inverse().map_err(|_| AlgebraError::NonInvertibleLeadingTerm)?;
        // self = z^v (L + N) with N strictly higher order; write
        // self^{-1} = (I + L^{-1} N)^{-1} L^{-1} z^{-v}.
        // relative-order budget: how many fractional steps we may trust
        let budget = self.trunc - v;
        let mut rel = PuiseuxMatrixSeries::new(self.dim, self.d, budget);
        for (e, m) in &self.terms {
            if e > &v {
                rel.add_term(e - v, &lead_inv * m); // L^{-1} N
            }
        }
        // geometric series sum_k (-1)^k (L^{-1}N)^k
        let mut acc = PuiseuxMatrixSeries::identity(self.dim, budget);
        let mut pw = PuiseuxMatrixSeries::identity(self.dim, budget);
        let step = rel.valuation();
        if let Some(sv) = step {
            assert!(sv > r(0, 1));
            let mut order = r(0, 1);
            let mut sign = -1.0;
            while order + sv <= budget {
                pw = pw.mul(&rel);
                pw.trunc = budget;
                acc = acc.add(&pw.scale(c(sign, 0.0)));
                sign = -sign;
                order = order + sv;
                if pw.terms.is_empty() {
                    break;
                }
            }
        }
        // result = acc * L^{-1} * z^{-v}
        let mut out = PuiseuxMatrixSeries::new(self.dim, lcm(self.d, acc.d), budget - v);
        for (e, m) in &acc.terms {
            out.add_term(e - v, m * &lead_inv);
        }
        out.prune();
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let trunc = self.trunc.min(other.trunc);
        let mut keys: Vec<RationalExponent> = self
            .terms
            .keys()
            .chain(other.terms.keys())
            .filter(|e| **e <= trunc)
            .copied()
            .collect();
        keys.sort();
        keys.dedup();
        keys.iter()
            .map(|e| self.coeff(*e).max_abs_diff(&other.coeff(*e)))
            .fold(0.0, f64::max)
    }
}

pub fn lcm(a: i64, b: i64) -> i64 {
    let g = gcd(a.abs(), b.abs());
    if g == 0 {
        return 0;
    }
    a.abs() / g * b.abs()
}

pub fn gcd(mut a: i64, mut b: i64) -> i64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Gauge transform A^P = p^{-1} a p - p^{-1} p'.
pub fn series_gauge_transform(
    a: &PuiseuxMatrixSeries,
    p: &PuiseuxMatrixSeries,
) -> Result<PuiseuxMatrixSeries, AlgebraError> {
    let pinv = p.inverse()?;
    let conj = pinv.mul(&a.mul(p));
    let dterm = pinv.mul(&p.derivative());
    Ok(conj.sub(&dterm))
}

// ---------------------------------------------------------------------------
// Rational-in-x linear systems
// ---------------------------------------------------------------------------

/// One finite pole of A(x): location, order, and coefficients where
/// `coeffs[k]` multiplies (x - location)^{-(k+1)}.
#[derive(Clone, Debug, Serialize)]
pub struct Pole {
    pub location: ComplexScalar,
    pub order: usize,
    pub coeffs: Vec<Mat>,
}

/// A(x) = sum over poles of sum_k coeffs[k]/(x-loc)^{k+1} + sum_n poly[n] x^n.
#[derive(Clone, Debug, Serialize)]
pub struct LinearSystem {
    pub dim: usize,
    pub poles: Vec<Pole>,
    pub poly_part: Vec<Mat>,
}

impl LinearSystem {
    pub fn new(dim: usize) -> Self {
        LinearSystem { dim, poles: vec![], poly_part: vec![] }
    }

    pub fn with_pole(mut self, location: ComplexScalar, coeffs: Vec<Mat>) -> Self {
        for m in &coeffs {
            assert_eq!(m.rows, self.dim);
        }
        self.poles.push(Pole { location, order: coeffs.len(), coeffs });
        self
    }

    pub fn with_poly(mut self, poly: Vec<Mat>) -> Self {
        for m in &poly {
            assert_eq!(m.rows, self.dim);
        }
        self.poly_part = poly;
        self
    }

    /// Exact d/dx of the rational form.
    pub fn derivative_at(&self, x: ComplexScalar) -> Result<Mat, AlgebraError> {
        let mut out = Mat::zeros(self.dim, self.dim);
        for p in &self.poles {
            let dx = x - p.location;
            if dx.norm() < 1e-12 {
                return Err(AlgebraError::EvaluationAtPole);
            }
            for (k, m) in p.coeffs.iter().enumerate() {
                let kk = (k + 1) as f64;
                out = &out - &m.scale(c(kk, 0.0) / dx.powu(k as u32 + 2));
            }
        }
        for (n, m) in self.poly_part.iter().enumerate() {
            if n >= 1 {
                out = &out + &m.scale(c(n as f64, 0.0) * x.powu(n as u32 - 1));
            }
        }
        Ok(out)
    }

    /// Local Puiseux/Laurent expansion around a finite point `u0`
    /// (which may or may not be a pole location), up to exponent `trunc`.
    pub fn expand_at(&self, u0: ComplexScalar, trunc: RationalExponent) -> PuiseuxMatrixSeries {
        let n_max = (*trunc.numer() as f64 / *trunc.denom() as f64).floor() as i64;
        let mut s = PuiseuxMatrixSeries::new(self.dim, 1, trunc);
        for p in &self.poles {
            let v = p.location;
            if (u0 - v).norm() < 1e-12 {
                // principal part: coeffs[k] (x-u0)^{-(k+1)}
                for (k, m) in p.coeffs.iter().enumerate() {
                    s.add_term(r(-(k as i64) - 1, 1), m.clone());
                }
            } else {
                // (x-v)^{-(k+1)} = sum_j binom(k+j, j) (-(x-u0))^j ... expand:
                // 1/(w + a)^{k+1} with w = x-u0, a = u0-v:
                // = a^{-(k+1)} sum_j C(k+j, j) (-w/a)^j
                let a = u0 - v;
                for (k, m) in p.coeffs.iter().enumerate() {
                    let mut coef = a.powi(-(k as i32) - 1);
                    for j in 0..=n_max.max(0) {
                        if j > 0 {
                            // update binomial * (-1/a) factor:
                            // C(k+j, j) = C(k+j-1, j-1) * (k+j)/j
                            coef *= c((k as f64 + j as f64) / j as f64, 0.0) * (-1.0 / a);
                        }
                        s.add_term(r(j, 1), m.scale(coef));
                    }
                }
            }
        }
        for (n, m) in self.poly_part.iter().enumerate() {
            // x^n = (w + u0)^n = sum_j C(n, j) u0^{n-j} w^j
            let n_i = n as i64;
            let mut binom = 1.0;
            for j in 0..=n_i {
                let coef = c(binom, 0.0) * u0.powu((n_i - j) as u32);
                if j <= n_max {
                    s.add_term(r(j, 1), m.scale(coef));
                }
                binom *= (n_i - j) as f64 / (j + 1) as f64;
            }
        }
        s.prune();
        s
    }

    /// Expansion at infinity in the chart z = 1/x of the z-side coefficient
    /// B(z) = -z^{-2} A(1/z) (so that dY/dz = B(z) Y).
    pub fn expand_at_infinity(&self, trunc: RationalExponent) -> PuiseuxMatrixSeries {
        let n_max = (*trunc.numer() as f64 / *trunc.denom() as f64).floor() as i64;
        let mut s = PuiseuxMatrixSeries::new(self.dim, 1, trunc);
        for p in &self.poles {
            let v = p.location;
            for (k, m) in p.coeffs.iter().enumerate() {
                // A-term: C/(1/z - v)^{k+1} = C z^{k+1}/(1-vz)^{k+1}
                //        = C z^{k+1} sum_j C(k+j, j) v^j z^j
                // with the -z^{-2} factor: -C z^{k-1} sum_j ...
                let mut coef = Complex64::one();
                for j in 0..=(n_max - (k as i64) + 1).max(0) {
                    if j > 0 {
                        coef *= c((k as f64 + j as f64) / j as f64, 0.0) * v;
                    }
                    let e = r(k as i64 - 1 + j, 1);
                    if e <= trunc {
                        s.add_term(e, m.scale(-coef));
                    }
                }
            }
        }
        for (n, m) in self.poly_part.iter().enumerate() {
            // -z^{-2} * C z^{-n} = -C z^{-n-2}
            s.add_term(r(-(n as i64) - 2, 1), m.scale(c(-1.0, 0.0)));
        }
        s.prune();
        s
    }
}

/// Evaluate A(x).
pub fn rational_matrix_eval(sys: &LinearSystem, x: ComplexScalar) -> Result<Mat, AlgebraError> {
    let mut out = Mat::zeros(sys.dim, sys.dim);
    for p in &sys.poles {
        let dx = x - p.location;
        if dx.norm() < 1e-12 {
            return Err(AlgebraError::EvaluationAtPole);
        }
        for (k, m) in p.coeffs.iter().enumerate() {
            out = &out + &m.scale(dx.powi(-(k as i32) - 1));
        }
    }
    for (n, m) in sys.poly_part.iter().enumerate() {
        out = &out + &m.scale(x.powu(n as u32));
    }
    Ok(out)
}
