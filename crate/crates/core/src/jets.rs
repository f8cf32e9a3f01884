//! Truncated Taylor series in the Wirtinger variables `δ = z − z₀` and `δ̄`.
//!
//! A [`Jet2`] of order `K` stores the coefficients `c_{ab}` with `a + b ≤ K`
//! densely, ordered by total degree and then by the `δ̄` exponent. With this
//! layout truncation to a lower order is a prefix slice.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

/// Relative threshold below which a constant term counts as zero when inverting.
pub const TAU_DIV: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("jet order mismatch: {left} vs {right}")]
    OrderMismatch { left: usize, right: usize },
    #[error("singular jet: constant term {constant:.3e} against scale {scale:.3e}")]
    Singular { constant: f64, scale: f64 },
    #[error("jet order exhausted; lift at a higher order")]
    OrderExhausted,
}

/// Number of coefficients in the triangle `a + b ≤ order`.
pub fn triangle_len(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// Position of `δ^a δ̄^b` in the coefficient array.
#[inline]
pub fn index(a: usize, b: usize) -> usize {
    let t = a + b;
    t * (t + 1) / 2 + b
}

/// Inverse of [`index`].
fn exponents(i: usize) -> (usize, usize) {
    let mut t = 0;
    while (t + 1) * (t + 2) / 2 <= i {
        t += 1;
    }
    let b = i - t * (t + 1) / 2;
    (t - b, b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    order: usize,
    coeffs: Vec<Complex64>,
}

impl Jet2 {
    pub fn zero(order: usize) -> Self {
        Self { order, coeffs: vec![Complex64::new(0.0, 0.0); triangle_len(order)] }
    }

    pub fn constant(order: usize, c: Complex64) -> Self {
        let mut j = Self::zero(order);
        j.coeffs[0] = c;
        j
    }

    pub fn one(order: usize) -> Self {
        Self::constant(order, Complex64::new(1.0, 0.0))
    }

    /// The coordinate function `δ`.
    pub fn delta(order: usize) -> Self {
        let mut j = Self::zero(order);
        if order > 0 {
            j.coeffs[index(1, 0)] = Complex64::new(1.0, 0.0);
        }
        j
    }

    /// The coordinate function `δ̄`.
    pub fn delta_bar(order: usize) -> Self {
        let mut j = Self::zero(order);
        if order > 0 {
            j.coeffs[index(0, 1)] = Complex64::new(1.0, 0.0);
        }
        j
    }

    pub fn from_coeffs(order: usize, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), triangle_len(order), "coefficient count must match the triangle");
        Self { order, coeffs }
    }

    /// Builds a jet from a coefficient function `(a, b) ↦ c_{ab}`.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut coeffs = Vec::with_capacity(triangle_len(order));
        for t in 0..=order {
            for b in 0..=t {
                coeffs.push(f(t - b, b));
            }
        }
        Self { order, coeffs }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, a: usize, b: usize) -> Complex64 {
        if a + b > self.order {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[index(a, b)]
        }
    }

    pub fn set(&mut self, a: usize, b: usize, c: Complex64) {
        self.coeffs[index(a, b)] = c;
    }

    pub fn value(&self) -> Complex64 {
        self.coeffs[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order);
        Self { order, coeffs: self.coeffs[..triangle_len(order)].to_vec() }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self { order: self.order, coeffs: self.coeffs.iter().map(|x| x * c).collect() }
    }

    /// Product at the common order, rejecting mismatched orders.
    pub fn checked_mul(&self, other: &Self) -> Result<Self, JetError> {
        if self.order != other.order {
            return Err(JetError::OrderMismatch { left: self.order, right: other.order });
        }
        Ok(self.mul_trunc(other))
    }

    /// Product truncated to the smaller of the two orders.
    pub fn mul_trunc(&self, other: &Self) -> Self {
        let k = self.order.min(other.order);
        let mut out = vec![Complex64::new(0.0, 0.0); triangle_len(k)];
        for t1 in 0..=k {
            for b1 in 0..=t1 {
                let x = self.coeffs[t1 * (t1 + 1) / 2 + b1];
                if x.re == 0.0 && x.im == 0.0 {
                    continue;
                }
                for t2 in 0..=(k - t1) {
                    let base2 = t2 * (t2 + 1) / 2;
                    let t = t1 + t2;
                    let base = t * (t + 1) / 2 + b1;
                    for b2 in 0..=t2 {
                        out[base + b2] += x * other.coeffs[base2 + b2];
                    }
                }
            }
        }
        Self { order: k, coeffs: out }
    }

    /// Multiplicative inverse; fails when the constant term is negligible.
    pub fn inv(&self) -> Result<Self, JetError> {
        let c0 = self.coeffs[0];
        let scale = self.max_abs();
        if c0.norm() <= TAU_DIV * scale || c0.norm() == 0.0 {
            return Err(JetError::Singular { constant: c0.norm(), scale });
        }
        let k = self.order;
        let inv0 = Complex64::new(1.0, 0.0) / c0;
        let mut y = vec![Complex64::new(0.0, 0.0); triangle_len(k)];
        y[0] = inv0;
        for t in 1..=k {
            for b in 0..=t {
                let a = t - b;
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..=a {
                    for d in 0..=b {
                        if c == 0 && d == 0 {
                            continue;
                        }
                        acc += self.coeffs[index(c, d)] * y[index(a - c, b - d)];
                    }
                }
                y[index(a, b)] = -acc * inv0;
            }
        }
        Ok(Self { order: k, coeffs: y })
    }

    /// Principal square root; the constant term must be non-zero.
    pub fn sqrt(&self) -> Result<Self, JetError> {
        let c0 = self.coeffs[0];
        let scale = self.max_abs();
        if c0.norm() <= TAU_DIV * scale || c0.norm() == 0.0 {
            return Err(JetError::Singular { constant: c0.norm(), scale });
        }
        let k = self.order;
        let s0 = c0.sqrt();
        let mut y = vec![Complex64::new(0.0, 0.0); triangle_len(k)];
        y[0] = s0;
        for t in 1..=k {
            for b in 0..=t {
                let a = t - b;
                let mut acc = Complex64::new(0.0, 0.0);
                for c in 0..=a {
                    for d in 0..=b {
                        if (c == 0 && d == 0) || (c == a && d == b) {
                            continue;
                        }
                        acc += y[index(c, d)] * y[index(a - c, b - d)];
                    }
                }
                y[index(a, b)] = (self.coeffs[index(a, b)] - acc) / (2.0 * s0);
            }
        }
        Ok(Self { order: k, coeffs: y })
    }

    /// Formal `∂/∂δ`; the result has order `K − 1`.
    pub fn dz(&self) -> Result<Self, JetError> {
        if self.order == 0 {
            return Err(JetError::OrderExhausted);
        }
        let k = self.order - 1;
        Ok(Self::from_fn(k, |a, b| self.coeffs[index(a + 1, b)] * (a + 1) as f64))
    }

    /// Formal `∂/∂δ̄`; the result has order `K − 1`.
    pub fn dzbar(&self) -> Result<Self, JetError> {
        if self.order == 0 {
            return Err(JetError::OrderExhausted);
        }
        let k = self.order - 1;
        Ok(Self::from_fn(k, |a, b| self.coeffs[index(a, b + 1)] * (b + 1) as f64))
    }

    /// Jet of the complex-conjugate function: conjugated coefficients with `a ↔ b`.
    pub fn conj(&self) -> Self {
        Self::from_fn(self.order, |a, b| self.coeffs[index(b, a)].conj())
    }

    /// Evaluates the truncated series at the offset `δ`.
    pub fn eval_offset(&self, delta: Complex64) -> Complex64 {
        let db = delta.conj();
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, c) in self.coeffs.iter().enumerate() {
            let (a, b) = exponents(i);
            acc += c * delta.powu(a as u32) * db.powu(b as u32);
        }
        acc
    }
}

/// Taylor expansion of a holomorphic polynomial (coefficients of `z^k`) at `z0`.
pub fn lift_polynomial(p: &[Complex64], z0: Complex64, order: usize) -> Jet2 {
    // Repeated synthetic division yields the shifted coefficients.
    let mut work: Vec<Complex64> = p.to_vec();
    let mut shifted = Vec::with_capacity(order + 1);
    for _ in 0..=order {
        if work.is_empty() {
            shifted.push(Complex64::new(0.0, 0.0));
            continue;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        let mut quotient = vec![Complex64::new(0.0, 0.0); work.len().saturating_sub(1)];
        for k in (0..work.len()).rev() {
            acc = acc * z0 + work[k];
            if k > 0 {
                quotient[k - 1] = acc;
            }
        }
        shifted.push(acc);
        work = quotient;
    }
    Jet2::from_fn(order, |a, b| if b == 0 { shifted[a] } else { Complex64::new(0.0, 0.0) })
}

pub fn jet_mul(a: &Jet2, b: &Jet2) -> Result<Jet2, JetError> {
    a.checked_mul(b)
}

pub fn jet_inv(a: &Jet2) -> Result<Jet2, JetError> {
    a.inv()
}

pub fn jet_dz(a: &Jet2) -> Result<Jet2, JetError> {
    a.dz()
}

pub fn jet_dzbar(a: &Jet2) -> Result<Jet2, JetError> {
    a.dzbar()
}

pub fn jet_conj(a: &Jet2) -> Jet2 {
    a.conj()
}

fn zip_with(a: &Jet2, b: &Jet2, f: impl Fn(Complex64, Complex64) -> Complex64) -> Jet2 {
    let k = a.order.min(b.order);
    let n = triangle_len(k);
    Jet2 { order: k, coeffs: (0..n).map(|i| f(a.coeffs[i], b.coeffs[i])).collect() }
}

impl Add for &Jet2 {
    type Output = Jet2;
    fn add(self, rhs: &Jet2) -> Jet2 {
        zip_with(self, rhs, |x, y| x + y)
    }
}

impl Sub for &Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: &Jet2) -> Jet2 {
        zip_with(self, rhs, |x, y| x - y)
    }
}

impl Mul for &Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: &Jet2) -> Jet2 {
        self.mul_trunc(rhs)
    }
}

impl Neg for &Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

/// A local section of `ℂⁿ`: one jet per component, all at the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct JetVec {
    entries: Vec<Jet2>,
}

impl JetVec {
    pub fn new(entries: Vec<Jet2>) -> Self {
        if let Some(first) = entries.first() {
            let k = first.order;
            let entries = entries.into_iter().map(|e| e.truncate(k)).collect::<Vec<_>>();
            let k = entries.iter().map(|e| e.order).min().unwrap_or(k);
            return Self { entries: entries.into_iter().map(|e| e.truncate(k)).collect() };
        }
        Self { entries }
    }

    pub fn zero(n: usize, order: usize) -> Self {
        Self { entries: vec![Jet2::zero(order); n] }
    }

    /// The constant section with the given value.
    pub fn constant(v: &[Complex64], order: usize) -> Self {
        Self { entries: v.iter().map(|&c| Jet2::constant(order, c)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn order(&self) -> usize {
        self.entries.first().map_or(0, |e| e.order)
    }

    pub fn entries(&self) -> &[Jet2] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &Jet2 {
        &self.entries[i]
    }

    pub fn value(&self) -> nalgebra::DVector<Complex64> {
        nalgebra::DVector::from_iterator(self.dim(), self.entries.iter().map(|e| e.value()))
    }

    /// Coefficient vector of `δ^a δ̄^b`.
    pub fn coeff(&self, a: usize, b: usize) -> nalgebra::DVector<Complex64> {
        nalgebra::DVector::from_iterator(self.dim(), self.entries.iter().map(|e| e.coeff(a, b)))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(Jet2::max_abs).fold(0.0, f64::max)
    }

    pub fn truncate(&self, order: usize) -> Self {
        Self { entries: self.entries.iter().map(|e| e.truncate(order)).collect() }
    }

    pub fn dz(&self) -> Result<Self, JetError> {
        Ok(Self { entries: self.entries.iter().map(Jet2::dz).collect::<Result<_, _>>()? })
    }

    pub fn dzbar(&self) -> Result<Self, JetError> {
        Ok(Self { entries: self.entries.iter().map(Jet2::dzbar).collect::<Result<_, _>>()? })
    }

    pub fn conj(&self) -> Self {
        Self { entries: self.entries.iter().map(Jet2::conj).collect() }
    }

    /// Hermitian product `Σ uᵢ v̄ᵢ` as a function jet (linear in `self`).
    pub fn inner(&self, other: &JetVec) -> Jet2 {
        let k = self.order().min(other.order());
        let mut acc = Jet2::zero(k);
        for (u, v) in self.entries.iter().zip(&other.entries) {
            acc = &acc + &(u * &v.conj());
        }
        acc
    }

    /// Hermitian product when the conjugate of `other` is already available.
    pub fn inner_with_conj(&self, other_conj: &JetVec) -> Jet2 {
        let k = self.order().min(other_conj.order());
        let mut acc = Jet2::zero(k);
        for (u, v) in self.entries.iter().zip(&other_conj.entries) {
            acc = &acc + &(u * v);
        }
        acc
    }

    /// Bilinear product `Σ uᵢ vᵢ`.
    pub fn dot(&self, other: &JetVec) -> Jet2 {
        self.inner_with_conj(other)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self { entries: self.entries.iter().map(|e| e.scale(c)).collect() }
    }

    /// Multiplies every component by the function jet `f`.
    pub fn mul_fn(&self, f: &Jet2) -> Self {
        Self { entries: self.entries.iter().map(|e| e * f).collect() }
    }

    pub fn add(&self, other: &JetVec) -> Self {
        Self { entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &JetVec) -> Self {
        Self { entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect() }
    }
}

/// Jet with `rows × cols` matrix coefficients, used for projectors and connection forms.
#[derive(Debug, Clone, PartialEq)]
pub struct MatJet {
    order: usize,
    rows: usize,
    cols: usize,
    coeffs: Vec<DMatrix<Complex64>>,
}

impl MatJet {
    pub fn zero(rows: usize, cols: usize, order: usize) -> Self {
        Self { order, rows, cols, coeffs: vec![DMatrix::zeros(rows, cols); triangle_len(order)] }
    }

    pub fn constant(m: DMatrix<Complex64>, order: usize) -> Self {
        let mut out = Self::zero(m.nrows(), m.ncols(), order);
        out.coeffs[0] = m;
        out
    }

    pub fn identity(n: usize, order: usize) -> Self {
        Self::constant(DMatrix::identity(n, n), order)
    }

    /// Matrix whose columns are the given sections.
    pub fn from_columns(rows: usize, cols: &[JetVec], order: usize) -> Self {
        let mut out = Self::zero(rows, cols.len(), order);
        for (j, col) in cols.iter().enumerate() {
            for (i, e) in col.entries().iter().enumerate() {
                for (idx, c) in e.coeffs().iter().enumerate().take(triangle_len(order)) {
                    out.coeffs[idx][(i, j)] = *c;
                }
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> JetVec {
        JetVec::new(
            (0..self.rows)
                .map(|i| Jet2::from_coeffs(self.order, self.coeffs.iter().map(|m| m[(i, j)]).collect()))
                .collect(),
        )
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn coeff(&self, a: usize, b: usize) -> &DMatrix<Complex64> {
        &self.coeffs[index(a, b)]
    }

    pub fn value(&self) -> &DMatrix<Complex64> {
        &self.coeffs[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().flat_map(|m| m.iter()).map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order);
        Self { order, rows: self.rows, cols: self.cols, coeffs: self.coeffs[..triangle_len(order)].to_vec() }
    }

    pub fn mul(&self, other: &MatJet) -> MatJet {
        assert_eq!(self.cols, other.rows, "matrix jet shapes must compose");
        let k = self.order.min(other.order);
        let mut out = Self::zero(self.rows, other.cols, k);
        let one = Complex64::new(1.0, 0.0);
        for t1 in 0..=k {
            for b1 in 0..=t1 {
                let x = &self.coeffs[t1 * (t1 + 1) / 2 + b1];
                if x.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                    continue;
                }
                for t2 in 0..=(k - t1) {
                    for b2 in 0..=t2 {
                        let y = &other.coeffs[t2 * (t2 + 1) / 2 + b2];
                        out.coeffs[index(t1 + t2 - b1 - b2, b1 + b2)].gemm(one, x, y, one);
                    }
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &JetVec) -> JetVec {
        let m = MatJet::from_columns(v.dim(), std::slice::from_ref(v), v.order());
        self.mul(&m).column(0)
    }

    pub fn add(&self, other: &MatJet) -> MatJet {
        let k = self.order.min(other.order);
        Self {
            order: k,
            rows: self.rows,
            cols: self.cols,
            coeffs: (0..triangle_len(k)).map(|i| &self.coeffs[i] + &other.coeffs[i]).collect(),
        }
    }

    pub fn sub(&self, other: &MatJet) -> MatJet {
        let k = self.order.min(other.order);
        Self {
            order: k,
            rows: self.rows,
            cols: self.cols,
            coeffs: (0..triangle_len(k)).map(|i| &self.coeffs[i] - &other.coeffs[i]).collect(),
        }
    }

    pub fn scale(&self, c: Complex64) -> MatJet {
        Self { order: self.order, rows: self.rows, cols: self.cols, coeffs: self.coeffs.iter().map(|m| m * c).collect() }
    }

    /// Pointwise conjugate transpose.
    pub fn adjoint(&self) -> MatJet {
        let mut out = Self::zero(self.cols, self.rows, self.order);
        for t in 0..=self.order {
            for b in 0..=t {
                out.coeffs[index(t - b, b)] = self.coeffs[index(b, t - b)].adjoint();
            }
        }
        out
    }

    pub fn dz(&self) -> Result<MatJet, JetError> {
        if self.order == 0 {
            return Err(JetError::OrderExhausted);
        }
        let k = self.order - 1;
        let mut out = Self::zero(self.rows, self.cols, k);
        for t in 0..=k {
            for b in 0..=t {
                let a = t - b;
                out.coeffs[index(a, b)] = &self.coeffs[index(a + 1, b)] * Complex64::new((a + 1) as f64, 0.0);
            }
        }
        Ok(out)
    }

    pub fn dzbar(&self) -> Result<MatJet, JetError> {
        if self.order == 0 {
            return Err(JetError::OrderExhausted);
        }
        let k = self.order - 1;
        let mut out = Self::zero(self.rows, self.cols, k);
        for t in 0..=k {
            for b in 0..=t {
                let a = t - b;
                out.coeffs[index(a, b)] = &self.coeffs[index(a, b + 1)] * Complex64::new((b + 1) as f64, 0.0);
            }
        }
        Ok(out)
    }

    /// Inverse of a square matrix jet with invertible constant term.
    pub fn inverse(&self) -> Result<MatJet, JetError> {
        assert_eq!(self.rows, self.cols, "only square matrix jets are invertible");
        let c0 = &self.coeffs[0];
        let inv0 = c0.clone().try_inverse().ok_or(JetError::Singular { constant: 0.0, scale: self.max_abs() })?;
        let k = self.order;
        let mut out = Self::zero(self.rows, self.cols, k);
        out.coeffs[0] = inv0.clone();
        let one = Complex64::new(1.0, 0.0);
        for t in 1..=k {
            for b in 0..=t {
                let a = t - b;
                let mut acc = DMatrix::zeros(self.rows, self.cols);
                for c in 0..=a {
                    for d in 0..=b {
                        if c == 0 && d == 0 {
                            continue;
                        }
                        acc.gemm(one, &self.coeffs[index(c, d)], &out.coeffs[index(a - c, b - d)], one);
                    }
                }
                out.coeffs[index(a, b)] = -(&inv0 * acc);
            }
        }
        Ok(out)
    }
}
