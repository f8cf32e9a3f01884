//! Cartan embedding, the connection `A_z`, the loop-parameter operator `T` and polynomial
//! extended solutions.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::frames::{spectral_norm, EvalCtx, Subbundle};
use crate::jets::MatJet;
use crate::sampling::eval_at;
use crate::settings::{LabError, Result, Settings};

/// Jets of the Cartan involution `π_φ − π_φ⊥` at a point.
#[derive(Debug, Clone)]
pub struct CartanMatrix {
    pub point: Complex64,
    pub jet: MatJet,
}

/// Projector jet `E Eᴴ` of a bundle at the given order.
pub fn projector_jet(ctx: &EvalCtx<'_>, b: &Subbundle, order: usize) -> Result<MatJet> {
    let n = b.ambient();
    let f = ctx.frame(b, order)?;
    if f.rank() == 0 {
        return Ok(MatJet::zero(n, n, order));
    }
    let e = MatJet::from_columns(n, &f.basis, order);
    Ok(e.mul(&e.adjoint()))
}

pub fn cartan_at(ctx: &EvalCtx<'_>, phi: &Subbundle, order: usize) -> Result<CartanMatrix> {
    let n = phi.ambient();
    let p = projector_jet(ctx, phi, order)?;
    let jet = p.scale(Complex64::new(2.0, 0.0)).sub(&MatJet::identity(n, order));
    Ok(CartanMatrix { point: ctx.point(), jet })
}

pub fn cartan(phi: &Subbundle, z0: Complex64, order: usize, settings: &Settings) -> Result<CartanMatrix> {
    cartan_at(&EvalCtx::new(z0, settings), phi, order)
}

/// `A^φ_z` and `A^φ_z̄`, both to jet order `order`.
#[derive(Debug, Clone)]
pub struct Connection {
    pub cartan: MatJet,
    pub a_z: MatJet,
    pub a_zbar: MatJet,
}

pub fn connection_at(ctx: &EvalCtx<'_>, phi: &Subbundle, order: usize) -> Result<Connection> {
    let m = cartan_at(ctx, phi, order + 1)?.jet;
    let half = Complex64::new(0.5, 0.0);
    let a_z = m.mul(&m.dz()?).scale(half);
    let a_zbar = m.mul(&m.dzbar()?).scale(half);
    Ok(Connection { cartan: m, a_z, a_zbar })
}

pub fn a_z(phi: &Subbundle, z0: Complex64, order: usize, settings: &Settings) -> Result<MatJet> {
    Ok(connection_at(&EvalCtx::new(z0, settings), phi, order)?.a_z)
}

/// Laurent polynomial in `λ` with matrix-jet coefficients on the window `[lo, lo + len)`.
#[derive(Debug, Clone)]
pub struct LambdaMatrix {
    pub lo: i32,
    pub coeffs: Vec<MatJet>,
}

impl LambdaMatrix {
    pub fn identity(n: usize, order: usize) -> Self {
        Self { lo: 0, coeffs: vec![MatJet::identity(n, order)] }
    }

    /// `π + λ(I − π)`.
    pub fn uniton_factor(p: &MatJet) -> Self {
        let n = p.nrows();
        let perp = MatJet::identity(n, p.order()).sub(p);
        Self { lo: 0, coeffs: vec![p.clone(), perp] }
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.coeffs.len() as i32 - 1
    }

    pub fn mul(&self, other: &LambdaMatrix) -> LambdaMatrix {
        let len = self.coeffs.len() + other.coeffs.len() - 1;
        let (r, c) = (self.coeffs[0].nrows(), other.coeffs[0].ncols());
        let order = self.coeffs[0].order().min(other.coeffs[0].order());
        let mut coeffs = vec![MatJet::zero(r, c, order); len];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] = coeffs[i + j].add(&a.mul(b));
            }
        }
        LambdaMatrix { lo: self.lo + other.lo, coeffs }.trimmed(0.0)
    }

    pub fn eval(&self, lambda: Complex64) -> MatJet {
        let mut acc = MatJet::zero(self.coeffs[0].nrows(), self.coeffs[0].ncols(), self.coeffs[0].order());
        for (i, c) in self.coeffs.iter().enumerate() {
            acc = acc.add(&c.scale(lambda.powi(self.lo + i as i32)));
        }
        acc
    }

    /// Drops end blocks whose magnitude is at most `rel` times the largest block.
    pub fn trimmed(mut self, rel: f64) -> Self {
        let top = self.coeffs.iter().map(MatJet::max_abs).fold(0.0, f64::max);
        let small = |m: &MatJet| m.max_abs() <= rel * top;
        while self.coeffs.len() > 1 && small(self.coeffs.last().unwrap()) {
            self.coeffs.pop();
        }
        while self.coeffs.len() > 1 && small(&self.coeffs[0]) {
            self.coeffs.remove(0);
            self.lo += 1;
        }
        self
    }

    /// Values at the base point as `{window: [lo, hi], coeffs: {power: matrix}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut coeffs = BTreeMap::new();
        for (i, c) in self.coeffs.iter().enumerate() {
            let m = c.value();
            let rows: Vec<Vec<[f64; 2]>> =
                (0..m.nrows()).map(|r| (0..m.ncols()).map(|k| [m[(r, k)].re, m[(r, k)].im]).collect()).collect();
            coeffs.insert((self.lo + i as i32).to_string(), rows);
        }
        serde_json::json!({ "window": [self.lo, self.hi()], "coeffs": coeffs })
    }
}

/// The `n` standard sections (as columns) expanded in powers of `λ`.
#[derive(Debug, Clone)]
pub struct LambdaSection {
    pub lo: i32,
    pub coeffs: Vec<MatJet>,
}

impl LambdaSection {
    pub fn standard(n: usize, order: usize) -> Self {
        Self { lo: 0, coeffs: vec![MatJet::identity(n, order)] }
    }

    /// Largest power of `λ^{-1}` present.
    pub fn neg_degree(&self) -> usize {
        (-self.lo).max(0) as usize
    }

    fn trim(&mut self, rel: f64) {
        let top = self.coeffs.iter().map(MatJet::max_abs).fold(0.0, f64::max);
        while self.coeffs.len() > 1 && self.coeffs[0].max_abs() <= rel * top {
            self.coeffs.remove(0);
            self.lo += 1;
        }
        while self.coeffs.len() > 1 && self.coeffs.last().unwrap().max_abs() <= rel * top {
            self.coeffs.pop();
        }
    }
}

/// `T s = ∂_z s + (1 − λ^{-1}) A_z s`, coefficientwise `(Ts)_j = ∂_z s_j + A_z(s_j − s_{j+1})`.
pub fn t_apply(a_z: &MatJet, s: &LambdaSection) -> Result<LambdaSection> {
    let len = s.coeffs.len();
    let (r, c) = (s.coeffs[0].nrows(), s.coeffs[0].ncols());
    let order = s.coeffs[0].order().checked_sub(1).ok_or(crate::jets::JetError::OrderExhausted)?;
    let zero = MatJet::zero(r, c, order + 1);
    let mut out = Vec::with_capacity(len + 1);
    // new lowest slot: −A_z s_lo
    out.push(a_z.mul(&s.coeffs[0]).scale(Complex64::new(-1.0, 0.0)).truncate(order));
    for j in 0..len {
        let next = s.coeffs.get(j + 1).unwrap_or(&zero);
        let d = s.coeffs[j].dz()?;
        out.push(d.add(&a_z.mul(&s.coeffs[j].sub(next))).truncate(order));
    }
    Ok(LambdaSection { lo: s.lo - 1, coeffs: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Finiteness {
    Finite,
    InfiniteEvidence,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinitenessReport {
    pub verdict: Finiteness,
    pub points: Vec<[f64; 2]>,
    /// `λ^{-1}`-degree after each application of `T`, per point.
    pub degrees: Vec<Vec<usize>>,
    pub cap: usize,
}

/// λ^{-1}-degrees of `T^i` applied to the standard sections, `i = 1..=i_max`.
pub fn power_degrees(ctx: &EvalCtx<'_>, phi: &Subbundle, i_max: usize, order: usize, cap: usize) -> Result<Vec<usize>> {
    let n = phi.ambient();
    let order = order.max(i_max + 1);
    let conn = connection_at(ctx, phi, order)?;
    let mut s = LambdaSection::standard(n, order);
    let mut degrees = Vec::with_capacity(i_max);
    for _ in 0..i_max {
        s = t_apply(&conn.a_z, &s)?;
        s.trim(ctx.settings().tol.trim);
        degrees.push(s.neg_degree());
        if s.neg_degree() > cap {
            break;
        }
    }
    Ok(degrees)
}

fn classify_degrees(degrees: &[usize], n: usize, cap: usize) -> Finiteness {
    let top = degrees.iter().copied().max().unwrap_or(0);
    if top >= cap {
        return Finiteness::InfiniteEvidence;
    }
    if degrees.len() > n {
        let tail = &degrees[degrees.len() - n - 1..];
        if tail.iter().all(|&d| d == tail[0]) {
            return Finiteness::Finite;
        }
    }
    Finiteness::Inconclusive
}

pub fn default_power_count(n: usize) -> usize {
    3 * n
}

pub fn degree_cap(n: usize) -> usize {
    n + 4
}

/// Finiteness test: whether the `λ^{-1}`-degree of `T^i` stalls, at each of the points.
pub fn bounded_powers_test(phi: &Subbundle, i_max: usize, points: &[Complex64], settings: &Settings) -> Result<FinitenessReport> {
    let n = phi.ambient();
    let cap = degree_cap(n);
    let order = settings.jet_order(n);
    let rows = eval_at(points, |z| power_degrees(&EvalCtx::new(z, settings), phi, i_max, order, cap))?;
    if rows.is_empty() {
        return Err(LabError::Inconclusive("no valid points for the finiteness test".into()));
    }
    let verdicts: Vec<Finiteness> = rows.iter().map(|r| classify_degrees(&r.1, n, cap)).collect();
    let verdict = if verdicts.iter().all(|v| *v == verdicts[0]) { verdicts[0] } else { Finiteness::Inconclusive };
    Ok(FinitenessReport {
        verdict,
        points: rows.iter().map(|r| [r.0.re, r.0.im]).collect(),
        degrees: rows.into_iter().map(|r| r.1).collect(),
        cap,
    })
}

/// How far a bundle is from being a uniton for the harmonic map `Φ(−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitonResiduals {
    /// `‖π_α^⊥ (∂_z̄ + A_z̄) E_α‖`.
    pub holomorphic: f64,
    /// `‖π_α^⊥ A_z E_α‖`.
    pub closure: f64,
}

/// `A_z`, `A_z̄` of the harmonic map `Φ(−1)`, as values at the base point.
pub fn extended_connection(phi: &LambdaMatrix) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let m = phi.eval(Complex64::new(-1.0, 0.0));
    let inv = m.value().clone().try_inverse().ok_or_else(|| LabError::Numerical("Φ(−1) is singular".into()))?;
    let half = Complex64::new(0.5, 0.0);
    Ok((&inv * m.dz()?.value() * half, &inv * m.dzbar()?.value() * half))
}

pub fn uniton_residuals(ctx: &EvalCtx<'_>, phi: &LambdaMatrix, alpha: &Subbundle) -> Result<UnitonResiduals> {
    let n = alpha.ambient();
    let (az, azb) = extended_connection(phi)?;
    let f = ctx.frame(alpha, 1)?;
    let e = f.matrix(n);
    let mut de = DMatrix::zeros(n, f.rank());
    for (j, b) in f.basis.iter().enumerate() {
        de.set_column(j, &b.coeff(0, 1));
    }
    let perp = DMatrix::identity(n, n) - &e * e.adjoint();
    Ok(UnitonResiduals {
        holomorphic: spectral_norm(&(&perp * (de + &azb * &e))),
        closure: spectral_norm(&(&perp * &az * &e)),
    })
}

/// `Φ (π_α + λ π_α^⊥)` without checking the uniton conditions.
pub fn add_uniton_unchecked(ctx: &EvalCtx<'_>, phi: &LambdaMatrix, alpha: &Subbundle) -> Result<LambdaMatrix> {
    let order = phi.coeffs[0].order();
    let p = projector_jet(ctx, alpha, order)?;
    Ok(phi.mul(&LambdaMatrix::uniton_factor(&p)))
}

/// `Φ (π_α + λ π_α^⊥)` after verifying that `α` is a uniton for `Φ`.
pub fn add_uniton(ctx: &EvalCtx<'_>, phi: &LambdaMatrix, alpha: &Subbundle) -> Result<LambdaMatrix> {
    let r = uniton_residuals(ctx, phi, alpha)?;
    let tol = ctx.settings().tol.harm;
    if r.holomorphic >= tol || r.closure >= tol {
        return Err(LabError::Usage(format!(
            "{} is not a uniton: holomorphicity residual {:.3e}, closure residual {:.3e}",
            alpha.name(),
            r.holomorphic,
            r.closure
        )));
    }
    add_uniton_unchecked(ctx, phi, alpha)
}

/// Builds `Φ = (π_{α₁} + λπ⊥)⋯(π_{α_r} + λπ⊥)` at a point, checking each uniton.
pub fn extended_solution(ctx: &EvalCtx<'_>, n: usize, unitons: &[Subbundle], order: usize) -> Result<LambdaMatrix> {
    let mut phi = LambdaMatrix::identity(n, order);
    for a in unitons {
        phi = add_uniton(ctx, &phi, a)?;
    }
    Ok(phi)
}

/// 8th roots of unity other than 1.
pub fn loop_samples() -> Vec<Complex64> {
    (1..8).map(|k| Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / 8.0)).collect()
}

/// `max_λ ‖Φ⁻¹∂_zΦ − (1−λ⁻¹)A_z‖ + ‖Φ⁻¹∂_z̄Φ − (1−λ)A_z̄‖` over the loop samples.
pub fn extended_solution_residual(phi: &LambdaMatrix) -> Result<f64> {
    let (az, azb) = extended_connection(phi)?;
    let one = Complex64::new(1.0, 0.0);
    let mut worst: Option<f64> = None;
    for lambda in loop_samples() {
        let m = phi.eval(lambda);
        let Some(inv) = m.value().clone().try_inverse() else { continue };
        let rz = &inv * m.dz()?.value() - &az * (one - one / lambda);
        let rzb = &inv * m.dzbar()?.value() - &azb * (one - lambda);
        let r = spectral_norm(&rz) + spectral_norm(&rzb);
        worst = Some(worst.map_or(r, |w: f64| w.max(r)));
    }
    worst.ok_or_else(|| LabError::Numerical("Φ(λ) singular at every loop sample".into()))
}

/// `‖(A_z)^n‖` and `|tr (A_z)²|` at a point.
pub fn nilconformality_at(ctx: &EvalCtx<'_>, phi: &Subbundle) -> Result<(f64, f64)> {
    let n = phi.ambient();
    let a = connection_at(ctx, phi, 0)?.a_z.value().clone();
    let mut p = DMatrix::identity(n, n);
    for _ in 0..n {
        p = &p * &a;
    }
    Ok((spectral_norm(&p), (&a * &a).trace().norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{bundle_sum, complement, HoloCurve};
    use crate::sequences::{gauss_forward, sff_at};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn line() -> Subbundle {
        Subbundle::span_curve(&HoloCurve::from_real("l", &[&[1.0], &[0.0, 1.0]]).unwrap())
    }

    #[test]
    fn cartan_of_coordinate_line() {
        let s = Settings::default();
        let m = cartan(&Subbundle::coordinate(2, &[0]), c(0.2, 0.3), 2, &s).unwrap();
        assert_eq!(m.jet.value()[(0, 0)], c(1.0, 0.0));
        assert_eq!(m.jet.value()[(1, 1)], c(-1.0, 0.0));
        assert_eq!(m.jet.max_abs(), 1.0);
        let m = cartan(&line(), c(0.0, 0.0), 2, &s).unwrap();
        assert!((m.jet.value()[(0, 0)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!(m.jet.coeff(1, 0).iter().any(|x| x.norm() > 0.5));
    }

    #[test]
    fn cartan_is_an_involution_as_a_jet() {
        let s = Settings::default();
        let h = HoloCurve::new("h", vec![vec![c(1.0, 0.0), c(0.0, 1.0)], vec![c(0.0, 0.0), c(2.0, 0.0), c(1.0, -1.0)], vec![c(0.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]]).unwrap();
        let m = cartan(&Subbundle::span_curve(&h), c(0.3, -0.2), 5, &s).unwrap().jet;
        let id = MatJet::identity(3, 5);
        assert!(m.mul(&m).sub(&id).max_abs() < 1e-9);
    }

    #[test]
    fn connection_blocks_match_sff() {
        let s = Settings::default();
        let phi = line();
        let ctx = EvalCtx::new(c(0.25, 0.1), &s);
        let a = connection_at(&ctx, &phi, 0).unwrap().a_z.value().clone();
        let perp = complement(&phi);
        let e = ctx.frame_matrix(&phi).unwrap();
        let f = ctx.frame_matrix(&perp).unwrap();
        let want = -sff_at(&ctx, &phi, &perp).unwrap();
        assert!(spectral_norm(&(f.adjoint() * &a * &e - want)) < 1e-12);
        assert!(spectral_norm(&(&a * &a)) < 1e-12);
    }

    #[test]
    fn holomorphic_map_has_bounded_powers() {
        let s = Settings::default();
        let pts = crate::sampling::sample_points(1, 2);
        let r = bounded_powers_test(&line(), 6, &pts, &s).unwrap();
        assert_eq!(r.verdict, Finiteness::Finite);
        assert!(r.degrees.iter().flatten().all(|&d| d <= 1));
        let k = bounded_powers_test(&Subbundle::coordinate(2, &[0]), 6, &pts, &s).unwrap();
        assert_eq!(k.verdict, Finiteness::Finite);
        assert!(k.degrees.iter().flatten().all(|&d| d == 0));
    }

    #[test]
    fn constant_section_is_killed_by_t_for_constant_map() {
        let s = Settings::default();
        let ctx = EvalCtx::new(c(0.1, 0.1), &s);
        let conn = connection_at(&ctx, &Subbundle::coordinate(3, &[0, 2]), 3).unwrap();
        let t = t_apply(&conn.a_z, &LambdaSection::standard(3, 3)).unwrap();
        assert!(t.coeffs.iter().all(|m| m.max_abs() == 0.0));
    }

    #[test]
    fn one_uniton_extended_solution() {
        let s = Settings::default();
        let ctx = EvalCtx::new(c(0.3, 0.4), &s);
        let id = LambdaMatrix::identity(2, 2);
        assert_eq!(extended_solution_residual(&id).unwrap(), 0.0);
        let phi = add_uniton(&ctx, &id, &line()).unwrap();
        assert_eq!((phi.lo, phi.hi()), (0, 1));
        assert!(extended_solution_residual(&phi).unwrap() < 1e-8);
        let at_one = phi.eval(c(1.0, 0.0));
        assert!(at_one.sub(&MatJet::identity(2, 2)).max_abs() < 1e-12);
        let full = add_uniton(&ctx, &phi, &Subbundle::full(2)).unwrap();
        assert!(extended_solution_residual(&full).unwrap() < 1e-8);
    }

    #[test]
    fn osculating_chain_and_corrupted_control() {
        let s = Settings::default();
        let h = Subbundle::span_curve(&HoloCurve::from_real("v", &[&[1.0], &[0.0, 2f64.sqrt()], &[0.0, 0.0, 1.0]]).unwrap());
        let osc = bundle_sum(&h, &gauss_forward(&h));
        let ctx = EvalCtx::new(c(0.2, -0.3), &s);
        let phi = extended_solution(&ctx, 3, &[h.clone(), osc], 2).unwrap();
        assert!(phi.hi() <= 2);
        assert!(extended_solution_residual(&phi).unwrap() < 1e-8);

        let phi1 = extended_solution(&ctx, 3, &[h], 2).unwrap();
        let bad = Subbundle::coordinate(3, &[2]);
        assert!(add_uniton(&ctx, &phi1, &bad).is_err());
        let corrupted = add_uniton_unchecked(&ctx, &phi1, &bad).unwrap();
        assert!(extended_solution_residual(&corrupted).unwrap() > 1e-3);
    }
}
