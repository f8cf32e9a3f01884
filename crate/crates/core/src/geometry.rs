//! Veronese curves, the matrix `U₀`, quadric curves, real mixed pairs and induced metrics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::frames::{bundle_sum, conj_bundle, fibre_distance_at, EvalCtx, HoloCurve, Subbundle};
use crate::sampling::eval_at;
use crate::sequences::{gauss_forward, gauss_iterate, IsotropyOrder};
use crate::settings::{LabError, Result, Settings};
use crate::unitons::projector_jet;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn binomial(m: usize, r: usize) -> f64 {
    (0..r).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// `V₀^{(m)}: z ↦ [1, √C(m,1) z, …, √C(m,r) z^r, …, z^m]`.
pub fn veronese_curve(m: usize) -> HoloCurve {
    let coeffs = (0..=m)
        .map(|r| {
            let mut v = vec![c(0.0, 0.0); r + 1];
            v[r] = c(binomial(m, r).sqrt(), 0.0);
            v
        })
        .collect();
    HoloCurve::new(format!("V0^({m})"), coeffs).expect("Veronese curve is non-zero")
}

/// `V_p^{(m)} = G^{(p)}(V₀^{(m)})`.
pub fn veronese(m: usize, p: usize) -> Result<Subbundle> {
    if p > m {
        return Err(LabError::usage(format!("Veronese index p = {p} exceeds m = {m}")));
    }
    Ok(gauss_iterate(&Subbundle::span_curve(&veronese_curve(m)), p).named(format!("V{p}^({m})")))
}

/// The unitary matrix `U₀` with `U₀ᵀU₀ = W₀`, only for `p = 2`.
pub fn u0_matrix(p: usize) -> Result<DMatrix<Complex64>> {
    if p != 2 {
        return Err(LabError::usage(format!("U0 is only available for p = 2, not {p}")));
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let z = c(0.0, 0.0);
    #[rustfmt::skip]
    let rows = [
        [c(s, 0.0), z, z, z, c(s, 0.0)],
        [c(0.0, s), z, z, z, c(0.0, -s)],
        [z, c(s, 0.0), z, c(-s, 0.0), z],
        [z, c(0.0, s), z, c(0.0, s), z],
        [z, z, c(1.0, 0.0), z, z],
    ];
    Ok(DMatrix::from_fn(5, 5, |i, j| rows[i][j]))
}

/// `antidiag(1, −1, 1, …, 1)` of odd size `n`.
pub fn w0(n: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(n, n, |i, j| if i + j == n - 1 { c(if j % 2 == 0 { 1.0 } else { -1.0 }, 0.0) } else { c(0.0, 0.0) })
}

/// The curve `[1+z⁴, i(1−z⁴), 2(z−z³), 2i(z+z³), 2√3 z²]`.
pub fn u0v4_curve() -> HoloCurve {
    let z = c(0.0, 0.0);
    let r3 = 2.0 * 3f64.sqrt();
    HoloCurve::new(
        "u0v4",
        vec![
            vec![c(1.0, 0.0), z, z, z, c(1.0, 0.0)],
            vec![c(0.0, 1.0), z, z, z, c(0.0, -1.0)],
            vec![z, c(2.0, 0.0), z, c(-2.0, 0.0)],
            vec![z, c(0.0, 2.0), z, c(0.0, 2.0)],
            vec![z, z, c(r3, 0.0)],
        ],
    )
    .expect("curve is non-zero")
}

/// Isometric injection `ℂᵐ → ℂ²ᵐ`, `e_i ↦ (e_{2i−1} + i e_{2i})/√2`, whose image is isotropic.
pub fn isotropic_injection(m: usize) -> DMatrix<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = DMatrix::zeros(2 * m, m);
    for i in 0..m {
        out[(2 * i, i)] = c(s, 0.0);
        out[(2 * i + 1, i)] = c(0.0, s);
    }
    out
}

/// Whether `Σ H_j(z)²` vanishes identically (coefficients below `1e−12` relative).
pub fn quadric_member(h: &HoloCurve) -> bool {
    let deg = h.degree();
    let mut sq = vec![c(0.0, 0.0); 2 * deg + 1];
    let mut scale: f64 = 0.0;
    for comp in h.coeffs() {
        for (i, a) in comp.iter().enumerate() {
            scale = scale.max(a.norm());
            for (j, b) in comp.iter().enumerate() {
                sq[i + j] += a * b;
            }
        }
    }
    sq.iter().all(|x| x.norm() <= 1e-12 * scale * scale)
}

/// `h = (1 − y·y, i(1 + y·y), 2y)` for a polynomial curve `y` in `ℂ^{n−2}`.
pub fn quadric_from(y: &[Vec<Complex64>], label: impl Into<String>) -> Result<HoloCurve> {
    let deg = y.iter().map(Vec::len).max().unwrap_or(0);
    let mut q = vec![c(0.0, 0.0); (2 * deg).max(1)];
    for comp in y {
        for (i, a) in comp.iter().enumerate() {
            for (j, b) in comp.iter().enumerate() {
                q[i + j] += a * b;
            }
        }
    }
    let mut first: Vec<Complex64> = q.iter().map(|x| -x).collect();
    first[0] += c(1.0, 0.0);
    let mut second: Vec<Complex64> = q.iter().map(|x| x * c(0.0, 1.0)).collect();
    second[0] += c(0.0, 1.0);
    let mut coeffs = vec![first, second];
    coeffs.extend(y.iter().map(|comp| comp.iter().map(|x| x * 2.0).collect()));
    HoloCurve::new(label, coeffs)
}

/// The conic `Q₁`: `[1 − z², i(1 + z²), 2z]`.
pub fn q1_curve() -> HoloCurve {
    quadric_from(&[vec![c(0.0, 0.0), c(1.0, 0.0)]], "Q1").expect("conic is non-zero")
}

/// Random quadric curve in `ℂⁿ` from a random polynomial `y` of the given degree.
pub fn random_quadric(n: usize, degree: usize, rng: &mut impl Rng) -> Result<HoloCurve> {
    if n < 3 {
        return Err(LabError::usage("quadric curves need n >= 3"));
    }
    let y: Vec<Vec<Complex64>> = (0..n - 2)
        .map(|_| (0..=degree).map(|_| c(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)).collect())
        .collect();
    quadric_from(&y, format!("quadric:{n}"))
}

/// `h ⊕ h̄` for a curve in the quadric.
pub fn real_mixed_pair(h: &HoloCurve) -> Result<Subbundle> {
    if !quadric_member(h) {
        return Err(LabError::usage(format!("{} does not lie in the quadric", h.label())));
    }
    let hb = Subbundle::span_curve(h);
    Ok(bundle_sum(&hb, &conj_bundle(&hb)).named(format!("{} + conj", h.label())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RealIsotropy {
    pub order: IsotropyOrder,
    /// False when a finite order is even, which must not happen for quadric curves.
    pub parity_ok: bool,
}

/// Largest `r` with `h_i ⟂ h̄` for `0 ≤ i ≤ r`, where `h_i = G^{(i)}(h)`.
pub fn real_isotropy_order(h: &HoloCurve, r_cap: usize, settings: &Settings) -> Result<RealIsotropy> {
    if !quadric_member(h) {
        return Err(LabError::usage(format!("{} does not lie in the quadric", h.label())));
    }
    let base = Subbundle::span_curve(h);
    let bar = conj_bundle(&base);
    let mut cur = base;
    let mut order = IsotropyOrder::Inconclusive;
    for i in 0..=r_cap {
        if cur.generic_rank(settings)? == 0 {
            order = IsotropyOrder::Infinite;
            break;
        }
        if !crate::frames::orthogonal_default(&cur, &bar, settings)? {
            order = if i == 0 { IsotropyOrder::Finite(0) } else { IsotropyOrder::Finite(i - 1) };
            break;
        }
        cur = gauss_forward(&cur);
    }
    let parity_ok = order.finite().is_none_or(|r| r % 2 == 1);
    Ok(RealIsotropy { order, parity_ok })
}

/// Whether `f_{2p−i}` and `conj(f_i)` have the same fibres for `i = 0..=2p`.
pub fn totally_isotropic_check(f: &HoloCurve, p: usize, points: &[Complex64], settings: &Settings) -> Result<bool> {
    let base = Subbundle::span_curve(f);
    let mut flag = vec![base];
    for _ in 0..2 * p {
        let next = gauss_forward(flag.last().unwrap());
        flag.push(next);
    }
    for b in &flag {
        if b.generic_rank(settings)? == 0 {
            return Err(LabError::usage(format!("{} is not full in CP^{}", f.label(), 2 * p)));
        }
    }
    let dists = eval_at(points, |z| {
        let ctx = EvalCtx::new(z, settings);
        let mut worst: f64 = 0.0;
        for i in 0..=2 * p {
            worst = worst.max(fibre_distance_at(&ctx, &flag[2 * p - i], &conj_bundle(&flag[i]))?);
        }
        Ok(worst)
    })?;
    Ok(dists.iter().all(|d| d.1 < 1e-7))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSample {
    pub z0: [f64; 2],
    pub lambda_g: f64,
    #[serde(rename = "K")]
    pub k: f64,
}

/// Conformal factor `λ_g = ‖A′_φ‖² + ‖A″_φ‖² = ‖∂_z π_φ‖²` and its Gauss curvature
/// `K = −(2/λ_g) ∂_z∂_z̄ log λ_g`.
pub fn induced_metric_at(ctx: &EvalCtx<'_>, phi: &Subbundle) -> Result<MetricSample> {
    let p = projector_jet(ctx, phi, 3)?;
    let dp = p.dz()?;
    let prod = dp.mul(&dp.adjoint());
    let n = phi.ambient();
    let lam = crate::jets::Jet2::from_fn(2, |a, b| (0..n).map(|i| prod.coeff(a, b)[(i, i)]).sum());
    let c00 = lam.coeff(0, 0).re;
    let z0 = [ctx.point().re, ctx.point().im];
    if c00 <= ctx.settings().tol.rank {
        return Err(LabError::Numerical(format!("branch point at {}: lambda_g = {c00:.3e}", ctx.point())));
    }
    let ddbar_log = lam.coeff(1, 1).re / c00 - (lam.coeff(1, 0) * lam.coeff(0, 1)).re / (c00 * c00);
    Ok(MetricSample { z0, lambda_g: c00, k: -2.0 / c00 * ddbar_log })
}

pub fn induced_metric(phi: &Subbundle, z0: Complex64, settings: &Settings) -> Result<MetricSample> {
    induced_metric_at(&EvalCtx::new(z0, settings), phi)
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureReport {
    pub constant: bool,
    pub k_mean: f64,
    pub k_spread: f64,
    pub samples: Vec<MetricSample>,
}

/// Constancy of the Gauss curvature over the points (branch points skipped, at least 10 needed).
pub fn constant_curvature_check(phi: &Subbundle, points: &[Complex64], settings: &Settings) -> Result<CurvatureReport> {
    let rows = eval_at(points, |z| match induced_metric_at(&EvalCtx::new(z, settings), phi) {
        Ok(m) => Ok(Some(m)),
        Err(LabError::Numerical(_)) => Ok(None),
        Err(e) => Err(e),
    })?;
    let samples: Vec<MetricSample> = rows.into_iter().filter_map(|r| r.1).collect();
    if samples.len() < 10 {
        return Err(LabError::Inconclusive(format!("only {} immersive sample points", samples.len())));
    }
    let ks: Vec<f64> = samples.iter().map(|s| s.k).collect();
    let k_mean = ks.iter().sum::<f64>() / ks.len() as f64;
    let k_spread = ks.iter().copied().fold(f64::NEG_INFINITY, f64::max) - ks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CurvatureReport { constant: k_spread < 1e-5 * k_mean.abs().max(1.0), k_mean, k_spread, samples })
}
