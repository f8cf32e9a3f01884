//! Second fundamental forms, Gauss bundles and harmonic sequences.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::frames::{cross_gram_norm, orthogonal_default, project_off, EvalCtx, Subbundle};
use crate::sampling::{eval_at, sample_eval};
use crate::settings::{LabError, Result, Settings};
use crate::unitons::connection_at;

/// A smooth map into `G_k(ℂⁿ)`, held as its rank-`k` subbundle.
#[derive(Debug, Clone)]
pub struct HarmonicMapG {
    pub bundle: Subbundle,
    pub k: usize,
    pub n: usize,
}

impl HarmonicMapG {
    pub fn new(bundle: Subbundle, settings: &Settings) -> Result<Self> {
        let k = bundle.generic_rank(settings)?;
        let n = bundle.ambient();
        Ok(Self { bundle, k, n })
    }
}

/// Matrix of a second fundamental form in orthonormal fibre bases.
#[derive(Debug, Clone)]
pub struct SffMatrix {
    pub point: Complex64,
    pub matrix: DMatrix<Complex64>,
}

fn check_orthogonal(ctx: &EvalCtx<'_>, src: &Subbundle, tgt: &Subbundle) -> Result<()> {
    let g = cross_gram_norm(ctx, src, tgt)?;
    if g > ctx.settings().tol.harm {
        return Err(LabError::usage(format!("{} and {} are not orthogonal (cross-Gram {g:.3e})", src.name(), tgt.name())));
    }
    Ok(())
}

/// `π_tgt ∘ ∂_z` on `src` at the context's point, as a `rank tgt × rank src` matrix.
pub fn sff_at(ctx: &EvalCtx<'_>, src: &Subbundle, tgt: &Subbundle) -> Result<DMatrix<Complex64>> {
    derivative_block(ctx, src, tgt, false)
}

/// `π_tgt ∘ ∂_z̄` on `src`.
pub fn sff_bar_at(ctx: &EvalCtx<'_>, src: &Subbundle, tgt: &Subbundle) -> Result<DMatrix<Complex64>> {
    derivative_block(ctx, src, tgt, true)
}

fn derivative_block(ctx: &EvalCtx<'_>, src: &Subbundle, tgt: &Subbundle, bar: bool) -> Result<DMatrix<Complex64>> {
    let n = src.ambient();
    let fs = ctx.frame(src, 1)?;
    let ft = ctx.frame_matrix(tgt)?;
    let mut d = DMatrix::zeros(n, fs.rank());
    for (j, e) in fs.basis.iter().enumerate() {
        d.set_column(j, &if bar { e.coeff(0, 1) } else { e.coeff(1, 0) });
    }
    Ok(ft.adjoint() * d)
}

/// Checked second fundamental form `A′_{src,tgt}` at `z0`.
pub fn sff(src: &Subbundle, tgt: &Subbundle, z0: Complex64, settings: &Settings) -> Result<SffMatrix> {
    let ctx = EvalCtx::new(z0, settings);
    check_orthogonal(&ctx, src, tgt)?;
    Ok(SffMatrix { point: z0, matrix: sff_at(&ctx, src, tgt)? })
}

/// Checked `A″_{src,tgt}` at `z0`.
pub fn sff_bar(src: &Subbundle, tgt: &Subbundle, z0: Complex64, settings: &Settings) -> Result<SffMatrix> {
    let ctx = EvalCtx::new(z0, settings);
    check_orthogonal(&ctx, src, tgt)?;
    Ok(SffMatrix { point: z0, matrix: sff_bar_at(&ctx, src, tgt)? })
}

/// `G′(φ)`, the image of `A′_φ`.
pub fn gauss_forward(phi: &Subbundle) -> Subbundle {
    Subbundle::new(
        format!("G'({})", phi.name()),
        phi.ambient(),
        phi.generators().iter().map(|g| project_off(phi, &g.dz())).collect(),
    )
}

/// `G″(φ)`, the image of `A″_φ`.
pub fn gauss_backward(phi: &Subbundle) -> Subbundle {
    Subbundle::new(
        format!("G''({})", phi.name()),
        phi.ambient(),
        phi.generators().iter().map(|g| project_off(phi, &g.dzbar())).collect(),
    )
}

/// Image of `A′_{src}` restricted to `src ⊆ phi`, i.e. `π_{φ⊥} ∂_z` applied to `src`.
pub fn forward_image(phi: &Subbundle, src: &Subbundle) -> Subbundle {
    Subbundle::new(
        format!("A'({})", src.name()),
        phi.ambient(),
        src.generators().iter().map(|g| project_off(phi, &g.dz())).collect(),
    )
}

/// Image of `A″` restricted to `src ⊆ phi`.
pub fn backward_image(phi: &Subbundle, src: &Subbundle) -> Subbundle {
    Subbundle::new(
        format!("A''({})", src.name()),
        phi.ambient(),
        src.generators().iter().map(|g| project_off(phi, &g.dzbar())).collect(),
    )
}

/// `G^{(i)}(φ)` for `i ≥ 0`.
pub fn gauss_iterate(phi: &Subbundle, i: usize) -> Subbundle {
    let mut b = phi.clone();
    for _ in 0..i {
        b = gauss_forward(&b);
    }
    b
}

#[derive(Debug, Clone)]
pub struct HarmonicSequence {
    pub bundles: Vec<Subbundle>,
    pub ranks: Vec<usize>,
    pub terminated: bool,
}

/// `φ, G′(φ), G″(φ), …`, stopping at the first rank-0 bundle or after `i_max` steps.
pub fn harmonic_sequence(phi: &Subbundle, i_max: usize, settings: &Settings) -> Result<HarmonicSequence> {
    let mut bundles = vec![phi.clone()];
    let mut ranks = vec![phi.generic_rank(settings)?];
    let mut terminated = ranks[0] == 0;
    let mut cur = phi.clone();
    for i in 1..=i_max {
        if terminated {
            break;
        }
        cur = gauss_forward(&cur).named(format!("G^({i})"));
        let r = cur.generic_rank(settings)?;
        bundles.push(cur.clone());
        ranks.push(r);
        terminated = r == 0;
    }
    Ok(HarmonicSequence { bundles, ranks, terminated })
}

pub fn default_sequence_length(n: usize) -> usize {
    3 * n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsotropyOrder {
    Finite(usize),
    Infinite,
    Inconclusive,
}

impl IsotropyOrder {
    pub fn finite(self) -> Option<usize> {
        match self {
            IsotropyOrder::Finite(r) => Some(r),
            _ => None,
        }
    }
}

/// Greatest `r ≤ r_cap` with `φ ⟂ G^{(i)}(φ)` for `1 ≤ i ≤ r`.
pub fn isotropy_order(phi: &Subbundle, r_cap: usize, settings: &Settings) -> Result<IsotropyOrder> {
    let mut cur = phi.clone();
    for i in 1..=r_cap {
        cur = gauss_forward(&cur).named(format!("G^({i})"));
        if cur.generic_rank(settings)? == 0 {
            return Ok(IsotropyOrder::Infinite);
        }
        if !orthogonal_default(phi, &cur, settings)? {
            return Ok(IsotropyOrder::Finite(i - 1));
        }
    }
    Ok(IsotropyOrder::Inconclusive)
}

/// `‖(A_z)_z̄ + (A_z̄)_z‖` at one point, from jets of the Cartan matrix.
pub fn harmonicity_residual_at(ctx: &EvalCtx<'_>, phi: &Subbundle) -> Result<f64> {
    let conn = connection_at(ctx, phi, 2)?;
    let lhs = conn.a_z.dzbar()?.add(&conn.a_zbar.dz()?);
    Ok(crate::frames::spectral_norm(lhs.value()))
}

/// Largest harmonicity residual over the given points.
pub fn harmonicity_residual(phi: &Subbundle, points: &[Complex64], settings: &Settings) -> Result<f64> {
    let vals = eval_at(points, |z| harmonicity_residual_at(&EvalCtx::new(z, settings), phi))?;
    if vals.is_empty() {
        return Err(LabError::Inconclusive(format!("no valid points for the harmonicity of {}", phi.name())));
    }
    Ok(vals.into_iter().map(|v| v.1).fold(0.0, f64::max))
}

/// Harmonicity residual over the run's sample points.
pub fn harmonicity_residual_default(phi: &Subbundle, settings: &Settings) -> Result<f64> {
    let vals = sample_eval(settings.seed, settings.samples, |z| harmonicity_residual_at(&EvalCtx::new(z, settings), phi))?;
    Ok(vals.into_iter().map(|v| v.1).fold(0.0, f64::max))
}

pub fn is_harmonic(phi: &Subbundle, settings: &Settings) -> Result<bool> {
    Ok(harmonicity_residual_default(phi, settings)? < settings.tol.harm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Holomorphic,
    Antiholomorphic,
}

/// `∂′`-irreducible when `rk G′(φ) = rk φ`; `∂″`-irreducible with `G″` instead.
pub fn irreducible(phi: &Subbundle, side: Orientation, settings: &Settings) -> Result<bool> {
    let k = phi.generic_rank(settings)?;
    let g = match side {
        Orientation::Holomorphic => gauss_forward(phi),
        Orientation::Antiholomorphic => gauss_backward(phi),
    };
    Ok(k > 0 && g.generic_rank(settings)? == k)
}
