//! Forward and backward replacement, the `𝐞`-closure of a subbundle, move selection
//! and the reduction pipeline for maps into `G_k(ℂⁿ)`, `k ≤ 5`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::diagrams::{column_space, nilorder, numerical_rank, ReturnMaps};
use crate::frames::{
    bundle_minus, bundle_minus_unchecked, bundle_sum, complement, conj_bundle, containment_residual, fibre_distance,
    project_onto, spectral_norm, EvalCtx, Subbundle,
};
use crate::sampling::sample_eval;
use crate::sequences::{
    backward_image, default_sequence_length, forward_image, gauss_backward, gauss_forward, harmonicity_residual_default,
    irreducible, isotropy_order, sff_at, sff_bar_at, HarmonicMapG, IsotropyOrder, Orientation,
};
use crate::settings::{LabError, Result, Settings};

/// Fibre distance below which `φ` counts as equal to its conjugate.
pub const REAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    Forward,
    Backward,
}

/// Residuals of the conditions a replacement relies on.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReplaceChecks {
    /// `‖π_{φ⊖β} ∂_z̄‖` on `β` (forward) or `‖π_{φ⊖γ} ∂_z‖` on `γ` (backward), relative.
    pub holomorphic: f64,
    /// `‖A′_{φ⊥} A′_φ‖` on `β` (or the `A″` version on `γ`), relative.
    pub kernel: f64,
    pub harmonic: f64,
}

#[derive(Debug, Clone)]
pub struct Replacement {
    pub map: HarmonicMapG,
    pub image: Subbundle,
    pub image_rank: usize,
    pub replaced_rank: usize,
    pub checks: ReplaceChecks,
}

fn replace_checks(phi: &Subbundle, sub: &Subbundle, kind: MoveKind, settings: &Settings) -> Result<(f64, f64)> {
    let rest = bundle_minus_unchecked(phi, sub);
    let perp = complement(phi);
    let rows = sample_eval(settings.seed, settings.samples, |z| {
        let ctx = EvalCtx::new(z, settings);
        let (d, dd) = match kind {
            MoveKind::Forward => (sff_bar_at(&ctx, sub, &rest)?, sff_bar_at(&ctx, sub, phi)?),
            MoveKind::Backward => (sff_at(&ctx, sub, &rest)?, sff_at(&ctx, sub, phi)?),
        };
        let holo = spectral_norm(&d) / spectral_norm(&dd).max(1.0);
        let (first, second) = match kind {
            MoveKind::Forward => (sff_at(&ctx, phi, &perp)?, sff_at(&ctx, &perp, phi)?),
            MoveKind::Backward => (sff_bar_at(&ctx, phi, &perp)?, sff_bar_at(&ctx, &perp, phi)?),
        };
        let q = ctx.frame_matrix(phi)?.adjoint() * ctx.frame_matrix(sub)?;
        let scale = (spectral_norm(&first) * spectral_norm(&second)).max(1.0);
        let kernel = spectral_norm(&(&second * &first * q)) / scale;
        Ok((holo, kernel))
    })?;
    Ok(rows.iter().fold((0.0, 0.0), |acc, (_, (h, k))| (acc.0.max(*h), acc.1.max(*k))))
}

fn replace(phi: &Subbundle, sub: &Subbundle, kind: MoveKind, settings: &Settings) -> Result<Replacement> {
    let (holomorphic, kernel) = replace_checks(phi, sub, kind, settings)?;
    let what = match kind {
        MoveKind::Forward => "holomorphic",
        MoveKind::Backward => "antiholomorphic",
    };
    if holomorphic >= settings.tol.harm {
        return Err(LabError::usage(format!("{} is not {what} in {} (residual {holomorphic:.3e})", sub.name(), phi.name())));
    }
    if kernel >= settings.tol.harm {
        return Err(LabError::usage(format!("{} is not in the kernel of the squared fundamental form (residual {kernel:.3e})", sub.name())));
    }
    let image = match kind {
        MoveKind::Forward => forward_image(phi, sub),
        MoveKind::Backward => backward_image(phi, sub),
    };
    let label = match kind {
        MoveKind::Forward => "fwd",
        MoveKind::Backward => "bwd",
    };
    let result = bundle_sum(&bundle_minus(phi, sub, settings)?, &image).named(format!("{label}({}; {})", phi.name(), sub.name()));
    let harmonic = harmonicity_residual_default(&result, settings)?;
    if harmonic >= settings.tol.harm {
        return Err(LabError::Numerical(format!("replacement result is not harmonic (residual {harmonic:.3e})")));
    }
    Ok(Replacement {
        image_rank: image.generic_rank(settings)?,
        replaced_rank: sub.generic_rank(settings)?,
        map: HarmonicMapG::new(result, settings)?,
        image,
        checks: ReplaceChecks { holomorphic, kernel, harmonic },
    })
}

/// `(φ ⊖ β) ⊕ A′_φ(β)` for a holomorphic `β ⊆ ker(A′_{φ⊥} ∘ A′_φ)`.
pub fn forward_replace(phi: &Subbundle, beta: &Subbundle, settings: &Settings) -> Result<Replacement> {
    replace(phi, beta, MoveKind::Forward, settings)
}

/// `(φ ⊖ γ) ⊕ A″_φ(γ)` for an antiholomorphic `γ ⊆ ker(A″_{φ⊥} ∘ A″_φ)`.
pub fn backward_replace(phi: &Subbundle, gamma: &Subbundle, settings: &Settings) -> Result<Replacement> {
    replace(phi, gamma, MoveKind::Backward, settings)
}

/// `E^t = span{𝐞^i(seed) : i ≤ t}` once its rank stops growing.
#[derive(Debug, Clone)]
pub struct Closure {
    pub bundle: Subbundle,
    /// Rank of `E^t` for `t = 0, 1, …` up to stabilization.
    pub ranks: Vec<usize>,
}

/// Stabilized `𝐞`-closure of `seed`; errors if some `E^t` leaves `ker 𝐜`.
pub fn e_closure(maps: &ReturnMaps, seed: &Subbundle, t_max: usize, settings: &Settings) -> Result<Closure> {
    let ker = maps.ker_c(1);
    let mut level = seed.generators().to_vec();
    let mut gens = level.clone();
    let mut bundle = seed.clone();
    let mut ranks = vec![seed.generic_rank(settings)?];
    for t in 1..=t_max {
        level = level.iter().map(|g| maps.apply_e(g)).collect();
        gens.extend(level.iter().cloned());
        let next = Subbundle::new(format!("E^{t}({})", seed.name()), seed.ambient(), gens.clone());
        let rank = next.generic_rank(settings)?;
        if rank > 0 && containment_residual(&next, &ker, settings)? >= settings.tol.orth.max(settings.tol.rank) {
            return Err(LabError::Numerical(format!("E^{t} of {} leaves ker c", seed.name())));
        }
        if rank == *ranks.last().unwrap() {
            return Ok(Closure { bundle, ranks });
        }
        ranks.push(rank);
        bundle = next;
    }
    Ok(Closure { bundle, ranks })
}

/// Which forward replacement the case analysis calls for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MoveRule {
    /// `k = 2`, nilorder 2: replace `image 𝐜`.
    ReturnImageRankTwo,
    /// Nilorder 2, rank 1: replace the `𝐞`-closure of `image 𝐜`.
    ClosureOfReturnImage,
    /// `k = 4`, nilorder 2, rank 2: replace `image 𝐜`.
    ReturnImageGrassFour,
    /// `k = 5`, nilorder 2, rank 2: replace `image 𝐜` when `rk E¹ ≤ 3`, else `ker 𝐜`.
    GrassFive { small_closure: bool },
    /// Nilorder `p ∈ {k, k − 1}`, `p > 2`: replace `image 𝐜^{p−1}`.
    ReturnPowerImage,
    /// `k = 5`, nilorder 3, rank 2: replace `image 𝐜²`.
    NilorderThreeImageSquare,
    /// `k = 5`, nilorder 3, rank 3: replace `ker 𝐜`.
    NilorderThreeKernel,
}

/// The case analysis as a pure function of the invariants of `𝐜`.
/// `rank_closure` is the rank of `span{image 𝐜, 𝐞(image 𝐜)}`, needed only for `k = 5`.
pub fn choose_case(k: usize, p: usize, rank_c: usize, rank_closure: Option<usize>) -> Option<MoveRule> {
    match p {
        2 if k == 2 => Some(MoveRule::ReturnImageRankTwo),
        2 if rank_c == 1 => Some(MoveRule::ClosureOfReturnImage),
        2 if rank_c == 2 && k == 4 => Some(MoveRule::ReturnImageGrassFour),
        2 if rank_c == 2 && k == 5 => rank_closure.map(|r| MoveRule::GrassFive { small_closure: r <= 3 }),
        p if p > 2 && (p == k || p + 1 == k) => Some(MoveRule::ReturnPowerImage),
        3 if k == 5 && rank_c == 2 => Some(MoveRule::NilorderThreeImageSquare),
        3 if k == 5 && rank_c == 3 => Some(MoveRule::NilorderThreeKernel),
        _ => None,
    }
}

/// Invariants of the first return map, taken as the largest value over the sample points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReturnInvariants {
    pub r: usize,
    pub k: usize,
    pub nilorder: Option<usize>,
    pub rank_c: usize,
    pub rank_closure: usize,
    /// `ker 𝐜^{p−1} = ker 𝐜^{p−2} + image 𝐜` at every point (only meaningful for `p > 2`).
    pub kernel_sum: bool,
}

fn kernel_basis(m: &DMatrix<Complex64>, tol: f64) -> DMatrix<Complex64> {
    let k = m.ncols();
    let col = column_space(&m.adjoint(), tol);
    let proj = DMatrix::identity(k, k) - &col * col.adjoint();
    column_space(&proj, 0.5)
}

fn mat_pow(m: &DMatrix<Complex64>, p: usize) -> DMatrix<Complex64> {
    (0..p).fold(DMatrix::identity(m.nrows(), m.ncols()), |acc, _| acc * m)
}

pub fn return_invariants(maps: &ReturnMaps, settings: &Settings) -> Result<ReturnInvariants> {
    let tol = settings.tol.rank;
    let rows = sample_eval(settings.seed, settings.samples, |z| {
        let m = maps.at(&EvalCtx::new(z, settings))?;
        let p = nilorder(&m.c, settings.tol.nil);
        let rank_c = numerical_rank(&m.c, tol);
        let mut both = m.c.clone().resize_horizontally(2 * m.c.ncols(), Complex64::new(0.0, 0.0));
        let ec = &m.e * &m.c;
        both.view_mut((0, m.c.ncols()), (m.c.nrows(), m.c.ncols())).copy_from(&ec);
        let rank_closure = numerical_rank(&both, tol);
        let kernel_sum = match p {
            Some(p) if p > 2 => {
                let upper = kernel_basis(&mat_pow(&m.c, p - 1), tol);
                let lower = kernel_basis(&mat_pow(&m.c, p - 2), tol);
                let img = column_space(&m.c, tol);
                let mut sum = lower.clone().resize_horizontally(lower.ncols() + img.ncols(), Complex64::new(0.0, 0.0));
                sum.view_mut((0, lower.ncols()), (img.nrows(), img.ncols())).copy_from(&img);
                numerical_rank(&sum, tol) == upper.ncols()
            }
            _ => true,
        };
        Ok((p, rank_c, rank_closure, kernel_sum, m.c.nrows()))
    })?;
    let nil = if rows.iter().any(|r| r.1 .0.is_none()) { None } else { rows.iter().filter_map(|r| r.1 .0).max() };
    Ok(ReturnInvariants {
        r: maps.r,
        k: rows.first().map_or(0, |r| r.1 .4),
        nilorder: nil,
        rank_c: rows.iter().map(|r| r.1 .1).max().unwrap_or(0),
        rank_closure: rows.iter().map(|r| r.1 .2).max().unwrap_or(0),
        kernel_sum: rows.iter().all(|r| r.1 .3),
    })
}

/// A move chosen by [`select_move`], before it is applied.
#[derive(Debug, Clone)]
pub struct PlannedMove {
    pub rule: MoveRule,
    pub invariants: ReturnInvariants,
    pub replaced: Subbundle,
}

#[derive(Debug, Clone)]
pub enum Selection {
    Move(Box<PlannedMove>),
    NoMove(String),
}

pub fn select_move(phi: &Subbundle, settings: &Settings) -> Result<Selection> {
    let maps = match ReturnMaps::new(phi, settings) {
        Ok(m) => m,
        Err(LabError::Usage(_)) => return Ok(Selection::NoMove("infinite isotropy order".into())),
        Err(e) => return Err(e),
    };
    let inv = return_invariants(&maps, settings)?;
    let Some(p) = inv.nilorder else {
        return Ok(Selection::NoMove("first return map is not nilpotent".into()));
    };
    if inv.k > 5 {
        return Ok(Selection::NoMove(format!("rank {} is beyond the case analysis", inv.k)));
    }
    let Some(rule) = choose_case(inv.k, p, inv.rank_c, Some(inv.rank_closure)) else {
        return Ok(Selection::NoMove(format!("no case for k = {}, nilorder {p}, rank c = {}", inv.k, inv.rank_c)));
    };
    if rule == MoveRule::ReturnPowerImage && !inv.kernel_sum {
        return Err(LabError::Numerical("ker c^{p-1} = ker c^{p-2} + image c fails numerically".into()));
    }
    let replaced = match rule {
        MoveRule::ReturnImageRankTwo | MoveRule::ReturnImageGrassFour | MoveRule::GrassFive { small_closure: true } => maps.image_c(1),
        MoveRule::ClosureOfReturnImage => e_closure(&maps, &maps.image_c(1), inv.k, settings)?.bundle,
        MoveRule::GrassFive { small_closure: false } | MoveRule::NilorderThreeKernel => maps.ker_c(1),
        MoveRule::ReturnPowerImage => maps.image_c(p - 1),
        MoveRule::NilorderThreeImageSquare => maps.image_c(2),
    };
    Ok(Selection::Move(Box::new(PlannedMove { rule, invariants: inv, replaced })))
}

/// One applied move with its diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct Move {
    pub kind: MoveKind,
    pub rule: MoveRule,
    pub target: String,
    pub replaced: String,
    pub result: String,
    pub target_rank: usize,
    pub replaced_rank: usize,
    pub image_rank: usize,
    pub result_rank: usize,
    pub before: ReturnInvariants,
    pub isotropy_after: IsotropyOrder,
    pub nilorder_after: Option<usize>,
    pub rank_c_after: Option<usize>,
    pub checks: ReplaceChecks,
    #[serde(skip)]
    pub result_map: Option<Subbundle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Terminal {
    Holomorphic,
    Antiholomorphic,
    FrenetPair,
    MixedPair,
    RealMixedPair,
    ReducibleUnclassified,
    BudgetExhausted,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionTrace {
    pub input: String,
    pub moves: Vec<Move>,
    pub terminal: Terminal,
    pub terminal_map: String,
    pub terminal_rank: usize,
    pub note: String,
    /// Largest harmonicity residual over the input and every intermediate map.
    pub max_harmonicity: f64,
}

fn apply(phi: &Subbundle, plan: &PlannedMove, settings: &Settings) -> Result<Move> {
    let rep = forward_replace(phi, &plan.replaced, settings)?;
    let result = rep.map.bundle.clone();
    let iso = isotropy_order(&result, default_sequence_length(result.ambient()), settings)?;
    let after = match iso {
        IsotropyOrder::Finite(r) if r >= 1 => Some(return_invariants(&ReturnMaps::with_order(&result, r), settings)?),
        _ => None,
    };
    Ok(Move {
        kind: MoveKind::Forward,
        rule: plan.rule,
        target: phi.name().to_string(),
        replaced: plan.replaced.name().to_string(),
        result: result.name().to_string(),
        target_rank: plan.invariants.k,
        replaced_rank: rep.replaced_rank,
        image_rank: rep.image_rank,
        result_rank: rep.map.k,
        before: plan.invariants,
        isotropy_after: iso,
        nilorder_after: after.and_then(|a| a.nilorder),
        rank_c_after: after.map(|a| a.rank_c),
        checks: rep.checks,
        result_map: Some(result),
    })
}

#[derive(Debug, Clone)]
pub enum StepOutcome {
    Moved(Box<Move>),
    NoMove(String),
}

/// One move chosen by [`select_move`], applied whether or not the map is `∂′`-reducible.
pub fn step(phi: &Subbundle, settings: &Settings) -> Result<StepOutcome> {
    Ok(match select_move(phi, settings)? {
        Selection::NoMove(reason) => StepOutcome::NoMove(reason),
        Selection::Move(plan) => StepOutcome::Moved(Box::new(apply(phi, &plan, settings)?)),
    })
}

/// Applies [`select_move`] until the map is `∂′`-reducible, strongly isotropic or the
/// budget runs out, then classifies the terminal map.
pub fn reduce(phi: &Subbundle, budget: usize, settings: &Settings) -> Result<ReductionTrace> {
    let mut cur = phi.clone();
    let mut moves = Vec::new();
    let mut worst = harmonicity_residual_default(phi, settings)?;
    let mut note = String::new();
    let mut exhausted = false;
    loop {
        if !irreducible(&cur, Orientation::Holomorphic, settings)? {
            break;
        }
        if moves.len() >= budget {
            exhausted = true;
            break;
        }
        match select_move(&cur, settings)? {
            Selection::NoMove(reason) => {
                note = reason;
                break;
            }
            Selection::Move(plan) => {
                let m = apply(&cur, &plan, settings)?;
                worst = worst.max(m.checks.harmonic);
                cur = m.result_map.clone().expect("applied moves carry their result");
                moves.push(m);
            }
        }
    }
    let terminal = if exhausted {
        Terminal::BudgetExhausted
    } else {
        match classify_terminal(&cur, settings)? {
            Terminal::ReducibleUnclassified if note.is_empty() => {
                note = "terminal map is not one of the base cases".into();
                Terminal::ReducibleUnclassified
            }
            t => t,
        }
    };
    Ok(ReductionTrace {
        input: phi.name().to_string(),
        terminal_rank: cur.generic_rank(settings)?,
        terminal_map: cur.name().to_string(),
        moves,
        terminal,
        note,
        max_harmonicity: worst,
    })
}

/// First match wins: holomorphic, antiholomorphic, Frenet or (real) mixed pair.
pub fn classify_terminal(phi: &Subbundle, settings: &Settings) -> Result<Terminal> {
    if gauss_backward(phi).generic_rank(settings)? == 0 {
        return Ok(Terminal::Holomorphic);
    }
    if gauss_forward(phi).generic_rank(settings)? == 0 {
        return Ok(Terminal::Antiholomorphic);
    }
    Ok(match detect_frenet_or_mixed(phi, settings)?.class {
        PairClass::Frenet => Terminal::FrenetPair,
        PairClass::Mixed => Terminal::MixedPair,
        PairClass::RealMixed => Terminal::RealMixedPair,
        PairClass::Neither => Terminal::ReducibleUnclassified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairClass {
    Frenet,
    Mixed,
    RealMixed,
    Neither,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairReport {
    pub class: PairClass,
    /// `‖A″_φ‖` on `φ ⊖ ker A′_φ`, relative to `‖A″_φ‖`.
    pub criterion: Option<f64>,
    /// Relative norms of the edges `ker A′ → φ ⊖ ker A′` and `G′(φ) → ker A′`.
    pub edge_kernel_to_rest: Option<f64>,
    pub edge_gauss_to_kernel: Option<f64>,
    pub conj_distance: Option<f64>,
    pub reason: String,
}

/// `ker A′_φ` as a subbundle of `φ`.
pub fn kernel_of_forward(phi: &Subbundle) -> Subbundle {
    let g = gauss_forward(phi);
    let co = Subbundle::new("image A'*", phi.ambient(), g.generators().iter().map(|s| project_onto(phi, &s.dzbar())).collect());
    bundle_minus_unchecked(phi, &co).named(format!("ker A'({})", phi.name()))
}

/// Frenet pair or mixed pair test for `k = 2`, `rk G′ = 1`.
pub fn detect_frenet_or_mixed(phi: &Subbundle, settings: &Settings) -> Result<PairReport> {
    let neither = |reason: String| PairReport {
        class: PairClass::Neither,
        criterion: None,
        edge_kernel_to_rest: None,
        edge_gauss_to_kernel: None,
        conj_distance: None,
        reason,
    };
    let k = phi.generic_rank(settings)?;
    let gp = gauss_forward(phi).named("G'");
    let rg = gp.generic_rank(settings)?;
    if k != 2 || rg != 1 {
        return Ok(neither(format!("needs rank 2 and rk G' = 1, found {k} and {rg}")));
    }
    let alpha = kernel_of_forward(phi);
    let beta = bundle_minus_unchecked(phi, &alpha).named("beta");
    let perp = complement(phi);
    let rows = sample_eval(settings.seed, settings.samples, |z| {
        let ctx = EvalCtx::new(z, settings);
        let whole = spectral_norm(&sff_bar_at(&ctx, phi, &perp)?).max(1.0);
        let crit = spectral_norm(&sff_bar_at(&ctx, &beta, &perp)?) / whole;
        let scale = spectral_norm(&sff_at(&ctx, phi, &perp)?).max(1.0);
        let ab = spectral_norm(&sff_at(&ctx, &alpha, &beta)?) / scale;
        let ga = spectral_norm(&sff_at(&ctx, &gp, &alpha)?) / scale;
        Ok((crit, ab, ga))
    })?;
    let crit = rows.iter().map(|r| r.1 .0).fold(0.0, f64::max);
    let ab = rows.iter().map(|r| r.1 .1).fold(0.0, f64::max);
    let ga = rows.iter().map(|r| r.1 .2).fold(0.0, f64::max);
    let mut rep = PairReport {
        class: PairClass::Neither,
        criterion: Some(crit),
        edge_kernel_to_rest: Some(ab),
        edge_gauss_to_kernel: Some(ga),
        conj_distance: None,
        reason: String::new(),
    };
    let tol = settings.tol.harm;
    if crit >= tol {
        rep.reason = "A'' does not vanish on the complement of ker A'".into();
        return Ok(rep);
    }
    if ab < tol {
        let d = fibre_distance(phi, &conj_bundle(phi), settings)?;
        rep.conj_distance = Some(d);
        rep.class = if d < REAL_TOL { PairClass::RealMixed } else { PairClass::Mixed };
    } else if ga < tol {
        rep.class = PairClass::Frenet;
    } else {
        rep.reason = "no edge of the cycle vanishes".into();
    }
    Ok(rep)
}


#[cfg(test)]
mod pipeline_tests {
    use super::*;
    use crate::geometry::veronese;

    #[test]
    fn gapped_pair_reduces_to_a_classified_terminal() {
        let s = Settings::default();
        let phi = bundle_sum(&veronese(4, 0).unwrap(), &veronese(4, 2).unwrap()).named("gap");
        let trace = reduce(&phi, 16, &s).unwrap();
        assert_eq!(trace.moves.len(), 2);
        assert_eq!(trace.moves[1].isotropy_after, IsotropyOrder::Finite(3));
        assert_eq!(trace.terminal, Terminal::MixedPair);
    }
}
