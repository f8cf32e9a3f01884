use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::frames::{bundle_minus_unchecked, bundle_sum_all, complement, project_onto, spectral_norm, EvalCtx, SectionExpr, Subbundle};
use crate::sampling::eval_at;
use crate::sequences::{default_sequence_length, gauss_iterate, isotropy_order, sff_at, IsotropyOrder};
use crate::settings::{LabError, Result, Settings};
use crate::unitons::{bounded_powers_test, default_power_count, Finiteness};

/// Minimum number of valid points behind a certificate.
pub const MIN_CERT_POINTS: usize = 5;
/// Absolute bound (relative to the operator's scale) for operators forced to vanish.
pub const ZERO_TOL: f64 = 1e-8;

/// The harmonic sequence of `φ` up to its isotropy order `r`, with `R = (Σ_{i≤r} G^{(i)})⊥`.
#[derive(Debug, Clone)]
pub struct ReturnMaps {
    pub phi: Subbundle,
    pub r: usize,
    /// `G^{(0)} = φ, …, G^{(r)}`.
    pub seq: Vec<Subbundle>,
    pub rest: Subbundle,
}

/// `𝐜` and `𝐞` at a point, in an orthonormal basis of the fibre of `φ`.
#[derive(Debug, Clone)]
pub struct ReturnMatrices {
    pub point: Complex64,
    pub basis: DMatrix<Complex64>,
    pub c: DMatrix<Complex64>,
    pub e: DMatrix<Complex64>,
}

impl ReturnMaps {
    /// Computes the isotropy order; fails unless it is finite.
    pub fn new(phi: &Subbundle, settings: &Settings) -> Result<Self> {
        match isotropy_order(phi, default_sequence_length(phi.ambient()), settings)? {
            IsotropyOrder::Finite(r) if r >= 1 => Ok(Self::with_order(phi, r)),
            IsotropyOrder::Infinite => Err(LabError::usage(format!("{} has infinite isotropy order", phi.name()))),
            other => Err(LabError::Inconclusive(format!("isotropy order of {}: {other:?}", phi.name()))),
        }
    }

    /// Uses the given isotropy order without checking it.
    pub fn with_order(phi: &Subbundle, r: usize) -> Self {
        let seq: Vec<Subbundle> = (0..=r).map(|i| if i == 0 { phi.clone() } else { gauss_iterate(phi, i).named(format!("G^({i})")) }).collect();
        let rest = complement(&bundle_sum_all("sum", phi.ambient(), &seq)).named("R");
        Self { phi: phi.clone(), r, seq, rest }
    }

    pub fn at(&self, ctx: &EvalCtx<'_>) -> Result<ReturnMatrices> {
        let basis = ctx.frame_matrix(&self.phi)?;
        let k = basis.ncols();
        let mut forward = DMatrix::identity(k, k);
        for w in self.seq.windows(2) {
            forward = sff_at(ctx, &w[0], &w[1])? * forward;
        }
        let last = &self.seq[self.r];
        let c = sff_at(ctx, last, &self.phi)? * &forward;
        let e = sff_at(ctx, &self.rest, &self.phi)? * sff_at(ctx, last, &self.rest)? * &forward;
        Ok(ReturnMatrices { point: ctx.point(), basis, c, e })
    }

    /// `image 𝐜^p` as a subbundle of `φ`.
    pub fn image_c(&self, p: usize) -> Subbundle {
        let mut gens = self.phi.generators().to_vec();
        for _ in 0..p {
            gens = gens.iter().map(|g| self.push_forward(g)).collect();
        }
        Subbundle::new(format!("image c^{p}"), self.phi.ambient(), gens)
    }

    /// `ker 𝐜^p = φ ⊖ image (𝐜*)^p`.
    pub fn ker_c(&self, p: usize) -> Subbundle {
        let mut gens = self.phi.generators().to_vec();
        for _ in 0..p {
            gens = gens.iter().map(|g| self.pull_back(g)).collect();
        }
        let co = Subbundle::new(format!("image c*^{p}"), self.phi.ambient(), gens);
        bundle_minus_unchecked(&self.phi, &co).named(format!("ker c^{p}"))
    }

    fn push_forward(&self, g: &SectionExpr) -> SectionExpr {
        let mut x = g.clone();
        for b in self.seq[1..].iter().chain([&self.phi]) {
            x = project_onto(b, &x.dz());
        }
        x
    }

    /// `𝐞` applied to a section of `φ`.
    pub fn apply_e(&self, g: &SectionExpr) -> SectionExpr {
        let mut x = g.clone();
        for b in self.seq[1..].iter().chain([&self.rest, &self.phi]) {
            x = project_onto(b, &x.dz());
        }
        x
    }

    /// Up to sign, the adjoint of `𝐜` applied to a section of `φ`.
    fn pull_back(&self, g: &SectionExpr) -> SectionExpr {
        let mut x = g.clone();
        for b in self.seq.iter().rev() {
            x = project_onto(b, &x.dzbar());
        }
        x
    }
}

/// Least `p` with `‖C^p‖ < tol · max(‖C‖, 1)^p`; `None` when `C` is not nilpotent.
pub fn nilorder(m: &DMatrix<Complex64>, tol: f64) -> Option<usize> {
    let k = m.nrows();
    if k == 0 {
        return Some(1);
    }
    let base = spectral_norm(m).max(1.0);
    let mut pw = m.clone();
    for p in 1..=k {
        if spectral_norm(&pw) < tol * base.powi(p as i32) {
            return Some(p);
        }
        pw = &pw * m;
    }
    None
}

/// Eigenvalue cross-check: every eigenvalue below `tol^{1/k}` relative to `max(‖C‖, 1)`.
pub fn eigenvalues_vanish(m: &DMatrix<Complex64>, tol: f64) -> bool {
    let k = m.nrows();
    if k == 0 {
        return true;
    }
    let base = spectral_norm(m).max(1.0);
    let bound = tol.powf(1.0 / k as f64) * base;
    match m.clone().schur().eigenvalues() {
        Some(ev) => ev.iter().all(|l| l.norm() < bound),
        None => false,
    }
}

/// Orthonormal basis of the column space, cutting singular values below `tol · max(σ₁, 1)`.
pub fn column_space(m: &DMatrix<Complex64>, tol: f64) -> DMatrix<Complex64> {
    if m.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max).max(1.0);
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > tol * top).collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

pub fn numerical_rank(m: &DMatrix<Complex64>, tol: f64) -> usize {
    column_space(m, tol).ncols()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Ce,
    CeS(usize),
    Cece2,
    CPowPMinus1E,
    C2ece,
}

impl CertificateKind {
    pub fn name(&self) -> &'static str {
        match self {
            CertificateKind::Ce => "ce",
            CertificateKind::CeS(_) => "ce_s",
            CertificateKind::Cece2 => "cece2",
            CertificateKind::CPowPMinus1E => "c_pow_p_minus_1_e",
            CertificateKind::C2ece => "c2ece",
        }
    }

    /// Parses a kind name; `s` is the exponent used by `ce_s`.
    pub fn parse(name: &str, s: usize) -> Result<Self> {
        Ok(match name {
            "ce" => CertificateKind::Ce,
            "ce_s" => CertificateKind::CeS(s.max(1)),
            "cece2" => CertificateKind::Cece2,
            "c_pow_p_minus_1_e" | "nilorder-p" | "nilorder_p" => CertificateKind::CPowPMinus1E,
            "c2ece" => CertificateKind::C2ece,
            other => return Err(LabError::usage(format!("unknown certificate kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateStatus {
    Pass,
    Fail,
    PreconditionFailed,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub ok: bool,
    /// Worst residual over the points, where the check is numerical.
    pub worst: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointCertificate {
    pub z0: [f64; 2],
    pub size: usize,
    pub norm: f64,
    pub scale: f64,
    pub nilorder: Option<usize>,
    pub eigenvalues_vanish: bool,
    pub pass: bool,
    /// Row-major `[re, im]` entries.
    pub matrix: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub kind: String,
    pub status: CertificateStatus,
    pub pass: bool,
    pub points: Vec<PointCertificate>,
    pub nilorders: Vec<Option<usize>>,
    pub hypothesis_checks: BTreeMap<String, HypothesisCheck>,
}

fn matrix_rows(m: &DMatrix<Complex64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

fn mat_pow(m: &DMatrix<Complex64>, p: usize) -> DMatrix<Complex64> {
    let mut out = DMatrix::identity(m.nrows(), m.ncols());
    for _ in 0..p {
        out = &out * m;
    }
    out
}

/// Per-point data gathered for a certificate.
struct Sample {
    checks: Vec<(&'static str, f64, bool)>,
    op: DMatrix<Complex64>,
    scale: f64,
}

struct Certifier<'a> {
    kind: CertificateKind,
    maps: &'a ReturnMaps,
    alpha: &'a Subbundle,
    p: usize,
    k: usize,
    settings: &'a Settings,
}

impl Certifier<'_> {
    fn sample(&self, ctx: &EvalCtx<'_>) -> Result<Sample> {
        let tol = self.settings.tol.nil;
        let m = self.maps.at(ctx)?;
        let (c, e) = (&m.c, &m.e);
        let nc = spectral_norm(c).max(1.0);
        let ne = spectral_norm(e).max(1.0);
        let p_here = nilorder(c, tol);
        let mut checks = Vec::new();
        let q = m.basis.adjoint() * ctx.frame_matrix(self.alpha)?;
        let sandwich = |checks: &mut Vec<(&'static str, f64, bool)>, power: usize| {
            let cp = mat_pow(c, power);
            let proj = DMatrix::identity(self.k, self.k) - &q * q.adjoint();
            let above = spectral_norm(&(&proj * &cp)) / nc.powi(power as i32);
            let below = spectral_norm(&(c * &q)) / nc;
            checks.push(("image_in_alpha", above, above < tol));
            checks.push(("alpha_in_kernel", below, below < tol));
        };
        let restrict = |x: DMatrix<Complex64>| q.adjoint() * x * &q;
        let (op, scale) = match self.kind {
            CertificateKind::Ce | CertificateKind::CeS(_) => {
                let s = if let CertificateKind::CeS(s) = self.kind { s } else { 1 };
                checks.push(("nilorder_two", p_here.map_or(f64::INFINITY, |p| p as f64), p_here == Some(2)));
                sandwich(&mut checks, 1);
                for t in 1..s {
                    let scale = nc * ne.powi(t as i32);
                    let d = spectral_norm(&restrict(c * mat_pow(e, t))) / scale;
                    checks.push(("lower_powers_vanish", d, d < tol));
                }
                (restrict(c * mat_pow(e, s)), nc * ne.powi(s as i32))
            }
            CertificateKind::CPowPMinus1E => {
                let ok = p_here == Some(self.p) && self.p >= 2;
                checks.push(("nilorder_at_least_two", p_here.map_or(f64::INFINITY, |p| p as f64), ok));
                sandwich(&mut checks, self.p.saturating_sub(1));
                (restrict(mat_pow(c, self.p - 1) * e), nc.powi(self.p as i32 - 1) * ne)
            }
            CertificateKind::C2ece => {
                checks.push(("rank_five", self.k as f64, self.k == 5));
                checks.push(("nilorder_three", p_here.map_or(f64::INFINITY, |p| p as f64), p_here == Some(3)));
                sandwich(&mut checks, 2);
                (restrict(mat_pow(c, 2) * e * c * e), nc.powi(3) * ne.powi(2))
            }
            CertificateKind::Cece2 => {
                checks.push(("nilorder_two", p_here.map_or(f64::INFINITY, |p| p as f64), p_here == Some(2)));
                let ic = column_space(c, self.settings.tol.rank);
                checks.push(("rank_two", ic.ncols() as f64, ic.ncols() == 2));
                let ce = c * e;
                let ce_on_ic = &ce * &ic;
                let sq = spectral_norm(&(&ce * &ce_on_ic)) / (nc * ne).powi(2);
                checks.push(("ce_squared_vanishes_on_image", sq, sq < tol));
                let eta = column_space(&ce_on_ic, self.settings.tol.rank);
                let f = eta.adjoint() * &ce * &ce * e * &eta;
                (f, (nc * ne).powi(2) * ne)
            }
        };
        Ok(Sample { checks, op, scale })
    }
}

/// Numerical certificate that the cycle of the given kind is nilpotent on `α`
/// (and zero where `α` has rank 1). `alpha = None` picks the subbundle the
/// corresponding statement is about.
pub fn certify_nilpotent_cycle(
    kind: CertificateKind,
    phi: &Subbundle,
    alpha: Option<&Subbundle>,
    points: &[Complex64],
    settings: &Settings,
) -> Result<CertificateReport> {
    let mut report = CertificateReport {
        kind: kind.name().to_string(),
        status: CertificateStatus::PreconditionFailed,
        pass: false,
        points: Vec::new(),
        nilorders: Vec::new(),
        hypothesis_checks: BTreeMap::new(),
    };
    let maps = match ReturnMaps::new(phi, settings) {
        Ok(m) => {
            report_check(&mut report.hypothesis_checks, "isotropy_order", true, None, format!("r = {}", m.r));
            m
        }
        Err(e) => {
            report_check(&mut report.hypothesis_checks, "isotropy_order", false, None, e.to_string());
            return Ok(report);
        }
    };
    let k = phi.generic_rank(settings)?;
    let fin = bounded_powers_test(phi, default_power_count(phi.ambient()), points, settings)?;
    report_check(&mut report.hypothesis_checks, "finite_uniton", fin.verdict == Finiteness::Finite, None, format!("{:?}", fin.verdict));

    let orders = eval_at(points, |z| Ok(nilorder(&maps.at(&EvalCtx::new(z, settings))?.c, settings.tol.nil)))?;
    let p = orders.iter().filter_map(|o| o.1).max().unwrap_or(0);
    let consistent = orders.iter().all(|o| o.1 == Some(p));
    report_check(&mut report.hypothesis_checks, "nilorder_consistent", consistent, None, format!("c^p vanishes first at p = {}", orders.iter().map(|o| o.1.map_or("none".to_string(), |p| p.to_string())).collect::<Vec<_>>().join(", ")));
    if p == 0 || (matches!(kind, CertificateKind::CPowPMinus1E) && p < 2) {
        return Ok(finish(report));
    }

    let owned;
    let alpha = match alpha {
        Some(a) => a,
        None => {
            owned = match kind {
                CertificateKind::Ce | CertificateKind::CeS(_) | CertificateKind::Cece2 => maps.image_c(1),
                CertificateKind::CPowPMinus1E => maps.image_c(p - 1),
                CertificateKind::C2ece => maps.image_c(2),
            };
            &owned
        }
    };
    let cert = Certifier { kind, maps: &maps, alpha, p, k, settings };
    let rows = eval_at(points, |z| cert.sample(&EvalCtx::new(z, settings)))?;
    if rows.len() < MIN_CERT_POINTS {
        return Err(LabError::Inconclusive(format!("only {} valid certificate points", rows.len())));
    }
    let mut worst: BTreeMap<&'static str, (f64, bool)> = BTreeMap::new();
    for (z, s) in &rows {
        for &(name, v, ok) in &s.checks {
            let w = worst.entry(name).or_insert((0.0, true));
            w.0 = w.0.max(v);
            w.1 &= ok;
        }
        let tol = settings.tol.nil;
        let size = s.op.nrows();
        let norm = spectral_norm(&s.op);
        let sc = s.scale.max(1.0);
        let normalized = s.op.map(|x| x / sc);
        let nil = nilorder(&normalized, tol);
        let eig = eigenvalues_vanish(&normalized, tol);
        let zero_ok = size != 1 || norm < ZERO_TOL * sc;
        report.points.push(PointCertificate {
            z0: [z.re, z.im],
            size,
            norm,
            scale: s.scale,
            nilorder: nil,
            eigenvalues_vanish: eig,
            pass: nil.is_some() && eig && zero_ok,
            matrix: matrix_rows(&s.op),
        });
        report.nilorders.push(nil);
    }
    for (name, (v, ok)) in worst {
        report_check(&mut report.hypothesis_checks, name, ok, Some(v), String::new());
    }
    Ok(finish(report))
}

fn report_check(map: &mut BTreeMap<String, HypothesisCheck>, name: &str, ok: bool, worst: Option<f64>, detail: String) {
    map.insert(name.to_string(), HypothesisCheck { ok, worst, detail });
}

fn finish(mut report: CertificateReport) -> CertificateReport {
    let hyp = report.hypothesis_checks.values().all(|h| h.ok);
    report.status = if !hyp || report.points.is_empty() {
        CertificateStatus::PreconditionFailed
    } else if report.points.iter().all(|p| p.pass) {
        CertificateStatus::Pass
    } else {
        CertificateStatus::Fail
    };
    report.pass = report.status == CertificateStatus::Pass;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagrams::{path_operator_at, path_matrix_tensorial, Diagram, Path};
    use crate::geometry::{q1_curve, real_mixed_pair};
    use crate::sampling::sample_points;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn nilorder_of_simple_matrices() {
        assert_eq!(nilorder(&DMatrix::zeros(3, 3), 1e-7), Some(1));
        let n = DMatrix::from_fn(3, 3, |i, j| if j > i { c(1.0, 0.0) } else { c(0.0, 0.0) });
        assert_eq!(nilorder(&n, 1e-7), Some(3));
        assert!(eigenvalues_vanish(&n, 1e-7));
        assert_eq!(nilorder(&DMatrix::identity(2, 2), 1e-7), None);
        assert!(!eigenvalues_vanish(&DMatrix::identity(2, 2), 1e-7));
    }

    #[test]
    fn q1_pair_first_return_squares_to_zero() {
        let s = Settings::default();
        let phi = real_mixed_pair(&q1_curve()).unwrap();
        let maps = ReturnMaps::new(&phi, &s).unwrap();
        assert_eq!(maps.r, 1);
        for z in sample_points(11, 10) {
            let m = maps.at(&EvalCtx::new(z, &s)).unwrap();
            assert!(spectral_norm(&m.c) > 1e-3);
            assert_eq!(nilorder(&m.c, s.tol.nil), Some(2));
        }
        assert_eq!(maps.image_c(1).generic_rank(&s).unwrap(), 1);
        assert_eq!(maps.ker_c(1).generic_rank(&s).unwrap(), 1);
    }

    #[test]
    fn return_maps_agree_with_diagram_paths() {
        let s = Settings::default();
        let phi = real_mixed_pair(&q1_curve()).unwrap();
        let maps = ReturnMaps::new(&phi, &s).unwrap();
        let d = Diagram::second_return(&phi, 1, &s).unwrap();
        let ctx = EvalCtx::new(c(0.3, 0.0), &s);
        let m = maps.at(&ctx).unwrap();
        let cpath = Path::through(&[0, 1, 0]).unwrap();
        let op = path_operator_at(&ctx, &d, &cpath, &phi).unwrap();
        assert!((&op.matrix - &m.c).norm() < 1e-9);
        assert!((path_matrix_tensorial(&ctx, &d, &cpath, &phi).unwrap() - &m.c).norm() < 1e-9);
        let epath = Path::through(&[0, 1, 2, 0]).unwrap();
        let op = path_operator_at(&ctx, &d, &epath, &phi).unwrap();
        assert!((&op.matrix - &m.e).norm() < 1e-9);
    }

    #[test]
    fn ce_certificate_on_q1_pair() {
        let s = Settings::default();
        let phi = real_mixed_pair(&q1_curve()).unwrap();
        let rep = certify_nilpotent_cycle(CertificateKind::Ce, &phi, None, &sample_points(5, 6), &s).unwrap();
        assert_eq!(rep.status, CertificateStatus::Pass, "{rep:?}");
        assert!(rep.points.iter().all(|p| p.size == 1 && p.norm < 1e-8));
        let rep = certify_nilpotent_cycle(CertificateKind::CPowPMinus1E, &phi, None, &sample_points(5, 6), &s).unwrap();
        assert_eq!(rep.status, CertificateStatus::Pass, "{rep:?}");
    }

    #[test]
    fn holomorphic_curves_have_no_return_map() {
        let s = Settings::default();
        let h = Subbundle::span_curve(&q1_curve());
        assert!(ReturnMaps::new(&h, &s).is_err());
        let rep = certify_nilpotent_cycle(CertificateKind::Ce, &h, None, &sample_points(5, 6), &s).unwrap();
        assert_eq!(rep.status, CertificateStatus::PreconditionFailed);
    }
}
