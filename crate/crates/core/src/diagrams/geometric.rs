use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{DiagramGraph, Path};
use crate::frames::{bundle_sum_all, complement, cross_gram_norm, spectral_norm, EvalCtx, Side, Subbundle};
use crate::jets::{Jet2, JetVec};
use crate::sampling::sample_eval;
use crate::sequences::{gauss_iterate, is_harmonic, isotropy_order, sff_at, IsotropyOrder};
use crate::settings::{LabError, Result, Settings};

/// Relative agreement below which two gauges give the same operator.
pub const BUNDLE_MAP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagramKind {
    Basic,
    FirstReturn,
    SecondReturn,
    Custom,
}

/// A diagram whose vertices are mutually orthogonal subbundles filling `ℂⁿ`.
/// Vertex 0 is always `φ`.
#[derive(Debug, Clone)]
pub struct Diagram {
    pub kind: DiagramKind,
    pub vertices: Vec<Subbundle>,
    pub ranks: Vec<usize>,
    pub graph: DiagramGraph,
    /// Isotropy order the return diagrams were built for.
    pub r: Option<usize>,
}

/// Worst violations found while checking a diagram at sample points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DiagramChecks {
    pub orthogonality: f64,
    pub absent_arrows: f64,
}

impl Diagram {
    /// Checks ranks, mutual orthogonality and the vanishing of every absent proper arrow.
    pub fn new(kind: DiagramKind, vertices: Vec<Subbundle>, arrows: &[(usize, usize)], settings: &Settings) -> Result<Self> {
        let n = vertices.first().map(Subbundle::ambient).ok_or_else(|| LabError::usage("a diagram needs vertices"))?;
        let ranks = vertices.iter().map(|v| v.generic_rank(settings)).collect::<Result<Vec<_>>>()?;
        if ranks.iter().sum::<usize>() != n {
            return Err(LabError::usage(format!("vertex ranks {ranks:?} do not add up to {n}")));
        }
        let graph = DiagramGraph::new(vertices.iter().map(Subbundle::side).collect(), arrows)?;
        let d = Self { kind, vertices, ranks, graph, r: None };
        let checks = d.checks(settings)?;
        if checks.orthogonality >= settings.tol.orth {
            return Err(LabError::usage(format!("diagram vertices are not orthogonal (cross-Gram {:.3e})", checks.orthogonality)));
        }
        if checks.absent_arrows >= settings.tol.orth {
            return Err(LabError::usage(format!("an absent arrow does not vanish (relative residual {:.3e})", checks.absent_arrows)));
        }
        Ok(d)
    }

    /// `φ` and `φ⊥` with both proper arrows.
    pub fn basic(phi: &Subbundle, settings: &Settings) -> Result<Self> {
        if !is_harmonic(phi, settings)? {
            return Err(LabError::usage(format!("{} is not harmonic", phi.name())));
        }
        let vertices = vec![phi.with_side(Side::InPhi), complement(phi).named("phi^perp").with_side(Side::InPhiPerp)];
        Self::new(DiagramKind::Basic, vertices, &[(0, 1), (1, 0)], settings)
    }

    /// `φ → G′ → ⋯ → G^{(r−1)} → R̃ → φ` with `R̃ = (Σ_{i<r} G^{(i)})⊥`.
    pub fn first_return(phi: &Subbundle, r: usize, settings: &Settings) -> Result<Self> {
        check_isotropy(phi, r, settings)?;
        let mut vertices = gauss_chain(phi, r - 1);
        let rest = complement(&bundle_sum_all("sum", phi.ambient(), &vertices)).named("R~").with_side(Side::InPhiPerp);
        vertices.push(rest);
        let arrows: Vec<(usize, usize)> = (0..r).map(|i| (i, i + 1)).chain([(r, 0)]).collect();
        let mut d = Self::new(DiagramKind::FirstReturn, vertices, &arrows, settings)?;
        d.r = Some(r);
        Ok(d)
    }

    /// `φ → G′ → ⋯ → G^{(r)} → R → φ` with the inner arrow `G^{(r)} → φ`.
    pub fn second_return(phi: &Subbundle, r: usize, settings: &Settings) -> Result<Self> {
        check_isotropy(phi, r, settings)?;
        let mut vertices = gauss_chain(phi, r);
        let rest = complement(&bundle_sum_all("sum", phi.ambient(), &vertices)).named("R").with_side(Side::InPhiPerp);
        vertices.push(rest);
        let mut arrows: Vec<(usize, usize)> = (0..r).map(|i| (i, i + 1)).collect();
        arrows.extend([(r, 0), (r, r + 1), (r + 1, 0)]);
        let mut d = Self::new(DiagramKind::SecondReturn, vertices, &arrows, settings)?;
        d.r = Some(r);
        Ok(d)
    }

    pub fn phi(&self) -> &Subbundle {
        &self.vertices[0]
    }

    pub fn checks(&self, settings: &Settings) -> Result<DiagramChecks> {
        let v = self.vertices.len();
        let rows = sample_eval(settings.seed, settings.samples, |z| {
            let ctx = EvalCtx::new(z, settings);
            let mut orth: f64 = 0.0;
            let mut present: f64 = 1.0;
            let mut absent: f64 = 0.0;
            for i in 0..v {
                for j in 0..v {
                    if i == j {
                        continue;
                    }
                    if i < j {
                        orth = orth.max(cross_gram_norm(&ctx, &self.vertices[i], &self.vertices[j])?);
                    }
                    let s = spectral_norm(&sff_at(&ctx, &self.vertices[i], &self.vertices[j])?);
                    if self.graph.has_arrow(i, j) {
                        present = present.max(s);
                    } else {
                        absent = absent.max(s);
                    }
                }
            }
            Ok((orth, absent / present))
        })?;
        Ok(rows.iter().fold(DiagramChecks { orthogonality: 0.0, absent_arrows: 0.0 }, |acc, (_, (o, a))| DiagramChecks {
            orthogonality: acc.orthogonality.max(*o),
            absent_arrows: acc.absent_arrows.max(*a),
        }))
    }
}

fn check_isotropy(phi: &Subbundle, r: usize, settings: &Settings) -> Result<()> {
    if r == 0 {
        return Err(LabError::usage("return diagrams need isotropy order at least 1"));
    }
    match isotropy_order(phi, r + 1, settings)? {
        IsotropyOrder::Finite(got) if got == r => Ok(()),
        got => Err(LabError::usage(format!("{} has isotropy order {got:?}, not {r}", phi.name()))),
    }
}

/// `φ, G′(φ), …, G^{(m)}(φ)`, with `φ` on the `φ` side and the rest in `φ⊥`.
fn gauss_chain(phi: &Subbundle, m: usize) -> Vec<Subbundle> {
    let mut out = vec![phi.with_side(Side::InPhi)];
    for i in 1..=m {
        out.push(gauss_iterate(phi, i).named(format!("G^({i})")).with_side(Side::InPhiPerp));
    }
    out
}

/// The operator of a path on a subbundle of its source, at one point.
#[derive(Debug, Clone)]
pub struct PathOperator {
    pub point: Complex64,
    /// Images of an orthonormal basis of the restricted bundle, as columns in `ℂⁿ`.
    pub columns: DMatrix<Complex64>,
    /// The same images in an orthonormal basis of the target vertex.
    pub matrix: DMatrix<Complex64>,
    /// Relative change of `matrix` under a random first-order change of sections.
    pub section_dependence: f64,
    pub bundle_map: bool,
}

impl PathOperator {
    /// Matrix in the basis `e` (columns orthonormal in `ℂⁿ`).
    pub fn in_basis(&self, e: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        e.adjoint() * &self.columns
    }
}

/// Pushes section jets along the path: each edge applies `π_target ∘ ∂_z`.
fn push_along(ctx: &EvalCtx<'_>, d: &Diagram, path: &Path, mut sections: Vec<JetVec>) -> Result<Vec<JetVec>> {
    for e in path.edges() {
        let target = &d.vertices[e.to];
        let mut next = Vec::with_capacity(sections.len());
        for s in &sections {
            let ds = s.dz()?;
            let f = ctx.frame(target, ds.order())?;
            next.push(f.project(&ds));
        }
        sections = next;
    }
    Ok(sections)
}

fn columns_of(n: usize, sections: &[JetVec]) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(n, sections.len());
    for (j, s) in sections.iter().enumerate() {
        m.set_column(j, &s.value());
    }
    m
}

/// Random gauge `I + Aδ + Bδ̄` applied to a jet frame.
fn regauge(basis: &[JetVec], seed: u64) -> Vec<JetVec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = basis.len();
    let mut draw = || Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
    let gauge: Vec<Vec<Jet2>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let (a, b) = (draw(), draw());
                    let one = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                    let order = basis[0].order();
                    Jet2::from_fn(order, |p, q| match (p, q) {
                        (0, 0) => one,
                        (1, 0) => a,
                        (0, 1) => b,
                        _ => Complex64::new(0.0, 0.0),
                    })
                })
                .collect()
        })
        .collect();
    (0..k)
        .map(|j| {
            let mut s = JetVec::zero(basis[j].dim(), basis[j].order());
            for i in 0..k {
                s = s.add(&basis[i].mul_fn(&gauge[i][j]));
            }
            s
        })
        .collect()
}

/// Operator of `path` on `restricted ⊆ source` at `ctx`'s point, evaluated in jet arithmetic
/// with self-arrows acting as `π_ψ ∘ ∂_z`. Section dependence is measured by re-running the
/// computation with regauged sections.
pub fn path_operator_at(ctx: &EvalCtx<'_>, d: &Diagram, path: &Path, restricted: &Subbundle) -> Result<PathOperator> {
    let n = restricted.ambient();
    let frame = ctx.frame(restricted, path.len())?;
    let target = ctx.frame_matrix(&d.vertices[path.target()])?;
    let columns = columns_of(n, &push_along(ctx, d, path, frame.basis.clone())?);
    let (dependence, matrix) = if frame.rank() == 0 {
        (0.0, target.adjoint() * &columns)
    } else {
        let seed = ctx.settings().seed ^ 0x6A09_E667;
        let other = columns_of(n, &push_along(ctx, d, path, regauge(&frame.basis, seed))?);
        let scale = spectral_norm(&columns).max(1.0);
        (spectral_norm(&(&other - &columns)) / scale, target.adjoint() * &columns)
    };
    Ok(PathOperator { point: ctx.point(), columns, matrix, section_dependence: dependence, bundle_map: dependence < BUNDLE_MAP_TOL })
}

pub fn path_operator(d: &Diagram, path: &Path, restricted: &Subbundle, z0: Complex64, settings: &Settings) -> Result<PathOperator> {
    let ctx = EvalCtx::new(z0, settings);
    path_operator_at(&ctx, d, path, restricted)
}

/// Product of second fundamental form matrices along a path without self-arrows:
/// the tensorial route, in the target vertex's basis.
pub fn path_matrix_tensorial(ctx: &EvalCtx<'_>, d: &Diagram, path: &Path, restricted: &Subbundle) -> Result<DMatrix<Complex64>> {
    if path.self_arrows() > 0 {
        return Err(LabError::usage(format!("path {} has self-arrows", path.display())));
    }
    let source = ctx.frame_matrix(&d.vertices[path.source()])?;
    let mut m = source.adjoint() * ctx.frame_matrix(restricted)?;
    for e in path.edges() {
        m = sff_at(ctx, &d.vertices[e.from], &d.vertices[e.to])? * m;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagrams::enumerate_paths;
    use crate::frames::{conj_bundle, HoloCurve};
    use crate::geometry::q1_curve;
    use crate::unitons::connection_at;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn q1_pair() -> Subbundle {
        let h = Subbundle::span_curve(&q1_curve());
        crate::frames::bundle_sum(&h, &conj_bundle(&h)).named("Q1 pair")
    }

    #[test]
    fn basic_diagram_of_a_line() {
        let s = Settings::default();
        let phi = Subbundle::span_curve(&HoloCurve::from_real("l", &[&[1.0], &[0.0, 1.0]]).unwrap());
        let d = Diagram::basic(&phi, &s).unwrap();
        assert_eq!(d.ranks, vec![1, 1]);
        assert!(d.graph.has_arrow(0, 1) && d.graph.has_arrow(1, 0));
    }

    #[test]
    fn non_orthogonal_vertices_are_rejected() {
        let s = Settings::default();
        let a = Subbundle::constant("a", &[vec![c(1.0, 0.0), c(0.0, 0.0)]]).with_side(Side::InPhi);
        let b = Subbundle::constant("b", &[vec![c(1.0, 0.0), c(1.0, 0.0)]]).with_side(Side::InPhiPerp);
        assert!(Diagram::new(DiagramKind::Custom, vec![a, b], &[], &s).is_err());
    }

    #[test]
    fn q1_pair_return_diagrams() {
        let s = Settings::default();
        let phi = q1_pair();
        let first = Diagram::first_return(&phi, 1, &s).unwrap();
        assert_eq!(first.ranks, vec![2, 1]);
        let second = Diagram::second_return(&phi, 1, &s).unwrap();
        assert_eq!(second.ranks, vec![2, 1, 0]);
        assert!(Diagram::second_return(&phi, 2, &s).is_err());
    }

    #[test]
    fn basic_two_cycle_is_the_square_of_the_connection() {
        let s = Settings::default();
        let phi = q1_pair();
        let d = Diagram::basic(&phi, &s).unwrap();
        let cyc = &enumerate_paths(&d.graph, 0, 0, 2, 2, None).unwrap()[0];
        let z0 = c(0.3, -0.2);
        let ctx = EvalCtx::new(z0, &s);
        let op = path_operator_at(&ctx, &d, cyc, &phi).unwrap();
        let e = ctx.frame_matrix(&phi).unwrap();
        let a = connection_at(&ctx, &phi, 0).unwrap().a_z.value().clone();
        let want = e.adjoint() * &a * &a * &e;
        assert!((&op.matrix - &want).norm() < 1e-9 * want.norm().max(1.0));
        assert!(op.bundle_map);
        let tens = path_matrix_tensorial(&ctx, &d, cyc, &phi).unwrap();
        assert!((&op.matrix - &tens).norm() < 1e-9 * tens.norm().max(1.0));
    }

    #[test]
    fn self_arrow_on_a_proper_subbundle_depends_on_sections() {
        let s = Settings::default();
        let phi = q1_pair();
        let d = Diagram::basic(&phi, &s).unwrap();
        let h = Subbundle::span_curve(&q1_curve());
        let u = Path::through(&[0, 0]).unwrap();
        let op = path_operator(&d, &u, &h, c(0.2, 0.1), &s).unwrap();
        assert!(!op.bundle_map);
        let whole = path_operator(&d, &Path::through(&[0, 1, 0]).unwrap(), &h, c(0.2, 0.1), &s).unwrap();
        assert!(whole.bundle_map);
    }
}
