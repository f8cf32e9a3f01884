//! Subbundles of the trivial bundle `ℂⁿ` given by lazily evaluated section expressions.
//!
//! Everything is evaluated per base point inside an [`EvalCtx`], which caches the jet of
//! every expression node and the orthonormal jet frame of every bundle it touches. Requests
//! are demand-driven by jet order: a `Dz` node asks its child for one more order.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::jets::{lift_polynomial, Jet2, JetVec};
use crate::sampling::{disk_point, eval_at, SAMPLE_RADIUS};
use crate::settings::{LabError, Result, Settings, DEFAULT_SEED};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Polynomial holomorphic curve `z ↦ [p₁(z), …, pₙ(z)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoloCurve {
    label: String,
    coeffs: Vec<Vec<Complex64>>,
}

#[derive(Serialize, Deserialize)]
struct HoloCurveJson {
    n: usize,
    label: String,
    coeffs: Vec<Vec<[f64; 2]>>,
}

impl HoloCurve {
    pub fn new(label: impl Into<String>, mut coeffs: Vec<Vec<Complex64>>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(LabError::usage("curve needs at least one component"));
        }
        for c in &mut coeffs {
            while c.last().is_some_and(|x| x.norm() == 0.0) {
                c.pop();
            }
        }
        if coeffs.iter().all(Vec::is_empty) {
            return Err(LabError::usage("all curve components vanish identically"));
        }
        Ok(Self { label: label.into(), coeffs })
    }

    pub fn from_real(label: impl Into<String>, coeffs: &[&[f64]]) -> Result<Self> {
        Self::new(label, coeffs.iter().map(|c| c.iter().map(|&x| Complex64::new(x, 0.0)).collect()).collect())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: HoloCurveJson = serde_json::from_str(text).map_err(|e| LabError::usage(format!("curve JSON: {e}")))?;
        if raw.coeffs.len() != raw.n {
            return Err(LabError::usage(format!("curve JSON: n = {} but {} components", raw.n, raw.coeffs.len())));
        }
        Self::new(raw.label, raw.coeffs.into_iter().map(|c| c.into_iter().map(|[re, im]| Complex64::new(re, im)).collect()).collect())
    }

    pub fn to_json(&self) -> String {
        let raw = HoloCurveJson {
            n: self.n(),
            label: self.label.clone(),
            coeffs: self.coeffs.iter().map(|c| c.iter().map(|x| [x.re, x.im]).collect()).collect(),
        };
        serde_json::to_string(&raw).expect("curve serializes")
    }

    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn coeffs(&self) -> &[Vec<Complex64>] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().map(|c| c.len().saturating_sub(1)).max().unwrap_or(0)
    }

    pub fn eval(&self, z: Complex64) -> DVector<Complex64> {
        DVector::from_iterator(self.n(), self.coeffs.iter().map(|c| c.iter().rev().fold(czero(), |acc, &a| acc * z + a)))
    }

    /// The curve `z ↦ m · h(z)`.
    pub fn transform(&self, m: &DMatrix<Complex64>, label: impl Into<String>) -> Result<Self> {
        assert_eq!(m.ncols(), self.n(), "transform must act on the ambient space");
        let len = self.degree() + 1;
        let coeffs = (0..m.nrows())
            .map(|i| {
                (0..len)
                    .map(|k| (0..self.n()).map(|j| m[(i, j)] * self.coeffs[j].get(k).copied().unwrap_or_else(czero)).sum())
                    .collect()
            })
            .collect();
        Self::new(label, coeffs)
    }

    /// Pads the curve with zero components up to dimension `n`.
    pub fn pad(&self, n: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(n.max(coeffs.len()), Vec::new());
        Self { label: self.label.clone(), coeffs }
    }
}

/// One term `v · exp(μ z + ν z̄)` of an exponential section.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTerm {
    pub vector: Vec<Complex64>,
    pub mu: Complex64,
    pub nu: Complex64,
}

#[derive(Debug)]
enum ExprKind {
    Curve(Arc<HoloCurve>),
    Exponential(Vec<ExpTerm>),
    Dz(SectionExpr),
    Dzbar(SectionExpr),
    Conj(SectionExpr),
    ProjOnto(Subbundle, SectionExpr),
    ProjOff(Subbundle, SectionExpr),
    LinearCombo(Vec<(Complex64, SectionExpr)>),
}

#[derive(Debug)]
struct ExprNode {
    id: u64,
    n: usize,
    kind: ExprKind,
}

/// A node of an immutable, shareable expression DAG describing a section of `ℂⁿ`.
#[derive(Debug, Clone)]
pub struct SectionExpr(Arc<ExprNode>);

impl SectionExpr {
    fn make(n: usize, kind: ExprKind) -> Self {
        SectionExpr(Arc::new(ExprNode { id: fresh_id(), n, kind }))
    }

    pub fn curve(h: &HoloCurve) -> Self {
        Self::make(h.n(), ExprKind::Curve(Arc::new(h.clone())))
    }

    pub fn constant(v: &[Complex64]) -> Self {
        let h = HoloCurve { label: String::new(), coeffs: v.iter().map(|&c| if c.norm() == 0.0 { vec![] } else { vec![c] }).collect() };
        Self::make(v.len(), ExprKind::Curve(Arc::new(h)))
    }

    pub fn basis_vector(n: usize, j: usize) -> Self {
        let mut v = vec![czero(); n];
        v[j] = Complex64::new(1.0, 0.0);
        Self::constant(&v)
    }

    pub fn exponential(terms: Vec<ExpTerm>) -> Self {
        let n = terms.first().map_or(0, |t| t.vector.len());
        assert!(terms.iter().all(|t| t.vector.len() == n), "exponential terms must share the ambient dimension");
        Self::make(n, ExprKind::Exponential(terms))
    }

    pub fn dz(&self) -> Self {
        Self::make(self.n(), ExprKind::Dz(self.clone()))
    }

    pub fn dzbar(&self) -> Self {
        Self::make(self.n(), ExprKind::Dzbar(self.clone()))
    }

    pub fn conj(&self) -> Self {
        Self::make(self.n(), ExprKind::Conj(self.clone()))
    }

    pub fn project_onto(b: &Subbundle, s: &SectionExpr) -> Self {
        Self::make(s.n(), ExprKind::ProjOnto(b.clone(), s.clone()))
    }

    pub fn project_off(b: &Subbundle, s: &SectionExpr) -> Self {
        Self::make(s.n(), ExprKind::ProjOff(b.clone(), s.clone()))
    }

    pub fn combo(terms: Vec<(Complex64, SectionExpr)>) -> Self {
        let n = terms.first().map_or(0, |t| t.1.n());
        Self::make(n, ExprKind::LinearCombo(terms))
    }

    pub fn n(&self) -> usize {
        self.0.n
    }

    fn id(&self) -> u64 {
        self.0.id
    }
}

pub fn project_onto(b: &Subbundle, s: &SectionExpr) -> SectionExpr {
    SectionExpr::project_onto(b, s)
}

pub fn project_off(b: &Subbundle, s: &SectionExpr) -> SectionExpr {
    SectionExpr::project_off(b, s)
}

/// Which side of the basic splitting `φ ⊕ φ⊥` a bundle lies in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    InPhi,
    InPhiPerp,
    Unassigned,
}

#[derive(Debug)]
struct BundleCore {
    id: u64,
    n: usize,
    generators: Vec<SectionExpr>,
    generic: OnceLock<Result<usize>>,
}

/// Smooth subbundle of `ℂⁿ`, the generic-rank span of its generators.
#[derive(Debug, Clone)]
pub struct Subbundle {
    core: Arc<BundleCore>,
    name: String,
    side: Side,
}

impl Subbundle {
    pub fn new(name: impl Into<String>, n: usize, generators: Vec<SectionExpr>) -> Self {
        assert!(generators.iter().all(|g| g.n() == n), "generators must live in the ambient space");
        Self {
            core: Arc::new(BundleCore { id: fresh_id(), n, generators, generic: OnceLock::new() }),
            name: name.into(),
            side: Side::Unassigned,
        }
    }

    pub fn span_curve(h: &HoloCurve) -> Self {
        Self::new(h.label().to_string(), h.n(), vec![SectionExpr::curve(h)])
    }

    pub fn span_curves(name: impl Into<String>, hs: &[HoloCurve]) -> Self {
        let n = hs[0].n();
        Self::new(name, n, hs.iter().map(SectionExpr::curve).collect())
    }

    pub fn constant(name: impl Into<String>, vectors: &[Vec<Complex64>]) -> Self {
        let n = vectors[0].len();
        Self::new(name, n, vectors.iter().map(|v| SectionExpr::constant(v)).collect())
    }

    /// Span of standard basis vectors.
    pub fn coordinate(n: usize, indices: &[usize]) -> Self {
        Self::new(format!("e{indices:?}"), n, indices.iter().map(|&j| SectionExpr::basis_vector(n, j)).collect())
    }

    pub fn zero(n: usize) -> Self {
        Self::new("0", n, Vec::new())
    }

    pub fn full(n: usize) -> Self {
        Self::coordinate(n, &(0..n).collect::<Vec<_>>()).named("C^n")
    }

    pub fn named(&self, name: impl Into<String>) -> Self {
        Self { core: self.core.clone(), name: name.into(), side: self.side }
    }

    pub fn with_side(&self, side: Side) -> Self {
        Self { core: self.core.clone(), name: self.name.clone(), side }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn ambient(&self) -> usize {
        self.core.n
    }

    pub fn generators(&self) -> &[SectionExpr] {
        &self.core.generators
    }

    /// Identity of the underlying generator set (shared by renamed copies).
    pub fn same_bundle(&self, other: &Subbundle) -> bool {
        Arc::ptr_eq(&self.core, &other.core)
    }

    /// Maximal fibre rank over deterministic probe points, computed once per bundle.
    pub fn generic_rank(&self, settings: &Settings) -> Result<usize> {
        self.core.generic.get_or_init(|| probe_generic_rank(self, settings)).clone()
    }

    /// Orthonormal frame of this bundle at `z0`, with jets to order `order`.
    pub fn fibre_basis(&self, z0: Complex64, order: usize, settings: &Settings) -> Result<FibreBasis> {
        let ctx = EvalCtx::new(z0, settings);
        let frame = ctx.frame(self, order)?;
        Ok(FibreBasis { point: z0, rank: frame.rank(), basis: frame.basis.clone() })
    }

    /// Constant-term orthonormal basis as an `n × rank` matrix.
    pub fn fibre(&self, z0: Complex64, settings: &Settings) -> Result<DMatrix<Complex64>> {
        EvalCtx::new(z0, settings).frame_matrix(self)
    }
}

/// Generic rank probe points: always the default seed, independent of the run seed.
const PROBE_POINTS: usize = 7;
const PROBE_MIN_VALID: usize = 3;
const PROBE_MAX_DRAWS: usize = 50;

fn probe_generic_rank(b: &Subbundle, settings: &Settings) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    let mut ranks = Vec::new();
    for _ in 0..PROBE_MAX_DRAWS {
        if ranks.len() == PROBE_POINTS {
            break;
        }
        let z = disk_point(&mut rng, SAMPLE_RADIUS);
        let ctx = EvalCtx::new(z, settings);
        match ctx.frame_raw(b, 0) {
            Ok(f) => ranks.push(f.rank()),
            Err(e) if e.is_resample() => continue,
            Err(e) => return Err(e),
        }
    }
    if ranks.len() < PROBE_MIN_VALID {
        return Err(LabError::Inconclusive(format!("generic rank of {}: too few valid probe points", b.name)));
    }
    Ok(ranks.into_iter().max().unwrap_or(0))
}

/// Orthonormal basis of a fibre with the full jets of the basis sections.
#[derive(Debug, Clone)]
pub struct FibreBasis {
    pub point: Complex64,
    pub basis: Vec<JetVec>,
    pub rank: usize,
}

impl FibreBasis {
    pub fn matrix(&self, n: usize) -> DMatrix<Complex64> {
        columns_value(n, &self.basis)
    }
}

fn columns_value(n: usize, cols: &[JetVec]) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, &c.value());
    }
    m
}

/// Jet of a section together with the magnitude of the data it was computed from,
/// so cancellations can be judged against the right scale.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub vec: JetVec,
    pub scale: f64,
}

impl Evaluated {
    fn truncate(&self, order: usize) -> Self {
        Self { vec: self.vec.truncate(order), scale: self.scale }
    }
}

/// Orthonormal jet frame of a bundle at a base point.
#[derive(Debug, Clone)]
pub struct Frame {
    pub basis: Vec<JetVec>,
    conj: Vec<JetVec>,
    pub scale: f64,
}

impl Frame {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    fn truncate(&self, order: usize) -> Self {
        Self {
            basis: self.basis.iter().map(|e| e.truncate(order)).collect(),
            conj: self.conj.iter().map(|e| e.truncate(order)).collect(),
            scale: self.scale,
        }
    }

    /// Orthogonal projection of a section jet onto the frame's span.
    pub fn project(&self, s: &JetVec) -> JetVec {
        let mut out = JetVec::zero(s.dim(), s.order().min(self.order_or(s.order())));
        for (e, ec) in self.basis.iter().zip(&self.conj) {
            let c = s.inner_with_conj(ec);
            out = out.add(&e.mul_fn(&c));
        }
        out
    }

    /// Coordinates `⟨s, e_j⟩` of a section in the frame.
    pub fn coordinates(&self, s: &JetVec) -> Vec<Jet2> {
        self.conj.iter().map(|ec| s.inner_with_conj(ec)).collect()
    }

    fn order_or(&self, fallback: usize) -> usize {
        self.basis.first().map_or(fallback, JetVec::order)
    }

    pub fn matrix(&self, n: usize) -> DMatrix<Complex64> {
        columns_value(n, &self.basis)
    }
}

/// Per-point evaluation context with node and frame caches.
pub struct EvalCtx<'s> {
    z0: Complex64,
    settings: &'s Settings,
    exprs: RefCell<HashMap<u64, Rc<Evaluated>>>,
    frames: RefCell<HashMap<u64, Rc<Frame>>>,
}

/// Mixed partial jets of `exp(μz + νz̄)` at `z0`.
fn exp_jet(mu: Complex64, nu: Complex64, z0: Complex64, order: usize) -> Jet2 {
    let e0 = (mu * z0 + nu * z0.conj()).exp();
    let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    Jet2::from_fn(order, |a, b| e0 * mu.powu(a as u32) * nu.powu(b as u32) / (fact(a) * fact(b)))
}

impl<'s> EvalCtx<'s> {
    pub fn new(z0: Complex64, settings: &'s Settings) -> Self {
        Self { z0, settings, exprs: RefCell::new(HashMap::new()), frames: RefCell::new(HashMap::new()) }
    }

    pub fn point(&self) -> Complex64 {
        self.z0
    }

    pub fn settings(&self) -> &Settings {
        self.settings
    }

    pub fn eval(&self, s: &SectionExpr, order: usize) -> Result<Rc<Evaluated>> {
        if let Some(hit) = self.exprs.borrow().get(&s.id()) {
            if hit.vec.order() == order {
                return Ok(hit.clone());
            }
            if hit.vec.order() > order {
                return Ok(Rc::new(hit.truncate(order)));
            }
        }
        let value = Rc::new(self.compute(s, order)?);
        self.exprs.borrow_mut().insert(s.id(), value.clone());
        Ok(value)
    }

    fn compute(&self, s: &SectionExpr, order: usize) -> Result<Evaluated> {
        let n = s.n();
        Ok(match &s.0.kind {
            ExprKind::Curve(h) => {
                let vec = JetVec::new(h.coeffs().iter().map(|c| lift_polynomial(c, self.z0, order)).collect());
                let scale = vec.max_abs();
                Evaluated { vec, scale }
            }
            ExprKind::Exponential(terms) => {
                let mut vec = JetVec::zero(n, order);
                for t in terms {
                    let e = exp_jet(t.mu, t.nu, self.z0, order);
                    vec = vec.add(&JetVec::new(t.vector.iter().map(|&c| e.scale(c)).collect()));
                }
                let scale = vec.max_abs();
                Evaluated { vec, scale }
            }
            ExprKind::Dz(c) => {
                let x = self.eval(c, order + 1)?;
                let vec = x.vec.dz()?;
                Evaluated { scale: x.scale.max(vec.max_abs()), vec }
            }
            ExprKind::Dzbar(c) => {
                let x = self.eval(c, order + 1)?;
                let vec = x.vec.dzbar()?;
                Evaluated { scale: x.scale.max(vec.max_abs()), vec }
            }
            ExprKind::Conj(c) => {
                let x = self.eval(c, order)?;
                Evaluated { vec: x.vec.conj(), scale: x.scale }
            }
            ExprKind::ProjOnto(b, c) => {
                let x = self.eval(c, order)?;
                let f = self.frame(b, order)?;
                let vec = f.project(&x.vec);
                Evaluated { scale: x.scale.max(vec.max_abs()), vec }
            }
            ExprKind::ProjOff(b, c) => {
                let x = self.eval(c, order)?;
                let f = self.frame(b, order)?;
                let vec = x.vec.sub(&f.project(&x.vec));
                Evaluated { scale: x.scale.max(vec.max_abs()), vec }
            }
            ExprKind::LinearCombo(terms) => {
                let mut vec = JetVec::zero(n, order);
                let mut scale: f64 = 0.0;
                for (w, c) in terms {
                    let x = self.eval(c, order)?;
                    vec = vec.add(&x.vec.scale(*w));
                    scale = scale.max(w.norm() * x.scale);
                }
                Evaluated { scale: scale.max(vec.max_abs()), vec }
            }
        })
    }

    /// Frame with the generic-rank check applied.
    pub fn frame(&self, b: &Subbundle, order: usize) -> Result<Rc<Frame>> {
        let f = self.frame_raw(b, order)?;
        let generic = b.generic_rank(self.settings)?;
        if f.rank() < generic {
            return Err(LabError::RankDrop { point: self.z0, rank: f.rank(), generic });
        }
        Ok(f)
    }

    /// Frame without comparing against the generic rank.
    pub fn frame_raw(&self, b: &Subbundle, order: usize) -> Result<Rc<Frame>> {
        let id = b.core.id;
        if let Some(hit) = self.frames.borrow().get(&id) {
            let k = hit.order_or(usize::MAX);
            if k == order || (k == usize::MAX && hit.rank() == 0) {
                return Ok(hit.clone());
            }
            if k > order {
                return Ok(Rc::new(hit.truncate(order)));
            }
        }
        let frame = Rc::new(self.orthonormalize(b, order)?);
        self.frames.borrow_mut().insert(id, frame.clone());
        Ok(frame)
    }

    /// Modified Gram–Schmidt in jet arithmetic, two passes per generator.
    fn orthonormalize(&self, b: &Subbundle, order: usize) -> Result<Frame> {
        let gens = b.generators().iter().map(|g| self.eval(g, order)).collect::<Result<Vec<_>>>()?;
        let scale = gens.iter().map(|g| g.scale).fold(0.0, f64::max);
        let tol = self.settings.tol.rank * scale;
        let mut basis: Vec<JetVec> = Vec::new();
        let mut conj: Vec<JetVec> = Vec::new();
        for g in &gens {
            let mut v = g.vec.clone();
            for _ in 0..2 {
                for (e, ec) in basis.iter().zip(&conj) {
                    v = v.sub(&e.mul_fn(&v.inner_with_conj(ec)));
                }
            }
            if v.value().norm() <= tol || scale == 0.0 {
                continue;
            }
            let norm = v.inner(&v).sqrt()?.inv()?;
            let e = v.mul_fn(&norm);
            conj.push(e.conj());
            basis.push(e);
            if basis.len() == b.ambient() {
                break;
            }
        }
        Ok(Frame { basis, conj, scale })
    }

    /// Constant-term orthonormal basis (checked) as a matrix.
    pub fn frame_matrix(&self, b: &Subbundle) -> Result<DMatrix<Complex64>> {
        Ok(self.frame(b, 0)?.matrix(b.ambient()))
    }

    /// Orthogonal projector onto the fibre at the base point.
    pub fn projector(&self, b: &Subbundle) -> Result<DMatrix<Complex64>> {
        let e = self.frame_matrix(b)?;
        Ok(&e * e.adjoint())
    }
}

pub fn bundle_sum(a: &Subbundle, b: &Subbundle) -> Subbundle {
    let mut gens = a.generators().to_vec();
    gens.extend_from_slice(b.generators());
    Subbundle::new(format!("({} + {})", a.name(), b.name()), a.ambient(), gens)
}

/// Sum of several bundles.
pub fn bundle_sum_all(name: impl Into<String>, n: usize, parts: &[Subbundle]) -> Subbundle {
    let gens = parts.iter().flat_map(|p| p.generators().iter().cloned()).collect();
    Subbundle::new(name, n, gens)
}

/// `a ⊖ b`; requires `b ⊆ a` at the sample points.
pub fn bundle_minus(a: &Subbundle, b: &Subbundle, settings: &Settings) -> Result<Subbundle> {
    let excess = containment_residual(b, a, settings)?;
    if excess >= settings.tol.orth {
        return Err(LabError::usage(format!("{} is not contained in {}: residual {excess:.3e}", b.name(), a.name())));
    }
    Ok(bundle_minus_unchecked(a, b))
}

pub fn bundle_minus_unchecked(a: &Subbundle, b: &Subbundle) -> Subbundle {
    Subbundle::new(
        format!("({} - {})", a.name(), b.name()),
        a.ambient(),
        a.generators().iter().map(|g| project_off(b, g)).collect(),
    )
}

/// Orthogonal complement in `ℂⁿ`.
pub fn complement(b: &Subbundle) -> Subbundle {
    let n = b.ambient();
    Subbundle::new(
        format!("{}^perp", b.name()),
        n,
        (0..n).map(|j| project_off(b, &SectionExpr::basis_vector(n, j))).collect(),
    )
}

/// The conjugate bundle `b̄`.
pub fn conj_bundle(b: &Subbundle) -> Subbundle {
    Subbundle::new(format!("conj({})", b.name()), b.ambient(), b.generators().iter().map(SectionExpr::conj).collect())
}

/// Largest singular value of a matrix (0 for empty matrices).
pub fn spectral_norm(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// `max_z ‖(I − P_a) E_b‖`: how far `b` sticks out of `a` at the sample points.
pub fn containment_residual(b: &Subbundle, a: &Subbundle, settings: &Settings) -> Result<f64> {
    let pts = crate::sampling::sample_eval(settings.seed, settings.samples, |z| {
        let ctx = EvalCtx::new(z, settings);
        let eb = ctx.frame_matrix(b)?;
        let pa = ctx.projector(a)?;
        Ok(spectral_norm(&(&eb - &pa * &eb)))
    })?;
    Ok(pts.into_iter().map(|p| p.1).fold(0.0, f64::max))
}

/// Fibre distance `max(‖(I − P_a)E_b‖, ‖(I − P_b)E_a‖)`; 1 when the ranks differ.
pub fn fibre_distance_at(ctx: &EvalCtx<'_>, a: &Subbundle, b: &Subbundle) -> Result<f64> {
    let ea = ctx.frame_matrix(a)?;
    let eb = ctx.frame_matrix(b)?;
    if ea.ncols() != eb.ncols() {
        return Ok(1.0);
    }
    let pa = &ea * ea.adjoint();
    let pb = &eb * eb.adjoint();
    Ok(spectral_norm(&(&eb - &pa * &eb)).max(spectral_norm(&(&ea - &pb * &ea))))
}

/// Largest fibre distance over the run's sample points.
pub fn fibre_distance(a: &Subbundle, b: &Subbundle, settings: &Settings) -> Result<f64> {
    let pts = crate::sampling::sample_eval(settings.seed, settings.samples, |z| {
        fibre_distance_at(&EvalCtx::new(z, settings), a, b)
    })?;
    Ok(pts.into_iter().map(|p| p.1).fold(0.0, f64::max))
}

/// Largest singular value of the cross-Gram matrix of orthonormal frames at `z0`.
pub fn cross_gram_norm(ctx: &EvalCtx<'_>, a: &Subbundle, b: &Subbundle) -> Result<f64> {
    let ea = ctx.frame_matrix(a)?;
    let eb = ctx.frame_matrix(b)?;
    Ok(spectral_norm(&(ea.adjoint() * eb)))
}

/// Orthogonality of two bundles at the given points; rank-drop points are skipped.
pub fn orthogonal(a: &Subbundle, b: &Subbundle, points: &[Complex64], settings: &Settings) -> Result<bool> {
    let vals = eval_at(points, |z| cross_gram_norm(&EvalCtx::new(z, settings), a, b))?;
    if vals.len() < 3 {
        return Err(LabError::Inconclusive(format!("orthogonality of {} and {}: fewer than 3 valid points", a.name(), b.name())));
    }
    Ok(vals.iter().all(|v| v.1 < settings.tol.orth))
}

/// Orthogonality over the run's default sample points.
pub fn orthogonal_default(a: &Subbundle, b: &Subbundle, settings: &Settings) -> Result<bool> {
    let pts = crate::sampling::sample_eval(settings.seed, settings.samples, |z| cross_gram_norm(&EvalCtx::new(z, settings), a, b))?;
    Ok(pts.iter().all(|v| v.1 < settings.tol.orth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn line() -> HoloCurve {
        HoloCurve::from_real("line", &[&[1.0], &[0.0, 1.0]]).unwrap()
    }

    #[test]
    fn curve_schema_roundtrip_and_trimming() {
        let h = HoloCurve::new("t", vec![vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(2.0, 1.0)]]).unwrap();
        assert_eq!(h.coeffs()[0].len(), 1);
        let back = HoloCurve::from_json(&h.to_json()).unwrap();
        assert_eq!(back, h);
        assert!(HoloCurve::from_json("{\"n\": 2, \"label\": \"x\", \"coeffs\": [[[0,0]], []]}").is_err());
        assert!(HoloCurve::from_json("{\"n\": 3, \"label\": \"x\", \"coeffs\": [[[1,0]]]}").is_err());
        assert!(HoloCurve::from_json("not json").is_err());
    }

    #[test]
    fn fibre_basis_examples() {
        let s = Settings::default();
        let b = Subbundle::span_curve(&line());
        let f = b.fibre_basis(c(0.0, 0.0), 2, &s).unwrap();
        assert_eq!(f.rank, 1);
        let m = f.matrix(2);
        assert!((m[(0, 0)].norm() - 1.0).abs() < 1e-14 && m[(1, 0)].norm() < 1e-14);

        let dep = Subbundle::span_curves(
            "dep",
            &[line(), HoloCurve::from_real("zl", &[&[0.0, 1.0], &[0.0, 0.0, 1.0]]).unwrap()],
        );
        assert_eq!(dep.fibre_basis(c(0.3, 0.2), 2, &s).unwrap().rank, 1);

        let two = Subbundle::span_curves("two", &[line(), HoloCurve::from_real("e2", &[&[], &[1.0]]).unwrap()]);
        assert_eq!(two.fibre_basis(c(2.0, 0.0), 2, &s).unwrap().rank, 2);
    }

    #[test]
    fn rank_drop_is_reported() {
        let s = Settings::default();
        // span{(z, z²)} vanishes at 0
        let h = HoloCurve::from_real("zz", &[&[0.0, 1.0], &[0.0, 0.0, 1.0]]).unwrap();
        let b = Subbundle::span_curve(&h);
        assert!(matches!(b.fibre_basis(c(0.0, 0.0), 1, &s), Err(LabError::RankDrop { .. })));
    }

    #[test]
    fn projection_examples() {
        let s = Settings::default();
        let e1 = Subbundle::coordinate(2, &[0]);
        let v = SectionExpr::constant(&[c(2.0, 1.0), c(-1.0, 3.0)]);
        let ctx = EvalCtx::new(c(0.1, 0.2), &s);
        let on = ctx.eval(&project_onto(&e1, &v), 1).unwrap().vec.value();
        let off = ctx.eval(&project_off(&e1, &v), 1).unwrap().vec.value();
        assert!((on[0] - c(2.0, 1.0)).norm() < 1e-15 && on[1].norm() < 1e-15);
        assert!(off[0].norm() < 1e-15 && (off[1] - c(-1.0, 3.0)).norm() < 1e-15);

        let b = Subbundle::span_curve(&line());
        let ctx = EvalCtx::new(c(1.0, 0.0), &s);
        let p = ctx.eval(&project_onto(&b, &SectionExpr::basis_vector(2, 1)), 1).unwrap().vec.value();
        assert!((p[0] - c(0.5, 0.0)).norm() < 1e-14 && (p[1] - c(0.5, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn sums_and_differences() {
        let s = Settings::default();
        let z = c(0.2, -0.4);
        let e1 = Subbundle::coordinate(3, &[0]);
        let e2 = Subbundle::coordinate(3, &[1]);
        assert_eq!(bundle_sum(&e1, &e2).fibre_basis(z, 0, &s).unwrap().rank, 2);
        let e12 = Subbundle::coordinate(3, &[0, 1]);
        let d = bundle_minus(&e12, &e1, &s).unwrap();
        let m = d.fibre(z, &s).unwrap();
        assert_eq!(m.ncols(), 1);
        assert!((m[(1, 0)].norm() - 1.0).abs() < 1e-14);
        let b = Subbundle::span_curve(&line());
        assert_eq!(bundle_minus(&b, &b, &s).unwrap().generic_rank(&s).unwrap(), 0);
        assert!(bundle_minus(&e1, &e2, &s).is_err());
    }

    #[test]
    fn orthogonality_examples() {
        let s = Settings::default();
        let pts = crate::sampling::sample_points(11, 10);
        let e1 = Subbundle::coordinate(2, &[0]);
        let e2 = Subbundle::coordinate(2, &[1]);
        assert!(orthogonal(&e1, &e2, &pts, &s).unwrap());
        let b = Subbundle::span_curve(&line());
        assert!(!orthogonal(&b, &b, &pts, &s).unwrap());
        let q = HoloCurve::new(
            "q1",
            vec![
                vec![c(1.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)],
                vec![c(0.0, 1.0), c(0.0, 0.0), c(0.0, 1.0)],
                vec![c(0.0, 0.0), c(2.0, 0.0)],
            ],
        )
        .unwrap();
        let h = Subbundle::span_curve(&q);
        assert!(orthogonal(&h, &conj_bundle(&h), &pts, &s).unwrap());
    }

    #[test]
    fn exponential_leaf_matches_closed_form() {
        let s = Settings::default();
        let z0 = c(0.3, -0.2);
        let t = SectionExpr::exponential(vec![ExpTerm { vector: vec![c(1.0, 0.0)], mu: c(0.0, 0.5), nu: c(0.0, 0.5) }]);
        let ctx = EvalCtx::new(z0, &s);
        let j = ctx.eval(&t, 3).unwrap();
        let dz = ctx.eval(&t.dz(), 2).unwrap();
        let want = c(0.0, 0.5) * c(0.0, z0.re).exp();
        assert!((dz.vec.value()[0] - want).norm() < 1e-14);
        assert!((j.vec.value()[0] - c(0.0, z0.re).exp()).norm() < 1e-14);
    }

    #[test]
    fn frames_are_orthonormal_as_jets() {
        let s = Settings::default();
        let h2 = HoloCurve::from_real("b", &[&[1.0, 0.0, 1.0], &[0.0, 2.0], &[0.5, 0.0, 0.0, 1.0]]).unwrap();
        let b = Subbundle::span_curves("pair", &[line().pad(3), h2]);
        let f = b.fibre_basis(c(0.4, 0.1), 4, &s).unwrap();
        for (i, a) in f.basis.iter().enumerate() {
            for (j, bb) in f.basis.iter().enumerate() {
                let g = a.inner(bb);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.value() - c(want, 0.0)).norm() < 1e-12);
                assert!(g.coeffs()[1..].iter().all(|x| x.norm() < 1e-11));
            }
        }
    }
}
