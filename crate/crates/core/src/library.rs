//! Builtin examples addressed by short ids such as `veronese:4:0` or `quadric:q1-pair`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::frames::{bundle_sum, bundle_sum_all, ExpTerm, HoloCurve, SectionExpr, Subbundle};
use crate::geometry::{q1_curve, random_quadric, real_mixed_pair, u0v4_curve, veronese, veronese_curve};
use crate::sequences::gauss_iterate;
use crate::settings::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Harmonic,
    /// Harmonic with infinite uniton number.
    InfiniteControl,
    /// Not harmonic at all.
    NonHarmonic,
}

#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub description: String,
    pub role: Role,
    pub map: Subbundle,
    /// The holomorphic seed, when the map is built from a single curve.
    pub curve: Option<HoloCurve>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleInfo {
    pub id: String,
    pub description: String,
    pub role: Role,
}

/// Ids listed by `list-examples`; parametrised families appear with one instance.
pub const LIBRARY: &[&str] = &[
    "veronese:2:0",
    "veronese:3:1",
    "veronese:4:2",
    "u0v4",
    "u0v4:2",
    "quadric:q1",
    "quadric:q1-pair",
    "quadric:random:5:1",
    "frenet:3:1",
    "frenet:4:1",
    "mixed:3",
    "pair:4:0:2",
    "osculating:4:1",
    "constant:3:1",
    "torus",
    "nonharmonic",
];

/// The k = 2 inputs of the reduction pipeline.
pub const GRASS_TWO: &[&str] = &["frenet:3:0", "frenet:3:1", "frenet:4:1", "mixed:3", "pair:4:0:2", "pair:5:0:3", "quadric:q1-pair", "u0v4-pair"];

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn num(field: Option<&str>, id: &str) -> Result<usize> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| LabError::usage(format!("malformed example id '{id}'")))
}

fn holo(id: &str, description: String, h: HoloCurve) -> Example {
    Example { id: id.into(), description, role: Role::Harmonic, map: Subbundle::span_curve(&h).named(id), curve: Some(h) }
}

fn map(id: &str, description: String, map: Subbundle) -> Example {
    Example { id: id.into(), description, role: Role::Harmonic, map: map.named(id), curve: None }
}

/// `span{(cos u, sin u)}`, `u = Re z`: a geodesic circle in `ℂP¹`.
fn circle() -> Subbundle {
    let e = |sign: f64| ExpTerm { vector: vec![c(0.5, 0.0), c(0.0, -0.5 * sign)], mu: c(0.0, 0.5 * sign), nu: c(0.0, 0.5 * sign) };
    Subbundle::new("circle", 2, vec![SectionExpr::exponential(vec![e(1.0), e(-1.0)])])
}

/// `span{(1, z + z̄²)}`.
fn non_harmonic() -> Subbundle {
    let a = HoloCurve::new("a", vec![vec![c(1.0, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]]).expect("non-zero");
    let b = HoloCurve::new("b", vec![vec![], vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]]).expect("non-zero");
    let s = SectionExpr::combo(vec![(c(1.0, 0.0), SectionExpr::curve(&a)), (c(1.0, 0.0), SectionExpr::curve(&b).conj())]);
    Subbundle::new("nonharmonic", 2, vec![s])
}

/// Resolves a builtin id.
pub fn builtin(id: &str) -> Result<Example> {
    let parts: Vec<&str> = id.split(':').collect();
    let ex = match parts.as_slice() {
        ["veronese", ..] => {
            let (m, p) = (num(parts.get(1).copied(), id)?, num(parts.get(2).copied(), id)?);
            if parts.len() != 3 || m == 0 {
                return Err(LabError::usage(format!("malformed example id '{id}'")));
            }
            if p == 0 {
                holo(id, format!("Veronese curve of degree {m}"), veronese_curve(m))
            } else {
                map(id, format!("Gauss transform {p} of the Veronese curve of degree {m}"), veronese(m, p)?)
            }
        }
        ["u0v4"] => holo(id, "totally isotropic quartic in CP^4".into(), u0v4_curve()),
        ["u0v4", "2"] => map(id, "middle Gauss bundle of the totally isotropic quartic".into(), gauss_iterate(&Subbundle::span_curve(&u0v4_curve()), 2)),
        ["u0v4-pair"] => map(id, "real mixed pair of the totally isotropic quartic".into(), real_mixed_pair(&u0v4_curve())?),
        ["quadric", "q1"] => holo(id, "the conic in CP^2".into(), q1_curve()),
        ["quadric", "q1-pair"] => map(id, "real mixed pair of the conic".into(), real_mixed_pair(&q1_curve())?),
        ["quadric", "random", n, seed] => {
            let n = num(Some(n), id)?;
            let seed: u64 = seed.parse().map_err(|_| LabError::usage(format!("malformed example id '{id}'")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_quadric(n, 1 + (seed % 2) as usize, &mut rng)?;
            holo(id, format!("random quadric curve in CP^{}", n - 1), h)
        }
        ["quadric", "random-pair", n, seed] => {
            let curve = builtin(&format!("quadric:random:{n}:{seed}"))?.curve.expect("quadric examples carry a curve");
            map(id, format!("real mixed pair of a random quadric curve in CP^{}", curve.n() - 1), real_mixed_pair(&curve)?)
        }
        ["frenet", m, j] => {
            let (m, j) = (num(Some(m), id)?, num(Some(j), id)?);
            map(id, format!("Frenet pair V{j} + V{} of degree {m}", j + 1), bundle_sum(&veronese(m, j)?, &veronese(m, j + 1)?))
        }
        ["mixed", m] => {
            let m = num(Some(m), id)?;
            map(id, format!("mixed pair V0 + V{m} of degree {m}"), bundle_sum(&veronese(m, 0)?, &veronese(m, m)?))
        }
        ["pair", m, i, j] => {
            let (m, i, j) = (num(Some(m), id)?, num(Some(i), id)?, num(Some(j), id)?);
            if i == j {
                return Err(LabError::usage(format!("'{id}' repeats a Gauss bundle")));
            }
            map(id, format!("V{i} + V{j} of degree {m}"), bundle_sum(&veronese(m, i)?, &veronese(m, j)?))
        }
        ["osculating", m, j] => {
            let (m, j) = (num(Some(m), id)?, num(Some(j), id)?);
            let parts = (0..=j).map(|p| veronese(m, p)).collect::<Result<Vec<_>>>()?;
            map(id, format!("osculating bundle V0 + ... + V{j} of degree {m}"), bundle_sum_all(id, m + 1, &parts))
        }
        ["constant", n, k] => {
            let (n, k) = (num(Some(n), id)?, num(Some(k), id)?);
            if k > n {
                return Err(LabError::usage(format!("'{id}': rank exceeds dimension")));
            }
            map(id, format!("constant coordinate {k}-plane in C^{n}"), Subbundle::coordinate(n, &(0..k).collect::<Vec<_>>()))
        }
        ["torus"] => Example {
            id: id.into(),
            description: "geodesic circle in CP^1, harmonic with infinite uniton number".into(),
            role: Role::InfiniteControl,
            map: circle().named(id),
            curve: None,
        },
        ["nonharmonic"] => Example {
            id: id.into(),
            description: "the line span{(1, z + conj(z)^2)}, not harmonic".into(),
            role: Role::NonHarmonic,
            map: non_harmonic().named(id),
            curve: None,
        },
        _ => return Err(LabError::usage(format!("unknown example '{id}'"))),
    };
    Ok(ex)
}

pub fn list() -> Vec<ExampleInfo> {
    LIBRARY
        .iter()
        .map(|id| {
            let ex = builtin(id).expect("library ids resolve");
            ExampleInfo { id: ex.id, description: ex.description, role: ex.role }
        })
        .collect()
}
