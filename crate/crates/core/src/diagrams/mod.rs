//! Diagrams of mutually orthogonal subbundles, paths through them, and the cycles
//! built from the first and second return maps.

mod geometric;
mod returns;

pub use geometric::*;
pub use returns::*;

use std::collections::BTreeSet;

use serde::Serialize;

use crate::frames::Side;
use crate::settings::{LabError, Result};

/// Enumeration stops with a budget error beyond this many paths.
pub const MAX_PATHS: usize = 1_000_000;

/// An arrow of a diagram; `from == to` is the self-arrow (the derivation on that vertex).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

impl Edge {
    pub fn new(from: usize, to: usize) -> Self {
        Self { from, to }
    }

    pub fn is_self(&self) -> bool {
        self.from == self.to
    }
}

/// A non-empty sequence of composable edges.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Path {
    edges: Vec<Edge>,
}

impl Path {
    pub fn new(edges: Vec<Edge>) -> Result<Self> {
        if edges.is_empty() {
            return Err(LabError::usage("a path needs at least one edge"));
        }
        if let Some(w) = edges.windows(2).find(|w| w[0].to != w[1].from) {
            return Err(LabError::usage(format!("edges {:?} and {:?} do not compose", w[0], w[1])));
        }
        Ok(Self { edges })
    }

    /// The path visiting the given vertices in order.
    pub fn through(vertices: &[usize]) -> Result<Self> {
        Self::new(vertices.windows(2).map(|w| Edge::new(w[0], w[1])).collect())
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn source(&self) -> usize {
        self.edges[0].from
    }

    pub fn target(&self) -> usize {
        self.edges[self.edges.len() - 1].to
    }

    pub fn vertices(&self) -> Vec<usize> {
        std::iter::once(self.source()).chain(self.edges.iter().map(|e| e.to)).collect()
    }

    pub fn self_arrows(&self) -> usize {
        self.edges.iter().filter(|e| e.is_self()).count()
    }

    pub fn degree(&self, g: &DiagramGraph) -> usize {
        self.edges.iter().filter(|e| g.is_external(**e)).count()
    }

    /// `(ℓ, m)`: length and degree.
    pub fn path_type(&self, g: &DiagramGraph) -> (usize, usize) {
        (self.len(), self.degree(g))
    }

    /// This path followed by `next`.
    pub fn then(&self, next: &Path) -> Result<Path> {
        let mut edges = self.edges.clone();
        edges.extend_from_slice(&next.edges);
        Path::new(edges)
    }

    /// The path with a self-arrow inserted at its `i`-th vertex.
    pub fn with_self_arrow_at(&self, i: usize) -> Result<Path> {
        let v = self.vertices();
        if i >= v.len() {
            return Err(LabError::usage(format!("vertex position {i} is outside the path")));
        }
        let mut verts = v[..=i].to_vec();
        verts.extend_from_slice(&v[i..]);
        Path::through(&verts)
    }

    pub fn display(&self) -> String {
        self.vertices().iter().map(usize::to_string).collect::<Vec<_>>().join("->")
    }
}

/// Combinatorial skeleton of a diagram: vertex sides and the present proper arrows.
/// Self-arrows are always present.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagramGraph {
    sides: Vec<Side>,
    arrows: BTreeSet<(usize, usize)>,
}

impl DiagramGraph {
    pub fn new(sides: Vec<Side>, arrows: &[(usize, usize)]) -> Result<Self> {
        let v = sides.len();
        for &(i, j) in arrows {
            if i == j || i >= v || j >= v {
                return Err(LabError::usage(format!("({i}, {j}) is not a proper arrow of a {v}-vertex diagram")));
            }
        }
        Ok(Self { sides, arrows: arrows.iter().copied().collect() })
    }

    pub fn vertex_count(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[Side] {
        &self.sides
    }

    pub fn arrows(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.arrows.iter().copied()
    }

    pub fn has_arrow(&self, i: usize, j: usize) -> bool {
        i == j || self.arrows.contains(&(i, j))
    }

    /// One end in `φ`, the other in `φ⊥`.
    pub fn is_external(&self, e: Edge) -> bool {
        matches!(
            (self.sides[e.from], self.sides[e.to]),
            (Side::InPhi, Side::InPhiPerp) | (Side::InPhiPerp, Side::InPhi)
        )
    }
}

/// All paths from `from` to `to` of type `(length, degree)`, in lexicographic order of
/// their vertex sequences. `self_budget` caps the number of self-arrows per path.
pub fn enumerate_paths(
    g: &DiagramGraph,
    from: usize,
    to: usize,
    length: usize,
    degree: usize,
    self_budget: Option<usize>,
) -> Result<Vec<Path>> {
    let v = g.vertex_count();
    if from >= v || to >= v {
        return Err(LabError::usage(format!("vertex out of range for a {v}-vertex diagram")));
    }
    let mut out = Vec::new();
    if length == 0 || degree > length {
        return Ok(out);
    }
    let mut walk = Walk { g, to, length, degree, self_budget: self_budget.unwrap_or(usize::MAX), stack: Vec::new(), out: &mut out };
    walk.extend(from, 0, 0)?;
    Ok(out)
}

struct Walk<'a> {
    g: &'a DiagramGraph,
    to: usize,
    length: usize,
    degree: usize,
    self_budget: usize,
    stack: Vec<Edge>,
    out: &'a mut Vec<Path>,
}

impl Walk<'_> {
    fn extend(&mut self, at: usize, ext: usize, selfs: usize) -> Result<()> {
        let left = self.length - self.stack.len();
        if left == 0 {
            if at == self.to && ext == self.degree {
                if self.out.len() >= MAX_PATHS {
                    return Err(LabError::Budget(format!("more than {MAX_PATHS} paths")));
                }
                self.out.push(Path { edges: self.stack.clone() });
            }
            return Ok(());
        }
        for next in 0..self.g.vertex_count() {
            if !self.g.has_arrow(at, next) {
                continue;
            }
            let e = Edge::new(at, next);
            let ext2 = ext + usize::from(self.g.is_external(e));
            let selfs2 = selfs + usize::from(e.is_self());
            if ext2 > self.degree || self.degree - ext2 > left - 1 || selfs2 > self.self_budget {
                continue;
            }
            self.stack.push(e);
            self.extend(next, ext2, selfs2)?;
            self.stack.pop();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basic() -> DiagramGraph {
        DiagramGraph::new(vec![Side::InPhi, Side::InPhiPerp], &[(0, 1), (1, 0)]).unwrap()
    }

    /// Second-return skeleton: `φ, G′, …, G^{(r)}, R`.
    fn second_return(r: usize) -> DiagramGraph {
        let mut sides = vec![Side::InPhi];
        sides.extend(std::iter::repeat_n(Side::InPhiPerp, r + 1));
        let mut arrows: Vec<(usize, usize)> = (0..r).map(|i| (i, i + 1)).collect();
        arrows.extend([(r, 0), (r, r + 1), (r + 1, 0)]);
        DiagramGraph::new(sides, &arrows).unwrap()
    }

    /// Brute force over every vertex sequence, in lexicographic order.
    fn oracle(g: &DiagramGraph, from: usize, to: usize, l: usize, m: usize, budget: Option<usize>) -> Vec<Path> {
        let v = g.vertex_count();
        let mut out = Vec::new();
        let total = v.pow(l as u32);
        for code in 0..total {
            let mut seq = vec![from];
            let mut rest = code;
            let mut digits = vec![0; l];
            for d in digits.iter_mut().rev() {
                *d = rest % v;
                rest /= v;
            }
            seq.extend(digits);
            if *seq.last().unwrap() != to || !seq.windows(2).all(|w| g.has_arrow(w[0], w[1])) {
                continue;
            }
            let p = Path::through(&seq).unwrap();
            if p.degree(g) == m && budget.is_none_or(|b| p.self_arrows() <= b) {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn basic_diagram_has_one_external_two_cycle() {
        let ps = enumerate_paths(&basic(), 0, 0, 2, 2, None).unwrap();
        assert_eq!(ps, vec![Path::through(&[0, 1, 0]).unwrap()]);
        assert!(enumerate_paths(&basic(), 0, 0, 1, 2, None).unwrap().is_empty());
    }

    #[test]
    fn odd_degree_cycles_do_not_exist() {
        let g = second_return(2);
        for l in 1..7 {
            for m in (1..=l).step_by(2) {
                assert!(enumerate_paths(&g, 0, 0, l, m, None).unwrap().is_empty());
            }
        }
    }

    #[test]
    fn second_return_cycles_are_the_four_shapes() {
        for r in 1..4 {
            let g = second_return(r);
            let inner: Vec<usize> = (0..=r).chain([0]).collect();
            let c = Path::through(&inner).unwrap();
            let outer: Vec<usize> = (0..=r).chain([r + 1, 0]).collect();
            let mut want = vec![Path::through(&outer).unwrap(), c.with_self_arrow_at(0).unwrap(), c.with_self_arrow_at(r + 1).unwrap()];
            want.extend((1..=r).map(|i| c.with_self_arrow_at(i).unwrap()));
            want.sort();
            let got = enumerate_paths(&g, 0, 0, r + 2, 2, None).unwrap();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn self_budget_limits_insertions() {
        let ps = enumerate_paths(&basic(), 0, 0, 4, 2, Some(0)).unwrap();
        assert!(ps.is_empty());
        let ps = enumerate_paths(&basic(), 0, 0, 4, 2, Some(2)).unwrap();
        assert_eq!(ps.len(), 6);
    }

    #[test]
    fn composition_is_checked() {
        assert!(Path::new(vec![Edge::new(0, 1), Edge::new(0, 1)]).is_err());
        let p = Path::through(&[0, 1]).unwrap().then(&Path::through(&[1, 0]).unwrap()).unwrap();
        assert_eq!(p.vertices(), vec![0, 1, 0]);
    }

    fn graph_strategy() -> impl Strategy<Value = DiagramGraph> {
        (1usize..=5).prop_flat_map(|v| {
            (
                proptest::collection::vec(0u8..3, v),
                proptest::collection::vec(any::<bool>(), v * v),
            )
                .prop_map(move |(sides, mask)| {
                    let sides = sides
                        .into_iter()
                        .map(|s| match s {
                            0 => Side::InPhi,
                            1 => Side::InPhiPerp,
                            _ => Side::Unassigned,
                        })
                        .collect();
                    let arrows: Vec<(usize, usize)> =
                        (0..v * v).filter(|&k| mask[k] && k / v != k % v).map(|k| (k / v, k % v)).collect();
                    DiagramGraph::new(sides, &arrows).unwrap()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn enumeration_matches_brute_force(
            g in graph_strategy(),
            a in 0usize..5,
            b in 0usize..5,
            l in 1usize..=6,
            m in 0usize..=6,
            budget in proptest::option::of(0usize..4),
        ) {
            let v = g.vertex_count();
            let (a, b) = (a % v, b % v);
            prop_assert_eq!(enumerate_paths(&g, a, b, l, m, budget).unwrap(), oracle(&g, a, b, l, m, budget));
        }
    }
}
