//! WDVV relations glued into vertices of normal-form strata, relation
//! matrices over the normal-form basis, ranks and class membership.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{enumerate_graphs, GraphError, PrestableGraph};
use crate::linalg::{RowEchelon, SparseRationalMatrix};
use crate::strata::{
    assignments, normal_form_basis_unchecked, normal_form_monomials, DecoratedStratum, Decoration,
    NormalFormBasis, StrataError, SubstackSpec, TautClass, Q,
};

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("vertex {v} has {valence} half-edges, at least 4 are needed")]
    ValenceTooSmall { v: usize, valence: usize },
    #[error("the four half-edges must be distinct half-edges at the vertex")]
    BadHalfEdges,
    #[error("decoration at the vertex must be trivial")]
    DecoratedVertex,
    #[error("class is not of pure codimension")]
    MixedDegree,
    #[error("term {0} is not in normal form after rewriting")]
    NotNormalForm(String),
    #[error(transparent)]
    Strata(#[from] StrataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Sparse coordinates of a relation over a normal-form basis.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RelationVector {
    pub coords: Vec<(usize, Q)>,
}

/// The relation `Σ [split with h1,h2 | h3,h4] − Σ [split with h1,h3 | h2,h4]`
/// at vertex `v`, summed over the ways to distribute the other half-edges.
pub fn wdvv_on_vertex(
    g: &PrestableGraph,
    alpha: &Decoration,
    v: usize,
    hs: [usize; 4],
) -> Result<TautClass, RelationError> {
    let at_v = g.half_edges_at(v);
    if at_v.len() < 4 {
        return Err(RelationError::ValenceTooSmall {
            v,
            valence: at_v.len(),
        });
    }
    let distinct: HashSet<usize> = hs.iter().copied().collect();
    if distinct.len() != 4 || !hs.iter().all(|h| at_v.contains(h)) {
        return Err(RelationError::BadHalfEdges);
    }
    if !alpha.kappa[v].is_empty() || at_v.iter().any(|&h| alpha.psi[h] > 0) {
        return Err(RelationError::DecoratedVertex);
    }
    let others: Vec<usize> = at_v.iter().copied().filter(|h| !hs.contains(h)).collect();
    let mut out = TautClass::zero(g.num_legs());
    let mut d = alpha.clone();
    d.psi.extend([0, 0]);
    d.kappa.push(Vec::new());
    for mask in 0u64..(1 << others.len()) {
        let (mut a, mut b): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
        for (i, &h) in others.iter().enumerate() {
            if mask >> i & 1 == 1 {
                a.push(h);
            } else {
                b.push(h);
            }
        }
        for (pair1, pair2, sign) in [
            ([hs[0], hs[1]], [hs[2], hs[3]], 1),
            ([hs[0], hs[2]], [hs[1], hs[3]], -1),
        ] {
            let s1: Vec<usize> = pair1.iter().chain(&a).copied().collect();
            let s2: Vec<usize> = pair2.iter().chain(&b).copied().collect();
            let split = g.split_vertex(v, &s1, &s2)?;
            out.add_term(
                DecoratedStratum::new(split, d.clone()),
                crate::strata::q(sign),
            );
        }
    }
    Ok(out)
}

/// Basis and deduplicated relation rows, grouped by block.
pub struct RelationSystem {
    pub basis: NormalFormBasis,
    pub relations: Vec<RelationVector>,
}

impl RelationSystem {
    /// Relation rows and basis columns per block.
    fn blocks(&self) -> BTreeMap<&[u32], (Vec<usize>, Vec<usize>)> {
        let mut blocks: BTreeMap<&[u32], (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for (i, el) in self.basis.elements.iter().enumerate() {
            blocks.entry(&el.block).or_default().0.push(i);
        }
        for (r, rel) in self.relations.iter().enumerate() {
            let b = &self.basis.elements[rel.coords[0].0].block;
            blocks
                .get_mut(b.as_slice())
                .expect("block of a basis element")
                .1
                .push(r);
        }
        blocks
    }

    pub fn rank(&self) -> usize {
        let blocks = self.blocks();
        let parts: Vec<(usize, usize)> = blocks
            .par_iter()
            .map(|(_, (cols, rows))| {
                let mut ech = RowEchelon::new();
                let mut order = rows.clone();
                order.sort_by_key(|&r| self.relations[r].coords.len());
                for r in order {
                    ech.insert_rational(&self.relations[r].coords);
                    if ech.rank() == cols.len() {
                        break;
                    }
                }
                (cols.len(), ech.rank())
            })
            .collect();
        parts.iter().map(|(c, r)| c - r).sum()
    }

    pub fn matrix(&self) -> SparseRationalMatrix {
        SparseRationalMatrix::from_rows(
            self.basis.len(),
            self.relations.iter().map(|r| r.coords.clone()).collect(),
        )
        .expect("relation coordinates are in range")
    }

    /// Whether the coordinate vector is a combination of relations.
    pub fn in_span(&self, coords: &[(usize, Q)]) -> bool {
        if coords.is_empty() {
            return true;
        }
        let blocks: HashSet<&[u32]> = coords
            .iter()
            .map(|(i, _)| self.basis.elements[*i].block.as_slice())
            .collect();
        let mut ech = RowEchelon::new();
        for rel in &self.relations {
            if blocks.contains(self.basis.elements[rel.coords[0].0].block.as_slice()) {
                ech.insert_rational(&rel.coords);
            }
        }
        ech.reduces_to_zero_rational(coords)
    }
}

/// Normalizes a relation row: scale so the first coefficient is 1.
fn normalized(mut coords: Vec<(usize, Q)>) -> Vec<(usize, Q)> {
    if let Some((_, x)) = coords.first() {
        let inv = x.recip();
        for (_, y) in coords.iter_mut() {
            *y *= &inv;
        }
    }
    coords
}

/// All WDVV relations of codimension `d`, as deduplicated coordinate
/// vectors over `basis`. Terms on graphs outside `spec` are dropped.
pub fn enumerate_wdvv_relations(
    n: usize,
    d: u32,
    spec: &SubstackSpec,
    basis: &NormalFormBasis,
) -> Result<Vec<RelationVector>, RelationError> {
    if basis.n != n || basis.d != d {
        return Err(StrataError::AmbientMismatch {
            expected: n,
            found: basis.n,
        }
        .into());
    }
    let mut jobs: Vec<(PrestableGraph, Vec<u32>)> = Vec::new();
    for p in 1..=d as usize {
        for g in enumerate_graphs(n, p - 1).iter() {
            if !spec.allows(g) || (0..g.num_vertices()).all(|v| g.valence(v) < 4) {
                continue;
            }
            for a in assignments(g, d - p as u32) {
                jobs.push((g.clone(), a));
            }
        }
    }
    let rows: Vec<Vec<Vec<(usize, Q)>>> = jobs
        .par_iter()
        .map(|(g, a)| -> Result<Vec<Vec<(usize, Q)>>, RelationError> {
            let monos = normal_form_monomials(g, a);
            let mut out = Vec::new();
            for (v, hs) in g.adjacency().iter().enumerate() {
                if hs.len() < 4 {
                    continue;
                }
                for quad in four_subsets(hs) {
                    for order in [
                        [quad[0], quad[1], quad[2], quad[3]],
                        [quad[0], quad[1], quad[3], quad[2]],
                    ] {
                        let mut rel = TautClass::zero(n);
                        for (m, c) in &monos {
                            let r = wdvv_on_vertex(g, m, v, order)?;
                            rel.add_scaled(&r, &crate::strata::q(*c));
                        }
                        let rel = rel.filter(|s| spec.allows(&s.graph));
                        let coords = basis
                            .coordinates(&rel)
                            .map_err(|s| RelationError::NotNormalForm(s.to_string()))?;
                        if !coords.is_empty() {
                            out.push(normalized(coords));
                        }
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in rows.into_iter().flatten() {
        if seen.insert(r.clone()) {
            out.push(RelationVector { coords: r });
        }
    }
    Ok(out)
}

fn four_subsets(hs: &[usize]) -> Vec<[usize; 4]> {
    let k = hs.len();
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            for c in b + 1..k {
                for d in c + 1..k {
                    out.push([hs[a], hs[b], hs[c], hs[d]]);
                }
            }
        }
    }
    out
}

type SystemCache = Mutex<HashMap<(usize, u32, String), Arc<RelationSystem>>>;

fn system_cache() -> &'static SystemCache {
    static CACHE: OnceLock<SystemCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Basis and relations for codimension `d`, cached for built-in specs.
pub fn relation_system(
    n: usize,
    d: u32,
    spec: &SubstackSpec,
) -> Result<Arc<RelationSystem>, RelationError> {
    let cacheable = !matches!(spec, SubstackSpec::Custom(_));
    let key = (n, d, spec.name());
    if cacheable {
        if let Some(s) = system_cache().lock().unwrap().get(&key) {
            return Ok(s.clone());
        }
    }
    spec.validate(n, d as usize)?;
    let basis = normal_form_basis_unchecked(n, d, spec);
    let relations = enumerate_wdvv_relations(n, d, spec, &basis)?;
    let sys = Arc::new(RelationSystem { basis, relations });
    if cacheable {
        system_cache().lock().unwrap().insert(key, sys.clone());
    }
    Ok(sys)
}

/// Rank of the codimension-`d` Chow group of the open substack `spec`.
pub fn chow_rank(n: usize, d: u32, spec: &SubstackSpec) -> Result<usize, StrataError> {
    match relation_system(n, d, spec) {
        Ok(s) => Ok(s.rank()),
        Err(RelationError::Strata(e)) => Err(e),
        Err(e) => panic!("relation enumeration failed: {e}"),
    }
}

/// Whether a pure-codimension class vanishes in the Chow group of `spec`.
pub fn is_zero(c: &TautClass, spec: &SubstackSpec) -> Result<bool, RelationError> {
    if c.is_empty() {
        return Ok(true);
    }
    let d = c.degree().ok_or(RelationError::MixedDegree)?;
    let nf = crate::calculus::normalize(c).filter(|s| spec.allows(&s.graph));
    if nf.is_empty() {
        return Ok(true);
    }
    let sys = relation_system(c.n(), d, spec)?;
    let coords = sys
        .basis
        .coordinates(&nf)
        .map_err(|s| RelationError::NotNormalForm(s.to_string()))?;
    Ok(sys.in_span(&coords))
}

/// Coordinates of a pure class over the normal-form basis after rewriting.
pub fn normal_form_coordinates(
    c: &TautClass,
    spec: &SubstackSpec,
) -> Result<Vec<(usize, Q)>, RelationError> {
    let d = c.degree().ok_or(RelationError::MixedDegree)?;
    let nf = crate::calculus::normalize(c).filter(|s| spec.allows(&s.graph));
    let sys = relation_system(c.n(), d, spec)?;
    sys.basis
        .coordinates(&nf)
        .map_err(|s| RelationError::NotNormalForm(s.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::build;
    use crate::strata::q;
    use num_traits::One;

    fn d_split(n: usize, left: &[usize]) -> DecoratedStratum {
        let legs: Vec<usize> = (1..=n)
            .map(|i| if left.contains(&i) { 0 } else { 1 })
            .collect();
        DecoratedStratum::plain(build(2, &[(0, 1)], &legs))
    }

    #[test]
    fn wdvv_examples() {
        let t = PrestableGraph::trivial(4);
        let r = wdvv_on_vertex(&t, &Decoration::trivial(&t), 0, [0, 1, 2, 3]).unwrap();
        let mut expect = TautClass::zero(4);
        expect.add_term(d_split(4, &[1, 2]), q(1));
        expect.add_term(d_split(4, &[1, 3]), q(-1));
        assert_eq!(r, expect);

        let t5 = PrestableGraph::trivial(5);
        let r = wdvv_on_vertex(&t5, &Decoration::trivial(&t5), 0, [0, 1, 2, 3]).unwrap();
        // leg 5 goes to either side of each split
        let mut expect = TautClass::zero(5);
        expect.add_term(d_split(5, &[1, 2]), q(1));
        expect.add_term(d_split(5, &[1, 2, 5]), q(1));
        expect.add_term(d_split(5, &[1, 3]), q(-1));
        expect.add_term(d_split(5, &[1, 3, 5]), q(-1));
        assert_eq!(r, expect);
    }

    #[test]
    fn wdvv_glued_into_decorated_vertex() {
        // one-edge graph: w{1,2} with κ₃ joined to v{3,4,5}; relation at v with (h,3,4,5)
        let g = build(2, &[(0, 1)], &[0, 0, 1, 1, 1]);
        let mut alpha = Decoration::trivial(&g);
        alpha.kappa[0] = vec![3];
        let h = 6; // half-edge of the edge at v
        assert_eq!(g.vertex_of(h), 1);
        let r = wdvv_on_vertex(&g, &alpha, 1, [h, g.leg(3), g.leg(4), g.leg(5)]).unwrap();
        // expected: chain w{1,2;κ₃} – B{3} – C{4,5} minus chain w{1,2;κ₃} – B{4} – C{3,5}
        let chain = |b_leg: usize, c_legs: [usize; 2]| {
            let mut legs = vec![0, 0, 0, 0, 0];
            legs[b_leg - 1] = 1;
            for l in c_legs {
                legs[l - 1] = 2;
            }
            let gr = build(3, &[(0, 1), (1, 2)], &legs);
            let mut d = Decoration::trivial(&gr);
            d.kappa[0] = vec![3];
            DecoratedStratum::new(gr, d)
        };
        let mut expect = TautClass::zero(5);
        expect.add_term(chain(3, [4, 5]), q(1));
        expect.add_term(chain(4, [3, 5]), q(-1));
        assert_eq!(r, expect);
        assert!(wdvv_on_vertex(&g, &alpha, 0, [0, 1, 2, 3]).is_err());
    }

    #[test]
    fn relation_examples() {
        let sys = relation_system(4, 1, &SubstackSpec::All).unwrap();
        assert_eq!(sys.basis.len(), 8);
        assert_eq!(sys.matrix().rank(), 2);
        for d in 0..=4 {
            let sys = relation_system(0, d, &SubstackSpec::All).unwrap();
            assert!(sys.relations.is_empty());
        }
        for d in 0..=6 {
            let sys = relation_system(0, d, &SubstackSpec::MaxEdges(3)).unwrap();
            assert!(sys.relations.is_empty());
        }
    }

    #[test]
    fn small_ranks() {
        let expect = [
            (0, 1, 1),
            (0, 2, 3),
            (0, 3, 5),
            (1, 1, 2),
            (2, 1, 3),
            (3, 1, 4),
            (4, 1, 6),
            (4, 2, 33),
            (5, 1, 11),
        ];
        for (n, d, r) in expect {
            assert_eq!(
                chow_rank(n, d, &SubstackSpec::All).unwrap(),
                r,
                "n={n} d={d}"
            );
        }
        for n in 0..5 {
            assert_eq!(chow_rank(n, 0, &SubstackSpec::All).unwrap(), 1);
        }
    }

    #[test]
    fn blockwise_rank_matches_full_rank() {
        for (n, d) in [(4, 2), (2, 3), (5, 1)] {
            let sys = relation_system(n, d, &SubstackSpec::All).unwrap();
            assert_eq!(sys.rank(), sys.basis.len() - sys.matrix().rank());
        }
    }

    #[test]
    fn monotone_in_edge_bound() {
        for (n, d) in [(2, 2), (3, 2), (1, 3)] {
            let full = chow_rank(n, d, &SubstackSpec::All).unwrap();
            let mut prev = 0;
            for e in 0..=d as usize + 1 {
                let r = chow_rank(n, d, &SubstackSpec::MaxEdges(e)).unwrap();
                assert!(r >= prev);
                prev = r;
                if e >= d as usize {
                    assert_eq!(r, full);
                }
            }
        }
    }

    #[test]
    fn wdvv_classes_are_zero() {
        let t = PrestableGraph::trivial(4);
        for order in [[0, 1, 2, 3], [0, 1, 3, 2]] {
            let r = wdvv_on_vertex(&t, &Decoration::trivial(&t), 0, order).unwrap();
            assert!(is_zero(&r, &SubstackSpec::All).unwrap());
        }
        let g1 = DecoratedStratum::plain(build(2, &[(0, 1)], &[]));
        assert!(!is_zero(&TautClass::from_stratum(g1), &SubstackSpec::All).unwrap());
    }

    #[test]
    fn unstable_divisors_independent() {
        for n in 0..=5usize {
            let sys = relation_system(n, 1, &SubstackSpec::All).unwrap();
            let unstable: Vec<usize> = sys
                .basis
                .elements
                .iter()
                .enumerate()
                .filter(|(_, el)| el.graph.num_edges() == 1 && !el.graph.is_stable())
                .map(|(i, _)| i)
                .collect();
            // empty side, or a single marking on one side
            let expected = match n {
                0 | 1 => 1,
                2 => 2,
                _ => n + 1,
            };
            assert_eq!(unstable.len(), expected);
            // no nontrivial combination of them is a relation
            let mut ech = RowEchelon::new();
            for r in &sys.relations {
                ech.insert_rational(&r.coords);
            }
            for &i in &unstable {
                assert!(!ech.reduces_to_zero_rational(&[(i, Q::one())]));
            }
            for rel in &sys.relations {
                assert!(rel.coords.iter().all(|(i, _)| !unstable.contains(i)));
            }
        }
    }
}
