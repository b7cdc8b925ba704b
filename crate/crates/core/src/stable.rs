//! Comparison with the stable moduli spaces: boundary strata of the stable
//! locus, their WDVV relations, restriction of prestable classes to the
//! stable locus and ranks of pullbacks along forgetful charts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock};

use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::calculus::{
    forgetful_pullback_plain, normalize_stable, stabilization_pullback, CalculusError,
};
use crate::graph::{canonical_form, canonical_graph, PrestableGraph};
use crate::linalg::RowEchelon;
use crate::relations::wdvv_on_vertex;
use crate::strata::{
    enumerate_normal_form_basis, DecoratedStratum, Decoration, SubstackSpec, TautClass, Q,
};

type StableGraphCache = Mutex<HashMap<(usize, usize), Arc<Vec<PrestableGraph>>>>;

fn stable_graph_cache() -> &'static StableGraphCache {
    static CACHE: OnceLock<StableGraphCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Stable genus-0 trees with `n ≥ 3` markings and `p` edges, canonical
/// representatives sorted by code.
pub fn enumerate_stable_graphs(n: usize, p: usize) -> Arc<Vec<PrestableGraph>> {
    if let Some(v) = stable_graph_cache().lock().unwrap().get(&(n, p)) {
        return v.clone();
    }
    let result = if n < 3 {
        Vec::new()
    } else if p == 0 {
        vec![PrestableGraph::trivial(n)]
    } else {
        let prev = enumerate_stable_graphs(n, p - 1);
        let mut found: HashMap<Vec<u32>, PrestableGraph> = HashMap::new();
        for g in prev.iter() {
            for (v, hs) in g.adjacency().iter().enumerate() {
                let k = hs.len();
                if k < 4 {
                    continue;
                }
                for mask in 0u64..(1u64 << (k - 1)) {
                    let mut s1 = vec![hs[0]];
                    let mut s2 = Vec::new();
                    for (i, &h) in hs.iter().enumerate().skip(1) {
                        if mask >> (i - 1) & 1 == 1 {
                            s2.push(h);
                        } else {
                            s1.push(h);
                        }
                    }
                    if s1.len() < 2 || s2.len() < 2 {
                        continue;
                    }
                    let split = g.split_vertex(v, &s1, &s2).expect("valid split");
                    let (canon, cf) = canonical_graph(&split);
                    found.entry(cf.code).or_insert(canon);
                }
            }
        }
        let mut list: Vec<(Vec<u32>, PrestableGraph)> = found.into_iter().collect();
        list.sort();
        list.into_iter().map(|x| x.1).collect()
    };
    let arc = Arc::new(result);
    stable_graph_cache()
        .lock()
        .unwrap()
        .insert((n, p), arc.clone());
    arc
}

/// Boundary strata of codimension `d` on the stable locus with their WDVV
/// relations.
pub struct StableSystem {
    pub n: usize,
    pub d: u32,
    pub strata: Vec<PrestableGraph>,
    index: HashMap<DecoratedStratum, usize>,
    pub relations: Vec<Vec<(usize, Q)>>,
    relation_rank: OnceLock<usize>,
}

impl StableSystem {
    fn build(n: usize, d: u32) -> Self {
        let strata = enumerate_stable_graphs(n, d as usize).as_ref().clone();
        let index: HashMap<DecoratedStratum, usize> = strata
            .iter()
            .enumerate()
            .map(|(i, g)| (DecoratedStratum::plain(g.clone()), i))
            .collect();
        let mut sys = StableSystem {
            n,
            d,
            strata,
            index,
            relations: Vec::new(),
            relation_rank: OnceLock::new(),
        };
        if d == 0 {
            return sys;
        }
        let parents = enumerate_stable_graphs(n, d as usize - 1);
        let rows: Vec<Vec<Vec<(usize, Q)>>> = parents
            .par_iter()
            .map(|g| {
                let mut out = Vec::new();
                let alpha = Decoration::trivial(g);
                for (v, hs) in g.adjacency().iter().enumerate() {
                    if hs.len() < 4 {
                        continue;
                    }
                    for quad in four_subsets(hs) {
                        for order in [
                            [quad[0], quad[1], quad[2], quad[3]],
                            [quad[0], quad[1], quad[3], quad[2]],
                        ] {
                            let rel = wdvv_on_vertex(g, &alpha, v, order).expect("valid WDVV data");
                            let rel = rel.filter(|s| s.graph.is_stable());
                            let coords = sys.coordinates(&rel).expect("stable boundary strata");
                            if !coords.is_empty() {
                                let inv = coords[0].1.recip();
                                out.push(coords.into_iter().map(|(i, x)| (i, x * &inv)).collect());
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let mut seen = HashSet::new();
        for r in rows.into_iter().flatten() {
            if seen.insert(r.clone()) {
                sys.relations.push(r);
            }
        }
        sys
    }

    /// Coordinates of a class made of undecorated stable strata.
    #[allow(clippy::result_large_err)]
    pub fn coordinates(&self, c: &TautClass) -> Result<Vec<(usize, Q)>, DecoratedStratum> {
        let mut out: Vec<(usize, Q)> = Vec::with_capacity(c.len());
        for (s, x) in c.terms() {
            match self.index.get(s) {
                Some(&i) => out.push((i, x.clone())),
                None => return Err(s.clone()),
            }
        }
        out.sort_by_key(|e| e.0);
        Ok(out)
    }

    /// Row echelon form of the relations.
    pub fn echelon(&self) -> RowEchelon {
        let mut ech = RowEchelon::new();
        for r in &self.relations {
            ech.insert_rational(r);
        }
        ech
    }

    /// Rank of the codimension-`d` Chow group of the stable space.
    pub fn rank(&self) -> usize {
        self.strata.len() - *self.relation_rank.get_or_init(|| self.echelon().rank())
    }

    /// Rank of the span of `vectors` modulo the relations.
    pub fn rank_modulo_relations(&self, vectors: &[Vec<(usize, Q)>]) -> usize {
        let mut ech = self.echelon();
        vectors.iter().filter(|v| ech.insert_rational(v)).count()
    }

    /// Whether a class made of stable strata vanishes.
    #[allow(clippy::result_large_err)]
    pub fn is_zero(&self, c: &TautClass) -> Result<bool, DecoratedStratum> {
        let coords = self.coordinates(c)?;
        Ok(coords.is_empty() || self.echelon().reduces_to_zero_rational(&coords))
    }
}

fn four_subsets(hs: &[usize]) -> Vec<[usize; 4]> {
    let k = hs.len();
    let mut out = Vec::new();
    for c in 2..k {
        for d in c + 1..k {
            out.push([hs[0], hs[1], hs[c], hs[d]]);
        }
    }
    out
}

type SystemCache = Mutex<HashMap<(usize, u32), Arc<StableSystem>>>;

fn system_cache() -> &'static SystemCache {
    static CACHE: OnceLock<SystemCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached boundary strata and relations of codimension `d` on the stable
/// space with `n ≥ 3` markings.
pub fn stable_system(n: usize, d: u32) -> Arc<StableSystem> {
    if let Some(s) = system_cache().lock().unwrap().get(&(n, d)) {
        return s.clone();
    }
    let sys = Arc::new(StableSystem::build(n, d));
    system_cache().lock().unwrap().insert((n, d), sys.clone());
    sys
}

/// Restriction of a prestable class to the stable locus, as boundary strata.
pub fn restrict_to_stable(c: &TautClass) -> TautClass {
    normalize_stable(c)
}

/// Pullback along the chart forgetting the last `m` markings without
/// stabilizing, restricted to stable graphs.
pub fn forgetful_chart_pullback(c: &TautClass, m: usize) -> Result<TautClass, CalculusError> {
    let mut cur = c.clone();
    for _ in 0..m {
        cur = forgetful_pullback_plain(&cur)?;
    }
    Ok(cur.filter(|s| s.graph.is_stable()))
}

/// Image of a prestable class on the stable space with `n + m` markings.
pub fn chart_image(c: &TautClass, m: usize) -> Result<TautClass, CalculusError> {
    Ok(restrict_to_stable(&forgetful_chart_pullback(c, m)?))
}

/// Orbit key of a stratum under permutations of the markings after the
/// first `fixed`: those legs are dropped and counted per vertex.
fn orbit_key(g: &PrestableGraph, fixed: usize) -> Vec<u32> {
    let mut h = g.clone();
    let mut free = vec![0u32; g.num_vertices()];
    for label in (fixed + 1..=g.num_legs()).rev() {
        free[h.vertex_of(h.leg(label))] += 1;
        h = h.remove_leg(label).0;
    }
    let vcolor: Vec<Vec<u32>> = (0..h.num_vertices())
        .map(|v| vec![h.genus(v), free[v]])
        .collect();
    canonical_form(&h, &vcolor, &vec![0; h.num_half_edges()]).code
}

/// Orbit index of every stratum of `sys` under permutations of the markings
/// after the first `fixed`, and the number of orbits.
pub fn marking_orbits(sys: &StableSystem, fixed: usize) -> (Vec<usize>, usize) {
    let keys: Vec<Vec<u32>> = sys.strata.par_iter().map(|g| orbit_key(g, fixed)).collect();
    let mut ids: HashMap<Vec<u32>, usize> = HashMap::new();
    let orbit = keys
        .into_iter()
        .map(|k| {
            let next = ids.len();
            *ids.entry(k).or_insert(next)
        })
        .collect();
    (orbit, ids.len())
}

fn project(v: &[(usize, Q)], orbit: &[usize]) -> Vec<(usize, Q)> {
    let mut acc: BTreeMap<usize, Q> = BTreeMap::new();
    for (i, x) in v {
        *acc.entry(orbit[*i]).or_insert_with(Q::zero) += x;
    }
    acc.into_iter().filter(|e| !e.1.is_zero()).collect()
}

/// Rank modulo the relations of vectors whose classes are invariant under
/// permutations of the markings after the first `fixed`.
///
/// Invariant classes embed into the coinvariants, so the rank is computed
/// on orbit sums of strata and relations.
pub fn invariant_rank_modulo_relations(
    sys: &StableSystem,
    fixed: usize,
    vectors: &[Vec<(usize, Q)>],
) -> usize {
    let (orbit, _) = marking_orbits(sys, fixed);
    let rows: Vec<Vec<(usize, Q)>> = sys
        .relations
        .par_iter()
        .map(|r| {
            let p = project(r, &orbit);
            match p.first() {
                Some(e) => {
                    let inv = e.1.recip();
                    p.into_iter().map(|(i, x)| (i, x * &inv)).collect()
                }
                None => p,
            }
        })
        .collect();
    let mut ech = RowEchelon::new();
    let mut seen = HashSet::new();
    for r in rows {
        if !r.is_empty() && seen.insert(r.clone()) {
            ech.insert_rational(&r);
        }
    }
    vectors
        .iter()
        .filter(|v| ech.insert_rational(&project(v, &orbit)))
        .count()
}

/// A stable system together with coordinate vectors in it.
pub type ChartImages = (Arc<StableSystem>, Vec<Vec<(usize, Q)>>);

/// Images of the normal-form basis of codimension `d` with `n` markings on
/// the stable space with `n + m` markings, in the coordinates of its
/// boundary strata.
pub fn chart_images(n: usize, d: u32, m: usize) -> Result<ChartImages, CalculusError> {
    let big = n + m;
    if big < 3 {
        return Err(CalculusError::BadMarking(big));
    }
    let sys = stable_system(big, d);
    if d as usize > big - 3 {
        return Ok((sys, Vec::new()));
    }
    let basis = enumerate_normal_form_basis(n, d, &SubstackSpec::All)?;
    let images: Vec<Vec<(usize, Q)>> = basis
        .elements
        .par_iter()
        .map(|el| -> Result<Vec<(usize, Q)>, CalculusError> {
            let img = chart_image(&el.class, m)?;
            sys.coordinates(&img)
                .map_err(|s| CalculusError::NotStable(s.to_string()))
        })
        .collect::<Result<_, _>>()?;
    Ok((sys, images))
}

/// Rank of the image of the codimension-`d` Chow group with `n` markings in
/// the Chow group of the stable space with `n + m` markings.
pub fn image_rank(n: usize, d: u32, m: usize) -> Result<usize, CalculusError> {
    let (sys, images) = chart_images(n, d, m)?;
    if images.is_empty() {
        return Ok(0);
    }
    Ok(invariant_rank_modulo_relations(&sys, n, &images))
}

/// Same rank computed against the full relation space, without the
/// symmetry reduction.
pub fn image_rank_unreduced(n: usize, d: u32, m: usize) -> Result<usize, CalculusError> {
    let (sys, images) = chart_images(n, d, m)?;
    Ok(sys.rank_modulo_relations(&images))
}

/// Pullback of `κ₁` to the stable space with `n + m` markings along the
/// stabilizing forgetful map: `κ₁ − Σ ψ_i + Σ D_{0,I}` over new markings
/// `i` and subsets `I` of at least two new markings.
pub fn classical_kappa_one_pullback(n: usize, m: usize) -> TautClass {
    let big = n + m;
    let mut c = TautClass::zero(big);
    let mut k = Decoration::trivial(&PrestableGraph::trivial(big));
    k.kappa[0] = vec![1];
    c.add_term(
        DecoratedStratum::new(PrestableGraph::trivial(big), k),
        Q::one(),
    );
    for i in n + 1..=big {
        let mut d = Decoration::trivial(&PrestableGraph::trivial(big));
        d.psi[i - 1] = 1;
        c.add_term(
            DecoratedStratum::new(PrestableGraph::trivial(big), d),
            -Q::one(),
        );
    }
    for mask in 0u64..(1u64 << m) {
        if mask.count_ones() < 2 {
            continue;
        }
        let side: Vec<usize> = (0..m)
            .filter(|t| mask >> t & 1 == 1)
            .map(|t| n + 1 + t)
            .collect();
        c.add_term(
            DecoratedStratum::plain(crate::calculus::two_vertex_graph(big, &side)),
            Q::one(),
        );
    }
    c
}

/// Both routes to the pullback of `κ₁` from `n ≥ 3` to `n + m` markings:
/// through the stabilization pullback on the prestable stack and the chart,
/// and through the classical formula on the stable space. Returns whether
/// they agree modulo relations.
pub fn kappa_one_routes_agree(n: usize, m: usize) -> Result<bool, CalculusError> {
    let mut k1 = Decoration::trivial(&PrestableGraph::trivial(n));
    k1.kappa[0] = vec![1];
    let st = stabilization_pullback(&TautClass::from_stratum(DecoratedStratum::new(
        PrestableGraph::trivial(n),
        k1,
    )))?;
    let route1 = chart_image(&st, m)?;
    let route2 = restrict_to_stable(&classical_kappa_one_pullback(n, m));
    let diff = route1.sub(&route2);
    let sys = stable_system(n + m, 1);
    sys.is_zero(&diff)
        .map_err(|s| CalculusError::NotStable(s.to_string()))
}

/// Whether restricting the stabilization pullback of a stable class gives
/// back the class, modulo relations.
pub fn restriction_inverts_stabilization(c: &TautClass) -> Result<bool, CalculusError> {
    let d = c.degree().unwrap_or(0);
    let back = restrict_to_stable(&stabilization_pullback(c)?);
    let direct = restrict_to_stable(c);
    let sys = stable_system(c.n(), d);
    sys.is_zero(&back.sub(&direct))
        .map_err(|s| CalculusError::NotStable(s.to_string()))
}
