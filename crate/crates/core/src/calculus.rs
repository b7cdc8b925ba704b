//! Intersection calculus on decorated strata: gluing pushforward, products
//! via generic structures, forgetful pullback and pushforward along the
//! universal curve, rewriting into normal form and pullback along
//! stabilization.
//!
//! Classes on the universal curve over `n` markings live on `n + 1`
//! markings. Strata flagged `ghost` have the last leg on a contracted
//! trivalent bubble (see [`DecoratedStratum::ghost`]).

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{
    canonical_form, enumerate_graphs, isomorphisms, plain_colors, GraphError, PrestableGraph,
};
use crate::strata::{q, DecoratedStratum, Decoration, StrataError, TautClass, Q};

#[derive(Debug, Error)]
pub enum CalculusError {
    #[error("classes live on {left} and {right} markings")]
    AmbientMismatch { left: usize, right: usize },
    #[error("vertex {vertex} has {valence} half-edges but its class has {markings} markings")]
    VertexArity {
        vertex: usize,
        valence: usize,
        markings: usize,
    },
    #[error("expected one class per vertex ({expected}), got {found}")]
    ClassCount { expected: usize, found: usize },
    #[error("marking {0} out of range")]
    BadMarking(usize),
    #[error("stratum is not stable: {0}")]
    NotStable(String),
    #[error("ghost term not allowed here: {0}")]
    Ghost(String),
    #[error("no markings to forget")]
    NoMarkings,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Strata(#[from] StrataError),
}

/// Polynomial in the decoration monomials of one fixed graph.
pub(crate) type Poly = Vec<(Decoration, Q)>;

fn mono_mul(a: &Decoration, b: &Decoration) -> Decoration {
    Decoration {
        psi: a.psi.iter().zip(&b.psi).map(|(x, y)| x + y).collect(),
        kappa: a
            .kappa
            .iter()
            .zip(&b.kappa)
            .map(|(x, y)| {
                let mut z = x.clone();
                z.extend_from_slice(y);
                z.sort_unstable();
                z
            })
            .collect(),
    }
}

fn collect_poly(items: impl IntoIterator<Item = (Decoration, Q)>) -> Poly {
    let mut m: HashMap<Decoration, Q> = HashMap::new();
    for (d, c) in items {
        *m.entry(d).or_insert_with(Q::zero) += c;
    }
    m.into_iter().filter(|(_, c)| !c.is_zero()).collect()
}

pub(crate) fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    collect_poly(
        a.iter()
            .flat_map(|(x, c)| b.iter().map(move |(y, e)| (mono_mul(x, y), c * e))),
    )
}

/// Multiplies by `Σ_{w ∈ ws} κ_c(w)`.
fn times_kappa_sum(p: &Poly, c: u32, ws: &[usize]) -> Poly {
    collect_poly(p.iter().flat_map(|(d, x)| {
        ws.iter().map(move |&w| {
            let mut e = d.clone();
            e.kappa[w].push(c);
            e.kappa[w].sort_unstable();
            (e, x.clone())
        })
    }))
}

fn factorial(k: u32) -> BigInt {
    (1..=k).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

fn binomial(n: u32, k: u32) -> BigInt {
    factorial(n) / (factorial(k) * factorial(n - k))
}

fn sign(k: usize) -> Q {
    if k.is_multiple_of(2) {
        Q::one()
    } else {
        -Q::one()
    }
}

pub(crate) fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(
        items: &[usize],
        k: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Vectors of length `len` with entries summing to `total`; `fixed_zero`
/// is forced to 0.
fn compositions(len: usize, total: usize, fixed_zero: Option<usize>) -> Vec<Vec<usize>> {
    fn rec(
        i: usize,
        left: usize,
        cur: &mut Vec<usize>,
        fz: Option<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if i == cur.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let hi = if fz == Some(i) { 0 } else { left };
        for x in 0..=hi {
            cur[i] = x;
            rec(i + 1, left - x, cur, fz, out);
        }
        cur[i] = 0;
    }
    let mut out = Vec::new();
    rec(0, total, &mut vec![0; len], fixed_zero, &mut out);
    out
}

/// Splits a κ multiset into (chosen, rest) for every index subset.
fn kappa_subsets(j: &[u32]) -> Vec<(Vec<u32>, Vec<u32>)> {
    (0u64..(1u64 << j.len()))
        .map(|mask| {
            let mut s = Vec::new();
            let mut r = Vec::new();
            for (i, &c) in j.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    s.push(c);
                } else {
                    r.push(c);
                }
            }
            (s, r)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// gluing

/// ψ exponents of the half-edges at `v` (ascending) and the κ multiset at `v`.
pub(crate) fn local_at(s: &DecoratedStratum, v: usize, hv: &[usize]) -> (Vec<u32>, Vec<u32>) {
    (
        hv.iter().map(|&h| s.decoration.psi[h]).collect(),
        s.decoration.kappa[v].clone(),
    )
}

/// Monomial on the one-vertex graph with `psi.len()` legs.
pub(crate) fn local_stratum(psi: &[u32], kappa: &[u32]) -> DecoratedStratum {
    let g = PrestableGraph::trivial(psi.len());
    let mut k = kappa.to_vec();
    k.sort_unstable();
    DecoratedStratum::new(
        g,
        Decoration {
            psi: psi.to_vec(),
            kappa: vec![k],
        },
    )
}

/// Replaces the decoration at `v` by the local class `local`, whose marking
/// `i` is the `i`-th half-edge at `v`.
pub(crate) fn substitute_raw(
    s: &DecoratedStratum,
    v: usize,
    local: &TautClass,
) -> Vec<(DecoratedStratum, Q)> {
    let hv = s.graph.half_edges_at(v);
    let mut out = Vec::with_capacity(local.len());
    for (t, c) in local.terms() {
        let (g, ins) = s
            .graph
            .insert_graph_at_vertex(v, &t.graph, &hv)
            .expect("local class matches vertex");
        let mut psi = s.decoration.psi.clone();
        psi.resize(g.num_half_edges(), 0);
        let mut kappa = s.decoration.kappa.clone();
        kappa.resize(g.num_vertices(), Vec::new());
        for (x, &y) in ins.half_edge_map.iter().enumerate() {
            psi[y] = t.decoration.psi[x];
        }
        for (u, &w) in ins.vertex_map.iter().enumerate() {
            kappa[w] = t.decoration.kappa[u].clone();
        }
        out.push((
            DecoratedStratum {
                graph: g,
                decoration: Decoration { psi, kappa },
                ghost: s.ghost,
            },
            c.clone(),
        ));
    }
    out
}

fn class_from_raw(n: usize, raw: impl IntoIterator<Item = (DecoratedStratum, Q)>) -> TautClass {
    let mut c = TautClass::zero(n);
    for (s, x) in raw {
        c.add_term(s, x);
    }
    c
}

/// Pushforward along the gluing map of `outer`: vertex `v` receives
/// `classes[v]`, whose markings are the half-edges at `v` in ascending order.
pub fn gluing_pushforward(
    outer: &PrestableGraph,
    classes: &[TautClass],
) -> Result<TautClass, CalculusError> {
    outer.validate().map_err(GraphError::from)?;
    if classes.len() != outer.num_vertices() {
        return Err(CalculusError::ClassCount {
            expected: outer.num_vertices(),
            found: classes.len(),
        });
    }
    for (v, c) in classes.iter().enumerate() {
        if c.n() != outer.valence(v) {
            return Err(CalculusError::VertexArity {
                vertex: v,
                valence: outer.valence(v),
                markings: c.n(),
            });
        }
        if let Some((s, _)) = c.terms().find(|(s, _)| s.ghost) {
            return Err(CalculusError::Ghost(s.to_string()));
        }
    }
    let mut raw = vec![(DecoratedStratum::plain(outer.clone()), Q::one())];
    for (v, c) in classes.iter().enumerate() {
        raw = raw
            .iter()
            .flat_map(|(s, x)| {
                substitute_raw(s, v, c)
                    .into_iter()
                    .map(move |(t, y)| (t, y * x))
            })
            .collect();
    }
    Ok(class_from_raw(outer.num_legs(), raw))
}

// ---------------------------------------------------------------------------
// products

/// A generic (A, B)-structure: a graph Γ with contractions onto A and B such
/// that every edge of Γ survives in A or in B.
#[derive(Clone, Debug)]
pub struct GenericStructure {
    pub graph: PrestableGraph,
    /// Half-edge of Γ for each half-edge of A.
    pub a_half_edges: Vec<usize>,
    /// Vertices of Γ contracted onto each vertex of A.
    pub a_vertices: Vec<Vec<usize>>,
    pub b_half_edges: Vec<usize>,
    pub b_vertices: Vec<Vec<usize>>,
    /// Edges of Γ kept in both A and B.
    pub shared_edges: Vec<(usize, usize)>,
}

type StructureKey = (PrestableGraph, bool, PrestableGraph, bool);
type StructureCache = Mutex<HashMap<StructureKey, Arc<Vec<GenericStructure>>>>;

fn structure_cache() -> &'static StructureCache {
    static CACHE: OnceLock<StructureCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// One representative per isomorphism class of generic (A, B)-structures.
pub fn generic_structures(
    a: &PrestableGraph,
    b: &PrestableGraph,
) -> Result<Vec<GenericStructure>, CalculusError> {
    if a.num_legs() != b.num_legs() {
        return Err(CalculusError::AmbientMismatch {
            left: a.num_legs(),
            right: b.num_legs(),
        });
    }
    a.validate().map_err(GraphError::from)?;
    b.validate().map_err(GraphError::from)?;
    Ok(structures(a, false, b, false).as_ref().clone())
}

/// Structures with A's ghost vertex (if any) left unexpanded.
fn structures(
    a: &PrestableGraph,
    ga: bool,
    b: &PrestableGraph,
    gb: bool,
) -> Arc<Vec<GenericStructure>> {
    let key = (a.clone(), ga, b.clone(), gb);
    if let Some(v) = structure_cache().lock().unwrap().get(&key) {
        return v.clone();
    }
    let n = a.num_legs();
    let ea = a.num_edges();
    let eb = b.num_edges();
    let adj = a.adjacency();
    let nv = a.num_vertices();
    let a_ghost = if ga {
        Some(a.vertex_of(a.leg(n)))
    } else {
        None
    };
    let a_edges: Vec<usize> = a.edges().iter().map(|e| e.0).collect();
    let (bvc, bhc) = plain_colors(b);
    let ha = a.num_half_edges();
    let hb = b.num_half_edges() as u32;
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut out = Vec::new();

    for s in eb.saturating_sub(ea)..=eb {
        let t = ea + s - eb;
        for evec in compositions(nv, s, a_ghost) {
            let choices: Vec<Arc<Vec<PrestableGraph>>> = (0..nv)
                .map(|v| enumerate_graphs(adj[v].len(), evec[v]))
                .collect();
            if choices.iter().any(|c| c.is_empty()) {
                continue;
            }
            let mut idx = vec![0usize; nv];
            loop {
                let mut g = a.clone();
                let mut pre: Vec<Vec<usize>> = (0..nv).map(|v| vec![v]).collect();
                for v in 0..nv {
                    if evec[v] == 0 {
                        continue;
                    }
                    let (g2, ins) = g
                        .insert_graph_at_vertex(v, &choices[v][idx[v]], &adj[v])
                        .expect("local graph fits vertex");
                    pre[v] = ins.vertex_map;
                    g = g2;
                }
                for tset in combinations(&a_edges, t) {
                    let (qg, con) = g.contract_edges(&tset).expect("edges of A survive in Γ");
                    let (qvc, qhc) = plain_colors(&qg);
                    for phi in isomorphisms(&qg, (&qvc, &qhc), b, (&bvc, &bhc)) {
                        let mut b_he = vec![usize::MAX; b.num_half_edges()];
                        for hg in 0..g.num_half_edges() {
                            if let Some(hq) = con.half_edge_map[hg] {
                                b_he[phi[hq]] = hg;
                            }
                        }
                        let mut qv_to_b = vec![0usize; qg.num_vertices()];
                        for hq in 0..qg.num_half_edges() {
                            qv_to_b[qg.vertex_of(hq)] = b.vertex_of(phi[hq]);
                        }
                        let mut b_pre = vec![Vec::new(); b.num_vertices()];
                        for w in 0..g.num_vertices() {
                            b_pre[qv_to_b[con.vertex_map[w]]].push(w);
                        }
                        let mut hcol = vec![0u32; g.num_half_edges()];
                        for (h, c) in hcol.iter_mut().enumerate().take(ha) {
                            *c = (h as u32 + 1) * (hb + 1);
                        }
                        for (x, &hg) in b_he.iter().enumerate() {
                            hcol[hg] += x as u32 + 1;
                        }
                        let vcol = vec![vec![0u32]; g.num_vertices()];
                        let code = canonical_form(&g, &vcol, &hcol).code;
                        if !seen.insert(code) {
                            continue;
                        }
                        let shared_edges = a_edges
                            .iter()
                            .filter(|h| !tset.contains(h))
                            .map(|&h| (h, g.involution(h)))
                            .collect();
                        out.push(GenericStructure {
                            graph: g.clone(),
                            a_half_edges: (0..ha).collect(),
                            a_vertices: pre.clone(),
                            b_half_edges: b_he,
                            b_vertices: b_pre,
                            shared_edges,
                        });
                    }
                }
                // next tuple of local graphs
                let mut i = 0;
                while i < nv {
                    idx[i] += 1;
                    if idx[i] < choices[i].len() {
                        break;
                    }
                    idx[i] = 0;
                    i += 1;
                }
                if i == nv {
                    break;
                }
            }
        }
    }
    let arc = Arc::new(out);
    structure_cache().lock().unwrap().insert(key, arc.clone());
    arc
}

/// Ghost flags allowed on Γ for a structure, given the flags of A and B.
fn ghost_options(
    st: &GenericStructure,
    a: &PrestableGraph,
    ga: bool,
    b: &PrestableGraph,
    gb: bool,
) -> Vec<bool> {
    let g = &st.graph;
    let n = g.num_legs();
    if n == 0 {
        return vec![false];
    }
    let w = g.vertex_of(g.leg(n));
    let trivalent = g.valence(w) == 3;
    let pa = st.a_vertices[a.vertex_of(a.leg(n))].len();
    let pb = st.b_vertices[b.vertex_of(b.leg(n))].len();
    if ga || gb {
        let ok = trivalent
            && (if ga { pa == 1 } else { pa >= 2 })
            && (if gb { pb == 1 } else { pb >= 2 });
        if ok {
            vec![true]
        } else {
            Vec::new()
        }
    } else if trivalent && pa >= 2 && pb >= 2 {
        vec![false, true]
    } else {
        vec![false]
    }
}

pub(crate) fn pull_decoration(
    d: &Decoration,
    hmap: &[usize],
    vpre: &[Vec<usize>],
    g: &PrestableGraph,
) -> Poly {
    let mut base = Decoration::trivial(g);
    for (h, &x) in hmap.iter().enumerate() {
        base.psi[x] += d.psi[h];
    }
    let mut p = vec![(base, Q::one())];
    for (v, ks) in d.kappa.iter().enumerate() {
        for &c in ks {
            p = times_kappa_sum(&p, c, &vpre[v]);
        }
    }
    p
}

fn product_strata(
    a: &DecoratedStratum,
    b: &DecoratedStratum,
    curve: bool,
) -> Vec<(DecoratedStratum, Q)> {
    let mut out = Vec::new();
    for st in structures(&a.graph, a.ghost, &b.graph, b.ghost).iter() {
        let flags = if curve {
            ghost_options(st, &a.graph, a.ghost, &b.graph, b.ghost)
        } else {
            vec![false]
        };
        if flags.is_empty() {
            continue;
        }
        let g = &st.graph;
        let pa = pull_decoration(&a.decoration, &st.a_half_edges, &st.a_vertices, g);
        let pb = pull_decoration(&b.decoration, &st.b_half_edges, &st.b_vertices, g);
        let mut p = poly_mul(&pa, &pb);
        for &(x, y) in &st.shared_edges {
            let mut ex = Decoration::trivial(g);
            ex.psi[x] = 1;
            let mut ey = Decoration::trivial(g);
            ey.psi[y] = 1;
            p = poly_mul(&p, &vec![(ex, -Q::one()), (ey, -Q::one())]);
        }
        for (d, c) in p {
            for &f in &flags {
                out.push((
                    DecoratedStratum {
                        graph: g.clone(),
                        decoration: d.clone(),
                        ghost: f,
                    },
                    c.clone(),
                ));
            }
        }
    }
    out
}

fn product_impl(x: &TautClass, y: &TautClass, curve: bool) -> Result<TautClass, CalculusError> {
    if x.n() != y.n() {
        return Err(CalculusError::AmbientMismatch {
            left: x.n(),
            right: y.n(),
        });
    }
    if !curve {
        if let Some((s, _)) = x.terms().chain(y.terms()).find(|(s, _)| s.ghost) {
            return Err(CalculusError::Ghost(s.to_string()));
        }
    }
    let pairs: Vec<(&DecoratedStratum, &Q, &DecoratedStratum, &Q)> = x
        .terms()
        .flat_map(|(a, c)| y.terms().map(move |(b, e)| (a, c, b, e)))
        .collect();
    let parts: Vec<TautClass> = pairs
        .par_iter()
        .map(|&(a, c, b, e)| {
            let f = c * e;
            class_from_raw(
                x.n(),
                product_strata(a, b, curve)
                    .into_iter()
                    .map(|(s, z)| (s, z * &f)),
            )
        })
        .collect();
    let mut out = TautClass::zero(x.n());
    for p in &parts {
        out.add_class(p);
    }
    Ok(out)
}

/// Intersection product on the prestable stack. Ghost terms are rejected.
pub fn product(x: &TautClass, y: &TautClass) -> Result<TautClass, CalculusError> {
    product_impl(x, y, false)
}

/// Intersection product on the universal curve over `n - 1` markings, where
/// the last marking may sit on a ghost bubble.
pub fn product_on_curve(x: &TautClass, y: &TautClass) -> Result<TautClass, CalculusError> {
    if x.n() == 0 {
        return Err(CalculusError::NoMarkings);
    }
    product_impl(x, y, true)
}

/// `x^k` on the prestable stack (with `x^0` the fundamental class).
pub fn power(x: &TautClass, k: u32) -> Result<TautClass, CalculusError> {
    let mut out = TautClass::fundamental(x.n());
    for _ in 0..k {
        out = product(&out, x)?;
    }
    Ok(out)
}

/// `x^k` on the universal curve.
pub fn power_on_curve(x: &TautClass, k: u32) -> Result<TautClass, CalculusError> {
    let mut out = TautClass::fundamental(x.n());
    for _ in 0..k {
        out = product_on_curve(&out, x)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// universal curve

/// Ghost term `D_h · ψ^{a-1}` where `h` is a half-edge at `v` with ψ exponent
/// `a ≥ 1`: a contracted bubble carrying the new marking is inserted at `h`.
fn ghost_at(s: &DecoratedStratum, h: usize) -> DecoratedStratum {
    let mut g = s.graph.clone();
    let n_h = g.num_half_edges();
    let v = g.vertex_of(h);
    let a = s.decoration.psi[h];
    let mut psi = s.decoration.psi.clone();
    psi.extend([0, 0, 0]);
    let mut kappa = s.decoration.kappa.clone();
    let w = g.num_vertices();
    kappa.push(Vec::new());
    let (genus, vertex_of, involution, legs) = g.parts_mut();
    genus.push(0);
    if involution[h] == h {
        // leg moves onto the bubble, which is joined to v
        vertex_of[h] = w;
        vertex_of.extend([v, w, w]);
        involution.extend([n_h + 1, n_h, n_h + 2]);
        psi[h] = 0;
        psi[n_h] = a - 1;
    } else {
        // the bubble subdivides the edge at h
        let other = involution[h];
        involution[h] = n_h;
        involution[other] = n_h + 1;
        vertex_of.extend([w, w, w]);
        involution.extend([h, other, n_h + 2]);
        psi[h] = a - 1;
    }
    legs.push(n_h + 2);
    DecoratedStratum {
        graph: g,
        decoration: Decoration { psi, kappa },
        ghost: true,
    }
}

fn pullback_stratum(s: &DecoratedStratum, with_ghosts: bool) -> Vec<(DecoratedStratum, Q)> {
    assert!(!s.ghost, "cannot pull back a ghost term");
    let mut out = Vec::new();
    for v in 0..s.graph.num_vertices() {
        let g = s.graph.add_leg(v);
        for (chosen, rest) in kappa_subsets(&s.decoration.kappa[v]) {
            let mut d = s.decoration.clone();
            d.psi.push(chosen.iter().sum());
            d.kappa[v] = rest;
            out.push((
                DecoratedStratum {
                    graph: g.clone(),
                    decoration: d,
                    ghost: false,
                },
                sign(chosen.len()),
            ));
        }
        if with_ghosts {
            for h in s.graph.half_edges_at(v) {
                if s.decoration.psi[h] > 0 {
                    out.push((ghost_at(s, h), -Q::one()));
                }
            }
        }
    }
    out
}

/// Pullback to the universal curve over `c.n()` markings (the new marking is
/// `n + 1`), including ghost terms.
pub fn forgetful_pullback(c: &TautClass) -> Result<TautClass, CalculusError> {
    pullback_with(c, true)
}

/// Pullback along the forgetful map between prestable stacks: the
/// restriction of [`forgetful_pullback`] to strata without ghost.
pub fn forgetful_pullback_plain(c: &TautClass) -> Result<TautClass, CalculusError> {
    pullback_with(c, false)
}

fn pullback_with(c: &TautClass, ghosts: bool) -> Result<TautClass, CalculusError> {
    if let Some((s, _)) = c.terms().find(|(s, _)| s.ghost) {
        return Err(CalculusError::Ghost(s.to_string()));
    }
    let raw = c.terms().flat_map(|(s, x)| {
        pullback_stratum(s, ghosts)
            .into_iter()
            .map(move |(t, y)| (t, y * x))
    });
    Ok(class_from_raw(c.n() + 1, raw))
}

/// Divisor on the universal curve over `n` markings where marking `i` meets
/// the new marking (the image of the `i`-th section).
pub fn section_divisor(n: usize, i: usize) -> Result<TautClass, CalculusError> {
    if i == 0 || i > n {
        return Err(CalculusError::BadMarking(i));
    }
    // ghost_at lowers the ψ exponent at the chosen leg by one
    let s = local_stratum(&(1..=n).map(|x| (x == i) as u32).collect::<Vec<_>>(), &[]);
    Ok(TautClass::from_stratum(ghost_at(&s, s.graph.leg(i))))
}

/// Pushforward along the universal curve, forgetting the last marking.
pub fn forgetful_pushforward(c: &TautClass) -> Result<TautClass, CalculusError> {
    if c.n() == 0 {
        return Err(CalculusError::NoMarkings);
    }
    let raw = c.terms().flat_map(|(s, x)| {
        pushforward_stratum(s)
            .into_iter()
            .map(move |(t, y)| (t, y * x))
    });
    Ok(class_from_raw(c.n() - 1, raw))
}

pub(crate) fn pushforward_stratum(s: &DecoratedStratum) -> Vec<(DecoratedStratum, Q)> {
    let n1 = s.n();
    let last = s.graph.leg(n1);
    let v = s.graph.vertex_of(last);
    if s.ghost {
        if s.vanishes() {
            return Vec::new();
        }
        let others: Vec<usize> = s
            .graph
            .half_edges_at(v)
            .into_iter()
            .filter(|&h| h != last)
            .collect();
        let (x, y) = (others[0], others[1]);
        let mut g = s.graph.clone();
        {
            let (_, _, involution, legs) = g.parts_mut();
            legs.pop();
            match (involution[x] == x, involution[y] == y) {
                (true, false) | (false, true) => {
                    let (leg, e) = if involution[x] == x { (x, y) } else { (y, x) };
                    let partner = involution[e];
                    involution[partner] = partner;
                    let pos = legs.iter().position(|&z| z == leg).expect("leg listed");
                    legs[pos] = partner;
                }
                (false, false) => {
                    let (px, py) = (involution[x], involution[y]);
                    involution[px] = py;
                    involution[py] = px;
                }
                (true, true) => panic!("ghost bubble with two legs"),
            }
        }
        let (g2, hmap) = g.compacted(&[x, y, last], &[v]);
        let mut psi = vec![0; g2.num_half_edges()];
        for (h, m) in hmap.iter().enumerate() {
            if let Some(t) = m {
                psi[*t] = s.decoration.psi[h];
            }
        }
        let mut kappa = s.decoration.kappa.clone();
        kappa.remove(v);
        return vec![(
            DecoratedStratum {
                graph: g2,
                decoration: Decoration { psi, kappa },
                ghost: false,
            },
            Q::one(),
        )];
    }

    let hv: Vec<usize> = s
        .graph
        .half_edges_at(v)
        .into_iter()
        .filter(|&h| h != last)
        .collect();
    let k = hv.len() as i64;
    let b = s.decoration.psi[last];
    let (g2, hmap) = s.graph.remove_leg(n1);
    let base_psi: Vec<u32> = {
        let mut p = vec![0; g2.num_half_edges()];
        for (h, m) in hmap.iter().enumerate() {
            if let Some(t) = m {
                p[*t] = s.decoration.psi[h];
            }
        }
        p
    };
    let mut out = Vec::new();
    for (chosen, rest) in kappa_subsets(&s.decoration.kappa[v]) {
        let t = b + chosen.iter().sum::<u32>();
        if t >= 1 {
            let mut d = Decoration {
                psi: base_psi.clone(),
                kappa: s.decoration.kappa.clone(),
            };
            let coeff = if t == 1 {
                d.kappa[v] = rest;
                q(k - 2)
            } else {
                let mut kk = rest;
                kk.push(t - 1);
                kk.sort_unstable();
                d.kappa[v] = kk;
                Q::one()
            };
            out.push((
                DecoratedStratum {
                    graph: g2.clone(),
                    decoration: d,
                    ghost: false,
                },
                coeff,
            ));
        } else {
            for &h in &hv {
                if s.decoration.psi[h] > 0 {
                    let mut d = Decoration {
                        psi: base_psi.clone(),
                        kappa: s.decoration.kappa.clone(),
                    };
                    d.psi[hmap[h].unwrap()] -= 1;
                    out.push((
                        DecoratedStratum {
                            graph: g2.clone(),
                            decoration: d,
                            ghost: false,
                        },
                        Q::one(),
                    ));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// boundary expressions

/// Two-vertex graph on `k` legs (leg `i` is half-edge `i - 1`); legs in
/// `side1` sit on vertex 0 with edge half-edge `k`, the rest on vertex 1
/// with edge half-edge `k + 1`.
pub(crate) fn two_vertex_graph(k: usize, side1: &[usize]) -> PrestableGraph {
    let mut vertex_of: Vec<usize> = (1..=k)
        .map(|i| if side1.contains(&i) { 0 } else { 1 })
        .collect();
    vertex_of.extend([0, 1]);
    let mut involution: Vec<usize> = (0..k).collect();
    involution.extend([k + 1, k]);
    PrestableGraph::from_parts(vec![0, 0], vertex_of, involution, (0..k).collect())
}

/// Sides containing `i` of the boundary divisors whose sum is `ψ_i`, using
/// the two smallest other labels as the reference pair (`k ≥ 3`).
fn psi_sides(k: usize, i: usize) -> Vec<Vec<usize>> {
    let others: Vec<usize> = (1..=k).filter(|&x| x != i).collect();
    let rest = &others[2..];
    (0u64..(1u64 << rest.len()))
        .map(|mask| {
            let mut s = vec![i];
            for (t, &x) in rest.iter().enumerate() {
                if mask >> t & 1 == 1 {
                    s.push(x);
                }
            }
            s
        })
        .collect()
}

/// Decorations on a two-vertex graph from leg ψ exponents, edge ψ exponents
/// and a κ multiset spread over both vertices.
fn two_vertex_decorations(k: usize, leg_psi: &[u32], edge_psi: [u32; 2], kappa: &[u32]) -> Poly {
    let mut psi = leg_psi.to_vec();
    psi.extend(edge_psi);
    let base = Decoration {
        psi,
        kappa: vec![Vec::new(), Vec::new()],
    };
    debug_assert_eq!(base.psi.len(), k + 2);
    let mut p = vec![(base, Q::one())];
    for &c in kappa {
        p = times_kappa_sum(&p, c, &[0, 1]);
    }
    p
}

/// `ψ_i` on the prestable stack with `n ≥ 2` markings as a sum of boundary
/// divisors (for `n = 2` the single divisor equals `ψ_1 + ψ_2`, returned as
/// the class `D - ψ_{other}`).
pub fn psi_to_boundary(n: usize, i: usize) -> Result<TautClass, CalculusError> {
    if i == 0 || i > n {
        return Err(CalculusError::BadMarking(i));
    }
    let mut c = TautClass::zero(n);
    match n {
        0 | 1 => return Err(CalculusError::BadMarking(i)),
        2 => {
            c.add_term(DecoratedStratum::plain(two_vertex_graph(2, &[1])), Q::one());
            let mut psi = vec![0, 0];
            psi[2 - i] = 1;
            c.add_term(local_stratum(&psi, &[]), -Q::one());
        }
        _ => {
            for side in psi_sides(n, i) {
                c.add_term(
                    DecoratedStratum::plain(two_vertex_graph(n, &side)),
                    Q::one(),
                );
            }
        }
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// normal form

/// Whether a local monomial is already final in the normal form. A lone ψ
/// power on a two-half-edge vertex is not: it is split into the symmetric
/// binomial and a boundary part.
fn local_is_final(psi: &[u32], kappa: &[u32]) -> bool {
    match psi.len() {
        0 => kappa.iter().all(|&a| a == 2),
        1 => kappa.is_empty(),
        _ => kappa.is_empty() && psi.iter().all(|&p| p == 0),
    }
}

type LocalKey = (Vec<u32>, Vec<u32>, bool);
type LocalCache = Mutex<HashMap<LocalKey, Arc<TautClass>>>;

fn local_cache() -> &'static LocalCache {
    static CACHE: OnceLock<LocalCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Normal form of a monomial on the one-vertex graph with `psi.len()` legs.
fn local_nf(psi: &[u32], kappa: &[u32], stable: bool) -> Arc<TautClass> {
    let key = (psi.to_vec(), kappa.to_vec(), stable);
    if let Some(c) = local_cache().lock().unwrap().get(&key) {
        return c.clone();
    }
    let k = psi.len();
    let mut result = TautClass::zero(k);
    if local_is_final(psi, kappa) {
        result.add_term(local_stratum(psi, kappa), Q::one());
    } else {
        let (done, pending) = if !kappa.is_empty() {
            match k {
                0 => (TautClass::zero(0), kappa_rewrite_point(kappa)),
                1 => (TautClass::zero(1), kappa_rewrite_one(psi[0], kappa)),
                _ => (TautClass::zero(k), kappa_rewrite_lemma(psi, kappa)),
            }
        } else if k >= 3 {
            (TautClass::zero(k), psi_rewrite_lemma(psi))
        } else {
            psi_rewrite_two(psi)
        };
        result.add_class(&done);
        result.add_class(&normalize_with(&pending, stable));
    }
    if stable {
        result = result.filter(|s| s.graph.is_stable());
    }
    let arc = Arc::new(result);
    local_cache().lock().unwrap().insert(key, arc.clone());
    arc
}

/// `ψ_i^{p_i}·(rest)` with `ψ_i` replaced by boundary divisors (`k ≥ 3`).
fn psi_rewrite_lemma(psi: &[u32]) -> TautClass {
    let k = psi.len();
    let i = psi.iter().position(|&p| p > 0).expect("some ψ") + 1;
    let mut lowered = psi.to_vec();
    lowered[i - 1] -= 1;
    let mut c = TautClass::zero(k);
    for side in psi_sides(k, i) {
        let g = two_vertex_graph(k, &side);
        for (d, x) in two_vertex_decorations(k, &lowered, [0, 0], &[]) {
            c.add_term(DecoratedStratum::new(g.clone(), d), x);
        }
    }
    c
}

/// Two legs and no κ: returns (final part, part still to normalize).
fn psi_rewrite_two(psi: &[u32]) -> (TautClass, TautClass) {
    let (a, b) = (psi[0], psi[1]);
    let d = two_vertex_graph(2, &[1]);
    let mut done = TautClass::zero(2);
    let mut pending = TautClass::zero(2);
    if a > 0 && b > 0 {
        // ψ₂ = D − ψ₁
        for (dec, x) in two_vertex_decorations(2, &[a, b - 1], [0, 0], &[]) {
            pending.add_term(DecoratedStratum::new(d.clone(), dec), x);
        }
        pending.add_term(local_stratum(&[a + 1, b - 1], &[]), -Q::one());
        return (done, pending);
    }
    // a single power ψ_h^c: half the symmetric binomial plus half of
    // ψ_h^c − (−ψ_{h'})^c, which is D times a polynomial
    let (c, h) = if a > 0 { (a, 0) } else { (b, 1) };
    let half = Q::new(BigInt::one(), BigInt::from(2));
    let mut mono = [0u32; 2];
    mono[h] = c;
    done.add_term(local_stratum(&mono, &[]), half.clone());
    let mut other = [0u32; 2];
    other[1 - h] = c;
    done.add_term(local_stratum(&other, &[]), half.clone() * sign(c as usize));
    for t in 0..c {
        let mut legs = [0u32; 2];
        legs[h] = c - 1 - t;
        legs[1 - h] = t;
        for (dec, x) in two_vertex_decorations(2, &legs, [0, 0], &[]) {
            pending.add_term(
                DecoratedStratum::new(d.clone(), dec),
                x * &half * sign(t as usize),
            );
        }
    }
    (done, pending)
}

/// κ removal for `k ≥ 2` legs: `κ_a·R = π_*(ψ_{k+1}^{a+1}·π^*R)` with one
/// factor `ψ_{k+1}` replaced by boundary divisors. The remaining positive
/// power of `ψ_{k+1}` kills the ghost terms of `π^*R`.
fn kappa_rewrite_lemma(psi: &[u32], kappa: &[u32]) -> TautClass {
    let k = psi.len();
    let (&a, rest) = kappa.split_last().expect("some κ");
    let mut c = TautClass::zero(k);
    for (chosen, kept) in kappa_subsets(rest) {
        let y = a + 1 + chosen.iter().sum::<u32>();
        let mut leg_psi = psi.to_vec();
        leg_psi.push(y - 1);
        for side in psi_sides(k + 1, k + 1) {
            let g = two_vertex_graph(k + 1, &side);
            for (dec, x) in two_vertex_decorations(k + 1, &leg_psi, [0, 0], &kept) {
                let s = DecoratedStratum::new(g.clone(), dec);
                for (t, z) in pushforward_stratum(&s) {
                    c.add_term(t, z * &x * sign(chosen.len()));
                }
            }
        }
    }
    c
}

/// `ψ₁^x ψ₂^y` on two markings written as boundary terms plus
/// `(−1)^y ψ₁^{x+y}`, with κ factors `kappa` attached.
fn telescope(x: u32, y: u32, kappa: &[u32]) -> Vec<(DecoratedStratum, Q)> {
    let d = two_vertex_graph(2, &[1]);
    let mut out = Vec::new();
    for t in 0..y {
        for (dec, z) in two_vertex_decorations(2, &[x + t, y - 1 - t], [0, 0], kappa) {
            out.push((DecoratedStratum::new(d.clone(), dec), z * sign(t as usize)));
        }
    }
    out.push((local_stratum(&[x + y, 0], kappa), sign(y as usize)));
    out
}

/// κ removal with one leg, through the two-marked universal curve.
fn kappa_rewrite_one(p: u32, kappa: &[u32]) -> TautClass {
    let (&a, rest) = kappa.split_last().expect("some κ");
    let mut c = TautClass::zero(1);
    for (chosen, kept) in kappa_subsets(rest) {
        let y = a + 1 + chosen.iter().sum::<u32>();
        for (s, x) in telescope(p, y, &kept) {
            for (t, z) in pushforward_stratum(&s) {
                c.add_term(t, z * &x * sign(chosen.len()));
            }
        }
    }
    c
}

fn push_twice(raw: Vec<(DecoratedStratum, Q)>) -> TautClass {
    let mut once = TautClass::zero(1);
    for (s, x) in raw {
        for (t, z) in pushforward_stratum(&s) {
            once.add_term(t, z * &x);
        }
    }
    forgetful_pushforward(&once).expect("one marking")
}

/// Relation on the unmarked stack obtained by pushing `ψ₁^x ψ₂^y` down
/// from two markings directly and after rewriting `ψ₂` with boundary.
fn point_relation(x: u32, y: u32) -> TautClass {
    let direct = push_twice(vec![(local_stratum(&[x, y], &[]), Q::one())]);
    let rewritten = push_twice(telescope(x, y, &[]));
    direct.sub(&rewritten)
}

type PointCache = Mutex<HashMap<u32, Arc<TautClass>>>;

fn point_cache() -> &'static PointCache {
    static CACHE: OnceLock<PointCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Expression for `κ_c` (`c ≠ 2`) on the unmarked stack in terms of boundary
/// classes and κ monomials with fewer indices away from 2.
pub(crate) fn point_kappa_expression(c: u32) -> Arc<TautClass> {
    if let Some(e) = point_cache().lock().unwrap().get(&c) {
        return e.clone();
    }
    assert!(c >= 1 && c != 2);
    let rel = if c % 2 == 1 {
        point_relation(1, c + 1)
    } else {
        point_relation(3, c - 1)
    };
    let target = local_stratum(&[], &[c]);
    let lead = rel.coefficient(&target);
    assert!(!lead.is_zero(), "relation does not involve κ_{c}");
    // κ_c = κ_c − rel / lead
    let mut expr = TautClass::from_stratum(target);
    expr.add_scaled(&rel, &(-lead.recip()));
    debug_assert!(expr.coefficient(&local_stratum(&[], &[c])).is_zero());
    let arc = Arc::new(expr);
    point_cache().lock().unwrap().insert(c, arc.clone());
    arc
}

/// κ monomial without markings: one factor other than κ₂ is rewritten.
fn kappa_rewrite_point(kappa: &[u32]) -> TautClass {
    let pos = kappa
        .iter()
        .rposition(|&c| c != 2)
        .expect("a factor other than κ₂");
    let mut rest = kappa.to_vec();
    let c = rest.remove(pos);
    let expr = point_kappa_expression(c);
    let mut out = TautClass::zero(0);
    for (s, x) in expr.terms() {
        let all: Vec<usize> = (0..s.graph.num_vertices()).collect();
        let mut p = vec![(s.decoration.clone(), Q::one())];
        for &r in &rest {
            p = times_kappa_sum(&p, r, &all);
        }
        for (d, z) in p {
            out.add_term(DecoratedStratum::new(s.graph.clone(), d), z * x);
        }
    }
    out
}

fn normalize_stratum(s: &DecoratedStratum, stable: bool) -> Vec<(DecoratedStratum, Q)> {
    assert!(!s.ghost, "normal form is defined for strata without ghost");
    let nv = s.graph.num_vertices();
    let mut raw = vec![(s.clone(), Q::one())];
    for v in 0..nv {
        let mut next = Vec::with_capacity(raw.len());
        for (t, c) in raw {
            let hv = t.graph.half_edges_at(v);
            let (psi, kappa) = local_at(&t, v, &hv);
            if local_is_final(&psi, &kappa) {
                next.push((t, c));
                continue;
            }
            let local = local_nf(&psi, &kappa, stable);
            for (u, x) in substitute_raw(&t, v, &local) {
                next.push((u, x * &c));
            }
        }
        raw = next;
    }
    raw
}

fn normalize_with(c: &TautClass, stable: bool) -> TautClass {
    let parts: Vec<Vec<(DecoratedStratum, Q)>> = c
        .terms()
        .filter(|(s, _)| !stable || s.graph.is_stable())
        .map(|(s, x)| {
            normalize_stratum(s, stable)
                .into_iter()
                .map(|(t, y)| (t, y * x))
                .collect()
        })
        .collect();
    class_from_raw(c.n(), parts.into_iter().flatten())
}

/// Rewrites a class without ghost terms into a combination of normal-form
/// basis elements. Panics on ghost terms.
pub fn normalize(c: &TautClass) -> TautClass {
    normalize_with(c, false)
}

/// Restriction to the stable locus written as pure boundary strata.
pub fn normalize_stable(c: &TautClass) -> TautClass {
    normalize_with(c, true)
}

/// `κ_a` on `n` markings in the preferred generators: κ₂ powers for `n = 0`,
/// ψ for `n = 1`, the ψ binomial plus boundary for `n = 2` and boundary only
/// for `n ≥ 3`.
pub fn kappa_to_preferred(n: usize, a: u32) -> TautClass {
    if a == 0 {
        return TautClass::fundamental(n).scaled(&q(n as i64 - 2));
    }
    normalize(&TautClass::from_stratum(local_stratum(&vec![0; n], &[a])))
}

// ---------------------------------------------------------------------------
// stabilization

/// Coefficients `1/(j+1)!` of the series `Φ(t) = (e^t − 1)/t`, up to a cap.
#[derive(Clone, Debug)]
pub struct StabilizationSeries {
    cap: u32,
    coeffs: Vec<Q>,
}

impl StabilizationSeries {
    pub fn new(cap: u32) -> Self {
        let coeffs = (0..=cap + 1)
            .map(|j| Q::new(BigInt::one(), factorial(j + 1)))
            .collect();
        StabilizationSeries { cap, coeffs }
    }

    pub fn cap(&self) -> u32 {
        self.cap
    }

    pub fn coeff(&self, j: u32) -> &Q {
        &self.coeffs[j as usize]
    }

    /// `Φ(ψ_x + ψ_y)` negated, truncated at degree `max_deg`, on graph `g`.
    fn neg_phi_edge(&self, g: &PrestableGraph, x: usize, y: usize, max_deg: u32) -> Poly {
        let mut out = Vec::new();
        for r in 0..=max_deg {
            for s in 0..=r {
                let mut d = Decoration::trivial(g);
                d.psi[x] = s;
                d.psi[y] = r - s;
                let c = -self.coeff(r).clone() * Q::from_integer(binomial(r, s));
                out.push((d, c));
            }
        }
        out
    }

    /// Chain of `j` edges from a one-half-edge vertex 0 through two-half-edge
    /// vertices to vertex `j`, which carries the `k` legs. Edge `m` is
    /// `(k + 2m, k + 2m + 1)` between vertices `m` and `m + 1`.
    pub(crate) fn chain(k: usize, j: usize) -> PrestableGraph {
        let mut vertex_of = vec![j; k];
        let mut involution: Vec<usize> = (0..k).collect();
        for m in 0..j {
            vertex_of.extend([m, m + 1]);
            involution.extend([k + 2 * m + 1, k + 2 * m]);
        }
        PrestableGraph::from_parts(vec![0; j + 1], vertex_of, involution, (0..k).collect())
    }

    /// Pullback of `κ_a` from the stable space with `k ≥ 3` markings.
    pub fn kappa_pullback(&self, k: usize, a: u32) -> TautClass {
        assert!(a <= self.cap, "degree {a} above series cap {}", self.cap);
        let mut out = TautClass::from_stratum(local_stratum(&vec![0; k], &[a]));
        let scale = Q::from_integer(factorial(a + 1));
        for j in 1..=a {
            let g = Self::chain(k, j as usize);
            let h0 = k;
            let target = a - j;
            let mut cont = vec![(Decoration::trivial(&g), Q::one())];
            for m in 0..j as usize {
                cont = poly_mul(
                    &cont,
                    &self.neg_phi_edge(&g, k + 2 * m, k + 2 * m + 1, target + 1),
                );
            }
            let mut terms: Vec<(Decoration, Q)> = Vec::new();
            // Φ at the end vertex, with κ₀ read as −1
            for (d, c) in &cont {
                let deg = d.degree();
                if deg > target {
                    continue;
                }
                let b = target - deg;
                let mut e = d.clone();
                let f = if b == 0 {
                    -Q::one()
                } else {
                    e.kappa[0].push(b);
                    e.kappa[0].sort_unstable();
                    Q::one()
                };
                terms.push((e, c * f * self.coeff(b)));
            }
            // ψ_{h0}^{-1} applied to the chain factor
            for (d, c) in &cont {
                if d.degree() == target + 1 && d.psi[h0] > 0 {
                    let mut e = d.clone();
                    e.psi[h0] -= 1;
                    terms.push((e, c.clone()));
                }
            }
            for (d, c) in collect_poly(terms) {
                out.add_term(DecoratedStratum::new(g.clone(), d), c * &scale);
            }
        }
        out
    }
}

/// Pullback of `ψ_i` from the stable space with `k ≥ 3` markings.
pub fn stable_psi_pullback(k: usize, i: usize) -> TautClass {
    let mut c = TautClass::from_stratum(local_stratum(
        &(1..=k).map(|x| (x == i) as u32).collect::<Vec<_>>(),
        &[],
    ));
    c.add_term(
        DecoratedStratum::plain(two_vertex_graph(k, &[i])),
        -Q::one(),
    );
    c
}

/// Pullback along stabilization of a class supported on stable graphs.
pub fn stabilization_pullback(c: &TautClass) -> Result<TautClass, CalculusError> {
    if c.n() < 3 {
        return Err(CalculusError::BadMarking(c.n()));
    }
    let max_deg = c
        .terms()
        .map(|(s, _)| s.decoration.degree())
        .max()
        .unwrap_or(0);
    let series = StabilizationSeries::new(max_deg.max(1));
    let mut out = TautClass::zero(c.n());
    for (s, x) in c.terms() {
        if s.ghost || !s.graph.is_stable() {
            return Err(CalculusError::NotStable(s.to_string()));
        }
        let mut raw = vec![(s.clone(), Q::one())];
        for v in 0..s.graph.num_vertices() {
            let hv = s.graph.half_edges_at(v);
            let (psi, kappa) = local_at(s, v, &hv);
            let k = hv.len();
            let mut local = TautClass::fundamental(k);
            for (i, &p) in psi.iter().enumerate() {
                for _ in 0..p {
                    local = product(&local, &stable_psi_pullback(k, i + 1))?;
                }
            }
            for &a in &kappa {
                local = product(&local, &series.kappa_pullback(k, a))?;
            }
            raw = raw
                .iter()
                .flat_map(|(t, y)| {
                    substitute_raw(t, v, &local)
                        .into_iter()
                        .map(move |(u, z)| (u, z * y))
                })
                .collect();
        }
        for (t, y) in raw {
            out.add_term(t, y * x);
        }
    }
    Ok(out)
}

/// Second route for the pullback of `κ_a` along stabilization: push
/// `(ψ_{k+1} − [G])^{a+1}` down the universal curve, where `G` puts the new
/// marking alone on a tail.
pub fn kappa_pullback_via_curve(k: usize, a: u32) -> Result<TautClass, CalculusError> {
    let mut x = TautClass::from_stratum(local_stratum(
        &(1..=k + 1).map(|i| (i == k + 1) as u32).collect::<Vec<_>>(),
        &[],
    ));
    x.add_term(
        DecoratedStratum::plain(two_vertex_graph(k + 1, &[k + 1])),
        -Q::one(),
    );
    forgetful_pushforward(&power_on_curve(&x, a + 1)?)
}

#[cfg(test)]
mod tests;
