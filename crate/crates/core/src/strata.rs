//! Decorated strata, rational combinations of them, open substacks given by
//! sets of graphs, and the normal-form basis.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::graph::{
    canonical_form, canonical_graph, enumerate_graphs, CanonicalKey, GraphError, PrestableGraph,
};

pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    BigRational::from_integer(n.into())
}

pub fn qf(p: i64, r: i64) -> Q {
    BigRational::new(p.into(), r.into())
}

#[derive(Debug, Error)]
pub enum StrataError {
    #[error("class lives on {found} markings, expected {expected}")]
    AmbientMismatch { expected: usize, found: usize },
    #[error("substack is not closed under contraction: {graph} is allowed but its contraction {contracted} is not")]
    NotOpen { graph: String, contracted: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("malformed class JSON: {0}")]
    Json(String),
}

/// ψ exponents per half-edge and κ indices per vertex (a sorted multiset;
/// the entry `a` stands for one factor κ_a).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Decoration {
    pub psi: Vec<u32>,
    pub kappa: Vec<Vec<u32>>,
}

impl Decoration {
    pub fn trivial(g: &PrestableGraph) -> Self {
        Decoration {
            psi: vec![0; g.num_half_edges()],
            kappa: vec![Vec::new(); g.num_vertices()],
        }
    }

    pub fn degree(&self) -> u32 {
        self.psi.iter().sum::<u32>() + self.kappa.iter().flatten().sum::<u32>()
    }

    pub fn is_trivial(&self) -> bool {
        self.psi.iter().all(|&x| x == 0) && self.kappa.iter().all(|k| k.is_empty())
    }

    /// Degree of the part of the decoration living at `v`.
    pub fn degree_at(&self, g: &PrestableGraph, v: usize) -> u32 {
        let p: u32 = (0..g.num_half_edges())
            .filter(|&h| g.vertex_of(h) == v)
            .map(|h| self.psi[h])
            .sum();
        p + self.kappa[v].iter().sum::<u32>()
    }

    pub fn colors(&self, g: &PrestableGraph) -> (Vec<Vec<u32>>, Vec<u32>) {
        let vc = (0..g.num_vertices())
            .map(|v| {
                let mut c = vec![g.genus(v)];
                c.extend_from_slice(&self.kappa[v]);
                c
            })
            .collect();
        (vc, self.psi.clone())
    }
}

/// A decorated stratum `[Γ, α]`.
///
/// With `ghost` set, the stratum lives on the universal curve over the
/// space with one marking fewer: the vertex carrying the last marking is a
/// contracted bubble. Such a vertex has exactly three half-edges and no
/// decoration (any decoration there makes the class vanish).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecoratedStratum {
    pub graph: PrestableGraph,
    pub decoration: Decoration,
    pub ghost: bool,
}

impl DecoratedStratum {
    pub fn new(graph: PrestableGraph, decoration: Decoration) -> Self {
        DecoratedStratum {
            graph,
            decoration,
            ghost: false,
        }
    }

    pub fn plain(graph: PrestableGraph) -> Self {
        let decoration = Decoration::trivial(&graph);
        DecoratedStratum {
            graph,
            decoration,
            ghost: false,
        }
    }

    pub fn n(&self) -> usize {
        self.graph.num_legs()
    }

    pub fn codim(&self) -> u32 {
        self.graph.num_edges() as u32 + self.decoration.degree()
    }

    pub fn ghost_vertex(&self) -> Option<usize> {
        if self.ghost {
            Some(self.graph.vertex_of(self.graph.leg(self.n())))
        } else {
            None
        }
    }

    /// Whether the class vanishes because of decoration on a ghost vertex.
    pub fn vanishes(&self) -> bool {
        match self.ghost_vertex() {
            Some(w) => {
                debug_assert_eq!(self.graph.valence(w), 3, "ghost vertex must be trivalent");
                !self.decoration.kappa[w].is_empty()
                    || (0..self.graph.num_half_edges())
                        .any(|h| self.graph.vertex_of(h) == w && self.decoration.psi[h] > 0)
            }
            None => false,
        }
    }

    /// Canonical representative and |Aut([Γ, α])|; `None` if the class is zero.
    pub fn canonical(&self) -> Option<(DecoratedStratum, u128)> {
        if self.vanishes() {
            return None;
        }
        let (vc, hc) = self.decoration.colors(&self.graph);
        let cf = canonical_form(&self.graph, &vc, &hc);
        let graph = self.graph.relabel(&cf.vertex_order, &cf.half_edge_order);
        let decoration = Decoration {
            psi: cf
                .half_edge_order
                .iter()
                .map(|&h| self.decoration.psi[h])
                .collect(),
            kappa: cf
                .vertex_order
                .iter()
                .map(|&v| self.decoration.kappa[v].clone())
                .collect(),
        };
        Some((
            DecoratedStratum {
                graph,
                decoration,
                ghost: self.ghost,
            },
            cf.aut_order,
        ))
    }

    pub fn key(&self) -> CanonicalKey {
        let (vc, hc) = self.decoration.colors(&self.graph);
        let cf = canonical_form(&self.graph, &vc, &hc);
        let mut code = vec![self.ghost as u32];
        code.extend(cf.code);
        CanonicalKey::from_code(&code)
    }

    pub fn to_json(&self) -> Value {
        let mut psi = Map::new();
        for (h, &e) in self.decoration.psi.iter().enumerate() {
            if e > 0 {
                psi.insert(h.to_string(), json!(e));
            }
        }
        let mut kappa = Map::new();
        for (v, ks) in self.decoration.kappa.iter().enumerate() {
            if ks.is_empty() {
                continue;
            }
            let mut m: BTreeMap<u32, u32> = BTreeMap::new();
            for &a in ks {
                *m.entry(a).or_insert(0) += 1;
            }
            let obj: Map<String, Value> = m
                .into_iter()
                .map(|(a, e)| (a.to_string(), json!(e)))
                .collect();
            kappa.insert(v.to_string(), Value::Object(obj));
        }
        let mut out = json!({ "graph": self.graph.to_json(), "psi": psi, "kappa": kappa });
        if self.ghost {
            out["ghost"] = json!(true);
        }
        out
    }

    pub fn from_json(v: &Value) -> Result<DecoratedStratum, StrataError> {
        let err = |s: &str| StrataError::Json(s.to_string());
        let graph = PrestableGraph::from_json(v.get("graph").ok_or_else(|| err("missing graph"))?)?;
        let mut d = Decoration::trivial(&graph);
        if let Some(p) = v.get("psi").and_then(Value::as_object) {
            for (h, e) in p {
                let h: usize = h.parse().map_err(|_| err("bad half-edge index"))?;
                if h >= d.psi.len() {
                    return Err(err("psi references a missing half-edge"));
                }
                d.psi[h] = e.as_u64().ok_or_else(|| err("bad psi exponent"))? as u32;
            }
        }
        if let Some(k) = v.get("kappa").and_then(Value::as_object) {
            for (vs, m) in k {
                let vi: usize = vs.parse().map_err(|_| err("bad vertex index"))?;
                if vi >= d.kappa.len() {
                    return Err(err("kappa references a missing vertex"));
                }
                for (a, e) in m
                    .as_object()
                    .ok_or_else(|| err("kappa entry must be an object"))?
                {
                    let a: u32 = a.parse().map_err(|_| err("bad kappa index"))?;
                    let e = e.as_u64().ok_or_else(|| err("bad kappa exponent"))?;
                    d.kappa[vi].extend(std::iter::repeat_n(a, e as usize));
                }
                d.kappa[vi].sort_unstable();
            }
        }
        let ghost = v.get("ghost").and_then(Value::as_bool).unwrap_or(false);
        Ok(DecoratedStratum {
            graph,
            decoration: d,
            ghost,
        })
    }
}

impl fmt::Display for DecoratedStratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.graph)?;
        for (h, &e) in self.decoration.psi.iter().enumerate() {
            if e > 0 {
                write!(f, " psi{h}^{e}")?;
            }
        }
        for (v, ks) in self.decoration.kappa.iter().enumerate() {
            for a in ks {
                write!(f, " kappa{a}@v{v}")?;
            }
        }
        if self.ghost {
            write!(f, " ghost")?;
        }
        write!(f, "]")
    }
}

/// Rational combination of canonical decorated strata on `n` markings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TautClass {
    n: usize,
    terms: BTreeMap<DecoratedStratum, Q>,
}

impl TautClass {
    pub fn zero(n: usize) -> Self {
        TautClass {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn fundamental(n: usize) -> Self {
        Self::from_stratum(DecoratedStratum::plain(PrestableGraph::trivial(n)))
    }

    pub fn from_stratum(s: DecoratedStratum) -> Self {
        let mut c = Self::zero(s.n());
        c.add_term(s, Q::one());
        c
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> impl Iterator<Item = (&DecoratedStratum, &Q)> {
        self.terms.iter()
    }

    pub fn into_terms(self) -> impl Iterator<Item = (DecoratedStratum, Q)> {
        self.terms.into_iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, s: &DecoratedStratum) -> Q {
        match s.canonical() {
            Some((c, _)) => self.terms.get(&c).cloned().unwrap_or_else(Q::zero),
            None => Q::zero(),
        }
    }

    /// Adds `c·s`, canonicalizing `s`.
    pub fn add_term(&mut self, s: DecoratedStratum, c: Q) {
        debug_assert_eq!(s.n(), self.n);
        if c.is_zero() {
            return;
        }
        if let Some((canon, _)) = s.canonical() {
            self.add_canonical(canon, c);
        }
    }

    pub(crate) fn add_canonical(&mut self, s: DecoratedStratum, c: Q) {
        use std::collections::btree_map::Entry;
        match self.terms.entry(s) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
        }
    }

    pub fn add_scaled(&mut self, other: &TautClass, f: &Q) {
        debug_assert_eq!(self.n, other.n);
        if f.is_zero() {
            return;
        }
        for (s, c) in &other.terms {
            self.add_canonical(s.clone(), c * f);
        }
    }

    pub fn add_class(&mut self, other: &TautClass) {
        self.add_scaled(other, &Q::one());
    }

    pub fn scaled(&self, f: &Q) -> TautClass {
        let mut out = TautClass::zero(self.n);
        out.add_scaled(self, f);
        out
    }

    pub fn sub(&self, other: &TautClass) -> TautClass {
        let mut out = self.clone();
        out.add_scaled(other, &q(-1));
        out
    }

    /// Codimension, if all terms share one.
    pub fn degree(&self) -> Option<u32> {
        let mut it = self.terms.keys().map(|s| s.codim());
        let first = it.next()?;
        it.all(|d| d == first).then_some(first)
    }

    pub fn is_pure(&self) -> bool {
        self.is_empty() || self.degree().is_some()
    }

    pub fn homogeneous_part(&self, d: u32) -> TautClass {
        TautClass {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|(s, _)| s.codim() == d)
                .map(|(s, c)| (s.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn filter(&self, keep: impl Fn(&DecoratedStratum) -> bool) -> TautClass {
        TautClass {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|(s, _)| keep(s))
                .map(|(s, c)| (s.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Value {
        let terms: Vec<Value> = self
            .terms
            .iter()
            .map(|(s, c)| {
                let mut v = s.to_json();
                v["coeff"] = json!(c.to_string());
                v
            })
            .collect();
        json!({ "n": self.n, "terms": terms })
    }

    pub fn from_json(v: &Value) -> Result<TautClass, StrataError> {
        let err = |s: &str| StrataError::Json(s.to_string());
        let n = v
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| err("missing n"))? as usize;
        let mut items = Vec::new();
        for t in v
            .get("terms")
            .and_then(Value::as_array)
            .ok_or_else(|| err("missing terms"))?
        {
            let s = DecoratedStratum::from_json(t)?;
            let c = t
                .get("coeff")
                .and_then(Value::as_str)
                .and_then(crate::linalg::parse_rational)
                .ok_or_else(|| err("bad coefficient"))?;
            items.push((s, c));
        }
        make_class(n, items)
    }
}

impl fmt::Display for TautClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (s, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c}){s}")?;
        }
        Ok(())
    }
}

/// Canonicalizes and merges a list of weighted strata.
pub fn make_class(
    n: usize,
    items: impl IntoIterator<Item = (DecoratedStratum, Q)>,
) -> Result<TautClass, StrataError> {
    let mut c = TautClass::zero(n);
    for (s, x) in items {
        if s.n() != n {
            return Err(StrataError::AmbientMismatch {
                expected: n,
                found: s.n(),
            });
        }
        s.graph.validate().map_err(GraphError::from)?;
        c.add_term(s, x);
    }
    Ok(c)
}

/// Vertex-wise normal-form rules: κ₂ powers on vertices without half-edges,
/// a ψ power on one-half-edge vertices, a ψ power on one side of
/// two-half-edge vertices, nothing elsewhere.
pub fn is_normal_form(s: &DecoratedStratum) -> bool {
    let g = &s.graph;
    let d = &s.decoration;
    let adj = g.adjacency();
    adj.iter().enumerate().all(|(v, hs)| match hs.len() {
        0 => d.kappa[v].iter().all(|&a| a == 2),
        1 => d.kappa[v].is_empty(),
        2 => d.kappa[v].is_empty() && hs.iter().filter(|&&h| d.psi[h] > 0).count() <= 1,
        _ => d.kappa[v].is_empty() && hs.iter().all(|&h| d.psi[h] == 0),
    })
}

/// An open union of strata, given by the set of allowed graphs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SubstackSpec {
    All,
    MaxEdges(usize),
    StableOnly,
    /// Every component has at least two special points.
    Semistable,
    /// Semistable with markings 2 and 3 on a common component that is
    /// stable; inside three markings this is the locus of marked chains.
    MarkedChains,
    /// Explicit list of allowed graphs (any labeling).
    Custom(Arc<HashSet<CanonicalKey>>),
}

impl SubstackSpec {
    pub fn custom(graphs: &[PrestableGraph]) -> Self {
        SubstackSpec::Custom(Arc::new(
            graphs.iter().map(|g| canonical_graph(g).1.key()).collect(),
        ))
    }

    pub fn allows(&self, g: &PrestableGraph) -> bool {
        match self {
            SubstackSpec::All => true,
            SubstackSpec::MaxEdges(e) => g.num_edges() <= *e,
            SubstackSpec::StableOnly => g.is_stable(),
            SubstackSpec::Semistable => (0..g.num_vertices()).all(|v| g.valence(v) >= 2),
            SubstackSpec::MarkedChains => {
                g.num_legs() >= 3
                    && (0..g.num_vertices()).all(|v| g.valence(v) >= 2)
                    && g.vertex_of(g.leg(2)) == g.vertex_of(g.leg(3))
                    && g.valence(g.vertex_of(g.leg(2))) >= 3
            }
            SubstackSpec::Custom(keys) => keys.contains(&canonical_graph(g).1.key()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SubstackSpec::All => "all".into(),
            SubstackSpec::MaxEdges(e) => format!("max-edges:{e}"),
            SubstackSpec::StableOnly => "stable".into(),
            SubstackSpec::Semistable => "chains".into(),
            SubstackSpec::MarkedChains => "marked-chains".into(),
            SubstackSpec::Custom(_) => "custom".into(),
        }
    }

    /// Checks closure under edge contraction over all graphs with at most
    /// `max_edges` edges.
    pub fn validate(&self, n: usize, max_edges: usize) -> Result<(), StrataError> {
        if !matches!(self, SubstackSpec::Custom(_)) {
            // built-in predicates are closed by construction; still cheap to confirm on small cases
            if max_edges > 3 {
                return self.validate(n, 3);
            }
        }
        for p in 1..=max_edges {
            for g in enumerate_graphs(n, p).iter() {
                if !self.allows(g) {
                    continue;
                }
                for (h, _) in g.edges() {
                    let (c, _) = g.contract_edge(h)?;
                    if !self.allows(&c) {
                        return Err(StrataError::NotOpen {
                            graph: g.to_string(),
                            contracted: c.to_string(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn parse(s: &str) -> Option<SubstackSpec> {
        match s {
            "all" => Some(SubstackSpec::All),
            "stable" => Some(SubstackSpec::StableOnly),
            "chains" | "semistable" => Some(SubstackSpec::Semistable),
            "marked-chains" => Some(SubstackSpec::MarkedChains),
            _ => {
                let e = s.strip_prefix("max-edges:")?;
                e.parse().ok().map(SubstackSpec::MaxEdges)
            }
        }
    }
}

/// Per-vertex exponents of a normal-form decoration: the power of κ₂ at
/// vertices without half-edges, the ψ power at one- and two-half-edge
/// vertices, and 0 elsewhere.
pub type Assignment = Vec<u32>;

/// Weight of one unit of exponent at each vertex (0 if the vertex carries
/// no normal-form decoration).
pub fn slot_weights(g: &PrestableGraph) -> Vec<u32> {
    (0..g.num_vertices())
        .map(|v| match g.valence(v) {
            0 => 2,
            1 | 2 => 1,
            _ => 0,
        })
        .collect()
}

/// All assignments of total degree `r`.
pub fn assignments(g: &PrestableGraph, r: u32) -> Vec<Assignment> {
    let w = slot_weights(g);
    let mut out = Vec::new();
    let mut cur = vec![0u32; w.len()];
    fn rec(i: usize, left: u32, w: &[u32], cur: &mut Vec<u32>, out: &mut Vec<Assignment>) {
        if i == w.len() {
            if left == 0 {
                out.push(cur.clone());
            }
            return;
        }
        if w[i] == 0 {
            cur[i] = 0;
            rec(i + 1, left, w, cur, out);
            return;
        }
        let mut e = 0;
        while e * w[i] <= left {
            cur[i] = e;
            rec(i + 1, left - e * w[i], w, cur, out);
            e += 1;
        }
        cur[i] = 0;
    }
    rec(0, r, &w, &mut cur, &mut out);
    out
}

/// Monomials of the normal-form decoration given by `a`, with the binomial
/// ψ_h^c + (−ψ_{h'})^c at two-half-edge vertices (h the lower index).
pub fn normal_form_monomials(g: &PrestableGraph, a: &Assignment) -> Vec<(Decoration, i64)> {
    let adj = g.adjacency();
    let mut out = vec![(Decoration::trivial(g), 1i64)];
    for (v, hs) in adj.iter().enumerate() {
        let e = a[v];
        if e == 0 {
            continue;
        }
        match hs.len() {
            0 => {
                for (d, _) in out.iter_mut() {
                    d.kappa[v] = vec![2; e as usize];
                }
            }
            1 => {
                for (d, _) in out.iter_mut() {
                    d.psi[hs[0]] = e;
                }
            }
            2 => {
                let sign = if e % 2 == 1 { -1 } else { 1 };
                let mut next = Vec::with_capacity(out.len() * 2);
                for (d, c) in out {
                    let mut d1 = d.clone();
                    d1.psi[hs[0]] = e;
                    next.push((d1, c));
                    let mut d2 = d;
                    d2.psi[hs[1]] = e;
                    next.push((d2, c * sign));
                }
                out = next;
            }
            _ => unreachable!("no normal-form decoration on stable vertices"),
        }
    }
    out
}

pub fn normal_form_class(g: &PrestableGraph, a: &Assignment) -> TautClass {
    let mut c = TautClass::zero(g.num_legs());
    for (d, x) in normal_form_monomials(g, a) {
        c.add_term(DecoratedStratum::new(g.clone(), d), q(x));
    }
    c
}

/// Block label of a stratum: the graph with all edges between vertices of
/// valence ≥ 3 contracted, each remaining vertex colored by whether it came
/// from such vertices and by its decoration degree. Relations and basis
/// classes never mix blocks, so ranks can be computed blockwise.
pub fn block_key(s: &DecoratedStratum) -> Vec<u32> {
    let g = &s.graph;
    let nv = g.num_vertices();
    let stable: Vec<bool> = (0..nv).map(|v| g.valence(v) >= 3).collect();
    let deg: Vec<u32> = (0..nv).map(|v| s.decoration.degree_at(g, v)).collect();
    // contract stable-stable edges, tracking groups
    let mut cur = g.clone();
    let mut group: Vec<usize> = (0..nv).collect();
    loop {
        let e = cur.edges().into_iter().find(|&(h, j)| {
            let (a, b) = (cur.vertex_of(h), cur.vertex_of(j));
            group
                .iter()
                .enumerate()
                .any(|(v, &gv)| gv == a && stable[v])
                && group
                    .iter()
                    .enumerate()
                    .any(|(v, &gv)| gv == b && stable[v])
        });
        let Some((h, _)) = e else { break };
        let (next, map) = cur.contract_edge(h).expect("tree edge");
        for x in group.iter_mut() {
            *x = map.vertex_map[*x];
        }
        cur = next;
    }
    let mut vc = vec![Vec::new(); cur.num_vertices()];
    for v in 0..nv {
        let gv = group[v];
        if stable[v] {
            vc[gv] = vec![1];
        } else {
            vc[gv] = vec![0, deg[v]];
        }
    }
    let hc = vec![0; cur.num_half_edges()];
    let cf = canonical_form(&cur, &vc, &hc);
    let mut key = vec![s.ghost as u32, g.num_edges() as u32];
    key.extend(cf.code);
    key
}

#[derive(Clone, Debug)]
pub struct BasisElement {
    pub class: TautClass,
    pub graph: PrestableGraph,
    pub assignment: Assignment,
    pub block: Vec<u32>,
}

/// Normal-form classes, one per nonzero Aut-orbit, with lookup from any
/// monomial to (element index, coefficient of that monomial in the element).
#[derive(Clone, Debug)]
pub struct NormalFormBasis {
    pub n: usize,
    pub d: u32,
    pub elements: Vec<BasisElement>,
    index: HashMap<DecoratedStratum, (usize, Q)>,
}

impl NormalFormBasis {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn lookup(&self, s: &DecoratedStratum) -> Option<&(usize, Q)> {
        self.index.get(s)
    }

    /// Coordinates of a class in the span of the basis. Fails if a term is
    /// not a basis monomial.
    #[allow(clippy::result_large_err)]
    pub fn coordinates(&self, c: &TautClass) -> Result<Vec<(usize, Q)>, DecoratedStratum> {
        let mut coords: BTreeMap<usize, Q> = BTreeMap::new();
        for (s, x) in c.terms() {
            let (i, e) = self.index.get(s).ok_or_else(|| s.clone())?;
            coords.entry(*i).or_insert_with(|| x / e);
        }
        Ok(coords.into_iter().filter(|(_, x)| !x.is_zero()).collect())
    }
}

/// The normal-form basis of codimension `d` on `n` markings restricted to
/// the graphs allowed by `spec`.
pub fn enumerate_normal_form_basis(
    n: usize,
    d: u32,
    spec: &SubstackSpec,
) -> Result<NormalFormBasis, StrataError> {
    spec.validate(n, d as usize)?;
    Ok(normal_form_basis_unchecked(n, d, spec))
}

pub(crate) fn normal_form_basis_unchecked(
    n: usize,
    d: u32,
    spec: &SubstackSpec,
) -> NormalFormBasis {
    let mut elements = Vec::new();
    let mut index = HashMap::new();
    for p in 0..=d as usize {
        let graphs = enumerate_graphs(n, p);
        let per_graph: Vec<Vec<BasisElement>> = graphs
            .par_iter()
            .filter(|g| spec.allows(g))
            .map(|g| {
                let mut seen: HashSet<DecoratedStratum> = HashSet::new();
                let mut out = Vec::new();
                for a in assignments(g, d - p as u32) {
                    let class = normal_form_class(g, &a);
                    let Some((lead, _)) = class.terms().next() else {
                        continue;
                    };
                    if !seen.insert(lead.clone()) {
                        continue;
                    }
                    let block = block_key(lead);
                    out.push(BasisElement {
                        class,
                        graph: g.clone(),
                        assignment: a,
                        block,
                    });
                }
                out
            })
            .collect();
        for el in per_graph.into_iter().flatten() {
            let i = elements.len();
            for (s, c) in el.class.terms() {
                index.insert(s.clone(), (i, c.clone()));
            }
            elements.push(el);
        }
    }
    NormalFormBasis {
        n,
        d,
        elements,
        index,
    }
}

/// Ranks of the Chow groups of the open substack, codimensions 0..=max_d.
pub fn hilbert_coefficients(
    n: usize,
    spec: &SubstackSpec,
    max_d: u32,
) -> Result<Vec<usize>, StrataError> {
    spec.validate(n, max_d as usize)?;
    (0..=max_d)
        .map(|d| crate::relations::chow_rank(n, d, spec))
        .collect()
}
