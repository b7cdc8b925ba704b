//! Prestable dual graphs of genus 0.
//!
//! A graph is stored as half-edges: each half-edge knows its vertex and its
//! partner under the involution. Fixed points of the involution are legs and
//! carry the marking labels `1..=n`.
//!
//! Canonical labeling uses rooted tree codes. The algorithms only ever see
//! trees, which makes the canonical form and the automorphism count
//! computable without search.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrestableGraph {
    genus: Vec<u32>,
    vertex_of: Vec<usize>,
    involution: Vec<usize>,
    legs: Vec<usize>,
}

/// Violated graph invariant, as reported by [`PrestableGraph::validate`].
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum Violation {
    #[error("graph has no vertices")]
    NoVertices,
    #[error("half-edge {0} references a missing vertex")]
    VertexOutOfRange(usize),
    #[error("involution is not an involution at half-edge {0}")]
    NotAnInvolution(usize),
    #[error("marking labels do not biject onto the fixed points of the involution")]
    LegLabels,
    #[error("graph is not connected")]
    Connectivity,
    #[error("genus condition fails: total genus {0}, expected 0")]
    GenusCondition(u32),
    #[error("half-edge {0} forms a self-edge")]
    SelfEdge(usize),
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    Invalid(#[from] Violation),
    #[error("half-edge {0} is not part of an edge")]
    NotAnEdge(usize),
    #[error("contracting a self-edge raises the genus")]
    SelfEdgeContraction,
    #[error("vertex {0} does not exist")]
    NoSuchVertex(usize),
    #[error("the two sides do not partition the half-edges at vertex {0}")]
    BadPartition(usize),
    #[error("inner graph has {inner} markings but the vertex has {outer} half-edges")]
    ArityMismatch { inner: usize, outer: usize },
    #[error("malformed graph JSON: {0}")]
    Json(String),
}

impl PrestableGraph {
    /// Builds a graph from raw parts without checking invariants.
    pub fn from_parts(
        genus: Vec<u32>,
        vertex_of: Vec<usize>,
        involution: Vec<usize>,
        legs: Vec<usize>,
    ) -> Self {
        PrestableGraph {
            genus,
            vertex_of,
            involution,
            legs,
        }
    }

    /// One vertex carrying the legs `1..=n`.
    pub fn trivial(n: usize) -> Self {
        PrestableGraph {
            genus: vec![0],
            vertex_of: vec![0; n],
            involution: (0..n).collect(),
            legs: (0..n).collect(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.genus.len()
    }

    pub fn num_half_edges(&self) -> usize {
        self.vertex_of.len()
    }

    pub fn num_legs(&self) -> usize {
        self.legs.len()
    }

    pub fn num_edges(&self) -> usize {
        (self.vertex_of.len() - self.legs.len()) / 2
    }

    pub fn genus(&self, v: usize) -> u32 {
        self.genus[v]
    }

    pub fn vertex_of(&self, h: usize) -> usize {
        self.vertex_of[h]
    }

    pub fn involution(&self, h: usize) -> usize {
        self.involution[h]
    }

    pub fn is_leg(&self, h: usize) -> bool {
        self.involution[h] == h
    }

    /// Half-edge carrying marking `label` (1-based).
    pub fn leg(&self, label: usize) -> usize {
        self.legs[label - 1]
    }

    pub fn legs(&self) -> &[usize] {
        &self.legs
    }

    /// Marking label of `h`, if it is a leg.
    pub fn leg_label(&self, h: usize) -> Option<usize> {
        if !self.is_leg(h) {
            return None;
        }
        self.legs.iter().position(|&x| x == h).map(|i| i + 1)
    }

    /// Per-half-edge marking label, 0 for edge half-edges.
    pub fn leg_labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_half_edges()];
        for (i, &h) in self.legs.iter().enumerate() {
            out[h] = i + 1;
        }
        out
    }

    /// Half-edges at each vertex in increasing index order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_vertices()];
        for (h, &v) in self.vertex_of.iter().enumerate() {
            adj[v].push(h);
        }
        adj
    }

    pub fn half_edges_at(&self, v: usize) -> Vec<usize> {
        (0..self.num_half_edges())
            .filter(|&h| self.vertex_of[h] == v)
            .collect()
    }

    pub fn valence(&self, v: usize) -> usize {
        self.vertex_of.iter().filter(|&&x| x == v).count()
    }

    /// Edges as pairs `(h, ι(h))` with `h < ι(h)`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_half_edges())
            .filter(|&h| self.involution[h] > h)
            .map(|h| (h, self.involution[h]))
            .collect()
    }

    pub fn is_stable(&self) -> bool {
        let mut val = vec![0usize; self.num_vertices()];
        for &v in &self.vertex_of {
            val[v] += 1;
        }
        val.iter().all(|&k| k >= 3)
    }

    /// Checks every invariant of a genus-0 prestable graph.
    pub fn validate(&self) -> Result<(), Violation> {
        let nv = self.genus.len();
        let nh = self.vertex_of.len();
        if nv == 0 {
            return Err(Violation::NoVertices);
        }
        if self.involution.len() != nh {
            return Err(Violation::NotAnInvolution(nh.min(self.involution.len())));
        }
        for h in 0..nh {
            if self.vertex_of[h] >= nv {
                return Err(Violation::VertexOutOfRange(h));
            }
            let j = self.involution[h];
            if j >= nh || self.involution[j] != h {
                return Err(Violation::NotAnInvolution(h));
            }
        }
        let mut seen = vec![false; nh];
        for &h in &self.legs {
            if h >= nh || seen[h] || self.involution[h] != h {
                return Err(Violation::LegLabels);
            }
            seen[h] = true;
        }
        if (0..nh).any(|h| self.involution[h] == h && !seen[h]) {
            return Err(Violation::LegLabels);
        }
        for h in 0..nh {
            let j = self.involution[h];
            if j != h && self.vertex_of[h] == self.vertex_of[j] {
                return Err(Violation::SelfEdge(h));
            }
        }
        // connectivity via union-find
        let mut parent: Vec<usize> = (0..nv).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut y = x;
            while p[y] != r {
                let next = p[y];
                p[y] = r;
                y = next;
            }
            r
        }
        let mut cycles = 0u32;
        for (h, j) in self.edges() {
            let a = find(&mut parent, self.vertex_of[h]);
            let b = find(&mut parent, self.vertex_of[j]);
            if a == b {
                cycles += 1;
            } else {
                parent[a] = b;
            }
        }
        let root = find(&mut parent, 0);
        if (0..nv).any(|v| find(&mut parent, v) != root) {
            return Err(Violation::Connectivity);
        }
        let total = self.genus.iter().sum::<u32>() + cycles;
        if total != 0 {
            return Err(Violation::GenusCondition(total));
        }
        Ok(())
    }

    /// The graph with vertex `i` taken from `vertex_order[i]` and half-edge
    /// `j` taken from `half_edge_order[j]`.
    pub fn relabel(&self, vertex_order: &[usize], half_edge_order: &[usize]) -> PrestableGraph {
        let mut vinv = vec![0; vertex_order.len()];
        for (i, &v) in vertex_order.iter().enumerate() {
            vinv[v] = i;
        }
        let mut hinv = vec![0; half_edge_order.len()];
        for (i, &h) in half_edge_order.iter().enumerate() {
            hinv[h] = i;
        }
        PrestableGraph {
            genus: vertex_order.iter().map(|&v| self.genus[v]).collect(),
            vertex_of: half_edge_order
                .iter()
                .map(|&h| vinv[self.vertex_of[h]])
                .collect(),
            involution: half_edge_order
                .iter()
                .map(|&h| hinv[self.involution[h]])
                .collect(),
            legs: self.legs.iter().map(|&h| hinv[h]).collect(),
        }
    }

    /// Contracts the edge containing half-edge `h`.
    pub fn contract_edge(&self, h: usize) -> Result<(PrestableGraph, Contraction), GraphError> {
        let j = self.involution[h];
        if j == h {
            return Err(GraphError::NotAnEdge(h));
        }
        let (a, b) = (self.vertex_of[h], self.vertex_of[j]);
        if a == b {
            return Err(GraphError::SelfEdgeContraction);
        }
        let (keep, gone) = (a.min(b), a.max(b));
        let vertex_map: Vec<usize> = (0..self.num_vertices())
            .map(|v| {
                let v = if v == gone { keep } else { v };
                if v > gone {
                    v - 1
                } else {
                    v
                }
            })
            .collect();
        let mut half_edge_map = vec![None; self.num_half_edges()];
        let mut next = 0;
        for (x, slot) in half_edge_map.iter_mut().enumerate() {
            if x != h && x != j {
                *slot = Some(next);
                next += 1;
            }
        }
        let mut genus: Vec<u32> = Vec::with_capacity(self.num_vertices() - 1);
        for v in 0..self.num_vertices() {
            if v != gone {
                genus.push(self.genus[v]);
            }
        }
        genus[vertex_map[keep]] += self.genus[gone];
        let mut vertex_of = vec![0; next];
        let mut involution = vec![0; next];
        for x in 0..self.num_half_edges() {
            if let Some(y) = half_edge_map[x] {
                vertex_of[y] = vertex_map[self.vertex_of[x]];
                involution[y] = half_edge_map[self.involution[x]].unwrap();
            }
        }
        let legs = self
            .legs
            .iter()
            .map(|&x| half_edge_map[x].unwrap())
            .collect();
        Ok((
            PrestableGraph {
                genus,
                vertex_of,
                involution,
                legs,
            },
            Contraction {
                vertex_map,
                half_edge_map,
            },
        ))
    }

    /// Contracts several edges, each given by one of its half-edges.
    pub fn contract_edges(
        &self,
        hs: &[usize],
    ) -> Result<(PrestableGraph, Contraction), GraphError> {
        let mut g = self.clone();
        let mut vertex_map: Vec<usize> = (0..self.num_vertices()).collect();
        let mut half_edge_map: Vec<Option<usize>> = (0..self.num_half_edges()).map(Some).collect();
        for &h in hs {
            let cur = half_edge_map[h].ok_or(GraphError::NotAnEdge(h))?;
            let (next, c) = g.contract_edge(cur)?;
            for x in vertex_map.iter_mut() {
                *x = c.vertex_map[*x];
            }
            for x in half_edge_map.iter_mut() {
                *x = x.and_then(|y| c.half_edge_map[y]);
            }
            g = next;
        }
        Ok((
            g,
            Contraction {
                vertex_map,
                half_edge_map,
            },
        ))
    }

    /// Drops the listed half-edges and vertices and renumbers the rest,
    /// preserving order. The involution and legs must already avoid them.
    pub(crate) fn compacted(
        &self,
        removed_h: &[usize],
        removed_v: &[usize],
    ) -> (PrestableGraph, Vec<Option<usize>>) {
        let mut hmap = vec![None; self.num_half_edges()];
        let mut next = 0;
        for (h, slot) in hmap.iter_mut().enumerate() {
            if !removed_h.contains(&h) {
                *slot = Some(next);
                next += 1;
            }
        }
        let mut vmap = vec![None; self.num_vertices()];
        let mut nextv = 0;
        for (v, slot) in vmap.iter_mut().enumerate() {
            if !removed_v.contains(&v) {
                *slot = Some(nextv);
                nextv += 1;
            }
        }
        let genus: Vec<_> = self
            .genus
            .iter()
            .zip(&vmap)
            .filter(|(_, m)| m.is_some())
            .map(|(g, _)| *g)
            .collect();
        let mut vertex_of = vec![0; next];
        let mut involution = vec![0; next];
        for h in 0..self.num_half_edges() {
            if let Some(y) = hmap[h] {
                vertex_of[y] = vmap[self.vertex_of[h]].expect("kept half-edge on removed vertex");
                involution[y] =
                    hmap[self.involution[h]].expect("kept half-edge paired with removed one");
            }
        }
        let legs = self
            .legs
            .iter()
            .map(|&h| hmap[h].expect("leg removed"))
            .collect();
        (
            PrestableGraph {
                genus,
                vertex_of,
                involution,
                legs,
            },
            hmap,
        )
    }

    /// Replaces `v` by two genus-0 vertices joined by a new edge. The first
    /// keeps index `v` and the half-edges `side1`; the second is appended and
    /// receives `side2`. The new half-edges are appended, first at `v`.
    pub fn split_vertex(
        &self,
        v: usize,
        side1: &[usize],
        side2: &[usize],
    ) -> Result<PrestableGraph, GraphError> {
        if v >= self.num_vertices() {
            return Err(GraphError::NoSuchVertex(v));
        }
        let mut all: Vec<usize> = side1.iter().chain(side2).copied().collect();
        all.sort_unstable();
        if all != self.half_edges_at(v) {
            return Err(GraphError::BadPartition(v));
        }
        let mut g = self.clone();
        let w = g.genus.len();
        g.genus[v] = 0;
        g.genus.push(0);
        for &h in side2 {
            g.vertex_of[h] = w;
        }
        let nh = g.vertex_of.len();
        g.vertex_of.extend([v, w]);
        g.involution.extend([nh + 1, nh]);
        Ok(g)
    }

    /// Replaces vertex `v` by `inner`, whose marking `i` is glued to the
    /// half-edge `matching[i - 1]` of `v`. Inner vertex 0 reuses index `v`,
    /// the others are appended; inner edge half-edges are appended.
    pub fn insert_graph_at_vertex(
        &self,
        v: usize,
        inner: &PrestableGraph,
        matching: &[usize],
    ) -> Result<(PrestableGraph, Insertion), GraphError> {
        if v >= self.num_vertices() {
            return Err(GraphError::NoSuchVertex(v));
        }
        let hv = self.half_edges_at(v);
        if inner.num_legs() != hv.len() || matching.len() != hv.len() {
            return Err(GraphError::ArityMismatch {
                inner: inner.num_legs(),
                outer: hv.len(),
            });
        }
        let mut sorted = matching.to_vec();
        sorted.sort_unstable();
        if sorted != hv {
            return Err(GraphError::BadPartition(v));
        }
        let mut g = self.clone();
        let mut vertex_map = Vec::with_capacity(inner.num_vertices());
        for u in 0..inner.num_vertices() {
            if u == 0 {
                g.genus[v] = inner.genus[0];
                vertex_map.push(v);
            } else {
                vertex_map.push(g.genus.len());
                g.genus.push(inner.genus[u]);
            }
        }
        let labels = inner.leg_labels();
        let mut half_edge_map = vec![0; inner.num_half_edges()];
        for x in 0..inner.num_half_edges() {
            if labels[x] > 0 {
                half_edge_map[x] = matching[labels[x] - 1];
            } else {
                half_edge_map[x] = g.vertex_of.len();
                g.vertex_of.push(0);
                g.involution.push(0);
            }
        }
        for x in 0..inner.num_half_edges() {
            let y = half_edge_map[x];
            g.vertex_of[y] = vertex_map[inner.vertex_of[x]];
            if labels[x] == 0 {
                g.involution[y] = half_edge_map[inner.involution[x]];
            }
        }
        Ok((
            g,
            Insertion {
                vertex_map,
                half_edge_map,
            },
        ))
    }

    /// Adds a new leg with label `n + 1` at vertex `v`; it is the last half-edge.
    pub fn add_leg(&self, v: usize) -> PrestableGraph {
        let mut g = self.clone();
        let h = g.vertex_of.len();
        g.vertex_of.push(v);
        g.involution.push(h);
        g.legs.push(h);
        g
    }

    /// Deletes the leg with the given label; higher labels shift down by one.
    /// Returns the old-to-new half-edge map.
    pub fn remove_leg(&self, label: usize) -> (PrestableGraph, Vec<Option<usize>>) {
        let h = self.leg(label);
        let map: Vec<Option<usize>> = (0..self.num_half_edges())
            .map(|x| match x.cmp(&h) {
                std::cmp::Ordering::Less => Some(x),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(x - 1),
            })
            .collect();
        let mut vertex_of = Vec::with_capacity(self.num_half_edges() - 1);
        let mut involution = Vec::with_capacity(self.num_half_edges() - 1);
        for x in 0..self.num_half_edges() {
            if x != h {
                vertex_of.push(self.vertex_of[x]);
                involution.push(map[self.involution[x]].unwrap());
            }
        }
        let legs = self
            .legs
            .iter()
            .filter(|&&x| x != h)
            .map(|&x| map[x].unwrap())
            .collect();
        (
            PrestableGraph {
                genus: self.genus.clone(),
                vertex_of,
                involution,
                legs,
            },
            map,
        )
    }

    /// Mutable access used by surgery in sibling modules.
    pub(crate) fn parts_mut(
        &mut self,
    ) -> (
        &mut Vec<u32>,
        &mut Vec<usize>,
        &mut Vec<usize>,
        &mut Vec<usize>,
    ) {
        (
            &mut self.genus,
            &mut self.vertex_of,
            &mut self.involution,
            &mut self.legs,
        )
    }

    pub fn to_json(&self) -> Value {
        let mut legs = Map::new();
        for (i, &h) in self.legs.iter().enumerate() {
            legs.insert((i + 1).to_string(), json!(h));
        }
        json!({
            "genus": self.genus,
            "halfedges": self.vertex_of,
            "involution": self.involution,
            "legs": Value::Object(legs),
        })
    }

    pub fn from_json(v: &Value) -> Result<PrestableGraph, GraphError> {
        let err = |s: &str| GraphError::Json(s.to_string());
        let list = |key: &str| -> Result<Vec<u64>, GraphError> {
            v.get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| err(&format!("missing array `{key}`")))?
                .iter()
                .map(|x| {
                    x.as_u64()
                        .ok_or_else(|| err(&format!("non-integer in `{key}`")))
                })
                .collect()
        };
        let genus = list("genus")?.into_iter().map(|x| x as u32).collect();
        let vertex_of = list("halfedges")?.into_iter().map(|x| x as usize).collect();
        let involution = list("involution")?
            .into_iter()
            .map(|x| x as usize)
            .collect();
        let legs_obj = v
            .get("legs")
            .and_then(Value::as_object)
            .ok_or_else(|| err("missing object `legs`"))?;
        let mut legs = vec![usize::MAX; legs_obj.len()];
        for (k, h) in legs_obj {
            let i: usize = k.parse().map_err(|_| err("leg labels must be integers"))?;
            if i == 0 || i > legs.len() || legs[i - 1] != usize::MAX {
                return Err(err("leg labels must be exactly 1..n"));
            }
            legs[i - 1] = h
                .as_u64()
                .ok_or_else(|| err("leg half-edge must be an integer"))?
                as usize;
        }
        Ok(PrestableGraph {
            genus,
            vertex_of,
            involution,
            legs,
        })
    }
}

impl fmt::Display for PrestableGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels = self.leg_labels();
        let adj = self.adjacency();
        let mut first = true;
        for (v, hs) in adj.iter().enumerate() {
            if !first {
                write!(f, " ")?;
            }
            first = false;
            write!(f, "v{v}[")?;
            let parts: Vec<String> = hs
                .iter()
                .map(|&h| {
                    if labels[h] > 0 {
                        labels[h].to_string()
                    } else {
                        format!("->v{}", self.vertex_of[self.involution[h]])
                    }
                })
                .collect();
            write!(f, "{}]", parts.join(","))?;
        }
        Ok(())
    }
}

/// Index bookkeeping for [`PrestableGraph::contract_edge`].
#[derive(Clone, Debug)]
pub struct Contraction {
    pub vertex_map: Vec<usize>,
    pub half_edge_map: Vec<Option<usize>>,
}

/// Index bookkeeping for [`PrestableGraph::insert_graph_at_vertex`]: where
/// each inner vertex and half-edge ended up.
#[derive(Clone, Debug)]
pub struct Insertion {
    pub vertex_map: Vec<usize>,
    pub half_edge_map: Vec<usize>,
}

/// Comparable encoding of an isomorphism class.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey(pub Vec<u8>);

impl CanonicalKey {
    pub fn from_code(code: &[u32]) -> Self {
        CanonicalKey(code.iter().flat_map(|x| x.to_be_bytes()).collect())
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Result of canonical labeling.
#[derive(Clone, Debug)]
pub struct CanonicalForm {
    pub code: Vec<u32>,
    /// Canonical position to original vertex.
    pub vertex_order: Vec<usize>,
    /// Canonical position to original half-edge.
    pub half_edge_order: Vec<usize>,
    pub aut_order: u128,
}

impl CanonicalForm {
    pub fn key(&self) -> CanonicalKey {
        CanonicalKey::from_code(&self.code)
    }

    /// Original-to-canonical maps.
    pub fn relabeling(&self) -> Relabeling {
        let mut vertex_map = vec![0; self.vertex_order.len()];
        for (i, &v) in self.vertex_order.iter().enumerate() {
            vertex_map[v] = i;
        }
        let mut half_edge_map = vec![0; self.half_edge_order.len()];
        for (i, &h) in self.half_edge_order.iter().enumerate() {
            half_edge_map[h] = i;
        }
        Relabeling {
            vertex_map,
            half_edge_map,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relabeling {
    pub vertex_map: Vec<usize>,
    pub half_edge_map: Vec<usize>,
}

/// Rooted codes of a colored tree, rooted at its center.
/// Pairs of corresponding half-edges.
type Matching = Vec<(usize, usize)>;

struct Rooting<'a> {
    g: &'a PrestableGraph,
    adj: Vec<Vec<usize>>,
    labels: Vec<usize>,
    vcolor: &'a [Vec<u32>],
    hcolor: &'a [u32],
    /// Per vertex: code of its subtree, legs sorted, children half-edges sorted by entry.
    code: Vec<Vec<u32>>,
    entry: Vec<Vec<u32>>,
    legs_sorted: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    parent: Vec<Option<usize>>,
    aut: Vec<u128>,
    /// One center, or two centers joined by the edge (h1, h2).
    roots: Roots,
}

#[derive(Clone, Copy, Debug)]
enum Roots {
    One(usize),
    Two(usize, usize),
}

fn factorial(k: usize) -> u128 {
    (1..=k as u128).product()
}

impl<'a> Rooting<'a> {
    fn new(g: &'a PrestableGraph, vcolor: &'a [Vec<u32>], hcolor: &'a [u32]) -> Self {
        let nv = g.num_vertices();
        let adj = g.adjacency();
        let labels = g.leg_labels();
        let mut r = Rooting {
            g,
            adj,
            labels,
            vcolor,
            hcolor,
            code: vec![Vec::new(); nv],
            entry: vec![Vec::new(); g.num_half_edges()],
            legs_sorted: vec![Vec::new(); nv],
            children: vec![Vec::new(); nv],
            parent: vec![None; nv],
            aut: vec![1; nv],
            roots: Roots::One(0),
        };
        r.roots = r.find_center();
        match r.roots {
            Roots::One(c) => r.compute(c, None),
            Roots::Two(h1, h2) => {
                r.compute(g.vertex_of(h1), Some(h1));
                r.compute(g.vertex_of(h2), Some(h2));
            }
        }
        r
    }

    fn find_center(&self) -> Roots {
        let g = self.g;
        let nv = g.num_vertices();
        let mut deg: Vec<usize> = (0..nv)
            .map(|v| self.adj[v].iter().filter(|&&h| !g.is_leg(h)).count())
            .collect();
        let mut removed = vec![false; nv];
        let mut layer: Vec<usize> = (0..nv).filter(|&v| deg[v] <= 1).collect();
        let mut remaining = nv;
        while remaining > 2 {
            let mut next = Vec::new();
            for &v in &layer {
                removed[v] = true;
                remaining -= 1;
            }
            for &v in &layer {
                for &h in &self.adj[v] {
                    if g.is_leg(h) {
                        continue;
                    }
                    let w = g.vertex_of(g.involution(h));
                    if !removed[w] {
                        deg[w] -= 1;
                        if deg[w] == 1 {
                            next.push(w);
                        }
                    }
                }
            }
            layer = next;
        }
        let left: Vec<usize> = (0..nv).filter(|&v| !removed[v]).collect();
        if left.len() == 1 {
            Roots::One(left[0])
        } else {
            let (a, b) = (left[0], left[1]);
            let h = *self.adj[a]
                .iter()
                .find(|&&h| !g.is_leg(h) && g.vertex_of(g.involution(h)) == b)
                .expect("centers are adjacent");
            Roots::Two(h, g.involution(h))
        }
    }

    fn compute(&mut self, v: usize, parent: Option<usize>) {
        let g = self.g;
        self.parent[v] = parent;
        let mut legs = Vec::new();
        let mut kids = Vec::new();
        for &h in &self.adj[v].clone() {
            if Some(h) == parent {
                continue;
            }
            if g.is_leg(h) {
                legs.push(h);
            } else {
                let j = g.involution(h);
                self.compute(g.vertex_of(j), Some(j));
                let mut e = vec![self.hcolor[h]];
                e.extend_from_slice(&self.code[g.vertex_of(j)]);
                self.entry[h] = e;
                kids.push(h);
            }
        }
        legs.sort_by_key(|&h| (self.labels[h], self.hcolor[h]));
        kids.sort_by(|&a, &b| self.entry[a].cmp(&self.entry[b]));
        let mut aut: u128 = 1;
        let mut i = 0;
        while i < kids.len() {
            let mut j = i;
            while j < kids.len() && self.entry[kids[j]] == self.entry[kids[i]] {
                aut = aut
                    .checked_mul(self.aut[g.vertex_of(g.involution(kids[j]))])
                    .expect("aut overflow");
                j += 1;
            }
            aut = aut.checked_mul(factorial(j - i)).expect("aut overflow");
            i = j;
        }
        let mut code = Vec::new();
        code.push(self.vcolor[v].len() as u32);
        code.extend_from_slice(&self.vcolor[v]);
        match parent {
            Some(p) => code.extend([1, self.hcolor[p]]),
            None => code.push(0),
        }
        code.push(legs.len() as u32);
        for &h in &legs {
            code.extend([self.labels[h] as u32, self.hcolor[h]]);
        }
        code.push(kids.len() as u32);
        for &h in &kids {
            code.extend_from_slice(&self.entry[h]);
        }
        self.code[v] = code;
        self.aut[v] = aut;
        self.legs_sorted[v] = legs;
        self.children[v] = kids;
    }

    /// Root sides in canonical order, each as (vertex, parent half-edge).
    fn sides(&self) -> Vec<(usize, Option<usize>)> {
        match self.roots {
            Roots::One(c) => vec![(c, None)],
            Roots::Two(h1, h2) => {
                let (a, b) = (self.g.vertex_of(h1), self.g.vertex_of(h2));
                if self.code[a] <= self.code[b] {
                    vec![(a, Some(h1)), (b, Some(h2))]
                } else {
                    vec![(b, Some(h2)), (a, Some(h1))]
                }
            }
        }
    }

    fn full_code(&self) -> Vec<u32> {
        let sides = self.sides();
        let mut code = vec![sides.len() as u32];
        for (v, _) in &sides {
            code.extend_from_slice(&self.code[*v]);
        }
        code
    }

    fn aut_order(&self) -> u128 {
        let sides = self.sides();
        let mut a: u128 = sides.iter().map(|(v, _)| self.aut[*v]).product();
        if sides.len() == 2 && self.code[sides[0].0] == self.code[sides[1].0] {
            a *= 2;
        }
        a
    }

    fn order(&self) -> (Vec<usize>, Vec<usize>) {
        let mut vs = Vec::new();
        let mut hs = Vec::new();
        for (v, _) in self.sides() {
            self.visit(v, &mut vs, &mut hs);
        }
        (vs, hs)
    }

    fn visit(&self, v: usize, vs: &mut Vec<usize>, hs: &mut Vec<usize>) {
        vs.push(v);
        if let Some(p) = self.parent[v] {
            hs.push(p);
        }
        hs.extend_from_slice(&self.legs_sorted[v]);
        hs.extend_from_slice(&self.children[v]);
        for &h in &self.children[v] {
            self.visit(self.g.vertex_of(self.g.involution(h)), vs, hs);
        }
    }

    /// All ways to map the subtree at `v` onto the subtree at `w` of `other`
    /// (codes must agree), as lists of half-edge pairs.
    fn match_subtrees(&self, v: usize, other: &Rooting, w: usize) -> Vec<Matching> {
        let mut base = Vec::new();
        if let (Some(p), Some(q)) = (self.parent[v], other.parent[w]) {
            base.push((p, q));
        }
        for (a, b) in self.legs_sorted[v].iter().zip(&other.legs_sorted[w]) {
            base.push((*a, *b));
        }
        let mut partial = vec![base];
        let kids_a = &self.children[v];
        let kids_b = &other.children[w];
        let mut i = 0;
        while i < kids_a.len() {
            let mut j = i;
            while j < kids_a.len() && self.entry[kids_a[j]] == self.entry[kids_a[i]] {
                j += 1;
            }
            // children i..j are interchangeable; try every bijection
            let group_a = &kids_a[i..j];
            let group_b = &kids_b[i..j];
            let mut sub: Vec<Vec<Vec<Matching>>> = Vec::new();
            for &ha in group_a {
                let row = group_b
                    .iter()
                    .map(|&hb| {
                        let ca = self.g.vertex_of(self.g.involution(ha));
                        let cb = other.g.vertex_of(other.g.involution(hb));
                        let mut maps = self.match_subtrees(ca, other, cb);
                        for m in maps.iter_mut() {
                            m.push((ha, hb));
                        }
                        maps
                    })
                    .collect();
                sub.push(row);
            }
            let mut next = Vec::new();
            for perm in permutations(j - i) {
                let mut combos: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
                for (x, &y) in perm.iter().enumerate() {
                    let opts = &sub[x][y];
                    let mut c2 = Vec::with_capacity(combos.len() * opts.len());
                    for c in &combos {
                        for o in opts {
                            let mut z = c.clone();
                            z.extend_from_slice(o);
                            c2.push(z);
                        }
                    }
                    combos = c2;
                }
                for p in &partial {
                    for c in &combos {
                        let mut z = p.clone();
                        z.extend_from_slice(c);
                        next.push(z);
                    }
                }
            }
            partial = next;
            i = j;
        }
        partial
    }
}

pub(crate) fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    fn rec(i: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for j in i..cur.len() {
            cur.swap(i, j);
            rec(i + 1, cur, out);
            cur.swap(i, j);
        }
    }
    rec(0, &mut cur, &mut out);
    out
}

/// Canonical form of a tree with vertex colors (token lists) and half-edge
/// colors. Leg labels are always part of the color.
pub fn canonical_form(g: &PrestableGraph, vcolor: &[Vec<u32>], hcolor: &[u32]) -> CanonicalForm {
    let r = Rooting::new(g, vcolor, hcolor);
    let (vertex_order, half_edge_order) = r.order();
    CanonicalForm {
        code: r.full_code(),
        vertex_order,
        half_edge_order,
        aut_order: r.aut_order(),
    }
}

/// Every color-preserving isomorphism `a -> b` fixing marking labels, each
/// given as a half-edge map (vertices follow).
pub fn isomorphisms(
    a: &PrestableGraph,
    acolor: (&[Vec<u32>], &[u32]),
    b: &PrestableGraph,
    bcolor: (&[Vec<u32>], &[u32]),
) -> Vec<Vec<usize>> {
    if a.num_half_edges() != b.num_half_edges() || a.num_vertices() != b.num_vertices() {
        return Vec::new();
    }
    let ra = Rooting::new(a, acolor.0, acolor.1);
    let rb = Rooting::new(b, bcolor.0, bcolor.1);
    if ra.full_code() != rb.full_code() {
        return Vec::new();
    }
    let sa = ra.sides();
    let sb = rb.sides();
    let mut raw = Vec::new();
    if sa.len() == 1 {
        raw = ra.match_subtrees(sa[0].0, &rb, sb[0].0);
    } else {
        let pairings: Vec<[usize; 2]> = if ra.code[sa[0].0] == ra.code[sa[1].0] {
            vec![[0, 1], [1, 0]]
        } else {
            vec![[0, 1]]
        };
        for p in pairings {
            let m0 = ra.match_subtrees(sa[0].0, &rb, sb[p[0]].0);
            let m1 = ra.match_subtrees(sa[1].0, &rb, sb[p[1]].0);
            for x in &m0 {
                for y in &m1 {
                    let mut z = x.clone();
                    z.extend_from_slice(y);
                    raw.push(z);
                }
            }
        }
    }
    raw.into_iter()
        .map(|pairs| {
            let mut m = vec![usize::MAX; a.num_half_edges()];
            for (x, y) in pairs {
                m[x] = y;
            }
            debug_assert!(m.iter().all(|&x| x != usize::MAX));
            m
        })
        .collect()
}

/// Plain coloring: vertex genus only, no half-edge decoration.
pub fn plain_colors(g: &PrestableGraph) -> (Vec<Vec<u32>>, Vec<u32>) {
    (
        (0..g.num_vertices()).map(|v| vec![g.genus(v)]).collect(),
        vec![0; g.num_half_edges()],
    )
}

/// Canonical representative of an undecorated graph.
pub fn canonical_graph(g: &PrestableGraph) -> (PrestableGraph, CanonicalForm) {
    let (vc, hc) = plain_colors(g);
    let cf = canonical_form(g, &vc, &hc);
    (g.relabel(&cf.vertex_order, &cf.half_edge_order), cf)
}

/// Canonical key, relabeling onto the canonical representative and |Aut|
/// of a graph with optional decoration.
pub fn canonicalize(
    g: &PrestableGraph,
    d: Option<&crate::strata::Decoration>,
) -> Result<(CanonicalKey, Relabeling, u128), GraphError> {
    g.validate()?;
    let cf = match d {
        Some(d) => {
            let (vc, hc) = d.colors(g);
            canonical_form(g, &vc, &hc)
        }
        None => {
            let (vc, hc) = plain_colors(g);
            canonical_form(g, &vc, &hc)
        }
    };
    Ok((cf.key(), cf.relabeling(), cf.aut_order))
}

type GraphCache = Mutex<HashMap<(usize, usize), Arc<Vec<PrestableGraph>>>>;

fn graph_cache() -> &'static GraphCache {
    static CACHE: OnceLock<GraphCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// All genus-0 prestable graphs with `n` markings and `p` edges, one
/// canonical representative per isomorphism class, sorted by key.
pub fn enumerate_graphs(n: usize, p: usize) -> Arc<Vec<PrestableGraph>> {
    if let Some(v) = graph_cache().lock().unwrap().get(&(n, p)) {
        return v.clone();
    }
    let result = if p == 0 {
        vec![PrestableGraph::trivial(n)]
    } else {
        let prev = enumerate_graphs(n, p - 1);
        let mut found: HashMap<Vec<u32>, PrestableGraph> = HashMap::new();
        for g in prev.iter() {
            for (v, hs) in g.adjacency().iter().enumerate() {
                // the first half-edge (if any) stays on side 1 to halve the work
                let k = hs.len();
                let free = k.saturating_sub(1);
                for mask in 0u64..(1u64 << free) {
                    let mut s1 = Vec::new();
                    let mut s2 = Vec::new();
                    for (i, &h) in hs.iter().enumerate() {
                        if i > 0 && mask >> (i - 1) & 1 == 1 {
                            s2.push(h);
                        } else {
                            s1.push(h);
                        }
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
    graph_cache().lock().unwrap().insert((n, p), arc.clone());
    arc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{brute_count, brute_isos, build, random_tree, shuffled};
    use proptest::prelude::*;

    #[test]
    fn validate_examples() {
        assert!(PrestableGraph::trivial(3).validate().is_ok());
        assert!(build(2, &[(0, 1)], &[]).validate().is_ok());
        let self_edge =
            PrestableGraph::from_parts(vec![0, 0], vec![0, 1, 0, 0], vec![1, 0, 3, 2], vec![]);
        assert_eq!(self_edge.validate(), Err(Violation::SelfEdge(2)));
        assert_eq!(build(2, &[], &[]).validate(), Err(Violation::Connectivity));
        let g = PrestableGraph::from_parts(vec![1], vec![0], vec![0], vec![0]);
        assert_eq!(g.validate(), Err(Violation::GenusCondition(1)));
        let bad = PrestableGraph::from_parts(vec![0], vec![0, 0], vec![0, 1], vec![0]);
        assert_eq!(bad.validate(), Err(Violation::LegLabels));
    }

    #[test]
    fn automorphism_examples() {
        let one_edge = build(2, &[(0, 1)], &[]);
        assert_eq!(canonicalize(&one_edge, None).unwrap().2, 2);
        let chain = build(3, &[(0, 1), (1, 2)], &[]);
        assert_eq!(canonicalize(&chain, None).unwrap().2, 2);
        assert_eq!(brute_isos(&chain, &chain), 2);
        let split = build(2, &[(0, 1)], &[0, 1]);
        assert_eq!(canonicalize(&split, None).unwrap().2, 1);
        let star = build(4, &[(0, 1), (0, 2), (0, 3)], &[]);
        assert_eq!(canonicalize(&star, None).unwrap().2, 6);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_graphs(0, 1).len(), 1);
        assert_eq!(enumerate_graphs(4, 1).len(), 8);
        assert_eq!(enumerate_graphs(0, 3).len(), 2);
        for (n, p) in [
            (0, 0),
            (0, 2),
            (1, 1),
            (1, 2),
            (2, 2),
            (3, 1),
            (2, 3),
            (0, 4),
            (3, 2),
            (1, 3),
            (0, 5),
            (1, 4),
        ] {
            assert_eq!(
                enumerate_graphs(n, p).len(),
                brute_count(n, p),
                "n={n} p={p}"
            );
        }
    }

    #[test]
    fn enumerated_graphs_are_valid_and_distinct() {
        for (n, p) in [(0, 4), (3, 3), (5, 2)] {
            let gs = enumerate_graphs(n, p);
            let mut keys: Vec<CanonicalKey> = gs
                .iter()
                .map(|g| canonicalize(g, None).unwrap().0)
                .collect();
            for g in gs.iter() {
                g.validate().unwrap();
                assert_eq!(g.num_edges(), p);
                assert_eq!(g.num_vertices(), p + 1);
            }
            keys.sort();
            keys.dedup();
            assert_eq!(keys.len(), gs.len());
            // contracting any edge lands in the previous list
            let prev: Vec<CanonicalKey> = enumerate_graphs(n, p - 1)
                .iter()
                .map(|g| canonicalize(g, None).unwrap().0)
                .collect();
            for g in gs.iter() {
                for (h, _) in g.edges() {
                    let (c, _) = g.contract_edge(h).unwrap();
                    assert!(prev.contains(&canonicalize(&c, None).unwrap().0));
                }
            }
        }
    }

    #[test]
    fn contraction_examples() {
        let chain = build(3, &[(0, 1), (1, 2)], &[]);
        let one_edge_key = canonicalize(&build(2, &[(0, 1)], &[]), None).unwrap().0;
        for (h, _) in chain.edges() {
            let (c, _) = chain.contract_edge(h).unwrap();
            assert_eq!(canonicalize(&c, None).unwrap().0, one_edge_key);
        }
        let (c, _) = build(2, &[(0, 1)], &[]).contract_edge(0).unwrap();
        assert_eq!(
            canonicalize(&c, None).unwrap().0,
            canonicalize(&PrestableGraph::trivial(0), None).unwrap().0
        );
        let star = build(4, &[(0, 1), (0, 2), (0, 3)], &[]);
        let (c, _) = star.contract_edge(0).unwrap();
        assert_eq!(brute_isos(&c, &chain), 2);
        assert!(matches!(
            build(1, &[], &[0]).contract_edge(0),
            Err(GraphError::NotAnEdge(0))
        ));
    }

    #[test]
    fn split_examples() {
        let t = PrestableGraph::trivial(4);
        let s = t.split_vertex(0, &[0, 1], &[2, 3]).unwrap();
        assert!(brute_isos(&s, &build(2, &[(0, 1)], &[0, 0, 1, 1])) > 0);
        let one = build(2, &[(0, 1)], &[]);
        let s = one.split_vertex(0, &[0], &[]).unwrap();
        assert!(brute_isos(&s, &build(3, &[(0, 1), (1, 2)], &[])) > 0);
        let star = build(4, &[(0, 1), (0, 2), (0, 3)], &[]);
        let s = star.split_vertex(0, &[0, 2], &[4]).unwrap();
        let key = canonicalize(&s, None).unwrap().0;
        assert!(enumerate_graphs(0, 4)
            .iter()
            .any(|g| canonicalize(g, None).unwrap().0 == key));
        assert!(t.split_vertex(0, &[0], &[1]).is_err());
    }

    #[test]
    fn insertion_examples() {
        let outer = build(2, &[(0, 1)], &[0, 0, 1, 1, 1]);
        let hv = outer.half_edges_at(1);
        let (same, _) = outer
            .insert_graph_at_vertex(1, &PrestableGraph::trivial(4), &hv)
            .unwrap();
        assert_eq!(same, outer);
        let inner = build(2, &[(0, 1)], &[0, 0, 1, 1]);
        let (g, _) = outer.insert_graph_at_vertex(1, &inner, &hv).unwrap();
        let split = outer.split_vertex(1, &hv[..2], &hv[2..]).unwrap();
        assert!(brute_isos(&g, &split) > 0);
        let chain = build(3, &[(0, 1), (1, 2)], &[0, 1, 2, 2]);
        let (g, _) = outer.insert_graph_at_vertex(1, &chain, &hv).unwrap();
        g.validate().unwrap();
        let key = canonicalize(&g, None).unwrap().0;
        assert!(enumerate_graphs(5, 3)
            .iter()
            .any(|x| canonicalize(x, None).unwrap().0 == key));
        assert!(outer
            .insert_graph_at_vertex(1, &PrestableGraph::trivial(3), &hv[..3])
            .is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = build(3, &[(0, 1), (1, 2)], &[0, 2, 2]);
        let v = g.to_json();
        assert_eq!(PrestableGraph::from_json(&v).unwrap(), g);
        let key = canonicalize(&g, None).unwrap().0;
        assert!(key
            .to_hex()
            .chars()
            .all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    #[test]
    fn isomorphism_lists_match_brute_force() {
        for (n, p) in [(0, 3), (2, 2), (1, 3), (4, 1)] {
            for g in enumerate_graphs(n, p).iter() {
                let (vc, hc) = plain_colors(g);
                let isos = isomorphisms(g, (&vc, &hc), g, (&vc, &hc));
                assert_eq!(isos.len(), brute_isos(g, g));
                assert_eq!(isos.len() as u128, canonicalize(g, None).unwrap().2);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn key_invariant_under_relabeling(gseed in any::<u64>(), seed in any::<u64>()) {
            let g = &random_tree(gseed);
            prop_assert!(g.num_half_edges() <= 12);
            let h = shuffled(g, seed);
            prop_assert!(h.validate().is_ok());
            let (k1, _, a1) = canonicalize(g, None).unwrap();
            let (k2, r2, a2) = canonicalize(&h, None).unwrap();
            prop_assert_eq!(k1, k2.clone());
            prop_assert_eq!(a1, a2);
            // the relabeling lands on the canonical representative
            let mut vo = vec![0; r2.vertex_map.len()];
            for (v, &i) in r2.vertex_map.iter().enumerate() { vo[i] = v; }
            let mut ho = vec![0; r2.half_edge_map.len()];
            for (x, &i) in r2.half_edge_map.iter().enumerate() { ho[i] = x; }
            let canon = h.relabel(&vo, &ho);
            prop_assert_eq!(&canon, &canonical_graph(g).0);
            // idempotence
            prop_assert_eq!(canonicalize(&canon, None).unwrap().0, k2);
        }

        #[test]
        fn aut_matches_brute_force_small(idx in 0usize..1000) {
            let pool: Vec<PrestableGraph> = [(0usize, 1usize), (0, 2), (0, 3), (1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (4, 1)]
                .iter().flat_map(|&(n, p)| enumerate_graphs(n, p).iter().cloned().collect::<Vec<_>>()).collect();
            let g = &pool[idx % pool.len()];
            prop_assert_eq!(canonicalize(g, None).unwrap().2, brute_isos(g, g) as u128);
        }
    }
}
