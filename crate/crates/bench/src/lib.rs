//! Inputs shared by the benchmarks.

use prestable::graph::{enumerate_graphs, PrestableGraph};
use prestable::linalg::SparseRationalMatrix;
use prestable::relations::relation_system;
use prestable::strata::{SubstackSpec, TautClass};

/// Graphs with `n` markings and `p` edges, with vertices and half-edges
/// listed in reverse so canonicalization has work to do.
pub fn reversed_graphs(n: usize, p: usize) -> Vec<PrestableGraph> {
    enumerate_graphs(n, p)
        .iter()
        .map(|g| {
            let vo: Vec<usize> = (0..g.num_vertices()).rev().collect();
            let ho: Vec<usize> = (0..g.num_half_edges()).rev().collect();
            g.relabel(&vo, &ho)
        })
        .collect()
}

/// Relation matrix of codimension `d` with `n` markings.
pub fn relation_matrix(n: usize, d: u32) -> SparseRationalMatrix {
    relation_system(n, d, &SubstackSpec::All)
        .expect("relation system")
        .matrix()
}

/// Sum of the normal-form basis elements of codimension `d`.
pub fn basis_sum(n: usize, d: u32) -> TautClass {
    let sys = relation_system(n, d, &SubstackSpec::All).expect("relation system");
    let mut c = TautClass::zero(n);
    for el in &sys.basis.elements {
        c.add_class(&el.class);
    }
    c
}
