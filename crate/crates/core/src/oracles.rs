//! Brute-force reference implementations used to check the fast
//! algorithms. Compiled for tests and with the `oracles` feature.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus::{combinations, poly_mul, pull_decoration};
use crate::graph::{
    canonical_graph, enumerate_graphs, isomorphisms, permutations, plain_colors, Contraction,
    PrestableGraph,
};
use crate::strata::{q, DecoratedStratum, Decoration, TautClass, Q};

/// Builds a genus-0 graph from an edge list between vertices and the
/// vertex of each marking.
pub fn build(nv: usize, edges: &[(usize, usize)], legs: &[usize]) -> PrestableGraph {
    let mut vertex_of = Vec::new();
    let mut involution = Vec::new();
    let mut leg_h = Vec::new();
    for &v in legs {
        leg_h.push(vertex_of.len());
        involution.push(vertex_of.len());
        vertex_of.push(v);
    }
    for &(a, b) in edges {
        let h = vertex_of.len();
        vertex_of.extend([a, b]);
        involution.extend([h + 1, h]);
    }
    PrestableGraph::from_parts(vec![0; nv], vertex_of, involution, leg_h)
}

/// Oracle: brute-force isomorphism count over all vertex permutations
/// and compatible half-edge bijections.
pub fn brute_isos(a: &PrestableGraph, b: &PrestableGraph) -> usize {
    if a.num_vertices() != b.num_vertices() || a.num_half_edges() != b.num_half_edges() {
        return 0;
    }
    // trees have no multiple edges, so an isomorphism is fixed by its
    // vertex map
    let edge_set = |g: &PrestableGraph, vm: &[usize]| {
        let mut e: Vec<(usize, usize)> = g
            .edges()
            .iter()
            .map(|&(x, y)| {
                let (p, q) = (vm[g.vertex_of(x)], vm[g.vertex_of(y)]);
                (p.min(q), p.max(q))
            })
            .collect();
        e.sort_unstable();
        e
    };
    let ident: Vec<usize> = (0..b.num_vertices()).collect();
    let target = edge_set(b, &ident);
    permutations(a.num_vertices())
        .into_iter()
        .filter(|vm| {
            (1..=a.num_legs()).all(|i| vm[a.vertex_of(a.leg(i))] == b.vertex_of(b.leg(i)))
                && edge_set(a, vm) == target
        })
        .count()
}

/// Oracle: all labeled trees via Prüfer codes, legs placed arbitrarily,
/// then classes counted by brute-force isomorphism.
pub fn brute_count(n: usize, p: usize) -> usize {
    let nv = p + 1;
    let mut trees: Vec<Vec<(usize, usize)>> = Vec::new();
    if nv == 1 {
        trees.push(vec![]);
    } else if nv == 2 {
        trees.push(vec![(0, 1)]);
    } else {
        let total = nv.pow((nv - 2) as u32);
        for code in 0..total {
            let mut seq = Vec::new();
            let mut c = code;
            for _ in 0..nv - 2 {
                seq.push(c % nv);
                c /= nv;
            }
            let mut deg = vec![1; nv];
            for &x in &seq {
                deg[x] += 1;
            }
            let mut edges = Vec::new();
            for &x in &seq {
                let leaf = (0..nv).find(|&v| deg[v] == 1).unwrap();
                edges.push((leaf, x));
                deg[leaf] -= 1;
                deg[x] -= 1;
            }
            let rest: Vec<usize> = (0..nv).filter(|&v| deg[v] == 1).collect();
            edges.push((rest[0], rest[1]));
            trees.push(edges);
        }
    }
    let mut reps: Vec<PrestableGraph> = Vec::new();
    for t in &trees {
        for la in 0..nv.pow(n as u32) {
            let mut legs = Vec::new();
            let mut c = la;
            for _ in 0..n {
                legs.push(c % nv);
                c /= nv;
            }
            let g = build(nv, t, &legs);
            if !reps.iter().any(|r| brute_isos(r, &g) > 0) {
                reps.push(g);
            }
        }
    }
    reps.len()
}

/// Relabels vertices and half-edges by a seeded random permutation.
pub fn shuffled(g: &PrestableGraph, seed: u64) -> PrestableGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vo: Vec<usize> = (0..g.num_vertices()).collect();
    let mut ho: Vec<usize> = (0..g.num_half_edges()).collect();
    vo.shuffle(&mut rng);
    ho.shuffle(&mut rng);
    g.relabel(&vo, &ho)
}

/// Random genus-0 tree with at most 12 half-edges.
pub fn random_tree(seed: u64) -> PrestableGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nv = rng.gen_range(1..=6);
    let edges: Vec<(usize, usize)> = (1..nv).map(|v| (rng.gen_range(0..v), v)).collect();
    let n = rng.gen_range(0..=12 - 2 * (nv - 1));
    let legs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..nv)).collect();
    build(nv, &edges, &legs)
}

/// Rank by fraction-free (Bareiss) elimination on a dense matrix.
pub fn bareiss_rank(m: &[Vec<BigRational>]) -> usize {
    // Oracle: fraction-free elimination on cleared denominators.
    let mut a: Vec<Vec<BigInt>> = m
        .iter()
        .map(|r| {
            let l = r.iter().fold(BigInt::one(), |l, x| l.lcm(x.denom()));
            r.iter().map(|x| x.numer() * (&l / x.denom())).collect()
        })
        .collect();
    let ncols = a.first().map_or(0, |r| r.len());
    let mut rank = 0;
    let mut prev = BigInt::one();
    for c in 0..ncols {
        let Some(p) = (rank..a.len()).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        for i in rank + 1..a.len() {
            for j in c + 1..ncols {
                let v = &a[rank][c] * &a[i][j] - &a[i][c] * &a[rank][j];
                a[i][j] = v / &prev;
            }
            a[i][c] = BigInt::zero();
        }
        prev = a[rank][c].clone();
        rank += 1;
    }
    rank
}

/// Random decorated stratum with at most `max_edges` edges and decoration
/// degree at most `max_deg`.
pub fn random_stratum(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_edges: usize,
    max_deg: u32,
) -> DecoratedStratum {
    let p = rng.gen_range(0..=max_edges);
    let graphs = enumerate_graphs(n, p);
    let g = graphs[rng.gen_range(0..graphs.len())].clone();
    let mut d = Decoration::trivial(&g);
    let deg = rng.gen_range(0..=max_deg);
    for _ in 0..deg {
        if rng.gen_bool(0.7) && g.num_half_edges() > 0 {
            let h = rng.gen_range(0..g.num_half_edges());
            d.psi[h] += 1;
        } else {
            let v = rng.gen_range(0..g.num_vertices());
            d.kappa[v].push(1);
        }
    }
    DecoratedStratum::new(g, d)
}

/// Sum of one or two random strata with small integer coefficients.
pub fn random_class(rng: &mut ChaCha8Rng, n: usize, max_edges: usize, max_deg: u32) -> TautClass {
    let mut c = TautClass::zero(n);
    for _ in 0..rng.gen_range(1..=2) {
        c.add_term(
            random_stratum(rng, n, max_edges, max_deg),
            q(rng.gen_range(-3..=3)),
        );
    }
    c
}

/// Oracle: generic structures counted over all graphs Γ, all contraction
/// sets onto A and B and all isomorphisms, divided by |Aut Γ|.
pub fn brute_product(a: &DecoratedStratum, b: &DecoratedStratum) -> TautClass {
    let n = a.n();
    let (ea, eb) = (a.graph.num_edges(), b.graph.num_edges());
    let mut out = TautClass::zero(n);
    for p in ea.max(eb)..=ea + eb {
        for g in enumerate_graphs(n, p).iter() {
            let (_, cf) = canonical_graph(g);
            let aut = Q::from_integer(BigInt::from(cf.aut_order));
            let edges: Vec<usize> = g.edges().iter().map(|e| e.0).collect();
            for ta in combinations(&edges, p - ea) {
                for tb in combinations(&edges, p - eb) {
                    if ta.iter().any(|h| tb.contains(h)) {
                        continue;
                    }
                    let (qa, ca) = g.contract_edges(&ta).unwrap();
                    let (qb, cb) = g.contract_edges(&tb).unwrap();
                    let (va, ha) = plain_colors(&qa);
                    let (vb, hb) = plain_colors(&qb);
                    let (vga, hga) = plain_colors(&a.graph);
                    let (vgb, hgb) = plain_colors(&b.graph);
                    for fa in isomorphisms(&a.graph, (&vga, &hga), &qa, (&va, &ha)) {
                        for fb in isomorphisms(&b.graph, (&vgb, &hgb), &qb, (&vb, &hb)) {
                            // A half-edge -> Γ half-edge
                            let back = |c: &Contraction, f: &[usize], h: usize| {
                                (0..g.num_half_edges())
                                    .find(|&x| c.half_edge_map[x] == Some(f[h]))
                                    .unwrap()
                            };
                            let a_he: Vec<usize> = (0..a.graph.num_half_edges())
                                .map(|h| back(&ca, &fa, h))
                                .collect();
                            let b_he: Vec<usize> = (0..b.graph.num_half_edges())
                                .map(|h| back(&cb, &fb, h))
                                .collect();
                            let pre = |c: &Contraction,
                                       src: &PrestableGraph,
                                       f: &[usize],
                                       qg: &PrestableGraph| {
                                let mut vmap = vec![0usize; src.num_vertices()];
                                for h in 0..src.num_half_edges() {
                                    vmap[src.vertex_of(h)] = qg.vertex_of(f[h]);
                                }
                                (0..src.num_vertices())
                                    .map(|v| {
                                        (0..g.num_vertices())
                                            .filter(|&w| c.vertex_map[w] == vmap[v])
                                            .collect::<Vec<_>>()
                                    })
                                    .collect::<Vec<_>>()
                            };
                            let a_pre = pre(&ca, &a.graph, &fa, &qa);
                            let b_pre = pre(&cb, &b.graph, &fb, &qb);
                            let pa = pull_decoration(&a.decoration, &a_he, &a_pre, g);
                            let pb = pull_decoration(&b.decoration, &b_he, &b_pre, g);
                            let mut poly = poly_mul(&pa, &pb);
                            for &(x, y) in &g.edges() {
                                if !ta.contains(&x) && !tb.contains(&x) {
                                    let mut ex = Decoration::trivial(g);
                                    ex.psi[x] = 1;
                                    let mut ey = Decoration::trivial(g);
                                    ey.psi[y] = 1;
                                    poly = poly_mul(&poly, &vec![(ex, -q(1)), (ey, -q(1))]);
                                }
                            }
                            for (d, c) in poly {
                                out.add_term(DecoratedStratum::new(g.clone(), d), c / &aut);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
