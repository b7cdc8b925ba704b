use super::*;
use crate::oracles::{brute_product, build, random_class, random_stratum};
use crate::relations::is_zero;
use crate::strata::{enumerate_normal_form_basis, SubstackSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn psi_class(n: usize, i: usize, e: u32) -> TautClass {
    let psi: Vec<u32> = (1..=n).map(|x| if x == i { e } else { 0 }).collect();
    TautClass::from_stratum(local_stratum(&psi, &[]))
}

fn kappa_class(n: usize, a: u32) -> TautClass {
    TautClass::from_stratum(local_stratum(&vec![0; n], &[a]))
}

fn divisor(n: usize, side: &[usize]) -> TautClass {
    TautClass::from_stratum(DecoratedStratum::plain(two_vertex_graph(n, side)))
}

fn ghost_divisor(n: usize, i: usize) -> TautClass {
    section_divisor(n, i).unwrap()
}

fn zero_mod_relations(c: &TautClass) -> bool {
    let mut by_deg: HashMap<u32, TautClass> = HashMap::new();
    for (s, x) in c.terms() {
        by_deg
            .entry(s.codim())
            .or_insert_with(|| TautClass::zero(c.n()))
            .add_canonical(s.clone(), x.clone());
    }
    by_deg
        .values()
        .all(|p| is_zero(p, &SubstackSpec::All).unwrap())
}

#[test]
fn gluing_pushforward_examples() {
    let g = two_vertex_graph(4, &[1, 2]);
    let one =
        gluing_pushforward(&g, &[TautClass::fundamental(3), TautClass::fundamental(3)]).unwrap();
    assert_eq!(one, divisor(4, &[1, 2]));
    // ψ on the edge side of vertex 0 (its third half-edge)
    let c = gluing_pushforward(&g, &[psi_class(3, 3, 1), TautClass::fundamental(3)]).unwrap();
    let mut d = Decoration::trivial(&g);
    d.psi[4] = 1;
    assert_eq!(
        c,
        TautClass::from_stratum(DecoratedStratum::new(g.clone(), d))
    );
    // gluing a divisor into a vertex adds an edge
    let c = gluing_pushforward(&g, &[divisor(3, &[1]), TautClass::fundamental(3)]).unwrap();
    assert_eq!(c.terms().next().unwrap().0.graph.num_edges(), 2);
    assert!(gluing_pushforward(&g, &[TautClass::fundamental(3)]).is_err());
    assert!(
        gluing_pushforward(&g, &[TautClass::fundamental(2), TautClass::fundamental(3)]).is_err()
    );
}

#[test]
fn divisor_square() {
    // D² = −D·(ψ_h + ψ_h') + 2·(chain through a middle vertex)
    let d = divisor(4, &[1, 2]);
    let sq = product(&d, &d).unwrap();
    let g = two_vertex_graph(4, &[1, 2]);
    let mut expected = TautClass::zero(4);
    for h in [4, 5] {
        let mut dec = Decoration::trivial(&g);
        dec.psi[h] = 1;
        expected.add_term(DecoratedStratum::new(g.clone(), dec), -q(1));
    }
    let chain = build(3, &[(0, 1), (1, 2)], &[0, 0, 2, 2]);
    expected.add_term(DecoratedStratum::plain(chain), q(2));
    assert_eq!(sq, expected);
}

#[test]
fn product_with_fundamental_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.gen_range(0..=4);
        let x = random_class(&mut rng, n, 2, 2);
        assert_eq!(product(&x, &TautClass::fundamental(n)).unwrap(), x);
        assert_eq!(product(&TautClass::fundamental(n), &x).unwrap(), x);
    }
}

#[test]
fn product_commutative_and_associative() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut pairs = 0;
    for _ in 0..60 {
        let n = rng.gen_range(0..=4);
        let x = random_class(&mut rng, n, 2, 1);
        let y = random_class(&mut rng, n, 2, 1);
        assert_eq!(product(&x, &y).unwrap(), product(&y, &x).unwrap());
        pairs += 1;
    }
    assert!(pairs >= 50);
    for _ in 0..12 {
        let n = rng.gen_range(1..=4);
        let x = random_class(&mut rng, n, 1, 1);
        let y = random_class(&mut rng, n, 1, 1);
        let z = random_class(&mut rng, n, 1, 1);
        let l = product(&product(&x, &y).unwrap(), &z).unwrap();
        let r = product(&x, &product(&y, &z).unwrap()).unwrap();
        assert_eq!(l, r);
    }
}

#[test]
fn product_matches_brute_force_structures() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..25 {
        let n = rng.gen_range(0..=4);
        let a = random_stratum(&mut rng, n, 2, 1);
        let b = random_stratum(&mut rng, n, 2, 1);
        let fast = product(
            &TautClass::from_stratum(a.clone()),
            &TautClass::from_stratum(b.clone()),
        )
        .unwrap();
        assert_eq!(fast, brute_product(&a, &b), "a={a} b={b}");
    }
}

#[test]
fn generic_structures_of_divisors() {
    let a = two_vertex_graph(4, &[1, 2]);
    let b = two_vertex_graph(4, &[1, 2, 3]);
    assert!(generic_structures(&a, &two_vertex_graph(4, &[1, 3]))
        .unwrap()
        .is_empty());
    let s = generic_structures(&a, &b).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].graph.num_edges(), 2);
    assert!(s[0].shared_edges.is_empty());
    let s = generic_structures(&a, &a).unwrap();
    assert_eq!(s.len(), 3);
    assert!(generic_structures(&a, &PrestableGraph::trivial(3)).is_err());
}

#[test]
fn pushforward_of_pullback_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.gen_range(0..=4);
        let x = random_class(&mut rng, n, 2, 2);
        let up = forgetful_pullback(&x).unwrap();
        assert!(forgetful_pushforward(&up).unwrap().is_empty(), "x={x}");
    }
}

#[test]
fn kappa_closure() {
    for n in 0..=4 {
        for a in 0..=3u32 {
            let pushed = forgetful_pushforward(&psi_class(n + 1, n + 1, a + 1)).unwrap();
            let expected = if a == 0 {
                TautClass::fundamental(n).scaled(&q(n as i64 - 2))
            } else {
                kappa_class(n, a)
            };
            assert_eq!(pushed, expected);
        }
    }
}

#[test]
fn psi_from_ghost_self_intersection() {
    for n in 1..=4 {
        for i in 1..=n {
            let d = ghost_divisor(n, i);
            let sq = product_on_curve(&d, &d).unwrap();
            let pushed = forgetful_pushforward(&sq).unwrap();
            assert_eq!(pushed.scaled(&q(-1)), psi_class(n, i, 1), "n={n} i={i}");
        }
    }
}

#[test]
fn pullback_formulas() {
    // π^*ψ_i = ψ_i − D_{i,n+1} and π^*κ_a = κ_a − ψ_{n+1}^a
    for n in 1..=4 {
        for i in 1..=n {
            let mut expected = psi_class(n + 1, i, 1);
            expected.add_scaled(&ghost_divisor(n, i), &q(-1));
            assert_eq!(forgetful_pullback(&psi_class(n, i, 1)).unwrap(), expected);
        }
        let mut expected = kappa_class(n + 1, 2);
        expected.add_scaled(&psi_class(n + 1, n + 1, 2), &q(-1));
        assert_eq!(forgetful_pullback(&kappa_class(n, 2)).unwrap(), expected);
    }
}

#[test]
fn projection_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..25 {
        let n = rng.gen_range(0..=3);
        let x = random_class(&mut rng, n, 1, 2);
        let mut y = random_class(&mut rng, n + 1, 1, 2);
        if rng.gen_bool(0.3) && n > 0 {
            y.add_class(&ghost_divisor(n, rng.gen_range(1..=n)));
        }
        let lhs =
            forgetful_pushforward(&product_on_curve(&forgetful_pullback(&x).unwrap(), &y).unwrap())
                .unwrap();
        let rhs = product(&x, &forgetful_pushforward(&y).unwrap()).unwrap();
        assert_eq!(lhs, rhs, "x={x} y={y}");
    }
}

#[test]
fn boundary_expression_for_psi() {
    // ψ₁ + ψ₂ = D(1|2) on two markings
    let c = psi_to_boundary(2, 1).unwrap();
    let mut e = divisor(2, &[1]);
    e.add_scaled(&psi_class(2, 2, 1), &q(-1));
    assert_eq!(c, e);
    // ψ₁ on four markings with reference pair 2, 3
    let c = psi_to_boundary(4, 1).unwrap();
    let mut e = divisor(4, &[1]);
    e.add_class(&divisor(4, &[1, 4]));
    assert_eq!(c, e);
    assert_eq!(psi_to_boundary(5, 3).unwrap().len(), 4);
    assert!(psi_to_boundary(3, 4).is_err());
    assert!(psi_to_boundary(1, 1).is_err());
    for n in 2..=5 {
        for i in 1..=n {
            let diff = psi_class(n, i, 1).sub(&psi_to_boundary(n, i).unwrap());
            assert!(normalize(&diff).is_empty(), "n={n} i={i}");
        }
    }
}

#[test]
fn normalize_fixes_basis_elements() {
    for (n, d) in [(0, 2), (1, 2), (2, 2), (3, 1), (4, 2), (2, 3)] {
        let basis = enumerate_normal_form_basis(n, d, &SubstackSpec::All).unwrap();
        for el in &basis.elements {
            assert_eq!(normalize(&el.class), el.class);
        }
    }
}

#[test]
fn normalize_lands_in_basis_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..30 {
        let n = rng.gen_range(0..=4);
        let s = random_stratum(&mut rng, n, 2, 3);
        let d = s.codim();
        let nf = normalize(&TautClass::from_stratum(s.clone()));
        let basis = enumerate_normal_form_basis(n, d, &SubstackSpec::All).unwrap();
        assert!(basis.coordinates(&nf).is_ok(), "s={s} nf={nf}");
    }
}

#[test]
fn normalize_commutes_with_products_and_pullback() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..15 {
        let n = rng.gen_range(0..=3);
        let x = random_class(&mut rng, n, 1, 2);
        let y = random_class(&mut rng, n, 1, 1);
        let direct = normalize(&product(&x, &y).unwrap());
        let via = normalize(&product(&normalize(&x), &normalize(&y)).unwrap());
        assert!(zero_mod_relations(&direct.sub(&via)), "x={x} y={y}");
        let up = normalize(&forgetful_pullback_plain(&x).unwrap());
        let up_nf = normalize(&forgetful_pullback_plain(&normalize(&x)).unwrap());
        assert!(zero_mod_relations(&up.sub(&up_nf)), "x={x}");
    }
}

#[test]
fn kappa_preferred_shapes() {
    for a in 1..=5 {
        for (s, _) in kappa_to_preferred(0, a).terms() {
            assert!(s.graph.num_edges() > 0 || s.decoration.kappa[0].iter().all(|&c| c == 2));
        }
    }
    // κ₁ on one marking is ψ₁ minus the tail divisor
    let k1 = kappa_to_preferred(1, 1);
    assert!(k1
        .terms()
        .all(|(s, _)| s.decoration.kappa.iter().all(|k| k.is_empty())));
    for n in 3..=5 {
        for a in 1..=3 {
            assert!(kappa_to_preferred(n, a)
                .terms()
                .all(|(s, _)| s.graph.num_edges() > 0));
        }
    }
    assert_eq!(
        kappa_to_preferred(4, 0),
        TautClass::fundamental(4).scaled(&q(2))
    );
}

#[test]
fn stabilization_kappa_low_degrees() {
    let s = StabilizationSeries::new(3);
    // st^*κ₁ = κ₁ + [G₁]
    for k in 3..=5 {
        let mut e = kappa_class(k, 1);
        e.add_term(
            DecoratedStratum::plain(StabilizationSeries::chain(k, 1)),
            q(1),
        );
        assert_eq!(s.kappa_pullback(k, 1), e);
    }
    // st^*κ₂ = κ₂ − 3[G₁, κ_{v₀,1}] + 2[G₁, ψ_{h₀}] + [G₁, ψ_{h₁}] − 3[G₂]
    let k = 4;
    let g1 = StabilizationSeries::chain(k, 1);
    let mut e = kappa_class(k, 2);
    let mut d = Decoration::trivial(&g1);
    d.kappa[0] = vec![1];
    e.add_term(DecoratedStratum::new(g1.clone(), d), q(-3));
    let mut d = Decoration::trivial(&g1);
    d.psi[k] = 1;
    e.add_term(DecoratedStratum::new(g1.clone(), d), q(2));
    let mut d = Decoration::trivial(&g1);
    d.psi[k + 1] = 1;
    e.add_term(DecoratedStratum::new(g1.clone(), d), q(1));
    e.add_term(
        DecoratedStratum::plain(StabilizationSeries::chain(k, 2)),
        q(-3),
    );
    assert_eq!(s.kappa_pullback(k, 2), e);
}

#[test]
fn stabilization_kappa_two_routes() {
    let s = StabilizationSeries::new(4);
    for k in 3..=5 {
        for a in 1..=3 {
            let phi = s.kappa_pullback(k, a);
            let curve = kappa_pullback_via_curve(k, a).unwrap();
            assert_eq!(phi, curve, "k={k} a={a}");
        }
    }
}

#[test]
fn stabilization_pullback_of_psi() {
    let c = stabilization_pullback(&psi_class(4, 2, 1)).unwrap();
    let mut e = psi_class(4, 2, 1);
    e.add_scaled(&divisor(4, &[2]), &q(-1));
    assert_eq!(c, e);
    assert!(stabilization_pullback(&divisor(4, &[1])).is_err());
    assert!(stabilization_pullback(&psi_class(2, 1, 1)).is_err());
    // boundary classes pull back to themselves
    let d = divisor(5, &[1, 2]);
    assert_eq!(stabilization_pullback(&d).unwrap(), d);
}

#[test]
fn point_kappa_relations_remove_target() {
    for c in [1, 3, 4, 5, 6] {
        let e = point_kappa_expression(c);
        assert!(e.coefficient(&local_stratum(&[], &[c])).is_zero());
        assert_eq!(e.degree(), Some(c));
    }
}
