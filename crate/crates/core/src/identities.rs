//! Built-in identity checks run by the `verify` command.

use num_traits::One;

use crate::calculus::{
    forgetful_pushforward, kappa_pullback_via_curve, local_stratum, product_on_curve,
    section_divisor, two_vertex_graph, StabilizationSeries,
};
use crate::graph::PrestableGraph;
use crate::linalg::RowEchelon;
use crate::relations::{is_zero, relation_system, wdvv_on_vertex};
use crate::stable::{chart_image, kappa_one_routes_agree, stable_system};
use crate::strata::{q, DecoratedStratum, Decoration, SubstackSpec, TautClass, Q};

/// `ψ_i^e` on `n` markings.
pub fn psi_class(n: usize, i: usize, e: u32) -> TautClass {
    let psi: Vec<u32> = (1..=n).map(|x| if x == i { e } else { 0 }).collect();
    TautClass::from_stratum(local_stratum(&psi, &[]))
}

/// `κ_a` on `n` markings.
pub fn kappa_class(n: usize, a: u32) -> TautClass {
    TautClass::from_stratum(local_stratum(&vec![0; n], &[a]))
}

/// Boundary divisor `D(side | rest)` on `n` markings.
pub fn boundary_divisor(n: usize, side: &[usize]) -> TautClass {
    TautClass::from_stratum(DecoratedStratum::plain(two_vertex_graph(n, side)))
}

pub type CheckResult = Result<(), String>;

pub struct Check {
    pub name: &'static str,
    pub description: &'static str,
    pub run: fn() -> CheckResult,
}

pub fn checks() -> Vec<Check> {
    vec![
        Check {
            name: "psi-self-intersection",
            description: "ψ_i = −π_*(D_i²) for the section divisors, n ≤ 4",
            run: psi_self_intersection,
        },
        Check { name: "kappa-closure", description: "π_*(ψ_{n+1}^{a+1}) = κ_a for a ≤ 4, n ≤ 4", run: kappa_closure },
        Check { name: "psi-two-markings", description: "ψ₁ + ψ₂ − D(1|2) vanishes on two markings", run: psi_two_markings },
        Check {
            name: "psi-boundary",
            description: "ψ_i equals its boundary sum for every reference pair, n = 3..5",
            run: psi_boundary,
        },
        Check { name: "wdvv-four", description: "both WDVV relations on four markings vanish", run: wdvv_four },
        Check {
            name: "stabilization-kappa",
            description: "st^*κ₁ = κ₁ + [G₁] and the st^*κ₂ expansion, termwise; both stabilization routes agree",
            run: stabilization_kappa,
        },
        Check {
            name: "kappa-one-routes",
            description: "two routes for the pullback of κ₁ to the stable space, (n,m) ∈ {(3,1),(3,2),(4,1)}",
            run: kappa_one_routes,
        },
        Check {
            name: "unstable-divisors",
            description: "the strictly prestable one-edge divisors are independent, n ≤ 5",
            run: unstable_divisors,
        },
        Check {
            name: "chart-vanishing",
            description: "the chart pullback of ψ₁ + ψ₂ − D(1|2) to five markings vanishes",
            run: chart_vanishing,
        },
    ]
}

/// Runs every check, or only the named one.
pub fn run(only: Option<&str>) -> Result<Vec<(&'static str, CheckResult)>, String> {
    let all = checks();
    if let Some(name) = only {
        if !all.iter().any(|c| c.name == name) {
            return Err(format!("unknown check `{name}`"));
        }
    }
    Ok(all
        .into_iter()
        .filter(|c| only.is_none_or(|n| n == c.name))
        .map(|c| (c.name, (c.run)()))
        .collect())
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn psi_self_intersection() -> Result<(), String> {
    for n in 1..=4 {
        for i in 1..=n {
            let d = section_divisor(n, i).map_err(|e| e.to_string())?;
            let sq = product_on_curve(&d, &d).map_err(|e| e.to_string())?;
            let pushed = forgetful_pushforward(&sq).map_err(|e| e.to_string())?;
            ensure(pushed.scaled(&q(-1)) == psi_class(n, i, 1), || {
                format!("n={n} i={i}: got {pushed}")
            })?;
        }
    }
    Ok(())
}

fn kappa_closure() -> Result<(), String> {
    for n in 0..=4 {
        for a in 0..=4u32 {
            let pushed = forgetful_pushforward(&psi_class(n + 1, n + 1, a + 1))
                .map_err(|e| e.to_string())?;
            let expected = if a == 0 {
                TautClass::fundamental(n).scaled(&q(n as i64 - 2))
            } else {
                kappa_class(n, a)
            };
            ensure(pushed == expected, || format!("n={n} a={a}: got {pushed}"))?;
        }
    }
    Ok(())
}

fn zero(c: &TautClass) -> Result<bool, String> {
    is_zero(c, &SubstackSpec::All).map_err(|e| e.to_string())
}

fn psi_two_markings() -> Result<(), String> {
    let mut c = psi_class(2, 1, 1);
    c.add_class(&psi_class(2, 2, 1));
    c.add_scaled(&boundary_divisor(2, &[1]), &q(-1));
    ensure(zero(&c)?, || "ψ₁ + ψ₂ − D(1|2) is not zero".into())
}

fn psi_boundary() -> Result<(), String> {
    for n in 3..=5usize {
        for i in 1..=n {
            let others: Vec<usize> = (1..=n).filter(|&x| x != i).collect();
            for (a, &j) in others.iter().enumerate() {
                for &l in &others[a + 1..] {
                    let free: Vec<usize> = others
                        .iter()
                        .copied()
                        .filter(|&x| x != j && x != l)
                        .collect();
                    let mut c = psi_class(n, i, 1);
                    for mask in 0u32..(1 << free.len()) {
                        let mut side = vec![i];
                        side.extend(
                            free.iter()
                                .enumerate()
                                .filter(|(t, _)| mask >> t & 1 == 1)
                                .map(|e| *e.1),
                        );
                        c.add_scaled(&boundary_divisor(n, &side), &q(-1));
                    }
                    ensure(zero(&c)?, || format!("n={n} i={i} pair=({j},{l})"))?;
                }
            }
        }
    }
    Ok(())
}

fn wdvv_four() -> Result<(), String> {
    let t = PrestableGraph::trivial(4);
    for order in [[0, 1, 2, 3], [0, 1, 3, 2]] {
        let r =
            wdvv_on_vertex(&t, &Decoration::trivial(&t), 0, order).map_err(|e| e.to_string())?;
        ensure(!r.is_empty() && zero(&r)?, || format!("relation {r}"))?;
    }
    Ok(())
}

fn stabilization_kappa() -> Result<(), String> {
    let s = StabilizationSeries::new(4);
    for k in 3..=5 {
        let mut e = kappa_class(k, 1);
        e.add_term(
            DecoratedStratum::plain(StabilizationSeries::chain(k, 1)),
            Q::one(),
        );
        let got = s.kappa_pullback(k, 1);
        ensure(got == e, || format!("st^*κ₁ on {k} markings: {got}"))?;
    }
    // κ₂ − 3[G₁, κ₁ at the marked vertex] + 2[G₁, ψ at its edge half] + [G₁, ψ at the far half] − 3[G₂]
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
    e.add_term(DecoratedStratum::new(g1, d), q(1));
    e.add_term(
        DecoratedStratum::plain(StabilizationSeries::chain(k, 2)),
        q(-3),
    );
    let got = s.kappa_pullback(k, 2);
    ensure(got == e, || format!("st^*κ₂ on {k} markings: {got}"))?;
    for k in 3..=5 {
        for a in 1..=3 {
            let other = kappa_pullback_via_curve(k, a).map_err(|e| e.to_string())?;
            ensure(s.kappa_pullback(k, a) == other, || {
                format!("routes differ for k={k} a={a}")
            })?;
        }
    }
    Ok(())
}

fn kappa_one_routes() -> Result<(), String> {
    for (n, m) in [(3, 1), (3, 2), (4, 1)] {
        ensure(
            kappa_one_routes_agree(n, m).map_err(|e| e.to_string())?,
            || format!("n={n} m={m}"),
        )?;
    }
    Ok(())
}

fn unstable_divisors() -> Result<(), String> {
    for n in 0..=5usize {
        let sys = relation_system(n, 1, &SubstackSpec::All).map_err(|e| e.to_string())?;
        let unstable: Vec<usize> = sys
            .basis
            .elements
            .iter()
            .enumerate()
            .filter(|(_, el)| el.graph.num_edges() == 1 && !el.graph.is_stable())
            .map(|(i, _)| i)
            .collect();
        let expected = match n {
            0 | 1 => 1,
            2 => 2,
            _ => n + 1,
        };
        ensure(unstable.len() == expected, || {
            format!("n={n}: {} strictly prestable divisors", unstable.len())
        })?;
        let mut ech = RowEchelon::new();
        for r in &sys.relations {
            ech.insert_rational(&r.coords);
        }
        let rank_before = ech.rank();
        for &i in &unstable {
            ech.insert_rational(&[(i, Q::one())]);
        }
        ensure(ech.rank() == rank_before + unstable.len(), || {
            format!("n={n}: dependent modulo relations")
        })?;
    }
    Ok(())
}

fn chart_vanishing() -> Result<(), String> {
    let mut c = psi_class(2, 1, 1);
    c.add_class(&psi_class(2, 2, 1));
    c.add_scaled(&boundary_divisor(2, &[1]), &q(-1));
    let img = chart_image(&c, 3).map_err(|e| e.to_string())?;
    let ok = stable_system(5, 1)
        .is_zero(&img)
        .map_err(|s| format!("not a stable stratum: {s}"))?;
    ensure(ok, || format!("image {img}"))?;
    // the divisor alone does not vanish, so the check has content
    let d = chart_image(&boundary_divisor(2, &[1]), 3).map_err(|e| e.to_string())?;
    ensure(
        !stable_system(5, 1).is_zero(&d).map_err(|s| s.to_string())?,
        || "divisor image vanishes".into(),
    )
}
