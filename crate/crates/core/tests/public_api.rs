use prestable::calculus::{forgetful_pullback, forgetful_pushforward, product, product_on_curve};
use prestable::identities::{boundary_divisor, kappa_class, psi_class};
use prestable::relations::{chow_rank, is_zero, normal_form_coordinates, relation_system};
use prestable::stable::{chart_images, image_rank};
use prestable::strata::{hilbert_coefficients, q, SubstackSpec, TautClass};

fn zero(c: &TautClass) -> bool {
    is_zero(c, &SubstackSpec::All).unwrap()
}

fn sample_classes(n: usize) -> Vec<TautClass> {
    let mut out = vec![
        TautClass::fundamental(n),
        kappa_class(n, 1),
        kappa_class(n, 2),
    ];
    out.extend((1..=n).map(|i| psi_class(n, i, 1)));
    if n >= 2 {
        out.push(boundary_divisor(n, &[1]));
        out.push(product(&boundary_divisor(n, &[1]), &psi_class(n, 1, 1)).unwrap());
    }
    out
}

#[test]
fn pushforward_kills_pullbacks() {
    for n in 0..=3 {
        for a in sample_classes(n) {
            let back = forgetful_pushforward(&forgetful_pullback(&a).unwrap()).unwrap();
            assert!(back.is_empty() || zero(&back), "n={n} {a}: {back}");
        }
    }
}

#[test]
fn projection_formula_with_last_psi() {
    for n in 0..=3 {
        let psi = psi_class(n + 1, n + 1, 1);
        for a in sample_classes(n) {
            let pulled = forgetful_pullback(&a).unwrap();
            let pushed = forgetful_pushforward(&product_on_curve(&psi, &pulled).unwrap()).unwrap();
            let diff = pushed.sub(&a.scaled(&q(n as i64 - 2)));
            assert!(diff.is_empty() || zero(&diff), "n={n} {a}: {pushed}");
        }
    }
}

#[test]
fn json_round_trip_preserves_coordinates() {
    let mut c = psi_class(3, 1, 2);
    c.add_scaled(
        &product(&boundary_divisor(3, &[1, 2]), &psi_class(3, 3, 1)).unwrap(),
        &q(5),
    );
    c.add_scaled(&kappa_class(3, 2), &q(-3));
    let back = TautClass::from_json(&c.to_json()).unwrap();
    assert_eq!(back, c);
    assert_eq!(
        normal_form_coordinates(&back, &SubstackSpec::All).unwrap(),
        normal_form_coordinates(&c, &SubstackSpec::All).unwrap()
    );
}

#[test]
fn ranks_agree_across_entry_points() {
    for n in 0..=3 {
        let coeffs = hilbert_coefficients(n, &SubstackSpec::All, 3).unwrap();
        for d in 0..=3 {
            let rank = chow_rank(n, d, &SubstackSpec::All).unwrap();
            assert_eq!(coeffs[d as usize], rank);
            let sys = relation_system(n, d, &SubstackSpec::All).unwrap();
            assert_eq!(sys.rank(), rank);
            assert_eq!(sys.basis.len() - sys.matrix().rank(), rank);
        }
    }
}

#[test]
fn chart_images_bounds() {
    assert!(chart_images(1, 0, 1).is_err());
    let (_, images) = chart_images(2, 3, 2).unwrap();
    assert!(images.is_empty());
    // image rank never exceeds the Chow rank
    for (n, d, m) in [(2, 1, 2), (3, 1, 1), (1, 1, 3)] {
        assert!(image_rank(n, d, m).unwrap() <= chow_rank(n, d, &SubstackSpec::All).unwrap());
    }
}
