//! Closed-form quartic theory against evolved trajectories.

use eqmeasure::dynamics::{evolve, robin_derivative_jump, EventKind, EvolveOptions, Trajectory};
use eqmeasure::polycore::{ExternalField, RealPolynomial};
use eqmeasure::quartic::{bleher_eynard, classify, critical_constants, quadruple_points, CriticalLabel, QuarticField, Scenario};
use eqmeasure::Complex64;
use nalgebra::{DMatrix, DVector};

fn time_of(tr: &Trajectory, kind: EventKind) -> f64 {
    tr.events.iter().find(|e| e.kind == kind).expect("event").time
}

fn config_t(q: &QuarticField, label: CriticalLabel) -> f64 {
    quadruple_points(q).unwrap().into_iter().find(|c| c.label == label).unwrap().t
}

#[test]
fn critical_times_match_evolution() {
    for y in [0.05, 0.2, 0.25] {
        let q = QuarticField::new(Complex64::new(1.0, y), Complex64::new(1.0, -y)).unwrap();
        let tr = evolve(&q.field(), 1e-4, 1.0, EvolveOptions::default()).unwrap();
        let t0 = config_t(&q, CriticalLabel::T0);
        let t2 = config_t(&q, CriticalLabel::T2);
        assert!((time_of(&tr, EventKind::ExtremaBirth) - t0).abs() < 1e-8 * t0.max(1.0), "y = {y}");
        assert!((time_of(&tr, EventKind::Fusion) - t2).abs() < 1e-8 * t2.max(1.0), "y = {y}");
    }
    for u in [1.2, 1.5, 1.9] {
        let q = QuarticField::new(Complex64::new(1.0, 0.0), Complex64::new(u, 0.0)).unwrap();
        let tr = evolve(&q.field(), 1e-4, 2.0, EvolveOptions::default()).unwrap();
        let t2 = config_t(&q, CriticalLabel::T2);
        assert!((time_of(&tr, EventKind::Fusion) - t2).abs() < 1e-8 * t2.max(1.0), "u = {u}");
    }
}

#[test]
fn affine_image_keeps_event_times() {
    // φ'(x) = (x − x0)(x − x0 − qα)(x − x0 − q ᾱ) with q = 1.7, x0 = −0.4
    let (x0, q, a) = (-0.4, 1.7, Complex64::new(1.0, 0.2));
    let quad = RealPolynomial::new(vec![(q * a).norm_sqr(), -2.0 * q * a.re, 1.0]).shift(-x0);
    let dp = &RealPolynomial::new(vec![-x0, 1.0]) * &quad;
    let field = ExternalField::from_derivative(&dp).unwrap();
    let qf = QuarticField::from_field(&field).unwrap();
    let Scenario::FullSequence { t0, t2 } = classify(&qf).unwrap() else {
        panic!("expected the full sequence");
    };
    let tr = evolve(&field, 1e-3, 1.2 * t2, EvolveOptions::default()).unwrap();
    let kinds: Vec<_> = tr.events.iter().map(|e| e.kind).collect();
    assert_eq!(kinds, [EventKind::ExtremaBirth, EventKind::BirthOfCut, EventKind::Fusion]);
    assert!((tr.events[0].time - t0).abs() < 1e-8 * t0);
    assert!((tr.events[2].time - t2).abs() < 1e-8 * t2);
    let b = quadruple_points(&qf).unwrap().into_iter().find(|c| c.label == CriticalLabel::T2).unwrap().b;
    assert!((tr.events[2].location - b).abs() < 1e-7);
}

#[test]
fn boundary_configuration_is_the_type3_event() {
    let c = critical_constants();
    let q = QuarticField::new(Complex64::new(1.0, c.sqrt_s), Complex64::new(1.0, -c.sqrt_s)).unwrap();
    let Scenario::TypeIIIBoundary { t, location } = classify(&q).unwrap() else {
        panic!("expected the boundary scenario");
    };
    assert!((location - 0.8513).abs() < 1e-4);
    let tr = evolve(&q.field(), 1e-3, 0.1, EvolveOptions::default()).unwrap();
    let ev = tr.events.iter().find(|e| e.kind == EventKind::TypeIII).unwrap();
    // the boundary field is only known to the printed digits of √s
    assert!((ev.time - t).abs() < 1e-4, "{} vs {t}", ev.time);
    assert!((ev.location - location).abs() < 1e-3);
}

#[test]
fn f_zero_by_extrapolation() {
    let beta = 1.5;
    let f = QuarticField::new(Complex64::new(1.0, 0.0), Complex64::new(beta, 0.0)).unwrap().field();
    let want = (2.0 - beta) * beta.powi(3) / 12.0;
    let tr = evolve(&f, 1e-6, 1e-3, EvolveOptions::default()).unwrap();
    assert!(tr.events.is_empty());
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for s in &tr.states {
        let b = s
            .b_real()
            .iter()
            .copied()
            .min_by(|x, y| (x - beta).abs().total_cmp(&(y - beta).abs()))
            .unwrap();
        let t = s.t;
        rows.extend([1.0, t * t.ln(), t, t * t]);
        rhs.push(s.effective_potential(b));
    }
    let a = DMatrix::from_row_slice(rhs.len(), 4, &rows);
    let sol = a.svd(true, true).solve(&DVector::from_vec(rhs), 1e-14).unwrap();
    assert!((sol[0] - want).abs() < 1e-8, "F(0) = {} vs {want}", sol[0]);
}

#[test]
fn bleher_eynard_jump_against_closed_forms() {
    // computed jumps of ρ' at the merge; the symmetric case has jump +1/16
    for (c1, left, right) in [(0.0, -0.125, -0.0625), (0.25, -0.146667, -0.0755556), (0.5, -0.25, -0.138889)] {
        let be = bleher_eynard(c1).unwrap();
        let tr = evolve(&be.field, 1e-3, be.merge_time + 0.5, EvolveOptions::default()).unwrap();
        let idx = tr.events.iter().position(|e| e.kind == EventKind::Fusion).unwrap();
        let j = robin_derivative_jump(&tr, idx).unwrap();
        assert!((j.left - left).abs() < 1e-5, "c1 = {c1}: left {}", j.left);
        assert!((j.right - right).abs() < 1e-5, "c1 = {c1}: right {}", j.right);
        println!(
            "c1 = {c1}: jump {:.6}, reference expression {:.6}",
            j.right - j.left,
            be.reference_jump
        );
    }
}
