//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line, then asserts.

use std::io::Write;

use eqmeasure::dynamics::{
    differentiation_check, evolve, fusion_formulae, hydrodynamic_defect, robin_derivative_jump,
    scaling_probe, EventKind, EvolveOptions, Trajectory,
};
use eqmeasure::eqstate::{EquilibriumState, NewtonOptions};
use eqmeasure::fekete::{compare_to_equilibrium, fekete_points, fekete_points_from_state};
use eqmeasure::polycore::ExternalField;
use eqmeasure::quartic::{bleher_eynard, critical_constants, type3_locus, QuarticField};
use eqmeasure::Complex64;

/// Writes past the test harness capture so passing criteria show up too.
fn emit(line: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    emit(format!("criterion {id:>2} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" }));
}

fn run(field: &ExternalField, t_end: f64) -> Trajectory {
    evolve(field, 1e-3, t_end, EvolveOptions::default()).expect("trajectory")
}

fn field(c: &[f64]) -> ExternalField {
    ExternalField::new(c.to_vec()).unwrap()
}

fn quartic(a: Complex64, b: Complex64) -> ExternalField {
    QuarticField::new(a, b).unwrap().field()
}

fn kinds(t: &Trajectory) -> Vec<EventKind> {
    t.events.iter().map(|e| e.kind).collect()
}

fn event(t: &Trajectory, kind: EventKind) -> usize {
    t.events.iter().position(|e| e.kind == kind).expect("event present")
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn c01_quadratic_closed_form() {
    let f = ExternalField::quadratic();
    let tr = run(&f, 10.0);
    let mut worst: f64 = 0.0;
    for s in &tr.states {
        let r = (2.0 * s.t).sqrt();
        let e = s.endpoints();
        worst = worst.max(rel(e[0], -r)).max(rel(e[1], r));
    }
    let at1 = run(&f, 1.0);
    let s1 = at1.states.last().unwrap();
    let c1_err = (s1.c_t - (0.5 + 0.5 * 2f64.ln())).abs();
    let pass = worst < 1e-8 && c1_err < 1e-8 && tr.events.is_empty() && (s1.t - 1.0).abs() < 1e-15;
    report(1, "quadratic closed form", pass, &format!("endpoint rel err {worst:.2e}, c_1 err {c1_err:.2e}"));
    assert!(pass);
}

#[test]
fn c02_symmetric_quartic() {
    let tr = run(&field(&[0.0, -1.0, 0.0]), 3.0);
    let mut worst: f64 = 0.0;
    for s in tr.states.iter().filter(|s| s.endpoints().len() == 4) {
        let e = s.endpoints();
        let r = (2.0 * s.t).sqrt();
        worst = worst.max((e[2] * e[2] - (2.0 - r)).abs()).max((e[3] * e[3] - (2.0 + r)).abs());
    }
    let ev = &tr.events;
    let pass = ev.len() == 1
        && ev[0].kind == EventKind::Fusion
        && (ev[0].time - 2.0).abs() < 1e-6
        && ev[0].location.abs() < 1e-8
        && worst < 1e-7;
    report(
        2,
        "symmetric quartic",
        pass,
        &format!("endpoint err {worst:.2e}, events {:?}, T = {:.10}, location {:.2e}", kinds(&tr), ev[0].time, ev[0].location),
    );
    assert!(pass);
}

#[test]
fn c03_robin_derivative_limits() {
    let tr = run(&field(&[0.0, -1.0, 0.0]), 3.0);
    let j = robin_derivative_jump(&tr, 0).unwrap();
    let pass = (j.left + 0.125).abs() < 1e-3 && (j.right + 0.0625).abs() < 1e-3;
    report(3, "Robin-derivative one-sided limits", pass, &format!("left {:.10}, right {:.10}", j.left, j.right));
    let f = fusion_formulae(-2.0, 2.0, 0.0);
    emit(format!(
        "    discrepancy report: closed-form left {:.6} (computed {:.6}), right {:.6} (computed {:.6}), jump {:.6} (computed {:.6})",
        f.left_formula, j.left, f.right_formula, j.right, f.jump_formula, j.right - j.left
    ));
    assert!(pass);
}

#[test]
fn c04_bleher_eynard() {
    let mut pass = true;
    for c1 in [0.0, 0.25, 0.5] {
        let be = bleher_eynard(c1).unwrap();
        let oracle = 2.0 * (1.0 + 4.0 * c1 * c1);
        let tr = run(&be.field, oracle + 0.5);
        let i = event(&tr, EventKind::Fusion);
        let ev = &tr.events[i];
        let e = &ev.probes.as_ref().unwrap().critical.endpoints;
        let ok = (ev.location - 2.0 * c1).abs() < 1e-6
            && (e[0] + 2.0).abs() < 1e-6
            && (e[e.len() - 1] - 2.0).abs() < 1e-6
            && (ev.time - oracle).abs() < 1e-6
            && (be.merge_time - oracle).abs() < 1e-12;
        emit(format!(
            "    c1 = {c1}: T = {:.10} (oracle {oracle}, alternative convention {}), location {:.10}, endpoints [{:.10}, {:.10}]",
            ev.time,
            1.0 + 4.0 * c1 * c1,
            ev.location,
            e[0],
            e[e.len() - 1]
        ));
        pass &= ok;
    }
    report(4, "Bleher-Eynard merges", pass, "c1 in {0, 0.25, 0.5}");
    assert!(pass);
}

#[test]
fn c05_critical_constants() {
    let c = critical_constants();
    let res = 32.0 * c.s.powi(3) - 17.0 * c.s * c.s + 14.0 * c.s - 1.0;
    let pass = res.abs() < 1e-12 && (c.sqrt_s - 0.27872057).abs() < 1e-8 && (c.gamma - 2.76938).abs() < 1e-5;
    report(5, "critical constants", pass, &format!("residual {res:.1e}, sqrt s = {:.10}, gamma = {:.7}", c.sqrt_s, c.gamma));
    assert!(pass);
}

#[test]
fn c06_quartic_scenarios() {
    let one = run(&quartic(Complex64::new(1.0, 0.3), Complex64::new(1.0, -0.3)), 50.0);
    let one_ok = one.events.is_empty() && one.states.iter().all(|s| s.endpoints().len() == 2);
    let full = run(&quartic(Complex64::new(1.0, 0.2), Complex64::new(1.0, -0.2)), 6.0);
    let full_ok = kinds(&full) == [EventKind::ExtremaBirth, EventKind::BirthOfCut, EventKind::Fusion];
    let real = run(&quartic(Complex64::new(1.0, 0.0), Complex64::new(1.5, 0.0)), 6.0);
    let real_ok = kinds(&real) == [EventKind::BirthOfCut, EventKind::Fusion];
    let pass = one_ok && full_ok && real_ok;
    report(
        6,
        "quartic scenario suite",
        pass,
        &format!("1+0.3i {:?}; 1+0.2i {:?}; (1, 1.5) {:?}", kinds(&one), kinds(&full), kinds(&real)),
    );
    assert!(pass);
}

#[test]
fn c07_scaling_exponents() {
    let mut missed: Vec<String> = Vec::new();
    let mut line = |name: &str, ok: bool, detail: String| {
        emit(format!("    {} {name}: {detail}", if ok { "ok  " } else { "MISS" }));
        if !ok {
            missed.push(name.to_string());
        }
    };

    let full = run(&quartic(Complex64::new(1.0, 0.2), Complex64::new(1.0, -0.2)), 6.0);
    let sym = run(&field(&[0.0, -1.0, 0.0]), 3.0);
    for (name, tr) in [("type II, symmetric quartic", &sym), ("type II, alpha = 1+0.2i", &full)] {
        let fit = scaling_probe(tr, event(tr, EventKind::Fusion)).unwrap();
        let e = fit.details["k_rel_error"];
        line(name, e < 0.02, format!("slope {:.8} vs {:.8}, rel err {e:.2e}", fit.details["k_fit"], fit.details["k_predicted"]));
    }

    let c = critical_constants();
    let boundary = run(&quartic(Complex64::new(1.0, c.sqrt_s), Complex64::new(1.0, -c.sqrt_s)), 0.1);
    let fit = scaling_probe(&boundary, event(&boundary, EventKind::TypeIII)).unwrap();
    line(
        "type III exponent",
        rel(fit.exponent, 1.0 / 3.0) < 0.05,
        format!("{:.5} vs 1/3", fit.exponent),
    );
    let target = 1.0 / 3f64.sqrt();
    line(
        "type III impact-angle ratio",
        rel(fit.details["ratio"], target) < 0.02,
        format!("{:.6} vs 1/sqrt 3 = {target:.6} (1/sqrt 5 = {:.6})", fit.details["ratio"], 1.0 / 5f64.sqrt()),
    );

    let fit = scaling_probe(&full, event(&full, EventKind::ExtremaBirth)).unwrap();
    line("extremum birth exponent", rel(fit.exponent, 0.5) < 0.03, format!("{:.5} vs 1/2", fit.exponent));

    let real = run(&quartic(Complex64::new(1.0, 0.0), Complex64::new(1.5, 0.0)), 6.0);
    for (name, tr) in [("type I, alpha = 1+0.2i", &full), ("type I, real (1, 1.5)", &real)] {
        let fit = scaling_probe(tr, event(tr, EventKind::BirthOfCut)).unwrap();
        let d = fit.details["C_window_change"];
        line(name, d < 0.1, format!("C {:.6} vs half window {:.6}, change {d:.4}", fit.details["C_fit"], fit.details["C_fit_half_window"]));
    }
    let pass = missed.is_empty();
    let detail = if pass { "all sub-checks within tolerance".to_string() } else { format!("missed: {}", missed.join(", ")) };
    report(7, "local scaling laws", pass, &detail);
    assert!(pass);
}

fn trajectories() -> Vec<(&'static str, Trajectory)> {
    vec![
        ("quadratic", run(&ExternalField::quadratic(), 4.0)),
        ("symmetric quartic", run(&field(&[0.0, -1.0, 0.0]), 3.0)),
        ("alpha = 1+0.2i", run(&quartic(Complex64::new(1.0, 0.2), Complex64::new(1.0, -0.2)), 6.0)),
        ("real (1, 1.5)", run(&quartic(Complex64::new(1.0, 0.0), Complex64::new(1.5, 0.0)), 6.0)),
        ("Bleher-Eynard 0.25", run(&bleher_eynard(0.25).unwrap().field, 3.0)),
        ("sextic", run(&field(&[0.0, -1.5, 0.0, 0.6, 0.0]), 3.0)),
    ]
}

#[test]
fn c08_differentiation_identities() {
    let h = 1e-4;
    let (mut dc, mut dens, mut euler, mut hydro): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    let mut checked = 0;
    for (_, tr) in trajectories() {
        let times: Vec<f64> = tr.events.iter().map(|e| e.time).collect();
        for s in tr.states.iter().step_by(4) {
            let clear = times.iter().all(|&t| (s.t - t).abs() > 1e3 * h * s.t.max(1.0));
            if s.t < 1e3 * h || !clear {
                continue;
            }
            let d = differentiation_check(s, h * s.t.max(1.0)).unwrap();
            dc = dc.max((d.dc_dt - d.rho).abs());
            dens = dens.max(d.density_error);
            let f = s.field();
            let m = f.m();
            let fam = s.h_family(2 * m).unwrap();
            let mut lhs = fam.h[0].scale(s.t);
            for j in 1..=2 * m {
                lhs = &lhs + &fam.h[j].scale(f.coupling(j));
            }
            euler = euler.max((&lhs - &(s.support().a_poly() * s.b_poly())).max_abs_coeff());
            for i in 0..2 * m {
                for j in i + 1..2 * m {
                    hydro = hydro.max(hydrodynamic_defect(s, i, j).unwrap());
                }
            }
            checked += 1;
        }
    }
    let pass = dc < 1e-6 && dens < 1e-5 && euler < 1e-10 && hydro < 1e-9;
    report(
        8,
        "differentiation identities",
        pass,
        &format!("{checked} states: dc/dt - rho {dc:.2e}, density {dens:.2e}, Euler {euler:.2e}, hydrodynamic {hydro:.2e}"),
    );
    assert!(pass);
}

#[test]
fn c09_type3_locus() {
    let res = type3_locus(-8.0, 2.0, 4.0);
    let tr = run(&ExternalField::from_derivative(&eqmeasure::polycore::RealPolynomial::new(vec![-8.0, 2.0, 4.0, 1.0])).unwrap(), 12.0);
    let n3 = tr.events.iter().filter(|e| e.kind == EventKind::TypeIII).count();
    let generic = [(-8.0, 2.0, 4.5), (1.0, -0.3, 0.2), (0.0, 0.52, -2.0)]
        .iter()
        .map(|&(a, b, c)| type3_locus(a, b, c).abs())
        .fold(f64::INFINITY, f64::min);
    let pass = res.abs() < 1e-9 && n3 == 1 && generic > 1e-3;
    report(9, "type III locus", pass, &format!("residual {res:.1e}, type III events {n3}, min generic residual {generic:.3e}"));
    assert!(pass);
}

#[test]
fn c10_fekete_oracle() {
    let quad = ExternalField::quadratic();
    let quad_state = run(&quad, 1.0).states.last().unwrap().clone();
    let qf = quartic(Complex64::new(1.0, 0.3), Complex64::new(1.0, -0.3));
    let q_state = run(&qf, 1.0).states.last().unwrap().clone();
    let mut pass = q_state.endpoints().len() == 2;
    let mut detail = String::new();
    for (name, state) in [("quadratic", &quad_state), ("one-cut quartic", &q_state)] {
        let d: Vec<f64> = [16, 32, 64, 128]
            .iter()
            .map(|&n| {
                let pts = if name == "quadratic" {
                    fekete_points(&quad, 1.0, n).unwrap()
                } else {
                    fekete_points_from_state(state, n).unwrap()
                };
                compare_to_equilibrium(&pts, state)
            })
            .collect();
        let monotone = d.windows(2).all(|w| w[1] <= 1.1 * w[0]);
        pass &= d[2] < 0.06 && monotone && d[3] < d[0];
        detail += &format!("{name} n=16..128 {:.4} {:.4} {:.4} {:.4}; ", d[0], d[1], d[2], d[3]);
    }
    report(10, "Fekete oracle", pass, detail.trim_end_matches("; "));
    assert!(pass);
}

#[test]
fn c11_hodograph_consistency() {
    let (mut res, mut moved, mut n): (f64, f64, usize) = (0.0, 0.0, 0);
    for (_, tr) in trajectories() {
        for s in &tr.states {
            res = res.max(s.coefficient_residual).max(s.period_residual);
            let again = EquilibriumState::refine(s.field(), s.t, s.coords(), NewtonOptions::default()).unwrap();
            let d = again
                .coords()
                .to_vec()
                .iter()
                .zip(s.coords().to_vec())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            moved = moved.max(d);
            n += 1;
        }
    }
    let pass = res < 1e-9 && moved < 1e-12;
    report(11, "hodograph consistency", pass, &format!("{n} states: max residual {res:.2e}, re-refinement shift {moved:.2e}"));
    assert!(pass);
}
