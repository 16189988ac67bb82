//! Evolution in the mass parameter: zero/endpoint velocities, an embedded
//! Runge–Kutta integrator with Newton re-anchoring, event detection and
//! handoff across the four kinds of transitions, and local law fits.

use std::collections::BTreeMap;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eqstate::{
    coords_from_endpoints, flat_quartic_seed, hodograph_refine, hodograph_residual,
    solve_nonlinear, Coords, EquilibriumState, NewtonOptions,
};
use crate::error::{Error, Result};
use crate::hyperquad::{green_numerator, robin_data, solve_h_family, SupportConfig};
use crate::polycore::{all_roots, ExternalField, RealPolynomial};

// ─── seeding ─────────────────────────────────────────────────────────────

/// Real critical points of `φ` as cluster means of the roots of `φ'`.
fn real_critical_points(field: &ExternalField) -> Result<Vec<f64>> {
    let roots = all_roots(field.phi_prime())?;
    let mut used = vec![false; roots.len()];
    let mut out = Vec::new();
    for i in 0..roots.len() {
        if used[i] {
            continue;
        }
        let zi = roots[i].z;
        let tol = 1e-4 * zi.norm().max(1.0);
        let mut sum = Complex64::new(0.0, 0.0);
        let mut n = 0.0;
        for j in i..roots.len() {
            if !used[j] && (roots[j].z - zi).norm() <= tol {
                used[j] = true;
                sum += roots[j].z;
                n += 1.0;
            }
        }
        let mean = sum / n;
        if mean.im.abs() <= 1e-8 * mean.norm().max(1.0) {
            out.push(mean.re);
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Global minimizers of `φ` (all of equal depth).
pub fn global_minimizers(field: &ExternalField) -> Result<Vec<f64>> {
    let crit = real_critical_points(field)?;
    let phi = field.phi();
    let vmin = crit
        .iter()
        .map(|&z| phi.eval(z))
        .fold(f64::INFINITY, f64::min);
    let tol = 1e-10 * vmin.abs().max(1.0);
    Ok(crit
        .into_iter()
        .filter(|&z| phi.eval(z) <= vmin + tol)
        .collect())
}

/// Small-mass state: one cut around each global minimizer of `φ`.
pub fn seed_small_t(field: &ExternalField, t0: f64) -> Result<EquilibriumState> {
    if !(t0 > 0.0) {
        return Err(Error::InvalidInput(format!("t0 must be positive, got {t0}")));
    }
    let minima = global_minimizers(field)?;
    let tau = t0 / minima.len() as f64;
    let d2 = field.phi_prime().derivative();
    let d4 = d2.derivative().derivative();
    let mut endpoints = Vec::new();
    for &z in &minima {
        let k = d2.eval(z);
        let w_quad = if k > 0.0 { (2.0 * tau / k).sqrt() } else { f64::INFINITY };
        let kappa = d4.eval(z) / 6.0;
        let w_flat = if kappa > 0.0 {
            let (e, _) = flat_quartic_seed(0.0, tau / kappa);
            e[1]
        } else {
            f64::INFINITY
        };
        let w = w_quad.min(w_flat);
        if !w.is_finite() {
            return Err(Error::SeedFailed(format!("no local model at minimum {z}")));
        }
        endpoints.push(z - w);
        endpoints.push(z + w);
    }
    let guess = coords_from_endpoints(field, endpoints).map_err(|e| Error::SeedFailed(e.to_string()))?;
    EquilibriumState::refine(field, t0, &guess, NewtonOptions::default())
        .map_err(|e| Error::SeedFailed(format!("refinement at t0 = {t0}: {e}")))
}

// ─── velocities ──────────────────────────────────────────────────────────

/// Velocities of all zeros of `A` and `B` driven by numerator `num`:
/// `ȧ_k = 2σ·num(a_k)/(A'(a_k)B(a_k))`, `ḃ = σ·num(b)/(A(b)B'(b))`.
/// Pairs are returned as `(ṡ, q̇)`, in the order of [`Coords::to_vec`].
fn zero_velocities(c: &Coords, cfg: &SupportConfig, num: &RealPolynomial, sigma: f64) -> Result<Vec<f64>> {
    let l = c.spread();
    let guard = 1e-6 * l;
    let b = c.b_poly();
    let a = cfg.a_poly();
    let ends = &c.endpoints;
    let pair_roots: Vec<(Complex64, Complex64)> = c
        .pairs
        .iter()
        .map(|&(s, q)| {
            let sq = Complex64::new(q, 0.0).sqrt();
            let i = Complex64::new(0.0, 1.0);
            (s + i * sq, s - i * sq)
        })
        .collect();
    for &e in ends {
        let too_close = c.b_real.iter().any(|&z| (z - e).abs() < guard)
            || pair_roots.iter().any(|(z, _)| (z - e).norm() < guard);
        if too_close {
            return Err(Error::NearSingular(format!("a zero of B within {guard:e} of endpoint {e}")));
        }
    }
    let mut out = Vec::with_capacity(c.to_vec().len());
    for (k, &ak) in ends.iter().enumerate() {
        let dak: f64 = ends
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, &ai)| ak - ai)
            .product();
        out.push(sigma * 2.0 * num.eval(ak) / (dak * b.eval(ak)));
    }
    let b_rest = |z: Complex64, skip_real: Option<usize>, skip_pair: Option<usize>| -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0);
        for (i, &r) in c.b_real.iter().enumerate() {
            if Some(i) != skip_real {
                v *= z - r;
            }
        }
        for (i, &(s, q)) in c.pairs.iter().enumerate() {
            if Some(i) != skip_pair {
                v *= (z - s) * (z - s) + q;
            }
        }
        v
    };
    for (j, &bj) in c.b_real.iter().enumerate() {
        let z = Complex64::new(bj, 0.0);
        let db = b_rest(z, Some(j), None).re;
        if db.abs() < 1e-300 {
            return Err(Error::NearSingular(format!("double real zero of B at {bj}")));
        }
        out.push(sigma * num.eval(bj) / (a.eval(bj) * db));
    }
    for (j, &(s, _q)) in c.pairs.iter().enumerate() {
        let g = |z: Complex64| num.eval_complex(z) / (a.eval_complex(z) * b_rest(z, None, Some(j)));
        let (b1, b2) = pair_roots[j];
        let (ds, dq) = if (b1 - b2).norm() > 1e-7 * l {
            let g1 = g(b1);
            let g2 = g(b2);
            (((g1 - g2) / (2.0 * (b1 - b2))).re, (-(g1 + g2) / 2.0).re)
        } else {
            let e = 1e-5 * l;
            let gp = (g(Complex64::new(s + e, 0.0)) - g(Complex64::new(s - e, 0.0))).re / (2.0 * e);
            (0.5 * gp, -g(Complex64::new(s, 0.0)).re)
        };
        out.push(sigma * ds);
        out.push(sigma * dq);
    }
    Ok(out)
}

/// `d/dt` of the coordinate vector (pairs as `(s, q)`).
pub fn coordinate_rates(c: &Coords) -> Result<Vec<f64>> {
    let cfg = c.support()?;
    let h = green_numerator(&cfg)?;
    zero_velocities(c, &cfg, &h, 1.0)
}

/// Velocities of endpoints and zeros of `B` in a form close to the state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroRates {
    pub endpoints: Vec<f64>,
    pub b_real: Vec<f64>,
    /// Velocity of the zero with positive imaginary part of each pair.
    pub b_pairs: Vec<Complex64>,
}

fn split_rates(c: &Coords, v: &[f64]) -> ZeroRates {
    let ne = c.endpoints.len();
    let nr = c.b_real.len();
    let b_pairs = c
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &(_, q))| {
            let ds = v[ne + nr + 2 * i];
            let dq = v[ne + nr + 2 * i + 1];
            Complex64::new(ds, dq / (2.0 * q.max(0.0).sqrt()))
        })
        .collect();
    ZeroRates {
        endpoints: v[..ne].to_vec(),
        b_real: v[ne..ne + nr].to_vec(),
        b_pairs,
    }
}

/// `ȧ_k` and `ḃ` for a state.
pub fn time_derivatives(state: &EquilibriumState) -> Result<ZeroRates> {
    let v = coordinate_rates(state.coords())?;
    Ok(split_rates(state.coords(), &v))
}

/// Derivatives of endpoints and zeros with respect to the coupling `t_j`
/// (`j = 0` is the mass).
pub fn coupling_derivatives(state: &EquilibriumState, j: usize) -> Result<ZeroRates> {
    let m = state.field().m();
    if j >= 2 * m {
        return Err(Error::InvalidInput(format!("coupling index {j} ≥ 2m")));
    }
    let fam = solve_h_family(state.support(), j)?;
    let v = zero_velocities(state.coords(), state.support(), &fam.h[j], -1.0)?;
    Ok(split_rates(state.coords(), &v))
}

/// `max_k |h_i(a_k) ∂_j a_k − h_j(a_k) ∂_i a_k|`.
pub fn hydrodynamic_defect(state: &EquilibriumState, i: usize, j: usize) -> Result<f64> {
    let fam = solve_h_family(state.support(), i.max(j))?;
    let di = coupling_derivatives(state, i)?;
    let dj = coupling_derivatives(state, j)?;
    Ok(state
        .endpoints()
        .iter()
        .enumerate()
        .map(|(k, &a)| (fam.h[i].eval(a) * dj.endpoints[k] - fam.h[j].eval(a) * di.endpoints[k]).abs())
        .fold(0.0, f64::max))
}

// ─── events and trajectories ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    BirthOfCut,
    Fusion,
    TypeIII,
    ExtremaBirth,
}

/// Refined states on both sides of an event at `T ∓ Δ_i`, `Δ_i = h·2^{-i}`.
#[derive(Debug, Clone)]
pub struct ProbeWindow {
    pub deltas: Vec<f64>,
    pub left: Vec<Option<EquilibriumState>>,
    pub right: Vec<Option<EquilibriumState>>,
    /// Configuration at `T`.
    pub critical: Coords,
    /// Robin constant of the critical support.
    pub rho_crit: f64,
    /// Index of the pair involved (type III) or of the endpoint (type III).
    pub pair: Option<usize>,
    pub endpoint: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransitionEvent {
    pub kind: EventKind,
    #[serde(rename = "T")]
    pub time: f64,
    pub location: f64,
    pub constants: BTreeMap<String, f64>,
    #[serde(skip)]
    pub probes: Option<ProbeWindow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostic {
    pub t: f64,
    pub dt: f64,
    pub residual: f64,
    /// ODE-vs-Newton drift per unit `t`, at re-anchoring steps.
    pub drift: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<EquilibriumState>,
    pub events: Vec<TransitionEvent>,
    pub t_range: (f64, f64),
    pub diagnostics: Vec<StepDiagnostic>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub n_refine: usize,
    /// Largest step; defaults to 1/100 of the interval.
    pub max_step: Option<f64>,
    pub max_steps: usize,
    /// Offset past an event where integration resumes, relative to `max(1, T)`.
    pub resume_offset: f64,
    /// Largest probe offset `h`, relative to `max(1, T)`.
    pub probe_h: f64,
    pub probe_levels: usize,
    pub probes: bool,
    pub newton: NewtonOptions,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            rtol: 1e-9,
            n_refine: 5,
            max_step: None,
            max_steps: 200_000,
            resume_offset: 1e-6,
            probe_h: 1e-3,
            probe_levels: 7,
            probes: true,
            newton: NewtonOptions::default(),
        }
    }
}

// Dormand–Prince 5(4)
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One embedded step; returns the new vector and the scaled error norm.
fn dp45_step<F: Fn(&[f64]) -> Result<Vec<f64>>>(
    f: &F,
    y: &[f64],
    dt: f64,
    scales: &[f64],
    rtol: f64,
) -> Result<(Vec<f64>, f64)> {
    let _ = C;
    let n = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    k.push(f(y)?);
    for s in 1..7 {
        let ys: Vec<f64> = (0..n)
            .map(|i| y[i] + dt * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
            .collect();
        k.push(f(&ys)?);
    }
    let y5: Vec<f64> = (0..n)
        .map(|i| y[i] + dt * (0..7).map(|j| B5[j] * k[j][i]).sum::<f64>())
        .collect();
    let err = (0..n)
        .map(|i| {
            let e = dt * (0..7).map(|j| (B5[j] - B4[j]) * k[j][i]).sum::<f64>();
            e.abs() / (rtol * scales[i].max(y[i].abs()).max(y5[i].abs()))
        })
        .fold(0.0, f64::max);
    Ok((y5, err))
}

fn interp(y0: &[f64], y1: &[f64], w: f64) -> Vec<f64> {
    y0.iter().zip(y1).map(|(a, b)| a + w * (b - a)).collect()
}

/// Illinois regula falsi on a bracket with `fa·fb ≤ 0`.
fn find_root<F: FnMut(f64) -> Result<f64>>(
    mut f: F,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    tol: f64,
) -> Result<f64> {
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    for _ in 0..200 {
        let mut c = b - fb * (b - a) / (fb - fa);
        if !(c > a.min(b) && c < a.max(b)) {
            c = 0.5 * (a + b);
        }
        let fc = f(c)?;
        if fc == 0.0 {
            return Ok(c);
        }
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
        } else {
            fa *= 0.5;
        }
        b = c;
        fb = fc;
        if (b - a).abs() < tol {
            return Ok(b);
        }
    }
    Err(Error::EventResolutionFailed("root localisation did not converge".into()))
}

/// Real zeros of `B` off the cuts with the value of `W − c_t` there.
fn margins(s: &EquilibriumState) -> Vec<Option<f64>> {
    s.b_real()
        .iter()
        .map(|&b| {
            if s.support().cut_containing(b).is_some() {
                None
            } else {
                Some(s.effective_potential(b))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Singular {
    Fusion { gap: usize },
    TypeIII { pair: usize, endpoint: usize },
}

/// Predicted collision times from first-order extrapolation of the local laws.
fn predict_singular(c: &Coords, v: &[f64], t: f64) -> Vec<(Singular, f64, f64)> {
    let mut out = Vec::new();
    let l = c.spread();
    let ne = c.endpoints.len();
    for k in 0..ne / 2 - 1 {
        let (i, j) = (2 * k + 1, 2 * k + 2);
        let d = 0.5 * (c.endpoints[j] - c.endpoints[i]);
        let dd = 0.5 * (v[j] - v[i]);
        if dd < 0.0 && d < 0.25 * l {
            out.push((Singular::Fusion { gap: k }, t + d / (-2.0 * dd), d / l));
        }
    }
    let nr = c.b_real.len();
    for (pi, &(s, q)) in c.pairs.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        let im = q.sqrt();
        let ds = v[ne + nr + 2 * pi];
        let dim = v[ne + nr + 2 * pi + 1] / (2.0 * im);
        for (e, &a) in c.endpoints.iter().enumerate() {
            let z = Complex64::new(s - a, im);
            let d = z.norm();
            if d > 0.2 * l {
                continue;
            }
            let dz = Complex64::new(ds - v[e], dim);
            let dd = (z.conj() * dz).re / d;
            if dd < 0.0 {
                out.push((Singular::TypeIII { pair: pi, endpoint: e }, t + d / (-3.0 * dd), d / l));
            }
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

struct Evolver<'a> {
    field: &'a ExternalField,
    opts: EvolveOptions,
    states: Vec<EquilibriumState>,
    events: Vec<TransitionEvent>,
    diagnostics: Vec<StepDiagnostic>,
    /// Near misses already examined: (pair, endpoint, distance).
    near_misses: Vec<(usize, usize, f64)>,
}

impl<'a> Evolver<'a> {
    fn refine(&self, t: f64, c: &Coords) -> Result<EquilibriumState> {
        EquilibriumState::refine(self.field, t, c, self.opts.newton)
    }

    fn refine_flat(&self, t: f64, c: &Coords) -> Result<EquilibriumState> {
        let mut o = self.opts.newton;
        o.allow_flat_pairs = true;
        let (coords, _) = hodograph_refine(self.field, t, c, o)?;
        EquilibriumState::from_solved(self.field, t, coords)
    }

    /// Guess at `tau` interpolated from the stored states bracketing it, when
    /// they share the topology of `like`.
    fn from_history(&self, tau: f64, like: &Coords) -> Option<Coords> {
        let topo = like.topology();
        let i = self.states.iter().rposition(|s| s.t <= tau)?;
        let s0 = &self.states[i];
        let s1 = self.states.get(i + 1).filter(|s| s.topology() == topo);
        if s0.topology() != topo {
            return None;
        }
        let y0 = s0.coords().to_vec();
        let y = match s1 {
            Some(s1) => interp(&y0, &s1.coords().to_vec(), (tau - s0.t) / (s1.t - s0.t)),
            None => y0,
        };
        Some(Coords::from_vec(topo, &y))
    }

    fn scale(t: f64) -> f64 {
        t.abs().max(1.0)
    }

    fn run(&mut self, mut state: EquilibriumState, t_end: f64) -> Result<()> {
        let t0 = state.t;
        let dt_max = self.opts.max_step.unwrap_or((t_end - t0) / 100.0);
        let mut dt = (1e-3 * dt_max).max(1e-4 * Self::scale(t0)).min(dt_max);
        let mut y = state.coords().to_vec();
        let mut t = state.t;
        let mut t_anchor = t;
        let mut since_anchor = 0;
        let mut steps = 0;
        self.states.push(state.clone());
        while t < t_end - 1e-14 * Self::scale(t_end) {
            steps += 1;
            if steps > self.opts.max_steps {
                return Err(Error::NonConvergence(format!("step budget exhausted at t = {t}")));
            }
            let topo = state.topology();
            let cur = Coords::from_vec(topo, &y);
            let rates = match coordinate_rates(&cur) {
                Ok(r) => r,
                Err(Error::NearSingular(msg)) => {
                    let (s, te) = self.singular_candidate(&state, t)?.ok_or_else(|| {
                        Error::EventResolutionFailed(format!("near-singular without candidate: {msg}"))
                    })?;
                    let post = self.resolve_singular(&state, s, te)?;
                    state = post;
                    self.states.push(state.clone());
                    y = state.coords().to_vec();
                    t = state.t;
                    t_anchor = t;
                    since_anchor = 0;
                    dt = 10.0 * self.opts.resume_offset * Self::scale(t);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trig = 1e-4 * Self::scale(t);
            let preds: Vec<_> = predict_singular(&cur, &rates, t)
                .into_iter()
                .filter(|(s, _, rel)| match s {
                    Singular::TypeIII { pair, endpoint } => !self
                        .near_misses
                        .iter()
                        .any(|&(p, e, d)| p == *pair && e == *endpoint && *rel * cur.spread() > 0.5 * d),
                    _ => true,
                })
                .collect();
            if let Some(&(s, te, _)) = preds.first() {
                if te - t < trig {
                    match self.resolve_singular(&state, s, te) {
                        Ok(post) => {
                            state = post;
                            self.states.push(state.clone());
                            y = state.coords().to_vec();
                            t = state.t;
                            t_anchor = t;
                            since_anchor = 0;
                            dt = 10.0 * self.opts.resume_offset * Self::scale(t);
                            continue;
                        }
                        Err(Error::EventResolutionFailed(msg)) if matches!(s, Singular::TypeIII { .. }) => {
                            if let Singular::TypeIII { pair, endpoint } = s {
                                let d = preds[0].2 * cur.spread();
                                self.near_misses.push((pair, endpoint, d));
                            }
                            let _ = msg;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            dt = dt.min(t_end - t).min(dt_max);
            if let Some(&(_, te, _)) = preds.first() {
                if te < t + dt {
                    dt = (0.5 * (te - t)).max(1e-3 * trig);
                }
            }
            let scales = cur.fd_scales();
            let f = |v: &[f64]| {
                let c = Coords::from_vec(topo, v);
                if !c.is_valid(true) {
                    return Err(Error::TopologyBroken("stage left the topology".into()));
                }
                coordinate_rates(&c)
            };
            let (yn, err) = match dp45_step(&f, &y, dt, &scales, self.opts.rtol) {
                Ok(x) => x,
                Err(_) => {
                    dt *= 0.25;
                    if dt < 1e-13 * Self::scale(t) {
                        return self.underflow(&state, t);
                    }
                    continue;
                }
            };
            if !(err <= 1.0) {
                dt *= if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
                if dt < 1e-13 * Self::scale(t) {
                    return self.underflow(&state, t);
                }
                continue;
            }
            let tn = t + dt;
            let cn = Coords::from_vec(topo, &yn);
            // a pair reaching the axis
            if let Some(pi) = cn.pairs.iter().position(|&(_, q)| q <= 0.0) {
                let post = self.resolve_extrema(&state, &y, &yn, t, tn, pi)?;
                state = post;
                self.states.push(state.clone());
                y = state.coords().to_vec();
                t = state.t;
                t_anchor = t;
                since_anchor = 0;
                dt = 10.0 * self.opts.resume_offset * Self::scale(t);
                continue;
            }
            let new_state = match self.refine(tn, &cn) {
                Ok(s) => s,
                Err(_) => {
                    dt *= 0.5;
                    if dt < 1e-13 * Self::scale(t) {
                        return self.underflow(&state, t);
                    }
                    continue;
                }
            };
            let m_old = margins(&state);
            let m_new = margins(&new_state);
            let crossing = m_old
                .iter()
                .zip(m_new.iter())
                .position(|(a, b)| matches!((a, b), (Some(a), Some(b)) if *a > 0.0 && *b <= 0.0));
            if let Some(i) = crossing {
                let post = self.resolve_birth(&state, &y, &new_state, i)?;
                state = post;
                self.states.push(state.clone());
                y = state.coords().to_vec();
                t = state.t;
                t_anchor = t;
                since_anchor = 0;
                dt = 10.0 * self.opts.resume_offset * Self::scale(t);
                continue;
            }
            t = tn;
            y = yn;
            since_anchor += 1;
            let mut drift = None;
            if since_anchor >= self.opts.n_refine {
                let yr = new_state.coords().to_vec();
                let d = y
                    .iter()
                    .zip(&yr)
                    .zip(&scales)
                    .map(|((a, b), s)| (a - b).abs() / s)
                    .fold(0.0, f64::max);
                drift = Some(d / (t - t_anchor).max(1e-300));
                y = yr;
                t_anchor = t;
                since_anchor = 0;
            }
            self.diagnostics.push(StepDiagnostic {
                t,
                dt,
                residual: new_state.residual_norm(),
                drift,
            });
            state = new_state;
            self.states.push(state.clone());
            dt *= (0.9 * err.max(1e-10).powf(-0.2)).min(5.0);
        }
        Ok(())
    }

    fn underflow(&mut self, state: &EquilibriumState, t: f64) -> Result<()> {
        Err(Error::StepUnderflow(t)).or_else(|e| match self.singular_candidate(state, t) {
            Ok(Some(_)) => Err(Error::EventResolutionFailed(format!(
                "step underflow near a singular configuration at t = {t}"
            ))),
            _ => Err(e),
        })
    }

    fn singular_candidate(&self, state: &EquilibriumState, t: f64) -> Result<Option<(Singular, f64)>> {
        let c = state.coords();
        let l = c.spread();
        // Geometric fallback: the narrowest gap or the closest pair.
        let mut best: Option<(Singular, f64)> = None;
        let mut best_d = f64::INFINITY;
        for k in 0..c.endpoints.len() / 2 - 1 {
            let d = c.endpoints[2 * k + 2] - c.endpoints[2 * k + 1];
            if d < best_d {
                best_d = d;
                best = Some((Singular::Fusion { gap: k }, t));
            }
        }
        for (pi, &(s, q)) in c.pairs.iter().enumerate() {
            for (e, &a) in c.endpoints.iter().enumerate() {
                let d = Complex64::new(s - a, q.max(0.0).sqrt()).norm();
                if d < best_d {
                    best_d = d;
                    best = Some((Singular::TypeIII { pair: pi, endpoint: e }, t));
                }
            }
        }
        Ok(if best_d < 0.05 * l { best } else { None })
    }

    fn resolve_singular(&mut self, state: &EquilibriumState, s: Singular, t_est: f64) -> Result<EquilibriumState> {
        match s {
            Singular::Fusion { gap } => self.resolve_fusion(state, gap, t_est),
            Singular::TypeIII { pair, endpoint } => self.resolve_type3(state, pair, endpoint, t_est),
        }
    }

    fn probe_deltas(&self, t: f64) -> Vec<f64> {
        let h = self.opts.probe_h * Self::scale(t);
        (0..self.opts.probe_levels).map(|i| h * 0.5f64.powi(i as i32)).collect()
    }

    // ── fusion ──

    fn resolve_fusion(&mut self, pre: &EquilibriumState, gap: usize, t_est: f64) -> Result<EquilibriumState> {
        let c = pre.coords();
        let (l, r) = (c.endpoints[2 * gap + 1], c.endpoints[2 * gap + 2]);
        let bi = c
            .b_real
            .iter()
            .position(|&b| b > l && b < r)
            .ok_or_else(|| Error::EventResolutionFailed("closing gap holds no zero of B".into()))?;
        let mut post = c.clone();
        post.endpoints.drain(2 * gap + 1..=2 * gap + 2);
        let b0 = post.b_real.remove(bi);
        post.pairs.push((b0, 0.0));
        let topo = post.topology();
        let field = self.field;
        let build = |v: &[f64]| -> Coords {
            let mut x = v[..v.len() - 1].to_vec();
            x.push(0.0);
            Coords::from_vec(topo, &x)
        };
        let mut x0 = post.to_vec();
        x0.pop();
        x0.push(t_est);
        let mut scales = post.fd_scales();
        scales.pop();
        scales.push(Self::scale(t_est));
        let sol = solve_nonlinear(
            |v| hodograph_residual(field, v[v.len() - 1], &build(v)),
            x0,
            &scales,
            |v| v[v.len() - 1] > 0.0 && build(v).is_valid(true),
            self.opts.newton,
        )
        .map_err(|e| Error::EventResolutionFailed(format!("fusion critical system: {e}")))?;
        let t_c = sol.x[sol.x.len() - 1];
        let crit = build(&sol.x);
        let pi = crit.pairs.len() - 1;
        let s0 = crit.pairs[pi].0;
        let cfg = crit.support()?;
        let h = green_numerator(&cfg)?;
        let mut rest = RealPolynomial::from_real_roots(&crit.b_real);
        for (i, &(s, q)) in crit.pairs.iter().enumerate() {
            if i != pi {
                rest = &rest * &RealPolynomial::quadratic_factor(s, q);
            }
        }
        let k = -2.0 * h.eval(s0) / (cfg.a_poly().eval(s0) * rest.eval(s0));
        if !(k > 0.0) {
            return Err(Error::EventResolutionFailed(format!("fusion slope {k} not positive")));
        }
        let rho_crit = robin_data(&cfg)?.rho;
        let post_at = |dt: f64| -> Result<EquilibriumState> {
            let mut g = crit.clone();
            g.pairs[pi].1 = 0.5 * k * dt;
            let s = self.refine_flat(t_c + dt, &g)?;
            if s.coords().pairs[pi].1 <= 0.0 {
                return Err(Error::EventResolutionFailed("merged pair did not leave the axis".into()));
            }
            self.refine(t_c + dt, s.coords())
        };
        let pre_at = |dt: f64| -> Result<EquilibriumState> {
            let d = (k * dt).sqrt();
            let mut g = crit.clone();
            let (s, _) = g.pairs.remove(pi);
            g.endpoints.push(s - d);
            g.endpoints.push(s + d);
            g.endpoints.sort_by(f64::total_cmp);
            g.b_real.insert(bi, s);
            self.refine(t_c - dt, &g)
        };
        let resume = self.opts.resume_offset * Self::scale(t_c);
        let next = post_at(resume)?;
        let probes = self.opts.probes.then(|| {
            let deltas = self.probe_deltas(t_c);
            ProbeWindow {
                left: deltas.iter().map(|&d| pre_at(d).ok()).collect(),
                right: deltas.iter().map(|&d| post_at(d).ok()).collect(),
                deltas,
                critical: crit.clone(),
                rho_crit,
                pair: Some(pi),
                endpoint: None,
            }
        });
        let mut constants = BTreeMap::new();
        constants.insert("k".into(), k);
        constants.insert("k_q".into(), 0.5 * k);
        constants.insert("rho_T".into(), rho_crit);
        constants.insert("critical_residual".into(), sol.residual);
        self.events.push(TransitionEvent {
            kind: EventKind::Fusion,
            time: t_c,
            location: s0,
            constants,
            probes,
        });
        Ok(next)
    }

    // ── type III ──

    fn resolve_type3(
        &mut self,
        pre: &EquilibriumState,
        pair: usize,
        endpoint: usize,
        t_est: f64,
    ) -> Result<EquilibriumState> {
        let c = pre.coords().clone();
        let topo = c.topology();
        let ne = c.endpoints.len();
        let pidx = ne + c.b_real.len() + 2 * pair;
        let field = self.field;
        let build = |v: &[f64]| -> Coords {
            let mut x = v[..v.len() - 1].to_vec();
            x.insert(pidx, v[endpoint]);
            x.insert(pidx + 1, 0.0);
            Coords::from_vec(topo, &x)
        };
        let full = c.to_vec();
        let mut x0: Vec<f64> = full
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != pidx && *i != pidx + 1)
            .map(|(_, v)| *v)
            .collect();
        x0.push(t_est);
        let full_scales = c.fd_scales();
        let mut scales: Vec<f64> = full_scales
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != pidx && *i != pidx + 1)
            .map(|(_, v)| *v)
            .collect();
        scales.push(Self::scale(t_est));
        let sol = solve_nonlinear(
            |v| hodograph_residual(field, v[v.len() - 1], &build(v)),
            x0,
            &scales,
            |v| v[v.len() - 1] > 0.0 && build(v).is_valid(true),
            self.opts.newton,
        )
        .map_err(|e| Error::EventResolutionFailed(format!("type III critical system: {e}")))?;
        if sol.residual > 1e-8 {
            return Err(Error::EventResolutionFailed(format!(
                "pair passes the endpoint without touching it (residual {:e})",
                sol.residual
            )));
        }
        let t_c = sol.x[sol.x.len() - 1];
        let crit = build(&sol.x);
        let a_e = crit.endpoints[endpoint];
        let cut = endpoint / 2;
        let (cl, cr) = (crit.endpoints[2 * cut], crit.endpoints[2 * cut + 1]);
        let d0 = cr - cl;
        let side = if c.pairs[pair].0 > a_e { 1.0 } else { -1.0 };
        let rho_crit = robin_data(&crit.support()?)?.rho;
        // leading order: |Re b − a| = (25Δ/(4 d0))^{1/3}, Im b = |Re b − a|/√5
        let lead = |dt: f64| -> (f64, f64) {
            let u = (6.25 * dt / d0).cbrt();
            (u, u / 5f64.sqrt())
        };
        // Pre side: continue from the last refined state, scaling the local
        // offset with the cube-root clock.
        let t_pre = pre.t;
        let off0 = c.pairs[pair].0 - c.endpoints[endpoint];
        let im0 = c.pairs[pair].1.sqrt();
        let pre_at = |dt: f64| -> Result<EquilibriumState> {
            let w = (dt / (t_c - t_pre)).cbrt();
            let mut tries: Vec<Coords> = self.from_history(t_c - dt, &c).into_iter().collect();
            let mut g = crit.clone();
            for (gi, ci) in g.endpoints.iter_mut().zip(&c.endpoints) {
                *gi += (ci - *gi) * dt / (t_c - t_pre);
            }
            let mut g1 = g.clone();
            g1.pairs[pair] = (g.endpoints[endpoint] + off0 * w, (im0 * w).powi(2));
            tries.push(g1);
            let (dr, di) = lead(dt);
            let mut g2 = g.clone();
            g2.pairs[pair] = (g.endpoints[endpoint] + side * dr, di * di);
            tries.push(g2);
            first_ok(tries.iter().map(|gg| {
                let s = self.refine(t_c - dt, gg)?;
                let (ps, _) = s.coords().pairs[pair];
                if (ps - s.endpoints()[endpoint]) * side > 0.0 {
                    Ok(s)
                } else {
                    Err(Error::EventResolutionFailed("pair on the wrong side".into()))
                }
            }))
        };
        let post_at = |dt: f64| -> Result<EquilibriumState> {
            let mut tries = vec![];
            if let Ok(l) = pre_at(dt) {
                let lc = l.coords();
                let mut g = crit.clone();
                for (gi, li) in g.endpoints.iter_mut().zip(&lc.endpoints) {
                    *gi = 2.0 * *gi - li;
                }
                for (gi, li) in g.b_real.iter_mut().zip(&lc.b_real) {
                    *gi = 2.0 * *gi - li;
                }
                for (i, (gi, li)) in g.pairs.iter_mut().zip(&lc.pairs).enumerate() {
                    if i == pair {
                        continue;
                    }
                    *gi = (2.0 * gi.0 - li.0, 2.0 * gi.1 - li.1);
                }
                let off = lc.pairs[pair].0 - lc.endpoints[endpoint];
                g.pairs[pair] = (g.endpoints[endpoint] - off, lc.pairs[pair].1);
                tries.push(g);
            }
            let (dr, di) = lead(dt);
            for f in [1.0, 0.5, 2.0] {
                let mut g = crit.clone();
                g.pairs[pair] = (a_e - side * dr * f, (di * f).powi(2));
                tries.push(g);
            }
            first_ok(tries.iter().map(|gg| {
                let s = self.refine(t_c + dt, gg)?;
                let (ps, _) = s.coords().pairs[pair];
                if (ps - s.endpoints()[endpoint]) * side < 0.0 {
                    Ok(s)
                } else {
                    Err(Error::EventResolutionFailed("pair did not cross the endpoint".into()))
                }
            }))
        };
        let resume = self.opts.resume_offset * Self::scale(t_c);
        let next = post_at(resume)?;
        let probes = self.opts.probes.then(|| {
            let deltas = self.probe_deltas(t_c);
            ProbeWindow {
                left: deltas.iter().map(|&d| pre_at(d).ok()).collect(),
                right: deltas.iter().map(|&d| post_at(d).ok()).collect(),
                deltas,
                critical: crit.clone(),
                rho_crit,
                pair: Some(pair),
                endpoint: Some(endpoint),
            }
        });
        let mut constants = BTreeMap::new();
        constants.insert("d0".into(), d0);
        constants.insert("endpoint_index".into(), endpoint as f64);
        constants.insert("rho_T".into(), rho_crit);
        constants.insert("critical_residual".into(), sol.residual);
        self.events.push(TransitionEvent {
            kind: EventKind::TypeIII,
            time: t_c,
            location: a_e,
            constants,
            probes,
        });
        Ok(next)
    }

    // ── extrema birth ──

    fn resolve_extrema(
        &mut self,
        pre: &EquilibriumState,
        y0: &[f64],
        y1: &[f64],
        t0: f64,
        t1: f64,
        pi: usize,
    ) -> Result<EquilibriumState> {
        let topo = pre.topology();
        let q_at = |tau: f64| -> Result<f64> {
            let w = (tau - t0) / (t1 - t0);
            let s = self.refine_flat(tau, &Coords::from_vec(topo, &interp(y0, y1, w)))?;
            Ok(s.coords().pairs[pi].1)
        };
        let q0 = pre.coords().pairs[pi].1;
        let q1 = q_at(t1)?;
        if q1 > 0.0 {
            return Err(Error::EventResolutionFailed("pair did not reach the axis".into()));
        }
        let t_c = find_root(&q_at, t0, q0, t1, q1, 1e-13 * Self::scale(t1))?;
        let w = (t_c - t0) / (t1 - t0);
        let crit = self.refine_flat(t_c, &Coords::from_vec(topo, &interp(y0, y1, w)))?;
        let cc = crit.coords().clone();
        let s0 = cc.pairs[pi].0;
        let rates = coordinate_rates(&cc)?;
        let g = -rates[cc.endpoints.len() + cc.b_real.len() + 2 * pi + 1];
        if !(g > 0.0) {
            return Err(Error::EventResolutionFailed(format!("pair touches the axis with rate {g}")));
        }
        let rho_crit = robin_data(crit.support())?.rho;
        let post_at = |dt: f64| -> Result<EquilibriumState> {
            let mut gc = cc.clone();
            gc.pairs[pi].1 = -g * dt;
            let s = self.refine_flat(t_c + dt, &gc)?;
            let (sp, q) = s.coords().pairs[pi];
            if q >= 0.0 {
                return Err(Error::EventResolutionFailed("pair stayed off the axis".into()));
            }
            let mut split = s.coords().clone();
            split.pairs.remove(pi);
            let d = (-q).sqrt();
            split.b_real.push(sp - d);
            split.b_real.push(sp + d);
            self.refine(t_c + dt, &split)
        };
        let pre_at = |dt: f64| -> Result<EquilibriumState> {
            let mut gc = cc.clone();
            gc.pairs[pi].1 = g * dt;
            self.refine(t_c - dt, &gc)
        };
        let resume = self.opts.resume_offset * Self::scale(t_c);
        let next = post_at(resume)?;
        let probes = self.opts.probes.then(|| {
            let deltas = self.probe_deltas(t_c);
            ProbeWindow {
                left: deltas.iter().map(|&d| pre_at(d).ok()).collect(),
                right: deltas.iter().map(|&d| post_at(d).ok()).collect(),
                deltas,
                critical: cc.clone(),
                rho_crit,
                pair: Some(pi),
                endpoint: None,
            }
        });
        let mut constants = BTreeMap::new();
        constants.insert("g".into(), g);
        constants.insert("rho_T".into(), rho_crit);
        self.events.push(TransitionEvent {
            kind: EventKind::ExtremaBirth,
            time: t_c,
            location: s0,
            constants,
            probes,
        });
        Ok(next)
    }

    // ── birth of a cut ──

    fn resolve_birth(
        &mut self,
        pre: &EquilibriumState,
        y0: &[f64],
        stale: &EquilibriumState,
        bi: usize,
    ) -> Result<EquilibriumState> {
        let topo = pre.topology();
        let (t0, t1) = (pre.t, stale.t);
        let y1 = stale.coords().to_vec();
        let m_at = |tau: f64| -> Result<f64> {
            let w = (tau - t0) / (t1 - t0);
            let s = self.refine(tau, &Coords::from_vec(topo, &interp(y0, &y1, w)))?;
            Ok(s.effective_potential(s.b_real()[bi]))
        };
        let m0 = pre.effective_potential(pre.b_real()[bi]);
        let m1 = stale.effective_potential(stale.b_real()[bi]);
        let t_c = find_root(&m_at, t0, m0, t1, m1, 1e-13 * Self::scale(t1))?;
        let w = (t_c - t0) / (t1 - t0);
        let crit = self.refine(t_c, &Coords::from_vec(topo, &interp(y0, &y1, w)))?;
        let cc = crit.coords().clone();
        let b0 = cc.b_real[bi];
        let cfg = crit.support();
        let green = robin_data(cfg)?.green(b0);
        let kappa = cfg.branch_sign(b0) * cfg.a_poly().eval(b0).abs().sqrt() * crit.b_poly().derivative().eval(b0);
        let c_law = 4.0 * green / kappa;
        if !(c_law > 0.0) {
            return Err(Error::EventResolutionFailed(format!(
                "birth at {b0} with non-positive constant {c_law}"
            )));
        }
        let rho_crit = crit.rho;
        let half_width = |dt: f64| -> f64 {
            let mut d2 = c_law * dt / (1.0 / (c_law * dt)).ln().max(1.0);
            for _ in 0..50 {
                d2 = c_law * dt / (1.0 / d2).ln().max(1.0);
            }
            d2.sqrt()
        };
        let post_at = |dt: f64| -> Result<EquilibriumState> {
            let d = half_width(dt);
            first_ok([1.0, 0.7, 1.4, 0.5, 2.0].iter().map(|f| {
                let mut g = cc.clone();
                g.b_real.remove(bi);
                g.endpoints.push(b0 - d * f);
                g.endpoints.push(b0 + d * f);
                g.endpoints.sort_by(f64::total_cmp);
                let s = self.refine(t_c + dt, &g)?;
                let k = s.support().cut_containing(b0).ok_or_else(|| {
                    Error::EventResolutionFailed("new cut does not cover the birth point".into())
                })?;
                let (l, r) = s.support().cut(k);
                if r - l < 0.5 * cc.spread() {
                    Ok(s)
                } else {
                    Err(Error::EventResolutionFailed("new cut merged with an old one".into()))
                }
            }))
        };
        let pre_at = |dt: f64| -> Result<EquilibriumState> { self.refine(t_c - dt, &cc) };
        let resume = self.opts.resume_offset * Self::scale(t_c);
        let next = post_at(resume)?;
        let probes = self.opts.probes.then(|| {
            let deltas = self.probe_deltas(t_c);
            ProbeWindow {
                left: deltas.iter().map(|&d| pre_at(d).ok()).collect(),
                right: deltas.iter().map(|&d| post_at(d).ok()).collect(),
                deltas,
                critical: cc.clone(),
                rho_crit,
                pair: None,
                endpoint: None,
            }
        });
        let mut constants = BTreeMap::new();
        constants.insert("C".into(), c_law);
        constants.insert("green".into(), green);
        constants.insert("kappa".into(), kappa);
        constants.insert("rho_T".into(), rho_crit);
        constants.insert("margin".into(), crit.effective_potential(b0));
        self.events.push(TransitionEvent {
            kind: EventKind::BirthOfCut,
            time: t_c,
            location: b0,
            constants,
            probes,
        });
        Ok(next)
    }
}

fn first_ok<I: Iterator<Item = Result<EquilibriumState>>>(it: I) -> Result<EquilibriumState> {
    let mut last = Error::EventResolutionFailed("no seed tried".into());
    for r in it {
        match r {
            Ok(s) => return Ok(s),
            Err(e) => last = e,
        }
    }
    Err(Error::EventResolutionFailed(format!("no seed converged: {last}")))
}

/// Evolves from a small-mass seed at `t_start` to `t_end`.
pub fn evolve(field: &ExternalField, t_start: f64, t_end: f64, opts: EvolveOptions) -> Result<Trajectory> {
    if !(t_start > 0.0) || !(t_end > t_start) {
        return Err(Error::InvalidInput(format!(
            "need 0 < t_start < t_end, got {t_start}, {t_end}"
        )));
    }
    let seed = seed_small_t(field, t_start)?;
    evolve_from(seed, t_end, opts)
}

/// Evolves a given state to `t_end`.
pub fn evolve_from(state: EquilibriumState, t_end: f64, opts: EvolveOptions) -> Result<Trajectory> {
    let field = state.field().clone();
    let t_start = state.t;
    let mut ev = Evolver {
        field: &field,
        opts,
        states: Vec::new(),
        events: Vec::new(),
        diagnostics: Vec::new(),
        near_misses: Vec::new(),
    };
    ev.run(state, t_end)?;
    Ok(Trajectory {
        states: ev.states,
        events: ev.events,
        t_range: (t_start, t_end),
        diagnostics: ev.diagnostics,
    })
}

// ─── probes and fits ─────────────────────────────────────────────────────

/// Least-squares line `y = a + b x`; returns `(a, b)`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Fit of a local law for one event.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub kind: EventKind,
    /// Log-log slope of the local size against `|t − T|`.
    pub exponent: f64,
    pub prefactor: f64,
    /// Kind-specific quantities: fitted and predicted constants, ratios.
    pub details: BTreeMap<String, f64>,
}

fn window<'e>(traj: &'e Trajectory, idx: usize) -> Result<(&'e TransitionEvent, &'e ProbeWindow)> {
    let ev = traj
        .events
        .get(idx)
        .ok_or_else(|| Error::InsufficientWindow(format!("no event with index {idx}")))?;
    let w = ev
        .probes
        .as_ref()
        .ok_or_else(|| Error::InsufficientWindow("event carries no probe states".into()))?;
    Ok((ev, w))
}

fn side_samples<F: Fn(&EquilibriumState) -> Option<f64>>(
    deltas: &[f64],
    side: &[Option<EquilibriumState>],
    f: F,
) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (d, s) in deltas.iter().zip(side) {
        if let Some(v) = s.as_ref().and_then(&f) {
            xs.push(*d);
            ys.push(v);
        }
    }
    (xs, ys)
}

fn log_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    let (a, b) = linear_fit(&lx, &ly);
    (b, a.exp())
}

/// Fits the local law of event `idx` from its probe window.
pub fn scaling_probe(traj: &Trajectory, idx: usize) -> Result<ScalingFit> {
    let (ev, w) = window(traj, idx)?;
    let b0 = ev.location;
    let mut details = BTreeMap::new();
    let need = |n: usize| -> Result<()> {
        if n < 3 {
            Err(Error::InsufficientWindow(format!("only {n} probe states")))
        } else {
            Ok(())
        }
    };
    let (exponent, prefactor) = match ev.kind {
        EventKind::Fusion => {
            let (xs, ys) = side_samples(&w.deltas, &w.left, |s| {
                s.support()
                    .gaps()
                    .find(|(l, r)| *l <= b0 && b0 <= *r)
                    .map(|(l, r)| 0.5 * (r - l))
            });
            need(xs.len())?;
            let ratio: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y * y / x).collect();
            let (k_fit, _) = linear_fit(&xs, &ratio);
            let k = ev.constants["k"];
            details.insert("k_fit".into(), k_fit);
            details.insert("k_predicted".into(), k);
            details.insert("k_rel_error".into(), (k_fit - k).abs() / k);
            log_slope(&xs, &ys)
        }
        EventKind::ExtremaBirth => {
            let (xs, ys) = side_samples(&w.deltas, &w.right, |s| {
                let mut near: Vec<f64> = s.b_real().to_vec();
                near.sort_by(|a, b| (a - b0).abs().total_cmp(&(b - b0).abs()));
                (near.len() >= 2).then(|| 0.5 * (near[0] - near[1]).abs())
            });
            need(xs.len())?;
            let g = ev.constants["g"];
            let (e, pf) = log_slope(&xs, &ys);
            details.insert("prefactor_predicted".into(), g.sqrt());
            (e, pf)
        }
        EventKind::TypeIII => {
            let pair = w.pair.expect("type III window records the pair");
            let e = w.endpoint.expect("type III window records the endpoint");
            let off = |s: &EquilibriumState| {
                let (re, im) = s.b_pairs()[pair];
                Some((re - s.endpoints()[e], im))
            };
            let (xl, yl) = side_samples(&w.deltas, &w.left, |s| off(s).map(|v| v.0));
            let (xr, yr) = side_samples(&w.deltas, &w.right, |s| off(s).map(|v| v.0));
            need(xl.len().min(xr.len()))?;
            let (_, il) = side_samples(&w.deltas, &w.left, |s| off(s).map(|v| v.1));
            let (_, ir) = side_samples(&w.deltas, &w.right, |s| off(s).map(|v| v.1));
            let ratio_fit = |xs: &[f64], re: &[f64], im: &[f64]| {
                let u: Vec<f64> = xs.iter().map(|x| x.cbrt()).collect();
                let r: Vec<f64> = re.iter().zip(im).map(|(a, b)| b / a.abs()).collect();
                linear_fit(&u, &r).0
            };
            let rl = ratio_fit(&xl, &yl, &il);
            let rr = ratio_fit(&xr, &yr, &ir);
            let (el, pl) = log_slope(&xl, &yl);
            let (er, pr) = log_slope(&xr, &yr);
            details.insert("exponent_left".into(), el);
            details.insert("exponent_right".into(), er);
            details.insert("prefactor_left".into(), pl);
            details.insert("prefactor_right".into(), pr);
            details.insert("ratio_left".into(), rl);
            details.insert("ratio_right".into(), rr);
            details.insert("ratio".into(), 0.5 * (rl + rr));
            let d0 = ev.constants["d0"];
            details.insert("prefactor_predicted".into(), (6.25 / d0).cbrt());
            details.insert("ratio_predicted".into(), 1.0 / 5f64.sqrt());
            // law obtained with the inner endpoint rate halved
            details.insert("prefactor_reference".into(), 1.5 / d0.cbrt());
            details.insert("ratio_reference".into(), 1.0 / 3f64.sqrt());
            (0.5 * (el + er), 0.5 * (pl + pr))
        }
        EventKind::BirthOfCut => {
            let (xs, ys) = side_samples(&w.deltas, &w.right, |s| {
                s.support()
                    .cut_containing(b0)
                    .map(|k| s.support().cut(k))
                    .map(|(l, r)| 0.5 * (r - l))
            });
            need(xs.len())?;
            // δ² log(1/δ²) = C·Δt + K·δ²
            let fit_c = |xs: &[f64], ys: &[f64]| -> f64 {
                let n = xs.len();
                let mut m = nalgebra::DMatrix::<f64>::zeros(n, 2);
                let mut rhs = nalgebra::DVector::<f64>::zeros(n);
                for i in 0..n {
                    let d2 = ys[i] * ys[i];
                    m[(i, 0)] = xs[i];
                    m[(i, 1)] = d2;
                    rhs[i] = d2 * (1.0 / d2).ln();
                }
                let sol = m.svd(true, true).solve(&rhs, 1e-300).expect("svd solve");
                sol[0]
            };
            let c_full = fit_c(&xs, &ys);
            let half = xs.len() / 2;
            let c_half = fit_c(&xs[half..], &ys[half..]);
            details.insert("C_fit".into(), c_full);
            details.insert("C_fit_half_window".into(), c_half);
            details.insert("C_window_change".into(), (c_full - c_half).abs() / c_half.abs());
            details.insert("C_predicted".into(), ev.constants["C"]);
            log_slope(&xs, &ys)
        }
    };
    Ok(ScalingFit {
        kind: ev.kind,
        exponent,
        prefactor,
        details,
    })
}

/// One-sided limits of `dρ/dt` at an event.
#[derive(Debug, Clone, Serialize)]
pub struct RobinJump {
    pub left: f64,
    pub right: f64,
    /// For a birth of a cut the right derivative diverges; these describe the fit
    /// `ρ(T+Δ) − ρ(T) ≈ −(g²/2)/log(1/Δ)`.
    pub divergence: Option<BTreeMap<String, f64>>,
}

fn richardson(d: &[f64]) -> f64 {
    let n = d.len();
    let mut t: Vec<Vec<f64>> = vec![d.to_vec()];
    for j in 1..n {
        let prev = &t[j - 1];
        let f = 2f64.powi(j as i32);
        let row: Vec<f64> = (1..prev.len()).map(|k| (f * prev[k] - prev[k - 1]) / (f - 1.0)).collect();
        t.push(row);
    }
    // Use a moderately deep entry to stay clear of rounding amplification.
    let depth = (n - 1).min(3);
    *t[depth].last().expect("non-empty")
}

pub fn robin_derivative_jump(traj: &Trajectory, idx: usize) -> Result<RobinJump> {
    let (ev, w) = window(traj, idx)?;
    let rho_t = w.rho_crit;
    let consecutive = |side: &[Option<EquilibriumState>], sign: f64| -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for (d, s) in w.deltas.iter().zip(side) {
            match s {
                Some(s) => out.push((s.rho - rho_t) / (sign * d)),
                None => break,
            }
        }
        if out.len() < 3 {
            return Err(Error::InsufficientWindow(format!("{} usable probe states", out.len())));
        }
        Ok(out)
    };
    if ev.kind == EventKind::TypeIII {
        // ρ(T ± Δ) − ρ(T) ~ Δ^{1/3}: both one-sided derivatives diverge
        let mut div = BTreeMap::new();
        for (name, side) in [("left", &w.left), ("right", &w.right)] {
            let (xs, ys) = side_samples(&w.deltas, side, |s| Some(s.rho - rho_t));
            if xs.len() < 3 {
                return Err(Error::InsufficientWindow(format!("{name} probes missing")));
            }
            let (e, pf) = log_slope(&xs, &ys);
            div.insert(format!("exponent_{name}"), e - 1.0);
            div.insert(format!("prefactor_{name}"), e * pf);
        }
        return Ok(RobinJump {
            left: f64::NEG_INFINITY,
            right: f64::NEG_INFINITY,
            divergence: Some(div),
        });
    }
    let left = richardson(&consecutive(&w.left, -1.0)?);
    if ev.kind == EventKind::BirthOfCut {
        let (xs, ys) = side_samples(&w.deltas, &w.right, |s| Some(s.rho - rho_t));
        if xs.len() < 3 {
            return Err(Error::InsufficientWindow("right side probes missing".into()));
        }
        let u: Vec<f64> = xs.iter().map(|x| 1.0 / (1.0 / x).ln()).collect();
        let (_, slope) = linear_fit(&u, &ys);
        // exponent of |ρ'| against Δ·log²Δ from consecutive differences
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        for i in 1..xs.len() {
            let (x0, x1) = (xs[i], xs[i - 1]);
            let der = (ys[i - 1] - ys[i]) / (x1 - x0);
            let xm = (x0 * x1).sqrt();
            lx.push((xm * xm.ln().powi(2)).ln());
            ly.push(der.abs().ln());
        }
        let (_, exponent) = linear_fit(&lx, &ly);
        let g = ev.constants["green"];
        let mut div = BTreeMap::new();
        div.insert("g_squared_fit".into(), -2.0 * slope);
        div.insert("g_squared".into(), g * g);
        div.insert("exponent".into(), exponent);
        return Ok(RobinJump {
            left,
            right: f64::NEG_INFINITY,
            divergence: Some(div),
        });
    }
    let right = richardson(&consecutive(&w.right, 1.0)?);
    Ok(RobinJump {
        left,
        right,
        divergence: None,
    })
}

/// Closed-form comparison values for a fusion: the left limit and jump
/// expressions evaluated on the critical data `(a_1, a_2, b_0)` of a one-cut
/// merge.
#[derive(Debug, Clone, Serialize)]
pub struct FusionFormulae {
    pub left_formula: f64,
    pub right_formula: f64,
    pub jump_formula: f64,
}

pub fn fusion_formulae(a1: f64, a2: f64, b0: f64) -> FusionFormulae {
    let left = -1.0 / ((a1 - b0).powi(2) * (a2 - b0).powi(2));
    let right = -2.0 / (a2 - a1).powi(2) * (1.0 / (a2 - b0).powi(2) + 1.0 / (a1 - b0).powi(2));
    let jump = -((a1 + a2 - 2.0 * b0) / ((a2 - a1) * (a1 - b0) * (a2 - b0))).powi(2);
    FusionFormulae {
        left_formula: left,
        right_formula: right,
        jump_formula: jump,
    }
}

// ─── differentiation identities ──────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct DifferentiationCheck {
    pub t: f64,
    pub dc_dt: f64,
    pub rho: f64,
    pub di_dt: f64,
    pub two_c: f64,
    /// Sup over the inner 90% of each cut of `|∂_t density − ω|`.
    pub density_error: f64,
}

/// Fourth-order central differences on `t ± h, t ± 2h` with the same topology.
pub fn differentiation_check(state: &EquilibriumState, h: f64) -> Result<DifferentiationCheck> {
    let c = state.coords();
    let v = coordinate_rates(c)?;
    let y = c.to_vec();
    let topo = c.topology();
    let at = |dt: f64| -> Result<EquilibriumState> {
        let g: Vec<f64> = y.iter().zip(&v).map(|(a, b)| a + dt * b).collect();
        EquilibriumState::refine(state.field(), state.t + dt, &Coords::from_vec(topo, &g), NewtonOptions::default())
    };
    let s = [at(-2.0 * h)?, at(-h)?, at(h)?, at(2.0 * h)?];
    let d = |f: &dyn Fn(&EquilibriumState) -> f64| {
        (f(&s[0]) - 8.0 * f(&s[1]) + 8.0 * f(&s[2]) - f(&s[3])) / (12.0 * h)
    };
    let robin = state.robin()?;
    let mut err: f64 = 0.0;
    for k in 0..state.support().p() {
        let (l, r) = state.support().cut(k);
        let (l2, r2) = (l + 0.05 * (r - l), r - 0.05 * (r - l));
        for i in 0..=60 {
            let x = l2 + (r2 - l2) * i as f64 / 60.0;
            err = err.max((d(&|st| st.density_at(x)) - robin.omega(x)).abs());
        }
    }
    Ok(DifferentiationCheck {
        t: state.t,
        dc_dt: d(&|st| st.c_t),
        rho: state.rho,
        di_dt: d(&|st| st.energy),
        two_c: 2.0 * state.c_t,
        density_error: err,
    })
}

// ─── export ──────────────────────────────────────────────────────────────

/// Trajectory as CSV: `t, p, a_1..a_P, b_1..b_R, pair_re_1, pair_im_1, …,
/// c_t, rho, energy`, padded with empty cells to the widest topology.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let pmax = traj.states.iter().map(|s| s.endpoints().len()).max().unwrap_or(0);
    let rmax = traj.states.iter().map(|s| s.b_real().len()).max().unwrap_or(0);
    let qmax = traj.states.iter().map(|s| s.b_pairs().len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "p".to_string()];
    header.extend((1..=pmax).map(|i| format!("a_{i}")));
    header.extend((1..=rmax).map(|i| format!("b_{i}")));
    for i in 1..=qmax {
        header.push(format!("pair_re_{i}"));
        header.push(format!("pair_im_{i}"));
    }
    header.extend(["c_t", "rho", "energy"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    let fmt = |x: f64| format!("{x:e}");
    for s in &traj.states {
        let mut row = vec![fmt(s.t), s.support().p().to_string()];
        let pad = |row: &mut Vec<String>, vals: Vec<String>, n: usize| {
            let k = vals.len();
            row.extend(vals);
            row.extend(std::iter::repeat_n(String::new(), n - k));
        };
        pad(&mut row, s.endpoints().iter().map(|&x| fmt(x)).collect(), pmax);
        pad(&mut row, s.b_real().iter().map(|&x| fmt(x)).collect(), rmax);
        pad(
            &mut row,
            s.b_pairs().iter().flat_map(|&(a, b)| [fmt(a), fmt(b)]).collect(),
            2 * qmax,
        );
        row.extend([fmt(s.c_t), fmt(s.rho), fmt(s.energy)]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Events document: `{"schema_version": 1, "events": [{kind, T, location, constants}]}`.
pub fn events_json(traj: &Trajectory) -> serde_json::Value {
    serde_json::json!({
        "schema_version": 1,
        "events": traj.events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn seeds() {
        let q = seed_small_t(&ExternalField::quadratic(), 1e-4).unwrap();
        let w = (2e-4f64).sqrt();
        assert!(close(q.endpoints()[0], -w, 1e-15) && close(q.endpoints()[1], w, 1e-15));
        let s = seed_small_t(&ExternalField::new(vec![0.0, -1.0, 0.0]).unwrap(), 1e-4).unwrap();
        assert_eq!(s.support().p(), 2);
        assert!(close(s.endpoints()[0] + s.endpoints()[3], 0.0, 1e-13));
        let one = seed_small_t(&ExternalField::new(vec![0.0, -0.5, -1.0 / 3.0]).unwrap(), 1e-4);
        assert_eq!(one.unwrap().support().p(), 1);
        let flat = seed_small_t(&ExternalField::new(vec![0.0, 0.0, 0.0]).unwrap(), 1e-4).unwrap();
        let r = (8e-4f64 / 3.0).powf(0.25);
        assert!(close(flat.endpoints()[1], r, 1e-12));
    }

    #[test]
    fn quadratic_rates() {
        let f = ExternalField::quadratic();
        let t = 0.9;
        let s = seed_small_t(&f, t).unwrap();
        let r = time_derivatives(&s).unwrap();
        assert!(close(r.endpoints[0], -1.0 / (2.0 * t).sqrt(), 1e-13));
        assert!(close(r.endpoints[1], 1.0 / (2.0 * t).sqrt(), 1e-13));
        let c0 = coupling_derivatives(&s, 0).unwrap();
        assert!(close(c0.endpoints[1], r.endpoints[1], 1e-15));
    }

    #[test]
    fn two_cut_rates() {
        let f = ExternalField::new(vec![0.0, -1.0, 0.0]).unwrap();
        let t: f64 = 0.8;
        let s = evolve(&f, 1e-3, t, EvolveOptions::default()).unwrap().states.pop().unwrap();
        let r = time_derivatives(&s).unwrap();
        let (a, c) = (s.endpoints()[2], s.endpoints()[3]);
        assert!(close(r.endpoints[3], 1.0 / (2.0 * c * (2.0 * t).sqrt()), 1e-10));
        assert!(close(r.endpoints[2], -1.0 / (2.0 * a * (2.0 * t).sqrt()), 1e-10));
    }

    #[test]
    fn one_cut_coupling_derivatives() {
        let f = ExternalField::new(vec![0.2, 0.5, 0.1]).unwrap();
        let s = seed_small_t(&f, 1e-3).unwrap();
        let s = evolve_from(s, 0.5, EvolveOptions::default()).unwrap().states.pop().unwrap();
        assert_eq!(s.support().p(), 1, "{:?}", s.endpoints());
        let b = s.b_poly();
        let (a1, a2) = (s.endpoints()[0], s.endpoints()[1]);
        let d1 = coupling_derivatives(&s, 1).unwrap();
        assert!(close(d1.endpoints[0], -1.0 / b.eval(a1), 1e-12));
        let d2 = coupling_derivatives(&s, 2).unwrap();
        assert!(close(d2.endpoints[0], -(3.0 * a1 + a2) / (2.0 * b.eval(a1)), 1e-11));
        for i in 0..4 {
            for j in 0..4 {
                assert!(hydrodynamic_defect(&s, i, j).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn richardson_on_smooth_function() {
        let f = |x: f64| x.sin() + 0.3 * x * x;
        let d: Vec<f64> = (0..6)
            .map(|i| {
                let h = 0.01 * 0.5f64.powi(i);
                (f(1.0 + h) - f(1.0)) / h
            })
            .collect();
        assert!(close(richardson(&d), 1f64.cos() + 0.6, 1e-10));
    }

    #[test]
    fn root_finder() {
        let r = find_root(|x| Ok(x * x * x - 2.0), 0.0, -2.0, 2.0, 6.0, 1e-14).unwrap();
        assert!(close(r, 2f64.cbrt(), 1e-13));
    }

    #[test]
    fn fusion_formulae_symmetric() {
        let f = fusion_formulae(-2.0, 2.0, 0.0);
        assert!(close(f.left_formula, -1.0 / 16.0, 1e-15));
        assert!(close(f.jump_formula, 0.0, 1e-15));
    }

    #[test]
    fn no_event_has_no_window() {
        let traj = evolve(&ExternalField::quadratic(), 0.1, 1.0, EvolveOptions::default()).unwrap();
        assert!(traj.events.is_empty());
        assert!(matches!(robin_derivative_jump(&traj, 0), Err(Error::InsufficientWindow(_))));
    }
}
