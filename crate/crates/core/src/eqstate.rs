//! Equilibrium state at fixed mass `t`: the algebraic (hodograph) system on
//! endpoints and zeros of `B`, its Newton solution, and the quantities read
//! off a solved state.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperquad::{
    period_residuals_scaled, robin_data, solve_h_family, HFamily,
    RobinData, SupportConfig, TAIL_TERMS,
};
use crate::polycore::{all_roots, laurent_sqrt, ExternalField, Laurent, RealPolynomial};

/// Number of cuts, real zeros of `B` and conjugate pairs of zeros of `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub p: usize,
    pub n_real: usize,
    pub n_pairs: usize,
}

impl Topology {
    pub fn unknowns(&self) -> usize {
        2 * self.p + self.n_real + 2 * self.n_pairs
    }
}

/// Raw coordinates. A pair is kept as the factor `(x-s)² + q`, so `q` is the
/// squared imaginary part; `q ≤ 0` is only meaningful during event handling.
#[derive(Debug, Clone, PartialEq)]
pub struct Coords {
    pub endpoints: Vec<f64>,
    pub b_real: Vec<f64>,
    pub pairs: Vec<(f64, f64)>,
}

impl Coords {
    pub fn topology(&self) -> Topology {
        Topology {
            p: self.endpoints.len() / 2,
            n_real: self.b_real.len(),
            n_pairs: self.pairs.len(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.endpoints.clone();
        v.extend_from_slice(&self.b_real);
        for &(s, q) in &self.pairs {
            v.push(s);
            v.push(q);
        }
        v
    }

    pub fn from_vec(topo: Topology, v: &[f64]) -> Coords {
        let ne = 2 * topo.p;
        let endpoints = v[..ne].to_vec();
        let b_real = v[ne..ne + topo.n_real].to_vec();
        let pairs = v[ne + topo.n_real..]
            .chunks(2)
            .map(|c| (c[0], c[1]))
            .collect();
        Coords {
            endpoints,
            b_real,
            pairs,
        }
    }

    pub fn b_poly(&self) -> RealPolynomial {
        let mut b = RealPolynomial::from_real_roots(&self.b_real);
        for &(s, q) in &self.pairs {
            b = &b * &RealPolynomial::quadratic_factor(s, q);
        }
        b
    }

    pub fn support(&self) -> Result<SupportConfig> {
        SupportConfig::new(self.endpoints.clone())
    }

    pub fn spread(&self) -> f64 {
        self.endpoints[self.endpoints.len() - 1] - self.endpoints[0]
    }

    /// Endpoints increasing and, unless `allow_flat`, every `q` positive.
    pub fn is_valid(&self, allow_flat: bool) -> bool {
        self.endpoints.iter().all(|x| x.is_finite())
            && self.endpoints.windows(2).all(|w| w[0] < w[1])
            && self.b_real.iter().all(|x| x.is_finite())
            && self
                .pairs
                .iter()
                .all(|&(s, q)| s.is_finite() && q.is_finite() && (allow_flat || q > 0.0))
    }

    /// Per-coordinate finite-difference scales.
    pub fn fd_scales(&self) -> Vec<f64> {
        let l = self.spread();
        let mut v: Vec<f64> = self.endpoints.iter().map(|x| x.abs().max(l)).collect();
        v.extend(self.b_real.iter().map(|x| x.abs().max(l)));
        for &(s, q) in &self.pairs {
            v.push(s.abs().max(l));
            v.push(q.abs().max(l * l));
        }
        v
    }

    /// Builds coordinates from endpoints and the zeros of a given `B`.
    pub fn from_b(endpoints: Vec<f64>, b: &RealPolynomial) -> Result<Coords> {
        let mut b_real = Vec::new();
        let mut pairs = Vec::new();
        if b.degree() >= 1 {
            for r in all_roots(b)? {
                if r.z.im == 0.0 {
                    b_real.push(r.z.re);
                } else if r.z.im > 0.0 {
                    pairs.push((r.z.re, r.z.im * r.z.im));
                }
            }
        }
        Ok(Coords {
            endpoints,
            b_real,
            pairs,
        })
    }
}

/// Residuals of the hodograph system, in order: coefficients `z^{4m-3}` down
/// to `z^{2m-1}` of `A·B² − φ'²` (relative to the scale of `φ'²`), then the
/// `z^{2m-2}` coefficient plus `2t`, then the gap periods over `half²`.
pub fn hodograph_residual(field: &ExternalField, t: f64, c: &Coords) -> Result<Vec<f64>> {
    let m = field.m();
    let topo = c.topology();
    if 2 * topo.p + topo.n_real + 2 * topo.n_pairs != 2 * m + topo.p - 1 {
        return Err(Error::DegreeMismatch(format!(
            "topology {topo:?} does not fit m = {m}"
        )));
    }
    let cfg = c.support()?;
    let b = c.b_poly();
    let sq = field.phi_prime() * field.phi_prime();
    let scale = sq.max_abs_coeff().max(1.0);
    let diff = &(&(cfg.a_poly() * &b) * &b) - &sq;
    let mut out = Vec::with_capacity(2 * m + topo.p - 1);
    for k in ((2 * m - 1)..=(4 * m - 3)).rev() {
        out.push(diff.coeff(k) / scale);
    }
    out.push((diff.coeff(2 * m - 2) + 2.0 * t) / scale);
    out.extend(period_residuals_scaled(&cfg, &b));
    Ok(out)
}

/// Newton settings for the algebraic systems.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub max_halvings: usize,
    /// Accept pairs with `q ≤ 0` (two nearby real zeros or a double zero).
    pub allow_flat_pairs: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-11,
            max_iter: 50,
            fd_step: 1e-7,
            max_halvings: 6,
            allow_flat_pairs: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solved {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton (square systems) or Gauss–Newton (overdetermined) with a
/// forward-difference Jacobian.
pub fn solve_nonlinear<F, V>(
    f: F,
    x0: Vec<f64>,
    scales: &[f64],
    valid: V,
    opts: NewtonOptions,
) -> Result<Solved>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    V: Fn(&[f64]) -> bool,
{
    let n = x0.len();
    let mut x = x0;
    let mut r = f(&x)?;
    let neq = r.len();
    if neq < n {
        return Err(Error::SingularSystem(format!(
            "{neq} equations for {n} unknowns"
        )));
    }
    let mut nr = inf_norm(&r);
    let mut polish = 0;
    for it in 0..opts.max_iter {
        if nr < opts.tol {
            if polish >= 2 || nr == 0.0 {
                return Ok(Solved {
                    x,
                    residual: nr,
                    iterations: it,
                });
            }
            polish += 1;
        }
        let mut jac = DMatrix::<f64>::zeros(neq, n);
        for j in 0..n {
            let h = opts.fd_step * scales[j];
            let mut xp = x.clone();
            xp[j] += h;
            let (col, hh) = match f(&xp) {
                Ok(rp) if valid(&xp) => (rp, h),
                _ => {
                    xp[j] = x[j] - h;
                    (f(&xp)?, -h)
                }
            };
            for i in 0..neq {
                jac[(i, j)] = (col[i] - r[i]) / hh;
            }
        }
        let rhs = DVector::from_iterator(neq, r.iter().map(|v| -v));
        let lu_step = if neq == n {
            jac.clone()
                .lu()
                .solve(&rhs)
                .filter(|d| d.iter().all(|v| v.is_finite()))
        } else {
            None
        };
        let step = match lu_step {
            Some(d) => d,
            None => {
                let svd = jac.svd(true, true);
                let smax = svd.singular_values.max();
                svd.solve(&rhs, 1e-14 * smax)
                    .map_err(|e| Error::SingularSystem(e.to_string()))?
            }
        };
        // once converged, only a clear gain is worth leaving the current point
        let base = if nr < opts.tol { 0.5 * two_norm(&r) } else { two_norm(&r) };
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut saw_valid = false;
        for _ in 0..=opts.max_halvings {
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            if valid(&xn) {
                saw_valid = true;
                if let Ok(rn) = f(&xn) {
                    if two_norm(&rn) < base {
                        accepted = Some((xn, rn));
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xn, rn)) => {
                let dx = x
                    .iter()
                    .zip(xn.iter())
                    .zip(scales.iter())
                    .fold(0.0f64, |m, ((a, b), s)| m.max((a - b).abs() / s));
                x = xn;
                r = rn;
                let prev = nr;
                nr = inf_norm(&r);
                if nr < opts.tol && (prev < opts.tol && nr > 0.5 * prev || dx < 1e-15) {
                    return Ok(Solved {
                        x,
                        residual: nr,
                        iterations: it + 1,
                    });
                }
                if neq > n && dx < 1e-14 {
                    return Ok(Solved {
                        x,
                        residual: nr,
                        iterations: it + 1,
                    });
                }
            }
            None => {
                if nr < opts.tol || neq > n {
                    return Ok(Solved {
                        x,
                        residual: nr,
                        iterations: it,
                    });
                }
                if !saw_valid {
                    return Err(Error::TopologyBroken(
                        "every damped Newton step leaves the topology".into(),
                    ));
                }
                return Err(Error::NewtonDiverged(format!(
                    "residual stalled at {nr:e} after {it} iterations"
                )));
            }
        }
    }
    if nr < opts.tol || neq > n {
        return Ok(Solved {
            x,
            residual: nr,
            iterations: opts.max_iter,
        });
    }
    Err(Error::NewtonDiverged(format!(
        "residual {nr:e} after {} iterations",
        opts.max_iter
    )))
}

/// Newton refinement of a guess with fixed topology at mass `t`.
pub fn hodograph_refine(
    field: &ExternalField,
    t: f64,
    guess: &Coords,
    opts: NewtonOptions,
) -> Result<(Coords, Solved)> {
    let topo = guess.topology();
    let flat = opts.allow_flat_pairs;
    if !guess.is_valid(flat) {
        return Err(Error::TopologyBroken(format!("invalid guess {guess:?}")));
    }
    let scales = guess.fd_scales();
    let sol = solve_nonlinear(
        |v| hodograph_residual(field, t, &Coords::from_vec(topo, v)),
        guess.to_vec(),
        &scales,
        |v| Coords::from_vec(topo, v).is_valid(flat),
        opts,
    )?;
    Ok((Coords::from_vec(topo, &sol.x), sol))
}

/// Cheap per-state data shared by the evaluators.
#[derive(Debug, Clone)]
struct Derived {
    cfg: SupportConfig,
    b: RealPolynomial,
    r: RealPolynomial,
    c0: f64,
    /// Laurent coefficients of `C^λ` in `w = z − c0`, from `w^{-1}` down.
    cauchy: Vec<f64>,
}

fn derive(c: &Coords) -> Result<Derived> {
    let cfg = c.support()?;
    let b = c.b_poly();
    let r = &(cfg.a_poly() * &b) * &b;
    let c0 = cfg.center();
    let sqrt_a = laurent_sqrt(&cfg.a_poly().shift(c0), false, TAIL_TERMS)?;
    let prod = sqrt_a.mul_poly(&b.shift(c0));
    let cauchy = (1..TAIL_TERMS as i64).map(|k| prod.coeff(-k)).collect();
    Ok(Derived {
        cfg,
        b,
        r,
        c0,
        cauchy,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Residuals {
    coefficient: f64,
    period: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateRecord {
    t: f64,
    field: ExternalField,
    endpoints: Vec<f64>,
    b_real: Vec<f64>,
    b_pairs: Vec<(f64, f64)>,
    c_t: f64,
    rho: f64,
    energy: f64,
    residuals: Residuals,
}

/// A solved equilibrium measure of mass `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "StateRecord", into = "StateRecord")]
pub struct EquilibriumState {
    pub t: f64,
    field: ExternalField,
    coords: Coords,
    pub c_t: f64,
    pub rho: f64,
    pub energy: f64,
    pub coefficient_residual: f64,
    pub period_residual: f64,
    derived: Derived,
}

impl TryFrom<StateRecord> for EquilibriumState {
    type Error = Error;
    fn try_from(s: StateRecord) -> Result<Self> {
        let coords = Coords {
            endpoints: s.endpoints,
            b_real: s.b_real,
            pairs: s.b_pairs.iter().map(|&(re, im)| (re, im * im)).collect(),
        };
        let derived = derive(&coords)?;
        Ok(EquilibriumState {
            t: s.t,
            field: s.field,
            coords,
            c_t: s.c_t,
            rho: s.rho,
            energy: s.energy,
            coefficient_residual: s.residuals.coefficient,
            period_residual: s.residuals.period,
            derived,
        })
    }
}

impl From<EquilibriumState> for StateRecord {
    fn from(s: EquilibriumState) -> Self {
        let b_pairs = s.b_pairs();
        StateRecord {
            t: s.t,
            field: s.field,
            endpoints: s.coords.endpoints,
            b_real: s.coords.b_real,
            b_pairs,
            c_t: s.c_t,
            rho: s.rho,
            energy: s.energy,
            residuals: Residuals {
                coefficient: s.coefficient_residual,
                period: s.period_residual,
            },
        }
    }
}

/// `(c_t, ρ, I)` for a configuration that already solves the hodograph system.
pub fn constants_and_energy(field: &ExternalField, t: f64, c: &Coords) -> Result<(f64, f64, f64)> {
    let d = derive(c)?;
    let rho = robin_data(&d.cfg)?.rho;
    let c_t = extremal_constant(field, t, &d)?;
    let phi_moment: f64 = (0..d.cfg.p())
        .map(|k| d.cfg.cut_sqrt_integral(k, |x| field.phi().eval(x) * d.b.eval(x).abs()) / PI)
        .sum();
    Ok((c_t, rho, t * c_t + phi_moment))
}

/// `c_t = V^λ + φ` evaluated at the last endpoint: `φ(a_{2p})` minus the
/// finite part at infinity of `∫ C^λ` plus the logarithmic tail of `V^λ`.
fn extremal_constant(field: &ExternalField, t: f64, d: &Derived) -> Result<f64> {
    let last = d.cfg.endpoints().len() - 1;
    let a_last = d.cfg.endpoints()[last];
    let w_y = 2.0 * d.cfg.spread() + (a_last - d.c0);
    let y = d.c0 + w_y;
    let b = &d.b;
    let phi_p = field.phi_prime();
    let skip = [last];
    let body = crate::quad::from_edge(
        |x, u| 2.0 * u * u * b.eval(x) * d.cfg.a_rest(x, &skip).abs().sqrt() - 2.0 * u * phi_p.eval(x),
        a_last,
        y,
        crate::quad::Tol::default(),
    );
    // V(Y) = −t log w − Σ_{k≥2} d_k w^{1-k}/(k−1)
    let mut v_y = -t * w_y.ln();
    for (i, dk) in d.cauchy.iter().enumerate().skip(1) {
        let k = (i + 1) as i32;
        v_y -= dk * w_y.powi(1 - k) / (k - 1) as f64;
    }
    Ok(field.phi().eval(a_last) - body + v_y)
}

impl EquilibriumState {
    /// Refines `guess` at mass `t` and evaluates all derived quantities.
    pub fn refine(
        field: &ExternalField,
        t: f64,
        guess: &Coords,
        opts: NewtonOptions,
    ) -> Result<EquilibriumState> {
        if !(t > 0.0) {
            return Err(Error::InvalidInput(format!("mass must be positive, got {t}")));
        }
        let (coords, _) = hodograph_refine(field, t, guess, opts)?;
        EquilibriumState::from_solved(field, t, coords)
    }

    /// Wraps coordinates already solving the system.
    pub fn from_solved(field: &ExternalField, t: f64, coords: Coords) -> Result<EquilibriumState> {
        let res = hodograph_residual(field, t, &coords)?;
        let ncoef = 2 * field.m();
        let coefficient_residual = inf_norm(&res[..ncoef]);
        let period_residual = inf_norm(&res[ncoef..]);
        let (c_t, rho, energy) = constants_and_energy(field, t, &coords)?;
        let derived = derive(&coords)?;
        Ok(EquilibriumState {
            t,
            field: field.clone(),
            coords,
            c_t,
            rho,
            energy,
            coefficient_residual,
            period_residual,
            derived,
        })
    }

    pub fn field(&self) -> &ExternalField {
        &self.field
    }

    pub fn coords(&self) -> &Coords {
        &self.coords
    }

    pub fn topology(&self) -> Topology {
        self.coords.topology()
    }

    pub fn endpoints(&self) -> &[f64] {
        &self.coords.endpoints
    }

    pub fn b_real(&self) -> &[f64] {
        &self.coords.b_real
    }

    /// Conjugate pairs as `(Re, Im)` with `Im > 0`.
    pub fn b_pairs(&self) -> Vec<(f64, f64)> {
        self.coords
            .pairs
            .iter()
            .map(|&(s, q)| (s, q.max(0.0).sqrt()))
            .collect()
    }

    pub fn support(&self) -> &SupportConfig {
        &self.derived.cfg
    }

    pub fn b_poly(&self) -> &RealPolynomial {
        &self.derived.b
    }

    pub fn r_poly(&self) -> &RealPolynomial {
        &self.derived.r
    }

    /// Mass read off the coefficients of `R`.
    pub fn mass_from_r(&self) -> f64 {
        let m = self.field.m();
        let sq = self.field.phi_prime() * self.field.phi_prime();
        -0.5 * (&self.derived.r - &sq).coeff(2 * m - 2)
    }

    pub fn robin(&self) -> Result<RobinData> {
        robin_data(&self.derived.cfg)
    }

    pub fn h_family(&self, j_max: usize) -> Result<HFamily> {
        solve_h_family(&self.derived.cfg, j_max)
    }

    pub fn residual_norm(&self) -> f64 {
        self.coefficient_residual.max(self.period_residual)
    }

    /// Density `√(−R)/π` on the cuts, zero elsewhere.
    pub fn density_at(&self, x: f64) -> f64 {
        if self.derived.cfg.cut_containing(x).is_none() {
            return 0.0;
        }
        (-self.derived.r.eval(x)).max(0.0).sqrt() / PI
    }

    /// `∫_{a_1}^x dλ`.
    pub fn cdf(&self, x: f64) -> f64 {
        let cfg = &self.derived.cfg;
        let b = &self.derived.b;
        let mut total = 0.0;
        for k in 0..cfg.p() {
            let (l, r) = cfg.cut(k);
            if x <= l {
                break;
            }
            if x >= r {
                total += cfg.cut_sqrt_integral(k, |y| b.eval(y).abs()) / PI;
            } else {
                total += crate::quad::from_edge(
                    |y, u| 2.0 * u * u * b.eval(y).abs() * cfg.a_rest(y, &[2 * k]).abs().sqrt(),
                    l,
                    x,
                    crate::quad::Tol::default(),
                ) / PI;
            }
        }
        total
    }

    /// Cauchy transform `∫ dλ(y)/(y − z)` off the support.
    pub fn cauchy_at(&self, z: Complex64) -> Complex64 {
        let d = &self.derived;
        let w = z - d.c0;
        let r0 = 0.5 * d.cfg.spread();
        if w.norm() > 4.0 * r0 {
            let inv = 1.0 / w;
            let mut pw = inv;
            let mut s = Complex64::new(0.0, 0.0);
            for dk in &d.cauchy {
                s += dk * pw;
                pw *= inv;
            }
            return s;
        }
        let mut sa = Complex64::new(1.0, 0.0);
        for &a in d.cfg.endpoints() {
            sa *= (z - a).sqrt();
        }
        sa * d.b.eval_complex(z) - self.field.phi_prime().eval_complex(z)
    }

    /// `W(x) − c_t = ∫_{a*}^x A^{1/2} B` from the nearest endpoint, for real
    /// `x` off the cuts; zero on the cuts.
    pub fn effective_potential(&self, x: f64) -> f64 {
        let cfg = &self.derived.cfg;
        if cfg.cut_containing(x).is_some() {
            return 0.0;
        }
        let e = cfg.nearest_endpoint(x);
        let b = &self.derived.b;
        cfg.integral_times_sqrt_a(e, x, |y| b.eval(y))
    }

    /// Grid check of the equilibrium inequalities and of the sign pattern of `R`.
    pub fn verify_equilibrium(&self, grid: usize) -> EquilibriumReport {
        let cfg = &self.derived.cfg;
        let ends = cfg.endpoints();
        let l = cfg.spread().max(1e-3);
        let lo = ends[0] - l;
        let hi = ends[ends.len() - 1] + l;
        let scale = self.derived.r.max_abs_coeff().max(1.0);
        let mut rep = EquilibriumReport {
            min_margin: f64::INFINITY,
            argmin: f64::NAN,
            max_r_on_cuts: f64::NEG_INFINITY,
            min_r_off_support: f64::INFINITY,
            min_density: f64::INFINITY,
            period_residual: self.period_residual,
            ok: true,
        };
        let mut pts: Vec<f64> = (0..=grid)
            .map(|i| lo + (hi - lo) * i as f64 / grid as f64)
            .collect();
        pts.extend(self.coords.b_real.iter().copied());
        for x in pts {
            let r = self.derived.r.eval(x);
            if cfg.cut_containing(x).is_some() {
                rep.max_r_on_cuts = rep.max_r_on_cuts.max(r / scale);
                rep.min_density = rep.min_density.min(self.density_at(x));
            } else {
                rep.min_r_off_support = rep.min_r_off_support.min(r / scale);
                let w = self.effective_potential(x);
                if w < rep.min_margin {
                    rep.min_margin = w;
                    rep.argmin = x;
                }
            }
        }
        rep.ok = rep.min_margin >= -1e-9
            && rep.max_r_on_cuts <= 1e-9
            && rep.min_r_off_support >= -1e-9
            && rep.period_residual < 1e-9;
        rep
    }
}

/// Outcome of [`EquilibriumState::verify_equilibrium`].
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub min_margin: f64,
    pub argmin: f64,
    pub max_r_on_cuts: f64,
    pub min_r_off_support: f64,
    pub min_density: f64,
    pub period_residual: f64,
    pub ok: bool,
}

/// Closed-form state of `φ = (x−ζ)⁴/4` type near a flat minimum:
/// endpoints `ζ ± r` with `r⁴ = 8τ/3` and `B = (x−ζ)² + r²/2`.
pub fn flat_quartic_seed(zeta: f64, tau: f64) -> (Vec<f64>, RealPolynomial) {
    let r = (8.0 * tau / 3.0).powf(0.25);
    (
        vec![zeta - r, zeta + r],
        RealPolynomial::quadratic_factor(zeta, r * r / 2.0),
    )
}

/// Coordinates from endpoints with `B` from the polynomial part of `φ'/A^{1/2}`.
pub fn coords_from_endpoints(field: &ExternalField, endpoints: Vec<f64>) -> Result<Coords> {
    let cfg = SupportConfig::new(endpoints.clone())?;
    let b = crate::polycore::compute_b(field, cfg.a_poly())?;
    Coords::from_b(endpoints, &b)
}

/// Evaluates a truncated Laurent series at a complex point.
pub fn eval_laurent(l: &Laurent, z: Complex64) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for (k, &c) in l.coeffs.iter().enumerate() {
        s += c * z.powi((l.top - k as i64) as i32);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn quartic_sym() -> ExternalField {
        ExternalField::new(vec![0.0, -1.0, 0.0]).unwrap()
    }

    fn quad_state(t: f64) -> EquilibriumState {
        let f = ExternalField::quadratic();
        let g = Coords {
            endpoints: vec![-1.1 * (2.0 * t).sqrt(), 0.9 * (2.0 * t).sqrt()],
            b_real: vec![],
            pairs: vec![],
        };
        EquilibriumState::refine(&f, t, &g, NewtonOptions::default()).unwrap()
    }

    fn two_cut(t: f64) -> EquilibriumState {
        let a = (2.0 - (2.0 * t).sqrt()).sqrt();
        let c = (2.0 + (2.0 * t).sqrt()).sqrt();
        let g = Coords {
            endpoints: vec![-c * 1.01, -a * 0.98, a * 1.01, c * 0.99],
            b_real: vec![0.01],
            pairs: vec![],
        };
        EquilibriumState::refine(&quartic_sym(), t, &g, NewtonOptions::default()).unwrap()
    }

    #[test]
    fn quadratic_closed_form() {
        let s = quad_state(2.0);
        assert!(close(s.endpoints()[0], -2.0, 1e-13));
        assert!(close(s.endpoints()[1], 2.0, 1e-13));
        assert_eq!(s.b_poly(), &RealPolynomial::constant(1.0));
        assert!(close(s.mass_from_r(), 2.0, 1e-12));
    }

    #[test]
    fn quadratic_constant_and_energy() {
        let s = quad_state(1.0);
        assert!(close(s.c_t, 0.5 + 0.5 * 2f64.ln(), 1e-12), "{}", s.c_t);
        assert!(close(s.rho, (4.0 / (2.0 * 2f64.sqrt())).ln(), 1e-12));
        // I(t) = t²(3/4 − log(2t)/2)... check dI/dt = 2c by finite differences
        let h = 1e-4;
        let ip = quad_state(1.0 + h).energy;
        let im = quad_state(1.0 - h).energy;
        assert!(close((ip - im) / (2.0 * h), 2.0 * s.c_t, 1e-7));
        let cp = quad_state(1.0 + h).c_t;
        let cm = quad_state(1.0 - h).c_t;
        assert!(close((cp - cm) / (2.0 * h), s.rho, 1e-7));
    }

    #[test]
    fn constant_tends_to_min_phi() {
        let f = ExternalField::new(vec![0.3, -1.0, 0.2]).unwrap();
        // minimum of φ by dense scan then polish
        let zeta = crate::polycore::real_roots(f.phi_prime())
            .unwrap()
            .into_iter()
            .min_by(|a, b| f.phi().eval(*a).total_cmp(&f.phi().eval(*b)))
            .unwrap();
        let t = 1e-6;
        let w = (2.0 * t / f.phi().derivative().derivative().eval(zeta)).sqrt();
        let g = coords_from_endpoints(&f, vec![zeta - w, zeta + w]).unwrap();
        let s = EquilibriumState::refine(&f, t, &g, NewtonOptions::default()).unwrap();
        assert!(close(s.c_t, f.phi().eval(zeta), 1e-4));
    }

    #[test]
    fn symmetric_quartic_two_cut() {
        let t = 1.0;
        let s = two_cut(t);
        let e = s.endpoints();
        assert!(close(e[1] * e[1], 2.0 - 2f64.sqrt(), 1e-12));
        assert!(close(e[3] * e[3], 2.0 + 2f64.sqrt(), 1e-12));
        assert!(close(s.b_real()[0], 0.0, 1e-13));
        assert!(close(s.density_at(0.0), 0.0, 0.0));
        let want = 0.5 * 2f64.ln() - 0.25 * (2.0 * t).ln();
        assert!(close(s.rho, want, 1e-11));
    }

    #[test]
    fn euler_identity() {
        let s = two_cut(0.7);
        let f = s.field().clone();
        let m = f.m();
        let fam = s.h_family(2 * m).unwrap();
        let mut lhs = fam.h[0].scale(s.t);
        for j in 1..=2 * m {
            lhs = &lhs + &fam.h[j].scale(f.coupling(j));
        }
        let ab = s.support().a_poly() * s.b_poly();
        assert!((&lhs - &ab).max_abs_coeff() < 1e-10);
    }

    #[test]
    fn cauchy_transform() {
        let t = 0.8;
        let s = quad_state(t);
        let z = Complex64::new(1e6, 0.0);
        assert!(((z * s.cauchy_at(z)).re + t).abs() < 1e-4 * t);
        let z = Complex64::new(0.3, 0.5);
        let r = (2.0 * t).sqrt();
        let exact = (z - r).sqrt() * (z + r).sqrt() - z;
        assert!((s.cauchy_at(z) - exact).norm() < 1e-12);
        assert!((s.cauchy_at(z.conj()) - s.cauchy_at(z).conj()).norm() < 1e-14);
        // Laurent and direct evaluations agree where both apply.
        let s2 = two_cut(0.5);
        let z = Complex64::new(4.1, 1.0);
        let d = s2.cauchy_at(z);
        let mut sa = Complex64::new(1.0, 0.0);
        for &a in s2.endpoints() {
            sa *= (z - a).sqrt();
        }
        let direct = sa * s2.b_poly().eval_complex(z) - s2.field().phi_prime().eval_complex(z);
        assert!((d - direct).norm() < 1e-12);
    }

    #[test]
    fn effective_potential_signs() {
        let s = quad_state(1.0);
        assert_eq!(s.effective_potential(s.endpoints()[1]), 0.0);
        for x in [-3.0f64, -1.5, 1.5, 3.0] {
            let a: f64 = 2.0;
            let ax = x.abs();
            let exact = 0.5 * ax * (ax * ax - a).sqrt() - 0.5 * a * ((ax + (ax * ax - a).sqrt()) / a.sqrt()).ln();
            assert!(close(s.effective_potential(x), exact, 1e-12), "{x}");
        }
        let rep = s.verify_equilibrium(400);
        assert!(rep.ok && rep.min_margin >= -1e-9);
        let rep = two_cut(1.0).verify_equilibrium(400);
        assert!(rep.ok, "{rep:?}");
    }

    #[test]
    fn refine_is_a_fixed_point() {
        let s = two_cut(1.3);
        let again = EquilibriumState::refine(s.field(), s.t, s.coords(), NewtonOptions::default())
            .unwrap();
        for (a, b) in s.coords().to_vec().iter().zip(again.coords().to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneity() {
        let q: f64 = 1.7;
        let f = ExternalField::new(vec![0.2, -1.0, 0.1]).unwrap();
        let g = ExternalField::new(
            f.couplings()
                .iter()
                .enumerate()
                .map(|(i, c)| c * q.powi(4 - (i as i32 + 1)))
                .collect(),
        )
        .unwrap();
        let t = 2.5;
        let guess = coords_from_endpoints(&f, vec![-2.2, 2.0]).unwrap();
        let s = EquilibriumState::refine(&f, t, &guess, NewtonOptions::default()).unwrap();
        let scaled = Coords {
            endpoints: s.endpoints().iter().map(|x| x * q * 1.01).collect(),
            b_real: s.b_real().iter().map(|x| x * q).collect(),
            pairs: s.coords().pairs.iter().map(|(a, b)| (a * q, b * q * q)).collect(),
        };
        let s2 = EquilibriumState::refine(&g, t * q.powi(4), &scaled, NewtonOptions::default())
            .unwrap();
        for (a, b) in s.endpoints().iter().zip(s2.endpoints()) {
            assert!(close(a * q, *b, 1e-11));
        }
    }

    #[test]
    fn json_roundtrip() {
        let s = two_cut(0.9);
        let js = serde_json::to_string(&s).unwrap();
        assert!(js.contains("\"c_t\"") && js.contains("\"b_pairs\""));
        let back: EquilibriumState = serde_json::from_str(&js).unwrap();
        assert_eq!(back.endpoints(), s.endpoints());
        assert_eq!(back.c_t, s.c_t);
        let (_, sol) =
            hodograph_refine(back.field(), back.t, back.coords(), NewtonOptions::default()).unwrap();
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn flat_quartic() {
        let f = ExternalField::new(vec![0.0, 0.0, 0.0]).unwrap();
        let t = 0.3;
        let (e, b) = flat_quartic_seed(0.0, t);
        let cfg = SupportConfig::new(e.clone()).unwrap();
        let (_, mass) = crate::polycore::assemble_r(&f, cfg.a_poly(), &b).unwrap();
        assert!(close(mass, t, 1e-14));
        let s = EquilibriumState::refine(&f, t, &Coords::from_b(e.clone(), &b).unwrap(), NewtonOptions::default()).unwrap();
        assert!(close(s.endpoints()[1], e[1], 1e-13));
    }

    #[test]
    fn cdf_total_mass() {
        let s = two_cut(0.6);
        assert!(close(s.cdf(10.0), 0.6, 1e-12));
        assert!(close(s.cdf(0.0), 0.3, 1e-12));
    }
}
