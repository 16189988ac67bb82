//! Weighted Fekete points: minimizers of
//! `Σ_{i≠j} log 1/|ζ_i − ζ_j| + 2 Σ_i ψ(ζ_i)` over ordered `n`-tuples.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eqstate::EquilibriumState;
use crate::error::{Error, Result};
use crate::polycore::{real_roots, ExternalField, RealPolynomial};

#[derive(Debug, Clone, Serialize)]
pub struct PointConfiguration {
    pub points: Vec<f64>,
    pub n: usize,
    /// Weight `ψ` actually minimized against.
    #[serde(skip)]
    pub field_used: RealPolynomial,
    pub energy: f64,
    /// `max_i |−Σ_{j≠i} 1/(ζ_i − ζ_j) + ψ'(ζ_i)|`.
    pub stationarity: f64,
    /// Energy after each accepted step, starting from the seed.
    pub energy_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FeketeOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FeketeOptions {
    fn default() -> Self {
        FeketeOptions {
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

/// Energy and the sum of the absolute values of its terms, which bounds the
/// rounding error of the sum.
fn energy(pts: &[f64], psi: &RealPolynomial) -> (f64, f64) {
    let (mut e, mut mag) = (0.0, 0.0);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let l = 2.0 * (pts[j] - pts[i]).abs().ln();
            e -= l;
            mag += l.abs();
        }
        let w = 2.0 * psi.eval(pts[i]);
        e += w;
        mag += w.abs();
    }
    (e, mag)
}

fn stationarity(pts: &[f64], dpsi: &RealPolynomial) -> Vec<f64> {
    (0..pts.len())
        .map(|i| {
            let s: f64 = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| 1.0 / (pts[i] - pts[j]))
                .sum();
            dpsi.eval(pts[i]) - s
        })
        .collect()
}

fn ordered(pts: &[f64]) -> bool {
    pts.windows(2).all(|w| w[1] > w[0])
}

/// Minimizes the discrete energy for an arbitrary weight `ψ` from `seed`.
pub fn fekete_points_raw(psi: &RealPolynomial, seed: Vec<f64>, opts: FeketeOptions) -> Result<PointConfiguration> {
    let n = seed.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least two points, got {n}")));
    }
    if !ordered(&seed) {
        return Err(Error::InvalidInput("seed points must be strictly increasing".into()));
    }
    let dpsi = psi.derivative();
    let d2psi = dpsi.derivative();
    let mut x = seed;
    let (mut e, mut mag) = energy(&x, psi);
    let mut history = vec![e];
    for _ in 0..opts.max_iter {
        let g = stationarity(&x, &dpsi);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < opts.tol {
            return Ok(PointConfiguration {
                n,
                field_used: psi.clone(),
                energy: e,
                stationarity: gmax,
                points: x,
                energy_history: history,
            });
        }
        let mut h = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut diag = d2psi.eval(x[i]);
            for j in 0..n {
                if j != i {
                    let w = 1.0 / (x[i] - x[j]).powi(2);
                    diag += w;
                    h[(i, j)] = -w;
                }
            }
            h[(i, i)] = diag;
        }
        let gv = DVector::from_vec(g.clone());
        // smallest diagonal shift (Levenberg style) that makes H positive definite
        let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut mu = 0.0;
        let dir = loop {
            let mut hs = h.clone();
            for i in 0..n {
                hs[(i, i)] += mu;
            }
            if let Some(ch) = hs.cholesky() {
                break -ch.solve(&gv);
            }
            mu = if mu == 0.0 { 1e-8 * scale } else { 10.0 * mu };
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
            if ordered(&trial) {
                let (et, mt) = energy(&trial, psi);
                if et <= e + 4.0 * f64::EPSILON * mag.max(mt) {
                    x = trial;
                    e = et;
                    mag = mt;
                    history.push(e);
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence(format!(
                "no energy-decreasing step (stationarity {gmax:e})"
            )));
        }
    }
    eprintln!("{:?}", history.iter().rev().take(5).collect::<Vec<_>>()); eprintln!("{:?}", x);
    Err(Error::NonConvergence(format!("{} Newton steps", opts.max_iter)))
}

/// Points with `ψ = nφ/t`, so that `(t/n)·Σδ_{ζ_i}` approximates the
/// equilibrium measure of mass `t`. Seeded equispaced on `{φ − min φ ≤ t}`.
pub fn fekete_points(field: &ExternalField, t: f64, n: usize) -> Result<PointConfiguration> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
    }
    let phi = field.phi();
    let crit = real_roots(field.phi_prime())?;
    let vmin = crit.iter().map(|&z| phi.eval(z)).fold(f64::INFINITY, f64::min);
    let level = phi - &RealPolynomial::constant(vmin + t);
    let r = real_roots(&level)?;
    let (lo, hi) = (r[0], r[r.len() - 1]);
    let seed = (0..n)
        .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
        .collect();
    fekete_points_raw(&phi.scale(n as f64 / t), seed, FeketeOptions::default())
}

/// As [`fekete_points`], seeded at the midpoint quantiles of `state`.
pub fn fekete_points_from_state(state: &EquilibriumState, n: usize) -> Result<PointConfiguration> {
    let psi = state.field().phi().scale(n as f64 / state.t);
    fekete_points_raw(&psi, quantiles(state, n), FeketeOptions::default())
}

/// `x_i` with `cdf(x_i) = t(i + ½)/n`, by bisection.
pub fn quantiles(state: &EquilibriumState, n: usize) -> Vec<f64> {
    let e = state.endpoints();
    let (lo, hi) = (e[0], e[e.len() - 1]);
    (0..n)
        .map(|i| {
            let target = state.t * (i as f64 + 0.5) / n as f64;
            let (mut a, mut b) = (lo, hi);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if state.cdf(m) < target {
                    a = m;
                } else {
                    b = m;
                }
                if b - a <= 1e-15 * (hi - lo) {
                    break;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

/// Kolmogorov distance between `(t/n)·#{ζ_i ≤ x}` and `λ_t((−∞, x])`,
/// divided by `t`.
pub fn compare_to_equilibrium(pts: &PointConfiguration, state: &EquilibriumState) -> f64 {
    let n = pts.points.len() as f64;
    pts.points
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = state.cdf(x) / state.t;
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

pub fn write_points_csv<W: Write>(pts: &PointConfiguration, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "x"])?;
    for (i, x) in pts.points.iter().enumerate() {
        w.write_record([i.to_string(), format!("{x:e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_quadratic() {
        let psi = RealPolynomial::new(vec![0.0, 0.0, 0.5]);
        let p = fekete_points_raw(&psi, vec![-0.3, 0.9], FeketeOptions::default()).unwrap();
        let r = 0.5f64.sqrt();
        assert!((p.points[0] + r).abs() < 1e-12 && (p.points[1] - r).abs() < 1e-12);
    }

    #[test]
    fn two_points_even_weight() {
        let psi = RealPolynomial::new(vec![0.0, 0.0, -0.3, 0.0, 0.25]);
        let p = fekete_points_raw(&psi, vec![-0.1, 2.0], FeketeOptions::default()).unwrap();
        assert!((p.points[0] + p.points[1]).abs() < 1e-12);
    }

    #[test]
    fn energy_never_increases() {
        let f = ExternalField::new(vec![0.1, -0.5, 0.2]).unwrap();
        let p = fekete_points(&f, 1.0, 24).unwrap();
        for w in p.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
        assert!(p.stationarity < 1e-10);
    }

    #[test]
    fn bad_inputs() {
        let psi = RealPolynomial::new(vec![0.0, 0.0, 0.5]);
        assert!(fekete_points_raw(&psi, vec![0.0], FeketeOptions::default()).is_err());
        assert!(fekete_points_raw(&psi, vec![1.0, 0.0], FeketeOptions::default()).is_err());
    }
}
