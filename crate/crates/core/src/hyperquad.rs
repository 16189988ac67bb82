//! Integrals with square-root edges over cuts and gaps, the Green numerator
//! `h` with its coupling family `h_j`, the Robin constant, periods and mass.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::polycore::{laurent_sqrt, real_roots, RealPolynomial};
use crate::quad::{self, Tol};

/// Laurent terms used for tails at infinity.
pub const TAIL_TERMS: usize = 60;

/// Support `[a_1, a_2] ∪ … ∪ [a_{2p-1}, a_{2p}]` with its polynomial `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportConfig {
    endpoints: Vec<f64>,
    a: RealPolynomial,
}

impl SupportConfig {
    pub fn new(endpoints: Vec<f64>) -> Result<Self> {
        if endpoints.is_empty() || endpoints.len() % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "need an even, nonzero number of endpoints, got {}",
                endpoints.len()
            )));
        }
        if endpoints.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite endpoint".into()));
        }
        if endpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::TopologyBroken(format!(
                "endpoints not strictly increasing: {endpoints:?}"
            )));
        }
        let a = RealPolynomial::from_real_roots(&endpoints);
        Ok(SupportConfig { endpoints, a })
    }

    pub fn p(&self) -> usize {
        self.endpoints.len() / 2
    }

    pub fn endpoints(&self) -> &[f64] {
        &self.endpoints
    }

    pub fn a_poly(&self) -> &RealPolynomial {
        &self.a
    }

    /// Cut `k` (0-based) as `(left, right)`.
    pub fn cut(&self, k: usize) -> (f64, f64) {
        (self.endpoints[2 * k], self.endpoints[2 * k + 1])
    }

    /// Gap `k` (0-based, between cuts `k` and `k+1`).
    pub fn gap(&self, k: usize) -> (f64, f64) {
        (self.endpoints[2 * k + 1], self.endpoints[2 * k + 2])
    }

    pub fn cuts(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.p()).map(|k| self.cut(k))
    }

    pub fn gaps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.p() - 1).map(|k| self.gap(k))
    }

    pub fn spread(&self) -> f64 {
        self.endpoints[self.endpoints.len() - 1] - self.endpoints[0]
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.endpoints[0] + self.endpoints[self.endpoints.len() - 1])
    }

    /// Index of the cut containing `x`, if any.
    pub fn cut_containing(&self, x: f64) -> Option<usize> {
        self.cuts().position(|(l, r)| l <= x && x <= r)
    }

    /// `∏_{i ∉ skip} (x - a_i)`.
    pub fn a_rest(&self, x: f64, skip: &[usize]) -> f64 {
        self.endpoints
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(_, &e)| x - e)
            .product()
    }

    /// Sign of `A^{1/2}` on the real axis off the cuts, for the branch that is
    /// positive beyond the last endpoint and analytic off the support.
    pub fn branch_sign(&self, x: f64) -> f64 {
        let above = self.endpoints.iter().filter(|&&e| e > x).count();
        if (above / 2) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `∫_gap g / √|A|`.
    pub fn gap_inv_sqrt_integral<F: FnMut(f64) -> f64>(&self, k: usize, mut g: F) -> f64 {
        let (l, r) = self.gap(k);
        let skip = [2 * k + 1, 2 * k + 2];
        quad::inv_sqrt_weighted(
            |x| g(x) / self.a_rest(x, &skip).abs().sqrt(),
            l,
            r,
            Tol::default(),
        )
    }

    /// `∫_gap g · √|A| / half²` with `half` the half-length of the gap.
    pub fn gap_sqrt_integral_scaled<F: FnMut(f64) -> f64>(&self, k: usize, mut g: F) -> f64 {
        let (l, r) = self.gap(k);
        let skip = [2 * k + 1, 2 * k + 2];
        let mid = 0.5 * (l + r);
        let half = 0.5 * (r - l);
        quad::integrate(
            |th| {
                let x = mid + half * th.cos();
                let s = th.sin();
                g(x) * self.a_rest(x, &skip).abs().sqrt() * s * s
            },
            0.0,
            PI,
            Tol::default(),
        )
    }

    /// `∫_cut g · √|A|`.
    pub fn cut_sqrt_integral<F: FnMut(f64) -> f64>(&self, k: usize, mut g: F) -> f64 {
        let (l, r) = self.cut(k);
        let skip = [2 * k, 2 * k + 1];
        quad::sqrt_weighted(
            |x| g(x) * self.a_rest(x, &skip).abs().sqrt(),
            l,
            r,
            Tol::default(),
        )
    }

    /// `∫_cut g / √|A|`.
    pub fn cut_inv_sqrt_integral<F: FnMut(f64) -> f64>(&self, k: usize, mut g: F) -> f64 {
        let (l, r) = self.cut(k);
        let skip = [2 * k, 2 * k + 1];
        quad::inv_sqrt_weighted(
            |x| g(x) / self.a_rest(x, &skip).abs().sqrt(),
            l,
            r,
            Tol::default(),
        )
    }

    /// Nearest endpoint index to a real `x`.
    pub fn nearest_endpoint(&self, x: f64) -> usize {
        let mut best = 0;
        for (i, &e) in self.endpoints.iter().enumerate() {
            if (e - x).abs() < (self.endpoints[best] - x).abs() {
                best = i;
            }
        }
        best
    }

    /// `∫_{a_e}^x g(y)/A^{1/2}(y) dy` along the real axis off the cuts,
    /// starting at endpoint index `e` and using the analytic branch.
    pub fn integral_over_sqrt_a<F: Fn(f64) -> f64>(&self, e: usize, x: f64, g: F) -> f64 {
        let a_e = self.endpoints[e];
        let sign = self.branch_sign(if x > a_e { a_e + 0.5 * (x - a_e) } else { x });
        let skip = [e];
        let v = quad::from_edge(
            |y, _| 2.0 * g(y) / self.a_rest(y, &skip).abs().sqrt(),
            a_e,
            x,
            Tol::default(),
        );
        sign * v
    }

    /// `∫_{a_e}^x g(y)·A^{1/2}(y) dy` along the real axis off the cuts.
    pub fn integral_times_sqrt_a<F: Fn(f64) -> f64>(&self, e: usize, x: f64, g: F) -> f64 {
        let a_e = self.endpoints[e];
        let sign = self.branch_sign(if x > a_e { a_e + 0.5 * (x - a_e) } else { x });
        let skip = [e];
        let v = quad::from_edge(
            |y, u| 2.0 * u * u * g(y) * self.a_rest(y, &skip).abs().sqrt(),
            a_e,
            x,
            Tol::default(),
        );
        sign * v
    }
}

/// Fixed-order Gauss–Chebyshev rule for `∫_a^b f(x)/√((x-a)(b-x)) dx`.
pub fn cheb_singular_integral<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let s: f64 = (1..=n)
        .map(|k| {
            let th = (2 * k - 1) as f64 * PI / (2 * n) as f64;
            f(mid + half * th.cos())
        })
        .sum();
    PI * s / n as f64
}

/// Gauss–Chebyshev from 128 nodes, doubling until two values agree to `tol`.
pub fn cheb_singular_integral_doubling<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64> {
    let mut n = 128;
    let mut prev = cheb_singular_integral(&mut f, a, b, n);
    while n < 1 << 20 {
        n *= 2;
        let cur = cheb_singular_integral(&mut f, a, b, n);
        if (cur - prev).abs() <= tol * cur.abs().max(1.0) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::NonConvergence(
        "Gauss–Chebyshev doubling did not settle".into(),
    ))
}

/// `h` (monic, degree `p-1`) and `h_0 … h_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct HFamily {
    pub h_monic: RealPolynomial,
    pub h: Vec<RealPolynomial>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Gap moments `∫_gap x^i/√|A|` for `i ≤ deg`, one row per gap.
fn gap_moments(cfg: &SupportConfig, deg: usize) -> Vec<Vec<f64>> {
    let c0 = cfg.center();
    (0..cfg.p() - 1)
        .map(|k| {
            (0..=deg)
                .map(|i| cfg.gap_inv_sqrt_integral(k, |x| (x - c0).powi(i as i32)))
                .collect()
        })
        .collect()
}

/// Solves for `h_0 … h_J`.
///
/// `h_j` has degree `j+p-1`; `h_j/A^{1/2} = j z^{j-1} + O(z^{-2})` for `j ≥ 1`,
/// `h_0/A^{1/2} = -1/z + O(z^{-2})`, and every gap integral of `h_j/√|A|`
/// vanishes.
pub fn solve_h_family(cfg: &SupportConfig, j_max: usize) -> Result<HFamily> {
    let p = cfg.p();
    let c0 = cfg.center();
    // Work in w = x - c0 for conditioning, then shift back.
    let a_w = cfg.a_poly().shift(c0);
    let lau = laurent_sqrt(&a_w, true, j_max + p + 4)?;
    let moments = gap_moments(cfg, j_max + p - 1);
    let mut out = Vec::with_capacity(j_max + 1);
    for j in 0..=j_max {
        let n = j + p;
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        // Laurent rows: powers j-1 down to -1 (only -1 when j = 0).
        let powers: Vec<i64> = if j == 0 {
            vec![-1]
        } else {
            (-1..=(j as i64 - 1)).rev().collect()
        };
        for (row, &pw) in powers.iter().enumerate() {
            for i in 0..n {
                m[(row, i)] = lau.coeff(pw - i as i64);
            }
            // j·z^{j-1} re-expanded in w
            rhs[row] = if j == 0 {
                -1.0
            } else if pw >= 0 {
                j as f64 * binomial(j - 1, pw as usize) * c0.powi((j - 1) as i32 - pw as i32)
            } else {
                0.0
            };
        }
        for (g, mom) in moments.iter().enumerate() {
            let row = powers.len() + g;
            for i in 0..n {
                m[(row, i)] = mom[i];
            }
        }
        let sol = m
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or_else(|| Error::SingularSystem(format!("h_{j} system is singular")))?;
        let hw = RealPolynomial::new(sol.iter().copied().collect());
        out.push(hw.shift(-c0));
    }
    let h_monic = out[0].scale(-1.0);
    Ok(HFamily { h_monic, h: out })
}

/// Just the Green numerator `h`.
pub fn green_numerator(cfg: &SupportConfig) -> Result<RealPolynomial> {
    Ok(solve_h_family(cfg, 0)?.h_monic)
}

/// Robin constant of the support together with `h`.
#[derive(Debug, Clone)]
pub struct RobinData {
    pub rho: f64,
    pub h_monic: RealPolynomial,
    cfg: SupportConfig,
}

impl RobinData {
    /// Robin (equilibrium) density of the support, zero off the cuts.
    pub fn omega(&self, x: f64) -> f64 {
        if self.cfg.cut_containing(x).is_none() {
            return 0.0;
        }
        let a = self.cfg.a_poly().eval(x).abs();
        if a == 0.0 {
            return f64::INFINITY;
        }
        self.h_monic.eval(x).abs() / (PI * a.sqrt())
    }

    /// Total Robin mass, should be 1.
    pub fn omega_mass(&self) -> f64 {
        (0..self.cfg.p())
            .map(|k| self.cfg.cut_inv_sqrt_integral(k, |x| self.h_monic.eval(x).abs()) / PI)
            .sum()
    }

    /// Green function with pole at infinity, at a real `x` off the cuts.
    pub fn green(&self, x: f64) -> f64 {
        if self.cfg.cut_containing(x).is_some() {
            return 0.0;
        }
        let e = self.cfg.nearest_endpoint(x);
        let h = &self.h_monic;
        self.cfg.integral_over_sqrt_a(e, x, |y| h.eval(y)).abs()
    }

    pub fn config(&self) -> &SupportConfig {
        &self.cfg
    }
}

/// `∫_{a_{2p}}^∞ (g/A^{1/2} − lead/(x − c0)) dx` in two pieces: quadrature up
/// to a cutoff and the Laurent tail beyond it. `g/A^{1/2}` must decay like
/// `lead/x`.
pub(crate) fn finite_part_to_infinity(
    cfg: &SupportConfig,
    g: &RealPolynomial,
    lead: f64,
) -> Result<f64> {
    let c0 = cfg.center();
    let last = cfg.endpoints().len() - 1;
    let a_last = cfg.endpoints()[last];
    let w_y = 2.0 * cfg.spread().max(1e-300) + (a_last - c0);
    let y = c0 + w_y;
    let body = cfg.integral_over_sqrt_a(last, y, |x| g.eval(x));
    let lau = laurent_sqrt(&cfg.a_poly().shift(c0), true, TAIL_TERMS)?.mul_poly(&g.shift(c0));
    // coefficients e_k of w^{-k}, k ≥ 2
    let mut tail = 0.0;
    for k in 2..(TAIL_TERMS as i64) {
        let e = lau.coeff(-k);
        tail += e * w_y.powi(1 - k as i32) / (k - 1) as f64;
    }
    Ok(body - lead * w_y.ln() + tail)
}

pub fn robin_data(cfg: &SupportConfig) -> Result<RobinData> {
    let h = green_numerator(cfg)?;
    let rho = finite_part_to_infinity(cfg, &h, 1.0)?;
    Ok(RobinData {
        rho,
        h_monic: h,
        cfg: cfg.clone(),
    })
}

/// `∫_gap A^{1/2} B` on the analytic branch, one entry per gap.
pub fn period_residuals(cfg: &SupportConfig, b: &RealPolynomial) -> Vec<f64> {
    (0..cfg.p() - 1)
        .map(|k| {
            let (l, r) = cfg.gap(k);
            let half = 0.5 * (r - l);
            let sign = cfg.branch_sign(0.5 * (l + r));
            sign * half * half * cfg.gap_sqrt_integral_scaled(k, |x| b.eval(x))
        })
        .collect()
}

/// Period residuals divided by the squared half-length of each gap.
pub fn period_residuals_scaled(cfg: &SupportConfig, b: &RealPolynomial) -> Vec<f64> {
    (0..cfg.p() - 1)
        .map(|k| {
            let (l, r) = cfg.gap(k);
            cfg.branch_sign(0.5 * (l + r)) * cfg.gap_sqrt_integral_scaled(k, |x| b.eval(x))
        })
        .collect()
}

/// Mass `Σ_cuts ∫ |B|√|A| / π`.
pub fn mass_integral(cfg: &SupportConfig, b: &RealPolynomial) -> Result<f64> {
    if b.degree() >= 1 {
        for r in real_roots(b)? {
            if let Some(k) = cfg.cut_containing(r) {
                let (l, rr) = cfg.cut(k);
                let guard = 1e-9 * (rr - l);
                if r > l + guard && r < rr - guard {
                    return Err(Error::NegativeDensity(format!(
                        "B vanishes at {r} inside cut [{l}, {rr}]"
                    )));
                }
            }
        }
    }
    Ok((0..cfg.p())
        .map(|k| cfg.cut_sqrt_integral(k, |x| b.eval(x).abs()) / PI)
        .sum())
}
