//! Adaptive Gauss–Kronrod quadrature and the endpoint substitutions used for
//! integrands with square-root behaviour at interval ends.

use std::f64::consts::PI;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// Absolute/relative accuracy request for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Tol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tol {
    fn default() -> Self {
        Tol {
            abs: 1e-15,
            rel: 1e-13,
            max_intervals: 4000,
        }
    }
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive G7–K15 integration of `f` over `[a, b]` (either orientation).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tol) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut parts: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(64);
    let (v, e) = gk15(&mut f, a, b);
    parts.push((a, b, v, e));
    let mut total = v;
    let mut err = e;
    while err > tol.abs.max(tol.rel * total.abs()) && parts.len() < tol.max_intervals {
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, v0, e0) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            parts.push((lo, hi, v0, 0.0));
            err -= e0;
            continue;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        total += v1 + v2 - v0;
        err += e1 + e2 - e0;
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    // Re-sum to shed accumulated cancellation in the running total.
    parts.iter().map(|p| p.2).sum()
}

/// `∫_a^b f(x) / sqrt((x-a)(b-x)) dx` through `x = mid + half·cos θ`.
pub fn inv_sqrt_weighted<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tol) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    if half == 0.0 {
        return PI * f(a);
    }
    integrate(|th| f(mid + half * th.cos()), 0.0, PI, tol)
}

/// `∫_a^b f(x) · sqrt((x-a)(b-x)) dx` through `x = mid + half·cos θ`.
pub fn sqrt_weighted<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tol) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    if half == 0.0 {
        return 0.0;
    }
    let h2 = half * half;
    integrate(
        |th| {
            let s = th.sin();
            f(mid + half * th.cos()) * h2 * s * s
        },
        0.0,
        PI,
        tol,
    )
}

/// `∫_e^x g(y) dy` for `g` with a square-root branch point at `e`, computed in
/// the variable `y = e ± u²`. `integrand(y, u)` must return `2u · g(y)`, which
/// the caller writes in a form that stays smooth as `u → 0`.
pub fn from_edge<F: FnMut(f64, f64) -> f64>(mut integrand: F, e: f64, x: f64, tol: Tol) -> f64 {
    if x == e {
        return 0.0;
    }
    let dir = if x > e { 1.0 } else { -1.0 };
    let umax = (x - e).abs().sqrt();
    dir * integrate(|u| integrand(e + dir * u * u, u), 0.0, umax, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x, 0.0, 2.0, Tol::default());
        assert!((v - 0.0).abs() < 1e-14);
        let v = integrate(|x| x.powi(6), -1.0, 1.0, Tol::default());
        assert!((v - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn peaked_integrand() {
        let eps: f64 = 1e-6;
        let v = integrate(|x| 1.0 / (x * x + eps * eps), -1.0, 1.0, Tol::default());
        let exact = 2.0 * (1.0 / eps).atan() / eps;
        assert!(((v - exact) / exact).abs() < 1e-11);
    }

    #[test]
    fn weighted_moments() {
        let v = inv_sqrt_weighted(|x| x * x, -1.0, 1.0, Tol::default());
        assert!((v - PI / 2.0).abs() < 1e-14);
        let v = sqrt_weighted(|_| 1.0, -1.0, 1.0, Tol::default());
        assert!((v - PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn edge_substitution() {
        // ∫_1^5 dy / sqrt(y-1) = 4
        let v = from_edge(|_, _| 2.0, 1.0, 5.0, Tol::default());
        assert!((v - 4.0).abs() < 1e-14);
        // ∫_1^{-3} sqrt(1-y) dy = -(2/3)·4^{3/2}
        let v = from_edge(|_, u| 2.0 * u * u, 1.0, -3.0, Tol::default());
        assert!((v + 16.0 / 3.0).abs() < 1e-13, "{v}");
    }
}
