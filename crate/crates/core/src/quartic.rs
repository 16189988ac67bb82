//! Closed-form theory for quartic fields `φ = x⁴/4 + …`: the critical slope,
//! scenario classification, merge configurations and the type III locus.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::global_minimizers;
use crate::error::{Error, Result};
use crate::polycore::{all_roots, ExternalField, RealPolynomial};

/// Safeguarded Newton for a cubic on a sign-changing bracket.
fn bracketed_newton(p: &RealPolynomial, mut lo: f64, mut hi: f64) -> f64 {
    let dp = p.derivative();
    let up = p.eval(hi) > 0.0;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = p.eval(x);
        if fx == 0.0 {
            return x;
        }
        if (fx > 0.0) == up {
            hi = x;
        } else {
            lo = x;
        }
        let step = fx / dp.eval(x);
        let mut nx = x - step;
        if !(nx > lo && nx < hi) {
            nx = 0.5 * (lo + hi);
        }
        if (nx - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            return nx;
        }
        x = nx;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalConstants {
    /// Positive root of `32s³ − 17s² + 14s − 1`.
    pub s: f64,
    pub sqrt_s: f64,
    /// Real root of `4γ³ + 15γ² − 200`.
    pub gamma: f64,
    pub s_residual: f64,
    pub gamma_residual: f64,
    /// `s − (10 − γ²)/30`.
    pub cross_residual: f64,
}

pub fn critical_constants() -> CriticalConstants {
    let ps = RealPolynomial::new(vec![-1.0, 14.0, -17.0, 32.0]);
    let pg = RealPolynomial::new(vec![-200.0, 0.0, 15.0, 4.0]);
    let s = bracketed_newton(&ps, 0.0, 1.0);
    let gamma = bracketed_newton(&pg, 0.0, 5.0);
    CriticalConstants {
        s,
        sqrt_s: s.sqrt(),
        gamma,
        s_residual: ps.eval(s),
        gamma_residual: pg.eval(gamma),
        cross_residual: s - (10.0 - gamma * gamma) / 30.0,
    }
}

/// Real roots of `c3 x³ + c2 x² + c1 x + c0` by Cardano, polished by Newton.
pub fn real_cubic_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let (b, c, d) = (c2 / c3, c1 / c3, c0 / c3);
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = 0.25 * q * q + p * p * p / 27.0;
    let mut roots = if disc > 0.0 {
        let sq = disc.sqrt();
        vec![(-0.5 * q + sq).cbrt() + (-0.5 * q - sq).cbrt()]
    } else {
        let r = (-p / 3.0).sqrt();
        let arg = if r == 0.0 {
            0.0
        } else {
            (-0.5 * q / (r * r * r)).clamp(-1.0, 1.0).acos()
        };
        (0..3)
            .map(|k| 2.0 * r * ((arg + 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos())
            .collect()
    };
    let poly = RealPolynomial::new(vec![c0, c1, c2, c3]);
    let dpoly = poly.derivative();
    for y in roots.iter_mut() {
        let mut x = *y - b / 3.0;
        for _ in 0..4 {
            let d = dpoly.eval(x);
            if d == 0.0 {
                break;
            }
            let nx = x - poly.eval(x) / d;
            if poly.eval(nx).abs() < poly.eval(x).abs() {
                x = nx;
            } else {
                break;
            }
        }
        *y = x;
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// `x_user = shift + mirror·scale·x`, `t_user = scale⁴·t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub shift: f64,
    pub mirror: f64,
    pub scale: f64,
}

impl Affine {
    pub fn x(&self, x: f64) -> f64 {
        self.shift + self.mirror * self.scale * x
    }

    pub fn t(&self, t: f64) -> f64 {
        self.scale.powi(4) * t
    }
}

/// Quartic field in normal form `φ'(x) = x(x − α)(x − β)` with `φ(0) = 0` the
/// global minimum, scaled so that `Re α = 1` (or `|α| = 1` if `Re α = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuarticField {
    alpha: Complex64,
    beta: Complex64,
    affine: Affine,
}

impl QuarticField {
    /// Field with `φ'(x) = x(x − α)(x − β)`: either `0 < α ≤ β ≤ 2α` real or
    /// `β = conj α` with `Im α > 0`, `Re α ≥ 0`.
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<Self> {
        Self::with_affine(alpha, beta, 0.0, 1.0)
    }

    fn with_affine(alpha: Complex64, beta: Complex64, shift: f64, mirror: f64) -> Result<Self> {
        if alpha.norm() == 0.0 && beta.norm() == 0.0 {
            return Err(Error::DegenerateField("φ = x⁴/4 has no other critical point".into()));
        }
        let tol = 1e-12 * alpha.norm().max(beta.norm());
        let real = alpha.im.abs() <= tol && beta.im.abs() <= tol;
        if real {
            let (a, b) = (alpha.re, beta.re);
            if !(a > 0.0 && a <= b && b <= 2.0 * a * (1.0 + 1e-12)) {
                return Err(Error::InconsistentConfiguration(format!(
                    "real critical points need 0 < α ≤ β ≤ 2α, got α = {a}, β = {b}"
                )));
            }
            let q = a;
            return Ok(QuarticField {
                alpha: Complex64::new(1.0, 0.0),
                beta: Complex64::new((b / a).min(2.0), 0.0),
                affine: Affine { shift, mirror, scale: q },
            });
        }
        if (beta - alpha.conj()).norm() > tol || alpha.im <= 0.0 || alpha.re < -tol {
            return Err(Error::InconsistentConfiguration(format!(
                "complex critical points need β = conj α in the first quadrant, got α = {alpha}, β = {beta}"
            )));
        }
        let q = if alpha.re > tol { alpha.re } else { alpha.im };
        let a = alpha / q;
        Ok(QuarticField {
            alpha: a,
            beta: a.conj(),
            affine: Affine { shift, mirror, scale: q },
        })
    }

    /// Normal form of a quartic [`ExternalField`].
    pub fn from_field(field: &ExternalField) -> Result<Self> {
        if field.m() != 2 {
            return Err(Error::DegreeMismatch(format!("quartic field expected, got m = {}", field.m())));
        }
        let minima = global_minimizers(field)?;
        let z0 = *minima
            .first()
            .ok_or_else(|| Error::DegenerateField("no real minimizer".into()))?;
        let mut roots: Vec<Complex64> = all_roots(field.phi_prime())?.iter().map(|r| r.z).collect();
        let i0 = (0..roots.len())
            .min_by(|&i, &j| (roots[i] - z0).norm().total_cmp(&(roots[j] - z0).norm()))
            .expect("three roots");
        roots.remove(i0);
        let (mut y1, mut y2) = (roots[0] - z0, roots[1] - z0);
        let spread = (y1.norm() + y2.norm()).max(1e-300);
        if y1.norm() < 1e-4 * spread.max(1.0) && y2.norm() < 1e-4 * spread.max(1.0) {
            return Err(Error::DegenerateField("triple critical point".into()));
        }
        let mirror = if (y1 + y2).re < 0.0 { -1.0 } else { 1.0 };
        y1 *= mirror;
        y2 *= mirror;
        let tol = 1e-9 * spread;
        let (alpha, beta) = if y1.im.abs() <= tol && y2.im.abs() <= tol {
            let (a, b) = (y1.re.min(y2.re), y1.re.max(y2.re));
            (Complex64::new(a, 0.0), Complex64::new(b, 0.0))
        } else {
            let a = if y1.im > 0.0 { y1 } else { y2 };
            (a, a.conj())
        };
        Self::with_affine(alpha, beta, z0, mirror)
    }

    pub fn alpha(&self) -> Complex64 {
        self.alpha
    }

    pub fn beta(&self) -> Complex64 {
        self.beta
    }

    pub fn affine(&self) -> Affine {
        self.affine
    }

    pub fn is_real_case(&self) -> bool {
        self.alpha.im == 0.0
    }

    /// Squared slope of the line from the global minimum to another critical point.
    pub fn slope(&self) -> f64 {
        if self.is_real_case() {
            0.0
        } else if self.alpha.re <= 0.0 {
            f64::INFINITY
        } else {
            (self.alpha.im / self.alpha.re).powi(2)
        }
    }

    fn sigma_pi(&self) -> (f64, f64) {
        ((self.alpha + self.beta).re, (self.alpha * self.beta).re)
    }

    /// `φ` in normal form with `t_3 = −(α+β)/3`, `t_2 = αβ/2`.
    pub fn normalized_field(&self) -> ExternalField {
        let (sg, pr) = self.sigma_pi();
        ExternalField::new(vec![0.0, 0.5 * pr, -sg / 3.0]).expect("three couplings")
    }

    /// The field in the original coordinates (up to an additive constant).
    pub fn field(&self) -> ExternalField {
        let (sg, pr) = self.sigma_pi();
        let Affine { shift, mirror, scale } = self.affine;
        let q = mirror * scale;
        // x(x−α)(x−β) in the user variable X = shift + q x, made monic
        let p = RealPolynomial::new(vec![0.0, pr * q * q, -sg * q, 1.0]);
        let p = p.shift(-shift);
        ExternalField::from_derivative(&p).expect("monic cubic")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalLabel {
    /// Double zero of `B` off the support (`a < c < b`).
    T0,
    /// Interior quadruple zero (`a < b < c`).
    T2,
    /// Fifth-order zero at an endpoint (`b = c`).
    Quintuple,
}

/// `R = (x − a)(x − b)⁴(x − c)` at mass `t`, in the original coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalConfiguration {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub t: f64,
    pub label: CriticalLabel,
    /// Residuals of the four coefficient identities in normal form.
    pub residuals: [f64; 4],
}

fn identity_residuals(sg: f64, pr: f64, a: f64, b: f64, c: f64, t: f64) -> [f64; 4] {
    let (s, p) = (a + c, a * c);
    [
        s + 4.0 * b - 2.0 * sg,
        6.0 * b * b + 4.0 * b * s + p - sg * sg - 2.0 * pr,
        b * (2.0 * b * b + 3.0 * b * s + 2.0 * p) - pr * sg,
        b * b * (b * b + 4.0 * b * s + 6.0 * p) - pr * pr + 2.0 * t,
    ]
}

/// Configurations where `R` has a zero of order four (or five at an endpoint).
pub fn quadruple_points(field: &QuarticField) -> Result<Vec<CriticalConfiguration>> {
    let (sg, pr) = field.sigma_pi();
    let s = critical_constants().s;
    let sl = field.slope();
    let mut out = Vec::new();
    let aff = field.affine;
    let emit = |out: &mut Vec<CriticalConfiguration>, a: f64, b: f64, c: f64, t: f64, label| {
        let residuals = identity_residuals(sg, pr, a, b, c, t);
        let (xa, xc) = (aff.x(a), aff.x(c));
        out.push(CriticalConfiguration {
            a: xa.min(xc),
            b: aff.x(b),
            c: xa.max(xc),
            t: aff.t(t),
            label,
            residuals,
        });
    };
    if !field.is_real_case() {
        if sl > s * (1.0 + 1e-9) {
            return Err(Error::NoRealConfiguration(format!(
                "slope² {sl} exceeds the critical value {s}"
            )));
        }
        if (sl - s).abs() <= 1e-9 * s {
            // a + 5b = 4, 5b(a + 2b) = 2(3 + ζ²)
            let z2 = sl;
            let disc = (400.0 - 120.0 * (3.0 + z2)).max(0.0).sqrt();
            let b = [(20.0 + disc) / 30.0, (20.0 - disc) / 30.0]
                .into_iter()
                .min_by(|&x, &y| {
                    let r = |b: f64| (5.0 * b * b * (4.0 - 4.0 * b) - 2.0 * (1.0 + z2)).abs();
                    r(x).total_cmp(&r(y))
                })
                .expect("two roots");
            let a = 4.0 - 5.0 * b;
            let t = 0.5 * ((1.0 + z2).powi(2) - 5.0 * b.powi(3) * (2.0 * a + b));
            emit(&mut out, a, b, b, t, CriticalLabel::Quintuple);
            return Ok(out);
        }
    }
    let scale = sg.abs().max(1.0);
    for b in real_cubic_roots(10.0, -10.0 * sg, 2.0 * (sg * sg + 2.0 * pr), -pr * sg) {
        let rad = 4.0 * b * sg - 2.0 * pr - 6.0 * b * b;
        if rad < -1e-12 * scale * scale {
            continue;
        }
        let r = rad.max(0.0).sqrt();
        let (a, c) = (sg - 2.0 * b - r, sg - 2.0 * b + r);
        let label = if c < b {
            CriticalLabel::T0
        } else if a < b && b < c {
            CriticalLabel::T2
        } else {
            continue;
        };
        let t = 0.5 * (pr * pr - b * b * (b * b + 4.0 * b * (a + c) + 6.0 * a * c));
        if t > 0.0 {
            emit(&mut out, a, b, c, t, label);
        }
    }
    out.sort_by(|x, y| x.t.total_cmp(&y.t));
    Ok(out)
}

/// Qualitative evolution of the support for `t > 0`. Times are in the original
/// scale; the birth time of the second cut has no closed form and is found by
/// evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "scenario")]
pub enum Scenario {
    OneCutForever,
    TypeIIIBoundary { t: f64, location: f64 },
    FullSequence { t0: f64, t2: f64 },
    RealCriticalSequence { t2: f64 },
    SymmetricTwoCut { t2: f64 },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::OneCutForever => "OneCutForever",
            Scenario::TypeIIIBoundary { .. } => "TypeIIIBoundary",
            Scenario::FullSequence { .. } => "FullSequence",
            Scenario::RealCriticalSequence { .. } => "RealCriticalSequence",
            Scenario::SymmetricTwoCut { .. } => "SymmetricTwoCut",
        }
    }
}

pub fn classify(field: &QuarticField) -> Result<Scenario> {
    let s = critical_constants().s;
    let sl = field.slope();
    let find = |label| -> Result<CriticalConfiguration> {
        quadruple_points(field)?
            .into_iter()
            .find(|c| c.label == label)
            .ok_or_else(|| Error::NoRealConfiguration(format!("no {label:?} configuration")))
    };
    if field.is_real_case() {
        let u = field.beta.re;
        let t2 = find(CriticalLabel::T2)?.t;
        return Ok(if (u - 2.0).abs() <= 1e-12 {
            Scenario::SymmetricTwoCut { t2 }
        } else {
            Scenario::RealCriticalSequence { t2 }
        });
    }
    if sl > s * (1.0 + 1e-9) {
        Ok(Scenario::OneCutForever)
    } else if (sl - s).abs() <= 1e-9 * s {
        let c = find(CriticalLabel::Quintuple)?;
        Ok(Scenario::TypeIIIBoundary { t: c.t, location: c.b })
    } else {
        Ok(Scenario::FullSequence {
            t0: find(CriticalLabel::T0)?.t,
            t2: find(CriticalLabel::T2)?.t,
        })
    }
}

/// Residual of the type III locus for `φ' = x³ + d2 x² + d1 x + d0`; zero
/// exactly when some mass produces a fifth-order zero at an endpoint.
pub fn type3_locus(d0: f64, d1: f64, d2: f64) -> f64 {
    128.0 * d1.powi(3) + 135.0 * d0 * d0
        - d2 * (d2 * (2.0 * d2 * d2 - 9.0 * d1).powi(2)
            + 2.0 * (16.0 * d1 * d1 * d2 + 45.0 * d0 * d1 - 10.0 * d0 * d2 * d2))
}

/// The family `φ = x⁴/4 − 4c₁x³/3 + (2c₁² − 1)x² + 8c₁x` merging on `[−2, 2]`.
#[derive(Debug, Clone, Serialize)]
pub struct BleherEynard {
    pub c1: f64,
    #[serde(skip)]
    pub field: ExternalField,
    pub location: f64,
    pub endpoints: [f64; 2],
    /// From matching `φ'² − 2t x² − d x − e = (x² − 4)(x − 2c₁)⁴`.
    pub merge_time: f64,
    /// Max mismatch of the `x³…x⁶` coefficients in that identity.
    pub coefficient_residual: f64,
    /// `1 + 4c₁²`, the merge time in the half-mass convention.
    pub reference_time: f64,
    /// `−c₁²/(16 s₁⁴)` with `s₁ = √(1 − c₁²)`.
    pub reference_jump: f64,
}

pub fn bleher_eynard(c1: f64) -> Result<BleherEynard> {
    if !(c1.abs() < 1.0) {
        return Err(Error::InvalidInput(format!("|c1| < 1 required, got {c1}")));
    }
    let field = ExternalField::new(vec![8.0 * c1, 2.0 * c1 * c1 - 1.0, -4.0 * c1 / 3.0])?;
    let b = 2.0 * c1;
    let dp = field.phi_prime();
    let lhs = dp * dp;
    let quad = RealPolynomial::new(vec![-4.0, 0.0, 1.0]);
    let lin = RealPolynomial::new(vec![-b, 1.0]);
    let rhs = &quad * &(&(&lin * &lin) * &(&lin * &lin));
    let merge_time = 0.5 * (lhs.coeff(2) - rhs.coeff(2));
    let coefficient_residual = (3..=6)
        .map(|k| (lhs.coeff(k) - rhs.coeff(k)).abs())
        .fold(0.0, f64::max);
    let s1 = (1.0 - c1 * c1).sqrt();
    Ok(BleherEynard {
        c1,
        field,
        location: b,
        endpoints: [-2.0, 2.0],
        merge_time,
        coefficient_residual,
        reference_time: 1.0 + 4.0 * c1 * c1,
        reference_jump: -c1 * c1 / (16.0 * s1.powi(4)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        let c = critical_constants();
        assert!(c.s_residual.abs() < 1e-13);
        assert!(c.gamma_residual.abs() < 1e-12);
        assert!(c.cross_residual.abs() < 1e-12);
        assert!((c.s - 0.077685).abs() < 1e-6);
        assert!((c.sqrt_s - 0.27872057).abs() < 1e-8);
        assert!((c.gamma - 2.76938).abs() < 1e-5);
    }

    #[test]
    fn cubic_roots() {
        let r = real_cubic_roots(1.0, -6.0, 11.0, -6.0);
        assert_eq!(r.len(), 3);
        for (x, e) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - e).abs() < 1e-14);
        }
        let r = real_cubic_roots(2.0, 0.0, 2.0, -4.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn locus_examples() {
        assert_eq!(type3_locus(-8.0, 2.0, 4.0), 0.0);
        let d1: f64 = -1.5;
        let d0 = (-128.0 * d1.powi(3) / 135.0).sqrt();
        assert!(type3_locus(d0, d1, 0.0).abs() < 1e-12);
        assert!(type3_locus(1.0, 1.0, 1.0).abs() > 1.0);
    }

    #[test]
    fn normal_form_round_trip() {
        let q = QuarticField::new(Complex64::new(2.0, 0.4), Complex64::new(2.0, -0.4)).unwrap();
        assert!((q.alpha() - Complex64::new(1.0, 0.2)).norm() < 1e-15);
        let back = QuarticField::from_field(&q.field()).unwrap();
        assert!((back.alpha() - q.alpha()).norm() < 1e-12);
        assert!((back.affine().scale - 2.0).abs() < 1e-12);
        // mirrored and shifted: φ' = (x − 1)(x − 1 + 1)(x − 1 + 1.5)
        let f = ExternalField::from_derivative(&RealPolynomial::from_real_roots(&[1.0, 0.0, -0.5])).unwrap();
        let q = QuarticField::from_field(&f).unwrap();
        assert_eq!(q.affine().mirror, -1.0);
        assert!((q.beta().re - 1.5).abs() < 1e-12);
        assert!(matches!(
            QuarticField::from_field(&ExternalField::new(vec![0.0, 0.0, 0.0]).unwrap()),
            Err(Error::DegenerateField(_))
        ));
    }

    #[test]
    fn symmetric_merge() {
        let f = ExternalField::new(vec![0.0, -1.0, 0.0]).unwrap();
        let q = QuarticField::from_field(&f).unwrap();
        let pts = quadruple_points(&q).unwrap();
        assert_eq!(pts.len(), 1);
        let c = pts[0];
        assert_eq!(c.label, CriticalLabel::T2);
        assert!(c.b.abs() < 1e-12 && (c.a + 2.0).abs() < 1e-12 && (c.c - 2.0).abs() < 1e-12);
        assert!((c.t - 2.0).abs() < 1e-12);
        assert!(matches!(classify(&q).unwrap(), Scenario::SymmetricTwoCut { .. }));
    }

    #[test]
    fn double_critical_point_roots() {
        let q = QuarticField::new(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)).unwrap();
        let r = real_cubic_roots(10.0, -20.0, 12.0, -2.0);
        let five = 5f64.sqrt();
        for (x, e) in r.iter().zip([(5.0 - five) / 10.0, (5.0 + five) / 10.0, 1.0]) {
            assert!((x - e).abs() < 1e-12, "{x} {e}");
        }
        let pts = quadruple_points(&q).unwrap();
        assert_eq!(pts.len(), 1);
        assert!((pts[0].b - (5.0 + five) / 10.0).abs() < 1e-12);
    }

    #[test]
    fn classification_cases() {
        let c = critical_constants();
        let cases = [
            (Complex64::new(1.0, 0.3), "OneCutForever"),
            (Complex64::new(1.0, c.sqrt_s), "TypeIIIBoundary"),
            (Complex64::new(1.0, 0.2), "FullSequence"),
        ];
        for (a, name) in cases {
            let q = QuarticField::new(a, a.conj()).unwrap();
            assert_eq!(classify(&q).unwrap().name(), name);
        }
        let q = QuarticField::new(Complex64::new(1.0, 0.0), Complex64::new(1.5, 0.0)).unwrap();
        assert_eq!(classify(&q).unwrap().name(), "RealCriticalSequence");
        assert!(matches!(
            quadruple_points(&QuarticField::new(Complex64::new(1.0, 0.3), Complex64::new(1.0, -0.3)).unwrap()),
            Err(Error::NoRealConfiguration(_))
        ));
    }

    #[test]
    fn bleher_eynard_oracle() {
        for (c1, t) in [(0.0, 2.0), (0.25, 2.5), (0.5, 4.0)] {
            let be = bleher_eynard(c1).unwrap();
            assert!((be.merge_time - t).abs() < 1e-12);
            assert!(be.coefficient_residual < 1e-12);
            assert!((be.reference_time - t / 2.0).abs() < 1e-12);
        }
    }
}
