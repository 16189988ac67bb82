//! Dense real polynomials, complex roots, Laurent expansions at infinity and
//! the two algebraic identities tying `A`, `B`, `R` to the external field.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Real polynomial with coefficients in ascending degree.
///
/// Trailing exact zeros are trimmed, so the zero polynomial has no
/// coefficients.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct RealPolynomial {
    coeffs: Vec<f64>,
}

impl From<Vec<f64>> for RealPolynomial {
    fn from(v: Vec<f64>) -> Self {
        RealPolynomial::new(v)
    }
}

impl From<RealPolynomial> for Vec<f64> {
    fn from(p: RealPolynomial) -> Self {
        p.coeffs
    }
}

impl fmt::Debug for RealPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealPolynomial{:?}", self.coeffs)
    }
}

impl RealPolynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        RealPolynomial { coeffs }
    }

    pub fn zero() -> Self {
        RealPolynomial { coeffs: vec![] }
    }

    pub fn constant(c: f64) -> Self {
        RealPolynomial::new(vec![c])
    }

    pub fn monomial(k: usize, c: f64) -> Self {
        let mut v = vec![0.0; k + 1];
        v[k] = c;
        RealPolynomial::new(v)
    }

    /// `∏ (x - r)` over the given real roots.
    pub fn from_real_roots(roots: &[f64]) -> Self {
        roots.iter().fold(RealPolynomial::constant(1.0), |acc, &r| {
            &acc * &RealPolynomial::new(vec![-r, 1.0])
        })
    }

    /// `(x - s)² + q`; a conjugate pair `s ± i√q` when `q > 0`.
    pub fn quadratic_factor(s: f64, q: f64) -> Self {
        RealPolynomial::new(vec![s * s + q, -2.0 * s, 1.0])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn derivative(&self) -> Self {
        RealPolynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    /// Antiderivative vanishing at 0.
    pub fn antiderivative(&self) -> Self {
        let mut v = vec![0.0];
        v.extend(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| c / (k as f64 + 1.0)),
        );
        RealPolynomial::new(v)
    }

    pub fn scale(&self, c: f64) -> Self {
        RealPolynomial::new(self.coeffs.iter().map(|x| x * c).collect())
    }

    /// Taylor shift: the polynomial `x ↦ p(x + c)`.
    pub fn shift(&self, c: f64) -> Self {
        let mut v = self.coeffs.clone();
        let n = v.len();
        for i in 0..n {
            for j in (i..n.saturating_sub(1)).rev() {
                v[j] += c * v[j + 1];
            }
        }
        RealPolynomial::new(v)
    }

    /// Quotient and remainder of Euclidean division by a nonzero `d`.
    pub fn div_rem(&self, d: &RealPolynomial) -> (RealPolynomial, RealPolynomial) {
        assert!(!d.is_zero(), "division by the zero polynomial");
        let dd = d.degree();
        if self.is_zero() || self.degree() < dd {
            return (RealPolynomial::zero(), self.clone());
        }
        let mut r = self.coeffs.clone();
        let mut q = vec![0.0; self.degree() - dd + 1];
        let lead = d.leading();
        for k in (0..q.len()).rev() {
            let c = r[k + dd] / lead;
            q[k] = c;
            for (j, &dj) in d.coeffs.iter().enumerate() {
                r[k + j] -= c * dj;
            }
        }
        r.truncate(dd);
        (RealPolynomial::new(q), RealPolynomial::new(r))
    }
}

impl Add for &RealPolynomial {
    type Output = RealPolynomial;
    fn add(self, o: &RealPolynomial) -> RealPolynomial {
        let n = self.coeffs.len().max(o.coeffs.len());
        RealPolynomial::new((0..n).map(|k| self.coeff(k) + o.coeff(k)).collect())
    }
}

impl Sub for &RealPolynomial {
    type Output = RealPolynomial;
    fn sub(self, o: &RealPolynomial) -> RealPolynomial {
        let n = self.coeffs.len().max(o.coeffs.len());
        RealPolynomial::new((0..n).map(|k| self.coeff(k) - o.coeff(k)).collect())
    }
}

impl Mul for &RealPolynomial {
    type Output = RealPolynomial;
    fn mul(self, o: &RealPolynomial) -> RealPolynomial {
        if self.is_zero() || o.is_zero() {
            return RealPolynomial::zero();
        }
        let mut v = vec![0.0; self.coeffs.len() + o.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in o.coeffs.iter().enumerate() {
                v[i + j] += a * b;
            }
        }
        RealPolynomial::new(v)
    }
}

impl Neg for &RealPolynomial {
    type Output = RealPolynomial;
    fn neg(self) -> RealPolynomial {
        self.scale(-1.0)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for RealPolynomial {
            type Output = RealPolynomial;
            fn $m(self, o: RealPolynomial) -> RealPolynomial {
                (&self).$m(&o)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

// ─── roots ────────────────────────────────────────────────────────────────

/// Tolerances for [`all_roots_with`].
#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Imaginary parts below `snap · max(1, |z|)` are set to zero.
    pub snap: f64,
    /// Roots closer than `cluster · max(1, |z|)` count toward one multiplicity.
    pub cluster: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            snap: 1e-9,
            cluster: 1e-6,
            max_iter: 2000,
        }
    }
}

/// A root together with the size of the cluster it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub z: Complex64,
    pub multiplicity: usize,
}

/// All complex roots of `p` with default tolerances.
pub fn all_roots(p: &RealPolynomial) -> Result<Vec<Root>> {
    all_roots_with(p, RootOptions::default())
}

/// All complex roots of `p`: companion-matrix eigenvalues polished by Newton.
///
/// Conjugate pairs are returned exactly conjugate and adjacent; the output is
/// sorted by real part.
pub fn all_roots_with(p: &RealPolynomial, opts: RootOptions) -> Result<Vec<Root>> {
    let n = p.degree();
    if p.is_zero() || n == 0 {
        return Err(Error::DegreeMismatch(
            "root finding needs degree at least 1".into(),
        ));
    }
    let lead = p.leading();
    // exact zeros at the origin are split off first
    let nz = p.coeffs().iter().take_while(|c| **c == 0.0).count();
    let monic: Vec<f64> = p.coeffs()[nz..].iter().map(|c| c / lead).collect();
    let n = n - nz;
    let mut raw: Vec<Complex64> = if n == 0 {
        Vec::new()
    } else if n == 1 {
        vec![Complex64::new(-monic[0], 0.0)]
    } else {
        let mut comp = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            comp[(i, n - 1)] = -monic[i];
        }
        let schur = nalgebra::linalg::Schur::try_new(comp, f64::EPSILON, opts.max_iter)
            .ok_or_else(|| Error::NonConvergence("companion Schur iteration".into()))?;
        schur.complex_eigenvalues().iter().copied().collect()
    };
    raw.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), nz));
    let dp = p.derivative();
    for z in raw.iter_mut() {
        let mut best = p.eval_complex(*z).norm();
        for _ in 0..8 {
            let d = dp.eval_complex(*z);
            if d.norm() == 0.0 {
                break;
            }
            let cand = *z - p.eval_complex(*z) / d;
            let v = p.eval_complex(cand).norm();
            if v < best {
                best = v;
                *z = cand;
            } else {
                break;
            }
        }
    }
    let mut reals = Vec::new();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for z in raw {
        if z.im.abs() <= opts.snap * z.norm().max(1.0) {
            reals.push(z.re);
        } else if z.im > 0.0 {
            upper.push(z);
        } else {
            lower.push(z);
        }
    }
    upper.sort_by(|a, b| a.re.total_cmp(&b.re));
    lower.sort_by(|a, b| a.re.total_cmp(&b.re));
    let mut out: Vec<Complex64> = reals.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    if upper.len() == lower.len() {
        for (u, l) in upper.iter().zip(lower.iter()) {
            let re = 0.5 * (u.re + l.re);
            let im = 0.5 * (u.im - l.im);
            out.push(Complex64::new(re, -im));
            out.push(Complex64::new(re, im));
        }
    } else {
        for z in upper.iter().chain(lower.iter()) {
            out.push(Complex64::new(z.re, 0.0));
        }
    }
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let roots = out
        .iter()
        .map(|&z| {
            let tol = opts.cluster * z.norm().max(1.0);
            let multiplicity = out.iter().filter(|w| (**w - z).norm() <= tol).count();
            Root { z, multiplicity }
        })
        .collect();
    Ok(roots)
}

/// Real roots only (imaginary parts already snapped), ascending.
pub fn real_roots(p: &RealPolynomial) -> Result<Vec<f64>> {
    Ok(all_roots(p)?
        .into_iter()
        .filter(|r| r.z.im == 0.0)
        .map(|r| r.z.re)
        .collect())
}

// ─── Laurent expansions at infinity ───────────────────────────────────────

/// Truncated Laurent series `Σ_k coeffs[k] · z^(top - k)` at `z = ∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct Laurent {
    pub top: i64,
    pub coeffs: Vec<f64>,
}

impl Laurent {
    /// Coefficient of `z^power` (zero outside the stored range).
    pub fn coeff(&self, power: i64) -> f64 {
        let k = self.top - power;
        if k < 0 {
            0.0
        } else {
            self.coeffs.get(k as usize).copied().unwrap_or(0.0)
        }
    }

    /// Product with a polynomial; keeps the same number of exact terms.
    pub fn mul_poly(&self, p: &RealPolynomial) -> Laurent {
        let d = p.degree();
        let n = self.coeffs.len();
        let mut out = vec![0.0; n];
        for (j, o) in out.iter_mut().enumerate() {
            for i in 0..=d {
                let shift = d - i;
                if j >= shift {
                    let k = j - shift;
                    *o += p.coeff(i) * self.coeffs[k];
                }
            }
        }
        Laurent {
            top: self.top + d as i64,
            coeffs: out,
        }
    }

    /// Terms with nonnegative powers.
    pub fn polynomial_part(&self) -> RealPolynomial {
        if self.top < 0 {
            return RealPolynomial::zero();
        }
        let top = self.top as usize;
        let mut v = vec![0.0; top + 1];
        for (k, &c) in self.coeffs.iter().enumerate().take(top + 1) {
            v[top - k] = c;
        }
        RealPolynomial::new(v)
    }
}

/// Laurent expansion of `A^(±1/2)` at infinity for a monic `A` of even degree,
/// on the branch that is positive to the right of every root of `A`.
pub fn laurent_sqrt(a: &RealPolynomial, inverse: bool, nterms: usize) -> Result<Laurent> {
    let d = a.degree();
    if a.is_zero() || d % 2 != 0 {
        return Err(Error::DegreeMismatch(format!(
            "square-root expansion needs even degree, got {d}"
        )));
    }
    if (a.leading() - 1.0).abs() > 1e-12 {
        return Err(Error::DegreeMismatch("polynomial is not monic".into()));
    }
    let alpha = if inverse { -0.5 } else { 0.5 };
    // A(z) = z^d · U(1/z), U_k = a_{d-k}.
    let u: Vec<f64> = (0..=d).map(|k| a.coeff(d - k)).collect();
    let mut g = vec![0.0; nterms];
    if nterms > 0 {
        g[0] = 1.0;
    }
    for n in 1..nterms {
        let mut acc = 0.0;
        for k in 1..=n.min(d) {
            acc += (alpha * k as f64 - (n - k) as f64) * u[k] * g[n - k];
        }
        g[n] = acc / n as f64;
    }
    let half = (d / 2) as i64;
    Ok(Laurent {
        top: if inverse { -half } else { half },
        coeffs: g,
    })
}

// ─── external field ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FieldSpec {
    m: usize,
    couplings: Vec<f64>,
}

/// `φ(x) = Σ_{j=1}^{2m} t_j x^j` with `t_{2m} = 1/(2m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldSpec", into = "FieldSpec")]
pub struct ExternalField {
    m: usize,
    couplings: Vec<f64>,
    phi: RealPolynomial,
    phi_prime: RealPolynomial,
}

impl TryFrom<FieldSpec> for ExternalField {
    type Error = Error;
    fn try_from(s: FieldSpec) -> Result<Self> {
        let f = ExternalField::new(s.couplings)?;
        if f.m != s.m {
            return Err(Error::InvalidInput(format!(
                "m = {} does not match {} couplings",
                s.m,
                f.couplings.len()
            )));
        }
        Ok(f)
    }
}

impl From<ExternalField> for FieldSpec {
    fn from(f: ExternalField) -> Self {
        FieldSpec {
            m: f.m,
            couplings: f.couplings,
        }
    }
}

impl ExternalField {
    /// Field from its couplings `t_1, …, t_{2m-1}`.
    pub fn new(couplings: Vec<f64>) -> Result<Self> {
        if couplings.len() % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "need 2m-1 couplings, got {}",
                couplings.len()
            )));
        }
        if couplings.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coupling".into()));
        }
        let m = (couplings.len() + 1) / 2;
        let mut c = vec![0.0];
        c.extend_from_slice(&couplings);
        c.push(1.0 / (2 * m) as f64);
        let phi = RealPolynomial::new(c);
        let phi_prime = phi.derivative();
        Ok(ExternalField {
            m,
            couplings,
            phi,
            phi_prime,
        })
    }

    /// Field whose derivative is the given monic polynomial of odd degree.
    pub fn from_derivative(dp: &RealPolynomial) -> Result<Self> {
        let d = dp.degree();
        if d % 2 == 0 || (dp.leading() - 1.0).abs() > 1e-14 {
            return Err(Error::InvalidInput(
                "derivative must be monic of odd degree".into(),
            ));
        }
        let couplings = (1..=d).map(|j| dp.coeff(j - 1) / j as f64).collect();
        ExternalField::new(couplings)
    }

    /// Normalises an arbitrary even-degree polynomial with positive leading
    /// coefficient. Returns the field and `κ` with `p = κ·φ + p(0)`.
    pub fn from_polynomial(p: &RealPolynomial) -> Result<(Self, f64)> {
        let d = p.degree();
        if d < 2 || d % 2 != 0 || p.leading() <= 0.0 {
            return Err(Error::InvalidInput(
                "field must have even degree ≥ 2 and positive leading coefficient".into(),
            ));
        }
        let kappa = p.leading() * d as f64;
        let couplings = (1..d).map(|j| p.coeff(j) / kappa).collect();
        Ok((ExternalField::new(couplings)?, kappa))
    }

    pub fn quadratic() -> Self {
        ExternalField::new(vec![0.0]).expect("valid")
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    /// `t_j` for `1 ≤ j ≤ 2m`.
    pub fn coupling(&self, j: usize) -> f64 {
        self.phi.coeff(j)
    }

    pub fn phi(&self) -> &RealPolynomial {
        &self.phi
    }

    pub fn phi_prime(&self) -> &RealPolynomial {
        &self.phi_prime
    }
}

// ─── B and R ─────────────────────────────────────────────────────────────

/// `B = (φ'/A^{1/2})_⊕`, the polynomial part at infinity.
pub fn compute_b(field: &ExternalField, a: &RealPolynomial) -> Result<RealPolynomial> {
    let m = field.m();
    let da = a.degree();
    if da > 2 * m || da % 2 != 0 || a.is_zero() {
        return Err(Error::DegreeMismatch(format!(
            "deg A = {da} must be even and at most {}",
            2 * m
        )));
    }
    let l = laurent_sqrt(a, true, 2 * m + 2)?;
    Ok(l.mul_poly(field.phi_prime()).polynomial_part())
}

/// Default relative tolerance on the vanishing coefficients of `R − φ'²`.
pub const R_CONSISTENCY_TOL: f64 = 1e-8;

/// `R = A·B²` and the mass read off the `z^{2m-2}` coefficient of `R − φ'²`.
pub fn assemble_r(
    field: &ExternalField,
    a: &RealPolynomial,
    b: &RealPolynomial,
) -> Result<(RealPolynomial, f64)> {
    assemble_r_with_tol(field, a, b, R_CONSISTENCY_TOL)
}

pub fn assemble_r_with_tol(
    field: &ExternalField,
    a: &RealPolynomial,
    b: &RealPolynomial,
    tol: f64,
) -> Result<(RealPolynomial, f64)> {
    let m = field.m();
    let r = &(a * b) * b;
    if r.degree() != 4 * m - 2 {
        return Err(Error::InconsistentConfiguration(format!(
            "deg(A·B²) = {} but 4m-2 = {}",
            r.degree(),
            4 * m - 2
        )));
    }
    let sq = field.phi_prime() * field.phi_prime();
    let diff = &r - &sq;
    let scale = sq.max_abs_coeff().max(1.0);
    for k in (2 * m - 1)..=(4 * m - 3) {
        if diff.coeff(k).abs() > tol * scale {
            return Err(Error::InconsistentConfiguration(format!(
                "coefficient of z^{k} in R − φ'² is {:e}",
                diff.coeff(k)
            )));
        }
    }
    let mass = -0.5 * diff.coeff(2 * m - 2);
    Ok((r, mass))
}
