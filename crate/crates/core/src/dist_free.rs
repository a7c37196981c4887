//! Free-Poisson and free-Kummer laws in closed form.
//!
//! Parameter conventions:
//! * free Poisson is built with [`FreePoissonParams::fpois`]`(jump, rate)`;
//!   the absolutely continuous part lives on `(γ(1−√λ)², γ(1+√λ)²)` and an
//!   atom of weight `max(0, 1−λ)` sits at zero.
//! * free Kummer `fK(α, β, γ)` is the equilibrium measure of the potential
//!   `V(x) = γx + β log(1+x) − (α−1) log x`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_sqrt_edges};
use crate::roots::brent;
use crate::transforms::DensityOnInterval;

/// Residual bound for the support equations.
pub const SUPPORT_TOL: f64 = 1e-10;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `√((z−a)(z−b))` on `ℂ \ [a, b]`, the branch that behaves like `z` at
/// infinity: the product of the two principal roots.
pub fn sqrt_branch(z: Complex64, a: f64, b: f64) -> Complex64 {
    (z - a).sqrt() * (z - b).sqrt()
}

fn on_interval(z: Complex64, a: f64, b: f64) -> bool {
    z.im == 0.0 && z.re >= a && z.re <= b
}

// ---------------------------------------------------------------------------
// free Poisson

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreePoissonParams {
    rate: f64,
    jump: f64,
}

impl FreePoissonParams {
    /// Free Poisson with the given jump size and rate (in that order).
    pub fn fpois(jump: f64, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) || !(jump > 0.0 && jump.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "free Poisson needs rate > 0 and jump > 0 (rate={rate}, jump={jump})"
            )));
        }
        Ok(Self { rate, jump })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn jump(&self) -> f64 {
        self.jump
    }

    pub fn atom(&self) -> f64 {
        (1.0 - self.rate).max(0.0)
    }

    pub fn support(&self) -> (f64, f64) {
        let s = self.rate.sqrt();
        (self.jump * (1.0 - s).powi(2), self.jump * (1.0 + s).powi(2))
    }

    pub fn mean(&self) -> f64 {
        self.rate * self.jump
    }

    /// `κ_n = λ γⁿ`, `n = 1..=order`.
    pub fn cumulants(&self, order: usize) -> Vec<f64> {
        (1..=order).map(|n| self.rate * self.jump.powi(n as i32)).collect()
    }

    pub fn density(&self, x: f64) -> f64 {
        fp_density(self, x)
    }

    pub fn cauchy(&self, z: Complex64) -> Result<Complex64> {
        fp_cauchy(self, z)
    }

    pub fn to_density(&self) -> Result<DensityOnInterval> {
        let (lo, hi) = self.support();
        let p = *self;
        DensityOnInterval::new(lo, hi, Arc::new(move |x| fp_density(&p, x)), self.atom())
    }
}

/// Density of the continuous part,
/// `√(4λγ² − (x − γ(1+λ))²) / (2πγx)` on the support and 0 elsewhere.
pub fn fp_density(p: &FreePoissonParams, x: f64) -> f64 {
    let (lo, hi) = p.support();
    if x <= lo || x >= hi || x <= 0.0 {
        return 0.0;
    }
    let (l, g) = (p.rate, p.jump);
    let disc = 4.0 * l * g * g - (x - g * (1.0 + l)).powi(2);
    disc.max(0.0).sqrt() / (2.0 * PI * g * x)
}

/// `G(z) = 2 / (z + γ(1−λ) + √((z−a)(z−b)))`, the rationalized form of
/// `(z + γ(1−λ) − √((z−a)(z−b)))/(2γz)`.
pub fn fp_cauchy(p: &FreePoissonParams, z: Complex64) -> Result<Complex64> {
    let (lo, hi) = p.support();
    if on_interval(z, lo, hi) || (p.atom() > 0.0 && z.norm() == 0.0) {
        return Err(Error::SingularEvaluation { re: z.re, im: z.im });
    }
    let den = z + p.jump * (1.0 - p.rate) + sqrt_branch(z, lo, hi);
    if den.norm() == 0.0 {
        return Err(Error::SingularEvaluation { re: z.re, im: z.im });
    }
    Ok(c(2.0) / den)
}

/// `r(y) = λγ / (1 − γy)`, valid for `|y| < 1/γ`.
pub fn fp_r_transform(p: &FreePoissonParams, y: f64) -> Result<f64> {
    let pole = 1.0 / p.jump;
    if !(y.abs() < pole * (1.0 - 1e-12)) {
        return Err(Error::PoleProximity { y, pole });
    }
    Ok(p.rate * p.jump / (1.0 - p.jump * y))
}

// ---------------------------------------------------------------------------
// free Kummer

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeKummerParams {
    alpha: f64,
    beta: f64,
    gamma: f64,
    a: f64,
    b: f64,
}

/// Residuals of the two support equations at `(a, b)`.
pub fn support_residuals(alpha: f64, beta: f64, gamma: f64, a: f64, b: f64) -> [f64; 2] {
    let s0 = (a * b).sqrt();
    let s1 = ((a + 1.0) * (b + 1.0)).sqrt();
    [
        gamma + beta / s1 - (alpha - 1.0) / s0,
        gamma * (a + b) / 2.0 - alpha + 1.0 + beta - beta / s1 - 2.0,
    ]
}

fn max_abs(r: [f64; 2]) -> f64 {
    r[0].abs().max(r[1].abs())
}

fn newton_support(alpha: f64, beta: f64, gamma: f64, a0: f64, b0: f64, damped: bool) -> Option<(f64, f64)> {
    let (mut a, mut b) = (a0, b0);
    if !(a > 0.0 && b > a) {
        return None;
    }
    let mut r = support_residuals(alpha, beta, gamma, a, b);
    for _ in 0..100 {
        if max_abs(r) <= 1e-14 * (1.0 + alpha.abs() + beta.abs() + gamma) {
            break;
        }
        let s0 = (a * b).sqrt();
        let s1 = ((a + 1.0) * (b + 1.0)).sqrt();
        let j11 = -beta / (2.0 * (a + 1.0) * s1) + (alpha - 1.0) / (2.0 * a * s0);
        let j12 = -beta / (2.0 * (b + 1.0) * s1) + (alpha - 1.0) / (2.0 * b * s0);
        let j21 = gamma / 2.0 + beta / (2.0 * (a + 1.0) * s1);
        let j22 = gamma / 2.0 + beta / (2.0 * (b + 1.0) * s1);
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let da = (r[0] * j22 - r[1] * j12) / det;
        let db = (j11 * r[1] - j21 * r[0]) / det;
        let mut step = 1.0;
        loop {
            let (na, nb) = (a - step * da, b - step * db);
            if na > 0.0 && nb > na {
                let nr = support_residuals(alpha, beta, gamma, na, nb);
                if !damped || max_abs(nr) < max_abs(r) || step < 1e-6 {
                    a = na;
                    b = nb;
                    r = nr;
                    break;
                }
            } else if !damped {
                return None;
            }
            step *= 0.5;
            if step < 1e-12 {
                return None;
            }
        }
    }
    (max_abs(r) <= SUPPORT_TOL && r.iter().all(|v| v.is_finite())).then_some((a, b))
}

/// One-dimensional reduction: with `t = 1/√((a+1)(b+1))` the system fixes
/// `(a+b)/2` and `√(ab)` as functions of `t`, leaving a scalar equation in
/// `t ∈ (0, 1]` that is solved by bracketing.
fn bracketed_support(alpha: f64, beta: f64, gamma: f64) -> Vec<(f64, f64)> {
    let half_sum = move |t: f64| (alpha + 1.0 - beta + beta * t) / gamma;
    let root_prod = move |t: f64| (alpha - 1.0) / (gamma + beta * t);
    let h = move |t: f64| {
        let (s, p) = (half_sum(t), root_prod(t));
        t * t * (p * p + 2.0 * s + 1.0) - 1.0
    };
    let grid = 4000;
    let mut out = Vec::new();
    let mut prev_t = 1e-9;
    let mut prev_h = h(prev_t);
    for k in 1..=grid {
        let t = k as f64 / grid as f64;
        let ht = h(t);
        if prev_h.is_finite() && ht.is_finite() && prev_h.signum() != ht.signum() {
            if let Ok(root) = brent(|x| Ok(h(x)), prev_t, t, 1e-16) {
                let (s, p) = (half_sum(root), root_prod(root));
                if p > 0.0 && s > p {
                    let d = (s * s - p * p).sqrt();
                    let (a, b) = (p * p / (s + d), s + d);
                    out.push((a, b));
                }
            }
        }
        prev_t = t;
        prev_h = ht;
    }
    out
}

/// The bracket `(α−1)(1+x)/√(ab) − βx/√((a+1)(b+1))` is linear in `x`; its
/// sign at both endpoints decides positivity of the density.
fn density_nonnegative(alpha: f64, beta: f64, a: f64, b: f64) -> bool {
    let s0 = (a * b).sqrt();
    let s1 = ((a + 1.0) * (b + 1.0)).sqrt();
    let num = |x: f64| (alpha - 1.0) * (1.0 + x) / s0 - beta * x / s1;
    let scale = (alpha - 1.0).abs() / s0 + beta.abs() / s1;
    num(a) >= -1e-9 * scale && num(b) >= -1e-9 * scale
}

/// Support endpoints `(a, b)` of `fK(α, β, γ)`.
///
/// Newton on the two support equations from the `β = 0` (Marchenko–Pastur)
/// endpoints, then damped Newton, then a bracketed one-dimensional solve.
/// Admissibility is judged on the result: the density must be nonnegative.
pub fn fk_solve_support(alpha: f64, beta: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "free Kummer needs alpha > 0, gamma > 0 (alpha={alpha}, beta={beta}, gamma={gamma})"
        )));
    }
    let sa = alpha.sqrt();
    let (a0, b0) = ((sa - 1.0).powi(2) / gamma, (sa + 1.0).powi(2) / gamma);
    let mut candidates = Vec::new();
    if let Some(ab) = newton_support(alpha, beta, gamma, a0, b0, false) {
        candidates.push(ab);
    } else if let Some(ab) = newton_support(alpha, beta, gamma, a0.max(1e-3 / gamma), b0, true) {
        candidates.push(ab);
    }
    if candidates.is_empty() {
        for (a, b) in bracketed_support(alpha, beta, gamma) {
            // polish
            let polished = newton_support(alpha, beta, gamma, a, b, true).unwrap_or((a, b));
            candidates.push(polished);
        }
    }
    if candidates.is_empty() {
        return Err(Error::NoConvergence(format!(
            "support equations for fK({alpha}, {beta}, {gamma})"
        )));
    }
    for &(a, b) in &candidates {
        if max_abs(support_residuals(alpha, beta, gamma, a, b)) <= SUPPORT_TOL
            && density_nonnegative(alpha, beta, a, b)
        {
            return Ok((a, b));
        }
    }
    Err(Error::NegativeDensity { alpha, beta, gamma })
}

impl FreeKummerParams {
    /// Solves for the support and caches it.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let (a, b) = fk_solve_support(alpha, beta, gamma)?;
        Ok(Self { alpha, beta, gamma, a, b })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn support(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn residuals(&self) -> [f64; 2] {
        support_residuals(self.alpha, self.beta, self.gamma, self.a, self.b)
    }

    fn roots(&self) -> (f64, f64) {
        ((self.a * self.b).sqrt(), ((self.a + 1.0) * (self.b + 1.0)).sqrt())
    }

    /// `(α−1)/(x√(ab)) − β/((1+x)√((a+1)(b+1)))`, the factor multiplying the
    /// square root in both the density and the rate function.
    fn bracket(&self, x: f64) -> f64 {
        let (s0, s1) = self.roots();
        (self.alpha - 1.0) / (x * s0) - self.beta / ((1.0 + x) * s1)
    }

    pub fn density(&self, x: f64) -> f64 {
        fk_density(self, x)
    }

    pub fn cauchy(&self, z: Complex64) -> Result<Complex64> {
        fk_cauchy(self, z)
    }

    pub fn potential(&self) -> PotentialSpec {
        PotentialSpec::new(self.alpha, self.beta, self.gamma)
    }

    pub fn to_density(&self) -> Result<DensityOnInterval> {
        let p = *self;
        DensityOnInterval::new(self.a, self.b, Arc::new(move |x| fk_density(&p, x)), 0.0)
    }

    /// Both support conditions evaluated by quadrature:
    /// `(1/π)∫ V′/√((b−x)(x−a))` and `(1/π)∫ xV′/√((b−x)(x−a)) − 2`.
    pub fn equilibrium_residuals(&self) -> Result<[f64; 2]> {
        let (a, b) = (self.a, self.b);
        let v = self.potential();
        // x = a + (b−a) sin²θ turns dx/√((b−x)(x−a)) into 2 dθ.
        let first: f64 = integrate(
            |th: f64| {
                let s = th.sin();
                2.0 * v.derivative(a + (b - a) * s * s)
            },
            0.0,
            std::f64::consts::FRAC_PI_2,
            1e-13,
        )?;
        let second: f64 = integrate(
            |th: f64| {
                let s = th.sin();
                let x = a + (b - a) * s * s;
                2.0 * x * v.derivative(x)
            },
            0.0,
            std::f64::consts::FRAC_PI_2,
            1e-13,
        )?;
        Ok([first / PI, second / PI - 2.0])
    }
}

/// `(1/2π) √((x−a)(b−x)) [(α−1)/(x√(ab)) − β/((1+x)√((a+1)(b+1)))]` on
/// `(a, b)`, zero elsewhere.
pub fn fk_density(k: &FreeKummerParams, x: f64) -> f64 {
    if x <= k.a || x >= k.b {
        return 0.0;
    }
    ((x - k.a) * (k.b - x)).sqrt() * k.bracket(x) / (2.0 * PI)
}

/// Closed-form Cauchy transform,
/// `½(γ − (α−1)/z + β/(1+z) + √((z−a)(z−b)) [β/((1+z)√((a+1)(b+1))) − (α−1)/(z√(ab))])`.
///
/// Each `(s + R)/w` term (with `s = √(ab)`, `w = z` or `s = √((a+1)(b+1))`,
/// `w = 1 + z`, and `R = √((z−a)(z−b))`) is removable at `w = 0`; there it
/// is evaluated through the conjugate form `(s² − R²)/(w(s − R))`.
pub fn fk_cauchy(k: &FreeKummerParams, z: Complex64) -> Result<Complex64> {
    if on_interval(z, k.a, k.b) {
        return Err(Error::SingularEvaluation { re: z.re, im: z.im });
    }
    let (s0, s1) = k.roots();
    let r = sqrt_branch(z, k.a, k.b);
    let t0 = ratio(s0, r, z, k.a + k.b - z);
    let t1 = ratio(s1, r, z + 1.0, k.a + k.b + 1.0 - z);
    Ok((c(k.gamma) - t0 * ((k.alpha - 1.0) / s0) + t1 * (k.beta / s1)) * 0.5)
}

/// `(s + R)/w`, or the equal `conj/(s − R)` where `w` is the smaller
/// denominator.
fn ratio(s: f64, r: Complex64, w: Complex64, conj: Complex64) -> Complex64 {
    let alt = s - r;
    if w.norm() >= alt.norm() {
        (r + s) / w
    } else {
        conj / alt
    }
}

/// [`fk_cauchy`] written literally; used to cross-check the
/// rearranged evaluation away from `z = 0, −1`.
pub fn fk_cauchy_literal(k: &FreeKummerParams, z: Complex64) -> Complex64 {
    let (s0, s1) = k.roots();
    let r = sqrt_branch(z, k.a, k.b);
    let bracket = k.beta / ((1.0 + z) * s1) - (k.alpha - 1.0) / (z * s0);
    (c(k.gamma) - (k.alpha - 1.0) / z + k.beta / (1.0 + z) + r * bracket) * 0.5
}

/// `∫_a^b √((x−a)(b−x)) / ((z−x) x) dx = (π/z)(z − √(ab) − √((z−a)(z−b)))`.
pub fn contour_identity_inverse(a: f64, b: f64, z: Complex64) -> Complex64 {
    (z - (a * b).sqrt() - sqrt_branch(z, a, b)) * PI / z
}

/// `∫_a^b √((x−a)(b−x)) / ((z−x)(1+x)) dx
///  = (π/(1+z))((z+1) − √((a+1)(b+1)) − √((z−a)(z−b)))`.
pub fn contour_identity_shifted(a: f64, b: f64, z: Complex64) -> Complex64 {
    (z + 1.0 - ((a + 1.0) * (b + 1.0)).sqrt() - sqrt_branch(z, a, b)) * PI / (z + 1.0)
}

// ---------------------------------------------------------------------------
// potential, energy, rate function

/// Finite-`n` potential coefficients of the eigenvalue density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteN {
    /// `α_n = a_n − (n+1)/2`
    pub alpha_n: f64,
    /// `β_n = a_n + b_n`
    pub beta_n: f64,
    /// `γ_n = c_n`
    pub gamma_n: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialSpec {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub finite: Option<FiniteN>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialMode {
    Limit,
    FiniteN,
}

impl PotentialSpec {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma, finite: None }
    }

    /// Potential of matrix-Kummer `MK_n(a_n, b_n, c_n·I)` eigenvalues; the
    /// limit coefficients are the exact ratios `2a_n/n`, `2(a_n+b_n)/n`,
    /// `2c_n/n` at this `n`.
    pub fn from_matrix(a_n: f64, b_n: f64, c_n: f64, n: usize) -> Self {
        let nf = n as f64;
        Self {
            alpha: 2.0 * a_n / nf,
            beta: 2.0 * (a_n + b_n) / nf,
            gamma: 2.0 * c_n / nf,
            finite: Some(FiniteN {
                alpha_n: a_n - (nf + 1.0) / 2.0,
                beta_n: a_n + b_n,
                gamma_n: c_n,
                n,
            }),
        }
    }

    /// `V(x) = γx + β log(1+x) − (α−1) log x`.
    pub fn value(&self, x: f64) -> f64 {
        self.gamma * x + self.beta * x.ln_1p() - (self.alpha - 1.0) * x.ln()
    }

    /// `V′(x) = γ + β/(1+x) − (α−1)/x`.
    pub fn derivative(&self, x: f64) -> f64 {
        self.gamma + self.beta / (1.0 + x) - (self.alpha - 1.0) / x
    }
}

/// Limit potential, or the finite-`n` potential
/// `(2γ_n/n)x + (2β_n/n) log(1+x) − (2α_n/n) log x`.
pub fn fk_potential(spec: &PotentialSpec, x: f64, mode: PotentialMode) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::InvalidParameter(format!("potential needs x > 0, got {x}")));
    }
    match mode {
        PotentialMode::Limit => Ok(spec.value(x)),
        PotentialMode::FiniteN => {
            let f = spec
                .finite
                .ok_or_else(|| Error::InvalidParameter("finite-n coefficients not set".into()))?;
            let n = f.n as f64;
            Ok(2.0 * f.gamma_n / n * x + 2.0 * f.beta_n / n * x.ln_1p() - 2.0 * f.alpha_n / n * x.ln())
        }
    }
}

/// `∫ log|s − t| dμ(t)` with the log singularity at `s` placed on a panel
/// boundary.
fn log_potential(d: &DensityOnInterval, s: f64) -> Result<f64> {
    let (lo, hi) = d.support();
    let tol = 1e-12;
    let left: f64 = if s > lo {
        integrate_sqrt_edges(|t: f64| (s - t).abs().ln() * d.pdf(t), lo, s, tol)?
    } else {
        0.0
    };
    let right: f64 = if s < hi {
        integrate_sqrt_edges(|t: f64| (t - s).abs().ln() * d.pdf(t), s, hi, tol)?
    } else {
        0.0
    };
    Ok(left + right)
}

/// `E_V(μ) = ∬ log|s−t|^{-1} dμ(s)dμ(t) + ∫ V dμ` by nested quadrature.
pub fn fk_energy(d: &DensityOnInterval, spec: &PotentialSpec) -> Result<f64> {
    let (lo, _) = d.support();
    if lo < 0.0 || d.atom() > 0.0 {
        return Err(Error::InvalidParameter(
            "energy needs an atomless density supported in (0, ∞)".into(),
        ));
    }
    let potential: f64 = d.integrate_ac(|t| if t > 0.0 { spec.value(t) } else { 0.0 })?;
    let failure = std::cell::RefCell::new(None);
    let interaction: f64 = d.integrate_ac(|s| match log_potential(d, s) {
        Ok(v) => -v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            0.0
        }
    })?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(interaction + potential)
}

/// Derivative of the effective potential beyond the right edge,
/// `½√((x−a)(x−b)) [(α−1)/(x√(ab)) − β/((1+x)√((a+1)(b+1)))]`.
pub fn fk_rate_integrand(k: &FreeKummerParams, x: f64) -> f64 {
    if x <= k.b {
        return 0.0;
    }
    0.5 * ((x - k.a) * (x - k.b)).sqrt() * k.bracket(x)
}

/// Large-deviation rate of the largest eigenvalue: `∫_b^t` of
/// [`fk_rate_integrand`] for `t ≥ b`, `+∞` below the right edge.
pub fn fk_ldp_rate(k: &FreeKummerParams, t: f64) -> f64 {
    if t < k.b || t.is_nan() {
        return f64::INFINITY;
    }
    if t == k.b {
        return 0.0;
    }
    let width = t - k.b;
    // x = b + (t−b)u² absorbs the square-root edge.
    integrate(
        |u: f64| fk_rate_integrand(k, k.b + width * u * u) * 2.0 * width * u,
        0.0,
        1.0,
        1e-13,
    )
    .unwrap_or(f64::NAN)
}

/// `(α, β, γ) = (2a_n/n, 2(a_n+b_n)/n, 2c_n/n)`: the free-Kummer parameters
/// of the limiting spectral law of `MK_n(a_n, b_n, c_n I)`.
pub fn fk_triple_from_matrix(a_n: f64, b_n: f64, c_n: f64, n: usize) -> Result<(f64, f64, f64)> {
    let nf = n as f64;
    if n == 0 || !(a_n > (nf - 1.0) / 2.0) {
        return Err(Error::InvalidParameter(format!("need a_n > (n-1)/2, got a_n={a_n}, n={n}")));
    }
    if !(c_n > 0.0) {
        return Err(Error::InvalidParameter(format!("need c_n > 0, got {c_n}")));
    }
    let a = 2.0 * a_n / nf;
    Ok((a, a + 2.0 * b_n / nf, 2.0 * c_n / nf))
}

pub fn fk_from_matrix_params(a_n: f64, b_n: f64, c_n: f64, n: usize) -> Result<FreeKummerParams> {
    let (alpha, beta, gamma) = fk_triple_from_matrix(a_n, b_n, c_n, n)?;
    FreeKummerParams::new(alpha, beta, gamma)
}
