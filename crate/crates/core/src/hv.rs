//! The HV transformation `(X, Y) ↦ (U, V)`, Monte Carlo freeness and
//! regression diagnostics, and the inverse problem: recovering the laws of
//! `X`, `Y` and `U` from the two conditional-moment constants.
//!
//! `φ` has two realizations here. On matrices it is the normalized trace
//! averaged over replicas; on the analytic side it is quadrature against the
//! model densities. Every function says which one it uses.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::dist_free::{fk_solve_support, sqrt_branch, FreeKummerParams, FreePoissonParams};
use crate::error::{Error, Result};
use crate::matrix_rand::{
    assemble_matrix, mat_power, sample_kummer_eigs, sample_wishart_matrix, sym_eigen, MatPower,
    MatrixKummerParams, SpectralSample, WishartParams,
};
use crate::par::{map_replicas, replica_rng};
use crate::series::TruncatedSeries;
use crate::transforms::{s_transform_numeric, DensityOnInterval};

/// Fewest replicas accepted by the Monte Carlo diagnostics.
pub const MIN_REPLICAS: usize = 20;
/// Relative tolerance for grouping two quartic roots into a double root.
pub const DOUBLE_ROOT_TOL: f64 = 1e-6;
/// Tolerance on the root-structure identities in [`characterize`].
pub const IDENTITY_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// the transformation

/// `u = y/(1+x)`, `v = x(1+u)`.
pub fn hv_scalar(x: f64, y: f64) -> Result<(f64, f64)> {
    if !(x > 0.0) || !(y > 0.0) || !x.is_finite() || !y.is_finite() {
        return Err(Error::InvalidParameter(format!("HV map needs x, y > 0 (x={x}, y={y})")));
    }
    let u = y / (1.0 + x);
    Ok((u, x * (1.0 + u)))
}

/// Inverse of [`hv_scalar`]: `x = v/(1+u)`, `y = u(1+x)`.
pub fn hv_scalar_inverse(u: f64, v: f64) -> Result<(f64, f64)> {
    if !(u > 0.0) || !(v > 0.0) || !u.is_finite() || !v.is_finite() {
        return Err(Error::InvalidParameter(format!("inverse HV map needs u, v > 0 (u={u}, v={v})")));
    }
    let x = v / (1.0 + u);
    Ok((x, u * (1.0 + x)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvPair {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

fn check_positive(m: &DMatrix<f64>) -> Result<()> {
    let s = sym_eigen(m)?;
    let min = s.eigenvalues()[0];
    if !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(())
}

/// `U = (I+X)^{−1/2} Y (I+X)^{−1/2}`, `V = (I+U)^{1/2} X (I+U)^{1/2}`.
pub fn hv_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<HvPair> {
    if !x.is_square() {
        return Err(Error::DimensionMismatch(x.nrows(), x.ncols()));
    }
    if x.shape() != y.shape() {
        return Err(Error::DimensionMismatch(x.nrows(), y.nrows()));
    }
    check_positive(x)?;
    check_positive(y)?;
    let n = x.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let s = mat_power(&(&id + x), MatPower::InvSqrt)?;
    let u = symmetric(&s * y * &s);
    let r = mat_power(&(&id + &u), MatPower::Sqrt)?;
    let v = symmetric(&r * x * &r);
    Ok(HvPair { u, v })
}

fn symmetric(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `(1/N) tr m`.
pub fn ntrace(m: &DMatrix<f64>) -> f64 {
    m.trace() / m.nrows() as f64
}

/// `(1/N) tr(a b)` without forming the product.
fn ntrace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum() / a.nrows() as f64
}

// ---------------------------------------------------------------------------
// the Kummer–Wishart model

/// `X ~ fK(α, α+β, γ)` and `Y ~ fPois(1/γ, α+β)` free; then
/// `U ~ fK(α+β, α, γ)` and `V ~ fPois(1/γ, α)` are free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HvModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl HvModel {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(gamma > 0.0) || !(alpha + beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "HV model needs alpha > 0, alpha + beta > 0, gamma > 0 (got {alpha}, {beta}, {gamma})"
            )));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn x_law(&self) -> Result<FreeKummerParams> {
        FreeKummerParams::new(self.alpha, self.alpha + self.beta, self.gamma)
    }

    pub fn y_law(&self) -> Result<FreePoissonParams> {
        FreePoissonParams::fpois(1.0 / self.gamma, self.alpha + self.beta)
    }

    pub fn u_law(&self) -> Result<FreeKummerParams> {
        FreeKummerParams::new(self.alpha + self.beta, self.alpha, self.gamma)
    }

    pub fn v_law(&self) -> Result<FreePoissonParams> {
        FreePoissonParams::fpois(1.0 / self.gamma, self.alpha)
    }

    /// `X_N ~ MK_N(αN/2, βN/2, (γN/2) I)`, `Y_N ~ W_N((α+β)N/2, (γN/2) I)`.
    pub fn matrix_params(&self, n: usize) -> Result<(MatrixKummerParams, WishartParams)> {
        let h = n as f64 / 2.0;
        Ok((
            MatrixKummerParams::new(self.alpha * h, self.beta * h, self.gamma * h, n)?,
            WishartParams::new((self.alpha + self.beta) * h, self.gamma * h, n)?,
        ))
    }
}

/// One replica of the model: the generating pair, its image, and the
/// eigenvalues the Kummer matrix was built from.
#[derive(Debug, Clone)]
pub struct HvSample {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub pair: HvPair,
    pub x_spectrum: SpectralSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub n: usize,
    pub replicas: usize,
    pub seed: u64,
    pub burn_in: usize,
    pub thin: usize,
}

/// Replica `index` of the model, from its own random stream.
pub fn sample_hv_replica(model: &HvModel, cfg: &McConfig, index: usize) -> Result<HvSample> {
    let (kp, wp) = model.matrix_params(cfg.n)?;
    let mut rng = replica_rng(cfg.seed, index as u64);
    let x_spectrum = sample_kummer_eigs(&kp, cfg.burn_in, cfg.thin, &mut rng)?;
    let x = assemble_matrix(&x_spectrum, &mut rng);
    let y = sample_wishart_matrix(&wp, &mut rng)?;
    let pair = hv_matrix(&x, &y)?;
    Ok(HvSample { x, y, pair, x_spectrum })
}

/// All replicas, in replica order, on the replica worker pool.
pub fn sample_hv(model: &HvModel, cfg: &McConfig) -> Result<Vec<HvSample>> {
    map_replicas(cfg.replicas, |i| sample_hv_replica(model, cfg, i)).into_iter().collect()
}

// ---------------------------------------------------------------------------
// Monte Carlo statistics

/// Plug-in estimate `stat(means)` and its leave-one-replica-out jackknife
/// standard error. `rows[r]` holds the per-replica quantities.
pub fn jackknife<F: Fn(&[f64]) -> f64>(rows: &[Vec<f64>], stat: F) -> (f64, f64) {
    let r = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    let mut total = vec![0.0; k];
    for row in rows {
        for (t, v) in total.iter_mut().zip(row) {
            *t += v;
        }
    }
    let full: Vec<f64> = total.iter().map(|t| t / r as f64).collect();
    let estimate = stat(&full);
    if r < 2 {
        return (estimate, f64::NAN);
    }
    let loo: Vec<f64> = rows
        .iter()
        .map(|row| {
            let m: Vec<f64> = total.iter().zip(row).map(|(t, v)| (t - v) / (r as f64 - 1.0)).collect();
            stat(&m)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / r as f64;
    let var = loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>() * (r as f64 - 1.0) / r as f64;
    (estimate, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
}

impl Diagnostic {
    /// `|estimate| / stderr`.
    pub fn z_score(&self) -> f64 {
        self.estimate.abs() / self.stderr
    }

    pub fn within(&self, k: f64) -> bool {
        self.estimate.abs() <= k * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreenessReport {
    pub replicas: usize,
    pub n: usize,
    pub diagnostics: Vec<Diagnostic>,
    /// Uncorrected `φ(ŮV̊ŮV̊)`; see [`freeness_diagnostics`].
    pub alternating_raw: Diagnostic,
}

impl FreenessReport {
    pub fn all_within(&self, k: f64) -> bool {
        self.diagnostics.iter().all(|d| d.within(k))
    }

    pub fn get(&self, name: &str) -> Option<&Diagnostic> {
        self.diagnostics.iter().find(|d| d.name == name)
    }
}

/// Per-replica normalized traces used by [`freeness_diagnostics`]:
/// `φ(U^m)`, `φ(V^n)`, `φ(U^m V^n)` for `m, n ≤ 3`, then the words needed
/// for the centered alternating moment.
fn freeness_row(p: &HvPair) -> Vec<f64> {
    let u = [p.u.clone(), &p.u * &p.u, &p.u * &p.u * &p.u];
    let v = [p.v.clone(), &p.v * &p.v, &p.v * &p.v * &p.v];
    let mut row = Vec::with_capacity(20);
    row.extend(u.iter().map(ntrace));
    row.extend(v.iter().map(ntrace));
    for um in &u {
        for vn in &v {
            row.push(ntrace_prod(um, vn));
        }
    }
    let uv = &p.u * &p.v;
    row.push(ntrace_prod(&uv, &uv));
    row
}

const FU: usize = 0;
const FV: usize = 3;
const FUV: usize = 6;
const FUVUV: usize = 15;

/// Monte Carlo freeness diagnostics on the pairs, each with a jackknife
/// standard error:
/// * `kappa2`: `φ(UV) − φ(U)φ(V)`;
/// * `alternating`: `φ(ŮV̊ŮV̊) − φ(Ů²)φ(V̊²)/N` with `Å = A − φ(A)I`;
/// * `gap_m_n`: `φ(U^m V^n) − φ(U^m)φ(V^n)` for `1 ≤ m, n ≤ 3`.
///
/// `φ` is the normalized trace averaged over replicas. For independent real
/// orthogonally invariant matrices the expected alternating moment is
/// `φ(Ů²)φ(V̊²)/N + O(N⁻²)`, not zero; at `N = 150` that bias is a few
/// standard errors, so the reported `alternating` subtracts it. The raw value
/// is kept in [`FreenessReport::alternating_raw`].
pub fn freeness_diagnostics(pairs: &[HvPair]) -> Result<FreenessReport> {
    if pairs.len() < MIN_REPLICAS {
        return Err(Error::TooFewReplicas { got: pairs.len(), min: MIN_REPLICAS });
    }
    let n = pairs[0].u.nrows();
    for p in pairs {
        if p.u.shape() != (n, n) || p.v.shape() != (n, n) {
            return Err(Error::DimensionMismatch(n, p.u.nrows().max(p.v.nrows())));
        }
    }
    let rows: Vec<Vec<f64>> = map_replicas(pairs.len(), |i| freeness_row(&pairs[i]));
    let mut diagnostics = Vec::new();
    let (e, s) = jackknife(&rows, |m| m[FUV] - m[FU] * m[FV]);
    diagnostics.push(Diagnostic { name: "kappa2".into(), estimate: e, stderr: s });
    let alternating = |m: &[f64]| {
        let (u, v) = (m[FU], m[FV]);
        m[FUVUV] - 2.0 * u * m[FUV + 1] - 2.0 * v * m[FUV + 3] + u * u * m[FV + 1] + v * v * m[FU + 1]
            + 4.0 * u * v * m[FUV]
            - 3.0 * u * u * v * v
    };
    let (e, s) = jackknife(&rows, alternating);
    let alternating_raw = Diagnostic { name: "alternating_raw".into(), estimate: e, stderr: s };
    let nf = n as f64;
    let (e, s) = jackknife(&rows, |m| {
        alternating(m) - (m[FU + 1] - m[FU] * m[FU]) * (m[FV + 1] - m[FV] * m[FV]) / nf
    });
    diagnostics.push(Diagnostic { name: "alternating".into(), estimate: e, stderr: s });
    for i in 0..3 {
        for j in 0..3 {
            let (e, s) = jackknife(&rows, |m| m[FUV + 3 * i + j] - m[FU + i] * m[FV + j]);
            diagnostics.push(Diagnostic { name: format!("gap_{}_{}", i + 1, j + 1), estimate: e, stderr: s });
        }
    }
    Ok(FreenessReport { replicas: pairs.len(), n, diagnostics, alternating_raw })
}

/// The four matrices of one replica.
#[derive(Debug, Clone, Copy)]
pub struct QuadrupleRef<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DMatrix<f64>,
    pub u: &'a DMatrix<f64>,
    pub v: &'a DMatrix<f64>,
}

impl<'a> From<&'a HvSample> for QuadrupleRef<'a> {
    fn from(s: &'a HvSample) -> Self {
        Self { x: &s.x, y: &s.y, u: &s.pair.u, v: &s.pair.v }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub replicas: usize,
    pub k_max: usize,
    /// `φ(V)` and its standard error.
    pub abar: Diagnostic,
    /// `φ(V⁻¹)` and its standard error.
    pub bbar: Diagnostic,
    /// `φ(VU^k) − ᾱφ(U^k)`, `k = 0..=K`.
    pub first: Vec<Diagnostic>,
    /// `φ(X⁻¹U^k) − β̄φ(U^k(I+U))`, `k = 0..=K`.
    pub second: Vec<Diagnostic>,
    /// `β_{k−1} + β_k − (ᾱ+1)α_k − α_{k+1}`, `k = 1..=K`.
    pub recursion_first: Vec<Diagnostic>,
    /// `γ_k − β̄(α_k + α_{k+1})`, `k = 0..=K`.
    pub recursion_second: Vec<Diagnostic>,
}

impl RegressionReport {
    pub fn residuals(&self) -> impl Iterator<Item = &Diagnostic> {
        self.first
            .iter()
            .chain(&self.second)
            .chain(&self.recursion_first)
            .chain(&self.recursion_second)
    }

    pub fn all_within(&self, k: f64) -> bool {
        self.residuals().all(|d| d.within(k) || d.estimate.abs() <= 1e-12)
    }
}

/// Row layout: `φ(V)`, `φ(V⁻¹)`, then for `k = 0..=K+1` the quantities
/// `α_k = φ(U^k)`, `φ(VU^k)`, `φ(X⁻¹U^k)`, `φ(V⁻¹U^k)`, and the sequences
/// `β_k = φ(Y[(I+X)⁻¹Y]^k)`, `γ_k = φ(X⁻¹[(I+X)⁻¹Y]^k)` built from `X` and `Y`
/// directly.
fn regression_row(q: QuadrupleRef<'_>, k_max: usize) -> Result<Vec<f64>> {
    let n = q.x.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let v_inv = mat_power(q.v, MatPower::Inverse)?;
    let x_inv = mat_power(q.x, MatPower::Inverse)?;
    let m = (&id + q.x)
        .lu()
        .solve(q.y)
        .ok_or(Error::SingularMatrix(f64::INFINITY))?;
    let mut row = vec![ntrace(q.v), ntrace(&v_inv)];
    let mut uk = id.clone();
    let mut mk = id.clone();
    for _ in 0..=k_max + 1 {
        row.push(ntrace(&uk));
        row.push(ntrace_prod(q.v, &uk));
        row.push(ntrace_prod(&x_inv, &uk));
        row.push(ntrace_prod(&v_inv, &uk));
        row.push(ntrace_prod(q.y, &mk));
        row.push(ntrace_prod(&x_inv, &mk));
        uk = &uk * q.u;
        mk = &mk * &m;
    }
    Ok(row)
}

const RW: usize = 6;

/// Regression residuals with jackknife standard errors, `φ` being the
/// normalized trace averaged over replicas. `ᾱ := φ(V)`, `β̄ := φ(V⁻¹)`.
pub fn regression_check<'a, I>(samples: I, k_max: usize) -> Result<RegressionReport>
where
    I: IntoIterator<Item = QuadrupleRef<'a>>,
{
    let quads: Vec<QuadrupleRef<'a>> = samples.into_iter().collect();
    if quads.len() < 2 {
        return Err(Error::TooFewReplicas { got: quads.len(), min: 2 });
    }
    let rows: Vec<Vec<f64>> = map_replicas(quads.len(), |i| regression_row(quads[i], k_max))
        .into_iter()
        .collect::<Result<_>>()?;
    let col = |k: usize, j: usize| 2 + RW * k + j;
    let diag = |name: String, f: &dyn Fn(&[f64]) -> f64| {
        let (estimate, stderr) = jackknife(&rows, f);
        Diagnostic { name, estimate, stderr }
    };
    let abar = diag("abar".into(), &|m| m[0]);
    let bbar = diag("bbar".into(), &|m| m[1]);
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut recursion_first = Vec::new();
    let mut recursion_second = Vec::new();
    for k in 0..=k_max {
        first.push(diag(format!("first_{k}"), &|m| m[col(k, 1)] - m[0] * m[col(k, 0)]));
        second.push(diag(format!("second_{k}"), &|m| {
            m[col(k, 2)] - m[1] * (m[col(k, 0)] + m[col(k + 1, 0)])
        }));
        if k >= 1 {
            recursion_first.push(diag(format!("rek_beta_{k}"), &|m| {
                m[col(k - 1, 4)] + m[col(k, 4)] - (m[0] + 1.0) * m[col(k, 0)] - m[col(k + 1, 0)]
            }));
        }
        recursion_second.push(diag(format!("rek_gamma_{k}"), &|m| {
            m[col(k, 5)] - m[1] * (m[col(k, 0)] + m[col(k + 1, 0)])
        }));
    }
    Ok(RegressionReport { replicas: rows.len(), k_max, abar, bbar, first, second, recursion_first, recursion_second })
}

// ---------------------------------------------------------------------------
// the inverse problem

/// Inputs of the characterization: `ᾱ = φ(V)`, `β̄ = φ(V⁻¹)`, `a = φ(Y)`,
/// `α₁ = φ(U)` and `γ₀ = φ(X⁻¹)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionData {
    pub abar: f64,
    pub bbar: f64,
    pub a: f64,
    pub alpha1: f64,
    pub gamma0: f64,
}

impl RegressionData {
    /// `γ₀` defaults to `β̄(α₁ + 1)`, the value forced by the second
    /// regression condition at `k = 0`.
    pub fn new(abar: f64, bbar: f64, a: f64, alpha1: f64) -> Result<Self> {
        for (name, v) in [("abar", abar), ("bbar", bbar), ("a", a), ("alpha1", alpha1)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if !(abar > 0.0) || !(bbar > 0.0) {
            return Err(Error::InvalidParameter(format!("need abar > 0 and bbar > 0 (got {abar}, {bbar})")));
        }
        Ok(Self { abar, bbar, a, alpha1, gamma0: bbar * (alpha1 + 1.0) })
    }

    /// All five constants by quadrature against the model densities.
    pub fn from_model(model: &HvModel) -> Result<Self> {
        if !(model.alpha > 1.0) {
            return Err(Error::Precondition(format!(
                "phi(V^-1) is finite only for alpha > 1 (alpha={})",
                model.alpha
            )));
        }
        let v = model.v_law()?.to_density()?;
        let y = model.y_law()?.to_density()?;
        let u = model.u_law()?.to_density()?;
        let x = model.x_law()?;
        if !(x.support().0 > 0.0) {
            return Err(Error::Precondition("phi(X^-1) needs the X-law support in (0, inf)".into()));
        }
        let x = x.to_density()?;
        Ok(Self {
            abar: v.moment(1)?,
            bbar: v.expect(|t| 1.0 / t)?,
            a: y.moment(1)?,
            alpha1: u.moment(1)?,
            gamma0: x.expect(|t| 1.0 / t)?,
        })
    }

    /// `ᾱβ̄ − 1`.
    pub fn k(&self) -> f64 {
        self.abar * self.bbar - 1.0
    }

    /// `d = β̄⁻¹ + a − ᾱ`.
    pub fn d(&self) -> f64 {
        1.0 / self.bbar + self.a - self.abar
    }

    /// `c̃ = β̄(1 + ᾱ − a + α₁)`.
    pub fn c_tilde(&self) -> f64 {
        self.bbar * (1.0 + self.abar - self.a + self.alpha1)
    }

    /// `b = ᾱ − β̄⁻¹` of the recovered r-transform `a/(1 − by)`.
    pub fn r_slope(&self) -> f64 {
        self.abar - 1.0 / self.bbar
    }

    /// `γ₀ − β̄(α₁ + 1)`.
    pub fn gamma0_residual(&self) -> f64 {
        self.gamma0 - self.bbar * (self.alpha1 + 1.0)
    }

    /// Hypotheses of the characterization, in the order checked.
    pub fn check_preconditions(&self) -> Result<()> {
        if !(self.k() > 0.0) {
            return Err(Error::Precondition(format!("abar*bbar = {} must exceed 1", self.abar * self.bbar)));
        }
        if !(self.a - self.abar - self.alpha1 < 0.0) {
            return Err(Error::Precondition(format!(
                "a - abar - alpha1 = {} must be negative",
                self.a - self.abar - self.alpha1
            )));
        }
        if !(self.d() > 0.0) {
            return Err(Error::Precondition(format!("1/bbar + a - abar = {} must be positive", self.d())));
        }
        Ok(())
    }
}

/// Power-series solution `A(z) = Σ α_k z^k` together with the companion
/// series `B`, `C`, `zD` and the residuals of relations (a)–(e).
#[derive(Debug, Clone, PartialEq)]
pub struct ASeries {
    pub a: TruncatedSeries<f64>,
    pub b: TruncatedSeries<f64>,
    pub c: TruncatedSeries<f64>,
    pub zd: TruncatedSeries<f64>,
    /// Largest coefficient of each relation's defect, (a) through (e).
    pub relation_residuals: [f64; 5],
}

fn max_coeff(s: &TruncatedSeries<f64>) -> f64 {
    s.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()))
}

/// Solves `z(1+z)(ᾱβ̄−1)A² + [z(1+z)(β̄a − β̄ᾱ + 1) − β̄(1 + z + ᾱz)]A + β̄ + c̃z = 0`
/// coefficient by coefficient. The `z⁰` equation is linear, `−β̄α₀ + β̄ = 0`,
/// which selects the branch with `A(0) = 1`; the other root has a pole at 0.
pub fn a_series_solve(d: &RegressionData, order: usize) -> Result<ASeries> {
    if d.k() == 0.0 {
        return Err(Error::Precondition("abar*bbar must differ from 1".into()));
    }
    if d.bbar == 0.0 || !d.bbar.is_finite() {
        return Err(Error::BranchAmbiguity);
    }
    let order = order.max(2);
    let k = d.k();
    let e = d.bbar * d.a - d.bbar * d.abar + 1.0;
    let l1 = -d.bbar * (1.0 + d.abar) + e;
    let l2 = e;
    let mut alpha = vec![1.0];
    // sq[m] = [z^m] A²
    let mut sq = vec![1.0];
    for n in 1..=order {
        let s1 = sq[n - 1];
        let s2 = if n >= 2 { sq[n - 2] } else { 0.0 };
        let a1 = alpha[n - 1];
        let a2 = if n >= 2 { alpha[n - 2] } else { 0.0 };
        let lin = if n == 1 { d.c_tilde() } else { 0.0 };
        alpha.push((k * (s1 + s2) + l1 * a1 + l2 * a2 + lin) / d.bbar);
        sq.push((0..=n).map(|i| alpha[i] * alpha[n - i]).sum());
    }
    let a_ser = TruncatedSeries::new(alpha);

    // zD from (a) with r(y) = a/(1 − by).
    let slope = d.r_slope();
    let one = TruncatedSeries::constant(1.0, order);
    let am1 = a_ser.sub(&one);
    let zd = am1.div(&am1.scale(slope).add(&TruncatedSeries::constant(d.a, order)))?;
    let r_coeffs: Vec<f64> = (0..=order).map(|i| d.a * slope.powi(i as i32)).collect();
    let r_of_zd = TruncatedSeries::new(r_coeffs).compose(&zd)?;

    // B from (d): (1+z)B = β₀ + (ᾱ+1)(A−1) + (A − 1 − α₁z)/z.
    let mut lin = vec![1.0, d.alpha1];
    lin.resize(order + 1, 0.0);
    let tail = a_ser.sub(&TruncatedSeries::new(lin)).shift_down()?;
    let rhs = TruncatedSeries::constant(d.a, order)
        .add(&am1.scale(d.abar + 1.0))
        .add(&tail);
    let b_ser = rhs.div(&TruncatedSeries::new(vec![1.0, 1.0]).truncated(order))?;
    // C from (e).
    let c_ser = a_ser.add(&am1.shift_down()?).scale(d.bbar);

    let z = TruncatedSeries::identity(order);
    let res_a = am1.sub(&zd.mul(&r_of_zd));
    let res_b = b_ser.sub(&a_ser.mul(&r_of_zd));
    let res_c = c_ser
        .mul(&z.mul(&r_of_zd).sub(&one))
        .sub(&am1.sub(&TruncatedSeries::constant(d.gamma0, order)));
    // (d) and (e) checked in their original, undivided forms.
    let zb = z.mul(&b_ser);
    let lhs_d = zb.mul(&z).add(&zb).sub(&z.scale(d.a));
    let rhs_d = z.mul(&am1).scale(d.abar + 1.0).add(&a_ser.sub(&TruncatedSeries::new({
        let mut v = vec![1.0, d.alpha1];
        v.resize(order + 1, 0.0);
        v
    })));
    let res_d = lhs_d.sub(&rhs_d);
    let res_e = z.mul(&c_ser).sub(&z.mul(&a_ser).add(&am1).scale(d.bbar));
    let relation_residuals = [
        max_coeff(&res_a),
        max_coeff(&res_b),
        max_coeff(&res_c),
        max_coeff(&res_d),
        max_coeff(&res_e),
    ];
    Ok(ASeries { a: a_ser, b: b_ser, c: c_ser, zd, relation_residuals })
}

/// Polynomial coefficients, lowest degree first.
pub type Poly = Vec<f64>;

fn poly_mul(p: &[f64], q: &[f64]) -> Poly {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn poly_sub(p: &[f64], q: &[f64]) -> Poly {
    let n = p.len().max(q.len());
    (0..n).map(|i| p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).collect()
}

pub fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_derivative(p: &[f64]) -> Poly {
    p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect()
}

/// `p(z − 1)` by repeated synthetic division (Taylor shift).
fn poly_shift(p: &[f64], by: f64) -> Poly {
    let mut c = p.to_vec();
    let n = c.len();
    for i in 0..n {
        for j in (i..n - 1).rev() {
            c[j] += by * c[j + 1];
        }
    }
    c
}

/// `p = p₁ − p₂` with `p₁ = β̄²f²`, `f(z) = z² − z(d − 1 − ᾱ) − d` and
/// `p₂ = 4β̄(ᾱβ̄ − 1) z(1+z)(1 − a + ᾱ + α₁ + z)`.
pub fn quartic(d: &RegressionData) -> (Poly, Poly, Poly) {
    let dd = d.d();
    let f = vec![-dd, -(dd - 1.0 - d.abar), 1.0];
    let p1: Poly = poly_mul(&f, &f).iter().map(|c| c * d.bbar * d.bbar).collect();
    let z1z = vec![0.0, 1.0, 1.0];
    let lin = vec![1.0 - d.a + d.abar + d.alpha1, 1.0];
    let p2: Poly = poly_mul(&z1z, &lin).iter().map(|c| c * 4.0 * d.bbar * d.k()).collect();
    (poly_sub(&p1, &p2), f, p2)
}

/// The displayed closed forms of `a₀..a₄` and of the coefficients of
/// `q(z) = p(z − 1)`.
pub fn displayed_coefficients(d: &RegressionData) -> ([f64; 5], [f64; 5]) {
    let (ab, bb, a, a1) = (d.abar, d.bbar, d.a, d.alpha1);
    let p = [
        (1.0 + a * bb - ab * bb).powi(2),
        2.0 * (1.0 + (1.0 - ab + 2.0 * a1) * bb + (a * a - a * (1.0 + ab) - ab * (1.0 + 2.0 * a1)) * bb * bb),
        1.0 + (4.0 - 2.0 * a + 4.0 * a1) * bb + (1.0 - 4.0 * a + a * a - 2.0 * ab - 4.0 * ab * a1) * bb * bb,
        2.0 * bb * (1.0 + bb - a * bb),
        bb * bb,
    ];
    let q = [
        ab * ab * bb * bb,
        -2.0 * bb * (2.0 * a1 + a * (-2.0 + ab * bb) - ab * (-1.0 + bb + 2.0 * a1 * bb)),
        1.0 - 2.0 * bb * (1.0 + a - 2.0 * a1) + (1.0 + 2.0 * a + a * a - 2.0 * ab - 4.0 * ab * a1) * bb * bb,
        -2.0 * bb * (-1.0 + bb + a * bb),
        bb * bb,
    ];
    (p, q)
}

/// Roots of a real polynomial as eigenvalues of its companion matrix.
pub fn poly_roots(p: &[f64]) -> Result<Vec<Complex64>> {
    let deg = p.iter().rposition(|c| *c != 0.0).ok_or_else(|| Error::InvalidParameter("zero polynomial".into()))?;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = p[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -p[i] / lead;
    }
    let eig = comp.complex_eigenvalues();
    Ok(eig.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedResidual {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FkTriple {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpPair {
    pub jump: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacterizationResult {
    pub inputs: RegressionData,
    /// `a₀..a₄` of `p`, computed by polynomial arithmetic.
    pub coeffs: [f64; 5],
    /// Coefficients of `q(z) = p(z − 1)`.
    pub shifted_coeffs: [f64; 5],
    /// Largest gap between the computed and displayed coefficient formulas.
    pub displayed_coeff_gap: f64,
    /// Roots `ζ₁ < 0 < ζ₂` of `f`.
    pub zeta: (f64, f64),
    /// Double root, `< −1`.
    pub x0: f64,
    /// Positive simple roots `x₁ < x₂`: the support of the law of `U`.
    pub x1: f64,
    pub x2: f64,
    pub gamma: f64,
    pub u_law: FkTriple,
    pub x_law: FkTriple,
    pub y_law: FpPair,
    pub identities: Vec<NamedResidual>,
}

impl CharacterizationResult {
    pub fn max_identity_residual(&self) -> f64 {
        self.identities.iter().fold(0.0f64, |m, r| m.max(r.value.abs()))
    }

    pub fn u_params(&self) -> Result<FreeKummerParams> {
        FreeKummerParams::new(self.u_law.alpha, self.u_law.beta, self.u_law.gamma)
    }
}

fn inconsistent(msg: impl Into<String>) -> Error {
    Error::InconsistentRegressionData(msg.into())
}

/// Recovers the laws of `Y`, `U` and `X` from the regression constants by
/// analysing the quartic under the square root of the recovered Cauchy
/// transform: a negative double root `x₀ < −1` and two positive simple roots
/// `x₁ < x₂`, which are the support endpoints of the law of `U`.
pub fn characterize(d: &RegressionData) -> Result<CharacterizationResult> {
    d.check_preconditions()?;
    let (p, f, _) = quartic(d);
    let coeffs: [f64; 5] = std::array::from_fn(|i| p.get(i).copied().unwrap_or(0.0));
    let q = poly_shift(&p, -1.0);
    let shifted_coeffs: [f64; 5] = std::array::from_fn(|i| q.get(i).copied().unwrap_or(0.0));
    let (disp_p, disp_q) = displayed_coefficients(d);
    let scale = coeffs.iter().chain(&shifted_coeffs).fold(1.0f64, |m, c| m.max(c.abs()));
    let displayed_coeff_gap = coeffs
        .iter()
        .zip(&disp_p)
        .chain(shifted_coeffs.iter().zip(&disp_q))
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale;

    // f has positive discriminant; its roots straddle zero since f(0) = −d < 0.
    let disc = f[1] * f[1] - 4.0 * f[0];
    if !(disc > 0.0) {
        return Err(inconsistent(format!("discriminant of f is {disc}")));
    }
    let sq = disc.sqrt();
    let zeta = ((-f[1] - sq) / 2.0, (-f[1] + sq) / 2.0);
    if !(zeta.0 < 0.0 && zeta.1 > 0.0) {
        return Err(inconsistent(format!("roots of f are {zeta:?}, expected opposite signs")));
    }

    let roots = poly_roots(&p)?;
    if roots.len() != 4 {
        return Err(inconsistent("p is not a quartic"));
    }
    let mut best = (0, 1, f64::INFINITY);
    for i in 0..4 {
        for j in i + 1..4 {
            let gap = (roots[i] - roots[j]).norm() / roots[i].norm().max(roots[j].norm()).max(1.0);
            if gap < best.2 {
                best = (i, j, gap);
            }
        }
    }
    if best.2 > DOUBLE_ROOT_TOL {
        return Err(inconsistent(format!(
            "no double root within relative tolerance {DOUBLE_ROOT_TOL} (closest pair differs by {:.3e})",
            best.2
        )));
    }
    let mean = (roots[best.0] + roots[best.1]) * 0.5;
    if mean.im.abs() > DOUBLE_ROOT_TOL * mean.norm().max(1.0) {
        return Err(inconsistent("double root is not real"));
    }
    let dp = poly_derivative(&p);
    let ddp = poly_derivative(&dp);
    let x0 = mean.re - poly_eval(&dp, mean.re) / poly_eval(&ddp, mean.re);
    if !(x0 < -1.0) {
        return Err(inconsistent(format!("double root x0 = {x0} is not below -1")));
    }
    let mut simple: Vec<Complex64> =
        (0..4).filter(|&i| i != best.0 && i != best.1).map(|i| roots[i]).collect();
    if simple.iter().any(|r| r.im.abs() > 1e-9 * r.norm().max(1.0)) {
        return Err(inconsistent(format!("simple roots are not real: {simple:?}")));
    }
    simple.sort_by(|a, b| a.re.total_cmp(&b.re));
    let (x1, x2) = (simple[0].re, simple[1].re);
    if !(x1 > 0.0 && x2 > x1) {
        return Err(inconsistent(format!("simple roots ({x1}, {x2}) are not positive and distinct")));
    }

    let (a4, a3, a0) = (coeffs[4], coeffs[3], coeffs[0]);
    let s0 = (x1 * x2).sqrt();
    let s1 = ((x1 + 1.0) * (x2 + 1.0)).sqrt();
    let dd = d.d();
    let rel = |lhs: f64, rhs: f64| (lhs - rhs) / rhs.abs().max(1.0);
    let identities = vec![
        NamedResidual { name: "pier1".into(), value: rel(x1 * x2 * x0 * x0, a0 / a4) },
        NamedResidual { name: "pier2".into(), value: rel(x1 + x2 + 2.0 * x0, -a3 / a4) },
        NamedResidual {
            name: "pier3".into(),
            value: rel((x1 + 1.0) * (x2 + 1.0) * (x0 + 1.0).powi(2), shifted_coeffs[0] / shifted_coeffs[4]),
        },
        NamedResidual { name: "pier3_closed".into(), value: rel(shifted_coeffs[0] / shifted_coeffs[4], d.abar * d.abar) },
        NamedResidual { name: "gw_1".into(), value: rel(x0, -dd / s0) },
        NamedResidual { name: "gw_2".into(), value: rel(x0 + 1.0, -d.abar / s1) },
        NamedResidual { name: "supp2".into(), value: (x1 + x2) / 2.0 - d.a + 1.0 / d.bbar - d.abar / s1 },
        NamedResidual { name: "supp3".into(), value: d.abar / s1 - dd / s0 + 1.0 },
        NamedResidual {
            name: "factorization".into(),
            value: {
                let fact = poly_mul(&poly_mul(&[-x1, 1.0], &[-x2, 1.0]), &poly_mul(&[-x0, 1.0], &[-x0, 1.0]));
                fact.iter()
                    .zip(&coeffs)
                    .map(|(c, a)| (c * a4 - a).abs() / scale)
                    .fold(0.0, f64::max)
            },
        },
    ];
    if let Some(bad) = identities.iter().find(|r| !(r.value.abs() <= IDENTITY_TOL)) {
        return Err(inconsistent(format!("{} residual {:.3e} exceeds {IDENTITY_TOL}", bad.name, bad.value)));
    }

    let gamma = d.bbar / d.k();
    let u_law = FkTriple { alpha: d.a * gamma, beta: d.abar * gamma, gamma };
    let x_law = FkTriple { alpha: d.abar * gamma, beta: d.a * gamma, gamma };
    let y_law = FpPair { jump: d.k() / d.bbar, rate: d.a * d.bbar / d.k() };
    Ok(CharacterizationResult {
        inputs: *d,
        coeffs,
        shifted_coeffs,
        displayed_coeff_gap,
        zeta,
        x0,
        x1,
        x2,
        gamma,
        u_law,
        x_law,
        y_law,
        identities,
    })
}

/// The recovered Cauchy transform
/// `G(z) = β̄/(2(ᾱβ̄−1)) (1 + ᾱ/(1+z) − d/z + √p(z)/(β̄ z(1+z)))`,
/// with `√p = −β̄(z − x₀)√((z−x₁)(z−x₂))`, the branch for which
/// `G(z) ~ 1/z` at infinity.
pub fn recovered_cauchy(res: &CharacterizationResult, z: Complex64) -> Result<Complex64> {
    let d = &res.inputs;
    if z.norm() == 0.0 || (z + 1.0).norm() == 0.0 || (z.im == 0.0 && z.re >= res.x1 && z.re <= res.x2) {
        return Err(Error::SingularEvaluation { re: z.re, im: z.im });
    }
    let root = -(z - res.x0) * sqrt_branch(z, res.x1, res.x2) * d.bbar;
    let g = (Complex64::new(1.0, 0.0) + d.abar / (z + 1.0) - d.d() / z + root / (z * (z + 1.0) * d.bbar))
        * (d.bbar / (2.0 * d.k()));
    if z.im > 0.0 && g.im > 0.0 {
        return Err(Error::BranchInconsistency(format!("Im G({z}) = {} > 0", g.im)));
    }
    Ok(g)
}

/// `(1/z) A(1/z)` from the truncated series; meaningful for `|z|` well
/// beyond the support.
pub fn cauchy_from_series(a: &TruncatedSeries<f64>, z: Complex64) -> Complex64 {
    let w = z.inv();
    let val = a.coeffs().iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * w + c);
    val * w
}

// ---------------------------------------------------------------------------
// S-transform consistency and the classical analogue

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SStepPoint {
    pub z: f64,
    pub s_y: f64,
    pub s_inv: f64,
    pub s_u: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SStepReport {
    pub model: HvModel,
    pub points: Vec<SStepPoint>,
    pub max_residual: f64,
}

/// `|S_Y(z) S_{(I+X)⁻¹}(z) − S_U(z)|` on `grid`, every S-transform computed
/// by quadrature from the model densities; the law of `(I+X)⁻¹` is the
/// pushforward of the law of `X` under `t ↦ 1/(1+t)`.
pub fn s_transform_step3_check(model: &HvModel, grid: &[f64]) -> Result<SStepReport> {
    let y = model.y_law()?.to_density()?;
    let u = model.u_law()?.to_density()?;
    let inv = resolvent_law(&model.x_law()?.to_density()?)?;
    let mut points = Vec::with_capacity(grid.len());
    for &z in grid {
        let s_y = s_transform_numeric(&y, z)?;
        let s_inv = s_transform_numeric(&inv, z)?;
        let s_u = s_transform_numeric(&u, z)?;
        points.push(SStepPoint { z, s_y, s_inv, s_u, residual: (s_y * s_inv - s_u).abs() });
    }
    let max_residual = points.iter().fold(0.0f64, |m, p| m.max(p.residual));
    Ok(SStepReport { model: *model, points, max_residual })
}

/// Law of `(1+X)⁻¹` for `X` with the given density: `y = 1/(1+t)`,
/// `t = 1/y − 1`, `|dt/dy| = 1/y²`.
pub fn resolvent_law(x: &DensityOnInterval) -> Result<DensityOnInterval> {
    x.pushforward(|t| 1.0 / (1.0 + t), |y| 1.0 / y - 1.0, |y| 1.0 / (y * y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassicalReport {
    pub kummer_shape: f64,
    pub kummer_rate: f64,
    pub gamma_rate: f64,
}

/// Classical analogue: `E(V|U) = α`, `E(V⁻¹|U) = β` force a Kummer law with
/// shape `αβ/(αβ−1)` and rate `β/(αβ−1)` and a Gamma law with rate
/// `β/(αβ−1)` (its shape stays free).
pub fn classical_characterize(alpha: f64, beta: f64) -> Result<ClassicalReport> {
    let k = alpha * beta - 1.0;
    if !(k > 0.0) {
        return Err(Error::Precondition(format!("alpha*beta = {} must exceed 1", alpha * beta)));
    }
    let shape = alpha * beta / k;
    let rate = beta / k;
    if !shape.is_finite() || !rate.is_finite() {
        return Err(Error::Precondition(format!("alpha*beta = {} too close to 1", alpha * beta)));
    }
    Ok(ClassicalReport { kummer_shape: shape, kummer_rate: rate, gamma_rate: rate })
}

/// Fits `r(y) = a/(1 − by)` to the first cumulants: `a = κ₁`, `b = κ₂/κ₁`,
/// and returns the misfit `κ_n − ab^{n−1}` for the remaining orders.
pub fn fit_free_poisson_r(kappa: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    if kappa.len() < 2 || kappa[0] == 0.0 {
        return Err(Error::Arity { needed: 2, got: kappa.len() });
    }
    let a = kappa[0];
    let b = kappa[1] / a;
    let misfit = kappa.iter().enumerate().skip(2).map(|(i, k)| k - a * b.powi(i as i32)).collect();
    Ok((a, b, misfit))
}

/// Support of the recovered law of `U` straight from the support solver.
pub fn recovered_support(res: &CharacterizationResult) -> Result<(f64, f64)> {
    fk_solve_support(res.u_law.alpha, res.u_law.beta, res.u_law.gamma)
}
