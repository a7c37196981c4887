//! Wishart and matrix-Kummer samplers, symmetric eigen-decomposition, matrix
//! powers and empirical spectral distributions.
//!
//! Both ensembles are orthogonally invariant for `Σ = c·I`, so a sample is an
//! eigenvalue vector plus an independent Haar frame.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;

use crate::dist_free::{fk_triple_from_matrix, FreeKummerParams, FreePoissonParams};
use crate::error::{Error, Result};
use crate::roots::brent;

/// Default MCMC burn-in, in sweeps.
pub const DEFAULT_BURN_IN: usize = 10_000;
/// Sweeps between retained states.
pub const DEFAULT_THIN: usize = 10;
/// Smallest burn-in accepted by [`sample_kummer_eigs`].
pub const MIN_BURN_IN: usize = 100;
/// Acceptance window outside which the chain is declared not mixing.
pub const ACCEPTANCE_BOUNDS: (f64, f64) = (0.05, 0.7);
/// Condition-number guard for explicit inverses.
pub const MAX_CONDITION: f64 = 1e12;

/// `MK_N(a, b, c·I)`: density `∝ det(x)^{a−(N+1)/2} det(I+x)^{−(a+b)} e^{−c tr x}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixKummerParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub n: usize,
}

impl MatrixKummerParams {
    pub fn new(a: f64, b: f64, c: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("matrix size must be at least 1".into()));
        }
        if !(a > (n as f64 - 1.0) / 2.0) || !b.is_finite() || !a.is_finite() {
            return Err(Error::InvalidParameter(format!("Kummer needs a > (N-1)/2 (a={a}, N={n})")));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("Kummer needs c > 0 (c={c})")));
        }
        Ok(Self { a, b, c, n })
    }

    /// Exponent of `λ` in the eigenvalue weight, `a − (N+1)/2`.
    pub fn alpha_n(&self) -> f64 {
        self.a - (self.n as f64 + 1.0) / 2.0
    }

    /// Exponent of `(1+λ)^{-1}`, `a + b`.
    pub fn beta_n(&self) -> f64 {
        self.a + self.b
    }

    /// Free-Kummer parameters of the limiting spectral law.
    pub fn limit(&self) -> Result<FreeKummerParams> {
        let (alpha, beta, gamma) = fk_triple_from_matrix(self.a, self.b, self.c, self.n)?;
        FreeKummerParams::new(alpha, beta, gamma)
    }

    /// Log of the one-eigenvalue weight `λ^{α_N} (1+λ)^{−β_N} e^{−cλ}`.
    pub fn log_weight(&self, x: f64) -> f64 {
        self.alpha_n() * x.ln() - self.beta_n() * x.ln_1p() - self.c * x
    }
}

/// Wishart with density `∝ det(y)^{b−(N+1)/2} e^{−c tr y}`.
///
/// In the standard parametrization this is `W_N(2b, (2c)^{-1} I)`: matching
/// `det(y)^{(p−N−1)/2} e^{−tr(Σ^{-1}y)/2}` gives `p = 2b` and `Σ^{-1} = 2c I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WishartParams {
    pub shape: f64,
    pub rate: f64,
    pub n: usize,
}

impl WishartParams {
    pub fn new(shape: f64, rate: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("matrix size must be at least 1".into()));
        }
        if !(shape > (n as f64 - 1.0) / 2.0) || !shape.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Wishart needs shape > (N-1)/2 (shape={shape}, N={n})"
            )));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("Wishart needs rate > 0 (rate={rate})")));
        }
        Ok(Self { shape, rate, n })
    }

    pub fn dof(&self) -> f64 {
        2.0 * self.shape
    }

    /// Limiting spectral law `fPois(jump N/(2c), rate 2b/N)`.
    pub fn limit(&self) -> Result<FreePoissonParams> {
        let nf = self.n as f64;
        FreePoissonParams::fpois(nf / (2.0 * self.rate), 2.0 * self.shape / nf)
    }
}

/// Ascending eigenvalues, optionally with the orthonormal eigenvector frame
/// (column `i` belongs to eigenvalue `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    eigenvalues: Vec<f64>,
    frame: Option<DMatrix<f64>>,
}

impl SpectralSample {
    /// Positive spectrum; sorts the input.
    pub fn new(mut eigenvalues: Vec<f64>) -> Result<Self> {
        eigenvalues.sort_by(f64::total_cmp);
        match eigenvalues.first() {
            None => Err(Error::InvalidParameter("empty spectrum".into())),
            Some(&min) if !(min > 0.0) => Err(Error::NotPositiveDefinite(min)),
            _ => Ok(Self { eigenvalues, frame: None }),
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn frame(&self) -> Option<&DMatrix<f64>> {
        self.frame.as_ref()
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn into_eigenvalues(self) -> Vec<f64> {
        self.eigenvalues
    }

    /// `Q diag(λ) Qᵀ` with the stored frame.
    pub fn reconstruct(&self) -> Option<DMatrix<f64>> {
        self.frame.as_ref().map(|q| spectral_apply(q, &self.eigenvalues, |x| x))
    }
}

/// Pooled eigenvalues of several samples, each point with weight
/// `1/(N·reps)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalSpectrum {
    values: Vec<f64>,
    pub n: usize,
    pub reps: usize,
}

impl EmpiricalSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Right-continuous empirical CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        self.values.partition_point(|&v| v <= x) as f64 / self.values.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with
/// the columns of `Q` multiplied by the signs of `diag(R)`.
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Bartlett construction: `W = L Lᵀ / (2c)` with `L` lower triangular,
/// `L_ii² ~ χ²_{2b−i}` (as Gamma, so `2b` need not be an integer) and
/// standard normal entries below the diagonal.
pub fn sample_wishart_matrix<R: Rng + ?Sized>(p: &WishartParams, rng: &mut R) -> Result<DMatrix<f64>> {
    let n = p.n;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let k = p.dof() - i as f64;
        let chi2 = Gamma::new(k / 2.0, 2.0)
            .map_err(|e| Error::InvalidParameter(format!("chi-square with {k} dof: {e}")))?;
        l[(i, i)] = chi2.sample(rng).sqrt();
        for j in 0..i {
            l[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let mut w = &l * l.transpose();
    w /= 2.0 * p.rate;
    Ok(w)
}

pub fn sample_wishart<R: Rng + ?Sized>(p: &WishartParams, rng: &mut R) -> Result<SpectralSample> {
    let w = sample_wishart_matrix(p, rng)?;
    let s = sym_eigen(&w)?;
    SpectralSample::new(s.eigenvalues.clone())?;
    Ok(s)
}

/// Metropolis–Hastings on the unordered eigenvalue density
/// `∏_{i<j}|λ_i − λ_j| ∏_i λ_i^{α_N}(1+λ_i)^{−β_N}e^{−cλ_i}` on `(0, ∞)^N`,
/// with coordinate-wise Gaussian random-walk proposals.
#[derive(Debug, Clone)]
pub struct KummerChain {
    params: MatrixKummerParams,
    lambda: Vec<f64>,
    sigma: Vec<f64>,
    accepted: u64,
    proposed: u64,
}

const ADAPT_EVERY: usize = 25;
const TARGET_ACCEPTANCE: f64 = 0.3;

impl KummerChain {
    /// Starts at the quantiles `(i + ½)/N` of the limiting free-Kummer law,
    /// or on a geometric grid around `a/c` when the limit is not admissible.
    pub fn new(params: MatrixKummerParams) -> Self {
        let n = params.n;
        let lambda = warm_start(&params);
        let spread = if n > 1 {
            (lambda[n - 1] - lambda[0]) / n as f64
        } else {
            0.25 * lambda[0]
        };
        let sigma = vec![spread.max(1e-6); n];
        Self { params, lambda, sigma, accepted: 0, proposed: 0 }
    }

    pub fn params(&self) -> &MatrixKummerParams {
        &self.params
    }

    pub fn state(&self) -> &[f64] {
        &self.lambda
    }

    /// Acceptance rate since the last reset.
    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    /// Log-density change when `λ_i` moves to `x`; the Vandermonde part is
    /// the log of a product of ratios, taken in blocks to stay in range.
    fn delta_log(&self, i: usize, x: f64) -> f64 {
        let old = self.lambda[i];
        let mut total = self.params.log_weight(x) - self.params.log_weight(old);
        let mut prod = 1.0;
        let mut count = 0;
        for (j, &lj) in self.lambda.iter().enumerate() {
            if j == i {
                continue;
            }
            prod *= (x - lj) / (old - lj);
            count += 1;
            if count == 32 {
                total += prod.abs().ln();
                prod = 1.0;
                count = 0;
            }
        }
        total + prod.abs().ln()
    }

    /// One systematic sweep; returns per-coordinate accept flags.
    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, hits: &mut [u32]) {
        for (i, hit) in hits.iter_mut().enumerate().take(self.lambda.len()) {
            let z: f64 = rng.sample(StandardNormal);
            let x = self.lambda[i] + self.sigma[i] * z;
            self.proposed += 1;
            let u: f64 = rng.random();
            if x > 0.0 {
                let d = self.delta_log(i, x);
                if d >= 0.0 || u.ln() < d {
                    self.lambda[i] = x;
                    self.accepted += 1;
                    *hit += 1;
                }
            }
        }
    }

    /// Burn-in with per-coordinate step adaptation towards acceptance in
    /// `[0.2, 0.4]`; fails if the final acceptance is outside
    /// [`ACCEPTANCE_BOUNDS`].
    pub fn burn_in<R: Rng + ?Sized>(&mut self, sweeps: usize, rng: &mut R) -> Result<()> {
        let n = self.lambda.len();
        let mut hits = vec![0u32; n];
        let mut round = 0usize;
        for s in 0..sweeps {
            self.sweep(rng, &mut hits);
            if (s + 1) % ADAPT_EVERY == 0 {
                round += 1;
                let gain = 1.0 / (round as f64).sqrt().max(1.0);
                for (sig, h) in self.sigma.iter_mut().zip(hits.iter_mut()) {
                    let rate = *h as f64 / ADAPT_EVERY as f64;
                    if !(0.2..=0.4).contains(&rate) {
                        *sig *= (gain.max(0.05) * (rate - TARGET_ACCEPTANCE) * 4.0).exp();
                    }
                    *h = 0;
                }
                // Judge mixing on the most recent window only.
                if s + 1 + 10 * ADAPT_EVERY > sweeps {
                    continue;
                }
                self.reset_counts();
            }
        }
        self.check_mixing()
    }

    fn check_mixing(&self) -> Result<()> {
        let rate = self.acceptance();
        if self.proposed > 0 && !(ACCEPTANCE_BOUNDS.0..=ACCEPTANCE_BOUNDS.1).contains(&rate) {
            return Err(Error::MixingFailure { rate });
        }
        Ok(())
    }

    /// Runs `thin` sweeps with fixed step sizes and returns the state.
    pub fn next_sample<R: Rng + ?Sized>(&mut self, thin: usize, rng: &mut R) -> Result<SpectralSample> {
        let mut hits = vec![0u32; self.lambda.len()];
        for _ in 0..thin.max(1) {
            self.sweep(rng, &mut hits);
        }
        SpectralSample::new(self.lambda.clone())
    }
}

fn warm_start(p: &MatrixKummerParams) -> Vec<f64> {
    let n = p.n;
    if let Ok(k) = p.limit() {
        if let Ok(d) = k.to_density() {
            let table = d.cdf_table();
            let (lo, hi) = k.support();
            let q: Option<Vec<f64>> = (0..n)
                .map(|i| {
                    let target = (i as f64 + 0.5) / n as f64;
                    brent(|x| Ok(table.cdf(x) - target), lo, hi, 1e-12 * hi).ok()
                })
                .collect();
            if let Some(q) = q {
                if q.iter().all(|&x| x > 0.0) && q.windows(2).all(|w| w[1] > w[0]) {
                    return q;
                }
            }
        }
    }
    let centre = (p.a.max(1.0) / p.c).max(1e-3);
    (0..n)
        .map(|i| centre * (1.0 + (i as f64 + 0.5) / n as f64 - 0.5).max(0.05))
        .collect()
}

/// One matrix-Kummer eigenvalue sample: `burn_in` adaptive sweeps, then
/// `thin` more.
pub fn sample_kummer_eigs<R: Rng + ?Sized>(
    p: &MatrixKummerParams,
    burn_in: usize,
    thin: usize,
    rng: &mut R,
) -> Result<SpectralSample> {
    if burn_in < MIN_BURN_IN {
        return Err(Error::InvalidParameter(format!(
            "burn-in must be at least {MIN_BURN_IN} sweeps, got {burn_in}"
        )));
    }
    let mut chain = KummerChain::new(*p);
    chain.burn_in(burn_in, rng)?;
    chain.next_sample(thin, rng)
}

/// `Q diag(λ) Qᵀ` with a fresh Haar `Q`.
pub fn assemble_matrix<R: Rng + ?Sized>(s: &SpectralSample, rng: &mut R) -> DMatrix<f64> {
    let q = haar_orthogonal(s.n(), rng);
    spectral_apply(&q, &s.eigenvalues, |x| x)
}

fn spectral_apply(q: &DMatrix<f64>, values: &[f64], f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = q.clone();
    for (j, &v) in values.iter().enumerate() {
        let fv = f(v);
        scaled.column_mut(j).scale_mut(fv);
    }
    let mut m = scaled * q.transpose();
    symmetrize(&mut m);
    m
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Full eigen-decomposition of the symmetric part of `m`, eigenvalues
/// ascending. The spectrum may have any sign here; positivity is imposed by
/// the callers that need it.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SpectralSample> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(m.nrows(), m.ncols()));
    }
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.try_symmetric_eigen(f64::EPSILON, 100_000).ok_or(Error::EigenFailure)?;
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let frame = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure);
    }
    Ok(SpectralSample { eigenvalues, frame: Some(frame) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatPower {
    Inverse,
    InvSqrt,
    Sqrt,
    Identity,
}

impl MatPower {
    pub fn exponent(self) -> f64 {
        match self {
            MatPower::Inverse => -1.0,
            MatPower::InvSqrt => -0.5,
            MatPower::Sqrt => 0.5,
            MatPower::Identity => 1.0,
        }
    }
}

/// `Q diag(λ^p) Qᵀ`. Negative and fractional powers require a positive
/// spectrum; the inverse also requires condition number below
/// [`MAX_CONDITION`].
pub fn mat_power(m: &DMatrix<f64>, p: MatPower) -> Result<DMatrix<f64>> {
    let s = sym_eigen(m)?;
    let min = s.eigenvalues[0];
    let max = s.eigenvalues[s.n() - 1];
    if p != MatPower::Identity && !(min > 0.0) {
        return Err(Error::NotPositiveDefinite(min));
    }
    if p == MatPower::Inverse && max / min > MAX_CONDITION {
        return Err(Error::SingularMatrix(max / min));
    }
    let q = s.frame.as_ref().expect("sym_eigen returns a frame");
    Ok(match p {
        MatPower::Inverse => spectral_apply(q, &s.eigenvalues, |x| 1.0 / x),
        MatPower::InvSqrt => spectral_apply(q, &s.eigenvalues, |x| 1.0 / x.sqrt()),
        MatPower::Sqrt => spectral_apply(q, &s.eigenvalues, f64::sqrt),
        MatPower::Identity => spectral_apply(q, &s.eigenvalues, |x| x),
    })
}

/// Pools the spectra of `samples`.
pub fn esd(samples: &[SpectralSample]) -> Result<EmpiricalSpectrum> {
    let first = samples.first().ok_or_else(|| Error::InvalidParameter("no samples".into()))?;
    let n = first.n();
    if let Some(bad) = samples.iter().find(|s| s.n() != n) {
        return Err(Error::DimensionMismatch(n, bad.n()));
    }
    let mut values: Vec<f64> = samples.iter().flat_map(|s| s.eigenvalues.iter().copied()).collect();
    values.sort_by(f64::total_cmp);
    Ok(EmpiricalSpectrum { values, n, reps: samples.len() })
}

/// `sup |F_emp − F|` over the pooled points, with the right-continuous
/// empirical CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(e: &EmpiricalSpectrum, cdf: F) -> f64 {
    let total = e.values.len() as f64;
    let mut worst = 0.0f64;
    let mut i = 0;
    while i < e.values.len() {
        let x = e.values[i];
        let mut j = i;
        while j < e.values.len() && e.values[j] == x {
            j += 1;
        }
        worst = worst.max((j as f64 / total - cdf(x)).abs());
        i = j;
    }
    worst
}

/// One CSV row per sample: `replica,l1..lN`, preceded by a `#` comment
/// header.
pub fn write_eigen_csv<W: Write>(out: &mut W, header: &str, samples: &[SpectralSample]) -> std::io::Result<()> {
    for line in header.lines() {
        writeln!(out, "# {line}")?;
    }
    let n = samples.first().map_or(0, SpectralSample::n);
    let cols: Vec<String> = (1..=n).map(|i| format!("l{i}")).collect();
    writeln!(out, "replica,{}", cols.join(","))?;
    for (r, s) in samples.iter().enumerate() {
        let vals: Vec<String> = s.eigenvalues.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{r},{}", vals.join(","))?;
    }
    Ok(())
}
