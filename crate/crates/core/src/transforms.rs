//! Analytic transforms of measures on an interval by quadrature, and
//! Stieltjes inversion.
//!
//! These routines are deliberately independent of every closed form in
//! [`crate::dist_free`]: they only see a density callable and an atom.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quad::{gauss_legendre, integrate, integrate_sqrt_edges};
use crate::roots::brent;

/// Absolute tolerance for transform quadratures.
pub const QUAD_TOL: f64 = 1e-13;

pub type Pdf = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Absolutely continuous part on `[lo, hi]` plus an optional atom at zero.
///
/// The pdf is expected to vanish like a square root at both edges; all
/// integrals use the substitution `x = lo + (hi − lo) sin²θ`.
#[derive(Clone)]
pub struct DensityOnInterval {
    lo: f64,
    hi: f64,
    pdf: Pdf,
    atom_at_zero: f64,
}

impl fmt::Debug for DensityOnInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensityOnInterval")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("atom_at_zero", &self.atom_at_zero)
            .finish_non_exhaustive()
    }
}

impl DensityOnInterval {
    pub fn new(lo: f64, hi: f64, pdf: Pdf, atom_at_zero: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("support [{lo}, {hi}]")));
        }
        if !(0.0..1.0).contains(&atom_at_zero) {
            return Err(Error::InvalidParameter(format!("atom weight {atom_at_zero}")));
        }
        Ok(Self { lo, hi, pdf, atom_at_zero })
    }

    pub fn from_fn<F: Fn(f64) -> f64 + Send + Sync + 'static>(lo: f64, hi: f64, pdf: F) -> Result<Self> {
        Self::new(lo, hi, Arc::new(pdf), 0.0)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn atom(&self) -> f64 {
        self.atom_at_zero
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= self.lo || x >= self.hi {
            0.0
        } else {
            (self.pdf)(x)
        }
    }

    /// `∫ g(t) pdf(t) dt` over the continuous part only.
    pub fn integrate_ac<V, G>(&self, g: G) -> Result<V>
    where
        V: crate::quad::QuadValue,
        G: Fn(f64) -> V,
    {
        integrate_sqrt_edges(|t| g(t) * self.pdf(t), self.lo, self.hi, QUAD_TOL)
    }

    /// `∫ g dμ` including the atom at zero.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        let ac: f64 = self.integrate_ac(&g)?;
        Ok(ac + if self.atom_at_zero > 0.0 { self.atom_at_zero * g(0.0) } else { 0.0 })
    }

    pub fn total_mass(&self) -> Result<f64> {
        self.expect(|_| 1.0)
    }

    pub fn moment(&self, k: u32) -> Result<f64> {
        self.expect(|t| t.powi(k as i32))
    }

    pub fn moments(&self, order: usize) -> Result<Vec<f64>> {
        (1..=order as u32).map(|k| self.moment(k)).collect()
    }

    /// Pushforward under a decreasing or increasing diffeomorphism `map`
    /// with inverse `inverse` and `|d inverse/dy|` given by `jacobian`. The
    /// atom is dropped, so only use on measures without one.
    pub fn pushforward<M, I, J>(&self, map: M, inverse: I, jacobian: J) -> Result<Self>
    where
        M: Fn(f64) -> f64,
        I: Fn(f64) -> f64 + Send + Sync + 'static,
        J: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if self.atom_at_zero > 0.0 {
            return Err(Error::InvalidParameter("pushforward of a measure with an atom".into()));
        }
        let (p, q) = (map(self.lo), map(self.hi));
        let (lo, hi) = (p.min(q), p.max(q));
        let src = self.clone();
        Self::new(lo, hi, Arc::new(move |y| src.pdf(inverse(y)) * jacobian(y)), 0.0)
    }

    /// Tabulated CDF for repeated evaluation.
    pub fn cdf_table(&self) -> CdfTable {
        CdfTable::new(self.clone())
    }
}

const CDF_PANELS: usize = 1024;
const CDF_RULE: usize = 12;

/// CDF of a [`DensityOnInterval`] from Gauss–Legendre panels in the angular
/// variable; evaluation integrates the partial panel exactly with the same
/// rule.
#[derive(Debug, Clone)]
pub struct CdfTable {
    density: DensityOnInterval,
    prefix: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl CdfTable {
    fn new(density: DensityOnInterval) -> Self {
        let (nodes, weights) = gauss_legendre(CDF_RULE);
        let mut table = Self { density, prefix: Vec::with_capacity(CDF_PANELS + 1), nodes, weights };
        let h = FRAC_PI_2 / CDF_PANELS as f64;
        let mut acc = 0.0;
        table.prefix.push(0.0);
        for k in 0..CDF_PANELS {
            acc += table.panel(k as f64 * h, (k + 1) as f64 * h);
            table.prefix.push(acc);
        }
        table
    }

    fn panel(&self, t0: f64, t1: f64) -> f64 {
        let (lo, hi) = self.density.support();
        let width = hi - lo;
        let half = 0.5 * (t1 - t0);
        let mid = 0.5 * (t0 + t1);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| {
                let th = mid + half * x;
                let (s, c) = th.sin_cos();
                w * half * self.density.pdf(lo + width * s * s) * 2.0 * width * s * c
            })
            .sum()
    }

    pub fn density(&self) -> &DensityOnInterval {
        &self.density
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.density.support();
        let atom = if x >= 0.0 { self.density.atom() } else { 0.0 };
        if x <= lo {
            return atom;
        }
        if x >= hi {
            return atom + self.prefix[CDF_PANELS];
        }
        let theta = ((x - lo) / (hi - lo)).sqrt().min(1.0).asin();
        let h = FRAC_PI_2 / CDF_PANELS as f64;
        let k = ((theta / h) as usize).min(CDF_PANELS - 1);
        atom + self.prefix[k] + self.panel(k as f64 * h, theta)
    }
}

fn on_support(d: &DensityOnInterval, z: Complex64) -> bool {
    let (lo, hi) = d.support();
    let on_interval = z.im == 0.0 && z.re >= lo && z.re <= hi;
    let on_atom = d.atom() > 0.0 && z.norm() == 0.0;
    on_interval || on_atom
}

/// `G(z) = atom/z + ∫ pdf(t)/(z − t) dt`.
pub fn cauchy_numeric(d: &DensityOnInterval, z: Complex64) -> Result<Complex64> {
    if on_support(d, z) {
        return Err(Error::SingularEvaluation { re: z.re, im: z.im });
    }
    let ac: Complex64 = d.integrate_ac(|t| Complex64::new(1.0, 0.0) / (z - t))?;
    let atom = if d.atom() > 0.0 { d.atom() / z } else { Complex64::new(0.0, 0.0) };
    Ok(ac + atom)
}

/// `M(z) = ∫ (1 − z t)^{-1} dν(t)`.
pub fn moment_transform_numeric(d: &DensityOnInterval, z: Complex64) -> Result<Complex64> {
    if z.norm() != 0.0 {
        let w = z.inv();
        let (lo, hi) = d.support();
        if w.im == 0.0 && w.re >= lo && w.re <= hi {
            return Err(Error::SingularEvaluation { re: z.re, im: z.im });
        }
    }
    let ac: Complex64 = d.integrate_ac(|t| Complex64::new(1.0, 0.0) / (1.0 - z * t))?;
    Ok(ac + d.atom())
}

fn check_ladder(eps_ladder: &[f64]) -> Result<()> {
    if eps_ladder.len() < 2
        || eps_ladder.iter().any(|&e| !(e > 0.0))
        || eps_ladder.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidParameter(
            "epsilon ladder must be positive, strictly decreasing, with at least two entries".into(),
        ));
    }
    Ok(())
}

/// Linear extrapolation to ε → 0 through the two smallest ladder entries.
fn richardson(eps_ladder: &[f64], raw: &[f64]) -> f64 {
    let n = raw.len();
    let (e1, e2) = (eps_ladder[n - 2], eps_ladder[n - 1]);
    let (v1, v2) = (raw[n - 2], raw[n - 1]);
    (e1 * v2 - e2 * v1) / (e1 - e2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StieltjesEstimate {
    pub x: f64,
    /// Extrapolated density.
    pub density: f64,
    /// `−Im G(x + iε)/π` for each ladder entry.
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MassEstimate {
    pub mass: f64,
    pub raw: Vec<f64>,
}

/// Density estimates `−Im G(x + iε)/π`, extrapolated in ε.
pub fn stieltjes_invert<G>(g: G, grid: &[f64], eps_ladder: &[f64]) -> Result<Vec<StieltjesEstimate>>
where
    G: Fn(Complex64) -> Complex64,
{
    check_ladder(eps_ladder)?;
    Ok(grid
        .iter()
        .map(|&x| {
            let raw: Vec<f64> =
                eps_ladder.iter().map(|&e| -g(Complex64::new(x, e)).im / PI).collect();
            StieltjesEstimate { x, density: richardson(eps_ladder, &raw), raw }
        })
        .collect())
}

/// `−(1/π) ∫_a^b Im G(x + iε) dx` for each ladder entry, extrapolated in ε.
pub fn stieltjes_mass<G>(g: G, a: f64, b: f64, eps_ladder: &[f64]) -> Result<MassEstimate>
where
    G: Fn(Complex64) -> Complex64,
{
    check_ladder(eps_ladder)?;
    let raw = eps_ladder
        .iter()
        .map(|&e| integrate(|x| -g(Complex64::new(x, e)).im / PI, a, b, 1e-12))
        .collect::<Result<Vec<f64>>>()?;
    Ok(MassEstimate { mass: richardson(eps_ladder, &raw), raw })
}

/// Real moment transform on the real axis, where it is monotone.
fn moment_transform_real(d: &DensityOnInterval, w: f64) -> Result<f64> {
    let ac: f64 = d.integrate_ac(|t| 1.0 / (1.0 - w * t))?;
    Ok(ac + d.atom())
}

/// `S(z) = (1+z)/z · ξ(z)` with `ξ` solving `M(ξ) = 1 + z` on the real axis.
pub fn s_transform_numeric(d: &DensityOnInterval, z: f64) -> Result<f64> {
    let half_width = 0.5 * (1.0 - d.atom());
    if !(z.abs() < half_width) {
        return Err(Error::InversionDomain { z });
    }
    let (lo, hi) = d.support();
    if lo < 0.0 {
        return Err(Error::InvalidParameter("S-transform needs a positive measure".into()));
    }
    if z == 0.0 {
        let mean = d.moment(1)?;
        if mean == 0.0 {
            return Err(Error::DegenerateInversion);
        }
        return Ok(1.0 / mean);
    }
    let target = 1.0 + z;
    let f = |w: f64| moment_transform_real(d, w).map(|m| m - target);
    let xi = if z > 0.0 {
        // Approach the singularity at 1/hi geometrically; the integrand
        // steepens near it, so stop at the first bracketing point.
        let mut lower = 0.0;
        let mut k = 1;
        loop {
            let upper = (1.0 - 0.5f64.powi(k)) / hi;
            if f(upper)? >= 0.0 {
                break brent(f, lower, upper, 1e-16 / hi)?;
            }
            lower = upper;
            k += 1;
            if k > 40 {
                return Err(Error::InversionDomain { z });
            }
        }
    } else {
        let mut lower = -1.0 / hi;
        let mut tries = 0;
        while f(lower)? > 0.0 {
            lower *= 2.0;
            tries += 1;
            if tries > 60 {
                return Err(Error::InversionDomain { z });
            }
        }
        brent(f, lower, 0.0, 1e-16 / hi)?
    };
    Ok((1.0 + z) / z * xi)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Free Poisson rate 1, jump 1 written out directly.
    fn mp1() -> DensityOnInterval {
        DensityOnInterval::from_fn(0.0, 4.0, |x| (x * (4.0 - x)).max(0.0).sqrt() / (2.0 * PI * x)).unwrap()
    }

    fn mp1_cauchy(z: Complex64) -> Complex64 {
        (z - z.sqrt() * (z - 4.0).sqrt()) / (2.0 * z)
    }

    fn narrow(c: f64, w: f64) -> DensityOnInterval {
        DensityOnInterval::from_fn(c - w, c + w, move |x| {
            let u = (x - c) / w;
            2.0 / (PI * w) * (1.0 - u * u).max(0.0).sqrt()
        })
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(DensityOnInterval::from_fn(1.0, 1.0, |_| 1.0).is_err());
        assert!(DensityOnInterval::new(0.0, 1.0, Arc::new(|_| 1.0), 1.0).is_err());
        assert!((mp1().total_mass().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cauchy_of_narrow_density_is_point_mass() {
        let d = narrow(2.0, 1e-3);
        let z = Complex64::new(3.0, 1.0);
        let g = cauchy_numeric(&d, z).unwrap();
        assert!((g - (z - 2.0).inv()).norm() < 1e-6);
    }

    #[test]
    fn cauchy_matches_marchenko_pastur() {
        let z = Complex64::new(5.0, 0.0);
        let g = cauchy_numeric(&mp1(), z).unwrap();
        assert!((g - mp1_cauchy(z)).norm() < 1e-8);
    }

    #[test]
    fn cauchy_decays_like_inverse() {
        let z = Complex64::new(0.0, 1e6);
        let g = cauchy_numeric(&mp1(), z).unwrap();
        assert!(((g * z) - 1.0).norm() < 1e-5);
    }

    #[test]
    fn cauchy_is_herglotz_and_rejects_support() {
        for k in 0..10 {
            let z = Complex64::new(-2.0 + k as f64, 0.05 + 0.3 * k as f64);
            assert!(cauchy_numeric(&mp1(), z).unwrap().im < 0.0);
        }
        assert!(matches!(
            cauchy_numeric(&mp1(), Complex64::new(2.0, 0.0)),
            Err(Error::SingularEvaluation { .. })
        ));
    }

    #[test]
    fn atom_is_carried_exactly() {
        // rate 1/2, jump 1: half the mass at zero
        let (lam, a, b) = (0.5f64, (1.0 - 0.5f64.sqrt()).powi(2), (1.0 + 0.5f64.sqrt()).powi(2));
        let pdf = move |x: f64| (4.0 * lam - (x - 1.0 - lam).powi(2)).max(0.0).sqrt() / (2.0 * PI * x);
        let d = DensityOnInterval::new(a, b, Arc::new(pdf), 0.5).unwrap();
        assert!((d.total_mass().unwrap() - 1.0).abs() < 1e-12);
        let z = Complex64::new(0.0, 1e-3);
        let g = cauchy_numeric(&d, z).unwrap();
        assert!((g * z - 0.5).norm() < 1e-2);
        assert!(cauchy_numeric(&d, Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn moment_transform_relations() {
        let d = narrow(2.0, 1e-4);
        let z = Complex64::new(0.1, 0.2);
        let m = moment_transform_numeric(&d, z).unwrap();
        assert!((m - (1.0 - z * 2.0).inv()).norm() < 1e-6);
        let d = mp1();
        assert!((moment_transform_numeric(&d, Complex64::new(0.0, 0.0)).unwrap() - 1.0).norm() < 1e-13);
        for k in 0..20 {
            let t = k as f64 * 0.7;
            let z = Complex64::new(6.0 * t.cos(), 5.0 * t.sin() + if k % 2 == 0 { 0.5 } else { -0.5 });
            let lhs = z * cauchy_numeric(&d, z).unwrap();
            let rhs = moment_transform_numeric(&d, z.inv()).unwrap();
            assert!((lhs - rhs).norm() <= 1e-10, "z={z}");
        }
    }

    #[test]
    fn stieltjes_single_atom() {
        let g = |z: Complex64| (z - 2.0).inv();
        let m = stieltjes_mass(g, 1.9, 2.1, &[1e-2, 1e-3]).unwrap();
        // raw value at ε: (2/π) atan(0.1/ε)
        assert!((m.raw[1] - 2.0 / PI * (0.1f64 / 1e-3).atan()).abs() < 1e-10);
        assert!((m.mass - 1.0).abs() < 0.05);
    }

    #[test]
    fn stieltjes_vanishes_off_support() {
        let est = stieltjes_invert(mp1_cauchy, &[5.0], &[1e-3, 1e-4]).unwrap();
        assert!(est[0].raw.iter().all(|v| v.abs() <= 1e-4));
        assert!(est[0].density.abs() <= 1e-4);
    }

    #[test]
    fn stieltjes_ladder_validation() {
        assert!(stieltjes_invert(mp1_cauchy, &[1.0], &[1e-3]).is_err());
        assert!(stieltjes_invert(mp1_cauchy, &[1.0], &[1e-4, 1e-3]).is_err());
    }

    #[test]
    fn s_transform_point_mass() {
        let d = narrow(2.0, 1e-3);
        for z in [-0.3, -0.1, 0.05, 0.2] {
            assert!((s_transform_numeric(&d, z).unwrap() - 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn s_transform_marchenko_pastur_and_continuity() {
        let d = mp1();
        assert!((s_transform_numeric(&d, 0.1).unwrap() - 1.0 / 1.1).abs() < 1e-10);
        let grid: Vec<f64> = (-40..=40).filter(|&k| k != 0).map(|k| k as f64 * 0.01).collect();
        let vals: Vec<f64> = grid.iter().map(|&z| s_transform_numeric(&d, z).unwrap()).collect();
        for (z, s) in grid.iter().zip(&vals) {
            assert!((s - 1.0 / (1.0 + z)).abs() < 1e-9, "z={z}");
        }
        assert!(matches!(s_transform_numeric(&d, 0.6), Err(Error::InversionDomain { .. })));
    }

    #[test]
    fn cdf_table_is_accurate() {
        let t = mp1().cdf_table();
        assert_eq!(t.cdf(-1.0), 0.0);
        assert!((t.cdf(4.0) - 1.0).abs() < 1e-13);
        let d = mp1();
        let direct: f64 = integrate(|x: f64| d.pdf(x), 1.0, 3.0, 1e-14).unwrap();
        assert!((t.cdf(3.0) - t.cdf(1.0) - direct).abs() < 1e-11);
    }
}
