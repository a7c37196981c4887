//! Adaptive Gauss–Legendre quadrature.

use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

const RULE_POINTS: usize = 20;
const MAX_PANELS: usize = 20_000;
const ROUNDING_FLOOR: f64 = 1e-15;

/// Values that can be integrated: reals and complex numbers.
pub trait QuadValue: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// Nodes and weights of the Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(RULE_POINTS))
}

/// Fixed 20-point Gauss–Legendre on `[a, b]`.
pub fn gauss<V: QuadValue, F: Fn(f64) -> V>(f: &F, a: f64, b: f64) -> V {
    let (nodes, weights) = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = V::zero();
    for (x, w) in nodes.iter().zip(weights) {
        acc = acc + f(mid + half * x) * (w * half);
    }
    acc
}

struct Panel<V> {
    a: f64,
    b: f64,
    value: V,
    err: f64,
}

impl<V> PartialEq for Panel<V> {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err).is_eq()
    }
}

impl<V> Eq for Panel<V> {}

impl<V> PartialOrd for Panel<V> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<V> Ord for Panel<V> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn panel<V: QuadValue, F: Fn(f64) -> V>(f: &F, a: f64, b: f64, whole: V) -> (Panel<V>, Panel<V>) {
    let m = 0.5 * (a + b);
    let left = gauss(f, a, m);
    let right = gauss(f, m, b);
    let err = 0.5 * (left + right - whole).magnitude();
    (Panel { a, b: m, value: left, err }, Panel { a: m, b, value: right, err })
}

/// Globally adaptive Gauss–Legendre: the panel with the largest error
/// estimate (difference between a panel's rule and the sum over its halves)
/// is split until the total estimate drops below `tol`, or below the
/// rounding floor of the integral.
pub fn integrate<V: QuadValue, F: Fn(f64) -> V>(f: F, a: f64, b: f64, tol: f64) -> Result<V> {
    if a == b {
        return Ok(V::zero());
    }
    let whole = gauss(&f, a, b);
    let mut heap = BinaryHeap::new();
    let (l, r) = panel(&f, a, b, whole);
    heap.push(l);
    heap.push(r);
    for _ in 0..MAX_PANELS {
        let total_err: f64 = heap.iter().map(|p| p.err).sum();
        let scale: f64 = heap.iter().map(|p| p.value.magnitude()).sum();
        if !total_err.is_finite() || !scale.is_finite() {
            return Err(Error::NoConvergence(format!("non-finite integrand on [{a}, {b}]")));
        }
        if total_err <= tol.max(ROUNDING_FLOOR * scale) {
            return Ok(heap.iter().fold(V::zero(), |acc, p| acc + p.value));
        }
        let worst = heap.pop().expect("heap is never empty");
        if (worst.b - worst.a).abs() <= 4.0 * f64::EPSILON * worst.a.abs().max(worst.b.abs()) {
            // Cannot split further; keep its estimate and move on.
            heap.push(Panel { err: 0.0, ..worst });
            continue;
        }
        let (l, r) = panel(&f, worst.a, worst.b, worst.value);
        heap.push(l);
        heap.push(r);
    }
    Err(Error::NoConvergence(format!("quadrature on [{a}, {b}]")))
}

/// `∫_lo^hi g(x) dx` for integrands with square-root behavior at both ends,
/// through `x = lo + (hi − lo) sin²θ`.
pub fn integrate_sqrt_edges<V: QuadValue, F: Fn(f64) -> V>(
    g: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<V> {
    let width = hi - lo;
    integrate(
        |theta: f64| {
            let (s, c) = theta.sin_cos();
            g(lo + width * s * s) * (2.0 * width * s * c)
        },
        0.0,
        FRAC_PI_2,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(RULE_POINTS);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for k in 0..2 * RULE_POINTS {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn adaptive_handles_peaks() {
        let eps = 1e-3;
        let v: f64 = integrate(|x: f64| eps / (x * x + eps * eps), -1.0, 1.0, 1e-12).unwrap();
        assert!((v - 2.0 * (1.0 / eps).atan()).abs() < 1e-10);
    }

    #[test]
    fn semicircle_edges() {
        let v: f64 = integrate_sqrt_edges(|x: f64| ((x + 2.0) * (2.0 - x)).max(0.0).sqrt() / (2.0 * PI), -2.0, 2.0, 1e-14).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
    }

    #[test]
    fn complex_values() {
        let z = Complex64::new(0.5, 2.0);
        let v: Complex64 = integrate(|t: f64| Complex64::new(1.0, 0.0) / (z - t), 0.0, 1.0, 1e-14).unwrap();
        let exact = (z / (z - 1.0)).ln();
        assert!((v - exact).norm() < 1e-13);
    }
}
