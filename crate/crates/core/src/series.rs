//! Truncated formal power series.
//!
//! A series of order `K` carries the coefficients `c₀..c_K`. Binary operations
//! truncate to the smaller of the two operand orders.

use num_traits::Num;

use crate::combinatorics::{cumulants_from_moments, MomentSequence};
use crate::error::{Error, Result};

/// Default working order for transform manipulations.
pub const DEFAULT_ORDER: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSeries<T> {
    coeffs: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesOp {
    Add,
    Mul,
    Div,
}

impl<T: Num + Clone> TruncatedSeries<T> {
    /// Builds a series from `c₀..c_K`. An empty vector becomes the zero
    /// series of order 0.
    pub fn new(mut coeffs: Vec<T>) -> Self {
        if coeffs.is_empty() {
            coeffs.push(T::zero());
        }
        Self { coeffs }
    }

    /// `z` truncated at `order` (requires `order >= 1`).
    pub fn identity(order: usize) -> Self {
        let mut c = vec![T::zero(); order.max(1) + 1];
        c[1] = T::one();
        Self::new(c)
    }

    pub fn constant(value: T, order: usize) -> Self {
        let mut c = vec![T::zero(); order + 1];
        c[0] = value;
        Self::new(c)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.coeffs
    }

    /// Coefficient of `z^k`; zero beyond the stored order.
    pub fn coeff(&self, k: usize) -> T {
        self.coeffs.get(k).cloned().unwrap_or_else(T::zero)
    }

    pub fn truncated(&self, order: usize) -> Self {
        let mut c: Vec<T> = self.coeffs.iter().take(order + 1).cloned().collect();
        c.resize(order + 1, T::zero());
        Self::new(c)
    }

    pub fn add(&self, other: &Self) -> Self {
        let k = self.order().min(other.order());
        Self::new((0..=k).map(|i| self.coeff(i) + other.coeff(i)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        let k = self.order().min(other.order());
        Self::new((0..=k).map(|i| self.coeff(i) - other.coeff(i)).collect())
    }

    pub fn scale(&self, c: T) -> Self {
        Self::new(self.coeffs.iter().map(|v| v.clone() * c.clone()).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let k = self.order().min(other.order());
        let mut out = vec![T::zero(); k + 1];
        for (i, a) in self.coeffs.iter().enumerate().take(k + 1) {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate().take(k + 1 - i) {
                out[i + j] = out[i + j].clone() + a.clone() * b.clone();
            }
        }
        Self::new(out)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        let b0 = other.coeff(0);
        if b0.is_zero() {
            return Err(Error::ZeroConstantTerm);
        }
        let k = self.order().min(other.order());
        let mut q: Vec<T> = Vec::with_capacity(k + 1);
        for n in 0..=k {
            let mut acc = self.coeff(n);
            for (j, qj) in q.iter().enumerate() {
                acc = acc - qj.clone() * other.coeff(n - j);
            }
            q.push(acc / b0.clone());
        }
        Ok(Self::new(q))
    }

    pub fn derivative(&self) -> Self {
        let k = self.order();
        if k == 0 {
            return Self::new(vec![T::zero()]);
        }
        let mut out = Vec::with_capacity(k);
        let mut factor = T::zero();
        for c in self.coeffs.iter().skip(1) {
            factor = factor + T::one();
            out.push(c.clone() * factor.clone());
        }
        Self::new(out)
    }

    /// Divides by `z`, dropping one order. The constant term must vanish.
    pub fn shift_down(&self) -> Result<Self> {
        if !self.coeff(0).is_zero() {
            return Err(Error::NonInvertible("constant term must vanish to divide by z"));
        }
        Ok(Self::new(self.coeffs[1..].to_vec()))
    }

    /// Multiplies by `z`, keeping the order.
    pub fn shift_up(&self) -> Self {
        let mut c = vec![T::zero()];
        c.extend(self.coeffs[..self.order()].iter().cloned());
        Self::new(c)
    }

    /// Horner evaluation of the polynomial part.
    pub fn eval(&self, x: T) -> T {
        self.coeffs
            .iter()
            .rev()
            .fold(T::zero(), |acc, c| acc * x.clone() + c.clone())
    }

    /// `self(inner(z))`; the inner series must have a zero constant term.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        if !inner.coeff(0).is_zero() {
            return Err(Error::NonzeroInnerConstant);
        }
        let k = self.order().min(inner.order());
        let g = inner.truncated(k);
        let mut acc = Self::constant(self.coeff(k), k);
        for i in (0..k).rev() {
            acc = acc.mul(&g);
            acc.coeffs[0] = acc.coeffs[0].clone() + self.coeff(i);
        }
        Ok(acc)
    }

    /// Compositional inverse `g` with `self(g(z)) = z + O(z^{K+1})`.
    ///
    /// Newton iteration `g ← g − (f∘g − z)/(f′∘g)`, doubling the working
    /// order at each step.
    pub fn revert(&self) -> Result<Self> {
        if !self.coeff(0).is_zero() {
            return Err(Error::NonInvertible("constant term must vanish"));
        }
        let f1 = self.coeff(1);
        if f1.is_zero() {
            return Err(Error::NonInvertible("linear coefficient must be nonzero"));
        }
        let k = self.order();
        if k < 1 {
            return Err(Error::NonInvertible("order must be at least 1"));
        }
        let fprime = self.derivative();
        let mut g = Self::new(vec![T::zero(), T::one() / f1]);
        let mut prec = 1;
        while prec < k {
            prec = (2 * prec).min(k);
            let gp = g.truncated(prec);
            let fg = self.truncated(prec).compose(&gp)?;
            let resid = fg.sub(&Self::identity(prec));
            let dfg = fprime.truncated(prec).compose(&gp)?;
            g = gp.sub(&resid.div(&dfg)?);
        }
        Ok(g.truncated(k))
    }
}

pub fn series_arith<T: Num + Clone>(
    a: &TruncatedSeries<T>,
    b: &TruncatedSeries<T>,
    op: SeriesOp,
) -> Result<TruncatedSeries<T>> {
    match op {
        SeriesOp::Add => Ok(a.add(b)),
        SeriesOp::Mul => Ok(a.mul(b)),
        SeriesOp::Div => a.div(b),
    }
}

pub fn series_compose<T: Num + Clone>(
    f: &TruncatedSeries<T>,
    g: &TruncatedSeries<T>,
) -> Result<TruncatedSeries<T>> {
    f.compose(g)
}

pub fn series_revert<T: Num + Clone>(f: &TruncatedSeries<T>) -> Result<TruncatedSeries<T>> {
    f.revert()
}

/// The r-transform `Σ κ_{n+1} zⁿ` of a moment sequence of order `n`; the
/// result has order `n − 1`.
pub fn r_from_moments<T: Num + Clone>(m: &MomentSequence<T>) -> TruncatedSeries<T> {
    TruncatedSeries::new(cumulants_from_moments(m).0)
}

/// S-transform coefficients `S(z) = (1+z)/z · ξ(z)` where `ξ` inverts
/// `M(z) − 1 = Σ_{n≥1} m_n zⁿ`. A moment sequence of order `n` yields a series
/// of order `n − 1`.
pub fn s_from_moments<T: Num + Clone>(m: &MomentSequence<T>) -> Result<TruncatedSeries<T>> {
    if m.order() == 0 || m.0[0].is_zero() {
        return Err(Error::DegenerateInversion);
    }
    let mut c = vec![T::zero()];
    c.extend(m.0.iter().cloned());
    let psi = TruncatedSeries::new(c);
    let xi = psi.revert()?;
    let xi_over_z = xi.shift_down()?;
    let k = xi_over_z.order();
    let mut one_plus_z = vec![T::one(), T::one()];
    one_plus_z.resize(k + 1, T::zero());
    one_plus_z.truncate(k + 1);
    Ok(TruncatedSeries::new(one_plus_z).mul(&xi_over_z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{enumerate_nc, moments_from_cumulants, CumulantSequence, SetPartition};
    use proptest::prelude::*;

    fn ts(c: &[f64]) -> TruncatedSeries<f64> {
        TruncatedSeries::new(c.to_vec())
    }

    fn close(a: &TruncatedSeries<f64>, b: &[f64], tol: f64) -> bool {
        a.order() + 1 == b.len() && a.coeffs().iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn arithmetic_examples() {
        let a = ts(&[1.0, 1.0, 0.0]);
        assert_eq!(series_arith(&a, &a, SeriesOp::Mul).unwrap().coeffs(), &[1.0, 2.0, 1.0]);
        let q = series_arith(&ts(&[1.0, 0.0, 0.0]), &ts(&[1.0, 1.0, 0.0]), SeriesOp::Div).unwrap();
        assert_eq!(q.coeffs(), &[1.0, -1.0, 1.0]);
        let b = ts(&[2.0, -1.0, 0.5, 3.0]);
        assert!(close(&b.div(&b).unwrap(), &[1.0, 0.0, 0.0, 0.0], 1e-15));
        assert_eq!(
            series_arith(&ts(&[1.0, 2.0]), &ts(&[0.0, 1.0]), SeriesOp::Div),
            Err(Error::ZeroConstantTerm)
        );
        // truncation to the smaller order
        assert_eq!(ts(&[1.0, 1.0]).add(&ts(&[1.0, 1.0, 1.0])).order(), 1);
    }

    #[test]
    fn compose_examples() {
        let g = ts(&[0.0, 0.3, -1.2, 0.7]);
        assert_eq!(series_compose(&ts(&[0.0, 1.0, 0.0, 0.0]), &g).unwrap(), g);
        // (g + g²) with g = z + z²: z + 2z² + 2z³ + z⁴
        let f = ts(&[0.0, 1.0, 1.0, 0.0]);
        let h = series_compose(&f, &ts(&[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(h.coeffs(), &[0.0, 1.0, 2.0, 2.0]);
        let c = series_compose(&ts(&[4.0, 0.0, 0.0]), &ts(&[0.0, 2.0, 5.0])).unwrap();
        assert_eq!(c.coeffs(), &[4.0, 0.0, 0.0]);
        assert_eq!(
            series_compose(&f, &ts(&[1.0, 1.0, 0.0, 0.0])),
            Err(Error::NonzeroInnerConstant)
        );
    }

    #[test]
    fn revert_examples() {
        let g = series_revert(&ts(&[0.0, 1.0, 1.0, 1.0])).unwrap();
        assert!(close(&g, &[0.0, 1.0, -1.0, 1.0], 1e-14));
        let g = series_revert(&ts(&[0.0, 2.0, 0.0, 0.0])).unwrap();
        assert!(close(&g, &[0.0, 0.5, 0.0, 0.0], 1e-15));
        let f = ts(&[0.0, 1.5, -0.4, 0.2, 0.9, -0.3, 0.05]);
        let back = f.revert().unwrap().revert().unwrap();
        assert!(close(&back, f.coeffs(), 1e-12));
        assert!(series_revert(&ts(&[1.0, 1.0])).is_err());
        assert!(series_revert(&ts(&[0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn r_transform_examples() {
        let r = r_from_moments(&MomentSequence(vec![1.0, 2.0, 5.0, 14.0]));
        assert_eq!(r.coeffs(), &[1.0, 1.0, 1.0, 1.0]);
        let c = 0.7f64;
        let r = r_from_moments(&MomentSequence((1..=5).map(|n| c.powi(n)).collect()));
        assert!(close(&r, &[c, 0.0, 0.0, 0.0, 0.0], 1e-14));
        // a/(1-by) with a=2, b=0.5
        let kappa = CumulantSequence(vec![2.0, 1.0, 0.5, 0.25]);
        let m = moments_from_cumulants(&kappa);
        assert!(close(&r_from_moments(&m), &[2.0, 1.0, 0.5, 0.25], 1e-13));
    }

    #[test]
    fn s_transform_examples() {
        let c = 2.5f64;
        let s = s_from_moments(&MomentSequence((1..=8).map(|n| c.powi(n)).collect())).unwrap();
        assert!(close(&s, &[1.0 / c, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1e-13));
        let catalan = moments_from_cumulants(&CumulantSequence(vec![1.0; 9]));
        let s = s_from_moments(&catalan).unwrap();
        assert!(close(&s, &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0], 1e-10));
        // homogeneity
        let t = 3.0f64;
        let scaled = MomentSequence(catalan.0.iter().enumerate().map(|(i, m)| m * t.powi(i as i32 + 1)).collect());
        let st = s_from_moments(&scaled).unwrap();
        for (a, b) in st.coeffs().iter().zip(s.coeffs()) {
            assert!((a - b / t).abs() < 1e-9);
        }
        assert_eq!(
            s_from_moments(&MomentSequence(vec![0.0, 1.0])),
            Err(Error::DegenerateInversion)
        );
    }

    /// Kreweras complement of `pi`: the unique `sigma` on the primed points
    /// such that `pi ∪ sigma` is non-crossing on `1,1',2,2',…` and
    /// `|pi| + |sigma| = n + 1`.
    fn kreweras(pi: &SetPartition) -> SetPartition {
        let n = pi.n();
        for sigma in enumerate_nc(n).unwrap() {
            if pi.blocks().len() + sigma.blocks().len() != n + 1 {
                continue;
            }
            let mut blocks: Vec<Vec<usize>> =
                pi.blocks().iter().map(|b| b.iter().map(|&i| 2 * i - 1).collect()).collect();
            blocks.extend(sigma.blocks().iter().map(|b| b.iter().map(|&i| 2 * i).collect()));
            if !SetPartition::new(2 * n, blocks).unwrap().is_crossing() {
                return sigma;
            }
        }
        unreachable!("Kreweras complement always exists")
    }

    /// Moments of a product of free elements:
    /// `φ((ab)^n) = Σ_{π∈NC(n)} κ_π(a) m_{K(π)}(b)`.
    fn free_product_moments(kappa_a: &[f64], m_b: &[f64], order: usize) -> Vec<f64> {
        (1..=order)
            .map(|n| {
                enumerate_nc(n)
                    .unwrap()
                    .iter()
                    .map(|pi| {
                        let k: f64 = pi.block_sizes().map(|s| kappa_a[s - 1]).product();
                        let m: f64 = kreweras(pi).block_sizes().map(|s| m_b[s - 1]).product();
                        k * m
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn s_transform_is_multiplicative_on_free_pairs() {
        let order = 7;
        // a: free Poisson rate 2 jump 0.5; b: an arbitrary compactly supported law
        let kappa_a: Vec<f64> = (0..order).map(|i| 2.0 * 0.5f64.powi(i as i32 + 1)).collect();
        let m_a = moments_from_cumulants(&CumulantSequence(kappa_a.clone()));
        let m_b: Vec<f64> = (1..=order).map(|n| (1.0 + 2f64.powi(n as i32) + 3f64.powi(n as i32)) / 3.0).collect();
        let m_ab = free_product_moments(&kappa_a, &m_b, order);
        let s_a = s_from_moments(&m_a).unwrap();
        let s_b = s_from_moments(&MomentSequence(m_b)).unwrap();
        let s_ab = s_from_moments(&MomentSequence(m_ab)).unwrap();
        let prod = s_a.mul(&s_b);
        for k in 0..=prod.order() {
            assert!((prod.coeff(k) - s_ab.coeff(k)).abs() < 1e-9, "k={k}");
        }
    }

    #[test]
    fn complex_coefficients() {
        use num_complex::Complex64;
        let f = TruncatedSeries::new(vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 1.0),
            Complex64::new(0.5, -0.2),
            Complex64::new(0.0, 0.3),
        ]);
        let g = f.revert().unwrap();
        let id = f.compose(&g).unwrap();
        assert!((id.coeff(1) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(id.coeff(2).norm() < 1e-14 && id.coeff(3).norm() < 1e-14);
    }

    proptest! {
        #[test]
        fn revert_then_compose_is_identity(
            lead in prop_oneof![0.5f64..3.0, -3.0f64..-0.5],
            rest in proptest::collection::vec(-1.0f64..1.0, 2..12),
        ) {
            let mut c = vec![0.0, lead];
            c.extend(rest);
            let f = TruncatedSeries::new(c);
            let id = f.compose(&f.revert().unwrap()).unwrap();
            prop_assert!((id.coeff(1) - 1.0).abs() <= 1e-12);
            for k in 2..=id.order() {
                let scale = (1.0 / lead.abs()).powi(k as i32).max(1.0) * 4f64.powi(k as i32);
                prop_assert!(id.coeff(k).abs() <= 1e-12 * scale, "k={} c={}", k, id.coeff(k));
            }
        }

        #[test]
        fn r_transform_inverts_moments(kappa in proptest::collection::vec(-1.5f64..1.5, 1..=10)) {
            let m = moments_from_cumulants(&CumulantSequence(kappa.clone()));
            let r = r_from_moments(&m);
            for (a, b) in r.coeffs().iter().zip(&kappa) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}
