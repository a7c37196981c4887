//! Non-crossing partitions and the moment / free-cumulant correspondence.
//!
//! Coefficients are generic over any [`num_traits::Num`] type, so the same
//! code runs on `f64` and on exact `BigRational` values.

use num_traits::Num;

use crate::error::{Error, Result};

/// Largest `n` accepted by [`enumerate_nc`].
pub const MAX_NC_SIZE: usize = 12;

/// A partition of `{1..n}` into non-empty blocks, each block sorted ascending
/// and blocks ordered by their smallest element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SetPartition {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    pub fn new(n: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n + 1];
        for block in &mut blocks {
            if block.is_empty() {
                return Err(Error::InvalidParameter("empty block".into()));
            }
            block.sort_unstable();
            for &i in block.iter() {
                if i == 0 || i > n || seen[i] {
                    return Err(Error::InvalidParameter(format!(
                        "element {i} is out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen[1..].iter().any(|s| !s) {
            return Err(Error::InvalidParameter("blocks do not cover 1..n".into()));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Self { n, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Block sizes, in block order.
    pub fn block_sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().map(Vec::len)
    }

    /// True when some `a < b < c < d` have `a, c` in one block and `b, d` in
    /// another.
    pub fn is_crossing(&self) -> bool {
        let mut owner = vec![0usize; self.n + 1];
        for (k, block) in self.blocks.iter().enumerate() {
            for &i in block {
                owner[i] = k;
            }
        }
        let n = self.n;
        for a in 1..=n {
            for b in a + 1..=n {
                if owner[b] == owner[a] {
                    continue;
                }
                for c in b + 1..=n {
                    if owner[c] != owner[a] {
                        continue;
                    }
                    for d in c + 1..=n {
                        if owner[d] == owner[b] {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// All non-crossing partitions of `{1..n}`, each exactly once.
///
/// The block containing the first element splits the remaining elements into
/// runs that can only be partitioned independently of each other; the
/// enumeration recurses on those runs.
pub fn enumerate_nc(n: usize) -> Result<Vec<SetPartition>> {
    if n == 0 || n > MAX_NC_SIZE {
        return Err(Error::SizeLimit { n, max: MAX_NC_SIZE });
    }
    let mut out = Vec::new();
    for blocks in nc_interval(1, n) {
        out.push(SetPartition::new(n, blocks)?);
    }
    Ok(out)
}

/// Non-crossing partitions of the integer interval `lo..=hi` (empty when
/// `lo > hi`, which yields the single empty partition).
fn nc_interval(lo: usize, hi: usize) -> Vec<Vec<Vec<usize>>> {
    if lo > hi {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    // Choose the rest of the first element's block as a subset of lo+1..=hi.
    let rest: Vec<usize> = (lo + 1..=hi).collect();
    let count = 1usize << rest.len();
    for mask in 0..count {
        let mut block = vec![lo];
        block.extend(
            rest.iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &v)| v),
        );
        // Gaps between consecutive block members, plus the tail.
        let mut gaps = Vec::with_capacity(block.len());
        for w in block.windows(2) {
            gaps.push((w[0] + 1, w[1] - 1));
        }
        gaps.push((block[block.len() - 1] + 1, hi));

        let mut partial: Vec<Vec<Vec<usize>>> = vec![vec![block]];
        for (g_lo, g_hi) in gaps {
            let sub = nc_interval(g_lo, g_hi);
            let mut next = Vec::with_capacity(partial.len() * sub.len());
            for p in &partial {
                for s in &sub {
                    let mut q = p.clone();
                    q.extend(s.iter().cloned());
                    next.push(q);
                }
            }
            partial = next;
        }
        out.extend(partial);
    }
    out
}

/// Free cumulants `kappa[k] = κ_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantSequence<T>(pub Vec<T>);

/// Moments `m[k] = m_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence<T>(pub Vec<T>);

impl<T> CumulantSequence<T> {
    pub fn order(&self) -> usize {
        self.0.len()
    }
}

impl<T> MomentSequence<T> {
    pub fn order(&self) -> usize {
        self.0.len()
    }
}

impl MomentSequence<f64> {
    /// Whether the Hankel matrices of `(1, m₁, m₂, …)` are positive
    /// semidefinite, as the moments of a positive measure must be.
    pub fn is_positive_definite_sequence(&self, tol: f64) -> bool {
        let mut full = vec![1.0];
        full.extend_from_slice(&self.0);
        let size = (full.len() - 1) / 2 + 1;
        let h = nalgebra::DMatrix::from_fn(size, size, |i, j| full[i + j]);
        nalgebra::SymmetricEigen::new(h)
            .eigenvalues
            .iter()
            .all(|&e| e >= -tol)
    }
}

/// Coefficients `[z^0..=z^len-1]` of `base^power` where `base` is a series
/// given by its first coefficients. Missing coefficients are treated as
/// unknown, so `len` must not exceed `base.len()`.
fn power_coeffs<T: Num + Clone>(base: &[T], power: usize, len: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); len];
    if len == 0 {
        return acc;
    }
    acc[0] = T::one();
    for _ in 0..power {
        let mut next = vec![T::zero(); len];
        for (i, a) in acc.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in base.iter().enumerate().take(len - i) {
                next[i + j] = next[i + j].clone() + a.clone() * b.clone();
            }
        }
        acc = next;
    }
    acc
}

/// `m_n = Σ_{π∈NC(n)} Π_{B∈π} κ_{|B|}`, computed through the first-block
/// recursion `m_n = Σ_s κ_s [z^{n−s}] M(z)^s` with `M = 1 + Σ m_i z^i`.
pub fn moments_from_cumulants<T: Num + Clone>(kappa: &CumulantSequence<T>) -> MomentSequence<T> {
    let order = kappa.order();
    // full[0] = 1, full[i] = m_i
    let mut full = vec![T::one()];
    for n in 1..=order {
        let mut m = T::zero();
        for s in 1..=n {
            let k = &kappa.0[s - 1];
            if k.is_zero() {
                continue;
            }
            let p = power_coeffs(&full, s, n - s + 1);
            m = m + k.clone() * p[n - s].clone();
        }
        full.push(m);
    }
    full.remove(0);
    MomentSequence(full)
}

/// Inverse of [`moments_from_cumulants`]: at each order the contributions of
/// all partitions other than the full block are subtracted.
pub fn cumulants_from_moments<T: Num + Clone>(m: &MomentSequence<T>) -> CumulantSequence<T> {
    let order = m.order();
    let mut full = vec![T::one()];
    full.extend(m.0.iter().cloned());
    let mut kappa: Vec<T> = Vec::with_capacity(order);
    for n in 1..=order {
        let mut rest = T::zero();
        for s in 1..n {
            let k = &kappa[s - 1];
            if k.is_zero() {
                continue;
            }
            let p = power_coeffs(&full[..n], s, n - s + 1);
            rest = rest + k.clone() * p[n - s].clone();
        }
        kappa.push(full[n].clone() - rest);
    }
    CumulantSequence(kappa)
}

/// `α_n = Σ_{k=1}^n κ_k Σ_{i₁+…+i_k = n−k} δ_{i₁}⋯δ_{i_k}`: the moment of an
/// alternating word whose letters between consecutive cumulant legs carry the
/// moments `δ_j`.
pub fn scalar_word_moment<T: Num + Clone>(
    kappa: &CumulantSequence<T>,
    delta: &[T],
    n: usize,
) -> Result<T> {
    if kappa.order() < n {
        return Err(Error::Arity { needed: n, got: kappa.order() });
    }
    if delta.len() < n {
        return Err(Error::Arity { needed: n, got: delta.len() });
    }
    let mut total = T::zero();
    for k in 1..=n {
        let p = power_coeffs(&delta[..n], k, n - k + 1);
        total = total + kappa.0[k - 1].clone() * p[n - k].clone();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use proptest::prelude::*;

    /// Every set partition of `{1..n}` via restricted growth strings.
    fn all_set_partitions(n: usize) -> Vec<SetPartition> {
        let mut out = Vec::new();
        let mut rgs = vec![0usize; n];
        loop {
            let nblocks = rgs.iter().max().unwrap() + 1;
            let mut blocks = vec![Vec::new(); nblocks];
            for (i, &b) in rgs.iter().enumerate() {
                blocks[b].push(i + 1);
            }
            out.push(SetPartition::new(n, blocks).unwrap());
            // next restricted growth string
            let mut i = n - 1;
            loop {
                if i == 0 {
                    return out;
                }
                let max_prefix = rgs[..i].iter().copied().max().unwrap();
                if rgs[i] <= max_prefix {
                    rgs[i] += 1;
                    for r in rgs.iter_mut().skip(i + 1) {
                        *r = 0;
                    }
                    break;
                }
                i -= 1;
            }
        }
    }

    fn nc_by_filter(n: usize) -> Vec<SetPartition> {
        all_set_partitions(n).into_iter().filter(|p| !p.is_crossing()).collect()
    }

    fn catalan(n: usize) -> usize {
        let mut c = 1usize;
        for k in 0..n {
            c = c * 2 * (2 * k + 1) / (k + 2);
        }
        c
    }

    fn moment_by_nc_sum(kappa: &[f64], n: usize) -> f64 {
        nc_by_filter(n)
            .iter()
            .map(|p| p.block_sizes().map(|s| kappa[s - 1]).product::<f64>())
            .sum()
    }

    #[test]
    fn small_cases() {
        assert_eq!(enumerate_nc(1).unwrap(), vec![SetPartition::new(1, vec![vec![1]]).unwrap()]);
        // brute-force filter counts
        assert_eq!(nc_by_filter(3).len(), 5);
        assert_eq!(nc_by_filter(4).len(), 14);
        assert_eq!(enumerate_nc(3).unwrap().len(), 5);
        assert_eq!(enumerate_nc(4).unwrap().len(), 14);
    }

    #[test]
    fn size_guard() {
        assert!(matches!(enumerate_nc(0), Err(Error::SizeLimit { .. })));
        assert!(matches!(enumerate_nc(13), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn catalan_counts() {
        for n in 1..=10 {
            assert_eq!(enumerate_nc(n).unwrap().len(), catalan(n), "n={n}");
        }
    }

    #[test]
    fn enumeration_matches_filter() {
        for n in 1..=7 {
            let mut fast = enumerate_nc(n).unwrap();
            let mut slow = nc_by_filter(n);
            fast.sort_by(|a, b| a.blocks.cmp(&b.blocks));
            slow.sort_by(|a, b| a.blocks.cmp(&b.blocks));
            assert_eq!(fast, slow, "n={n}");
            // and every rejected partition really crosses
            let rejected = all_set_partitions(n).len() - slow.len();
            let crossing = all_set_partitions(n).iter().filter(|p| p.is_crossing()).count();
            assert_eq!(rejected, crossing);
        }
    }

    #[test]
    fn crossing_example() {
        let p = SetPartition::new(4, vec![vec![1, 3], vec![2, 4]]).unwrap();
        assert!(p.is_crossing());
        let q = SetPartition::new(4, vec![vec![1, 4], vec![2, 3]]).unwrap();
        assert!(!q.is_crossing());
    }

    #[test]
    fn moments_examples() {
        let m = moments_from_cumulants(&CumulantSequence(vec![1.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(m.0, vec![1.0; 5]);
        let m = moments_from_cumulants(&CumulantSequence(vec![1.0, 1.0, 1.0]));
        let oracle: Vec<f64> = (1..=3).map(|n| moment_by_nc_sum(&[1.0; 3], n)).collect();
        assert_eq!(oracle, vec![1.0, 2.0, 5.0]);
        assert_eq!(m.0, oracle);
        let k = [0.0, 1.0, 0.0, 0.0];
        let m = moments_from_cumulants(&CumulantSequence(k.to_vec()));
        assert_eq!(m.0[1], moment_by_nc_sum(&k, 2));
        assert_eq!(m.0[3], moment_by_nc_sum(&k, 4));
        assert_eq!((m.0[1], m.0[3]), (1.0, 2.0));
    }

    #[test]
    fn recursion_matches_partition_sum() {
        let kappa = [0.7, -1.3, 0.4, 2.1, -0.6, 0.9, 1.7];
        let m = moments_from_cumulants(&CumulantSequence(kappa.to_vec()));
        for n in 1..=7 {
            let oracle = moment_by_nc_sum(&kappa, n);
            assert!((m.0[n - 1] - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn cumulant_examples() {
        let k = cumulants_from_moments(&MomentSequence(vec![1.0, 2.0, 5.0, 14.0]));
        assert_eq!(k.0, vec![1.0; 4]);
        let c = 3.0f64;
        let k = cumulants_from_moments(&MomentSequence(vec![c, c * c, c * c * c, c.powi(4)]));
        for (i, v) in k.0.iter().enumerate() {
            let expect = if i == 0 { c } else { 0.0 };
            assert!((v - expect).abs() < 1e-12);
        }
        // semicircle moments: brute force which kappa reproduces them
        let m = MomentSequence(vec![0.0, 1.0, 0.0, 2.0]);
        let k = cumulants_from_moments(&m);
        for n in 1..=4 {
            assert_eq!(moment_by_nc_sum(&k.0, n), m.0[n - 1]);
        }
        assert_eq!(k.0, vec![0.0, 1.0, 0.0, 0.0]);
    }

    fn compositions_oracle(kappa: &[f64], delta: &[f64], n: usize) -> f64 {
        // sum over k, over all (i_1..i_k) >= 0 with sum n-k
        fn rec(delta: &[f64], parts: usize, remaining: usize) -> f64 {
            if parts == 0 {
                return if remaining == 0 { 1.0 } else { 0.0 };
            }
            (0..=remaining).map(|i| delta[i] * rec(delta, parts - 1, remaining - i)).sum()
        }
        (1..=n).map(|k| kappa[k - 1] * rec(delta, k, n - k)).sum()
    }

    #[test]
    fn word_moment_examples() {
        let (c, d) = (1.5f64, 0.25f64);
        let kappa = CumulantSequence(vec![c, 0.0, 0.0]);
        let v = scalar_word_moment(&kappa, &[d, d, d], 2).unwrap();
        assert!((v - c * d).abs() < 1e-15);
        let ones = CumulantSequence(vec![1.0; 3]);
        let v = scalar_word_moment(&ones, &[1.0; 3], 3).unwrap();
        assert_eq!(v, compositions_oracle(&[1.0; 3], &[1.0; 3], 3));
        assert_eq!(v, 4.0);
        let v = scalar_word_moment(&CumulantSequence(vec![2.0]), &[0.5], 1).unwrap();
        assert_eq!(v, 1.0);
        let kappa = [0.3, 1.1, -0.4, 0.8, 0.2];
        let delta = [0.9, -0.2, 0.5, 1.3, 0.1];
        for n in 1..=5 {
            let v = scalar_word_moment(&CumulantSequence(kappa.to_vec()), &delta, n).unwrap();
            assert!((v - compositions_oracle(&kappa, &delta, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn word_moment_arity() {
        let err = scalar_word_moment(&CumulantSequence(vec![1.0]), &[1.0, 1.0], 2);
        assert!(matches!(err, Err(Error::Arity { .. })));
        let err = scalar_word_moment(&CumulantSequence(vec![1.0, 1.0]), &[1.0], 2);
        assert!(matches!(err, Err(Error::Arity { .. })));
    }

    #[test]
    fn hankel_check() {
        assert!(MomentSequence(vec![1.0, 2.0, 5.0, 14.0]).is_positive_definite_sequence(1e-12));
        assert!(!MomentSequence(vec![0.0, -1.0]).is_positive_definite_sequence(1e-12));
    }

    fn rational(num: i64, den: i64) -> BigRational {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn exact_roundtrip(parts in proptest::collection::vec((-20i64..20, 1i64..9), 1..=10)) {
            let kappa = CumulantSequence(parts.iter().map(|&(a, b)| rational(a, b)).collect());
            let back = cumulants_from_moments(&moments_from_cumulants(&kappa));
            prop_assert_eq!(back, kappa);
        }

        #[test]
        fn float_roundtrip(kappa in proptest::collection::vec(-2.0f64..2.0, 1..=10)) {
            let m = moments_from_cumulants(&CumulantSequence(kappa.clone()));
            let back = cumulants_from_moments(&m);
            for (a, b) in back.0.iter().zip(&kappa) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + m.0.iter().fold(0.0f64, |s, x| s.max(x.abs()))));
            }
        }
    }
}
