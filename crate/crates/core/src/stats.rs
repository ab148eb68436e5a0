//! Evaluation statistics: error metrics, rank test and effect size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("truth value is zero at index {0}")]
    ZeroTruth(usize),
    #[error("length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty sample")]
    Empty,
}

/// Mean absolute percentage error, as a fraction.
pub fn mape<T: Scalar>(pred: &[T], truth: &[T]) -> Result<T, StatsError> {
    if pred.len() != truth.len() {
        return Err(StatsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut acc = T::zero();
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if t == T::zero() {
            return Err(StatsError::ZeroTruth(i));
        }
        acc = acc + ((p - t) / t).abs();
    }
    Ok(acc / T::from_count(pred.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TvClass {
    Low,
    Ok,
    High,
}

impl TvClass {
    pub fn name(self) -> &'static str {
        match self {
            TvClass::Low => "low",
            TvClass::Ok => "ok",
            TvClass::High => "high",
        }
    }
}

pub fn classify_tv<T: Scalar>(value: T, range: (T, T)) -> TvClass {
    if value < range.0 {
        TvClass::Low
    } else if value > range.1 {
        TvClass::High
    } else {
        TvClass::Ok
    }
}

/// Fraction of matching labels.
pub fn accuracy<L: PartialEq>(pred: &[L], truth: &[L]) -> Result<f64, StatsError> {
    if pred.len() != truth.len() {
        return Err(StatsError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Midranks (1-based) of the values.
pub fn midranks<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut m = k;
        while m + 1 < idx.len() && xs[idx[m + 1]] == xs[idx[k]] {
            m += 1;
        }
        let r = T::from_count(k + m + 2) / T::lit(2.0);
        for &i in &idx[k..=m] {
            ranks[i] = r;
        }
        k = m + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney<T> {
    /// `U` of the first sample: `#{a > b} + ½·#{a = b}`.
    pub u: T,
    /// Two-sided p-value.
    pub p: T,
    pub exact: bool,
}

/// Largest pooled size for which the p-value is computed by enumeration.
pub const EXACT_LIMIT: usize = 16;

/// Two-sided Mann–Whitney U test with midranks.
pub fn mann_whitney<T: Scalar>(a: &[T], b: &[T]) -> Result<MannWhitney<T>, StatsError> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::Empty);
    }
    let pooled: Vec<T> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let r1: T = ranks[..n1].iter().copied().sum();
    let u = r1 - T::from_count(n1 * (n1 + 1)) / T::lit(2.0);
    let mu = T::from_count(n1 * n2) / T::lit(2.0);
    let n = n1 + n2;
    if n <= EXACT_LIMIT {
        let obs = (u - mu).abs();
        let tol = T::lit(1e-9);
        let base = T::from_count(n1 * (n1 + 1)) / T::lit(2.0);
        let (mut extreme, mut total) = (0u64, 0u64);
        for_each_subset(n, n1, &mut |sel: &[usize]| {
            let s: T = sel.iter().map(|&i| ranks[i]).sum();
            total += 1;
            if (s - base - mu).abs() >= obs - tol {
                extreme += 1;
            }
        });
        let p = T::from_count(extreme as usize) / T::from_count(total as usize);
        return Ok(MannWhitney { u, p: p.min(T::one()), exact: true });
    }
    let mut ties = T::zero();
    let mut sorted = pooled.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let mut k = 0;
    while k < n {
        let mut m = k;
        while m + 1 < n && sorted[m + 1] == sorted[k] {
            m += 1;
        }
        let t = T::from_count(m - k + 1);
        ties = ties + t * t * t - t;
        k = m + 1;
    }
    let nf = T::from_count(n);
    let var = T::from_count(n1 * n2) / T::lit(12.0) * ((nf + T::one()) - ties / (nf * (nf - T::one())));
    if var <= T::zero() {
        return Ok(MannWhitney { u, p: T::one(), exact: false });
    }
    let z = ((u - mu).abs() - T::lit(0.5)).max(T::zero()) / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let p = 2.0 * (1.0 - std.cdf(z.to_f64_lossy()));
    Ok(MannWhitney { u, p: T::lit(p.clamp(0.0, 1.0)), exact: false })
}

/// Call `f` on every size-`k` subset of `0..n` (lexicographic order).
pub fn for_each_subset(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EffectClass {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectClass {
    pub fn from_a12<T: Scalar>(a: T) -> Self {
        let m = a.max(T::one() - a);
        if m >= T::lit(0.71) {
            Self::Large
        } else if m >= T::lit(0.64) {
            Self::Medium
        } else if m >= T::lit(0.56) {
            Self::Small
        } else {
            Self::Negligible
        }
    }

    pub fn letter(self) -> char {
        match self {
            Self::Negligible => 'N',
            Self::Small => 'S',
            Self::Medium => 'M',
            Self::Large => 'L',
        }
    }
}

/// Vargha–Delaney `Â12`: probability that a draw from `a` exceeds one from `b`.
pub fn a12<T: Scalar>(a: &[T], b: &[T]) -> Result<(T, EffectClass), StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut wins = T::zero();
    let half = T::lit(0.5);
    for &x in a {
        for &y in b {
            if x > y {
                wins = wins + T::one();
            } else if x == y {
                wins = wins + half;
            }
        }
    }
    let v = wins / T::from_count(a.len() * b.len());
    Ok((v, EffectClass::from_a12(v)))
}
