//! Kernel density estimators and the Nadaraya–Watson smoother with a
//! Student-t(2) kernel.
//!
//! Inputs are sorted before summation, so every estimate is exactly invariant
//! to the order of the points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// t(2) density at zero, 1/(2√2).
pub const T2_AT_ZERO: f64 = 0.353_553_390_593_273_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    StudentT2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn t2(bandwidth: f64) -> Result<KernelSpec> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidBandwidth(bandwidth));
        }
        Ok(KernelSpec {
            family: KernelFamily::StudentT2,
            bandwidth,
        })
    }

    /// Standard kernel K(u).
    pub fn kernel(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::StudentT2 => T2_AT_ZERO * (1.0 + 0.5 * u * u).powf(-1.5),
        }
    }

    /// K((r − r_j)/h)/h
    pub fn scaled(&self, delta: f64) -> f64 {
        self.kernel(delta / self.bandwidth) / self.bandwidth
    }
}

fn sorted_pairs(points: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = points.iter().copied().zip(values.iter().copied()).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

/// (1/(m h)) Σ K((r − r_j)/h)
pub fn kde(points: &[f64], spec: &KernelSpec, r: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut p = points.to_vec();
    p.sort_by(f64::total_cmp);
    Ok(p.iter().map(|&x| spec.scaled(r - x)).sum::<f64>() / p.len() as f64)
}

/// Σ_j C_j K_h(r − r_j) / Σ_j C_j
pub fn weighted_kde(points: &[f64], weights: &[f64], spec: &KernelSpec, r: f64) -> Result<f64> {
    WeightedSample::new(points, weights)?.density(spec, r)
}

/// Σ_j K(r − r_j) v_j / Σ_j K(r − r_j)
pub fn kernel_smooth(points: &[f64], values: &[f64], spec: &KernelSpec, r: f64) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if values.len() != points.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            found: values.len(),
        });
    }
    let pairs = sorted_pairs(points, values);
    let (mut num, mut den) = (0.0, 0.0);
    for (x, v) in pairs {
        let k = spec.kernel((r - x) / spec.bandwidth);
        num += k * v;
        den += k;
    }
    if den == 0.0 {
        return Err(Error::AllZeroWeights);
    }
    Ok(num / den)
}

/// Sorted points with nonnegative weights; repeated values may be merged by
/// the caller to speed up evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSample {
    points: Vec<f64>,
    weights: Vec<f64>,
    total: f64,
}

impl WeightedSample {
    pub fn new(points: &[f64], weights: &[f64]) -> Result<WeightedSample> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("kernel weights must be finite and nonnegative".into()));
        }
        let pairs = sorted_pairs(points, weights);
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(Error::AllZeroWeights);
        }
        Ok(WeightedSample {
            points: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
            total,
        })
    }

    /// Unit weights on each distinct value, weighted by multiplicity.
    pub fn from_values(values: &[f64]) -> Result<WeightedSample> {
        if values.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut points: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for x in v {
            if points.last() == Some(&x) {
                *weights.last_mut().unwrap() += 1.0;
            } else {
                points.push(x);
                weights.push(1.0);
            }
        }
        WeightedSample::new(&points, &weights)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn density(&self, spec: &KernelSpec, r: f64) -> Result<f64> {
        let s: f64 = self.points.iter().zip(&self.weights).map(|(&x, &w)| w * spec.scaled(r - x)).sum();
        Ok(s / self.total)
    }

    /// Weighted rule-of-thumb bandwidth of the sample.
    pub fn rule_of_thumb(&self) -> f64 {
        rule_of_thumb_weighted(&self.points, &self.weights)
    }
}

/// Linear-interpolation (type 7) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of a weighted sample with sorted points, treating weights
/// as multiplicities.
fn weighted_quantile(points: &[f64], weights: &[f64], total: f64, prob: f64) -> f64 {
    let h = (total - 1.0).max(0.0) * prob;
    let at = |pos: f64| {
        let mut cum = 0.0;
        for (x, w) in points.iter().zip(weights) {
            cum += w;
            if pos < cum {
                return *x;
            }
        }
        *points.last().unwrap()
    };
    let lo = h.floor();
    let (a, b) = (at(lo), at(lo + 1.0));
    a + (h - lo) * (b - a)
}

const FALLBACK_BANDWIDTH: f64 = 1e-3;

fn thumb(sd: f64, iqr: f64, m: f64) -> f64 {
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => return FALLBACK_BANDWIDTH,
    };
    0.9 * spread * m.powf(-0.2)
}

/// h = 0.9 · min(sd, IQR/1.34) · m^(−1/5); falls back to 1e-3 when the
/// points have no spread.
pub fn rule_of_thumb_bandwidth(points: &[f64]) -> f64 {
    let m = points.len();
    if m < 2 {
        return FALLBACK_BANDWIDTH;
    }
    let mut s = points.to_vec();
    s.sort_by(f64::total_cmp);
    if s[0] == s[m - 1] {
        return FALLBACK_BANDWIDTH;
    }
    let mean = s.iter().sum::<f64>() / m as f64;
    let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0)).sqrt();
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    thumb(sd, iqr, m as f64)
}

/// Rule of thumb with weights read as multiplicities (m = Σ w).
pub fn rule_of_thumb_weighted(points: &[f64], weights: &[f64]) -> f64 {
    let pairs = sorted_pairs(points, weights);
    let p: Vec<f64> = pairs.iter().map(|x| x.0).collect();
    let w: Vec<f64> = pairs.iter().map(|x| x.1).collect();
    let total: f64 = w.iter().sum();
    let spread = p.iter().zip(&w).filter(|x| *x.1 > 0.0).map(|x| *x.0);
    let (lo, hi) = spread.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
    if total <= 1.0 || lo == hi {
        return FALLBACK_BANDWIDTH;
    }
    let mean = p.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = p.iter().zip(&w).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / (total - 1.0);
    let iqr = weighted_quantile(&p, &w, total, 0.75) - weighted_quantile(&p, &w, total, 0.25);
    thumb(var.max(0.0).sqrt(), iqr, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_at_zero() {
        let spec = KernelSpec::t2(0.1).unwrap();
        assert!((kde(&[0.5], &spec, 0.5).unwrap() - T2_AT_ZERO / 0.1).abs() < 1e-12);
        assert!((T2_AT_ZERO - 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-16);
    }

    #[test]
    fn invalid_bandwidth() {
        assert!(KernelSpec::t2(0.0).is_err());
        assert!(KernelSpec::t2(f64::NAN).is_err());
    }

    #[test]
    fn weighted_two_point_example() {
        let spec = KernelSpec::t2(0.1).unwrap();
        let got = weighted_kde(&[0.2, 0.8], &[3.0, 1.0], &spec, 0.2).unwrap();
        let k0 = T2_AT_ZERO / 0.1;
        let k6 = T2_AT_ZERO * (1.0 + 0.5 * 36.0f64).powf(-1.5) / 0.1;
        assert!((got - (3.0 * k0 + k6) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_quantile_matches_expansion() {
        let pts = [0.1, 0.4, 0.9];
        let w = [2.0, 3.0, 1.0];
        let expanded = [0.1, 0.1, 0.4, 0.4, 0.4, 0.9];
        for &p in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            assert!((weighted_quantile(&pts, &w, 6.0, p) - quantile_sorted(&expanded, p)).abs() < 1e-15);
        }
        let a = rule_of_thumb_weighted(&pts, &w);
        let b = rule_of_thumb_bandwidth(&expanded);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn smoother_bounds() {
        let spec = KernelSpec::t2(1e-6).unwrap();
        let pts = [0.2, 0.5, 0.7];
        let v = [0.1, 0.9, 0.4];
        assert!((kernel_smooth(&pts, &v, &spec, 0.5).unwrap() - 0.9).abs() < 1e-9);
        assert!(matches!(kernel_smooth(&[], &[], &spec, 0.5), Err(Error::EmptyPointSet)));
    }

    #[test]
    fn zero_spread_fallback() {
        assert_eq!(rule_of_thumb_bandwidth(&[0.4, 0.4, 0.4]), FALLBACK_BANDWIDTH);
    }
}
