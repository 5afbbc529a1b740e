//! Label marginals and importance weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance within which a probability vector is silently renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-6;

/// A probability vector over the `k` class labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct LabelMarginal {
    probs: Vec<f64>,
}

impl LabelMarginal {
    /// Validates `probs`; vectors summing to within [`RENORMALIZE_TOL`] of 1
    /// are renormalized, anything further off is rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("label marginal"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidMarginal(format!("entry {p} is negative or non-finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::InvalidMarginal(format!("entries sum to {total}")));
        }
        let probs = probs.into_iter().map(|p| p / total).collect();
        Ok(Self { probs })
    }

    /// Normalizes arbitrary nonnegative masses.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMarginal(format!("masses sum to {total}")));
        }
        Self::new(masses.iter().map(|m| m / total).collect())
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, y: usize) -> f64 {
        self.probs[y]
    }

    /// Total variation distance.
    pub fn tv(&self, other: &LabelMarginal) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn l2(&self, other: &LabelMarginal) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Elementwise ratio `self / denom`, i.e. the weights shifting `denom` to `self`.
    pub fn ratio_to(&self, denom: &LabelMarginal, kind: ShiftKind) -> Result<ImportanceWeights> {
        let mut r = Vec::with_capacity(self.k());
        for (y, (&num, &den)) in self.probs.iter().zip(&denom.probs).enumerate() {
            if den == 0.0 {
                if num > 0.0 {
                    return Err(Error::SupportViolation { class: y });
                }
                r.push(0.0);
            } else {
                r.push(num / den);
            }
        }
        ImportanceWeights::new(r, kind)
    }
}

impl<'de> Deserialize<'de> for LabelMarginal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(d)?;
        LabelMarginal::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Empirical class frequencies of `labels`.
pub fn empirical_marginal(labels: &[usize], k: usize) -> Result<LabelMarginal> {
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let counts = class_counts(labels, k)?;
    let n = labels.len() as f64;
    Ok(LabelMarginal {
        probs: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

pub fn class_counts(labels: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; k];
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, k });
        }
        counts[y] += 1;
    }
    Ok(counts)
}

/// Which label shift a set of importance weights corrects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    SourceToTarget,
    SourceToMedial,
    MedialToTarget,
}

/// Per-class importance weights `r`, with `theta = r - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights {
    r: Vec<f64>,
    shift_kind: ShiftKind,
}

impl ImportanceWeights {
    pub fn new(r: Vec<f64>, shift_kind: ShiftKind) -> Result<Self> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("importance weights"));
        }
        if r.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidMarginal("negative importance weight".into()));
        }
        Ok(Self { r, shift_kind })
    }

    pub fn ones(k: usize, shift_kind: ShiftKind) -> Self {
        Self {
            r: vec![1.0; k],
            shift_kind,
        }
    }

    pub fn k(&self) -> usize {
        self.r.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.r
    }

    pub fn get(&self, y: usize) -> f64 {
        self.r[y]
    }

    pub fn shift_kind(&self) -> ShiftKind {
        self.shift_kind
    }

    pub fn with_kind(mut self, shift_kind: ShiftKind) -> Self {
        self.shift_kind = shift_kind;
        self
    }

    pub fn theta(&self) -> Vec<f64> {
        self.r.iter().map(|v| v - 1.0).collect()
    }

    pub fn theta_l2(&self) -> f64 {
        self.r.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>().sqrt()
    }

    pub fn theta_inf(&self) -> f64 {
        self.r.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn r_inf(&self) -> f64 {
        self.r.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_marginal_examples() {
        assert_eq!(empirical_marginal(&[0, 1, 1, 1], 2).unwrap().probs(), &[0.25, 0.75]);
        assert_eq!(empirical_marginal(&[0, 0, 0], 3).unwrap().probs(), &[1.0, 0.0, 0.0]);
        let m = empirical_marginal(&[0, 1, 2, 0, 1, 2], 3).unwrap();
        for p in m.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(matches!(empirical_marginal(&[], 2), Err(Error::Empty(_))));
        assert!(matches!(
            empirical_marginal(&[0, 3], 3),
            Err(Error::LabelOutOfRange { label: 3, k: 3 })
        ));
    }

    #[test]
    fn renormalizes_within_tolerance_only() {
        let m = LabelMarginal::new(vec![0.5, 0.5 + 5e-7]).unwrap();
        assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(LabelMarginal::new(vec![0.5, 0.51]).is_err());
        assert!(LabelMarginal::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn theta_norms() {
        let w = ImportanceWeights::new(vec![2.0, 0.5, 1.0], ShiftKind::SourceToTarget).unwrap();
        assert_eq!(w.theta(), vec![1.0, -0.5, 0.0]);
        assert!((w.theta_l2() - 1.25f64.sqrt()).abs() < 1e-15);
        assert_eq!(w.theta_inf(), 1.0);
        assert_eq!(w.r_inf(), 2.0);
        assert!(ImportanceWeights::new(vec![-0.1], ShiftKind::SourceToTarget).is_err());
        assert!(ImportanceWeights::new(vec![f64::NAN], ShiftKind::SourceToTarget).is_err());
    }

    #[test]
    fn ratio_support() {
        let src = LabelMarginal::new(vec![0.5, 0.5, 0.0]).unwrap();
        let trg = LabelMarginal::new(vec![0.2, 0.8, 0.0]).unwrap();
        let r = trg.ratio_to(&src, ShiftKind::SourceToTarget).unwrap();
        assert_eq!(r.as_slice(), &[0.4, 1.6, 0.0]);
        let bad = LabelMarginal::new(vec![0.2, 0.4, 0.4]).unwrap();
        assert!(matches!(
            bad.ratio_to(&src, ShiftKind::SourceToTarget),
            Err(Error::SupportViolation { class: 2 })
        ));
    }

    proptest::proptest! {
        #[test]
        fn empirical_marginal_is_valid(labels in proptest::collection::vec(0usize..5, 1..200)) {
            let m = empirical_marginal(&labels, 5).unwrap();
            proptest::prop_assert!(m.probs().iter().all(|&p| p >= 0.0));
            proptest::prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
