//! Medial distributions and proxy-label subsampling.
//!
//! A medial marginal `P_med` sits between source and target: subsampling by
//! predicted label moves the source to `P_med`, and importance weights move
//! `P_med` to the target. Two subsamplers are provided, a per-item rejection
//! filter and a fixed-quota buffer; both only ever look at proxy labels.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::LabelMarginal;
use crate::rng::{RngStream, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MedialPolicy {
    Uniform,
    SquareRoot,
    Target,
    Source,
    Custom { marginal: LabelMarginal },
}

impl MedialPolicy {
    pub fn is_source(&self) -> bool {
        matches!(self, MedialPolicy::Source)
    }
}

fn check_support(p_src: &LabelMarginal, other: &LabelMarginal) -> Result<()> {
    if p_src.k() != other.k() {
        return Err(Error::DimensionMismatch {
            expected: p_src.k(),
            got: other.k(),
        });
    }
    for y in 0..p_src.k() {
        if other.get(y) > 0.0 && p_src.get(y) <= 0.0 {
            return Err(Error::SupportViolation { class: y });
        }
    }
    Ok(())
}

/// Resolves a policy into a concrete medial marginal.
///
/// The square-root medial splits the shift evenly: `r_{s->m} = r_{m->t} =
/// sqrt(r_{s->t})`, i.e. `P_med ∝ sqrt(P_src * P_trg)`.
pub fn make_medial(policy: &MedialPolicy, p_src: &LabelMarginal, p_trg: &LabelMarginal) -> Result<LabelMarginal> {
    check_support(p_src, p_trg)?;
    match policy {
        MedialPolicy::Uniform => Ok(LabelMarginal::uniform(p_src.k())),
        MedialPolicy::Target => Ok(p_trg.clone()),
        MedialPolicy::Source => Ok(p_src.clone()),
        MedialPolicy::SquareRoot => {
            let masses: Vec<f64> = p_src
                .probs()
                .iter()
                .zip(p_trg.probs())
                .map(|(&s, &t)| if s > 0.0 { s * (t / s).sqrt() } else { 0.0 })
                .collect();
            LabelMarginal::from_masses(&masses)
        }
        MedialPolicy::Custom { marginal } => {
            check_support(p_src, marginal)?;
            Ok(marginal.clone())
        }
    }
}

/// Per-class acceptance probabilities for rejection subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleFilter {
    accept_probs: Vec<f64>,
    /// Identifies the proxy-label predictor the filter is meant for.
    pub predictor_id: String,
}

impl SubsampleFilter {
    pub fn new(accept_probs: Vec<f64>, predictor_id: impl Into<String>) -> Result<Self> {
        if accept_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("acceptance probabilities must lie in [0, 1]".into()));
        }
        let max = accept_probs.iter().copied().fold(0.0, f64::max);
        if (max - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "largest acceptance probability is {max}, expected 1"
            )));
        }
        Ok(Self {
            accept_probs,
            predictor_id: predictor_id.into(),
        })
    }

    pub fn accept_all(k: usize) -> Self {
        Self {
            accept_probs: vec![1.0; k],
            predictor_id: String::new(),
        }
    }

    pub fn accept_probs(&self) -> &[f64] {
        &self.accept_probs
    }

    /// Flips the acceptance coin for an item with proxy label `proxy`.
    /// Probabilities of exactly 0 or 1 consume no randomness.
    pub fn accept(&self, proxy: usize, rng: &mut SeededRng) -> bool {
        let p = self.accept_probs[proxy];
        if p >= 1.0 {
            true
        } else if p <= 0.0 {
            false
        } else {
            rng.random::<f64>() < p
        }
    }
}

/// Acceptance `P_ss(y) ∝ P_med(y) / P_src(y)`, scaled so the largest is 1.
pub fn make_filter(p_src: &LabelMarginal, p_med: &LabelMarginal) -> Result<SubsampleFilter> {
    check_support(p_src, p_med)?;
    let ratios: Vec<f64> = p_src
        .probs()
        .iter()
        .zip(p_med.probs())
        .map(|(&s, &m)| if s > 0.0 { m / s } else { 0.0 })
        .collect();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let mut accept: Vec<f64> = ratios.iter().map(|r| r / max).collect();
    // Guard the argmax against rounding so the filter invariant holds exactly.
    if let Some(i) = ratios.iter().position(|&r| r == max) {
        accept[i] = 1.0;
    }
    SubsampleFilter::new(accept, "")
}

/// Rejection-subsamples an ordered stream of item indices, returning up to
/// `want` accepted indices in stream order.
pub fn filter_subsample(
    stream: impl IntoIterator<Item = usize>,
    proxy_labels: &[usize],
    filter: &SubsampleFilter,
    rng: &RngStream,
    want: usize,
) -> Vec<usize> {
    let mut rng = rng.rng();
    let mut out = Vec::with_capacity(want.min(proxy_labels.len()));
    if want == 0 {
        return out;
    }
    for i in stream {
        if filter.accept(proxy_labels[i], &mut rng) {
            out.push(i);
            if out.len() == want {
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSample {
    /// Selected indices, ascending.
    pub indices: Vec<usize>,
    /// Classes whose quota exceeded the available items, with the missing count.
    pub shortfall: BTreeMap<usize, usize>,
}

/// Fixed-quota subsampling: for every class `y`, draws
/// `round_half_even(n_select * P_med(y))` items uniformly without replacement
/// among those with proxy label `y`. Missing items are reported, not refilled.
pub fn buffer_subsample(
    proxy_labels: &[usize],
    p_med: &LabelMarginal,
    n_select: usize,
    rng: &RngStream,
) -> Result<BufferSample> {
    let k = p_med.k();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in proxy_labels.iter().enumerate() {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, k });
        }
        by_class[y].push(i);
    }
    let mut rng = rng.rng();
    let mut indices = Vec::new();
    let mut shortfall = BTreeMap::new();
    for (y, members) in by_class.iter_mut().enumerate() {
        let quota = (n_select as f64 * p_med.get(y)).round_ties_even() as usize;
        if quota == 0 {
            continue;
        }
        let take = quota.min(members.len());
        if take < quota {
            shortfall.insert(y, quota - take);
        }
        let (chosen, _) = members.partial_shuffle(&mut rng, take);
        indices.extend_from_slice(chosen);
    }
    indices.sort_unstable();
    Ok(BufferSample { indices, shortfall })
}

/// Mean acceptance rate of `filter` under `p_src`.
pub fn expected_yield_rate(p_src: &LabelMarginal, filter: &SubsampleFilter) -> f64 {
    p_src
        .probs()
        .iter()
        .zip(filter.accept_probs())
        .map(|(p, a)| p * a)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[f64]) -> LabelMarginal {
        LabelMarginal::new(v.to_vec()).unwrap()
    }

    #[test]
    fn medial_examples() {
        let u = make_medial(&MedialPolicy::Uniform, &m(&[0.1, 0.2, 0.3, 0.4]), &m(&[0.25; 4])).unwrap();
        assert_eq!(u.probs(), &[0.25; 4]);

        let src = m(&[0.2, 0.8]);
        let trg = m(&[0.8, 0.2]);
        let sq = make_medial(&MedialPolicy::SquareRoot, &src, &trg).unwrap();
        assert!((sq.get(0) - 0.5).abs() < 1e-12 && (sq.get(1) - 0.5).abs() < 1e-12);

        assert_eq!(make_medial(&MedialPolicy::Target, &src, &trg).unwrap(), trg);
        assert_eq!(make_medial(&MedialPolicy::Source, &src, &trg).unwrap(), src);

        let err = make_medial(&MedialPolicy::Uniform, &m(&[1.0, 0.0]), &m(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::SupportViolation { class: 1 }));
    }

    #[test]
    fn filter_examples() {
        let f = make_filter(&m(&[0.8, 0.2]), &m(&[0.5, 0.5])).unwrap();
        assert!((f.accept_probs()[0] - 0.25).abs() < 1e-12);
        assert_eq!(f.accept_probs()[1], 1.0);

        let f = make_filter(&m(&[0.3, 0.7]), &m(&[0.3, 0.7])).unwrap();
        assert_eq!(f.accept_probs(), &[1.0, 1.0]);

        let f = make_filter(&m(&[0.5, 0.5]), &m(&[1.0, 0.0])).unwrap();
        assert_eq!(f.accept_probs(), &[1.0, 0.0]);

        assert!(make_filter(&m(&[1.0, 0.0]), &m(&[0.5, 0.5])).is_err());
        assert!(SubsampleFilter::new(vec![0.5, 0.5], "").is_err());
    }

    #[test]
    fn filter_subsample_examples() {
        let rng = RngStream::from_seed(3);
        let all = SubsampleFilter::accept_all(2);
        assert_eq!(filter_subsample(0..5, &[0, 1, 0, 1, 1], &all, &rng, 3), vec![0, 1, 2]);

        let none = SubsampleFilter {
            accept_probs: vec![0.0, 0.0],
            predictor_id: String::new(),
        };
        assert!(filter_subsample(0..5, &[0, 1, 0, 1, 1], &none, &rng, 3).is_empty());

        // Stream shorter than want: short return.
        assert_eq!(filter_subsample(0..2, &[0, 1], &all, &rng, 10), vec![0, 1]);
    }

    #[test]
    fn buffer_examples() {
        let rng = RngStream::from_seed(5);
        let proxies = [0, 1, 0, 1, 0, 1];
        let s = buffer_subsample(&proxies, &m(&[0.5, 0.5]), 4, &rng).unwrap();
        let counts =
            crate::marginal::class_counts(&s.indices.iter().map(|&i| proxies[i]).collect::<Vec<_>>(), 2).unwrap();
        assert_eq!(counts, vec![2, 2]);
        assert!(s.shortfall.is_empty());

        let s = buffer_subsample(&proxies, &m(&[1.0, 0.0]), 3, &rng).unwrap();
        assert!(s.indices.iter().all(|&i| proxies[i] == 0));
        assert_eq!(s.indices.len(), 3);

        let mut proxies = vec![0; 5];
        proxies.extend(vec![1; 10]);
        let s = buffer_subsample(&proxies, &m(&[0.7, 0.3]), 10, &rng).unwrap();
        let zeros = s.indices.iter().filter(|&&i| proxies[i] == 0).count();
        assert_eq!(zeros, 5);
        assert_eq!(s.indices.len() - zeros, 3);
        assert_eq!(s.shortfall, BTreeMap::from([(0, 2)]));
    }

    #[test]
    fn buffer_rounds_half_to_even() {
        let rng = RngStream::from_seed(1);
        let proxies: Vec<usize> = (0..40).map(|i| i % 2).collect();
        // 5 * 0.5 = 2.5 rounds to 2 for both classes.
        let s = buffer_subsample(&proxies, &m(&[0.5, 0.5]), 5, &rng).unwrap();
        assert_eq!(s.indices.len(), 4);
    }

    #[test]
    fn yield_examples() {
        assert_eq!(
            expected_yield_rate(&m(&[0.3, 0.7]), &SubsampleFilter::accept_all(2)),
            1.0
        );
        let f = make_filter(&m(&[0.8, 0.2]), &m(&[0.5, 0.5])).unwrap();
        assert!((expected_yield_rate(&m(&[0.8, 0.2]), &f) - 0.4).abs() < 1e-12);
    }
}
