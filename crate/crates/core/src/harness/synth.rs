//! Gaussian-mixture data and Dirichlet label shifts.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::marginal::LabelMarginal;
use crate::rng::{RngStream, SeededRng};

const TAG_MEANS: u64 = 21;
const TAG_POINTS: u64 = 22;
const TAG_DIRICHLET: u64 = 23;
const TAG_RESAMPLE: u64 = 24;

/// Class means at distance `separation` from the origin: scaled basis
/// vectors when `k <= d`, random unit directions otherwise.
pub fn class_means(k: usize, d: usize, separation: f64, rng: &RngStream) -> Vec<Vec<f64>> {
    if k <= d {
        return (0..k)
            .map(|y| {
                let mut m = vec![0.0; d];
                m[y] = separation;
                m
            })
            .collect();
    }
    let mut g = rng.child(TAG_MEANS).rng();
    (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| g.sample(StandardNormal)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|a| a * separation / norm).collect()
        })
        .collect()
}

/// Draws `counts[y]` points of class `y` from `N(mean_y, I)`, in shuffled order.
pub fn gen_gaussian_class_counts(counts: &[usize], d: usize, separation: f64, rng: &RngStream) -> Result<Dataset> {
    let k = counts.len();
    if k < 2 || d == 0 {
        return Err(Error::Config(format!("need k >= 2 and d >= 1, got k = {k}, d = {d}")));
    }
    let means = class_means(k, d, separation, rng);
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(y, &c)| std::iter::repeat_n(y, c))
        .collect();
    let mut g = rng.child(TAG_POINTS).rng();
    labels.shuffle(&mut g);
    let mut features = Vec::with_capacity(labels.len() * d);
    for &y in &labels {
        for mj in &means[y] {
            let z: f64 = g.sample(StandardNormal);
            features.push(mj + z);
        }
    }
    Dataset::new(features, labels, d, k, "synthetic")
}

/// Isotropic Gaussian mixture with `n` points and class sizes balanced up
/// to rounding (the first `n mod k` classes get one extra).
pub fn gen_gaussian_mixture(k: usize, d: usize, n: usize, separation: f64, rng: &RngStream) -> Result<Dataset> {
    if n < k {
        return Err(Error::Config(format!("n = {n} is smaller than k = {k}")));
    }
    let counts: Vec<usize> = (0..k).map(|y| n / k + usize::from(y < n % k)).collect();
    gen_gaussian_class_counts(&counts, d, separation, rng)
}

/// Sample from `Dirichlet(alpha * 1_k)`.
///
/// Gamma variates are drawn in log space as `log Gamma(alpha + 1) + log(U) / alpha`
/// so that small `alpha` does not underflow to an all-zero vector.
pub fn sample_dirichlet(alpha: f64, k: usize, rng: &mut SeededRng) -> Result<LabelMarginal> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!("Dirichlet alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha + 1.0, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    let logs: Vec<f64> = (0..k)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            gamma.sample(rng).ln() + u.ln() / alpha
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let masses: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    LabelMarginal::from_masses(&masses)
}

/// Splits `total` slots by `p` with largest-remainder rounding.
pub fn apportion(p: &LabelMarginal, total: usize) -> Vec<usize> {
    crate::batched::largest_remainder_quotas(p, total)
}

#[derive(Debug, Clone)]
pub struct ShiftSplit {
    pub source: Dataset,
    pub target: Dataset,
    pub target_marginal: LabelMarginal,
    /// Base-dataset indices making up the target, duplicates included.
    pub target_indices: Vec<usize>,
    /// Whether any class had to be sampled with replacement.
    pub used_replacement: bool,
}

/// Draws `p ~ Dirichlet(alpha)` and resamples a target of size
/// `round(target_frac * n)` with class counts apportioned from `p`.
///
/// Classes are sampled without replacement while at least one example is
/// left behind for the source; any excess is drawn with replacement from
/// the examples already taken. Draws that would need a class with at most
/// one example are rejected and redrawn, up to 100 times.
pub fn dirichlet_shift_split(data: &Dataset, alpha: f64, rng: &RngStream, target_frac: f64) -> Result<ShiftSplit> {
    if !(target_frac > 0.0 && target_frac < 1.0) {
        return Err(Error::Config(format!("target_frac {target_frac} not in (0, 1)")));
    }
    let k = data.k();
    let m = (target_frac * data.n() as f64).round() as usize;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut g = rng.child(TAG_DIRICHLET).rng();
    let mut drawn = None;
    for _ in 0..100 {
        let p = sample_dirichlet(alpha, k, &mut g)?;
        let counts = apportion(&p, m);
        if counts
            .iter()
            .zip(&by_class)
            .all(|(&c, avail)| c == 0 || avail.len() > 1)
        {
            drawn = Some((p, counts));
            break;
        }
    }
    let Some((p, counts)) = drawn else {
        return Err(Error::InsufficientData(
            "no feasible Dirichlet draw in 100 attempts".into(),
        ));
    };

    let mut pick = rng.child(TAG_RESAMPLE).rng();
    let mut target_idx = Vec::with_capacity(m);
    let mut in_target = vec![false; data.n()];
    let mut used_replacement = false;
    for (members, &c) in by_class.iter_mut().zip(&counts) {
        if c == 0 {
            continue;
        }
        let distinct = c.min(members.len() - 1);
        let (chosen, _) = members.partial_shuffle(&mut pick, distinct);
        let chosen = chosen.to_vec();
        for &i in &chosen {
            in_target[i] = true;
        }
        target_idx.extend_from_slice(&chosen);
        for _ in distinct..c {
            used_replacement = true;
            target_idx.push(chosen[pick.random_range(0..chosen.len())]);
        }
    }
    target_idx.shuffle(&mut pick);
    let source_idx: Vec<usize> = (0..data.n()).filter(|&i| !in_target[i]).collect();
    Ok(ShiftSplit {
        source: data.subset(&source_idx, "source"),
        target: data.subset(&target_idx, "target"),
        target_marginal: p,
        target_indices: target_idx,
        used_replacement,
    })
}
