//! Warm / unlabeled / test splits under the four shift regimes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::marginal::LabelMarginal;
use crate::rng::RngStream;

use super::synth::{apportion, sample_dirichlet};

const TAG_MARGINALS: u64 = 31;
const TAG_PARTITION: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Warm start shifted; unlabeled pool and test share one marginal.
    Canonical,
    /// Warm, pool and test all differ.
    General,
    /// Imbalanced pool (and warm start), uniform test.
    ImbalancedSource,
    /// Uniform pool (and warm start), imbalanced test.
    ImbalancedTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMarginals {
    pub warm: LabelMarginal,
    pub ulb: LabelMarginal,
    pub test: LabelMarginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenario {
    pub kind: ScenarioKind,
    /// Dirichlet concentration for drawn marginals.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Fixed marginals, used instead of Dirichlet draws.
    #[serde(default)]
    pub marginals: Option<SplitMarginals>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub warm: usize,
    pub ulb: usize,
    pub test: usize,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub warm: Dataset,
    pub ulb: Dataset,
    pub test: Dataset,
    pub true_marginals: BTreeMap<String, LabelMarginal>,
}

impl ShiftScenario {
    pub fn validate(&self, k: usize) -> Result<()> {
        if let Some(m) = &self.marginals {
            for p in [&m.warm, &m.ulb, &m.test] {
                if p.k() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: p.k(),
                    });
                }
            }
            if self.kind == ScenarioKind::Canonical && m.ulb != m.test {
                return Err(Error::Config(
                    "canonical scenario needs identical ulb and test marginals".into(),
                ));
            }
        } else {
            match self.alpha {
                Some(a) if a > 0.0 && a.is_finite() => {}
                _ => {
                    return Err(Error::Config(
                        "scenario needs a positive alpha or explicit marginals".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Resolves the three split marginals.
    pub fn draw_marginals(&self, k: usize, rng: &RngStream) -> Result<SplitMarginals> {
        self.validate(k)?;
        if let Some(m) = &self.marginals {
            return Ok(m.clone());
        }
        let alpha = self.alpha.expect("validated");
        let mut g = rng.child(TAG_MARGINALS).rng();
        let uniform = LabelMarginal::uniform(k);
        Ok(match self.kind {
            ScenarioKind::Canonical => {
                let warm = sample_dirichlet(alpha, k, &mut g)?;
                let shared = sample_dirichlet(alpha, k, &mut g)?;
                SplitMarginals {
                    warm,
                    ulb: shared.clone(),
                    test: shared,
                }
            }
            ScenarioKind::General => SplitMarginals {
                warm: sample_dirichlet(alpha, k, &mut g)?,
                ulb: sample_dirichlet(alpha, k, &mut g)?,
                test: sample_dirichlet(alpha, k, &mut g)?,
            },
            ScenarioKind::ImbalancedSource => {
                let src = sample_dirichlet(alpha, k, &mut g)?;
                SplitMarginals {
                    warm: src.clone(),
                    ulb: src,
                    test: uniform,
                }
            }
            ScenarioKind::ImbalancedTarget => SplitMarginals {
                warm: uniform.clone(),
                ulb: uniform,
                test: sample_dirichlet(alpha, k, &mut g)?,
            },
        })
    }
}

/// Per-class example counts `[warm, ulb, test]` for each class.
pub fn split_counts(m: &SplitMarginals, sizes: &SplitSizes) -> Vec<[usize; 3]> {
    let w = apportion(&m.warm, sizes.warm);
    let u = apportion(&m.ulb, sizes.ulb);
    let t = apportion(&m.test, sizes.test);
    (0..w.len()).map(|y| [w[y], u[y], t[y]]).collect()
}

/// Examples per class needed to realize `m` at `sizes`.
pub fn required_per_class(m: &SplitMarginals, sizes: &SplitSizes) -> Vec<usize> {
    split_counts(m, sizes).iter().map(|c| c.iter().sum()).collect()
}

/// Partitions `base` into disjoint warm / ulb / test splits with exactly the
/// given per-class counts.
pub fn partition_by_counts(
    base: &Dataset,
    counts: &[[usize; 3]],
    rng: &RngStream,
) -> Result<(Dataset, Dataset, Dataset)> {
    let k = base.k();
    if counts.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: counts.len(),
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in base.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut g = rng.child(TAG_PARTITION).rng();
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (y, members) in by_class.iter_mut().enumerate() {
        let need: usize = counts[y].iter().sum();
        if need > members.len() {
            return Err(Error::InsufficientData(format!(
                "class {y} needs {need} examples, base has {}",
                members.len()
            )));
        }
        members.shuffle(&mut g);
        let mut at = 0;
        for (part, &c) in parts.iter_mut().zip(&counts[y]) {
            part.extend_from_slice(&members[at..at + c]);
            at += c;
        }
    }
    for p in parts.iter_mut() {
        p.shuffle(&mut g);
    }
    Ok((
        base.subset(&parts[0], "warm"),
        base.subset(&parts[1], "ulb"),
        base.subset(&parts[2], "test"),
    ))
}

/// Builds the three splits of `scenario` from `base`.
pub fn make_scenario(
    base: &Dataset,
    scenario: &ShiftScenario,
    sizes: &SplitSizes,
    rng: &RngStream,
) -> Result<Scenario> {
    let m = scenario.draw_marginals(base.k(), rng)?;
    let counts = split_counts(&m, sizes);
    let (warm, ulb, test) = partition_by_counts(base, &counts, rng)?;
    let true_marginals = BTreeMap::from([
        ("warm".to_string(), m.warm),
        ("ulb".to_string(), m.ulb),
        ("test".to_string(), m.test),
    ]);
    Ok(Scenario {
        warm,
        ulb,
        test,
        true_marginals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::gen_gaussian_mixture;

    fn m(v: &[f64]) -> LabelMarginal {
        LabelMarginal::new(v.to_vec()).unwrap()
    }

    #[test]
    fn explicit_general_marginals() {
        let base = gen_gaussian_mixture(2, 2, 12_000, 1.0, &RngStream::from_seed(0)).unwrap();
        let sc = ShiftScenario {
            kind: ScenarioKind::General,
            alpha: None,
            marginals: Some(SplitMarginals {
                warm: m(&[0.7, 0.3]),
                ulb: m(&[0.5, 0.5]),
                test: m(&[0.2, 0.8]),
            }),
        };
        let sizes = SplitSizes {
            warm: 2000,
            ulb: 2000,
            test: 2000,
        };
        let s = make_scenario(&base, &sc, &sizes, &RngStream::from_seed(1)).unwrap();
        assert!(s.warm.marginal().unwrap().tv(&m(&[0.7, 0.3])) < 0.05);
        assert!(s.ulb.marginal().unwrap().tv(&m(&[0.5, 0.5])) < 0.05);
        assert!(s.test.marginal().unwrap().tv(&m(&[0.2, 0.8])) < 0.05);
    }

    #[test]
    fn insufficient_data_errors() {
        let base = gen_gaussian_mixture(2, 2, 20, 1.0, &RngStream::from_seed(0)).unwrap();
        let sc = ShiftScenario {
            kind: ScenarioKind::ImbalancedTarget,
            alpha: Some(1.0),
            marginals: None,
        };
        let sizes = SplitSizes {
            warm: 10,
            ulb: 10,
            test: 10,
        };
        assert!(matches!(
            make_scenario(&base, &sc, &sizes, &RngStream::from_seed(1)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn canonical_requires_shared_marginal() {
        let sc = ShiftScenario {
            kind: ScenarioKind::Canonical,
            alpha: None,
            marginals: Some(SplitMarginals {
                warm: m(&[0.5, 0.5]),
                ulb: m(&[0.4, 0.6]),
                test: m(&[0.6, 0.4]),
            }),
        };
        assert!(sc.validate(2).is_err());
    }
}
