//! Per-run logs shared by the streaming and batched learners.

use std::collections::BTreeMap;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::ImportanceWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Labels acquired so far, excluding the warm start.
    pub labels_spent: usize,
    /// Pool indices whose labels were acquired during this round.
    pub queried_ids: Vec<usize>,
    pub metrics: BTreeMap<String, f64>,
    /// Importance weights in force at the end of the round.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub r: Vec<f64>,
}

/// Where every datapoint drawn from the unlabeled pool went.
///
/// `queried + rejected + holdout + filtered_out == drawn` always holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAccounting {
    pub budget: usize,
    pub drawn: usize,
    pub filtered_out: usize,
    pub holdout: usize,
    pub queried: usize,
    pub rejected: usize,
}

impl LabelAccounting {
    pub fn labels_spent(&self) -> usize {
        self.holdout + self.queried
    }

    pub fn balanced(&self) -> bool {
        self.queried + self.rejected + self.holdout + self.filtered_out == self.drawn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub rounds: Vec<RoundRecord>,
    pub final_weights: ImportanceWeights,
    pub accounting: LabelAccounting,
    pub config_echo: serde_json::Value,
}

impl RunResult {
    /// Checks the run-level invariants: monotone label spend, disjoint query
    /// sets, balanced accounting and spend within budget.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let mut last = 0;
        for round in &self.rounds {
            if round.labels_spent < last {
                return Err(Error::Config(format!(
                    "labels_spent decreased at round {}",
                    round.round
                )));
            }
            last = round.labels_spent;
            for &i in &round.queried_ids {
                if !seen.insert(i) {
                    return Err(Error::Config(format!("index {i} queried twice")));
                }
            }
        }
        if !self.accounting.balanced() {
            return Err(Error::Config(format!("unbalanced accounting: {:?}", self.accounting)));
        }
        if self.accounting.labels_spent() > self.accounting.budget {
            return Err(Error::Config(format!(
                "spent {} labels over budget {}",
                self.accounting.labels_spent(),
                self.accounting.budget
            )));
        }
        Ok(())
    }

    /// All pool indices acquired, in acquisition order.
    pub fn queried_ids(&self) -> Vec<usize> {
        self.rounds.iter().flat_map(|r| r.queried_ids.iter().copied()).collect()
    }

    pub fn final_metrics(&self) -> Option<&BTreeMap<String, f64>> {
        self.rounds.last().map(|r| &r.metrics)
    }
}
