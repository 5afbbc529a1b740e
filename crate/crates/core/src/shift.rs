//! Black-box label shift estimation.
//!
//! Given a fixed predictor `h`, the joint confusion matrix `C[i][j] =
//! P_src(h(X) = i, Y = j)` and the target prediction marginal `q[i] =
//! P_trg(h(X) = i)` satisfy `C r = q`, where `r = P_trg / P_src`. [`solve_bbse`]
//! inverts `C` directly; [`solve_rlls`] solves a ridge system in
//! `theta = r - 1` that shrinks the estimate toward uniform weights.
//!
//! The module also evaluates the estimation-error bound that trades the
//! importance-weighting variance against subsampling bias. Hidden constants
//! are taken as 1, so the numbers are only meaningful relative to each other.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::{ImportanceWeights, LabelMarginal, ShiftKind};

/// Smallest singular value below which `C` is treated as singular.
pub const SIGMA_MIN_THRESHOLD: f64 = 1e-6;

/// Default ridge constant for [`solve_rlls`].
pub const DEFAULT_LAMBDA_REG: f64 = 2e-6;

/// Ridge strength used by the active learners, which estimate weights from
/// a few hundred labels; about the squared column mass of a balanced
/// 10-class confusion matrix.
pub const SMALL_SAMPLE_LAMBDA_REG: f64 = 1e-2;

/// Joint confusion matrix, row = predicted class, column = true class.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    c: DMatrix<f64>,
    n_used: usize,
}

impl ConfusionMatrix {
    /// Wraps an explicit `k x k` matrix (rows are predictions).
    pub fn from_rows(rows: &[Vec<f64>], n_used: usize) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::Empty("confusion matrix"));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: r.len(),
            });
        }
        let c = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("confusion matrix"));
        }
        Ok(Self { c, n_used })
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_used(&self) -> usize {
        self.n_used
    }

    pub fn get(&self, pred: usize, label: usize) -> f64 {
        self.c[(pred, label)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k()).map(|i| self.c.row(i).iter().copied().collect()).collect()
    }

    /// Column sums, which equal the empirical source label marginal.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.k()).map(|j| self.c.column(j).sum()).collect()
    }

    pub fn sigma_min(&self) -> f64 {
        sigma_min(self)
    }
}

/// Empirical `C` from labeled source predictions and `q` from target predictions.
pub fn build_shift_inputs(
    source_preds: &[usize],
    source_labels: &[usize],
    target_preds: &[usize],
    k: usize,
) -> Result<(ConfusionMatrix, LabelMarginal)> {
    if source_preds.is_empty() || target_preds.is_empty() {
        return Err(Error::Empty("shift estimation inputs"));
    }
    if source_preds.len() != source_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: source_preds.len(),
            got: source_labels.len(),
        });
    }
    let n = source_preds.len();
    let mut counts = DMatrix::<f64>::zeros(k, k);
    for (&p, &y) in source_preds.iter().zip(source_labels) {
        if p >= k {
            return Err(Error::LabelOutOfRange { label: p, k });
        }
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, k });
        }
        counts[(p, y)] += 1.0;
    }
    let c = counts / n as f64;
    let q = crate::marginal::empirical_marginal(target_preds, k)?;
    Ok((ConfusionMatrix { c, n_used: n }, q))
}

/// Smallest singular value of `C`.
pub fn sigma_min(c: &ConfusionMatrix) -> f64 {
    c.c.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

fn check_q(c: &ConfusionMatrix, q: &LabelMarginal) -> Result<()> {
    if q.k() != c.k() {
        return Err(Error::DimensionMismatch {
            expected: c.k(),
            got: q.k(),
        });
    }
    Ok(())
}

/// `r = C^{-1} q`, clamped at zero.
pub fn solve_bbse(c: &ConfusionMatrix, q: &LabelMarginal) -> Result<ImportanceWeights> {
    check_q(c, q)?;
    let s = sigma_min(c);
    if s <= SIGMA_MIN_THRESHOLD {
        return Err(Error::IllConditioned { sigma_min: s });
    }
    let b = DVector::from_column_slice(q.probs());
    let r =
        c.c.clone()
            .lu()
            .solve(&b)
            .ok_or(Error::IllConditioned { sigma_min: s })?;
    clamp_weights(r.iter().copied())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RllsOptions {
    pub lambda_reg: f64,
    /// Rescale the clamped weights so `sum_y r(y) * P_src(y) = 1`.
    pub renormalize: bool,
}

impl Default for RllsOptions {
    fn default() -> Self {
        Self {
            lambda_reg: DEFAULT_LAMBDA_REG,
            renormalize: false,
        }
    }
}

/// Ridge-regularized weights: solves `(C^T C + lambda I) theta = C^T (q - C 1)`
/// and returns `max(0, 1 + theta)`.
pub fn solve_rlls(c: &ConfusionMatrix, q: &LabelMarginal, lambda_reg: f64) -> Result<ImportanceWeights> {
    solve_rlls_with(
        c,
        q,
        &RllsOptions {
            lambda_reg,
            renormalize: false,
        },
    )
}

pub fn solve_rlls_with(c: &ConfusionMatrix, q: &LabelMarginal, opts: &RllsOptions) -> Result<ImportanceWeights> {
    check_q(c, q)?;
    if !opts.lambda_reg.is_finite() || opts.lambda_reg < 0.0 {
        return Err(Error::NonFinite("lambda_reg"));
    }
    let k = c.k();
    let ones = DVector::from_element(k, 1.0);
    let qv = DVector::from_column_slice(q.probs());
    let ct = c.c.transpose();
    let a = &ct * &c.c + DMatrix::identity(k, k) * opts.lambda_reg;
    let b = &ct * (qv - &c.c * &ones);
    let theta = match a.clone().cholesky() {
        Some(chol) => chol.solve(&b),
        None => a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|_| Error::NonFinite("ridge system"))?,
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge solution"));
    }
    let mut r = clamp_weights(theta.iter().map(|t| 1.0 + t))?;
    if opts.renormalize {
        let mass: f64 = r.as_slice().iter().zip(c.column_sums()).map(|(r, p)| r * p).sum();
        if mass > 0.0 {
            r = ImportanceWeights::new(
                r.as_slice().iter().map(|v| v / mass).collect(),
                ShiftKind::SourceToTarget,
            )?;
        }
    }
    Ok(r)
}

fn clamp_weights(values: impl Iterator<Item = f64>) -> Result<ImportanceWeights> {
    ImportanceWeights::new(values.map(|v| v.max(0.0)).collect(), ShiftKind::SourceToTarget)
}

/// A solved weight estimate together with its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEstimate {
    pub confusion: ConfusionMatrix,
    pub q: LabelMarginal,
    pub r: ImportanceWeights,
    pub sigma_min: f64,
    pub lambda_reg: f64,
}

#[derive(Serialize, Deserialize)]
struct ShiftEstimateWire {
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    q: Vec<f64>,
    r: Vec<f64>,
    sigma_min: f64,
    lambda_reg: f64,
}

impl Serialize for ShiftEstimate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ShiftEstimateWire {
            c: self.confusion.rows(),
            q: self.q.probs().to_vec(),
            r: self.r.as_slice().to_vec(),
            sigma_min: self.sigma_min,
            lambda_reg: self.lambda_reg,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ShiftEstimate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = ShiftEstimateWire::deserialize(d)?;
        let confusion = ConfusionMatrix::from_rows(&w.c, 0).map_err(D::Error::custom)?;
        Ok(ShiftEstimate {
            confusion,
            q: LabelMarginal::new(w.q).map_err(D::Error::custom)?,
            r: ImportanceWeights::new(w.r, ShiftKind::SourceToTarget).map_err(D::Error::custom)?,
            sigma_min: w.sigma_min,
            lambda_reg: w.lambda_reg,
        })
    }
}

/// Builds `C` and `q` from predictions and solves with RLLS.
pub fn estimate_shift(
    source_preds: &[usize],
    source_labels: &[usize],
    target_preds: &[usize],
    k: usize,
    opts: &RllsOptions,
) -> Result<ShiftEstimate> {
    let (confusion, q) = build_shift_inputs(source_preds, source_labels, target_preds, k)?;
    let r = solve_rlls_with(&confusion, &q, opts)?;
    let sigma_min = confusion.sigma_min();
    Ok(ShiftEstimate {
        confusion,
        q,
        r,
        sigma_min,
        lambda_reg: opts.lambda_reg,
    })
}

/// Inputs to [`tradeoff_bound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// `||theta_{m->t}||_2`, shift left for importance weighting.
    pub theta_mt_l2: f64,
    /// `||theta_{s->m}||_inf`, shift absorbed by subsampling.
    pub theta_sm_inf: f64,
    pub sigma_min: f64,
    /// Importance-weighted 0/1 error of the black-box predictor, `err(h0, r_{m->t})`.
    pub blackbox_weighted_err: f64,
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    /// Unlabeled target sample size; `None` means unlimited.
    pub n_prime: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub iw_variance_term: f64,
    pub sampling_variance_term: f64,
    pub finite_target_term: f64,
    pub subsample_bias_term: f64,
    pub total: f64,
    pub inputs_echo: BoundInputs,
}

/// Evaluates the four summands of the estimation-error bound, each scaled
/// by `2 / sigma_min`:
///
/// ```text
/// ||theta_mt||_2 sqrt(log(nk/delta)/n),  sqrt(log(n/delta)/n),
/// sqrt(log(n/delta)/n'),                 ||theta_sm||_inf err(h0, r_mt)
/// ```
pub fn tradeoff_bound(inputs: BoundInputs) -> Result<BoundTerms> {
    let BoundInputs {
        theta_mt_l2,
        theta_sm_inf,
        sigma_min,
        blackbox_weighted_err,
        n,
        k,
        delta,
        n_prime,
    } = inputs;
    if !(sigma_min > 0.0) {
        return Err(Error::Config(format!("sigma_min must be positive, got {sigma_min}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if [theta_mt_l2, theta_sm_inf, blackbox_weighted_err]
        .iter()
        .any(|v| !v.is_finite() || *v < 0.0)
    {
        return Err(Error::Config("bound inputs must be finite and nonnegative".into()));
    }
    let scale = 2.0 / sigma_min;
    let nf = n as f64;
    let log_nk = (nf * k as f64 / delta).ln();
    let log_n = (nf / delta).ln();
    let iw_variance_term = scale * theta_mt_l2 * (log_nk / nf).sqrt();
    let sampling_variance_term = scale * (log_n / nf).sqrt();
    let finite_target_term = match n_prime {
        Some(np) if np > 0 => scale * (log_n / np as f64).sqrt(),
        Some(_) => return Err(Error::Config("n_prime must be at least 1".into())),
        None => 0.0,
    };
    let subsample_bias_term = scale * theta_sm_inf * blackbox_weighted_err;
    Ok(BoundTerms {
        iw_variance_term,
        sampling_variance_term,
        finite_target_term,
        subsample_bias_term,
        total: iw_variance_term + sampling_variance_term + finite_target_term + subsample_bias_term,
        inputs_echo: inputs,
    })
}

/// Bound on the label-shift drift introduced by proxy-label subsampling:
/// `||r_{s->m}||_inf * err(h0, r_{s->m})`.
pub fn drift_bound(r_sm_inf: f64, blackbox_weighted_err_sm: f64) -> Result<f64> {
    if r_sm_inf < 0.0 || blackbox_weighted_err_sm < 0.0 {
        return Err(Error::Config("drift inputs must be nonnegative".into()));
    }
    Ok(r_sm_inf * blackbox_weighted_err_sm)
}
