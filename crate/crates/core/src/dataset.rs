//! Dataset container and the manifest + CSV file pair.
//!
//! A dataset on disk is two files sharing a stem: `name.json` holds the
//! manifest `{"n","d","k","split_name","label_names"}` and `name.csv` holds
//! one `label,f0,...,f{d-1}` row per example, no header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::{class_counts, empirical_marginal, LabelMarginal};

/// Features (row-major `n x d`) with dense class labels in `[0, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    d: usize,
    k: usize,
    split_name: String,
    label_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from a flat row-major feature buffer.
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        d: usize,
        k: usize,
        split_name: impl Into<String>,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {k}")));
        }
        if features.len() != labels.len() * d {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * d,
                got: features.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::LabelOutOfRange { label: y, k });
        }
        Ok(Self {
            features,
            labels,
            d,
            k,
            split_name: split_name.into(),
            label_names: (0..k).map(|y| y.to_string()).collect(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, k: usize, split_name: &str) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(row) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        Self::new(rows.concat(), labels, d, k, split_name)
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: names.len(),
            });
        }
        self.label_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split_name(&self) -> &str {
        &self.split_name
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.k).expect("labels validated at construction")
    }

    pub fn marginal(&self) -> Result<LabelMarginal> {
        empirical_marginal(&self.labels, self.k)
    }

    /// Copies the examples at `indices` (in order, duplicates allowed).
    pub fn subset(&self, indices: &[usize], split_name: &str) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            d: self.d,
            k: self.k,
            split_name: split_name.to_string(),
            label_names: self.label_names.clone(),
        }
    }

    /// Appends the rows of `other`; both must share `d` and `k`.
    pub fn concat(&self, other: &Dataset, split_name: &str) -> Result<Dataset> {
        if other.d != self.d && !other.is_empty() && !self.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: other.d,
            });
        }
        if other.k != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: other.k,
            });
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out.split_name = split_name.to_string();
        Ok(out)
    }
}

/// Grants label access one index at a time and counts how many were revealed.
#[derive(Debug)]
pub struct LabelOracle<'a> {
    data: &'a Dataset,
    revealed: Vec<bool>,
    count: usize,
}

impl<'a> LabelOracle<'a> {
    pub fn new(data: &'a Dataset) -> Self {
        Self {
            data,
            revealed: vec![false; data.n()],
            count: 0,
        }
    }

    pub fn reveal(&mut self, i: usize) -> usize {
        if !self.revealed[i] {
            self.revealed[i] = true;
            self.count += 1;
        }
        self.data.label(i)
    }

    pub fn is_revealed(&self, i: usize) -> bool {
        self.revealed[i]
    }

    pub fn revealed_count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    n: usize,
    d: usize,
    k: usize,
    split_name: String,
    #[serde(default)]
    label_names: Vec<String>,
}

/// Path of the data CSV paired with a manifest.
pub fn data_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("csv")
}

/// Loads the manifest at `manifest_path` and the sibling `.csv` file.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::load(manifest_path, format!("bad manifest: {e}")))?;
    let csv_path = data_path(manifest_path);
    let body = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;

    let mut features = Vec::with_capacity(manifest.n * manifest.d);
    let mut labels = Vec::with_capacity(manifest.n);
    for (lineno, line) in body.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_text = fields.next().unwrap_or_default();
        let label: usize = label_text.trim().parse().map_err(|_| {
            Error::load(
                &csv_path,
                format!("line {}: malformed label {label_text:?}", lineno + 1),
            )
        })?;
        if label >= manifest.k {
            return Err(Error::load(
                &csv_path,
                format!(
                    "line {}: label out of range ({label} >= k = {})",
                    lineno + 1,
                    manifest.k
                ),
            ));
        }
        let before = features.len();
        for field in fields {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::load(&csv_path, format!("line {}: malformed feature {field:?}", lineno + 1)))?;
            features.push(v);
        }
        let got = features.len() - before;
        if got != manifest.d {
            return Err(Error::load(
                &csv_path,
                format!(
                    "line {}: dimension mismatch (expected {} features, got {got})",
                    lineno + 1,
                    manifest.d
                ),
            ));
        }
        labels.push(label);
    }
    if labels.len() != manifest.n {
        return Err(Error::load(
            &csv_path,
            format!(
                "dimension mismatch: manifest says n = {}, found {} rows",
                manifest.n,
                labels.len()
            ),
        ));
    }
    let ds = Dataset::new(features, labels, manifest.d, manifest.k, manifest.split_name)?;
    if manifest.label_names.is_empty() {
        Ok(ds)
    } else {
        ds.with_label_names(manifest.label_names)
    }
}

/// Writes the canonical manifest + CSV pair; `load_dataset` followed by
/// `save_dataset` reproduces canonical files byte for byte.
pub fn save_dataset(ds: &Dataset, manifest_path: impl AsRef<Path>) -> Result<()> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest {
        n: ds.n(),
        d: ds.d(),
        k: ds.k(),
        split_name: ds.split_name.clone(),
        label_names: ds.label_names.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;

    let mut body = String::with_capacity(ds.n() * (ds.d() * 8 + 4));
    for i in 0..ds.n() {
        write!(body, "{}", ds.label(i)).unwrap();
        for v in ds.row(i) {
            write!(body, ",{v}").unwrap();
        }
        body.push('\n');
    }
    let csv_path = data_path(manifest_path);
    fs::write(&csv_path, body).map_err(|e| Error::io(&csv_path, e))
}
