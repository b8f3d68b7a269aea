//! Datasets and model indices.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A model: the sorted, duplicate-free set of active design columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelIndex(Vec<usize>);

impl ModelIndex {
    /// Builds a model from arbitrary indices, sorting and dropping duplicates.
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        ModelIndex(indices)
    }

    pub fn empty() -> Self {
        ModelIndex(Vec::new())
    }

    /// Accepts only strictly increasing indices below `p`.
    pub fn from_sorted(indices: Vec<usize>, p: usize) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "model indices must be strictly increasing: {indices:?}"
            )));
        }
        let model = ModelIndex(indices);
        model.validate(p)?;
        Ok(model)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= p => Err(Error::IndexOutOfRange { index: last, p }),
            _ => Ok(()),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    /// The model with `j` added.
    pub fn with(&self, j: usize) -> Self {
        let mut out = self.0.clone();
        if let Err(pos) = out.binary_search(&j) {
            out.insert(pos, j);
        }
        ModelIndex(out)
    }

    /// The model with `j` removed.
    pub fn without(&self, j: usize) -> Self {
        ModelIndex(self.0.iter().copied().filter(|&i| i != j).collect())
    }

    pub fn is_subset_of(&self, other: &ModelIndex) -> bool {
        self.0.iter().all(|&j| other.contains(j))
    }
}

impl fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}")
    }
}

impl From<Vec<usize>> for ModelIndex {
    fn from(v: Vec<usize>) -> Self {
        ModelIndex::new(v)
    }
}

/// Column centering and scaling applied during standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub column_means: Vec<f64>,
    pub column_sds: Vec<f64>,
    pub response_mean: f64,
}

impl Standardization {
    /// Applies the stored transform to new data (e.g. a test split).
    pub fn apply(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut x = x.clone();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.column_means[j]);
            col /= self.column_sds[j];
        }
        let y = y.add_scalar(-self.response_mean);
        (x, y)
    }
}

/// An n×p design with its response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    standardized: bool,
}

impl Dataset {
    /// Wraps raw data without transforming it.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidDataset(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.nrows() < 2 || x.ncols() < 1 {
            return Err(Error::InvalidDataset(format!(
                "need n >= 2 and p >= 1, got n = {}, p = {}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite entry".into()));
        }
        Ok(Dataset {
            x,
            y,
            standardized: false,
        })
    }

    /// Centers and scales every column to unit sample standard deviation and
    /// centers the response. Constant columns are rejected.
    pub fn standardized(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        Ok(Self::standardize_with_transform(x, y)?.0)
    }

    pub fn standardize_with_transform(
        x: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<(Self, Standardization)> {
        let raw = Dataset::new(x, y)?;
        let n = raw.n() as f64;
        let mut means = Vec::with_capacity(raw.p());
        let mut sds = Vec::with_capacity(raw.p());
        let mut zero = Vec::new();
        for (j, col) in raw.x.column_iter().enumerate() {
            let mean = col.sum() / n;
            let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = (ss / (n - 1.0)).sqrt();
            if !(sd > 1e-12 * (1.0 + mean.abs())) {
                zero.push(j);
            }
            means.push(mean);
            sds.push(sd);
        }
        if !zero.is_empty() {
            return Err(Error::ZeroVarianceColumns(zero));
        }
        let transform = Standardization {
            column_means: means,
            column_sds: sds,
            response_mean: raw.y.sum() / n,
        };
        let (x, y) = transform.apply(&raw.x, &raw.y);
        Ok((
            Dataset {
                x,
                y,
                standardized: true,
            },
            transform,
        ))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// The n×|model| design restricted to the model's columns.
    pub fn design(&self, model: &ModelIndex) -> DMatrix<f64> {
        self.x.select_columns(model.indices())
    }

    /// Seeded shuffle into (train, test) with `test_fraction` of the rows held
    /// out. The training part is re-standardized and the test part is mapped
    /// through the training transform.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidConfig(format!(
                "holdout fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let n = self.n();
        let n_test = ((n as f64) * test_fraction).round() as usize;
        if n - n_test < 2 || n_test < 1 {
            return Err(Error::InvalidConfig(format!(
                "holdout {test_fraction} leaves {} training and {n_test} test rows",
                n - n_test
            )));
        }
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (test_rows, train_rows) = rows.split_at(n_test);
        let mut test_rows = test_rows.to_vec();
        let mut train_rows = train_rows.to_vec();
        test_rows.sort_unstable();
        train_rows.sort_unstable();
        let (train, transform) = Dataset::standardize_with_transform(
            self.x.select_rows(&train_rows),
            self.y.select_rows(&train_rows),
        )?;
        let (tx, ty) = transform.apply(&self.x.select_rows(&test_rows), &self.y.select_rows(&test_rows));
        let test = Dataset::new(tx, ty)?;
        Ok((train, test))
    }
}
