//! Datasets and model vectors.

use std::io::{Read, Write};
use std::ops::Deref;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Private,
}

/// Feature matrix (one sample per row) with responses.
#[derive(Debug, Clone)]
pub struct RegressionDataset {
    features: DMatrix<f64>,
    responses: DVector<f64>,
    visibility: Visibility,
    row_norms_sq: OnceLock<DVector<f64>>,
    sparse: OnceLock<Option<SparseRows>>,
}

/// Compressed-row copy of a mostly-zero feature matrix.
#[derive(Debug, Clone)]
struct SparseRows {
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    /// `None` unless at most a quarter of the entries are nonzero.
    fn build(x: &DMatrix<f64>) -> Option<Self> {
        let nnz = x.iter().filter(|v| **v != 0.0).count();
        if nnz * 4 > x.len() {
            return None;
        }
        let mut row_start = Vec::with_capacity(x.nrows() + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_start.push(0);
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let v = x[(i, j)];
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_start.push(cols.len());
        }
        Some(Self { row_start, cols, vals })
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_start[i]..self.row_start[i + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }
}

impl PartialEq for RegressionDataset {
    fn eq(&self, other: &Self) -> bool {
        self.visibility == other.visibility
            && self.features == other.features
            && self.responses == other.responses
    }
}

impl RegressionDataset {
    pub fn new(
        features: DMatrix<f64>,
        responses: DVector<f64>,
        visibility: Visibility,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.ncols() == 0 {
            return Err(Error::InvalidParameter("dataset needs p >= 1 features".into()));
        }
        check_dim(features.nrows(), responses.len())?;
        Ok(Self {
            features,
            responses,
            visibility,
            row_norms_sq: OnceLock::new(),
            sparse: OnceLock::new(),
        })
    }

    /// Build from row vectors. All rows must share a length.
    pub fn from_rows(rows: &[DVector<f64>], responses: &[f64], visibility: Visibility) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let p = first.len();
        for r in rows {
            check_dim(p, r.len())?;
        }
        let features = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(features, DVector::from_column_slice(responses), visibility)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn responses(&self) -> &DVector<f64> {
        &self.responses
    }

    pub fn visibility(&self) -> Visibility {
        self.visibility
    }

    pub fn with_visibility(mut self, visibility: Visibility) -> Self {
        self.visibility = visibility;
        self
    }

    /// Row `i` as an owned column vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// Squared Euclidean norm of every row (computed once, then cached).
    pub fn row_norms_sq(&self) -> &DVector<f64> {
        self.row_norms_sq.get_or_init(|| {
            let mut out = DVector::zeros(self.n());
            for j in 0..self.p() {
                for (o, x) in out.iter_mut().zip(self.features.column(j).iter()) {
                    *o += x * x;
                }
            }
            out
        })
    }

    fn sparse(&self) -> Option<&SparseRows> {
        self.sparse.get_or_init(|| SparseRows::build(&self.features)).as_ref()
    }

    /// Xθ. Mostly-zero feature matrices go through a cached sparse copy.
    pub fn predict(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.p(), theta.len())?;
        Ok(match self.sparse() {
            Some(s) => DVector::from_fn(self.n(), |i, _| s.row(i).map(|(j, v)| v * theta[j]).sum()),
            None => &self.features * theta,
        })
    }

    /// Xᵀw.
    pub fn tr_mul(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.n(), w.len())?;
        Ok(match self.sparse() {
            Some(s) => {
                let mut out = DVector::zeros(self.p());
                for (i, &wi) in w.iter().enumerate() {
                    for (j, v) in s.row(i) {
                        out[j] += v * wi;
                    }
                }
                out
            }
            None => self.features.tr_mul(w),
        })
    }

    /// Samples at the given row indices (duplicates allowed, order kept).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidParameter(format!(
                "row index {bad} out of range for {} samples",
                self.n()
            )));
        }
        Self::new(
            self.features.select_rows(indices),
            self.responses.select_rows(indices),
            self.visibility,
        )
    }

    /// Stack several datasets row-wise. Visibility is taken from the first.
    pub fn concat(parts: &[&RegressionDataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset)?;
        let p = first.p();
        for d in parts {
            check_dim(p, d.p())?;
        }
        let n: usize = parts.iter().map(|d| d.n()).sum();
        let mut features = DMatrix::zeros(n, p);
        let mut responses = DVector::zeros(n);
        let mut at = 0;
        for d in parts {
            features.rows_mut(at, d.n()).copy_from(&d.features);
            responses.rows_mut(at, d.n()).copy_from(&d.responses);
            at += d.n();
        }
        Self::new(features, responses, first.visibility)
    }

    /// Write as CSV with header `x_0,...,x_{p-1},y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.p()).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.p() + 1);
        for i in 0..self.n() {
            record.clear();
            record.extend(self.features.row(i).iter().map(|v| v.to_string()));
            record.push(self.responses[i].to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the format produced by [`RegressionDataset::write_csv`].
    pub fn read_csv<R: Read>(reader: R, visibility: Visibility) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let width = headers.len();
        if width < 2 || headers.get(width - 1) != Some("y") {
            return Err(Error::InvalidParameter(
                "dataset csv must end with a `y` column".into(),
            ));
        }
        for (j, h) in headers.iter().take(width - 1).enumerate() {
            if h != format!("x_{j}") {
                return Err(Error::InvalidParameter(format!(
                    "unexpected column `{h}` at position {j}"
                )));
            }
        }
        let p = width - 1;
        let mut values = Vec::new();
        let mut responses = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            check_dim(width, rec.len())?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvalidParameter(format!("non-numeric field `{field}`"))
                })?;
                if j < p {
                    values.push(v);
                } else {
                    responses.push(v);
                }
            }
        }
        if responses.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let features = DMatrix::from_row_slice(responses.len(), p, &values);
        Self::new(features, DVector::from_vec(responses), visibility)
    }
}

/// Model parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector(DVector<f64>);

impl ModelVector {
    pub fn new(theta: DVector<f64>) -> Self {
        Self(theta)
    }

    pub fn zeros(p: usize) -> Self {
        Self(DVector::zeros(p))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Hard error unless every entry is finite.
    pub fn ensure_finite(&self, step: usize) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { step })
        }
    }
}

impl Deref for ModelVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<DVector<f64>> for ModelVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}
