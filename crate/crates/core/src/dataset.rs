use crate::error::{Error, Result};

/// Dense row-major sample matrix; one observation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dataset dimension must be at least 1"));
        }
        if data.len() != rows * dim {
            return Err(Error::invalid(format!(
                "dataset buffer has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at row {}, column {}",
                bad / dim,
                bad % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Dataset {
            rows: indices.len(),
            dim: self.dim,
            data,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn stack(&self, other: &Dataset) -> Result<Dataset> {
        check_same_dim(self, other)?;
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Dataset {
            rows: self.rows + other.rows,
            dim: self.dim,
            data,
        })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Dataset {
        Dataset {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub(crate) fn check_same_dim(x: &Dataset, y: &Dataset) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    Ok(())
}

/// Shape check shared by every equal-size two-sample operation.
pub(crate) fn check_pair(x: &Dataset, y: &Dataset, min_rows: usize, what: &'static str) -> Result<usize> {
    check_same_dim(x, y)?;
    if x.rows() != y.rows() {
        return Err(Error::SampleCountMismatch {
            x: x.rows(),
            y: y.rows(),
        });
    }
    if x.rows() < min_rows {
        return Err(Error::TooFewSamples {
            what,
            needed: min_rows,
            got: x.rows(),
        });
    }
    Ok(x.rows())
}
