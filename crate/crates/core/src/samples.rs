use crate::error::{Error, Result};
use crate::scalar::Real;
use std::io::{Read, Write};

/// A set of equally weighted samples in `R^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet<T: Real> {
    dim: usize,
    data: Vec<T>,
    pub label: String,
}

impl<T: Real> SampleSet<T> {
    pub fn new(dim: usize, data: Vec<T>, label: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("sample dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim * (data.len() / dim + 1),
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite_value()) {
            return Err(Error::InvalidConfig("samples contain non-finite values".into()));
        }
        Ok(Self { dim, data, label: label.into() })
    }

    pub fn from_rows<I, R>(dim: usize, rows: I, label: impl Into<String>) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[T]>,
    {
        let mut data = Vec::new();
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data, label)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<T> {
        self.rows().map(|r| r[j]).collect()
    }

    /// Appends the rows of `other`.
    pub fn extend(&mut self, other: &SampleSet<T>) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    /// Keeps the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        self.data.truncate(n * self.dim);
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, &x) in m.iter_mut().zip(r) {
                *a += x.to_f64();
            }
        }
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Unbiased sample covariance, row-major `d × d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for r in self.rows() {
            for i in 0..d {
                let a = r[i].to_f64() - m[i];
                for j in 0..d {
                    c[i * d + j] += a * (r[j].to_f64() - m[j]);
                }
            }
        }
        let denom = (self.len().max(2) - 1) as f64;
        c.iter_mut().for_each(|v| *v /= denom);
        c
    }

    /// Writes CSV with header `x0..x{d−1}`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((0..self.dim).map(|j| format!("x{j}")))?;
        for r in self.rows() {
            w.write_record(r.iter().map(|x| format!("{}", x.to_f64())))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, label: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let dim = headers.len();
        for (j, h) in headers.iter().enumerate() {
            if h != format!("x{j}") {
                return Err(Error::Parse(format!("unexpected column {h:?} at position {j}")));
            }
        }
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for f in rec.iter() {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad sample value {f:?}")))?;
                data.push(T::of(v));
            }
        }
        Self::new(dim, data, label)
    }
}
