//! Dense symmetric distance matrices and their text format.
//!
//! The file format is the size `n` on the first line followed by `n`
//! whitespace-separated rows. A marked matrix carries one more line holding
//! the `n` marks.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DistMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Builds the matrix with entries `f(i, j)` for `i < j`, mirrored.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in (i + 1)..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Validates symmetry, a zero diagonal and nonnegative finite entries.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMatrix(format!("row {} has {} entries, expected {n}", i + 1, row.len())));
            }
            data.extend_from_slice(row);
        }
        let m = Self { n, data };
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(Error::InvalidMatrix(format!("nonzero diagonal at {}", i + 1)));
            }
            for j in 0..n {
                let v = m.get(i, j);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidMatrix(format!("bad entry at ({}, {})", i + 1, j + 1)));
                }
                if v != m.get(j, i) {
                    return Err(Error::InvalidMatrix(format!("asymmetric at ({}, {})", i + 1, j + 1)));
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Principal submatrix on the first `m` indices.
    pub fn restrict(&self, m: usize) -> DistMatrix {
        self.submatrix(&(0..m).collect::<Vec<_>>())
    }

    pub fn submatrix(&self, idx: &[usize]) -> DistMatrix {
        DistMatrix::from_fn(idx.len(), |a, b| self.get(idx[a], idx[b]))
    }

    pub fn max_abs_diff(&self, other: &DistMatrix) -> f64 {
        assert_eq!(self.n, other.n);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Triangle inequality up to `tol`.
    pub fn is_semimetric(&self, tol: f64) -> bool {
        let n = self.n;
        (0..n).all(|i| {
            (0..n).all(|j| (0..n).all(|k| self.get(i, j) <= self.get(i, k) + self.get(k, j) + tol))
        })
    }

    /// Strong triangle inequality, checked exactly.
    pub fn is_ultrametric(&self) -> bool {
        let n = self.n;
        (0..n).all(|i| (0..n).all(|j| (0..n).all(|k| self.get(i, j) <= self.get(i, k).max(self.get(k, j)))))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for i in 0..self.n {
            push_row(&mut s, self.row(i));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (m, extra) = parse_text(text)?;
        if extra.is_some() {
            return Err(Error::InvalidMatrix("unexpected mark line".into()));
        }
        Ok(m)
    }
}

fn push_row(s: &mut String, row: &[f64]) {
    for (k, v) in row.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        write!(s, "{v}").expect("writing to a string");
    }
    s.push('\n');
}

/// Text form of a marked matrix: the matrix followed by the mark line.
pub fn marked_to_text(r: &DistMatrix, u: &[f64]) -> String {
    let mut s = r.to_text();
    push_row(&mut s, u);
    s
}

pub fn marked_from_text(text: &str) -> Result<(DistMatrix, Vec<f64>)> {
    match parse_text(text)? {
        (m, Some(u)) => {
            if u.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidMatrix("marks must be finite and nonnegative".into()));
            }
            Ok((m, u))
        }
        (_, None) => Err(Error::InvalidMatrix("missing mark line".into())),
    }
}

fn parse_text(text: &str) -> Result<(DistMatrix, Option<Vec<f64>>)> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let n: usize = lines
        .next()
        .ok_or_else(|| Error::InvalidMatrix("empty input".into()))?
        .parse()
        .map_err(|_| Error::InvalidMatrix("first line must be the size".into()))?;
    let parse_row = |l: &str| -> Result<Vec<f64>> {
        l.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::InvalidMatrix(format!("bad number {t:?}"))))
            .collect()
    };
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next().ok_or_else(|| Error::InvalidMatrix("too few rows".into()))?;
        rows.push(parse_row(l)?);
    }
    let m = DistMatrix::from_rows(rows)?;
    let extra = match lines.next() {
        Some(l) => {
            let u = parse_row(l)?;
            if u.len() != n {
                return Err(Error::InvalidMatrix("mark line has the wrong length".into()));
            }
            Some(u)
        }
        None => None,
    };
    if lines.next().is_some() {
        return Err(Error::InvalidMatrix("trailing lines".into()));
    }
    Ok((m, extra))
}
