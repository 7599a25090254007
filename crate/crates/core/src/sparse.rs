//! Compressed sparse row matrices assembled from coordinate triplets.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Coordinate-form accumulator. Duplicates are summed on compression, in insertion
/// order, so the compressed values do not depend on anything but the push sequence.
#[derive(Debug, Clone)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self {
            nrows,
            ncols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn into_matrix(self, symmetric: bool) -> SparseMatrix {
        let n = self.nrows;
        // counting sort by row keeps insertion order within a row
        let mut count = vec![0usize; n + 1];
        for &r in &self.rows {
            count[r + 1] += 1;
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let mut next = count.clone();
        let mut order = vec![0usize; self.vals.len()];
        for (k, &r) in self.rows.iter().enumerate() {
            order[next[r]] = k;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(self.vals.len());
        let mut values = Vec::with_capacity(self.vals.len());
        row_ptr.push(0);
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            buf.clear();
            buf.extend(order[count[i]..count[i + 1]].iter().map(|&k| (self.cols[k], self.vals[k])));
            buf.sort_by_key(|e| e.0);
            let mut it = buf.iter();
            if let Some(&(mut c, mut v)) = it.next() {
                for &(c2, v2) in it {
                    if c2 == c {
                        v += v2;
                    } else {
                        col_idx.push(c);
                        values.push(v);
                        c = c2;
                        v = v2;
                    }
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            nrows: n,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
            symmetric,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
    /// Set by the producer when the matrix is symmetric by construction.
    pub symmetric: bool,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
            symmetric: true,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>], symmetric: bool) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut t = Triplets::new(rows.len(), ncols);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push(i, j, v);
                }
            }
        }
        t.into_matrix(symmetric)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum()
            })
            .collect()
    }

    /// `y = A^T x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut t = Triplets::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                t.push(j, i, v);
            }
        }
        t.into_matrix(self.symmetric)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.symmetry_defect() <= rel_tol * self.max_abs()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Submatrix on the given (sorted) row and column index lists.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &j) in cols.iter().enumerate() {
            col_map[j] = k;
        }
        let mut t = Triplets::new(rows.len(), cols.len());
        for (ki, &i) in rows.iter().enumerate() {
            let (cs, vs) = self.row(i);
            for (&j, &v) in cs.iter().zip(vs) {
                if col_map[j] != usize::MAX {
                    t.push(ki, col_map[j], v);
                }
            }
        }
        t.into_matrix(self.symmetric && rows == cols)
    }

    /// Coordinate text dump: `<nrows> <ncols> <nnz>` then `i j value` lines.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {} {}", self.nrows, self.ncols, self.nnz()).unwrap();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                writeln!(s, "{i} {j} {v:?}").unwrap();
            }
        }
        s
    }

    pub fn from_coordinate_text(text: &str, symmetric: bool) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse { line, msg };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty input".into()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| perr(1, format!("{e}"))))
            .collect::<Result<_>>()?;
        if h.len() != 3 {
            return Err(perr(1, "header must be `<nrows> <ncols> <nnz>`".into()));
        }
        let mut t = Triplets::with_capacity(h[0], h[1], h[2]);
        for (ln, l) in lines {
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() != 3 {
                return Err(perr(ln + 1, "expected `i j value`".into()));
            }
            let i: usize = tok[0].parse().map_err(|e| perr(ln + 1, format!("{e}")))?;
            let j: usize = tok[1].parse().map_err(|e| perr(ln + 1, format!("{e}")))?;
            let v: f64 = tok[2].parse().map_err(|e| perr(ln + 1, format!("{e}")))?;
            if i >= h[0] || j >= h[1] {
                return Err(perr(ln + 1, "index out of range".into()));
            }
            t.push(i, j, v);
        }
        if t.len() != h[2] {
            return Err(perr(1, format!("header announces {} entries, found {}", h[2], t.len())));
        }
        Ok(t.into_matrix(symmetric))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
