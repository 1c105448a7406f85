//! Compressed sparse row matrices plus the two numerical kernels everything
//! else leans on: a sparse LDL' factorization (positive-definiteness
//! certificate, log-determinant, solves) and extreme-eigenvalue estimation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sparse matrix in CSR form. Column indices are sorted within each row and
/// duplicate entries have been summed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        SparseMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut items: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(Error::ShapeMismatch(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            items.push((i, j, v));
        }
        items.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(items.len());
        for (i, j, v) in items {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        let mut indptr = vec![0usize; nrows + 1];
        for &(i, _, _) in &merged {
            indptr[i + 1] += 1;
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        let indices = merged.iter().map(|t| t.1).collect();
        let values = merged.iter().map(|t| t.2).collect();
        Ok(SparseMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![0f64; self.nnz()];
        let mut next = counts.clone();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let pos = next[j];
                indices[pos] = i;
                values[pos] = v;
                next[j] += 1;
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr: counts,
            indices,
            values,
        }
    }

    pub fn scaled(&self, s: f64) -> SparseMatrix {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// Entry-wise sum; patterns are merged.
    pub fn add(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} + {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                match (ca.get(p), cb.get(q)) {
                    (Some(&ja), Some(&jb)) if ja == jb => {
                        indices.push(ja);
                        values.push(va[p] + vb[q]);
                        p += 1;
                        q += 1;
                    }
                    (Some(&ja), Some(&jb)) if ja < jb => {
                        indices.push(ja);
                        values.push(va[p]);
                        p += 1;
                    }
                    (Some(_), Some(&jb)) => {
                        indices.push(jb);
                        values.push(vb[q]);
                        q += 1;
                    }
                    (Some(&ja), None) => {
                        indices.push(ja);
                        values.push(va[p]);
                        p += 1;
                    }
                    (None, Some(&jb)) => {
                        indices.push(jb);
                        values.push(vb[q]);
                        q += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
            indptr[i + 1] = indices.len();
        }
        Ok(SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        })
    }

    /// Sparse-sparse product (Gustavson, dense accumulator per row).
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.ncols != other.nrows {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} * {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut acc = vec![0f64; other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut pattern: Vec<usize> = Vec::new();
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..self.nrows {
            pattern.clear();
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (kcols, kvals) = other.row(k);
                for (&j, &b) in kcols.iter().zip(kvals) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                indices.push(j);
                values.push(acc[j]);
            }
            indptr[i + 1] = indices.len();
        }
        Ok(SparseMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(self.ncols, x.len());
        let mut out = DVector::zeros(self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut s = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                s += v * x[j];
            }
            out[i] = s;
        }
        out
    }

    /// self * B for dense B.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols, b.nrows());
        let mut out = DMatrix::zeros(self.nrows, b.ncols());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&k, &v) in cols.iter().zip(vals) {
                for j in 0..b.ncols() {
                    out[(i, j)] += v * b[(k, j)];
                }
            }
        }
        out
    }

    /// Principal submatrix over `keep` (strictly increasing indices).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Result<SparseMatrix> {
        if keep.is_empty() {
            return Err(Error::InvalidMask("empty index set".into()));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= self.nrows {
            return Err(Error::InvalidMask(
                "indices must be strictly increasing and in range".into(),
            ));
        }
        let mut map = vec![usize::MAX; self.nrows];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let m = keep.len();
        let mut indptr = vec![0usize; m + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (new_i, &old_i) in keep.iter().enumerate() {
            let (cols, vals) = self.row(old_i);
            for (&j, &v) in cols.iter().zip(vals) {
                if map[j] != usize::MAX {
                    indices.push(map[j]);
                    values.push(v);
                }
            }
            indptr[new_i + 1] = indices.len();
        }
        Ok(SparseMatrix {
            nrows: m,
            ncols: m,
            indptr,
            indices,
            values,
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            out[(i, j)] += v;
        }
        out
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        self.triplets()
            .all(|(i, j, v)| (self.get(j, i) - v).abs() <= tol)
    }

    /// Writes `i j value` lines (0-based, full precision) for external checks.
    pub fn write_triplets(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (i, j, v) in self.triplets() {
            writeln!(out, "{i} {j} {v}")?;
        }
        Ok(())
    }
}

/// Sparse LDL' factorization of a symmetric positive definite matrix, with
/// unit lower-triangular L stored by column. Natural ordering; the areal
/// graphs this library runs on are narrow-banded already.
pub struct LdlFactor {
    n: usize,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    lvals: Vec<f64>,
    d: Vec<f64>,
}

/// Up-looking LDL'. Fails with `NotPositiveDefinite` on the first pivot that
/// is non-finite or does not clear a relative floor of 16 n eps times the
/// largest diagonal entry; exactly singular input (a spectral-boundary
/// autoregression, a rank-deficient Gram matrix) reliably trips the floor
/// instead of slipping past zero on rounding noise.
pub fn ldl_factor(a: &SparseMatrix) -> Result<LdlFactor> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "ldl on {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let max_diag = (0..n)
        .map(|k| a.get(k, k).abs())
        .fold(0.0f64, f64::max);
    let pivot_floor = 16.0 * n as f64 * f64::EPSILON * max_diag;

    // symbolic: elimination tree and column counts, using the upper triangle
    // (row k, columns < k, by symmetry)
    let mut parent = vec![usize::MAX; n];
    let mut flag = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];
    for k in 0..n {
        flag[k] = k;
        let (cols, _) = a.row(k);
        for &j in cols.iter().take_while(|&&j| j < k) {
            let mut i = j;
            while flag[i] != k {
                if parent[i] == usize::MAX {
                    parent[i] = k;
                }
                lnz[i] += 1;
                flag[i] = k;
                i = parent[i];
            }
        }
    }

    let mut colptr = vec![0usize; n + 1];
    for i in 0..n {
        colptr[i + 1] = colptr[i] + lnz[i];
    }
    let nz = colptr[n];
    let mut rowidx = vec![0usize; nz];
    let mut lvals = vec![0f64; nz];
    let mut nfill = vec![0usize; n];
    let mut d = vec![0f64; n];
    let mut y = vec![0f64; n];
    let mut pattern = vec![0usize; n];

    for k in 0..n {
        let mut top = n;
        flag[k] = k;
        d[k] = 0.0;
        let (cols, vals) = a.row(k);
        for (&j, &v) in cols.iter().zip(vals) {
            if j > k {
                break;
            }
            if j == k {
                d[k] = v;
                continue;
            }
            y[j] += v;
            let mut len = 0;
            let mut i = j;
            while flag[i] != k {
                pattern[len] = i;
                len += 1;
                flag[i] = k;
                i = parent[i];
            }
            while len > 0 {
                len -= 1;
                top -= 1;
                pattern[top] = pattern[len];
            }
        }
        // pattern[top..n] lists the row-k nonzeros of L in ascending order
        for s in top..n {
            let i = pattern[s];
            let yi = y[i];
            y[i] = 0.0;
            let p2 = colptr[i] + nfill[i];
            for p in colptr[i]..p2 {
                y[rowidx[p]] -= lvals[p] * yi;
            }
            let lki = yi / d[i];
            d[k] -= lki * yi;
            rowidx[p2] = k;
            lvals[p2] = lki;
            nfill[i] += 1;
        }
        if !(d[k] > pivot_floor) || !d[k].is_finite() {
            return Err(Error::NotPositiveDefinite {
                index: k,
                pivot: d[k],
            });
        }
    }

    Ok(LdlFactor {
        n,
        colptr,
        rowidx,
        lvals,
        d,
    })
}

impl LdlFactor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        self.d.iter().map(|v| v.ln()).sum()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.colptr[j]..self.colptr[j + 1] {
                    x[self.rowidx[p]] -= self.lvals[p] * xj;
                }
            }
        }
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut s = x[j];
            for p in self.colptr[j]..self.colptr[j + 1] {
                s -= self.lvals[p] * x[self.rowidx[p]];
            }
            x[j] = s;
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// Maps iid standard normals z to a draw with covariance A^{-1} where
    /// A = L D L' is the factored matrix: returns L'^{-1} D^{-1/2} z.
    pub fn sample_transform(&self, z: &DVector<f64>) -> DVector<f64> {
        assert_eq!(z.len(), self.n);
        let mut x = DVector::zeros(self.n);
        for j in 0..self.n {
            x[j] = z[j] / self.d[j].sqrt();
        }
        for j in (0..self.n).rev() {
            let mut s = x[j];
            for p in self.colptr[j]..self.colptr[j + 1] {
                s -= self.lvals[p] * x[self.rowidx[p]];
            }
            x[j] = s;
        }
        x
    }
}

/// Smallest and largest eigenvalues of a symmetric sparse matrix.
///
/// Dense Jacobi-free path (nalgebra) for small n; Lanczos with full
/// reorthogonalization and a fixed-seed start vector above that. Errors with
/// `NumericalFailure` if the iteration does not stabilize.
pub fn extreme_eigenvalues(a: &SparseMatrix) -> Result<(f64, f64)> {
    let n = a.nrows();
    if a.ncols() != n || n == 0 {
        return Err(Error::ShapeMismatch("eigenvalues of non-square".into()));
    }
    if n <= 128 {
        let eig = a.to_dense().symmetric_eigen();
        let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        return Ok((lo, hi));
    }

    let max_steps = n.min(400);
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_5053);
    let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    v /= v.norm();

    let mut basis: Vec<DVector<f64>> = vec![v.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    let mut stable = 0usize;

    for step in 0..max_steps {
        let mut w = a.matvec(&basis[step]);
        if step > 0 {
            w -= &basis[step - 1] * betas[step - 1];
        }
        let alpha = w.dot(&basis[step]);
        w -= &basis[step] * alpha;
        alphas.push(alpha);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for u in &basis {
                let c = w.dot(u);
                w -= u * c;
            }
        }
        let beta = w.norm();

        let k = alphas.len();
        let exhausted = beta < 1e-13 * a.norm_inf().max(1.0);
        if k >= 2 && (exhausted || k % 4 == 0 || step + 1 == max_steps) {
            let mut t = DMatrix::zeros(k, k);
            for i in 0..k {
                t[(i, i)] = alphas[i];
                if i + 1 < k {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let ev = t.symmetric_eigen().eigenvalues;
            let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if exhausted {
                return Ok((lo, hi));
            }
            if let Some((plo, phi)) = prev {
                let scale = hi.abs().max(lo.abs()).max(1e-30);
                if (lo - plo).abs() <= 1e-12 * scale && (hi - phi).abs() <= 1e-12 * scale {
                    stable += 1;
                    if stable >= 2 {
                        return Ok((lo, hi));
                    }
                } else {
                    stable = 0;
                }
            }
            prev = Some((lo, hi));
        }
        if exhausted {
            // k == 1: single eigenvalue reached
            return Ok((alphas[0], alphas[0]));
        }
        betas.push(beta);
        basis.push(w / beta);
    }

    Err(Error::NumericalFailure(
        "extreme-eigenvalue iteration did not stabilize".into(),
    ))
}
