//! Sparse and small dense linear algebra used by the solvers: compressed
//! row storage, Jacobi-preconditioned conjugate gradients, an envelope
//! (profile) Cholesky factorisation for patch systems and a diagonally
//! pivoted dense Cholesky for semidefinite Schur complements.

use std::io::Write;

use crate::error::{Error, Result};

/// Matrix in compressed sparse row format.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the matrix from `(row, col, value)` triplets; duplicates are
    /// summed in a fixed order so the result is deterministic.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, val) = self.row(i);
        match idx.binary_search(&j) {
            Ok(k) => val[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate() {
            let (idx, val) = self.row(i);
            *yi = idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `A^T x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                y[j] += v * xi;
            }
        }
        y
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|i| {
                let (idx, val) = self.row(i);
                x[i] * idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum::<f64>()
            })
            .sum()
    }

    pub fn bilinear_form(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|i| {
                let (idx, val) = self.row(i);
                x[i] * idx.iter().zip(val).map(|(&j, &v)| v * y[j]).sum::<f64>()
            })
            .sum()
    }

    pub fn transpose(&self) -> Self {
        let mut trips = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (idx, val) = self.row(i);
            trips.extend(idx.iter().zip(val).map(|(&j, &v)| (j, i, v)));
        }
        Self::from_triplets(self.ncols, self.nrows, trips)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Coordinate text dump, one `row col value` triple per line.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                writeln!(out, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }

    /// Replaces the rows and columns listed in `fixed` by identity rows.
    pub fn with_identity_rows(&self, fixed: &[bool]) -> Self {
        let mut trips = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            if fixed[i] {
                trips.push((i, i, 1.0));
                continue;
            }
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                if !fixed[j] {
                    trips.push((i, j, v));
                }
            }
        }
        Self::from_triplets(self.nrows, self.ncols, trips)
    }
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite matrix. Stops once `|b - Ax| <= tol |b|`.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<CgOutcome> {
    let n = b.len();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok(CgOutcome { solution: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut res = 1.0;
    let mut best_true = f64::INFINITY;
    let mut stalled = 0;
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Singular(format!("conjugate gradients met p^T A p = {pap:e}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
        let mut restart = false;
        if res <= tol {
            // residual replacement with a compensated residual, then restart
            accurate_residual(a, &x, b, &mut r);
            let true_res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
            if true_res <= tol {
                return Ok(CgOutcome { solution: x, iterations: it, relative_residual: true_res });
            }
            if true_res < 0.5 * best_true {
                best_true = true_res;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= 8 {
                    return Err(Error::NotConverged { iterations: it, residual: true_res });
                }
            }
            res = true_res;
            restart = true;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = if restart { 0.0 } else { rz_new / rz };
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged { iterations: max_iter, residual: res })
}

/// `r = b - A x` with error-free products and compensated summation.
fn accurate_residual(a: &CsrMatrix, x: &[f64], b: &[f64], r: &mut [f64]) {
    for (i, ri) in r.iter_mut().enumerate() {
        let (cols, vals) = a.row(i);
        let mut sum = b[i];
        let mut comp = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            let prod = -v * x[j];
            let prod_err = (-v).mul_add(x[j], -prod);
            let t = sum + prod;
            let bv = t - sum;
            comp += (sum - (t - bv)) + (prod - bv) + prod_err;
            sum = t;
        }
        *ri = sum + comp;
    }
}

/// Cholesky factor of a sparse symmetric positive definite matrix stored by
/// rows within its envelope: row `i` keeps columns `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    /// Factors the principal submatrix of `a` on the global indices `dofs`
    /// (in that order).
    pub fn factor_submatrix(a: &CsrMatrix, dofs: &[usize]) -> Result<Self> {
        let n = dofs.len();
        let mut local = vec![usize::MAX; a.nrows()];
        for (k, &g) in dofs.iter().enumerate() {
            local[g] = k;
        }
        let mut first = vec![0usize; n];
        for (i, &g) in dofs.iter().enumerate() {
            let (idx, _) = a.row(g);
            first[i] = idx.iter().filter_map(|&j| Some(local[j]).filter(|&l| l != usize::MAX)).min().unwrap_or(i).min(i);
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut data = vec![0.0; offset[n]];
        for (i, &g) in dofs.iter().enumerate() {
            let (idx, val) = a.row(g);
            for (&j, &v) in idx.iter().zip(val) {
                let l = local[j];
                if l != usize::MAX && l <= i {
                    data[offset[i] + l - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let (before, rest) = data.split_at_mut(offset[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let row_j = &before[offset[j]..offset[j] + (j - fj + 1)];
                let k0 = fi.max(fj);
                let dot: f64 = row_i[k0 - fi..j - fi].iter().zip(&row_j[k0 - fj..j - fj]).map(|(a, b)| a * b).sum();
                row_i[j - fi] = (row_i[j - fi] - dot) / row_j[j - fj];
            }
            let sq: f64 = row_i[..i - fi].iter().map(|v| v * v).sum();
            let d = row_i[i - fi] - sq;
            if !(d > 0.0) {
                return Err(Error::Singular(format!("envelope Cholesky: non-positive pivot {d:e} at row {i}")));
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(Self { first, offset, data })
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.offset[i]..self.offset[i + 1]]
    }

    /// Solves `L Z = B` in place; `b` holds `m` right-hand sides row-major.
    pub fn forward_many(&self, b: &mut [f64], m: usize) {
        let n = self.dim();
        assert_eq!(b.len(), n * m);
        for i in 0..n {
            let fi = self.first[i];
            let row = self.row(i);
            let (done, rest) = b.split_at_mut(i * m);
            let bi = &mut rest[..m];
            for k in fi..i {
                let l = row[k - fi];
                if l != 0.0 {
                    let bk = &done[k * m..(k + 1) * m];
                    for (x, y) in bi.iter_mut().zip(bk) {
                        *x -= l * y;
                    }
                }
            }
            let inv = 1.0 / row[i - fi];
            for v in bi.iter_mut() {
                *v *= inv;
            }
        }
    }

    /// Like [`Self::forward_many`], for right-hand sides whose row `i` is
    /// zero beyond column `width[i]` (`width` non-decreasing).
    pub fn forward_many_profile(&self, b: &mut [f64], m: usize, width: &[usize]) {
        let n = self.dim();
        assert_eq!(b.len(), n * m);
        for i in 0..n {
            let fi = self.first[i];
            let row = self.row(i);
            let (done, rest) = b.split_at_mut(i * m);
            let bi = &mut rest[..width[i]];
            for k in fi..i {
                let l = row[k - fi];
                let wk = width[k];
                if l != 0.0 && wk > 0 {
                    let bk = &done[k * m..k * m + wk];
                    for (x, y) in bi[..wk].iter_mut().zip(bk) {
                        *x -= l * y;
                    }
                }
            }
            let inv = 1.0 / row[i - fi];
            for v in bi.iter_mut() {
                *v *= inv;
            }
        }
    }

    /// Solves `L^T X = Z` in place; `z` holds `m` right-hand sides row-major.
    pub fn backward_many(&self, z: &mut [f64], m: usize) {
        let n = self.dim();
        assert_eq!(z.len(), n * m);
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            let (head, rest) = z.split_at_mut(i * m);
            let xi = &mut rest[..m];
            let inv = 1.0 / row[i - fi];
            for v in xi.iter_mut() {
                *v *= inv;
            }
            for k in fi..i {
                let l = row[k - fi];
                if l != 0.0 {
                    let zk = &mut head[k * m..(k + 1) * m];
                    for (x, y) in zk.iter_mut().zip(xi.iter()) {
                        *x -= l * y;
                    }
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_many(&mut x, 1);
        self.backward_many(&mut x, 1);
        x
    }
}

/// Cholesky factorisation with diagonal pivoting of a symmetric positive
/// semidefinite dense matrix. Pivots below `tol * max diagonal` end the
/// factorisation; the corresponding directions are treated as redundant.
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    n: usize,
    rank: usize,
    perm: Vec<usize>,
    // column-major lower factor, n x rank
    l: Vec<f64>,
}

impl PivotedCholesky {
    /// `a` is column-major `n x n`.
    pub fn new(mut a: Vec<f64>, n: usize, tol: f64) -> Self {
        assert_eq!(a.len(), n * n);
        let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rank = 0;
        for k in 0..n {
            let (p, dmax) = (k..n).map(|i| (i, a[i * n + i])).fold((k, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
            if !(dmax > tol * max_diag) || max_diag == 0.0 {
                break;
            }
            if p != k {
                perm.swap(k, p);
                // swap rows and columns k and p
                for c in 0..n {
                    a.swap(c * n + k, c * n + p);
                }
                for r in 0..n {
                    a.swap(k * n + r, p * n + r);
                }
            }
            let d = a[k * n + k].sqrt();
            a[k * n + k] = d;
            for i in k + 1..n {
                a[k * n + i] /= d;
            }
            for j in k + 1..n {
                let ljk = a[k * n + j];
                if ljk == 0.0 {
                    continue;
                }
                let (left, right) = a.split_at_mut(j * n);
                let col_k = &left[k * n..(k + 1) * n];
                let col_j = &mut right[..n];
                for i in k + 1..n {
                    col_j[i] -= col_k[i] * ljk;
                }
            }
            rank = k + 1;
        }
        let mut l = vec![0.0; n * rank];
        for k in 0..rank {
            for i in k..n {
                l[k * n + i] = a[k * n + i];
            }
        }
        Self { n, rank, perm, l }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Solves on the retained pivots; redundant components are set to zero.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let r = self.rank;
        let mut y: Vec<f64> = (0..r).map(|k| b[self.perm[k]]).collect();
        for k in 0..r {
            let lkk = self.l[k * n + k];
            y[k] /= lkk;
            let yk = y[k];
            for i in k + 1..r {
                y[i] -= self.l[k * n + i] * yk;
            }
        }
        for k in (0..r).rev() {
            let dot: f64 = (k + 1..r).map(|i| self.l[k * n + i] * y[i]).sum();
            y[k] = (y[k] - dot) / self.l[k * n + k];
        }
        let mut x = vec![0.0; n];
        for k in 0..r {
            x[self.perm[k]] = y[k];
        }
        x
    }
}

/// Sparse vector with sorted indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    /// Sums duplicate entries of unsorted `(index, value)` pairs.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut out = Self::default();
        for (i, v) in pairs {
            if out.indices.last() == Some(&i) {
                *out.values.last_mut().unwrap() += v;
            } else {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut x = vec![0.0; n];
        self.add_to(&mut x, 1.0);
        x
    }

    /// `x += alpha * self`.
    pub fn add_to(&self, x: &mut [f64], alpha: f64) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            x[i as usize] += alpha * v;
        }
    }

    pub fn dot_dense(&self, x: &[f64]) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * x[i as usize]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0), (0, 0, 3.0), (0, 1, -1.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.transpose().get(1, 0), -1.0);
    }

    #[test]
    fn cg_solves_laplacian() {
        let a = laplace_1d(50);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.1).sin()).collect();
        let b = a.mul_vec(&x_true);
        let out = conjugate_gradient(&a, &b, 1e-12, 1000).unwrap();
        for (x, y) in out.solution.iter().zip(&x_true) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!(out.relative_residual <= 1e-12);
        let zero = conjugate_gradient(&a, &vec![0.0; 50], 1e-12, 10).unwrap();
        assert!(zero.solution.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn envelope_cholesky_matches_cg() {
        // 2d five-point Laplacian on a 7 x 5 grid, factor a subset of rows
        let (nx, ny) = (7, 5);
        let id = |i: usize, j: usize| i + nx * j;
        let mut t = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                t.push((id(i, j), id(i, j), 4.0 + 0.1 * i as f64));
                if i > 0 {
                    t.push((id(i, j), id(i - 1, j), -1.0));
                    t.push((id(i - 1, j), id(i, j), -1.0));
                }
                if j > 0 {
                    t.push((id(i, j), id(i, j - 1), -1.0));
                    t.push((id(i, j - 1), id(i, j), -1.0));
                }
            }
        }
        let a = CsrMatrix::from_triplets(nx * ny, nx * ny, t);
        let dofs: Vec<usize> = (0..nx * ny).filter(|k| k % 3 != 1).collect();
        let chol = EnvelopeCholesky::factor_submatrix(&a, &dofs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = dofs.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = chol.solve(&b);
        // residual of the restricted system
        for (r, &g) in dofs.iter().enumerate() {
            let (idx, val) = a.row(g);
            let mut acc = 0.0;
            for (&j, &v) in idx.iter().zip(val) {
                if let Ok(c) = dofs.binary_search(&j) {
                    acc += v * x[c];
                }
            }
            assert_relative_eq!(acc, b[r], epsilon = 1e-12);
        }
        // multiple right-hand sides agree with single solves
        let m = 3;
        let mut many = vec![0.0; dofs.len() * m];
        for i in 0..dofs.len() {
            for c in 0..m {
                many[i * m + c] = b[i] * (c as f64 + 1.0);
            }
        }
        chol.forward_many(&mut many, m);
        chol.backward_many(&mut many, m);
        for i in 0..dofs.len() {
            for c in 0..m {
                assert_relative_eq!(many[i * m + c], x[i] * (c as f64 + 1.0), epsilon = 1e-12);
            }
        }
        // staircase right-hand sides: column c starts at row 5 c
        let n = dofs.len();
        let width: Vec<usize> = (0..n).map(|i| (i / 5 + 1).min(m)).collect();
        let mut stair = vec![0.0; n * m];
        for i in 0..n {
            for c in 0..width[i] {
                stair[i * m + c] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut full = stair.clone();
        chol.forward_many(&mut full, m);
        chol.forward_many_profile(&mut stair, m, &width);
        for (x, y) in full.iter().zip(&stair) {
            assert_relative_eq!(x, y, epsilon = 1e-13);
        }
    }

    #[test]
    fn sparse_vector_merges_duplicates() {
        let v = SparseVector::from_pairs(vec![(3, 1.0), (1, 2.0), (3, 0.5)]);
        assert_eq!(v.indices, vec![1, 3]);
        assert_eq!(v.values, vec![2.0, 1.5]);
        assert_eq!(v.to_dense(4), vec![0.0, 2.0, 0.0, 1.5]);
        assert_eq!(v.dot_dense(&[1.0, 1.0, 1.0, 2.0]), 5.0);
    }

    #[test]
    fn envelope_cholesky_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(EnvelopeCholesky::factor_submatrix(&a, &[0, 1]).is_err());
    }

    #[test]
    fn pivoted_cholesky_handles_rank_deficiency() {
        // Gram matrix of 3 vectors where the third is the sum of the others
        let v = [[1.0, 2.0, 0.0, 1.0], [0.0, 1.0, 1.0, -1.0]];
        let w = [v[0], v[1], [1.0, 3.0, 1.0, 0.0]];
        let n = 3;
        let mut g = vec![0.0; 9];
        for i in 0..n {
            for j in 0..n {
                g[j * n + i] = (0..4).map(|k| w[i][k] * w[j][k]).sum();
            }
        }
        let pc = PivotedCholesky::new(g.clone(), n, 1e-12);
        assert_eq!(pc.rank(), 2);
        // consistent right side: b = G c
        let c = [0.3, -0.2, 0.7];
        let b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| g[j * n + i] * c[j]).sum()).collect();
        let x = pc.solve(&b);
        for i in 0..n {
            let gx: f64 = (0..n).map(|j| g[j * n + i] * x[j]).sum();
            assert_relative_eq!(gx, b[i], epsilon = 1e-12);
        }
    }
}
