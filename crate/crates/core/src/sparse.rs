//! Compressed sparse row storage and a sparse Cholesky solver.
//!
//! Factorization is delegated to `faer`; this module only adapts our CSR
//! layout and error type.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{MatMut, Par, Side};

use crate::error::{Error, Result};

/// Row-compressed sparse matrix with sorted column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from a sorted per-row pattern with zero values.
    pub fn from_pattern(ncols: usize, rows: Vec<Vec<usize>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let mut indices = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            indices.extend_from_slice(&r);
            indptr.push(indices.len());
        }
        let data = vec![0.0; indices.len()];
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Position of entry `(row, col)` in `data`, if it is in the pattern.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (s, e) = (self.indptr[row], self.indptr[row + 1]);
        self.indices[s..e].binary_search(&col).ok().map(|k| s + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.data[p])
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[row], self.indptr[row + 1]);
        self.indices[s..e].iter().copied().zip(self.data[s..e].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.ncols,
                got: x.len(),
            });
        }
        Ok((0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let ax = self.matvec(x)?;
        Ok(dot(&ax, x))
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }

    /// Submatrix with the given global row and column index lists.
    pub fn extract(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (local, &g) in cols.iter().enumerate() {
            col_map[g] = local;
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        for &r in rows {
            let mut entries: Vec<(usize, f64)> = self
                .row(r)
                .filter_map(|(c, v)| (col_map[c] != usize::MAX).then(|| (col_map[c], v)))
                .collect();
            entries.sort_unstable_by_key(|e| e.0);
            for (c, v) in entries {
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: rows.len(),
            ncols: cols.len(),
            indptr,
            indices,
            data,
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sparse `LLᵀ` factorization of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl SparseCholesky {
    /// Factors a symmetric matrix stored with both triangles.
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Factorization(format!(
                "matrix is {}x{}, not square",
                a.nrows, a.ncols
            )));
        }
        let n = a.nrows;
        // Sequential factorization keeps results bit-identical across runs.
        faer::set_global_parallelism(Par::Seq);
        // A symmetric CSR matrix is its own CSC transpose.
        let symbolic = SymbolicSparseColMat::<usize>::new_checked(
            n,
            n,
            a.indptr.clone(),
            None,
            a.indices.clone(),
        );
        let mat = SparseColMat::<usize, f64>::new(symbolic, a.data.clone());
        let llt = mat
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::Factorization(format!("sparse Cholesky failed: {e}")))?;
        Ok(SparseCholesky { n, llt })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n, "right-hand side length");
        let m = MatMut::from_column_major_slice_mut(rhs, self.n, 1);
        self.llt.solve_in_place(m);
    }

    /// Solves for `ncols` right-hand sides stored column-major in `rhs`.
    pub fn solve_many_in_place(&self, rhs: &mut [f64], ncols: usize) {
        assert_eq!(rhs.len(), self.n * ncols, "right-hand side block size");
        let m = MatMut::from_column_major_slice_mut(rhs, self.n, ncols);
        self.llt.solve_in_place(m);
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![i];
                if i > 0 {
                    r.push(i - 1);
                }
                if i + 1 < n {
                    r.push(i + 1);
                }
                r
            })
            .collect();
        let mut a = CsrMatrix::from_pattern(n, rows);
        for i in 0..n {
            let p = a.position(i, i).unwrap();
            a.data[p] = 2.0;
            if i > 0 {
                let p = a.position(i, i - 1).unwrap();
                a.data[p] = -1.0;
            }
            if i + 1 < n {
                let p = a.position(i, i + 1).unwrap();
                a.data[p] = -1.0;
            }
        }
        a
    }

    #[test]
    fn cholesky_solves_tridiagonal() {
        let a = laplacian_1d(50);
        assert!(a.is_symmetric());
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.matvec(&x_true).unwrap();
        let chol = SparseCholesky::new(&a).unwrap();
        let x = chol.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_fails() {
        let mut a = laplacian_1d(5);
        for v in a.data.iter_mut() {
            *v = -*v;
        }
        assert!(matches!(SparseCholesky::new(&a), Err(Error::Factorization(_))));
    }

    #[test]
    fn extract_submatrix() {
        let a = laplacian_1d(6);
        let s = a.extract(&[1, 2, 4], &[2, 1]);
        assert_eq!(s.nrows, 3);
        assert_eq!(s.get(0, 0), -1.0); // a[1][2]
        assert_eq!(s.get(0, 1), 2.0); // a[1][1]
        assert_eq!(s.get(1, 0), 2.0); // a[2][2]
        assert_eq!(s.get(2, 0), 0.0); // a[4][2]
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let a = laplacian_1d(4);
        assert!(matches!(a.matvec(&[1.0; 3]), Err(Error::DimensionMismatch { .. })));
    }
}
