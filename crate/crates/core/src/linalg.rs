//! Small dense matrices for the estimator kernels.
//!
//! Coefficient dimensions here are tiny (l <= a few dozen), so a flat
//! row-major `Vec` with an unpivoted Cholesky is all we need.

use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    n_rows: usize,
    n_cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, data: vec![F::zero(); n_rows * n_cols] }
    }

    pub fn from_rows(rows: Vec<Vec<F>>) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            assert_eq!(row.len(), n_cols, "ragged rows");
            data.extend(row);
        }
        Self { n_rows, n_cols, data }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> F {
        self.data[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: F) {
        self.data[i * self.n_cols + j] = value;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, value: F) {
        self.data[i * self.n_cols + j] += value;
    }

    pub fn diagonal(&self) -> Vec<F> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// Maximum absolute asymmetry, `max |A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> F {
        let mut worst = F::zero();
        for i in 0..self.n_rows {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Replace `A` by `(A + A^T) / 2`.
    pub fn symmetrize(&mut self) {
        let half = F::cast(0.5);
        for i in 0..self.n_rows {
            for j in 0..i {
                let m = (self.get(i, j) + self.get(j, i)) * half;
                self.set(i, j, m);
                self.set(j, i, m);
            }
        }
    }

    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .map(|i| {
                let row = &self.data[i * self.n_cols..(i + 1) * self.n_cols];
                dot(row, x)
            })
            .collect()
    }

    pub fn matmul(&self, other: &Matrix<F>) -> Matrix<F> {
        assert_eq!(self.n_cols, other.n_rows);
        let mut out = Matrix::zeros(self.n_rows, other.n_cols);
        for i in 0..self.n_rows {
            for k in 0..self.n_cols {
                let a = self.get(i, k);
                if a == F::zero() {
                    continue;
                }
                for j in 0..other.n_cols {
                    out.add_at(i, j, a * other.get(k, j));
                }
            }
        }
        out
    }

    /// Rank-one update `A += c * x x^T` for symmetric accumulation.
    pub fn add_outer(&mut self, c: F, x: &[F]) {
        assert_eq!(x.len(), self.n_rows);
        assert_eq!(x.len(), self.n_cols);
        for i in 0..x.len() {
            let cxi = c * x[i];
            if cxi == F::zero() {
                continue;
            }
            for j in 0..x.len() {
                self.add_at(i, j, cxi * x[j]);
            }
        }
    }

    /// Cholesky factorization of a symmetric positive-definite matrix.
    ///
    /// Pivots that fall below `rel_tol` times the largest diagonal entry are
    /// reported as dependent columns instead of producing a factor.
    pub fn cholesky(&self, rel_tol: F) -> Result<Cholesky<F>, Vec<usize>> {
        assert_eq!(self.n_rows, self.n_cols, "cholesky needs a square matrix");
        let n = self.n_rows;
        let mut max_diag = F::zero();
        for i in 0..n {
            max_diag = max_diag.max(self.get(i, i).abs());
        }
        let threshold = if max_diag > F::zero() { rel_tol * max_diag } else { rel_tol };

        let mut lower = Matrix::zeros(n, n);
        let mut dependent = Vec::new();
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                let l = lower.get(j, k);
                d -= l * l;
            }
            if !(d > threshold) {
                // Treat the column as linearly dependent on its predecessors
                // and keep scanning so every offending column gets reported.
                dependent.push(j);
                continue;
            }
            let pivot = d.sqrt();
            lower.set(j, j, pivot);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= lower.get(i, k) * lower.get(j, k);
                }
                lower.set(i, j, s / pivot);
            }
        }
        if dependent.is_empty() {
            Ok(Cholesky { lower })
        } else {
            Err(dependent)
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky<F> {
    lower: Matrix<F>,
}

impl<F: Scalar> Cholesky<F> {
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.lower.n_rows;
        assert_eq!(b.len(), n);
        // forward substitution L y = b
        let mut y = vec![F::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower.get(i, k) * y[k];
            }
            y[i] = s / self.lower.get(i, i);
        }
        // back substitution L^T x = y
        let mut x = vec![F::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower.get(k, i) * x[k];
            }
            x[i] = s / self.lower.get(i, i);
        }
        x
    }

    pub fn inverse(&self) -> Matrix<F> {
        let n = self.lower.n_rows;
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![F::zero(); n];
        for j in 0..n {
            e[j] = F::one();
            let col = self.solve(&e);
            e[j] = F::zero();
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv.symmetrize();
        inv
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}
