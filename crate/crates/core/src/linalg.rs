//! CSR matrices and a banded LU direct solver with partial pivoting.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("singular matrix: zero or non-finite pivot at row {row}")]
    Singular { row: usize },
    #[error("dimension mismatch: matrix is {rows}x{cols}, right-hand side has {rhs}")]
    Dimension { rows: usize, cols: usize, rhs: usize },
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        Self { rows: n, cols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows.iter().cloned() {
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for (c, v) in row {
                if c == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = c;
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { rows: rows.len(), cols, row_ptr, col_idx, values }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let cols = a.first().map_or(0, |r| r.len());
        let rows =
            a.iter().map(|r| r.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(c, v)| (c, *v)).collect()).collect();
        Self::from_rows(cols, rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.col_idx[k]] = self.values[k];
            }
        }
        d
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.col_idx[k], self.values[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut rows = vec![Vec::new(); self.cols];
        for i in 0..self.rows {
            for (c, v) in self.row(i) {
                rows[c].push((i, v));
            }
        }
        SparseMatrix::from_rows(self.rows, rows)
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.rows {
            for (c, _) in self.row(i) {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }

    /// Largest entrywise difference relative to the largest entry of `self`.
    pub fn max_relative_difference(&self, other: &SparseMatrix) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0f64;
        for i in 0..self.rows.max(other.rows) {
            let mut a: Vec<(usize, f64)> = if i < self.rows { self.row(i).collect() } else { vec![] };
            let b: Vec<(usize, f64)> = if i < other.rows { other.row(i).collect() } else { vec![] };
            for (c, v) in b {
                match a.iter_mut().find(|e| e.0 == c) {
                    Some(e) => e.1 -= v,
                    None => a.push((c, -v)),
                }
            }
            for (_, d) in a {
                worst = worst.max(d.abs() / scale);
            }
        }
        worst
    }

    /// Max relative asymmetry `|a_ij − a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        self.max_relative_difference(&self.transpose())
    }
}

/// Banded LU factorization with partial pivoting. Row interchanges widen the
/// upper band to `kl + ku`, as in LAPACK's `gbtrf`.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major band storage: row `i` holds columns `i − kl ..= i + kl + ku`.
    band: Vec<f64>,
    width: usize,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self, SolverError> {
        if a.rows != a.cols {
            return Err(SolverError::Dimension { rows: a.rows, cols: a.cols, rhs: a.rows });
        }
        let n = a.rows;
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (c, v) in a.row(i) {
                band[i * width + (c + kl - i)] = v;
            }
        }
        let mut lu = Self { n, kl, ku, band, width, pivots: vec![0; n] };
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    fn eliminate(&mut self) -> Result<(), SolverError> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.band[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.band[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.pivots[k] = p;
            if best == 0.0 || !best.is_finite() {
                return Err(SolverError::Singular { row: k });
            }
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.band.swap(a, b);
                }
            }
            let pivot = self.band[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.band[ik] / pivot;
                self.band[ik] = l;
                if l == 0.0 {
                    continue;
                }
                let (ri, rk) = (self.idx(i, k + 1), self.idx(k, k + 1));
                for off in 0..last_col - k {
                    self.band[ri + off] -= l * self.band[rk + off];
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        self.check(rhs)?;
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = rhs.to_vec();
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                x[i] -= self.band[self.idx(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.band[self.idx(k, j)] * x[j];
            }
            x[k] = s / self.band[self.idx(k, k)];
        }
        Ok(x)
    }

    /// Solves `Aᵀ x = rhs` with the same factorization.
    pub fn solve_transpose(&self, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
        self.check(rhs)?;
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = rhs.to_vec();
        // Uᵀ y = rhs
        for k in 0..n {
            let mut s = x[k];
            for i in k.saturating_sub(kl + ku)..k {
                s -= self.band[self.idx(i, k)] * x[i];
            }
            x[k] = s / self.band[self.idx(k, k)];
        }
        // Lᵀ then the row interchanges in reverse.
        for k in (0..n).rev() {
            let mut s = x[k];
            for i in k + 1..=(k + kl).min(n.saturating_sub(1)) {
                s -= self.band[self.idx(i, k)] * x[i];
            }
            x[k] = s;
            x.swap(k, self.pivots[k]);
        }
        Ok(x)
    }

    fn check(&self, rhs: &[f64]) -> Result<(), SolverError> {
        if rhs.len() != self.n {
            return Err(SolverError::Dimension { rows: self.n, cols: self.n, rhs: rhs.len() });
        }
        Ok(())
    }
}

/// Solves `a x = rhs` by banded LU.
pub fn linear_solve(a: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
    if rhs.len() != a.rows {
        return Err(SolverError::Dimension { rows: a.rows, cols: a.cols, rhs: rhs.len() });
    }
    BandedLu::factor(a)?.solve(rhs)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn dense_gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let l = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= l * a[k][j];
                }
                b[i] -= l * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn identity_and_two_by_two() {
        let i = SparseMatrix::identity(4);
        assert_eq!(linear_solve(&i, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let a = SparseMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let x = linear_solve(&a, &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_spd_matches_dense_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let n = 50;
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| m[i][k] * m[j][k]).sum::<f64>();
            }
            a[i][i] += n as f64;
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = linear_solve(&SparseMatrix::from_dense(&a), &b).unwrap();
        let oracle = dense_gauss(a.clone(), b.clone());
        let err = norm2(&x.iter().zip(&oracle).map(|(p, q)| p - q).collect::<Vec<_>>()) / norm2(&oracle);
        assert!(err < 1e-10);
        let r = SparseMatrix::from_dense(&a).mul_vec(&x);
        let res = norm2(&r.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>()) / norm2(&b);
        assert!(res < 1e-10);
    }

    #[test]
    fn banded_nonsymmetric_with_pivoting_and_transpose() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let n = 40;
        let (kl, ku) = (3, 5);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                a[i][j] = rng.random_range(-1.0..1.0);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.1).collect();
        let sp = SparseMatrix::from_dense(&a);
        let lu = BandedLu::factor(&sp).unwrap();
        let x = lu.solve(&b).unwrap();
        let oracle = dense_gauss(a.clone(), b.clone());
        for (p, q) in x.iter().zip(&oracle) {
            assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()));
        }
        let at: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[j][i]).collect()).collect();
        let xt = lu.solve_transpose(&b).unwrap();
        let oracle_t = dense_gauss(at, b);
        for (p, q) in xt.iter().zip(&oracle_t) {
            assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn singular_reports_pivot() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(linear_solve(&a, &[1.0, 1.0]), Err(SolverError::Singular { row: 1 }));
    }

    #[test]
    fn csr_duplicates_are_summed_and_sorted() {
        let m = SparseMatrix::from_rows(3, vec![vec![(2, 1.0), (0, 2.0), (2, 3.0)], vec![]]);
        assert_eq!(m.col_idx, vec![0, 2]);
        assert_eq!(m.values, vec![2.0, 4.0]);
        assert_eq!(m.row_ptr, vec![0, 2, 2]);
        assert_eq!(m.get(0, 2), 4.0);
    }
}
