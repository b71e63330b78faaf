//! Small dense linear algebra: row-major matrices, Householder least squares
//! and pivoted Gaussian elimination. Designs here have a handful of columns,
//! so nothing is blocked or vectorized.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sqrt;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged matrix rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| crate::math::dot(self.row(r), v)).collect()
    }
}

/// Outcome of a weighted least-squares solve.
#[derive(Clone, Debug)]
pub enum LstsqError {
    /// Column `usize` is (numerically) in the span of the columns before it.
    RankDeficient(usize),
}

/// Minimizes `sum_i w_i (y_i - x_i^T b)^2` by Householder QR on the
/// `sqrt(w)`-scaled design. Weights must be nonnegative.
pub fn weighted_lstsq(x: &Matrix, y: &[f64], w: Option<&[f64]>) -> Result<Vec<f64>, LstsqError> {
    let n = x.rows();
    let p = x.cols();
    // Column-major copy of the scaled design.
    let mut a: Vec<Vec<f64>> = (0..p)
        .map(|c| {
            (0..n)
                .map(|r| x.get(r, c) * w.map_or(1.0, |w| sqrt(w[r])))
                .collect()
        })
        .collect();
    let mut b: Vec<f64> = (0..n).map(|r| y[r] * w.map_or(1.0, |w| sqrt(w[r]))).collect();
    let col_norms: Vec<f64> = a.iter().map(|c| sqrt(c.iter().map(|v| v * v).sum())).collect();
    let scale = col_norms.iter().cloned().fold(0.0, f64::max);
    if n < p {
        return Err(LstsqError::RankDeficient(n));
    }
    let mut rdiag = vec![0.0; p];
    for k in 0..p {
        let norm = sqrt(a[k][k..].iter().map(|v| v * v).sum());
        // Relative to the original column norm: catches exact and near collinearity.
        let tol = 1e-10 * col_norms[k].max(1e-300);
        if norm <= tol || col_norms[k] <= 1e-14 * scale.max(1e-300) {
            return Err(LstsqError::RankDeficient(k));
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        rdiag[k] = alpha;
        if vnorm2 > 0.0 {
            for j in k..p {
                let s: f64 = v.iter().zip(&a[j][k..]).map(|(vi, aj)| vi * aj).sum();
                let f = 2.0 * s / vnorm2;
                for (t, vi) in v.iter().enumerate() {
                    a[j][k + t] -= f * vi;
                }
            }
            let s: f64 = v.iter().zip(&b[k..]).map(|(vi, bi)| vi * bi).sum();
            let f = 2.0 * s / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                b[k + t] -= f * vi;
            }
        }
        a[k][k] = alpha;
    }
    let mut coef = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = b[k];
        for j in k + 1..p {
            s -= a[j][k] * coef[j];
        }
        coef[k] = s / rdiag[k];
    }
    Ok(coef)
}

/// Solves the square system `m x = rhs` by Gaussian elimination with partial
/// pivoting; `None` if a pivot is numerically zero.
pub fn solve(m: &Matrix, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = m.rows();
    assert_eq!(n, m.cols());
    assert_eq!(n, rhs.len());
    let mut a = m.clone();
    let mut b = rhs.to_vec();
    let scale = a.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for k in 0..n {
        let (piv, max) = (k..n)
            .map(|r| (r, a.get(r, k).abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if max <= 1e-13 * scale {
            return None;
        }
        if piv != k {
            for c in 0..n {
                let t = a.get(k, c);
                a.set(k, c, a.get(piv, c));
                a.set(piv, c, t);
            }
            b.swap(k, piv);
        }
        for r in k + 1..n {
            let f = a.get(r, k) / a.get(k, k);
            if f != 0.0 {
                for c in k..n {
                    let v = a.get(r, c) - f * a.get(k, c);
                    a.set(r, c, v);
                }
                b[r] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for c in k + 1..n {
            s -= a.get(k, c) * x[c];
        }
        x[k] = s / a.get(k, k);
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_exact_line() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]);
        let c = weighted_lstsq(&x, &[1.0, 3.0, 5.0], None).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lstsq_detects_collinear_column() {
        let x = Matrix::from_rows(&[
            vec![1.0, 1.0, 2.0],
            vec![1.0, 2.0, 4.0],
            vec![1.0, 3.0, 6.0],
            vec![1.0, 5.0, 10.0],
        ]);
        match weighted_lstsq(&x, &[0.0, 1.0, 2.0, 3.0], None) {
            Err(LstsqError::RankDeficient(2)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn residual_orthogonal_to_columns() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64, ((i * 7) % 5) as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| ((i * 13) % 11) as f64 - 3.0).collect();
        let w: Vec<f64> = (0..20).map(|i| 0.5 + (i % 3) as f64).collect();
        let x = Matrix::from_rows(&rows);
        let c = weighted_lstsq(&x, &y, Some(&w)).unwrap();
        for col in 0..3 {
            let s: f64 = (0..20).map(|r| w[r] * x.get(r, col) * (y[r] - crate::math::dot(x.row(r), &c))).sum();
            assert!(s.abs() < 1e-9, "column {col}: {s}");
        }
    }

    #[test]
    fn solve_pivots() {
        let m = Matrix::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]);
        let x = solve(&m, &[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert!(solve(&Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]), &[1.0, 2.0]).is_none());
    }
}
