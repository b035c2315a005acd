//! Exact rational linear algebra used as an independent oracle.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

pub fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite value")
}

pub fn to_rational(a: &DMatrix<f64>) -> Vec<Vec<BigRational>> {
    (0..a.nrows()).map(|r| (0..a.ncols()).map(|c| rational(a[(r, c)])).collect()).collect()
}

/// Rank by fraction-exact Gaussian elimination.
pub fn exact_rank(mut rows: Vec<Vec<BigRational>>) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let ncols = rows[0].len();
    let mut rank = 0;
    for col in 0..ncols {
        let Some(pivot) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, pivot);
        let p = rows[rank][col].clone();
        for r in 0..rows.len() {
            if r != rank && !rows[r][col].is_zero() {
                let f = &rows[r][col] / &p;
                for c in col..ncols {
                    let delta = &f * &rows[rank][c];
                    rows[r][c] -= delta;
                }
            }
        }
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    rank
}

/// Solves the square system `a x = b` exactly.
pub fn exact_solve(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Vec<BigRational> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero()).expect("nonsingular system");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col].clone();
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = &a[r][col] / &p;
                for c in col..n {
                    let delta = &f * &a[col][c];
                    a[r][c] -= delta;
                }
                let delta = &f * &b[col];
                b[r] -= delta;
            }
        }
    }
    (0..n).map(|i| &b[i] / &a[i][i]).collect()
}

/// `(H^T E^-1 H)^{-1} H^T E^-1 z` in exact arithmetic, `E = diag(variances)`.
pub fn normal_equations(h: &DMatrix<f64>, variances: &[f64], z: &[f64]) -> Vec<f64> {
    let hr = to_rational(h);
    let w: Vec<BigRational> = variances.iter().map(|v| rational(*v).recip()).collect();
    let zr: Vec<BigRational> = z.iter().map(|v| rational(*v)).collect();
    let (m, n) = (h.nrows(), h.ncols());
    let mut a = vec![vec![BigRational::zero(); n]; n];
    let mut b = vec![BigRational::zero(); n];
    for k in 0..m {
        if w[k].is_zero() {
            continue;
        }
        for i in 0..n {
            if hr[k][i].is_zero() {
                continue;
            }
            let wi = &w[k] * &hr[k][i];
            b[i] += &wi * &zr[k];
            for j in 0..n {
                if !hr[k][j].is_zero() {
                    a[i][j] += &wi * &hr[k][j];
                }
            }
        }
    }
    exact_solve(a, b).iter().map(|v| v.to_f64().expect("finite")).collect()
}
