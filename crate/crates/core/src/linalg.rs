//! Dense f64 kernels shared by the least-squares fit and the group-sparse solver.
//!
//! Matrices are row-major `Vec<f64>` buffers; callers carry the dimensions.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative ridge added to SPD systems before factorization.
pub const RIDGE_EPS: f64 = 1e-8;

/// `a (m×k) · b (k×n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let arow = &a[i * k..(i + 1) * k];
            for (p, &aip) in arow.iter().enumerate() {
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        });
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Gram matrix `Xᵀ X` of a row-major f32 matrix, accumulated in f64.
pub fn gram(x: &[f32], rows: usize, cols: usize) -> Vec<f64> {
    let partial = x
        .par_chunks(cols.max(1) * 256)
        .map(|block| {
            let mut acc = vec![0.0f64; cols * cols];
            for row in block.chunks(cols) {
                for i in 0..cols {
                    let xi = row[i] as f64;
                    if xi == 0.0 {
                        continue;
                    }
                    let acc_row = &mut acc[i * cols..(i + 1) * cols];
                    for j in i..cols {
                        acc_row[j] += xi * row[j] as f64;
                    }
                }
            }
            acc
        })
        .collect::<Vec<_>>();
    // Blocks are summed in order so the result does not depend on scheduling.
    let mut g = vec![0.0; cols * cols];
    for block in partial {
        g.iter_mut().zip(&block).for_each(|(x, y)| *x += y);
    }
    debug_assert!(rows == 0 || x.len() == rows * cols);
    for i in 0..cols {
        for j in 0..i {
            g[i * cols + j] = g[j * cols + i];
        }
    }
    g
}

/// In-place lower Cholesky factor of an `n×n` SPD matrix. The strict upper
/// triangle is zeroed.
pub fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular(format!(
                "non-positive pivot {d:e} at column {j} of {n}"
            )));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ X = B` in place for `nrhs` right-hand-side columns.
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64], nrhs: usize) {
    // forward: L y = b
    for i in 0..n {
        for k in 0..i {
            let lik = l[i * n + k];
            if lik == 0.0 {
                continue;
            }
            for c in 0..nrhs {
                b[i * nrhs + c] -= lik * b[k * nrhs + c];
            }
        }
        let d = l[i * n + i];
        for c in 0..nrhs {
            b[i * nrhs + c] /= d;
        }
    }
    // backward: Lᵀ x = y
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[k * n + i];
            if lki == 0.0 {
                continue;
            }
            for c in 0..nrhs {
                b[i * nrhs + c] -= lki * b[k * nrhs + c];
            }
        }
        let d = l[i * n + i];
        for c in 0..nrhs {
            b[i * nrhs + c] /= d;
        }
    }
}

/// Solves `(A + ε·tr(A)/n·I) X = B` for SPD `A`.
pub fn solve_spd_ridged(a: &[f64], n: usize, b: &[f64], nrhs: usize) -> Result<Vec<f64>> {
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in linear system".into()));
    }
    let mut l = a.to_vec();
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let ridge = RIDGE_EPS * trace / n as f64;
    for i in 0..n {
        l[i * n + i] += ridge;
    }
    cholesky(&mut l, n)?;
    let mut x = b.to_vec();
    cholesky_solve(&l, n, &mut x, nrhs);
    Ok(x)
}

/// Inverse of an SPD matrix through its Cholesky factor (no ridge).
pub fn spd_inverse(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = a.to_vec();
    cholesky(&mut l, n)?;
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    cholesky_solve(&l, n, &mut inv, n);
    Ok(inv)
}

pub fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
