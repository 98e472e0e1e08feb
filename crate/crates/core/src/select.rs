//! Channel importance from group-sparse self-reconstruction.
//!
//! Solves
//!
//! ```text
//! min_U  ½‖D − DU‖²_F + λ Σ_i ‖u^i‖₂    s.t.  1ᵀU = 1ᵀ
//! ```
//!
//! by ADMM on the split `U = Z`. The U-step is an equality-constrained
//! quadratic solved exactly through its KKT system, the Z-step is row-wise
//! group soft-thresholding. Everything runs on the `C×C` Gram matrix.
//!
//! On the feasible set `(I − U)` has zero column sums, so the loss only sees
//! `D` through the channel-centered Gram `P DᵀD P` with `P = I − 11ᵀ/C`.
//! The solver works with that matrix, which makes the result independent of
//! a common translation added to every column of `D`. The problem is scaled
//! by `1/λ_ref` with `λ_ref = max_i ‖(P DᵀD P)_i‖₂`, so `λ = lambda_rel`
//! and `rho` are dimensionless; `objective_trace` is in these scaled units.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datamatrix::DataMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Regularization as a fraction of `λ_ref`.
    pub lambda_rel: f32,
    pub rho: f32,
    pub max_iters: usize,
    pub tol_primal: f32,
    pub tol_dual: f32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda_rel: 0.05,
            rho: 1.0,
            max_iters: 500,
            tol_primal: 1e-5,
            tol_dual: 1e-5,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(lambda_rel: f32) -> Self {
        SolverConfig {
            lambda_rel,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_rel > 0.0 && self.lambda_rel <= 1.0) {
            return Err(Error::Domain(format!("lambda_rel {} outside (0, 1]", self.lambda_rel)));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Domain(format!("rho must be positive, got {}", self.rho)));
        }
        if self.max_iters == 0 {
            return Err(Error::Domain("max_iters must be at least 1".into()));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionCoefficients {
    /// `C×C`, columns summing to one.
    pub u: Matrix,
    /// Scaled objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iters_used: usize,
    /// `λ_ref` of the data; the unscaled penalty weight is `lambda_rel · lambda_ref`.
    pub lambda_ref: f64,
}

/// Channel-centered Gram matrix `P G P`.
fn center_gram(g: &[f64], c: usize) -> Vec<f64> {
    let row_mean: Vec<f64> = (0..c)
        .map(|i| g[i * c..(i + 1) * c].iter().sum::<f64>() / c as f64)
        .collect();
    let all_mean = row_mean.iter().sum::<f64>() / c as f64;
    let mut out = vec![0.0; c * c];
    for i in 0..c {
        for j in 0..c {
            out[i * c + j] = g[i * c + j] - row_mean[i] - row_mean[j] + all_mean;
        }
    }
    out
}

fn scaled_objective(gn: &[f64], u: &[f64], c: usize, lambda: f64) -> f64 {
    let mut e: Vec<f64> = u.iter().map(|v| -v).collect();
    for i in 0..c {
        e[i * c + i] += 1.0;
    }
    let ge = linalg::matmul(gn, &e, c, c, c);
    let loss = 0.5 * e.iter().zip(&ge).map(|(a, b)| a * b).sum::<f64>();
    let penalty: f64 = u.chunks(c).map(linalg::frobenius).sum();
    loss + lambda * penalty
}

/// Group-sparse self-reconstruction of the columns of `d`.
pub fn solve_group_sparse(d: &DataMatrix, cfg: &SolverConfig) -> Result<ReconstructionCoefficients> {
    solve_matrix(&d.values, cfg)
}

/// [`solve_group_sparse`] on a bare `rows × C` matrix.
pub fn solve_matrix(values: &Matrix, cfg: &SolverConfig) -> Result<ReconstructionCoefficients> {
    cfg.validate()?;
    let (rows, c) = (values.rows(), values.cols());
    if rows < c {
        return Err(Error::Domain(format!(
            "data matrix has {rows} rows for {c} channels; sample more images"
        )));
    }
    if values.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("data matrix contains non-finite values".into()));
    }
    let g = center_gram(&linalg::gram(values.data(), rows, c), c);
    let lambda_ref = g.chunks(c).map(linalg::frobenius).fold(0.0, f64::max);
    if !(lambda_ref > 0.0) {
        return Err(Error::Numeric(
            "channels are translates of one another; nothing to rank".into(),
        ));
    }
    let gn: Vec<f64> = g.iter().map(|v| v / lambda_ref).collect();
    let lambda = cfg.lambda_rel as f64;
    let rho = cfg.rho as f64;

    let mut a = gn.clone();
    for i in 0..c {
        a[i * c + i] += rho;
    }
    let a_inv = linalg::spd_inverse(&a, c)?;
    // KKT pieces for the column-sum constraint
    let ones_sol: Vec<f64> = a_inv.chunks(c).map(|r| r.iter().sum()).collect();
    let ones_dot: f64 = ones_sol.iter().sum();
    let base = linalg::matmul(&a_inv, &gn, c, c, c);

    let mut u = vec![0.0; c * c];
    for i in 0..c {
        u[i * c + i] = 1.0;
    }
    let mut z = u.clone();
    let mut y = vec![0.0; c * c];
    let kappa = lambda / rho;
    let sqrt_c = (c as f64).sqrt();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    for it in 0..cfg.max_iters {
        iters = it + 1;
        // U-step
        let r: Vec<f64> = z.iter().zip(&y).map(|(zv, yv)| zv - yv).collect();
        let ar = linalg::matmul(&a_inv, &r, c, c, c);
        let mut t: Vec<f64> = base.iter().zip(&ar).map(|(b, v)| b + rho * v).collect();
        let mut col_sum = vec![0.0; c];
        for row in t.chunks(c) {
            for (s, v) in col_sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        let mu: Vec<f64> = col_sum.iter().map(|s| (s - 1.0) / ones_dot).collect();
        for (i, row) in t.chunks_mut(c).enumerate() {
            for (v, m) in row.iter_mut().zip(&mu) {
                *v -= ones_sol[i] * m;
            }
        }
        u = t;

        // Z-step: row-wise group soft threshold of U + Y
        let z_old = std::mem::take(&mut z);
        z = u.iter().zip(&y).map(|(a, b)| a + b).collect();
        for row in z.chunks_mut(c) {
            let norm = linalg::frobenius(row);
            let shrink = if norm > kappa { 1.0 - kappa / norm } else { 0.0 };
            row.iter_mut().for_each(|v| *v *= shrink);
        }

        // dual step
        let mut primal = 0.0;
        for ((yv, uv), zv) in y.iter_mut().zip(&u).zip(&z) {
            let diff = uv - zv;
            *yv += diff;
            primal += diff * diff;
        }
        let primal = primal.sqrt();
        let dual = rho
            * z.iter()
                .zip(&z_old)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();

        let obj = scaled_objective(&gn, &u, c, lambda);
        if !obj.is_finite() || !primal.is_finite() || !dual.is_finite() {
            return Err(Error::Divergence(format!("non-finite iterate at iteration {iters}")));
        }
        trace.push(obj);

        let eps_pri = cfg.tol_primal as f64 * (sqrt_c + linalg::frobenius(&u).max(linalg::frobenius(&z)));
        let eps_dual = cfg.tol_dual as f64 * (sqrt_c + rho * linalg::frobenius(&y));
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }
    }
    log::debug!(
        "group-sparse solve: C={c} iters={iters} converged={converged} objective={:?}",
        trace.last()
    );
    Ok(ReconstructionCoefficients {
        u: Matrix::from_f64(c, c, &u)?,
        objective_trace: trace,
        converged,
        iters_used: iters,
        lambda_ref,
    })
}

/// Per-channel importance factors and their ranking for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub layer: String,
    /// `‖u^i‖₂` for each channel `i`.
    pub factors: Vec<f32>,
    /// Channels from most to least important; equal factors keep the lower
    /// index first.
    pub ranking: Vec<usize>,
}

impl ImportanceReport {
    pub fn from_factors(layer: &str, factors: Vec<f32>) -> Self {
        let mut ranking: Vec<usize> = (0..factors.len()).collect();
        ranking.sort_by(|&a, &b| {
            factors[b]
                .partial_cmp(&factors[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        ImportanceReport {
            layer: layer.to_string(),
            factors,
            ranking,
        }
    }

    pub fn channels(&self) -> usize {
        self.factors.len()
    }

    /// `channel,factor,rank` rows in ranking order (rank 0 = most important).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("channel,factor,rank\n");
        for (rank, &ch) in self.ranking.iter().enumerate() {
            writeln!(out, "{ch},{},{rank}", self.factors[ch]).unwrap();
        }
        out
    }

    pub fn from_csv(layer: &str, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("channel,factor,rank") {
            return Err(Error::Format("importance CSV must start with 'channel,factor,rank'".into()));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Format(format!("bad importance CSV row {}: '{line}'", i + 2));
            let mut parts = line.split(',');
            let ch: usize = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            let f: f32 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
            entries.push((ch, f));
        }
        let n = entries.len();
        let mut factors = vec![f32::NAN; n];
        for (ch, f) in entries {
            if ch >= n || !factors[ch].is_nan() {
                return Err(Error::Format(format!("channel {ch} duplicated or out of range")));
            }
            factors[ch] = f;
        }
        Ok(Self::from_factors(layer, factors))
    }
}

/// Row norms of `U` as importance factors.
pub fn importance_report(u: &ReconstructionCoefficients, layer: &str) -> ImportanceReport {
    importance_from_matrix(&u.u, layer)
}

pub fn importance_from_matrix(u: &Matrix, layer: &str) -> ImportanceReport {
    let factors = (0..u.rows())
        .map(|i| {
            u.row(i)
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt() as f32
        })
        .collect();
    ImportanceReport::from_factors(layer, factors)
}
