//! Dense f32 tensors and the numeric kernels the pruning pipeline runs on.
//!
//! Storage is always f32, row-major. Reductions (dot products, convolution
//! windows, factorizations) accumulate in f64.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;

/// Dense n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid dims {dims:?}")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, (0..n).map(&mut f).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    /// `[C, H, W]` view of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected a [C,H,W] tensor, got {:?}",
                self.dims
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Row-major 2-D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    pub(crate) fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn into_tensor(self) -> Tensor {
        Tensor {
            dims: vec![self.rows, self.cols],
            data: self.data,
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        match t.dims[..] {
            [r, c] => Self::new(r, c, t.data),
            _ => Err(Error::Shape(format!(
                "expected a rank-2 tensor, got {:?}",
                t.dims
            ))),
        }
    }
}

fn out_extent(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < k || !(padded - k).is_multiple_of(stride) {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output spatial size of a window op, or `None` when the geometry does not tile.
pub fn window_output(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
    Some((out_extent(h, k, stride, pad)?, out_extent(w, k, stride, pad)?))
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &[f32], stride: usize, pad: usize) -> Result<Tensor> {
    let (c_in, h, w) = input.chw()?;
    let (c_out, k_in, kh, kw) = match kernel.dims[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::Shape(format!(
                "kernel must be [C_out,C_in,kh,kw], got {:?} (input {:?})",
                kernel.dims, input.dims
            )))
        }
    };
    if k_in != c_in || bias.len() != c_out {
        return Err(Error::Shape(format!(
            "kernel {:?} with bias of {} does not fit input {:?}",
            kernel.dims,
            bias.len(),
            input.dims
        )));
    }
    let (oh, ow) = match (out_extent(h, kh, stride, pad), out_extent(w, kw, stride, pad)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Shape(format!(
                "kernel {:?} with stride {stride}, pad {pad} does not tile input {:?}",
                kernel.dims, input.dims
            )))
        }
    };

    let plane = oh * ow;
    let mut out = vec![0.0f32; c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, out_plane)| {
        let mut acc = vec![bias[o] as f64; plane];
        for i in 0..c_in {
            let in_plane = &input.data[i * h * w..(i + 1) * h * w];
            for dy in 0..kh {
                for dx in 0..kw {
                    let kv = kernel.data[((o * c_in + i) * kh + dy) * kw + dx] as f64;
                    if kv == 0.0 {
                        continue;
                    }
                    for y in 0..oh {
                        let iy = (y * stride + dy) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                        let acc_row = &mut acc[y * ow..(y + 1) * ow];
                        for (x, a) in acc_row.iter_mut().enumerate() {
                            let ix = (x * stride + dx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *a += kv * in_row[ix as usize] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (dst, a) in out_plane.iter_mut().zip(acc) {
            *dst = a as f32;
        }
    });
    Tensor::new(vec![c_out, oh, ow], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

#[derive(Clone, Copy)]
enum Pool {
    Max,
    Avg,
}

fn pool2d(input: &Tensor, k: usize, stride: usize, pad: usize, mode: Pool) -> Result<Tensor> {
    let (c, h, w) = input.chw()?;
    let (oh, ow) = window_output(h, w, k, stride, pad).ok_or_else(|| {
        Error::Shape(format!(
            "pool k={k} stride={stride} pad={pad} does not tile input {:?}",
            input.dims
        ))
    })?;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &input.data[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let mut max = f32::NEG_INFINITY;
                let mut sum = 0.0f64;
                for dy in 0..k {
                    for dx in 0..k {
                        let iy = (y * stride + dy) as isize - pad as isize;
                        let ix = (x * stride + dx) as isize - pad as isize;
                        let v = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize]
                        } else {
                            0.0
                        };
                        max = max.max(v);
                        sum += v as f64;
                    }
                }
                out.push(match mode {
                    Pool::Max => max,
                    Pool::Avg => (sum / (k * k) as f64) as f32,
                });
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

pub fn maxpool2d(input: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    pool2d(input, k, stride, pad, Pool::Max)
}

/// Window mean; padded positions count as zeros in the `k·k` divisor.
pub fn avgpool2d(input: &Tensor, k: usize, stride: usize, pad: usize) -> Result<Tensor> {
    pool2d(input, k, stride, pad, Pool::Avg)
}

/// Numerically stable softmax over all elements.
pub fn softmax(input: &Tensor) -> Tensor {
    let max = input.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = input.data.iter().map(|&v| ((v - max) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor {
        dims: input.dims.clone(),
        data: exps.iter().map(|e| (e / total) as f32).collect(),
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let prod = linalg::matmul(&a.to_f64(), &b.to_f64(), a.rows, a.cols, b.cols);
    Matrix::from_f64(a.rows, b.cols, &prod)
}

pub fn transpose(a: &Matrix) -> Matrix {
    let mut data = vec![0.0; a.data.len()];
    for r in 0..a.rows {
        for c in 0..a.cols {
            data[c * a.rows + r] = a.data[r * a.cols + c];
        }
    }
    Matrix {
        rows: a.cols,
        cols: a.rows,
        data,
    }
}

/// Solves `A X = B` for symmetric positive-definite `A` via Cholesky, after
/// adding the ridge `1e-8·tr(A)/n·I`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols || b.rows != a.rows {
        return Err(Error::Shape(format!(
            "solve_spd needs square A matching B rows, got A {}x{}, B {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let x = linalg::solve_spd_ridged(&a.to_f64(), a.rows, &b.to_f64(), b.cols)?;
    Matrix::from_f64(b.rows, b.cols, &x)
}
