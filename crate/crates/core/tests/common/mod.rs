//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the solver or least-squares code paths it is
//! used to check.

#![allow(dead_code)]

use chanprune_core::model::{Conv, Layer, ModelGraph};
use chanprune_core::prune::{fold_upper_kernel, slice_kernel};
use chanprune_core::tensor::{Matrix, Tensor};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) as f64)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `max_i ‖(P DᵀD P)_i‖₂`, with `P` the channel-centering projector.
pub fn lambda_ref(d: &DMatrix<f64>) -> f64 {
    let c = d.ncols();
    let p = DMatrix::<f64>::identity(c, c) - DMatrix::from_element(c, c, 1.0 / c as f64);
    let g = &p * d.transpose() * d * &p;
    (0..c).map(|i| g.row(i).norm()).fold(0.0, f64::max)
}

/// `½‖D − DU‖²_F + λ Σ_i ‖u^i‖₂`.
pub fn objective(d: &DMatrix<f64>, u: &DMatrix<f64>, lambda: f64) -> f64 {
    let r = d - d * u;
    0.5 * r.norm_squared() + lambda * (0..u.nrows()).map(|i| u.row(i).norm()).sum::<f64>()
}

/// Projected subgradient descent on the group-sparse objective over
/// `{U : 1ᵀU = 1ᵀ}`; returns the best objective seen.
pub fn projected_subgradient(d: &DMatrix<f64>, lambda: f64, iters: usize) -> f64 {
    let c = d.ncols();
    let g = d.transpose() * d;
    let lip = g.symmetric_eigenvalues().max();
    let mut u = DMatrix::<f64>::identity(c, c);
    let mut best = objective(d, &u, lambda);
    for k in 0..iters {
        let mut grad = &g * &u - &g;
        for i in 0..c {
            let n = u.row(i).norm();
            if n > 1e-12 {
                let row = u.row(i) * (lambda / n);
                let mut gr = grad.row_mut(i);
                gr += row;
            }
        }
        let step = 1.0 / (lip * ((k + 1) as f64).sqrt());
        u -= grad * step;
        // project each column onto sum = 1
        for j in 0..c {
            let excess = (u.column(j).sum() - 1.0) / c as f64;
            u.column_mut(j).add_scalar_mut(-excess);
        }
        let f = objective(d, &u, lambda);
        if f < best {
            best = f;
        }
    }
    best
}

/// `V = pinv(D̄) D` through an SVD of `D̄`.
pub fn pinv_reconstruction(d: &DMatrix<f64>, kept: &[usize]) -> DMatrix<f64> {
    let dbar = d.select_columns(kept);
    let pinv = dbar.pseudo_inverse(1e-12).expect("svd");
    pinv * d
}

/// Conv → ReLU → conv chain with random weights.
pub fn random_chain(rng: &mut ChaCha8Rng, c_in: usize, c_mid: usize, c_out: usize, k2: usize, hw: usize) -> ModelGraph {
    let w1 = Tensor::from_fn(vec![c_mid, c_in, 3, 3], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let b1 = (0..c_mid).map(|_| rng.gen_range(-0.2..0.5)).collect();
    let w2 = Tensor::from_fn(vec![c_out, c_mid, k2, k2], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let b2 = (0..c_out).map(|_| rng.gen_range(-0.2..0.2)).collect();
    ModelGraph::new(
        [c_in, hw, hw],
        vec![
            Layer::conv("l1", Conv::new(w1, b1, 1, 1).unwrap()),
            Layer::relu("r1"),
            Layer::conv("l2", Conv::new(w2, b2, 1, k2 / 2).unwrap()),
            Layer::relu("r2"),
        ],
    )
    .unwrap()
}

/// Chain whose first conv has `base` independent channels followed by
/// `copies` exact duplicates of channel 0.
pub fn planted_chain(rng: &mut ChaCha8Rng, c_in: usize, base: usize, copies: usize, c_out: usize, hw: usize) -> ModelGraph {
    let c_mid = base + copies;
    let slice = c_in * 9;
    let mut w1: Vec<f32> = (0..base * slice).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut b1: Vec<f32> = (0..base).map(|_| rng.gen_range(0.0..0.3)).collect();
    for _ in 0..copies {
        w1.extend_from_within(0..slice);
        b1.push(b1[0]);
    }
    let w1 = Tensor::new(vec![c_mid, c_in, 3, 3], w1).unwrap();
    let w2 = Tensor::from_fn(vec![c_out, c_mid, 3, 3], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let b2 = (0..c_out).map(|_| rng.gen_range(-0.2..0.2)).collect();
    ModelGraph::new(
        [c_in, hw, hw],
        vec![
            Layer::conv("l1", Conv::new(w1, b1, 1, 1).unwrap()),
            Layer::relu("r1"),
            Layer::conv("l2", Conv::new(w2, b2, 1, 1).unwrap()),
        ],
    )
    .unwrap()
}

pub fn random_images(rng: &mut ChaCha8Rng, n: usize, dims: [usize; 3]) -> Vec<Tensor> {
    (0..n)
        .map(|_| Tensor::from_fn(dims.to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap())
        .collect()
}

/// `max |a − b| / max(max |b|, tiny)`.
pub fn rel_diff(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, &v| m.max(v.abs() as f64)).max(1e-30);
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn random_kept(r: &mut ChaCha8Rng, c: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..c).collect();
    idx.shuffle(r);
    let mut kept = idx[..c - k].to_vec();
    kept.sort_unstable();
    kept
}

/// Sliced lower conv, then `V̂` as an explicit 1×1 layer ahead of the
/// untouched upper conv.
pub fn explicit_v_graph(g: &ModelGraph, kept: &[usize], v: &Matrix) -> ModelGraph {
    let l1 = g.conv("l1").unwrap();
    let (w1, b1) = slice_kernel(&l1.weight, &l1.bias, kept).unwrap();
    let c = v.cols();
    let vhat = Tensor::from_fn(vec![c, kept.len(), 1, 1], |i| v.get(i % kept.len(), i / kept.len())).unwrap();
    let mut layers = g.layers().to_vec();
    layers[0] = Layer::conv("l1", Conv::new(w1, b1, 1, l1.pad).unwrap());
    layers.insert(2, Layer::conv("vhat", Conv::new(vhat, vec![0.0; c], 1, 0).unwrap()));
    g.with_layers(layers).unwrap()
}

pub fn folded_graph(g: &ModelGraph, kept: &[usize], v: &Matrix) -> ModelGraph {
    let l1 = g.conv("l1").unwrap();
    let l2 = g.conv("l2").unwrap();
    let (w1, b1) = slice_kernel(&l1.weight, &l1.bias, kept).unwrap();
    let w2 = fold_upper_kernel(&l2.weight, v).unwrap();
    let mut layers = g.layers().to_vec();
    layers[0] = Layer::conv("l1", Conv::new(w1, b1, 1, l1.pad).unwrap());
    layers[2] = Layer::conv("l2", Conv::new(w2, l2.bias.clone(), 1, l2.pad).unwrap());
    g.with_layers(layers).unwrap()
}

/// `base` independent columns, then `copies` exact copies of column 0.
pub fn planted_matrix(r: &mut ChaCha8Rng, rows: usize, base: usize, copies: usize) -> Matrix {
    let b = random_matrix(r, rows, base);
    let c = base + copies;
    let source = |j: usize| if j < base { j } else { 0 };
    Matrix::new(rows, c, (0..rows * c).map(|i| b.get(i / c, source(i % c))).collect()).unwrap()
}

/// 3×32×32 image with per-image brightness, per-channel tint, a horizontal
/// gradient and pixel noise, so pixels are strongly correlated.
pub fn synthetic_image(r: &mut ChaCha8Rng) -> Tensor {
    let bright: f32 = r.gen_range(0.0..255.0);
    let tint: [f32; 3] = [r.gen_range(-40.0..40.0), r.gen_range(-40.0..40.0), r.gen_range(-40.0..40.0)];
    let slope: f32 = r.gen_range(-2.0..2.0);
    let noise: Vec<f32> = (0..3072).map(|_| r.gen_range(-20.0..20.0)).collect();
    Tensor::from_fn(vec![3, 32, 32], |i| {
        let (c, x) = (i / 1024, i % 32);
        bright + tint[c] + slope * x as f32 + noise[i]
    })
    .unwrap()
}

/// Every 8th pixel in each direction: `[3, 4, 4]`.
pub fn subsample(t: &Tensor) -> Tensor {
    Tensor::from_fn(vec![3, 4, 4], |i| {
        let (c, y, x) = (i / 16, (i / 4) % 4, i % 4);
        t.data()[c * 1024 + y * 8 * 32 + x * 8]
    })
    .unwrap()
}

pub fn covariance(xs: &[Tensor]) -> Vec<Vec<f64>> {
    let d = xs[0].len();
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x.data()[j] as f64).sum::<f64>() / n).collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    xs.iter()
                        .map(|x| (x.data()[a] as f64 - mean[a]) * (x.data()[b] as f64 - mean[b]))
                        .sum::<f64>()
                        / (n - 1.0)
                })
                .collect()
        })
        .collect()
}
