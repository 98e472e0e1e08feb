//! Channel removal with closed-form repair of the consuming layer.
//!
//! Pruning layer ℓ keeps a subset of its output channels. The removed
//! activations are reconstructed from the kept ones by least squares,
//! `D ≈ D̄V`, and `V` acts as a 1×1 convolution in front of layer ℓ+1. Since
//! that 1×1 mixing is linear it folds into the next kernel:
//! `W̄[o,j,·,·] = Σ_i W[o,i,·,·]·V[j,i]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamatrix::DataMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Conv, LayerKind, ModelGraph};
use crate::select::{importance_report, solve_group_sparse, ImportanceReport, SolverConfig};
use crate::tensor::{Matrix, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Remove the least important channels.
    Bottom,
    /// Remove the most important channels (ablation).
    Top,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bottom" => Ok(Mode::Bottom),
            "top" => Ok(Mode::Top),
            other => Err(Error::Domain(format!("unknown mode '{other}' (bottom|top)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSpec {
    pub layer: String,
    pub k: usize,
    pub mode: Mode,
    pub report: ImportanceReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub layer: String,
    pub k: usize,
    pub mode: Mode,
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    /// `(C−K) × C`
    pub v: Matrix,
    pub model: ModelGraph,
    /// `‖D − D̄V‖_F / ‖D‖_F`
    pub recon_error: f32,
}

/// JSON summary of one prune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneSummary {
    pub layer: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub mode: Mode,
    pub kept: Vec<usize>,
    pub recon_error: f32,
    pub lambda_rel: f32,
    pub seed: u64,
}

impl PruneResult {
    pub fn summary(&self, lambda_rel: f32, seed: u64) -> PruneSummary {
        PruneSummary {
            layer: self.layer.clone(),
            k: self.k,
            mode: self.mode,
            kept: self.kept.clone(),
            recon_error: self.recon_error,
            lambda_rel,
            seed,
        }
    }
}

/// Splits channels into `(kept, removed)`, both sorted ascending.
pub fn select_channels(report: &ImportanceReport, k: usize, mode: Mode) -> Result<(Vec<usize>, Vec<usize>)> {
    let c = report.channels();
    if k == 0 || k >= c {
        return Err(Error::Domain(format!("K={k} must satisfy 1 <= K < {c}")));
    }
    let (mut kept, mut removed) = match mode {
        Mode::Bottom => (report.ranking[..c - k].to_vec(), report.ranking[c - k..].to_vec()),
        Mode::Top => (report.ranking[k..].to_vec(), report.ranking[..k].to_vec()),
    };
    kept.sort_unstable();
    removed.sort_unstable();
    Ok((kept, removed))
}

fn check_kept(kept: &[usize], c: usize) -> Result<()> {
    if kept.is_empty() {
        return Err(Error::Domain("no channels kept".into()));
    }
    if kept.windows(2).any(|w| w[0] >= w[1]) || kept.iter().any(|&i| i >= c) {
        return Err(Error::Domain(format!(
            "kept indices must be sorted, unique and < {c}: {kept:?}"
        )));
    }
    Ok(())
}

/// Keeps output slices `kept` of a `[C, C_in, k, k]` kernel and its bias.
pub fn slice_kernel(weight: &Tensor, bias: &[f32], kept: &[usize]) -> Result<(Tensor, Vec<f32>)> {
    let c = weight.dims()[0];
    if bias.len() != c {
        return Err(Error::Shape(format!("bias of {} for {c} channels", bias.len())));
    }
    check_kept(kept, c)?;
    let slice = weight.len() / c;
    let mut data = Vec::with_capacity(kept.len() * slice);
    for &i in kept {
        data.extend_from_slice(&weight.data()[i * slice..(i + 1) * slice]);
    }
    let mut dims = weight.dims().to_vec();
    dims[0] = kept.len();
    Ok((Tensor::new(dims, data)?, kept.iter().map(|&i| bias[i]).collect()))
}

/// Relative residual `‖D − D̄V‖_F / ‖D‖_F`, computed from the data directly.
pub fn reconstruction_error(values: &Matrix, kept: &[usize], v: &Matrix) -> f64 {
    let c = values.cols();
    let (num, den) = values
        .data()
        .par_chunks(c * 512)
        .map(|block| {
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for row in block.chunks(c) {
                for i in 0..c {
                    let mut approx = 0.0f64;
                    for (j, &kj) in kept.iter().enumerate() {
                        approx += row[kj] as f64 * v.get(j, i) as f64;
                    }
                    let d = row[i] as f64;
                    num += (d - approx).powi(2);
                    den += d * d;
                }
            }
            (num, den)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Least-squares `V = (D̄ᵀD̄ + ridge)⁻¹ D̄ᵀD` for `D̄` = columns `kept` of `D`.
pub fn fit_reconstruction(d: &DataMatrix, kept: &[usize]) -> Result<(Matrix, f32)> {
    fit_reconstruction_matrix(&d.values, kept)
}

pub fn fit_reconstruction_matrix(values: &Matrix, kept: &[usize]) -> Result<(Matrix, f32)> {
    let (rows, c) = (values.rows(), values.cols());
    check_kept(kept, c)?;
    let m = kept.len();
    if rows < m {
        return Err(Error::Domain(format!("{rows} rows cannot determine {m} kept channels")));
    }
    let g = linalg::gram(values.data(), rows, c);
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m * c];
    for (p, &kp) in kept.iter().enumerate() {
        for (q, &kq) in kept.iter().enumerate() {
            a[p * m + q] = g[kp * c + kq];
        }
        b[p * c..(p + 1) * c].copy_from_slice(&g[kp * c..(kp + 1) * c]);
    }
    let v = linalg::solve_spd_ridged(&a, m, &b, c)?;
    let v = Matrix::from_f64(m, c, &v)?;
    let err = reconstruction_error(values, kept, &v);
    Ok((v, err as f32))
}

/// `W̄[o,j,·,·] = Σ_i W[o,i,·,·]·V[j,i]`; spatial extent is untouched.
pub fn fold_upper_kernel(w_next: &Tensor, v: &Matrix) -> Result<Tensor> {
    let (c_out, c_in, kh, kw) = match w_next.dims()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(Error::Shape(format!("kernel must be rank 4, got {:?}", w_next.dims()))),
    };
    if v.cols() != c_in {
        return Err(Error::Shape(format!(
            "V is {}x{} but kernel {:?} has {c_in} input channels",
            v.rows(),
            v.cols(),
            w_next.dims()
        )));
    }
    let m = v.rows();
    let sp = kh * kw;
    let w = w_next.data();
    let mut out = vec![0.0f32; c_out * m * sp];
    for o in 0..c_out {
        for j in 0..m {
            for s in 0..sp {
                let mut acc = 0.0f64;
                for i in 0..c_in {
                    acc += w[(o * c_in + i) * sp + s] as f64 * v.get(j, i) as f64;
                }
                out[(o * m + j) * sp + s] = acc as f32;
            }
        }
    }
    Tensor::new(vec![c_out, m, kh, kw], out)
}

/// Index of the conv that consumes layer `idx`'s block output. Only average
/// pooling may sit in between, since it commutes with channel mixing.
pub fn consumer_index(g: &ModelGraph, layer: &str) -> Result<usize> {
    let start = g.capture_index(layer)?;
    for (i, l) in g.layers().iter().enumerate().skip(start + 1) {
        match l.kind {
            LayerKind::Conv(_) => return Ok(i),
            LayerKind::AvgPool(_) => continue,
            _ => {
                return Err(Error::Topology(format!(
                    "'{}' ({}) separates '{layer}' from its consumer; channel mixing cannot be folded across it",
                    l.name,
                    l.kind.tag()
                )))
            }
        }
    }
    Err(Error::Topology(format!("'{layer}' has no downstream conv layer")))
}

/// Removes `spec.k` channels of `spec.layer` and folds the reconstruction
/// into the consuming conv.
pub fn prune_layer(g: &ModelGraph, spec: &PruneSpec, d: &DataMatrix) -> Result<PruneResult> {
    let idx = g.layer_index(&spec.layer)?;
    let conv = g.conv(&spec.layer)?.clone();
    if spec.report.layer != spec.layer {
        return Err(Error::Domain(format!(
            "importance report is for '{}', not '{}'",
            spec.report.layer, spec.layer
        )));
    }
    if spec.report.channels() != conv.out_channels || d.channels != conv.out_channels {
        return Err(Error::Domain(format!(
            "'{}' has {} channels; report has {}, data matrix {}",
            spec.layer,
            conv.out_channels,
            spec.report.channels(),
            d.channels
        )));
    }
    let next = consumer_index(g, &spec.layer)?;
    let (kept, removed) = select_channels(&spec.report, spec.k, spec.mode)?;

    let (weight, bias) = slice_kernel(&conv.weight, &conv.bias, &kept)?;
    let (v, recon_error) = fit_reconstruction(d, &kept)?;
    let upper = g.layers()[next].as_conv().expect("consumer is conv").clone();
    let folded = fold_upper_kernel(&upper.weight, &v)?;

    let mut layers = g.layers().to_vec();
    layers[idx].kind = LayerKind::Conv(Conv::new(weight, bias, conv.stride, conv.pad)?);
    layers[next].kind = LayerKind::Conv(Conv::new(folded, upper.bias.clone(), upper.stride, upper.pad)?);
    let model = g.with_layers(layers)?;
    Ok(PruneResult {
        layer: spec.layer.clone(),
        k: spec.k,
        mode: spec.mode,
        kept,
        removed,
        v,
        model,
        recon_error,
    })
}

/// One step of a sequential prune: ranks `layer` on freshly captured data
/// from the current model, then prunes it.
pub fn rank_and_prune(
    g: &ModelGraph,
    layer: &str,
    k: usize,
    mode: Mode,
    d: &DataMatrix,
    cfg: &SolverConfig,
) -> Result<(ImportanceReport, PruneResult)> {
    let coeffs = solve_group_sparse(d, cfg)?;
    let report = importance_report(&coeffs, layer);
    let spec = PruneSpec {
        layer: layer.to_string(),
        k,
        mode,
        report: report.clone(),
    };
    Ok((report, prune_layer(g, &spec, d)?))
}

/// Prunes `(layer, K)` steps in order, re-capturing activations from the
/// already-pruned model before each step.
pub fn prune_sequence(
    g: &ModelGraph,
    steps: &[(&str, usize)],
    images: &[Tensor],
    n_sample: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<(ModelGraph, Vec<PruneResult>)> {
    let mut model = g.clone();
    let mut results = Vec::with_capacity(steps.len());
    for &(layer, k) in steps {
        let d = crate::datamatrix::build_data_matrix(&model, layer, images, n_sample, seed)?;
        let (_, res) = rank_and_prune(&model, layer, k, Mode::Bottom, &d, cfg)?;
        model = res.model.clone();
        results.push(res);
    }
    Ok((model, results))
}
