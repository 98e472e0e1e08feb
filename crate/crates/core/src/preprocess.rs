//! Global contrast normalization and ZCA whitening.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{Matrix, Tensor};

pub const GCN_EPS: f64 = 1e-8;

/// Default whitening regularizer, as a fraction of the mean covariance eigenvalue.
pub const ZCA_EPS_REL: f64 = 1e-2;

/// Per-image zero mean, unit (population) standard deviation.
pub fn gcn(pixels: &Tensor) -> Tensor {
    let n = pixels.len() as f64;
    let mean = pixels.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = pixels
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let scale = var.sqrt().max(GCN_EPS);
    pixels.map(|v| ((v as f64 - mean) / scale) as f32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZcaTransform {
    pub mean: Vec<f32>,
    /// Symmetric `d×d` whitening matrix.
    pub whitening: Matrix,
    pub epsilon: f32,
}

#[derive(Serialize, Deserialize)]
struct ZcaSidecar {
    dim: usize,
    epsilon: f32,
}

fn flatten(images: &[Tensor]) -> Result<(usize, Vec<f32>)> {
    if images.len() < 2 {
        return Err(Error::Domain(format!("ZCA needs at least 2 images, got {}", images.len())));
    }
    let d = images[0].len();
    let mut rows = Vec::with_capacity(images.len() * d);
    for img in images {
        if img.dims() != images[0].dims() {
            return Err(Error::Shape(format!(
                "image dims {:?} differ from {:?}",
                img.dims(),
                images[0].dims()
            )));
        }
        rows.extend_from_slice(img.data());
    }
    Ok((d, rows))
}

fn fit_with(images: &[Tensor], pick_eps: impl FnOnce(&[f64]) -> f64) -> Result<ZcaTransform> {
    let (d, mut rows) = flatten(images)?;
    let n = images.len();
    let mut mean = vec![0.0f64; d];
    for row in rows.chunks(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for row in rows.chunks_mut(d) {
        for (v, &m) in row.iter_mut().zip(&mean) {
            *v = (*v as f64 - m) as f32;
        }
    }
    let mut cov = linalg::gram(&rows, n, d);
    cov.iter_mut().for_each(|c| *c /= (n - 1) as f64);

    let eig = SymmetricEigen::try_new(DMatrix::from_row_slice(d, d, &cov), 1e-12, 0)
        .ok_or_else(|| Error::Numeric("covariance eigendecomposition did not converge".into()))?;
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let eps = pick_eps(&lambdas);
    let mut scaled = eig.eigenvectors.clone();
    for (j, &l) in lambdas.iter().enumerate() {
        let s = l + eps;
        if !(s > 0.0) {
            return Err(Error::Numeric(format!(
                "eigenvalue {l:e} with epsilon {eps:e} cannot be whitened"
            )));
        }
        scaled.column_mut(j).scale_mut(s.powf(-0.5));
    }
    let w = &scaled * eig.eigenvectors.transpose();
    let mut sym = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            sym[i * d + j] = 0.5 * (w[(i, j)] + w[(j, i)]);
        }
    }
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite whitening matrix".into()));
    }
    Ok(ZcaTransform {
        mean: mean.iter().map(|&m| m as f32).collect(),
        whitening: Matrix::from_f64(d, d, &sym)?,
        epsilon: eps as f32,
    })
}

/// Fits `E·diag((λ+ε)^{-1/2})·Eᵀ` to the sample covariance of the flattened images.
pub fn fit_zca(images: &[Tensor], epsilon: f32) -> Result<ZcaTransform> {
    fit_with(images, |_| epsilon as f64)
}

/// Like [`fit_zca`] with `ε = rel · mean eigenvalue`.
pub fn fit_zca_relative(images: &[Tensor], rel: f64) -> Result<ZcaTransform> {
    fit_with(images, |l| rel * l.iter().sum::<f64>() / l.len() as f64)
}

impl ZcaTransform {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if image.len() != d {
            return Err(Error::Shape(format!(
                "image {:?} has {} values, transform expects {d}",
                image.dims(),
                image.len()
            )));
        }
        let centered: Vec<f64> = image
            .data()
            .iter()
            .zip(&self.mean)
            .map(|(&x, &m)| x as f64 - m as f64)
            .collect();
        let w = self.whitening.data();
        let out = (0..d)
            .map(|i| {
                w[i * d..(i + 1) * d]
                    .iter()
                    .zip(&centered)
                    .map(|(&a, &b)| a as f64 * b)
                    .sum::<f64>() as f32
            })
            .collect();
        Tensor::new(image.dims().to_vec(), out)
    }

    /// Writes `<path>` as a `[d+1, d]` archive (row 0 = mean) plus a
    /// `<path>.json` sidecar carrying epsilon.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let d = self.dim();
        let mut data = self.mean.clone();
        data.extend_from_slice(self.whitening.data());
        archive::write(path, &Tensor::new(vec![d + 1, d], data)?)?;
        let side = sidecar_path(path);
        let json = serde_json::to_string(&ZcaSidecar { dim: d, epsilon: self.epsilon }).unwrap();
        fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let t = archive::read(path)?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: ZcaSidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: side.clone(),
            message: e.to_string(),
        })?;
        let d = meta.dim;
        if t.dims() != [d + 1, d] {
            return Err(Error::Format(format!("ZCA archive dims {:?} do not match dim {d}", t.dims())));
        }
        let data = t.into_data();
        Ok(ZcaTransform {
            mean: data[..d].to_vec(),
            whitening: Matrix::new(d, d, data[d..].to_vec())?,
            epsilon: meta.epsilon,
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Function form of [`ZcaTransform::apply`].
pub fn apply_zca(t: &ZcaTransform, image: &Tensor) -> Result<Tensor> {
    t.apply(image)
}
