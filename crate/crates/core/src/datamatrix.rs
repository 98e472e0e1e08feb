//! Activation sampling into `(N·H·W) × C` data matrices.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::{Matrix, Tensor};

/// Default number of sampled images.
pub const DEFAULT_SAMPLES: usize = 512;

/// Activations of one layer, one column per channel. Row `n·H·W + y·W + x`
/// holds image `n`'s activation at `(y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub layer: String,
    pub values: Matrix,
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub layer: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub seed: u64,
}

impl DataMatrix {
    /// Lays out captured `[C,H,W]` maps, one per image.
    pub fn from_activations(layer: &str, maps: &[Tensor], seed: u64) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Domain("no activations to assemble".into()))?;
        let (c, h, w) = first.chw()?;
        let plane = h * w;
        let mut data = vec![0.0f32; maps.len() * plane * c];
        for (n, m) in maps.iter().enumerate() {
            if m.dims() != first.dims() {
                return Err(Error::Shape(format!("activation dims {:?} vs {:?}", m.dims(), first.dims())));
            }
            let src = m.data();
            for ch in 0..c {
                for p in 0..plane {
                    data[(n * plane + p) * c + ch] = src[ch * plane + p];
                }
            }
        }
        Ok(DataMatrix {
            layer: layer.to_string(),
            values: Matrix::new(maps.len() * plane, c, data)?,
            n_images: maps.len(),
            height: h,
            width: w,
            channels: c,
            seed,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            layer: self.layer.clone(),
            n: self.n_images,
            h: self.height,
            w: self.width,
            c: self.channels,
            seed: self.seed,
        }
    }

    /// Writes `<path>` (`.sst`, dims `[N·H·W, C]`) and `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        archive::write(path, &self.values.clone().into_tensor())?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.sidecar()).unwrap();
        fs::write(&side, json + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let values = Matrix::from_tensor(archive::read(path)?).map_err(|e| Error::Format(e.to_string()))?;
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: side.clone(),
            message: e.to_string(),
        })?;
        if values.rows() != s.n * s.h * s.w || values.cols() != s.c {
            return Err(Error::Format(format!(
                "matrix {}x{} disagrees with sidecar N={} H={} W={} C={}",
                values.rows(),
                values.cols(),
                s.n,
                s.h,
                s.w,
                s.c
            )));
        }
        Ok(DataMatrix {
            layer: s.layer,
            values,
            n_images: s.n,
            height: s.h,
            width: s.w,
            channels: s.c,
            seed: s.seed,
        })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Draws `n` distinct indices from `0..len` with ChaCha8 seeded by `seed`.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > len {
        return Err(Error::Domain(format!("cannot sample {n} images from {len}")));
    }
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, len, n).into_vec())
}

/// Samples `n_sample` images, runs them through `g`, and assembles the
/// post-activation maps captured at `layer`.
pub fn build_data_matrix(g: &ModelGraph, layer: &str, images: &[Tensor], n_sample: usize, seed: u64) -> Result<DataMatrix> {
    build_data_matrix_with(g, layer, images.len(), |i| Ok(images[i].clone()), n_sample, seed)
}

/// [`build_data_matrix`] over `len` images produced on demand by `load`.
/// Only the sampled indices are loaded.
pub fn build_data_matrix_with<F>(
    g: &ModelGraph,
    layer: &str,
    len: usize,
    load: F,
    n_sample: usize,
    seed: u64,
) -> Result<DataMatrix>
where
    F: Fn(usize) -> Result<Tensor> + Sync,
{
    g.conv(layer)?;
    let picks = sample_indices(len, n_sample, seed)?;
    let maps = picks
        .par_iter()
        .map(|&i| {
            let (_, mut cap) = g.forward(&load(i)?, &[layer])?;
            Ok(cap.remove(layer).expect("requested capture present"))
        })
        .collect::<Result<Vec<_>>>()?;
    DataMatrix::from_activations(layer, &maps, seed)
}
