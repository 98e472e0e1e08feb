//! JSON manifest + raw f32 weight blob model format.
//!
//! The manifest names a sibling blob file (`"weights"`, relative to the
//! manifest's directory). Each conv layer points into the blob with
//! `{"offset": <byte offset>, "len": <number of f32 values>}`; values are
//! little-endian f32, kernels stored `[out][in][kh][kw]` row-major.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Conv, Layer, LayerKind, ModelGraph};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRef {
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerDoc {
    Conv {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        pad: usize,
        kernel: BlobRef,
        bias: BlobRef,
    },
    Relu {
        name: String,
    },
    Maxpool {
        name: String,
        kernel_size: usize,
        stride: usize,
        pad: usize,
    },
    Avgpool {
        name: String,
        kernel_size: usize,
        stride: usize,
        pad: usize,
    },
    Softmax {
        name: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    pub input_dims: [usize; 3],
    pub weights: String,
    pub layers: Vec<LayerDoc>,
}

fn blob_path(manifest: &Path, weights: &str) -> PathBuf {
    manifest
        .parent()
        .map(|p| p.join(weights))
        .unwrap_or_else(|| PathBuf::from(weights))
}

fn read_blob(blob: &[u8], r: BlobRef, layer: &str, what: &str) -> Result<Vec<f32>> {
    let start = r.offset as usize;
    let end = r
        .len
        .checked_mul(4)
        .and_then(|n| r.offset.checked_add(n))
        .ok_or_else(|| Error::Bounds(format!("layer '{layer}' {what}: offset overflow")))?
        as usize;
    if end > blob.len() {
        return Err(Error::Bounds(format!(
            "layer '{layer}' {what}: bytes {start}..{end} past end of {}-byte blob",
            blob.len()
        )));
    }
    Ok(blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Loads a model from a manifest path. Nothing is returned unless the whole
/// model reads and validates.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let bpath = blob_path(path, &doc.weights);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;

    let mut layers = Vec::with_capacity(doc.layers.len());
    for ld in doc.layers {
        let layer = match ld {
            LayerDoc::Conv {
                name,
                in_channels,
                out_channels,
                kernel_size,
                stride,
                pad,
                kernel,
                bias,
            } => {
                let k = kernel_size;
                let expect = out_channels * in_channels * k * k;
                if kernel.len as usize != expect {
                    return Err(Error::validation(
                        &name,
                        format!("kernel len {} but geometry needs {expect}", kernel.len),
                    ));
                }
                if bias.len as usize != out_channels {
                    return Err(Error::validation(
                        &name,
                        format!("bias len {} but out_channels is {out_channels}", bias.len),
                    ));
                }
                let w = read_blob(&blob, kernel, &name, "kernel")?;
                let b = read_blob(&blob, bias, &name, "bias")?;
                let weight = Tensor::new(vec![out_channels, in_channels, k, k], w)
                    .map_err(|e| Error::validation(&name, e.to_string()))?;
                Layer {
                    name,
                    kind: LayerKind::Conv(Conv {
                        in_channels,
                        out_channels,
                        kernel_size,
                        stride,
                        pad,
                        weight,
                        bias: b,
                    }),
                }
            }
            LayerDoc::Relu { name } => Layer::relu(&name),
            LayerDoc::Maxpool { name, kernel_size, stride, pad } => Layer::maxpool(&name, kernel_size, stride, pad),
            LayerDoc::Avgpool { name, kernel_size, stride, pad } => Layer::avgpool(&name, kernel_size, stride, pad),
            LayerDoc::Softmax { name } => Layer::softmax(&name),
        };
        layers.push(layer);
    }
    ModelGraph::new(doc.input_dims, layers)
}

/// Serializes `g` to a manifest document plus blob bytes.
pub fn to_manifest(g: &ModelGraph, weights_name: &str) -> (ManifestDoc, Vec<u8>) {
    let mut blob = Vec::new();
    let mut push = |vals: &[f32]| {
        let r = BlobRef {
            offset: blob.len() as u64,
            len: vals.len() as u64,
        };
        for v in vals {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        r
    };
    let layers = g
        .layers()
        .iter()
        .map(|l| {
            let name = l.name.clone();
            match &l.kind {
                LayerKind::Conv(c) => LayerDoc::Conv {
                    name,
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel_size: c.kernel_size,
                    stride: c.stride,
                    pad: c.pad,
                    kernel: push(c.weight.data()),
                    bias: push(&c.bias),
                },
                LayerKind::Relu => LayerDoc::Relu { name },
                LayerKind::MaxPool(p) => LayerDoc::Maxpool {
                    name,
                    kernel_size: p.kernel_size,
                    stride: p.stride,
                    pad: p.pad,
                },
                LayerKind::AvgPool(p) => LayerDoc::Avgpool {
                    name,
                    kernel_size: p.kernel_size,
                    stride: p.stride,
                    pad: p.pad,
                },
                LayerKind::Softmax => LayerDoc::Softmax { name },
            }
        })
        .collect();
    (
        ManifestDoc {
            input_dims: g.input_dims(),
            weights: weights_name.to_string(),
            layers,
        },
        blob,
    )
}

/// Writes `<path>` (manifest) and `<path stem>.bin` (weights) side by side.
pub fn save_model(g: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Domain(format!("bad manifest path {}", path.display())))?;
    let weights_name = format!("{stem}.bin");
    let (doc, blob) = to_manifest(g, &weights_name);
    let bpath = blob_path(path, &weights_name);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
    let json = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> ModelGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w1 = Tensor::from_fn(vec![4, 2, 3, 3], |_| rng.gen_range(-1.0..1.0)).unwrap();
        let w2 = Tensor::from_fn(vec![3, 4, 1, 1], |_| rng.gen_range(-1.0..1.0)).unwrap();
        ModelGraph::new(
            [2, 6, 6],
            vec![
                Layer::conv("c1", Conv::new(w1, vec![0.1, -0.2, 0.3, f32::MIN_POSITIVE], 1, 1).unwrap()),
                Layer::relu("r1"),
                Layer::maxpool("p1", 2, 2, 0),
                Layer::conv("c2", Conv::new(w2, vec![0.0, 1.0, -1.0], 1, 0).unwrap()),
                Layer::avgpool("gap", 3, 3, 0),
                Layer::softmax("prob"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.json");
        let g = toy();
        save_model(&g, &p).unwrap();
        assert!(dir.path().join("toy.bin").exists());
        let back = load_model(&p).unwrap();
        assert_eq!(back, g);
        for (a, b) in back.layers().iter().zip(g.layers()) {
            if let (Some(x), Some(y)) = (a.as_conv(), b.as_conv()) {
                let xb: Vec<u32> = x.weight.data().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u32> = y.weight.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(xb, yb);
            }
        }
    }

    #[test]
    fn missing_blob_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.json");
        save_model(&toy(), &p).unwrap();
        fs::remove_file(dir.path().join("toy.bin")).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Io { .. })));
    }

    #[test]
    fn overrun_is_bounds_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.json");
        save_model(&toy(), &p).unwrap();
        let blob = dir.path().join("toy.bin");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_model(&p), Err(Error::Bounds(_))));
    }

    #[test]
    fn malformed_manifest_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, "{\n  \"input_dims\": [1,1,1],\n  \"weights\": \"m.bin\",\n  \"layers\": [{\"kind\": \"relu\"}]\n}").unwrap();
        fs::write(dir.path().join("m.bin"), []).unwrap();
        let err = load_model(&p).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(msg.contains("name") && msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn geometry_mismatch_names_layer() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("toy.json");
        save_model(&toy(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap().replacen("\"out_channels\": 4", "\"out_channels\": 5", 1);
        fs::write(&p, text).unwrap();
        let msg = load_model(&p).unwrap_err().to_string();
        assert!(msg.contains("'c1'"), "{msg}");
    }
}
