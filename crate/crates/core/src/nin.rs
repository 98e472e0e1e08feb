//! Network-in-network style CIFAR architecture.
//!
//! The geometry follows the three-block NIN layout (5×5, 5×5, 3×3 convs with
//! 192 channels, each followed by two 1×1 "cccp" convs). Pooling is 2×2/2
//! between blocks and a global 8×8 average at the end; dropout is omitted
//! since this toolkit only runs inference. Weights are random: this is a
//! shape/accounting fixture, not a trained model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{Conv, Layer, ModelGraph};
use crate::tensor::Tensor;

/// The conv layers whose channels are pruned, bottom to top.
pub const PRUNABLE: [&str; 3] = ["conv1", "conv2", "conv3"];

fn random_conv(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, k: usize, pad: usize) -> Result<Conv> {
    let bound = (6.0 / (in_c * k * k) as f32).sqrt();
    let weight = Tensor::from_fn(vec![out_c, in_c, k, k], |_| rng.gen_range(-bound..bound))?;
    let bias = (0..out_c).map(|_| rng.gen_range(0.0..0.05)).collect();
    Conv::new(weight, bias, 1, pad)
}

/// NIN-style model with `classes` outputs and seeded random weights.
pub fn nin_style(classes: usize, seed: u64) -> Result<ModelGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut conv = |layers: &mut Vec<Layer>, name: &str, out_c, in_c, k, pad| -> Result<()> {
        layers.push(Layer::conv(name, random_conv(&mut rng, out_c, in_c, k, pad)?));
        layers.push(Layer::relu(&format!("relu_{name}")));
        Ok(())
    };
    conv(&mut layers, "conv1", 192, 3, 5, 2)?;
    conv(&mut layers, "cccp1", 160, 192, 1, 0)?;
    conv(&mut layers, "cccp2", 96, 160, 1, 0)?;
    layers.push(Layer::maxpool("pool1", 2, 2, 0));
    conv(&mut layers, "conv2", 192, 96, 5, 2)?;
    conv(&mut layers, "cccp3", 192, 192, 1, 0)?;
    conv(&mut layers, "cccp4", 192, 192, 1, 0)?;
    layers.push(Layer::avgpool("pool2", 2, 2, 0));
    conv(&mut layers, "conv3", 192, 192, 3, 1)?;
    conv(&mut layers, "cccp5", 192, 192, 1, 0)?;
    conv(&mut layers, "cccp6", classes, 192, 1, 0)?;
    layers.push(Layer::avgpool("pool3", 8, 8, 0));
    layers.push(Layer::softmax("prob"));
    ModelGraph::new([3, 32, 32], layers)
}
