//! Linear-chain CNN description, validation, and forward execution.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::tensor::{self, window_output, Tensor};

/// Convolution layer with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out_channels, in_channels, k, k]`
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl Conv {
    /// Builds a square-kernel convolution, reading the geometry off `weight`.
    pub fn new(weight: Tensor, bias: Vec<f32>, stride: usize, pad: usize) -> Result<Self> {
        let (out_channels, in_channels, kh, kw) = match weight.dims()[..] {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::Shape(format!("conv weight must be rank 4, got {:?}", weight.dims()))),
        };
        if kh != kw {
            return Err(Error::Shape(format!("non-square kernel {kh}x{kw}")));
        }
        Ok(Conv {
            in_channels,
            out_channels,
            kernel_size: kh,
            stride,
            pad,
            weight,
            bias,
        })
    }

    /// Kernel parameter count `C_out·C_in·k·k` (bias excluded).
    pub fn kernel_params(&self) -> u64 {
        (self.out_channels * self.in_channels * self.kernel_size * self.kernel_size) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub kernel_size: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv(Conv),
    Relu,
    MaxPool(PoolGeometry),
    AvgPool(PoolGeometry),
    Softmax,
}

impl LayerKind {
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv(_) => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::AvgPool(_) => "avgpool",
            LayerKind::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

impl Layer {
    pub fn conv(name: &str, conv: Conv) -> Self {
        Layer { name: name.into(), kind: LayerKind::Conv(conv) }
    }

    pub fn relu(name: &str) -> Self {
        Layer { name: name.into(), kind: LayerKind::Relu }
    }

    pub fn maxpool(name: &str, kernel_size: usize, stride: usize, pad: usize) -> Self {
        Layer {
            name: name.into(),
            kind: LayerKind::MaxPool(PoolGeometry { kernel_size, stride, pad }),
        }
    }

    pub fn avgpool(name: &str, kernel_size: usize, stride: usize, pad: usize) -> Self {
        Layer {
            name: name.into(),
            kind: LayerKind::AvgPool(PoolGeometry { kernel_size, stride, pad }),
        }
    }

    pub fn softmax(name: &str) -> Self {
        Layer { name: name.into(), kind: LayerKind::Softmax }
    }

    pub fn as_conv(&self) -> Option<&Conv> {
        match &self.kind {
            LayerKind::Conv(c) => Some(c),
            _ => None,
        }
    }
}

/// A validated chain of layers applied to `[C,H,W]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_dims: [usize; 3],
    layers: Vec<Layer>,
}

impl ModelGraph {
    pub fn new(input_dims: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let g = ModelGraph { input_dims, layers };
        g.validate()?;
        Ok(g)
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }

    pub fn conv(&self, name: &str) -> Result<&Conv> {
        let idx = self.layer_index(name)?;
        self.layers[idx]
            .as_conv()
            .ok_or_else(|| Error::Domain(format!("layer '{name}' is not a conv layer")))
    }

    /// Output dims of every layer, propagated symbolically from `input_dims`.
    pub fn shapes(&self) -> Result<Vec<[usize; 3]>> {
        let [c0, h0, w0] = self.input_dims;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::validation("<input>", format!("bad input dims {:?}", self.input_dims)));
        }
        let mut cur = self.input_dims;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let [c, h, w] = cur;
            cur = match &layer.kind {
                LayerKind::Conv(conv) => {
                    if conv.in_channels != c {
                        return Err(Error::validation(
                            &layer.name,
                            format!("expects {} input channels, producer gives {c}", conv.in_channels),
                        ));
                    }
                    let (oh, ow) = window_output(h, w, conv.kernel_size, conv.stride, conv.pad)
                        .ok_or_else(|| {
                            Error::validation(&layer.name, format!("kernel does not tile {h}x{w} input"))
                        })?;
                    [conv.out_channels, oh, ow]
                }
                LayerKind::Relu => cur,
                LayerKind::MaxPool(p) | LayerKind::AvgPool(p) => {
                    let (oh, ow) = window_output(h, w, p.kernel_size, p.stride, p.pad)
                        .ok_or_else(|| {
                            Error::validation(&layer.name, format!("pool window does not tile {h}x{w} input"))
                        })?;
                    [c, oh, ow]
                }
                LayerKind::Softmax => cur,
            };
            out.push(cur);
        }
        Ok(out)
    }

    /// Input spatial size `(H, W)` seen by each layer.
    pub fn input_sizes(&self) -> Result<Vec<[usize; 3]>> {
        let shapes = self.shapes()?;
        let mut ins = Vec::with_capacity(shapes.len());
        ins.push(self.input_dims);
        ins.extend(shapes.iter().take(shapes.len().saturating_sub(1)).copied());
        Ok(ins)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("<graph>", "graph has no layers"));
        }
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if layer.name.is_empty() {
                return Err(Error::validation("<unnamed>", "empty layer name"));
            }
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::validation(&layer.name, "duplicate layer name"));
            }
            match &layer.kind {
                LayerKind::Conv(c) => {
                    let k = c.kernel_size;
                    if c.in_channels == 0 || c.out_channels == 0 || k == 0 || c.stride == 0 {
                        return Err(Error::validation(&layer.name, "zero-sized conv geometry"));
                    }
                    if c.weight.dims() != [c.out_channels, c.in_channels, k, k] {
                        return Err(Error::validation(
                            &layer.name,
                            format!(
                                "weight dims {:?} do not match [{}, {}, {k}, {k}]",
                                c.weight.dims(),
                                c.out_channels,
                                c.in_channels
                            ),
                        ));
                    }
                    if c.bias.len() != c.out_channels {
                        return Err(Error::validation(
                            &layer.name,
                            format!("bias has {} entries, expected {}", c.bias.len(), c.out_channels),
                        ));
                    }
                }
                LayerKind::MaxPool(p) | LayerKind::AvgPool(p) => {
                    if p.kernel_size == 0 || p.stride == 0 {
                        return Err(Error::validation(&layer.name, "zero-sized pool geometry"));
                    }
                }
                LayerKind::Relu | LayerKind::Softmax => {}
            }
        }
        self.shapes().map(|_| ())
    }

    /// Index of the layer whose output is captured under `name`.
    ///
    /// A conv layer's capture point is the end of its block: the conv plus any
    /// ReLU layers directly after it, so captured activations are post-ReLU.
    pub fn capture_index(&self, name: &str) -> Result<usize> {
        let mut idx = self.layer_index(name)?;
        if self.layers[idx].as_conv().is_some() {
            while idx + 1 < self.layers.len() && matches!(self.layers[idx + 1].kind, LayerKind::Relu) {
                idx += 1;
            }
        }
        Ok(idx)
    }

    /// Runs the chain on one `[C,H,W]` input, returning the final activation
    /// and the activations captured at the requested layers.
    pub fn forward(&self, input: &Tensor, capture: &[&str]) -> Result<(Tensor, BTreeMap<String, Tensor>)> {
        if input.dims() != self.input_dims {
            return Err(Error::Shape(format!(
                "input dims {:?} do not match model input {:?}",
                input.dims(),
                self.input_dims
            )));
        }
        let mut wanted: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for &name in capture {
            wanted.entry(self.capture_index(name)?).or_default().push(name);
        }
        let mut captured = BTreeMap::new();
        let mut cur = input.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            cur = apply(layer, &cur)?;
            if let Some(names) = wanted.get(&idx) {
                for name in names {
                    captured.insert(name.to_string(), cur.clone());
                }
            }
        }
        Ok((cur, captured))
    }

    /// Output of the chain without captures.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input, &[])?.0)
    }

    /// Replaces the layer list, re-validating the result.
    pub fn with_layers(&self, layers: Vec<Layer>) -> Result<Self> {
        ModelGraph::new(self.input_dims, layers)
    }

    /// Inserts a layer before position `at`.
    pub fn insert_layer(&self, at: usize, layer: Layer) -> Result<Self> {
        let mut layers = self.layers.clone();
        if at > layers.len() {
            return Err(Error::Domain(format!("insert position {at} past end of graph")));
        }
        layers.insert(at, layer);
        self.with_layers(layers)
    }
}

fn apply(layer: &Layer, x: &Tensor) -> Result<Tensor> {
    match &layer.kind {
        LayerKind::Conv(c) => tensor::conv2d(x, &c.weight, &c.bias, c.stride, c.pad),
        LayerKind::Relu => Ok(tensor::relu(x)),
        LayerKind::MaxPool(p) => tensor::maxpool2d(x, p.kernel_size, p.stride, p.pad),
        LayerKind::AvgPool(p) => tensor::avgpool2d(x, p.kernel_size, p.stride, p.pad),
        LayerKind::Softmax => Ok(tensor::softmax(x)),
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of `g` over labelled samples.
pub fn eval_classifier<I>(g: &ModelGraph, dataset: I) -> Result<f64>
where
    I: IntoIterator<Item = (Tensor, usize)>,
{
    let mut total = 0usize;
    let mut correct = 0usize;
    for (x, label) in dataset {
        let scores = g.predict(&x)?;
        if argmax(scores.data()) == label {
            correct += 1;
        }
        total += 1;
    }
    if total == 0 {
        return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
    }
    Ok(correct as f64 / total as f64)
}
