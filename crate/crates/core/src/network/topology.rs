//! Compact topology strings and learnable weight storage.
//!
//! Grammar: `HxW[xC]` followed by `-`-separated layer tokens:
//!
//! | token    | layer                                   |
//! |----------|-----------------------------------------|
//! | `<n>c<k>`| convolution, `n` maps, `k x k` kernels  |
//! | `<s>a`   | average pooling over `s x s` windows    |
//! | `<n>o`   | fully connected output, `n` classes     |
//!
//! e.g. `28x28-12c5-2a-64c5-2a-10o`. The output token must come last and
//! appear exactly once.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Kernel2D, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Input,
    Conv { maps: usize, kernel: usize },
    AvgPool { window: usize },
    Output { classes: usize },
}

/// One layer and the geometry of its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDescriptor {
    pub kind: LayerKind,
    pub geometry: Shape3,
}

/// Weights of one convolutional layer, `out_maps x in_maps x kh x kw`.
///
/// The decoder of the tied auto-encoder reads the same storage through
/// [`KernelStack::decoder_kernel`]; no second copy exists.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStack {
    out_maps: usize,
    in_maps: usize,
    kh: usize,
    kw: usize,
    weights: Vec<f64>,
}

impl KernelStack {
    pub fn zeros(out_maps: usize, in_maps: usize, kh: usize, kw: usize) -> Self {
        KernelStack {
            out_maps,
            in_maps,
            kh,
            kw,
            weights: vec![0.0; out_maps * in_maps * kh * kw],
        }
    }

    pub fn from_vec(out_maps: usize, in_maps: usize, kh: usize, kw: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != out_maps * in_maps * kh * kw {
            return Err(Error::shape(format!(
                "kernel stack {out_maps}x{in_maps}x{kh}x{kw} given {} weights",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel stack"));
        }
        Ok(KernelStack {
            out_maps,
            in_maps,
            kh,
            kw,
            weights,
        })
    }

    /// Fan-in scaled uniform initialization in `[-scale·b, scale·b]`,
    /// `b = 1 / sqrt(in_maps·kh·kw)`.
    pub fn init_uniform(&mut self, scale: f64, rng: &mut RngStream) {
        let bound = scale / ((self.in_maps * self.kh * self.kw) as f64).sqrt();
        for w in &mut self.weights {
            *w = rng.symmetric(bound);
        }
    }

    pub fn out_maps(&self) -> usize {
        self.out_maps
    }

    pub fn in_maps(&self) -> usize {
        self.in_maps
    }

    pub fn kernel_dims(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.out_maps, self.in_maps, self.kh, self.kw]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn offset(&self, k: usize, l: usize) -> usize {
        (k * self.in_maps + l) * self.kh * self.kw
    }

    #[inline]
    pub fn weight(&self, k: usize, l: usize, a: usize, b: usize) -> f64 {
        self.weights[self.offset(k, l) + a * self.kw + b]
    }

    /// Kernel slice `(k, l)` as used by the encoder.
    pub fn slice(&self, k: usize, l: usize) -> &[f64] {
        let o = self.offset(k, l);
        &self.weights[o..o + self.kh * self.kw]
    }

    pub fn encoder_kernel(&self, k: usize, l: usize) -> Kernel2D {
        Kernel2D::from_vec(self.kh, self.kw, self.slice(k, l).to_vec()).expect("slice matches kernel dims")
    }

    /// Decoder kernel `(k, l)`: the encoder slice flipped in both axes.
    pub fn decoder_kernel(&self, k: usize, l: usize) -> Kernel2D {
        crate::tensor::flip2d(&self.encoder_kernel(k, l))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Fully connected readout, row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutWeights {
    pub outputs: usize,
    pub inputs: usize,
    pub weights: Vec<f64>,
}

impl ReadoutWeights {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        ReadoutWeights {
            outputs,
            inputs,
            weights: vec![0.0; outputs * inputs],
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.weights[j * self.inputs + i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    spec: String,
    layers: Vec<LayerDescriptor>,
    kernels: Vec<KernelStack>,
    readout: ReadoutWeights,
}

fn topo_err(spec: &str, reason: impl Into<String>) -> Error {
    Error::Topology {
        spec: spec.to_string(),
        reason: reason.into(),
    }
}

fn parse_dim(spec: &str, s: &str) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(topo_err(spec, format!("`{s}` is not a positive integer"))),
    }
}

/// Parse a compact topology string. Weights stay unallocated.
pub fn parse_topology(spec: &str) -> Result<NetworkTopology> {
    let mut tokens = spec.split('-');
    let head = tokens.next().unwrap_or_default();
    let dims: Vec<&str> = head.split('x').collect();
    let input = match dims.as_slice() {
        [h, w] => Shape3::new(1, parse_dim(spec, h)?, parse_dim(spec, w)?),
        [h, w, c] => Shape3::new(parse_dim(spec, c)?, parse_dim(spec, h)?, parse_dim(spec, w)?),
        _ => return Err(topo_err(spec, format!("input token `{head}` is not HxW or HxWxC"))),
    };
    let mut layers = vec![LayerDescriptor {
        kind: LayerKind::Input,
        geometry: input,
    }];
    let mut cur = input;
    let mut seen_output = false;
    for tok in tokens {
        if seen_output {
            return Err(topo_err(spec, "output layer must be last"));
        }
        let kind = if let Some((n, k)) = tok.split_once('c') {
            let (maps, kernel) = (parse_dim(spec, n)?, parse_dim(spec, k)?);
            if kernel > cur.rows || kernel > cur.cols {
                return Err(topo_err(
                    spec,
                    format!("kernel {kernel}x{kernel} exceeds map {}x{}", cur.rows, cur.cols),
                ));
            }
            cur = Shape3::new(maps, cur.rows - kernel + 1, cur.cols - kernel + 1);
            LayerKind::Conv { maps, kernel }
        } else if let Some(s) = tok.strip_suffix('a') {
            let window = parse_dim(spec, s)?;
            if cur.rows % window != 0 || cur.cols % window != 0 {
                return Err(topo_err(
                    spec,
                    format!("pool window {window} does not divide {}x{}", cur.rows, cur.cols),
                ));
            }
            cur = Shape3::new(cur.maps, cur.rows / window, cur.cols / window);
            LayerKind::AvgPool { window }
        } else if let Some(n) = tok.strip_suffix('o') {
            let classes = parse_dim(spec, n)?;
            cur = Shape3::new(classes, 1, 1);
            seen_output = true;
            LayerKind::Output { classes }
        } else {
            return Err(topo_err(spec, format!("unrecognized token `{tok}`")));
        };
        layers.push(LayerDescriptor { kind, geometry: cur });
    }
    if !seen_output {
        return Err(topo_err(spec, "missing output layer `<n>o`"));
    }
    Ok(NetworkTopology {
        spec: spec.to_string(),
        layers,
        kernels: Vec::new(),
        readout: ReadoutWeights::zeros(0, 0),
    })
}

impl NetworkTopology {
    pub fn spec(&self) -> &str {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerDescriptor] {
        &self.layers
    }

    pub fn input_shape(&self) -> Shape3 {
        self.layers[0].geometry
    }

    /// Geometry feeding layer `i` (i >= 1).
    pub fn input_of(&self, i: usize) -> Shape3 {
        self.layers[i - 1].geometry
    }

    /// Indices (into [`Self::layers`]) of the convolutional layers.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, d)| matches!(d.kind, LayerKind::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Ordinal of a conv layer among conv layers.
    pub fn conv_ordinal(&self, layer: usize) -> Option<usize> {
        self.conv_layers().iter().position(|&i| i == layer)
    }

    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn classes(&self) -> usize {
        self.layers[self.output_layer()].geometry.maps
    }

    /// Length of the flattened feature vector entering the output layer.
    pub fn feature_len(&self) -> usize {
        self.input_of(self.output_layer()).len()
    }

    pub fn is_initialized(&self) -> bool {
        self.kernels.len() == self.conv_layers().len()
            && self.readout.weights.len() == self.classes() * self.feature_len()
    }

    /// Allocate and randomly initialize every conv stack; the readout starts at zero.
    pub fn initialize(&mut self, init_scale: f64, rng: &mut RngStream) {
        self.kernels = self
            .conv_layers()
            .into_iter()
            .map(|i| {
                let LayerKind::Conv { maps, kernel } = self.layers[i].kind else {
                    unreachable!()
                };
                let mut ks = KernelStack::zeros(maps, self.input_of(i).maps, kernel, kernel);
                ks.init_uniform(init_scale, rng);
                ks
            })
            .collect();
        self.readout = ReadoutWeights::zeros(self.classes(), self.feature_len());
    }

    pub fn kernels(&self) -> &[KernelStack] {
        &self.kernels
    }

    pub fn kernel(&self, ordinal: usize) -> &KernelStack {
        &self.kernels[ordinal]
    }

    pub fn kernel_mut(&mut self, ordinal: usize) -> &mut KernelStack {
        &mut self.kernels[ordinal]
    }

    pub fn readout(&self) -> &ReadoutWeights {
        &self.readout
    }

    pub fn readout_mut(&mut self) -> &mut ReadoutWeights {
        &mut self.readout
    }

    /// Install weights (e.g. from a checkpoint) after checking every dimension.
    pub fn set_weights(&mut self, kernels: Vec<KernelStack>, readout: ReadoutWeights) -> Result<()> {
        let convs = self.conv_layers();
        if kernels.len() != convs.len() {
            return Err(Error::shape(format!(
                "{} kernel stacks for {} conv layers",
                kernels.len(),
                convs.len()
            )));
        }
        for (ks, &i) in kernels.iter().zip(&convs) {
            let LayerKind::Conv { maps, kernel } = self.layers[i].kind else {
                unreachable!()
            };
            if ks.dims() != [maps, self.input_of(i).maps, kernel, kernel] {
                return Err(Error::shape(format!("layer {i}: kernel dims {:?}", ks.dims())));
            }
        }
        if readout.outputs != self.classes()
            || readout.inputs != self.feature_len()
            || readout.weights.len() != readout.outputs * readout.inputs
        {
            return Err(Error::shape(format!(
                "readout {}x{} for {} classes x {} features",
                readout.outputs,
                readout.inputs,
                self.classes(),
                self.feature_len()
            )));
        }
        self.kernels = kernels;
        self.readout = readout;
        Ok(())
    }
}

impl fmt::Display for NetworkTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.layers.iter().map(|d| d.geometry.to_string()).collect();
        write!(f, "{} [{}]", self.spec, parts.join(" -> "))
    }
}
