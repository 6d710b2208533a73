//! Layer-wise regenerative training of a convolutional spiking auto-encoder.
//!
//! A conv layer (the encoder) is paired with a pseudo-visible LIF layer of
//! the input's geometry (the decoder). Each step:
//!
//! 1. input spikes `x` drive the hidden layer through a valid correlation;
//! 2. hidden spikes `s` drive the pseudo-visible layer through a full
//!    correlation with the flipped kernels (tied weights, one storage);
//! 3. every pseudo-visible neuron is pulled toward `v_th` where its input
//!    counterpart spiked and toward `v_res` elsewhere:
//!    `e = V_des - y`, `δy = e ⊙ [y]₊`;
//! 4. `δh^k = (Σ_l valid(δy_l, w[k,l])) ⊙ [h^k]₊`;
//! 5. `g[k,l] = valid(x_l, δh^k) + valid(δy_l, s^k)` and `w += η·g`.
//!
//! Step 5 folds the per-synapse products `δ_post · pre` of the encoder
//! (pre = input spike) and the decoder (pre = hidden spike) into kernel
//! coordinates. Because the correlation convention carries no hidden flip,
//! the decoder term correlates `δy` with the hidden spike map directly.
//!
//! `g` is oriented as the error-reducing direction: with positive
//! potentials, a spiking input whose pseudo-visible counterpart sits below
//! threshold strengthens every active path into it.
//!
//! `[v]₊ = max(v, 0)` gates each delta by the neuron's own potential. A
//! negative potential contributes no gradient; gating by the raw value would
//! turn `e·y` into `-y²` there and drive weights further negative.
//!
//! `y`, `h` are observed potentials (integrated value of the step, before
//! reset). The grid-level functions here are the reference formulation;
//! [`RegenLayer`] runs the same computation event by event.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lif::{LifParams, LifPopulation};
use crate::network::layers::{accumulate_conv_current, mask_events};
use crate::network::topology::KernelStack;
use crate::raster::SpikeRaster;
use crate::tensor::{conv2d_valid, Grid2D, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateGranularity {
    #[default]
    PerStep,
    PerPresentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub eta: f64,
    #[serde(default)]
    pub granularity: UpdateGranularity,
    pub presentations: usize,
    /// Elementwise gradient clip; `None` disables clipping.
    #[serde(default)]
    pub clip: Option<f64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            eta: 1e-4,
            granularity: UpdateGranularity::PerStep,
            presentations: 3,
            clip: Some(30.0),
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParam(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.presentations == 0 {
            return Err(Error::InvalidParam("presentations must be >= 1".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::InvalidParam(format!("clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// `v_th` where the input neuron spiked, `v_res` elsewhere.
pub fn desired_potential(input_spiked: bool, params: &LifParams) -> f64 {
    if input_spiked {
        params.v_th
    } else {
        params.v_res
    }
}

/// Per-neuron `e = V_des - y` for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct InstantError {
    pub values: Vec<f64>,
}

impl InstantError {
    /// Per-step mean squared error `1/(2n) Σ e²`.
    pub fn mse(&self) -> f64 {
        let n = self.values.len().max(1) as f64;
        self.values.iter().map(|e| e * e).sum::<f64>() / (2.0 * n)
    }
}

pub fn instant_error(input_frame: &[bool], y: &[f64], params: &LifParams) -> Result<InstantError> {
    if input_frame.len() != y.len() {
        return Err(Error::shape(format!(
            "input frame of {} vs pseudo-visible layer of {}",
            input_frame.len(),
            y.len()
        )));
    }
    Ok(InstantError {
        values: input_frame
            .iter()
            .zip(y)
            .map(|(&s, &v)| desired_potential(s, params) - v)
            .collect(),
    })
}

/// Potential gate `[v]₊` applied to both deltas.
#[inline]
pub fn gate(v: f64) -> f64 {
    v.max(0.0)
}

/// Output-layer delta `δy = e ⊙ [y]₊`.
pub fn delta_output(e: &InstantError, y: &[f64]) -> Result<Vec<f64>> {
    if e.values.len() != y.len() {
        return Err(Error::shape("error and potential lengths differ"));
    }
    Ok(e.values.iter().zip(y).map(|(e, &v)| e * gate(v)).collect())
}

fn plane(values: &[f64], shape: Shape3, m: usize) -> Grid2D {
    let p = shape.plane();
    Grid2D::from_vec(shape.rows, shape.cols, values[m * p..(m + 1) * p].to_vec()).expect("plane dims")
}

fn spike_plane(mask: &[bool], shape: Shape3, m: usize) -> Grid2D {
    let p = shape.plane();
    Grid2D::from_vec(
        shape.rows,
        shape.cols,
        mask[m * p..(m + 1) * p]
            .iter()
            .map(|&s| if s { 1.0 } else { 0.0 })
            .collect(),
    )
    .expect("plane dims")
}

fn hidden_shape(in_shape: Shape3, stack: &KernelStack) -> Result<Shape3> {
    let (kh, kw) = stack.kernel_dims();
    if stack.in_maps() != in_shape.maps || kh > in_shape.rows || kw > in_shape.cols {
        return Err(Error::shape(format!(
            "stack {:?} cannot encode {in_shape}",
            stack.dims()
        )));
    }
    Ok(Shape3::new(
        stack.out_maps(),
        in_shape.rows - kh + 1,
        in_shape.cols - kw + 1,
    ))
}

/// Hidden-layer deltas `δh^k = (Σ_l valid(δy_l, w[k,l])) ⊙ [h^k]₊`.
///
/// The sum runs over every pseudo-visible neuron a hidden neuron projects
/// to through the flipped-kernel decode; by the correlation adjoint this is
/// a valid correlation with the unflipped encoder slices.
pub fn delta_hidden(dy: &[f64], in_shape: Shape3, stack: &KernelStack, h: &[f64]) -> Result<Vec<f64>> {
    let hid = hidden_shape(in_shape, stack)?;
    if dy.len() != in_shape.len() || h.len() != hid.len() {
        return Err(Error::shape(format!(
            "δy of {} for {in_shape}, h of {} for {hid}",
            dy.len(),
            h.len()
        )));
    }
    let mut out = vec![0.0; hid.len()];
    for k in 0..hid.maps {
        let mut back = Grid2D::zeros(hid.rows, hid.cols);
        for l in 0..in_shape.maps {
            let c = conv2d_valid(&plane(dy, in_shape, l), &stack.encoder_kernel(k, l))?;
            for (b, v) in back.as_mut_slice().iter_mut().zip(c.as_slice()) {
                *b += v;
            }
        }
        let base = k * hid.plane();
        for (i, b) in back.as_slice().iter().enumerate() {
            out[base + i] = b * gate(h[base + i]);
        }
    }
    Ok(out)
}

/// Kernel gradients `g[k,l] = valid(x_l, δh^k) + valid(δy_l, s^k)`.
pub fn conv_ae_gradient(
    x: &[bool],
    in_shape: Shape3,
    dh: &[f64],
    h_spikes: &[bool],
    dy: &[f64],
    stack: &KernelStack,
) -> Result<KernelStack> {
    let hid = hidden_shape(in_shape, stack)?;
    if x.len() != in_shape.len() || dy.len() != in_shape.len() || dh.len() != hid.len() || h_spikes.len() != hid.len() {
        return Err(Error::shape("gradient operand sizes"));
    }
    let [o, i, kh, kw] = stack.dims();
    let mut g = KernelStack::zeros(o, i, kh, kw);
    for k in 0..o {
        let dh_k = plane(dh, hid, k);
        let s_k = spike_plane(h_spikes, hid, k);
        for l in 0..i {
            let enc = conv2d_valid(&spike_plane(x, in_shape, l), &dh_k)?;
            let dec = conv2d_valid(&plane(dy, in_shape, l), &s_k)?;
            let off = g.offset(k, l);
            let dst = &mut g.as_mut_slice()[off..off + kh * kw];
            for ((d, a), b) in dst.iter_mut().zip(enc.as_slice()).zip(dec.as_slice()) {
                *d = a + b;
            }
        }
    }
    Ok(g)
}

/// `w <- w + η·g`.
pub fn apply_update(stack: &mut KernelStack, grads: &KernelStack, eta: f64) -> Result<()> {
    if stack.dims() != grads.dims() {
        return Err(Error::shape(format!(
            "gradient {:?} for stack {:?}",
            grads.dims(),
            stack.dims()
        )));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("kernel gradient"));
    }
    for (w, g) in stack.as_mut_slice().iter_mut().zip(grads.as_slice()) {
        *w += eta * g;
    }
    Ok(())
}

/// Per-window output of [`RegenLayer::train_window`].
#[derive(Debug, Clone, Default)]
pub struct WindowTrace {
    /// Per-step mean squared potential error.
    pub loss: Vec<f64>,
    /// Input spike counts per neuron.
    pub input_counts: Vec<u32>,
    /// Pseudo-visible spike counts per neuron.
    pub recon_counts: Vec<u32>,
    /// Hidden spike counts per neuron.
    pub hidden_counts: Vec<u32>,
    pub updates: usize,
}

impl WindowTrace {
    pub fn total_loss(&self) -> f64 {
        self.loss.iter().sum()
    }

    pub fn hidden_spikes(&self) -> u64 {
        self.hidden_counts.iter().map(|&c| c as u64).sum()
    }

    /// Share of hidden neurons that spiked at least once.
    pub fn hidden_active_fraction(&self) -> f64 {
        let n = self.hidden_counts.len().max(1);
        self.hidden_counts.iter().filter(|&&c| c > 0).count() as f64 / n as f64
    }

    /// Squared Euclidean distance between input and reconstruction counts.
    pub fn count_error(&self) -> f64 {
        crate::metrics::reconstruction_error(&self.input_counts, &self.recon_counts)
    }
}

/// Encoder/decoder state for training one conv layer.
pub struct RegenLayer {
    params: LifParams,
    in_shape: Shape3,
    hid_shape: Shape3,
    hidden: LifPopulation,
    visible: LifPopulation,
    j_hidden: Vec<f64>,
    j_visible: Vec<f64>,
    s_hidden: Vec<bool>,
    s_visible: Vec<bool>,
    dy: Vec<f64>,
    dh: Vec<f64>,
    dh_stamp: Vec<u32>,
    grad: Vec<f64>,
    stamp: u32,
}

impl RegenLayer {
    pub fn new(in_shape: Shape3, stack: &KernelStack, params: LifParams) -> Result<Self> {
        let hid_shape = hidden_shape(in_shape, stack)?;
        Ok(RegenLayer {
            params,
            in_shape,
            hid_shape,
            hidden: LifPopulation::new(hid_shape, params),
            visible: LifPopulation::new(in_shape, params),
            j_hidden: vec![0.0; hid_shape.len()],
            j_visible: vec![0.0; in_shape.len()],
            s_hidden: vec![false; hid_shape.len()],
            s_visible: vec![false; in_shape.len()],
            dy: vec![0.0; in_shape.len()],
            dh: vec![0.0; hid_shape.len()],
            dh_stamp: vec![0; hid_shape.plane()],
            grad: vec![0.0; stack.as_slice().len()],
            stamp: 0,
        })
    }

    pub fn hidden_shape(&self) -> Shape3 {
        self.hid_shape
    }

    pub fn reset(&mut self) {
        self.hidden.reset();
        self.visible.reset();
    }

    pub fn is_reset(&self) -> bool {
        self.hidden.is_reset() && self.visible.is_reset()
    }

    pub fn hidden(&self) -> &LifPopulation {
        &self.hidden
    }

    pub fn visible(&self) -> &LifPopulation {
        &self.visible
    }

    /// Present one window and learn from it. Populations are reset first.
    pub fn train_window(
        &mut self,
        stack: &mut KernelStack,
        input: &SpikeRaster,
        cfg: &LearnConfig,
    ) -> Result<WindowTrace> {
        self.run(stack, input, Some(cfg))
    }

    /// Present one window with learning disabled.
    pub fn reconstruct_window(&mut self, stack: &mut KernelStack, input: &SpikeRaster) -> Result<WindowTrace> {
        self.run(stack, input, None)
    }

    fn run(&mut self, stack: &mut KernelStack, input: &SpikeRaster, cfg: Option<&LearnConfig>) -> Result<WindowTrace> {
        if input.shape() != self.in_shape {
            return Err(Error::shape(format!(
                "raster {} for layer input {}",
                input.shape(),
                self.in_shape
            )));
        }
        if stack.as_slice().len() != self.grad.len() || hidden_shape(self.in_shape, stack)? != self.hid_shape {
            return Err(Error::shape("kernel stack does not match the layer context"));
        }
        self.reset();
        self.grad.fill(0.0);
        let steps = input.len_steps();
        let mut trace = WindowTrace {
            loss: Vec::with_capacity(steps),
            input_counts: input.counts(),
            recon_counts: vec![0; self.in_shape.len()],
            hidden_counts: vec![0; self.hid_shape.len()],
            updates: 0,
        };
        for t in 0..steps {
            let x = input.events(t);
            let h_events = self.encode(stack, x)?;
            self.decode(stack, &h_events)?;
            for (c, &s) in trace.recon_counts.iter_mut().zip(&self.s_visible) {
                *c += s as u32;
            }
            for &e in &h_events {
                trace.hidden_counts[e as usize] += 1;
            }
            let loss = self.visible_error(x);
            trace.loss.push(loss);
            if let Some(cfg) = cfg {
                let touched = self.accumulate_gradient(stack, x, &h_events);
                if touched && cfg.granularity == UpdateGranularity::PerStep {
                    self.apply(stack, cfg)?;
                    trace.updates += 1;
                }
            }
        }
        if let Some(cfg) = cfg {
            if cfg.granularity == UpdateGranularity::PerPresentation && self.grad.iter().any(|&g| g != 0.0) {
                self.apply(stack, cfg)?;
                trace.updates += 1;
            }
        }
        Ok(trace)
    }

    fn encode(&mut self, stack: &KernelStack, x: &[u32]) -> Result<Vec<u32>> {
        self.j_hidden.fill(0.0);
        accumulate_conv_current(x, self.in_shape, stack, self.hid_shape, &mut self.j_hidden);
        self.hidden.step_into(&self.j_hidden, &mut self.s_hidden)?;
        Ok(mask_events(&self.s_hidden))
    }

    /// Full correlation of hidden spikes with flipped kernels: each hidden
    /// spike at `(k, i, j)` stamps `w[k, l]` at `(l, i.., j..)`.
    fn decode(&mut self, stack: &KernelStack, h_events: &[u32]) -> Result<()> {
        self.j_visible.fill(0.0);
        let (kh, kw) = stack.kernel_dims();
        let (hid, inp) = (self.hid_shape, self.in_shape);
        for &e in h_events {
            let e = e as usize;
            let k = e / hid.plane();
            let i = (e % hid.plane()) / hid.cols;
            let j = e % hid.cols;
            for l in 0..inp.maps {
                let w = stack.slice(k, l);
                for a in 0..kh {
                    let row = inp.index(l, i + a, j);
                    for b in 0..kw {
                        self.j_visible[row + b] += w[a * kw + b];
                    }
                }
            }
        }
        self.visible.step_into(&self.j_visible, &mut self.s_visible)?;
        Ok(())
    }

    /// Fill `δy` and return the step's mean squared error.
    fn visible_error(&mut self, x: &[u32]) -> f64 {
        let y = self.visible.observed();
        let (v_th, v_res) = (self.params.v_th, self.params.v_res);
        let mut sq = 0.0;
        let mut xi = x.iter().peekable();
        for (p, (&yp, d)) in y.iter().zip(self.dy.iter_mut()).enumerate() {
            let spiked = xi.next_if(|&&e| e as usize == p).is_some();
            let e = if spiked { v_th } else { v_res } - yp;
            sq += e * e;
            *d = e * gate(yp);
        }
        sq / (2.0 * y.len() as f64)
    }

    /// `δh` at hidden position `(i, j)` for every map, computed on demand.
    fn ensure_dh(&mut self, stack: &KernelStack, i: usize, j: usize) {
        let pos = i * self.hid_shape.cols + j;
        if self.dh_stamp[pos] == self.stamp {
            return;
        }
        self.dh_stamp[pos] = self.stamp;
        let (kh, kw) = stack.kernel_dims();
        let (hid, inp) = (self.hid_shape, self.in_shape);
        let h = self.hidden.observed();
        for k in 0..hid.maps {
            let idx = k * hid.plane() + pos;
            let hv = gate(h[idx]);
            if hv == 0.0 {
                self.dh[idx] = 0.0;
                continue;
            }
            let mut acc = 0.0;
            for l in 0..inp.maps {
                let w = stack.slice(k, l);
                for a in 0..kh {
                    let row = inp.index(l, i + a, j);
                    let dyr = &self.dy[row..row + kw];
                    let wr = &w[a * kw..(a + 1) * kw];
                    for b in 0..kw {
                        acc += dyr[b] * wr[b];
                    }
                }
            }
            self.dh[idx] = acc * hv;
        }
    }

    /// Add this step's kernel gradient into `self.grad`; false if it is
    /// identically zero (no input and no hidden spikes).
    fn accumulate_gradient(&mut self, stack: &KernelStack, x: &[u32], h_events: &[u32]) -> bool {
        if x.is_empty() && h_events.is_empty() {
            return false;
        }
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.dh_stamp.fill(u32::MAX);
            self.stamp = 1;
        }
        let (kh, kw) = stack.kernel_dims();
        let (hid, inp) = (self.hid_shape, self.in_shape);
        let kk = kh * kw;
        // encoder synapses: pre = input spike, post = hidden delta
        for &e in x {
            let e = e as usize;
            let l = e / inp.plane();
            let r = (e % inp.plane()) / inp.cols;
            let c = e % inp.cols;
            let a_lo = (r + 1).saturating_sub(hid.rows);
            let a_hi = kh.min(r + 1);
            let b_lo = (c + 1).saturating_sub(hid.cols);
            let b_hi = kw.min(c + 1);
            for a in a_lo..a_hi {
                for b in b_lo..b_hi {
                    self.ensure_dh(stack, r - a, c - b);
                }
            }
            for k in 0..hid.maps {
                let g = &mut self.grad[(k * inp.maps + l) * kk..(k * inp.maps + l + 1) * kk];
                let base = k * hid.plane();
                for a in a_lo..a_hi {
                    for b in b_lo..b_hi {
                        g[a * kw + b] += self.dh[base + (r - a) * hid.cols + (c - b)];
                    }
                }
            }
        }
        // decoder synapses: pre = hidden spike, post = pseudo-visible delta
        for &e in h_events {
            let e = e as usize;
            let k = e / hid.plane();
            let i = (e % hid.plane()) / hid.cols;
            let j = e % hid.cols;
            for l in 0..inp.maps {
                let g = &mut self.grad[(k * inp.maps + l) * kk..(k * inp.maps + l + 1) * kk];
                for a in 0..kh {
                    let row = inp.index(l, i + a, j);
                    for b in 0..kw {
                        g[a * kw + b] += self.dy[row + b];
                    }
                }
            }
        }
        true
    }

    fn apply(&mut self, stack: &mut KernelStack, cfg: &LearnConfig) -> Result<()> {
        if self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("kernel gradient"));
        }
        let eta = cfg.eta;
        match cfg.clip {
            Some(c) => {
                for (w, g) in stack.as_mut_slice().iter_mut().zip(&self.grad) {
                    *w += eta * g.clamp(-c, c);
                }
            }
            None => {
                for (w, g) in stack.as_mut_slice().iter_mut().zip(&self.grad) {
                    *w += eta * g;
                }
            }
        }
        self.grad.fill(0.0);
        Ok(())
    }

    /// Step-level reference access for tests: run the forward part of one
    /// step and return `(x mask, h observed, h spikes, y observed)`.
    #[doc(hidden)]
    pub fn forward_step_for_test(&mut self, stack: &KernelStack, x: &[u32]) -> Result<(Vec<f64>, Vec<bool>, Vec<f64>)> {
        let h_events = self.encode(stack, x)?;
        self.decode(stack, &h_events)?;
        Ok((
            self.hidden.observed().to_vec(),
            self.s_hidden.clone(),
            self.visible.observed().to_vec(),
        ))
    }

    /// Gradient the event-driven path accumulates for one step, given the
    /// state left by [`Self::forward_step_for_test`].
    #[doc(hidden)]
    pub fn step_gradient_for_test(&mut self, stack: &KernelStack, x: &[u32]) -> Vec<f64> {
        let h_events = mask_events(&self.s_hidden);
        self.visible_error(x);
        self.grad.fill(0.0);
        self.accumulate_gradient(stack, x, &h_events);
        let g = self.grad.clone();
        self.grad.fill(0.0);
        g
    }
}

/// Train one layer on one presentation window with a fresh context.
pub fn train_layer_on_window(
    stack: &mut KernelStack,
    input: &SpikeRaster,
    params: LifParams,
    cfg: &LearnConfig,
) -> Result<WindowTrace> {
    cfg.validate()?;
    RegenLayer::new(input.shape(), stack, params)?.train_window(stack, input, cfg)
}
