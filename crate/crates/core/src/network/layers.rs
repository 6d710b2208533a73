//! Spiking forward passes.
//!
//! All layers advance on the same step: a spike emitted by layer `i` at step
//! `t` drives layer `i + 1` at step `t`. Convolutional and fully connected
//! layers are driven event by event, so a silent frame costs no weight
//! multiplications. Pooling units are memoryless: each step they average the
//! observed potentials of the conv layer below and fire where the mean
//! reaches `v_th`.

use crate::error::{Error, Result};
use crate::lif::{LifParams, LifPopulation};
use crate::network::topology::{KernelStack, LayerKind, NetworkTopology, ReadoutWeights};
use crate::raster::SpikeRaster;
use crate::tensor::Shape3;

/// Accumulate the valid-correlation current of the input events into `current`.
///
/// `current` has geometry `out_shape` and must be zeroed by the caller.
/// Returns the number of multiply-adds performed.
pub fn accumulate_conv_current(
    events: &[u32],
    in_shape: Shape3,
    stack: &KernelStack,
    out_shape: Shape3,
    current: &mut [f64],
) -> u64 {
    let (kh, kw) = stack.kernel_dims();
    let mut ops = 0u64;
    for &e in events {
        let e = e as usize;
        let l = e / in_shape.plane();
        let r = (e % in_shape.plane()) / in_shape.cols;
        let c = e % in_shape.cols;
        // output (i, j) sees input (i + a, j + b)
        let a_lo = (r + 1).saturating_sub(out_shape.rows);
        let a_hi = kh.min(r + 1);
        let b_lo = (c + 1).saturating_sub(out_shape.cols);
        let b_hi = kw.min(c + 1);
        for k in 0..out_shape.maps {
            let w = stack.slice(k, l);
            let base = k * out_shape.plane();
            for a in a_lo..a_hi {
                let i = r - a;
                let row = base + i * out_shape.cols;
                for b in b_lo..b_hi {
                    current[row + c - b] += w[a * kw + b];
                }
            }
            ops += ((a_hi - a_lo) * (b_hi - b_lo)) as u64;
        }
    }
    ops
}

/// One step of a convolutional spiking layer.
///
/// `current` is scratch of the layer's size. Returns the spiking neurons'
/// flat indices and adds the multiply-add count to `ops`.
pub fn conv_forward_step(
    events_in: &[u32],
    in_shape: Shape3,
    stack: &KernelStack,
    pop: &mut LifPopulation,
    current: &mut [f64],
    spikes: &mut [bool],
    ops: &mut u64,
) -> Result<Vec<u32>> {
    let out_shape = pop.shape();
    if stack.in_maps() != in_shape.maps || stack.out_maps() != out_shape.maps {
        return Err(Error::shape(format!(
            "stack {:?} between {in_shape} and {out_shape}",
            stack.dims()
        )));
    }
    let (kh, kw) = stack.kernel_dims();
    if in_shape.rows + 1 != out_shape.rows + kh || in_shape.cols + 1 != out_shape.cols + kw {
        return Err(Error::shape(format!(
            "valid conv {kh}x{kw} cannot map {in_shape} to {out_shape}"
        )));
    }
    current.fill(0.0);
    *ops += accumulate_conv_current(events_in, in_shape, stack, out_shape, current);
    pop.step_into(current, spikes)?;
    Ok(mask_events(spikes))
}

/// Memoryless average-pooling threshold units.
///
/// Writes the pooled potentials into `pooled` and returns the spiking units.
pub fn pool_forward_step(
    potentials: &[f64],
    in_shape: Shape3,
    window: usize,
    v_th: f64,
    pooled: &mut [f64],
) -> Result<Vec<u32>> {
    if window == 0 || in_shape.rows % window != 0 || in_shape.cols % window != 0 {
        return Err(Error::shape(format!("pool window {window} does not divide {in_shape}")));
    }
    let out = Shape3::new(in_shape.maps, in_shape.rows / window, in_shape.cols / window);
    if potentials.len() != in_shape.len() || pooled.len() != out.len() {
        return Err(Error::shape("pooling buffer sizes"));
    }
    let inv = 1.0 / (window * window) as f64;
    let mut events = Vec::new();
    for m in 0..out.maps {
        for i in 0..out.rows {
            for j in 0..out.cols {
                let mut acc = 0.0;
                for a in 0..window {
                    let row = in_shape.index(m, i * window + a, j * window);
                    for b in 0..window {
                        acc += potentials[row + b];
                    }
                }
                let p = acc * inv;
                let idx = out.index(m, i, j);
                pooled[idx] = p;
                if p >= v_th {
                    events.push(idx as u32);
                }
            }
        }
    }
    Ok(events)
}

/// One step of the fully connected output layer.
pub fn fc_forward_step(
    events_in: &[u32],
    weights: &ReadoutWeights,
    pop: &mut LifPopulation,
    current: &mut [f64],
    spikes: &mut [bool],
) -> Result<Vec<u32>> {
    if weights.outputs != pop.len() || current.len() != pop.len() {
        return Err(Error::shape(format!(
            "readout {}x{} for {} output neurons",
            weights.outputs,
            weights.inputs,
            pop.len()
        )));
    }
    if let Some(&bad) = events_in.iter().find(|&&e| e as usize >= weights.inputs) {
        return Err(Error::shape(format!(
            "feature index {bad} beyond {} inputs",
            weights.inputs
        )));
    }
    fc_current(events_in, weights, current);
    pop.step_into(current, spikes)?;
    Ok(mask_events(spikes))
}

pub(crate) fn fc_current(events_in: &[u32], weights: &ReadoutWeights, current: &mut [f64]) {
    current.fill(0.0);
    for (j, cur) in current.iter_mut().enumerate() {
        let row = weights.row(j);
        for &e in events_in {
            *cur += row[e as usize];
        }
    }
}

pub(crate) fn mask_events(mask: &[bool]) -> Vec<u32> {
    mask.iter()
        .enumerate()
        .filter(|(_, &s)| s)
        .map(|(i, _)| i as u32)
        .collect()
}

/// What [`Simulator::run_window`] should keep.
#[derive(Debug, Clone, Default)]
pub struct Record {
    /// Layer indices (1-based positions in the topology) whose spikes are kept.
    pub spikes: Vec<usize>,
    /// Layer indices whose per-step observed potentials are kept.
    pub potentials: Vec<usize>,
}

impl Record {
    pub fn spikes_of(layers: impl IntoIterator<Item = usize>) -> Self {
        Record {
            spikes: layers.into_iter().collect(),
            potentials: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct WindowRecord {
    /// Indexed by layer; `None` where not recorded.
    pub rasters: Vec<Option<SpikeRaster>>,
    /// Per layer, per step potentials.
    pub potentials: Vec<Option<Vec<Vec<f64>>>>,
    /// Multiply-adds spent in conv and fc layers.
    pub synaptic_ops: u64,
}

impl WindowRecord {
    pub fn raster(&self, layer: usize) -> Option<&SpikeRaster> {
        self.rasters.get(layer).and_then(Option::as_ref)
    }
}

enum LayerState {
    Input,
    Conv {
        pop: LifPopulation,
        current: Vec<f64>,
        spikes: Vec<bool>,
    },
    Pool {
        window: usize,
        pooled: Vec<f64>,
    },
    Output {
        pop: LifPopulation,
        current: Vec<f64>,
        spikes: Vec<bool>,
    },
}

/// Private population state for running windows over a frozen topology.
pub struct Simulator {
    params: LifParams,
    layers: Vec<LayerState>,
}

impl Simulator {
    pub fn new(topology: &NetworkTopology, params: LifParams) -> Self {
        let layers = topology
            .layers()
            .iter()
            .map(|d| match d.kind {
                LayerKind::Input => LayerState::Input,
                LayerKind::Conv { .. } => LayerState::Conv {
                    pop: LifPopulation::new(d.geometry, params),
                    current: vec![0.0; d.geometry.len()],
                    spikes: vec![false; d.geometry.len()],
                },
                LayerKind::AvgPool { window } => LayerState::Pool {
                    window,
                    pooled: vec![0.0; d.geometry.len()],
                },
                LayerKind::Output { .. } => LayerState::Output {
                    pop: LifPopulation::new(d.geometry, params),
                    current: vec![0.0; d.geometry.len()],
                    spikes: vec![false; d.geometry.len()],
                },
            })
            .collect();
        Simulator { params, layers }
    }

    pub fn reset(&mut self) {
        for l in &mut self.layers {
            match l {
                LayerState::Conv { pop, .. } | LayerState::Output { pop, .. } => pop.reset(),
                LayerState::Pool { pooled, .. } => pooled.fill(self.params.v_res),
                LayerState::Input => {}
            }
        }
    }

    /// True when every population sits at `v_res`.
    pub fn is_reset(&self) -> bool {
        self.layers.iter().all(|l| match l {
            LayerState::Conv { pop, .. } | LayerState::Output { pop, .. } => pop.is_reset(),
            _ => true,
        })
    }

    /// Run a full window through every layer.
    pub fn run_window(
        &mut self,
        topology: &NetworkTopology,
        input: &SpikeRaster,
        record: &Record,
    ) -> Result<WindowRecord> {
        self.run_through(topology, input, topology.output_layer(), record)
    }

    /// Run a window through layers `1..=last`; populations are reset first.
    pub fn run_through(
        &mut self,
        topology: &NetworkTopology,
        input: &SpikeRaster,
        last: usize,
        record: &Record,
    ) -> Result<WindowRecord> {
        if input.shape() != topology.input_shape() {
            return Err(Error::shape(format!(
                "raster {} for input layer {}",
                input.shape(),
                topology.input_shape()
            )));
        }
        if !topology.is_initialized() {
            return Err(Error::InvalidParam("topology weights are not initialized".into()));
        }
        if last >= topology.layers().len() || self.layers.len() != topology.layers().len() {
            return Err(Error::shape(format!("layer {last} out of range")));
        }
        self.reset();
        let steps = input.len_steps();
        let descs = topology.layers();
        let mut out = WindowRecord {
            rasters: vec![None; descs.len()],
            potentials: vec![None; descs.len()],
            synaptic_ops: 0,
        };
        for &i in &record.spikes {
            if i < descs.len() {
                out.rasters[i] = Some(SpikeRaster::with_capacity(descs[i].geometry, steps));
            }
        }
        for &i in &record.potentials {
            if i < descs.len() {
                out.potentials[i] = Some(Vec::with_capacity(steps));
            }
        }
        let mut ops = 0u64;
        for t in 0..steps {
            let mut events: Vec<u32> = input.events(t).to_vec();
            if let Some(r) = out.rasters[0].as_mut() {
                r.push_events(events.clone());
            }
            // observed potentials of the most recent conv layer, for pooling
            let mut conv_idx: Option<usize> = None;
            for i in 1..=last {
                let (before, rest) = self.layers.split_at_mut(i);
                let in_shape = descs[i - 1].geometry;
                let (next, pot): (Vec<u32>, Option<&[f64]>) = match &mut rest[0] {
                    LayerState::Conv { pop, current, spikes } => {
                        let ord = topology.conv_ordinal(i).expect("conv layer has a stack");
                        let ev =
                            conv_forward_step(&events, in_shape, topology.kernel(ord), pop, current, spikes, &mut ops)?;
                        conv_idx = Some(i);
                        (ev, Some(pop.observed()))
                    }
                    LayerState::Pool { window, pooled } => {
                        let src = conv_idx
                            .and_then(|c| match &before[c] {
                                LayerState::Conv { pop, .. } if c == i - 1 => Some(pop.observed()),
                                _ => None,
                            })
                            .ok_or_else(|| Error::shape(format!("pool layer {i} must follow a conv layer")))?;
                        let ev = pool_forward_step(src, in_shape, *window, self.params.v_th, pooled)?;
                        (ev, Some(pooled.as_slice()))
                    }
                    LayerState::Output { pop, current, spikes } => {
                        ops += (events.len() * pop.len()) as u64;
                        let ev = fc_forward_step(&events, topology.readout(), pop, current, spikes)?;
                        (ev, Some(pop.observed()))
                    }
                    LayerState::Input => unreachable!("input is layer 0"),
                };
                if let (Some(tr), Some(p)) = (out.potentials[i].as_mut(), pot) {
                    tr.push(p.to_vec());
                }
                if let Some(r) = out.rasters[i].as_mut() {
                    r.push_events(next.clone());
                }
                events = next;
            }
        }
        out.synaptic_ops = ops;
        Ok(out)
    }
}

/// Run one window over a frozen topology with fresh populations.
pub fn run_window(
    topology: &NetworkTopology,
    params: LifParams,
    input: &SpikeRaster,
    record: &Record,
) -> Result<WindowRecord> {
    Simulator::new(topology, params).run_window(topology, input, record)
}
