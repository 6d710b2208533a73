//! Supervised output layer and the classification rule.
//!
//! During readout training the labeled output neuron is driven toward a
//! Poisson target train and every other neuron toward silence, with the same
//! potential-error delta as the pseudo-visible layer:
//! `δ_j = (V_des_j - V_j)·[V_j]₊`, `Δw_ji = η·δ_j·f_i`, where `f` is the
//! step's feature spike vector. [`ErrorSchedule`] chooses at which steps a
//! neuron's error is applied.
//!
//! A decision sums the output spike counts of several fresh presentations of
//! the same image and takes the argmax, lowest index on ties.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Image};
use crate::error::{Error, Result};
use crate::lif::{LifParams, LifPopulation, DT_MS};
use crate::network::layers::{fc_current, mask_events};
use crate::network::{NetworkTopology, ReadoutWeights, Record, Simulator};
use crate::raster::{window_steps, Encoding, SpikeRaster};
use crate::regen::gate;
use crate::rng::{stream_index, Purpose, RngStream};
use crate::tensor::Shape3;

/// Presynaptic factor multiplying an output neuron's `δ` in `Δw_ji`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Presynaptic {
    /// The input's spike indicator at the current step.
    Spike,
    /// A leaky trace of the input's spikes with the output time constant.
    #[default]
    Trace,
}

/// Steps at which an output neuron's potential error is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorSchedule {
    /// Every step; silent target steps pull the potential toward `v_res`.
    EveryStep,
    /// Only steps where the neuron's target spiked or the neuron itself
    /// spiked.
    #[default]
    SpikeEvents,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    pub eta: f64,
    /// Rate of the labeled neuron's target train, Hz.
    pub target_rate: f64,
    #[serde(default)]
    pub schedule: ErrorSchedule,
    /// Passes over the labeled subset.
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default)]
    pub presynaptic: Presynaptic,
    /// Magnitude bound on each neuron's `δ`; `None` disables clipping.
    #[serde(default)]
    pub clip: Option<f64>,
}

fn one() -> usize {
    1
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig {
            eta: 3.0,
            target_rate: 30.0,
            schedule: ErrorSchedule::SpikeEvents,
            epochs: 5,
            presynaptic: Presynaptic::Trace,
            clip: Some(0.01),
        }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "readout eta must be > 0, got {}",
                self.eta
            )));
        }
        if !(self.target_rate >= 0.0) || self.target_rate * DT_MS / 1000.0 > 1.0 {
            return Err(Error::InvalidRate(self.target_rate * DT_MS / 1000.0));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParam("readout epochs must be >= 1".into()));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::InvalidParam(format!("readout clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Desired output activity for one labeled window.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTarget {
    label: usize,
    raster: SpikeRaster,
}

impl LabelTarget {
    pub fn label(&self) -> usize {
        self.label
    }

    pub fn raster(&self) -> &SpikeRaster {
        &self.raster
    }

    pub fn classes(&self) -> usize {
        self.raster.neurons()
    }
}

/// Poisson train at `target_rate` for neuron `label`, silence elsewhere.
/// One draw per step, for the labeled neuron only.
pub fn make_target(
    label: usize,
    classes: usize,
    target_rate: f64,
    t_ms: f64,
    rng: &mut RngStream,
) -> Result<LabelTarget> {
    if label >= classes {
        return Err(Error::InvalidParam(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let p = target_rate * DT_MS / 1000.0;
    if !(p >= 0.0) || p > 1.0 {
        return Err(Error::InvalidRate(p));
    }
    let steps = window_steps(t_ms)?;
    let mut raster = SpikeRaster::with_capacity(Shape3::new(classes, 1, 1), steps);
    for _ in 0..steps {
        let fire = rng.bernoulli(p);
        raster.push_events(if fire { vec![label as u32] } else { Vec::new() });
    }
    Ok(LabelTarget { label, raster })
}

/// What one readout learning step did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadoutStep {
    /// `1/(2n) Σ_j (V_des_j - V_j)²` over all outputs, whatever the schedule.
    pub loss: f64,
    pub spikes: Vec<u32>,
    /// Number of output neurons whose error was applied.
    pub applied: usize,
}

/// Output population plus per-input presynaptic factors for one window.
///
/// With [`Presynaptic::Trace`] each input carries
/// `z_i ← (1 - dt/τ)·z_i + (dt/τ)·f_i`, the derivative of a leaky output
/// potential with respect to `w_ji` between resets. With
/// [`Presynaptic::Spike`] `z_i = f_i`.
#[derive(Debug, Clone)]
pub struct ReadoutLearner {
    pop: LifPopulation,
    cfg: ReadoutConfig,
    z: Vec<f64>,
    decay: f64,
    current: Vec<f64>,
    spikes: Vec<bool>,
}

impl ReadoutLearner {
    pub fn new(weights: &ReadoutWeights, params: LifParams, cfg: &ReadoutConfig) -> Self {
        let n = weights.outputs;
        ReadoutLearner {
            pop: LifPopulation::new(Shape3::new(n, 1, 1), params),
            cfg: *cfg,
            z: vec![0.0; weights.inputs],
            decay: (DT_MS / params.tau_rc).min(1.0),
            current: vec![0.0; n],
            spikes: vec![false; n],
        }
    }

    pub fn population(&self) -> &LifPopulation {
        &self.pop
    }

    /// Presynaptic factor of every input after the last step.
    pub fn factors(&self) -> &[f64] {
        &self.z
    }

    /// Advance one step on `features` and move `weights` toward `target`
    /// (ascending indices of output neurons with a target spike).
    pub fn step(&mut self, weights: &mut ReadoutWeights, features: &[u32], target: &[u32]) -> Result<ReadoutStep> {
        let n = self.pop.len();
        if weights.outputs != n || weights.inputs != self.z.len() {
            return Err(Error::shape(format!(
                "readout {}x{} for a learner built for {}x{}",
                weights.outputs,
                weights.inputs,
                n,
                self.z.len()
            )));
        }
        if features.iter().any(|&f| f as usize >= weights.inputs) || target.iter().any(|&t| t as usize >= n) {
            return Err(Error::shape("feature or target index out of range"));
        }
        match self.cfg.presynaptic {
            Presynaptic::Spike => {
                self.z.fill(0.0);
                for &f in features {
                    self.z[f as usize] = 1.0;
                }
            }
            Presynaptic::Trace => {
                let keep = 1.0 - self.decay;
                for z in &mut self.z {
                    *z *= keep;
                }
                for &f in features {
                    self.z[f as usize] += self.decay;
                }
            }
        }
        self.current.fill(0.0);
        fc_current(features, weights, &mut self.current);
        self.pop.step_into(&self.current, &mut self.spikes)?;
        let (v_th, v_res) = (self.pop.params().v_th, self.pop.params().v_res);
        let mut out = ReadoutStep {
            spikes: mask_events(&self.spikes),
            ..ReadoutStep::default()
        };
        let mut sq = 0.0;
        for j in 0..n {
            let wanted = target.contains(&(j as u32));
            let v = self.pop.observed()[j];
            let e = if wanted { v_th } else { v_res } - v;
            sq += e * e;
            let selected = match self.cfg.schedule {
                ErrorSchedule::EveryStep => true,
                ErrorSchedule::SpikeEvents => wanted || self.spikes[j],
            };
            let mut delta = e * gate(v);
            if let Some(c) = self.cfg.clip {
                delta = delta.clamp(-c, c);
            }
            if !selected || delta == 0.0 {
                continue;
            }
            out.applied += 1;
            let step = self.cfg.eta * delta;
            let row = &mut weights.weights[j * weights.inputs..(j + 1) * weights.inputs];
            match self.cfg.presynaptic {
                Presynaptic::Spike => {
                    for &f in features {
                        row[f as usize] += step;
                    }
                }
                Presynaptic::Trace => {
                    for (w, z) in row.iter_mut().zip(&self.z) {
                        *w += step * z;
                    }
                }
            }
            if !row.iter().all(|w| w.is_finite()) {
                return Err(Error::NonFinite("readout weights"));
            }
        }
        out.loss = sq / (2.0 * n.max(1) as f64);
        Ok(out)
    }
}

/// Summary of one readout training window.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReadoutTrace {
    pub loss: f64,
    pub counts: Vec<u32>,
}

/// Train on one window of precomputed feature spikes with a fresh output
/// population and fresh presynaptic factors.
pub fn train_readout_window(
    weights: &mut ReadoutWeights,
    params: LifParams,
    features: &SpikeRaster,
    target: &LabelTarget,
    cfg: &ReadoutConfig,
) -> Result<ReadoutTrace> {
    if features.neurons() != weights.inputs {
        return Err(Error::shape(format!(
            "{} feature neurons for a readout with {} inputs",
            features.neurons(),
            weights.inputs
        )));
    }
    if features.len_steps() != target.raster.len_steps() {
        return Err(Error::shape("feature and target windows differ in length"));
    }
    let mut learner = ReadoutLearner::new(weights, params, cfg);
    let mut trace = ReadoutTrace {
        loss: 0.0,
        counts: vec![0; weights.outputs],
    };
    for t in 0..features.len_steps() {
        let step = learner.step(weights, features.events(t), target.raster.events(t))?;
        trace.loss += step.loss;
        for s in step.spikes {
            trace.counts[s as usize] += 1;
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub counts: Vec<u64>,
    pub class: usize,
}

/// Argmax of `counts`, lowest index on ties.
pub fn decide(counts: Vec<u64>) -> Decision {
    let mut class = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[class] {
            class = i;
        }
    }
    Decision { counts, class }
}

/// Present `image` `passes` times with fresh Poisson rasters drawn from
/// `rng` and decide on the summed output counts.
pub fn classify(
    topology: &NetworkTopology,
    params: LifParams,
    encoding: Encoding,
    image: &Image,
    passes: usize,
    rng: &mut RngStream,
) -> Result<Decision> {
    let mut sim = Simulator::new(topology, params);
    classify_with(&mut sim, topology, encoding, image, passes, rng)
}

fn classify_with(
    sim: &mut Simulator,
    topology: &NetworkTopology,
    encoding: Encoding,
    image: &Image,
    passes: usize,
    rng: &mut RngStream,
) -> Result<Decision> {
    let out = topology.output_layer();
    let record = Record::spikes_of([out]);
    let mut counts = vec![0u64; topology.classes()];
    for _ in 0..passes {
        let raster = encoding.encode(image, rng)?;
        let rec = sim.run_through(topology, &raster, out, &record)?;
        let r = rec.raster(out).expect("output raster recorded");
        for (c, n) in counts.iter_mut().zip(r.counts()) {
            *c += n as u64;
        }
    }
    Ok(decide(counts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracies: Vec<f64>,
    /// Predicted class per iteration per test item.
    pub predictions: Vec<Vec<u8>>,
    /// `confusion[true * classes + predicted]`, summed over iterations.
    pub confusion: Vec<u64>,
    pub classes: usize,
}

impl Evaluation {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }

    /// Sample standard deviation of the per-iteration accuracies.
    pub fn std_dev(&self) -> f64 {
        let n = self.accuracies.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Encoding stream used for test item `item` in evaluation `iteration`.
pub fn eval_stream(seed: u64, iteration: usize, item: usize) -> RngStream {
    RngStream::derive(seed, Purpose::Encode, stream_index(0xE0, iteration as u64, item as u64))
}

/// Classify every test item `iterations` times, each iteration with its
/// own encoding streams.
pub fn evaluate(
    topology: &NetworkTopology,
    params: LifParams,
    encoding: Encoding,
    test: &Dataset,
    passes: usize,
    iterations: usize,
    seed: u64,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("test set"));
    }
    if passes == 0 || iterations == 0 {
        return Err(Error::InvalidParam("passes and iterations must be >= 1".into()));
    }
    let classes = topology.classes();
    let mut sim = Simulator::new(topology, params);
    let mut ev = Evaluation {
        accuracies: Vec::with_capacity(iterations),
        predictions: Vec::with_capacity(iterations),
        confusion: vec![0; classes * classes],
        classes,
    };
    for it in 0..iterations {
        let mut correct = 0usize;
        let mut preds = Vec::with_capacity(test.len());
        for (i, (image, &label)) in test.images().iter().zip(test.labels()).enumerate() {
            let mut rng = eval_stream(seed, it, i);
            let d = classify_with(&mut sim, topology, encoding, image, passes, &mut rng)?;
            correct += (d.class == label as usize) as usize;
            if (label as usize) < classes {
                ev.confusion[label as usize * classes + d.class] += 1;
            }
            preds.push(d.class as u8);
        }
        ev.accuracies.push(correct as f64 / test.len() as f64);
        ev.predictions.push(preds);
    }
    Ok(ev)
}
