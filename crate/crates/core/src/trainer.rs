//! Training protocol: conv layers one at a time with the regenerative rule,
//! then the readout on a labeled subset, with metrics along the way.
//!
//! Training conv layer `c` presents each image `presentations` times. Layer
//! 0 sees the Poisson raster directly; deeper layers see the spikes the
//! already-trained, frozen layers (and their pooling) produce from a fresh
//! raster, regenerated on the fly.
//!
//! Random streams, all derived from `seed`:
//!
//! | draw                               | purpose   | index                         |
//! |------------------------------------|-----------|-------------------------------|
//! | conv weights                       | `Init`    | 0                             |
//! | readout weights                    | `Init`    | 1                             |
//! | layer `c`, presentation `p`, image `i` | `Encode` | `stream_index(0x10 + c, p, i)` |
//! | readout epoch `e`, image `i`       | `Encode`  | `stream_index(0x40, e, i)`    |
//! | readout target, epoch `e`, image `i` | `Target` | `stream_index(0x40, e, i)`   |
//! | probe image `i`                    | `Encode`  | `stream_index(0x80, 0, i)`    |
//! | evaluation iteration `k`, item `i` | `Encode`  | `stream_index(0xE0, k, i)`    |
//! | labeled subset selection           | `Shuffle` | 0                             |
//! | stack subset selection             | `Shuffle` | 1                             |

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, Progress};
use crate::data::{take_subset, Dataset};
use crate::error::{Error, Result};
use crate::lif::LifParams;
use crate::metrics::{measure_sparsity, MetricRow, MetricsLog, Sparsity};
use crate::network::{parse_topology, LayerKind, NetworkTopology, Record, Simulator};
use crate::raster::{Encoding, SpikeRaster};
use crate::readout::{evaluate, make_target, train_readout_window, Evaluation, ReadoutConfig};
use crate::regen::{LearnConfig, RegenLayer, WindowTrace};
use crate::rng::{stream_index, Purpose, RngStream};

/// Order of the repeated presentations while a conv layer trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PresentationOrder {
    /// All presentations of one image before moving to the next.
    BackToBack,
    /// One presentation of every image per pass over the dataset.
    #[default]
    Interleaved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub topology: String,
    pub seed: u64,
    /// Peak input rate, Hz.
    pub i_rate: f64,
    /// Presentation window, ms.
    pub t_ms: f64,
    pub lif: LifParams,
    /// Conv weights start uniform in `±init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
    /// Readout weights start uniform in `[0, readout_init_scale / sqrt(fan_in))`.
    pub readout_init_scale: f64,
    pub learn: LearnConfig,
    #[serde(default)]
    pub order: PresentationOrder,
    pub readout: ReadoutConfig,
    /// Unlabeled images used to train the conv stack; all when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack_images: Option<usize>,
    /// Labeled images used to train the readout.
    pub labeled: usize,
    /// Held-out images used for reconstruction and sparsity probes.
    pub probe_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            topology: "28x28-12c5-2a-64c5-2a-10o".into(),
            seed: 1,
            i_rate: 100.0,
            t_ms: 250.0,
            lif: LifParams::default(),
            init_scale: 200.0,
            readout_init_scale: 1.0,
            learn: LearnConfig::default(),
            order: PresentationOrder::Interleaved,
            readout: ReadoutConfig::default(),
            stack_images: None,
            labeled: 20000,
            probe_images: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        parse_topology(&self.topology)?;
        self.lif.validate()?;
        self.learn.validate()?;
        self.readout.validate()?;
        self.encoding().steps()?;
        let p = self.i_rate / 1000.0 * crate::lif::DT_MS;
        if !(p >= 0.0) || p > 1.0 {
            return Err(Error::InvalidRate(p));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "init_scale must be > 0, got {}",
                self.init_scale
            )));
        }
        if !(self.readout_init_scale >= 0.0 && self.readout_init_scale.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "readout_init_scale must be >= 0, got {}",
                self.readout_init_scale
            )));
        }
        if self.stack_images == Some(0) || self.labeled == 0 {
            return Err(Error::InvalidParam("stack_images and labeled must be >= 1".into()));
        }
        Ok(())
    }

    pub fn encoding(&self) -> Encoding {
        Encoding {
            i_rate: self.i_rate,
            t_ms: self.t_ms,
        }
    }
}

/// Per-pass aggregates of one conv layer's training.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PassLoss {
    pub potential_loss: f64,
    pub count_error: f64,
    pub images: usize,
}

/// Reconstruction quality of one conv layer on a probe set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    pub per_image: Vec<f64>,
    pub aggregate: f64,
    /// Mean share of the layer's neurons active per window.
    pub active_fraction: f64,
}

pub struct Trainer {
    cfg: TrainConfig,
    topology: NetworkTopology,
    progress: Progress,
    log: MetricsLog,
    abort_path: Option<PathBuf>,
    observer: Option<Box<dyn FnMut(&MetricRow)>>,
}

impl Trainer {
    /// Fresh network from `cfg`, conv and readout weights initialized.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut topology = parse_topology(&cfg.topology)?;
        topology.initialize(cfg.init_scale, &mut RngStream::derive(cfg.seed, Purpose::Init, 0));
        let mut rng = RngStream::derive(cfg.seed, Purpose::Init, 1);
        let ro = topology.readout_mut();
        let bound = cfg.readout_init_scale / (ro.inputs.max(1) as f64).sqrt();
        for w in &mut ro.weights {
            *w = rng.uniform() * bound;
        }
        Ok(Trainer {
            cfg,
            topology,
            progress: Progress::default(),
            log: MetricsLog::new(),
            abort_path: None,
            observer: None,
        })
    }

    /// Resume from a checkpoint; its config snapshot becomes the config.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        Ok(Trainer {
            cfg: ck.config,
            topology: ck.topology,
            progress: ck.progress,
            log: MetricsLog::new(),
            abort_path: None,
            observer: None,
        })
    }

    /// Where to write a checkpoint if training hits a non-finite value.
    pub fn set_abort_checkpoint(&mut self, path: impl Into<PathBuf>) {
        self.abort_path = Some(path.into());
    }

    /// Called with every metrics row as it is logged.
    pub fn set_observer(&mut self, f: impl FnMut(&MetricRow) + 'static) {
        self.observer = Some(Box::new(f));
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.cfg
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn progress(&self) -> Progress {
        self.progress
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn take_log(&mut self) -> MetricsLog {
        std::mem::take(&mut self.log)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            topology: self.topology.clone(),
            config: self.cfg.clone(),
            progress: self.progress,
        }
    }

    fn emit(&mut self, row: MetricRow) {
        if let Some(f) = self.observer.as_mut() {
            f(&row);
        }
        self.log.push(row);
    }

    fn abort(&self, err: Error) -> Error {
        if let (Error::NonFinite(_), Some(path)) = (&err, &self.abort_path) {
            if let Err(e) = checkpoint::save(&self.checkpoint(), path) {
                return e;
            }
        }
        err
    }

    /// Raster that conv layer `ordinal` sees for `image` under `rng`.
    fn layer_input(&self, sim: &mut Simulator, ordinal: usize, raster: SpikeRaster) -> Result<SpikeRaster> {
        let layer = self.topology.conv_layers()[ordinal];
        if layer == 1 {
            return Ok(raster);
        }
        let rec = sim.run_through(&self.topology, &raster, layer - 1, &Record::spikes_of([layer - 1]))?;
        Ok(rec.rasters.into_iter().nth(layer - 1).flatten().expect("recorded"))
    }

    /// Train every conv layer not yet trained, in order.
    pub fn train_conv_stack(&mut self, data: &Dataset) -> Result<Vec<Vec<PassLoss>>> {
        let n = self.topology.conv_layers().len();
        let mut all = Vec::new();
        while self.progress.layers_trained < n {
            all.push(self.train_conv_layer(data)?);
        }
        Ok(all)
    }

    /// Train the next untrained conv layer and freeze it.
    pub fn train_conv_layer(&mut self, data: &Dataset) -> Result<Vec<PassLoss>> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("training set"));
        }
        let ord = self.progress.layers_trained;
        let layer = *self
            .topology
            .conv_layers()
            .get(ord)
            .ok_or_else(|| Error::InvalidParam("every conv layer is already trained".into()))?;
        let in_shape = self.topology.input_of(layer);
        let enc = self.cfg.encoding();
        let learn = self.cfg.learn;
        let presentations = learn.presentations;
        let mut stack = self.topology.kernel(ord).clone();
        let mut regen = RegenLayer::new(in_shape, &stack, self.cfg.lif)?;
        let mut sim = Simulator::new(&self.topology, self.cfg.lif);
        let mut passes = vec![PassLoss::default(); presentations];
        let order: Vec<(usize, usize)> = match self.cfg.order {
            PresentationOrder::BackToBack => (0..data.len())
                .flat_map(|i| (0..presentations).map(move |p| (i, p)))
                .collect(),
            PresentationOrder::Interleaved => (0..presentations)
                .flat_map(|p| (0..data.len()).map(move |i| (i, p)))
                .collect(),
        };
        for (i, p) in order {
            let mut rng = RngStream::derive(
                self.cfg.seed,
                Purpose::Encode,
                stream_index(0x10 + ord as u8, p as u64, i as u64),
            );
            let raster = enc.encode(&data.images()[i], &mut rng)?;
            let input = self.layer_input(&mut sim, ord, raster)?;
            let tr = match regen.train_window(&mut stack, &input, &learn) {
                Ok(tr) => tr,
                Err(e) => {
                    *self.topology.kernel_mut(ord) = stack;
                    return Err(self.abort(e));
                }
            };
            let loss = tr.total_loss();
            if !loss.is_finite() {
                *self.topology.kernel_mut(ord) = stack;
                return Err(self.abort(Error::NonFinite("reconstruction loss")));
            }
            passes[p].potential_loss += loss;
            passes[p].count_error += tr.count_error();
            passes[p].images += 1;
        }
        *self.topology.kernel_mut(ord) = stack;
        self.progress.layers_trained = ord + 1;
        for (p, pl) in passes.iter().enumerate() {
            self.emit(MetricRow::Reconstruction {
                layer: ord + 1,
                pass: p + 1,
                images: pl.images,
                potential_loss: pl.potential_loss,
                count_error: pl.count_error,
            });
        }
        Ok(passes)
    }

    /// The first `cfg.stack_images` images of a seeded shuffle of `data`,
    /// or all of `data` in order when unset or larger.
    pub fn stack_subset(&self, data: &Dataset) -> Result<Dataset> {
        match self.cfg.stack_images {
            Some(n) if n < data.len() => {
                if n == 0 {
                    return Err(Error::EmptyDataset("stack subset"));
                }
                take_subset(data, n, RngStream::derive(self.cfg.seed, Purpose::Shuffle, 1).seed())
            }
            _ => Ok(data.clone()),
        }
    }

    /// Train the readout on the first `cfg.labeled` images of a seeded
    /// shuffle of `data` (all of it if smaller).
    pub fn train_readout(&mut self, data: &Dataset) -> Result<Vec<f64>> {
        let n = self.cfg.labeled.min(data.len());
        if n == 0 {
            return Err(Error::EmptyDataset("labeled subset"));
        }
        let subset = take_subset(data, n, RngStream::derive(self.cfg.seed, Purpose::Shuffle, 0).seed())?;
        self.train_readout_on(&subset)
    }

    /// Train the readout on `labeled` in dataset order.
    pub fn train_readout_on(&mut self, labeled: &Dataset) -> Result<Vec<f64>> {
        if labeled.is_empty() {
            return Err(Error::EmptyDataset("labeled subset"));
        }
        let rcfg = self.cfg.readout;
        let enc = self.cfg.encoding();
        let feat = self.topology.output_layer() - 1;
        let classes = self.topology.classes();
        let mut sim = Simulator::new(&self.topology, self.cfg.lif);
        let mut weights = self.topology.readout().clone();
        let mut losses = Vec::with_capacity(rcfg.epochs);
        for e in 0..rcfg.epochs {
            let mut total = 0.0;
            for (i, (image, &label)) in labeled.images().iter().zip(labeled.labels()).enumerate() {
                let idx = stream_index(0x40, e as u64, i as u64);
                let raster = enc.encode(image, &mut RngStream::derive(self.cfg.seed, Purpose::Encode, idx))?;
                let features = if feat == 0 {
                    raster
                } else {
                    let rec = sim.run_through(&self.topology, &raster, feat, &Record::spikes_of([feat]))?;
                    rec.rasters.into_iter().nth(feat).flatten().expect("recorded")
                };
                let target = make_target(
                    label as usize,
                    classes,
                    rcfg.target_rate,
                    self.cfg.t_ms,
                    &mut RngStream::derive(self.cfg.seed, Purpose::Target, idx),
                )?;
                match train_readout_window(&mut weights, self.cfg.lif, &features, &target, &rcfg) {
                    Ok(tr) => total += tr.loss,
                    Err(err) => {
                        *self.topology.readout_mut() = weights;
                        return Err(self.abort(err));
                    }
                }
            }
            losses.push(total);
            self.emit(MetricRow::Readout {
                pass: e + 1,
                images: labeled.len(),
                loss: total,
            });
        }
        *self.topology.readout_mut() = weights;
        self.progress.readout_trained = true;
        Ok(losses)
    }

    /// Classification accuracy on `test`, one metrics row per iteration.
    pub fn evaluate(&mut self, test: &Dataset, passes: usize, iterations: usize) -> Result<Evaluation> {
        let ev = evaluate(
            &self.topology,
            self.cfg.lif,
            self.cfg.encoding(),
            test,
            passes,
            iterations,
            self.cfg.seed,
        )?;
        for (k, &a) in ev.accuracies.iter().enumerate() {
            self.emit(MetricRow::Accuracy {
                iteration: k + 1,
                images: test.len(),
                accuracy: a,
            });
        }
        Ok(ev)
    }

    /// Spike-count reconstruction error of conv layer `ordinal` on `probe`,
    /// with the layer's current weights and learning off.
    pub fn measure_reconstruction_error(&self, ordinal: usize, probe: &Dataset) -> Result<ReconstructionReport> {
        Ok(self.reconstruct_probe(ordinal, probe)?.0)
    }

    /// Like [`Self::measure_reconstruction_error`], also returning each
    /// probe image's window trace.
    pub fn reconstruct_probe(
        &self,
        ordinal: usize,
        probe: &Dataset,
    ) -> Result<(ReconstructionReport, Vec<WindowTrace>)> {
        if probe.is_empty() {
            return Err(Error::EmptyDataset("probe set"));
        }
        let layer = *self
            .topology
            .conv_layers()
            .get(ordinal)
            .ok_or_else(|| Error::InvalidParam(format!("no conv layer {ordinal}")))?;
        let mut stack = self.topology.kernel(ordinal).clone();
        let mut regen = RegenLayer::new(self.topology.input_of(layer), &stack, self.cfg.lif)?;
        let mut sim = Simulator::new(&self.topology, self.cfg.lif);
        let enc = self.cfg.encoding();
        let mut traces = Vec::with_capacity(probe.len());
        let mut per_image = Vec::with_capacity(probe.len());
        let mut active = 0.0;
        for (i, image) in probe.images().iter().enumerate() {
            let raster = enc.encode(image, &mut probe_stream(self.cfg.seed, i))?;
            let input = self.layer_input(&mut sim, ordinal, raster)?;
            let tr = regen.reconstruct_window(&mut stack, &input)?;
            per_image.push(tr.count_error());
            active += tr.hidden_active_fraction();
            traces.push(tr);
        }
        let report = ReconstructionReport {
            aggregate: per_image.iter().sum(),
            active_fraction: active / probe.len() as f64,
            per_image,
        };
        Ok((report, traces))
    }

    /// Mean per-window sparsity of every conv layer on `probe`, one metrics
    /// row per layer.
    pub fn measure_sparsity(&mut self, probe: &Dataset) -> Result<Vec<Sparsity>> {
        let s = probe_sparsity(&self.topology, &self.cfg, probe)?;
        for (c, sp) in s.iter().enumerate() {
            self.emit(MetricRow::Sparsity {
                layer: c + 1,
                active_fraction: sp.active_fraction,
                mean_rate_hz: sp.mean_rate_hz,
            });
        }
        Ok(s)
    }
}

/// Encoding stream for probe image `i`.
pub fn probe_stream(seed: u64, i: usize) -> RngStream {
    RngStream::derive(seed, Purpose::Encode, stream_index(0x80, 0, i as u64))
}

/// Mean per-window sparsity of every conv layer of `topology` on `probe`.
pub fn probe_sparsity(topology: &NetworkTopology, cfg: &TrainConfig, probe: &Dataset) -> Result<Vec<Sparsity>> {
    if probe.is_empty() {
        return Err(Error::EmptyDataset("probe set"));
    }
    let convs = topology.conv_layers();
    let Some(&last) = convs.last() else {
        return Ok(Vec::new());
    };
    let mut sim = Simulator::new(topology, cfg.lif);
    let record = Record::spikes_of(convs.iter().copied());
    let enc = cfg.encoding();
    let mut sums = vec![(0.0, 0.0); convs.len()];
    for (i, image) in probe.images().iter().enumerate() {
        let raster = enc.encode(image, &mut probe_stream(cfg.seed, i))?;
        let rec = sim.run_through(topology, &raster, last, &record)?;
        for (s, &l) in sums.iter_mut().zip(&convs) {
            let sp = measure_sparsity(rec.raster(l).expect("recorded"));
            s.0 += sp.active_fraction;
            s.1 += sp.mean_rate_hz;
        }
    }
    let n = probe.len() as f64;
    Ok(sums
        .into_iter()
        .map(|(a, r)| Sparsity {
            active_fraction: a / n,
            mean_rate_hz: r / n,
        })
        .collect())
}

/// True if `topology` has a conv layer directly after the input, the layer
/// reconstruction dumps are taken from.
pub fn has_first_conv(topology: &NetworkTopology) -> bool {
    matches!(topology.layers().get(1).map(|d| d.kind), Some(LayerKind::Conv { .. }))
}
