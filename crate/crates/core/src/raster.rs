//! Spike rasters and Poisson rate coding.

use crate::data::Image;
use crate::error::{Error, Result};
use crate::lif::DT_MS;
use crate::rng::RngStream;
use crate::tensor::Shape3;

/// Binary spike events of a population over one presentation window.
///
/// Stored sparsely: for each step, the ascending flat indices of the
/// neurons that fired.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeRaster {
    shape: Shape3,
    steps: Vec<Vec<u32>>,
}

impl SpikeRaster {
    pub fn empty(shape: Shape3, steps: usize) -> Self {
        SpikeRaster {
            shape,
            steps: vec![Vec::new(); steps],
        }
    }

    /// Start a raster that is filled one step at a time with [`Self::push_mask`].
    pub fn with_capacity(shape: Shape3, steps: usize) -> Self {
        SpikeRaster {
            shape,
            steps: Vec::with_capacity(steps),
        }
    }

    pub fn from_steps(shape: Shape3, steps: Vec<Vec<u32>>) -> Result<Self> {
        let n = shape.len() as u32;
        for (t, ev) in steps.iter().enumerate() {
            if ev.windows(2).any(|w| w[0] >= w[1]) || ev.last().is_some_and(|&i| i >= n) {
                return Err(Error::shape(format!(
                    "step {t}: events must be strictly increasing indices below {n}"
                )));
            }
        }
        Ok(SpikeRaster { shape, steps })
    }

    pub fn push_mask(&mut self, mask: &[bool]) {
        debug_assert_eq!(mask.len(), self.shape.len());
        self.steps.push(
            mask.iter()
                .enumerate()
                .filter(|(_, &s)| s)
                .map(|(i, _)| i as u32)
                .collect(),
        );
    }

    pub fn push_events(&mut self, events: Vec<u32>) {
        debug_assert!(events.windows(2).all(|w| w[0] < w[1]));
        self.steps.push(events);
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn neurons(&self) -> usize {
        self.shape.len()
    }

    pub fn len_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn events(&self, t: usize) -> &[u32] {
        &self.steps[t]
    }

    pub fn is_spike(&self, neuron: usize, t: usize) -> bool {
        self.steps[t].binary_search(&(neuron as u32)).is_ok()
    }

    /// Dense mask of step `t`.
    pub fn frame(&self, t: usize) -> Vec<bool> {
        let mut m = vec![false; self.neurons()];
        for &i in &self.steps[t] {
            m[i as usize] = true;
        }
        m
    }

    pub fn total_spikes(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    /// Per-neuron spike counts over the window.
    pub fn counts(&self) -> Vec<u32> {
        let mut c = vec![0u32; self.neurons()];
        for ev in &self.steps {
            for &i in ev {
                c[i as usize] += 1;
            }
        }
        c
    }
}

/// Per-step spike probability for a pixel of `intensity` (0..=255).
pub fn spike_probability(intensity: u8, i_rate: f64) -> f64 {
    (intensity as f64 / 255.0) * i_rate * DT_MS / 1000.0
}

/// Poisson (Bernoulli-per-step) rate coding of an image over `t_ms`.
///
/// Draw order: step-major, then channel, row, column. One uniform draw per
/// pixel per step, so the call sequence does not depend on the image.
pub fn poisson_encode(image: &Image, i_rate: f64, t_ms: f64, rng: &mut RngStream) -> Result<SpikeRaster> {
    let max_p = i_rate * DT_MS / 1000.0;
    if !(max_p.is_finite() && max_p >= 0.0) || max_p > 1.0 {
        return Err(Error::InvalidRate(max_p));
    }
    let steps = window_steps(t_ms)?;
    let probs: Vec<f64> = image.pixels().iter().map(|&p| spike_probability(p, i_rate)).collect();
    let mut raster = SpikeRaster::with_capacity(image.shape(), steps);
    for _ in 0..steps {
        let mut ev = Vec::new();
        for (i, &p) in probs.iter().enumerate() {
            if rng.uniform() < p {
                ev.push(i as u32);
            }
        }
        raster.push_events(ev);
    }
    Ok(raster)
}

/// Input rate and window length used to present an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Encoding {
    pub i_rate: f64,
    pub t_ms: f64,
}

impl Encoding {
    pub fn encode(&self, image: &Image, rng: &mut RngStream) -> Result<SpikeRaster> {
        poisson_encode(image, self.i_rate, self.t_ms, rng)
    }

    pub fn steps(&self) -> Result<usize> {
        window_steps(self.t_ms)
    }
}

/// Number of `dt` steps in a window of `t_ms`.
pub fn window_steps(t_ms: f64) -> Result<usize> {
    let steps = t_ms / DT_MS;
    if !(t_ms > 0.0) || steps.fract() != 0.0 {
        return Err(Error::InvalidParam(format!(
            "window {t_ms} ms is not a positive multiple of dt = {DT_MS} ms"
        )));
    }
    Ok(steps as usize)
}
