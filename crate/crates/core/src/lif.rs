//! Leaky integrate-and-fire dynamics.
//!
//! Each step integrates `tau_rc * dv/dt = -v + J` with forward Euler at a
//! fixed `dt = 1 ms`:
//!
//! ```text
//! v <- v + (dt / tau_rc) * (-v + J)
//! ```
//!
//! A neuron whose updated potential reaches `v_th` (`v >= v_th`) spikes, is
//! reset to `v_res` and held there for `ceil(tau_ref / dt)` steps. Input that
//! arrives during the refractory window is discarded. The potential never
//! falls below `v_min` (default `0`, the usual `v_res`); set it to `-inf` for
//! an unbounded membrane.
//!
//! Besides the post-reset state, the population keeps the *observed*
//! potential of the last step: the integrated value before the
//! threshold/reset (or `v_res` while refractory). Learning rules and
//! pooling read the observed potential.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Shape3;

/// The simulation step in milliseconds. Fixed.
pub const DT_MS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifParams {
    /// Membrane time constant in ms.
    pub tau_rc: f64,
    /// Refractory period in ms.
    pub tau_ref: f64,
    pub v_th: f64,
    pub v_res: f64,
    /// Lower bound of the membrane potential.
    #[serde(default = "default_v_min")]
    pub v_min: f64,
}

fn default_v_min() -> f64 {
    0.0
}

impl Default for LifParams {
    fn default() -> Self {
        LifParams {
            tau_rc: 20.0,
            tau_ref: 1.0,
            v_th: 1.2,
            v_res: 0.0,
            v_min: 0.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_rc > 0.0) || !self.tau_rc.is_finite() {
            return Err(Error::InvalidParam(format!("tau_rc must be > 0, got {}", self.tau_rc)));
        }
        if !(self.tau_ref >= 0.0) || !self.tau_ref.is_finite() {
            return Err(Error::InvalidParam(format!(
                "tau_ref must be >= 0, got {}",
                self.tau_ref
            )));
        }
        if !(self.v_th > self.v_res) || !self.v_th.is_finite() || !self.v_res.is_finite() {
            return Err(Error::InvalidParam(format!(
                "v_th ({}) must exceed v_res ({})",
                self.v_th, self.v_res
            )));
        }
        if !(self.v_min <= self.v_res) || self.v_min.is_nan() {
            return Err(Error::InvalidParam(format!(
                "v_min ({}) must not exceed v_res ({})",
                self.v_min, self.v_res
            )));
        }
        Ok(())
    }

    /// Refractory hold in whole steps.
    pub fn refractory_steps(&self) -> u32 {
        (self.tau_ref / DT_MS).ceil() as u32
    }

    /// Euler gain `dt / tau_rc`.
    pub fn gain(&self) -> f64 {
        DT_MS / self.tau_rc
    }
}

#[derive(Debug, Clone)]
pub struct LifPopulation {
    shape: Shape3,
    params: LifParams,
    v: Vec<f64>,
    observed: Vec<f64>,
    ref_count: Vec<u32>,
}

impl LifPopulation {
    pub fn new(shape: Shape3, params: LifParams) -> Self {
        let n = shape.len();
        LifPopulation {
            shape,
            params,
            v: vec![params.v_res; n],
            observed: vec![params.v_res; n],
            ref_count: vec![0; n],
        }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn params(&self) -> &LifParams {
        &self.params
    }

    /// Post-reset membrane state.
    pub fn potentials(&self) -> &[f64] {
        &self.v
    }

    /// Integrated potential of the last step, before threshold and reset.
    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn refractory(&self) -> &[u32] {
        &self.ref_count
    }

    pub fn set_potentials(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.v.len() {
            return Err(Error::shape(format!(
                "potential vector of {} for population of {}",
                v.len(),
                self.v.len()
            )));
        }
        self.v.copy_from_slice(v);
        self.observed.copy_from_slice(v);
        Ok(())
    }

    pub fn reset(&mut self) {
        self.v.fill(self.params.v_res);
        self.observed.fill(self.params.v_res);
        self.ref_count.fill(0);
    }

    /// True when every neuron sits at `v_res` with no refractory hold.
    pub fn is_reset(&self) -> bool {
        self.v.iter().all(|&v| v == self.params.v_res) && self.ref_count.iter().all(|&r| r == 0)
    }

    /// Advance one step with input `current`, writing the spike mask into
    /// `spikes`. Returns the number of spikes.
    pub fn step_into(&mut self, current: &[f64], spikes: &mut [bool]) -> Result<usize> {
        let n = self.v.len();
        if current.len() != n || spikes.len() != n {
            return Err(Error::shape(format!(
                "population of {n} stepped with {} currents / {} spike slots",
                current.len(),
                spikes.len()
            )));
        }
        let LifParams { v_th, v_res, v_min, .. } = self.params;
        let gain = self.params.gain();
        let hold = self.params.refractory_steps();
        let mut count = 0;
        for i in 0..n {
            if self.ref_count[i] > 0 {
                self.ref_count[i] -= 1;
                self.v[i] = v_res;
                self.observed[i] = v_res;
                spikes[i] = false;
                continue;
            }
            let v = (self.v[i] + gain * (current[i] - self.v[i])).max(v_min);
            self.observed[i] = v;
            if v >= v_th {
                spikes[i] = true;
                self.v[i] = v_res;
                self.ref_count[i] = hold;
                count += 1;
            } else {
                spikes[i] = false;
                self.v[i] = v;
            }
        }
        Ok(count)
    }
}

/// One Euler step of `pop`; returns the spike mask.
pub fn lif_step(pop: &mut LifPopulation, current: &[f64]) -> Result<Vec<bool>> {
    let mut spikes = vec![false; pop.len()];
    pop.step_into(current, &mut spikes)?;
    Ok(spikes)
}

/// Dense weighted spike sum: `J = Σ_i w_i · s_i`.
pub fn synaptic_current(weights: &[f64], spikes_in: &[bool]) -> Result<f64> {
    if weights.len() != spikes_in.len() {
        return Err(Error::shape(format!(
            "{} weights for {} inputs",
            weights.len(),
            spikes_in.len()
        )));
    }
    Ok(weights.iter().zip(spikes_in).filter(|(_, &s)| s).map(|(w, _)| w).sum())
}

pub fn reset_population(pop: &mut LifPopulation) {
    pop.reset();
}
