//! Network description and spiking forward passes.

pub mod layers;
pub mod topology;

pub use layers::{conv_forward_step, fc_forward_step, pool_forward_step, run_window, Record, Simulator, WindowRecord};
pub use topology::{parse_topology, KernelStack, LayerDescriptor, LayerKind, NetworkTopology, ReadoutWeights};
