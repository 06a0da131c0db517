//! The canonical desk-scale benchmark: one stochastic block model sized for
//! sub-minute CPU runs, with cross-block edges dense enough that partition
//! halos carry real signal.

use crate::gnn::Activation;
use crate::graph::SplitSpec;
use crate::sbm::SbmSpec;
use crate::trainer::{Mode, TrainConfig};

pub fn benchmark_sbm_spec(seed: u64) -> SbmSpec {
    SbmSpec {
        nodes: 2000,
        blocks: 8,
        p_in: 0.02,
        p_out: 0.002,
        feature_dim: 16,
        feature_noise: 1.0,
        seed,
    }
}

pub fn benchmark_split(seed: u64) -> SplitSpec {
    SplitSpec { train: 0.6, val: 0.2, test: 0.2, seed }
}

/// Training configuration for the benchmark. The predictor learning rate
/// compensates for the per-element normalization of its loss, whose
/// gradient norm scales like one over the halo element count.
pub fn benchmark_config(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        partitions: 4,
        layers: 2,
        hidden: 64,
        epochs: 200,
        eta1: 0.5,
        eta2: 2e4,
        delta_t: 10,
        tau: 2,
        pred_steps: 10,
        batch_frac: 1.0,
        activation: Activation::Relu,
        seed,
        gating: true,
        gate_margin: 0.9,
        pred_mix: 0.5,
        probe_every: 5,
        parallel: true,
        ..TrainConfig::default()
    }
}
