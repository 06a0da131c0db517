//! Embedding predictor: forecasts the current epoch's out-of-partition
//! embeddings from a sliding window of past epochs.
//!
//! Each partition induces a temporal graph — its halo subgraph annotated
//! with the last tau epochs of per-layer embeddings. Per predicted layer the
//! model runs a GRU over every node's embedding sequence (weights shared
//! across nodes), aggregates the final hidden states once over the halo
//! subgraph's normalized adjacency (with a lazy self-mix), applies a square
//! output weight and tanh, and adds the result to the most recent window
//! slice: the network predicts the embedding drift, not the absolute value,
//! so a zero correction exactly reproduces the historical baseline and any
//! learned signal improves on it. Training regresses the predicted halo
//! rows onto the GCN's own committed outputs, so supervision is weak: the
//! targets were themselves computed from predicted inputs.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Csr, HaloSubgraph};
use crate::store::{EmbeddingStore, StoreError};
use crate::tensor::{Matrix, NodeId, Tape, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("no committed history before epoch {epoch}; caller should fall back to the raw pull")]
    EmptyWindow { epoch: usize },
    #[error("predictor config: {0}")]
    BadConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Halo subgraph annotated with a window of per-epoch, per-layer embedding
/// snapshots. `slices[w][l]` is the full-subgraph embedding matrix of
/// predicted layer `l` at window epoch `epochs[w]`.
#[derive(Debug, Clone)]
pub struct TemporalGraph {
    pub part: usize,
    pub epochs: Vec<usize>,
    pub slices: Vec<Vec<Matrix>>,
    pub prop: Arc<Csr>,
    pub n_in: usize,
    pub n_nodes: usize,
    /// Dims of the predicted layers (GCN layers 1..=L-1).
    pub layer_dims: Vec<usize>,
}

impl TemporalGraph {
    pub fn n_halo(&self) -> usize {
        self.n_nodes - self.n_in
    }

    pub fn window_len(&self) -> usize {
        self.epochs.len()
    }
}

/// Assembles the window [max(1, t-tau), t-1] from committed store epochs.
/// At t = 1 there is no history and the caller falls back to the raw pull.
pub fn build_temporal_graph(
    store: &EmbeddingStore,
    sub: &HaloSubgraph,
    t: usize,
    tau: usize,
) -> Result<TemporalGraph, PredictorError> {
    if t <= 1 {
        return Err(PredictorError::EmptyWindow { epoch: t });
    }
    let dims = store.dims();
    let layer_dims: Vec<usize> = dims[1..dims.len() - 1].to_vec();
    let first = t.saturating_sub(tau).max(1);
    let mut epochs = Vec::new();
    let mut slices = Vec::new();
    for s in first..t {
        let mut per_layer = Vec::with_capacity(layer_dims.len());
        for (idx, _) in layer_dims.iter().enumerate() {
            per_layer.push(store.pull_as_of(s, idx + 1, &sub.nodes)?);
        }
        epochs.push(s);
        slices.push(per_layer);
    }
    Ok(TemporalGraph {
        part: sub.part,
        epochs,
        slices,
        prop: Arc::clone(&sub.prop),
        n_in: sub.n_in,
        n_nodes: sub.n(),
        layer_dims,
    })
}

/// One GRU cell over d-dimensional inputs with d-dimensional hidden state.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_update: Matrix,
    pub u_update: Matrix,
    pub b_update: Matrix,
    pub w_reset: Matrix,
    pub u_reset: Matrix,
    pub b_reset: Matrix,
    pub w_cand: Matrix,
    pub u_cand: Matrix,
    pub b_cand: Matrix,
}

impl GruCell {
    fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let bound = (3.0 / dim as f64).sqrt();
        let mut weight =
            || Matrix::from_fn(dim, dim, |_, _| rng.gen_range(-bound..bound)).expect("finite init");
        let w_update = weight();
        let u_update = weight();
        let w_reset = weight();
        let u_reset = weight();
        let w_cand = weight();
        let u_cand = weight();
        Self {
            w_update,
            u_update,
            b_update: Matrix::zeros(1, dim),
            w_reset,
            u_reset,
            b_reset: Matrix::zeros(1, dim),
            w_cand,
            u_cand,
            b_cand: Matrix::zeros(1, dim),
        }
    }
}

/// Per predicted layer: the recurrent cell plus one square aggregation
/// weight applied after the adjacency smoothing.
#[derive(Debug, Clone)]
pub struct PredictorLayer {
    pub cell: GruCell,
    pub agg_weight: Matrix,
}

#[derive(Debug, Clone)]
pub struct PredictorParams {
    pub layer_dims: Vec<usize>,
    pub layers: Vec<PredictorLayer>,
    /// Mixing weight of the spatial step: the aggregation applied to the
    /// final hidden states is (1 - agg_mix) * I + agg_mix * P_bar, the
    /// normalized adjacency of the halo subgraph with a boosted self-loop.
    /// Plain aggregation (agg_mix = 1) destroys per-node information faster
    /// than one output weight can restore it, which caps prediction quality
    /// far above the one-epoch staleness it competes with.
    pub agg_mix: f64,
}

pub const DEFAULT_AGG_MIX: f64 = 0.1;

impl PredictorParams {
    /// One parameter set per GCN layer 1..=L-1; layer 0 is raw features and
    /// needs no prediction. The recurrent weights use the seeded uniform
    /// scheme; the output weight starts at zero so the initial forecast is
    /// exactly the historical baseline and training can only move away from
    /// it along the drift signal.
    pub fn init(gcn_dims: &[usize], seed: u64) -> Self {
        assert!(gcn_dims.len() >= 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer_dims: Vec<usize> = gcn_dims[1..gcn_dims.len() - 1].to_vec();
        let layers = layer_dims
            .iter()
            .map(|&d| {
                let cell = GruCell::init(d, &mut rng);
                PredictorLayer { cell, agg_weight: Matrix::zeros(d, d) }
            })
            .collect();
        Self { layer_dims, layers, agg_mix: DEFAULT_AGG_MIX }
    }

    /// All parameter matrices in a fixed traversal order.
    pub fn matrices(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    &l.cell.w_update,
                    &l.cell.u_update,
                    &l.cell.b_update,
                    &l.cell.w_reset,
                    &l.cell.u_reset,
                    &l.cell.b_reset,
                    &l.cell.w_cand,
                    &l.cell.u_cand,
                    &l.cell.b_cand,
                    &l.agg_weight,
                ]
            })
            .collect()
    }

    fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    &mut l.cell.w_update,
                    &mut l.cell.u_update,
                    &mut l.cell.b_update,
                    &mut l.cell.w_reset,
                    &mut l.cell.u_reset,
                    &mut l.cell.b_reset,
                    &mut l.cell.w_cand,
                    &mut l.cell.u_cand,
                    &mut l.cell.b_cand,
                    &mut l.agg_weight,
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum()
    }

    fn apply_step(&mut self, grads: &[Matrix], eta: f64) -> Result<(), PredictorError> {
        let mut mats = self.matrices_mut();
        if mats.len() != grads.len() {
            return Err(PredictorError::Shape(format!(
                "{} gradient matrices for {} parameters",
                grads.len(),
                mats.len()
            )));
        }
        for (m, g) in mats.iter_mut().zip(grads) {
            **m = m.add_scaled(g, -eta)?;
        }
        Ok(())
    }

    pub fn with_agg_mix(mut self, agg_mix: f64) -> Self {
        assert!(agg_mix > 0.0 && agg_mix <= 1.0, "agg_mix must be in (0, 1]");
        self.agg_mix = agg_mix;
        self
    }
}

struct LayerLeaves {
    w_update: NodeId,
    u_update: NodeId,
    b_update: NodeId,
    w_reset: NodeId,
    u_reset: NodeId,
    b_reset: NodeId,
    w_cand: NodeId,
    u_cand: NodeId,
    b_cand: NodeId,
    agg: NodeId,
}

fn bind_leaves(tape: &mut Tape, params: &PredictorParams) -> Vec<LayerLeaves> {
    params
        .layers
        .iter()
        .map(|l| LayerLeaves {
            w_update: tape.leaf(l.cell.w_update.clone()),
            u_update: tape.leaf(l.cell.u_update.clone()),
            b_update: tape.leaf(l.cell.b_update.clone()),
            w_reset: tape.leaf(l.cell.w_reset.clone()),
            u_reset: tape.leaf(l.cell.u_reset.clone()),
            b_reset: tape.leaf(l.cell.b_reset.clone()),
            w_cand: tape.leaf(l.cell.w_cand.clone()),
            u_cand: tape.leaf(l.cell.u_cand.clone()),
            b_cand: tape.leaf(l.cell.b_cand.clone()),
            agg: tape.leaf(l.agg_weight.clone()),
        })
        .collect()
}

fn leaf_ids(leaves: &[LayerLeaves]) -> Vec<NodeId> {
    leaves
        .iter()
        .flat_map(|l| {
            [
                l.w_update, l.u_update, l.b_update, l.w_reset, l.u_reset, l.b_reset, l.w_cand,
                l.u_cand, l.b_cand, l.agg,
            ]
        })
        .collect()
}

/// Runs the recurrence over the window and the spatial step, returning the
/// full-subgraph output node per predicted layer.
fn predict_full_nodes(
    tape: &mut Tape,
    leaves: &[LayerLeaves],
    tg: &TemporalGraph,
    agg_mix: f64,
) -> Result<Vec<NodeId>, PredictorError> {
    if tg.window_len() == 0 {
        return Err(PredictorError::EmptyWindow { epoch: 0 });
    }
    let mut outs = Vec::with_capacity(tg.layer_dims.len());
    for (li, _) in tg.layer_dims.iter().enumerate() {
        let l = &leaves[li];
        let mut hidden: Option<NodeId> = None;
        for slice in &tg.slices {
            let x = tape.constant(slice[li].clone());
            hidden = Some(match hidden {
                // First step from the zero hidden state: every h-term
                // vanishes and the reset gate is irrelevant, so the update
                // reduces to h = z(x) * cand(x).
                None => {
                    let zx = tape.matmul(x, l.w_update)?;
                    let z = tape.add_row_broadcast(zx, l.b_update)?;
                    let z = tape.sigmoid(z)?;
                    let cx = tape.matmul(x, l.w_cand)?;
                    let cand = tape.add_row_broadcast(cx, l.b_cand)?;
                    let cand = tape.tanh(cand)?;
                    tape.hadamard(z, cand)?
                }
                Some(hidden) => {
                    let zx = tape.matmul(x, l.w_update)?;
                    let zh = tape.matmul(hidden, l.u_update)?;
                    let zsum = tape.add(zx, zh)?;
                    let z = tape.add_row_broadcast(zsum, l.b_update)?;
                    let z = tape.sigmoid(z)?;

                    let rx = tape.matmul(x, l.w_reset)?;
                    let rh = tape.matmul(hidden, l.u_reset)?;
                    let rsum = tape.add(rx, rh)?;
                    let r = tape.add_row_broadcast(rsum, l.b_reset)?;
                    let r = tape.sigmoid(r)?;

                    let cx = tape.matmul(x, l.w_cand)?;
                    let gated = tape.hadamard(r, hidden)?;
                    let ch = tape.matmul(gated, l.u_cand)?;
                    let csum = tape.add(cx, ch)?;
                    let cand = tape.add_row_broadcast(csum, l.b_cand)?;
                    let cand = tape.tanh(cand)?;

                    let keep = tape.affine(z, -1.0, 1.0)?;
                    let kept = tape.hadamard(keep, hidden)?;
                    let taken = tape.hadamard(z, cand)?;
                    tape.add(kept, taken)?
                }
            });
        }
        let hidden = hidden.expect("window checked non-empty");
        let smoothed =
            tape.map_const(tg.prop.clone() as Arc<dyn crate::tensor::LinearMap>, hidden)?;
        let lazy = if agg_mix < 1.0 {
            let kept = tape.affine(hidden, 1.0 - agg_mix, 0.0)?;
            let mixed = tape.affine(smoothed, agg_mix, 0.0)?;
            tape.add(kept, mixed)?
        } else {
            smoothed
        };
        let projected = tape.matmul(lazy, l.agg)?;
        let correction = tape.tanh(projected)?;
        let last = tape.constant(tg.slices[tg.window_len() - 1][li].clone());
        outs.push(tape.add(last, correction)?);
    }
    Ok(outs)
}

/// Forecast of the halo rows, one matrix per predicted layer.
pub fn predict(params: &PredictorParams, tg: &TemporalGraph) -> Result<Vec<Matrix>, PredictorError> {
    if tg.layer_dims != params.layer_dims {
        return Err(PredictorError::Shape(format!(
            "temporal graph layers {:?} vs predictor layers {:?}",
            tg.layer_dims, params.layer_dims
        )));
    }
    let mut tape = Tape::new();
    let leaves = bind_leaves(&mut tape, params);
    let outs = predict_full_nodes(&mut tape, &leaves, tg, params.agg_mix)?;
    let halo: Vec<usize> = (tg.n_in..tg.n_nodes).collect();
    outs.into_iter().map(|o| Ok(tape.value(o).select_rows(&halo)?)).collect()
}

/// One partition's loss term (before the 1/M averaging) on its own tape:
/// sum over layers of the Frobenius gap on the selected halo rows, divided
/// by the element count. Returns None when there is nothing to regress.
fn partition_term(
    tape: &mut Tape,
    leaves: &[LayerLeaves],
    tg: &TemporalGraph,
    targets: &[Matrix],
    batch: Option<&[usize]>,
    agg_mix: f64,
) -> Result<Option<NodeId>, PredictorError> {
    if tg.n_halo() == 0 {
        return Ok(None);
    }
    let rows: Vec<usize> = match batch {
        Some(b) => b.iter().map(|&i| tg.n_in + i).collect(),
        None => (tg.n_in..tg.n_nodes).collect(),
    };
    if rows.is_empty() {
        return Ok(None);
    }
    let outs = predict_full_nodes(tape, leaves, tg, agg_mix)?;
    let mut count = 0usize;
    let mut sum: Option<NodeId> = None;
    for (li, out) in outs.into_iter().enumerate() {
        let target = &targets[li];
        if target.rows() != tg.n_halo() || target.cols() != tg.layer_dims[li] {
            return Err(PredictorError::Shape(format!(
                "target for partition {} layer {li} is {}x{}, expected {}x{}",
                tg.part,
                target.rows(),
                target.cols(),
                tg.n_halo(),
                tg.layer_dims[li]
            )));
        }
        let picked = tape.slice_rows(out, &rows)?;
        let local: Vec<usize> = rows.iter().map(|&r| r - tg.n_in).collect();
        let target_rows = tape.constant(target.select_rows(&local)?);
        let diff = tape.sub(picked, target_rows)?;
        let sq = tape.hadamard(diff, diff)?;
        let total = tape.reduce_sum(sq)?;
        let fro = tape.sqrt(total)?;
        count += rows.len() * tg.layer_dims[li];
        sum = Some(match sum {
            Some(acc) => tape.add(acc, fro)?,
            None => fro,
        });
    }
    let term = tape.affine(sum.expect("at least one layer"), 1.0 / count as f64, 0.0)?;
    Ok(Some(term))
}

struct PartitionEval {
    term: f64,
    grads: Option<Vec<Matrix>>,
}

/// Evaluates every partition's term on its own tape (optionally in
/// parallel), with gradients when requested. Reduction over partitions is
/// always in partition order, so results do not depend on scheduling.
fn eval_partitions(
    params: &PredictorParams,
    tgs: &[TemporalGraph],
    targets: &[Vec<Matrix>],
    batches: Option<&[Vec<usize>]>,
    want_grads: bool,
    parallel: bool,
) -> Result<Vec<PartitionEval>, PredictorError> {
    if tgs.len() != targets.len() {
        return Err(PredictorError::Shape(format!(
            "{} temporal graphs vs {} target sets",
            tgs.len(),
            targets.len()
        )));
    }
    let one = |(m, tg): (usize, &TemporalGraph)| -> Result<PartitionEval, PredictorError> {
        let mut tape = Tape::new();
        let leaves = bind_leaves(&mut tape, params);
        let batch = batches.map(|b| b[m].as_slice());
        match partition_term(&mut tape, &leaves, tg, &targets[m], batch, params.agg_mix)? {
            None => Ok(PartitionEval { term: 0.0, grads: None }),
            Some(root) => {
                let term = tape.value(root).get(0, 0);
                let grads = if want_grads {
                    tape.backward(root)?;
                    // Leaves the loss never touched (e.g. the reset gate on
                    // a one-slice window) have zero gradient.
                    Some(
                        leaf_ids(&leaves)
                            .into_iter()
                            .map(|id| {
                                tape.grad(id).cloned().unwrap_or_else(|| {
                                    let v = tape.value(id);
                                    Matrix::zeros(v.rows(), v.cols())
                                })
                            })
                            .collect(),
                    )
                } else {
                    None
                };
                Ok(PartitionEval { term, grads })
            }
        }
    };
    if parallel {
        use rayon::prelude::*;
        tgs.par_iter().enumerate().map(one).collect()
    } else {
        tgs.iter().enumerate().map(one).collect()
    }
}

/// Multi-task regression loss: per partition, the per-layer Frobenius gaps
/// between predicted and target halo rows, normalized per element, averaged
/// over partitions.
pub fn predictor_loss(
    params: &PredictorParams,
    tgs: &[TemporalGraph],
    targets: &[Vec<Matrix>],
) -> Result<f64, PredictorError> {
    let evals = eval_partitions(params, tgs, targets, None, false, false)?;
    Ok(evals.iter().map(|e| e.term).sum::<f64>() / tgs.len().max(1) as f64)
}

/// Full-batch loss and its gradient in `matrices()` order.
pub fn predictor_loss_with_grads(
    params: &PredictorParams,
    tgs: &[TemporalGraph],
    targets: &[Vec<Matrix>],
) -> Result<(f64, Vec<Matrix>), PredictorError> {
    let (loss, grads) = loss_with_grads_batched(params, tgs, targets, None, false)?;
    Ok((loss, grads))
}

fn loss_with_grads_batched(
    params: &PredictorParams,
    tgs: &[TemporalGraph],
    targets: &[Vec<Matrix>],
    batches: Option<&[Vec<usize>]>,
    parallel: bool,
) -> Result<(f64, Vec<Matrix>), PredictorError> {
    let evals = eval_partitions(params, tgs, targets, batches, true, parallel)?;
    let scale = 1.0 / tgs.len().max(1) as f64;
    let loss = evals.iter().map(|e| e.term).sum::<f64>() * scale;
    let mut grads: Vec<Matrix> =
        params.matrices().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
    for eval in &evals {
        if let Some(g) = &eval.grads {
            for (acc, part) in grads.iter_mut().zip(g) {
                *acc = acc.add_scaled(part, scale)?;
            }
        }
    }
    Ok((loss, grads))
}

/// SGD state for the predictor: learning rate, early-stop budget, and the
/// seeded sampling stream for mini-batches.
#[derive(Debug)]
pub struct PredictorOptState {
    pub eta2: f64,
    pub steps_budget: usize,
    pub batch_frac: f64,
    pub steps_taken: usize,
    /// Evaluate partition tapes on the worker pool; the reduction order is
    /// fixed, so results match the serial path bit for bit.
    pub parallel: bool,
    rng: ChaCha8Rng,
}

impl PredictorOptState {
    pub fn new(eta2: f64, steps_budget: usize, batch_frac: f64, seed: u64) -> Result<Self, PredictorError> {
        if steps_budget < 1 {
            return Err(PredictorError::BadConfig("early-stop budget must be >= 1".into()));
        }
        if !(batch_frac > 0.0 && batch_frac <= 1.0) {
            return Err(PredictorError::BadConfig(format!("batch_frac must be in (0, 1], got {batch_frac}")));
        }
        if !(eta2 >= 0.0 && eta2.is_finite()) {
            return Err(PredictorError::BadConfig(format!("eta2 must be finite and >= 0, got {eta2}")));
        }
        Ok(Self {
            eta2,
            steps_budget,
            batch_frac,
            steps_taken: 0,
            parallel: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub final_batch_loss: f64,
    pub eta_used: f64,
    pub reverts: usize,
}

/// K steps of mini-batch SGD on the predictor loss. Each step samples
/// ceil(batch_frac * |halo_m|) halo nodes per partition. If the loss turns
/// non-finite the last update is reverted and the learning rate is halved
/// for the remainder of this call.
pub fn train_predictor(
    params: &mut PredictorParams,
    opt: &mut PredictorOptState,
    tgs: &[TemporalGraph],
    targets: &[Vec<Matrix>],
) -> Result<TrainReport, PredictorError> {
    let mut eta = opt.eta2;
    let mut prev: Option<PredictorParams> = None;
    let mut reverts = 0usize;
    let mut last_loss = f64::NAN;
    let mut steps = 0usize;
    for _ in 0..opt.steps_budget {
        let batches: Vec<Vec<usize>> = tgs
            .iter()
            .map(|tg| {
                let halo = tg.n_halo();
                if halo == 0 {
                    return Vec::new();
                }
                let take = ((opt.batch_frac * halo as f64).ceil() as usize).clamp(1, halo);
                let mut picked = rand::seq::index::sample(&mut opt.rng, halo, take).into_vec();
                picked.sort_unstable();
                picked
            })
            .collect();

        let built = loss_with_grads_batched(params, tgs, targets, Some(&batches), opt.parallel);
        let diverged = match &built {
            Ok((loss, _)) => !loss.is_finite(),
            Err(PredictorError::Tensor(TensorError::NonFinite { .. })) => true,
            Err(_) => false,
        };
        if diverged {
            if let Some(p) = prev.take() {
                *params = p;
            }
            eta /= 2.0;
            reverts += 1;
            continue;
        }
        let (loss, grads) = built?;
        last_loss = loss;
        prev = Some(params.clone());
        params.apply_step(&grads, eta)?;
        steps += 1;
        opt.steps_taken += 1;
    }
    Ok(TrainReport { steps, final_batch_loss: last_loss, eta_used: eta, reverts })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingChoice {
    Predicted,
    Historical,
}

/// Per-partition gate: predicted embeddings are used only when their
/// staleness against the holdout targets is strictly below `margin` times
/// the raw historical staleness; ties and missing evidence fall back to
/// historical.
pub fn gated_predictions(
    params: &PredictorParams,
    tgs: &[TemporalGraph],
    raw_historical: &[Vec<Matrix>],
    holdout_targets: &[Vec<Matrix>],
    margin: f64,
) -> Result<Vec<EmbeddingChoice>, PredictorError> {
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(PredictorError::BadConfig(format!("gate margin must be in (0, 1], got {margin}")));
    }
    let mut choices = Vec::with_capacity(tgs.len());
    for (m, tg) in tgs.iter().enumerate() {
        if tg.n_halo() == 0 || tg.window_len() == 0 {
            choices.push(EmbeddingChoice::Historical);
            continue;
        }
        let predicted = predict(params, tg)?;
        let mut delta_pred = 0.0;
        let mut delta_raw = 0.0;
        for (li, pred) in predicted.iter().enumerate() {
            delta_pred += crate::store::staleness(pred, &holdout_targets[m][li])?;
            delta_raw += crate::store::staleness(&raw_historical[m][li], &holdout_targets[m][li])?;
        }
        choices.push(gate_choice(delta_pred, delta_raw, margin));
    }
    Ok(choices)
}

/// The gate rule itself, shared with the trainer's rolling evidence variant.
pub fn gate_choice(delta_pred: f64, delta_raw: f64, margin: f64) -> EmbeddingChoice {
    if delta_pred < margin * delta_raw {
        EmbeddingChoice::Predicted
    } else {
        EmbeddingChoice::Historical
    }
}
