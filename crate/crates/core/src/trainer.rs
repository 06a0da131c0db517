//! The epoch loop: parallel per-partition pull/forward/push, local update,
//! commit barrier, parameter aggregation, periodic predictor refresh, and
//! metric plus communication accounting.
//!
//! Per epoch, each partition pulls its halo embeddings (historical,
//! predicted, or exact depending on mode), runs the partitioned forward,
//! pushes its freshly computed embeddings to the store, and takes one local
//! SGD step. The store commits at the barrier, parameters are averaged, and
//! every `delta_t` epochs the embedding predictor is fine-tuned against the
//! just-committed outputs and its served predictions refreshed.
//!
//! Communication is accounted by counting elements crossing the store
//! boundary: parameter traffic (both directions), halo pulls and embedding
//! pushes for layers 1..L-1 each epoch, and separately the predictor
//! fine-tuning traffic, which only occurs on refresh epochs.

use std::time::Instant;

use crate::gnn::{self, Activation, GcnParams, GnnError};
use crate::graph::{
    halo_subgraph, normalize, partition, Graph, GraphError, HaloSubgraph, Partitioning,
};
use crate::predictor::{
    self, build_temporal_graph, gate_choice, EmbeddingChoice, PredictorError, PredictorOptState,
    PredictorParams,
};
use crate::store::{staleness, EmbeddingStore, PolylineCodec, StoreError};
use crate::tensor::{Matrix, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    VanillaHistorical,
    Sat,
    FullGraphOracle,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla-historical" => Ok(Mode::VanillaHistorical),
            "sat" => Ok(Mode::Sat),
            "full-graph-oracle" => Ok(Mode::FullGraphOracle),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Mode::VanillaHistorical => "vanilla-historical",
            Mode::Sat => "sat",
            Mode::FullGraphOracle => "full-graph-oracle",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPolicy {
    /// w_m = |V_m| / n, the convention that makes the global loss a
    /// size-weighted mean of the local ones.
    PartSize,
    Uniform,
}

impl std::str::FromStr for WeightPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "part-size" => Ok(WeightPolicy::PartSize),
            "uniform" => Ok(WeightPolicy::Uniform),
            other => Err(format!("unknown weight policy `{other}`")),
        }
    }
}

impl std::fmt::Display for WeightPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightPolicy::PartSize => write!(f, "part-size"),
            WeightPolicy::Uniform => write!(f, "uniform"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub partitions: usize,
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub delta_t: usize,
    pub tau: usize,
    pub pred_steps: usize,
    pub batch_frac: f64,
    pub weight_policy: WeightPolicy,
    pub activation: Activation,
    pub seed: u64,
    /// Polyline precision when compression is on.
    pub compression: Option<u8>,
    pub gating: bool,
    pub gate_margin: f64,
    /// Mixing weight of the predictor's spatial aggregation step.
    pub pred_mix: f64,
    /// Probe period in epochs; 0 disables probes.
    pub probe_every: usize,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sat,
            partitions: 4,
            layers: 2,
            hidden: 64,
            epochs: 200,
            eta1: 0.5,
            eta2: 1e-3,
            delta_t: 10,
            tau: 2,
            pred_steps: 5,
            batch_frac: 0.5,
            weight_policy: WeightPolicy::PartSize,
            activation: Activation::Relu,
            seed: 1,
            compression: None,
            gating: true,
            gate_margin: 1.0,
            pred_mix: predictor::DEFAULT_AGG_MIX,
            probe_every: 0,
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |msg: String| Err(TrainerError::Config(msg));
        if self.partitions == 0 {
            return bad("partitions must be >= 1".into());
        }
        if self.layers == 0 {
            return bad("layers must be >= 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1".into());
        }
        if self.delta_t == 0 {
            return bad("delta_t must be >= 1".into());
        }
        if self.tau == 0 {
            return bad("tau must be >= 1".into());
        }
        if self.pred_steps == 0 {
            return bad("pred_steps must be >= 1".into());
        }
        if !(self.batch_frac > 0.0 && self.batch_frac <= 1.0) {
            return bad(format!("batch_frac must be in (0, 1], got {}", self.batch_frac));
        }
        if !(self.gate_margin > 0.0 && self.gate_margin <= 1.0) {
            return bad(format!("gate_margin must be in (0, 1], got {}", self.gate_margin));
        }
        if !(self.pred_mix > 0.0 && self.pred_mix <= 1.0) {
            return bad(format!("pred_mix must be in (0, 1], got {}", self.pred_mix));
        }
        if !(self.eta1.is_finite() && self.eta1 >= 0.0)
            || !(self.eta2.is_finite() && self.eta2 >= 0.0)
        {
            return bad("learning rates must be finite and >= 0".into());
        }
        if let Some(p) = self.compression {
            if !(1..=9).contains(&p) {
                return bad(format!("compression precision must be in 1..=9, got {p}"));
            }
        }
        Ok(())
    }

    /// GCN layer dims for a given graph: [d_in, hidden, ..., hidden, C].
    pub fn dims_for(&self, g: &Graph) -> Vec<usize> {
        let mut dims = vec![g.feature_dim()];
        dims.extend(std::iter::repeat(self.hidden).take(self.layers - 1));
        dims.push(g.num_classes.max(1));
        dims
    }
}

/// Element counts transferred in one epoch, plus the predictor fine-tune
/// traffic and payload bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommStats {
    pub param_elems: u64,
    pub pull_elems: u64,
    pub push_elems: u64,
    pub pred_elems: u64,
    pub bytes: u64,
}

/// Closed-form per-epoch element counts: parameters both directions for
/// every partition, halo pulls and partition pushes over layers 1..L-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommBreakdown {
    pub param_elems: u64,
    pub pull_elems: u64,
    pub push_elems: u64,
}

pub fn expected_comm_per_epoch(partitioning: &Partitioning, dims: &[usize]) -> CommBreakdown {
    let param_per_copy: u64 = dims.windows(2).map(|w| (w[0] * w[1]) as u64).sum();
    let embed_width: u64 = dims[1..dims.len() - 1].iter().map(|&d| d as u64).sum();
    let pulls: u64 = partitioning.halos.iter().map(|h| h.len() as u64 * embed_width).sum();
    let pushes: u64 = partitioning.parts.iter().map(|p| p.len() as u64 * embed_width).sum();
    CommBreakdown {
        param_elems: 2 * partitioning.m as u64 * param_per_copy,
        pull_elems: pulls,
        push_elems: pushes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub global_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub micro_f1: f64,
    /// Most recent full-batch predictor loss; NaN before the first refresh
    /// and in modes without a predictor.
    pub pred_loss: f64,
    /// Squared Frobenius norm of the aggregated global gradient.
    pub grad_norm_sq: f64,
    pub comm: CommStats,
    pub ms_forward: f64,
    pub ms_backward: f64,
    pub ms_predictor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalenessRecord {
    pub epoch: usize,
    pub partition: usize,
    pub layer: usize,
    pub raw: f64,
    pub used: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbortInfo {
    pub epoch: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct RunOutput {
    pub logs: Vec<EpochLog>,
    pub staleness: Vec<StalenessRecord>,
    pub comm_formula: CommBreakdown,
    pub final_params: GcnParams,
    pub partition_sizes: Vec<usize>,
    pub halo_sizes: Vec<usize>,
    pub abort: Option<AbortInfo>,
}

/// Weighted parameter average, broadcast back as the shared model.
pub fn aggregate(params: &[GcnParams], weights: &[f64]) -> Result<GcnParams, TrainerError> {
    if params.is_empty() || params.len() != weights.len() {
        return Err(TrainerError::Config(format!(
            "{} parameter sets vs {} weights",
            params.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(TrainerError::Gnn(GnnError::BadWeights { deviation: (sum - 1.0).abs() }));
    }
    let layers = params[0].layer_count();
    let mut weights_out = Vec::with_capacity(layers);
    for l in 0..layers {
        let (rows, cols) = params[0].weights[l].shape();
        let mut acc = Matrix::zeros(rows, cols);
        for (p, &w) in params.iter().zip(weights) {
            if p.weights[l].shape() != (rows, cols) {
                return Err(TrainerError::Config(
                    "parameter shapes differ across partitions".into(),
                ));
            }
            acc = acc.add_scaled(&p.weights[l], w)?;
        }
        weights_out.push(acc);
    }
    Ok(GcnParams {
        dims: params[0].dims.clone(),
        weights: weights_out,
        activation: params[0].activation,
    })
}

pub fn partition_weights(policy: WeightPolicy, partitioning: &Partitioning, n: usize) -> Vec<f64> {
    match policy {
        WeightPolicy::PartSize => {
            partitioning.parts.iter().map(|p| p.len() as f64 / n as f64).collect()
        }
        WeightPolicy::Uniform => vec![1.0 / partitioning.m as f64; partitioning.m],
    }
}

pub fn run(config: &TrainConfig, graph: &Graph) -> Result<RunOutput, TrainerError> {
    run_inner(config, graph, false)
}

/// Validation hook: runs the sat-mode pipeline but replaces every served
/// prediction with the exact current-epoch halo embeddings from a
/// full-graph forward, so a perfect predictor's trajectory can be compared
/// against zero-staleness training.
pub fn run_with_exact_prediction_injection(
    config: &TrainConfig,
    graph: &Graph,
) -> Result<RunOutput, TrainerError> {
    if config.mode != Mode::Sat {
        return Err(TrainerError::Config("exact-prediction injection requires mode=sat".into()));
    }
    run_inner(config, graph, true)
}

struct WorkerOut {
    part: usize,
    logits: Matrix,
    local_loss: f64,
    grads: Option<Vec<Matrix>>,
    theta_local: GcnParams,
    /// Raw historical halo values served for this epoch; once every
    /// partition pushes every epoch these are the exact epoch t-1 values.
    raw: Vec<Matrix>,
    /// This epoch's fresh prediction, kept as next epoch's gate evidence.
    fresh_pred: Option<Vec<Matrix>>,
    probe: Option<Vec<(f64, f64)>>,
    pull_bytes: u64,
    push_bytes: u64,
    ms_forward: f64,
    ms_backward: f64,
}

struct PartitionData {
    sub: HaloSubgraph,
    features: Matrix,
    halo_features: Matrix,
    labels: Vec<usize>,
    train_mask: Vec<bool>,
    has_train: bool,
}

struct EpochCtx<'a> {
    config: &'a TrainConfig,
    partitioning: &'a Partitioning,
    parts: &'a [PartitionData],
    store: &'a EmbeddingStore,
    theta: &'a GcnParams,
    omega: Option<&'a PredictorParams>,
    exact: Option<&'a gnn::ForwardTrace>,
    prev_raw: &'a [Option<Vec<Matrix>>],
    prev_pred: &'a [Option<Vec<Matrix>>],
    t: usize,
    probe_due: bool,
    inject_exact: bool,
}

fn non_finite_abort(err: &TrainerError) -> bool {
    matches!(
        err,
        TrainerError::Tensor(TensorError::NonFinite { .. })
            | TrainerError::Gnn(GnnError::Tensor(TensorError::NonFinite { .. }))
            | TrainerError::Predictor(PredictorError::Tensor(TensorError::NonFinite { .. }))
            | TrainerError::Store(StoreError::Tensor(TensorError::NonFinite { .. }))
    )
}

/// Codec round trip for simulated payloads that do not pass through the
/// store (predicted or exact pulls), so compression loss applies to every
/// transfer uniformly.
fn codec_round_trip(rows: &Matrix, codec: Option<PolylineCodec>) -> Result<Matrix, TrainerError> {
    match codec {
        None => Ok(rows.clone()),
        Some(c) => Ok(rows.map(|v| c.round(v))?),
    }
}

fn epoch_worker(ctx: &EpochCtx<'_>, m: usize) -> Result<WorkerOut, TrainerError> {
    let cfg = ctx.config;
    let data = &ctx.parts[m];
    let halo = &ctx.partitioning.halos[m];
    let layers = cfg.layers;
    let codec = ctx.store.codec();

    // Raw historical serving values for epoch t: most recent committed
    // epoch <= t-1 per node.
    let mut raw = Vec::with_capacity(layers.saturating_sub(1));
    for l in 1..layers {
        raw.push(ctx.store.pull_as_of(ctx.t - 1, l, halo)?);
    }

    // Fresh prediction for this epoch (sat mode, window permitting).
    let fresh_pred = if ctx.omega.is_some() && !ctx.inject_exact && ctx.t >= 2 && !halo.is_empty() {
        match build_temporal_graph(ctx.store, &data.sub, ctx.t, cfg.tau) {
            Ok(tg) => {
                let omega = ctx.omega.expect("sat mode has predictor params");
                Some(predictor::predict(omega, &tg)?)
            }
            Err(PredictorError::EmptyWindow { .. }) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };

    // Choose the served out-of-partition embeddings.
    let (used_predicted, mut used): (bool, Vec<Matrix>) = if ctx.inject_exact
        || cfg.mode == Mode::FullGraphOracle
    {
        let exact = ctx.exact.expect("exact trace required");
        let rows = (1..layers)
            .map(|l| codec_round_trip(&exact.h[l].select_rows(halo)?, codec))
            .collect::<Result<Vec<_>, TrainerError>>()?;
        (false, rows)
    } else if let Some(pred) = &fresh_pred {
        let choice = if !cfg.gating {
            EmbeddingChoice::Predicted
        } else if let (Some(prev_pred), Some(prev_raw)) = (&ctx.prev_pred[m], &ctx.prev_raw[m]) {
            // Rolling evidence: `raw` holds the exact epoch t-1 values, so
            // the previous epoch's prediction and its raw pull are scored
            // against the truth they were approximating.
            let mut delta_pred = 0.0;
            let mut delta_raw = 0.0;
            for l in 0..raw.len() {
                delta_pred += staleness(&prev_pred[l], &raw[l])?;
                delta_raw += staleness(&prev_raw[l], &raw[l])?;
            }
            if std::env::var_os("SAT_GATE_DEBUG").is_some() {
                eprintln!(
                    "gate t={} m={m} delta_pred={delta_pred:.5} delta_raw={delta_raw:.5}",
                    ctx.t
                );
            }
            gate_choice(delta_pred, delta_raw, cfg.gate_margin)
        } else {
            EmbeddingChoice::Historical
        };
        match choice {
            EmbeddingChoice::Predicted => {
                let rows = pred
                    .iter()
                    .map(|p| codec_round_trip(p, codec))
                    .collect::<Result<Vec<_>, _>>()?;
                (true, rows)
            }
            EmbeddingChoice::Historical => (false, raw.clone()),
        }
    } else {
        (false, raw.clone())
    };
    let _ = used_predicted;

    // Forward with the chosen inputs.
    let t_forward = Instant::now();
    let mut h_out_layers = Vec::with_capacity(layers);
    h_out_layers.push(data.halo_features.clone());
    h_out_layers.append(&mut used);
    let trace = gnn::forward_partition(
        &ctx.partitioning.p_in[m],
        &ctx.partitioning.p_out[m],
        &data.features,
        &h_out_layers,
        ctx.theta,
    )?;
    let ms_forward = t_forward.elapsed().as_secs_f64() * 1e3;

    let mut pull_bytes = 0u64;
    for l in 1..layers {
        pull_bytes += ctx.store.transfer_bytes(&h_out_layers[l])?;
    }

    // Push this epoch's computed embeddings (layers 1..L-1).
    let mut push_bytes = 0u64;
    for l in 1..layers {
        push_bytes += ctx.store.push(ctx.t, l, &ctx.partitioning.parts[m], &trace.h[l])?;
    }

    // Local loss, gradient, update.
    let t_backward = Instant::now();
    let (local_loss, grads, theta_local) = if data.has_train {
        let loss = gnn::local_loss(trace.logits(), &data.labels, &data.train_mask)?;
        let grads = gnn::backward_partition(
            &trace,
            &data.labels,
            &data.train_mask,
            &ctx.partitioning.p_in[m],
            &ctx.partitioning.p_out[m],
            ctx.theta,
        )?;
        let stepped = ctx.theta.stepped(&grads.g_w, cfg.eta1)?;
        (loss, Some(grads.g_w), stepped)
    } else {
        // No labeled nodes here: nothing to learn from locally.
        (0.0, None, ctx.theta.clone())
    };
    let ms_backward = t_backward.elapsed().as_secs_f64() * 1e3;

    // Probe: staleness against the exact full-graph embeddings of this
    // epoch, for the raw pull and for what the forward actually consumed.
    let probe = if ctx.probe_due {
        let exact = ctx.exact.expect("probe requires exact trace");
        let mut rows = Vec::with_capacity(layers.saturating_sub(1));
        for l in 1..layers {
            let exact_rows = exact.h[l].select_rows(halo)?;
            let raw_stale = staleness(&raw[l - 1], &exact_rows)?;
            let used_stale = staleness(&h_out_layers[l], &exact_rows)?;
            rows.push((raw_stale, used_stale));
        }
        Some(rows)
    } else {
        None
    };

    Ok(WorkerOut {
        part: m,
        logits: trace.logits().clone(),
        local_loss,
        grads,
        theta_local,
        raw,
        fresh_pred,
        probe,
        pull_bytes,
        push_bytes,
        ms_forward,
        ms_backward,
    })
}

fn run_inner(
    config: &TrainConfig,
    graph: &Graph,
    inject_exact: bool,
) -> Result<RunOutput, TrainerError> {
    config.validate()?;
    let n = graph.n();
    if config.partitions > n {
        return Err(TrainerError::Config(format!(
            "cannot cut {n} nodes into {} partitions",
            config.partitions
        )));
    }
    let dims = config.dims_for(graph);
    let layers = config.layers;

    let prop = normalize(graph);
    let partitioning = partition(graph, &prop, config.partitions, config.seed)?;
    let weights = partition_weights(config.weight_policy, &partitioning, n);

    let parts: Vec<PartitionData> = (0..config.partitions)
        .map(|m| -> Result<PartitionData, TrainerError> {
            let sub = halo_subgraph(graph, &partitioning, m);
            let nodes = &partitioning.parts[m];
            let features = graph.features.select_rows(nodes)?;
            let halo_features = graph.features.select_rows(&partitioning.halos[m])?;
            let labels: Vec<usize> = nodes.iter().map(|&v| graph.labels[v]).collect();
            let train_mask: Vec<bool> = nodes.iter().map(|&v| graph.train_mask[v]).collect();
            let has_train = train_mask.iter().any(|&b| b);
            Ok(PartitionData { sub, features, halo_features, labels, train_mask, has_train })
        })
        .collect::<Result<_, _>>()?;

    let codec = config.compression.map(PolylineCodec::new).transpose()?;
    let store = EmbeddingStore::new(graph.features.clone(), &dims, config.tau, codec);

    let mut theta = GcnParams::init(&dims, config.activation, config.seed);
    let sat = config.mode == Mode::Sat;
    let mut omega = sat.then(|| {
        PredictorParams::init(&dims, config.seed.wrapping_add(0x9e37))
            .with_agg_mix(config.pred_mix)
    });
    let mut opt = if sat {
        Some(
            PredictorOptState::new(
                config.eta2,
                config.pred_steps,
                config.batch_frac,
                config.seed.wrapping_add(0x7f4a),
            )?
            .with_parallel(config.parallel),
        )
    } else {
        None
    };

    let comm_formula = expected_comm_per_epoch(&partitioning, &dims);
    let embed_width: u64 = dims[1..layers].iter().map(|&d| d as u64).sum();

    let mut prev_raw: Vec<Option<Vec<Matrix>>> = vec![None; config.partitions];
    let mut prev_pred: Vec<Option<Vec<Matrix>>> = vec![None; config.partitions];
    let mut logs: Vec<EpochLog> = Vec::with_capacity(config.epochs);
    let mut staleness_records: Vec<StalenessRecord> = Vec::new();
    let mut abort: Option<AbortInfo> = None;
    let mut last_pred_loss = f64::NAN;

    'epochs: for t in 1..=config.epochs {
        let probe_due = config.probe_every > 0 && t % config.probe_every == 0;
        let need_exact = probe_due || config.mode == Mode::FullGraphOracle || inject_exact;
        let exact = if need_exact {
            match gnn::forward_full(&prop, &graph.features, &theta) {
                Ok(trace) => Some(trace),
                Err(e) => {
                    let err = TrainerError::from(e);
                    if non_finite_abort(&err) {
                        abort = Some(AbortInfo { epoch: t, reason: err.to_string() });
                        break 'epochs;
                    }
                    return Err(err);
                }
            }
        } else {
            None
        };

        let ctx = EpochCtx {
            config,
            partitioning: &partitioning,
            parts: &parts,
            store: &store,
            theta: &theta,
            omega: omega.as_ref(),
            exact: exact.as_ref(),
            prev_raw: &prev_raw,
            prev_pred: &prev_pred,
            t,
            probe_due,
            inject_exact,
        };

        let results: Vec<Result<WorkerOut, TrainerError>> = if config.parallel {
            use rayon::prelude::*;
            (0..config.partitions).into_par_iter().map(|m| epoch_worker(&ctx, m)).collect()
        } else {
            (0..config.partitions).map(|m| epoch_worker(&ctx, m)).collect()
        };
        let mut outs = Vec::with_capacity(config.partitions);
        let mut failed = None;
        for r in results {
            match r {
                Ok(out) => outs.push(out),
                Err(e) if non_finite_abort(&e) => failed = Some(e),
                Err(e) => return Err(e),
            }
        }
        if let Some(e) = failed {
            abort = Some(AbortInfo { epoch: t, reason: e.to_string() });
            break 'epochs;
        }

        // Barrier: this epoch's pushes become visible.
        store.commit(t);

        // Aggregate parameters and the global gradient.
        let locals: Vec<GcnParams> = outs.iter().map(|o| o.theta_local.clone()).collect();
        let theta_next = aggregate(&locals, &weights)?;
        let mut grad_norm_sq = 0.0;
        for l in 0..layers {
            let mut acc = Matrix::zeros(dims[l], dims[l + 1]);
            for (out, &w) in outs.iter().zip(&weights) {
                if let Some(g) = &out.grads {
                    acc = acc.add_scaled(&g[l], w)?;
                }
            }
            let norm = acc.frobenius_norm();
            grad_norm_sq += norm * norm;
        }

        let local_losses: Vec<f64> = outs.iter().map(|o| o.local_loss).collect();
        let global = gnn::global_loss(&local_losses, &weights)?;
        if !global.is_finite() {
            abort = Some(AbortInfo { epoch: t, reason: format!("non-finite global loss at epoch {t}") });
            break 'epochs;
        }
        theta = theta_next;

        // Predictor refresh every delta_t epochs, before eviction so the
        // full window [t - tau, t - 1] is still resident.
        let mut pred_elems = 0u64;
        let mut ms_predictor = 0.0;
        if sat && !inject_exact && t % config.delta_t == 0 && t >= 2 {
            let timer = Instant::now();
            let mut tgs = Vec::with_capacity(config.partitions);
            let mut targets = Vec::with_capacity(config.partitions);
            for data in &parts {
                let tg = build_temporal_graph(&store, &data.sub, t, config.tau)?;
                pred_elems += tg.window_len() as u64 * tg.n_nodes as u64 * embed_width;
                let halo = &partitioning.halos[data.sub.part];
                let mut per_layer = Vec::with_capacity(layers.saturating_sub(1));
                for l in 1..layers {
                    per_layer.push(store.pull_as_of(t, l, halo)?);
                }
                // Targets in, refreshed predictions back out.
                pred_elems += 2 * halo.len() as u64 * embed_width;
                tgs.push(tg);
                targets.push(per_layer);
            }
            let omega_ref = omega.as_mut().expect("sat mode");
            let opt_ref = opt.as_mut().expect("sat mode");
            match predictor::train_predictor(omega_ref, opt_ref, &tgs, &targets) {
                Ok(_) => match predictor::predictor_loss(omega_ref, &tgs, &targets) {
                    Ok(l) => last_pred_loss = l,
                    Err(e) => {
                        let err = TrainerError::from(e);
                        if non_finite_abort(&err) {
                            abort = Some(AbortInfo { epoch: t, reason: err.to_string() });
                            break 'epochs;
                        }
                        return Err(err);
                    }
                },
                Err(e) => {
                    let err = TrainerError::from(e);
                    if non_finite_abort(&err) {
                        abort = Some(AbortInfo { epoch: t, reason: err.to_string() });
                        break 'epochs;
                    }
                    return Err(err);
                }
            }
            ms_predictor = timer.elapsed().as_secs_f64() * 1e3;
        }

        // Window retention, after the predictor consumed its slices.
        store.evict(t);

        // Probe records.
        if probe_due {
            for out in &outs {
                if let Some(rows) = &out.probe {
                    for (l, &(raw, used)) in rows.iter().enumerate() {
                        staleness_records.push(StalenessRecord {
                            epoch: t,
                            partition: out.part,
                            layer: l + 1,
                            raw,
                            used,
                        });
                    }
                }
            }
        }

        // Metrics over the assembled global logits.
        let classes = dims[layers];
        let mut logits = Matrix::zeros(n, classes);
        for out in &outs {
            for (row, &v) in partitioning.parts[out.part].iter().enumerate() {
                let src = out.logits.row(row);
                logits.data_mut()[v * classes..(v + 1) * classes].copy_from_slice(src);
            }
        }
        let train_acc = gnn::accuracy(&logits, &graph.labels, &graph.train_mask);
        let val_acc = gnn::accuracy(&logits, &graph.labels, &graph.val_mask);
        let test_acc = gnn::accuracy(&logits, &graph.labels, &graph.test_mask);

        let param_elems: u64 = 2
            * (config.partitions as u64)
            * theta.weights.iter().map(|w| w.len() as u64).sum::<u64>();
        let bytes: u64 =
            outs.iter().map(|o| o.pull_bytes + o.push_bytes).sum::<u64>() + 8 * param_elems;

        logs.push(EpochLog {
            epoch: t,
            global_loss: global,
            train_acc,
            val_acc,
            test_acc,
            micro_f1: test_acc,
            pred_loss: last_pred_loss,
            grad_norm_sq,
            comm: CommStats {
                param_elems,
                pull_elems: comm_formula.pull_elems,
                push_elems: comm_formula.push_elems,
                pred_elems,
                bytes,
            },
            ms_forward: outs.iter().map(|o| o.ms_forward).sum(),
            ms_backward: outs.iter().map(|o| o.ms_backward).sum(),
            ms_predictor,
        });

        // Gate evidence for the next epoch.
        for out in outs {
            let m = out.part;
            prev_raw[m] = Some(out.raw);
            prev_pred[m] = out.fresh_pred;
        }
    }

    Ok(RunOutput {
        logs,
        staleness: staleness_records,
        comm_formula,
        final_params: theta,
        partition_sizes: partitioning.parts.iter().map(Vec::len).collect(),
        halo_sizes: partitioning.halos.iter().map(Vec::len).collect(),
        abort,
    })
}

pub fn metrics_csv_header() -> &'static str {
    "epoch,global_loss,train_acc,val_acc,test_acc,micro_f1,pred_loss,comm_param_elems,comm_pull_elems,comm_push_elems,comm_bytes,ms_forward,ms_backward,ms_predictor"
}

impl EpochLog {
    pub fn metrics_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.global_loss,
            self.train_acc,
            self.val_acc,
            self.test_acc,
            self.micro_f1,
            self.pred_loss,
            self.comm.param_elems,
            self.comm.pull_elems,
            self.comm.push_elems,
            self.comm.bytes,
            self.ms_forward,
            self.ms_backward,
            self.ms_predictor
        )
    }

    /// The row minus wall-clock columns, for reproducibility comparisons.
    pub fn metrics_csv_row_without_timings(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.global_loss,
            self.train_acc,
            self.val_acc,
            self.test_acc,
            self.micro_f1,
            self.pred_loss,
            self.comm.param_elems,
            self.comm.pull_elems,
            self.comm.push_elems,
            self.comm.bytes
        )
    }
}

pub fn staleness_csv_header() -> &'static str {
    "epoch,partition,layer,raw_staleness,used_staleness"
}

impl StalenessRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.partition, self.layer, self.raw, self.used)
    }
}

pub fn comm_csv_header() -> &'static str {
    "epoch,formula_param_elems,formula_pull_elems,formula_push_elems,param_elems,pull_elems,push_elems,pred_elems,bytes"
}

pub fn comm_csv_row(formula: &CommBreakdown, log: &EpochLog) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        log.epoch,
        formula.param_elems,
        formula.pull_elems,
        formula.push_elems,
        log.comm.param_elems,
        log.comm.pull_elems,
        log.comm.push_elems,
        log.comm.pred_elems,
        log.comm.bytes
    )
}
