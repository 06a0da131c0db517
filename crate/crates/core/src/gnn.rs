//! L-layer GCN with hand-written forward and backward passes, in full-graph
//! form and in partitioned form where out-of-partition embeddings enter as
//! constants.
//!
//! One layer computes Z = (P_in H_in + P_out H_out) W followed by the
//! activation; the final layer emits logits. The backward pass mirrors this
//! exactly: with A = P_in H_in + P_out H_out the weight gradient is A^T D,
//! the embedding gradient is P_in^T (D W^T), and D chains through the
//! activation derivative. No gradient flows into the supplied H_out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::Csr;
use crate::tensor::{Matrix, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum GnnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("empty mask: the local loss is a mean over masked nodes")]
    EmptyMask,
    #[error("expected {expected} out-of-partition layer inputs, got {got}")]
    MissingOutLayer { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("weights must be non-negative and sum to 1 (deviation {deviation})")]
    BadWeights { deviation: f64 },
    #[error("{0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

/// GCN parameters: layer dimensions [d_0, ..., d_L] and one weight matrix
/// per layer. The final layer has no activation.
#[derive(Debug, Clone)]
pub struct GcnParams {
    pub dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub activation: Activation,
}

impl GcnParams {
    /// Seeded uniform(-b, b) init with b = sqrt(6 / (d_in + d_out)).
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Matrix::from_fn(w[0], w[1], |_, _| rng.gen_range(-bound..bound))
                    .expect("finite init")
            })
            .collect();
        Self { dims: dims.to_vec(), weights, activation }
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    /// self - eta * grads, layer by layer.
    pub fn stepped(&self, grads: &[Matrix], eta: f64) -> Result<Self, GnnError> {
        let weights = self
            .weights
            .iter()
            .zip(grads)
            .map(|(w, g)| w.add_scaled(g, -eta))
            .collect::<Result<_, _>>()?;
        Ok(Self { dims: self.dims.clone(), weights, activation: self.activation })
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// h[0] is the input; h[l] for l in 1..=L are post-activation embeddings
    /// (h[L] are logits).
    pub h: Vec<Matrix>,
    /// z[l] is the pre-activation of layer l+1.
    pub z: Vec<Matrix>,
    /// agg[l] = P_in h[l] + P_out h_out[l], cached for the weight gradients.
    pub agg: Vec<Matrix>,
    /// The out-of-partition inputs actually used, one per layer (empty
    /// 0-row matrices for a full-graph pass).
    pub h_out_used: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        self.h.last().expect("at least one layer")
    }
}

/// Per-layer gradients mirroring the parameter shapes, plus the
/// intermediates of the chain: g_h[i] is the adjoint of the hidden
/// embedding h[i+1], d[l] the adjoint of the pre-activation z[l].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub g_w: Vec<Matrix>,
    pub g_h: Vec<Matrix>,
    pub d: Vec<Matrix>,
}

fn check_dims(params: &GcnParams, input_dim: usize) -> Result<(), GnnError> {
    if params.dims[0] != input_dim {
        return Err(GnnError::Contract(format!(
            "input feature dim {input_dim} does not match configured d_0 = {}",
            params.dims[0]
        )));
    }
    Ok(())
}

/// Full-graph forward: Z = P H W per layer, logits in the last layer.
pub fn forward_full(p: &Csr, x: &Matrix, params: &GcnParams) -> Result<ForwardTrace, GnnError> {
    check_dims(params, x.cols())?;
    let layers = params.layer_count();
    let mut h = Vec::with_capacity(layers + 1);
    let mut z = Vec::with_capacity(layers);
    let mut agg = Vec::with_capacity(layers);
    let mut h_out_used = Vec::with_capacity(layers);
    h.push(x.clone());
    for l in 0..layers {
        let a = p.matmul_dense(&h[l])?;
        let pre = a.matmul(&params.weights[l])?;
        let post = if l + 1 == layers { pre.clone() } else { pre.map(|v| params.activation.apply(v))? };
        agg.push(a);
        z.push(pre);
        h.push(post);
        h_out_used.push(Matrix::zeros(0, params.dims[l]));
    }
    Ok(ForwardTrace { h, z, agg, h_out_used })
}

/// Partitioned forward with supplied out-of-partition embeddings as
/// constants. `h_out_layers[l]` must be |halo| x d_l; layer 0 entries are
/// raw features of halo nodes and are never stale.
pub fn forward_partition(
    p_in: &Csr,
    p_out: &Csr,
    h_in0: &Matrix,
    h_out_layers: &[Matrix],
    params: &GcnParams,
) -> Result<ForwardTrace, GnnError> {
    check_dims(params, h_in0.cols())?;
    let layers = params.layer_count();
    if h_out_layers.len() != layers {
        return Err(GnnError::MissingOutLayer { expected: layers, got: h_out_layers.len() });
    }
    let mut h = Vec::with_capacity(layers + 1);
    let mut z = Vec::with_capacity(layers);
    let mut agg = Vec::with_capacity(layers);
    h.push(h_in0.clone());
    for l in 0..layers {
        let out = &h_out_layers[l];
        if out.rows() != p_out.cols() || out.cols() != params.dims[l] {
            return Err(GnnError::Contract(format!(
                "layer {l} out-of-partition input is {}x{}, expected {}x{}",
                out.rows(),
                out.cols(),
                p_out.cols(),
                params.dims[l]
            )));
        }
        let a = p_in.matmul_dense(&h[l])?.add(&p_out.matmul_dense(out)?)?;
        let pre = a.matmul(&params.weights[l])?;
        let post = if l + 1 == layers { pre.clone() } else { pre.map(|v| params.activation.apply(v))? };
        agg.push(a);
        z.push(pre);
        h.push(post);
    }
    Ok(ForwardTrace { h, z, agg, h_out_used: h_out_layers.to_vec() })
}

/// Mean softmax cross-entropy over masked rows together with its gradient
/// w.r.t. the logits (zero on unmasked rows).
pub fn local_loss_with_grad(
    logits: &Matrix,
    labels: &[usize],
    mask: &[bool],
) -> Result<(f64, Matrix), GnnError> {
    let classes = logits.cols();
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(GnnError::EmptyMask);
    }
    let inv = 1.0 / count as f64;
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut loss = 0.0;
    for i in 0..logits.rows() {
        if !mask[i] {
            continue;
        }
        let label = labels[i];
        if label >= classes {
            return Err(GnnError::LabelOutOfRange { label, classes });
        }
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += lse - row[label];
        for c in 0..classes {
            let softmax = (row[c] - max).exp() / sum_exp;
            grad.data_mut()[i * classes + c] =
                (softmax - if c == label { 1.0 } else { 0.0 }) * inv;
        }
    }
    Ok((loss * inv, grad))
}

/// Mean softmax cross-entropy over masked rows.
pub fn local_loss(logits: &Matrix, labels: &[usize], mask: &[bool]) -> Result<f64, GnnError> {
    local_loss_with_grad(logits, labels, mask).map(|(loss, _)| loss)
}

/// Weighted sum of per-partition losses; weights must be a convex
/// combination.
pub fn global_loss(local_losses: &[f64], weights: &[f64]) -> Result<f64, GnnError> {
    if local_losses.len() != weights.len() {
        return Err(GnnError::Contract(format!(
            "{} losses vs {} weights",
            local_losses.len(),
            weights.len()
        )));
    }
    let sum: f64 = weights.iter().sum();
    let deviation = (sum - 1.0).abs();
    if deviation > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(GnnError::BadWeights { deviation });
    }
    Ok(local_losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// Backward pass for a partitioned forward trace. Out-of-partition inputs
/// contribute only through the cached aggregates; no gradient leaves the
/// partition.
pub fn backward_partition(
    trace: &ForwardTrace,
    labels: &[usize],
    mask: &[bool],
    p_in: &Csr,
    p_out: &Csr,
    params: &GcnParams,
) -> Result<Gradients, GnnError> {
    let layers = params.layer_count();
    if trace.z.len() != layers {
        return Err(GnnError::Contract(format!(
            "trace has {} layers, params have {layers}",
            trace.z.len()
        )));
    }
    if trace.h_out_used.len() == layers {
        for (l, out) in trace.h_out_used.iter().enumerate() {
            if out.rows() != p_out.cols() {
                return Err(GnnError::Contract(format!(
                    "layer {l} halo width {} does not match P_out ({} columns)",
                    out.rows(),
                    p_out.cols()
                )));
            }
        }
    }
    let (_, dlogits) = local_loss_with_grad(trace.logits(), labels, mask)?;

    let mut g_w = vec![Matrix::zeros(0, 0); layers];
    let mut d = vec![Matrix::zeros(0, 0); layers];
    let mut g_h = Vec::new();
    let mut dz = dlogits;
    for l in (0..layers).rev() {
        g_w[l] = trace.agg[l].transpose().matmul(&dz)?;
        d[l] = dz.clone();
        if l > 0 {
            let dh = p_in.transpose_matmul_dense(&dz.matmul(&params.weights[l].transpose())?)?;
            let deriv = trace.z[l - 1].map(|v| params.activation.derivative(v))?;
            dz = dh.hadamard(&deriv)?;
            g_h.push(dh);
        }
    }
    g_h.reverse();
    Ok(Gradients { g_w, g_h, d })
}

/// Full-graph backward; equivalent to a partition covering every node.
pub fn backward_full(
    trace: &ForwardTrace,
    labels: &[usize],
    mask: &[bool],
    p: &Csr,
    params: &GcnParams,
) -> Result<Gradients, GnnError> {
    let empty = Csr::from_rows(0, &vec![Vec::new(); p.rows()]);
    backward_partition(trace, labels, mask, p, &empty, params)
}

/// Fraction of masked rows whose argmax matches the label. For single-label
/// multi-class prediction this is also the micro-averaged F1 score.
pub fn accuracy(logits: &Matrix, labels: &[usize], mask: &[bool]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..logits.rows() {
        if !mask[i] {
            continue;
        }
        total += 1;
        let row = logits.row(i);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, partition, Graph, SplitSpec};

    fn line_graph(n: usize, d: usize, classes: usize, seed: u64) -> Graph {
        random_graph(n, d, classes, 0.0, seed)
    }

    fn random_graph(n: usize, d: usize, classes: usize, extra_p: f64, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
        for u in 0..n {
            for v in (u + 2)..n {
                if rng.gen_range(0.0..1.0) < extra_p {
                    edges.push((u, v));
                }
            }
        }
        let features = Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let labels = (0..n).map(|v| v % classes).collect();
        let split = SplitSpec { train: 1.0, val: 0.0, test: 0.0, seed };
        Graph::from_parts(&edges, features, labels, &split).unwrap()
    }

    #[test]
    fn identity_propagation_returns_features() {
        let g = line_graph(3, 2, 2, 0);
        let rows: Vec<Vec<(usize, f64)>> = (0..3).map(|i| vec![(i, 1.0)]).collect();
        let p = Csr::from_rows(3, &rows);
        let params = GcnParams {
            dims: vec![2, 2],
            weights: vec![Matrix::identity(2)],
            activation: Activation::Relu,
        };
        let trace = forward_full(&p, &g.features, &params).unwrap();
        assert!(trace.logits().max_abs_diff(&g.features) < 1e-15);
    }

    #[test]
    fn zero_features_give_zero_logits() {
        let g = line_graph(4, 3, 2, 1);
        let p = normalize(&g);
        let params = GcnParams::init(&[3, 5, 2], Activation::Relu, 7);
        let x = Matrix::zeros(4, 3);
        let trace = forward_full(&p, &x, &params).unwrap();
        assert_eq!(trace.logits().max_abs(), 0.0);
    }

    /// Independent dense two-layer evaluation used as the forward oracle.
    fn dense_forward(p: &Matrix, x: &Matrix, params: &GcnParams) -> Matrix {
        let mut h = x.clone();
        for (l, w) in params.weights.iter().enumerate() {
            let mut pre = Matrix::zeros(p.rows(), w.cols());
            for i in 0..p.rows() {
                for j in 0..w.cols() {
                    let mut acc = 0.0;
                    for k in 0..p.cols() {
                        let mut hw = 0.0;
                        for q in 0..h.cols() {
                            hw += h.get(k, q) * w.get(q, j);
                        }
                        acc += p.get(i, k) * hw;
                    }
                    pre.data_mut()[i * w.cols() + j] = acc;
                }
            }
            h = if l + 1 == params.weights.len() {
                pre
            } else {
                pre.map(|v| params.activation.apply(v)).unwrap()
            };
        }
        h
    }

    #[test]
    fn forward_matches_dense_oracle() {
        let g = line_graph(3, 4, 2, 5);
        let p = normalize(&g);
        let params = GcnParams::init(&[4, 6, 2], Activation::Relu, 13);
        let trace = forward_full(&p, &g.features, &params).unwrap();
        let oracle = dense_forward(&p.to_dense(), &g.features, &params);
        assert!(trace.logits().max_abs_diff(&oracle) < 1e-10);
    }

    fn exact_out_layers(
        trace: &ForwardTrace,
        halo: &[usize],
        dims: &[usize],
    ) -> Vec<Matrix> {
        (0..dims.len() - 1)
            .map(|l| trace.h[l].select_rows(halo).unwrap())
            .collect()
    }

    #[test]
    fn partition_forward_with_exact_inputs_matches_full() {
        let g = random_graph(24, 3, 3, 0.15, 2);
        let p = normalize(&g);
        let params = GcnParams::init(&[3, 8, 3], Activation::Tanh, 3);
        let full = forward_full(&p, &g.features, &params).unwrap();
        for m in [1usize, 2, 4] {
            let parts = partition(&g, &p, m, 17).unwrap();
            for part in 0..m {
                let h0 = g.features.select_rows(&parts.parts[part]).unwrap();
                let outs = exact_out_layers(&full, &parts.halos[part], &params.dims);
                let trace = forward_partition(
                    &parts.p_in[part],
                    &parts.p_out[part],
                    &h0,
                    &outs,
                    &params,
                )
                .unwrap();
                let expected = full.logits().select_rows(&parts.parts[part]).unwrap();
                assert!(
                    trace.logits().max_abs_diff(&expected) < 1e-12,
                    "partition {part} of {m}"
                );
            }
        }
    }

    #[test]
    fn zero_out_inputs_match_halo_stripped_graph() {
        let g = random_graph(12, 3, 2, 0.2, 8);
        let p = normalize(&g);
        let params = GcnParams::init(&[3, 4, 2], Activation::Relu, 21);
        let parts = partition(&g, &p, 2, 5).unwrap();
        let part = 0;
        let h0 = g.features.select_rows(&parts.parts[part]).unwrap();
        let zeros: Vec<Matrix> = (0..2)
            .map(|l| Matrix::zeros(parts.halos[part].len(), params.dims[l]))
            .collect();
        let with_zeros =
            forward_partition(&parts.p_in[part], &parts.p_out[part], &h0, &zeros, &params)
                .unwrap();
        // Same rows through P_in alone.
        let empty_out = Csr::from_rows(0, &vec![Vec::new(); parts.parts[part].len()]);
        let no_halo: Vec<Matrix> = (0..2).map(|l| Matrix::zeros(0, params.dims[l])).collect();
        let stripped =
            forward_partition(&parts.p_in[part], &empty_out, &h0, &no_halo, &params).unwrap();
        assert!(with_zeros.logits().max_abs_diff(stripped.logits()) < 1e-15);
    }

    #[test]
    fn missing_out_layer_is_contract_error() {
        let g = line_graph(4, 2, 2, 4);
        let p = normalize(&g);
        let parts = partition(&g, &p, 2, 1).unwrap();
        let params = GcnParams::init(&[2, 3, 2], Activation::Relu, 2);
        let h0 = g.features.select_rows(&parts.parts[0]).unwrap();
        let err = forward_partition(&parts.p_in[0], &parts.p_out[0], &h0, &[], &params)
            .unwrap_err();
        assert!(matches!(err, GnnError::MissingOutLayer { expected: 2, got: 0 }));
    }

    #[test]
    fn loss_of_uniform_logits_is_ln_classes() {
        let logits = Matrix::zeros(1, 2);
        let loss = local_loss(&logits, &[0], &[true]).unwrap();
        assert!((loss - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_logits_give_tiny_loss() {
        let logits = Matrix::new(1, 2, vec![30.0, 0.0]).unwrap();
        let loss = local_loss(&logits, &[0], &[true]).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn loss_matches_log_sum_exp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits = Matrix::from_fn(5, 4, |_, _| rng.gen_range(-3.0..3.0)).unwrap();
        let labels = vec![1, 3, 0, 2, 2];
        let mask = vec![true, false, true, true, true];
        let loss = local_loss(&logits, &labels, &mask).unwrap();
        let mut expected = 0.0;
        let mut count = 0;
        for i in 0..5 {
            if !mask[i] {
                continue;
            }
            count += 1;
            let row = logits.row(i);
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            expected += lse - row[labels[i]];
        }
        expected /= count as f64;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_error() {
        let logits = Matrix::zeros(2, 2);
        assert!(matches!(
            local_loss(&logits, &[0, 0], &[false, false]),
            Err(GnnError::EmptyMask)
        ));
    }

    #[test]
    fn global_loss_cases() {
        assert_eq!(global_loss(&[0.7], &[1.0]).unwrap(), 0.7);
        let l = global_loss(&[0.3, 0.3, 0.3], &[0.2, 0.5, 0.3]).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
        let uneven = global_loss(&[1.0, 3.0], &[0.25, 0.75]).unwrap();
        assert!((uneven - 2.5).abs() < 1e-15);
        assert!(matches!(
            global_loss(&[1.0, 2.0], &[0.6, 0.5]),
            Err(GnnError::BadWeights { .. })
        ));
    }

    #[test]
    fn gradients_vanish_on_confident_correct_logits() {
        // Single-class problem with saturated correct logits.
        let g = line_graph(3, 2, 2, 9);
        let logits = Matrix::new(
            3,
            2,
            vec![40.0, -40.0, 40.0, -40.0, 40.0, -40.0],
        )
        .unwrap();
        let labels = vec![0, 0, 0];
        let (_, grad) = local_loss_with_grad(&logits, &labels, &g.train_mask).unwrap();
        assert!(grad.max_abs() < 1e-8);
    }

    #[test]
    fn single_node_mask_is_per_sample_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let logits = Matrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let labels = vec![0, 1, 0];
        let single = [false, true, false];
        let (_, grad) = local_loss_with_grad(&logits, &labels, &single).unwrap();
        // Row 1 equals softmax - onehot; other rows are zero.
        let row = logits.row(1);
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        assert!((grad.get(1, 0) - row[0].exp() / denom).abs() < 1e-12);
        assert!((grad.get(1, 1) - (row[1].exp() / denom - 1.0)).abs() < 1e-12);
        assert_eq!(grad.row(0), &[0.0, 0.0]);
        assert_eq!(grad.row(2), &[0.0, 0.0]);
    }

    fn finite_diff_gcn(
        params: &GcnParams,
        eval: impl Fn(&GcnParams) -> f64,
        h: f64,
    ) -> Vec<Matrix> {
        let mut grads = Vec::new();
        for l in 0..params.layer_count() {
            let mut g = Matrix::zeros(params.weights[l].rows(), params.weights[l].cols());
            for idx in 0..params.weights[l].len() {
                let mut up = params.clone();
                up.weights[l].data_mut()[idx] += h;
                let mut down = params.clone();
                down.weights[l].data_mut()[idx] -= h;
                g.data_mut()[idx] = (eval(&up) - eval(&down)) / (2.0 * h);
            }
            grads.push(g);
        }
        grads
    }

    #[test]
    fn partition_backward_matches_finite_differences() {
        for seed in 0..5u64 {
            let g = random_graph(6, 3, 2, 0.3, 100 + seed);
            let p = normalize(&g);
            let parts = partition(&g, &p, 2, seed).unwrap();
            let params = GcnParams::init(&[3, 4, 2], Activation::Tanh, 50 + seed);
            for part in 0..2 {
                let nodes = &parts.parts[part];
                let h0 = g.features.select_rows(nodes).unwrap();
                let labels: Vec<usize> = nodes.iter().map(|&v| g.labels[v]).collect();
                let mask: Vec<bool> = nodes.iter().map(|&v| g.train_mask[v]).collect();
                if !mask.iter().any(|&m| m) {
                    continue;
                }
                // Out-of-partition inputs held fixed while differentiating.
                let mut rng = ChaCha8Rng::seed_from_u64(999 + seed);
                let outs: Vec<Matrix> = (0..2)
                    .map(|l| {
                        Matrix::from_fn(parts.halos[part].len(), params.dims[l], |_, _| {
                            rng.gen_range(-0.5..0.5)
                        })
                        .unwrap()
                    })
                    .collect();
                let trace = forward_partition(
                    &parts.p_in[part],
                    &parts.p_out[part],
                    &h0,
                    &outs,
                    &params,
                )
                .unwrap();
                let grads =
                    backward_partition(&trace, &labels, &mask, &parts.p_in[part], &parts.p_out[part], &params)
                        .unwrap();
                let eval = |q: &GcnParams| {
                    let t = forward_partition(
                        &parts.p_in[part],
                        &parts.p_out[part],
                        &h0,
                        &outs,
                        q,
                    )
                    .unwrap();
                    local_loss(t.logits(), &labels, &mask).unwrap()
                };
                let numeric = finite_diff_gcn(&params, eval, 1e-6);
                for l in 0..2 {
                    for idx in 0..numeric[l].len() {
                        let a = grads.g_w[l].data()[idx];
                        let n = numeric[l].data()[idx];
                        let denom = a.abs().max(n.abs()).max(1e-6);
                        assert!(
                            (a - n).abs() / denom < 1e-4,
                            "seed {seed} part {part} layer {l} idx {idx}: {a} vs {n}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zero_out_inputs_increase_loss_after_warmup() {
        // Statistical check: with cross-partition edges, dropping halo
        // information should hurt the local loss on most instances.
        let mut hits = 0;
        let seeds = 10;
        for seed in 0..seeds {
            let g = crate::sbm::generate(&crate::sbm::SbmSpec {
                nodes: 60,
                blocks: 3,
                p_in: 0.25,
                p_out: 0.08,
                feature_dim: 4,
                feature_noise: 0.6,
                seed: 1000 + seed,
            })
            .unwrap()
            .into_graph(&SplitSpec { train: 1.0, val: 0.0, test: 0.0, seed })
            .unwrap();
            let p = normalize(&g);
            let mut params = GcnParams::init(&[4, 8, 3], Activation::Relu, seed);
            // A few full-graph steps so logits carry signal.
            for _ in 0..30 {
                let trace = forward_full(&p, &g.features, &params).unwrap();
                let grads =
                    backward_full(&trace, &g.labels, &g.train_mask, &p, &params).unwrap();
                params = params.stepped(&grads.g_w, 0.5).unwrap();
            }
            let full = forward_full(&p, &g.features, &params).unwrap();
            let parts = partition(&g, &p, 3, seed).unwrap();
            let mut exact_total = 0.0;
            let mut zero_total = 0.0;
            for part in 0..3 {
                let nodes = &parts.parts[part];
                let h0 = g.features.select_rows(nodes).unwrap();
                let labels: Vec<usize> = nodes.iter().map(|&v| g.labels[v]).collect();
                let mask: Vec<bool> = nodes.iter().map(|&v| g.train_mask[v]).collect();
                let exact = exact_out_layers(&full, &parts.halos[part], &params.dims);
                let zeros: Vec<Matrix> = (0..2)
                    .map(|l| Matrix::zeros(parts.halos[part].len(), params.dims[l]))
                    .collect();
                let te = forward_partition(&parts.p_in[part], &parts.p_out[part], &h0, &exact, &params).unwrap();
                let tz = forward_partition(&parts.p_in[part], &parts.p_out[part], &h0, &zeros, &params).unwrap();
                exact_total += local_loss(te.logits(), &labels, &mask).unwrap();
                zero_total += local_loss(tz.logits(), &labels, &mask).unwrap();
            }
            if zero_total > exact_total {
                hits += 1;
            }
        }
        assert!(hits >= 9, "zeroed halo inputs beat exact ones in {}/{} seeds", seeds - hits, seeds);
    }
}
