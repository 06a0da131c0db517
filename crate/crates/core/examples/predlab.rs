// Scratch predictor lab; not part of the deliverable.
//
// Reproduces the vanilla trajectory once, keeping the full per-epoch
// history of pushed layer-1 embeddings, then trains the predictor offline
// on refresh-epoch snapshots and scores its out-of-sample forecasts
// against the raw historical baseline, epoch by epoch.
use std::sync::Arc;

use sat_core::bench;
use sat_core::gnn::{self, GcnParams};
use sat_core::graph::{halo_subgraph, normalize, partition};
use sat_core::predictor::{
    predict, predictor_loss, train_predictor, PredictorOptState, PredictorParams, TemporalGraph,
};
use sat_core::tensor::Matrix;
use sat_core::trainer::{partition_weights, Mode};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let eta2: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50.0);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mix: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let delta_t: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10);
    let batch_frac: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let epochs: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(120);

    let seed = 1;
    let spec = bench::benchmark_sbm_spec(seed);
    let g = sat_core::sbm::generate(&spec)
        .unwrap()
        .into_graph(&bench::benchmark_split(seed))
        .unwrap();
    let cfg = bench::benchmark_config(Mode::VanillaHistorical, seed);
    let dims = cfg.dims_for(&g);
    let p = normalize(&g);
    let parts = partition(&g, &p, cfg.partitions, cfg.seed).unwrap();
    let weights = partition_weights(cfg.weight_policy, &parts, g.n());
    let subs: Vec<_> = (0..cfg.partitions).map(|m| halo_subgraph(&g, &parts, m)).collect();

    // Vanilla loop, keeping pushed H^(1) per epoch (global matrix).
    let mut theta = GcnParams::init(&dims, cfg.activation, cfg.seed);
    let mut pushed: Vec<Matrix> = Vec::new(); // pushed[t-1] = H^(1) at epoch t
    let t0 = std::time::Instant::now();
    for t in 1..=epochs {
        let mut h1_rows: Vec<Vec<f64>> = vec![Vec::new(); g.n()];
        let mut locals = Vec::new();
        for m in 0..cfg.partitions {
            let nodes = &parts.parts[m];
            let halo = &parts.halos[m];
            let h0 = g.features.select_rows(nodes).unwrap();
            let mut h_out = vec![g.features.select_rows(halo).unwrap()];
            // raw pull = previous epoch's pushed values (zeros at t=1)
            let raw1 = if t >= 2 {
                pushed[t - 2].select_rows(halo).unwrap()
            } else {
                Matrix::zeros(halo.len(), dims[1])
            };
            h_out.push(raw1);
            let trace =
                gnn::forward_partition(&parts.p_in[m], &parts.p_out[m], &h0, &h_out, &theta)
                    .unwrap();
            for (row, &v) in nodes.iter().enumerate() {
                h1_rows[v] = trace.h[1].row(row).to_vec();
            }
            let labels: Vec<usize> = nodes.iter().map(|&v| g.labels[v]).collect();
            let mask: Vec<bool> = nodes.iter().map(|&v| g.train_mask[v]).collect();
            let grads =
                gnn::backward_partition(&trace, &labels, &mask, &parts.p_in[m], &parts.p_out[m], &theta)
                    .unwrap();
            locals.push(theta.stepped(&grads.g_w, cfg.eta1).unwrap());
        }
        theta = sat_core::trainer::aggregate(&locals, &weights).unwrap();
        let flat: Vec<f64> = h1_rows.into_iter().flatten().collect();
        pushed.push(Matrix::new(g.n(), dims[1], flat).unwrap());
    }
    println!("trajectory: {:.1}s for {epochs} epochs", t0.elapsed().as_secs_f64());

    let build_tg = |m: usize, t: usize| -> TemporalGraph {
        // window [t-2, t-1] (tau = 2), slices over all subgraph nodes
        let sub = &subs[m];
        let mut slices = Vec::new();
        let mut epochs_v = Vec::new();
        for s in [t - 2, t - 1] {
            if s >= 1 {
                slices.push(vec![pushed[s - 1].select_rows(&sub.nodes).unwrap()]);
                epochs_v.push(s);
            }
        }
        TemporalGraph {
            part: m,
            epochs: epochs_v,
            slices,
            prop: Arc::clone(&sub.prop),
            n_in: sub.n_in,
            n_nodes: sub.n(),
            layer_dims: vec![dims[1]],
        }
    };
    let target_of = |m: usize, t: usize| -> Vec<Matrix> {
        vec![pushed[t - 1].select_rows(&parts.halos[m]).unwrap()]
    };

    // Online schedule: refresh every delta_t, evaluate every epoch.
    let mut omega = PredictorParams::init(&dims, seed.wrapping_add(0x9e37)).with_agg_mix(mix);
    let mut opt = PredictorOptState::new(eta2, steps, batch_frac, 7).unwrap().with_parallel(true);
    let t1 = std::time::Instant::now();
    let mut wins = 0usize;
    let mut evals = 0usize;
    let mut sum_ratio = 0.0;
    for t in 3..=epochs {
        if t % delta_t == 0 {
            let tgs: Vec<TemporalGraph> = (0..4).map(|m| build_tg(m, t)).collect();
            let targets: Vec<Vec<Matrix>> = (0..4).map(|m| target_of(m, t)).collect();
            train_predictor(&mut omega, &mut opt, &tgs, &targets).unwrap();
            let l = predictor_loss(&omega, &tgs, &targets).unwrap();
            if t % 20 == 0 {
                println!("  refresh t={t}: in-sample loss {l:.3e}");
            }
        }
        // Out-of-sample: predict epoch t from window [t-2, t-1].
        if t % 5 == 0 && t > delta_t {
            let mut dp = 0.0;
            let mut dr = 0.0;
            for m in 0..4 {
                let tg = build_tg(m, t);
                let pred = predict(&omega, &tg).unwrap()[0].clone();
                let target = target_of(m, t)[0].clone();
                let raw = pushed[t - 2].select_rows(&parts.halos[m]).unwrap();
                dp += target.sub(&pred).unwrap().frobenius_norm();
                dr += target.sub(&raw).unwrap().frobenius_norm();
            }
            evals += 1;
            sum_ratio += dp / dr;
            if dp < dr {
                wins += 1;
            }
            if t % 20 == 0 {
                println!("t={t:3} pred_err={dp:8.4} raw_err={dr:8.4} ratio={:.3}", dp / dr);
            }
        }
    }
    println!(
        "offline: {:.1}s; wins {wins}/{evals}; mean pred/raw ratio {:.3}",
        t1.elapsed().as_secs_f64(),
        sum_ratio / evals.max(1) as f64
    );
}
