// Scratch diagnostic; not part of the deliverable.
//
// Measures, on the benchmark SBM, what the predictor architecture could at
// best achieve: per probe epoch, the raw 1-epoch staleness, the linear
// temporal extrapolation error, and the least-squares floor of the
// "aggregate then feature-mix" output stage given perfect per-node
// forecasts.
use sat_core::bench;
use sat_core::gnn::{self, GcnParams};
use sat_core::graph::{halo_subgraph, normalize, partition};
use sat_core::tensor::Matrix;
use sat_core::trainer::Mode;

fn lstsq(s: &Matrix, t: &Matrix) -> Matrix {
    // Solve (S^T S) A = S^T T by Gaussian elimination with partial pivots.
    let sts = s.transpose().matmul(s).unwrap();
    let stt = s.transpose().matmul(t).unwrap();
    let n = sts.rows();
    let k = stt.cols();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| sts.row(i).to_vec()).collect();
    let mut b: Vec<Vec<f64>> = (0..n).map(|i| stt.row(i).to_vec()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap()).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col] + 1e-12;
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / d;
            for c in 0..n {
                a[r][c] -= f * a[col][c];
            }
            for c in 0..k {
                b[r][c] = b[r][c] - f * b[col][c];
            }
        }
    }
    Matrix::from_fn(n, k, |i, j| b[i][j] / (a[i][i] + 1e-12)).unwrap()
}

fn main() {
    let seed = 1;
    let spec = bench::benchmark_sbm_spec(seed);
    let g = sat_core::sbm::generate(&spec).unwrap().into_graph(&bench::benchmark_split(seed)).unwrap();
    let cfg = bench::benchmark_config(Mode::VanillaHistorical, seed);
    let dims = cfg.dims_for(&g);
    let p = normalize(&g);
    let parts = partition(&g, &p, cfg.partitions, cfg.seed).unwrap();
    let subs: Vec<_> = (0..cfg.partitions).map(|m| halo_subgraph(&g, &parts, m)).collect();

    // Full-graph training (zero staleness) to get the exact embedding
    // trajectory H^(1) per epoch.
    let mut theta = GcnParams::init(&dims, cfg.activation, cfg.seed);
    let mut history: Vec<Matrix> = Vec::new();
    for _t in 1..=80 {
        let trace = gnn::forward_full(&p, &g.features, &theta).unwrap();
        history.push(trace.h[1].clone());
        let grads = gnn::backward_full(&trace, &g.labels, &g.train_mask, &p, &theta).unwrap();
        theta = theta.stepped(&grads.g_w, cfg.eta1).unwrap();
    }

    for &t in &[10usize, 20, 40, 60, 79] {
        let h_t = &history[t];
        let h_1 = &history[t - 1];
        let h_2 = &history[t - 2];
        let m = 0;
        let halo_global = &parts.halos[m];
        let t_rows = h_t.select_rows(halo_global).unwrap();
        let raw = h_1.select_rows(halo_global).unwrap();
        let lin = h_1.scale(2.0).unwrap().sub(h_2).unwrap().select_rows(halo_global).unwrap();

        let raw_stale = t_rows.sub(&raw).unwrap().frobenius_norm();
        let lin_stale = t_rows.sub(&lin).unwrap().frobenius_norm();

        // Architecture floor: smoothed exact-current hidden states, best A.
        let sub = &subs[m];
        let full_rows = h_t.select_rows(&sub.nodes).unwrap();
        let smoothed = sub.prop.matmul_dense(&full_rows).unwrap();
        let halo_local: Vec<usize> = (sub.n_in..sub.n()).collect();
        let s_halo = smoothed.select_rows(&halo_local).unwrap();
        let a_star = lstsq(&s_halo, &t_rows);
        let best = s_halo.matmul(&a_star).unwrap();
        let floor = t_rows.sub(&best).unwrap().frobenius_norm();

        // Same floor but with smoothed linear-extrapolated states.
        let lin_full = h_1.scale(2.0).unwrap().sub(h_2).unwrap().select_rows(&sub.nodes).unwrap();
        let smoothed_lin = sub.prop.matmul_dense(&lin_full).unwrap();
        let sl_halo = smoothed_lin.select_rows(&halo_local).unwrap();
        let a2 = lstsq(&sl_halo, &t_rows);
        let best2 = sl_halo.matmul(&a2).unwrap();
        let floor2 = t_rows.sub(&best2).unwrap().frobenius_norm();

        println!(
            "t={t:3}  ||H_t||={:8.3}  raw={raw_stale:8.4}  linear(extrap)={lin_stale:8.4}  arch_floor(exactH)={floor:8.4}  arch_floor(linH)={floor2:8.4}",
            t_rows.frobenius_norm()
        );
    }
}
