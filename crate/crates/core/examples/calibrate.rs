// Scratch calibration probe; not part of the deliverable.
use sat_core::bench;
use sat_core::trainer::{self, Mode};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let eta2: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2e4);
    let steps: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mix: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let only_sat = std::env::var_os("SAT_ONLY").is_some();

    let spec = bench::benchmark_sbm_spec(seed);
    let data = sat_core::sbm::generate(&spec).unwrap();
    let g = data.into_graph(&bench::benchmark_split(seed)).unwrap();

    let modes = if only_sat {
        vec![Mode::Sat]
    } else {
        vec![Mode::VanillaHistorical, Mode::Sat, Mode::FullGraphOracle]
    };
    for mode in modes {
        let mut cfg = bench::benchmark_config(mode, seed);
        cfg.eta2 = eta2;
        cfg.pred_steps = steps;
        cfg.pred_mix = mix;
        let t0 = std::time::Instant::now();
        let out = trainer::run(&cfg, &g).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let last = out.logs.last().unwrap();
        let late: Vec<_> = out.staleness.iter().filter(|r| r.epoch > 50).collect();
        let mean_raw: f64 = late.iter().map(|r| r.raw).sum::<f64>() / late.len().max(1) as f64;
        let mean_used: f64 = late.iter().map(|r| r.used).sum::<f64>() / late.len().max(1) as f64;
        let violations = out.staleness.iter().filter(|r| r.used > r.raw + 1e-9).count();
        let wins = out.staleness.iter().filter(|r| r.used < r.raw - 1e-12).count();
        let ms_fwd: f64 = out.logs.iter().map(|l| l.ms_forward).sum();
        let ms_bwd: f64 = out.logs.iter().map(|l| l.ms_backward).sum();
        let ms_pred: f64 = out.logs.iter().map(|l| l.ms_predictor).sum();
        println!(
            "{mode}: {dt:.1}s loss={:.4} test={:.3} pred_loss={:.2e} raw(t>50)={mean_raw:.3} used(t>50)={mean_used:.3} reduction={:.1}% viol={violations} probe_wins={wins}/{} fwd={:.1}s bwd={:.1}s pred={:.1}s",
            last.global_loss,
            last.test_acc,
            last.pred_loss,
            100.0 * (1.0 - mean_used / mean_raw.max(1e-12)),
            out.staleness.len(),
            ms_fwd / 1e3,
            ms_bwd / 1e3,
            ms_pred / 1e3,
        );
        if mode == Mode::Sat {
            // Per-probe-epoch staleness trajectory, partition 0.
            for r in out.staleness.iter().filter(|r| r.partition == 0 && r.epoch % 20 == 0) {
                println!("  t={:3} raw={:.4} used={:.4}", r.epoch, r.raw, r.used);
            }
        }
    }
}
