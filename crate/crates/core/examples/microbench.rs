// Scratch micro-benchmark; not part of the deliverable.
use sat_core::tensor::Matrix;
use std::time::Instant;

fn main() {
    let a = Matrix::from_fn(1600, 64, |i, j| ((i * 7 + j) % 13) as f64 * 0.01).unwrap();
    let b = Matrix::from_fn(64, 64, |i, j| ((i * 5 + j) % 11) as f64 * 0.01).unwrap();
    let reps = 200;
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..reps {
        let c = a.matmul(&b).unwrap();
        acc += c.get(0, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = 2.0 * 1600.0 * 64.0 * 64.0 * reps as f64;
    println!("matmul 1600x64x64: {:.3} GF/s (acc {acc})", flops / dt / 1e9);

    // Tape-based GRU-ish chain to see op overhead.
    use sat_core::tensor::Tape;
    let t0 = Instant::now();
    let mut acc2 = 0.0;
    for _ in 0..reps {
        let mut tape = Tape::new();
        let x = tape.constant(a.clone());
        let w = tape.leaf(b.clone());
        let xw = tape.matmul(x, w).unwrap();
        let s = tape.sigmoid(xw).unwrap();
        let h = tape.hadamard(s, s).unwrap();
        acc2 += tape.value(h).get(0, 0);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!("tape matmul+sigmoid+hadamard: {:.1} ms/iter (acc {acc2})", dt / reps as f64 * 1e3);
}
