use std::time::Instant;

fn tanh_expm1(x: f64) -> f64 {
    let t = libm::expm1(2.0 * x);
    if t.is_infinite() { 1.0 } else { t / (t + 2.0) }
}

fn main() {
    let n = 10_000_000usize;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.001) % 4.0 - 2.0).collect();

    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs { acc += tanh_expm1(x); }
    println!("tanh via expm1: {:.1} ns/call (acc {acc:.6})", t0.elapsed().as_nanos() as f64 / n as f64);

    let t0 = Instant::now();
    let mut acc2 = 0.0;
    for &x in &xs { acc2 += libm::tanh(x); }
    println!("libm::tanh:     {:.1} ns/call (acc {acc2:.6})", t0.elapsed().as_nanos() as f64 / n as f64);

    // worst relative error across range
    let mut worst: f64 = 0.0;
    for i in 0..200000 {
        let x = (i as f64 - 100000.0) * 1e-4; // [-10, 10]
        let a = tanh_expm1(x);
        let b = libm::tanh(x);
        let err = if b.abs() > 1e-300 { ((a - b) / b).abs() } else { (a - b).abs() };
        worst = worst.max(err);
    }
    println!("max rel deviation vs libm::tanh on [-10,10]: {worst:.3e}");
}
