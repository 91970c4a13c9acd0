use std::time::Instant;

fn main() {
    let n = 10_000_000usize;
    let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.001) % 4.0 - 2.0).collect();

    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs {
        acc += libm::tanh(x);
    }
    println!("libm::tanh: {:.1} ns/call (acc {acc:.3})", t0.elapsed().as_nanos() as f64 / n as f64);

    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs {
        acc += x.tanh();
    }
    println!("std tanh:   {:.1} ns/call (acc {acc:.3})", t0.elapsed().as_nanos() as f64 / n as f64);

    let t0 = Instant::now();
    let mut acc = 0.0;
    for &x in &xs {
        acc += libm::exp(x);
    }
    println!("libm::exp:  {:.1} ns/call (acc {acc:.3})", t0.elapsed().as_nanos() as f64 / n as f64);
}
