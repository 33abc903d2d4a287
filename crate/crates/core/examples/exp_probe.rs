use std::time::Instant;
fn main() {
    let n = 1_000_000usize;
    let xs: Vec<f64> = (0..n).map(|i| -(i as f64 % 30.0) / 3.0).collect();
    let t = Instant::now();
    let mut s = 0.0;
    for &x in &xs { s += x.exp(); }
    std::hint::black_box(s);
    println!("exp: {:.1} ns/call", t.elapsed().as_nanos() as f64 / n as f64);
}
