use std::time::Instant;
fn main() {
    let n = 32 * 1024 * 1024; // 256 MB of f64
    let a = vec![1.0f64; n];
    let mut b = vec![0.0f64; n];
    let t = Instant::now();
    for _ in 0..4 {
        b.copy_from_slice(&a);
        std::hint::black_box(&b);
    }
    let dt = t.elapsed().as_secs_f64();
    println!("memcpy bandwidth: {:.2} GB/s", (4.0 * 2.0 * 256.0 / 1024.0) / dt);
    // matmul micro: 512x32 * 32x64 a thousand times
    let (m, k, nn) = (512, 32, 64);
    let x = vec![0.5f64; m * k];
    let y = vec![0.25f64; k * nn];
    let t = Instant::now();
    let reps = 2000;
    for _ in 0..reps {
        let mut c = vec![0.0; m * nn];
        for i in 0..m {
            let arow = &x[i * k..(i + 1) * k];
            let crow = &mut c[i * nn..(i + 1) * nn];
            for (p, &av) in arow.iter().enumerate() {
                let brow = &y[p * nn..(p + 1) * nn];
                for j in 0..nn {
                    crow[j] += av * brow[j];
                }
            }
        }
        std::hint::black_box(&c);
    }
    let dt = t.elapsed().as_secs_f64();
    println!("matmul 512x32x64: {:.2} GFLOP/s", (reps as f64 * 2.0 * (m * k * nn) as f64) / dt / 1e9);
}
