use std::time::Instant;
// pointer-chase latency at increasing working sets to find cache cliffs
fn main() {
    for kb in [16usize, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192] {
        let n = kb * 1024 / 8;
        let mut next: Vec<usize> = (0..n).collect();
        // simple LCG shuffle for a random cycle
        let mut j = 0usize;
        let mut order: Vec<usize> = (0..n).collect();
        let mut state = 12345usize;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let k = state % (i + 1);
            order.swap(i, k);
        }
        for w in order.windows(2) {
            next[w[0]] = w[1];
        }
        next[order[n - 1]] = order[0];
        let t = Instant::now();
        let iters = 2_000_000usize;
        for _ in 0..iters {
            j = next[j];
        }
        std::hint::black_box(j);
        let ns = t.elapsed().as_nanos() as f64 / iters as f64;
        println!("{kb:5} KB: {ns:.1} ns/load");
    }
}
