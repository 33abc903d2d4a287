use vagnet_core::gradcheck::rand_tensor;
use vagnet_core::tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q_t = rand_tensor(&mut rng, &[32, 512]);
    let fv_t = rand_tensor(&mut rng, &[32, 64]);
    let reps = 200u32;

    // pre-grow a tape to mimic the in-situ heap state
    let mut tape = Tape::new();
    let q = tape.leaf(&q_t, false);
    let kv = tape.leaf(&fv_t, false);

    let t = Instant::now();
    let mut last = q;
    for _ in 0..reps {
        last = tape.matmul_at(q, kv).unwrap(); // 512x64 scores
    }
    println!("matmul_at 32x512 * 32x64   {:?}", t.elapsed() / reps);

    let t = Instant::now();
    let mut sm = last;
    for _ in 0..reps {
        sm = tape.softmax_scaled(last, 1, 0.17).unwrap();
    }
    println!("softmax 512x64             {:?}", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(tape.matmul_bt(kv, sm).unwrap()); // 32x512 out
    }
    println!("matmul_bt 32x64 * 512x64   {:?}", t.elapsed() / reps);

    // mcam pieces: unfold 32x8x8 -> 64x288, normalize, sim, recon, fold
    let fi_t = rand_tensor(&mut rng, &[32, 8, 8]);
    let fi = tape.leaf(&fi_t, false);
    let t = Instant::now();
    let mut rows = q;
    for _ in 0..reps {
        rows = tape.unfold(fi, 3, 1, 1).unwrap();
    }
    println!("unfold 32x8x8              {:?}", t.elapsed() / reps);

    let t = Instant::now();
    let mut sim = q;
    for _ in 0..reps {
        sim = tape.matmul_bt(rows, rows).unwrap(); // 64x288 x 64x288 -> 64x64
    }
    println!("matmul_bt 64x288^2         {:?}", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(tape.matmul(sim, rows).unwrap()); // 64x64 * 64x288
    }
    println!("matmul 64x64 * 64x288      {:?}", t.elapsed() / reps);

    let t = Instant::now();
    for _ in 0..reps {
        std::hint::black_box(tape.fold(rows, 8, 8, true).unwrap());
    }
    println!("fold 64x288                {:?}", t.elapsed() / reps);

    // l2 normalize composition on 64x288
    let t = Instant::now();
    for _ in 0..reps {
        let sq = tape.mul(rows, rows).unwrap();
        let sums = tape.sum_axis(sq, 1, true).unwrap();
        let sums = tape.add_scalar(sums, 1e-16);
        let norms = tape.sqrt(sums);
        let norms = tape.add_scalar(norms, 1e-8);
        std::hint::black_box(tape.div(rows, norms).unwrap());
    }
    println!("l2_normalize 64x288        {:?}", t.elapsed() / reps);
    println!("tape nodes at end: {}", tape.len());
}
