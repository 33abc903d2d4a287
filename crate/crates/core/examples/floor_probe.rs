use vagnet_core::data::{generate_sample, Affordance, Category};
use vagnet_core::decoder::LossConfig;

// pointwise focal term
fn focal_pt(p: f64, g: f64, c: &LossConfig) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(c.alpha * g * (1.0 - p).powf(c.gamma) * p.ln()
        + (1.0 - c.alpha) * (1.0 - g) * p.powf(c.gamma) * (1.0 - p).ln())
}

fn total(p: &[f64], g: &[f64], c: &LossConfig) -> f64 {
    let n = p.len() as f64;
    let focal: f64 = p.iter().zip(g).map(|(&pp, &gg)| focal_pt(pp, gg, c)).sum::<f64>() / n;
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let (sp, sg): (f64, f64) = (p.iter().sum(), g.iter().sum());
    let dice = 1.0 - (2.0 * inter + c.eps_dice) / (sp + sg + c.eps_dice);
    focal + dice
}

fn main() {
    let s = generate_sample(Category::Mug, Affordance::Grasp, 0).unwrap();
    let g = s.points.heatmap.clone().unwrap();
    let c = LossConfig::default();
    let n = g.len();
    println!("loss at p=g: {:.4}", total(&g, &g, &c));
    println!("loss at p=binarized(g): {:.4}", total(&g.iter().map(|&x| if x > 0.5 {1.0} else {0.0}).collect::<Vec<_>>(), &g, &c));
    // numeric floor: gradient descent on p directly
    let mut p: Vec<f64> = g.iter().map(|&x| x.clamp(0.01, 0.99)).collect();
    let h = 1e-6;
    for it in 0..4000 {
        let lr = if it < 2000 { 0.05 } else { 0.01 };
        let base = total(&p, &g, &c);
        let mut gr = vec![0.0; n];
        // analytic-free: coordinate FD every 8th iteration chunk is too slow; use full FD sparingly
        for i in 0..n {
            let orig = p[i];
            p[i] = orig + h;
            gr[i] = (total(&p, &g, &c) - base) / h;
            p[i] = orig;
        }
        for i in 0..n {
            p[i] = (p[i] - lr * gr[i] * n as f64).clamp(1e-6, 1.0 - 1e-6);
        }
        if it % 1000 == 0 {
            println!("it {it}: loss {:.5}", total(&p, &g, &c));
        }
    }
    println!("numeric floor: {:.5}", total(&p, &g, &c));
    let frac_mid = g.iter().filter(|&&x| x > 0.05 && x < 0.95).count() as f64 / n as f64;
    println!("fraction of soft targets in (0.05, 0.95): {:.3}", frac_mid);
}
