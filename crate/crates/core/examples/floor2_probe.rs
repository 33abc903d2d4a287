use vagnet_core::data::{build_object, valid_pairs};
use vagnet_core::decoder::LossConfig;

fn focal_pt(p: f64, g: f64, c: &LossConfig) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(c.alpha * g * (1.0 - p).powf(c.gamma) * p.ln()
        + (1.0 - c.alpha) * (1.0 - g) * p.powf(c.gamma) * (1.0 - p).ln())
}

fn dfocal_dp(p: f64, g: f64, c: &LossConfig) -> f64 {
    let h = 1e-7;
    (focal_pt(p + h, g, c) - focal_pt(p - h, g, c)) / (2.0 * h)
}

fn total(p: &[f64], g: &[f64], c: &LossConfig) -> (f64, f64) {
    let n = p.len() as f64;
    let focal: f64 = p.iter().zip(g).map(|(&pp, &gg)| focal_pt(pp, gg, c)).sum::<f64>() / n;
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let (sp, sg): (f64, f64) = (p.iter().sum(), g.iter().sum());
    let dice = 1.0 - (2.0 * inter + c.eps_dice) / (sp + sg + c.eps_dice);
    (focal, dice)
}

fn floor(g: &[f64], c: &LossConfig) -> f64 {
    let n = g.len();
    let mut p: Vec<f64> = g.iter().map(|&x| x.clamp(0.02, 0.98)).collect();
    for _ in 0..3000 {
        let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        let (sp, sg): (f64, f64) = (p.iter().sum(), g.iter().sum::<f64>());
        let denom = sp + sg + c.eps_dice;
        let num = 2.0 * inter + c.eps_dice;
        for i in 0..n {
            let dfoc = dfocal_dp(p[i], g[i], c) / n as f64;
            let ddice = -(2.0 * g[i] * denom - num) / (denom * denom);
            p[i] = (p[i] - 2.0 * (dfoc + ddice)).clamp(1e-6, 1.0 - 1e-6);
        }
    }
    let (f, d) = total(&p, g, c);
    f + d
}

fn main() {
    let c = LossConfig::default();
    let mut best = (f64::INFINITY, String::new());
    for &(cat, aff, _) in valid_pairs() {
        for seed in [0u64, 1] {
            let obj = build_object(cat, aff, seed).unwrap();
            let fl = floor(&obj.heatmap, &c);
            let name = format!("{}/{} seed{}", cat.as_str(), aff.as_str(), seed);
            println!("{name:28} floor {fl:.4}");
            if fl < best.0 {
                best = (fl, name);
            }
        }
    }
    println!("best: {} at {:.4}", best.1, best.0);
}
