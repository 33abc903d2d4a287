//! Evaluation metrics (AUC, aIoU, SIM, MAE) and split-level aggregation.
//!
//! AUC uses the rank statistic with average ranks for ties; aIoU averages
//! IoU over the 0.01..0.99 threshold grid; SIM is the histogram
//! intersection of sum-normalized maps. Samples where a metric is
//! undefined are excluded from that metric's mean, with counts reported.

use crate::data::Sample;
use crate::error::{Result, VagError};

fn check_lengths(pred: &[f64], gt: &[f64], op: &'static str) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(VagError::DimMismatch {
            op,
            lhs: vec![pred.len()],
            rhs: vec![gt.len()],
        });
    }
    Ok(())
}

/// ROC area as a percentage, or None when the ground truth has a single
/// class. Ties receive average ranks.
pub fn auc(pred: &[f64], gt_binary: &[f64]) -> Result<Option<f64>> {
    check_lengths(pred, gt_binary, "auc")?;
    let n_pos = gt_binary.iter().filter(|&&g| g != 0.0).count();
    let n_neg = gt_binary.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[a].partial_cmp(&pred[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; pred.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pred[order[j + 1]] == pred[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1 + j + 1) as f64) / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg_rank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(gt_binary)
        .filter(|(_, &g)| g != 0.0)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(100.0 * u / (n_pos as f64 * n_neg as f64)))
}

/// IoU of the τ-binarized prediction against binary ground truth, averaged
/// over τ ∈ {0.01, …, 0.99}; empty-union IoU is 1. Percentage, or None for
/// single-class ground truth.
pub fn aiou(pred: &[f64], gt_binary: &[f64]) -> Result<Option<f64>> {
    check_lengths(pred, gt_binary, "aiou")?;
    let n_pos = gt_binary.iter().filter(|&&g| g != 0.0).count();
    if n_pos == 0 || n_pos == gt_binary.len() {
        return Ok(None);
    }
    let mut total = 0.0;
    for step in 1..=99 {
        let tau = step as f64 / 100.0;
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &g) in pred.iter().zip(gt_binary) {
            let pb = p >= tau;
            let gb = g != 0.0;
            if pb && gb {
                inter += 1;
            }
            if pb || gb {
                union += 1;
            }
        }
        total += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    Ok(Some(100.0 * total / 99.0))
}

/// Histogram intersection of the two sum-normalized maps, or None when a
/// map is all zero (or carries a negative value, which the contract
/// forbids).
pub fn sim(pred: &[f64], gt: &[f64]) -> Result<Option<f64>> {
    check_lengths(pred, gt, "sim")?;
    if pred.iter().chain(gt).any(|&v| v < 0.0) {
        return Err(VagError::contract("sim", "negative map value"));
    }
    let sp: f64 = pred.iter().sum();
    let sg: f64 = gt.iter().sum();
    if sp == 0.0 || sg == 0.0 {
        return Ok(None);
    }
    Ok(Some(
        pred.iter()
            .zip(gt)
            .map(|(&p, &g)| (p / sp).min(g / sg))
            .sum(),
    ))
}

/// Mean absolute error.
pub fn mae(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_lengths(pred, gt, "mae")?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Ground-truth binarization threshold for the ranking metrics.
pub const GT_BINARIZE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub auc: f64,
    pub aiou: f64,
    pub sim: f64,
    pub mae: f64,
    pub n_samples: usize,
    /// How many samples actually contributed to each metric.
    pub auc_count: usize,
    pub aiou_count: usize,
    pub sim_count: usize,
    pub mae_count: usize,
}

impl EvalResult {
    /// Flat key=value report, one line per field.
    pub fn to_kv_report(&self) -> String {
        format!(
            "auc={:.6}\naiou={:.6}\nsim={:.6}\nmae={:.6}\nn_samples={}\nauc_count={}\naiou_count={}\nsim_count={}\nmae_count={}\n",
            self.auc,
            self.aiou,
            self.sim,
            self.mae,
            self.n_samples,
            self.auc_count,
            self.aiou_count,
            self.sim_count,
            self.mae_count
        )
    }

    /// Machine-readable row: auc,aiou,sim,mae,n_samples.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{}",
            self.auc, self.aiou, self.sim, self.mae, self.n_samples
        )
    }
}

/// Per-sample metrics averaged over a split. The model is any closure
/// producing per-point scores for a sample; ground truth binarizes at
/// gt > 0.5 for the ranking metrics.
pub fn evaluate_split<F>(mut predict: F, samples: &[&Sample]) -> Result<EvalResult>
where
    F: FnMut(&Sample) -> Result<Vec<f64>>,
{
    if samples.is_empty() {
        return Err(VagError::unsupported("evaluate_split", "empty sample list"));
    }
    let mut sums = EvalResult {
        auc: 0.0,
        aiou: 0.0,
        sim: 0.0,
        mae: 0.0,
        n_samples: samples.len(),
        auc_count: 0,
        aiou_count: 0,
        sim_count: 0,
        mae_count: 0,
    };
    for s in samples {
        let pred = predict(s)?;
        let gt = s
            .points
            .heatmap
            .as_ref()
            .ok_or_else(|| VagError::contract("evaluate_split", "sample lacks heatmap"))?;
        let gt_bin: Vec<f64> = gt
            .iter()
            .map(|&g| if g > GT_BINARIZE { 1.0 } else { 0.0 })
            .collect();
        if let Some(v) = auc(&pred, &gt_bin)? {
            sums.auc += v;
            sums.auc_count += 1;
        }
        if let Some(v) = aiou(&pred, &gt_bin)? {
            sums.aiou += v;
            sums.aiou_count += 1;
        }
        if let Some(v) = sim(&pred, gt)? {
            sums.sim += v;
            sums.sim_count += 1;
        }
        sums.mae += mae(&pred, gt)?;
        sums.mae_count += 1;
    }
    let div = |total: f64, count: usize| if count > 0 { total / count as f64 } else { 0.0 };
    Ok(EvalResult {
        auc: div(sums.auc, sums.auc_count),
        aiou: div(sums.aiou, sums.aiou_count),
        sim: div(sums.sim, sums.sim_count),
        mae: div(sums.mae, sums.mae_count),
        ..sums
    })
}
