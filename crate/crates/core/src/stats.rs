//! Classification metrics and nonparametric significance tests.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::session::Label;

/// Largest number of non-zero pairs for which the Wilcoxon p-value is exact.
pub const EXACT_WILCOXON_MAX_N: usize = 25;

/// Precision, recall and F1 for one class or a support-weighted aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrfBreakdown {
    pub weighted: Prf,
    /// Indexed by label bit.
    pub per_class: [Prf; 2],
    pub support: [usize; 2],
}

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<[usize; 2]> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch { expected: labels.len(), got: scores.len() });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(invalid(alloc::format!("non-finite score {bad}")));
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let support = [labels.len() - pos, pos];
    if support[0] == 0 || support[1] == 0 {
        return Err(Error::SingleClass);
    }
    Ok(support)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class P/R/F1 with a strict `score > threshold` decision, averaged by class support.
pub fn weighted_prf_breakdown(scores: &[f64], labels: &[Label], threshold: f64) -> Result<PrfBreakdown> {
    let support = check_inputs(scores, labels)?;
    // confusion[truth][pred]
    let mut confusion = [[0usize; 2]; 2];
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = usize::from(s > threshold);
        confusion[l.bit() as usize][pred] += 1;
    }
    let mut per_class = [Prf { precision: 0.0, recall: 0.0, f1: 0.0 }; 2];
    for (c, out) in per_class.iter_mut().enumerate() {
        let tp = confusion[c][c];
        let fp = confusion[1 - c][c];
        let fn_ = confusion[c][1 - c];
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        *out = Prf { precision, recall, f1 };
    }
    let n = labels.len() as f64;
    let w = [support[0] as f64 / n, support[1] as f64 / n];
    let weighted = Prf {
        precision: w[0] * per_class[0].precision + w[1] * per_class[1].precision,
        recall: w[0] * per_class[0].recall + w[1] * per_class[1].recall,
        f1: w[0] * per_class[0].f1 + w[1] * per_class[1].f1,
    };
    Ok(PrfBreakdown { weighted, per_class, support })
}

pub fn weighted_prf(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Prf> {
    weighted_prf_breakdown(scores, labels, threshold).map(|b| b.weighted)
}

/// Mann-Whitney U / (n_pos * n_neg), ties credited one half.
pub fn roc_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let support = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice U, kept integral
    let mut u2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]].is_positive() {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        u2 += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(u2 as f64 / (2.0 * support[0] as f64 * support[1] as f64))
}

/// Average (mid) ranks starting at 1, plus the sizes of tie groups.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Wilcoxon,
    Friedman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub test: TestKind,
    pub statistic: f64,
    pub p_value: f64,
    pub effect_r: Option<f64>,
    pub corrected_p: Option<f64>,
    /// Contributing pairs (Wilcoxon) or blocks (Friedman).
    pub n: usize,
    /// Signed normal score; Wilcoxon only.
    pub z: Option<f64>,
}

/// Exact two-sided p: 2 * P(T+ <= w) under random signs of the given ranks.
fn exact_signed_rank_p(ranks: &[f64], w: f64) -> f64 {
    // ranks are multiples of 1/2, so doubled ranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| libm::round(2.0 * r) as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &d in &doubled {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + d] += c;
            }
        }
        reach += d;
    }
    let limit = libm::round(2.0 * w) as usize;
    let below: f64 = counts[..=limit.min(max)].iter().sum();
    let total = libm::pow(2.0, ranks.len() as f64);
    (2.0 * below / total).min(1.0)
}

pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
}

/// Paired signed-rank test on `a - b`; zero differences are dropped.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<ComparisonResult> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { expected: a.len(), got: b.len() });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if let Some(bad) = diffs.iter().find(|d| !d.is_finite()) {
        return Err(invalid(alloc::format!("non-finite difference {bad}")));
    }
    let nonzero: Vec<f64> = diffs.into_iter().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() && !a.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = nonzero.len();
    if n < 3 {
        return Err(Error::TooFewPairs(n));
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let t_plus: f64 = ranks.iter().zip(&nonzero).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let nf = n as f64;
    let total = nf * (nf + 1.0) / 2.0;
    let t_minus = total - t_plus;
    let w = t_plus.min(t_minus);
    let mean = total / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let sd = libm::sqrt(nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term);
    let dev = t_plus - mean;
    let z = if dev == 0.0 { 0.0 } else { libm::copysign((dev.abs() - 0.5).max(0.0), dev) / sd };
    let p_value =
        if n <= EXACT_WILCOXON_MAX_N { exact_signed_rank_p(&ranks, w) } else { (2.0 * normal_sf(z.abs())).min(1.0) };
    Ok(ComparisonResult {
        test: TestKind::Wilcoxon,
        statistic: w,
        p_value,
        effect_r: Some(z / libm::sqrt(nf)),
        corrected_p: None,
        n,
        z: Some(z),
    })
}

/// Regularized upper incomplete gamma Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * libm::log(x) - x - libm::lgamma(a);
    if x < a + 1.0 {
        // series for P
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * libm::exp(log_prefix)
    } else {
        // modified Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        libm::exp(log_prefix) * h
    }
}

/// Survival function of the chi-square distribution.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    gamma_q(df / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Omnibus rank test; `matrix[j][i]` is treatment `j` in block `i`.
pub fn friedman_test(matrix: &[Vec<f64>]) -> Result<ComparisonResult> {
    let k = matrix.len();
    if k < 3 {
        return Err(Error::TooFewTreatments(k));
    }
    let n = matrix[0].len();
    if let Some(row) = matrix.iter().find(|r| r.len() != n) {
        return Err(Error::ShapeMismatch { expected: n, got: row.len() });
    }
    if n < 2 {
        return Err(invalid(alloc::format!("friedman test needs at least 2 blocks, got {n}")));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite value in friedman matrix"));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_sum = 0.0;
    let mut block = vec![0.0; k];
    for i in 0..n {
        for (slot, row) in block.iter_mut().zip(matrix) {
            *slot = row[i];
        }
        let (ranks, ties) = average_ranks(&block);
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
        tie_sum += ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>();
    }
    let (nf, kf) = (n as f64, k as f64);
    let centre = (kf + 1.0) / 2.0;
    let spread: f64 = rank_sums.iter().map(|r| (r / nf - centre) * (r / nf - centre)).sum();
    let correction = 1.0 - tie_sum / (nf * kf * (kf * kf - 1.0));
    let (statistic, p_value) = if correction <= 0.0 {
        (0.0, 1.0)
    } else {
        let stat = 12.0 * nf / (kf * (kf + 1.0)) * spread / correction;
        (stat, chi2_sf(stat, kf - 1.0))
    };
    Ok(ComparisonResult { test: TestKind::Friedman, statistic, p_value, effect_r: None, corrected_p: None, n, z: None })
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_correction(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        let adj = ((m - rank) as f64 * p_values[idx]).min(1.0);
        running = running.max(adj);
        out[idx] = running;
    }
    out
}

/// Test-set predictions of one trained model with recomputable metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub representation: String,
    pub scores: Vec<f64>,
    /// Label bits, 0 or 1.
    pub labels: Vec<u8>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub auc: f64,
    pub seed: u64,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
    /// Identifiers of the scored samples, when known.
    #[serde(default)]
    pub sample_ids: Vec<String>,
}

impl EvalReport {
    pub fn new(
        model_id: impl Into<String>,
        representation: impl Into<String>,
        scores: Vec<f64>,
        labels: &[Label],
        seed: u64,
        config: BTreeMap<String, String>,
    ) -> Result<EvalReport> {
        if scores.is_empty() {
            return Err(Error::EmptySet("report scores"));
        }
        let prf = weighted_prf(&scores, labels, 0.5)?;
        let auc = roc_auc(&scores, labels)?;
        Ok(EvalReport {
            model_id: model_id.into(),
            representation: representation.into(),
            scores,
            labels: labels.iter().map(|l| l.bit()).collect(),
            weighted_precision: prf.precision,
            weighted_recall: prf.recall,
            weighted_f1: prf.f1,
            auc,
            seed,
            config,
            sample_ids: Vec::new(),
        })
    }

    pub fn label_values(&self) -> Result<Vec<Label>> {
        self.labels
            .iter()
            .map(|&b| Label::from_bit(b).ok_or_else(|| invalid(alloc::format!("label bit {b}"))))
            .collect()
    }

    /// Recompute metrics from the stored scores and labels and compare exactly.
    pub fn verify(&self) -> Result<()> {
        let labels = self.label_values()?;
        let mut again = EvalReport::new(
            self.model_id.clone(),
            self.representation.clone(),
            self.scores.clone(),
            &labels,
            self.seed,
            self.config.clone(),
        )?;
        again.sample_ids = self.sample_ids.clone();
        if again != *self {
            return Err(invalid(alloc::format!("report {} metrics do not match its scores", self.model_id)));
        }
        Ok(())
    }

    /// Per-sample absolute error |p - y|.
    pub fn abs_errors(&self) -> Vec<f64> {
        self.scores.iter().zip(&self.labels).map(|(p, &y)| (p - f64::from(y)).abs()).collect()
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "auc" => Some(self.auc),
            "precision" => Some(self.weighted_precision),
            "recall" => Some(self.weighted_recall),
            "f1" => Some(self.weighted_f1),
            _ => None,
        }
    }
}
