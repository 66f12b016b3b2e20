use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_FPR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    #[serde(rename = "macF1")]
    pub mac_f1: f64,
    /// Absent when only one class is present.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spauc: Option<f64>,
    pub f1_real: f64,
    pub f1_fake: f64,
    pub confusion: Confusion,
    pub n: usize,
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Accuracy and F1 at threshold 0.5 (fake iff score > 0.5), rank AUC and
/// McClish-standardized partial AUC over `FPR ∈ [0, 0.1]`.
pub fn compute_metrics(scores: &[f64], labels: &[u8]) -> MetricsReport {
    compute_metrics_with(scores, labels, DEFAULT_MAX_FPR)
}

pub fn compute_metrics_with(scores: &[f64], labels: &[u8], max_fpr: f64) -> MetricsReport {
    assert!(!scores.is_empty() && scores.len() == labels.len());
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s > 0.5, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let n = scores.len();
    let f1_fake = f1(c.tp, c.fp, c.fn_);
    let f1_real = f1(c.tn, c.fn_, c.fp);
    MetricsReport {
        acc: (c.tp + c.tn) as f64 / n as f64,
        mac_f1: (f1_real + f1_fake) / 2.0,
        auc: auc(scores, labels),
        spauc: spauc(scores, labels, max_fpr),
        f1_real,
        f1_fake,
        confusion: c,
        n,
    }
}

/// Mann–Whitney AUC with midranks, so each tied pair counts 1/2.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// ROC vertices `(fpr, tpr)` from the highest threshold down, tied scores
/// forming a single step.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64)> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / n_neg, tp as f64 / n_pos));
    }
    pts
}

/// Standardized partial AUC: `0.5 (1 + (A − a²/2) / (a − a²/2))` where `A`
/// is the trapezoidal area under the ROC curve on `[0, a]`.
pub fn spauc(scores: &[f64], labels: &[u8], max_fpr: f64) -> Option<f64> {
    assert!(max_fpr > 0.0 && max_fpr <= 1.0);
    auc(scores, labels)?;
    let pts = roc_curve(scores, labels);
    let mut area = 0.0;
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= max_fpr {
            break;
        }
        if x1 <= max_fpr {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y = y0 + (y1 - y0) * (max_fpr - x0) / (x1 - x0);
            area += (max_fpr - x0) * (y0 + y) / 2.0;
        }
    }
    let min_area = max_fpr * max_fpr / 2.0;
    Some(0.5 * (1.0 + (area - min_area) / (max_fpr - min_area)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_ranking() {
        let m = compute_metrics(&[0.9, 0.1], &[1, 0]);
        assert_eq!((m.acc, m.auc, m.f1_fake, m.f1_real, m.mac_f1), (1.0, Some(1.0), 1.0, 1.0, 1.0));
        assert_eq!(m.spauc, Some(1.0));
    }

    #[test]
    fn uninformative_scorer() {
        let m = compute_metrics(&[0.3; 6], &[1, 0, 1, 0, 1, 0]);
        assert_eq!(m.auc, Some(0.5));
        assert!((m.spauc.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(m.f1_fake, 0.0);
    }

    #[test]
    fn threshold_boundary_is_real() {
        let m = compute_metrics(&[0.5], &[1]);
        assert_eq!(m.confusion.fn_, 1);
        assert!(m.auc.is_none() && m.spauc.is_none());
        let json = serde_json::to_value(&m).unwrap();
        assert!(json.get("auc").is_none());
    }

    fn brute_auc(s: &[f64], y: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let s: Vec<f64> = (0..200).map(|_| (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0).collect();
            let y: Vec<u8> = (0..200).map(|_| rng.gen_range(0..=1)).collect();
            assert!((auc(&s, &y).unwrap() - brute_auc(&s, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn full_range_spauc_is_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<u8> = (0..100).map(|_| rng.gen_range(0..=1)).collect();
        assert!((spauc(&s, &y, 1.0).unwrap() - auc(&s, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_is_mean() {
        let m = compute_metrics(&[0.9, 0.8, 0.2, 0.7, 0.1], &[1, 0, 0, 1, 1]);
        assert_eq!(m.confusion, Confusion { tp: 2, fp: 1, tn: 1, fn_: 1 });
        assert!((m.f1_fake - 4.0 / 6.0).abs() < 1e-15);
        assert!((m.f1_real - 0.5).abs() < 1e-15);
        assert!((m.mac_f1 - (4.0 / 6.0 + 0.5) / 2.0).abs() < 1e-15);
        assert!((m.acc - 0.6).abs() < 1e-15);
    }
}
