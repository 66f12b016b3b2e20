//! Bag-of-words logistic regression, the token-identity ceiling for the
//! synthetic tasks.

use crate::model::EncodedExample;
use crate::tensor::sigmoid;

#[derive(Debug, Clone)]
pub struct BowLogistic {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn features(ex: &EncodedExample, vocab: usize) -> Vec<(usize, f64)> {
    let mut counts = vec![0.0; vocab];
    for &i in &ex.ids {
        counts[i] += 1.0;
    }
    counts
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > 0.0)
        .collect()
}

impl BowLogistic {
    /// Full-batch gradient descent on L2-regularized log loss over token
    /// counts.
    pub fn fit(train: &[EncodedExample], vocab: usize, epochs: usize, lr: f64, l2: f64) -> Self {
        let feats: Vec<Vec<(usize, f64)>> = train.iter().map(|e| features(e, vocab)).collect();
        let mut w = vec![0.0; vocab];
        let mut b = 0.0;
        let n = train.len() as f64;
        for _ in 0..epochs {
            let mut gw = vec![0.0; vocab];
            let mut gb = 0.0;
            for (f, e) in feats.iter().zip(train) {
                let z = b + f.iter().map(|&(i, c)| w[i] * c).sum::<f64>();
                let err = sigmoid(z) - f64::from(e.label);
                gb += err;
                for &(i, c) in f {
                    gw[i] += err * c;
                }
            }
            for i in 0..vocab {
                w[i] -= lr * (gw[i] / n + l2 * w[i]);
            }
            b -= lr * gb / n;
        }
        Self { weights: w, bias: b }
    }

    pub fn score(&self, ex: &EncodedExample) -> f64 {
        let z = self.bias
            + ex
                .ids
                .iter()
                .map(|&i| self.weights.get(i).copied().unwrap_or(0.0))
                .sum::<f64>();
        sigmoid(z)
    }

    pub fn scores(&self, examples: &[EncodedExample]) -> Vec<f64> {
        examples.iter().map(|e| self.score(e)).collect()
    }
}
