//! Seeded synthetic corpora.
//!
//! Both generators plant a `CLAIM` and a `NEGATOR` token in a random
//! dependency tree at a controlled tree distance; everything else is filler
//! drawn uniformly from `w0..w{vocab_size-1}`. Token positions are a random
//! permutation of tree nodes, so sequential distance carries no label
//! information.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NewsExample;
use crate::graph::DepParse;

pub const CLAIM: &str = "CLAIM";
pub const NEGATOR: &str = "NEGATOR";
pub const BIAS: &str = "BIAS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultihopParams {
    pub n_examples: usize,
    pub seed: u64,
    pub k_hop: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for MultihopParams {
    fn default() -> Self {
        Self {
            n_examples: 1000,
            seed: 0,
            k_hop: 3,
            vocab_size: 50,
            min_len: 8,
            max_len: 16,
        }
    }
}

/// A tree of `n` nodes containing a path of length `dist` between nodes 0
/// and `dist`, with the remaining nodes attached uniformly at random. Heads
/// point toward a random root. Returns parent pointers (`None` = root).
fn tree_with_path(n: usize, dist: usize, rng: &mut impl Rng) -> Vec<Option<usize>> {
    assert!(dist < n);
    let mut edges: Vec<(usize, usize)> = (0..dist).map(|i| (i, i + 1)).collect();
    for v in dist + 1..n {
        edges.push((v, rng.gen_range(0..v)));
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let root = rng.gen_range(0..n);
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    seen[root] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                stack.push(v);
            }
        }
    }
    parent
}

/// Renumbers tree nodes into token positions via a random permutation.
/// Returns (heads by position, position of each node).
fn shuffle_positions(parent: &[Option<usize>], rng: &mut impl Rng) -> (Vec<Option<usize>>, Vec<usize>) {
    let n = parent.len();
    let mut pos: Vec<usize> = (0..n).collect();
    pos.shuffle(rng);
    let mut heads = vec![None; n];
    for node in 0..n {
        heads[pos[node]] = parent[node].map(|p| pos[p]);
    }
    (heads, pos)
}

fn filler(vocab_size: usize, rng: &mut impl Rng) -> String {
    format!("w{}", rng.gen_range(0..vocab_size))
}

struct Planted {
    tokens: Vec<String>,
    parse: DepParse,
    /// Positions of filler tokens.
    free: Vec<usize>,
}

fn plant(n: usize, dist: usize, vocab_size: usize, rng: &mut impl Rng) -> Planted {
    let parent = tree_with_path(n, dist, rng);
    let (heads, pos) = shuffle_positions(&parent, rng);
    let mut tokens: Vec<String> = (0..n).map(|_| filler(vocab_size, rng)).collect();
    tokens[pos[0]] = CLAIM.to_string();
    tokens[pos[dist]] = NEGATOR.to_string();
    let free = (0..n).filter(|&p| p != pos[0] && p != pos[dist]).collect();
    Planted {
        tokens,
        parse: DepParse::new(heads, None).expect("generated tree is valid"),
        free,
    }
}

/// Label 1 iff `NEGATOR` lies within `k_hop` tree hops of `CLAIM`. Positive
/// distances are uniform on `2..=k_hop`, negative on `k_hop+1..=2·k_hop`.
/// Classes are exactly balanced (up to one for odd counts).
pub fn gen_synthetic_multihop(p: &MultihopParams) -> Vec<NewsExample> {
    assert!(p.k_hop >= 2, "k_hop must be at least 2");
    assert!(p.min_len > 2 * p.k_hop && p.max_len >= p.min_len);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut labels: Vec<u8> = (0..p.n_examples).map(|i| (i % 2) as u8).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let dist = if label == 1 {
                rng.gen_range(2..=p.k_hop)
            } else {
                rng.gen_range(p.k_hop + 1..=2 * p.k_hop)
            };
            let n = rng.gen_range(p.min_len..=p.max_len);
            let planted = plant(n, dist, p.vocab_size, &mut rng);
            let mut keywords = vec![CLAIM.to_string(), NEGATOR.to_string()];
            keywords.push(planted.tokens[*planted.free.choose(&mut rng).expect("filler exists")].clone());
            NewsExample {
                id: format!("mh{i:05}"),
                tokens: planted.tokens,
                parse: planted.parse,
                keywords: Some(keywords),
                label,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasParams {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    /// Train split: `P(BIAS | fake) = 1 − flip_rate`, `P(BIAS | real) =
    /// flip_rate`. The test split swaps the two.
    pub flip_rate: f64,
    /// Fraction of examples whose structural pattern contradicts the label.
    pub label_noise: f64,
    /// Structural rule: fake iff `dist(CLAIM, NEGATOR) <= near`; otherwise
    /// the distance is at least `near + 2`.
    pub near: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for BiasParams {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 1000,
            seed: 0,
            flip_rate: 0.1,
            label_noise: 0.15,
            near: 2,
            vocab_size: 50,
            min_len: 8,
            max_len: 16,
        }
    }
}

fn bias_split(p: &BiasParams, n: usize, prefix: &str, swap: bool, rng: &mut ChaCha8Rng) -> Vec<NewsExample> {
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    labels.shuffle(rng);
    let far_max = p.near + 4;
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let structural = if rng.gen_bool(p.label_noise) { 1 - label } else { label };
            let dist = if structural == 1 {
                rng.gen_range(1..=p.near)
            } else {
                rng.gen_range(p.near + 2..=far_max)
            };
            let n_tok = rng.gen_range(p.min_len.max(far_max + 2)..=p.max_len.max(far_max + 2));
            let mut planted = plant(n_tok, dist, p.vocab_size, rng);
            let p_bias = if (label == 1) != swap { 1.0 - p.flip_rate } else { p.flip_rate };
            let mut keywords = Vec::new();
            if rng.gen_bool(p_bias) {
                let at = *planted.free.choose(rng).expect("filler exists");
                planted.tokens[at] = BIAS.to_string();
                keywords.push(BIAS.to_string());
            }
            while keywords.len() < 2 {
                let at = *planted.free.choose(rng).expect("filler exists");
                if planted.tokens[at] != BIAS && !keywords.contains(&planted.tokens[at]) {
                    keywords.push(planted.tokens[at].clone());
                }
            }
            NewsExample {
                id: format!("{prefix}{i:05}"),
                tokens: planted.tokens,
                parse: planted.parse,
                keywords: Some(keywords),
                label,
            }
        })
        .collect()
}

/// Train and test corpora with an anti-correlated shift of the `BIAS`
/// keyword; the structural rule is shared by both splits.
pub fn gen_synthetic_bias(p: &BiasParams) -> (Vec<NewsExample>, Vec<NewsExample>) {
    assert!((0.0..=1.0).contains(&p.flip_rate) && (0.0..=1.0).contains(&p.label_noise));
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let train = bias_split(p, p.n_train, "bt", false, &mut rng);
    let test = bias_split(p, p.n_test, "be", true, &mut rng);
    (train, test)
}

/// Pearson correlation between keyword presence and label.
pub fn point_biserial(examples: &[NewsExample], keyword: &str) -> f64 {
    let xs: Vec<f64> = examples
        .iter()
        .map(|e| f64::from(e.keywords.iter().flatten().any(|k| k == keyword) as u8))
        .collect();
    let ys: Vec<f64> = examples.iter().map(|e| f64::from(e.label)).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
