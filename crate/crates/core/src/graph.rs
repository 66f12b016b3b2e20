//! Dependency graphs, hop-subgraph adjacency and graph distances.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty parse")]
    Empty,
    #[error("token {token} is its own head")]
    SelfHead { token: usize },
    #[error("token {token} has head {head} outside [0, {n})")]
    HeadOutOfRange { token: usize, head: i64, n: usize },
    #[error("parse has no ROOT token")]
    NoRoot,
    #[error("tokens {a} and {b} are each other's head")]
    MultiEdge { a: usize, b: usize },
    #[error("hop count must be at least 1")]
    ZeroHops,
}

/// A dependency parse: one head per token, `None` marking a root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepParse {
    heads: Vec<Option<usize>>,
    deprels: Option<Vec<String>>,
}

impl DepParse {
    pub fn new(heads: Vec<Option<usize>>, deprels: Option<Vec<String>>) -> Result<Self, ParseError> {
        let parse = Self { heads, deprels };
        parse.validate()?;
        Ok(parse)
    }

    /// Builds a parse from signed heads where `-1` marks the root.
    pub fn from_signed(heads: &[i64], deprels: Option<Vec<String>>) -> Result<Self, ParseError> {
        let n = heads.len();
        let mut out = Vec::with_capacity(n);
        for (token, &h) in heads.iter().enumerate() {
            match h {
                -1 => out.push(None),
                h if h >= 0 && (h as usize) < n => out.push(Some(h as usize)),
                head => return Err(ParseError::HeadOutOfRange { token, head, n }),
            }
        }
        Self::new(out, deprels)
    }

    fn validate(&self) -> Result<(), ParseError> {
        let n = self.heads.len();
        if n == 0 {
            return Err(ParseError::Empty);
        }
        let mut has_root = false;
        for (token, head) in self.heads.iter().enumerate() {
            match *head {
                None => has_root = true,
                Some(h) if h == token => return Err(ParseError::SelfHead { token }),
                Some(h) if h >= n => {
                    return Err(ParseError::HeadOutOfRange {
                        token,
                        head: h as i64,
                        n,
                    })
                }
                Some(h) => {
                    if self.heads[h] == Some(token) {
                        return Err(ParseError::MultiEdge {
                            a: token.min(h),
                            b: token.max(h),
                        });
                    }
                }
            }
        }
        if !has_root {
            return Err(ParseError::NoRoot);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    /// Heads with `-1` for roots.
    pub fn signed_heads(&self) -> Vec<i64> {
        self.heads
            .iter()
            .map(|h| h.map_or(-1, |h| h as i64))
            .collect()
    }

    pub fn deprels(&self) -> Option<&[String]> {
        self.deprels.as_deref()
    }

    /// Keeps the first `max_len` tokens. Edges to dropped heads are cut and
    /// the orphaned tokens become extra roots.
    pub fn truncate(&self, max_len: usize) -> Self {
        let keep = max_len.min(self.heads.len()).max(1);
        let heads = self.heads[..keep]
            .iter()
            .map(|h| h.filter(|&h| h < keep))
            .collect();
        let deprels = self.deprels.as_ref().map(|d| d[..keep].to_vec());
        Self { heads, deprels }
    }

    fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.heads.len()];
        for (t, h) in self.heads.iter().enumerate() {
            if let Some(h) = *h {
                adj[t].push(h);
                adj[h].push(t);
            }
        }
        adj
    }
}

/// Marks a pair of tokens in different components.
pub const UNREACHABLE: usize = usize::MAX;

/// The hop-subgraph adjacencies `Ã¹..Ãᵐ` and undirected all-pairs
/// distances of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct HopStack {
    hops: usize,
    n: usize,
    adj: Vec<Tensor>,
    dist: Vec<usize>,
}

impl HopStack {
    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `Ã^d` for `d` in `1..=hops`.
    pub fn adjacency(&self, d: usize) -> &Tensor {
        &self.adj[d - 1]
    }

    pub fn adjacencies(&self) -> &[Tensor] {
        &self.adj
    }

    /// Undirected shortest-path length, or `None` across components.
    pub fn distance(&self, i: usize, j: usize) -> Option<usize> {
        match self.dist[i * self.n + j] {
            UNREACHABLE => None,
            d => Some(d),
        }
    }

    /// Raw distance matrix, [`UNREACHABLE`] across components.
    pub fn distances(&self) -> Vec<Vec<usize>> {
        self.dist.chunks(self.n).map(<[usize]>::to_vec).collect()
    }

    /// Distance cap used for unreachable pairs: `2m`.
    pub fn cap(&self) -> usize {
        2 * self.hops
    }

    pub fn bias(&self, slope: f64) -> Tensor {
        graph_bias(&self.distances(), slope, self.cap())
    }

    /// Reindexes tokens: new token `k` is old token `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let adj = self
            .adj
            .iter()
            .map(|a| Tensor::from_fn(n, n, |i, j| a.get(perm[i], perm[j])))
            .collect();
        let mut dist = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                dist[i * n + j] = self.dist[perm[i] * n + perm[j]];
            }
        }
        Self {
            hops: self.hops,
            n,
            adj,
            dist,
        }
    }
}

/// Breadth-first search from every token over undirected head edges, then
/// thresholds distances into the `m` hop adjacencies.
pub fn build_hop_stack(parse: &DepParse, m: usize) -> Result<HopStack, ParseError> {
    if m == 0 {
        return Err(ParseError::ZeroHops);
    }
    parse.validate()?;
    let n = parse.len();
    let neighbours = parse.neighbours();
    let mut dist = vec![UNREACHABLE; n * n];
    let mut queue = VecDeque::with_capacity(n);
    for src in 0..n {
        let row = &mut dist[src * n..(src + 1) * n];
        row[src] = 0;
        queue.clear();
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &v in &neighbours[u] {
                if row[v] == UNREACHABLE {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    let adj = (1..=m)
        .map(|d| {
            Tensor::from_fn(n, n, |i, j| {
                let dij = dist[i * n + j];
                if i == j || dij <= d {
                    1.0
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(HopStack {
        hops: m,
        n,
        adj,
        dist,
    })
}

/// `-slope · min(dist, cap)`, with unreachable pairs at the cap.
pub fn graph_bias(dist: &[Vec<usize>], slope: f64, cap: usize) -> Tensor {
    let n = dist.len();
    Tensor::from_fn(n, n, |i, j| -slope * dist[i][j].min(cap) as f64)
}

/// Head slopes `2⁻¹, 2⁻², ..., 2⁻ʰ`.
pub fn slope_schedule(heads: usize) -> Vec<f64> {
    (1..=heads).map(|k| 0.5f64.powi(k as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain3() -> DepParse {
        DepParse::from_signed(&[-1, 0, 1], None).unwrap()
    }

    fn random_tree(n: usize, rng: &mut ChaCha8Rng) -> DepParse {
        let order: Vec<usize> = {
            let mut o: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                o.swap(i, rng.gen_range(0..=i));
            }
            o
        };
        let mut heads = vec![None; n];
        for k in 1..n {
            heads[order[k]] = Some(order[rng.gen_range(0..k)]);
        }
        DepParse::new(heads, None).unwrap()
    }

    fn floyd_warshall(parse: &DepParse) -> Vec<Vec<usize>> {
        let n = parse.len();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for (t, h) in parse.heads().iter().enumerate() {
            if let Some(h) = *h {
                d[t][h] = 1;
                d[h][t] = 1;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d.into_iter()
            .map(|r| r.into_iter().map(|v| if v >= inf { UNREACHABLE } else { v }).collect())
            .collect()
    }

    #[test]
    fn chain_example() {
        let hs = build_hop_stack(&chain3(), 2).unwrap();
        assert_eq!(hs.distances(), vec![vec![0, 1, 2], vec![1, 0, 1], vec![2, 1, 0]]);
        let a1 = Tensor::from_rows(&[vec![1.0, 1.0, 0.0], vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 1.0]]);
        assert_eq!(hs.adjacency(1), &a1);
        assert_eq!(hs.adjacency(2), &Tensor::filled(3, 3, 1.0));
        let bias = hs.bias(0.5);
        let expected = Tensor::from_fn(3, 3, |i, j| -0.5 * (i as f64 - j as f64).abs());
        assert_eq!(bias, expected);
    }

    #[test]
    fn single_token() {
        let p = DepParse::from_signed(&[-1], None).unwrap();
        let hs = build_hop_stack(&p, 3).unwrap();
        for d in 1..=3 {
            assert_eq!(hs.adjacency(d), &Tensor::filled(1, 1, 1.0));
        }
        assert_eq!(hs.distances(), vec![vec![0]]);
    }

    #[test]
    fn invalid_parses() {
        assert_eq!(
            DepParse::from_signed(&[-1, 1], None).unwrap_err(),
            ParseError::SelfHead { token: 1 }
        );
        assert_eq!(
            DepParse::from_signed(&[-1, 2], None).unwrap_err(),
            ParseError::HeadOutOfRange { token: 1, head: 2, n: 2 }
        );
        assert_eq!(DepParse::from_signed(&[1, 0], None).unwrap_err(), ParseError::MultiEdge { a: 0, b: 1 });
        assert_eq!(DepParse::new(vec![Some(1), Some(2), Some(0)], None).unwrap_err(), ParseError::NoRoot);
        assert_eq!(build_hop_stack(&chain3(), 0).unwrap_err(), ParseError::ZeroHops);
    }

    #[test]
    fn bias_examples() {
        let b = graph_bias(&[vec![0, 1], vec![1, 0]], 0.5, 8);
        assert_eq!(b.data(), &[0.0, -0.5, -0.5, 0.0]);
        let b = graph_bias(&[vec![0, UNREACHABLE], vec![UNREACHABLE, 0]], 0.25, 8);
        assert_eq!(b.get(0, 1), -2.0);
    }

    #[test]
    fn forest_uses_cap() {
        let p = DepParse::from_signed(&[-1, 0, -1], None).unwrap();
        let hs = build_hop_stack(&p, 2).unwrap();
        assert_eq!(hs.distance(0, 2), None);
        assert_eq!(hs.adjacency(2).get(0, 2), 0.0);
        assert_eq!(hs.bias(0.5).get(0, 2), -2.0);
    }

    #[test]
    fn truncation_cuts_crossing_edges() {
        let p = DepParse::from_signed(&[2, 0, -1, 2], None).unwrap();
        let t = p.truncate(2);
        assert_eq!(t.heads(), &[None, Some(0)]);
        assert_eq!(p.truncate(10), p);
    }

    #[test]
    fn slopes() {
        assert_eq!(slope_schedule(4), vec![0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(slope_schedule(1), vec![0.5]);
        let s = slope_schedule(12);
        assert!((s[11] - 2.441e-4).abs() < 1e-7);
        for w in s.windows(2) {
            assert_eq!(w[1], w[0] / 2.0);
        }
    }

    proptest! {
        #[test]
        fn hop_stack_matches_floyd_warshall(seed in 0u64..5000, n in 1usize..50, m in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let parse = random_tree(n, &mut rng);
            let hs = build_hop_stack(&parse, m).unwrap();
            let fw = floyd_warshall(&parse);
            prop_assert_eq!(&hs.distances(), &fw);
            for d in 1..=m {
                let a = hs.adjacency(d);
                for i in 0..n {
                    prop_assert_eq!(a.get(i, i), 1.0);
                    for j in 0..n {
                        let expect = if fw[i][j] <= d { 1.0 } else { 0.0 };
                        prop_assert_eq!(a.get(i, j), expect);
                        prop_assert_eq!(a.get(i, j), a.get(j, i));
                        if d < m {
                            prop_assert!(a.get(i, j) <= hs.adjacency(d + 1).get(i, j));
                        }
                    }
                }
            }
            for i in 0..n { for j in 0..n { for k in 0..n {
                prop_assert!(fw[i][k] <= fw[i][j] + fw[j][k]);
            }}}
            let bias = hs.bias(0.25);
            for i in 0..n {
                prop_assert_eq!(bias.get(i, i), 0.0);
                for j in 0..n { for k in 0..n {
                    if fw[i][j] <= fw[i][k] { prop_assert!(bias.get(i, j) >= bias.get(i, k)); }
                }}
            }
        }

        #[test]
        fn full_hops_cover_tree(seed in 0u64..1000, n in 2usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let parse = random_tree(n, &mut rng);
            let hs = build_hop_stack(&parse, n - 1).unwrap();
            prop_assert!(hs.adjacency(n - 1).data().iter().all(|&v| v == 1.0));
        }
    }
}
