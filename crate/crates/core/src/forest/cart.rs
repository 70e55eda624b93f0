//! Greedy CART growth on an index set of training rows.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Regression mean, or class index for classification.
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Labels<'a> {
    Regression(&'a [f64]),
    Classification { labels: &'a [usize], classes: usize },
}

pub(crate) struct Params {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub mtry: usize,
}

pub(crate) struct Grower<'a> {
    pub x: &'a [Vec<f64>],
    pub y: Labels<'a>,
    pub params: &'a Params,
    pub rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Midpoint of two distinct sorted values that still separates them.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = (lo + hi) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

impl<'a> Grower<'a> {
    pub fn new(x: &'a [Vec<f64>], y: Labels<'a>, params: &'a Params, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            x,
            y,
            params,
            rng,
            nodes: Vec::new(),
        }
    }

    pub fn grow(mut self, rows: Vec<usize>) -> Tree {
        self.build(rows, 0);
        Tree { nodes: self.nodes }
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        match self.y {
            Labels::Regression(y) => {
                let first = y[rows[0]];
                if rows.iter().all(|&r| y[r] == first) {
                    first
                } else {
                    rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64
                }
            }
            Labels::Classification { labels, classes } => {
                let mut counts = vec![0usize; classes];
                for &r in rows {
                    counts[labels[r]] += 1;
                }
                argmax_lowest(&counts) as f64
            }
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self.y {
            Labels::Regression(y) => rows.iter().all(|&r| y[r] == y[rows[0]]),
            Labels::Classification { labels, .. } => {
                rows.iter().all(|&r| labels[r] == labels[rows[0]])
            }
        }
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&rows),
        });
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || rows.len() < 2 * self.params.min_samples_leaf || self.is_pure(&rows) {
            return id;
        }
        let Some(split) = self.best_split(&rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        drop(rows);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    /// Best split over a random feature subset. Features that are constant
    /// within the node do not count towards `mtry`, so a valid split is found
    /// whenever one exists.
    fn best_split(&mut self, rows: &[usize]) -> Option<SplitChoice> {
        let p = self.x[0].len();
        let mut order: Vec<usize> = (0..p).collect();
        if self.params.mtry < p {
            order.shuffle(self.rng);
        }
        let mut best: Option<SplitChoice> = None;
        let mut evaluated = 0;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in order {
            if evaluated == self.params.mtry {
                break;
            }
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (self.x[r][f], r)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pairs[0].0 == pairs[pairs.len() - 1].0 {
                continue;
            }
            evaluated += 1;
            if let Some((threshold, score)) = self.scan(&pairs) {
                if best.as_ref().is_none_or(|b| score > b.score) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    /// Sweep sorted `(value, row)` pairs; return the best threshold and its
    /// proxy score (larger is better: `Σ S_l²/n_l + Σ S_r²/n_r`).
    fn scan(&self, pairs: &[(f64, usize)]) -> Option<(f64, f64)> {
        let n = pairs.len();
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<(f64, f64)> = None;
        let consider = |k: usize, score: f64, best: &mut Option<(f64, f64)>| {
            if best.is_none_or(|b| score > b.1) {
                *best = Some((midpoint(pairs[k - 1].0, pairs[k].0), score));
            }
        };
        match self.y {
            Labels::Regression(y) => {
                let total: f64 = pairs.iter().map(|p| y[p.1]).sum();
                let mut left = 0.0;
                for k in 1..n {
                    left += y[pairs[k - 1].1];
                    if pairs[k - 1].0 == pairs[k].0 || k < min_leaf || n - k < min_leaf {
                        continue;
                    }
                    let right = total - left;
                    let score = left * left / k as f64 + right * right / (n - k) as f64;
                    consider(k, score, &mut best);
                }
            }
            Labels::Classification { labels, classes } => {
                let mut total = vec![0.0; classes];
                for p in pairs {
                    total[labels[p.1]] += 1.0;
                }
                let mut left = vec![0.0; classes];
                for k in 1..n {
                    left[labels[pairs[k - 1].1]] += 1.0;
                    if pairs[k - 1].0 == pairs[k].0 || k < min_leaf || n - k < min_leaf {
                        continue;
                    }
                    let (mut sl, mut sr) = (0.0, 0.0);
                    for c in 0..classes {
                        sl += left[c] * left[c];
                        let r = total[c] - left[c];
                        sr += r * r;
                    }
                    let score = sl / k as f64 + sr / (n - k) as f64;
                    consider(k, score, &mut best);
                }
            }
        }
        best
    }
}

/// Index of the largest count; the lowest index wins ties.
pub fn argmax_lowest<T: PartialOrd + Copy>(counts: &[T]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}
