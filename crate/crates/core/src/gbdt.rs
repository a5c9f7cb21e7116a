//! Multiclass gradient-boosted regression trees with softmax loss.
//!
//! Each boosting round fits one depth-limited tree per class to the Newton
//! statistics of the current softmax probabilities, using exact greedy
//! split search over presorted feature columns. Leaves hold `-G / (H + λ)`.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, RulClass};
use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// Floor for per-class log-priors of classes absent from the training rows.
const MIN_LOG_PRIOR: f64 = -30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub iterations: usize,
    pub depth: usize,
    pub learning_rate: f64,
    /// L2 regularization on leaf values.
    pub lambda: f64,
    pub min_samples_leaf: usize,
    pub k_folds: usize,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            iterations: 500,
            depth: 6,
            learning_rate: 0.1,
            lambda: 1.0,
            min_samples_leaf: 1,
            k_folds: 10,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Regression tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<Node>,
}

impl RegTree {
    pub fn leaf(value: f64) -> Self {
        RegTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Depth of the deepest leaf (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(t: &RegTree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Every split has two in-range children and a finite threshold, and
    /// every node except the root is referenced exactly once.
    pub fn is_well_formed(&self) -> bool {
        let mut refs = vec![0usize; self.nodes.len()];
        for n in &self.nodes {
            if let Node::Split {
                threshold,
                left,
                right,
                ..
            } = *n
            {
                if !threshold.is_finite() || left >= self.nodes.len() || right >= self.nodes.len() {
                    return false;
                }
                refs[left] += 1;
                refs[right] += 1;
            }
        }
        !self.nodes.is_empty() && refs[0] == 0 && refs[1..].iter().all(|&r| r == 1)
    }
}

/// Per-class softmax gradient and diagonal Hessian for one row.
pub fn grad_hess(probs: &[f64; 3], label: RulClass) -> [(f64, f64); 3] {
    let mut out = [(0.0, 0.0); 3];
    for k in 0..NUM_CLASSES {
        let y = if k == label.index() { 1.0 } else { 0.0 };
        out[k] = (probs[k] - y, probs[k] * (1.0 - probs[k]));
    }
    out
}

pub fn softmax3(scores: &[f64; 3]) -> [f64; 3] {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = scores.map(|s| (s - max).exp());
    let sum: f64 = e.iter().sum();
    e.map(|v| v / sum)
}

/// Column-major view of the training features with per-feature sort orders.
pub struct Presorted {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(features: ArrayView2<f64>, rows: &[usize]) -> Self {
        let columns: Vec<Vec<f64>> = features
            .columns()
            .into_iter()
            .map(|col| rows.iter().map(|&i| col[i]).collect())
            .collect();
        let order = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { columns, order }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree level by level with exact greedy splits.
///
/// Split gain is `GL²/(HL+λ) + GR²/(HR+λ) − G²/(H+λ)`; ties keep the lowest
/// feature index, then the lowest threshold. A node becomes a leaf at the
/// depth limit, when it has a single row, or when no split has positive gain.
pub fn build_tree(
    data: &Presorted,
    grad: &[f64],
    hess: &[f64],
    depth_limit: usize,
    lambda: f64,
    min_samples_leaf: usize,
) -> RegTree {
    let n = data.n_rows();
    assert_eq!(grad.len(), n);
    assert_eq!(hess.len(), n);
    let min_leaf = min_samples_leaf.max(1);

    struct Open {
        g: f64,
        h: f64,
        count: usize,
    }

    // Node id per row. Rows in finished leaves keep that leaf's id, which
    // never appears among the open nodes again.
    let mut node_of = vec![0usize; n];
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let (g0, h0) = (grad.iter().sum(), hess.iter().sum());
    let mut open: Vec<(usize, Open)> = vec![(0, Open { g: g0, h: h0, count: n })];

    for depth in 0..=depth_limit {
        if open.is_empty() {
            break;
        }
        let mut slot = vec![usize::MAX; nodes.len()];
        for (s, (id, _)) in open.iter().enumerate() {
            slot[*id] = s;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];

        if depth < depth_limit {
            struct Scan {
                gl: f64,
                hl: f64,
                cl: usize,
                last: f64,
            }
            for (f, order) in data.order.iter().enumerate() {
                let col = &data.columns[f];
                let mut scan: Vec<Scan> = open
                    .iter()
                    .map(|_| Scan {
                        gl: 0.0,
                        hl: 0.0,
                        cl: 0,
                        last: f64::NAN,
                    })
                    .collect();
                for &r in order {
                    let r = r as usize;
                    let s = slot[node_of[r]];
                    if s == usize::MAX {
                        continue;
                    }
                    let x = col[r];
                    let st = &mut scan[s];
                    let parent = &open[s].1;
                    if st.cl >= min_leaf && x > st.last && parent.count - st.cl >= min_leaf {
                        let (gr, hr) = (parent.g - st.gl, parent.h - st.hl);
                        let gain = st.gl * st.gl / (st.hl + lambda) + gr * gr / (hr + lambda)
                            - parent.g * parent.g / (parent.h + lambda);
                        if best[s].is_none_or(|b| gain > b.gain) {
                            let mid = st.last + (x - st.last) / 2.0;
                            let threshold = if mid < x { mid } else { st.last };
                            best[s] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold,
                            });
                        }
                    }
                    st.gl += grad[r];
                    st.hl += hess[r];
                    st.cl += 1;
                    st.last = x;
                }
            }
        }

        let mut next = Vec::new();
        let mut children_of = vec![None; open.len()];
        for (s, (id, stats)) in open.iter().enumerate() {
            let split = best[s].filter(|c| {
                let scale = stats.g * stats.g / (stats.h + lambda);
                c.gain > 0.0 && c.gain > 1e-12 * scale && stats.count > 1
            });
            match split {
                Some(c) => {
                    let (left, right) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[*id] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right,
                    };
                    children_of[s] = Some((c, left, right));
                }
                None => {
                    nodes[*id] = Node::Leaf {
                        value: -stats.g / (stats.h + lambda),
                    };
                }
            }
        }

        // Route rows of split nodes and total up child statistics.
        let mut child_stats: std::collections::BTreeMap<usize, Open> = Default::default();
        for r in 0..n {
            let s = slot[node_of[r]];
            if s == usize::MAX {
                continue;
            }
            if let Some((c, left, right)) = children_of[s] {
                let child = if data.columns[c.feature][r] <= c.threshold {
                    left
                } else {
                    right
                };
                node_of[r] = child;
                let e = child_stats.entry(child).or_insert(Open { g: 0.0, h: 0.0, count: 0 });
                e.g += grad[r];
                e.h += hess[r];
                e.count += 1;
            }
        }
        for s in children_of.iter().flatten() {
            for child in [s.1, s.2] {
                let stats = child_stats.remove(&child).unwrap_or(Open { g: 0.0, h: 0.0, count: 0 });
                next.push((child, stats));
            }
        }
        open = next;
    }
    RegTree { nodes }
}

/// Per-class base scores plus one tree per class per boosting round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub base: [f64; 3],
    pub learning_rate: f64,
    pub n_features: usize,
    /// `trees[iteration][class]`.
    pub trees: Vec<[RegTree; 3]>,
    /// Training multiclass log-loss after each round.
    pub loss_trace: Vec<f64>,
}

impl Ensemble {
    pub fn empty(n_features: usize, learning_rate: f64) -> Self {
        Ensemble {
            base: [0.0; 3],
            learning_rate,
            n_features,
            trees: Vec::new(),
            loss_trace: Vec::new(),
        }
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len() * NUM_CLASSES
    }

    pub fn raw_scores(&self, x: &[f64]) -> Result<[f64; 3]> {
        if x.len() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut f = self.base;
        for round in &self.trees {
            for (k, tree) in round.iter().enumerate() {
                f[k] += self.learning_rate * tree.predict(x);
            }
        }
        Ok(f)
    }

    pub fn softmax_scores(&self, x: &[f64]) -> Result<[f64; 3]> {
        Ok(softmax3(&self.raw_scores(x)?))
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<[f64; 3]>> {
        x.rows()
            .into_iter()
            .map(|r| self.softmax_scores(&r.to_vec()))
            .collect()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<RulClass>> {
        Ok(self
            .predict_proba(x)?
            .iter()
            .map(|p| RulClass::ALL[argmax(p)])
            .collect())
    }
}

fn log_loss(scores: &[[f64; 3]], labels: &[RulClass]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(f, y)| {
            let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + f.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - f[y.index()]
        })
        .sum();
    total / scores.len() as f64
}

/// Boosts `config.iterations` rounds on `rows` of `features`.
pub fn gbdt_train(
    config: &GbdtConfig,
    features: ArrayView2<f64>,
    labels: &[RulClass],
    rows: &[usize],
) -> Result<Ensemble> {
    if rows.is_empty() {
        return Err(Error::TooFewRows(0));
    }
    let data = Presorted::new(features, rows);
    let y: Vec<RulClass> = rows.iter().map(|&i| labels[i]).collect();
    let n = rows.len();

    let mut counts = [0usize; 3];
    for l in &y {
        counts[l.index()] += 1;
    }
    let mut ens = Ensemble::empty(features.ncols(), config.learning_rate);
    ens.base = counts.map(|c| {
        if c == 0 {
            MIN_LOG_PRIOR
        } else {
            (c as f64 / n as f64).ln().max(MIN_LOG_PRIOR)
        }
    });

    let mut scores = vec![ens.base; n];
    let mut grad = vec![vec![0.0; n]; NUM_CLASSES];
    let mut hess = vec![vec![0.0; n]; NUM_CLASSES];

    for it in 0..config.iterations {
        for (i, (f, &label)) in scores.iter().zip(&y).enumerate() {
            for (k, (g, h)) in grad_hess(&softmax3(f), label).into_iter().enumerate() {
                grad[k][i] = g;
                hess[k][i] = h;
            }
        }
        let round: [RegTree; 3] = std::array::from_fn(|k| {
            build_tree(
                &data,
                &grad[k],
                &hess[k],
                config.depth,
                config.lambda,
                config.min_samples_leaf,
            )
        });
        for (i, f) in scores.iter_mut().enumerate() {
            let row = data.row(i);
            for (k, tree) in round.iter().enumerate() {
                f[k] += config.learning_rate * tree.predict(&row);
            }
        }
        let loss = log_loss(&scores, &y);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: "iteration",
                index: it + 1,
            });
        }
        ens.trees.push(round);
        ens.loss_trace.push(loss);
    }
    Ok(ens)
}
