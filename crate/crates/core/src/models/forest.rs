//! Bagged CART regression trees.
//!
//! Each tree sees a bootstrap sample and considers every feature at every
//! split, picking the split with the largest reduction in squared error.
//! Candidate thresholds are midpoints between consecutive distinct values.
//! Equal reductions go to the lower feature index, then the lower threshold.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Sample rows with replacement for each tree; off means every tree sees
    /// all rows once.
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            bootstrap: true,
            max_depth: None,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

/// A node is a leaf when `feature` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TreeColumns", try_from = "TreeColumns")]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

/// Column layout of a tree on disk; `feature` is -1 at leaves.
#[derive(Serialize, Deserialize)]
struct TreeColumns {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    value: Vec<f64>,
}

impl From<Tree> for TreeColumns {
    fn from(t: Tree) -> Self {
        TreeColumns {
            feature: t.nodes.iter().map(|n| n.feature.map_or(-1, |f| f as i64)).collect(),
            threshold: t.nodes.iter().map(|n| n.threshold).collect(),
            left: t.nodes.iter().map(|n| n.left).collect(),
            right: t.nodes.iter().map(|n| n.right).collect(),
            value: t.nodes.iter().map(|n| n.value).collect(),
        }
    }
}

impl TryFrom<TreeColumns> for Tree {
    type Error = String;

    fn try_from(c: TreeColumns) -> std::result::Result<Self, String> {
        let n = c.feature.len();
        if [c.threshold.len(), c.left.len(), c.right.len(), c.value.len()].iter().any(|&l| l != n) {
            return Err("tree columns differ in length".into());
        }
        if n == 0 {
            return Err("tree has no nodes".into());
        }
        let nodes = (0..n)
            .map(|i| {
                let feature = match c.feature[i] {
                    -1 => None,
                    f if f >= 0 => Some(f as usize),
                    f => return Err(format!("node {i}: bad feature {f}")),
                };
                if feature.is_some() && (c.left[i] as usize >= n || c.right[i] as usize >= n || c.left[i] as usize <= i) {
                    return Err(format!("node {i}: child index out of range"));
                }
                Ok(TreeNode {
                    feature,
                    threshold: c.threshold[i],
                    left: c.left[i],
                    right: c.right[i],
                    value: c.value[i],
                })
            })
            .collect::<std::result::Result<_, _>>()?;
        Ok(Tree { nodes })
    }
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = &self.nodes[0];
        while let Some(f) = node.feature {
            node = if row[f] <= node.threshold {
                &self.nodes[node.left as usize]
            } else {
                &self.nodes[node.right as usize]
            };
        }
        node.value
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            match n.feature {
                None => 0,
                Some(_) => 1 + walk(t, n.left as usize).max(walk(t, n.right as usize)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub trees: Vec<Tree>,
    /// Per-tree bootstrap seeds, derived from the master seed.
    pub tree_seeds: Vec<u64>,
    pub config: ForestConfig,
}

impl ForestModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.expect_cols(self.n_features)?;
        let n = self.trees.len() as f64;
        Ok(x.iter_rows()
            .map(|row| self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / n)
            .collect())
    }
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
    left_count: usize,
}

/// Grows one tree over `samples` (row indices, possibly repeated).
pub fn grow_tree(x: &Matrix, y: &[f64], samples: &[usize], cfg: &ForestConfig) -> Tree {
    let d = x.cols();
    let m = samples.len();
    // orders[f] lists positions into `samples`, sorted by feature f; every
    // node owns the same [lo, hi) window in all of them
    let mut orders: Vec<Vec<u32>> = (0..d)
        .map(|f| {
            let mut o: Vec<u32> = (0..m as u32).collect();
            o.sort_by(|&a, &b| {
                x.get(samples[a as usize], f)
                    .total_cmp(&x.get(samples[b as usize], f))
                    .then(a.cmp(&b))
            });
            o
        })
        .collect();
    let mut goes_left = vec![false; m];
    let mut scratch: Vec<u32> = Vec::with_capacity(m);
    let target = |p: u32| y[samples[p as usize]];
    let value = |p: u32, f: usize| x.get(samples[p as usize], f);

    let mut nodes = vec![TreeNode {
        feature: None,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: 0.0,
    }];
    let mut stack = vec![(0usize, 0usize, m, 0usize)];
    while let Some((id, lo, hi, depth)) = stack.pop() {
        let count = hi - lo;
        let window = &orders[0][lo..hi];
        let total: f64 = window.iter().map(|&p| target(p)).sum();
        nodes[id].value = total / count as f64;

        let first = target(window[0]);
        let pure = window.iter().all(|&p| target(p) == first);
        let depth_capped = cfg.max_depth.map_or(false, |cap| depth >= cap);
        if pure || depth_capped || count < 2 * cfg.min_samples_leaf.max(1) {
            continue;
        }

        let parent = total * total / count as f64;
        let mut best: Option<Best> = None;
        for (f, order) in orders.iter().enumerate() {
            let window = &order[lo..hi];
            let mut left_sum = 0.0;
            for k in 0..count - 1 {
                left_sum += target(window[k]);
                let (a, b) = (value(window[k], f), value(window[k + 1], f));
                let left_n = k + 1;
                let right_n = count - left_n;
                if a == b || left_n < cfg.min_samples_leaf || right_n < cfg.min_samples_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                // sum of squares explained; larger means smaller child SSE
                let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64
                    - parent;
                let better = match &best {
                    None => true,
                    Some(b) => gain > b.gain + 1e-12 * b.gain.abs().max(1.0),
                };
                if better {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Best {
                        gain,
                        feature: f,
                        threshold,
                        left_count: left_n,
                    });
                }
            }
        }
        let Some(best) = best else { continue };

        for &p in &orders[best.feature][lo..hi] {
            goes_left[p as usize] = value(p, best.feature) <= best.threshold;
        }
        debug_assert_eq!(
            orders[best.feature][lo..hi].iter().filter(|&&p| goes_left[p as usize]).count(),
            best.left_count
        );
        for order in orders.iter_mut() {
            scratch.clear();
            scratch.extend(order[lo..hi].iter().filter(|&&p| goes_left[p as usize]));
            scratch.extend(order[lo..hi].iter().filter(|&&p| !goes_left[p as usize]));
            order[lo..hi].copy_from_slice(&scratch);
        }

        let left = nodes.len();
        let leaf = TreeNode {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: 0.0,
        };
        nodes.push(leaf.clone());
        nodes.push(leaf);
        nodes[id].feature = Some(best.feature);
        nodes[id].threshold = best.threshold;
        nodes[id].left = left as u32;
        nodes[id].right = left as u32 + 1;
        let mid = lo + best.left_count;
        stack.push((left + 1, mid, hi, depth + 1));
        stack.push((left, lo, mid, depth + 1));
    }
    Tree { nodes }
}

pub fn fit_forest(x: &Matrix, y: &[f64], cfg: &ForestConfig) -> Result<ForestModel> {
    if x.rows() != y.len() {
        return Err(Error::Input(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if x.rows() == 0 {
        return Err(Error::Fit("no training rows".into()));
    }
    if cfg.n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tree_seeds: Vec<u64> = (0..cfg.n_trees).map(|_| master.next_u64()).collect();
    let n = x.rows();
    let trees = tree_seeds
        .par_iter()
        .map(|&seed| {
            let samples: Vec<usize> = if cfg.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(x, y, &samples, cfg)
        })
        .collect();
    Ok(ForestModel {
        n_features: x.cols(),
        trees,
        tree_seeds,
        config: cfg.clone(),
    })
}
