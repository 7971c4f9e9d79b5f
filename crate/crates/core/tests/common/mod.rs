//! Brute-force references shared by the oracle and acceptance targets.
//!
//! Everything here works from the raw edge list with dense matrices and
//! linear scans, sharing no code with the CSR-based implementation.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rategraph::features::{featurize, graph_pairs, FeatureContext, Pair, N_FEATURES};
use rategraph::synth::{generate, SynthConfig};
use rategraph::{BipartiteGraph, BusinessId, Node, ReviewEdge, UserId};

pub const FEATURE_TOL: f64 = 1e-8;
pub const CENTRALITY_TOL: f64 = 1e-6;
/// Feature columns holding centrality sums.
pub const CENTRALITY_COLUMNS: [usize; 2] = [5, 6];

pub fn g0_edges() -> Vec<ReviewEdge> {
    vec![
        ReviewEdge::new(0, 0, 5, 1),
        ReviewEdge::new(1, 0, 3, 2),
        ReviewEdge::new(0, 1, 4, 3),
        ReviewEdge::new(2, 1, 2, 4),
    ]
}

/// Dense view of an edge list: present nodes get consecutive indices, users
/// first.
pub struct Dense {
    pub edges: Vec<ReviewEdge>,
    pub index: BTreeMap<Node, usize>,
}

impl Dense {
    pub fn new(edges: &[ReviewEdge]) -> Self {
        let users: BTreeSet<u32> = edges.iter().map(|e| e.user.0).collect();
        let businesses: BTreeSet<u32> = edges.iter().map(|e| e.business.0).collect();
        let mut index = BTreeMap::new();
        for u in users {
            let i = index.len();
            index.insert(Node::User(UserId(u)), i);
        }
        for b in businesses {
            let i = index.len();
            index.insert(Node::Business(BusinessId(b)), i);
        }
        Dense {
            edges: edges.to_vec(),
            index,
        }
    }

    pub fn n(&self) -> usize {
        self.index.len()
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        for e in &self.edges {
            let i = self.index[&Node::User(e.user)];
            let j = self.index[&Node::Business(e.business)];
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Solves `(I - d M) x = (1 - d)/n` with `M` the column-stochastic walk
    /// matrix.
    pub fn pagerank(&self, damping: f64) -> BTreeMap<Node, f64> {
        let n = self.n();
        let a = self.adjacency();
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let deg: f64 = a.column(j).sum();
            for i in 0..n {
                m[(i, j)] = a[(i, j)] / deg;
            }
        }
        let lhs = DMatrix::identity(n, n) - m * damping;
        let rhs = DVector::from_element(n, (1.0 - damping) / n as f64);
        let x = lhs.lu().solve(&rhs).expect("pagerank system is nonsingular");
        self.index.iter().map(|(&node, &i)| (node, x[i])).collect()
    }

    /// Limit of power iteration on `A + I` from the all-ones vector: its
    /// projection onto the top eigenspace, L2-normalized.
    pub fn eigencentrality(&self) -> BTreeMap<Node, f64> {
        let n = self.n();
        let shifted = self.adjacency() + DMatrix::identity(n, n);
        let eig = SymmetricEigen::new(shifted);
        let top = eig.eigenvalues.max();
        let ones = DVector::from_element(n, 1.0);
        let mut v = DVector::zeros(n);
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > top - 1e-9 * top.max(1.0) {
                let q = eig.eigenvectors.column(k);
                v += q * q.dot(&ones);
            }
        }
        let v = v.normalize();
        self.index.iter().map(|(&node, &i)| (node, v[i])).collect()
    }
}

/// Reference value of all nine features by linear scans over `edges`.
pub struct Reference {
    dense: Dense,
    pagerank: BTreeMap<Node, f64>,
    centrality: BTreeMap<Node, f64>,
}

impl Reference {
    pub fn new(edges: &[ReviewEdge]) -> Self {
        let dense = Dense::new(edges);
        let pagerank = dense.pagerank(0.85);
        let centrality = dense.eigencentrality();
        Reference {
            dense,
            pagerank,
            centrality,
        }
    }

    fn edges(&self) -> &[ReviewEdge] {
        &self.dense.edges
    }

    fn stars_of_user(&self, u: UserId) -> Vec<f64> {
        self.edges().iter().filter(|e| e.user == u).map(|e| f64::from(e.stars)).collect()
    }

    fn stars_of_business(&self, b: BusinessId) -> Vec<f64> {
        self.edges().iter().filter(|e| e.business == b).map(|e| f64::from(e.stars)).collect()
    }

    fn raters(&self, b: BusinessId) -> Vec<UserId> {
        self.edges().iter().filter(|e| e.business == b).map(|e| e.user).collect()
    }

    fn rated(&self, u: UserId) -> Vec<BusinessId> {
        self.edges().iter().filter(|e| e.user == u).map(|e| e.business).collect()
    }

    fn avg_given(&self, u: UserId) -> f64 {
        mean(&self.stars_of_user(u))
    }

    fn avg_received(&self, b: BusinessId) -> f64 {
        mean(&self.stars_of_business(b))
    }

    pub fn features(&self, u: UserId, b: BusinessId) -> [f64; N_FEATURES] {
        let others: Vec<UserId> = self.raters(b).into_iter().filter(|&v| v != u).collect();
        let other_b: Vec<BusinessId> = self.rated(u).into_iter().filter(|&c| c != b).collect();
        let avg_raters = mean(&others.iter().map(|&v| self.avg_given(v)).collect::<Vec<_>>());
        let avg_businesses = mean(&other_b.iter().map(|&c| self.avg_received(c)).collect::<Vec<_>>());
        let pa_rating = mean(&self.rated(u).iter().map(|&c| self.avg_received(c)).collect::<Vec<_>>())
            * mean(&self.raters(b).iter().map(|&v| self.avg_given(v)).collect::<Vec<_>>());
        let score = |m: &BTreeMap<Node, f64>| {
            m.get(&Node::User(u)).copied().unwrap_or(0.0) + m.get(&Node::Business(b)).copied().unwrap_or(0.0)
        };
        let aa: f64 = others.iter().map(|&v| 1.0 / self.stars_of_user(v).iter().sum::<f64>()).sum::<f64>()
            + other_b
                .iter()
                .map(|&c| 1.0 / self.stars_of_business(c).iter().sum::<f64>())
                .sum::<f64>();
        [
            others.len() as f64,
            other_b.len() as f64,
            avg_raters,
            avg_businesses,
            pa_rating,
            score(&self.pagerank),
            score(&self.centrality),
            aa,
            (self.rated(u).len() * self.raters(b).len()) as f64,
        ]
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// The `i`-th graph of the oracle family: even indices come from the
/// synthetic generator, odd ones are uniform edge sets over a sparse handle
/// space with gaps. All have at most 200 nodes.
pub fn oracle_graph(i: u64) -> Vec<ReviewEdge> {
    if i % 2 == 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + i);
        let n_users = rng.gen_range(20..=110);
        let n_businesses = rng.gen_range(10..=80);
        let n_edges = rng.gen_range(n_users..=(3 * n_users).min(n_users * n_businesses));
        let cfg = SynthConfig {
            n_users,
            n_businesses,
            n_edges,
            gamma: rng.gen_range(1.8..3.5),
            seed: i,
            ..SynthConfig::default()
        };
        generate(&cfg).unwrap().edges
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + i);
        let user_space = rng.gen_range(5..=120u32);
        let business_space = rng.gen_range(5..=80u32);
        let n = rng.gen_range(1..=300);
        let mut seen = BTreeSet::new();
        let mut edges = Vec::new();
        for t in 0..n {
            let u = rng.gen_range(0..user_space);
            let b = rng.gen_range(0..business_space);
            if seen.insert((u, b)) {
                edges.push(ReviewEdge::new(u, b, rng.gen_range(1..=5), t));
            }
        }
        edges
    }
}

/// Every edge of the graph plus up to 200 pairs that are not edges.
pub fn oracle_pairs(g: &BipartiteGraph, seed: u64) -> Vec<Pair> {
    let mut pairs = graph_pairs(g);
    let users: Vec<UserId> = g.user_ids().collect();
    let businesses: Vec<BusinessId> = g.business_ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let u = users[rng.gen_range(0..users.len())];
        let b = businesses[rng.gen_range(0..businesses.len())];
        if !g.has_edge(u, b) {
            pairs.push((u, b, 0.0));
        }
    }
    pairs
}

/// Largest deviation from the reference, split into (plain features,
/// centrality features).
pub fn max_feature_error(edges: &[ReviewEdge], seed: u64) -> (f64, f64) {
    let g = BipartiteGraph::from_edges(edges.to_vec()).unwrap();
    let ctx = FeatureContext::new(&g).unwrap();
    let pairs = oracle_pairs(&g, seed);
    let got = featurize(&ctx, &pairs).unwrap();
    let reference = Reference::new(edges);
    let (mut plain, mut central) = (0.0f64, 0.0f64);
    for row in &got.rows {
        let want = reference.features(row.user, row.business);
        for k in 0..N_FEATURES {
            let err = (row.features[k] - want[k]).abs();
            if CENTRALITY_COLUMNS.contains(&k) {
                central = central.max(err);
            } else {
                plain = plain.max(err);
            }
        }
    }
    (plain, central)
}
