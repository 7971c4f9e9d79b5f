//! Whole-graph centralities on the unweighted, undirected view of the
//! review graph. Only nodes with at least one edge take part; absent handles
//! score 0.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Node};
use crate::ingest::{BusinessId, UserId};

/// One score per user handle and per business handle.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeScores {
    pub users: Vec<f64>,
    pub businesses: Vec<f64>,
}

impl NodeScores {
    fn zeros(g: &BipartiteGraph) -> Self {
        NodeScores {
            users: vec![0.0; g.user_space()],
            businesses: vec![0.0; g.business_space()],
        }
    }

    pub fn get(&self, node: Node) -> f64 {
        match node {
            Node::User(u) => self.users[u.index()],
            Node::Business(b) => self.businesses[b.index()],
        }
    }

    pub fn sum(&self) -> f64 {
        self.users.iter().sum::<f64>() + self.businesses.iter().sum::<f64>()
    }

    /// L1 distance, summed sequentially so the value never depends on the
    /// thread count.
    fn l1_distance(&self, other: &NodeScores) -> f64 {
        let side = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum() };
        side(&self.users, &other.users) + side(&self.businesses, &other.businesses)
    }

    fn l2_norm(&self) -> f64 {
        self.users
            .iter()
            .chain(&self.businesses)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        self.users.par_iter_mut().for_each(|x| *x *= factor);
        self.businesses.par_iter_mut().for_each(|x| *x *= factor);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        PageRankConfig {
            damping: 0.85,
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralityConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CentralityConfig {
    fn default() -> Self {
        CentralityConfig {
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

/// PageRank by power iteration, each undirected edge acting as two directed
/// ones. Stops once the L1 change between sweeps drops below `tol`.
pub fn pagerank(g: &BipartiteGraph, cfg: &PageRankConfig) -> Result<NodeScores> {
    if g.is_empty() {
        return Err(Error::Input("pagerank of an empty graph".into()));
    }
    let n = g.n_nodes() as f64;
    let teleport = (1.0 - cfg.damping) / n;

    let mut scores = NodeScores::zeros(g);
    for u in g.user_ids() {
        scores.users[u.index()] = 1.0 / n;
    }
    for b in g.business_ids() {
        scores.businesses[b.index()] = 1.0 / n;
    }

    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        // share of each node's score sent along every incident edge
        let user_out: Vec<f64> = (0..g.user_space())
            .into_par_iter()
            .map(|u| match g.user_degree_raw(u) {
                0 => 0.0,
                d => scores.users[u] / d as f64,
            })
            .collect();
        let business_out: Vec<f64> = (0..g.business_space())
            .into_par_iter()
            .map(|b| match g.business_degree_raw(b) {
                0 => 0.0,
                d => scores.businesses[b] / d as f64,
            })
            .collect();

        let next = NodeScores {
            users: (0..g.user_space())
                .into_par_iter()
                .map(|u| {
                    let row = g.user_row(u);
                    if row.is_empty() {
                        return 0.0;
                    }
                    let inflow: f64 = row.neighbors.iter().map(|&b| business_out[b as usize]).sum();
                    teleport + cfg.damping * inflow
                })
                .collect(),
            businesses: (0..g.business_space())
                .into_par_iter()
                .map(|b| {
                    let row = g.business_row(b);
                    if row.is_empty() {
                        return 0.0;
                    }
                    let inflow: f64 = row.neighbors.iter().map(|&u| user_out[u as usize]).sum();
                    teleport + cfg.damping * inflow
                })
                .collect(),
        };
        residual = next.l1_distance(&scores);
        scores = next;
        if residual < cfg.tol {
            return Ok(scores);
        }
    }
    Err(Error::Convergence {
        what: "pagerank",
        iterations: cfg.max_iter,
        residual,
    })
}

/// One connected component with a local CSR adjacency. Users come first in
/// `nodes`, in the order breadth-first search reached them.
struct Component {
    nodes: Vec<Node>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

fn components(g: &BipartiteGraph) -> Vec<Component> {
    const UNSEEN: u32 = u32::MAX;
    let mut user_local = vec![UNSEEN; g.user_space()];
    let mut business_local = vec![UNSEEN; g.business_space()];
    let mut out = Vec::new();
    for start in g.user_ids() {
        if user_local[start.index()] != UNSEEN {
            continue;
        }
        let mut nodes = vec![Node::User(start)];
        user_local[start.index()] = 0;
        let mut head = 0;
        while head < nodes.len() {
            match nodes[head] {
                Node::User(u) => {
                    for &b in g.user_row(u.index()).neighbors {
                        if business_local[b as usize] == UNSEEN {
                            business_local[b as usize] = nodes.len() as u32;
                            nodes.push(Node::Business(BusinessId(b)));
                        }
                    }
                }
                Node::Business(b) => {
                    for &u in g.business_row(b.index()).neighbors {
                        if user_local[u as usize] == UNSEEN {
                            user_local[u as usize] = nodes.len() as u32;
                            nodes.push(Node::User(UserId(u)));
                        }
                    }
                }
            }
            head += 1;
        }
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for node in &nodes {
            match *node {
                Node::User(u) => neighbors.extend(
                    g.user_row(u.index()).neighbors.iter().map(|&b| business_local[b as usize]),
                ),
                Node::Business(b) => neighbors.extend(
                    g.business_row(b.index()).neighbors.iter().map(|&u| user_local[u as usize]),
                ),
            }
            offsets.push(neighbors.len());
        }
        out.push(Component {
            nodes,
            offsets,
            neighbors,
        });
    }
    out
}

/// Components at least this large run their sweeps on the rayon pool.
const PARALLEL_COMPONENT: usize = 4096;

struct Dominant {
    vector: Vec<f64>,
    /// Top adjacency eigenvalue of the component.
    eigenvalue: f64,
}

fn l2_normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    norm
}

impl Component {
    fn neighbor_sum(&self, v: &[f64], i: usize) -> f64 {
        self.neighbors[self.offsets[i]..self.offsets[i + 1]]
            .iter()
            .map(|&j| v[j as usize])
            .sum()
    }

    /// `A v`
    fn multiply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.nodes.len();
        if n >= PARALLEL_COMPONENT {
            (0..n).into_par_iter().map(|i| self.neighbor_sum(v, i)).collect()
        } else {
            (0..n).map(|i| self.neighbor_sum(v, i)).collect()
        }
    }

    /// Joins a unit user-side vector `x` and `y = A x` into a unit
    /// eigenvector estimate; both halves carry equal mass.
    fn join(x: &[f64], y: &[f64]) -> (Vec<f64>, f64) {
        let lambda = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let half = std::f64::consts::FRAC_1_SQRT_2;
        let v = x.iter().zip(y).map(|(a, b)| (a + b / lambda) * half).collect();
        (v, lambda)
    }

    /// Power iteration on the user block of `A^2`, which is non-negative
    /// and does not oscillate. Its convergence rate per step is the square
    /// of the adjacency eigenvalue ratio.
    fn dominant(&self, cfg: &CentralityConfig) -> Result<Dominant> {
        let mut x: Vec<f64> = self
            .nodes
            .iter()
            .map(|n| if matches!(n, Node::User(_)) { 1.0 } else { 0.0 })
            .collect();
        l2_normalize(&mut x);
        let mut y = self.multiply(&x);
        let (mut v, _) = Self::join(&x, &y);
        let mut residual = f64::INFINITY;
        for _ in 0..cfg.max_iter {
            x = self.multiply(&y);
            l2_normalize(&mut x);
            y = self.multiply(&x);
            let (next, lambda) = Self::join(&x, &y);
            residual = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            if residual < cfg.tol {
                return Ok(Dominant {
                    vector: v,
                    eigenvalue: lambda,
                });
            }
        }
        Err(Error::Convergence {
            what: "eigenvector centrality",
            iterations: cfg.max_iter,
            residual,
        })
    }
}

/// Dominant eigenvector of the adjacency matrix, L2-normalized and
/// non-negative: the limit of power iteration from the all-ones vector.
///
/// Each connected component is iterated on its own. Components whose top
/// eigenvalue ties the global maximum share the mass in proportion to their
/// overlap with the all-ones start; every other node scores 0. Iterating the
/// whole graph at once gives the same limit, but converges at the rate of
/// the gap between components, which can be arbitrarily small.
pub fn eigenvector_centrality(g: &BipartiteGraph, cfg: &CentralityConfig) -> Result<NodeScores> {
    if g.is_empty() {
        return Err(Error::Input("eigenvector centrality of an empty graph".into()));
    }
    let comps = components(g);
    let dominant = comps
        .par_iter()
        .map(|c| c.dominant(cfg))
        .collect::<Result<Vec<_>>>()?;
    let top = dominant.iter().map(|d| d.eigenvalue).fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-9 * top.max(1.0);

    let mut scores = NodeScores::zeros(g);
    for (c, d) in comps.iter().zip(&dominant) {
        if d.eigenvalue < top - tie {
            continue;
        }
        let weight: f64 = d.vector.iter().sum();
        for (node, x) in c.nodes.iter().zip(&d.vector) {
            match *node {
                Node::User(u) => scores.users[u.index()] = weight * x,
                Node::Business(b) => scores.businesses[b.index()] = weight * x,
            }
        }
    }
    let norm = scores.l2_norm();
    scores.scale(1.0 / norm);
    Ok(scores)
}
