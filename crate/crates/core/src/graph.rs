//! Immutable bipartite review graph in compressed sparse row form.
//!
//! Users and businesses each get their own offset/neighbor arrays, sorted by
//! neighbor id, so every edge is stored twice (once per side). Node handles
//! come from the ingest [`IdMap`](crate::ingest::IdMap) and the graph keeps the
//! full handle space; a handle with no incident edges is not a node of this
//! graph and lookups on it fail. Splits share the parent's handle space.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BusinessId, ReviewEdge, Timestamp, UserId};

/// Either side of the bipartite graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    User(UserId),
    Business(BusinessId),
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    stars: Vec<u8>,
    timestamps: Vec<Timestamp>,
}

impl Csr {
    /// `entries` are (row, neighbor, stars, timestamp) and get sorted here.
    fn build(rows: usize, mut entries: Vec<(u32, u32, u8, Timestamp)>) -> Self {
        entries.sort_unstable_by_key(|&(r, n, _, _)| (r, n));
        let mut offsets = vec![0usize; rows + 1];
        for &(r, ..) in &entries {
            offsets[r as usize + 1] += 1;
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        Csr {
            offsets,
            neighbors: entries.iter().map(|e| e.1).collect(),
            stars: entries.iter().map(|e| e.2).collect(),
            timestamps: entries.iter().map(|e| e.3).collect(),
        }
    }

    fn row(&self, r: usize) -> Adjacency<'_> {
        let (lo, hi) = (self.offsets[r], self.offsets[r + 1]);
        Adjacency {
            neighbors: &self.neighbors[lo..hi],
            stars: &self.stars[lo..hi],
            timestamps: &self.timestamps[lo..hi],
        }
    }

    fn degree(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }
}

/// Borrowed view of one node's adjacency, sorted by neighbor id.
#[derive(Debug, Clone, Copy)]
pub struct Adjacency<'a> {
    pub neighbors: &'a [u32],
    pub stars: &'a [u8],
    pub timestamps: &'a [Timestamp],
}

impl<'a> Adjacency<'a> {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.neighbors.binary_search(&id).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u8)> + 'a {
        self.neighbors.iter().copied().zip(self.stars.iter().copied())
    }

    pub fn star_sum(&self) -> u64 {
        self.stars.iter().map(|&s| u64::from(s)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    user_space: usize,
    business_space: usize,
    users: Csr,
    businesses: Csr,
    /// All edges in (timestamp, user, business) order.
    edges: Vec<ReviewEdge>,
    user_star_sum: Vec<u64>,
    business_star_sum: Vec<u64>,
    n_users: usize,
    n_businesses: usize,
}

impl BipartiteGraph {
    /// Builds a graph whose handle space is just large enough for `edges`.
    pub fn from_edges(edges: Vec<ReviewEdge>) -> Result<Self> {
        let user_space = edges.iter().map(|e| e.user.index() + 1).max().unwrap_or(0);
        let business_space = edges.iter().map(|e| e.business.index() + 1).max().unwrap_or(0);
        Self::with_id_space(edges, user_space, business_space)
    }

    /// Builds a graph over a fixed handle space. Edges must be deduplicated.
    pub fn with_id_space(
        mut edges: Vec<ReviewEdge>,
        user_space: usize,
        business_space: usize,
    ) -> Result<Self> {
        for e in &edges {
            if e.user.index() >= user_space || e.business.index() >= business_space {
                return Err(Error::Construction(format!(
                    "edge ({}, {}) outside id space {user_space}x{business_space}",
                    e.user.0, e.business.0
                )));
            }
            if !(1..=5).contains(&e.stars) {
                return Err(Error::Construction(format!("stars {} outside [1,5]", e.stars)));
            }
        }
        edges.sort_unstable_by_key(ReviewEdge::sort_key);

        let users = Csr::build(
            user_space,
            edges
                .iter()
                .map(|e| (e.user.0, e.business.0, e.stars, e.timestamp))
                .collect(),
        );
        for u in 0..user_space {
            let row = users.row(u);
            if let Some(w) = row.neighbors.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::Construction(format!(
                    "duplicate edge (user {u}, business {})",
                    w[0]
                )));
            }
        }
        let businesses = Csr::build(
            business_space,
            edges
                .iter()
                .map(|e| (e.business.0, e.user.0, e.stars, e.timestamp))
                .collect(),
        );

        let user_star_sum: Vec<u64> = (0..user_space).map(|u| users.row(u).star_sum()).collect();
        let business_star_sum: Vec<u64> =
            (0..business_space).map(|b| businesses.row(b).star_sum()).collect();
        let n_users = (0..user_space).filter(|&u| users.degree(u) > 0).count();
        let n_businesses = (0..business_space).filter(|&b| businesses.degree(b) > 0).count();

        Ok(BipartiteGraph {
            user_space,
            business_space,
            users,
            businesses,
            edges,
            user_star_sum,
            business_star_sum,
            n_users,
            n_businesses,
        })
    }

    pub fn empty() -> Self {
        Self::with_id_space(Vec::new(), 0, 0).expect("empty graph")
    }

    /// Users with at least one edge.
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_businesses(&self) -> usize {
        self.n_businesses
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_businesses
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn user_space(&self) -> usize {
        self.user_space
    }

    pub fn business_space(&self) -> usize {
        self.business_space
    }

    /// Edges in (timestamp, user, business) order.
    pub fn edges(&self) -> &[ReviewEdge] {
        &self.edges
    }

    pub fn has_user(&self, u: UserId) -> bool {
        u.index() < self.user_space && self.users.degree(u.index()) > 0
    }

    pub fn has_business(&self, b: BusinessId) -> bool {
        b.index() < self.business_space && self.businesses.degree(b.index()) > 0
    }

    pub fn has_node(&self, node: Node) -> bool {
        match node {
            Node::User(u) => self.has_user(u),
            Node::Business(b) => self.has_business(b),
        }
    }

    pub fn user_ids(&self) -> impl Iterator<Item = UserId> + '_ {
        (0..self.user_space as u32)
            .map(UserId)
            .filter(|&u| self.has_user(u))
    }

    pub fn business_ids(&self) -> impl Iterator<Item = BusinessId> + '_ {
        (0..self.business_space as u32)
            .map(BusinessId)
            .filter(|&b| self.has_business(b))
    }

    fn check_user(&self, u: UserId) -> Result<usize> {
        if self.has_user(u) {
            Ok(u.index())
        } else {
            Err(Error::lookup("user", u.0))
        }
    }

    fn check_business(&self, b: BusinessId) -> Result<usize> {
        if self.has_business(b) {
            Ok(b.index())
        } else {
            Err(Error::lookup("business", b.0))
        }
    }

    /// Businesses reviewed by `u`, sorted by id.
    pub fn user_adjacency(&self, u: UserId) -> Result<Adjacency<'_>> {
        Ok(self.users.row(self.check_user(u)?))
    }

    /// Users who reviewed `b`, sorted by id.
    pub fn business_adjacency(&self, b: BusinessId) -> Result<Adjacency<'_>> {
        Ok(self.businesses.row(self.check_business(b)?))
    }

    pub fn user_neighbors(&self, u: UserId) -> Result<Vec<(BusinessId, u8)>> {
        Ok(self
            .user_adjacency(u)?
            .iter()
            .map(|(b, s)| (BusinessId(b), s))
            .collect())
    }

    pub fn business_neighbors(&self, b: BusinessId) -> Result<Vec<(UserId, u8)>> {
        Ok(self
            .business_adjacency(b)?
            .iter()
            .map(|(u, s)| (UserId(u), s))
            .collect())
    }

    pub fn has_edge(&self, u: UserId, b: BusinessId) -> bool {
        self.has_user(u) && self.users.row(u.index()).contains(b.0)
    }

    pub fn degree(&self, node: Node) -> Result<usize> {
        match node {
            Node::User(u) => Ok(self.users.degree(self.check_user(u)?)),
            Node::Business(b) => Ok(self.businesses.degree(self.check_business(b)?)),
        }
    }

    /// Sum of the stars on all incident edges.
    pub fn weighted_degree(&self, node: Node) -> Result<u64> {
        match node {
            Node::User(u) => Ok(self.user_star_sum[self.check_user(u)?]),
            Node::Business(b) => Ok(self.business_star_sum[self.check_business(b)?]),
        }
    }

    /// Mean stars given by `u`.
    pub fn avg_rating_given(&self, u: UserId) -> Result<f64> {
        let i = self.check_user(u)?;
        Ok(self.user_star_sum[i] as f64 / self.users.degree(i) as f64)
    }

    /// Mean stars received by `b`.
    pub fn avg_rating_received(&self, b: BusinessId) -> Result<f64> {
        let i = self.check_business(b)?;
        Ok(self.business_star_sum[i] as f64 / self.businesses.degree(i) as f64)
    }

    /// Raw per-handle degree, 0 for absent handles. Used by the kernels
    /// that already iterate over valid handles.
    pub(crate) fn user_degree_raw(&self, u: usize) -> usize {
        self.users.degree(u)
    }

    pub(crate) fn business_degree_raw(&self, b: usize) -> usize {
        self.businesses.degree(b)
    }

    pub(crate) fn user_row(&self, u: usize) -> Adjacency<'_> {
        self.users.row(u)
    }

    pub(crate) fn business_row(&self, b: usize) -> Adjacency<'_> {
        self.businesses.row(b)
    }

    pub(crate) fn user_star_sum_raw(&self, u: usize) -> u64 {
        self.user_star_sum[u]
    }

    pub(crate) fn business_star_sum_raw(&self, b: usize) -> u64 {
        self.business_star_sum[b]
    }

    /// |E| / (|U| * |B|) over present nodes; 0 for an empty graph.
    pub fn density(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.n_edges() as f64 / (self.n_users as f64 * self.n_businesses as f64)
    }

    /// Full scan of the mirror invariant: both adjacency sides hold the same
    /// edge multiset and degree totals equal |E|.
    pub fn check_mirror(&self) -> bool {
        let user_total: usize = (0..self.user_space).map(|u| self.users.degree(u)).sum();
        let business_total: usize = (0..self.business_space)
            .map(|b| self.businesses.degree(b))
            .sum();
        if user_total != self.n_edges() || business_total != self.n_edges() {
            return false;
        }
        (0..self.user_space).all(|u| {
            let row = self.users.row(u);
            (0..row.len()).all(|k| {
                let b = row.neighbors[k] as usize;
                let back = self.businesses.row(b);
                match back.neighbors.binary_search(&(u as u32)) {
                    Ok(j) => back.stars[j] == row.stars[k] && back.timestamps[j] == row.timestamps[k],
                    Err(_) => false,
                }
            })
        })
    }
}

/// Train/validation/test graphs cut at two timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSplit {
    pub train: BipartiteGraph,
    pub validation: BipartiteGraph,
    pub test: BipartiteGraph,
    /// Train edges are `< cuts.0`, validation edges in `[cuts.0, cuts.1)`,
    /// test edges `>= cuts.1`.
    pub cuts: (Timestamp, Timestamp),
    /// Validation and test edges removed because an endpoint is not in train.
    pub dropped_validation: usize,
    pub dropped_test: usize,
}

fn quantile_index(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).min(n)
}

/// Splits the edges by time at the `train_frac` and `train_frac + val_frac`
/// count quantiles, then drops validation/test edges whose user or business
/// never appears in train.
pub fn temporal_split(g: &BipartiteGraph, train_frac: f64, val_frac: f64) -> Result<TemporalSplit> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Split(format!(
            "fractions ({train_frac}, {val_frac}) must be positive with sum < 1"
        )));
    }
    if g.is_empty() {
        return Err(Error::Split("empty graph".into()));
    }
    let edges = g.edges();
    let n = edges.len();
    let cut_at = |i: usize| {
        if i < n {
            edges[i].timestamp
        } else {
            edges[n - 1].timestamp + 1
        }
    };
    let t1 = cut_at(quantile_index(n, train_frac));
    let t2 = cut_at(quantile_index(n, train_frac + val_frac)).max(t1);

    let train_edges: Vec<ReviewEdge> = edges.iter().copied().filter(|e| e.timestamp < t1).collect();
    if train_edges.is_empty() {
        return Err(Error::Split("training partition is empty".into()));
    }
    let train = BipartiteGraph::with_id_space(train_edges, g.user_space(), g.business_space())?;

    let closed = |lo: Timestamp, hi: Option<Timestamp>| -> Result<(BipartiteGraph, usize)> {
        let window = edges
            .iter()
            .filter(|e| e.timestamp >= lo && hi.map_or(true, |h| e.timestamp < h));
        let mut dropped = 0;
        let mut kept = Vec::new();
        for e in window {
            if train.has_user(e.user) && train.has_business(e.business) {
                kept.push(*e);
            } else {
                dropped += 1;
            }
        }
        let graph = BipartiteGraph::with_id_space(kept, g.user_space(), g.business_space())?;
        Ok((graph, dropped))
    };
    let (validation, dropped_validation) = closed(t1, Some(t2))?;
    let (test, dropped_test) = closed(t2, None)?;

    Ok(TemporalSplit {
        train,
        validation,
        test,
        cuts: (t1, t2),
        dropped_validation,
        dropped_test,
    })
}

/// Summary header of a graph snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub user_space: usize,
    pub business_space: usize,
    pub edges: usize,
    pub cuts: Option<(Timestamp, Timestamp)>,
}

const SNAPSHOT_MAGIC: &str = "#rategraph-graph v1";

/// Writes a text snapshot: magic line, a counts/cuts line, then one
/// `user,business,stars,unix_ts` row per edge in canonical order.
pub fn write_snapshot<W: Write>(
    mut writer: W,
    g: &BipartiteGraph,
    cuts: Option<(Timestamp, Timestamp)>,
) -> Result<()> {
    writeln!(writer, "{SNAPSHOT_MAGIC}")?;
    let (c1, c2) = match cuts {
        Some((a, b)) => (a.to_string(), b.to_string()),
        None => ("-".to_string(), "-".to_string()),
    };
    writeln!(
        writer,
        "user_space={} business_space={} edges={} cut1={c1} cut2={c2}",
        g.user_space(),
        g.business_space(),
        g.n_edges()
    )?;
    writeln!(writer, "user,business,stars,unix_ts")?;
    for e in g.edges() {
        writeln!(writer, "{},{},{},{}", e.user.0, e.business.0, e.stars, e.timestamp)?;
    }
    writer.flush()?;
    Ok(())
}

fn snapshot_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn read_snapshot<R: Read>(mut reader: R) -> Result<(BipartiteGraph, SnapshotHeader)> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut lines = text.lines();
    if lines.next() != Some(SNAPSHOT_MAGIC) {
        return Err(snapshot_error(1, "not a graph snapshot"));
    }
    let counts = lines.next().ok_or_else(|| snapshot_error(2, "missing header"))?;
    let mut fields = std::collections::HashMap::new();
    for kv in counts.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| snapshot_error(2, format!("bad header field `{kv}`")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| snapshot_error(2, format!("missing `{k}`")))
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| snapshot_error(2, format!("bad `{k}`")))
    };
    let cut = |k: &str| -> Result<Option<Timestamp>> {
        match get(k)? {
            "-" => Ok(None),
            v => v
                .parse()
                .map(Some)
                .map_err(|_| snapshot_error(2, format!("bad `{k}`"))),
        }
    };
    let cuts = match (cut("cut1")?, cut("cut2")?) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(snapshot_error(2, "cuts must both be set or both be `-`")),
    };
    let header = SnapshotHeader {
        user_space: num("user_space")?,
        business_space: num("business_space")?,
        edges: num("edges")?,
        cuts,
    };
    if lines.next() != Some("user,business,stars,unix_ts") {
        return Err(snapshot_error(3, "missing edge header"));
    }
    let mut edges = Vec::with_capacity(header.edges);
    for (i, line) in lines.enumerate() {
        let line_no = i + 4;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(snapshot_error(line_no, "expected 4 fields"));
        }
        let bad = || snapshot_error(line_no, format!("bad edge `{line}`"));
        edges.push(ReviewEdge {
            user: UserId(parts[0].parse().map_err(|_| bad())?),
            business: BusinessId(parts[1].parse().map_err(|_| bad())?),
            stars: parts[2].parse().map_err(|_| bad())?,
            timestamp: parts[3].parse().map_err(|_| bad())?,
        });
    }
    if edges.len() != header.edges {
        return Err(snapshot_error(
            2,
            format!("header says {} edges, found {}", header.edges, edges.len()),
        ));
    }
    let g = BipartiteGraph::with_id_space(edges, header.user_space, header.business_space)?;
    Ok((g, header))
}
