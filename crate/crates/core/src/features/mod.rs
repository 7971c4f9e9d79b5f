//! Structural features of (user, business) pairs.
//!
//! Every feature is computed on the training graph only, whichever split the
//! pair comes from. The column order is fixed by [`FEATURE_NAMES`].
//!
//! "Common raters" of (u, b) are the other users who rated b, and "common
//! businesses" are the other businesses u rated. Averages over an empty set
//! are 0.

pub mod centrality;
pub mod standardize;

use std::io::{Read, Write};

use rayon::prelude::*;

pub use centrality::{
    eigenvector_centrality, pagerank, CentralityConfig, NodeScores, PageRankConfig,
};
pub use standardize::Standardizer;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::ingest::{BusinessId, IdMap, UserId};
use crate::matrix::Matrix;

pub const N_FEATURES: usize = 9;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "n_common_raters",
    "n_common_businesses",
    "avg_rating_common_raters",
    "avg_rating_common_businesses",
    "pref_attachment_rating",
    "pagerank_sum",
    "eigencentrality_sum",
    "adamic_adar",
    "pref_attachment_degree",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub user: UserId,
    pub business: BusinessId,
    pub features: [f64; N_FEATURES],
    pub target: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn design(&self) -> Matrix {
        let data = self.rows.iter().flat_map(|r| r.features).collect();
        Matrix::new(self.rows.len(), N_FEATURES, data).expect("rows have fixed width")
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }

    /// CSV with header `user_id,business_id,f1..f9,stars`.
    pub fn write_csv<W: Write>(&self, writer: W, ids: &IdMap) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["user_id".to_string(), "business_id".to_string()];
        header.extend((1..=N_FEATURES).map(|i| format!("f{i}")));
        header.push("stars".into());
        out.write_record(&header)?;
        for r in &self.rows {
            let mut record = vec![
                ids.user_name(r.user)
                    .ok_or_else(|| Error::lookup("user", r.user.0))?
                    .to_string(),
                ids.business_name(r.business)
                    .ok_or_else(|| Error::lookup("business", r.business.0))?
                    .to_string(),
            ];
            record.extend(r.features.iter().map(f64::to_string));
            record.push(r.target.to_string());
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, ids: &IdMap) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let width = N_FEATURES + 3;
        if input.headers()?.len() != width || &input.headers()?[2] != "f1" {
            return Err(Error::Parse {
                line: 1,
                message: "feature header must be `user_id,business_id,f1..f9,stars`".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, record) in input.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let number = |j: usize| -> Result<f64> {
                record[j].parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad number `{}`", &record[j]),
                })
            };
            let mut features = [0.0; N_FEATURES];
            for (k, f) in features.iter_mut().enumerate() {
                *f = number(k + 2)?;
            }
            rows.push(FeatureRow {
                user: ids.user(&record[0]).ok_or_else(|| Error::lookup("user", &record[0]))?,
                business: ids
                    .business(&record[1])
                    .ok_or_else(|| Error::lookup("business", &record[1]))?,
                features,
                target: number(width - 1)?,
            });
        }
        Ok(FeatureMatrix { rows })
    }
}

pub fn fit_standardizer(train: &FeatureMatrix) -> Result<Standardizer> {
    Standardizer::fit(&train.design())
}

pub fn apply_standardizer(s: &Standardizer, m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if s.width() != N_FEATURES {
        return Err(Error::Shape {
            expected: N_FEATURES,
            got: s.width(),
        });
    }
    let rows = m
        .rows
        .iter()
        .map(|r| {
            let mut r = r.clone();
            s.apply_row(&mut r.features);
            r
        })
        .collect();
    Ok(FeatureMatrix { rows })
}

fn check_pair(g: &BipartiteGraph, u: UserId, b: BusinessId) -> Result<()> {
    if g.has_user(u) && g.has_business(b) {
        Ok(())
    } else {
        Err(Error::lookup("pair", format!("({}, {})", u.0, b.0)))
    }
}

fn user_mean(g: &BipartiteGraph, v: u32) -> f64 {
    let v = v as usize;
    g.user_star_sum_raw(v) as f64 / g.user_degree_raw(v) as f64
}

fn business_mean(g: &BipartiteGraph, b: u32) -> f64 {
    let b = b as usize;
    g.business_star_sum_raw(b) as f64 / g.business_degree_raw(b) as f64
}

/// Other users who rated `b`.
pub fn common_raters(g: &BipartiteGraph, u: UserId, b: BusinessId) -> Result<Vec<UserId>> {
    check_pair(g, u, b)?;
    Ok(g.business_row(b.index())
        .neighbors
        .iter()
        .filter(|&&v| v != u.0)
        .map(|&v| UserId(v))
        .collect())
}

/// Other businesses rated by `u`.
pub fn common_businesses(g: &BipartiteGraph, u: UserId, b: BusinessId) -> Result<Vec<BusinessId>> {
    check_pair(g, u, b)?;
    Ok(g.user_row(u.index())
        .neighbors
        .iter()
        .filter(|&&c| c != b.0)
        .map(|&c| BusinessId(c))
        .collect())
}

/// Mean over the common raters of the mean rating each of them gives.
pub fn avg_rating_common_raters(g: &BipartiteGraph, u: UserId, b: BusinessId) -> Result<f64> {
    check_pair(g, u, b)?;
    Ok(raters_mean(g, u, b))
}

/// Mean over the common businesses of the mean rating each receives.
pub fn avg_rating_common_businesses(g: &BipartiteGraph, u: UserId, b: BusinessId) -> Result<f64> {
    check_pair(g, u, b)?;
    Ok(businesses_mean(g, u, b))
}

fn raters_mean(g: &BipartiteGraph, u: UserId, b: BusinessId) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for &v in g.business_row(b.index()).neighbors {
        if v != u.0 {
            sum += user_mean(g, v);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn businesses_mean(g: &BipartiteGraph, u: UserId, b: BusinessId) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for &c in g.user_row(u.index()).neighbors {
        if c != b.0 {
            sum += business_mean(g, c);
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Mean received rating over all of u's businesses.
fn user_neighborhood_mean(g: &BipartiteGraph, u: usize) -> f64 {
    let row = g.user_row(u);
    row.neighbors.iter().map(|&c| business_mean(g, c)).sum::<f64>() / row.len() as f64
}

/// Mean given rating over all of b's raters.
fn business_neighborhood_mean(g: &BipartiteGraph, b: usize) -> f64 {
    let row = g.business_row(b);
    row.neighbors.iter().map(|&v| user_mean(g, v)).sum::<f64>() / row.len() as f64
}

/// Rating form of preferential attachment: (mean rating received by u's
/// businesses) x (mean rating given by b's raters).
pub fn pref_attachment_rating(g: &BipartiteGraph, u: UserId, b: BusinessId) -> Result<f64> {
    check_pair(g, u, b)?;
    Ok(user_neighborhood_mean(g, u.index()) * business_neighborhood_mean(g, b.index()))
}

/// Sum of inverse weighted degrees over common raters and common businesses.
pub fn adamic_adar(g: &BipartiteGraph, u: UserId, b: BusinessId) -> Result<f64> {
    check_pair(g, u, b)?;
    Ok(adamic_adar_unchecked(g, u, b))
}

fn adamic_adar_unchecked(g: &BipartiteGraph, u: UserId, b: BusinessId) -> f64 {
    let mut total = 0.0;
    for &v in g.business_row(b.index()).neighbors {
        if v != u.0 {
            total += 1.0 / g.user_star_sum_raw(v as usize) as f64;
        }
    }
    for &c in g.user_row(u.index()).neighbors {
        if c != b.0 {
            total += 1.0 / g.business_star_sum_raw(c as usize) as f64;
        }
    }
    total
}

/// |N(u)| * |N(b)|.
pub fn pref_attachment_degree(g: &BipartiteGraph, u: UserId, b: BusinessId) -> Result<f64> {
    check_pair(g, u, b)?;
    Ok((g.user_degree_raw(u.index()) * g.business_degree_raw(b.index())) as f64)
}

/// Whole-graph quantities cached once so each pair costs O(deg).
#[derive(Debug)]
pub struct FeatureContext<'g> {
    graph: &'g BipartiteGraph,
    pub pagerank: NodeScores,
    pub centrality: NodeScores,
    user_neighborhood: Vec<f64>,
    business_neighborhood: Vec<f64>,
}

impl<'g> FeatureContext<'g> {
    pub fn new(graph: &'g BipartiteGraph) -> Result<Self> {
        Self::with_configs(graph, &PageRankConfig::default(), &CentralityConfig::default())
    }

    pub fn with_configs(
        graph: &'g BipartiteGraph,
        pr: &PageRankConfig,
        ec: &CentralityConfig,
    ) -> Result<Self> {
        let pagerank = pagerank(graph, pr)?;
        let centrality = eigenvector_centrality(graph, ec)?;
        let user_neighborhood = (0..graph.user_space())
            .into_par_iter()
            .map(|u| {
                if graph.user_degree_raw(u) == 0 {
                    0.0
                } else {
                    user_neighborhood_mean(graph, u)
                }
            })
            .collect();
        let business_neighborhood = (0..graph.business_space())
            .into_par_iter()
            .map(|b| {
                if graph.business_degree_raw(b) == 0 {
                    0.0
                } else {
                    business_neighborhood_mean(graph, b)
                }
            })
            .collect();
        Ok(FeatureContext {
            graph,
            pagerank,
            centrality,
            user_neighborhood,
            business_neighborhood,
        })
    }

    pub fn graph(&self) -> &BipartiteGraph {
        self.graph
    }

    /// The nine features of one pair, in [`FEATURE_NAMES`] order.
    pub fn pair_features(&self, u: UserId, b: BusinessId) -> Result<[f64; N_FEATURES]> {
        let g = self.graph;
        check_pair(g, u, b)?;
        let (ui, bi) = (u.index(), b.index());
        let raters = g.business_row(bi);
        let businesses = g.user_row(ui);
        let n_raters = raters.len() - usize::from(raters.contains(u.0));
        let n_businesses = businesses.len() - usize::from(businesses.contains(b.0));
        Ok([
            n_raters as f64,
            n_businesses as f64,
            raters_mean(g, u, b),
            businesses_mean(g, u, b),
            self.user_neighborhood[ui] * self.business_neighborhood[bi],
            self.pagerank.users[ui] + self.pagerank.businesses[bi],
            self.centrality.users[ui] + self.centrality.businesses[bi],
            adamic_adar_unchecked(g, u, b),
            (businesses.len() * raters.len()) as f64,
        ])
    }
}

/// A (user, business, target) triple to featurize.
pub type Pair = (UserId, BusinessId, f64);

/// The labelled pairs of a graph, in its canonical edge order.
pub fn graph_pairs(g: &BipartiteGraph) -> Vec<Pair> {
    g.edges()
        .iter()
        .map(|e| (e.user, e.business, f64::from(e.stars)))
        .collect()
}

/// One row per pair, in input order. Runs on the current rayon pool; the
/// output does not depend on its size.
pub fn featurize(ctx: &FeatureContext<'_>, pairs: &[Pair]) -> Result<FeatureMatrix> {
    let rows = pairs
        .par_iter()
        .map(|&(user, business, target)| {
            ctx.pair_features(user, business).map(|features| FeatureRow {
                user,
                business,
                features,
                target,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix { rows })
}
