//! Descriptive statistics of a review graph, written as CSV for plotting.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Datelike};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::ingest::ReviewEdge;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

/// Half-open bin `[lo, hi)`; discrete keys use `hi = lo + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    pub scale: Scale,
}

impl Histogram {
    fn discrete(counts: BTreeMap<i64, u64>, scale: Scale) -> Self {
        let bins = counts
            .into_iter()
            .map(|(k, count)| Bin {
                label: k.to_string(),
                lo: k as f64,
                hi: (k + 1) as f64,
                count,
            })
            .collect();
        Histogram { bins, scale }
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `(key, count)` for every bin.
    pub fn counts(&self) -> Vec<(&str, u64)> {
        self.bins.iter().map(|b| (b.label.as_str(), b.count)).collect()
    }

    /// CSV with header `key,count`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["key", "count"])?;
        for b in &self.bins {
            out.write_record([b.label.clone(), b.count.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    User,
    Business,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatingMode {
    PerEdge,
    PerUserAverage,
    PerBusinessAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeBin {
    Day,
    Month,
}

fn non_empty(g: &BipartiteGraph) -> Result<()> {
    if g.is_empty() {
        return Err(Error::Stat("statistics need a non-empty graph".into()));
    }
    Ok(())
}

/// Number of nodes on one side at each degree. Log-scaled for plotting.
pub fn degree_histogram(g: &BipartiteGraph, side: Side) -> Result<Histogram> {
    non_empty(g)?;
    let mut counts = BTreeMap::new();
    let degrees: Vec<usize> = match side {
        Side::User => (0..g.user_space()).map(|u| g.user_degree_raw(u)).collect(),
        Side::Business => (0..g.business_space()).map(|b| g.business_degree_raw(b)).collect(),
    };
    for d in degrees.into_iter().filter(|&d| d > 0) {
        *counts.entry(d as i64).or_insert(0) += 1;
    }
    Ok(Histogram::discrete(counts, Scale::Log))
}

pub const AVERAGE_BIN_WIDTH: f64 = 0.25;

/// Per-edge mode counts stars 1..5. The average modes bin node means over
/// [1, 5] in quarter-star bins; the last bin is closed so 5.0 is counted.
pub fn rating_histogram(g: &BipartiteGraph, mode: RatingMode) -> Result<Histogram> {
    non_empty(g)?;
    let means: Vec<f64> = match mode {
        RatingMode::PerEdge => {
            let mut counts = BTreeMap::new();
            for e in g.edges() {
                *counts.entry(e.stars as i64).or_insert(0) += 1;
            }
            return Ok(Histogram::discrete(counts, Scale::Linear));
        }
        RatingMode::PerUserAverage => (0..g.user_space())
            .filter(|&u| g.user_degree_raw(u) > 0)
            .map(|u| g.user_star_sum_raw(u) as f64 / g.user_degree_raw(u) as f64)
            .collect(),
        RatingMode::PerBusinessAverage => (0..g.business_space())
            .filter(|&b| g.business_degree_raw(b) > 0)
            .map(|b| g.business_star_sum_raw(b) as f64 / g.business_degree_raw(b) as f64)
            .collect(),
    };
    let n_bins = (4.0 / AVERAGE_BIN_WIDTH) as usize;
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|i| {
            let lo = 1.0 + i as f64 * AVERAGE_BIN_WIDTH;
            Bin {
                label: format!("{lo:.2}"),
                lo,
                hi: lo + AVERAGE_BIN_WIDTH,
                count: 0,
            }
        })
        .collect();
    for m in means {
        let i = (((m - 1.0) / AVERAGE_BIN_WIDTH).floor() as usize).min(n_bins - 1);
        bins[i].count += 1;
    }
    Ok(Histogram {
        bins,
        scale: Scale::Linear,
    })
}

/// Union-find over the combined node space, users first.
struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}

/// Connected component sizes over present nodes, largest first.
pub fn component_sizes(g: &BipartiteGraph) -> Result<Vec<usize>> {
    non_empty(g)?;
    let offset = g.user_space();
    let mut sets = DisjointSets::new(offset + g.business_space());
    for e in g.edges() {
        sets.union(e.user.index(), offset + e.business.index());
    }
    let mut sizes = Vec::new();
    for v in 0..offset + g.business_space() {
        let present = if v < offset {
            g.user_degree_raw(v) > 0
        } else {
            g.business_degree_raw(v - offset) > 0
        };
        if present && sets.find(v) == v {
            sizes.push(sets.size[v]);
        }
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sizes)
}

/// CSV with header `component_rank,size`; ranks start at 1.
pub fn write_components_csv<W: Write>(w: W, sizes: &[usize]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["component_rank", "size"])?;
    for (i, s) in sizes.iter().enumerate() {
        out.write_record([(i + 1).to_string(), s.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Review counts per UTC calendar day or month, oldest first. Only bins that
/// contain at least one review are listed.
pub fn reviews_over_time(edges: &[ReviewEdge], bin: TimeBin) -> Result<Histogram> {
    let mut counts: BTreeMap<(i32, u32, u32), u64> = BTreeMap::new();
    for e in edges {
        let t = DateTime::from_timestamp(e.timestamp, 0)
            .ok_or_else(|| Error::Input(format!("timestamp {} is out of range", e.timestamp)))?;
        let key = match bin {
            TimeBin::Day => (t.year(), t.month(), t.day()),
            TimeBin::Month => (t.year(), t.month(), 1),
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    let bins = counts
        .into_iter()
        .map(|((y, m, d), count)| {
            let start = chrono::NaiveDate::from_ymd_opt(y, m, d).expect("valid calendar key");
            let end = match bin {
                TimeBin::Day => start.succ_opt().unwrap_or(start),
                TimeBin::Month => start.checked_add_months(chrono::Months::new(1)).unwrap_or(start),
            };
            let secs = |date: chrono::NaiveDate| date.and_hms_opt(0, 0, 0).map_or(0, |t| t.and_utc().timestamp()) as f64;
            Bin {
                label: match bin {
                    TimeBin::Day => start.format("%Y-%m-%d").to_string(),
                    TimeBin::Month => start.format("%Y-%m").to_string(),
                },
                lo: secs(start),
                hi: secs(end),
                count,
            }
        })
        .collect();
    Ok(Histogram {
        bins,
        scale: Scale::Linear,
    })
}

/// Population coefficient of variation of bin counts.
pub fn coefficient_of_variation(h: &Histogram) -> Result<f64> {
    if h.bins.is_empty() {
        return Err(Error::Stat("coefficient of variation of an empty histogram".into()));
    }
    let n = h.bins.len() as f64;
    let mean = h.total() as f64 / n;
    let var = h.bins.iter().map(|b| (b.count as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean)
}

/// Least-squares slope of ln(count) against ln(key) over discrete bins with
/// positive keys and at least `min_count` observations.
pub fn loglog_slope(h: &Histogram, min_count: u64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = h
        .bins
        .iter()
        .filter(|b| b.lo > 0.0 && b.count >= min_count.max(1))
        .map(|b| (b.lo.ln(), (b.count as f64).ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Stat("log-log fit needs at least two bins".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Stat("log-log fit needs at least two distinct keys".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{g0, single};

    fn keyed(h: &Histogram) -> Vec<(String, u64)> {
        h.bins.iter().filter(|b| b.count > 0).map(|b| (b.label.clone(), b.count)).collect()
    }

    fn pairs(v: &[(&str, u64)]) -> Vec<(String, u64)> {
        v.iter().map(|(k, c)| (k.to_string(), *c)).collect()
    }

    #[test]
    fn g0_degrees() {
        let h = degree_histogram(&g0(), Side::User).unwrap();
        assert_eq!(keyed(&h), pairs(&[("1", 2), ("2", 1)]));
        let h = degree_histogram(&g0(), Side::Business).unwrap();
        assert_eq!(keyed(&h), pairs(&[("2", 2)]));
    }

    #[test]
    fn single_edge_degrees() {
        for side in [Side::User, Side::Business] {
            assert_eq!(keyed(&degree_histogram(&single(3), side).unwrap()), pairs(&[("1", 1)]));
        }
    }

    #[test]
    fn empty_graph_is_an_error() {
        let g = BipartiteGraph::empty();
        assert!(matches!(degree_histogram(&g, Side::User), Err(Error::Stat(_))));
        assert!(matches!(component_sizes(&g), Err(Error::Stat(_))));
        assert!(matches!(rating_histogram(&g, RatingMode::PerEdge), Err(Error::Stat(_))));
    }

    #[test]
    fn g0_ratings() {
        let h = rating_histogram(&g0(), RatingMode::PerEdge).unwrap();
        assert_eq!(keyed(&h), pairs(&[("2", 1), ("3", 1), ("4", 1), ("5", 1)]));
        // users average 4.5, 3, 2
        let h = rating_histogram(&g0(), RatingMode::PerUserAverage).unwrap();
        assert_eq!(keyed(&h), pairs(&[("2.00", 1), ("3.00", 1), ("4.50", 1)]));
        assert_eq!(h.bins.len(), 16);
    }

    #[test]
    fn all_five_stars() {
        let h = rating_histogram(&single(5), RatingMode::PerBusinessAverage).unwrap();
        assert_eq!(keyed(&h), pairs(&[("4.75", 1)]));
        assert_eq!(h.bins.last().unwrap().count, 1);
        assert_eq!(keyed(&rating_histogram(&single(5), RatingMode::PerEdge).unwrap()), pairs(&[("5", 1)]));
    }

    #[test]
    fn components() {
        assert_eq!(component_sizes(&g0()).unwrap(), vec![5]);
        let g = BipartiteGraph::from_edges(vec![ReviewEdge::new(0, 0, 3, 0), ReviewEdge::new(1, 1, 3, 0)]).unwrap();
        assert_eq!(component_sizes(&g).unwrap(), vec![2, 2]);
        let mut buf = Vec::new();
        write_components_csv(&mut buf, &[2, 2]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "component_rank,size\n1,2\n2,2\n");
    }

    #[test]
    fn time_bins() {
        let day = 86_400;
        let base = 1_471_996_800; // 2016-08-24
        let edges: Vec<_> = (0..3).map(|i| ReviewEdge::new(i, 0, 3, base + i as i64 * day)).collect();
        let h = reviews_over_time(&edges, TimeBin::Day).unwrap();
        assert_eq!(keyed(&h), pairs(&[("2016-08-24", 1), ("2016-08-25", 1), ("2016-08-26", 1)]));
        let h = reviews_over_time(&edges, TimeBin::Month).unwrap();
        assert_eq!(keyed(&h), pairs(&[("2016-08", 3)]));
        assert_eq!(coefficient_of_variation(&h).unwrap(), 0.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let counts = (1..=20).map(|k| (k as i64, (1e6 * (k as f64).powf(-2.0)).round() as u64)).collect();
        let h = Histogram::discrete(counts, Scale::Log);
        assert!((loglog_slope(&h, 1).unwrap() + 2.0).abs() < 1e-3);
    }

    #[test]
    fn histogram_csv() {
        let mut buf = Vec::new();
        degree_histogram(&g0(), Side::User).unwrap().write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "key,count\n1,2\n2,1\n");
    }
}
