//! Synthetic review graphs with power-law degrees.
//!
//! User degrees are drawn from a discrete power law P(k) ∝ k^-γ truncated to
//! [1, n_businesses]. Businesses get power-law weights truncated to
//! [1, n_users], which are apportioned into integer target degrees summing to
//! the edge count. User and business stubs are then paired by a seeded
//! shuffle, and any repeated (user, business) pair is redrawn among the
//! businesses the user has not rated yet.
//!
//! All sampling goes through integer thresholds and integer weights, so a
//! seed yields the same graph on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureRow, N_FEATURES};
use crate::ingest::{BusinessId, IdMap, ReviewEdge, Timestamp, UserId};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_businesses: usize,
    pub n_edges: usize,
    /// Degree exponent; `f64::INFINITY` makes every weight 1.
    pub gamma: f64,
    /// Probabilities of 1..=5 stars.
    pub rating_probs: [f64; 5],
    /// Timestamps are uniform over `[ts_start, ts_end)`.
    pub ts_start: Timestamp,
    pub ts_end: Timestamp,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 5_000,
            n_businesses: 1_000,
            n_edges: 10_000,
            gamma: 2.5,
            rating_probs: [0.05, 0.10, 0.20, 0.30, 0.35],
            ts_start: 1_262_304_000, // 2010-01-01
            ts_end: 1_472_688_000,   // 2016-09-01
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_users == 0 || self.n_businesses == 0 {
            return bad("synthetic graph needs at least one user and one business".into());
        }
        if self.n_users > u32::MAX as usize || self.n_businesses > u32::MAX as usize {
            return bad("node counts exceed the id space".into());
        }
        if self.n_edges < self.n_users {
            return bad(format!(
                "n_edges {} is below n_users {}; every user needs a review",
                self.n_edges, self.n_users
            ));
        }
        if self.n_edges as u128 > self.n_users as u128 * self.n_businesses as u128 {
            return bad(format!(
                "n_edges {} exceeds n_users * n_businesses = {}",
                self.n_edges,
                self.n_users as u128 * self.n_businesses as u128
            ));
        }
        if !(self.gamma > 1.0) {
            return bad(format!("gamma must exceed 1, got {}", self.gamma));
        }
        let total: f64 = self.rating_probs.iter().sum();
        if self.rating_probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad("rating probabilities must be non-negative and sum to 1".into());
        }
        if self.ts_end <= self.ts_start {
            return bad("timestamp range is empty".into());
        }
        Ok(())
    }
}

/// Inverse-CDF sampler over 1..=n with 64-bit fixed-point thresholds.
#[derive(Debug, Clone)]
pub struct DiscreteSampler {
    thresholds: Vec<u64>,
}

impl DiscreteSampler {
    pub fn new(probs: &[f64]) -> Self {
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        let mut thresholds: Vec<u64> = probs
            .iter()
            .map(|p| {
                acc += p / total;
                // saturating float-to-int cast
                (acc * 18_446_744_073_709_551_616.0) as u64
            })
            .collect();
        if let Some(last) = thresholds.last_mut() {
            *last = u64::MAX;
        }
        DiscreteSampler { thresholds }
    }

    /// Truncated power law on 1..=n.
    pub fn power_law(gamma: f64, n: usize) -> Self {
        if gamma.is_infinite() {
            let mut p = vec![0.0; n];
            p[0] = 1.0;
            return Self::new(&p);
        }
        let probs: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-gamma)).collect();
        Self::new(&probs)
    }

    /// A value in 1..=n.
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> usize {
        let u = rng.next_u64();
        let i = self.thresholds.partition_point(|&t| t <= u);
        i.min(self.thresholds.len() - 1) + 1
    }
}

/// Splits `total` into integer parts proportional to `weights`, each capped
/// at `cap`. Remainders go to the largest fractional parts, lower index first.
fn apportion(weights: &[u64], total: u64, cap: u64) -> Vec<u64> {
    let mut parts = vec![0u64; weights.len()];
    let mut remaining = total;
    let mut open: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] > 0).collect();
    while remaining > 0 && !open.is_empty() {
        let w: u128 = open.iter().map(|&j| weights[j] as u128).sum();
        let mut rems: Vec<(u128, usize)> = Vec::with_capacity(open.len());
        let mut given = 0u64;
        for &j in &open {
            let exact = weights[j] as u128 * remaining as u128;
            let share = ((exact / w) as u64).min(cap - parts[j]);
            parts[j] += share;
            given += share;
            rems.push((exact % w, j));
        }
        let mut left = remaining - given;
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &rems {
            if left == 0 {
                break;
            }
            if parts[j] < cap {
                parts[j] += 1;
                left -= 1;
            }
        }
        remaining = left;
        open.retain(|&j| parts[j] < cap);
    }
    parts
}

/// Picks an index with probability proportional to integer `weights`,
/// skipping indices for which `taken` is true.
fn weighted_pick<R: Rng>(rng: &mut R, cumulative: &[u64], weights: &[u64], taken: impl Fn(usize) -> bool) -> Option<usize> {
    let total = *cumulative.last()?;
    // rejection first, exhaustive scan when rejection keeps failing
    for _ in 0..64 {
        let r = rng.gen_range(0..total);
        let j = cumulative.partition_point(|&c| c <= r);
        if !taken(j) {
            return Some(j);
        }
    }
    let free: u64 = (0..weights.len()).filter(|&j| !taken(j)).map(|j| weights[j]).sum();
    if free == 0 {
        return (0..weights.len()).find(|&j| !taken(j));
    }
    let mut r = rng.gen_range(0..free);
    for (j, &w) in weights.iter().enumerate() {
        if taken(j) {
            continue;
        }
        if r < w {
            return Some(j);
        }
        r -= w;
    }
    None
}

#[derive(Debug, Clone)]
pub struct SynthGraph {
    pub edges: Vec<ReviewEdge>,
    pub ids: IdMap,
}

/// User degrees summing to `cfg.n_edges`: power-law draws, then unit
/// adjustments on uniformly chosen users until the total matches.
fn user_degrees(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let sampler = DiscreteSampler::power_law(cfg.gamma, cfg.n_businesses);
    let mut degrees: Vec<usize> = (0..cfg.n_users).map(|_| sampler.sample(rng)).collect();
    let mut sum: usize = degrees.iter().sum();
    while sum != cfg.n_edges {
        let u = rng.gen_range(0..cfg.n_users);
        if sum < cfg.n_edges && degrees[u] < cfg.n_businesses {
            degrees[u] += 1;
            sum += 1;
        } else if sum > cfg.n_edges && degrees[u] > 1 {
            degrees[u] -= 1;
            sum -= 1;
        }
    }
    degrees
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthGraph> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let degrees = user_degrees(cfg, &mut rng);

    let business_sampler = DiscreteSampler::power_law(cfg.gamma, cfg.n_users);
    let weights: Vec<u64> = (0..cfg.n_businesses).map(|_| business_sampler.sample(&mut rng) as u64).collect();
    let targets = apportion(&weights, cfg.n_edges as u64, cfg.n_users as u64);
    let mut stubs: Vec<u32> = Vec::with_capacity(cfg.n_edges);
    for (j, &t) in targets.iter().enumerate() {
        stubs.extend(std::iter::repeat(j as u32).take(t as usize));
    }
    stubs.shuffle(&mut rng);

    let cumulative: Vec<u64> = weights
        .iter()
        .scan(0u64, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let ratings = DiscreteSampler::new(&cfg.rating_probs);
    let mut held = vec![false; cfg.n_businesses];
    let mut edges = Vec::with_capacity(cfg.n_edges);
    let mut next = 0;
    for (u, &d) in degrees.iter().enumerate() {
        let mine = &stubs[next..next + d];
        next += d;
        let mut chosen = Vec::with_capacity(d);
        let mut repeats = 0;
        for &b in mine {
            if held[b as usize] {
                repeats += 1;
            } else {
                held[b as usize] = true;
                chosen.push(b);
            }
        }
        for _ in 0..repeats {
            let b = weighted_pick(&mut rng, &cumulative, &weights, |j| held[j]).expect("degree is at most n_businesses");
            held[b] = true;
            chosen.push(b as u32);
        }
        for &b in &chosen {
            held[b as usize] = false;
            let stars = ratings.sample(&mut rng) as u8;
            let ts = rng.gen_range(cfg.ts_start..cfg.ts_end);
            edges.push(ReviewEdge::new(u as u32, b, stars, ts));
        }
    }
    edges.sort_by_key(ReviewEdge::sort_key);

    let mut ids = IdMap::new();
    for u in 0..cfg.n_users {
        ids.intern_user(&format!("u{u}"));
    }
    for b in 0..cfg.n_businesses {
        ids.intern_business(&format!("b{b}"));
    }
    Ok(SynthGraph { edges, ids })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub n_rows: usize,
    pub bias: f64,
    pub noise: f64,
    /// Clip targets to [1, 5].
    pub clip: bool,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            n_rows: 1_000,
            bias: 3.0,
            noise: 0.0,
            clip: false,
            seed: 0,
        }
    }
}

/// Standard-normal features with targets `w·x + bias + N(0, noise²)`.
pub fn generate_planted_linear(cfg: &PlantedConfig, weights: &[f64; N_FEATURES]) -> Result<FeatureMatrix> {
    if !(cfg.noise >= 0.0) {
        return Err(Error::Config(format!("noise must be non-negative, got {}", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let rows = (0..cfg.n_rows)
        .map(|i| {
            let mut features = [0.0; N_FEATURES];
            for f in features.iter_mut() {
                *f = StandardNormal.sample(&mut rng);
            }
            let mut target = cfg.bias + features.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>();
            if cfg.noise > 0.0 {
                target += noise.sample(&mut rng);
            }
            if cfg.clip {
                target = target.clamp(1.0, 5.0);
            }
            FeatureRow {
                user: UserId(i as u32),
                business: BusinessId(i as u32),
                features,
                target,
            }
        })
        .collect();
    Ok(FeatureMatrix { rows })
}
