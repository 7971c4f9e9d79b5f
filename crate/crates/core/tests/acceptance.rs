//! Acceptance suite. Every criterion prints one `PASS`/`FAIL`/`SKIP` line
//! with its runtime; run with `--nocapture` to see them.

mod common;

use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rategraph::eval::{r2_score, read_results, relerror, rmse, stable_mean};
use rategraph::features::{FeatureMatrix, FeatureRow, N_FEATURES};
use rategraph::graph::temporal_split;
use rategraph::models::{
    fit_baseline, fit_bayesian, fit_forest, fit_linear, fit_mlp, fit_ridge, BayesianConfig, ForestConfig, MlpModel,
    TrainConfig,
};
use rategraph::pipeline::{run_all, run_stage, PipelineConfig, SplitSummary, Stage};
use rategraph::synth::{generate, generate_planted_linear, PlantedConfig, SynthConfig};
use rategraph::{BipartiteGraph, BusinessId, Error, Matrix, UserId};

/// Criteria share one CPU budget; run them one at a time so the reported
/// runtimes mean something.
static SERIAL: Mutex<()> = Mutex::new(());

struct Check {
    failures: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { failures: Vec::new() }
    }

    fn that(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    /// Prints the verdict line and fails the test on any failed check.
    fn finish(mut self, id: u32, name: &str, elapsed: Duration, budget: Option<Duration>) {
        if let Some(b) = budget {
            self.that(elapsed < b, format!("took {:.1}s, budget {:.0}s", elapsed.as_secs_f64(), b.as_secs_f64()));
        }
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let mut line = format!("criterion {id} {verdict}: {name} [{:.2}s]", elapsed.as_secs_f64());
        if !self.failures.is_empty() {
            line.push_str(" -- ");
            line.push_str(&self.failures.join("; "));
        }
        println!("{line}");
        assert!(self.failures.is_empty(), "{line}");
    }
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_1_feature_oracles() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let g0 = common::g0_edges();
    let (plain, central) = common::max_feature_error(&g0, 0);
    check.that(plain < common::FEATURE_TOL, format!("G0 feature error {plain:e}"));
    check.that(central < common::CENTRALITY_TOL, format!("G0 centrality error {central:e}"));
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..50 {
        let edges = common::oracle_graph(i);
        let g = BipartiteGraph::from_edges(edges.clone()).unwrap();
        check.that(g.n_nodes() <= 200, format!("graph {i} has {} nodes", g.n_nodes()));
        let (p, c) = common::max_feature_error(&edges, i);
        worst = (worst.0.max(p), worst.1.max(c));
        check.that(p < common::FEATURE_TOL, format!("graph {i}: feature error {p:e}"));
        check.that(c < common::CENTRALITY_TOL, format!("graph {i}: centrality error {c:e}"));
    }
    let name = format!(
        "nine features vs brute force on G0 + 50 graphs (max err {:.1e}, centrality {:.1e})",
        worst.0, worst.1
    );
    check.finish(1, &name, start.elapsed(), Some(Duration::from_secs(30)));
}

struct MetricCase {
    pred: &'static [f64],
    truth: &'static [f64],
    rmse: Option<f64>,
    relerror: Option<f64>,
    /// `None` when r2 must be rejected as undefined.
    r2: Option<f64>,
}

/// Hand-worked values. Each expected value is written as the arithmetic a
/// person does by hand, with exact intermediate quantities.
fn metric_cases() -> Vec<MetricCase> {
    vec![
        // errors (-2, 2): sse 8, mae 2, max 5, mean 3, ss_tot 8
        MetricCase { pred: &[3.0, 3.0], truth: &[1.0, 5.0], rmse: Some(2.0), relerror: Some(40.0), r2: Some(0.0) },
        MetricCase {
            pred: &[1.0, 2.0, 3.0, 4.0],
            truth: &[1.0, 2.0, 3.0, 4.0],
            rmse: Some(0.0),
            relerror: Some(0.0),
            r2: Some(1.0),
        },
        // errors (1, -1, 1, -1): sse 4, mae 1, max 5, ss_tot 8
        MetricCase {
            pred: &[2.0, 2.0, 4.0, 4.0],
            truth: &[1.0, 3.0, 3.0, 5.0],
            rmse: Some(1.0),
            relerror: Some(20.0),
            r2: Some(0.5),
        },
        // errors all 2: sse 16, mae 2, max 6 (a prediction), mean 2.5, ss_tot 5
        MetricCase {
            pred: &[3.0, 4.0, 5.0, 6.0],
            truth: &[1.0, 2.0, 3.0, 4.0],
            rmse: Some(2.0),
            relerror: Some(200.0 / 6.0),
            r2: Some(1.0 - 16.0 / 5.0),
        },
        // a single row has no spread to explain
        MetricCase { pred: &[2.0], truth: &[4.0], rmse: Some(2.0), relerror: Some(50.0), r2: None },
        // constant targets: sse 8, mae 4/3
        MetricCase {
            pred: &[1.0, 3.0, 5.0],
            truth: &[3.0, 3.0, 3.0],
            rmse: Some((8.0f64 / 3.0).sqrt()),
            relerror: Some(100.0 * (4.0 / 3.0) / 5.0),
            r2: None,
        },
        // errors (0.5, -0.5, 0): sse 0.5, mae 1/3, max 3.5, mean 2.5, ss_tot 3.5
        MetricCase {
            pred: &[1.5, 2.5, 3.5],
            truth: &[1.0, 3.0, 3.5],
            rmse: Some((0.5f64 / 3.0).sqrt()),
            relerror: Some(100.0 * (1.0 / 3.0) / 3.5),
            r2: Some(1.0 - 0.5 / 3.5),
        },
        // swapped extremes: sse 32, mae 4, ss_tot 8
        MetricCase { pred: &[5.0, 1.0], truth: &[1.0, 5.0], rmse: Some(4.0), relerror: Some(80.0), r2: Some(-3.0) },
        // errors (2, 0): sse 4, mae 1, max 6, mean 3, ss_tot 2
        MetricCase {
            pred: &[6.0, 2.0],
            truth: &[4.0, 2.0],
            rmse: Some(2.0f64.sqrt()),
            relerror: Some(100.0 / 6.0),
            r2: Some(-1.0),
        },
        // mismatched lengths are rejected by every metric
        MetricCase { pred: &[1.0, 2.0], truth: &[1.0], rmse: None, relerror: None, r2: None },
    ]
}

#[test]
fn criterion_2_metric_identities() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    for (i, c) in metric_cases().iter().enumerate() {
        match (c.rmse, rmse(c.pred, c.truth)) {
            (Some(want), Ok(got)) => check.that(got == want, format!("case {i}: rmse {got} != {want}")),
            (None, Err(Error::Input(_))) => {}
            (want, got) => check.that(false, format!("case {i}: rmse {got:?}, expected {want:?}")),
        }
        match (c.relerror, relerror(c.pred, c.truth)) {
            (Some(want), Ok(got)) => check.that(got == want, format!("case {i}: relerror {got} != {want}")),
            (None, Err(Error::Input(_))) => {}
            (want, got) => check.that(false, format!("case {i}: relerror {got:?}, expected {want:?}")),
        }
        match (c.r2, r2_score(c.pred, c.truth)) {
            (Some(want), Ok(got)) => check.that(got == want, format!("case {i}: r2 {got} != {want}")),
            (None, Err(_)) => {}
            (want, got) => check.that(false, format!("case {i}: r2 {got:?}, expected {want:?}")),
        }
    }
    // the train-mean predictor explains nothing on its own training set
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [2, 7, 1000, 100_003] {
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(1u8..=5))).collect();
        if y.iter().all(|v| *v == y[0]) {
            continue;
        }
        let base = fit_baseline(&y).unwrap();
        check.that(base.mean == stable_mean(&y), "baseline mean differs from stable mean");
        let r2 = r2_score(&vec![base.mean; n], &y).unwrap();
        check.that(r2 == 0.0, format!("baseline train r2 {r2} at n = {n}"));
    }
    check.finish(2, "rmse / relerror / r2 on 10 hand-worked vectors; baseline train r2 = 0", start.elapsed(), None);
}

fn matrix(rows: &[[f64; 2]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn param(m: &mut MlpModel, layer: usize, is_bias: bool, k: usize) -> &mut f64 {
    let l = &mut m.layers[layer];
    if is_bias {
        &mut l.bias[k]
    } else {
        &mut l.weights[k]
    }
}

fn mlp_gradient_error() -> f64 {
    let model = MlpModel::new(N_FEATURES, &[200, 40, 8], 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = Matrix::new(6, N_FEATURES, (0..6 * N_FEATURES).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
    let labels = [0, 1, 2, 3, 4, 2];
    let l2 = 1e-4;
    let (_, grads) = model.loss_and_gradient(&x, &labels, l2);
    let h = 1e-6;
    let (mut num, mut den) = (0.0, 0.0);
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        let n_w = model.layers[l].weights.len();
        let n_b = model.layers[l].bias.len();
        let stride = (n_w / 400).max(1);
        let positions = (0..n_w).step_by(stride).map(|k| (false, k)).chain((0..n_b).map(|k| (true, k)));
        for (is_bias, k) in positions {
            let orig = *param(&mut probe, l, is_bias, k);
            *param(&mut probe, l, is_bias, k) = orig + h;
            let up = probe.loss_and_gradient(&x, &labels, l2).0;
            *param(&mut probe, l, is_bias, k) = orig - h;
            let down = probe.loss_and_gradient(&x, &labels, l2).0;
            *param(&mut probe, l, is_bias, k) = orig;
            let fd = (up - down) / (2.0 * h);
            let an = if is_bias { grads[l].bias[k] } else { grads[l].weights[k] };
            num += (fd - an).powi(2);
            den += fd.powi(2) + an.powi(2);
        }
    }
    num.sqrt() / den.sqrt()
}

/// 20 rows; x0 = 1..20, x1 alternates 0/1 and carries no signal.
/// y = 1 for x0 <= 5, 3 for 6..=15, 6 for 16..=20.
///
/// Root: candidate x0 <= 15.5 leaves SSE 5*(4/3)^2 + 10*(2/3)^2 = 13.33 on
/// the left and 0 on the right; x0 <= 5.5 leaves 0 + 10*1 + 5*4 = 30, and
/// x0 <= 10.5 leaves 10 + 22.5. Every x1 split keeps both sides mixed.
/// Left child (rows 1..15): x0 <= 5.5 separates 1s from 3s exactly.
/// Right child (rows 16..20) is pure.
fn hand_traced_cart(check: &mut Check) {
    let rows: Vec<[f64; 2]> = (1..=20).map(|i| [f64::from(i), f64::from(i % 2)]).collect();
    let y: Vec<f64> = (1..=20).map(|i| if i <= 5 { 1.0 } else if i <= 15 { 3.0 } else { 6.0 }).collect();
    let cfg = ForestConfig { n_trees: 1, bootstrap: false, ..ForestConfig::default() };
    let forest = fit_forest(&matrix(&rows), &y, &cfg).unwrap();
    let t = &forest.trees[0];
    let root = &t.nodes[0];
    check.that(root.feature == Some(0) && root.threshold == 15.5, format!("root split {:?} at {}", root.feature, root.threshold));
    let left = &t.nodes[root.left as usize];
    let right = &t.nodes[root.right as usize];
    check.that(left.feature == Some(0) && left.threshold == 5.5, format!("left split {:?} at {}", left.feature, left.threshold));
    check.that(right.feature.is_none() && right.value == 6.0, format!("right node {right:?}"));
    let ll = &t.nodes[left.left as usize];
    let lr = &t.nodes[left.right as usize];
    check.that(ll.feature.is_none() && ll.value == 1.0, format!("left-left node {ll:?}"));
    check.that(lr.feature.is_none() && lr.value == 3.0, format!("left-right node {lr:?}"));
    check.that(t.nodes.len() == 5 && t.n_leaves() == 3 && t.depth() == 2, "tree has extra nodes");
}

#[test]
fn criterion_3_model_recovery() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();

    // y = 2 x1 - 3 x2 + 1, 100 rows, no noise
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let rows: Vec<[f64; 2]> = (0..100).map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
    let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - 3.0 * r[1] + 1.0).collect();
    let x = matrix(&rows);
    for (name, m) in [("linear", fit_linear(&x, &y).unwrap()), ("ridge", fit_ridge(&x, &y, 1e-10).unwrap())] {
        let err = (m.weights[0] - 2.0).abs().max((m.weights[1] + 3.0).abs()).max((m.bias - 1.0).abs());
        check.that(err < 1e-6, format!("{name} planted error {err:e}"));
    }

    // nine planted weights through the synthetic generator
    let w = [0.5, -1.0, 2.0, 0.0, 0.3, -0.7, 1.1, 0.2, -0.4];
    let exact = generate_planted_linear(&PlantedConfig { seed: 32, ..PlantedConfig::default() }, &w).unwrap();
    let m = fit_linear(&exact.design(), &exact.targets()).unwrap();
    let err = m.weights.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold((m.bias - 3.0).abs(), f64::max);
    check.that(err < 1e-6, format!("nine-weight planted error {err:e}"));

    let noisy = generate_planted_linear(&PlantedConfig { n_rows: 1000, noise: 1e-3, seed: 33, ..PlantedConfig::default() }, &w)
        .unwrap();
    let bayes = fit_bayesian(&noisy.design(), &noisy.targets(), &BayesianConfig::default()).unwrap();
    let err = bayes.model.weights.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold((bayes.model.bias - 3.0).abs(), f64::max);
    check.that(err < 1e-3, format!("bayesian posterior mean error {err:e}"));

    let grad = mlp_gradient_error();
    check.that(grad < 1e-4, format!("mlp gradient relative error {grad:e}"));

    hand_traced_cart(&mut check);
    check.finish(
        3,
        &format!("planted linear/ridge/bayesian recovery, mlp gradient check (rel err {grad:.1e}), hand-traced CART"),
        start.elapsed(),
        Some(Duration::from_secs(120)),
    );
}

/// Integer star targets driven by a periodic term, an interaction and a
/// fold, plus a small linear part and noise.
fn nonlinear_dataset(n: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let mut f = [0.0f64; N_FEATURES];
            for v in f.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let noise: f64 = rng.sample(StandardNormal);
            let latent = 1.2 * (2.0 * f[0]).sin() + 0.8 * f[1] * f[2] + 0.7 * (f[3].abs() - 0.8) + 0.5 * f[4] + 0.5 * noise;
            FeatureRow {
                user: UserId(i as u32),
                business: BusinessId(i as u32),
                features: f,
                target: (3.0 + latent).round().clamp(1.0, 5.0),
            }
        })
        .collect();
    FeatureMatrix { rows }
}

#[test]
fn criterion_4_overfitting_order() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let mut summary = Vec::new();
    for seed in [1u64, 2, 3] {
        let data = nonlinear_dataset(50_000, seed);
        let (x, y) = (data.design(), data.targets());
        let train_r2 = |pred: Vec<f64>| r2_score(&pred, &y).unwrap();
        let linear = train_r2(fit_linear(&x, &y).unwrap().predict(&x).unwrap());
        let mlp = train_r2(fit_mlp(&x, &y, &TrainConfig { seed, ..TrainConfig::default() }).unwrap().predict(&x).unwrap());
        let forest = train_r2(
            fit_forest(&x, &y, &ForestConfig { seed, ..ForestConfig::default() }).unwrap().predict(&x).unwrap(),
        );
        summary.push(format!("seed {seed}: forest {forest:.3} > mlp {mlp:.3} > linear {linear:.3}"));
        check.that(forest > mlp && mlp > linear, format!("seed {seed}: forest {forest}, mlp {mlp}, linear {linear}"));
    }
    check.finish(
        4,
        &format!("train r2 ordering on 50k nonlinear rows ({})", summary.join(", ")),
        start.elapsed(),
        None,
    );
}

#[test]
fn criterion_5_split_contract() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let mut shares = Vec::new();
    for seed in [5u64, 6, 7] {
        let cfg = SynthConfig { n_users: 5_000, n_businesses: 1_000, n_edges: 50_000, seed, ..SynthConfig::default() };
        let data = generate(&cfg).unwrap();
        let g = BipartiteGraph::from_edges(data.edges).unwrap();
        let s = temporal_split(&g, 0.8, 0.1).unwrap();
        let key = |e: &rategraph::ReviewEdge| (e.user, e.business);
        let train: std::collections::HashSet<_> = s.train.edges().iter().map(key).collect();
        let disjoint = s.validation.edges().iter().chain(s.test.edges()).all(|e| !train.contains(&key(e)))
            && s.validation.edges().iter().all(|e| !s.test.has_edge(e.user, e.business));
        check.that(disjoint, format!("seed {seed}: partitions overlap"));
        let (t1, t2) = s.cuts;
        let ordered = s.train.edges().iter().all(|e| e.timestamp < t1)
            && s.validation.edges().iter().all(|e| (t1..t2).contains(&e.timestamp))
            && s.test.edges().iter().all(|e| e.timestamp >= t2);
        check.that(ordered, format!("seed {seed}: partitions not time ordered"));
        let closed = s
            .validation
            .edges()
            .iter()
            .chain(s.test.edges())
            .all(|e| s.train.has_user(e.user) && s.train.has_business(e.business));
        check.that(closed, format!("seed {seed}: held-out node missing from train"));

        let kept = (s.train.n_edges() + s.validation.n_edges() + s.test.n_edges()) as f64;
        let share = [s.train.n_edges() as f64 / kept, s.validation.n_edges() as f64 / kept, s.test.n_edges() as f64 / kept];
        for (got, want) in share.iter().zip([0.8, 0.1, 0.1]) {
            check.that((got - want).abs() <= 0.02, format!("seed {seed}: share {got:.4} vs {want}"));
        }
        shares.push(format!(
            "{:.3}/{:.3}/{:.3} ({} dropped)",
            share[0],
            share[1],
            share[2],
            s.dropped_validation + s.dropped_test
        ));
    }
    check.finish(
        5,
        &format!("disjoint, time-ordered, closed 80/10/10 splits: {}", shares.join(", ")),
        start.elapsed(),
        None,
    );
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const DETERMINISM_CONFIG: &str = "\
output_dir = out
seed = 2024
synth.n_users = 30000
synth.n_businesses = 5000
synth.n_edges = 100000
";

#[test]
fn criterion_6_determinism_at_100k_edges() {
    let _g = serial();
    let start = Instant::now();
    let mut check = Check::new();
    let mut runs = Vec::new();
    let mut slowest = Duration::ZERO;
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.conf"), DETERMINISM_CONFIG).unwrap();
        let cfg = PipelineConfig::load(&dir.path().join("run.conf")).unwrap();
        let t = Instant::now();
        for stage in [Stage::Synth, Stage::Split, Stage::Featurize, Stage::Train, Stage::Evaluate] {
            run_stage(stage, &cfg).unwrap();
        }
        slowest = slowest.max(t.elapsed());
        runs.push(tree_bytes(&cfg.output_dir));
    }
    let names = |r: &[(String, Vec<u8>)]| r.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    check.that(names(&runs[0]) == names(&runs[1]), "runs produced different file sets");
    for ((name, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
        check.that(a == b, format!("{name} differs"));
    }
    check.that(runs[0].iter().any(|(n, _)| n == "results.csv"), "no results.csv");
    check.that(
        slowest < Duration::from_secs(300),
        format!("slowest run took {:.1}s", slowest.as_secs_f64()),
    );
    check.finish(
        6,
        &format!(
            "synth -> evaluate twice at 100k edges, {} files byte-identical (slowest run {:.1}s)",
            runs[0].len(),
            slowest.as_secs_f64()
        ),
        start.elapsed(),
        None,
    );
}

/// Set to the path of the Yelp round-10 `review.json` to enable.
const YELP_ENV: &str = "RATEGRAPH_YELP";

#[test]
fn criterion_7_full_yelp_reproduction() {
    let _g = serial();
    let Some(reviews) = std::env::var_os(YELP_ENV) else {
        println!("criterion 7 SKIP: full-data reproduction needs {YELP_ENV}=<path to review.json>");
        return;
    };
    let start = Instant::now();
    let mut check = Check::new();
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "output_dir = out\ninputs = {}\ncutoff = 2016-08-24\nmodels = baseline, linear\nseed = 0\n",
        Path::new(&reviews).display()
    );
    fs::write(dir.path().join("run.conf"), text).unwrap();
    let cfg = PipelineConfig::load(&dir.path().join("run.conf")).unwrap();
    run_all(&cfg).unwrap();

    let summary: SplitSummary =
        serde_json::from_str(&fs::read_to_string(cfg.output_dir.join("split.json")).unwrap()).unwrap();
    check.that(summary.n_edges == 1_000_277, format!("{} edges", summary.n_edges));
    check.that(summary.n_users == 428_795, format!("{} users", summary.n_users));
    check.that(summary.n_businesses == 107_138, format!("{} businesses", summary.n_businesses));
    for (got, want, name) in [
        (summary.train, 599_133.0, "train"),
        (summary.validation, 88_079.0, "validation"),
        (summary.test, 73_730.0, "test"),
    ] {
        check.that((got as f64 - want).abs() <= 0.02 * want, format!("{name} size {got}"));
    }
    let results = read_results(fs::File::open(cfg.output_dir.join("results.csv")).unwrap()).unwrap();
    let test_rmse = |model: &str| results.iter().find(|r| r.model == model && r.dataset == "test").map(|r| r.rmse);
    let base = test_rmse("Baseline").unwrap_or(f64::NAN);
    let linear = test_rmse("Linear Regression").unwrap_or(f64::NAN);
    check.that((base - 1.4634860104).abs() <= 0.02, format!("baseline test rmse {base}"));
    check.that((linear - 1.19928440313).abs() <= 0.05, format!("linear test rmse {linear}"));
    check.finish(
        7,
        &format!("full-data counts and test rmse (baseline {base:.4}, linear {linear:.4})"),
        start.elapsed(),
        None,
    );
}
