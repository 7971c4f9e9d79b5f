//! Ordinary least squares, ridge and evidence-approximation Bayesian ridge.
//!
//! All three center the data so the intercept is never penalized, then work
//! in the eigenbasis of the centered Gram matrix `Xc^T Xc`. Rows are visited
//! in a canonical order (sorted by value), so the fitted parameters do not
//! depend on how the training rows happen to be ordered.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.expect_cols(self.weights.len())?;
        Ok(x.iter_rows().map(|row| self.predict_row(row)).collect())
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>()
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Hyperpriors of the Bayesian model: Gamma(shape, rate) on the noise
/// precision (`alpha_1`, `alpha_2`) and on the weight precision
/// (`lambda_1`, `lambda_2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesianConfig {
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for BayesianConfig {
    fn default() -> Self {
        BayesianConfig {
            alpha_1: 1e-6,
            alpha_2: 1e-6,
            lambda_1: 1e-6,
            lambda_2: 1e-6,
            max_iter: 300,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianFit {
    /// Posterior-mean weights.
    pub model: LinearModel,
    /// Estimated noise precision.
    pub alpha: f64,
    /// Estimated weight precision.
    pub lambda: f64,
    pub iterations: usize,
}

fn compare_rows(x: &Matrix, y: &[f64], a: usize, b: usize) -> Ordering {
    x.row(a)
        .iter()
        .zip(x.row(b))
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| y[a].total_cmp(&y[b]))
}

/// Row indices sorted by (features, target).
pub(crate) fn canonical_order(x: &Matrix, y: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.rows()).collect();
    order.sort_by(|&a, &b| compare_rows(x, y, a, b));
    order
}

/// Centered Gram system in canonical row order.
struct Centered {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
    order: Vec<usize>,
}

fn check_inputs(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::Input(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if x.rows() == 0 {
        return Err(Error::Fit("no training rows".into()));
    }
    if x.data().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite training value".into()));
    }
    Ok(())
}

fn center(x: &Matrix, y: &[f64]) -> Centered {
    let order = canonical_order(x, y);
    let (n, d) = (x.rows() as f64, x.cols());
    let mut x_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for &i in &order {
        for (m, v) in x_mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
        y_mean += y[i];
    }
    x_mean.iter_mut().for_each(|m| *m /= n);
    y_mean /= n;

    let mut gram = DMatrix::zeros(d, d);
    let mut xty = DVector::zeros(d);
    let mut row = vec![0.0; d];
    for &i in &order {
        for ((r, v), m) in row.iter_mut().zip(x.row(i)).zip(&x_mean) {
            *r = v - m;
        }
        let yc = y[i] - y_mean;
        for a in 0..d {
            xty[a] += row[a] * yc;
            for b in a..d {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    Centered {
        gram,
        xty,
        x_mean,
        y_mean,
        order,
    }
}

/// Eigenbasis of the Gram matrix with `V^T X^T y` precomputed.
struct Spectrum {
    vectors: DMatrix<f64>,
    values: Vec<f64>,
    projected: DVector<f64>,
    cutoff: f64,
}

impl Spectrum {
    fn new(c: &Centered) -> Self {
        let eigen = SymmetricEigen::new(c.gram.clone());
        let values: Vec<f64> = eigen.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
        let largest = values.iter().cloned().fold(0.0, f64::max);
        let projected = eigen.eigenvectors.transpose() * &c.xty;
        let cutoff = largest * 1e-12 * values.len() as f64;
        Spectrum {
            vectors: eigen.eigenvectors,
            values,
            projected,
            cutoff,
        }
    }

    /// Minimizer of |Xc w - yc|^2 + penalty |w|^2; least-norm when the
    /// penalty is zero and the Gram matrix is singular.
    fn solve(&self, penalty: f64) -> Vec<f64> {
        let d = self.values.len();
        let mut coef = DVector::zeros(d);
        for k in 0..d {
            let denom = self.values[k] + penalty;
            if self.values[k] <= self.cutoff && penalty <= self.cutoff {
                continue;
            }
            coef += self.vectors.column(k) * (self.projected[k] / denom);
        }
        coef.iter().copied().collect()
    }
}

fn assemble(c: &Centered, weights: Vec<f64>) -> LinearModel {
    let bias = c.y_mean - weights.iter().zip(&c.x_mean).map(|(w, m)| w * m).sum::<f64>();
    LinearModel { weights, bias }
}

/// Least squares with an unpenalized intercept.
pub fn fit_linear(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    check_inputs(x, y)?;
    let c = center(x, y);
    let weights = Spectrum::new(&c).solve(0.0);
    Ok(assemble(&c, weights))
}

/// Minimizes `sum (y_hat - y)^2 + alpha * |W|^2`.
pub fn fit_ridge(x: &Matrix, y: &[f64], alpha: f64) -> Result<LinearModel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    check_inputs(x, y)?;
    let c = center(x, y);
    let weights = Spectrum::new(&c).solve(alpha);
    Ok(assemble(&c, weights))
}

/// The ridge objective minimized by plain gradient descent instead of the
/// eigen-solve. Kept as an independent cross-check of [`fit_ridge`].
pub fn fit_ridge_gd(
    x: &Matrix,
    y: &[f64],
    alpha: f64,
    max_iter: usize,
    grad_tol: f64,
) -> Result<LinearModel> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    check_inputs(x, y)?;
    let (n, d) = (x.rows(), x.cols());
    // work on explicitly centered copies; the gradient is taken row by row
    let mut x_mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| r.iter().zip(&x_mean).map(|(v, m)| v - m).collect())
        .collect();
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let gradient = |w: &[f64]| -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().map(|wi| 2.0 * alpha * wi).collect();
        for (row, t) in xc.iter().zip(&yc) {
            let resid = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - t;
            for (gi, a) in g.iter_mut().zip(row) {
                *gi += 2.0 * resid * a;
            }
        }
        g
    };

    // Lipschitz constant of the gradient by power iteration on 2(Xc^T Xc + alpha I)
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lipschitz = 0.0;
    for _ in 0..200 {
        let mut hv: Vec<f64> = v.iter().map(|vi| 2.0 * alpha * vi).collect();
        for row in &xc {
            let dot = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
            for (h, a) in hv.iter_mut().zip(row) {
                *h += 2.0 * dot * a;
            }
        }
        let norm = hv.iter().map(|h| h * h).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lipschitz = norm;
        v = hv.into_iter().map(|h| h / norm).collect();
    }
    let step = if lipschitz > 0.0 { 1.0 / (1.01 * lipschitz) } else { 1.0 };

    let mut w = vec![0.0; d];
    let mut grad_norm = f64::INFINITY;
    for _ in 0..max_iter {
        let g = gradient(&w);
        grad_norm = g.iter().map(|gi| gi * gi).sum::<f64>().sqrt();
        if grad_norm < grad_tol {
            let bias = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
            return Ok(LinearModel { weights: w, bias });
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
    }
    Err(Error::Convergence {
        what: "ridge gradient descent",
        iterations: max_iter,
        residual: grad_norm,
    })
}

/// Bayesian linear regression with a zero-mean isotropic Gaussian prior on
/// the weights. Noise precision `alpha` and weight precision `lambda` are
/// re-estimated by maximizing the marginal likelihood until the weights stop
/// moving.
pub fn fit_bayesian(x: &Matrix, y: &[f64], cfg: &BayesianConfig) -> Result<BayesianFit> {
    check_inputs(x, y)?;
    let c = center(x, y);
    let spectrum = Spectrum::new(&c);
    let n = x.rows() as f64;

    let y_var = c
        .order
        .iter()
        .map(|&i| (y[i] - c.y_mean).powi(2))
        .sum::<f64>()
        / n;
    let mut alpha = 1.0 / (y_var + f64::EPSILON);
    let mut lambda = 1.0;

    let sse = |w: &[f64]| -> f64 {
        c.order
            .iter()
            .map(|&i| {
                let pred: f64 = x
                    .row(i)
                    .iter()
                    .zip(&c.x_mean)
                    .zip(w)
                    .map(|((v, m), wi)| (v - m) * wi)
                    .sum();
                (y[i] - c.y_mean - pred).powi(2)
            })
            .sum()
    };

    let mut previous: Option<Vec<f64>> = None;
    for iteration in 1..=cfg.max_iter {
        let coef = spectrum.solve(lambda / alpha);
        let gamma: f64 = spectrum
            .values
            .iter()
            .map(|&e| alpha * e / (lambda + alpha * e))
            .sum();
        let norm_sq: f64 = coef.iter().map(|w| w * w).sum();
        let residual = sse(&coef);
        lambda = (gamma + 2.0 * cfg.lambda_1) / (norm_sq + 2.0 * cfg.lambda_2);
        alpha = (n - gamma + 2.0 * cfg.alpha_1) / (residual + 2.0 * cfg.alpha_2);
        if !(alpha.is_finite() && lambda.is_finite()) {
            return Err(Error::Divergence("bayesian precision estimates".into()));
        }
        if let Some(prev) = &previous {
            let change: f64 = prev.iter().zip(&coef).map(|(a, b)| (a - b).abs()).sum();
            if change < cfg.tol {
                let weights = spectrum.solve(lambda / alpha);
                return Ok(BayesianFit {
                    model: assemble(&c, weights),
                    alpha,
                    lambda,
                    iterations: iteration,
                });
            }
        }
        previous = Some(coef);
    }
    Err(Error::Convergence {
        what: "bayesian ridge",
        iterations: cfg.max_iter,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn mse(m: &LinearModel, x: &Matrix, y: &[f64]) -> f64 {
        let p = m.predict(x).unwrap();
        p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
    }

    #[test]
    fn planted_two_feature_model() {
        let x = random_matrix(100, 2, 1);
        let y: Vec<f64> = x.iter_rows().map(|r| 2.0 * r[0] - 3.0 * r[1] + 1.0).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-6);
        assert!((m.weights[1] + 3.0).abs() < 1e-6);
        assert!((m.bias - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_target() {
        let x = random_matrix(40, 9, 2);
        let y = vec![3.5; 40];
        let m = fit_linear(&x, &y).unwrap();
        assert!(m.weight_norm() < 1e-12);
        assert!((m.bias - 3.5).abs() < 1e-12);
    }

    #[test]
    fn least_squares_beats_random_probes() {
        let x = random_matrix(50, 9, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(1.0..5.0)).collect();
        let best = fit_linear(&x, &y).unwrap();
        let best_mse = mse(&best, &x, &y);
        for _ in 0..1000 {
            let probe = LinearModel {
                weights: best.weights.iter().map(|w| w + rng.gen_range(-1.0..1.0)).collect(),
                bias: best.bias + rng.gen_range(-1.0..1.0),
            };
            assert!(best_mse <= mse(&probe, &x, &y));
        }
    }

    #[test]
    fn rank_deficient_gives_least_norm() {
        // second column duplicates the first
        let base = random_matrix(30, 1, 5);
        let data: Vec<f64> = base.data().iter().flat_map(|&v| [v, v]).collect();
        let x = Matrix::new(30, 2, data).unwrap();
        let y: Vec<f64> = base.data().iter().map(|v| 4.0 * v).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.weights[0] - 2.0).abs() < 1e-8 && (m.weights[1] - 2.0).abs() < 1e-8);
        // identical rows with conflicting targets still fit
        let x = Matrix::new(4, 1, vec![1.0; 4]).unwrap();
        let m = fit_linear(&x, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((m.predict_row(&[1.0]) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ridge_limits() {
        let x = random_matrix(100, 9, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..100).map(|_| rng.gen_range(1.0..5.0)).collect();
        let ols = fit_linear(&x, &y).unwrap();
        let r0 = fit_ridge(&x, &y, 0.0).unwrap();
        for (a, b) in ols.weights.iter().zip(&r0.weights) {
            assert!((a - b).abs() < 1e-8);
        }
        let huge = fit_ridge(&x, &y, 1e9).unwrap();
        assert!(huge.weight_norm() < 1e-6);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((huge.bias - mean).abs() < 1e-6);
        assert!(matches!(fit_ridge(&x, &y, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn ridge_closed_form_matches_gradient_descent() {
        let x = random_matrix(100, 9, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = x
            .iter_rows()
            .map(|r| r.iter().sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let closed = fit_ridge(&x, &y, 0.5).unwrap();
        let gd = fit_ridge_gd(&x, &y, 0.5, 200_000, 1e-10).unwrap();
        for (a, b) in closed.weights.iter().zip(&gd.weights) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert!((closed.bias - gd.bias).abs() < 1e-5);
    }

    #[test]
    fn ridge_fit_term_grows_with_alpha() {
        let x = random_matrix(80, 9, 10);
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] - r[3] + 0.3 * r[5]).collect();
        let mut last = -1.0;
        for alpha in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0] {
            let fit = mse(&fit_ridge(&x, &y, alpha).unwrap(), &x, &y);
            assert!(fit >= last);
            last = fit;
        }
    }

    #[test]
    fn row_permutation_is_bit_identical() {
        let x = random_matrix(60, 9, 11);
        let y: Vec<f64> = x.iter_rows().map(|r| r[0] * 0.7 + r[8]).collect();
        let mut perm: Vec<usize> = (0..60).collect();
        perm.reverse();
        perm.swap(3, 40);
        let xp = x.select_rows(&perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        assert_eq!(fit_ridge(&x, &y, 1e-4).unwrap(), fit_ridge(&xp, &yp, 1e-4).unwrap());
        let cfg = BayesianConfig::default();
        assert_eq!(fit_bayesian(&x, &y, &cfg).unwrap(), fit_bayesian(&xp, &yp, &cfg).unwrap());
    }

    #[test]
    fn bayesian_concentrates_on_least_squares() {
        let x = random_matrix(1000, 9, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = [0.5, -1.0, 2.0, 0.0, 0.3, -0.7, 1.1, 0.2, -0.4];
        let y: Vec<f64> = x
            .iter_rows()
            .map(|r| {
                3.0 + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                    + 1e-3 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let ols = fit_linear(&x, &y).unwrap();
        let bayes = fit_bayesian(&x, &y, &BayesianConfig::default()).unwrap();
        for (a, b) in ols.weights.iter().zip(&bayes.model.weights) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn bayesian_shrinks_pure_noise() {
        let x = random_matrix(60, 9, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let y: Vec<f64> = (0..60).map(|_| rng.sample(StandardNormal)).collect();
        let ols = fit_linear(&x, &y).unwrap();
        let bayes = fit_bayesian(&x, &y, &BayesianConfig::default()).unwrap();
        assert!(bayes.model.weight_norm() < ols.weight_norm());
    }

    #[test]
    fn bayesian_recovers_precisions() {
        // unit-magnitude weights so |w|^2 = d exactly: true lambda = 1,
        // noise variance 0.25 so true alpha = 4 and lambda / alpha = 0.25
        let x = random_matrix(2000, 9, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = [1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
        let y: Vec<f64> = x
            .iter_rows()
            .map(|r| {
                r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                    + 0.5 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let fit = fit_bayesian(&x, &y, &BayesianConfig::default()).unwrap();
        let ratio = fit.lambda / fit.alpha;
        assert!((0.125..=0.5).contains(&ratio), "lambda/alpha = {ratio}");
        assert!((2.0..=8.0).contains(&fit.alpha), "alpha = {}", fit.alpha);
    }

    #[test]
    fn bayesian_nonconvergence_reported() {
        let x = random_matrix(50, 9, 18);
        let y: Vec<f64> = x.iter_rows().map(|r| r[0]).collect();
        let cfg = BayesianConfig {
            max_iter: 1,
            ..Default::default()
        };
        assert!(matches!(fit_bayesian(&x, &y, &cfg), Err(Error::Convergence { .. })));
    }
}
