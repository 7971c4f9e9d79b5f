//! The model zoo: constant baseline, least squares, ridge, Bayesian ridge,
//! MLP classifier with expectation decoding, and a random forest.

pub mod forest;
pub mod linear;
pub mod mlp;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use forest::{fit_forest, ForestConfig, ForestModel};
pub use linear::{fit_bayesian, fit_linear, fit_ridge, fit_ridge_gd, BayesianConfig, BayesianFit, LinearModel};
pub use mlp::{fit_mlp, fit_mlp_early_stopping, MlpModel, TrainConfig, Validation};

use crate::error::{Error, Result};
use crate::eval::stable_mean;
use crate::features::Standardizer;
use crate::matrix::Matrix;

/// Predicts the training mean for every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub mean: f64,
}

pub fn fit_baseline(targets: &[f64]) -> Result<BaselineModel> {
    if targets.is_empty() {
        return Err(Error::Fit("baseline needs at least one target".into()));
    }
    Ok(BaselineModel {
        mean: stable_mean(targets),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Baseline,
    Linear,
    Ridge,
    Bayesian,
    Mlp,
    Forest,
    /// MLP over graph features concatenated with business embeddings.
    FusedMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Baseline,
        ModelKind::Linear,
        ModelKind::Ridge,
        ModelKind::Bayesian,
        ModelKind::Mlp,
        ModelKind::Forest,
        ModelKind::FusedMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Linear => "linear",
            ModelKind::Ridge => "ridge",
            ModelKind::Bayesian => "bayesian",
            ModelKind::Mlp => "mlp",
            ModelKind::Forest => "forest",
            ModelKind::FusedMlp => "fused_mlp",
        }
    }

    /// Row label used in rendered result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "Baseline",
            ModelKind::Linear => "Linear Regression",
            ModelKind::Ridge => "Ridge Regression",
            ModelKind::Bayesian => "Bayesian Regression",
            ModelKind::Mlp => "Neural Network",
            ModelKind::Forest => "Random Forest",
            ModelKind::FusedMlp => "Business Features",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// Parameters of any trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Model {
    Baseline(BaselineModel),
    Linear(LinearModel),
    Bayesian(BayesianFit),
    Mlp(MlpModel),
    Forest(ForestModel),
}

impl Model {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            Model::Baseline(m) => Ok(vec![m.mean; x.rows()]),
            Model::Linear(m) => m.predict(x),
            Model::Bayesian(m) => m.model.predict(x),
            Model::Mlp(m) => m.predict(x),
            Model::Forest(m) => m.predict(x),
        }
    }

    /// Structural checks for parameters read from disk.
    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Input(format!("malformed model file: {m}")));
        match self {
            Model::Forest(m) => {
                let out_of_range = m
                    .trees
                    .iter()
                    .flat_map(|t| &t.nodes)
                    .any(|n| n.feature.is_some_and(|f| f >= m.n_features));
                if m.trees.is_empty() || out_of_range {
                    return bad(format!("forest needs trees splitting on features below {}", m.n_features));
                }
            }
            Model::Mlp(m) => {
                let widths_chain = m.layers.windows(2).all(|w| w[0].outputs == w[1].inputs);
                let sized = m
                    .layers
                    .iter()
                    .all(|l| l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs);
                let head = m.layers.last().map(|l| l.outputs);
                if !widths_chain || !sized || head != Some(mlp::N_CLASSES) {
                    return bad("inconsistent network layer shapes".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Expected column count; `None` for models that ignore their input.
    pub fn input_width(&self) -> Option<usize> {
        match self {
            Model::Baseline(_) => None,
            Model::Linear(m) => Some(m.weights.len()),
            Model::Bayesian(m) => Some(m.model.weights.len()),
            Model::Mlp(m) => Some(m.input_width()),
            Model::Forest(m) => Some(m.n_features),
        }
    }
}

/// Hyperparameters for every family, with the defaults used throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub ridge_alpha: f64,
    pub bayesian: BayesianConfig,
    pub mlp: TrainConfig,
    pub forest: ForestConfig,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            ridge_alpha: 0.0001,
            bayesian: BayesianConfig::default(),
            mlp: TrainConfig::default(),
            forest: ForestConfig::default(),
        }
    }
}

/// Fits one model family. `validation` drives MLP early stopping and is
/// ignored by the other families.
pub fn train(
    kind: ModelKind,
    x: &Matrix,
    y: &[f64],
    hyper: &Hyperparameters,
    validation: Option<Validation<'_>>,
) -> Result<Model> {
    Ok(match kind {
        ModelKind::Baseline => Model::Baseline(fit_baseline(y)?),
        ModelKind::Linear => Model::Linear(fit_linear(x, y)?),
        ModelKind::Ridge => Model::Linear(fit_ridge(x, y, hyper.ridge_alpha)?),
        ModelKind::Bayesian => Model::Bayesian(fit_bayesian(x, y, &hyper.bayesian)?),
        ModelKind::Mlp | ModelKind::FusedMlp => Model::Mlp(match validation {
            Some(v) => fit_mlp_early_stopping(x, y, &hyper.mlp, v)?,
            None => fit_mlp(x, y, &hyper.mlp)?,
        }),
        ModelKind::Forest => Model::Forest(fit_forest(x, y, &hyper.forest)?),
    })
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything needed to reproduce predictions from raw feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: ModelKind,
    pub hyperparameters: Hyperparameters,
    pub standardizer: Option<Standardizer>,
    pub model: Model,
}

impl ModelFile {
    pub fn new(kind: ModelKind, hyperparameters: Hyperparameters, standardizer: Option<Standardizer>, model: Model) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind,
            hyperparameters,
            standardizer,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Input(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        file.model.check()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Predictions for already standardized rows.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.model.predict(x)
    }

    /// Standardizes the trailing graph-feature columns first, when the file
    /// carries a standardizer, then predicts. Fused rows keep their
    /// embedding columns in front, so the same rule covers both layouts.
    pub fn predict_raw(&self, x: &Matrix) -> Result<Vec<f64>> {
        match &self.standardizer {
            None => self.model.predict(x),
            Some(s) => {
                if x.cols() < s.width() {
                    return Err(Error::Shape {
                        expected: s.width(),
                        got: x.cols(),
                    });
                }
                let mut z = x.clone();
                let start = z.cols() - s.width();
                for i in 0..z.rows() {
                    s.apply_row(&mut z.row_mut(i)[start..]);
                }
                self.model.predict(&z)
            }
        }
    }
}
