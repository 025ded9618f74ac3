//! Probabilistic binary classifiers: weighted L2-regularized logistic
//! regression and a small feed-forward network.
//!
//! Both minimise the same output-level objective
//!
//! ```text
//! (1/W) Σ wᵢ·[softplus(zᵢ) − yᵢ·zᵢ]  +  (l2/2)·‖weights‖²  +  η·PI
//! PI = (1/W) Σ wᵢ·pᵢ·ln(q(aᵢ) / q)
//! ```
//!
//! where `pᵢ = σ(zᵢ)`, `q(a)` is the weighted mean prediction in group `a`
//! and `q` the overall weighted mean prediction. `PI` is the prejudice index:
//! a plug-in estimate of how much the positive prediction rate depends on the
//! group. Intercepts and biases are never penalised.

mod logistic;
mod mlp;

use std::borrow::Cow;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use logistic::{fit_logistic, GlmModel};
pub use mlp::{fit_mlp, MlpModel};

/// Smallest and largest probability a model will report.
const PROB_FLOOR: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub l2: f64,
    /// Prejudice-index penalty strength; 0 disables it.
    pub pr_eta: f64,
    /// Newton iterations for logistic regression, epochs for the MLP.
    pub max_iter: usize,
    /// Convergence threshold on the gradient max-norm (logistic only).
    pub tol: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(skip)]
    pub sample_weights: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            pr_eta: 0.0,
            max_iter: 500,
            tol: 1e-8,
            learning_rate: 0.05,
            batch_size: 32,
            seed: 0,
            sample_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn with_weights(mut self, w: Vec<f64>) -> Self {
        self.sample_weights = Some(w);
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.pr_eta = eta;
        self
    }

    /// Copy without per-row weights, as stored alongside a fitted model.
    pub(crate) fn summary(&self) -> TrainConfig {
        TrainConfig {
            sample_weights: None,
            ..self.clone()
        }
    }

    fn weights(&self, n: usize) -> Cow<'_, [f64]> {
        match &self.sample_weights {
            Some(w) => Cow::Borrowed(w),
            None => Cow::Owned(vec![1.0; n]),
        }
    }
}

/// Validates inputs shared by every fit and loss evaluation.
fn check_inputs(
    design: ArrayView2<f64>,
    labels: &[u8],
    group: Option<&[u8]>,
    config: &TrainConfig,
) -> Result<()> {
    let n = design.nrows();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: n,
            actual: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("training data"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid("labels", format!("non-binary label {bad}")));
    }
    if design.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("design", "contains non-finite values"));
    }
    for (name, v) in [
        ("l2", config.l2),
        ("pr_eta", config.pr_eta),
        ("tol", config.tol),
        ("learning_rate", config.learning_rate),
    ] {
        if v.is_nan() || v < 0.0 {
            return Err(Error::invalid(name, format!("{v} is negative")));
        }
    }
    if let Some(w) = &config.sample_weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                what: "sample weights",
                expected: n,
                actual: w.len(),
            });
        }
        if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::invalid("sample_weights", "weights must be finite and nonnegative"));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("sample_weights", "total weight is zero"));
        }
    }
    if let Some(g) = group {
        if g.len() != n {
            return Err(Error::DimensionMismatch {
                what: "group",
                expected: n,
                actual: g.len(),
            });
        }
        if g.iter().any(|&a| a > 1) {
            return Err(Error::invalid("group", "non-binary group value"));
        }
    } else if config.pr_eta > 0.0 {
        return Err(Error::invalid("group", "required when pr_eta > 0"));
    }
    Ok(())
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    crate::dgp::sigmoid(z)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Data-dependent part of the objective and its derivative with respect to
/// each logit. The L2 term is added by the model.
fn output_objective(
    logits: &[f64],
    labels: &[u8],
    weights: &[f64],
    group: Option<&[u8]>,
    eta: f64,
) -> (f64, Vec<f64>) {
    let total_w: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grad: Vec<f64> = Vec::with_capacity(logits.len());
    for ((&z, &y), &w) in logits.iter().zip(labels).zip(weights) {
        loss += w * (softplus(z) - f64::from(y) * z);
        grad.push(w * (sigmoid(z) - f64::from(y)) / total_w);
    }
    loss /= total_w;

    if eta > 0.0 {
        let group = group.expect("checked by check_inputs");
        let mut mass = [0.0f64; 2];
        let mut wsum = [0.0f64; 2];
        for ((&z, &a), &w) in logits.iter().zip(group).zip(weights) {
            mass[a as usize] += w * sigmoid(z);
            wsum[a as usize] += w;
        }
        let q = (mass[0] + mass[1]) / total_w;
        // An empty group carries no prejudice: its log-ratio is never used.
        let log_ratio = [0, 1].map(|a| {
            if wsum[a] > 0.0 {
                (mass[a] / wsum[a] / q).ln()
            } else {
                0.0
            }
        });
        let mut pi = 0.0;
        for (i, ((&z, &a), &w)) in logits.iter().zip(group).zip(weights).enumerate() {
            let p = sigmoid(z);
            let lr = log_ratio[a as usize];
            pi += w * p * lr;
            // The derivatives through q(a) and q cancel exactly in the sum,
            // leaving only the direct term.
            grad[i] += eta * w * p * (1.0 - p) * lr / total_w;
        }
        loss += eta * pi / total_w;
    }
    (loss, grad)
}

/// Prejudice index of a set of predicted probabilities.
pub fn prejudice_index(probs: &[f64], group: &[u8], weights: Option<&[f64]>) -> f64 {
    let w: Cow<[f64]> = weights.map(Cow::Borrowed).unwrap_or_else(|| Cow::Owned(vec![1.0; probs.len()]));
    let logits: Vec<f64> = probs.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
    let labels = vec![0u8; probs.len()];
    let (with, _) = output_objective(&logits, &labels, &w, Some(group), 1.0);
    let (without, _) = output_objective(&logits, &labels, &w, Some(group), 0.0);
    with - without
}

/// A fitted probabilistic classifier of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    Logistic(GlmModel),
    Mlp(MlpModel),
}

impl Classifier {
    pub fn n_features(&self) -> usize {
        match self {
            Classifier::Logistic(m) => m.coefficients.len(),
            Classifier::Mlp(m) => m.layer_sizes[0],
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            Classifier::Logistic(m) => &m.feature_names,
            Classifier::Mlp(m) => &m.feature_names,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            Classifier::Logistic(m) => m.converged,
            Classifier::Mlp(m) => m.converged,
        }
    }

    pub fn predict_proba(&self, design: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            Classifier::Logistic(m) => m.predict_proba(design),
            Classifier::Mlp(m) => m.predict_proba(design),
        }
    }

    /// All trainable parameters, flattened (see [`loss_and_gradient`]).
    pub fn parameters(&self) -> Vec<f64> {
        match self {
            Classifier::Logistic(m) => m.parameters(),
            Classifier::Mlp(m) => m.parameters(),
        }
    }

    pub fn with_parameters(&self, params: &[f64]) -> Result<Classifier> {
        Ok(match self {
            Classifier::Logistic(m) => Classifier::Logistic(m.with_parameters(params)?),
            Classifier::Mlp(m) => Classifier::Mlp(m.with_parameters(params)?),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Classifier> {
        let file: ModelFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

impl From<GlmModel> for Classifier {
    fn from(m: GlmModel) -> Self {
        Classifier::Logistic(m)
    }
}

impl From<MlpModel> for Classifier {
    fn from(m: MlpModel) -> Self {
        Classifier::Mlp(m)
    }
}

/// Exact training objective and its analytic gradient at the model's
/// current parameters.
///
/// Logistic parameters are ordered `[coefficients..., intercept]`. MLP
/// parameters are ordered layer by layer, each layer as its row-major
/// weight matrix (outputs × inputs) followed by its biases.
pub fn loss_and_gradient(
    model: &Classifier,
    design: ArrayView2<f64>,
    labels: &[u8],
    group: Option<&[u8]>,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(design, labels, group, config)?;
    if design.ncols() != model.n_features() {
        return Err(Error::DimensionMismatch {
            what: "design columns",
            expected: model.n_features(),
            actual: design.ncols(),
        });
    }
    let w = config.weights(labels.len());
    Ok(match model {
        Classifier::Logistic(m) => m.objective(design, labels, &w, group, config),
        Classifier::Mlp(m) => m.objective(design, labels, &w, group, config),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmParameters {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParameters {
    pub layer_sizes: Vec<usize>,
    /// Per layer, row-major `outputs × inputs`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// On-disk model format:
/// `{kind, feature_names, parameters, config, converged, n_iter}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ModelFile {
    Logistic {
        feature_names: Vec<String>,
        parameters: GlmParameters,
        config: TrainConfig,
        converged: bool,
        n_iter: usize,
    },
    Mlp {
        feature_names: Vec<String>,
        parameters: MlpParameters,
        config: TrainConfig,
        converged: bool,
        n_iter: usize,
    },
}

impl From<&Classifier> for ModelFile {
    fn from(c: &Classifier) -> Self {
        match c {
            Classifier::Logistic(m) => ModelFile::Logistic {
                feature_names: m.feature_names.clone(),
                parameters: GlmParameters {
                    coefficients: m.coefficients.clone(),
                    intercept: m.intercept,
                },
                config: m.config.clone(),
                converged: m.converged,
                n_iter: m.n_iter,
            },
            Classifier::Mlp(m) => ModelFile::Mlp {
                feature_names: m.feature_names.clone(),
                parameters: m.to_parameters(),
                config: m.config.clone(),
                converged: m.converged,
                n_iter: m.n_iter,
            },
        }
    }
}

impl TryFrom<ModelFile> for Classifier {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        match f {
            ModelFile::Logistic {
                feature_names,
                parameters,
                config,
                converged,
                n_iter,
            } => {
                if feature_names.len() != parameters.coefficients.len() {
                    return Err(Error::DimensionMismatch {
                        what: "feature names",
                        expected: parameters.coefficients.len(),
                        actual: feature_names.len(),
                    });
                }
                Ok(Classifier::Logistic(GlmModel {
                    coefficients: parameters.coefficients,
                    intercept: parameters.intercept,
                    feature_names,
                    config,
                    converged,
                    n_iter,
                    trace: Vec::new(),
                }))
            }
            ModelFile::Mlp {
                feature_names,
                parameters,
                config,
                converged,
                n_iter,
            } => Ok(Classifier::Mlp(MlpModel::from_parameters(
                parameters,
                feature_names,
                config,
                converged,
                n_iter,
            )?)),
        }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    pub fn random_instance(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<u8>, Vec<u8>, Vec<f64>) {
        let mut rng = crate::seed::rng(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let a = (0..n).map(|i| (i % 2) as u8).collect();
        let w = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        (x, y, a, w)
    }

    /// Central finite differences of the objective, parameter by parameter.
    pub fn finite_difference(
        model: &Classifier,
        x: ArrayView2<f64>,
        y: &[u8],
        a: Option<&[u8]>,
        cfg: &TrainConfig,
        h: f64,
    ) -> Vec<f64> {
        let theta = model.parameters();
        (0..theta.len())
            .map(|k| {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[k] += h;
                minus[k] -= h;
                let fp = loss_and_gradient(&model.with_parameters(&plus).unwrap(), x, y, a, cfg).unwrap().0;
                let fm = loss_and_gradient(&model.with_parameters(&minus).unwrap(), x, y, a, cfg).unwrap().0;
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let scale = analytic
            .iter()
            .chain(numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-8);
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, b)| (a - b).abs() / scale)
            .fold(0.0, f64::max)
    }
}
