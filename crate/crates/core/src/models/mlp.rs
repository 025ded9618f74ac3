use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

/// Per-layer (weight, bias) gradients.
type LayerGrads = Vec<(Array2<f64>, Array1<f64>)>;

use super::{check_inputs, clamp_prob, output_objective, sigmoid, MlpParameters, TrainConfig};
use crate::tabular::EncodedMatrix;
use crate::{Error, Result};

/// Feed-forward network with tanh hidden layers and a single sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    /// `[inputs, hidden..., 1]`.
    pub layer_sizes: Vec<usize>,
    /// Per layer, `outputs × inputs`.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
    pub converged: bool,
    pub n_iter: usize,
    /// Full-data objective before training and after every epoch.
    pub loss_trace: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(n_inputs: usize, hidden: &[usize], feature_names: Vec<String>, rng: &mut impl Rng) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("hidden", "at least one hidden layer is required"));
        }
        if hidden.contains(&0) {
            return Err(Error::invalid("hidden", "hidden layers must be non-empty"));
        }
        if feature_names.len() != n_inputs {
            return Err(Error::DimensionMismatch {
                what: "feature names",
                expected: n_inputs,
                actual: feature_names.len(),
            });
        }
        let mut layer_sizes = vec![n_inputs];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit)));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            feature_names,
            config: TrainConfig::default(),
            converged: false,
            n_iter: 0,
            loss_trace: Vec::new(),
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Activations of every layer; the last entry holds the output logits.
    fn forward(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let depth = self.weights.len();
        let mut acts = Vec::with_capacity(depth + 1);
        acts.push(x.to_owned());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l + 1 < depth {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    fn logits(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.forward(x).pop().expect("at least one layer").column(0).to_vec()
    }

    pub fn predict_proba(&self, design: ArrayView2<f64>) -> Result<Vec<f64>> {
        if design.ncols() != self.layer_sizes[0] {
            return Err(Error::DimensionMismatch {
                what: "design columns",
                expected: self.layer_sizes[0],
                actual: design.ncols(),
            });
        }
        Ok(self.logits(design).into_iter().map(|z| clamp_prob(sigmoid(z))).collect())
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_parameters());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.n_parameters() {
            return Err(Error::DimensionMismatch {
                what: "parameters",
                expected: self.n_parameters(),
                actual: params.len(),
            });
        }
        let mut m = self.clone();
        let mut offset = 0;
        for (w, b) in m.weights.iter_mut().zip(m.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = params[offset];
                offset += 1;
            }
        }
        Ok(m)
    }

    pub(super) fn to_parameters(&self) -> MlpParameters {
        MlpParameters {
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: self.biases.iter().map(|b| b.to_vec()).collect(),
        }
    }

    pub(super) fn from_parameters(
        p: MlpParameters,
        feature_names: Vec<String>,
        config: TrainConfig,
        converged: bool,
        n_iter: usize,
    ) -> Result<Self> {
        let sizes = &p.layer_sizes;
        if sizes.len() < 3 || *sizes.last().unwrap() != 1 {
            return Err(Error::Schema("mlp layer_sizes must be [inputs, hidden..., 1]".into()));
        }
        if feature_names.len() != sizes[0] || p.weights.len() != sizes.len() - 1 || p.biases.len() != sizes.len() - 1 {
            return Err(Error::Schema("mlp parameters do not match layer_sizes".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in sizes.windows(2).enumerate() {
            let w = Array2::from_shape_vec((pair[1], pair[0]), p.weights[l].clone())
                .map_err(|e| Error::Schema(format!("layer {l} weights: {e}")))?;
            if p.biases[l].len() != pair[1] {
                return Err(Error::Schema(format!("layer {l} biases have wrong length")));
            }
            weights.push(w);
            biases.push(Array1::from(p.biases[l].clone()));
        }
        Ok(Self {
            layer_sizes: p.layer_sizes,
            weights,
            biases,
            feature_names,
            config,
            converged,
            n_iter,
            loss_trace: Vec::new(),
        })
    }

    /// Objective and gradient in the flattened parameter order.
    pub(super) fn objective(
        &self,
        design: ArrayView2<f64>,
        labels: &[u8],
        weights: &[f64],
        group: Option<&[u8]>,
        config: &TrainConfig,
    ) -> (f64, Vec<f64>) {
        let (loss, grads) = self.backprop(design, labels, weights, group, config);
        let mut flat = Vec::with_capacity(self.n_parameters());
        for (gw, gb) in grads {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        (loss, flat)
    }

    fn backprop(
        &self,
        design: ArrayView2<f64>,
        labels: &[u8],
        weights: &[f64],
        group: Option<&[u8]>,
        config: &TrainConfig,
    ) -> (f64, LayerGrads) {
        let acts = self.forward(design);
        let logits = acts.last().unwrap().column(0).to_vec();
        let (mut loss, g_out) = output_objective(&logits, labels, weights, group, config.pr_eta);
        loss += 0.5 * config.l2 * self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();

        let depth = self.weights.len();
        let mut grads = Vec::with_capacity(depth);
        let mut delta = Array2::from_shape_vec((g_out.len(), 1), g_out).expect("column vector");
        for l in (0..depth).rev() {
            let mut gw = delta.t().dot(&acts[l]);
            gw.scaled_add(config.l2, &self.weights[l]);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.weights[l]);
                next.zip_mut_with(&acts[l], |d, h| *d *= 1.0 - h * h);
                delta = next;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        (loss, grads)
    }
}

/// Trains an MLP by mini-batch SGD for `config.max_iter` epochs. The
/// prejudice penalty, when enabled, is estimated on each batch.
pub fn fit_mlp(
    x: &EncodedMatrix,
    labels: &[u8],
    group: Option<&[u8]>,
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<MlpModel> {
    let design = x.design.view();
    check_inputs(design, labels, group, config)?;
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be positive"));
    }
    let mut rng = crate::seed::rng(config.seed);
    let mut model = MlpModel::init(x.n_features(), hidden, x.feature_names.clone(), &mut rng)?;
    model.config = config.summary();
    let weights = config.weights(labels.len());
    let n = labels.len();

    let full_loss = |m: &MlpModel| m.backprop(design, labels, &weights, group, config).0;
    model.loss_trace.push(full_loss(&model));

    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..config.max_iter {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = design.select(Axis(0), batch);
            let yb: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();
            let wb: Vec<f64> = batch.iter().map(|&i| weights[i]).collect();
            if wb.iter().sum::<f64>() <= 0.0 {
                continue;
            }
            let gb: Option<Vec<u8>> = group.map(|g| batch.iter().map(|&i| g[i]).collect());
            let (_, grads) = model.backprop(xb.view(), &yb, &wb, gb.as_deref(), config);
            for ((w, b), (gw, gbias)) in model.weights.iter_mut().zip(model.biases.iter_mut()).zip(grads) {
                w.scaled_add(-config.learning_rate, &gw);
                b.scaled_add(-config.learning_rate, &gbias);
            }
        }
        model.n_iter += 1;
        let loss = full_loss(&model);
        model.loss_trace.push(loss);
        if !loss.is_finite() {
            log::warn!("mlp objective diverged after {} epochs", model.n_iter);
            return Ok(model);
        }
    }
    let first = model.loss_trace[0];
    model.converged = model.loss_trace.last().is_some_and(|l| l.is_finite() && *l <= first);
    Ok(model)
}
