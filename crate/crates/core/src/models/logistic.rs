use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use super::{check_inputs, clamp_prob, output_objective, sigmoid, TrainConfig};
use crate::tabular::EncodedMatrix;
use crate::{Error, Result};

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Newton decrement `gᵀH⁻¹g` below which the remaining decrease is
/// lost in rounding; large designs can floor the gradient above `tol`.
const DECREMENT_TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct GlmModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
    pub converged: bool,
    pub n_iter: usize,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

impl GlmModel {
    /// All-zero model; every prediction is 0.5.
    pub fn zeros(feature_names: Vec<String>) -> Self {
        Self {
            coefficients: vec![0.0; feature_names.len()],
            intercept: 0.0,
            feature_names,
            config: TrainConfig::default(),
            converged: false,
            n_iter: 0,
            trace: Vec::new(),
        }
    }

    fn logits(&self, design: ArrayView2<f64>) -> Vec<f64> {
        design
            .outer_iter()
            .map(|row| {
                row.iter()
                    .zip(&self.coefficients)
                    .map(|(x, b)| x * b)
                    .sum::<f64>()
                    + self.intercept
            })
            .collect()
    }

    pub fn predict_proba(&self, design: ArrayView2<f64>) -> Result<Vec<f64>> {
        if design.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                what: "design columns",
                expected: self.coefficients.len(),
                actual: design.ncols(),
            });
        }
        Ok(self.logits(design).into_iter().map(|z| clamp_prob(sigmoid(z))).collect())
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.coefficients.clone();
        p.push(self.intercept);
        p
    }

    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        let k = self.coefficients.len();
        if params.len() != k + 1 {
            return Err(Error::DimensionMismatch {
                what: "parameters",
                expected: k + 1,
                actual: params.len(),
            });
        }
        Ok(Self {
            coefficients: params[..k].to_vec(),
            intercept: params[k],
            ..self.clone()
        })
    }

    pub(super) fn objective(
        &self,
        design: ArrayView2<f64>,
        labels: &[u8],
        weights: &[f64],
        group: Option<&[u8]>,
        config: &TrainConfig,
    ) -> (f64, Vec<f64>) {
        let z = self.logits(design);
        let (mut loss, g_out) = output_objective(&z, labels, weights, group, config.pr_eta);
        let k = self.coefficients.len();
        let mut grad = vec![0.0; k + 1];
        for (row, g) in design.outer_iter().zip(&g_out) {
            for (acc, x) in grad.iter_mut().zip(row.iter()) {
                *acc += g * x;
            }
            grad[k] += g;
        }
        for (acc, b) in grad.iter_mut().zip(&self.coefficients) {
            *acc += config.l2 * b;
        }
        loss += 0.5 * config.l2 * self.coefficients.iter().map(|b| b * b).sum::<f64>();
        (loss, grad)
    }

    /// Hessian of the regularised log-loss. Used as the Newton metric; it is
    /// exact when the prejudice penalty is off.
    fn loss_hessian(&self, design: ArrayView2<f64>, weights: &[f64], l2: f64) -> DMatrix<f64> {
        let k = self.coefficients.len();
        let total_w: f64 = weights.iter().sum();
        let z = self.logits(design);
        let mut h = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut xa = vec![0.0; k + 1];
        for ((row, zi), w) in design.outer_iter().zip(&z).zip(weights) {
            let p = sigmoid(*zi);
            let s = w * p * (1.0 - p) / total_w;
            if s == 0.0 {
                continue;
            }
            for (dst, x) in xa.iter_mut().zip(row.iter()) {
                *dst = *x;
            }
            xa[k] = 1.0;
            for i in 0..=k {
                let si = s * xa[i];
                for j in 0..=i {
                    h[(i, j)] += si * xa[j];
                }
            }
        }
        for i in 0..=k {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        for i in 0..k {
            h[(i, i)] += l2;
        }
        h
    }
}

/// Fits a weighted logistic regression by damped Newton iterations with
/// Armijo backtracking. Falls back to steepest descent when the Newton
/// system is not positive definite.
///
/// Convergence is declared when the gradient max-norm drops to `tol`.
/// Reaching `max_iter` first returns the model with `converged = false`.
pub fn fit_logistic(
    x: &EncodedMatrix,
    labels: &[u8],
    group: Option<&[u8]>,
    config: &TrainConfig,
) -> Result<GlmModel> {
    let design = x.design.view();
    check_inputs(design, labels, group, config)?;
    let weights = config.weights(labels.len());
    let mut model = GlmModel::zeros(x.feature_names.clone());
    model.config = config.summary();

    let (mut f, mut grad) = model.objective(design, labels, &weights, group, config);
    model.trace.push(f);
    for iter in 0..config.max_iter {
        let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gnorm <= config.tol {
            model.converged = true;
            model.n_iter = iter;
            return Ok(model);
        }
        let g = DVector::from_vec(grad.clone());
        let mut h = model.loss_hessian(design, &weights, config.l2);
        // The intercept is unpenalised; a tiny ridge keeps the system solvable
        // when every prediction saturates.
        let k = model.coefficients.len();
        h[(k, k)] += 1e-12;
        let direction = match h.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -g.clone(),
        };
        let decrement = -direction.dot(&g);
        if (0.0..=DECREMENT_TOL).contains(&decrement) && gnorm <= config.tol.max(1e-6) {
            model.converged = true;
            model.n_iter = iter;
            return Ok(model);
        }
        let mut slope = direction.dot(&g);
        let direction = if slope < 0.0 {
            direction
        } else {
            slope = -g.dot(&g);
            -g
        };

        let theta = model.parameters();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = theta
                .iter()
                .zip(direction.iter())
                .map(|(t, d)| t + step * d)
                .collect();
            let candidate = model.with_parameters(&trial)?;
            let (f_new, g_new) = candidate.objective(design, labels, &weights, group, config);
            if f_new.is_finite() && f_new < f && f_new <= f + ARMIJO_C * step * slope {
                accepted = Some((candidate, f_new, g_new));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, f_new, g_new)) => {
                model.coefficients = candidate.coefficients;
                model.intercept = candidate.intercept;
                f = f_new;
                grad = g_new;
                model.trace.push(f);
            }
            None => {
                // No representable step decreases the objective: the
                // gradient is at the floating-point noise floor.
                log::debug!("line search stalled at iteration {iter} with |grad| = {gnorm:e}");
                model.n_iter = iter;
                model.converged = gnorm <= config.tol.max(1e-6);
                return Ok(model);
            }
        }
    }
    let gnorm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    model.converged = gnorm <= config.tol;
    model.n_iter = config.max_iter;
    if !model.converged {
        log::warn!(
            "logistic regression stopped after {} iterations with |grad| = {gnorm:e}",
            config.max_iter
        );
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::{loss_and_gradient, Classifier};
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    fn encoded(x: Array2<f64>) -> EncodedMatrix {
        let p = x.ncols();
        EncodedMatrix::from_parts(x, names(p)).unwrap()
    }

    #[test]
    fn sigmoid_reference_value() {
        let m = GlmModel {
            coefficients: vec![1.0],
            intercept: 0.0,
            ..GlmModel::zeros(names(1))
        };
        let p = m.predict_proba(array![[3.0]].view()).unwrap();
        assert!((p[0] - 0.95257).abs() < 1e-5);
    }

    #[test]
    fn zero_parameters_give_ln2_loss() {
        let (x, y, _, _) = random_instance(50, 3, 4);
        let m = Classifier::Logistic(GlmModel::zeros(names(3)));
        let (loss, _) = loss_and_gradient(&m, x.view(), &y, None, &TrainConfig::default()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_with_penalty() {
        let (x, y, a, w) = random_instance(80, 4, 11);
        let cfg = TrainConfig {
            l2: 0.3,
            pr_eta: 2.0,
            sample_weights: Some(w),
            ..TrainConfig::default()
        };
        let m = Classifier::Logistic(GlmModel::zeros(names(4)))
            .with_parameters(&[0.4, -1.1, 0.3, 0.8, -0.2])
            .unwrap();
        let (_, g) = loss_and_gradient(&m, x.view(), &y, Some(&a), &cfg).unwrap();
        let fd = finite_difference(&m, x.view(), &y, Some(&a), &cfg, 1e-6);
        assert!(max_relative_error(&g, &fd) < 1e-6, "{g:?} vs {fd:?}");
    }

    #[test]
    fn recovers_generating_coefficients() {
        let n = 20_000;
        let mut rng = crate::seed::rng(3);
        use rand::Rng;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-2.0..2.0));
        let y: Vec<u8> = x
            .outer_iter()
            .map(|r| {
                let p = sigmoid(1.5 * r[0] - 0.5 * r[1] + 0.3);
                u8::from(rng.random::<f64>() < p)
            })
            .collect();
        let cfg = TrainConfig {
            l2: 0.0,
            ..TrainConfig::default()
        };
        let m = fit_logistic(&encoded(x), &y, None, &cfg).unwrap();
        assert!(m.converged);
        assert!((m.coefficients[0] - 1.5).abs() < 0.1);
        assert!((m.coefficients[1] + 0.5).abs() < 0.1);
        assert!((m.intercept - 0.3).abs() < 0.1);
    }

    #[test]
    fn trace_is_monotone_with_penalty() {
        let (x, y, a, _) = random_instance(300, 3, 5);
        let cfg = TrainConfig::default().with_eta(5.0);
        let m = fit_logistic(&encoded(x), &y, Some(&a), &cfg).unwrap();
        assert!(m.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn separable_data_stays_finite() {
        let x = array![[-2.0], [-1.0], [1.0], [2.0]];
        let y = [0, 0, 1, 1];
        let m = fit_logistic(&encoded(x), &y, None, &TrainConfig::default()).unwrap();
        assert!(m.coefficients[0].is_finite() && m.coefficients[0] > 1.0);
    }

    #[test]
    fn max_iter_reports_non_convergence() {
        let (x, y, _, _) = random_instance(100, 2, 6);
        let cfg = TrainConfig {
            max_iter: 1,
            tol: 0.0,
            ..TrainConfig::default()
        };
        let m = fit_logistic(&encoded(x), &y, None, &cfg).unwrap();
        assert!(!m.converged);
    }

    fn integer_weight_instance() -> impl Strategy<Value = (Vec<(f64, f64, u8)>, Vec<u32>)> {
        (4usize..25).prop_flat_map(|n| {
            (
                prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0u8..2), n),
                prop::collection::vec(1u32..4, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn integer_weights_equal_row_duplication((rows, reps) in integer_weight_instance()) {
            let n = rows.len();
            let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { rows[i].0 } else { rows[i].1 });
            let y: Vec<u8> = rows.iter().map(|r| r.2).collect();
            let cfg_w = TrainConfig::default().with_weights(reps.iter().map(|&r| f64::from(r)).collect());
            let weighted = fit_logistic(&encoded(x.clone()), &y, None, &cfg_w).unwrap();

            let mut dup_rows = Vec::new();
            let mut dup_y = Vec::new();
            for i in 0..n {
                for _ in 0..reps[i] {
                    dup_rows.push(i);
                    dup_y.push(y[i]);
                }
            }
            let xd = Array2::from_shape_fn((dup_rows.len(), 2), |(i, j)| x[[dup_rows[i], j]]);
            let dup = fit_logistic(&encoded(xd), &dup_y, None, &TrainConfig::default()).unwrap();
            for (a, b) in weighted.parameters().iter().zip(dup.parameters()) {
                prop_assert!((a - b).abs() < 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }

        #[test]
        fn analytic_gradient_matches_numeric(seed in 0u64..1000, eta in 0.0f64..3.0) {
            let (x, y, a, w) = random_instance(30, 3, seed);
            let cfg = TrainConfig { pr_eta: eta, l2: 0.1, sample_weights: Some(w), ..TrainConfig::default() };
            let theta: Vec<f64> = (0..4).map(|k| ((seed + k) % 7) as f64 * 0.2 - 0.6).collect();
            let m = Classifier::Logistic(GlmModel::zeros(names(3))).with_parameters(&theta).unwrap();
            let (_, g) = loss_and_gradient(&m, x.view(), &y, Some(&a), &cfg).unwrap();
            let fd = finite_difference(&m, x.view(), &y, Some(&a), &cfg, 1e-6);
            prop_assert!(max_relative_error(&g, &fd) < 1e-5);
        }
    }
}
