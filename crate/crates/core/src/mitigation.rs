//! Mitigation strategies and the evaluation pipeline that compares them.
//!
//! Three statistical baselines (reweighing, prejudice remover, reject-option
//! classification) and counterfactual pooling, which trains on a "fair
//! world" where every individual carries the baseline arm's labels.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{impute_sequential, ImputationConfig, ImputedCohort, StageSpec};
use crate::fairness::{
    average_reports, causal_accuracy, causal_metrics, stat_metrics, ArmPredictions, CausalAccuracy,
    CounterfactualPredictionSet, FairnessReport, PredictionSet,
};
use crate::models::{fit_logistic, Classifier, GlmModel, TrainConfig};
use crate::tabular::{one_hot_encode, ColumnRole, DataTable, EncodedMatrix};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    Pre,
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Baseline,
    OtherArm,
    Max,
}

/// How the reject-option band is chosen on the validation rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum BandSelection {
    /// Smallest absolute statistical parity.
    MinParity,
    /// Highest balanced accuracy among bands with `|parity| ≤ bound`,
    /// falling back to `MinParity` when no band qualifies.
    BalancedAccuracy { parity_bound: f64 },
}

impl Default for BandSelection {
    fn default() -> Self {
        BandSelection::BalancedAccuracy { parity_bound: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MitigationMethod {
    None,
    Rew,
    Prem {
        eta: f64,
    },
    Roc {
        /// Fixed band; `None` tunes it over 0.01..=0.30.
        band: Option<f64>,
        favorable_label: u8,
        unprivileged_group: u8,
        selection: BandSelection,
    },
    Causal {
        timing: Timing,
        baseline_arm: u8,
        pooling: Pooling,
    },
}

impl MitigationMethod {
    pub fn roc() -> Self {
        MitigationMethod::Roc {
            band: None,
            favorable_label: 1,
            unprivileged_group: 0,
            selection: BandSelection::default(),
        }
    }

    pub fn causal(timing: Timing) -> Self {
        MitigationMethod::Causal {
            timing,
            baseline_arm: 0,
            pooling: Pooling::Baseline,
        }
    }

    /// The six methods of the benchmark table.
    pub fn all() -> Vec<Self> {
        vec![
            MitigationMethod::None,
            MitigationMethod::Rew,
            MitigationMethod::Prem { eta: 1.0 },
            MitigationMethod::roc(),
            MitigationMethod::causal(Timing::Pre),
            MitigationMethod::causal(Timing::Post),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MitigationMethod::Prem { eta } if eta.is_nan() || eta < 0.0 => Err(Error::invalid("eta", format!("{eta} is negative"))),
            MitigationMethod::Roc {
                band,
                favorable_label,
                unprivileged_group,
                selection,
            } => {
                if let Some(b) = band {
                    check_band(b)?;
                }
                if favorable_label > 1 || unprivileged_group > 1 {
                    return Err(Error::invalid("roc", "labels and groups must be 0 or 1"));
                }
                if let BandSelection::BalancedAccuracy { parity_bound } = selection {
                    if parity_bound.is_nan() || parity_bound < 0.0 {
                        return Err(Error::invalid("parity_bound", "must be nonnegative"));
                    }
                }
                Ok(())
            }
            MitigationMethod::Causal { baseline_arm, .. } if baseline_arm > 1 => {
                Err(Error::invalid("baseline_arm", format!("{baseline_arm} is not 0 or 1")))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MitigationMethod::None => "none",
            MitigationMethod::Rew => "rew",
            MitigationMethod::Prem { .. } => "prem",
            MitigationMethod::Roc { .. } => "roc",
            MitigationMethod::Causal { timing: Timing::Pre, .. } => "causal-pre",
            MitigationMethod::Causal { timing: Timing::Post, .. } => "causal-post",
        }
    }
}

impl fmt::Display for MitigationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const METHOD_NAMES: [&str; 6] = ["none", "rew", "prem", "roc", "causal-pre", "causal-post"];

impl FromStr for MitigationMethod {
    type Err = Error;

    /// Parses a method name with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => MitigationMethod::None,
            "rew" => MitigationMethod::Rew,
            "prem" => MitigationMethod::Prem { eta: 1.0 },
            "roc" => MitigationMethod::roc(),
            "causal-pre" => MitigationMethod::causal(Timing::Pre),
            "causal-post" => MitigationMethod::causal(Timing::Post),
            other => {
                return Err(Error::invalid(
                    "method",
                    format!("unknown method `{other}`; valid: {}", METHOD_NAMES.join(", ")),
                ))
            }
        })
    }
}

fn check_band(b: f64) -> Result<()> {
    if b > 0.0 && b < 0.5 {
        Ok(())
    } else {
        Err(Error::invalid("band", format!("{b} is outside (0, 0.5)")))
    }
}

/// Per-row weights `P(A=a)·P(Y=y) / P(A=a, Y=y)`.
pub fn reweigh_labels(group: &[u8], labels: &[u8]) -> Result<Vec<f64>> {
    if group.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: group.len(),
            actual: labels.len(),
        });
    }
    if group.iter().chain(labels).any(|&v| v > 1) {
        return Err(Error::invalid("reweigh", "group and label must be binary"));
    }
    let n = group.len() as f64;
    let mut cell = [[0usize; 2]; 2];
    for (&a, &y) in group.iter().zip(labels) {
        cell[a as usize][y as usize] += 1;
    }
    for a in 0..2u8 {
        for y in 0..2u8 {
            if cell[a as usize][y as usize] == 0 {
                return Err(Error::EmptyCell { group: a, label: y });
            }
        }
    }
    let pa = |a: usize| (cell[a][0] + cell[a][1]) as f64 / n;
    let py = |y: usize| (cell[0][y] + cell[1][y]) as f64 / n;
    let w = |a: usize, y: usize| pa(a) * py(y) / (cell[a][y] as f64 / n);
    Ok(group.iter().zip(labels).map(|(&a, &y)| w(a as usize, y as usize)).collect())
}

pub fn reweigh(table: &DataTable, group_col: &str, label_col: &str) -> Result<Vec<f64>> {
    reweigh_labels(&table.binary(group_col)?, &table.binary(label_col)?)
}

/// Logistic regression with the prejudice-index penalty. The design is
/// expected to include the group indicator as a feature.
pub fn prejudice_remover(
    design: &EncodedMatrix,
    labels: &[u8],
    group: &[u8],
    eta: f64,
    config: &TrainConfig,
) -> Result<GlmModel> {
    let cfg = TrainConfig {
        pr_eta: eta,
        ..config.clone()
    };
    fit_logistic(design, labels, Some(group), &cfg)
}

/// Thresholds at 0.5, except inside the band `|score − 0.5| < band` where
/// the unprivileged group receives the favorable label and the privileged
/// group the other one.
pub fn reject_option(
    scores: &[f64],
    group: &[u8],
    band: f64,
    favorable_label: u8,
    unprivileged_group: u8,
) -> Result<Vec<u8>> {
    check_band(band)?;
    if scores.len() != group.len() {
        return Err(Error::DimensionMismatch {
            what: "group",
            expected: scores.len(),
            actual: group.len(),
        });
    }
    if favorable_label > 1 || unprivileged_group > 1 {
        return Err(Error::invalid("reject_option", "labels and groups must be 0 or 1"));
    }
    Ok(scores
        .iter()
        .zip(group)
        .map(|(&s, &a)| {
            if (s - 0.5).abs() < band {
                if a == unprivileged_group {
                    favorable_label
                } else {
                    1 - favorable_label
                }
            } else {
                u8::from(s >= 0.5)
            }
        })
        .collect())
}

/// Candidate reject-option bands: 0.01, 0.02, …, 0.30.
pub fn band_grid() -> Vec<f64> {
    (1..=30).map(|i| f64::from(i) / 100.0).collect()
}

fn parity_of(pred: &[u8], group: &[u8]) -> Option<f64> {
    let mut pos = [0usize; 2];
    let mut cnt = [0usize; 2];
    for (&p, &a) in pred.iter().zip(group) {
        cnt[a as usize] += 1;
        pos[a as usize] += usize::from(p);
    }
    (cnt[0] > 0 && cnt[1] > 0).then(|| pos[1] as f64 / cnt[1] as f64 - pos[0] as f64 / cnt[0] as f64)
}

fn balanced_accuracy(pred: &[u8], y: &[u8]) -> f64 {
    let mut hit = [0usize; 2];
    let mut cnt = [0usize; 2];
    for (&p, &t) in pred.iter().zip(y) {
        cnt[t as usize] += 1;
        hit[t as usize] += usize::from(p == t);
    }
    let r = |k: usize| if cnt[k] > 0 { hit[k] as f64 / cnt[k] as f64 } else { 0.0 };
    0.5 * (r(0) + r(1))
}

/// Chooses a band on validation scores.
pub fn select_band(
    scores: &[f64],
    group: &[u8],
    labels: &[u8],
    favorable_label: u8,
    unprivileged_group: u8,
    selection: BandSelection,
) -> Result<f64> {
    let mut candidates = Vec::new();
    for band in band_grid() {
        let pred = reject_option(scores, group, band, favorable_label, unprivileged_group)?;
        let parity = parity_of(&pred, group).ok_or(Error::Empty("validation group"))?;
        candidates.push((band, parity.abs(), balanced_accuracy(&pred, labels)));
    }
    let min_parity = || {
        candidates
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|c| c.0)
            .expect("non-empty grid")
    };
    Ok(match selection {
        BandSelection::MinParity => min_parity(),
        BandSelection::BalancedAccuracy { parity_bound } => candidates
            .iter()
            .filter(|c| c.1 <= parity_bound)
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .map_or_else(min_parity, |c| c.0),
    })
}

/// Pooled counterfactual training data: one row per individual and
/// imputation path.
#[derive(Clone, Debug)]
pub struct FairTrainingSet {
    pub design: EncodedMatrix,
    pub labels: Vec<u8>,
    pub weights: Option<Vec<f64>>,
    /// Source row in the cohort for each training row.
    pub source_rows: Vec<usize>,
}

/// Pre-treatment columns used by any stage, in first-use order.
fn pretreatment_columns(table: &DataTable, stages: &[StageSpec]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in stages {
        for p in &s.predictor_cols {
            let pre = table.spec(p).is_ok_and(|c| c.role == ColumnRole::PreTreatment);
            if pre && !out.contains(p) {
                out.push(p.clone());
            }
        }
    }
    out
}

fn intermediate_columns(stages: &[StageSpec]) -> Vec<String> {
    stages[..stages.len() - 1].iter().map(|s| s.outcome_col.clone()).collect()
}

/// Feature columns for a method: pre-treatment columns, intermediate stage
/// outcomes, and the group for the non-causal methods.
fn feature_columns(table: &DataTable, stages: &[StageSpec], with_group: bool) -> Vec<String> {
    let mut cols = pretreatment_columns(table, stages);
    cols.extend(intermediate_columns(stages));
    if with_group {
        cols.push(table.group_name().to_string());
    }
    cols
}

/// Design with intermediate stages replaced by path `j` of `arm`'s draws
/// and, if present, the group column set to `group_value`.
fn world_design(
    base: &EncodedMatrix,
    imputed: &ImputedCohort,
    rows: &[usize],
    arm: u8,
    j: usize,
    group_value: Option<u8>,
) -> Result<Array2<f64>> {
    let mut x = base.design.clone();
    let stages = imputed.stages();
    for s in &stages[..stages.len() - 1] {
        let col = base.block(&s.outcome_col).expect("intermediate stage in design").start;
        let d = imputed.draws(&s.outcome_col, arm)?;
        for (i, &r) in rows.iter().enumerate() {
            x[[i, col]] = f64::from(d[[r, j]]);
        }
    }
    if let Some(a) = group_value {
        let col = base.block(imputed.table().group_name()).expect("group in design").start;
        x.column_mut(col).fill(f64::from(a));
    }
    Ok(x)
}

fn pool_labels(imputed: &ImputedCohort, final_col: &str, baseline: u8, pooling: Pooling) -> Result<Array2<u8>> {
    Ok(match pooling {
        Pooling::Baseline => imputed.draws(final_col, baseline)?.clone(),
        Pooling::OtherArm => imputed.draws(final_col, 1 - baseline)?.clone(),
        Pooling::Max => {
            let mut out = imputed.draws(final_col, 0)?.clone();
            out.zip_mut_with(imputed.draws(final_col, 1)?, |a, &b| *a = (*a).max(b));
            out
        }
    })
}

/// Builds the fair-world training set.
///
/// `Pre` requires a cohort imputed from the first stage on and uses the
/// baseline arm's intermediate draws as features. `Post` requires a cohort
/// whose intermediate stages are fixed at observed values, so only the
/// final outcome is pooled. The group column is never a feature.
pub fn causal_preprocess(
    imputed: &ImputedCohort,
    timing: Timing,
    baseline_arm: u8,
    pooling: Pooling,
    rows: Option<&[usize]>,
) -> Result<FairTrainingSet> {
    if baseline_arm > 1 {
        return Err(Error::invalid("baseline_arm", format!("{baseline_arm} is not 0 or 1")));
    }
    let stages = imputed.stages();
    let last = stages.len() - 1;
    let start = imputed.config().intervention_stage;
    match timing {
        Timing::Pre if start != 0 => {
            return Err(Error::invalid("timing", "pre timing needs every stage imputed"));
        }
        Timing::Post if start != last => {
            return Err(Error::invalid("timing", "post timing needs intermediate stages held at observed values"));
        }
        _ => {}
    }
    let all: Vec<usize>;
    let rows = match rows {
        Some(r) => r,
        None => {
            all = (0..imputed.n()).collect();
            &all
        }
    };
    let table = imputed.table().select_rows(rows);
    let cols = feature_columns(&table, stages, false);
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let base = one_hot_encode(&table, &col_refs)?;
    let labels_all = pool_labels(imputed, &stages[last].outcome_col, baseline_arm, pooling)?;

    let m = imputed.m();
    let n = rows.len();
    let p = base.n_features();
    let mut design = Array2::<f64>::zeros((n * m, p));
    let mut labels = Vec::with_capacity(n * m);
    let mut source_rows = Vec::with_capacity(n * m);
    for j in 0..m {
        let x = world_design(&base, imputed, rows, baseline_arm, j, None)?;
        design.slice_mut(ndarray::s![j * n..(j + 1) * n, ..]).assign(&x);
        labels.extend(rows.iter().map(|&r| labels_all[[r, j]]));
        source_rows.extend_from_slice(rows);
    }
    Ok(FairTrainingSet {
        design: EncodedMatrix {
            design,
            feature_names: base.feature_names,
            source_mapping: base.source_mapping,
        },
        labels,
        weights: None,
        source_rows,
    })
}

/// Everything the mitigation pipeline needs for one cohort.
#[derive(Clone, Debug)]
pub struct MitigationData {
    /// Every stage imputed: the world used for counterfactual evaluation
    /// and for pre-timing pooling.
    pub pre: ImputedCohort,
    /// Intermediate stages fixed at observed values.
    pub post: ImputedCohort,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    /// Subset of the training rows used to tune reject-option bands.
    pub validation_rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub train_fraction: f64,
    /// Share of the training rows used for band validation.
    pub validation_fraction: f64,
    pub imputation: ImputationConfig,
    pub model: TrainConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            validation_fraction: 0.3,
            imputation: ImputationConfig::default(),
            model: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl MitigationData {
    /// Imputes both worlds and draws the train/test split.
    pub fn prepare(table: &DataTable, stages: &[StageSpec], config: &PipelineConfig) -> Result<Self> {
        if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction", "must lie in (0, 1)"));
        }
        if !(config.validation_fraction > 0.0 && config.validation_fraction <= 1.0) {
            return Err(Error::invalid("validation_fraction", "must lie in (0, 1]"));
        }
        if stages.len() < 2 {
            return Err(Error::invalid("stages", "the pipeline needs at least two stages"));
        }
        let pre_cfg = ImputationConfig {
            intervention_stage: 0,
            seed: seed::derive(config.seed, &[1]),
            ..config.imputation.clone()
        };
        let post_cfg = ImputationConfig {
            intervention_stage: stages.len() - 1,
            seed: seed::derive(config.seed, &[2]),
            ..config.imputation.clone()
        };
        let pre = impute_sequential(table, stages, &pre_cfg)?;
        let post = impute_sequential(table, stages, &post_cfg)?;
        let n = pre.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed::derive(config.seed, &[3])));
        let n_train = ((n as f64) * config.train_fraction).round() as usize;
        let n_val = ((n_train as f64) * config.validation_fraction).round() as usize;
        let mut train_rows = order[..n_train].to_vec();
        let mut validation_rows = order[..n_val].to_vec();
        let mut test_rows = order[n_train..].to_vec();
        train_rows.sort_unstable();
        validation_rows.sort_unstable();
        test_rows.sort_unstable();
        if train_rows.is_empty() || test_rows.is_empty() {
            return Err(Error::Empty("train or test split"));
        }
        Ok(Self {
            pre,
            post,
            train_rows,
            test_rows,
            validation_rows,
        })
    }

    fn final_col(&self) -> &str {
        &self.pre.stages().last().expect("stages").outcome_col
    }
}

#[derive(Clone, Debug)]
pub struct MitigationOutcome {
    pub method: MitigationMethod,
    pub model: Classifier,
    /// Band actually applied by reject-option classification.
    pub band: Option<f64>,
    /// Against observed labels on the test rows.
    pub stat: FairnessReport,
    /// Counterfactual criteria on the test rows, averaged over paths.
    pub causal: FairnessReport,
    /// Predictions against baseline-arm outcomes, averaged over paths.
    pub cf_accuracy: CausalAccuracy,
}

/// Scores for test rows under a given world.
struct Predictor<'a> {
    model: &'a Classifier,
    base: EncodedMatrix,
    imputed: &'a ImputedCohort,
    rows: &'a [usize],
    with_group: bool,
}

impl Predictor<'_> {
    fn scores_observed(&self) -> Result<Vec<f64>> {
        self.model.predict_proba(self.base.design.view())
    }

    /// Intermediate stages from `input_arm`, path `j`; group set to
    /// `group_value` when the model uses it.
    fn scores_world(&self, input_arm: u8, j: usize, group_value: u8) -> Result<Vec<f64>> {
        let x = world_design(
            &self.base,
            self.imputed,
            self.rows,
            input_arm,
            j,
            self.with_group.then_some(group_value),
        )?;
        self.model.predict_proba(x.view())
    }
}

/// Trains one method on the training rows and evaluates it on the test
/// rows.
///
/// Statistical criteria use the observed test labels. Counterfactual
/// criteria use the fully imputed world: non-causal methods are scored on
/// `(X, S(a), A=a)` against `Y(a)`. Causal methods are scored in the world
/// they were trained for: pre timing sees the baseline arm's intermediate
/// draws in both arms, post timing sees `S(a)` with labels pooled as in
/// training. Reject-option flips use each row's observed group.
pub fn train_mitigated(data: &MitigationData, method: &MitigationMethod, config: &PipelineConfig) -> Result<MitigationOutcome> {
    method.validate()?;
    let pre = &data.pre;
    let table = pre.table();
    let stages = pre.stages();
    let final_col = data.final_col().to_string();
    let group_all = pre.group();
    let y_obs_all = table.binary(&final_col)?;
    let pick = |v: &[u8], rows: &[usize]| rows.iter().map(|&r| v[r]).collect::<Vec<u8>>();

    let causal = matches!(method, MitigationMethod::Causal { .. });
    let cols = feature_columns(table, stages, !causal);
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let encode = |rows: &[usize]| one_hot_encode(&table.select_rows(rows), &col_refs);

    let train_y = pick(&y_obs_all, &data.train_rows);
    let train_a = pick(group_all, &data.train_rows);
    let model_cfg = TrainConfig {
        sample_weights: None,
        ..config.model.clone()
    };

    let model: Classifier = match method {
        MitigationMethod::None | MitigationMethod::Roc { .. } => {
            fit_logistic(&encode(&data.train_rows)?, &train_y, None, &model_cfg)?.into()
        }
        MitigationMethod::Rew => {
            let w = reweigh_labels(&train_a, &train_y)?;
            fit_logistic(&encode(&data.train_rows)?, &train_y, None, &model_cfg.clone().with_weights(w))?.into()
        }
        MitigationMethod::Prem { eta } => {
            prejudice_remover(&encode(&data.train_rows)?, &train_y, &train_a, *eta, &model_cfg)?.into()
        }
        MitigationMethod::Causal {
            timing,
            baseline_arm,
            pooling,
        } => {
            let source = match timing {
                Timing::Pre => &data.pre,
                Timing::Post => &data.post,
            };
            let set = causal_preprocess(source, *timing, *baseline_arm, *pooling, Some(&data.train_rows))?;
            fit_logistic(&set.design, &set.labels, None, &model_cfg)?.into()
        }
    };
    if !model.converged() {
        log::warn!("{method} model did not converge");
    }

    let band = match method {
        MitigationMethod::Roc {
            band: Some(b), ..
        } => Some(*b),
        MitigationMethod::Roc {
            band: None,
            favorable_label,
            unprivileged_group,
            selection,
        } => {
            let v = &data.validation_rows;
            let scores = model.predict_proba(encode(v)?.design.view())?;
            Some(select_band(
                &scores,
                &pick(group_all, v),
                &pick(&y_obs_all, v),
                *favorable_label,
                *unprivileged_group,
                *selection,
            )?)
        }
        _ => None,
    };
    let test = &data.test_rows;
    let test_a = pick(group_all, test);
    let post_process = |scores: &[f64]| -> Result<Vec<u8>> {
        match (method, band) {
            (
                MitigationMethod::Roc {
                    favorable_label,
                    unprivileged_group,
                    ..
                },
                Some(b),
            ) => reject_option(scores, &test_a, b, *favorable_label, *unprivileged_group),
            _ => Ok(scores.iter().map(|&s| u8::from(s >= 0.5)).collect()),
        }
    };

    let predictor = Predictor {
        model: &model,
        base: encode(test)?,
        imputed: pre,
        rows: test,
        with_group: !causal,
    };
    let test_y = pick(&y_obs_all, test);
    let m = pre.m();

    // Statistical criteria. Pre-timing causal models see the baseline
    // arm's intermediate draws, so their predictions vary by path.
    let stat_inputs: Vec<Vec<f64>> = match method {
        MitigationMethod::Causal {
            timing: Timing::Pre,
            baseline_arm,
            ..
        } => (0..m)
            .map(|j| predictor.scores_world(*baseline_arm, j, 0))
            .collect::<Result<_>>()?,
        _ => vec![predictor.scores_observed()?],
    };
    let mut stat_reports = Vec::new();
    let mut stat_preds = Vec::new();
    for scores in &stat_inputs {
        let pred = post_process(scores)?;
        stat_reports.push(stat_metrics(&PredictionSet::with_predictions(
            test_y.clone(),
            pred.clone(),
            scores.clone(),
            test_a.clone(),
        )?)?);
        stat_preds.push(pred);
    }
    let stat = average_reports(&stat_reports)?;

    // Counterfactual criteria, path by path.
    let baseline = match method {
        MitigationMethod::Causal { baseline_arm, .. } => *baseline_arm,
        _ => 0,
    };
    let world_labels: [Array2<u8>; 2] = match method {
        MitigationMethod::Causal {
            timing: Timing::Pre,
            baseline_arm,
            pooling,
        } => {
            let l = pool_labels(pre, &final_col, *baseline_arm, *pooling)?;
            [l.clone(), l]
        }
        MitigationMethod::Causal {
            timing: Timing::Post,
            baseline_arm,
            pooling,
        } => [
            post_world_labels(pre, &final_col, 0, *baseline_arm, *pooling)?,
            post_world_labels(pre, &final_col, 1, *baseline_arm, *pooling)?,
        ],
        _ => [pre.draws(&final_col, 0)?.clone(), pre.draws(&final_col, 1)?.clone()],
    };

    let y0_draws = pre.draws(&final_col, baseline)?;
    let mut causal_reports = Vec::with_capacity(m);
    let mut agreement = 0.0;
    let mut gap = 0.0;
    for j in 0..m {
        let arm = |a: u8| -> Result<ArmPredictions> {
            let input = match method {
                MitigationMethod::Causal {
                    timing: Timing::Pre,
                    baseline_arm,
                    ..
                } => *baseline_arm,
                _ => a,
            };
            let scores = predictor.scores_world(input, j, a)?;
            let yhat = post_process(&scores)?;
            let y = test.iter().map(|&r| world_labels[a as usize][[r, j]]).collect();
            Ok(ArmPredictions { yhat, y, score: scores })
        };
        let cps = CounterfactualPredictionSet::new(arm(0)?, arm(1)?)?;
        causal_reports.push(causal_metrics(&cps)?);
        let yb: Vec<u8> = test.iter().map(|&r| y0_draws[[r, j]]).collect();
        let acc = causal_accuracy(&stat_preds[j.min(stat_preds.len() - 1)], &yb)?;
        agreement += acc.agreement;
        gap += acc.signed_gap;
    }
    let causal = average_reports(&causal_reports)?;

    Ok(MitigationOutcome {
        method: method.clone(),
        model,
        band,
        stat,
        causal,
        cf_accuracy: CausalAccuracy {
            agreement: agreement / m as f64,
            signed_gap: gap / m as f64,
        },
    })
}

/// Final-stage labels in the post-timing fair world: intermediate stages
/// follow `input_arm`, the final outcome is pooled across outcome arms.
fn post_world_labels(pre: &ImputedCohort, final_col: &str, input_arm: u8, baseline: u8, pooling: Pooling) -> Result<Array2<u8>> {
    Ok(match pooling {
        Pooling::Baseline => pre.cross_world_draws(final_col, input_arm, baseline)?,
        Pooling::OtherArm => pre.cross_world_draws(final_col, input_arm, 1 - baseline)?,
        Pooling::Max => {
            let mut out = pre.cross_world_draws(final_col, input_arm, 0)?;
            out.zip_mut_with(&pre.cross_world_draws(final_col, input_arm, 1)?, |a, &b| *a = (*a).max(b));
            out
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, HiringParams};
    use proptest::prelude::*;

    fn hiring_stages() -> Vec<StageSpec> {
        vec![
            StageSpec::logistic("interview", "s", &["x"]),
            StageSpec::logistic("hire", "y", &["x", "s"]),
        ]
    }

    fn small_data(beta: f64, gamma: f64, n: usize, seed_value: u64) -> (MitigationData, PipelineConfig) {
        let table = generate(&HiringParams::new(0.0, beta, gamma, n, seed_value)).unwrap().observed_table();
        let cfg = PipelineConfig {
            imputation: ImputationConfig::new(4, 0),
            seed: seed_value,
            ..PipelineConfig::default()
        };
        (MitigationData::prepare(&table, &hiring_stages(), &cfg).unwrap(), cfg)
    }

    fn weighted_rate(w: &[f64], a: &[u8], y: &[u8], group: u8) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..w.len() {
            if a[i] == group {
                den += w[i];
                num += w[i] * f64::from(y[i]);
            }
        }
        num / den
    }

    #[test]
    fn independent_group_and_label_give_unit_weights() {
        let a = [0, 0, 1, 1];
        let y = [0, 1, 0, 1];
        assert!(reweigh_labels(&a, &y).unwrap().iter().all(|&w| (w - 1.0).abs() < 1e-15));
    }

    #[test]
    fn reweigh_formula_value() {
        // P(A=1) = 0.5, P(Y=1) = 0.5, P(A=1, Y=1) = 0.3.
        let mut a = vec![1u8; 5];
        a.extend([0u8; 5]);
        let y = [1, 1, 1, 0, 0, 1, 1, 0, 0, 0];
        let w = reweigh_labels(&a, &y).unwrap();
        assert!((w[0] - 0.25 / 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_cell_is_named() {
        let err = reweigh_labels(&[0, 0, 1, 1], &[0, 0, 0, 1]).unwrap_err();
        assert!(matches!(err, Error::EmptyCell { group: 0, label: 1 }));
    }

    #[test]
    fn reject_option_flips_exactly_the_band_rows() {
        let scores = [0.1, 0.45, 0.55, 0.9, 0.48, 0.7];
        let group = [0, 0, 1, 1, 1, 0];
        let plain: Vec<u8> = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
        let out = reject_option(&scores, &group, 0.06, 1, 0).unwrap();
        // Rows 1, 2 and 4 are in the band. Row 4 is privileged and already
        // below 0.5, so only rows 1 and 2 change.
        assert_eq!(out, vec![0, 1, 0, 1, 0, 1]);
        let changed: Vec<usize> = (0..6).filter(|&i| out[i] != plain[i]).collect();
        assert_eq!(changed, vec![1, 2]);
        let tiny = reject_option(&scores, &group, 1e-9, 1, 0).unwrap();
        assert_eq!(tiny, plain);
        assert!(reject_option(&scores, &group, 0.5, 1, 0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for name in METHOD_NAMES {
            assert_eq!(name.parse::<MitigationMethod>().unwrap().name(), name);
        }
        let err = "bogus".parse::<MitigationMethod>().unwrap_err().to_string();
        assert!(err.contains("causal-post"));
    }

    #[test]
    fn prem_with_zero_eta_equals_plain_fit() {
        let (x, y, a, _) = crate::models::test_support::random_instance(200, 3, 1);
        let enc = EncodedMatrix::from_parts(x, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let cfg = TrainConfig::default();
        let prem = prejudice_remover(&enc, &y, &a, 0.0, &cfg).unwrap();
        let plain = fit_logistic(&enc, &y, None, &cfg).unwrap();
        assert_eq!(prem.parameters(), plain.parameters());
    }

    #[test]
    fn pooled_labels_keep_factual_baseline_rows() {
        let (data, _) = small_data(0.0, 0.0, 2000, 5);
        // Factual arm-0 rows keep their observed label in every path.
        let set = causal_preprocess(&data.pre, Timing::Pre, 0, Pooling::Baseline, None).unwrap();
        let n = data.pre.n();
        assert_eq!(set.labels.len(), n * data.pre.m());
        let y_obs = data.pre.table().binary("y").unwrap();
        let a = data.pre.group();
        for j in 0..data.pre.m() {
            for r in (0..n).filter(|&r| a[r] == 0) {
                assert_eq!(set.labels[j * n + r], y_obs[r]);
            }
        }
        assert!(set.design.feature_names.iter().all(|f| f != "a"));
    }

    #[test]
    fn timing_requires_matching_imputation() {
        let (data, _) = small_data(0.5, 0.2, 1000, 6);
        assert!(causal_preprocess(&data.pre, Timing::Post, 0, Pooling::Baseline, None).is_err());
        assert!(causal_preprocess(&data.post, Timing::Pre, 0, Pooling::Baseline, None).is_err());
        let post = causal_preprocess(&data.post, Timing::Post, 0, Pooling::Baseline, None).unwrap();
        let s = data.post.table().binary("s").unwrap();
        let col = post.design.block("s").unwrap().start;
        assert!(post.source_rows.iter().enumerate().all(|(i, &r)| post.design.design[[i, col]] == f64::from(s[r])));
    }

    #[test]
    fn pooling_baseline_zeroes_label_effect() {
        let (data, _) = small_data(0.5, 0.5, 1500, 7);
        let set = causal_preprocess(&data.pre, Timing::Pre, 0, Pooling::Baseline, None).unwrap();
        // One pooled label per path serves both arms.
        let y0 = data.pre.draws("y", 0).unwrap();
        let n = data.pre.n();
        for j in 0..data.pre.m() {
            for r in 0..n {
                assert_eq!(set.labels[j * n + r], y0[[r, j]]);
            }
        }
        let max = causal_preprocess(&data.pre, Timing::Pre, 0, Pooling::Max, None).unwrap();
        assert!(max.labels.iter().zip(&set.labels).all(|(m, b)| m >= b));
    }

    #[test]
    fn causal_pre_predictions_are_arm_invariant() {
        let (data, cfg) = small_data(0.5, 0.2, 3000, 8);
        let out = train_mitigated(&data, &MitigationMethod::causal(Timing::Pre), &cfg).unwrap();
        for m in ["causal_parity", "causal_ppv_parity", "causal_eodds_tp", "causal_eodds_fp"] {
            assert_eq!(out.causal.value(m), Some(0.0), "{m}");
        }
        assert!(out.model.feature_names().iter().all(|f| f != "a"));
    }

    #[test]
    fn pipeline_reports_every_metric() {
        let (data, cfg) = small_data(0.5, 0.2, 3000, 9);
        for method in MitigationMethod::all() {
            let out = train_mitigated(&data, &method, &cfg).unwrap();
            for m in ["parity", "ppv_parity", "eodds_tp", "eodds_fp", "accuracy"] {
                assert!(out.stat.metrics.contains_key(m), "{method} {m}");
            }
            assert_eq!(out.causal.metrics.len(), 4);
            assert_eq!(out.band.is_some(), matches!(method, MitigationMethod::Roc { .. }));
        }
    }

    #[test]
    fn larger_eta_reduces_parity() {
        let (data, cfg) = small_data(1.0, 0.5, 8000, 10);
        let parity = |eta: f64| {
            train_mitigated(&data, &MitigationMethod::Prem { eta }, &cfg)
                .unwrap()
                .stat
                .value("parity")
                .unwrap()
                .abs()
        };
        assert!(parity(20.0) < parity(0.0));
    }

    #[test]
    fn band_selection_rules() {
        let scores: Vec<f64> = (0..200).map(|i| 0.3 + 0.4 * f64::from(i % 50) / 50.0).collect();
        let group: Vec<u8> = (0..200).map(|i| u8::from(i % 3 == 0)).collect();
        let labels: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
        let b = select_band(&scores, &group, &labels, 1, 0, BandSelection::MinParity).unwrap();
        let best = band_grid()
            .into_iter()
            .map(|b| parity_of(&reject_option(&scores, &group, b, 1, 0).unwrap(), &group).unwrap().abs())
            .fold(f64::INFINITY, f64::min);
        let chosen = parity_of(&reject_option(&scores, &group, b, 1, 0).unwrap(), &group).unwrap().abs();
        assert_eq!(chosen, best);
        let strict = BandSelection::BalancedAccuracy { parity_bound: -0.0 };
        let fallback = select_band(&scores, &group, &labels, 1, 0, strict).unwrap();
        assert!(band_grid().contains(&fallback));
    }

    fn reweigh_instance() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (8usize..200)
            .prop_flat_map(|n| (prop::collection::vec(0u8..2, n), prop::collection::vec(0u8..2, n)))
            .prop_filter("all four cells nonempty", |(a, y)| {
                (0..2).all(|g| (0..2).all(|l| a.iter().zip(y).any(|(&ai, &yi)| ai == g && yi == l)))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn reweighing_equalises_weighted_base_rates((a, y) in reweigh_instance()) {
            let w = reweigh_labels(&a, &y).unwrap();
            let r1 = weighted_rate(&w, &a, &y, 1);
            let r0 = weighted_rate(&w, &a, &y, 0);
            prop_assert!((r1 - r0).abs() < 1e-12);
        }

        #[test]
        fn reject_option_changes_only_band_rows(
            scores in prop::collection::vec(0.001f64..0.999, 1..60),
            band in 0.001f64..0.499,
            seed_value in 0u64..100,
        ) {
            let group: Vec<u8> = (0..scores.len()).map(|i| ((i as u64 + seed_value) % 2) as u8).collect();
            let out = reject_option(&scores, &group, band, 1, 0).unwrap();
            for (i, &s) in scores.iter().enumerate() {
                if (s - 0.5).abs() >= band {
                    prop_assert_eq!(out[i], u8::from(s >= 0.5));
                }
            }
        }
    }
}
