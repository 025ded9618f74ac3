//! Sequential multiple imputation of post-treatment counterfactuals.
//!
//! Stages are fitted in causal order on observed data. For each arm `a` and
//! imputation path `m`, stage `k` is evaluated at `A = a` with the arm-`a`,
//! path-`m` draws of earlier stages substituted for their observed values,
//! so draw `m` of one stage feeds draw `m` of the next (chained paths).
//!
//! The intervention stage sets the timing: stages before it are treated as
//! determined before the group attribute is perceived and keep their
//! observed values in both arms.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::{self, fit_logistic, fit_mlp, Classifier, TrainConfig};
use crate::tabular::{one_hot_encode, positivity_filter, ColumnKind, ColumnRole, DataTable, EncodedMatrix};
use crate::{seed, Error, Result};

/// Name of the appended group-indicator feature in stage designs.
const GROUP_FEATURE: &str = "__group";
/// Bins smaller than this are flagged as unstable.
const MIN_STABLE_BIN: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StageModel {
    Logistic,
    Mlp { hidden: Vec<usize> },
}

/// If the counterfactual value of `gate_col` differs from `gate_value`, the
/// stage's counterfactual is forced to `forced_outcome`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub gate_col: String,
    pub gate_value: u8,
    pub forced_outcome: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub outcome_col: String,
    /// Pre-treatment columns and outcomes of earlier stages.
    pub predictor_cols: Vec<String>,
    pub model: StageModel,
    #[serde(default)]
    pub gate: Option<Gate>,
}

impl StageSpec {
    pub fn logistic(name: &str, outcome_col: &str, predictors: &[&str]) -> Self {
        Self {
            name: name.into(),
            outcome_col: outcome_col.into(),
            predictor_cols: predictors.iter().map(|s| s.to_string()).collect(),
            model: StageModel::Logistic,
            gate: None,
        }
    }

    pub fn with_gate(mut self, gate_col: &str, gate_value: u8, forced_outcome: u8) -> Self {
        self.gate = Some(Gate {
            gate_col: gate_col.into(),
            gate_value,
            forced_outcome,
        });
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationConfig {
    pub m: usize,
    pub seed: u64,
    /// Index of the first stage affected by the group attribute.
    pub intervention_stage: usize,
    pub train: TrainConfig,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        Self {
            m: 10,
            seed: 0,
            intervention_stage: 0,
            train: TrainConfig::default(),
        }
    }
}

impl ImputationConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        Self {
            m,
            seed,
            ..Self::default()
        }
    }
}

/// A cohort with `M` counterfactual draws per stage and arm.
#[derive(Clone, Debug)]
pub struct ImputedCohort {
    table: DataTable,
    group: Vec<u8>,
    stages: Vec<StageSpec>,
    config: ImputationConfig,
    models: Vec<Option<Classifier>>,
    /// `draws[stage][arm]` is `n × M`.
    draws: Vec<[Array2<u8>; 2]>,
}

impl ImputedCohort {
    pub fn table(&self) -> &DataTable {
        &self.table
    }

    pub fn group(&self) -> &[u8] {
        &self.group
    }

    pub fn n(&self) -> usize {
        self.group.len()
    }

    pub fn m(&self) -> usize {
        self.config.m
    }

    pub fn stages(&self) -> &[StageSpec] {
        &self.stages
    }

    pub fn config(&self) -> &ImputationConfig {
        &self.config
    }

    /// Fitted stage models; `None` for stages fixed before the intervention.
    pub fn models(&self) -> &[Option<Classifier>] {
        &self.models
    }

    pub fn stage_index(&self, name: &str) -> Result<usize> {
        self.stages
            .iter()
            .position(|s| s.name == name || s.outcome_col == name)
            .ok_or_else(|| Error::Stage {
                stage: name.into(),
                reason: "no such stage".into(),
            })
    }

    pub fn draws(&self, stage: &str, arm: u8) -> Result<&Array2<u8>> {
        if arm > 1 {
            return Err(Error::invalid("arm", format!("{arm} is not 0 or 1")));
        }
        Ok(&self.draws[self.stage_index(stage)?][arm as usize])
    }

    /// Draws of `stage` evaluated at `A = outcome_arm` while every earlier
    /// stage takes its `input_arm` draws, path by path. With equal arms this
    /// is the stored draws; otherwise it is a fresh cross-world draw, e.g.
    /// `Y(0, S(1))`, with no factual rows to override.
    pub fn cross_world_draws(&self, stage: &str, input_arm: u8, outcome_arm: u8) -> Result<Array2<u8>> {
        if input_arm > 1 || outcome_arm > 1 {
            return Err(Error::invalid("arm", "arms must be 0 or 1"));
        }
        let k = self.stage_index(stage)?;
        if input_arm == outcome_arm {
            return Ok(self.draws[k][input_arm as usize].clone());
        }
        let Some(model) = &self.models[k] else {
            // Fixed before the intervention: identical in every world.
            return Ok(self.draws[k][0].clone());
        };
        let spec = &self.stages[k];
        let outcome_pos: BTreeMap<&str, usize> = self
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| (s.outcome_col.as_str(), i))
            .collect();
        let plan = plan_stage(&self.table, spec, &outcome_pos)?;
        let design = stage_design(&self.table, spec, &self.group)?;
        let m = self.m();
        let columns = (0..m)
            .into_par_iter()
            .map(|j| {
                let path = PathDraw {
                    design: &design,
                    plan: &plan,
                    model,
                    earlier: &self.draws,
                    j,
                };
                let key = seed::derive(self.config.seed, &[k as u64, 2 + u64::from(outcome_arm), j as u64]);
                path.draw(input_arm as usize, outcome_arm as usize, key)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Array2::<u8>::zeros((self.n(), m));
        for (j, col) in columns.into_iter().enumerate() {
            for (dst, v) in out.column_mut(j).iter_mut().zip(col) {
                *dst = v;
            }
        }
        Ok(out)
    }

    /// Restriction to a subset of rows, keeping models and draws.
    pub fn select_rows(&self, rows: &[usize]) -> ImputedCohort {
        let pick = |a: &Array2<u8>| a.select(ndarray::Axis(0), rows);
        ImputedCohort {
            table: self.table.select_rows(rows),
            group: rows.iter().map(|&r| self.group[r]).collect(),
            stages: self.stages.clone(),
            config: self.config.clone(),
            models: self.models.clone(),
            draws: self.draws.iter().map(|[d0, d1]| [pick(d0), pick(d1)]).collect(),
        }
    }
}

struct StagePlan {
    outcome: Vec<u8>,
    /// For each predictor that is an earlier stage outcome: (stage index,
    /// design column).
    stage_inputs: Vec<(usize, usize)>,
    /// Gate source: either an earlier stage or a fixed column.
    gate: Option<(GateSource, u8, u8)>,
}

enum GateSource {
    Stage(usize),
    Fixed(Vec<u8>),
}

fn validate_stages(table: &DataTable, stages: &[StageSpec]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::Empty("stage list"));
    }
    let outcome_pos: BTreeMap<&str, usize> = stages
        .iter()
        .enumerate()
        .map(|(k, s)| (s.outcome_col.as_str(), k))
        .collect();
    if outcome_pos.len() != stages.len() {
        return Err(Error::Schema("two stages share an outcome column".into()));
    }
    for (k, stage) in stages.iter().enumerate() {
        let stage_err = |reason: String| Error::Stage {
            stage: stage.name.clone(),
            reason,
        };
        let spec = table.spec(&stage.outcome_col)?;
        if spec.kind != ColumnKind::Binary {
            return Err(stage_err(format!("outcome `{}` is not binary", stage.outcome_col)));
        }
        for p in &stage.predictor_cols {
            let spec = table.spec(p)?;
            if let Some(&j) = outcome_pos.get(p.as_str()) {
                if j >= k {
                    return Err(stage_err(format!("predictor `{p}` is the outcome of a later stage")));
                }
                continue;
            }
            match spec.role {
                ColumnRole::PreTreatment => {}
                ColumnRole::Group => {
                    return Err(stage_err(format!(
                        "group column `{p}` is added automatically and must not be listed"
                    )))
                }
                _ => {
                    return Err(stage_err(format!(
                        "predictor `{p}` is neither pre-treatment nor an earlier stage outcome"
                    )))
                }
            }
        }
        if let Some(g) = &stage.gate {
            if g.gate_value > 1 || g.forced_outcome > 1 {
                return Err(stage_err("gate values must be 0 or 1".into()));
            }
            if let Some(&j) = outcome_pos.get(g.gate_col.as_str()) {
                if j >= k {
                    return Err(stage_err(format!("gate column `{}` is not an earlier stage", g.gate_col)));
                }
            } else if table.spec(&g.gate_col)?.kind != ColumnKind::Binary {
                return Err(stage_err(format!("gate column `{}` is not binary", g.gate_col)));
            }
        }
    }
    Ok(())
}

/// Rows of the design feeding stage `k`: encoded predictors plus the group.
fn stage_design(table: &DataTable, stage: &StageSpec, group: &[u8]) -> Result<EncodedMatrix> {
    let cols: Vec<&str> = stage.predictor_cols.iter().map(String::as_str).collect();
    let enc = one_hot_encode(table, &cols)?;
    let p = enc.n_features();
    let mut design = Array2::<f64>::zeros((table.n(), p + 1));
    design.slice_mut(ndarray::s![.., ..p]).assign(&enc.design);
    for (r, &a) in group.iter().enumerate() {
        design[[r, p]] = f64::from(a);
    }
    let mut names = enc.feature_names;
    names.push(GROUP_FEATURE.into());
    let mut mapping = enc.source_mapping;
    mapping.push(crate::tabular::SourceBlock {
        column: GROUP_FEATURE.into(),
        range: p..p + 1,
    });
    Ok(EncodedMatrix {
        design,
        feature_names: names,
        source_mapping: mapping,
    })
}

fn fit_stage(
    stage: &StageSpec,
    k: usize,
    design: &EncodedMatrix,
    outcome: &[u8],
    rows: &[usize],
    base: &TrainConfig,
    seed: u64,
) -> Result<Classifier> {
    let wrap = |e: Error| Error::StageFit {
        stage: stage.name.clone(),
        source: Box::new(e),
    };
    let sub = EncodedMatrix {
        design: design.design.select(ndarray::Axis(0), rows),
        feature_names: design.feature_names.clone(),
        source_mapping: design.source_mapping.clone(),
    };
    let labels: Vec<u8> = rows.iter().map(|&r| outcome[r]).collect();
    let cfg = TrainConfig {
        seed: seed::derive(seed, &[0x5749, k as u64]),
        pr_eta: 0.0,
        sample_weights: None,
        ..base.clone()
    };
    let model: Classifier = match &stage.model {
        StageModel::Logistic => fit_logistic(&sub, &labels, None, &cfg).map_err(wrap)?.into(),
        StageModel::Mlp { hidden } => fit_mlp(&sub, &labels, None, hidden, &cfg).map_err(wrap)?.into(),
    };
    if !model.converged() {
        let (_, grad) =
            models::loss_and_gradient(&model, sub.design.view(), &labels, None, &cfg).map_err(wrap)?;
        return Err(wrap(Error::NotConverged {
            iterations: cfg.max_iter,
            grad_norm: grad.iter().fold(0.0f64, |m, g| m.max(g.abs())),
        }));
    }
    Ok(model)
}

/// Imputes every stage under both arms.
///
/// Rows with missing values in any needed column are dropped with a
/// warning. Fails if a predictor references a later stage, if a stage model
/// does not converge, or if observed data violate a gate.
pub fn impute_sequential(
    table: &DataTable,
    stages: &[StageSpec],
    config: &ImputationConfig,
) -> Result<ImputedCohort> {
    validate_stages(table, stages)?;
    if config.m == 0 {
        return Err(Error::invalid("m", "at least one imputation is required"));
    }
    if config.intervention_stage >= stages.len() {
        return Err(Error::invalid(
            "intervention_stage",
            format!("{} is past the last stage", config.intervention_stage),
        ));
    }

    let mut needed: Vec<&str> = vec![table.group_name()];
    for s in stages {
        needed.push(&s.outcome_col);
        needed.extend(s.predictor_cols.iter().map(String::as_str));
        if let Some(g) = &s.gate {
            needed.push(&g.gate_col);
        }
    }
    needed.sort_unstable();
    needed.dedup();
    let (table, _) = table.drop_missing(&needed)?;
    let n = table.n();
    if n == 0 {
        return Err(Error::Empty("cohort"));
    }
    let group = table.group()?;
    if !group.contains(&0) {
        return Err(Error::EmptyGroup(0));
    }
    if !group.contains(&1) {
        return Err(Error::EmptyGroup(1));
    }
    warn_on_positivity(&table, stages)?;

    let outcome_pos: BTreeMap<&str, usize> = stages
        .iter()
        .enumerate()
        .map(|(k, s)| (s.outcome_col.as_str(), k))
        .collect();

    let mut draws: Vec<[Array2<u8>; 2]> = Vec::with_capacity(stages.len());
    let mut models = Vec::with_capacity(stages.len());
    let m = config.m;
    for (k, stage) in stages.iter().enumerate() {
        let plan = plan_stage(&table, stage, &outcome_pos)?;
        check_gate_on_observed(&table, stage, &plan)?;

        if k < config.intervention_stage {
            let fixed = Array2::from_shape_fn((n, m), |(r, _)| plan.outcome[r]);
            draws.push([fixed.clone(), fixed]);
            models.push(None);
            continue;
        }

        let design = stage_design(&table, stage, &group)?;
        let fit_rows: Vec<usize> = match &plan.gate {
            None => (0..n).collect(),
            Some((source, value, _)) => {
                let gate_obs = gate_observed(&table, source, stages)?;
                (0..n).filter(|&r| gate_obs[r] == *value).collect()
            }
        };
        if fit_rows.is_empty() {
            return Err(Error::Stage {
                stage: stage.name.clone(),
                reason: "no rows pass the gate".into(),
            });
        }
        let model = fit_stage(stage, k, &design, &plan.outcome, &fit_rows, &config.train, config.seed)?;
        let columns: Vec<(usize, usize, Vec<u8>)> = (0..2usize)
            .flat_map(|arm| (0..m).map(move |j| (arm, j)))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(arm, j)| -> Result<(usize, usize, Vec<u8>)> {
                let path = PathDraw {
                    design: &design,
                    plan: &plan,
                    model: &model,
                    earlier: &draws,
                    j,
                };
                let key = seed::derive(config.seed, &[k as u64, arm as u64, j as u64]);
                let mut out = path.draw(arm, arm, key)?;
                for r in 0..n {
                    if group[r] as usize == arm {
                        out[r] = plan.outcome[r];
                    }
                }
                Ok((arm, j, out))
            })
            .collect::<Result<_>>()?;

        let mut arms = [Array2::<u8>::zeros((n, m)), Array2::<u8>::zeros((n, m))];
        for (arm, j, col) in columns {
            for (dst, v) in arms[arm].column_mut(j).iter_mut().zip(col) {
                *dst = v;
            }
        }
        draws.push(arms);
        models.push(Some(model));
    }

    Ok(ImputedCohort {
        table,
        group,
        stages: stages.to_vec(),
        config: config.clone(),
        models,
        draws,
    })
}

/// One imputation path of one stage, evaluated at `A = outcome_arm` with
/// earlier-stage draws taken from `input_arm`.
struct PathDraw<'a> {
    design: &'a EncodedMatrix,
    plan: &'a StagePlan,
    model: &'a Classifier,
    earlier: &'a [[Array2<u8>; 2]],
    j: usize,
}

impl PathDraw<'_> {
    fn draw(&self, input_arm: usize, outcome_arm: usize, key: u64) -> Result<Vec<u8>> {
        let n = self.design.n_rows();
        let group_col = self.design.n_features() - 1;
        let mut x = self.design.design.clone();
        x.column_mut(group_col).fill(outcome_arm as f64);
        for &(src, col) in &self.plan.stage_inputs {
            let d = self.earlier[src][input_arm].column(self.j);
            for (dst, v) in x.column_mut(col).iter_mut().zip(d.iter()) {
                *dst = f64::from(*v);
            }
        }
        let probs = self.model.predict_proba(x.view())?;
        let mut rng = seed::rng(key);
        let mut out: Vec<u8> = probs.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect();
        if let Some((source, value, forced)) = &self.plan.gate {
            for (r, o) in out.iter_mut().enumerate().take(n) {
                let g = match source {
                    GateSource::Stage(s) => self.earlier[*s][input_arm][[r, self.j]],
                    GateSource::Fixed(v) => v[r],
                };
                if g != *value {
                    *o = *forced;
                }
            }
        }
        Ok(out)
    }
}

fn plan_stage(table: &DataTable, stage: &StageSpec, outcome_pos: &BTreeMap<&str, usize>) -> Result<StagePlan> {
    let outcome = table.binary(&stage.outcome_col)?;
    let cols: Vec<&str> = stage.predictor_cols.iter().map(String::as_str).collect();
    // Column positions come from the same encoding used for the design.
    let probe = one_hot_encode(&table.select_rows(&[]), &cols)?;
    let stage_inputs = stage
        .predictor_cols
        .iter()
        .filter_map(|p| {
            outcome_pos
                .get(p.as_str())
                .map(|&j| (j, probe.block(p).expect("encoded predictor").start))
        })
        .collect();
    let gate = match &stage.gate {
        None => None,
        Some(g) => {
            let source = match outcome_pos.get(g.gate_col.as_str()) {
                Some(&j) => GateSource::Stage(j),
                None => GateSource::Fixed(table.binary(&g.gate_col)?),
            };
            Some((source, g.gate_value, g.forced_outcome))
        }
    };
    Ok(StagePlan {
        outcome,
        stage_inputs,
        gate,
    })
}

fn gate_observed(table: &DataTable, source: &GateSource, stages: &[StageSpec]) -> Result<Vec<u8>> {
    match source {
        GateSource::Stage(j) => table.binary(&stages[*j].outcome_col),
        GateSource::Fixed(v) => Ok(v.clone()),
    }
}

fn check_gate_on_observed(table: &DataTable, stage: &StageSpec, plan: &StagePlan) -> Result<()> {
    let (Some(g), Some((source, value, forced))) = (&stage.gate, &plan.gate) else {
        return Ok(());
    };
    let gate_obs = match source {
        GateSource::Stage(_) => table.binary(&g.gate_col)?,
        GateSource::Fixed(v) => v.clone(),
    };
    let bad = (0..table.n())
        .filter(|&r| gate_obs[r] != *value && plan.outcome[r] != *forced)
        .count();
    if bad > 0 {
        return Err(Error::Stage {
            stage: stage.name.clone(),
            reason: format!("{bad} observed row(s) violate the gate on `{}`", g.gate_col),
        });
    }
    Ok(())
}

fn warn_on_positivity(table: &DataTable, stages: &[StageSpec]) -> Result<()> {
    let mut cats: Vec<&str> = stages
        .iter()
        .flat_map(|s| s.predictor_cols.iter())
        .map(String::as_str)
        .filter(|c| {
            table
                .spec(c)
                .is_ok_and(|s| s.kind == ColumnKind::Categorical && s.role == ColumnRole::PreTreatment)
        })
        .collect();
    cats.sort_unstable();
    cats.dedup();
    if cats.is_empty() {
        return Ok(());
    }
    let out = positivity_filter(table, table.group_name(), &cats)?;
    if out.removed > 0 {
        log::warn!(
            "{} row(s) fall in covariate cells observed in only one group; run the positivity filter first",
            out.removed
        );
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TotalEffect {
    /// Mean of the per-imputation estimates.
    pub estimate: f64,
    /// Root mean within-imputation variance of the mean difference.
    pub within_se: f64,
    pub per_imputation: Vec<f64>,
    /// Standard deviation of the per-imputation estimates.
    pub between_sd: f64,
    /// Combined variance `W + (1 + 1/M)·B`.
    pub rubin_variance: f64,
}

/// `E[Y(1) − Y(0)]` for the given stage, pooled over imputation paths.
pub fn total_effect(imputed: &ImputedCohort, final_stage: &str) -> Result<TotalEffect> {
    let k = imputed.stage_index(final_stage)?;
    let n = imputed.n();
    if n == 0 {
        return Err(Error::Empty("cohort"));
    }
    let [d0, d1] = &imputed.draws[k];
    let m = imputed.m();
    let mut per = Vec::with_capacity(m);
    let mut within = 0.0;
    for j in 0..m {
        let diffs: Vec<f64> = d1
            .column(j)
            .iter()
            .zip(d0.column(j).iter())
            .map(|(&a, &b)| f64::from(a) - f64::from(b))
            .collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        within += var / n as f64;
        per.push(mean);
    }
    within /= m as f64;
    let estimate = per.iter().sum::<f64>() / m as f64;
    let between = if m > 1 {
        per.iter().map(|v| (v - estimate).powi(2)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    Ok(TotalEffect {
        estimate,
        within_se: within.sqrt(),
        per_imputation: per,
        between_sd: between.sqrt(),
        rubin_variance: within + (1.0 + 1.0 / m as f64) * between,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinEffect {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// `None` only for an empty bin.
    pub effect: Option<f64>,
    pub unstable: bool,
}

/// Effects within quantile bins of a numeric pre-treatment column. Tied
/// quantiles are merged, so fewer than `n_bins` bins may be returned.
pub fn conditional_effect(
    imputed: &ImputedCohort,
    final_stage: &str,
    x_col: &str,
    n_bins: usize,
) -> Result<Vec<BinEffect>> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins", "must be positive"));
    }
    let spec = imputed.table.spec(x_col)?;
    if spec.kind != ColumnKind::Numeric || spec.role != ColumnRole::PreTreatment {
        return Err(Error::invalid("x_col", format!("`{x_col}` is not a numeric pre-treatment column")));
    }
    let x = imputed.table.numeric(x_col)?;
    let k = imputed.stage_index(final_stage)?;
    if x.is_empty() {
        return Err(Error::Empty("cohort"));
    }
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| sorted[((q * (sorted.len() - 1) as f64).round()) as usize];
    let mut interior: Vec<f64> = (1..n_bins).map(|b| quantile(b as f64 / n_bins as f64)).collect();
    interior.dedup();
    interior.retain(|&e| e > sorted[0]);

    let n_out = interior.len() + 1;
    let mut sums = vec![0.0; n_out];
    let mut counts = vec![0usize; n_out];
    let [d0, d1] = &imputed.draws[k];
    for (r, &xv) in x.iter().enumerate() {
        let b = interior.partition_point(|&e| e <= xv);
        counts[b] += 1;
        sums[b] += d1
            .row(r)
            .iter()
            .zip(d0.row(r).iter())
            .map(|(&a, &c)| f64::from(a) - f64::from(c))
            .sum::<f64>();
    }
    let m = imputed.m() as f64;
    Ok((0..n_out)
        .map(|b| BinEffect {
            lo: if b == 0 { sorted[0] } else { interior[b - 1] },
            hi: if b + 1 == n_out { *sorted.last().unwrap() } else { interior[b] },
            n: counts[b],
            effect: (counts[b] > 0).then(|| sums[b] / (counts[b] as f64 * m)),
            unstable: counts[b] < MIN_STABLE_BIN,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub stage: String,
    pub family: StageModel,
    pub fitted: bool,
    pub converged: bool,
    pub n_parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationManifest {
    pub stages: Vec<StageSpec>,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub intervention_stage: usize,
    pub n: usize,
    pub models: Vec<ModelSummary>,
}

impl ImputedCohort {
    pub fn manifest(&self) -> ImputationManifest {
        ImputationManifest {
            stages: self.stages.clone(),
            m: self.config.m,
            seed: self.config.seed,
            intervention_stage: self.config.intervention_stage,
            n: self.n(),
            models: self
                .stages
                .iter()
                .zip(&self.models)
                .map(|(s, model)| ModelSummary {
                    stage: s.name.clone(),
                    family: s.model.clone(),
                    fitted: model.is_some(),
                    converged: model.as_ref().is_some_and(Classifier::converged),
                    n_parameters: model.as_ref().map_or(0, |c| c.parameters().len()),
                })
                .collect(),
        }
    }

    fn row_ids(&self) -> Result<Vec<String>> {
        match self.table.specs().iter().find(|s| s.role == ColumnRole::Id) {
            Some(spec) => {
                let col = self.table.column(&spec.name)?;
                Ok((0..self.n()).map(|r| col.cell_text(r)).collect())
            }
            None => Ok((0..self.n()).map(|r| r.to_string()).collect()),
        }
    }

    /// Writes `arm0.csv`, `arm1.csv` (columns `id,stage,arm,m,value`) and
    /// `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ids = self.row_ids()?;
        for arm in 0..2u8 {
            let path = dir.join(format!("arm{arm}.csv"));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            w.write_record(["id", "stage", "arm", "m", "value"])?;
            for (stage, arms) in self.stages.iter().zip(&self.draws) {
                let d = &arms[arm as usize];
                for (r, id) in ids.iter().enumerate() {
                    for j in 0..self.m() {
                        w.write_record([
                            id.as_str(),
                            stage.name.as_str(),
                            &arm.to_string(),
                            &j.to_string(),
                            &d[[r, j]].to_string(),
                        ])?;
                    }
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("manifest.json");
        let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::to_writer_pretty(&mut f, &self.manifest())?;
        f.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

/// Draws read back from [`ImputedCohort::write`]: `draws[stage][arm]`.
pub fn read_imputed(dir: impl AsRef<Path>) -> Result<(ImputationManifest, Vec<[Array2<u8>; 2]>)> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ImputationManifest = serde_json::from_str(&text)?;
    let (n, m) = (manifest.n, manifest.m);
    let stage_pos: BTreeMap<&str, usize> =
        manifest.stages.iter().enumerate().map(|(k, s)| (s.name.as_str(), k)).collect();
    let mut draws: Vec<[Array2<u8>; 2]> = (0..manifest.stages.len())
        .map(|_| [Array2::zeros((n, m)), Array2::zeros((n, m))])
        .collect();
    #[allow(clippy::needless_range_loop)]
    for arm in 0..2usize {
        let path = dir.join(format!("arm{arm}.csv"));
        let mut rdr = csv::Reader::from_path(&path)?;
        let mut row_of: BTreeMap<String, usize> = BTreeMap::new();
        let mut seen = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            let bad = || Error::Schema(format!("malformed record {rec:?} in {}", path.display()));
            if rec.len() != 5 {
                return Err(bad());
            }
            let next = row_of.len();
            let r = *row_of.entry(rec[0].to_string()).or_insert(next);
            let k = *stage_pos.get(&rec[1]).ok_or_else(bad)?;
            let j: usize = rec[3].parse().map_err(|_| bad())?;
            let v: u8 = rec[4].parse().map_err(|_| bad())?;
            if r >= n || j >= m || v > 1 || rec[2] != *arm.to_string() {
                return Err(bad());
            }
            draws[k][arm][[r, j]] = v;
            seen += 1;
        }
        if seen != n * m * manifest.stages.len() {
            return Err(Error::DimensionMismatch {
                what: "imputed draws",
                expected: n * m * manifest.stages.len(),
                actual: seen,
            });
        }
    }
    Ok((manifest, draws))
}
