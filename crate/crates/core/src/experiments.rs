//! Parameter sweeps over the hiring generator and the mitigation benchmark,
//! both with replication-based 95% intervals `mean ± 1.96·sd/√R`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{impute_sequential, total_effect, ImputationConfig, ImputedCohort, StageSpec};
use crate::dgp::{generate, oracle_effects, HiringParams, NoiseCoupling};
use crate::fairness::{average_reports, causal_metrics, stat_metrics, ArmPredictions, CounterfactualPredictionSet, PredictionSet};
use crate::mitigation::{train_mitigated, MitigationData, MitigationMethod, PipelineConfig};
use crate::models::{fit_logistic, Classifier, TrainConfig};
use crate::tabular::{one_hot_encode, DataTable};
use crate::{seed, Error, Result};

const Z95: f64 = 1.96;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluator {
    /// Observed-data criteria.
    Statistical,
    /// Counterfactual criteria with every stage imputed.
    CausalPre,
    /// Counterfactual criteria with intermediate stages held at observed values.
    CausalPost,
    /// Ground-truth effects from the generated potential outcomes.
    Oracle,
}

impl Evaluator {
    pub const ALL: [Evaluator; 4] = [
        Evaluator::Statistical,
        Evaluator::CausalPre,
        Evaluator::CausalPost,
        Evaluator::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Evaluator::Statistical => "statistical",
            Evaluator::CausalPre => "causal_pre",
            Evaluator::CausalPost => "causal_post",
            Evaluator::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Evaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Evaluator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Evaluator::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::invalid("evaluator", format!("unknown evaluator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub n: usize,
    pub repeats: usize,
    pub master_seed: u64,
    pub evaluators: Vec<Evaluator>,
    /// Imputation paths per replicate.
    pub m: usize,
    pub parallel: bool,
    /// Worker threads when parallel; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![-0.5, 0.0, 0.5],
            betas: (0..=8).map(|i| f64::from(i) * 0.125).collect(),
            gammas: vec![0.2],
            n: 100_000,
            repeats: 20,
            master_seed: 0,
            evaluators: Evaluator::ALL.to_vec(),
            m: 10,
            parallel: true,
            threads: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alphas", &self.alphas), ("betas", &self.betas), ("gammas", &self.gammas)] {
            if v.is_empty() {
                return Err(Error::invalid(name, "grid is empty"));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(name, "grid values must be finite"));
            }
        }
        if self.n < 2 {
            return Err(Error::invalid("n", "at least two individuals are required"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats", "must be positive"));
        }
        if self.m == 0 {
            return Err(Error::invalid("m", "must be positive"));
        }
        if self.evaluators.is_empty() {
            return Err(Error::invalid("evaluators", "no evaluator selected"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads", "must be positive"));
        }
        Ok(())
    }
}

/// One aggregated (cell, evaluator, metric) entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub evaluator: String,
    pub metric: String,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellFailure {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub repeat: usize,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Per-replicate values keyed like `rows`, in repeat order.
    pub replicates: BTreeMap<RowKey, Vec<f64>>,
    pub failures: Vec<CellFailure>,
}

/// `(alpha, beta, gamma, evaluator, metric)` with floats stored as bits
/// for ordering; see [`RowKey::values`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RowKey {
    grid: [OrdF64; 3],
    pub evaluator: String,
    pub metric: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct OrdF64(u64);

impl OrdF64 {
    fn new(v: f64) -> Self {
        Self(v.to_bits())
    }
    fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.get().total_cmp(&other.get())
    }
}

impl RowKey {
    pub fn new(alpha: f64, beta: f64, gamma: f64, evaluator: &str, metric: &str) -> Self {
        Self {
            grid: [OrdF64::new(alpha), OrdF64::new(beta), OrdF64::new(gamma)],
            evaluator: evaluator.into(),
            metric: metric.into(),
        }
    }

    /// `(alpha, beta, gamma)`.
    pub fn values(&self) -> (f64, f64, f64) {
        (self.grid[0].get(), self.grid[1].get(), self.grid[2].get())
    }
}

impl SweepResult {
    pub fn get(&self, alpha: f64, beta: f64, gamma: f64, evaluator: &str, metric: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.alpha == alpha && r.beta == beta && r.gamma == gamma && r.evaluator == evaluator && r.metric == metric
        })
    }
}

/// Mean and normal-approximation 95% interval across replicates.
pub fn replicate_ci(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return Some((mean, mean, mean));
    }
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
    let half = Z95 * sd / r.sqrt();
    Some((mean, mean - half, mean + half))
}

fn hiring_stages() -> Vec<StageSpec> {
    vec![
        StageSpec::logistic("interview", "s", &["x"]),
        StageSpec::logistic("hire", "y", &["x", "s"]),
    ]
}

/// Design `(x, s, a)` for the unconstrained reference classifier.
const REFERENCE_FEATURES: [&str; 3] = ["x", "s", "a"];

type Metrics = Vec<(String, Option<f64>)>;

/// Reference-classifier criteria in an imputed world. The intermediate
/// stage takes each arm's draws; the group feature is set to the arm.
fn world_metrics(model: &Classifier, table: &DataTable, imputed: &ImputedCohort) -> Result<Metrics> {
    let base = one_hot_encode(table, &REFERENCE_FEATURES)?;
    let s_col = base.block("s").expect("s encoded").start;
    let a_col = base.block("a").expect("a encoded").start;
    let mut reports = Vec::with_capacity(imputed.m());
    for j in 0..imputed.m() {
        let arm = |a: u8| -> Result<ArmPredictions> {
            let mut x = base.design.clone();
            let s = imputed.draws("s", a)?;
            for (dst, v) in x.column_mut(s_col).iter_mut().zip(s.column(j)) {
                *dst = f64::from(*v);
            }
            x.column_mut(a_col).fill(f64::from(a));
            let score = model.predict_proba(x.view())?;
            Ok(ArmPredictions::from_scores(imputed.draws("y", a)?.column(j).to_vec(), score))
        };
        reports.push(causal_metrics(&CounterfactualPredictionSet::new(arm(0)?, arm(1)?)?)?);
    }
    let avg = average_reports(&reports)?;
    let total = total_effect(imputed, "y")?;
    Ok(vec![
        ("parity".into(), Some(total.estimate)),
        ("pred_parity".into(), avg.value("causal_parity")),
        ("ppv_parity".into(), avg.value("causal_ppv_parity")),
        ("eodds_tp".into(), avg.value("causal_eodds_tp")),
        ("eodds_fp".into(), avg.value("causal_eodds_fp")),
    ])
}

/// All metrics of one replicate, grouped by evaluator.
fn evaluate_replicate(
    params: &HiringParams,
    evaluators: &[Evaluator],
    m: usize,
    imputation_seed: u64,
) -> Result<Vec<(Evaluator, Metrics)>> {
    let cohort = generate(params)?;
    let table = cohort.observed_table();
    let group = table.group()?;
    let y = table.binary("y")?;
    let needs_model = evaluators.iter().any(|e| *e != Evaluator::Oracle);
    let model: Option<Classifier> = if needs_model {
        let enc = one_hot_encode(&table, &REFERENCE_FEATURES)?;
        Some(fit_logistic(&enc, &y, None, &TrainConfig::default())?.into())
    } else {
        None
    };

    let mut out = Vec::with_capacity(evaluators.len());
    for &ev in evaluators {
        let metrics: Metrics = match ev {
            Evaluator::Statistical => {
                let model = model.as_ref().expect("fitted");
                let enc = one_hot_encode(&table, &REFERENCE_FEATURES)?;
                let score = model.predict_proba(enc.design.view())?;
                let report = stat_metrics(&PredictionSet::from_scores(y.clone(), score, group.clone())?)?;
                let label_parity = stat_metrics(&PredictionSet::with_predictions(
                    y.clone(),
                    y.clone(),
                    vec![0.0; y.len()],
                    group.clone(),
                )?)?
                .value("parity");
                vec![
                    ("parity".into(), label_parity),
                    ("pred_parity".into(), report.value("parity")),
                    ("ppv_parity".into(), report.value("ppv_parity")),
                    ("eodds_tp".into(), report.value("eodds_tp")),
                    ("eodds_fp".into(), report.value("eodds_fp")),
                ]
            }
            Evaluator::CausalPre | Evaluator::CausalPost => {
                let intervention_stage = usize::from(ev == Evaluator::CausalPost);
                let cfg = ImputationConfig {
                    m,
                    seed: seed::derive(imputation_seed, &[intervention_stage as u64]),
                    intervention_stage,
                    train: TrainConfig::default(),
                };
                let imputed = impute_sequential(&table, &hiring_stages(), &cfg)?;
                world_metrics(model.as_ref().expect("fitted"), &table, &imputed)?
            }
            Evaluator::Oracle => {
                let o = oracle_effects(&cohort)?;
                vec![
                    ("causal_pre_parity".into(), Some(o.causal_parity_pre)),
                    ("causal_post_parity".into(), Some(o.causal_parity_post)),
                    ("statistical_parity".into(), Some(o.statistical_parity_data)),
                ]
            }
        };
        out.push((ev, metrics));
    }
    Ok(out)
}

fn with_pool<T: Send>(parallel: bool, threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = if parallel { threads.unwrap_or(0) } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs every grid cell `repeats` times. A failed replicate is recorded in
/// `failures` and the sweep continues; aggregates use the successful
/// replicates only.
pub fn run_evaluation_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let mut tasks = Vec::new();
    for (ia, &alpha) in config.alphas.iter().enumerate() {
        for (ib, &beta) in config.betas.iter().enumerate() {
            for (ig, &gamma) in config.gammas.iter().enumerate() {
                for r in 0..config.repeats {
                    tasks.push((ia, ib, ig, alpha, beta, gamma, r));
                }
            }
        }
    }
    let mut evaluators = config.evaluators.clone();
    evaluators.sort();
    evaluators.dedup();

    let outputs = with_pool(config.parallel, config.threads, || {
        tasks
            .par_iter()
            .map(|&(ia, ib, ig, alpha, beta, gamma, r)| {
                let task_seed = seed::derive(config.master_seed, &[ia as u64, ib as u64, ig as u64, r as u64]);
                let params = HiringParams {
                    coupling: NoiseCoupling::Shared,
                    ..HiringParams::new(alpha, beta, gamma, config.n, seed::derive(task_seed, &[0]))
                };
                evaluate_replicate(&params, &evaluators, config.m, seed::derive(task_seed, &[1]))
            })
            .collect::<Vec<_>>()
    })?;

    let mut result = SweepResult::default();
    for (&(_, _, _, alpha, beta, gamma, repeat), out) in tasks.iter().zip(outputs) {
        match out {
            Ok(groups) => {
                for (ev, metrics) in groups {
                    for (name, value) in metrics {
                        let key = RowKey::new(alpha, beta, gamma, ev.as_str(), &name);
                        let entry = result.replicates.entry(key).or_default();
                        if let Some(v) = value {
                            entry.push(v);
                        }
                    }
                }
            }
            Err(e) => {
                log::warn!("cell alpha={alpha} beta={beta} gamma={gamma} repeat={repeat} failed: {e}");
                result.failures.push(CellFailure {
                    alpha,
                    beta,
                    gamma,
                    repeat,
                    error: e.to_string(),
                });
            }
        }
    }
    for (key, values) in &result.replicates {
        if let Some((mean, lo, hi)) = replicate_ci(values) {
            let (alpha, beta, gamma) = key.values();
            result.rows.push(SweepRow {
                alpha,
                beta,
                gamma,
                evaluator: key.evaluator.clone(),
                metric: key.metric.clone(),
                mean,
                ci_lo: lo,
                ci_hi: hi,
            });
        }
    }
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotFormat {
    Csv,
    Json,
}

pub const PLOT_COLUMNS: [&str; 8] = ["alpha", "beta", "gamma", "evaluator", "metric", "mean", "ci_lo", "ci_hi"];

/// JSON Schema of the `json` plot format.
pub const PLOT_JSON_SCHEMA: &str = r#"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "sweep plot data",
  "type": "object",
  "required": ["version", "rows"],
  "additionalProperties": false,
  "properties": {
    "version": { "const": 1 },
    "rows": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["alpha", "beta", "gamma", "evaluator", "metric", "mean", "ci_lo", "ci_hi"],
        "additionalProperties": false,
        "properties": {
          "alpha": { "type": "number" },
          "beta": { "type": "number" },
          "gamma": { "type": "number" },
          "evaluator": { "enum": ["statistical", "causal_pre", "causal_post", "oracle"] },
          "metric": { "type": "string" },
          "mean": { "type": "number" },
          "ci_lo": { "type": "number" },
          "ci_hi": { "type": "number" }
        }
      }
    }
  }
}
"#;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotDocument {
    pub version: u32,
    pub rows: Vec<SweepRow>,
}

fn sorted_rows(rows: &[SweepRow]) -> Vec<&SweepRow> {
    let mut out: Vec<&SweepRow> = rows.iter().collect();
    out.sort_by(|a, b| {
        a.alpha
            .total_cmp(&b.alpha)
            .then(a.beta.total_cmp(&b.beta))
            .then(a.gamma.total_cmp(&b.gamma))
            .then_with(|| a.evaluator.cmp(&b.evaluator))
            .then_with(|| a.metric.cmp(&b.metric))
    });
    out
}

/// Writes rows ordered by `(alpha, beta, gamma, evaluator, metric)`.
pub fn emit_plot_data(result: &SweepResult, path: impl AsRef<Path>, format: PlotFormat) -> Result<()> {
    let path = path.as_ref();
    let rows = sorted_rows(&result.rows);
    match format {
        PlotFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(PLOT_COLUMNS)?;
            for r in rows {
                w.write_record([
                    r.alpha.to_string(),
                    r.beta.to_string(),
                    r.gamma.to_string(),
                    r.evaluator.clone(),
                    r.metric.clone(),
                    r.mean.to_string(),
                    r.ci_lo.to_string(),
                    r.ci_hi.to_string(),
                ])?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        PlotFormat::Json => {
            let doc = PlotDocument {
                version: 1,
                rows: rows.into_iter().cloned().collect(),
            };
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            serde_json::to_writer_pretty(&mut w, &doc)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

pub fn read_plot_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != PLOT_COLUMNS {
        return Err(Error::HeaderMismatch {
            missing: PLOT_COLUMNS
                .iter()
                .filter(|c| !header.iter().any(|h| h == *c))
                .map(|c| c.to_string())
                .collect(),
            unexpected: header.iter().filter(|h| !PLOT_COLUMNS.contains(&h.as_str())).cloned().collect(),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn read_plot_json(path: impl AsRef<Path>) -> Result<PlotDocument> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: PlotDocument = serde_json::from_str(&text)?;
    if doc.version != 1 {
        return Err(Error::Schema(format!("unsupported plot document version {}", doc.version)));
    }
    for r in &doc.rows {
        r.evaluator.parse::<Evaluator>()?;
    }
    Ok(doc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub n: usize,
    pub repeats: usize,
    pub master_seed: u64,
    pub m: usize,
    pub methods: Vec<String>,
    pub baseline_arm: u8,
    pub prem_eta: f64,
    pub parallel: bool,
    pub threads: Option<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.25,
            gamma: 0.2,
            n: 100_000,
            repeats: 5,
            master_seed: 0,
            m: 10,
            methods: crate::mitigation::METHOD_NAMES.iter().map(|s| s.to_string()).collect(),
            baseline_arm: 0,
            prem_eta: 1.0,
            parallel: true,
            threads: None,
        }
    }
}

impl BenchmarkConfig {
    pub fn resolve_methods(&self) -> Result<Vec<MitigationMethod>> {
        if self.baseline_arm > 1 {
            return Err(Error::invalid("baseline_arm", format!("{} is not 0 or 1", self.baseline_arm)));
        }
        self.methods
            .iter()
            .map(|name| {
                let mut m: MitigationMethod = name.parse()?;
                match &mut m {
                    MitigationMethod::Prem { eta } => *eta = self.prem_eta,
                    MitigationMethod::Causal { baseline_arm, .. } => *baseline_arm = self.baseline_arm,
                    _ => {}
                }
                m.validate()?;
                Ok(m)
            })
            .collect()
    }
}

/// One row of the benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub domain: String,
    pub metric_family: String,
    pub metric: String,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Mean observed-label accuracy of the method; empty for data rows.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchmarkResult {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkResult {
    pub fn value(&self, method: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.metric == metric)
            .map(|r| r.value)
    }
}

type Replicate = Vec<(String, String, String, Option<f64>)>;

fn benchmark_replicate(config: &BenchmarkConfig, methods: &[MitigationMethod], repeat: usize) -> Result<Replicate> {
    let rep_seed = seed::derive(config.master_seed, &[repeat as u64]);
    let params = HiringParams::new(config.alpha, config.beta, config.gamma, config.n, seed::derive(rep_seed, &[0]));
    let cohort = generate(&params)?;
    let table = cohort.observed_table();
    let pipeline = PipelineConfig {
        imputation: ImputationConfig::new(config.m, 0),
        seed: seed::derive(rep_seed, &[1]),
        ..PipelineConfig::default()
    };
    let data = MitigationData::prepare(&table, &hiring_stages(), &pipeline)?;
    let oracle = oracle_effects(&cohort)?;
    let mut out: Replicate = vec![
        ("data".into(), "causal".into(), "oracle_causal_parity_pre".into(), Some(oracle.causal_parity_pre)),
        ("data".into(), "causal".into(), "oracle_causal_parity_post".into(), Some(oracle.causal_parity_post)),
        ("data".into(), "causal".into(), "imputed_total_effect".into(), Some(total_effect(&data.pre, "y")?.estimate)),
        ("data".into(), "statistical".into(), "parity".into(), Some(oracle.statistical_parity_data)),
    ];
    for method in methods {
        let o = train_mitigated(&data, method, &pipeline)?;
        let name = method.name().to_string();
        for (k, m) in &o.stat.metrics {
            out.push((name.clone(), "statistical".into(), k.clone(), m.value));
        }
        for (k, m) in &o.causal.metrics {
            out.push((name.clone(), "causal".into(), k.clone(), m.value));
        }
        out.push((name.clone(), "counterfactual_accuracy".into(), "agreement".into(), Some(o.cf_accuracy.agreement)));
        out.push((name.clone(), "counterfactual_accuracy".into(), "signed_gap".into(), Some(o.cf_accuracy.signed_gap)));
        if let Some(b) = o.band {
            out.push((name, "tuning".into(), "band".into(), Some(b)));
        }
    }
    Ok(out)
}

/// Runs every method on `repeats` independently generated cohorts and
/// aggregates each (method, metric) across replicates.
pub fn run_mitigation_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if config.repeats == 0 {
        return Err(Error::invalid("repeats", "must be positive"));
    }
    let methods = config.resolve_methods()?;
    let reps = with_pool(config.parallel, config.threads, || {
        (0..config.repeats)
            .into_par_iter()
            .map(|r| benchmark_replicate(config, &methods, r))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut values: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for rep in reps {
        for (method, family, metric, v) in rep {
            let key = (method, family, metric);
            if !values.contains_key(&key) {
                order.push(key.clone());
            }
            let entry = values.entry(key).or_default();
            if let Some(v) = v {
                entry.push(v);
            }
        }
    }
    let accuracy: BTreeMap<String, f64> = values
        .iter()
        .filter(|((_, fam, met), _)| fam == "statistical" && met == "accuracy")
        .filter_map(|((m, _, _), v)| replicate_ci(v).map(|c| (m.clone(), c.0)))
        .collect();
    let rows = order
        .into_iter()
        .filter_map(|key| {
            let (mean, lo, hi) = replicate_ci(&values[&key])?;
            Some(BenchmarkRow {
                accuracy: accuracy.get(&key.0).copied(),
                method: key.0,
                domain: "hiring".into(),
                metric_family: key.1,
                metric: key.2,
                value: mean,
                ci_lo: lo,
                ci_hi: hi,
            })
        })
        .collect();
    Ok(BenchmarkResult { rows })
}

pub const BENCHMARK_COLUMNS: [&str; 8] = [
    "method",
    "domain",
    "metric_family",
    "metric",
    "value",
    "ci_lo",
    "ci_hi",
    "accuracy",
];

pub fn write_benchmark_csv(result: &BenchmarkResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BENCHMARK_COLUMNS)?;
    for r in &result.rows {
        w.write_record([
            r.method.clone(),
            r.domain.clone(),
            r.metric_family.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_benchmark_csv(path: impl AsRef<Path>) -> Result<BenchmarkResult> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<BenchmarkRow>, _>>()?;
    Ok(BenchmarkResult { rows })
}
