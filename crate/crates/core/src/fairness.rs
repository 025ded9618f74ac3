//! Group fairness criteria and their counterfactual counterparts.
//!
//! Every violation is a signed difference "group/arm 1 minus group/arm 0".
//! A conditional probability over an empty cell is never replaced by zero:
//! the metric is reported as undefined with the offending cell named.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub y_true: Vec<u8>,
    pub y_pred: Vec<u8>,
    pub y_score: Vec<f64>,
    pub group: Vec<u8>,
}

impl PredictionSet {
    /// Predictions thresholded at 0.5.
    pub fn from_scores(y_true: Vec<u8>, y_score: Vec<f64>, group: Vec<u8>) -> Result<Self> {
        let y_pred = threshold(&y_score);
        Self::with_predictions(y_true, y_pred, y_score, group)
    }

    /// Explicit predictions, e.g. after reject-option post-processing.
    pub fn with_predictions(y_true: Vec<u8>, y_pred: Vec<u8>, y_score: Vec<f64>, group: Vec<u8>) -> Result<Self> {
        let n = y_true.len();
        for (what, len) in [("y_pred", y_pred.len()), ("y_score", y_score.len()), ("group", group.len())] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    actual: len,
                });
            }
        }
        check_binary("y_true", &y_true)?;
        check_binary("y_pred", &y_pred)?;
        check_binary("group", &group)?;
        Ok(Self {
            y_true,
            y_pred,
            y_score,
            group,
        })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }
}

/// `Ŷ(a)`, `Y(a)` and the score under one arm.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmPredictions {
    pub yhat: Vec<u8>,
    pub y: Vec<u8>,
    pub score: Vec<f64>,
}

impl ArmPredictions {
    pub fn from_scores(y: Vec<u8>, score: Vec<f64>) -> Self {
        Self {
            yhat: threshold(&score),
            y,
            score,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualPredictionSet {
    pub arms: [ArmPredictions; 2],
}

impl CounterfactualPredictionSet {
    pub fn new(arm0: ArmPredictions, arm1: ArmPredictions) -> Result<Self> {
        let n = arm0.y.len();
        for (what, len) in [
            ("arm 0 predictions", arm0.yhat.len()),
            ("arm 0 scores", arm0.score.len()),
            ("arm 1 outcomes", arm1.y.len()),
            ("arm 1 predictions", arm1.yhat.len()),
            ("arm 1 scores", arm1.score.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    actual: len,
                });
            }
        }
        for arm in [&arm0, &arm1] {
            check_binary("yhat", &arm.yhat)?;
            check_binary("y", &arm.y)?;
        }
        Ok(Self { arms: [arm0, arm1] })
    }

    pub fn len(&self) -> usize {
        self.arms[0].y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Arms exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            arms: [self.arms[1].clone(), self.arms[0].clone()],
        }
    }
}

fn threshold(scores: &[f64]) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= 0.5)).collect()
}

fn check_binary(what: &'static str, v: &[u8]) -> Result<()> {
    match v.iter().find(|&&x| x > 1) {
        Some(bad) => Err(Error::invalid(what, format!("non-binary value {bad}"))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub n_effective: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined_reason: Option<String>,
}

impl Metric {
    pub fn defined(value: f64, n_effective: usize) -> Self {
        Self {
            value: Some(value),
            ci95: None,
            n_effective,
            undefined_reason: None,
        }
    }

    pub fn undefined(reason: impl Into<String>) -> Self {
        Self {
            value: None,
            ci95: None,
            n_effective: 0,
            undefined_reason: Some(reason.into()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub metrics: BTreeMap<String, Metric>,
    pub n: usize,
    pub arms_present: Vec<u8>,
}

impl FairnessReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).and_then(|m| m.value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Conditional rate `P(event | condition)` with its denominator.
struct Rate {
    value: Option<f64>,
    denom: usize,
}

fn rate(rows: impl Iterator<Item = (bool, bool)>) -> Rate {
    let (mut num, mut denom) = (0usize, 0usize);
    for (cond, event) in rows {
        if cond {
            denom += 1;
            num += usize::from(event);
        }
    }
    Rate {
        value: (denom > 0).then(|| num as f64 / denom as f64),
        denom,
    }
}

fn difference(hi: Rate, lo: Rate, hi_cell: &str, lo_cell: &str) -> Metric {
    match (hi.value, lo.value) {
        (Some(a), Some(b)) => Metric::defined(a - b, hi.denom + lo.denom),
        (None, _) => Metric::undefined(format!("no rows with {hi_cell}")),
        (_, None) => Metric::undefined(format!("no rows with {lo_cell}")),
    }
}

/// Parity, predictive-value parity, both equalized-odds components and
/// accuracy against the observed labels. Fails if either group is empty.
pub fn stat_metrics(ps: &PredictionSet) -> Result<FairnessReport> {
    for a in 0..2u8 {
        if !ps.group.contains(&a) {
            return Err(Error::EmptyGroup(a));
        }
    }
    let rows = || ps.y_true.iter().zip(&ps.y_pred).zip(&ps.group).map(|((&y, &p), &a)| (y, p, a));
    let by_group = |a: u8, cond: fn(u8, u8) -> bool, event: fn(u8, u8) -> bool| {
        rate(rows().map(move |(y, p, g)| (g == a && cond(y, p), event(y, p))))
    };
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "parity".to_string(),
        difference(
            by_group(1, |_, _| true, |_, p| p == 1),
            by_group(0, |_, _| true, |_, p| p == 1),
            "A=1",
            "A=0",
        ),
    );
    metrics.insert(
        "ppv_parity".to_string(),
        difference(
            by_group(1, |_, p| p == 1, |y, _| y == 1),
            by_group(0, |_, p| p == 1, |y, _| y == 1),
            "A=1, Ŷ=1",
            "A=0, Ŷ=1",
        ),
    );
    metrics.insert(
        "eodds_tp".to_string(),
        difference(
            by_group(1, |y, _| y == 1, |_, p| p == 1),
            by_group(0, |y, _| y == 1, |_, p| p == 1),
            "A=1, Y=1",
            "A=0, Y=1",
        ),
    );
    metrics.insert(
        "eodds_fp".to_string(),
        difference(
            by_group(1, |y, _| y == 0, |_, p| p == 1),
            by_group(0, |y, _| y == 0, |_, p| p == 1),
            "A=1, Y=0",
            "A=0, Y=0",
        ),
    );
    let correct = rows().filter(|(y, p, _)| y == p).count();
    metrics.insert(
        "accuracy".to_string(),
        Metric::defined(correct as f64 / ps.len() as f64, ps.len()),
    );
    Ok(FairnessReport {
        metrics,
        n: ps.len(),
        arms_present: Vec::new(),
    })
}

/// Counterfactual parity, predictive-value parity and equalized odds
/// between the two arms.
pub fn causal_metrics(cps: &CounterfactualPredictionSet) -> Result<FairnessReport> {
    let n = cps.len();
    if n == 0 {
        return Err(Error::Empty("counterfactual predictions"));
    }
    let [a0, a1] = &cps.arms;
    let arm_rate = |arm: &ArmPredictions, cond: fn(u8, u8) -> bool, event: fn(u8, u8) -> bool| {
        rate(arm.y.iter().zip(&arm.yhat).map(|(&y, &p)| (cond(y, p), event(y, p))))
    };
    let mut metrics = BTreeMap::new();
    let parity = a1
        .yhat
        .iter()
        .zip(&a0.yhat)
        .map(|(&p1, &p0)| f64::from(p1) - f64::from(p0))
        .sum::<f64>()
        / n as f64;
    metrics.insert("causal_parity".to_string(), Metric::defined(parity, n));
    metrics.insert(
        "causal_ppv_parity".to_string(),
        difference(
            arm_rate(a1, |_, p| p == 1, |y, _| y == 1),
            arm_rate(a0, |_, p| p == 1, |y, _| y == 1),
            "Ŷ(1)=1",
            "Ŷ(0)=1",
        ),
    );
    metrics.insert(
        "causal_eodds_tp".to_string(),
        difference(
            arm_rate(a1, |y, _| y == 1, |_, p| p == 1),
            arm_rate(a0, |y, _| y == 1, |_, p| p == 1),
            "Y(1)=1",
            "Y(0)=1",
        ),
    );
    metrics.insert(
        "causal_eodds_fp".to_string(),
        difference(
            arm_rate(a1, |y, _| y == 0, |_, p| p == 1),
            arm_rate(a0, |y, _| y == 0, |_, p| p == 1),
            "Y(1)=0",
            "Y(0)=0",
        ),
    );
    Ok(FairnessReport {
        metrics,
        n,
        arms_present: vec![0, 1],
    })
}

/// Mean of each metric across reports, e.g. one report per imputation path.
/// A metric is undefined only if it is undefined in every report.
pub fn average_reports(reports: &[FairnessReport]) -> Result<FairnessReport> {
    let first = reports.first().ok_or(Error::Empty("report list"))?;
    let mut names: Vec<&String> = reports.iter().flat_map(|r| r.metrics.keys()).collect();
    names.sort();
    names.dedup();
    let mut metrics = BTreeMap::new();
    for name in names {
        let entries: Vec<&Metric> = reports.iter().filter_map(|r| r.metrics.get(name)).collect();
        let defined: Vec<&Metric> = entries.iter().copied().filter(|m| m.value.is_some()).collect();
        let metric = if defined.is_empty() {
            let reason = entries
                .iter()
                .find_map(|m| m.undefined_reason.clone())
                .unwrap_or_else(|| "undefined in every report".into());
            Metric::undefined(reason)
        } else {
            let mean = defined.iter().map(|m| m.value.unwrap()).sum::<f64>() / defined.len() as f64;
            let n_eff = defined.iter().map(|m| m.n_effective).sum::<usize>() / defined.len();
            Metric::defined(mean, n_eff)
        };
        metrics.insert(name.clone(), metric);
    }
    Ok(FairnessReport {
        metrics,
        n: first.n,
        arms_present: first.arms_present.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    /// Rows of each arm whose score falls in the bin.
    pub counts: [usize; 2],
    /// `P(Y(1)=1 | S(1) ∈ bin) − P(Y(0)=1 | S(0) ∈ bin)`.
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined_reason: Option<String>,
}

/// Per-bin calibration gaps between the arms on equal-width score bins.
pub fn causal_calibration(cps: &CounterfactualPredictionSet, n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins", "must be positive"));
    }
    let mut pos = vec![[0usize; 2]; n_bins];
    let mut cnt = vec![[0usize; 2]; n_bins];
    for (a, arm) in cps.arms.iter().enumerate() {
        for (&s, &y) in arm.score.iter().zip(&arm.y) {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invalid("score", format!("{s} is outside [0, 1]")));
            }
            let b = ((s * n_bins as f64) as usize).min(n_bins - 1);
            cnt[b][a] += 1;
            pos[b][a] += usize::from(y);
        }
    }
    Ok((0..n_bins)
        .map(|b| {
            let (gap, undefined_reason) = match cnt[b] {
                [0, _] => (None, Some("no arm-0 scores in bin".to_string())),
                [_, 0] => (None, Some("no arm-1 scores in bin".to_string())),
                [c0, c1] => (Some(pos[b][1] as f64 / c1 as f64 - pos[b][0] as f64 / c0 as f64), None),
            };
            CalibrationBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                counts: cnt[b],
                gap,
                undefined_reason,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CausalAccuracy {
    /// `P(Ŷ = Y(baseline))`.
    pub agreement: f64,
    /// `E[Ŷ − Y(baseline)]`.
    pub signed_gap: f64,
}

/// Agreement of predictions with the baseline-arm outcomes.
pub fn causal_accuracy(yhat: &[u8], y_baseline: &[u8]) -> Result<CausalAccuracy> {
    if y_baseline.is_empty() {
        return Err(Error::Empty("baseline-arm outcomes"));
    }
    if yhat.len() != y_baseline.len() {
        return Err(Error::DimensionMismatch {
            what: "baseline-arm outcomes",
            expected: yhat.len(),
            actual: y_baseline.len(),
        });
    }
    let n = yhat.len() as f64;
    let agree = yhat.iter().zip(y_baseline).filter(|(a, b)| a == b).count() as f64;
    let gap = yhat
        .iter()
        .zip(y_baseline)
        .map(|(&p, &y)| f64::from(p) - f64::from(y))
        .sum::<f64>();
    Ok(CausalAccuracy {
        agreement: agree / n,
        signed_gap: gap / n,
    })
}

/// Confusion counts over `(Y, Ŷ)` for one arm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_labels(y: &[u8], yhat: &[u8]) -> Self {
        let mut c = Self::default();
        for (&t, &p) in y.iter().zip(yhat) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (1, 0) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }
}

/// The precision/error-rate identity evaluated on one arm.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem1Arm {
    /// `FPR − [(1 − PPV)/PPV]·[P(Y=1)/P(Y=0)]·TPR`.
    pub residual: Option<f64>,
    pub fpr: Option<f64>,
    pub ppv: Option<f64>,
    pub base_rate_ratio: Option<f64>,
    pub tpr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined_reason: Option<String>,
}

pub fn theorem1_arm(c: &ConfusionCounts) -> Theorem1Arm {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let ppv = ratio(c.tp, c.tp + c.fp);
    let tpr = ratio(c.tp, c.tp + c.fn_);
    let fpr = ratio(c.fp, c.fp + c.tn);
    let base = ratio(c.tp + c.fn_, c.fp + c.tn);
    let reason = if c.tp + c.fp == 0 {
        Some("no predicted positives (PPV undefined)")
    } else if c.tp == 0 {
        Some("PPV is zero")
    } else if c.tp + c.fn_ == 0 {
        Some("no positives (TPR undefined)")
    } else if c.fp + c.tn == 0 {
        Some("no negatives (base-rate ratio undefined)")
    } else {
        None
    };
    let residual = match (reason, fpr, ppv, base, tpr) {
        (None, Some(f), Some(p), Some(b), Some(t)) => Some(f - (1.0 - p) / p * b * t),
        _ => None,
    };
    Theorem1Arm {
        residual,
        fpr,
        ppv,
        base_rate_ratio: base,
        tpr,
        undefined_reason: reason.map(str::to_string),
    }
}

/// Residual of the identity for each arm, from exact cell counts.
pub fn theorem1_residual(joint: &[ConfusionCounts; 2]) -> [Theorem1Arm; 2] {
    [theorem1_arm(&joint[0]), theorem1_arm(&joint[1])]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ps(y: &[u8], p: &[u8], a: &[u8]) -> PredictionSet {
        let score = p.iter().map(|&v| f64::from(v)).collect();
        PredictionSet::with_predictions(y.to_vec(), p.to_vec(), score, a.to_vec()).unwrap()
    }

    #[test]
    fn perfect_balanced_predictor_has_no_violations() {
        let y = [1, 0, 1, 0, 1, 0, 1, 0];
        let a = [0, 0, 0, 0, 1, 1, 1, 1];
        let r = stat_metrics(&ps(&y, &y, &a)).unwrap();
        for m in ["parity", "ppv_parity", "eodds_tp", "eodds_fp"] {
            assert_eq!(r.value(m), Some(0.0), "{m}");
        }
        assert_eq!(r.value("accuracy"), Some(1.0));
    }

    #[test]
    fn eight_row_hand_counts() {
        // Group 0: (y,p) = (1,1) (1,0) (0,1) (0,0); group 1: (1,1) (1,1) (0,1) (0,0).
        let y = [1, 1, 0, 0, 1, 1, 0, 0];
        let p = [1, 0, 1, 0, 1, 1, 1, 0];
        let a = [0, 0, 0, 0, 1, 1, 1, 1];
        let r = stat_metrics(&ps(&y, &p, &a)).unwrap();
        assert!((r.value("parity").unwrap() - (0.75 - 0.5)).abs() < 1e-15);
        assert!((r.value("ppv_parity").unwrap() - (2.0 / 3.0 - 0.5)).abs() < 1e-15);
        assert!((r.value("eodds_tp").unwrap() - (1.0 - 0.5)).abs() < 1e-15);
        assert!((r.value("eodds_fp").unwrap() - (0.5 - 0.5)).abs() < 1e-15);
        assert!((r.value("accuracy").unwrap() - 5.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn empty_cell_is_undefined_not_zero() {
        let y = [1, 1, 0, 1];
        let p = [0, 0, 1, 1];
        let a = [0, 0, 1, 1];
        let r = stat_metrics(&ps(&y, &p, &a)).unwrap();
        let m = &r.metrics["ppv_parity"];
        assert!(m.value.is_none());
        assert!(m.undefined_reason.as_deref().unwrap().contains("A=0"));
        let fp = &r.metrics["eodds_fp"];
        assert!(fp.value.is_none());
        assert!(r.value("parity").is_some());
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert!(json["metrics"]["ppv_parity"]["undefined_reason"].is_string());
        assert!(json["metrics"]["parity"].get("undefined_reason").is_none());
    }

    #[test]
    fn single_group_is_an_error() {
        assert!(matches!(stat_metrics(&ps(&[1, 0], &[1, 0], &[1, 1])), Err(Error::EmptyGroup(0))));
    }

    #[test]
    fn identical_arms_have_zero_causal_parity() {
        let arm = ArmPredictions::from_scores(vec![1, 0, 1, 1], vec![0.7, 0.2, 0.4, 0.9]);
        let cps = CounterfactualPredictionSet::new(arm.clone(), arm).unwrap();
        let r = causal_metrics(&cps).unwrap();
        for m in ["causal_parity", "causal_ppv_parity", "causal_eodds_tp", "causal_eodds_fp"] {
            assert_eq!(r.value(m), Some(0.0), "{m}");
        }
        assert!(causal_calibration(&cps, 10).unwrap().iter().all(|b| b.gap.is_none_or(|g| g == 0.0)));
    }

    #[test]
    fn two_bin_calibration_hand_counts() {
        let a0 = ArmPredictions::from_scores(vec![1, 0, 1, 1], vec![0.1, 0.2, 0.6, 0.9]);
        let a1 = ArmPredictions::from_scores(vec![1, 1, 0, 1], vec![0.3, 0.4, 0.7, 1.0]);
        let bins = causal_calibration(&CounterfactualPredictionSet::new(a0, a1).unwrap(), 2).unwrap();
        assert_eq!(bins[0].counts, [2, 2]);
        assert!((bins[0].gap.unwrap() - (1.0 - 0.5)).abs() < 1e-15);
        assert!((bins[1].gap.unwrap() - (0.5 - 1.0)).abs() < 1e-15);
        let a0 = ArmPredictions::from_scores(vec![1], vec![0.1]);
        let a1 = ArmPredictions::from_scores(vec![1], vec![0.9]);
        let bins = causal_calibration(&CounterfactualPredictionSet::new(a0, a1).unwrap(), 2).unwrap();
        assert!(bins.iter().all(|b| b.gap.is_none()));
    }

    #[test]
    fn causal_accuracy_bounds() {
        let y0 = [0, 1, 1, 0];
        let acc = causal_accuracy(&y0, &y0).unwrap();
        assert_eq!((acc.agreement, acc.signed_gap), (1.0, 0.0));
        let acc = causal_accuracy(&[1, 1, 1], &[0, 0, 0]).unwrap();
        assert_eq!((acc.agreement, acc.signed_gap), (0.0, 1.0));
        assert!(causal_accuracy(&[1], &[]).is_err());
    }

    #[test]
    fn theorem1_boundary_fixtures() {
        let perfect = ConfusionCounts { tp: 40, fp: 0, fn_: 0, tn: 60 };
        let r = theorem1_arm(&perfect);
        assert_eq!((r.ppv, r.tpr, r.fpr, r.residual), (Some(1.0), Some(1.0), Some(0.0), Some(0.0)));
        // PPV = 0.5, balanced base rates, TPR = 0.6 forces FPR = 0.6.
        let forced = ConfusionCounts { tp: 30, fp: 30, fn_: 20, tn: 20 };
        let r = theorem1_arm(&forced);
        assert!((r.fpr.unwrap() - 0.6).abs() < 1e-15);
        assert!(r.residual.unwrap().abs() < 1e-12);
        let constant = ConfusionCounts { tp: 30, fp: 70, fn_: 0, tn: 0 };
        assert!(theorem1_arm(&constant).residual.unwrap().abs() < 1e-12);
        let never = ConfusionCounts { tp: 0, fp: 0, fn_: 30, tn: 70 };
        assert!(theorem1_arm(&never).residual.is_none());
        assert!(theorem1_arm(&never).undefined_reason.is_some());
    }

    #[test]
    fn averaging_is_mean_of_metrics() {
        let mk = |v: Option<f64>| FairnessReport {
            metrics: [(
                "x".to_string(),
                v.map_or_else(|| Metric::undefined("empty"), |v| Metric::defined(v, 10)),
            )]
            .into(),
            n: 10,
            arms_present: vec![0, 1],
        };
        let avg = average_reports(&[mk(Some(0.1)), mk(Some(0.3)), mk(None)]).unwrap();
        assert!((avg.value("x").unwrap() - 0.2).abs() < 1e-15);
        assert!(average_reports(&[mk(None)]).unwrap().value("x").is_none());
    }

    fn valid_counts() -> impl Strategy<Value = ConfusionCounts> {
        (1u64..10_000, 0u64..10_000, 0u64..10_000, 0u64..10_000)
            .prop_filter("negatives present", |(_, fp, _, tn)| fp + tn > 0)
            .prop_map(|(tp, fp, fn_, tn)| ConfusionCounts { tp, fp, fn_, tn })
    }

    fn labelled(n: usize) -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<u8>)> {
        (
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(0u8..2, n),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn theorem1_identity_holds(c in valid_counts()) {
            let r = theorem1_arm(&c);
            prop_assert!(r.residual.unwrap().abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn group_swap_negates_stat_violations((y, p, a) in labelled(40)) {
            prop_assume!(a.contains(&0) && a.contains(&1));
            let r = stat_metrics(&ps(&y, &p, &a)).unwrap();
            let flipped: Vec<u8> = a.iter().map(|g| 1 - g).collect();
            let s = stat_metrics(&ps(&y, &p, &flipped)).unwrap();
            for m in ["parity", "ppv_parity", "eodds_tp", "eodds_fp"] {
                prop_assert_eq!(r.value(m).map(|v| -v), s.value(m));
            }
            prop_assert_eq!(r.value("accuracy"), s.value("accuracy"));
            for m in r.metrics.values() {
                if let Some(v) = m.value {
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn arm_swap_negates_causal_violations((y0, p0, y1) in labelled(30), p1 in prop::collection::vec(0u8..2, 30)) {
            let score = |p: &[u8]| p.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
            let cps = CounterfactualPredictionSet::new(
                ArmPredictions { yhat: p0.clone(), y: y0, score: score(&p0) },
                ArmPredictions { yhat: p1.clone(), y: y1, score: score(&p1) },
            ).unwrap();
            let r = causal_metrics(&cps).unwrap();
            let s = causal_metrics(&cps.swapped()).unwrap();
            for (name, m) in &r.metrics {
                prop_assert_eq!(m.value.map(|v| -v), s.value(name));
            }
        }
    }
}
