//! Stylized two-stage hiring cohort with full potential outcomes.
//!
//! Each candidate has a group `a ~ Bernoulli(p_group1)`, a qualification
//! `x ~ Normal(2·alpha·(a − 0.5), 1)`, a binary interview score with
//! `P(S = 1) = σ(2x + 2·beta·(a − 0.5))` and an offer with
//! `P(Y = 1) = σ(2x + s + 2·gamma·(a − 0.5))`. Potential outcomes are
//! obtained by substituting both values of `a`.
//!
//! Two timings are stored side by side: the pre-interview arms
//! `Y(a, S(a))` propagate the group change through the score, the
//! post-interview arms `Y(a, s_obs)` hold the observed score fixed.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::tabular::{ColumnKind, ColumnRole, ColumnSpec, DataTable, TableBuilder};
use crate::{Error, Result};

/// Column order of the cohort CSV.
pub const COHORT_COLUMNS: [&str; 11] = [
    "id", "a", "x", "s0", "s1", "y0_pre", "y1_pre", "y0_post", "y1_post", "s", "y",
];

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// How the arms of one individual share randomness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCoupling {
    /// One uniform for the score and one for the offer, shared by both arms.
    #[default]
    Shared,
    /// Separate uniforms per arm. Marginals are unchanged.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiringParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default = "default_p_group1")]
    pub p_group1: f64,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub coupling: NoiseCoupling,
}

fn default_p_group1() -> f64 {
    0.75
}

impl HiringParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, n: usize, seed: u64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            p_group1: default_p_group1(),
            n,
            seed,
            coupling: NoiseCoupling::Shared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_group1 > 0.0 && self.p_group1 < 1.0) {
            return Err(Error::invalid("p_group1", format!("{} not in (0, 1)", self.p_group1)));
        }
        if self.n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::invalid("beta", format!("{} is negative", self.beta)));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(Error::invalid("gamma", format!("{} is negative", self.gamma)));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() || !self.gamma.is_finite() {
            return Err(Error::invalid("alpha", "parameters must be finite"));
        }
        Ok(())
    }
}

/// Per-individual records, stored column-wise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyntheticCohort {
    pub a: Vec<u8>,
    pub x: Vec<f64>,
    pub s0: Vec<u8>,
    pub s1: Vec<u8>,
    pub y0_pre: Vec<u8>,
    pub y1_pre: Vec<u8>,
    pub y0_post: Vec<u8>,
    pub y1_post: Vec<u8>,
    pub s: Vec<u8>,
    pub y: Vec<u8>,
}

impl SyntheticCohort {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// The observational view: `id, a, x, s, y` with `s` as a
    /// post-treatment stage outcome and `y` the final outcome.
    pub fn observed_table(&self) -> DataTable {
        TableBuilder::new()
            .numeric("id", ColumnRole::Id, (0..self.len()).map(|i| i as f64).collect())
            .binary("a", ColumnRole::Group, self.a.clone())
            .numeric("x", ColumnRole::PreTreatment, self.x.clone())
            .binary("s", ColumnRole::PostTreatment, self.s.clone())
            .binary("y", ColumnRole::Outcome, self.y.clone())
            .build()
            .expect("fixed schema")
    }

    fn check_consistency(&self) -> Result<()> {
        for i in 0..self.len() {
            let (s_fact, y_pre, y_post) = if self.a[i] == 1 {
                (self.s1[i], self.y1_pre[i], self.y1_post[i])
            } else {
                (self.s0[i], self.y0_pre[i], self.y0_post[i])
            };
            if s_fact != self.s[i] || y_pre != self.y[i] || y_post != self.y[i] {
                return Err(Error::Schema(format!(
                    "row {i}: observed values disagree with the factual arm"
                )));
            }
        }
        Ok(())
    }
}

/// Schema of the cohort CSV for use with [`crate::tabular::load_csv`].
pub fn cohort_schema() -> Vec<ColumnSpec> {
    use ColumnKind::*;
    use ColumnRole::*;
    vec![
        ColumnSpec::new("id", Numeric, Id),
        ColumnSpec::new("a", Binary, Group),
        ColumnSpec::new("x", Numeric, PreTreatment),
        ColumnSpec::new("s0", Binary, PostTreatment),
        ColumnSpec::new("s1", Binary, PostTreatment),
        ColumnSpec::new("y0_pre", Binary, Outcome),
        ColumnSpec::new("y1_pre", Binary, Outcome),
        ColumnSpec::new("y0_post", Binary, Outcome),
        ColumnSpec::new("y1_post", Binary, Outcome),
        ColumnSpec::new("s", Binary, PostTreatment),
        ColumnSpec::new("y", Binary, Outcome),
    ]
}

/// Draws a cohort. Deterministic in `params.seed`.
pub fn generate(params: &HiringParams) -> Result<SyntheticCohort> {
    params.validate()?;
    let n = params.n;
    let mut rng = seed::rng(params.seed);
    let mut c = SyntheticCohort {
        a: Vec::with_capacity(n),
        x: Vec::with_capacity(n),
        s0: Vec::with_capacity(n),
        s1: Vec::with_capacity(n),
        y0_pre: Vec::with_capacity(n),
        y1_pre: Vec::with_capacity(n),
        y0_post: Vec::with_capacity(n),
        y1_post: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
    };
    let bern = |u: f64, p: f64| u8::from(u < p);
    for _ in 0..n {
        let a = u8::from(rng.random::<f64>() < params.p_group1);
        let z: f64 = StandardNormal.sample(&mut rng);
        let x = 2.0 * params.alpha * (f64::from(a) - 0.5) + z;
        let (us, uy) = match params.coupling {
            NoiseCoupling::Shared => {
                let us: f64 = rng.random();
                let uy: f64 = rng.random();
                ([us, us], [uy, uy])
            }
            NoiseCoupling::Independent => {
                let us: [f64; 2] = [rng.random(), rng.random()];
                let uy: [f64; 2] = [rng.random(), rng.random()];
                (us, uy)
            }
        };
        // Arm offsets 2·k·(arm − 0.5) are −k and +k.
        let s_arm = [
            bern(us[0], sigmoid(2.0 * x - params.beta)),
            bern(us[1], sigmoid(2.0 * x + params.beta)),
        ];
        let s_obs = s_arm[a as usize];
        let y_of = |arm: usize, s: u8| {
            let shift = if arm == 1 { params.gamma } else { -params.gamma };
            bern(uy[arm], sigmoid(2.0 * x + f64::from(s) + shift))
        };
        let pre = [y_of(0, s_arm[0]), y_of(1, s_arm[1])];
        let post = [y_of(0, s_obs), y_of(1, s_obs)];
        c.a.push(a);
        c.x.push(x);
        c.s0.push(s_arm[0]);
        c.s1.push(s_arm[1]);
        c.y0_pre.push(pre[0]);
        c.y1_pre.push(pre[1]);
        c.y0_post.push(post[0]);
        c.y1_post.push(post[1]);
        c.s.push(s_obs);
        c.y.push(pre[a as usize]);
    }
    Ok(c)
}

/// Ground-truth effects computed from the generated arms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEffects {
    pub causal_parity_pre: f64,
    pub causal_parity_post: f64,
    pub statistical_parity_data: f64,
}

fn mean_diff(hi: &[u8], lo: &[u8]) -> f64 {
    let total: i64 = hi
        .iter()
        .zip(lo)
        .map(|(&h, &l)| i64::from(h) - i64::from(l))
        .sum();
    total as f64 / hi.len() as f64
}

pub fn oracle_effects(cohort: &SyntheticCohort) -> Result<OracleEffects> {
    let mut sums = [0u64; 2];
    let mut counts = [0u64; 2];
    for (&a, &y) in cohort.a.iter().zip(&cohort.y) {
        sums[a as usize] += u64::from(y);
        counts[a as usize] += 1;
    }
    for g in 0..2u8 {
        if counts[g as usize] == 0 {
            return Err(Error::EmptyGroup(g));
        }
    }
    Ok(OracleEffects {
        causal_parity_pre: mean_diff(&cohort.y1_pre, &cohort.y0_pre),
        causal_parity_post: mean_diff(&cohort.y1_post, &cohort.y0_post),
        statistical_parity_data: sums[1] as f64 / counts[1] as f64
            - sums[0] as f64 / counts[0] as f64,
    })
}

pub fn write_cohort_csv(cohort: &SyntheticCohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(COHORT_COLUMNS)?;
    for i in 0..cohort.len() {
        w.write_record([
            i.to_string(),
            cohort.a[i].to_string(),
            cohort.x[i].to_string(),
            cohort.s0[i].to_string(),
            cohort.s1[i].to_string(),
            cohort.y0_pre[i].to_string(),
            cohort.y1_pre[i].to_string(),
            cohort.y0_post[i].to_string(),
            cohort.y1_post[i].to_string(),
            cohort.s[i].to_string(),
            cohort.y[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a cohort written by [`write_cohort_csv`]. The header must match
/// [`COHORT_COLUMNS`] exactly and the file must contain at least one row.
pub fn read_cohort_csv(path: impl AsRef<Path>) -> Result<SyntheticCohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COHORT_COLUMNS {
        let present: Vec<&str> = header.iter().map(String::as_str).collect();
        return Err(Error::HeaderMismatch {
            missing: COHORT_COLUMNS
                .iter()
                .filter(|c| !present.contains(c))
                .map(|c| c.to_string())
                .collect(),
            unexpected: present
                .iter()
                .filter(|c| !COHORT_COLUMNS.contains(c))
                .map(|c| c.to_string())
                .collect(),
        });
    }
    let mut c = SyntheticCohort::default();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bit = |j: usize| -> Result<u8> {
            match &rec[j] {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Schema(format!(
                    "row {row}, column {}: expected 0/1, got `{other}`",
                    COHORT_COLUMNS[j]
                ))),
            }
        };
        let x: f64 = rec[2]
            .parse()
            .map_err(|_| Error::Schema(format!("row {row}, column x: `{}` is not a number", &rec[2])))?;
        c.a.push(bit(1)?);
        c.x.push(x);
        c.s0.push(bit(3)?);
        c.s1.push(bit(4)?);
        c.y0_pre.push(bit(5)?);
        c.y1_pre.push(bit(6)?);
        c.y0_post.push(bit(7)?);
        c.y1_post.push(bit(8)?);
        c.s.push(bit(9)?);
        c.y.push(bit(10)?);
    }
    if c.is_empty() {
        return Err(Error::Empty("cohort file has no rows"));
    }
    c.check_consistency()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{load_csv, ColumnKind};

    #[test]
    fn no_discrimination_means_identical_arms() {
        let c = generate(&HiringParams::new(0.0, 0.0, 0.0, 20_000, 1)).unwrap();
        assert_eq!(c.s0, c.s1);
        assert_eq!(c.y0_pre, c.y1_pre);
        assert_eq!(c.y0_post, c.y1_post);
        let e = oracle_effects(&c).unwrap();
        assert_eq!(e.causal_parity_pre, 0.0);
        assert_eq!(e.causal_parity_post, 0.0);
        assert!(e.statistical_parity_data.abs() < 0.03);
    }

    #[test]
    fn qualification_gap_matches_alpha() {
        let c = generate(&HiringParams::new(0.5, 0.3, 0.2, 1_000_000, 7)).unwrap();
        let (mut s, mut n) = ([0.0; 2], [0.0; 2]);
        for (&a, &x) in c.a.iter().zip(&c.x) {
            s[a as usize] += x;
            n[a as usize] += 1.0;
        }
        let gap = s[1] / n[1] - s[0] / n[0];
        let stderr = (1.0 / n[0] + 1.0 / n[1]).sqrt();
        assert!((gap - 1.0).abs() < 3.0 * stderr, "gap {gap}");
    }

    #[test]
    fn consistency_holds_row_wise() {
        for coupling in [NoiseCoupling::Shared, NoiseCoupling::Independent] {
            let mut p = HiringParams::new(-0.5, 0.8, 0.4, 5_000, 3);
            p.coupling = coupling;
            let c = generate(&p).unwrap();
            c.check_consistency().unwrap();
            for i in 0..c.len() {
                let a = u32::from(c.a[i]);
                let y = a * u32::from(c.y1_pre[i]) + (1 - a) * u32::from(c.y0_pre[i]);
                assert_eq!(y, u32::from(c.y[i]));
            }
        }
    }

    #[test]
    fn zero_beta_makes_pre_and_post_arms_equal() {
        let c = generate(&HiringParams::new(0.5, 0.0, 0.6, 10_000, 11)).unwrap();
        assert_eq!(c.y0_pre, c.y0_post);
        assert_eq!(c.y1_pre, c.y1_post);
    }

    #[test]
    fn raising_beta_widens_score_gap() {
        let gaps: Vec<f64> = [0.0, 0.25, 0.5, 1.0, 2.0]
            .iter()
            .map(|&b| {
                let c = generate(&HiringParams::new(0.0, b, 0.2, 20_000, 5)).unwrap();
                mean_diff(&c.s1, &c.s0)
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] >= w[0]), "{gaps:?}");
    }

    #[test]
    fn deterministic_in_seed() {
        let p = HiringParams::new(0.1, 0.2, 0.3, 1000, 99);
        assert_eq!(generate(&p).unwrap(), generate(&p).unwrap());
        let mut q = p.clone();
        q.seed = 100;
        assert_ne!(generate(&p).unwrap(), generate(&q).unwrap());
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(generate(&HiringParams::new(0.0, 0.0, 0.0, 0, 1)).is_err());
        assert!(generate(&HiringParams::new(0.0, -0.1, 0.0, 10, 1)).is_err());
        assert!(generate(&HiringParams::new(0.0, 0.0, -0.1, 10, 1)).is_err());
        let mut p = HiringParams::new(0.0, 0.0, 0.0, 10, 1);
        p.p_group1 = 1.0;
        assert!(generate(&p).is_err());
    }

    #[test]
    fn cohort_csv_round_trip() {
        let c = generate(&HiringParams::new(0.5, 0.5, 0.2, 2_000, 4)).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_cohort_csv(&c, f.path()).unwrap();
        assert_eq!(read_cohort_csv(f.path()).unwrap(), c);

        // Also readable through the generic tabular loader.
        let t = load_csv(f.path(), &cohort_schema()).unwrap();
        assert_eq!(t.n(), c.len());
        assert_eq!(t.numeric("x").unwrap(), c.x);
        assert_eq!(t.binary("y1_pre").unwrap(), c.y1_pre);
        assert_eq!(t.spec("a").unwrap().kind, ColumnKind::Binary);
    }

    #[test]
    fn cohort_csv_missing_column_is_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(
            f.path(),
            "id,a,x,s0,s1,y0_pre,y0_post,y1_post,s,y\n0,1,0.5,1,1,1,1,1,1,1\n",
        )
        .unwrap();
        match read_cohort_csv(f.path()) {
            Err(Error::HeaderMismatch { missing, .. }) => assert_eq!(missing, vec!["y1_pre"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_only_cohort_is_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), COHORT_COLUMNS.join(",") + "\n").unwrap();
        assert!(matches!(read_cohort_csv(f.path()), Err(Error::Empty(_))));
    }

    #[test]
    fn oracle_requires_both_groups() {
        let mut c = generate(&HiringParams::new(0.0, 0.0, 0.0, 50, 1)).unwrap();
        c.a.iter_mut().for_each(|a| *a = 1);
        assert!(matches!(oracle_effects(&c), Err(Error::EmptyGroup(0))));
    }
}
