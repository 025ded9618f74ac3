mod selfcheck;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use causalfair::dgp::{generate, write_cohort_csv, HiringParams, NoiseCoupling};
use causalfair::experiments::{
    emit_plot_data, run_evaluation_sweep, run_mitigation_benchmark, write_benchmark_csv, BenchmarkConfig,
    Evaluator, PlotFormat, SweepConfig,
};
use causalfair::mitigation::METHOD_NAMES;
use causalfair::tabular::{infer_schema, load_csv, positivity_filter, write_audit_json, write_csv};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] causalfair::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use causalfair::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(
                E::InvalidParameter { .. }
                | E::Schema(_)
                | E::HeaderMismatch { .. }
                | E::UnknownColumn(_)
                | E::NotBinary { .. }
                | E::WrongKind { .. },
            ) => 2,
            CliError::Core(_) | CliError::Failed(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(causalfair::Error::InvalidParameter { name, reason }) => {
                format!("invalid value for --{}: {reason}", name.replace('_', "-"))
            }
            other => other.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "causalfair", version, about = "Counterfactual fairness evaluation and mitigation")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic hiring cohort with both potential-outcome arms.
    Generate(GenerateArgs),
    /// Run the evaluation sweep over (alpha, beta, gamma) and write plot data.
    Sweep(SweepArgs),
    /// Run the mitigation benchmark and write the results table.
    Mitigate(MitigateArgs),
    /// Apply the positivity filter to a CSV table.
    Ingest(IngestArgs),
    /// Run the built-in numerical self-checks.
    Selfcheck(selfcheck::SelfcheckArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum CouplingArg {
    Shared,
    Independent,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 0.25, allow_negative_numbers = true)]
    beta: f64,
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    gamma: f64,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability of membership in group 1.
    #[arg(long, default_value_t = 0.75)]
    p_group1: f64,
    #[arg(long, value_enum, default_value_t = CouplingArg::Shared)]
    coupling: CouplingArg,
    #[arg(long)]
    out: PathBuf,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for PlotFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => PlotFormat::Csv,
            FormatArg::Json => PlotFormat::Json,
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// TOML or JSON file overriding the default sweep configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    n: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: Option<u64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of statistical, causal_pre, causal_post, oracle.
    #[arg(long, value_delimiter = ',')]
    evaluators: Option<Vec<String>>,
    /// Imputation paths per replicate.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Run on a single thread.
    #[arg(long)]
    serial: bool,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MitigateArgs {
    /// TOML or JSON file overriding the default benchmark configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `all` or a comma-separated list of methods.
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    baseline_arm: Option<u8>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    n: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    repeats: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: Option<u64>,
    /// Penalty strength for the prejudice remover.
    #[arg(long)]
    prem_eta: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[arg(long)]
    serial: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Binary group column.
    #[arg(long)]
    group_col: String,
    /// Comma-separated categorical columns whose joint cells must contain both groups.
    #[arg(long, value_delimiter = ',')]
    cat_cols: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the list of removed cells.
    #[arg(long)]
    audit: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RerunArgs {
    manifest: PathBuf,
    /// Write the primary output here instead of the recorded path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Fully resolved inputs of a run; enough to repeat it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum RunSpec {
    Generate {
        params: HiringParams,
        out: PathBuf,
    },
    Sweep {
        config: SweepConfig,
        format: FormatArg,
        out: PathBuf,
    },
    Mitigate {
        config: BenchmarkConfig,
        out: PathBuf,
    },
    Ingest {
        input: PathBuf,
        group_col: String,
        cat_cols: Vec<String>,
        out: PathBuf,
        audit: PathBuf,
    },
}

impl RunSpec {
    fn seed(&self) -> Option<u64> {
        match self {
            RunSpec::Generate { params, .. } => Some(params.seed),
            RunSpec::Sweep { config, .. } => Some(config.master_seed),
            RunSpec::Mitigate { config, .. } => Some(config.master_seed),
            RunSpec::Ingest { .. } => None,
        }
    }

    fn outputs(&self) -> Vec<PathBuf> {
        match self {
            RunSpec::Generate { out, .. } | RunSpec::Sweep { out, .. } | RunSpec::Mitigate { out, .. } => {
                vec![out.clone()]
            }
            RunSpec::Ingest { out, audit, .. } => vec![out.clone(), audit.clone()],
        }
    }

    fn set_out(&mut self, path: PathBuf) {
        match self {
            RunSpec::Generate { out, .. }
            | RunSpec::Sweep { out, .. }
            | RunSpec::Mitigate { out, .. }
            | RunSpec::Ingest { out, .. } => *out = path,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    tool_version: String,
    seed: Option<u64>,
    wall_time_secs: f64,
    outputs: Vec<PathBuf>,
    #[serde(flatten)]
    run: RunSpec,
}

fn default_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn execute(run: &RunSpec) -> CliResult<()> {
    match run {
        RunSpec::Generate { params, out } => {
            let cohort = generate(params)?;
            write_cohort_csv(&cohort, out)?;
            log::info!("wrote {} rows to {}", cohort.len(), out.display());
        }
        RunSpec::Sweep { config, format, out } => {
            let result = run_evaluation_sweep(config)?;
            emit_plot_data(&result, out, (*format).into())?;
            for f in &result.failures {
                eprintln!(
                    "warning: cell alpha={} beta={} gamma={} repeat={} failed: {}",
                    f.alpha, f.beta, f.gamma, f.repeat, f.error
                );
            }
            log::info!("wrote {} rows to {}", result.rows.len(), out.display());
        }
        RunSpec::Mitigate { config, out } => {
            let result = run_mitigation_benchmark(config)?;
            write_benchmark_csv(&result, out)?;
            log::info!("wrote {} rows to {}", result.rows.len(), out.display());
        }
        RunSpec::Ingest {
            input,
            group_col,
            cat_cols,
            out,
            audit,
        } => {
            let cats: Vec<&str> = cat_cols.iter().map(String::as_str).collect();
            let schema = infer_schema(input, group_col, &cats)?;
            let table = load_csv(input, &schema)?;
            let filtered = positivity_filter(&table, group_col, &cats)?;
            write_csv(&filtered.table, out)?;
            write_audit_json(&filtered.audit, audit)?;
            println!(
                "removed {} of {} rows in {} cell(s) lacking one group",
                filtered.removed,
                table.n(),
                filtered.audit.len()
            );
        }
    }
    Ok(())
}

fn run_with_manifest(run: RunSpec, manifest: Option<PathBuf>) -> CliResult<()> {
    let start = Instant::now();
    execute(&run)?;
    let path = manifest.unwrap_or_else(|| default_manifest_path(&run.outputs()[0]));
    let doc = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: run.seed(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        outputs: run.outputs(),
        run,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(causalfair::Error::from)?;
    std::fs::write(&path, text + "\n").map_err(|e| causalfair::Error::io(&path, e))?;
    Ok(())
}

/// Reads a config file as TOML or JSON, chosen by extension; files without
/// a recognised extension are tried as JSON first.
fn load_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let bad = |e: String| CliError::Usage(format!("malformed config {}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| bad(e.to_string())),
        Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
        _ => serde_json::from_str(&text).or_else(|je| toml::from_str(&text).map_err(|te| bad(format!("not JSON ({je}) nor TOML ({te})")))),
    }
}

fn sweep_spec(args: SweepArgs) -> CliResult<(RunSpec, Option<PathBuf>)> {
    let mut config: SweepConfig = match &args.config {
        Some(p) => load_config(p)?,
        None => SweepConfig::default(),
    };
    if let Some(v) = args.alphas {
        config.alphas = v;
    }
    if let Some(v) = args.betas {
        config.betas = v;
    }
    if let Some(v) = args.gammas {
        config.gammas = v;
    }
    if let Some(v) = args.n {
        config.n = v as usize;
    }
    if let Some(v) = args.repeats {
        config.repeats = v as usize;
    }
    if let Some(v) = args.seed {
        config.master_seed = v;
    }
    if let Some(v) = args.m {
        config.m = v as usize;
    }
    if let Some(v) = args.evaluators {
        config.evaluators = v
            .iter()
            .map(|s| {
                s.parse::<Evaluator>().map_err(|_| {
                    CliError::Usage(format!(
                        "unknown evaluator `{s}`; valid evaluators: statistical, causal_pre, causal_post, oracle"
                    ))
                })
            })
            .collect::<CliResult<_>>()?;
    }
    if let Some(t) = args.threads {
        config.threads = Some(t as usize);
    }
    if args.serial {
        config.parallel = false;
    }
    config.validate()?;
    Ok((
        RunSpec::Sweep {
            config,
            format: args.format,
            out: args.out,
        },
        args.manifest,
    ))
}

fn mitigate_spec(args: MitigateArgs) -> CliResult<(RunSpec, Option<PathBuf>)> {
    let mut config: BenchmarkConfig = match &args.config {
        Some(p) => load_config(p)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(methods) = args.method {
        let mut resolved = Vec::new();
        for m in methods {
            if m == "all" {
                resolved.extend(METHOD_NAMES.iter().map(|s| s.to_string()));
            } else if METHOD_NAMES.contains(&m.as_str()) {
                resolved.push(m);
            } else {
                return Err(CliError::Usage(format!(
                    "unknown method `{m}`; valid methods: all, {}",
                    METHOD_NAMES.join(", ")
                )));
            }
        }
        resolved.dedup();
        config.methods = resolved;
    }
    if let Some(v) = args.baseline_arm {
        config.baseline_arm = v;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.beta {
        config.beta = v;
    }
    if let Some(v) = args.gamma {
        config.gamma = v;
    }
    if let Some(v) = args.n {
        config.n = v as usize;
    }
    if let Some(v) = args.repeats {
        config.repeats = v as usize;
    }
    if let Some(v) = args.seed {
        config.master_seed = v;
    }
    if let Some(v) = args.m {
        config.m = v as usize;
    }
    if let Some(v) = args.prem_eta {
        config.prem_eta = v;
    }
    if let Some(t) = args.threads {
        config.threads = Some(t as usize);
    }
    if args.serial {
        config.parallel = false;
    }
    config.resolve_methods()?;
    HiringParams::new(config.alpha, config.beta, config.gamma, config.n, 0).validate()?;
    Ok((
        RunSpec::Mitigate {
            config,
            out: args.out,
        },
        args.manifest,
    ))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => {
            let params = HiringParams {
                p_group1: a.p_group1,
                coupling: match a.coupling {
                    CouplingArg::Shared => NoiseCoupling::Shared,
                    CouplingArg::Independent => NoiseCoupling::Independent,
                },
                ..HiringParams::new(a.alpha, a.beta, a.gamma, a.n as usize, a.seed)
            };
            params.validate()?;
            run_with_manifest(RunSpec::Generate { params, out: a.out }, a.manifest)
        }
        Command::Sweep(a) => {
            let (spec, manifest) = sweep_spec(a)?;
            run_with_manifest(spec, manifest)
        }
        Command::Mitigate(a) => {
            let (spec, manifest) = mitigate_spec(a)?;
            run_with_manifest(spec, manifest)
        }
        Command::Ingest(a) => run_with_manifest(
            RunSpec::Ingest {
                input: a.input,
                group_col: a.group_col,
                cat_cols: a.cat_cols,
                out: a.out,
                audit: a.audit,
            },
            a.manifest,
        ),
        Command::Selfcheck(a) => selfcheck::run(&a),
        Command::Rerun(a) => {
            let manifest: RunManifest = load_config(&a.manifest)?;
            let mut spec = manifest.run;
            if let Some(out) = a.out {
                spec.set_out(out);
            }
            execute(&spec)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
