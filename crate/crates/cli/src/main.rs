//! `relu-rate-lab` command-line driver.
//!
//! Exit codes: 0 success, 1 a verification failed, 2 bad usage or input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use relu_rate_lab::bounds::{self, TheoryInputs, DEFAULT_KAPPA, MIN_INPUT_DIM};
use relu_rate_lab::montecarlo::{lemma_csv, run_lemma_suite};
use relu_rate_lab::packing::{build_f0_ensemble_with, weight_for_radius, CodebookOptions};
use relu_rate_lab::ratefit::{compare, plot_csv, points_from_aggregate, verdict_json};
use relu_rate_lab::scaling::{aggregate_csv, load_aggregate, rows_csv, run_sweep, SweepConfig};
use relu_rate_lab::Error;

const THREADS_ENV: &str = "RELU_RATE_LAB_THREADS";

#[derive(Parser, Debug)]
#[command(name = "relu-rate-lab", version, about = "Minimax bounds, packings and rate fits for ReLU networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Global {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory receiving config.json and all outputs.
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Encoding of tabular results where both are offered.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lower bound, critical radius and information terms.
    Bounds(BoundsArgs),
    /// Sample size needed for a target risk (bounds with --epsilon).
    Complexity(BoundsArgs),
    /// Build the separated packing ensemble and certify it.
    Pack(PackArgs),
    /// Monte Carlo checks of the Gaussian identities.
    Verify(VerifyArgs),
    /// Run a sample-size sweep from a JSON config.
    Scaling(ScalingArgs),
    /// Fit both rate curves to an aggregate series.
    Fit(FitArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct BoundsArgs {
    #[arg(long)]
    n: u64,
    #[arg(long)]
    d: u64,
    #[arg(long)]
    sigma: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    vs: f64,
    #[arg(long = "L", value_name = "L")]
    #[serde(rename = "L")]
    depth: u32,
    #[arg(long, default_value_t = DEFAULT_KAPPA)]
    kappa: f64,
    /// Target risk; adds the required sample size to the report.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
struct PackArgs {
    #[arg(long)]
    d: usize,
    /// Codeword weight; derived from --delta when absent.
    #[arg(long, conflicts_with = "delta")]
    m: Option<usize>,
    #[arg(long, required_unless_present = "m")]
    delta: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    vf: f64,
    /// Randomized retries after the lexicographic sweep.
    #[arg(long, default_value_t = 16)]
    max_attempts: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
struct ScalingArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
struct FitArgs {
    /// Aggregate CSV (n,mean_error,std_error,count).
    #[arg(long)]
    series: PathBuf,
    /// Weight each n by its repetition count.
    #[arg(long)]
    weighted: bool,
}

enum Failure {
    Verification(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got '{raw}'"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    let g = &cli.global;
    match &cli.command {
        Command::Bounds(a) => cmd_bounds(g, a, "bounds"),
        Command::Complexity(a) => {
            if a.epsilon.is_none() {
                return Err(Failure::Usage("complexity requires --epsilon".into()));
            }
            cmd_bounds(g, a, "complexity")
        }
        Command::Pack(a) => cmd_pack(g, a),
        Command::Verify(a) => cmd_verify(g, a),
        Command::Scaling(a) => cmd_scaling(g, a),
        Command::Fit(a) => cmd_fit(g, a),
    }
}

/// Writes `config.json` into the output directory before any work happens.
fn echo_config(g: &Global, command: &str, args: &impl Serialize) -> CmdResult {
    fs::create_dir_all(&g.output_dir)?;
    let doc = json!({ "command": command, "global": g, "args": args });
    write(&g.output_dir.join("config.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn write(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_bounds(g: &Global, a: &BoundsArgs, name: &str) -> CmdResult {
    echo_config(g, name, a)?;
    if a.d < MIN_INPUT_DIM {
        return Err(Failure::Usage(format!(
            "--d {} is too small: the bound needs d >= {MIN_INPUT_DIM}",
            a.d
        )));
    }
    let inputs = TheoryInputs::new(a.n, a.d, a.sigma, a.tau, a.vs, a.depth)?.with_kappa(a.kappa)?;
    let report = bounds::assemble_report(&inputs)?;
    let mut doc = serde_json::to_value(report)?;
    if let Some(eps) = a.epsilon {
        let n = bounds::sample_complexity(eps, inputs.c(), inputs.vf(), inputs.d)?;
        doc["epsilon"] = json!(eps);
        doc["sample_complexity"] = json!(n);
    }
    let text = match g.format {
        Format::Json => serde_json::to_string_pretty(&doc)? + "\n",
        Format::Csv => {
            let mut out = String::from("key,value\n");
            for (k, v) in flatten(&doc, "") {
                out.push_str(&format!("{k},{v}\n"));
            }
            out
        }
    };
    let file = match g.format {
        Format::Json => "bounds.json",
        Format::Csv => "bounds.csv",
    };
    write(&g.output_dir.join(file), &text)?;
    print!("{text}");
    Ok(())
}

fn flatten(v: &serde_json::Value, prefix: &str) -> Vec<(String, String)> {
    match v {
        serde_json::Value::Object(map) => map
            .iter()
            .flat_map(|(k, v)| {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(v, &key)
            })
            .collect(),
        other => vec![(prefix.to_string(), other.to_string())],
    }
}

fn cmd_pack(g: &Global, a: &PackArgs) -> CmdResult {
    echo_config(g, "pack", a)?;
    let m = match (a.m, a.delta) {
        (Some(m), _) => m,
        (None, Some(delta)) => weight_for_radius(delta, a.tau, a.vf)?,
        (None, None) => return Err(Failure::Usage("pass --m or --delta".into())),
    };
    if a.d < 10 || m == 0 || m > a.d / 10 {
        return Err(Failure::Usage(format!(
            "weight m = {m} is infeasible for d = {}: need 1 <= m <= floor(d/10); use d >= {}",
            a.d,
            10 * m.max(1)
        )));
    }
    let opts = CodebookOptions {
        seed: g.seed,
        max_attempts: a.max_attempts,
    };
    let ens = build_f0_ensemble_with(a.d, m, a.tau, a.vf, &opts)?;
    write(&g.output_dir.join("codebook.txt"), &ens.codebook.to_text())?;
    write(
        &g.output_dir.join("ensemble.json"),
        &(serde_json::to_string_pretty(&ens.to_doc())? + "\n"),
    )?;

    let rows = ens.certificate();
    let mut csv = String::from("i,j,hamming,separation,floor,pass\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.16e},{:.16e},{}\n",
            r.i, r.j, r.hamming, r.separation, r.floor, r.pass
        ));
    }
    write(&g.output_dir.join("certificate.csv"), &csv)?;

    let cert = ens.codebook.certify();
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!(
        "codewords {} (target {}), m = {m}, pairs {}, failing pairs {failed}",
        ens.len(),
        ens.codebook.target_card,
        rows.len()
    );
    if failed > 0 || !cert.passed() {
        return Err(Failure::Verification(format!(
            "{failed} pairs below the separation floor, codebook certificate passed = {}",
            cert.passed()
        )));
    }
    Ok(())
}

fn cmd_verify(g: &Global, a: &VerifyArgs) -> CmdResult {
    echo_config(g, "verify", a)?;
    let rows = run_lemma_suite(a.samples, g.seed)?;
    match g.format {
        Format::Csv => write(&g.output_dir.join("lemmas.csv"), &lemma_csv(&rows))?,
        Format::Json => write(
            &g.output_dir.join("lemmas.json"),
            &(serde_json::to_string_pretty(&rows)? + "\n"),
        )?,
    }
    for r in &rows {
        println!(
            "{:<20} target {:<12.6} estimate {:<12.6} se {:<10.3e} {}",
            r.lemma,
            r.target,
            r.estimate,
            r.std_error,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.lemma.as_str()).collect();
    if !failed.is_empty() {
        return Err(Failure::Verification(format!("outside 4 standard errors: {}", failed.join(", "))));
    }
    Ok(())
}

fn cmd_scaling(g: &Global, a: &ScalingArgs) -> CmdResult {
    let text = fs::read_to_string(&a.config).map_err(|e| Failure::Usage(format!("{}: {e}", a.config.display())))?;
    let config: SweepConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", a.config.display())))?;
    echo_config(g, "scaling", &config)?;
    let series = run_sweep(&config)?;
    write(&g.output_dir.join("series_rows.csv"), &rows_csv(&series.rows))?;
    write(&g.output_dir.join("series_aggregate.csv"), &aggregate_csv(&series.aggregate))?;
    for r in &series.aggregate {
        println!("n {:>7}  mean {:.6e}  se {:.3e}  count {}", r.n, r.mean_error, r.std_error, r.count);
    }
    Ok(())
}

fn cmd_fit(g: &Global, a: &FitArgs) -> CmdResult {
    echo_config(g, "fit", a)?;
    let rows = load_aggregate(&a.series)?;
    let points = points_from_aggregate(&rows, a.weighted);
    let verdict = compare(&points)?;
    write(&g.output_dir.join("fit.json"), &(verdict_json(&verdict)? + "\n"))?;
    write(&g.output_dir.join("fit_plot.csv"), &plot_csv(&points, &verdict))?;
    let show = |r: f64| if r.is_finite() { format!("{r:.6}") } else { "undefined".into() };
    println!(
        "inv_sqrt_n R2 {}  inv_n R2 {}  winner {:?}",
        show(verdict.fits.inv_sqrt_n.r_squared),
        show(verdict.fits.inv_n.r_squared),
        verdict.winner
    );
    Ok(())
}
