use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use snrmom::io::parse_group_spec;
use snrmom::oracle::suites;
use snrmom::{
    parse_scenario, read_matrix, run_estimate, run_scenario, EstimateOptions, HeteroCorrection, ModelKind,
    OracleReport, ScenarioReport, SnrError, VERSION,
};

#[derive(Parser)]
#[command(name = "snrmom", version, about = "Method-of-moments signal-to-noise ratio estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Fixed,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Hetero {
    None,
    Scalar,
    Subgroup,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Wishart,
    Conditional,
    Variance,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate r² from a design matrix and a response matrix.
    Estimate {
        /// n×p design, headerless CSV.
        #[arg(long)]
        x: PathBuf,
        /// n×q responses, headerless CSV.
        #[arg(long)]
        y: PathBuf,
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long, value_enum, default_value = "none")]
        hetero: Hetero,
        /// Group sizes `n1,n2,...` over contiguous rows, or a group count.
        #[arg(long)]
        groups: Option<String>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Also report r² and the interval clamped to [0, 1].
        #[arg(long)]
        clamp: bool,
        /// Finite-sample standard error (fixed effects only).
        #[arg(long)]
        exact_se: bool,
        #[arg(long, conflicts_with = "csv")]
        json: bool,
        #[arg(long)]
        csv: bool,
    },
    /// Run a Monte Carlo scenario and report the summary statistics.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Full JSON report instead of a CSV row.
        #[arg(long)]
        json: bool,
        /// Include per-replication records in the JSON report.
        #[arg(long, requires = "json")]
        per_rep: bool,
    },
    /// Check the moment identities and variance formulas by simulation.
    Oracle {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        /// Draws (replications for the variance suite); defaults per suite.
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
}

enum Failure {
    Estimation(SnrError),
    Usage(String),
    OracleFailed,
}

impl From<SnrError> for Failure {
    fn from(e: SnrError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Estimation(e)
        }
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Failure::Usage(e.to_string()))
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    x: PathBuf,
    y: PathBuf,
    model: Model,
    hetero: Hetero,
    groups: Option<String>,
    level: f64,
    clamp: bool,
    exact_se: bool,
    csv: bool,
) -> Result<(), Failure> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Failure::Usage(format!("--level must lie in (0, 1), got {level}")));
    }
    let xm = read_matrix(&x)?;
    let ym = read_matrix(&y)?;
    let groups = groups.map(|g| parse_group_spec(&g, xm.nrows())).transpose()?;
    let opts = EstimateOptions {
        model: match model {
            Model::Fixed => ModelKind::Fixed,
            Model::Random => ModelKind::Random,
        },
        hetero: match hetero {
            Hetero::None => HeteroCorrection::None,
            Hetero::Scalar => HeteroCorrection::Scalar,
            Hetero::Subgroup => HeteroCorrection::Subgroup,
        },
        groups,
        level,
        clamp,
        exact_se,
    };
    let mut result = run_estimate(&xm, &ym, &opts)?;
    result.inputs = vec![x.display().to_string(), y.display().to_string()];
    let text =
        if csv { format!("{}\n{}\n", snrmom::RunResult::CSV_HEADER, result.csv_row()) } else { to_json(&result) };
    emit(&None, &text)
}

fn cmd_simulate(scenario: PathBuf, out: Option<PathBuf>, json: bool, per_rep: bool) -> Result<(), Failure> {
    let config = parse_scenario(&scenario)?;
    let mut summary = run_scenario(&config)?;
    if !per_rep {
        summary.per_rep = None;
    }
    let report = ScenarioReport::new(&config, summary);
    let text = if json { to_json(&report) } else { format!("{}\n{}\n", ScenarioReport::CSV_HEADER, report.csv_row()) };
    emit(&out, &text)
}

fn format_reports(suite: &str, seed: u64, reports: &[OracleReport]) -> String {
    let mut s = format!("# snrmom {VERSION} oracle suite={suite} seed={seed}\n");
    s += &format!(
        "{:<38} {:>16} {:>16} {:>12} {:>8} {:>9}  {}\n",
        "name", "analytic", "empirical", "mc_se", "draws", "rel_err", "status"
    );
    for r in reports {
        let status = match (r.pass, r.expect_pass) {
            (true, true) => "pass",
            (false, false) => "fail (expected)",
            (true, false) => "PASS (unexpected)",
            (false, true) => "FAIL",
        };
        s += &format!(
            "{:<38} {:>16.8e} {:>16.8e} {:>12.4e} {:>8} {:>+9.4}  {}\n",
            r.name,
            r.analytic,
            r.empirical,
            r.mc_se,
            r.draws,
            r.relative_error(),
            status
        );
    }
    s
}

fn cmd_oracle(suite: Suite, draws: Option<usize>, seed: u64, json: bool) -> Result<(), Failure> {
    let mut sections: Vec<(&str, Vec<OracleReport>)> = Vec::new();
    if matches!(suite, Suite::Wishart | Suite::All) {
        sections.push(("wishart", suites::wishart(draws.unwrap_or(suites::WISHART_DRAWS), seed)?));
    }
    if matches!(suite, Suite::Conditional | Suite::All) {
        sections.push(("conditional", suites::conditional(draws.unwrap_or(suites::CONDITIONAL_DRAWS), seed)?));
    }
    if matches!(suite, Suite::Variance | Suite::All) {
        sections.push(("variance", suites::variance(draws.unwrap_or(suites::VARIANCE_REPS), seed)?));
    }
    let text = if json {
        #[derive(serde::Serialize)]
        struct Section<'a> {
            suite: &'a str,
            seed: u64,
            version: &'a str,
            reports: &'a [OracleReport],
        }
        let all: Vec<Section> =
            sections.iter().map(|(name, r)| Section { suite: name, seed, version: VERSION, reports: r }).collect();
        to_json(&all)
    } else {
        sections.iter().map(|(name, r)| format_reports(name, seed, r)).collect()
    };
    emit(&None, &text)?;
    if sections.iter().flat_map(|(_, r)| r).all(OracleReport::ok) {
        Ok(())
    } else {
        Err(Failure::OracleFailed)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate { x, y, model, hetero, groups, level, clamp, exact_se, json: _, csv } => {
            cmd_estimate(x, y, model, hetero, groups, level, clamp, exact_se, csv)
        }
        Command::Simulate { scenario, out, json, per_rep } => cmd_simulate(scenario, out, json, per_rep),
        Command::Oracle { suite, draws, seed, json } => cmd_oracle(suite, draws, seed, json),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Estimation(e)) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::OracleFailed) => {
            eprintln!("error: oracle check failed");
            ExitCode::from(3)
        }
    }
}
