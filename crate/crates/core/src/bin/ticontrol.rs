use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ticontrol::report::{
    self, data_grid, data_rows, monte_carlo_table, read_csv, reverify_rows, Case, McRow,
    Parameters, DEFAULT_DELTA, DEFAULT_GRID,
};
use ticontrol::sim::{horizon_for, SimConfig};
use ticontrol::verify::Tolerances;
use ticontrol::Error;

const EXIT_ACCEPTANCE: u8 = 1;
const EXIT_PARAMETERS: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "ticontrol",
    version,
    about = "Threshold equilibria for time-inconsistent singular control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and verify the strong-threshold candidate.
    Strong(CaseArgs),
    /// Build and verify the mild-threshold candidate.
    Mild(CaseArgs),
    /// Verify a candidate, or re-verify a data file written by `strong`/`mild`.
    Verify(VerifyArgs),
    /// Monte Carlo comparison against the closed forms.
    Simulate(SimulateArgs),
    /// Strong and mild verdicts over a range of the second discount rate.
    Scan(ScanArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CaseKind {
    Strong,
    Mild,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long)]
    sigma2: f64,
    #[arg(long)]
    q1: f64,
    #[arg(long)]
    q2: f64,
}

impl ParamArgs {
    fn params(&self) -> Parameters {
        Parameters {
            sigma2: self.sigma2,
            q1: self.q1,
            q2: self.q2,
        }
    }
}

#[derive(Args)]
struct CaseArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Points per region for verification and for the data file.
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    /// Restart depth below the explosion point (mild case).
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Directory receiving `<case>.csv` and `<case>.json`; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// What goes to stdout without `--out`: the report or the data table.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    /// Data file to re-verify; parameters are not needed in that mode.
    input: Option<PathBuf>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    q1: Option<f64>,
    #[arg(long)]
    q2: Option<f64>,
    #[arg(long, value_enum, default_value_t = CaseKind::Strong)]
    case: CaseKind,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value_t = CaseKind::Strong)]
    case: CaseKind,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Horizon; defaults to the time at which the slowest discount is 1e-6.
    #[arg(long)]
    tmax: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Starting point (repeatable); three interior points by default.
    #[arg(long)]
    x0: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Paths in the coupled dt-halving check.
    #[arg(long, default_value_t = 2000)]
    halving_paths: usize,
    #[arg(long, default_value_t = 3.0)]
    z_limit: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    sigma2: f64,
    #[arg(long)]
    q1: f64,
    #[arg(long)]
    q2_min: f64,
    #[arg(long)]
    q2_max: f64,
    #[arg(long, default_value_t = 33)]
    points: usize,
    #[arg(long, default_value_t = 2000)]
    grid: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Io(io::Error),
    Acceptance(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Strong(a) => cmd_case(CaseKind::Strong, &a),
        Command::Mild(a) => cmd_case(CaseKind::Mild, &a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Scan(a) => cmd_scan(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e @ (Error::Parameter(_) | Error::Domain(_)))) => {
            eprintln!("invalid parameters: {e}");
            ExitCode::from(EXIT_PARAMETERS)
        }
        Err(Failure::Lib(Error::InsufficientData(msg))) => {
            eprintln!("insufficient data: {msg}");
            ExitCode::from(EXIT_PARAMETERS)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            ExitCode::FAILURE
        }
        Err(Failure::Acceptance(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_ACCEPTANCE)
        }
    }
}

fn build(kind: CaseKind, params: Parameters, grid: usize, delta: f64) -> Result<Case, Failure> {
    if grid < 4 {
        return Err(Failure::Usage(format!(
            "--grid must be at least 4, got {grid}"
        )));
    }
    Ok(match kind {
        CaseKind::Strong => report::strong_case(params, grid)?,
        CaseKind::Mild => report::mild_case(params, grid, delta)?,
    })
}

fn case_name(kind: CaseKind) -> &'static str {
    match kind {
        CaseKind::Strong => "strong",
        CaseKind::Mild => "mild",
    }
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> CmdResult {
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn cmd_case(kind: CaseKind, a: &CaseArgs) -> CmdResult {
    let case = build(kind, a.params.params(), a.grid, a.delta)?;
    let rows = match &case.bundle {
        Some(bundle) => data_rows(bundle, &data_grid(bundle, a.grid))?,
        None => vec![],
    };
    let name = case_name(kind);
    match &a.out {
        Some(dir) => {
            report::write_csv(&rows, create(dir, &format!("{name}.csv"))?)?;
            write_json(&case.report, create(dir, &format!("{name}.json"))?)?;
            let verdict = match case.report.passes() {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "no valid candidate",
            };
            eprintln!("{name}: {verdict}; wrote {}", dir.display());
            Ok(())
        }
        None => match a.format {
            Format::Json => write_json(&case.report, io::stdout().lock()),
            Format::Csv => Ok(report::write_csv(&rows, io::stdout().lock())?),
        },
    }
}

#[derive(Serialize)]
struct TabulatedVerdict {
    schema_version: u32,
    input: String,
    rows: usize,
    condition_i_pass: bool,
    condition_ii_pass: bool,
    tolerance: f64,
}

fn cmd_verify(a: &VerifyArgs) -> CmdResult {
    if let Some(path) = &a.input {
        let rows = read_csv(File::open(path)?)?;
        let tol = Tolerances::default().identity;
        let (c1, c2) = reverify_rows(&rows, tol)?;
        let verdict = TabulatedVerdict {
            schema_version: report::SCHEMA_VERSION,
            input: path.display().to_string(),
            rows: rows.len(),
            condition_i_pass: c1,
            condition_ii_pass: c2,
            tolerance: tol,
        };
        return write_json(&verdict, io::stdout().lock());
    }
    let (Some(sigma2), Some(q1), Some(q2)) = (a.sigma2, a.q1, a.q2) else {
        return Err(Failure::Usage(
            "verify needs a data file or --sigma2, --q1 and --q2".into(),
        ));
    };
    let case = build(a.case, Parameters { sigma2, q1, q2 }, a.grid, a.delta)?;
    match a.format {
        Format::Json => write_json(&case.report.verdict, io::stdout().lock()),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            let err = |e: csv::Error| Failure::Io(e.into());
            w.write_record(["condition", "pass", "margin", "tolerance", "points"])
                .map_err(err)?;
            if let Some(v) = &case.report.verdict {
                for (name, c) in [
                    ("I", &v.condition_i),
                    ("II", &v.condition_ii),
                    ("III", &v.condition_iii),
                ] {
                    w.write_record([
                        name.to_string(),
                        c.pass.to_string(),
                        c.margin.to_string(),
                        c.tolerance.to_string(),
                        c.points.to_string(),
                    ])
                    .map_err(err)?;
                }
                w.write_record([
                    "smooth_fit".to_string(),
                    v.smooth_fit_pass.to_string(),
                    v.smooth_fit.to_string(),
                    v.smooth_fit_tolerance.to_string(),
                    "1".to_string(),
                ])
                .map_err(err)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    if a.paths == 0 {
        return Err(Error::InsufficientData("--paths must be at least 1".into()).into());
    }
    let params = a.params.params();
    let mut case = build(a.case, params, 200, a.delta)?;
    let Some(bundle) = case.bundle.take() else {
        return Err(Failure::Lib(Error::Parameter(
            "no valid mild candidate at these parameters".into(),
        )));
    };
    let cfg = SimConfig {
        dt: a.dt,
        t_max: a
            .tmax
            .unwrap_or_else(|| horizon_for(params.q1.min(params.q2), 1e-6)),
        n_paths: a.paths,
        seed: a.seed,
        ..SimConfig::default()
    };
    let x0s = if a.x0.is_empty() {
        report::default_starting_points(&bundle)
    } else {
        a.x0.clone()
    };
    let rows = monte_carlo_table(
        &bundle,
        &x0s,
        &cfg,
        a.halving_paths.min(a.paths).max(2),
        a.z_limit,
    )?;
    case.report.monte_carlo = rows.clone();
    case.report.provenance.simulation = Some(cfg);
    case.report.provenance.halving_paths = Some(a.halving_paths);
    match (&a.out, a.format) {
        (Some(path), Format::Csv) => write_mc_csv(&rows, create_file(path)?)?,
        (Some(path), Format::Json) => write_json(&case.report, create_file(path)?)?,
        (None, Format::Csv) => write_mc_csv(&rows, io::stdout().lock())?,
        (None, Format::Json) => write_json(&case.report, io::stdout().lock())?,
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(Failure::Acceptance(format!(
            "{failed} of {} Monte Carlo rows exceed |z| <= {} or the dt-halving check",
            rows.len(),
            a.z_limit
        )));
    }
    Ok(())
}

fn create_file(path: &Path) -> io::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_mc_csv<W: Write>(rows: &[McRow], out: W) -> CmdResult {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Failure::Io(e.into());
    w.write_record([
        "x0",
        "q",
        "closed_form",
        "estimate",
        "std_error",
        "abs_z",
        "dt_shift",
        "dt_shift_std_error",
        "pass",
    ])
    .map_err(err)?;
    for r in rows {
        w.write_record([
            r.x0.to_string(),
            r.rate.map_or("J".to_string(), |q| q.to_string()),
            r.closed_form.to_string(),
            r.estimate.to_string(),
            r.std_error.to_string(),
            r.z.abs().to_string(),
            r.dt_shift.to_string(),
            r.dt_shift_std_error.to_string(),
            r.pass.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_scan(a: &ScanArgs) -> CmdResult {
    let ordered = a.q2_min <= a.q2_max;
    if a.points == 0 || !ordered {
        return Err(Failure::Usage(format!(
            "empty scan range [{}, {}] with {} points",
            a.q2_min, a.q2_max, a.points
        )));
    }
    let report = report::scan(a.sigma2, a.q1, a.q2_min, a.q2_max, a.points, a.grid)?;
    match (&a.out, a.format) {
        (Some(path), Format::Csv) => report::write_scan_csv(&report, create_file(path)?)?,
        (Some(path), Format::Json) => write_json(&report, create_file(path)?)?,
        (None, Format::Csv) => report::write_scan_csv(&report, io::stdout().lock())?,
        (None, Format::Json) => write_json(&report, io::stdout().lock())?,
    }
    for c in &report.crossovers {
        eprintln!(
            "strong verdict flips between q2 = {} and {}; regime indicator root {}",
            c.q2_low,
            c.q2_high,
            c.indicator_root
                .map_or("not bracketed".to_string(), |r| format!("{r:.6}"))
        );
    }
    Ok(())
}
