//! Batch front end. Every command writes its report to the given writer and
//! returns the process exit status.
//!
//! | command        | 0        | 1                    | 2                  | 3              |
//! |----------------|----------|----------------------|--------------------|----------------|
//! | `check-params` | admissible | inadmissible       | unreadable config  |                |
//! | `run`          | finished |                      | bad config / io    | solver failure |
//! | `sweep`        | finished |                      | bad config / axis  |                |
//! | `verify`       | all pass | some certificate fails | unknown suite    |                |
//! | `report`       | written  |                      | bad ledger / column |               |

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::{ConfigMap, RunConfig};
use crate::diagnostics::{self, Certificate, EnergyLedger, H1Calibration};
use crate::grid::{norm2, write_snapshot, Field};
use crate::params::{validate, ModelParams};
use crate::suites::{self, Effort};
use crate::timestepper::{self, ForcingSpec, TimeConfig, Trajectory};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Environment variable overriding the sweep worker count.
pub const THREADS_ENV: &str = "CGL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "cgl", version, about = "Damped complex Ginzburg-Landau solver and verification harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model coefficients of a config file.
    CheckParams {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one evolution and write ledger, snapshots and certificates.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config file's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Independent runs over the values of one config key.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config key, e.g. `time.tau`.
        #[arg(long)]
        axis: String,
        /// Comma separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run certificate suites: kernels, operator, energy, contraction, h1 or all.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        quick: bool,
    },
    /// Print ledger columns as whitespace separated text.
    Report {
        #[arg(long)]
        ledger: PathBuf,
        /// Comma separated column names.
        #[arg(long, value_delimiter = ',', default_value = "t,half_mass,grad_norm_sq,balance_residual,solver_residual")]
        columns: Vec<String>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return EXIT_INPUT;
            }
            let _ = write!(out, "{e}");
            return EXIT_OK;
        }
    };
    execute(&cli.command, out)
}

pub fn execute(command: &Command, out: &mut dyn Write) -> i32 {
    match command {
        Command::CheckParams { config } => cmd_check_params(config, out),
        Command::Run { config, seed, out: dir } => cmd_run(config, *seed, dir.as_deref(), out),
        Command::Sweep { config, axis, values, seed, out: dir } => cmd_sweep(config, axis, values, *seed, dir.as_deref(), out),
        Command::Verify { suite, seed, quick } => {
            cmd_verify(suite, *seed, if *quick { Effort::Quick } else { Effort::Full }, out)
        }
        Command::Report { ledger, columns } => cmd_report(ledger, columns, out),
    }
}

fn read_map(path: &Path) -> Result<ConfigMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    ConfigMap::parse(&text)
}

fn base_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn cmd_check_params(config: &Path, out: &mut dyn Write) -> i32 {
    let cfg = match read_map(config).and_then(|m| RunConfig::from_map(&m, base_dir(config))) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let report = validate(&cfg.model);
    let _ = write!(out, "{report}");
    if report.ok {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

/// Calibrates the H¹ tolerance on a short linear modal run with the grid,
/// step and angle of `cfg`.
fn calibration_for(cfg: &RunConfig) -> Result<H1Calibration> {
    let model = ModelParams {
        theta: cfg.model.theta,
        m: 1.0,
        p: 2.0,
        a: Complex64::new(1.0, 0.0),
        b: Complex64::new(0.0, 0.0),
        gamma: Complex64::new(0.0, 0.0),
    };
    let spec = crate::operator::OperatorSpec::new(model, crate::kernels::KernelParams::new(0.0, 1.0)?, cfg.grid)?;
    let steps = cfg.time.steps().min(50);
    let time = TimeConfig::new(cfg.time.tau, steps as f64 * cfg.time.tau, steps)?;
    let u0 = Field::mode(cfg.grid, 1, 1, Complex64::new(1.0, 0.0));
    let traj = timestepper::run(&u0, &ForcingSpec::zero(), &time, &spec, &cfg.solver)?;
    Ok(diagnostics::calibrate_h1(&traj.ledger, &spec))
}

fn run_certificates(cfg: &RunConfig, spec: &crate::operator::OperatorSpec, traj: &Trajectory) -> Vec<Certificate> {
    let ledger = &traj.ledger;
    let mut certs = vec![
        diagnostics::energy_balance(ledger),
        diagnostics::energy_global(ledger),
        diagnostics::energy_inequality(ledger),
    ];
    match calibration_for(cfg) {
        Ok(cal) => certs.push(diagnostics::h1_apriori(ledger, spec, cal)),
        Err(_) => certs.push(Certificate::new("h1_apriori", f64::NAN, 0.0, None)),
    }
    certs.extend(diagnostics::lipschitz_bound(ledger, &traj.indexed_snapshots()));
    certs
}

struct OutputPaths {
    ledger: PathBuf,
    snapshots: PathBuf,
    certificates: PathBuf,
}

fn output_paths(cfg: &RunConfig, base: &Path) -> OutputPaths {
    let pick = |p: &Option<PathBuf>, default: &str| {
        let p = p.clone().unwrap_or_else(|| PathBuf::from(default));
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    OutputPaths {
        ledger: pick(&cfg.output.ledger, "ledger.csv"),
        snapshots: pick(&cfg.output.snapshots, "snapshots"),
        certificates: pick(&cfg.output.certificates, "certificates.txt"),
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_outputs(paths: &OutputPaths, traj: &Trajectory, certs: &[Certificate]) -> Result<()> {
    write_file(&paths.ledger, |w| traj.ledger.write_csv(w))?;
    fs::create_dir_all(&paths.snapshots)?;
    for (step, u) in traj.snapshot_steps.iter().zip(&traj.snapshots) {
        write_file(&paths.snapshots.join(format!("snap_{step:06}.bin")), |w| write_snapshot(w, u))?;
    }
    for (step, s) in traj.snapshot_steps.iter().zip(&traj.sections) {
        write_file(&paths.snapshots.join(format!("section_{step:06}.bin")), |w| write_snapshot(w, s))?;
    }
    write_file(&paths.certificates, |w| {
        for c in certs {
            writeln!(w, "{}", c.report_line())?;
        }
        Ok(())
    })
}

fn load_run_config(config: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut map = read_map(config)?;
    if let Some(s) = seed {
        map.set("seed", &s.to_string())?;
    }
    let cfg = RunConfig::from_map(&map, base_dir(config))?;
    let report = validate(&cfg.model);
    if !report.ok {
        return Err(Error::invalid(format!("inadmissible model\n{report}")));
    }
    Ok(cfg)
}

pub fn cmd_run(config: &Path, seed: Option<u64>, out_dir: Option<&Path>, out: &mut dyn Write) -> i32 {
    let cfg = match load_run_config(config, seed) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let (spec, traj) = match cfg.run() {
        Ok(x) => x,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let certs = run_certificates(&cfg, &spec, &traj);
    let paths = output_paths(&cfg, out_dir.unwrap_or_else(|| base_dir(config)));
    if let Err(e) = write_outputs(&paths, &traj, &certs) {
        let _ = writeln!(out, "error: writing outputs: {e}");
        return EXIT_INPUT;
    }
    for c in &certs {
        let _ = writeln!(out, "{}", c.report_line());
    }
    let _ = writeln!(out, "ledger {}", paths.ledger.display());
    if let Some(fail) = &traj.failure {
        let step = match fail {
            Error::Step { step, .. } => *step,
            _ => 0,
        };
        let _ = writeln!(out, "solver failure at step {step}: {fail}");
        return EXIT_SOLVER;
    }
    if let Some(last) = traj.ledger.rows.last() {
        let _ = writeln!(out, "finished {} steps, t = {}, half_mass = {:.16e}", last.step, last.t, last.half_mass);
    }
    EXIT_OK
}

/// Worker count: `CGL_THREADS` when set to a positive integer, else rayon's
/// default.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// One sweep cell.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: String,
    pub steps: usize,
    pub final_state: Option<Field>,
    pub half_mass: f64,
    pub certificates: Vec<Certificate>,
    pub error: Option<String>,
}

impl SweepCell {
    fn margin(&self, name: &str) -> f64 {
        self.certificates.iter().find(|c| c.name == name).map_or(f64::NAN, |c| c.worst_margin)
    }
}

fn sweep_cell(map: &ConfigMap, base: &Path, axis: &str, value: &str, cell_dir: Option<PathBuf>) -> SweepCell {
    let mut cell = SweepCell {
        value: value.to_string(),
        steps: 0,
        final_state: None,
        half_mass: f64::NAN,
        certificates: Vec::new(),
        error: None,
    };
    let mut map = map.clone();
    let prepared = map.set(axis, value).and_then(|_| RunConfig::from_map(&map, base)).and_then(|cfg| {
        let report = validate(&cfg.model);
        if report.ok {
            Ok(cfg)
        } else {
            Err(Error::invalid("inadmissible model"))
        }
    });
    let cfg = match prepared {
        Ok(c) => c,
        Err(e) => {
            cell.error = Some(e.to_string());
            return cell;
        }
    };
    match cfg.run() {
        Ok((spec, traj)) => {
            cell.certificates = run_certificates(&cfg, &spec, &traj);
            if let Some(dir) = cell_dir {
                let paths = output_paths(&cfg, &dir);
                if let Err(e) = write_outputs(&paths, &traj, &cell.certificates) {
                    cell.error = Some(format!("writing outputs: {e}"));
                }
            }
            if let Some(last) = traj.ledger.rows.last() {
                cell.steps = last.step;
                cell.half_mass = last.half_mass;
            }
            if let Some(f) = traj.failure {
                cell.error = Some(f.to_string());
            } else {
                cell.final_state = traj.snapshots.last().cloned();
            }
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Summary CSV of a sweep. `diff_prev` is `‖u_k - u_{k-1}‖₂` between final
/// states of neighbouring cells on the same grid, and `observed_order` is
/// `ln(diff_{k-1}/diff_k) / ln((x_{k-2} - x_{k-1})/(x_{k-1} - x_k))` for
/// numeric axis values, which is the convergence order in `x`.
pub fn sweep_summary(cells: &[SweepCell]) -> String {
    let mut s = String::from(
        "value,status,steps,final_half_mass,diff_prev,observed_order,energy_balance,energy_global,h1_apriori,lipschitz_rate,all_pass,error\n",
    );
    let mut diffs: Vec<f64> = Vec::with_capacity(cells.len());
    for (k, cell) in cells.iter().enumerate() {
        let diff = match (k.checked_sub(1).and_then(|j| cells[j].final_state.as_ref()), &cell.final_state) {
            (Some(a), Some(b)) if a.check_same_grid(b).is_ok() => norm2(&a.sub(b)),
            _ => f64::NAN,
        };
        let order = if k >= 2 {
            let x = |i: usize| cells[i].value.trim().parse::<f64>().unwrap_or(f64::NAN);
            ((diffs[k - 1] / diff).ln()) / ((x(k - 2) - x(k - 1)) / (x(k - 1) - x(k))).ln()
        } else {
            f64::NAN
        };
        diffs.push(diff);
        let status = if cell.error.is_some() { "failed" } else { "ok" };
        let all_pass = cell.error.is_none() && cell.certificates.iter().all(Certificate::ok);
        let error = cell.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        s.push_str(&format!(
            "{},{status},{},{:.16e},{:.16e},{:.6e},{:.16e},{:.16e},{:.16e},{:.16e},{all_pass},{error}\n",
            cell.value,
            cell.steps,
            cell.half_mass,
            diff,
            order,
            cell.margin("energy_balance"),
            cell.margin("energy_global"),
            cell.margin("h1_apriori"),
            cell.margin("lipschitz_rate"),
        ));
    }
    s
}

pub fn cmd_sweep(
    config: &Path,
    axis: &str,
    values: &[String],
    seed: Option<u64>,
    out_dir: Option<&Path>,
    out: &mut dyn Write,
) -> i32 {
    let mut map = match read_map(config) {
        Ok(m) => m,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_INPUT;
        }
    };
    if let Some(s) = seed {
        let _ = map.set("seed", &s.to_string());
    }
    if let Err(e) = map.clone().set(axis, "0") {
        let _ = writeln!(out, "error: {e}");
        return EXIT_INPUT;
    }
    if values.is_empty() {
        let _ = writeln!(out, "error: no sweep values");
        return EXIT_INPUT;
    }
    let base = base_dir(config).to_path_buf();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(worker_count()).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let cells: Vec<SweepCell> = pool.install(|| {
        values
            .par_iter()
            .enumerate()
            .map(|(k, v)| sweep_cell(&map, &base, axis, v, out_dir.map(|d| d.join(format!("cell_{k:03}")))))
            .collect()
    });
    let summary = sweep_summary(&cells);
    if let Some(dir) = out_dir {
        if let Err(e) = write_file(&dir.join("summary.csv"), |w| Ok(w.write_all(summary.as_bytes())?)) {
            let _ = writeln!(out, "error: writing summary: {e}");
            return EXIT_INPUT;
        }
    }
    let _ = write!(out, "{summary}");
    EXIT_OK
}

pub fn cmd_verify(suite: &str, seed: u64, effort: Effort, out: &mut dyn Write) -> i32 {
    let Some(reports) = suites::run_suite(suite, effort, seed) else {
        let _ = writeln!(out, "error: unknown suite {suite:?}; expected one of {:?} or \"all\"", suites::SUITES);
        return EXIT_INPUT;
    };
    let mut all = true;
    for r in &reports {
        all &= r.passed();
        let _ = writeln!(out, "{r}");
    }
    let _ = writeln!(out, "verify {suite} {}", if all { "PASS" } else { "FAIL" });
    if all {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

pub fn cmd_report(ledger: &Path, columns: &[String], out: &mut dyn Write) -> i32 {
    let parsed = fs::File::open(ledger)
        .map_err(Error::from)
        .and_then(|f| EnergyLedger::read_csv(BufReader::new(f)));
    let ledger = match parsed {
        Ok(l) => l,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let probe = diagnostics::EnergyRow::default();
    if let Some(bad) = columns.iter().find(|c| probe.column(c).is_none()) {
        let _ = writeln!(out, "error: unknown column {bad:?}");
        return EXIT_INPUT;
    }
    let write = |out: &mut dyn Write| -> io::Result<()> {
        writeln!(out, "# {}", columns.join(" "))?;
        for row in &ledger.rows {
            let vals: Vec<String> = columns.iter().map(|c| format!("{:.16e}", row.column(c).unwrap_or(f64::NAN))).collect();
            writeln!(out, "{}", vals.join(" "))?;
        }
        Ok(())
    };
    match write(out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            EXIT_INPUT
        }
    }
}
