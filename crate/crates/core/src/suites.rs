//! Verification suites behind `cgl verify` and the acceptance tests.
//!
//! Every suite returns a [`SuiteReport`]: a list of certificates plus free
//! text notes (measured orders, fitted constants). A suite passes when all
//! asserted certificates pass.

use std::fmt;
use std::path::Path;

use num_complex::Complex64;

use crate::config::RunConfig;
use crate::diagnostics::{self, Certificate, H1Calibration};
use crate::grid::{self, norm2, norm_inf, Field, Grid};
use crate::kernels::KernelParams;
use crate::operator::{self, epsilon_continuation, resolvent, OperatorSpec, SolverOptions};
use crate::oracle::{brute_resolvent_1node, modal_exact, ModalSolution};
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::timestepper::{self, ForcingKind, ForcingSpec, TimeConfig, Trajectory};
use crate::Result;

/// Bundled configurations, `(name, text)`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("linear", include_str!("../configs/linear.cfg")),
    ("nonlinear", include_str!("../configs/nonlinear.cfg")),
    ("saturated", include_str!("../configs/saturated.cfg")),
    ("stationary_singular", include_str!("../configs/stationary_singular.cfg")),
    ("stationary_saturated", include_str!("../configs/stationary_saturated.cfg")),
];

/// The three time-dependent bundled configurations.
pub const EVOLUTION_CONFIGS: [&str; 3] = ["linear", "nonlinear", "saturated"];

/// The two stationary continuation problems.
pub const STATIONARY_CONFIGS: [&str; 2] = ["stationary_singular", "stationary_saturated"];

pub fn bundled(name: &str) -> Result<RunConfig> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| crate::Error::invalid(format!("no bundled config named {name:?}")))?;
    RunConfig::parse(text, Path::new("."))
}

impl RunConfig {
    pub fn operator(&self) -> Result<OperatorSpec> {
        OperatorSpec::new(self.model, self.kernel, self.grid)
    }

    /// Runs the configured evolution.
    pub fn run(&self) -> Result<(OperatorSpec, Trajectory)> {
        let spec = self.operator()?;
        let u0 = self.initial_field()?;
        let traj = timestepper::run(&u0, &self.forcing, &self.time, &spec, &self.solver)?;
        Ok((spec, traj))
    }

    /// Same configuration stopped after `steps` steps (when shorter).
    pub fn truncated(&self, steps: usize) -> RunConfig {
        let mut cfg = self.clone();
        if steps < self.time.steps() {
            cfg.time.t_end = steps as f64 * self.time.tau;
            cfg.time.snapshot_every = cfg.time.snapshot_every.min(steps);
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effort {
    Full,
    /// Reduced sample counts and 100-step runs.
    Quick,
}

impl Effort {
    fn pick<T>(self, full: T, quick: T) -> T {
        match self {
            Effort::Full => full,
            Effort::Quick => quick,
        }
    }

    fn steps(self) -> usize {
        self.pick(usize::MAX, 100)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub certificates: Vec<Certificate>,
    pub notes: Vec<String>,
}

impl SuiteReport {
    fn new(name: impl Into<String>) -> Self {
        SuiteReport { name: name.into(), certificates: Vec::new(), notes: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        !self.certificates.is_empty() && self.certificates.iter().all(Certificate::ok)
    }

    fn failed_run(&mut self, what: &str, err: impl fmt::Display) {
        self.notes.push(format!("{what}: {err}"));
        self.certificates.push(Certificate::new(what.to_string(), f64::NAN, 0.0, None));
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.certificates {
            writeln!(f, "  {}", c.report_line())?;
        }
        for n in &self.notes {
            writeln!(f, "  # {n}")?;
        }
        write!(f, "suite {} {}", self.name, if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Truncated superlinear sector inequality on the 4 × 3 `(p, M)` matrix,
/// `samples` pairs per cell.
pub fn kernel_sector(samples: usize, seed: u64) -> SuiteReport {
    let mut rng = Rng::new(seed);
    let mut report = SuiteReport::new("kernel_sector");
    for p in [1.5, 2.0, 3.0, 5.0] {
        for m in [0.5, 1.0, 10.0] {
            report.certificates.push(diagnostics::sector_certificate(p, m, samples, rng.next_u64()));
        }
    }
    report.notes.push(format!("{samples} pairs per (p, M) cell"));
    report
}

/// Monotonicity of the damping kernel on admissible coefficients and the
/// sharpness probe on inadmissible ones.
pub fn kernel_monotonicity(coefficients: usize, pairs: usize, inadmissible: usize, seed: u64) -> SuiteReport {
    let mut rng = Rng::new(seed);
    let mut report = SuiteReport::new("kernel_monotonicity");
    report.certificates.push(diagnostics::monotonicity_certificate(coefficients, pairs, rng.next_u64()));
    report.certificates.push(diagnostics::sharpness_certificate(inadmissible, rng.next_u64()));
    report.notes.push(format!(
        "{coefficients} admissible coefficients x {pairs} pairs, {inadmissible} inadmissible coefficients"
    ));
    report
}

/// Discrete accretivity on random fields.
pub fn kernel_accretivity(samples: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new("kernel_accretivity");
    report.certificates.push(diagnostics::accretivity_certificate(samples, seed));
    report
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Parameter matrix of the operator suite: linear, singular with cubic
/// absorption, saturated.
pub fn operator_matrix() -> Vec<(&'static str, ModelParams, KernelParams)> {
    vec![
        (
            "linear",
            ModelParams { theta: 0.4, m: 1.0, p: 2.0, a: c(0.5, 0.2), b: c(0.0, 0.0), gamma: c(0.1, 0.0) },
            KernelParams { epsilon: 0.0, truncation: 1.0 },
        ),
        (
            "singular",
            ModelParams {
                theta: -0.6,
                m: 0.5,
                p: 3.0,
                a: Complex64::from_polar(1.0, 0.9),
                b: Complex64::from_polar(0.5, 0.4),
                gamma: c(0.0, 0.0),
            },
            KernelParams { epsilon: 1e-8, truncation: 10.0 },
        ),
        (
            "saturated",
            ModelParams {
                theta: 0.3,
                m: 0.0,
                p: 2.0,
                a: Complex64::from_polar(0.8, -0.3),
                b: Complex64::from_polar(0.2, -0.3),
                gamma: c(0.0, 0.0),
            },
            KernelParams { epsilon: 1e-6, truncation: 1e6 },
        ),
    ]
}

pub const LAMBDAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

fn random_field(rng: &mut Rng, grid: Grid) -> Field {
    let amp = 10f64.powf(rng.uniform_in(-2.0, 1.0));
    let values = (0..grid.len()).map(|_| rng.complex_in_box(amp)).collect();
    Field { values, grid }
}

/// Second field of a pair: independent, or a relative perturbation of `u`.
fn random_partner(rng: &mut Rng, u: &Field) -> Field {
    if rng.index(2) == 0 {
        return random_field(rng, u.grid);
    }
    let rel = 10f64.powf(rng.uniform_in(-6.0, 0.0));
    let scale = rel * (norm_inf(u) + 1e-12);
    u.add(&Field { values: (0..u.len()).map(|_| rng.complex_in_box(scale)).collect(), grid: u.grid })
}

/// `Re⟨Au - Av, u - v⟩ ≥ -1e-10 ‖Au - Av‖ ‖u - v‖` and
/// `‖R_λ F1 - R_λ F2‖ ≤ (1 + 1e-9) ‖F1 - F2‖` for `pairs` random pairs per
/// grid, parameter set and (for the resolvent) `λ`.
pub fn operator_monotonicity(grids: &[Grid], pairs: usize, seed: u64) -> SuiteReport {
    let mut rng = Rng::new(seed);
    let mut report = SuiteReport::new("operator_monotonicity");
    let opts = SolverOptions::default();
    for &g in grids {
        for (name, params, kernel) in operator_matrix() {
            let tag = format!("{name},dim={},n={}", g.dim, g.n);
            let spec = match OperatorSpec::new(params, kernel, g) {
                Ok(s) => s,
                Err(e) => {
                    report.failed_run(&format!("operator[{tag}]"), e);
                    continue;
                }
            };
            let mut mono = (f64::INFINITY, None);
            let mut nonexp = (f64::INFINITY, None);
            for k in 0..pairs {
                let u = random_field(&mut rng, g);
                let v = random_partner(&mut rng, &u);
                let d = u.sub(&v);
                let margin = match (operator::apply_a(&u, &spec), operator::apply_a(&v, &spec)) {
                    (Ok(au), Ok(av)) => {
                        let da = au.sub(&av);
                        let scale = norm2(&da) * norm2(&d);
                        let re = grid::inner_unchecked(&da, &d).re;
                        if scale > 0.0 { re / scale } else { 0.0 }
                    }
                    _ => f64::NAN,
                };
                if margin < mono.0 || margin.is_nan() {
                    mono = (margin, Some(k));
                }
                for &lambda in &LAMBDAS {
                    let gap = norm2(&d);
                    let margin = match (resolvent(&u, lambda, &spec, &opts), resolvent(&v, lambda, &spec, &opts)) {
                        (Ok(ru), Ok(rv)) if gap > 0.0 => 1.0 - norm2(&ru.u.sub(&rv.u)) / gap,
                        (Ok(_), Ok(_)) => 0.0,
                        _ => f64::NAN,
                    };
                    if margin < nonexp.0 || margin.is_nan() {
                        nonexp = (margin, Some(k));
                    }
                }
            }
            report.certificates.push(Certificate::new(format!("monotone[{tag}]"), mono.0, 1e-10, mono.1));
            report.certificates.push(Certificate::new(format!("nonexpansive[{tag}]"), nonexp.0, 1e-9, nonexp.1));
        }
    }
    report
}

/// Random admissible single-node model.
fn random_node_model(rng: &mut Rng) -> (ModelParams, KernelParams) {
    let theta = rng.uniform_in(-1.2, 1.2);
    let m = match rng.index(5) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.uniform(),
    };
    let p = rng.uniform_in(1.5, 5.0);
    let width = |q: f64| {
        if q == 1.0 {
            0.99 * std::f64::consts::FRAC_PI_2
        } else {
            0.99 * (2.0 * q.sqrt()).atan2((1.0 - q).abs())
        }
    };
    let a = Complex64::from_polar(10f64.powf(rng.uniform_in(-1.0, 1.0)), rng.uniform_in(-1.0, 1.0) * width(m) - theta);
    let b = if rng.index(3) == 0 {
        c(0.0, 0.0)
    } else {
        Complex64::from_polar(10f64.powf(rng.uniform_in(-1.0, 0.5)), rng.uniform_in(-1.0, 1.0) * width(p) - theta)
    };
    let gamma = Complex64::from_polar(rng.uniform_in(0.0, 1.0), rng.uniform_in(-1.0, 1.0) * 0.99 * std::f64::consts::FRAC_PI_2 - theta);
    let epsilon = if m == 1.0 { 0.0 } else { 10f64.powf(rng.uniform_in(-8.0, -1.0)) };
    let truncation = 10f64.powf(rng.uniform_in(-0.3, 1.0));
    (ModelParams { theta, m, p, a, b, gamma }, KernelParams { epsilon, truncation })
}

/// Newton resolvent on a single interior node against the radial oracle,
/// `count` random `(F, λ, model)`; margin is minus the absolute difference.
pub fn resolvent_oracle(count: usize, seed: u64) -> SuiteReport {
    let mut rng = Rng::new(seed);
    let mut report = SuiteReport::new("resolvent_oracle");
    let grid = Grid::line(1, 1.0).expect("valid grid");
    // The Laplacian of the lone node is 2/h² times the node value.
    let diag = 2.0 / (grid.h * grid.h);
    let opts = SolverOptions::default();
    let mut worst = (f64::INFINITY, None);
    for k in 0..count {
        let (params, kernel) = random_node_model(&mut rng);
        let f = rng.complex_in_box(3.0);
        let lambda = 10f64.powf(rng.uniform_in(-2.0, 1.0));
        let margin = OperatorSpec::new(params, kernel, grid)
            .and_then(|spec| resolvent(&Field::constant(grid, f), lambda, &spec, &opts))
            .map(|r| {
                let node = ModelParams { gamma: params.gamma + diag, ..params };
                -(r.u.values[0] - brute_resolvent_1node(f, lambda, &node, &kernel)).norm()
            })
            .unwrap_or(f64::NAN);
        if margin < worst.0 || margin.is_nan() {
            worst = (margin, Some(k));
        }
    }
    report.certificates.push(Certificate::new("resolvent_vs_oracle", worst.0, 1e-9, worst.1));
    report.notes.push(format!("{count} random (F, lambda, model) triples"));
    report
}

/// Per-step and telescoped energy identities on a bundled configuration.
pub fn energy(config: &str, effort: Effort) -> SuiteReport {
    let mut report = SuiteReport::new(format!("energy[{config}]"));
    match bundled(config).and_then(|cfg| cfg.truncated(effort.steps()).run()) {
        Ok((_, traj)) => {
            if let Some(e) = &traj.failure {
                report.failed_run("run", e);
            }
            let ledger = &traj.ledger;
            report.certificates.push(diagnostics::energy_balance(ledger));
            report.certificates.push(diagnostics::energy_global(ledger));
            report.certificates.push(diagnostics::energy_inequality(ledger));
            report.notes.push(format!("{} steps", ledger.rows.len().saturating_sub(1)));
        }
        Err(e) => report.failed_run("run", e),
    }
    report
}

/// Perturbs initial data by random noise of relative size 0.1 and the
/// forcing by an extra mode.
fn perturbed(cfg: &RunConfig, rng: &mut Rng) -> Result<(Field, Field, ForcingSpec, ForcingSpec)> {
    let u0 = cfg.initial_field()?;
    let scale = 0.1 * norm_inf(&u0).max(1.0);
    let noise = Field { values: (0..u0.len()).map(|_| rng.complex_in_box(scale)).collect(), grid: u0.grid };
    let v0 = u0.add(&noise);
    let base = cfg.forcing.shape(cfg.grid);
    let extra = Field::mode(cfg.grid, 3, 1, c(0.2, -0.1));
    let g = ForcingSpec { kind: ForcingKind::Field(base.add(&extra)), profile: cfg.forcing.profile.clone() };
    Ok((u0, v0, cfg.forcing.clone(), g))
}

/// `pair_run` on each bundled evolution with perturbed data and forcing.
pub fn contraction(effort: Effort, seed: u64) -> SuiteReport {
    let mut rng = Rng::new(seed);
    let mut report = SuiteReport::new("contraction");
    for name in EVOLUTION_CONFIGS {
        let outcome = bundled(name).and_then(|cfg| {
            let cfg = cfg.truncated(effort.steps());
            let spec = cfg.operator()?;
            let (u0, v0, f, g) = perturbed(&cfg, &mut rng)?;
            timestepper::pair_run(&u0, &v0, &f, &g, &cfg.time, &spec, &cfg.solver)
        });
        match outcome {
            Ok(pair) => {
                let cert = diagnostics::contraction(&pair);
                report.certificates.push(Certificate { name: format!("contraction[{name}]"), ..cert });
            }
            Err(e) => report.failed_run(&format!("contraction[{name}]"), e),
        }
    }
    report
}

/// Temporal order of backward Euler against the exact semidiscrete modal
/// solution of the linear configuration (no forcing), at `t = 1`.
pub fn linear_convergence(taus: &[f64]) -> SuiteReport {
    let mut report = SuiteReport::new("linear_convergence");
    let outcome = (|| -> Result<Vec<f64>> {
        let cfg = bundled("linear")?;
        let spec = cfg.operator()?;
        let amplitude = c(1.0, 0.5);
        let mode = ModalSolution::new(1, 1, amplitude, &spec)?;
        let t_end = 1.0;
        let exact = modal_exact(t_end, &mode, &spec)?;
        let u0 = Field::mode(spec.grid, 1, 1, amplitude);
        let mut errors = Vec::new();
        for &tau in taus {
            let time = TimeConfig::new(tau, t_end, usize::MAX)?;
            let traj = timestepper::run(&u0, &ForcingSpec::zero(), &time, &spec, &cfg.solver)?;
            if let Some(e) = traj.failure {
                return Err(e);
            }
            let last = traj.final_state().expect("final state is kept");
            errors.push(norm2(&last.sub(&exact)));
        }
        // Leading backward-Euler error: ½ τ t |λ|² |e^{-λt}| ‖mode‖.
        let predicted = 0.5 * t_end * mode.lambda_k.norm_sqr() * (-mode.lambda_k.re * t_end).exp() * norm2(&u0);
        let constants: Vec<f64> = errors.iter().zip(taus).map(|(e, t)| e / t).collect();
        let cmax = constants.iter().cloned().fold(0.0, f64::max);
        report.notes.push(format!("errors at t=1: {} for tau = {taus:?}", sci(&errors)));
        report.notes.push(format!("C = max err/tau = {cmax:.6e}, leading-order prediction {predicted:.6e}"));
        let cal = constants.last().copied().unwrap_or(f64::NAN);
        report.certificates.push(Certificate::new(
            "error_constant",
            0.1 - (cal / predicted - 1.0).abs(),
            0.0,
            None,
        ));
        Ok(errors)
    })();
    match outcome {
        Ok(errors) => {
            for (k, w) in errors.windows(2).enumerate() {
                let ratio = taus[k] / taus[k + 1];
                let order = (w[0] / w[1]).ln() / ratio.ln();
                report.notes.push(format!("order between tau={} and tau={}: {order:.4}", taus[k], taus[k + 1]));
                report.certificates.push(Certificate::new(format!("order[{}]", k), 0.15 - (order - 1.0).abs(), 0.0, None));
            }
        }
        Err(e) => report.failed_run("linear_run", e),
    }
    report
}

/// ε-continuation with `ε_k = 10^{-k}`, `k = 1..=8`, and `M_k = 1/ε_k`.
pub fn continuation(config: &str) -> SuiteReport {
    let mut report = SuiteReport::new(format!("continuation[{config}]"));
    let schedule: Vec<f64> = (1..=8).map(|k| 10f64.powi(-k)).collect();
    let prepared = bundled(config).and_then(|cfg| {
        let spec = cfg.operator()?;
        Ok((cfg.forcing.at(0.0, cfg.grid), spec, cfg.solver))
    });
    let (f, spec, opts) = match prepared {
        Ok(x) => x,
        Err(e) => {
            report.failed_run("setup", e);
            return report;
        }
    };
    let out = match epsilon_continuation(&f, &spec, &schedule, None, &opts) {
        Ok(o) => o,
        Err(e) => {
            report.failed_run("continuation", e);
            return report;
        }
    };
    let diffs = &out.report.diffs;
    report.notes.push(format!("successive differences: {}", sci(diffs)));
    report.notes.push(format!("min |u| = {:.4e}, max |u| = {:.4e}", min_modulus(&out.u), norm_inf(&out.u)));
    let decrease = diffs
        .windows(2)
        .enumerate()
        .map(|(k, w)| ((w[0] - w[1]) / w[0], k))
        .fold((f64::INFINITY, None), |acc, (m, k)| if m < acc.0 || m.is_nan() { (m, Some(k)) } else { acc });
    let mut cert = Certificate::new("differences_decrease", decrease.0, 0.0, decrease.1);
    cert.passed = out.report.strictly_decreasing() && diffs.len() == schedule.len() - 1;
    report.certificates.push(cert);

    if let Some(section) = &out.section {
        let sup = norm_inf(section);
        report.certificates.push(Certificate::new("section_bound", 1.0 - sup, 1e-12, None));
        let threshold = 10.0 * schedule[schedule.len() - 1];
        let worst = out
            .u
            .values
            .iter()
            .zip(&section.values)
            .enumerate()
            .filter(|(_, (u, _))| u.norm() > threshold)
            .map(|(i, (u, s))| (-(s - u / u.norm()).norm(), i))
            .fold((0.0, None), |acc, (m, i)| if m < acc.0 { (m, Some(i)) } else { acc });
        report.certificates.push(Certificate::new("section_matches_phase", worst.0, 1e-6, worst.1));
    }
    report
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn min_modulus(u: &Field) -> f64 {
    u.values.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min)
}

/// Calibrates the `C (h² + τ)` tolerance on the linear configuration.
pub fn h1_calibration(effort: Effort) -> Result<H1Calibration> {
    let cfg = bundled("linear")?.truncated(effort.steps());
    let (spec, traj) = cfg.run()?;
    if let Some(e) = traj.failure {
        return Err(e);
    }
    Ok(diagnostics::calibrate_h1(&traj.ledger, &spec))
}

/// H¹ a-priori and Lipschitz-in-time certificates on the bundled
/// evolutions.
pub fn h1_lipschitz(effort: Effort) -> SuiteReport {
    let mut report = SuiteReport::new("h1_lipschitz");
    let calibration = match h1_calibration(effort) {
        Ok(c) => c,
        Err(e) => {
            report.failed_run("calibration", e);
            return report;
        }
    };
    report.notes.push(format!("calibrated C = {:.6e}", calibration.c));
    for name in EVOLUTION_CONFIGS {
        match bundled(name).and_then(|cfg| cfg.truncated(effort.steps()).run()) {
            Ok((spec, traj)) => {
                if let Some(e) = &traj.failure {
                    report.failed_run(&format!("run[{name}]"), e);
                }
                let mut certs = vec![diagnostics::h1_apriori(&traj.ledger, &spec, calibration)];
                certs.extend(diagnostics::lipschitz_bound(&traj.ledger, &traj.indexed_snapshots()));
                for cert in certs {
                    report.certificates.push(Certificate { name: format!("{}[{name}]", cert.name), ..cert });
                }
            }
            Err(e) => report.failed_run(&format!("run[{name}]"), e),
        }
    }
    report
}

/// Pair of grids for the operator suite.
pub fn operator_grids() -> [Grid; 2] {
    [Grid::line(64, 1.0).expect("valid grid"), Grid::square(32, 1.0).expect("valid grid")]
}

pub const SUITES: [&str; 5] = ["kernels", "operator", "energy", "contraction", "h1"];

/// Runs a named suite group.
pub fn run_suite(name: &str, effort: Effort, seed: u64) -> Option<Vec<SuiteReport>> {
    let mut rng = Rng::new(seed);
    let mut seeds = move || rng.next_u64();
    let out = match name {
        "kernels" => vec![
            kernel_sector(effort.pick(1_000_000, 100_000), seeds()),
            kernel_monotonicity(effort.pick(100_000, 10_000), 100, effort.pick(10_000, 1_000), seeds()),
            kernel_accretivity(effort.pick(200, 40), seeds()),
        ],
        "operator" => {
            let mut v = vec![
                operator_monotonicity(&operator_grids(), effort.pick(100, 10), seeds()),
                resolvent_oracle(effort.pick(1000, 200), seeds()),
            ];
            v.extend(STATIONARY_CONFIGS.iter().map(|c| continuation(c)));
            v
        }
        "energy" => EVOLUTION_CONFIGS.iter().map(|c| energy(c, effort)).collect(),
        "contraction" => vec![contraction(effort, seeds())],
        "h1" => vec![linear_convergence(&[4e-3, 2e-3, 1e-3]), h1_lipschitz(effort)],
        "all" => {
            let mut v = Vec::new();
            for s in SUITES {
                v.extend(run_suite(s, effort, seeds())?);
            }
            v
        }
        _ => return None,
    };
    Some(out)
}
