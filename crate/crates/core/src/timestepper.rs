//! Backward-Euler integration of `u_t + A u = e^{iθ} f`: every step is one
//! resolvent application `u^{n+1} = (I + τA)^{-1}(u^n + τ e^{iθ} f(t_{n+1}))`.

use num_complex::Complex64;

use crate::diagnostics::{ledger_row, EnergyLedger, PairReport, RowInput};
use crate::grid::{norm2, Field, Grid};
use crate::kernels::g_factor;
use crate::operator::{resolvent_from, OperatorSpec, ResolventResult, SolverOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConfig {
    pub tau: f64,
    pub t_end: f64,
    /// Keep a snapshot every this many steps (step 0 always kept).
    pub snapshot_every: usize,
}

impl TimeConfig {
    pub fn new(tau: f64, t_end: f64, snapshot_every: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("time step {tau} must be positive")));
        }
        if !(t_end >= tau && t_end.is_finite()) {
            return Err(Error::invalid(format!("t_end = {t_end} must be at least tau = {tau}")));
        }
        if snapshot_every == 0 {
            return Err(Error::invalid("snapshot_every must be positive"));
        }
        Ok(TimeConfig { tau, t_end, snapshot_every })
    }

    /// Number of steps, `t_end/τ` rounded to the nearest integer.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.tau).round() as usize).max(1)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.tau
    }
}

/// Spatial shape of the forcing.
#[derive(Debug, Clone, PartialEq)]
pub enum ForcingKind {
    Zero,
    Constant(Complex64),
    Modal { kx: usize, ky: usize, amplitude: Complex64 },
    Field(Field),
}

/// Time modulation of the forcing.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeProfile {
    Constant,
    /// `exp(rate · t)`.
    Exponential { rate: f64 },
    /// Piecewise linear through `(t, value)` knots, constant outside.
    Samples(Vec<(f64, f64)>),
}

impl TimeProfile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Exponential { rate } => (rate * t).exp(),
            TimeProfile::Samples(knots) => {
                let Some(first) = knots.first() else {
                    return 0.0;
                };
                if t <= first.0 {
                    return first.1;
                }
                for w in knots.windows(2) {
                    let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                    if t <= t1 {
                        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                    }
                }
                knots.last().map_or(0.0, |k| k.1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSpec {
    pub kind: ForcingKind,
    pub profile: TimeProfile,
}

impl ForcingSpec {
    pub fn zero() -> Self {
        ForcingSpec { kind: ForcingKind::Zero, profile: TimeProfile::Constant }
    }

    pub fn validate(&self, grid: Grid) -> Result<()> {
        if let ForcingKind::Field(f) = &self.kind {
            if f.grid.dim != grid.dim || f.grid.n != grid.n || f.grid.h != grid.h {
                return Err(Error::GridMismatch("forcing field does not match the grid".into()));
            }
        }
        if let TimeProfile::Samples(knots) = &self.profile {
            if knots.is_empty() || knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                return Err(Error::invalid("forcing samples need strictly increasing times"));
            }
        }
        Ok(())
    }

    /// Spatial part on `grid`.
    pub fn shape(&self, grid: Grid) -> Field {
        match &self.kind {
            ForcingKind::Zero => Field::zeros(grid),
            ForcingKind::Constant(c) => Field::constant(grid, *c),
            ForcingKind::Modal { kx, ky, amplitude } => Field::mode(grid, *kx, *ky, *amplitude),
            ForcingKind::Field(f) => f.clone(),
        }
    }

    pub fn at(&self, t: f64, grid: Grid) -> Field {
        self.shape(grid).scale(Complex64::new(self.profile.value(t), 0.0))
    }
}

/// Snapshots and the ledger of a run. When a step fails, `failure` holds
/// the error and everything before it is kept.
#[derive(Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshot_steps: Vec<usize>,
    pub snapshots: Vec<Field>,
    /// `g_ε^0(u)` per snapshot when `m = 0`.
    pub sections: Vec<Field>,
    pub ledger: EnergyLedger,
    pub failure: Option<Error>,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<&Field> {
        self.snapshots.last()
    }

    /// `(step, field)` pairs.
    pub fn indexed_snapshots(&self) -> Vec<(usize, Field)> {
        self.snapshot_steps.iter().copied().zip(self.snapshots.iter().cloned()).collect()
    }
}

/// One step from `u_n` with forcing `f_next = f(t_{n+1})`.
pub fn step(u_n: &Field, f_next: &Field, tau: f64, spec: &OperatorSpec, opts: &SolverOptions) -> Result<ResolventResult> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("time step {tau} must be positive")));
    }
    let rhs = u_n.axpy(tau * spec.params.rotation(), f_next);
    resolvent_from(&rhs, tau, spec, opts, u_n)
}

fn section(u: &Field, spec: &OperatorSpec) -> Field {
    let eps = spec.kernel.epsilon;
    u.map(|z| z * g_factor(z.norm_sqr(), 0.0, eps))
}

pub fn run(u0: &Field, forcing: &ForcingSpec, time: &TimeConfig, spec: &OperatorSpec, opts: &SolverOptions) -> Result<Trajectory> {
    if u0.grid.dim != spec.grid.dim || u0.grid.n != spec.grid.n || u0.grid.h != spec.grid.h {
        return Err(Error::GridMismatch("initial data does not match the grid".into()));
    }
    forcing.validate(spec.grid)?;
    let saturated = spec.params.m == 0.0;
    let mut traj = Trajectory {
        times: Vec::new(),
        snapshot_steps: Vec::new(),
        snapshots: Vec::new(),
        sections: Vec::new(),
        ledger: EnergyLedger::default(),
        failure: None,
    };
    let keep = |traj: &mut Trajectory, k: usize, u: &Field| {
        traj.times.push(time.time(k));
        traj.snapshot_steps.push(k);
        traj.snapshots.push(u.clone());
        if saturated {
            traj.sections.push(section(u, spec));
        }
    };

    let mut f_prev = forcing.at(0.0, spec.grid);
    traj.ledger.rows.push(ledger_row(
        &RowInput {
            step: 0,
            t: 0.0,
            tau: time.tau,
            u: u0,
            prev: None,
            forcing: &f_prev,
            prev_forcing: None,
            solver_residual: 0.0,
            iterations: 0,
        },
        spec,
    )?);
    keep(&mut traj, 0, u0);

    let steps = time.steps();
    let mut u = u0.clone();
    for k in 1..=steps {
        let t = time.time(k);
        let f = forcing.at(t, spec.grid);
        let res = match step(&u, &f, time.tau, spec, opts) {
            Ok(r) => r,
            Err(e) => {
                traj.failure = Some(Error::Step { step: k, source: Box::new(e) });
                return Ok(traj);
            }
        };
        let row = ledger_row(
            &RowInput {
                step: k,
                t,
                tau: time.tau,
                u: &res.u,
                prev: Some(&u),
                forcing: &f,
                prev_forcing: Some(&f_prev),
                solver_residual: res.residual,
                iterations: res.iterations,
            },
            spec,
        )?;
        traj.ledger.rows.push(row);
        u = res.u;
        f_prev = f;
        if k % time.snapshot_every == 0 || k == steps {
            keep(&mut traj, k, &u);
        }
    }
    Ok(traj)
}

/// Runs `(u0, f)` and `(ũ0, f̃)` with the same step and reports the
/// contraction defects.
pub fn pair_run(
    u0: &Field,
    v0: &Field,
    f: &ForcingSpec,
    g: &ForcingSpec,
    time: &TimeConfig,
    spec: &OperatorSpec,
    opts: &SolverOptions,
) -> Result<PairReport> {
    u0.check_same_grid(v0)?;
    f.validate(spec.grid)?;
    g.validate(spec.grid)?;
    let steps = time.steps();
    let mut times = vec![0.0];
    let mut distance = vec![norm2(&u0.sub(v0))];
    let mut gap = vec![0.0];
    let mut u = u0.clone();
    let mut v = v0.clone();
    for k in 1..=steps {
        let t = time.time(k);
        let fu = f.at(t, spec.grid);
        let fv = g.at(t, spec.grid);
        u = step(&u, &fu, time.tau, spec, opts).map_err(|e| Error::Step { step: k, source: Box::new(e) })?.u;
        v = step(&v, &fv, time.tau, spec, opts).map_err(|e| Error::Step { step: k, source: Box::new(e) })?.u;
        times.push(t);
        distance.push(norm2(&u.sub(&v)));
        gap.push(norm2(&fu.sub(&fv)));
    }
    Ok(PairReport::from_distances(time.tau, times, distance, gap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics;
    use crate::kernels::KernelParams;
    use crate::params::ModelParams;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn linear_spec(grid: Grid) -> OperatorSpec {
        let params = ModelParams { theta: 0.4, m: 1.0, p: 2.0, a: c(0.5, 0.2), b: c(0.0, 0.0), gamma: c(0.1, 0.0) };
        OperatorSpec::new(params, KernelParams::new(0.0, 1.0).unwrap(), grid).unwrap()
    }

    fn nonlinear_spec(grid: Grid) -> OperatorSpec {
        let theta: f64 = -0.6;
        let params = ModelParams {
            theta,
            m: 0.5,
            p: 3.0,
            a: Complex64::from_polar(1.0, -theta + 0.3),
            b: Complex64::from_polar(0.5, -theta - 0.2),
            gamma: c(0.0, 0.0),
        };
        OperatorSpec::new(params, KernelParams::new(1e-8, 1e8).unwrap(), grid).unwrap()
    }

    #[test]
    fn time_config_validation() {
        assert!(TimeConfig::new(0.0, 1.0, 1).is_err());
        assert!(TimeConfig::new(0.1, 0.01, 1).is_err());
        assert!(TimeConfig::new(0.1, 1.0, 0).is_err());
        assert_eq!(TimeConfig::new(1e-3, 1.0, 1).unwrap().steps(), 1000);
    }

    #[test]
    fn profiles() {
        assert_eq!(TimeProfile::Constant.value(3.0), 1.0);
        assert!((TimeProfile::Exponential { rate: -1.0 }.value(1.0) - (-1f64).exp()).abs() < 1e-15);
        let s = TimeProfile::Samples(vec![(0.0, 0.0), (1.0, 2.0)]);
        assert_eq!(s.value(0.5), 1.0);
        assert_eq!(s.value(-1.0), 0.0);
        assert_eq!(s.value(2.0), 2.0);
    }

    #[test]
    fn single_mode_step_matches_modal_division() {
        let grid = Grid::line(20, 1.0).unwrap();
        let spec = linear_spec(grid);
        let tau = 0.05;
        let u = Field::mode(grid, 3, 0, c(1.0, 0.0));
        let next = step(&u, &Field::zeros(grid), tau, &spec, &SolverOptions::default()).unwrap().u;
        let p = &spec.params;
        let div = 1.0 + tau * p.rotation() * (grid.eigenvalue_1d(3) + p.a + p.gamma);
        for (a, b) in next.values.iter().zip(&u.values) {
            assert!((a - b / div).norm() < 1e-12);
        }
    }

    #[test]
    fn single_step_run_equals_step() {
        let grid = Grid::line(12, 1.0).unwrap();
        let spec = nonlinear_spec(grid);
        let u0 = Field::mode(grid, 1, 0, c(1.0, 0.5));
        let forcing = ForcingSpec { kind: ForcingKind::Constant(c(0.3, 0.0)), profile: TimeProfile::Constant };
        let time = TimeConfig::new(0.1, 0.1, 1).unwrap();
        let opts = SolverOptions::default();
        let traj = run(&u0, &forcing, &time, &spec, &opts).unwrap();
        let direct = step(&u0, &forcing.at(0.1, grid), 0.1, &spec, &opts).unwrap().u;
        assert_eq!(traj.final_state().unwrap(), &direct);
        assert_eq!(traj.ledger.rows.len(), 2);
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let grid = Grid::square(6, 1.0).unwrap();
        let spec = nonlinear_spec(grid);
        let time = TimeConfig::new(0.1, 1.0, 3).unwrap();
        let traj = run(&Field::zeros(grid), &ForcingSpec::zero(), &time, &spec, &SolverOptions::default()).unwrap();
        assert!(traj.snapshots.iter().all(|u| u.values.iter().all(|z| *z == c(0.0, 0.0))));
        assert_eq!(traj.snapshot_steps, vec![0, 3, 6, 9, 10]);
    }

    #[test]
    fn unforced_norm_is_nonincreasing_and_balance_holds() {
        let grid = Grid::line(40, 1.0).unwrap();
        let spec = nonlinear_spec(grid);
        let u0 = Field::from_fn(grid, |x, _| c((3.0 * x).sin(), x * (1.0 - x)));
        let time = TimeConfig::new(0.01, 0.5, 1).unwrap();
        let traj = run(&u0, &ForcingSpec::zero(), &time, &spec, &SolverOptions::default()).unwrap();
        assert!(traj.failure.is_none());
        for w in traj.ledger.rows.windows(2) {
            assert!(w[1].half_mass <= w[0].half_mass + 1e-14);
        }
        assert!(diagnostics::energy_balance(&traj.ledger).passed);
        assert!(diagnostics::energy_global(&traj.ledger).passed);
        assert!(diagnostics::energy_inequality(&traj.ledger).passed);
    }

    #[test]
    fn mass_bounded_by_forcing_integral() {
        let grid = Grid::line(30, 1.0).unwrap();
        let spec = nonlinear_spec(grid);
        let u0 = Field::mode(grid, 2, 0, c(0.5, 0.5));
        let forcing = ForcingSpec {
            kind: ForcingKind::Modal { kx: 1, ky: 0, amplitude: c(2.0, -1.0) },
            profile: TimeProfile::Exponential { rate: -0.5 },
        };
        let time = TimeConfig::new(0.02, 1.0, 1).unwrap();
        let traj = run(&u0, &forcing, &time, &spec, &SolverOptions::default()).unwrap();
        let mut bound = norm2(&u0);
        for (k, u) in traj.snapshots.iter().enumerate().skip(1) {
            bound += time.tau * traj.ledger.rows[k].forcing_norm;
            assert!(norm2(u) <= bound + 1e-10);
        }
    }

    #[test]
    fn identical_pair_has_zero_defect() {
        let grid = Grid::line(16, 1.0).unwrap();
        let spec = nonlinear_spec(grid);
        let u0 = Field::mode(grid, 1, 0, c(1.0, 0.0));
        let f = ForcingSpec { kind: ForcingKind::Constant(c(1.0, 1.0)), profile: TimeProfile::Constant };
        let time = TimeConfig::new(0.05, 0.5, 1).unwrap();
        let r = pair_run(&u0, &u0, &f, &f, &time, &spec, &SolverOptions::default()).unwrap();
        assert!(r.defect.iter().all(|d| *d == 0.0));
        assert!(r.distance.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn distance_nonincreasing_for_same_forcing() {
        let grid = Grid::line(16, 1.0).unwrap();
        let spec = nonlinear_spec(grid);
        let u0 = Field::mode(grid, 1, 0, c(1.0, 0.0));
        let v0 = Field::mode(grid, 2, 0, c(0.0, 1.0));
        let f = ForcingSpec { kind: ForcingKind::Constant(c(1.0, 1.0)), profile: TimeProfile::Constant };
        let time = TimeConfig::new(0.05, 1.0, 1).unwrap();
        let r = pair_run(&u0, &v0, &f, &f, &time, &spec, &SolverOptions::default()).unwrap();
        for w in r.distance.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!(diagnostics::contraction(&r).passed);
    }

    #[test]
    fn failing_step_keeps_partial_trajectory() {
        let grid = Grid::line(16, 1.0).unwrap();
        let spec = nonlinear_spec(grid);
        let u0 = Field::mode(grid, 1, 0, c(1.0, 0.0));
        let time = TimeConfig::new(0.05, 0.5, 1).unwrap();
        let opts = SolverOptions { tol: 1e-30, max_newton: 2, max_fixed_point: 1, ..Default::default() };
        let traj = run(&u0, &ForcingSpec::zero(), &time, &spec, &opts).unwrap();
        assert!(matches!(traj.failure, Some(Error::Step { step: 1, .. })));
        assert_eq!(traj.ledger.rows.len(), 1);
    }

    #[test]
    fn saturated_runs_report_sections() {
        let grid = Grid::line(16, 1.0).unwrap();
        let params = ModelParams { theta: 0.0, m: 0.0, p: 2.0, a: c(1.0, 0.0), b: c(0.0, 0.0), gamma: c(0.0, 0.0) };
        let spec = OperatorSpec::new(params, KernelParams::new(1e-6, 1e6).unwrap(), grid).unwrap();
        let u0 = Field::mode(grid, 1, 0, c(1.0, 1.0));
        let time = TimeConfig::new(0.05, 0.2, 1).unwrap();
        let traj = run(&u0, &ForcingSpec::zero(), &time, &spec, &SolverOptions::default()).unwrap();
        assert_eq!(traj.sections.len(), traj.snapshots.len());
        assert!(traj.sections.iter().all(|s| s.values.iter().all(|z| z.norm() <= 1.0)));
    }
}
