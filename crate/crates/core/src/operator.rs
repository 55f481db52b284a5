//! The discrete evolution operator `A = L + B` and its resolvent.
//!
//! ```text
//! L u = -e^{iθ} Δ_h u + γ e^{iθ} u
//! B u = a e^{iθ} g_ε^m(u) + b e^{iθ} h_M^p(u)
//! ```
//!
//! `(I + λA)^{-1} F` is computed by Newton's method on the real `2n`
//! system with an Armijo line search; if the line search stalls the solver
//! switches to the damped fixed point `u ← u + ω (T(u) - u)` with
//! `T(u) = (I + λL)^{-1}(F - λ B(u))`. Jacobian systems are solved by block
//! elimination in 1D and by GMRES preconditioned with an exact sine-transform
//! solve of `I + λ(L + σ̄)` in 2D, `σ̄` being the mean of the complex-linear
//! part of the nonlinearity's Jacobian.

use num_complex::Complex64;

use crate::grid::{self, inner_unchecked, laplacian, norm2, norm_inf, Field, Grid};
use crate::kernels::{self, g_factor, h_factor, KernelJacobian, KernelParams, EPSILON_FLOOR};
use crate::linalg::{block_tridiagonal_solve, gmres, Dst, GmresOptions};
use crate::params::{validate, ModelParams};
use crate::{Error, NoConvergence, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

/// An admissible model on a grid. Immutable; share freely between threads.
#[derive(Debug, Clone)]
pub struct OperatorSpec {
    pub params: ModelParams,
    pub kernel: KernelParams,
    pub grid: Grid,
    dst: Option<Dst>,
}

impl OperatorSpec {
    pub fn new(params: ModelParams, kernel: KernelParams, grid: Grid) -> Result<Self> {
        let report = validate(&params);
        if !report.ok {
            return Err(Error::invalid(format!("inadmissible parameters: {report}")));
        }
        if params.m < 1.0 && kernel.epsilon < EPSILON_FLOOR {
            return Err(Error::invalid(format!(
                "m = {} < 1 needs epsilon ≥ {EPSILON_FLOOR:e}, got {}",
                params.m, kernel.epsilon
            )));
        }
        let dst = (grid.dim == 2).then(|| Dst::new(grid.n));
        Ok(OperatorSpec { params, kernel, grid, dst })
    }

    /// Same model and grid with different regularisation.
    pub fn with_kernel(&self, kernel: KernelParams) -> Result<Self> {
        Self::new(self.params, kernel, self.grid)
    }

    fn check_domain(&self) -> Result<()> {
        if self.params.m < 1.0 && self.kernel.epsilon <= 0.0 {
            return Err(Error::InvalidState(format!(
                "B is multivalued or singular for m = {} with epsilon = 0",
                self.params.m
            )));
        }
        Ok(())
    }

    fn check_field(&self, u: &Field) -> Result<()> {
        if u.grid.dim == self.grid.dim && u.grid.n == self.grid.n && u.grid.h == self.grid.h {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("field on {:?}, operator on {:?}", u.grid, self.grid)))
        }
    }

    fn b_node(&self, z: Complex64) -> Complex64 {
        let p = &self.params;
        let mut w = p.a_rot() * g_factor(z.norm_sqr(), p.m, self.kernel.epsilon);
        if p.b != ZERO {
            w += p.b_rot() * h_factor(z.norm(), p.p, self.kernel.truncation);
        }
        z * w
    }

    fn b_jacobian_node(&self, z: Complex64) -> KernelJacobian {
        let p = &self.params;
        // check_domain guarantees the Jacobian exists.
        let jg = kernels::g_jacobian(z, p.m, self.kernel.epsilon).unwrap_or(KernelJacobian::ZERO);
        let mut j = jg.scaled_by(p.a_rot());
        if p.b != ZERO {
            let (jh, _) = kernels::h_jacobian(z, p.p, self.kernel.truncation);
            j = j.add(&jh.scaled_by(p.b_rot()));
        }
        j
    }
}

/// `-e^{iθ} Δ_h u + γ e^{iθ} u`.
pub fn apply_l(u: &Field, spec: &OperatorSpec) -> Field {
    let rot = spec.params.rotation();
    let gr = spec.params.gamma_rot();
    let lap = laplacian(u);
    let values = lap.values.iter().zip(&u.values).map(|(l, v)| -rot * l + gr * v).collect();
    Field { values, grid: u.grid }
}

/// `a e^{iθ} g_ε^m(u) + b e^{iθ} h_M^p(u)` pointwise.
pub fn apply_b(u: &Field, spec: &OperatorSpec) -> Result<Field> {
    spec.check_domain()?;
    Ok(u.map(|z| spec.b_node(z)))
}

pub fn apply_a(u: &Field, spec: &OperatorSpec) -> Result<Field> {
    spec.check_field(u)?;
    Ok(apply_l(u, spec).add(&apply_b(u, spec)?))
}

/// Tuning of the nonlinear and linear solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative nonlinear tolerance: success when `‖R‖₂ ≤ tol (1 + ‖F‖₂)`.
    pub tol: f64,
    pub linear_tol: f64,
    pub max_newton: usize,
    pub max_fixed_point: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, linear_tol: 1e-12, max_newton: 50, max_fixed_point: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct ResolventResult {
    pub u: Field,
    /// Newton plus fixed-point iterations.
    pub iterations: usize,
    /// Final `‖u + λ A u - F‖₂`.
    pub residual: f64,
    /// `Re⟨A u - A 0, u⟩`; nonnegative for a monotone operator.
    pub certificate: f64,
    pub used_fallback: bool,
}

/// `u + λ A u - F`.
pub fn resolvent_residual(u: &Field, f: &Field, lambda: f64, spec: &OperatorSpec) -> Result<Field> {
    let au = apply_a(u, spec)?;
    let values = u
        .values
        .iter()
        .zip(&au.values)
        .zip(&f.values)
        .map(|((v, a), f)| v + lambda * a - f)
        .collect();
    Ok(Field { values, grid: u.grid })
}

/// `(I + λA)^{-1} F` starting from `F`.
pub fn resolvent(f: &Field, lambda: f64, spec: &OperatorSpec, opts: &SolverOptions) -> Result<ResolventResult> {
    resolvent_from(f, lambda, spec, opts, f)
}

/// `(I + λA)^{-1} F` starting from `guess`.
pub fn resolvent_from(
    f: &Field,
    lambda: f64,
    spec: &OperatorSpec,
    opts: &SolverOptions,
    guess: &Field,
) -> Result<ResolventResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("resolvent parameter λ = {lambda} must be positive")));
    }
    spec.check_field(f)?;
    spec.check_field(guess)?;
    spec.check_domain()?;

    let target = opts.tol * (1.0 + norm2(f));
    let mut u = guess.clone();
    let mut r = resolvent_residual(&u, f, lambda, spec)?;
    let mut rn = norm2(&r);
    let mut history = vec![rn];
    let mut iterations = 0;

    let finish = |u: Field, rn: f64, iterations: usize, used_fallback: bool| -> Result<ResolventResult> {
        let au = apply_a(&u, spec)?;
        let certificate = inner_unchecked(&au, &u).re;
        Ok(ResolventResult { u, iterations, residual: rn, certificate, used_fallback })
    };

    for _ in 0..opts.max_newton {
        if rn <= target {
            return finish(u, rn, iterations, false);
        }
        let rhs: Vec<Complex64> = r.values.iter().map(|v| -v).collect();
        let Some(delta) = newton_direction(&u, &rhs, lambda, spec, opts) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            let values = u.values.iter().zip(&delta).map(|(v, d)| v + alpha * d).collect();
            let trial = Field { values, grid: u.grid };
            let rt = resolvent_residual(&trial, f, lambda, spec)?;
            let rtn = norm2(&rt);
            if rtn <= (1.0 - ARMIJO_C * alpha) * rn {
                accepted = Some((trial, rt, rtn));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, rt, rtn)) = accepted else {
            break;
        };
        u = trial;
        r = rt;
        rn = rtn;
        iterations += 1;
        history.push(rn);
    }
    if rn <= target {
        return finish(u, rn, iterations, false);
    }

    // Damped fixed point from the best Newton iterate.
    let mut omega: f64 = 1.0;
    let mut best = (u.clone(), rn);
    for _ in 0..opts.max_fixed_point {
        iterations += 1;
        let bu = apply_b(&u, spec)?;
        let rhs: Vec<Complex64> = f.values.iter().zip(&bu.values).map(|(f, b)| f - lambda * b).collect();
        let tu = solve_shifted_l(&rhs, lambda, ZERO, spec);
        let values = u.values.iter().zip(&tu).map(|(v, t)| v + omega * (t - v)).collect();
        let trial = Field { values, grid: u.grid };
        let rt = resolvent_residual(&trial, f, lambda, spec)?;
        let rtn = norm2(&rt);
        history.push(rtn);
        if rtn < rn {
            u = trial;
            rn = rtn;
            omega = (2.0 * omega).min(1.0);
            if rn < best.1 {
                best = (u.clone(), rn);
            }
            if rn <= target {
                return finish(u, rn, iterations, true);
            }
        } else {
            omega *= 0.5;
            if omega < 1e-8 {
                break;
            }
        }
    }
    Err(Error::NoConvergence(Box::new(NoConvergence {
        best: best.0,
        best_residual: best.1,
        history,
    })))
}

/// Solves `(I + λ(L + D B(u))) δ = rhs`.
fn newton_direction(
    u: &Field,
    rhs: &[Complex64],
    lambda: f64,
    spec: &OperatorSpec,
    opts: &SolverOptions,
) -> Option<Vec<Complex64>> {
    let grid = spec.grid;
    let rot = spec.params.rotation();
    let jac: Vec<KernelJacobian> = u.values.iter().map(|&z| spec.b_jacobian_node(z)).collect();
    if grid.dim == 1 {
        let inv_h2 = 1.0 / (grid.h * grid.h);
        let centre = KernelJacobian::complex(1.0 + lambda * (rot * 2.0 * inv_h2 + spec.params.gamma_rot()));
        let diag: Vec<KernelJacobian> = jac
            .iter()
            .map(|j| centre.add(&j.scaled_by(Complex64::new(lambda, 0.0))))
            .collect();
        let off = KernelJacobian::complex(-lambda * rot * inv_h2);
        return block_tridiagonal_solve(&diag, &off, rhs);
    }

    let sigma = if jac.is_empty() {
        ZERO
    } else {
        let s: Complex64 = grid::pairwise(jac.len(), &|i| {
            let j = &jac[i];
            Complex64::new(0.5 * (j.xx + j.yy), 0.5 * (j.yx - j.xy))
        });
        s / jac.len() as f64
    };
    let op = |x: &[Complex64]| -> Vec<Complex64> {
        let xf = Field { values: x.to_vec(), grid };
        let lx = apply_l(&xf, spec);
        x.iter()
            .zip(&lx.values)
            .zip(&jac)
            .map(|((xi, li), j)| xi + lambda * (li + j.apply(*xi)))
            .collect()
    };
    let prec = |r: &[Complex64]| solve_shifted_l(r, lambda, sigma, spec);
    let out = gmres(
        &op,
        &prec,
        rhs,
        GmresOptions { rel_tol: opts.linear_tol, restart: 60, max_iter: 600 },
    );
    // An unconverged Krylov direction is still a descent candidate as long
    // as it reduces the linear residual; the line search decides.
    let useful = out.converged || out.relative_residual < 1.0;
    if useful && out.x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Some(out.x)
    } else {
        None
    }
}

/// `(I + λ(L + σ))^{-1} rhs` for a complex constant `σ`.
fn solve_shifted_l(rhs: &[Complex64], lambda: f64, sigma: Complex64, spec: &OperatorSpec) -> Vec<Complex64> {
    let grid = spec.grid;
    let rot = spec.params.rotation();
    let gr = spec.params.gamma_rot();
    match &spec.dst {
        None => {
            let inv_h2 = 1.0 / (grid.h * grid.h);
            let centre = KernelJacobian::complex(1.0 + lambda * (rot * 2.0 * inv_h2 + gr + sigma));
            let diag = vec![centre; rhs.len()];
            let off = KernelJacobian::complex(-lambda * rot * inv_h2);
            block_tridiagonal_solve(&diag, &off, rhs).unwrap_or_else(|| rhs.to_vec())
        }
        Some(dst) => {
            let n = grid.n;
            let mut x = rhs.to_vec();
            dst.forward_2d(&mut x);
            for ky in 0..n {
                for kx in 0..n {
                    let mu = grid.eigenvalue(kx + 1, ky + 1);
                    x[kx + n * ky] /= 1.0 + lambda * (rot * mu + gr + sigma);
                }
            }
            dst.inverse_2d(&mut x);
            x
        }
    }
}

/// Diagnostics of an ε-continuation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContinuationReport {
    pub epsilons: Vec<f64>,
    pub truncations: Vec<f64>,
    pub iterations: Vec<usize>,
    pub residuals: Vec<f64>,
    pub sup_norms: Vec<f64>,
    pub l2_norms: Vec<f64>,
    /// `‖u_k - u_{k+1}‖₂`.
    pub diffs: Vec<f64>,
}

impl ContinuationReport {
    /// Successive ratios `diffs[k+1] / diffs[k]`.
    pub fn ratios(&self) -> Vec<f64> {
        self.diffs.windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.diffs.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationOutcome {
    pub u: Field,
    /// `g_{ε_last}^0(u)` when `m = 0`.
    pub section: Option<Field>,
    pub report: ContinuationReport,
}

#[derive(Debug, thiserror::Error)]
#[error("continuation aborted at epsilon = {epsilon:e}: {source}")]
pub struct ContinuationError {
    pub epsilon: f64,
    pub report: ContinuationReport,
    #[source]
    pub source: Error,
}

/// Solves `(I + A_{ε_k}) u_k = F` along a decreasing schedule, warm-starting
/// each solve from the previous one. The truncation level follows
/// `M_k = 1/ε_k` unless `fixed_truncation` is given.
pub fn epsilon_continuation(
    f: &Field,
    spec: &OperatorSpec,
    schedule: &[f64],
    fixed_truncation: Option<f64>,
    opts: &SolverOptions,
) -> std::result::Result<ContinuationOutcome, Box<ContinuationError>> {
    let fail = |epsilon: f64, report: &ContinuationReport, source: Error| {
        Box::new(ContinuationError { epsilon, report: report.clone(), source })
    };
    let mut report = ContinuationReport::default();
    if spec.params.m == 1.0 {
        let r = resolvent(f, 1.0, spec, opts).map_err(|e| fail(spec.kernel.epsilon, &report, e))?;
        record(&mut report, spec.kernel, &r, None);
        return Ok(ContinuationOutcome { u: r.u, section: None, report });
    }
    if schedule.is_empty() {
        return Err(fail(f64::NAN, &report, Error::invalid("empty epsilon schedule")));
    }
    for w in schedule.windows(2) {
        if !(w[1] < w[0]) {
            return Err(fail(w[1], &report, Error::invalid("epsilon schedule must strictly decrease")));
        }
    }
    let mut current: Option<Field> = None;
    for &eps in schedule {
        let kernel = match fixed_truncation {
            Some(m) => KernelParams::new(eps, m),
            None => KernelParams::coupled(eps),
        }
        .and_then(|k| spec.with_kernel(k))
        .map_err(|e| fail(eps, &report, e))?;
        let guess = current.as_ref().unwrap_or(f);
        let r = resolvent_from(f, 1.0, &kernel, opts, guess).map_err(|e| fail(eps, &report, e))?;
        record(&mut report, kernel.kernel, &r, current.as_ref());
        current = Some(r.u);
    }
    let u = current.expect("schedule is non-empty");
    let section = (spec.params.m == 0.0).then(|| {
        let eps = *schedule.last().expect("schedule is non-empty");
        u.map(|z| z * g_factor(z.norm_sqr(), 0.0, eps))
    });
    Ok(ContinuationOutcome { u, section, report })
}

fn record(report: &mut ContinuationReport, kernel: KernelParams, r: &ResolventResult, prev: Option<&Field>) {
    report.epsilons.push(kernel.epsilon);
    report.truncations.push(kernel.truncation);
    report.iterations.push(r.iterations);
    report.residuals.push(r.residual);
    report.sup_norms.push(norm_inf(&r.u));
    report.l2_norms.push(norm2(&r.u));
    if let Some(p) = prev {
        report.diffs.push(norm2(&r.u.sub(p)));
    }
}

/// Sector defect `(1-m) Re I_h - 2√m |Im I_h|` with
/// `I_h = ⟨-Δ_h u, g_ε^m(u)⟩`.
///
/// On the grid `I_h` splits by summation by parts into edge terms
/// `(u_j - u_{j-1}) conj(g(u_j) - g(u_{j-1}))`, each of which satisfies the
/// pointwise sector bound, so the discrete defect is nonnegative up to
/// rounding.
pub fn accretivity_probe(u: &Field, spec: &OperatorSpec) -> Result<f64> {
    spec.check_field(u)?;
    let m = spec.params.m;
    let eps = spec.kernel.epsilon;
    let gu = u.map(|z| z * g_factor(z.norm_sqr(), m, eps));
    let neg_lap = laplacian(u).scale(Complex64::new(-1.0, 0.0));
    let ih = inner_unchecked(&neg_lap, &gu);
    Ok(sector_defect(ih, m))
}

/// The same defect with `I = ∫ ∇u · conj(∇ g(u))` evaluated by the
/// trapezoidal rule on the closed box (boundary nodes included) from
/// closed-form `u` and `∇u`, using the chain rule `∂_k g(u) = Dg(u) ∂_k u`.
pub fn accretivity_probe_analytic(
    grid: Grid,
    spec: &OperatorSpec,
    u: impl Fn(f64, f64) -> Complex64,
    grad: impl Fn(f64, f64) -> [Complex64; 2],
) -> Result<f64> {
    let m = spec.params.m;
    let eps = spec.kernel.epsilon;
    let side = grid.n + 2;
    let (count, k) = if grid.dim == 1 { (side, 1) } else { (side * side, 2) };
    let weight = |i: usize| if i == 0 || i == side - 1 { 0.5 } else { 1.0 };
    let terms: Vec<Complex64> = (0..count)
        .map(|idx| {
            let (i, j) = (idx % side, idx / side);
            let x = i as f64 * grid.h;
            let y = j as f64 * grid.h;
            let w = if grid.dim == 1 { weight(i) } else { weight(i) * weight(j) };
            let z = u(x, y);
            let dz = grad(x, y);
            let jg = kernels::g_jacobian(z, m, eps)?;
            let s: Complex64 = dz[..k].iter().map(|d| d * jg.apply(*d).conj()).sum();
            Ok(s * w)
        })
        .collect::<Result<_>>()?;
    let s: Complex64 = grid::pairwise(terms.len(), &|i| terms[i]);
    Ok(sector_defect(s * grid.cell(), m))
}

fn sector_defect(i: Complex64, m: f64) -> f64 {
    (1.0 - m) * i.re - 2.0 * m.sqrt() * i.im.abs()
}
