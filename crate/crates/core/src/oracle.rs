//! Reference solutions that share no code path with the Newton solver:
//! closed-form linear modes, an explicit RK4 integrator for the single-node
//! equation, and root searches for the single-node resolvent.

use num_complex::Complex64;

use crate::grid::Field;
use crate::kernels::{g_factor, h_factor, KernelParams};
use crate::operator::OperatorSpec;
use crate::params::ModelParams;
use crate::{Error, Result};

/// Below this modulus the unregularised singular right side is treated as
/// non-smooth and the RK4 reference refuses to continue.
pub const NEAR_ZERO: f64 = 1e-3;

/// `amplitude · exp(-λ_k t) · sin-mode` with `λ_k = e^{iθ}(μ_k + a + γ)`,
/// the exact solution of the semidiscrete linear problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalSolution {
    pub kx: usize,
    pub ky: usize,
    pub lambda_k: Complex64,
    pub amplitude: Complex64,
}

impl ModalSolution {
    pub fn new(kx: usize, ky: usize, amplitude: Complex64, spec: &OperatorSpec) -> Result<Self> {
        let p = &spec.params;
        if p.m != 1.0 || p.b != Complex64::new(0.0, 0.0) {
            return Err(Error::InvalidState("modal solutions need m = 1 and b = 0".into()));
        }
        let n = spec.grid.n;
        if kx == 0 || kx > n || (spec.grid.dim == 2 && (ky == 0 || ky > n)) {
            return Err(Error::invalid(format!("mode ({kx}, {ky}) not resolved on n = {n}")));
        }
        let mu = spec.grid.eigenvalue(kx, ky);
        Ok(ModalSolution { kx, ky, lambda_k: p.rotation() * (mu + p.a + p.gamma), amplitude })
    }

    fn field(&self, spec: &OperatorSpec, coeff: Complex64) -> Field {
        Field::mode(spec.grid, self.kx, self.ky, self.amplitude * coeff)
    }

    /// Backward-Euler iterate after `steps` steps of size `tau`:
    /// amplitude divided by `(1 + τ λ_k)^steps`.
    pub fn backward_euler(&self, steps: usize, tau: f64, spec: &OperatorSpec) -> Field {
        let d = (1.0 + tau * self.lambda_k).powi(-(steps as i32));
        self.field(spec, d)
    }
}

pub fn modal_exact(t: f64, mode: &ModalSolution, spec: &OperatorSpec) -> Result<Field> {
    let p = &spec.params;
    if p.m != 1.0 || p.b != Complex64::new(0.0, 0.0) {
        return Err(Error::InvalidState("modal solutions need m = 1 and b = 0".into()));
    }
    Ok(mode.field(spec, (-mode.lambda_k * t).exp()))
}

/// Right side of the single-node equation
/// `z' = -e^{iθ}(a g(z) + b h(z) + γ z) + e^{iθ} f`.
fn node_rhs(z: Complex64, params: &ModelParams, kernel: &KernelParams, f: Complex64) -> Complex64 {
    let rot = params.rotation();
    let r2 = z.norm_sqr();
    let mut w = params.a * g_factor(r2, params.m, kernel.epsilon) + params.gamma;
    if params.b != Complex64::new(0.0, 0.0) {
        w += params.b * h_factor(r2.sqrt(), params.p, kernel.truncation);
    }
    rot * (f - w * z)
}

/// Classical RK4 for the single-node equation with constant forcing `f`.
pub fn scalar_ode_reference(
    z0: Complex64,
    params: &ModelParams,
    kernel: &KernelParams,
    f: Complex64,
    t_end: f64,
    fine_dt: f64,
) -> Result<Complex64> {
    if !(fine_dt > 0.0 && t_end >= 0.0) {
        return Err(Error::invalid("need fine_dt > 0 and t_end ≥ 0"));
    }
    let singular = params.m < 1.0 && kernel.epsilon == 0.0;
    let steps = (t_end / fine_dt).ceil() as usize;
    let dt = if steps == 0 { 0.0 } else { t_end / steps as f64 };
    let rhs = |z: Complex64| node_rhs(z, params, kernel, f);
    let mut z = z0;
    for _ in 0..steps {
        if singular && z.norm() < NEAR_ZERO {
            return Err(Error::InvalidState(format!(
                "single-node reference left its smooth regime: |z| = {:.3e} < {NEAR_ZERO:e}",
                z.norm()
            )));
        }
        let k1 = rhs(z);
        let k2 = rhs(z + 0.5 * dt * k1);
        let k3 = rhs(z + 0.5 * dt * k2);
        let k4 = rhs(z + dt * k3);
        z += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(z)
}

/// `c(r) = 1 + λ e^{iθ}(a G(r) + b H(r) + γ)`, so that a node value
/// `z = r e^{iφ}` satisfies `z + λ e^{iθ}(a g + b h + γ z) = z c(r)`.
fn radial_multiplier(r: f64, lambda: f64, params: &ModelParams, kernel: &KernelParams) -> Complex64 {
    let mut w = params.a * g_factor(r * r, params.m, kernel.epsilon) + params.gamma;
    if params.b != Complex64::new(0.0, 0.0) {
        w += params.b * h_factor(r, params.p, kernel.truncation);
    }
    1.0 + lambda * params.rotation() * w
}

/// Single-node resolvent `z + λ e^{iθ}(a g(z) + b h(z) + γ z) = F`.
///
/// Because every term is `z` times a function of `|z|`, the equation
/// reduces to `r |c(r)| = |F|` for the modulus and `arg z = arg F - arg c(r)`.
/// The modulus equation has a single root (the node map is strongly
/// monotone); it is bracketed by 2001 samples on `[0, 2(|F| + 1)]` and
/// refined by 60 bisections.
pub fn brute_resolvent_1node(f: Complex64, lambda: f64, params: &ModelParams, kernel: &KernelParams) -> Complex64 {
    let target = f.norm();
    if target == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let psi = |r: f64| r * radial_multiplier(r, lambda, params, kernel).norm() - target;
    let hi = 2.0 * (target + 1.0);
    const SAMPLES: usize = 2001;
    let mut lo_r = 0.0;
    let mut hi_r = hi;
    let mut prev = psi(0.0);
    for i in 1..SAMPLES {
        let r = hi * i as f64 / (SAMPLES - 1) as f64;
        let v = psi(r);
        if prev < 0.0 && v >= 0.0 {
            lo_r = hi * (i - 1) as f64 / (SAMPLES - 1) as f64;
            hi_r = r;
            break;
        }
        prev = v;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo_r + hi_r);
        if psi(mid) < 0.0 {
            lo_r = mid;
        } else {
            hi_r = mid;
        }
    }
    let r = 0.5 * (lo_r + hi_r);
    let c = radial_multiplier(r, lambda, params, kernel);
    Complex64::from_polar(r, f.arg() - c.arg())
}

/// Planar search for the same root: minimise `|Φ(z) - F|` over a
/// `samples × samples` grid on the square of half-width `2(|F| + 1)`, then
/// repeatedly re-grid a window of four cells around the best point.
/// Slow; used to validate [`brute_resolvent_1node`] on small batches.
pub fn grid_search_resolvent_1node(
    f: Complex64,
    lambda: f64,
    params: &ModelParams,
    kernel: &KernelParams,
    samples: usize,
    zooms: usize,
) -> Complex64 {
    let phi = |z: Complex64| z * radial_multiplier(z.norm(), lambda, params, kernel);
    let mut centre = Complex64::new(0.0, 0.0);
    let mut half = 2.0 * (f.norm() + 1.0);
    let samples = samples.max(3);
    for _ in 0..=zooms {
        let step = 2.0 * half / (samples - 1) as f64;
        let mut best = (f64::INFINITY, centre);
        for i in 0..samples {
            for j in 0..samples {
                let z = centre + Complex64::new(-half + step * i as f64, -half + step * j as f64);
                let e = (phi(z) - f).norm();
                if e < best.0 {
                    best = (e, z);
                }
            }
        }
        centre = best.1;
        half = 2.0 * step;
    }
    centre
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{norm2, Grid};
    use crate::operator::{resolvent, SolverOptions};
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn linear_params(theta: f64) -> ModelParams {
        ModelParams { theta, m: 1.0, p: 2.0, a: c(0.7, -0.2), b: c(0.0, 0.0), gamma: c(0.1, 0.1) }
    }

    #[test]
    fn modal_initial_value_and_decay() {
        let grid = Grid::line(31, 1.0).unwrap();
        let spec = OperatorSpec::new(linear_params(0.3), KernelParams::new(0.0, 1.0).unwrap(), grid).unwrap();
        let mode = ModalSolution::new(2, 0, c(1.0, 1.0), &spec).unwrap();
        assert!(mode.lambda_k.re > 0.0);
        let u0 = modal_exact(0.0, &mode, &spec).unwrap();
        assert_eq!(u0, Field::mode(grid, 2, 0, c(1.0, 1.0)));
        let t = 0.37;
        let ut = modal_exact(t, &mode, &spec).unwrap();
        let expected = norm2(&u0) * (-mode.lambda_k.re * t).exp();
        assert!((norm2(&ut) - expected).abs() < 1e-13 * expected.max(1e-300));
    }

    #[test]
    fn modal_rejects_nonlinear_models() {
        let grid = Grid::line(8, 1.0).unwrap();
        let mut p = linear_params(0.0);
        p.m = 0.5;
        p.a = c(1.0, 0.0);
        let spec = OperatorSpec::new(p, KernelParams::new(1e-6, 1.0).unwrap(), grid).unwrap();
        assert!(ModalSolution::new(1, 0, c(1.0, 0.0), &spec).is_err());
    }

    #[test]
    fn backward_euler_error_halves_with_tau() {
        let grid = Grid::line(15, 1.0).unwrap();
        let spec = OperatorSpec::new(linear_params(-0.5), KernelParams::new(0.0, 1.0).unwrap(), grid).unwrap();
        let mode = ModalSolution::new(1, 0, c(1.0, 0.0), &spec).unwrap();
        let exact = modal_exact(1.0, &mode, &spec).unwrap();
        let err = |steps: usize| norm2(&mode.backward_euler(steps, 1.0 / steps as f64, &spec).sub(&exact));
        let ratio = err(200) / err(400);
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn rk4_linear_closed_form() {
        let p = linear_params(0.8);
        let k = KernelParams::new(0.0, 1.0).unwrap();
        let z0 = c(1.0, -2.0);
        let z = scalar_ode_reference(z0, &p, &k, c(0.0, 0.0), 1.5, 1e-3).unwrap();
        let exact = z0 * (-p.rotation() * (p.a + p.gamma) * 1.5).exp();
        assert!((z - exact).norm() < 1e-12);
    }

    #[test]
    fn rk4_heat_reduction_is_real_decay() {
        let p = ModelParams { theta: 0.0, m: 1.0, p: 2.0, a: c(2.0, 0.0), b: c(0.0, 0.0), gamma: c(0.0, 0.0) };
        let k = KernelParams::new(0.0, 1.0).unwrap();
        let z = scalar_ode_reference(c(3.0, 0.0), &p, &k, c(0.0, 0.0), 1.0, 1e-3).unwrap();
        assert_eq!(z.im, 0.0);
        assert!((z.re - 3.0 * (-2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rk4_refuses_to_cross_the_singularity() {
        let p = ModelParams { theta: 0.0, m: 0.5, p: 2.0, a: c(1.0, 0.0), b: c(0.0, 0.0), gamma: c(0.0, 0.0) };
        let k = KernelParams::new(0.0, 1.0).unwrap();
        // |z|^{1/2} decay reaches zero in finite time t = 2√|z0|.
        assert!(scalar_ode_reference(c(0.01, 0.0), &p, &k, c(0.0, 0.0), 1.0, 1e-4).is_err());
    }

    #[test]
    fn backward_euler_single_node_is_first_order() {
        let p = ModelParams {
            theta: 0.3,
            m: 0.5,
            p: 3.0,
            a: Complex64::from_polar(1.0, -0.3),
            b: Complex64::from_polar(0.2, -0.3),
            gamma: c(0.0, 0.0),
        };
        let k = KernelParams::new(1e-8, 1e8).unwrap();
        let z0 = c(1.0, 1.0);
        let f = c(0.2, 0.0);
        let t_end = 0.5;
        let reference = scalar_ode_reference(z0, &p, &k, f, t_end, 1e-5).unwrap();
        let be = |steps: usize| {
            let tau = t_end / steps as f64;
            let mut z = z0;
            for _ in 0..steps {
                z = brute_resolvent_1node(z + tau * p.rotation() * f, tau, &p, &k);
            }
            (z - reference).norm()
        };
        let ratio = be(100) / be(200);
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn node_resolvent_trivial_and_linear() {
        let p = linear_params(0.4);
        let k = KernelParams::new(0.0, 1.0).unwrap();
        assert_eq!(brute_resolvent_1node(c(0.0, 0.0), 1.0, &p, &k), c(0.0, 0.0));
        let f = c(2.0, -1.0);
        let z = brute_resolvent_1node(f, 0.5, &p, &k);
        let exact = f / (1.0 + 0.5 * p.rotation() * (p.a + p.gamma));
        assert!((z - exact).norm() < 1e-13);
    }

    #[test]
    fn radial_and_planar_searches_agree() {
        let mut rng = Rng::new(31);
        let p = ModelParams {
            theta: -0.4,
            m: 0.5,
            p: 2.5,
            a: Complex64::from_polar(1.0, 0.4 + 0.2),
            b: Complex64::from_polar(0.7, 0.4),
            gamma: c(0.0, 0.0),
        };
        let k = KernelParams::new(1e-8, 2.0).unwrap();
        for _ in 0..5 {
            let f = rng.complex_in_box(3.0);
            let lambda = rng.uniform_in(0.1, 3.0);
            let radial = brute_resolvent_1node(f, lambda, &p, &k);
            let planar = grid_search_resolvent_1node(f, lambda, &p, &k, 101, 12);
            assert!((radial - planar).norm() < 1e-9, "{radial} vs {planar}");
        }
    }

    #[test]
    fn node_resolvent_matches_newton() {
        let mut rng = Rng::new(32);
        let grid = Grid::line(1, 1.0).unwrap();
        let p = ModelParams {
            theta: 0.2,
            m: 0.5,
            p: 3.0,
            a: Complex64::from_polar(1.3, -0.2 + 0.5),
            b: Complex64::from_polar(0.4, -0.2 - 0.1),
            gamma: c(0.0, 0.0),
        };
        let k = KernelParams::new(1e-8, 5.0).unwrap();
        // One interior node: the Laplacian contributes 2/h² to the diagonal,
        // absorbed into γ for the single-node oracle.
        let two_over_h2 = 2.0 / (grid.h * grid.h);
        let spec = OperatorSpec::new(p, k, grid).unwrap();
        let node = ModelParams { gamma: p.gamma + two_over_h2, ..p };
        let opts = SolverOptions { tol: 1e-13, ..Default::default() };
        for _ in 0..20 {
            let f = rng.complex_in_box(2.0);
            let lambda = rng.uniform_in(0.01, 10.0);
            let newton = resolvent(&Field::new(grid, vec![f]).unwrap(), lambda, &spec, &opts).unwrap().u.values[0];
            let oracle = brute_resolvent_1node(f, lambda, &node, &k);
            assert!((newton - oracle).norm() < 1e-9, "{newton} vs {oracle}");
        }
    }
}
