//! Model coefficients and the admissible cones.
//!
//! For an angle `θ` and an exponent `q ≥ 0` the cone is
//!
//! ```text
//! C_θ(q) = { z : Re(z e^{iθ}) > 0  and  2√q Re(z e^{iθ}) ≥ |1-q| |Im(z e^{iθ})| }
//! ```
//!
//! `C_θ(1)` is the open half plane `Re(z e^{iθ}) > 0` and `C_θ(0)` is the ray
//! `{ μ e^{-iθ} : μ > 0 }`. The rotated coefficient `z e^{iθ}` is never exactly
//! real in floating point when `z` was built as `μ e^{-iθ}`, so the
//! non-strict sector test carries a relative slack of a few ulps of `|z|`.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::{Error, Result};

/// A complex model coefficient (`a`, `b` or `γ`).
pub type ComplexCoeff = Complex64;

/// Relative rounding allowance on the non-strict cone inequalities.
pub const CONE_ROUNDING_SLACK: f64 = 8.0 * f64::EPSILON;

/// Coefficients `(θ, m, p, a, b, γ)` of the equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub theta: f64,
    pub m: f64,
    pub p: f64,
    pub a: ComplexCoeff,
    pub b: ComplexCoeff,
    pub gamma: ComplexCoeff,
}

impl ModelParams {
    /// `e^{iθ}`.
    pub fn rotation(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.theta)
    }

    pub fn a_rot(&self) -> Complex64 {
        self.a * self.rotation()
    }

    pub fn b_rot(&self) -> Complex64 {
        self.b * self.rotation()
    }

    pub fn gamma_rot(&self) -> Complex64 {
        self.gamma * self.rotation()
    }

    /// True for the linear problem `m = 1`, `b = 0`.
    pub fn is_linear(&self) -> bool {
        self.m == 1.0 && self.b == Complex64::new(0.0, 0.0)
    }
}

/// One failed condition of the admissibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub reason: String,
    pub margin: f64,
}

/// Outcome of [`validate`]. `ok` holds exactly when `violations` is empty;
/// `margins` lists every checked condition, passed or not.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub margins: Vec<(&'static str, f64)>,
}

impl AdmissibilityReport {
    pub fn margin(&self, field: &str) -> Option<f64> {
        self.margins.iter().find(|(f, _)| *f == field).map(|(_, m)| *m)
    }
}

impl std::fmt::Display for AdmissibilityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "admissible: {}", if self.ok { "yes" } else { "no" })?;
        for (field, margin) in &self.margins {
            writeln!(f, "  {field:<6} margin={margin:.6e}")?;
        }
        for v in &self.violations {
            writeln!(f, "  VIOLATION {}: {} (margin={:.6e})", v.field, v.reason, v.margin)?;
        }
        Ok(())
    }
}

/// Signed distance-like margin of `z` with respect to `C_θ(q)`:
/// `min(Re w, 2√q Re w - |1-q| |Im w|)` with `w = z e^{iθ}`. The point is in
/// the cone iff the first entry is `> 0` and the second `≥ 0`.
pub fn cone_margin(z: ComplexCoeff, theta: f64, q: f64) -> (f64, f64) {
    let w = z * Complex64::from_polar(1.0, theta);
    let sector = 2.0 * q.sqrt() * w.re - (1.0 - q).abs() * w.im.abs();
    (w.re, sector)
}

/// Membership of `z` in `C_θ(q)`.
pub fn in_cone(z: ComplexCoeff, theta: f64, q: f64) -> Result<bool> {
    if !(z.re.is_finite() && z.im.is_finite() && theta.is_finite() && q.is_finite()) {
        return Err(Error::invalid("in_cone: non-finite input"));
    }
    if q < 0.0 {
        return Err(Error::invalid(format!("in_cone: exponent {q} < 0")));
    }
    let (re, sector) = cone_margin(z, theta, q);
    Ok(re > 0.0 && sector >= -CONE_ROUNDING_SLACK * z.norm())
}

fn finite(z: Complex64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Checks the standing assumptions in order: the angle, the exponents, the
/// cone conditions on `a` and `b`, and the sign condition on `γ`.
pub fn validate(params: &ModelParams) -> AdmissibilityReport {
    let mut violations = Vec::new();
    let mut margins = Vec::new();
    let mut record = |field: &'static str, ok: bool, margin: f64, reason: String| {
        margins.push((field, margin));
        if !ok {
            violations.push(Violation { field, reason, margin });
        }
    };

    let theta = params.theta;
    let theta_margin = FRAC_PI_2 - theta.abs();
    record(
        "theta",
        theta.is_finite() && theta_margin > 0.0,
        theta_margin,
        format!("θ = {theta} must lie in the open interval (-π/2, π/2)"),
    );

    let m = params.m;
    let m_margin = m.min(1.0 - m);
    record(
        "m",
        m.is_finite() && m_margin >= 0.0,
        m_margin,
        format!("m = {m} must lie in [0, 1]"),
    );

    let p = params.p;
    record(
        "p",
        p.is_finite() && p > 1.0,
        p - 1.0,
        format!("p = {p} must lie in (1, ∞)"),
    );

    // Cone tests only make sense once the exponents are in range.
    let exps_ok = m.is_finite() && (0.0..=1.0).contains(&m) && theta.is_finite();
    if !finite(params.a) {
        record("a", false, f64::NAN, "a is not finite".into());
    } else if exps_ok {
        let (re, sector) = cone_margin(params.a, theta, m);
        let ok = in_cone(params.a, theta, m).unwrap_or(false);
        let margin = if re > 0.0 { sector } else { re };
        record(
            "a",
            ok,
            margin,
            format!("a = {} is not in C_θ({m}): Re(a e^{{iθ}}) = {re:.6e}, 2√m Re - |1-m| |Im| = {sector:.6e}", params.a),
        );
    }

    if !finite(params.b) {
        record("b", false, f64::NAN, "b is not finite".into());
    } else if params.b == Complex64::new(0.0, 0.0) {
        record("b", true, 0.0, String::new());
    } else if p.is_finite() && p > 1.0 && theta.is_finite() {
        let (re, sector) = cone_margin(params.b, theta, p);
        let ok = in_cone(params.b, theta, p).unwrap_or(false);
        let margin = if re > 0.0 { sector } else { re };
        record(
            "b",
            ok,
            margin,
            format!("b = {} is neither 0 nor in C_θ({p}): Re(b e^{{iθ}}) = {re:.6e}, 2√p Re - |1-p| |Im| = {sector:.6e}", params.b),
        );
    }

    if !finite(params.gamma) {
        record("gamma", false, f64::NAN, "γ is not finite".into());
    } else if theta.is_finite() {
        let g = params.gamma_rot().re;
        record(
            "gamma",
            g >= -CONE_ROUNDING_SLACK * params.gamma.norm(),
            g,
            format!("Re(γ e^{{iθ}}) = {g:.6e} < 0"),
        );
    }

    AdmissibilityReport {
        ok: violations.is_empty(),
        violations,
        margins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn base() -> ModelParams {
        ModelParams {
            theta: 0.3,
            m: 0.5,
            p: 3.0,
            a: Complex64::from_polar(1.0, -0.3),
            b: Complex64::from_polar(0.5, -0.3),
            gamma: c(0.0, 0.0),
        }
    }

    #[test]
    fn cone_examples() {
        assert!(in_cone(Complex64::from_polar(2.0, -0.7), 0.7, 0.0).unwrap());
        assert!(in_cone(c(1.0, 5.0), 0.0, 1.0).unwrap());
        // 2·(1/2)·1 = 1 < (3/4)·2 = 1.5
        assert!(!in_cone(c(1.0, 2.0), 0.0, 0.25).unwrap());
        assert!(!in_cone(c(-1.0, 0.0), 0.0, 0.5).unwrap());
    }

    #[test]
    fn cone_rejects_non_finite() {
        assert!(in_cone(c(f64::NAN, 0.0), 0.0, 0.5).is_err());
        assert!(in_cone(c(1.0, 0.0), f64::INFINITY, 0.5).is_err());
        assert!(in_cone(c(1.0, 0.0), 0.0, -0.1).is_err());
    }

    #[test]
    fn cone_boundary_is_accepted() {
        // 2√m Re = |1-m| |Im| exactly: m = 1/4, Re = 3, Im = 4.
        assert!(in_cone(c(3.0, 4.0), 0.0, 0.25).unwrap());
    }

    #[test]
    fn theta_at_right_angle_is_rejected() {
        let mut p = base();
        p.theta = FRAC_PI_2;
        let report = validate(&p);
        assert!(!report.ok);
        assert_eq!(report.violations[0].field, "theta");
    }

    #[test]
    fn zero_b_is_admissible() {
        let mut p = base();
        p.b = c(0.0, 0.0);
        assert!(validate(&p).ok);
    }

    #[test]
    fn gamma_on_boundary_has_zero_margin() {
        let mut p = base();
        p.gamma = c(0.0, 1.0) * Complex64::from_polar(1.0, -p.theta);
        let report = validate(&p);
        assert!(report.ok, "{report}");
        assert!(report.margin("gamma").unwrap().abs() < 1e-15);
    }

    #[test]
    fn report_lists_every_failure() {
        let p = ModelParams {
            theta: 2.0,
            m: 1.5,
            p: 0.5,
            a: c(-1.0, 0.0),
            b: c(1.0, 0.0),
            // Re(e^{2i}) = cos 2 < 0
            gamma: c(1.0, 0.0),
        };
        let report = validate(&p);
        let fields: Vec<_> = report.violations.iter().map(|v| v.field).collect();
        assert_eq!(fields, ["theta", "m", "p", "gamma"]);
        assert_eq!(report.ok, report.violations.is_empty());
    }

    #[test]
    fn margin_matches_sector_formula() {
        let p = base();
        let w = p.a_rot();
        let expected = 2.0 * p.m.sqrt() * w.re - (1.0 - p.m).abs() * w.im.abs();
        assert!((validate(&p).margin("a").unwrap() - expected).abs() < 1e-15);
    }

    /// Literal evaluation of the cone definition, kept apart from `in_cone`.
    fn literal(z: Complex64, theta: f64, q: f64) -> bool {
        let w = z * c(theta.cos(), theta.sin());
        w.re > 0.0 && 2.0 * q.sqrt() * w.re >= (1.0 - q).abs() * w.im.abs()
    }

    #[test]
    fn agrees_with_literal_definition() {
        let mut rng = Rng::new(2024);
        for _ in 0..100_000 {
            let z = rng.complex_in_box(3.0);
            let theta = rng.uniform_in(-FRAC_PI_2, FRAC_PI_2);
            let q = rng.uniform_in(0.0, 4.0);
            assert_eq!(in_cone(z, theta, q).unwrap(), literal(z, theta, q), "{z} {theta} {q}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn half_plane_at_q_one(re in -5.0..5.0f64, im in -5.0..5.0f64, theta in -1.5..1.5f64) {
                let z = c(re, im);
                prop_assert_eq!(in_cone(z, theta, 1.0).unwrap(), (z * c(theta.cos(), theta.sin())).re > 0.0);
            }

            #[test]
            fn ray_at_q_zero(mu in 1e-6..1e6f64, theta in -1.5..1.5f64) {
                prop_assert!(in_cone(Complex64::from_polar(mu, -theta), theta, 0.0).unwrap());
            }

            #[test]
            fn off_ray_rejected_at_q_zero(mu in 1e-3..1e3f64, theta in -1.5..1.5f64, tilt in 1e-6..3.0f64, sign in prop::bool::ANY) {
                let tilt = if sign { tilt } else { -tilt };
                prop_assert!(!in_cone(Complex64::from_polar(mu, -theta + tilt), theta, 0.0).unwrap());
            }

            #[test]
            fn positive_scaling_invariant(re in -5.0..5.0f64, im in -5.0..5.0f64, theta in -1.5..1.5f64,
                                          q in 0.0..3.0f64, lambda in 1e-3..1e3f64) {
                let z = c(re, im);
                prop_assert_eq!(in_cone(z, theta, q).unwrap(), in_cone(z * lambda, theta, q).unwrap());
            }
        }
    }
}
