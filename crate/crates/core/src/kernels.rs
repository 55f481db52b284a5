//! Pointwise nonlinearities of the damping and absorption terms.
//!
//! ```text
//! g_ε^m(z) = (|z|² + ε)^{-(1-m)/2} z                     regularised damping
//! h_M^p(z) = |z|^{p-1} z   if |z| < M,   M^{p-1} z otherwise   truncated absorption
//! ```
//!
//! Both maps are radial (`K(z) = k(|z|) z`), so their real 2×2 Jacobians are
//! `k I + k'(r)/r · z zᵀ`. The defect functions return the quantities whose
//! sign monotonicity requires; they are the building blocks of the
//! operator-level certificates.

use num_complex::Complex64;

use crate::{Error, Result};

/// Smallest positive regularisation accepted by the solvers.
pub const EPSILON_FLOOR: f64 = 1e-12;

/// Regularisation pair `(ε, M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub epsilon: f64,
    /// Truncation level `M` of the superlinear term.
    pub truncation: f64,
}

impl KernelParams {
    pub fn new(epsilon: f64, truncation: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon = {epsilon} must be finite and ≥ 0")));
        }
        if !(truncation > 0.0) {
            return Err(Error::invalid(format!("truncation M = {truncation} must be > 0")));
        }
        Ok(KernelParams { epsilon, truncation })
    }

    /// The coupled pair `(ε, 1/ε)`.
    pub fn coupled(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid("coupled truncation needs epsilon > 0"));
        }
        Self::new(epsilon, 1.0 / epsilon)
    }
}

/// Real linearisation of a map `C → C` seen as `R² → R²`:
/// `[[dre/dre, dre/dim], [dim/dre, dim/dim]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelJacobian {
    pub xx: f64,
    pub xy: f64,
    pub yx: f64,
    pub yy: f64,
}

impl KernelJacobian {
    pub const ZERO: KernelJacobian = KernelJacobian { xx: 0.0, xy: 0.0, yx: 0.0, yy: 0.0 };

    pub fn scalar(s: f64) -> Self {
        KernelJacobian { xx: s, xy: 0.0, yx: 0.0, yy: s }
    }

    /// Multiplication by a complex constant.
    pub fn complex(c: Complex64) -> Self {
        KernelJacobian { xx: c.re, xy: -c.im, yx: c.im, yy: c.re }
    }

    /// `s I + t z zᵀ`.
    fn radial(s: f64, t: f64, z: Complex64) -> Self {
        KernelJacobian {
            xx: s + t * z.re * z.re,
            xy: t * z.re * z.im,
            yx: t * z.im * z.re,
            yy: s + t * z.im * z.im,
        }
    }

    pub fn apply(&self, v: Complex64) -> Complex64 {
        Complex64::new(self.xx * v.re + self.xy * v.im, self.yx * v.re + self.yy * v.im)
    }

    /// Left-multiplication by a complex constant, `c · J`.
    pub fn scaled_by(&self, c: Complex64) -> Self {
        let k = Self::complex(c);
        k.compose(self)
    }

    /// `self · other`.
    pub fn compose(&self, o: &Self) -> Self {
        KernelJacobian {
            xx: self.xx * o.xx + self.xy * o.yx,
            xy: self.xx * o.xy + self.xy * o.yy,
            yx: self.yx * o.xx + self.yy * o.yx,
            yy: self.yx * o.xy + self.yy * o.yy,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        KernelJacobian {
            xx: self.xx + o.xx,
            xy: self.xy + o.xy,
            yx: self.yx + o.yx,
            yy: self.yy + o.yy,
        }
    }

    pub fn is_scalar_multiple_of_identity(&self, tol: f64) -> bool {
        (self.xx - self.yy).abs() <= tol && self.xy.abs() <= tol && self.yx.abs() <= tol
    }
}

/// Which branch of `h_M^p` a point falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Inner,
    Outer,
    /// `|z| = M` exactly: `h` is not differentiable there and the inner
    /// branch derivative is returned.
    Circle,
}

/// `g_ε^m(z)`.
pub fn g(z: Complex64, m: f64, epsilon: f64) -> Result<Complex64> {
    if m == 1.0 {
        return Ok(z);
    }
    let r2 = z.norm_sqr() + epsilon;
    if r2 == 0.0 {
        // z = 0 and ε = 0: continuous extension by 0 for m > 0.
        return if m > 0.0 { Ok(z) } else { Err(Error::MultivaluedAtZero) };
    }
    Ok(z * r2.powf(-0.5 * (1.0 - m)))
}

/// The scalar factor `(|z|² + ε)^{(m-1)/2}`, used when pairing with `conj(z)`.
pub(crate) fn g_factor(r2: f64, m: f64, epsilon: f64) -> f64 {
    if m == 1.0 {
        1.0
    } else {
        let s = r2 + epsilon;
        if s == 0.0 {
            0.0
        } else {
            s.powf(-0.5 * (1.0 - m))
        }
    }
}

/// `h_M^p(z)`.
pub fn h(z: Complex64, p: f64, truncation: f64) -> Complex64 {
    z * h_factor(z.norm(), p, truncation)
}

pub(crate) fn h_factor(r: f64, p: f64, truncation: f64) -> f64 {
    if r < truncation {
        r.powf(p - 1.0)
    } else {
        truncation.powf(p - 1.0)
    }
}

/// Saturated section of a field: `z/|z|` where `z ≠ 0` and `0` at zeros.
pub fn saturated_section(values: &[Complex64]) -> Vec<Complex64> {
    values
        .iter()
        .map(|&z| {
            let r = z.norm();
            if r > 0.0 {
                z / r
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// Jacobian of `g_ε^m` at `z`.
pub fn g_jacobian(z: Complex64, m: f64, epsilon: f64) -> Result<KernelJacobian> {
    if m == 1.0 {
        return Ok(KernelJacobian::scalar(1.0));
    }
    let s = z.norm_sqr() + epsilon;
    if s == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "g_0^{m} is not differentiable at z = 0"
        )));
    }
    let base = s.powf(-0.5 * (1.0 - m));
    let radial = (m - 1.0) * base / s;
    Ok(KernelJacobian::radial(base, radial, z))
}

/// Jacobian of `h_M^p` at `z` and the branch it was taken on.
pub fn h_jacobian(z: Complex64, p: f64, truncation: f64) -> (KernelJacobian, Branch) {
    let r = z.norm();
    let branch = if r < truncation {
        Branch::Inner
    } else if r > truncation {
        Branch::Outer
    } else {
        Branch::Circle
    };
    match branch {
        Branch::Outer => (KernelJacobian::scalar(truncation.powf(p - 1.0)), branch),
        _ if r == 0.0 => (KernelJacobian::ZERO, branch),
        _ => {
            let base = r.powf(p - 1.0);
            let radial = (p - 1.0) * base / (r * r);
            (KernelJacobian::radial(base, radial, z), branch)
        }
    }
}

/// `Re( a e^{iθ} (g(z1) - g(z2)) conj(z1 - z2) )`, nonnegative whenever
/// `a ∈ C_θ(m)`.
pub fn g_monotonicity_defect(
    z1: Complex64,
    z2: Complex64,
    m: f64,
    epsilon: f64,
    a: Complex64,
    theta: f64,
) -> Result<f64> {
    let w = a * Complex64::from_polar(1.0, theta);
    let pair = (g(z1, m, epsilon)? - g(z2, m, epsilon)?) * (z1 - z2).conj();
    Ok((w * pair).re)
}

/// `(p-1) Re Z - 2√p |Im Z|` with `Z = (h(z1) - h(z2)) conj(z1 - z2)`;
/// nonnegative for every pair.
pub fn h_sector_defect(z1: Complex64, z2: Complex64, p: f64, truncation: f64) -> f64 {
    let pair = (h(z1, p, truncation) - h(z2, p, truncation)) * (z1 - z2).conj();
    (p - 1.0) * pair.re - 2.0 * p.sqrt() * pair.im.abs()
}

/// Tolerance scale for the defects of a pair: `(1 + |z1| + |z2|)^{max(q,1)+1}`.
pub fn defect_scale(z1: Complex64, z2: Complex64, q: f64) -> f64 {
    (1.0 + z1.norm() + z2.norm()).powf(q.max(1.0) + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn g_examples() {
        let z = c(0.3, -1.7);
        assert_eq!(g(z, 1.0, 0.4).unwrap(), z);
        assert_eq!(g(c(0.0, 0.0), 0.5, 0.0).unwrap(), c(0.0, 0.0));
        assert!(close(g(c(3.0, 4.0), 0.0, 0.0).unwrap(), c(0.6, 0.8), 1e-15));
        assert!(close(g(c(1.0, 0.0), 0.0, 1.0).unwrap(), c(0.5f64.sqrt(), 0.0), 1e-15));
    }

    #[test]
    fn g_is_multivalued_at_zero_when_saturated() {
        assert!(matches!(g(c(0.0, 0.0), 0.0, 0.0), Err(Error::MultivaluedAtZero)));
        assert!(g(c(0.0, 0.0), 0.0, 1e-6).is_ok());
    }

    #[test]
    fn g_bounded_by_power_of_modulus() {
        let mut rng = Rng::new(3);
        for _ in 0..1000 {
            let z = rng.complex_in_box(4.0);
            let m = rng.uniform();
            assert!(g(z, m, 0.0).unwrap().norm() <= z.norm().powf(m) * (1.0 + 1e-14));
        }
    }

    #[test]
    fn h_examples() {
        assert!(close(h(c(2.0, 0.0), 3.0, 10.0), c(8.0, 0.0), 1e-14));
        assert!(close(h(c(3.0, 0.0), 3.0, 2.0), c(12.0, 0.0), 1e-14));
        // Both branches agree on the circle.
        let z = c(2.0, 0.0);
        let inner = z * z.norm().powf(1.0);
        let outer = z * 2.0f64.powf(1.0);
        assert!(close(h(z, 2.0, 2.0), c(4.0, 0.0), 1e-14));
        assert!(close(inner, outer, 1e-14));
    }

    #[test]
    fn h_is_globally_lipschitz_in_modulus() {
        let mut rng = Rng::new(4);
        for _ in 0..1000 {
            let z = rng.complex_in_box(5.0);
            let (p, big_m) = (rng.uniform_in(1.1, 5.0), rng.uniform_in(0.2, 4.0));
            assert!(h(z, p, big_m).norm() <= big_m.powf(p - 1.0) * z.norm() * (1.0 + 1e-14));
        }
    }

    #[test]
    fn saturated_section_examples() {
        let u = saturated_section(&[c(3.0, 4.0), c(0.0, 0.0)]);
        assert!(close(u[0], c(0.6, 0.8), 1e-15));
        assert_eq!(u[1], c(0.0, 0.0));
        let mut rng = Rng::new(5);
        let field: Vec<_> = (0..1000).map(|_| rng.complex_in_box(1e3)).collect();
        assert!(saturated_section(&field).iter().all(|v| v.norm() <= 1.0 + 1e-15));
    }

    #[test]
    fn jacobian_special_cases() {
        let j = g_jacobian(c(0.7, -0.2), 1.0, 0.0).unwrap();
        assert_eq!(j, KernelJacobian::scalar(1.0));
        let (jh, branch) = h_jacobian(c(3.0, 1.0), 3.0, 2.0);
        assert_eq!(branch, Branch::Outer);
        assert!(jh.is_scalar_multiple_of_identity(0.0));
        assert!((jh.xx - 4.0).abs() < 1e-14);
        let (_, circle) = h_jacobian(c(2.0, 0.0), 3.0, 2.0);
        assert_eq!(circle, Branch::Circle);
        assert!(g_jacobian(c(0.0, 0.0), 0.5, 0.0).is_err());
    }

    fn fd_jacobian(f: impl Fn(Complex64) -> Complex64, z: Complex64) -> KernelJacobian {
        let step = 1e-5 * (1.0 + z.norm());
        let dx = (f(z + c(step, 0.0)) - f(z - c(step, 0.0))) / (2.0 * step);
        let dy = (f(z + c(0.0, step)) - f(z - c(0.0, step))) / (2.0 * step);
        KernelJacobian { xx: dx.re, xy: dy.re, yx: dx.im, yy: dy.im }
    }

    fn rel_err(a: &KernelJacobian, b: &KernelJacobian) -> f64 {
        let d = [a.xx - b.xx, a.xy - b.xy, a.yx - b.yx, a.yy - b.yy];
        let n = [b.xx, b.xy, b.yx, b.yy];
        let dn = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        dn / nn.max(1e-300)
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = Rng::new(6);
        for _ in 0..2000 {
            let r = rng.uniform_in(0.05, 3.0);
            let z = rng.complex_with_modulus(r);
            let m = rng.uniform();
            let eps = rng.uniform_in(0.0, 0.5);
            let jg = g_jacobian(z, m, eps).unwrap();
            let fg = fd_jacobian(|w| g(w, m, eps).unwrap(), z);
            assert!(rel_err(&jg, &fg) < 1e-6, "g: z={z} m={m} eps={eps}");

            let p = rng.uniform_in(1.2, 5.0);
            let big_m = rng.uniform_in(0.1, 4.0);
            // Stay away from the non-differentiable circle.
            if (z.norm() - big_m).abs() < 1e-3 * (1.0 + z.norm()) {
                continue;
            }
            let (jh, _) = h_jacobian(z, p, big_m);
            let fh = fd_jacobian(|w| h(w, p, big_m), z);
            assert!(rel_err(&jh, &fh) < 1e-6, "h: z={z} p={p} M={big_m}");
        }
    }

    #[test]
    fn defect_examples() {
        let z = c(0.4, 1.1);
        assert_eq!(g_monotonicity_defect(z, z, 0.3, 0.1, c(1.0, 0.0), 0.2).unwrap(), 0.0);
        assert_eq!(h_sector_defect(z, z, 3.0, 2.0), 0.0);
        // Z = (1 - i) conj(1 - i) = 2.
        let d = g_monotonicity_defect(c(1.0, 0.0), c(0.0, 1.0), 0.0, 0.0, c(1.0, 0.0), 0.0).unwrap();
        assert!((d - 2.0).abs() < 1e-15);
        // Real pairs: Im Z = 0 and Re Z ≥ 0.
        let d = h_sector_defect(c(2.5, 0.0), c(-0.5, 0.0), 3.0, 1.0);
        let z = (h(c(2.5, 0.0), 3.0, 1.0) - h(c(-0.5, 0.0), 3.0, 1.0)) * 3.0;
        assert!((d - 2.0 * z.re).abs() < 1e-12 && d >= 0.0);
    }

    #[test]
    fn epsilon_consistency() {
        // |g_ε - g_0| ≤ ε^{1/2} |z|^{m-1} (1-m)/2 for z ≠ 0.
        let mut rng = Rng::new(8);
        for _ in 0..5000 {
            let r = rng.uniform_in(0.01, 5.0);
            let z = rng.complex_with_modulus(r);
            let m = rng.uniform();
            let eps = 10f64.powf(rng.uniform_in(-12.0, -1.0));
            let diff = (g(z, m, eps).unwrap() - g(z, m, 0.0).unwrap()).norm();
            let bound = eps.sqrt() * z.norm().powf(m - 1.0) * (1.0 - m) / 2.0;
            assert!(diff <= bound + 1e-14 * z.norm().powf(m), "z={z} m={m} eps={eps}");
        }
    }

    #[test]
    fn epsilon_limit_is_monotone_in_modulus() {
        let z = c(0.3, -0.4);
        let mut prev = 0.0;
        for k in 1..12 {
            let eps = 10f64.powi(-k);
            let mag = g(z, 0.25, eps).unwrap().norm();
            assert!(mag > prev);
            prev = mag;
        }
        assert!(prev <= g(z, 0.25, 0.0).unwrap().norm());
    }
}
