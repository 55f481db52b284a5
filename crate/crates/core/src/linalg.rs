//! Linear solvers for the resolvent: 2×2 block-tridiagonal elimination (1D),
//! a fast sine-transform Poisson-type solve (2D), and restarted GMRES in the
//! real inner product `Re Σ x conj(y)`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::pairwise;
use crate::kernels::KernelJacobian;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

fn inverse(b: &KernelJacobian) -> Option<KernelJacobian> {
    let det = b.xx * b.yy - b.xy * b.yx;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some(KernelJacobian { xx: b.yy / det, xy: -b.xy / det, yx: -b.yx / det, yy: b.xx / det })
}

/// Solves `off x_{j-1} + diag_j x_j + off x_{j+1} = rhs_j` with a constant
/// off-diagonal block. No pivoting: the systems we feed have positive
/// definite symmetric part, for which block elimination is well defined.
pub(crate) fn block_tridiagonal_solve(
    diag: &[KernelJacobian],
    off: &KernelJacobian,
    rhs: &[Complex64],
) -> Option<Vec<Complex64>> {
    let n = diag.len();
    let mut c_prime: Vec<KernelJacobian> = Vec::with_capacity(n);
    let mut d_prime: Vec<Complex64> = Vec::with_capacity(n);
    for j in 0..n {
        let (pivot, r) = if j == 0 {
            (diag[0], rhs[0])
        } else {
            let p = diag[j].add(&off.compose(&c_prime[j - 1]).scaled_by(Complex64::new(-1.0, 0.0)));
            (p, rhs[j] - off.apply(d_prime[j - 1]))
        };
        let inv = inverse(&pivot)?;
        c_prime.push(inv.compose(off));
        d_prime.push(inv.apply(r));
    }
    let mut x = vec![ZERO; n];
    for j in (0..n).rev() {
        x[j] = if j + 1 == n { d_prime[j] } else { d_prime[j] - c_prime[j].apply(x[j + 1]) };
    }
    if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Type-I discrete sine transform `S_k = Σ_{j=1}^{n} x_j sin(π j k/(n+1))`
/// through a complex FFT of the odd extension of length `2(n+1)`.
#[derive(Clone)]
pub(crate) struct Dst {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dst {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Dst({})", self.n)
    }
}

impl Dst {
    pub(crate) fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(2 * (n + 1));
        Dst { n, fft }
    }

    /// In-place forward transform of `data[offset + stride * j]`, `j < n`.
    fn transform(&self, data: &mut [Complex64], offset: usize, stride: usize, buf: &mut Vec<Complex64>) {
        let n = self.n;
        let len = 2 * (n + 1);
        buf.clear();
        buf.resize(len, ZERO);
        for j in 0..n {
            let v = data[offset + stride * j];
            buf[j + 1] = v;
            buf[len - 1 - j] = -v;
        }
        self.fft.process(buf);
        for k in 0..n {
            let y = buf[k + 1];
            // i Y / 2
            data[offset + stride * k] = Complex64::new(-0.5 * y.im, 0.5 * y.re);
        }
    }

    #[cfg(test)]
    pub(crate) fn forward(&self, x: &mut [Complex64]) {
        let mut buf = Vec::new();
        self.transform(x, 0, 1, &mut buf);
    }

    #[cfg(test)]
    pub(crate) fn inverse(&self, x: &mut [Complex64]) {
        self.forward(x);
        let s = 2.0 / (self.n + 1) as f64;
        for v in x.iter_mut() {
            *v *= s;
        }
    }

    /// Forward 2D transform of an `n × n` array (x fastest).
    pub(crate) fn forward_2d(&self, x: &mut [Complex64]) {
        let n = self.n;
        let mut buf = Vec::new();
        for row in 0..n {
            self.transform(x, row * n, 1, &mut buf);
        }
        for col in 0..n {
            self.transform(x, col, n, &mut buf);
        }
    }

    pub(crate) fn inverse_2d(&self, x: &mut [Complex64]) {
        self.forward_2d(x);
        let s = (2.0 / (self.n + 1) as f64).powi(2);
        for v in x.iter_mut() {
            *v *= s;
        }
    }
}

/// Real inner product of two complex vectors viewed in `R^{2n}`.
fn dot(a: &[Complex64], b: &[Complex64]) -> f64 {
    pairwise(a.len(), &|i| a[i].re * b[i].re + a[i].im * b[i].im)
}

fn norm(a: &[Complex64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GmresOptions {
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct GmresOutcome {
    pub x: Vec<Complex64>,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES for a real-linear operator on
/// `C^n ≅ R^{2n}`. `op(x)` applies the operator, `prec(r)` applies an
/// approximate inverse. Starts from zero.
pub(crate) fn gmres(
    op: &dyn Fn(&[Complex64]) -> Vec<Complex64>,
    prec: &dyn Fn(&[Complex64]) -> Vec<Complex64>,
    b: &[Complex64],
    opts: GmresOptions,
) -> GmresOutcome {
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![ZERO; n];
    if b_norm == 0.0 {
        return GmresOutcome { x, relative_residual: 0.0, converged: true };
    }
    let target = opts.rel_tol * b_norm;
    let m = opts.restart.max(1);
    let mut total = 0;
    let mut r = b.to_vec();
    let mut r_norm = b_norm;

    while total < opts.max_iter {
        let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / r_norm).collect());
        let mut hess = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = r_norm;
        let mut k_used = 0;
        let mut residual = r_norm;

        for k in 0..m {
            if total >= opts.max_iter {
                break;
            }
            total += 1;
            let z = prec(&basis[k]);
            let mut w = op(&z);
            // Modified Gram-Schmidt, done twice for orthogonality at tight tolerances.
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let hij = dot(&w, v);
                    hess[i][k] += hij;
                    for (wi, vi) in w.iter_mut().zip(v) {
                        *wi -= hij * vi;
                    }
                }
            }
            let h_next = norm(&w);
            hess[k + 1][k] = h_next;
            for i in 0..k {
                let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
                hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
                hess[i][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = hess[k][k] / denom;
            sn[k] = hess[k + 1][k] / denom;
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            residual = g[k + 1].abs();
            k_used = k + 1;
            if residual <= target || h_next == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / h_next).collect());
        }

        // Back substitution for the least-squares coefficients.
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        let mut update = vec![ZERO; n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, vv) in update.iter_mut().zip(v) {
                *u += *yi * vv;
            }
        }
        let dx = prec(&update);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        // True residual guards against drift in the recurrence.
        let ax = op(&x);
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        r_norm = norm(&r);
        if r_norm <= target || residual == 0.0 {
            return GmresOutcome {
                x,
                relative_residual: r_norm / b_norm,
                converged: r_norm <= target,
            };
        }
    }
    GmresOutcome { x, relative_residual: r_norm / b_norm, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn dense_dst(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (1..=n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(j, v)| v * (std::f64::consts::PI * ((j + 1) * k) as f64 / (n + 1) as f64).sin())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dst_matches_dense_sum_and_inverts() {
        let mut rng = Rng::new(21);
        for n in [1, 2, 7, 16, 33] {
            let x: Vec<_> = (0..n).map(|_| rng.complex_in_box(1.0)).collect();
            let dst = Dst::new(n);
            let mut y = x.clone();
            dst.forward(&mut y);
            for (a, b) in y.iter().zip(dense_dst(&x)) {
                assert!((a - b).norm() < 1e-12 * n as f64);
            }
            dst.inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-13 * n as f64);
            }
        }
    }

    #[test]
    fn dst_2d_roundtrip() {
        let mut rng = Rng::new(22);
        let n = 9;
        let x: Vec<_> = (0..n * n).map(|_| rng.complex_in_box(1.0)).collect();
        let dst = Dst::new(n);
        let mut y = x.clone();
        dst.forward_2d(&mut y);
        dst.inverse_2d(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn block_solver_matches_dense_product() {
        let mut rng = Rng::new(23);
        let n = 20;
        let diag: Vec<_> = (0..n)
            .map(|_| KernelJacobian {
                xx: 4.0 + rng.uniform(),
                xy: rng.uniform_in(-1.0, 1.0),
                yx: rng.uniform_in(-1.0, 1.0),
                yy: 4.0 + rng.uniform(),
            })
            .collect();
        let off = KernelJacobian::complex(c(-1.0, 0.5));
        let rhs: Vec<_> = (0..n).map(|_| rng.complex_in_box(1.0)).collect();
        let x = block_tridiagonal_solve(&diag, &off, &rhs).unwrap();
        for j in 0..n {
            let mut v = diag[j].apply(x[j]);
            if j > 0 {
                v += off.apply(x[j - 1]);
            }
            if j + 1 < n {
                v += off.apply(x[j + 1]);
            }
            assert!((v - rhs[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn block_solver_reports_singular_pivot() {
        let diag = vec![KernelJacobian::ZERO];
        assert!(block_tridiagonal_solve(&diag, &KernelJacobian::ZERO, &[c(1.0, 0.0)]).is_none());
    }

    #[test]
    fn gmres_solves_nonnormal_real_linear_system() {
        let mut rng = Rng::new(24);
        let n = 30;
        let blocks: Vec<_> = (0..n)
            .map(|_| KernelJacobian {
                xx: 1.0 + rng.uniform(),
                xy: rng.uniform_in(-2.0, 2.0),
                yx: rng.uniform_in(-0.5, 0.5),
                yy: 1.0 + rng.uniform(),
            })
            .collect();
        let op = |x: &[Complex64]| -> Vec<Complex64> {
            (0..n)
                .map(|j| {
                    let mut v = blocks[j].apply(x[j]);
                    if j > 0 {
                        v -= 0.3 * x[j - 1].conj();
                    }
                    v
                })
                .collect()
        };
        let b: Vec<_> = (0..n).map(|_| rng.complex_in_box(1.0)).collect();
        let out = gmres(
            &op,
            &|r: &[Complex64]| r.to_vec(),
            &b,
            GmresOptions { rel_tol: 1e-12, restart: 10, max_iter: 400 },
        );
        assert!(out.converged, "{out:?}");
        let ax = op(&out.x);
        let err: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-11 * norm(&b));
    }

    #[test]
    fn gmres_zero_rhs() {
        let out = gmres(
            &|x: &[Complex64]| x.to_vec(),
            &|x: &[Complex64]| x.to_vec(),
            &[ZERO; 4],
            GmresOptions { rel_tol: 1e-12, restart: 5, max_iter: 5 },
        );
        assert!(out.converged && out.x.iter().all(|z| *z == ZERO));
    }
}
