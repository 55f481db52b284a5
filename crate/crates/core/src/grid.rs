//! Box discretisation with homogeneous Dirichlet data.
//!
//! Nodes are the interior points `x_j = j h`, `j = 1..=n`, `h = length/(n+1)`,
//! stored lexicographically (x fastest in 2D). Boundary values are implicit
//! zeros. The Laplacian is the 3-point / 5-point stencil and the gradient uses
//! forward differences on every edge, boundary edges included, so that
//!
//! ```text
//! inner(-Δ_h u, v) = edge_inner(∇_h u, ∇_h v)
//! ```
//!
//! holds exactly in exact arithmetic. All sums use a fixed pairwise tree so
//! results are bitwise reproducible.

use std::io::{Read, Write};
use std::ops::Add;

use num_complex::Complex64;

use crate::{Error, Result};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Sum of `f(0..n)` over a fixed balanced binary tree.
pub(crate) fn pairwise<T, F>(n: usize, f: &F) -> T
where
    T: Add<Output = T> + Default,
    F: Fn(usize) -> T,
{
    fn rec<T: Add<Output = T> + Default, F: Fn(usize) -> T>(lo: usize, hi: usize, f: &F) -> T {
        if hi - lo <= 8 {
            let mut acc = T::default();
            for i in lo..hi {
                acc = acc + f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    /// Interior nodes per axis.
    pub n: usize,
    pub length: f64,
    pub h: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid(format!("grid dimension {dim} not in {{1, 2}}")));
        }
        if n == 0 {
            return Err(Error::invalid("grid needs at least one interior node"));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::invalid(format!("box length {length} must be positive")));
        }
        Ok(Grid { dim, n, length, h: length / (n + 1) as f64 })
    }

    pub fn line(n: usize, length: f64) -> Result<Self> {
        Self::new(1, n, length)
    }

    pub fn square(n: usize, length: f64) -> Result<Self> {
        Self::new(2, n, length)
    }

    /// Total interior nodes.
    pub fn len(&self) -> usize {
        if self.dim == 1 {
            self.n
        } else {
            self.n * self.n
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^dim`.
    pub fn cell(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Coordinates of node `idx` (`y = 0` in 1D).
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let (i, j) = (idx % self.n, idx / self.n);
        let x = (i + 1) as f64 * self.h;
        if self.dim == 1 {
            (x, 0.0)
        } else {
            (x, (j + 1) as f64 * self.h)
        }
    }

    /// Eigenvalue of `-Δ_h` in 1D for the mode `sin(kπx/length)`.
    pub fn eigenvalue_1d(&self, k: usize) -> f64 {
        let s = (k as f64 * std::f64::consts::PI / (2.0 * (self.n + 1) as f64)).sin();
        4.0 / (self.h * self.h) * s * s
    }

    /// Eigenvalue of `-Δ_h` for the (separable) mode `(kx, ky)`; `ky` is
    /// ignored in 1D.
    pub fn eigenvalue(&self, kx: usize, ky: usize) -> f64 {
        if self.dim == 1 {
            self.eigenvalue_1d(kx)
        } else {
            self.eigenvalue_1d(kx) + self.eigenvalue_1d(ky)
        }
    }

    /// Largest eigenvalue of `-Δ_h`.
    pub fn eigenvalue_max(&self) -> f64 {
        self.eigenvalue(self.n, self.n)
    }

    fn same(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && self.h == other.h
    }
}

/// Complex values on the interior nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<Complex64>,
    pub grid: Grid,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field { values, grid })
    }

    pub fn zeros(grid: Grid) -> Self {
        Field { values: vec![ZERO; grid.len()], grid }
    }

    pub fn constant(grid: Grid, c: Complex64) -> Self {
        Field { values: vec![c; grid.len()], grid }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let (x, y) = grid.coords(i);
                f(x, y)
            })
            .collect();
        Field { values, grid }
    }

    /// `amplitude · sin(kx π x/L) [· sin(ky π y/L)]`.
    pub fn mode(grid: Grid, kx: usize, ky: usize, amplitude: Complex64) -> Self {
        let w = std::f64::consts::PI / grid.length;
        Field::from_fn(grid, |x, y| {
            let s = (kx as f64 * w * x).sin();
            if grid.dim == 1 {
                amplitude * s
            } else {
                amplitude * s * (ky as f64 * w * y).sin()
            }
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Field {
        Field { values: self.values.iter().map(|&z| f(z)).collect(), grid: self.grid }
    }

    pub fn scale(&self, c: Complex64) -> Field {
        self.map(|z| c * z)
    }

    fn zip(&self, other: &Field, f: impl Fn(Complex64, Complex64) -> Complex64) -> Field {
        debug_assert!(self.grid.same(&other.grid));
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Field { values, grid: self.grid }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip(other, |a, b| a - b)
    }

    /// `self + c · other`.
    pub fn axpy(&self, c: Complex64, other: &Field) -> Field {
        self.zip(other, |a, b| a + c * b)
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid.same(&other.grid) && self.len() == other.len() {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)))
        }
    }
}

/// Forward differences on grid edges.
///
/// 1D: `n + 1` edges. 2D: `x` holds `(n + 1) × n` horizontal edges (row-major
/// in `y`), `y` holds `n × (n + 1)` vertical edges.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    pub grid: Grid,
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
}

/// `Δ_h u`.
pub fn laplacian(u: &Field) -> Field {
    let grid = u.grid;
    let n = grid.n;
    let inv_h2 = 1.0 / (grid.h * grid.h);
    let v = &u.values;
    let at = |i: isize, j: isize| -> Complex64 {
        if i < 0 || j < 0 || i >= n as isize || j >= n as isize {
            ZERO
        } else {
            v[i as usize + n * j as usize]
        }
    };
    let values = if grid.dim == 1 {
        (0..n)
            .map(|i| {
                let i = i as isize;
                (at(i - 1, 0) - 2.0 * at(i, 0) + at(i + 1, 0)) * inv_h2
            })
            .collect()
    } else {
        (0..n * n)
            .map(|idx| {
                let (i, j) = ((idx % n) as isize, (idx / n) as isize);
                (at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1) - 4.0 * at(i, j)) * inv_h2
            })
            .collect()
    };
    Field { values, grid }
}

/// `∇_h u` on edges, ghost zeros outside the box.
pub fn gradient(u: &Field) -> EdgeField {
    let grid = u.grid;
    let n = grid.n;
    let inv_h = 1.0 / grid.h;
    let v = &u.values;
    let get = |i: usize, j: usize| -> Complex64 {
        // i, j are shifted by one: 0 and n + 1 are ghost nodes.
        if i == 0 || j == 0 || i > n || j > n {
            ZERO
        } else {
            v[(i - 1) + n * (j - 1)]
        }
    };
    if grid.dim == 1 {
        let x = (0..=n).map(|e| (get(e + 1, 1) - get(e, 1)) * inv_h).collect();
        EdgeField { grid, x, y: Vec::new() }
    } else {
        let mut x = Vec::with_capacity((n + 1) * n);
        for j in 1..=n {
            for e in 0..=n {
                x.push((get(e + 1, j) - get(e, j)) * inv_h);
            }
        }
        let mut y = Vec::with_capacity(n * (n + 1));
        for e in 0..=n {
            for i in 1..=n {
                y.push((get(i, e + 1) - get(i, e)) * inv_h);
            }
        }
        EdgeField { grid, x, y }
    }
}

/// `Σ_edges a conj(b) h^dim`.
pub fn edge_inner(a: &EdgeField, b: &EdgeField) -> Complex64 {
    let w = a.grid.cell();
    let sx: Complex64 = pairwise(a.x.len(), &|i| a.x[i] * b.x[i].conj());
    let sy: Complex64 = pairwise(a.y.len(), &|i| a.y[i] * b.y[i].conj());
    (sx + sy) * w
}

/// `‖∇_h u‖²`.
pub fn gradient_norm_sq(u: &Field) -> f64 {
    let g = gradient(u);
    let w = u.grid.cell();
    let sx: f64 = pairwise(g.x.len(), &|i| g.x[i].norm_sqr());
    let sy: f64 = pairwise(g.y.len(), &|i| g.y[i].norm_sqr());
    (sx + sy) * w
}

/// Sesquilinear `Σ u conj(v) h^dim`.
pub fn inner(u: &Field, v: &Field) -> Result<Complex64> {
    u.check_same_grid(v)?;
    Ok(inner_unchecked(u, v))
}

pub(crate) fn inner_unchecked(u: &Field, v: &Field) -> Complex64 {
    let s: Complex64 = pairwise(u.len(), &|i| u.values[i] * v.values[i].conj());
    s * u.grid.cell()
}

/// `(Σ |u|^q h^dim)^{1/q}`.
pub fn norm_q(u: &Field, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::invalid(format!("norm exponent {q} < 1")));
    }
    Ok(power_sum(u, q).powf(1.0 / q))
}

/// `Σ |u|^q h^dim` (the `q`-th power of the norm), defined for any `q > 0`.
pub fn power_sum(u: &Field, q: f64) -> f64 {
    let s: f64 = if q == 2.0 {
        pairwise(u.len(), &|i| u.values[i].norm_sqr())
    } else {
        pairwise(u.len(), &|i| u.values[i].norm().powf(q))
    };
    s * u.grid.cell()
}

/// Discrete `L²` norm.
pub fn norm2(u: &Field) -> f64 {
    power_sum(u, 2.0).sqrt()
}

pub fn norm_inf(u: &Field) -> f64 {
    u.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"CGLF";
const SNAPSHOT_VERSION: u32 = 1;

/// Writes the little-endian snapshot format: `"CGLF"`, version `u32`, dim
/// `u32`, n `u32`, h `f64`, then `re, im` as `f64` per node in lexicographic
/// order.
pub fn write_snapshot<W: Write>(mut w: W, u: &Field) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(u.grid.dim as u32).to_le_bytes())?;
    w.write_all(&(u.grid.n as u32).to_le_bytes())?;
    w.write_all(&u.grid.h.to_le_bytes())?;
    for z in &u.values {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Field> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("snapshot magic is not CGLF".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut u32_le = |r: &mut R| -> Result<u32> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let version = u32_le(&mut r)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported snapshot version {version}")));
    }
    let dim = u32_le(&mut r)? as usize;
    let n = u32_le(&mut r)? as usize;
    r.read_exact(&mut b8)?;
    let h = f64::from_le_bytes(b8);
    let grid = Grid::new(dim, n, h * (n + 1) as f64)?;
    let grid = Grid { h, ..grid };
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut b8)?;
        let re = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        values.push(Complex64::new(re, f64::from_le_bytes(b8)));
    }
    Field::new(grid, values)
}
