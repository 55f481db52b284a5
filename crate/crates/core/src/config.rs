//! Run configuration files.
//!
//! One `key = value` per line, `#` starts a comment, keys are dotted
//! (`model.theta`, `grid.n`, ...). Complex values are written `re+imi`,
//! e.g. `1`, `-0.5i`, `1.2-3e-2i`, `i`.
//!
//! ```text
//! model.theta = 0.3
//! model.m = 0.5
//! model.a = 1-0.2i
//! grid.dim = 1
//! grid.n = 127
//! time.tau = 1e-3
//! time.t_end = 1
//! initial.kind = modal
//! initial.k = 1
//! initial.amplitude = 1+1i
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::grid::{read_snapshot, Field, Grid};
use crate::kernels::KernelParams;
use crate::operator::SolverOptions;
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::timestepper::{ForcingKind, ForcingSpec, TimeConfig, TimeProfile};
use crate::{Error, Result};

const KEYS: &[&str] = &[
    "model.theta",
    "model.m",
    "model.p",
    "model.a",
    "model.b",
    "model.gamma",
    "kernel.epsilon",
    "kernel.truncation",
    "grid.dim",
    "grid.n",
    "grid.length",
    "time.tau",
    "time.t_end",
    "time.snapshot_every",
    "initial.kind",
    "initial.k",
    "initial.ky",
    "initial.amplitude",
    "initial.path",
    "initial.seed",
    "initial.scale",
    "forcing.kind",
    "forcing.value",
    "forcing.k",
    "forcing.ky",
    "forcing.amplitude",
    "forcing.path",
    "forcing.profile",
    "forcing.rate",
    "forcing.samples",
    "output.ledger",
    "output.snapshots",
    "output.certificates",
    "seed",
    "solver.tol",
    "solver.linear_tol",
    "solver.max_iter",
    "solver.max_fixed_point",
];

/// Parses a complex literal `re`, `imi`, `re+imi` or `re-imi`.
pub fn parse_complex(s: &str) -> Result<Complex64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::Format(format!("not a complex number: {s:?}"));
    if t.is_empty() {
        return Err(bad());
    }
    let z = match t.strip_suffix('i') {
        None => Complex64::new(t.parse::<f64>().map_err(|_| bad())?, 0.0),
        Some(body) => split_imaginary(body).ok_or_else(bad)?,
    };
    if z.re.is_finite() && z.im.is_finite() {
        Ok(z)
    } else {
        Err(bad())
    }
}

fn split_imaginary(body: &str) -> Option<Complex64> {
    let num = |x: &str| -> Option<f64> {
        match x {
            "" | "+" => Some(1.0),
            "-" => Some(-1.0),
            _ => x.parse::<f64>().ok(),
        }
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    match split {
        Some(k) => Some(Complex64::new(body[..k].parse::<f64>().ok()?, num(&body[k..])?)),
        None => Some(Complex64::new(0.0, num(body)?)),
    }
}

/// Formats a complex number so that [`parse_complex`] reads it back exactly.
pub fn format_complex(z: Complex64) -> String {
    let sign = if z.im.is_sign_negative() { '-' } else { '+' };
    format!("{:?}{sign}{:?}i", z.re, z.im.abs())
}

/// Raw `key = value` pairs, in file order for error messages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", i + 1)))?;
            let key = k.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Format(format!("line {}: unknown key {key:?}", i + 1)));
            }
            if entries.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
                return Err(Error::Format(format!("line {}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::Format(format!("unknown key {key:?}")));
        }
        self.entries.insert(key.to_string(), (value.to_string(), 0));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    fn err(&self, key: &str, what: &str) -> Error {
        match self.entries.get(key) {
            Some((v, line)) if *line > 0 => Error::Format(format!("line {line}: {key} = {v:?}: {what}")),
            Some((v, _)) => Error::Format(format!("{key} = {v:?}: {what}")),
            None => Error::Format(format!("{key}: {what}")),
        }
    }

    fn real(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|v| v.parse::<f64>().map_err(|_| self.err(key, "expected a real number")))
            .transpose()
    }

    fn real_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.real(key)?.unwrap_or(default))
    }

    fn required_real(&self, key: &str) -> Result<f64> {
        self.real(key)?.ok_or_else(|| self.err(key, "missing"))
    }

    fn count(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| v.parse::<usize>().map_err(|_| self.err(key, "expected a non-negative integer")))
            .transpose()
    }

    fn complex_or(&self, key: &str, default: Complex64) -> Result<Complex64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_complex(v).map_err(|_| self.err(key, "expected a complex literal like 1-2i")),
        }
    }

    /// Canonical text, one key per line in sorted order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, (v, _)) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Zero,
    Modal { kx: usize, ky: usize, amplitude: Complex64 },
    File(PathBuf),
    /// Independent uniform entries in the box `[-scale, scale]²`.
    Random { seed: Option<u64>, scale: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outputs {
    pub ledger: Option<PathBuf>,
    pub snapshots: Option<PathBuf>,
    pub certificates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelParams,
    pub kernel: KernelParams,
    pub grid: Grid,
    pub time: TimeConfig,
    pub initial: InitialCondition,
    pub forcing: ForcingSpec,
    pub output: Outputs,
    pub seed: u64,
    pub solver: SolverOptions,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn load_field(path: &Path, grid: Grid) -> Result<Field> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    let f = read_snapshot(std::io::BufReader::new(file))?;
    if f.grid.dim != grid.dim || f.grid.n != grid.n || (f.grid.h - grid.h).abs() > 1e-12 * grid.h {
        return Err(Error::GridMismatch(format!("{} does not match the configured grid", path.display())));
    }
    Ok(Field { values: f.values, grid })
}

fn parse_samples(map: &ConfigMap, text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (t, v) = pair
                .split_once(':')
                .ok_or_else(|| map.err("forcing.samples", "expected t:v pairs"))?;
            let t = t.trim().parse().map_err(|_| map.err("forcing.samples", "bad time"))?;
            let v = v.trim().parse().map_err(|_| map.err("forcing.samples", "bad value"))?;
            Ok((t, v))
        })
        .collect()
}

impl RunConfig {
    /// Builds a configuration; relative input paths are taken relative to
    /// `base_dir`. Admissibility of the model is not checked here.
    pub fn from_map(map: &ConfigMap, base_dir: &Path) -> Result<Self> {
        let model = ModelParams {
            theta: map.real_or("model.theta", 0.0)?,
            m: map.real_or("model.m", 1.0)?,
            p: map.real_or("model.p", 2.0)?,
            a: map.complex_or("model.a", Complex64::new(1.0, 0.0))?,
            b: map.complex_or("model.b", Complex64::new(0.0, 0.0))?,
            gamma: map.complex_or("model.gamma", Complex64::new(0.0, 0.0))?,
        };

        let epsilon = match map.real("kernel.epsilon")? {
            Some(e) => e,
            None if model.m == 0.0 => {
                return Err(map.err("kernel.epsilon", "required when model.m = 0"));
            }
            None if model.m < 1.0 => 1e-8,
            None => 0.0,
        };
        let truncation = match map.real("kernel.truncation")? {
            Some(t) => t,
            None if model.m == 0.0 && epsilon > 0.0 => 1.0 / epsilon,
            None => 1e8,
        };
        let kernel = KernelParams::new(epsilon, truncation)
            .map_err(|e| map.err("kernel.epsilon", &e.to_string()))?;

        let dim = map.count("grid.dim")?.unwrap_or(1);
        let n = map.count("grid.n")?.unwrap_or(63);
        let length = map.real_or("grid.length", 1.0)?;
        let grid = Grid::new(dim, n, length).map_err(|e| map.err("grid.n", &e.to_string()))?;

        let tau = map.required_real("time.tau")?;
        let t_end = map.required_real("time.t_end")?;
        let steps = if tau > 0.0 { (t_end / tau).round().max(1.0) as usize } else { 1 };
        let snapshot_every = map.count("time.snapshot_every")?.unwrap_or(steps);
        let time = TimeConfig::new(tau, t_end, snapshot_every).map_err(|e| map.err("time.tau", &e.to_string()))?;

        let seed = match map.get("seed") {
            None => 0,
            Some(v) => v.parse().map_err(|_| map.err("seed", "expected an unsigned integer"))?,
        };

        let initial = match map.get("initial.kind").unwrap_or("zero") {
            "zero" => InitialCondition::Zero,
            "modal" => InitialCondition::Modal {
                kx: map.count("initial.k")?.unwrap_or(1),
                ky: map.count("initial.ky")?.unwrap_or(1),
                amplitude: map.complex_or("initial.amplitude", Complex64::new(1.0, 0.0))?,
            },
            "file" => InitialCondition::File(resolve(
                base_dir,
                map.get("initial.path").ok_or_else(|| map.err("initial.path", "missing"))?,
            )),
            "random" => InitialCondition::Random {
                seed: match map.get("initial.seed") {
                    None => None,
                    Some(v) => Some(v.parse().map_err(|_| map.err("initial.seed", "expected an unsigned integer"))?),
                },
                scale: map.real_or("initial.scale", 1.0)?,
            },
            _ => return Err(map.err("initial.kind", "expected zero, modal, file or random")),
        };

        let kind = match map.get("forcing.kind").unwrap_or("zero") {
            "zero" => ForcingKind::Zero,
            "constant" => ForcingKind::Constant(map.complex_or("forcing.value", Complex64::new(1.0, 0.0))?),
            "modal" => ForcingKind::Modal {
                kx: map.count("forcing.k")?.unwrap_or(1),
                ky: map.count("forcing.ky")?.unwrap_or(1),
                amplitude: map.complex_or("forcing.amplitude", Complex64::new(1.0, 0.0))?,
            },
            "file" => {
                let path = resolve(base_dir, map.get("forcing.path").ok_or_else(|| map.err("forcing.path", "missing"))?);
                ForcingKind::Field(load_field(&path, grid)?)
            }
            _ => return Err(map.err("forcing.kind", "expected zero, constant, modal or file")),
        };
        let profile = match map.get("forcing.profile").unwrap_or("constant") {
            "constant" => TimeProfile::Constant,
            "exponential" => TimeProfile::Exponential { rate: map.required_real("forcing.rate")? },
            "samples" => TimeProfile::Samples(parse_samples(
                map,
                map.get("forcing.samples").ok_or_else(|| map.err("forcing.samples", "missing"))?,
            )?),
            _ => return Err(map.err("forcing.profile", "expected constant, exponential or samples")),
        };
        let forcing = ForcingSpec { kind, profile };
        forcing.validate(grid).map_err(|e| map.err("forcing.samples", &e.to_string()))?;

        let output = Outputs {
            ledger: map.get("output.ledger").map(PathBuf::from),
            snapshots: map.get("output.snapshots").map(PathBuf::from),
            certificates: map.get("output.certificates").map(PathBuf::from),
        };

        let defaults = SolverOptions::default();
        let solver = SolverOptions {
            tol: map.real_or("solver.tol", defaults.tol)?,
            linear_tol: map.real_or("solver.linear_tol", defaults.linear_tol)?,
            max_newton: map.count("solver.max_iter")?.unwrap_or(defaults.max_newton),
            max_fixed_point: map.count("solver.max_fixed_point")?.unwrap_or(defaults.max_fixed_point),
        };
        if !(solver.tol > 0.0 && solver.linear_tol > 0.0) {
            return Err(map.err("solver.tol", "tolerances must be positive"));
        }

        Ok(RunConfig { model, kernel, grid, time, initial, forcing, output, seed, solver })
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The initial field.
    pub fn initial_field(&self) -> Result<Field> {
        Ok(match &self.initial {
            InitialCondition::Zero => Field::zeros(self.grid),
            InitialCondition::Modal { kx, ky, amplitude } => Field::mode(self.grid, *kx, *ky, *amplitude),
            InitialCondition::File(path) => load_field(path, self.grid)?,
            InitialCondition::Random { seed, scale } => {
                let mut rng = Rng::new(seed.unwrap_or(self.seed));
                let values = (0..self.grid.len()).map(|_| rng.complex_in_box(*scale)).collect();
                Field::new(self.grid, values)?
            }
        })
    }
}
