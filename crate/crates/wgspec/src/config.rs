//! Flat key-value run configuration.
//!
//! One `key = value` pair per line, `#` starts a comment, repeated
//! `gamma_block`, `shift` and `avoid` keys accumulate. The format stays
//! line-oriented so configs diff cleanly and parse without dependencies.
//! [`parse_config`] rejects unknown keys, duplicate scalars, and any
//! non-finite number; it never panics, whatever the input.

use num_complex::Complex64;

use crate::model::{GammaBlock, WaveguideProblem};
use crate::spectra::{OperatorKind, SpectrumParams};
use crate::{Error, Result};

/// Which computed eigenmodes the spectrum command samples to field CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DumpModes {
    None,
    /// Entries with a real classification (trapped or reflectionless).
    Real,
    /// Everything except essential-spectrum artifacts.
    #[default]
    NonArtifact,
    All,
}

impl DumpModes {
    fn parse(s: &str) -> Option<DumpModes> {
        match s {
            "none" => Some(DumpModes::None),
            "real" => Some(DumpModes::Real),
            "nonartifact" => Some(DumpModes::NonArtifact),
            "all" => Some(DumpModes::All),
            _ => None,
        }
    }
}

/// Uniform wavenumber grid of a reflection sweep, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub k_min: f64,
    pub k_max: f64,
    pub k_step: f64,
}

impl SweepSpec {
    /// The grid `k_min, k_min + k_step, …`; the last point lands on
    /// `k_max` up to a relative rounding slack.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let slack = 1e-9 * self.k_step;
        let mut ks = Vec::new();
        let mut i = 0u64;
        loop {
            let k = self.k_min + (i as f64) * self.k_step;
            if k > self.k_max + slack {
                break;
            }
            ks.push(k);
            i += 1;
        }
        ks
    }
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: WaveguideProblem,
    pub mesh_h: f64,
    /// Transverse target size when the mesh is anisotropic.
    pub mesh_hy: Option<f64>,
    pub operator: OperatorKind,
    pub shifts: Vec<Complex64>,
    pub params: SpectrumParams,
    pub sweep: Option<SweepSpec>,
    /// Wavenumbers a sweep must not touch (known trapped modes).
    pub avoid: Vec<f64>,
    /// Half-width of the skip interval around thresholds and `avoid`.
    pub exclusion: f64,
    /// Sampling step of field dumps.
    pub field_step: f64,
    pub dump_modes: DumpModes,
    /// Input table of the classify command.
    pub eigenvalues_csv: Option<String>,
    /// Extent of the k-plane branch table; derived from the shifts when
    /// absent.
    pub branches_k_max: Option<f64>,
    pub branch_samples: usize,
}

const SCALAR_KEYS: [&str; 18] = [
    "theta",
    "pml_start",
    "truncation",
    "mesh_h",
    "mesh_hy",
    "operator",
    "nev",
    "tol",
    "max_restarts",
    "real_tol",
    "rho_tol",
    "artifact_scale",
    "k_min",
    "k_max",
    "k_step",
    "exclusion",
    "field_step",
    "dump_modes",
];
const EXTRA_SCALAR_KEYS: [&str; 2] = ["branches_k_max", "branch_samples"];

fn parse_f64(key: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .parse()
        .map_err(|_| Error::Config(format!("{key}: not a number: {raw:?}")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("{key}: must be finite, got {raw}")));
    }
    Ok(v)
}

fn parse_usize(key: &str, raw: &str) -> Result<usize> {
    raw.parse()
        .map_err(|_| Error::Config(format!("{key}: not a non-negative integer: {raw:?}")))
}

fn parse_floats(key: &str, raw: &str, want: usize) -> Result<Vec<f64>> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    if parts.len() != want {
        return Err(Error::Config(format!(
            "{key}: expected {want} numbers, found {}: {raw:?}",
            parts.len()
        )));
    }
    parts.iter().map(|p| parse_f64(key, p)).collect()
}

/// Parses a configuration file's text.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut scalars: Vec<(String, String, usize)> = Vec::new();
    let mut gamma_blocks = Vec::new();
    let mut shifts = Vec::new();
    let mut avoid = Vec::new();
    let mut eigenvalues_csv = None;

    for (i, raw_line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        };
        if line.trim().is_empty() {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(Error::Config(format!(
                "line {lineno}: expected `key = value`, got {raw_line:?}"
            )));
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {lineno}: empty key")));
        }
        if value.is_empty() {
            return Err(Error::Config(format!("line {lineno}: {key} has no value")));
        }

        match key {
            "gamma_block" => {
                let v = parse_floats(key, value, 5)?;
                gamma_blocks.push(GammaBlock {
                    x0: v[0],
                    x1: v[1],
                    y0: v[2],
                    y1: v[3],
                    value: v[4],
                });
            }
            "shift" => {
                let v = parse_floats(key, value, 2)?;
                shifts.push(Complex64::new(v[0], v[1]));
            }
            "avoid" => {
                avoid.push(parse_floats(key, value, 1)?[0]);
            }
            "eigenvalues_csv" => {
                if eigenvalues_csv.replace(value.to_string()).is_some() {
                    return Err(Error::Config(format!(
                        "line {lineno}: duplicate key eigenvalues_csv"
                    )));
                }
            }
            _ if SCALAR_KEYS.contains(&key) || EXTRA_SCALAR_KEYS.contains(&key) => {
                if scalars.iter().any(|(k, _, _)| k == key) {
                    return Err(Error::Config(format!(
                        "line {lineno}: duplicate key {key}"
                    )));
                }
                scalars.push((key.to_string(), value.to_string(), lineno));
            }
            _ => {
                return Err(Error::Config(format!("line {lineno}: unknown key {key:?}")));
            }
        }
    }

    let scalar = |key: &str| scalars.iter().find(|(k, _, _)| k == key).map(|(_, v, _)| v.as_str());
    let required = |key: &str| {
        scalar(key).ok_or_else(|| Error::Config(format!("missing required key {key}")))
    };
    let opt_f64 = |key: &str| scalar(key).map(|v| parse_f64(key, v)).transpose();

    let theta = parse_f64("theta", required("theta")?)?;
    let pml_start = parse_f64("pml_start", required("pml_start")?)?;
    let truncation = parse_f64("truncation", required("truncation")?)?;
    let problem = WaveguideProblem::new(theta, pml_start, truncation, gamma_blocks)?;

    let mesh_h = parse_f64("mesh_h", required("mesh_h")?)?;
    if !(mesh_h > 0.0) {
        return Err(Error::Config(format!("mesh_h must be positive, got {mesh_h}")));
    }
    let mesh_hy = opt_f64("mesh_hy")?;
    if let Some(hy) = mesh_hy {
        if !(hy > 0.0) {
            return Err(Error::Config(format!("mesh_hy must be positive, got {hy}")));
        }
    }

    let operator = match scalar("operator") {
        None => OperatorKind::Reflectionless,
        Some(v) => OperatorKind::from_label(v).ok_or_else(|| {
            Error::Config(format!(
                "operator must be \"resonance\" or \"reflectionless\", got {v:?}"
            ))
        })?,
    };

    let mut params = SpectrumParams::default();
    if let Some(v) = scalar("nev") {
        params.nev = parse_usize("nev", v)?;
        if params.nev == 0 {
            return Err(Error::Config("nev must be at least 1".into()));
        }
    }
    if let Some(v) = scalar("max_restarts") {
        params.max_restarts = parse_usize("max_restarts", v)?;
    }
    for (key, slot) in [
        ("tol", &mut params.tol),
        ("real_tol", &mut params.real_tol),
        ("rho_tol", &mut params.rho_tol),
        ("artifact_scale", &mut params.artifact_scale),
    ] {
        if let Some(v) = scalar(key) {
            let x = parse_f64(key, v)?;
            if !(x > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {x}")));
            }
            *slot = x;
        }
    }

    let sweep_parts = [opt_f64("k_min")?, opt_f64("k_max")?, opt_f64("k_step")?];
    let sweep = match sweep_parts {
        [None, None, None] => None,
        [Some(k_min), Some(k_max), Some(k_step)] => {
            if !(k_step > 0.0) {
                return Err(Error::Config(format!("k_step must be positive, got {k_step}")));
            }
            if k_max < k_min {
                return Err(Error::Config(format!(
                    "empty sweep range: k_max ({k_max}) < k_min ({k_min})"
                )));
            }
            if (k_max - k_min) / k_step > 200_000.0 {
                return Err(Error::Config(format!(
                    "sweep grid exceeds 200000 points (k_step = {k_step})"
                )));
            }
            Some(SweepSpec { k_min, k_max, k_step })
        }
        _ => {
            return Err(Error::Config(
                "a sweep needs all three of k_min, k_max, k_step".into(),
            ))
        }
    };

    let exclusion = match opt_f64("exclusion")? {
        None => 1e-3,
        Some(x) if x > 0.0 => x,
        Some(x) => {
            return Err(Error::Config(format!("exclusion must be positive, got {x}")))
        }
    };
    let field_step = match opt_f64("field_step")? {
        None => 0.05,
        Some(x) if x > 0.0 => x,
        Some(x) => {
            return Err(Error::Config(format!("field_step must be positive, got {x}")))
        }
    };
    let dump_modes = match scalar("dump_modes") {
        None => DumpModes::default(),
        Some(v) => DumpModes::parse(v).ok_or_else(|| {
            Error::Config(format!(
                "dump_modes must be one of none/real/nonartifact/all, got {v:?}"
            ))
        })?,
    };

    let branches_k_max = match opt_f64("branches_k_max")? {
        None => None,
        Some(x) if x > 0.0 => Some(x),
        Some(x) => {
            return Err(Error::Config(format!("branches_k_max must be positive, got {x}")))
        }
    };
    let branch_samples = match scalar("branch_samples") {
        None => 400,
        Some(v) => {
            let n = parse_usize("branch_samples", v)?;
            if n == 0 {
                return Err(Error::Config("branch_samples must be at least 1".into()));
            }
            n
        }
    };

    Ok(RunConfig {
        problem,
        mesh_h,
        mesh_hy,
        operator,
        shifts,
        params,
        sweep,
        avoid,
        exclusion,
        field_step,
        dump_modes,
        eigenvalues_csv,
        branches_k_max,
        branch_samples,
    })
}
