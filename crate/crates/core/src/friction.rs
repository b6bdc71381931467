//! Spatially varying floor friction.
//!
//! A field is an `n x n` lattice of node coefficients spanning the tray,
//! bilinearly interpolated in between. Node perturbations are i.i.d. uniform
//! in `[-amplitude, +amplitude]` around `mu0`, drawn from the counter-based
//! stream keyed by `(seed, node index)`, and clamped below at [`MU_FLOOR`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Tray, Vec2};
use crate::rng;

/// Node coefficients never drop below this.
pub const MU_FLOOR: f64 = 0.01;
pub const DEFAULT_MU0: f64 = 0.30;
pub const DEFAULT_GRID_N: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrictionError {
    #[error("mu0 must be positive, got {0}")]
    BadMu0(f64),
    #[error("amplitude must be non-negative, got {0}")]
    BadAmplitude(f64),
    #[error("grid needs at least 2 nodes per side, got {0}")]
    BadGrid(usize),
    #[error("node grid has {got} values, expected {expected}")]
    NodeCount { got: usize, expected: usize },
    #[error("node {index} has invalid coefficient {value}")]
    BadNode { index: usize, value: f64 },
    #[error("unknown noise level `{0}` (expected uniform, low, medium or high)")]
    UnknownLevel(String),
}

/// Named friction-noise classes. Amplitudes are about [`DEFAULT_MU0`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    Uniform,
    Low,
    Medium,
    High,
}

impl NoiseLevel {
    pub const ALL: [NoiseLevel; 4] = [
        NoiseLevel::Uniform,
        NoiseLevel::Low,
        NoiseLevel::Medium,
        NoiseLevel::High,
    ];

    pub fn amplitude(self) -> f64 {
        match self {
            NoiseLevel::Uniform => 0.0,
            NoiseLevel::Low => 0.03,
            NoiseLevel::Medium => 0.60,
            NoiseLevel::High => 0.80,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseLevel::Uniform => "uniform",
            NoiseLevel::Low => "low",
            NoiseLevel::Medium => "medium",
            NoiseLevel::High => "high",
        }
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseLevel {
    type Err = FrictionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NoiseLevel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FrictionError::UnknownLevel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrictionField {
    mu0: f64,
    amplitude: f64,
    grid_n: usize,
    seed: u64,
    tray: Tray,
    /// Row-major, `nodes[j * grid_n + i]` sits at `(i * a / (n-1), j * b / (n-1))`.
    nodes: Vec<f64>,
    clamped_nodes: usize,
    uniform: Option<f64>,
    // cached interpolation scales
    sx: f64,
    sy: f64,
}

impl FrictionField {
    /// Builds a field from an explicit node grid (e.g. read back from a file).
    pub fn from_nodes(
        mu0: f64,
        amplitude: f64,
        grid_n: usize,
        seed: u64,
        tray: Tray,
        nodes: Vec<f64>,
    ) -> Result<Self, FrictionError> {
        check_args(mu0, amplitude, grid_n)?;
        if nodes.len() != grid_n * grid_n {
            return Err(FrictionError::NodeCount {
                got: nodes.len(),
                expected: grid_n * grid_n,
            });
        }
        if let Some((index, &value)) = nodes
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= MU_FLOOR))
        {
            return Err(FrictionError::BadNode { index, value });
        }
        let first = nodes[0];
        let uniform = nodes.iter().all(|&v| v == first).then_some(first);
        let span = (grid_n - 1) as f64;
        Ok(FrictionField {
            mu0,
            amplitude,
            grid_n,
            seed,
            tray,
            nodes,
            clamped_nodes: 0,
            uniform,
            sx: span / tray.a,
            sy: span / tray.b,
        })
    }

    /// A noise-free field equal to `mu` everywhere.
    pub fn uniform(mu: f64, tray: Tray) -> Result<Self, FrictionError> {
        generate_field(mu, 0.0, 2, 0, tray)
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tray(&self) -> Tray {
        self.tray
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of nodes raised to [`MU_FLOOR`] during generation.
    pub fn clamped_nodes(&self) -> usize {
        self.clamped_nodes
    }

    /// `Some(mu)` when every node carries the same coefficient.
    pub fn as_uniform(&self) -> Option<f64> {
        self.uniform
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.nodes[j * self.grid_n + i]
    }

    /// Bilinear interpolation; points outside the tray are clamped to it.
    #[inline]
    pub fn mu_at(&self, p: Vec2) -> f64 {
        if let Some(mu) = self.uniform {
            return mu;
        }
        let n = self.grid_n;
        let last = (n - 2) as f64;
        let u = (p.x * self.sx).clamp(0.0, (n - 1) as f64);
        let v = (p.y * self.sy).clamp(0.0, (n - 1) as f64);
        let i = u.floor().min(last);
        let j = v.floor().min(last);
        let fu = u - i;
        let fv = v - j;
        let base = j as usize * n + i as usize;
        let n00 = self.nodes[base];
        let n10 = self.nodes[base + 1];
        let n01 = self.nodes[base + n];
        let n11 = self.nodes[base + n + 1];
        let bottom = n00 + (n10 - n00) * fu;
        let top = n01 + (n11 - n01) * fu;
        bottom + (top - bottom) * fv
    }
}

fn check_args(mu0: f64, amplitude: f64, grid_n: usize) -> Result<(), FrictionError> {
    if !(mu0 > 0.0 && mu0.is_finite()) {
        return Err(FrictionError::BadMu0(mu0));
    }
    if !(amplitude >= 0.0 && amplitude.is_finite()) {
        return Err(FrictionError::BadAmplitude(amplitude));
    }
    if grid_n < 2 {
        return Err(FrictionError::BadGrid(grid_n));
    }
    Ok(())
}

/// Generates a field deterministically from its parameters.
///
/// When `mu0 - amplitude` falls below [`MU_FLOOR`] the affected nodes are
/// clamped and a warning is logged; the count is kept on the field.
pub fn generate_field(
    mu0: f64,
    amplitude: f64,
    grid_n: usize,
    seed: u64,
    tray: Tray,
) -> Result<FrictionField, FrictionError> {
    check_args(mu0, amplitude, grid_n)?;
    let mut clamped = 0;
    let nodes: Vec<f64> = (0..grid_n * grid_n)
        .map(|k| {
            let value = if amplitude == 0.0 {
                mu0
            } else {
                let u = rng::unit(seed, rng::stream::FRICTION_NODES, k as u64);
                mu0 + amplitude * (2.0 * u - 1.0)
            };
            if value < MU_FLOOR {
                clamped += 1;
                MU_FLOOR
            } else {
                value
            }
        })
        .collect();
    if mu0 - amplitude < MU_FLOOR {
        log::warn!(
            "friction field mu0={mu0} amplitude={amplitude} reaches below {MU_FLOOR}; \
             {clamped} node(s) clamped"
        );
    }
    let mut field = FrictionField::from_nodes(mu0, amplitude, grid_n, seed, tray, nodes)?;
    field.clamped_nodes = clamped;
    Ok(field)
}

/// Generates a field for one of the named noise classes about [`DEFAULT_MU0`].
pub fn generate_for_level(
    level: NoiseLevel,
    grid_n: usize,
    seed: u64,
    tray: Tray,
) -> Result<FrictionField, FrictionError> {
    generate_field(DEFAULT_MU0, level.amplitude(), grid_n, seed, tray)
}

#[derive(Debug, Error)]
pub enum FieldFileError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing field file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid tray in field file: {0}")]
    Tray(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Field(#[from] FrictionError),
}

/// On-disk form of a field. The node grid is stored in full so an archived
/// field never depends on regenerating it.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldFile {
    mu0: f64,
    amplitude: f64,
    grid_n: usize,
    seed: u64,
    width: f64,
    height: f64,
    /// row-major, `nodes[j * grid_n + i]`
    nodes: Vec<f64>,
}

pub fn field_to_toml(field: &FrictionField) -> String {
    let file = FieldFile {
        mu0: field.mu0,
        amplitude: field.amplitude,
        grid_n: field.grid_n,
        seed: field.seed,
        width: field.tray.a,
        height: field.tray.b,
        nodes: field.nodes.clone(),
    };
    toml::to_string(&file).expect("field serializes")
}

pub fn parse_field(text: &str) -> Result<FrictionField, FieldFileError> {
    let file: FieldFile = toml::from_str(text)?;
    let tray = Tray::new(file.width, file.height)?;
    Ok(FrictionField::from_nodes(
        file.mu0,
        file.amplitude,
        file.grid_n,
        file.seed,
        tray,
        file.nodes,
    )?)
}

pub fn load_field(path: &std::path::Path) -> Result<FrictionField, FieldFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| FieldFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_field(&text)
}
