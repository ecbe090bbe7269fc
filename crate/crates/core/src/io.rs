//! Experiment configuration (TOML) and binary snapshots.
//!
//! Snapshot layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "HCMASNAP"
//! version    u32
//! config     u64 length, then UTF-8 TOML (config echo)
//! boundary   u64 length, then UTF-8 JSON of the boundary data actually imposed
//! nt nx ny   3 x u64
//! modulus    2 x f64 (re, im)
//! profile    u8 kind (0 constant, 1 annulus, 2 field), f64 parameter;
//!            for kind 2 the parameter is NaN and nt*nx*ny f64 values follow
//! converged  u8
//! iterations u64
//! residual   f64 (final max-norm residual)
//! history    u64 count, then that many f64
//! phi        nt*nx*ny f64 in it-major, then ix, then iy order
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{BoundaryError, BoundarySpec, FourierMode, TrigPolynomial};
use crate::grid::{Grid, GridError, ScalarField};
use crate::leaf::Interpolation;
use crate::profile::{EpsilonProfile, ProfileError, ProfileKind};
use crate::solver::{NewtonReport, Solution, SolverConfig};
use crate::verifier::DEFAULT_D_R;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"HCMASNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("not a snapshot: bad magic header")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("truncated or corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
    /// Lattice modulus `[re, im]`.
    #[serde(default = "default_modulus")]
    pub modulus: [f64; 2],
}

fn default_modulus() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub kind: ProfileKind,
    /// Strictly decreasing list of `eps` (annulus) or `eps_tilde` (constant).
    pub schedule: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub kx: i32,
    pub ky: i32,
    #[serde(default)]
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default)]
    pub phi0: Vec<ModeConfig>,
    #[serde(default)]
    pub phi1: Vec<ModeConfig>,
}

impl BoundaryConfig {
    pub fn to_spec(&self) -> Result<BoundarySpec, BoundaryError> {
        let poly = |ms: &[ModeConfig]| TrigPolynomial::new(ms.iter().map(|m| FourierMode::new(m.kx, m.ky, m.re, m.im)).collect());
        BoundarySpec::new(poly(&self.phi0), poly(&self.phi1))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    #[serde(default)]
    pub ladder: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    /// Check names to run; empty runs all.
    pub enabled: Vec<String>,
    pub d_r: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self { enabled: Vec::new(), d_r: DEFAULT_D_R }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    /// Starts `[t0, x, y]` in lattice coordinates.
    pub starts: Vec<[f64; 3]>,
    /// Requested RK4 step; snapped to `ht / m`.
    pub step: f64,
    pub interpolation: Interpolation,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { starts: Vec::new(), step: 0.25 / 16.0, interpolation: Interpolation::Trilinear }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub profile: ProfileConfig,
    #[serde(default)]
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub lambda: LambdaConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub trace: TraceConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, IoError> {
        let c: Self = toml::from_str(text).map_err(|e| IoError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), IoError> {
        self.grid_spec()?;
        let s = &self.profile.schedule;
        if s.is_empty() {
            return Err(IoError::Invalid("profile.schedule is empty".into()));
        }
        if s.iter().any(|e| !(e.is_finite() && *e > 0.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(IoError::Invalid("profile.schedule must be positive and strictly decreasing".into()));
        }
        if self.lambda.ladder.iter().any(|l| !l.is_finite()) {
            return Err(IoError::Invalid("lambda.ladder must be finite".into()));
        }
        if !(self.checks.d_r > 0.0 && self.checks.d_r.is_finite()) {
            return Err(IoError::Invalid("checks.d_r must be positive".into()));
        }
        self.boundary.to_spec()?;
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<Grid, IoError> {
        let g = &self.grid;
        Ok(Grid::new(g.nt, g.nx, g.ny, Complex64::new(g.modulus[0], g.modulus[1]))?)
    }

    pub fn boundary_spec(&self) -> Result<BoundarySpec, IoError> {
        Ok(self.boundary.to_spec()?)
    }

    /// Profile for the last (smallest) entry of the schedule.
    pub fn final_profile(&self) -> Result<EpsilonProfile, IoError> {
        let last = *self.profile.schedule.last().ok_or_else(|| IoError::Invalid("empty schedule".into()))?;
        Ok(EpsilonProfile::from_kind(self.profile.kind, last)?)
    }
}

/// A saved solution together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub config_toml: String,
    pub solution: Solution,
}

fn put_u64(w: &mut Vec<u8>, v: u64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(w: &mut Vec<u8>, v: f64) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(w: &mut Vec<u8>, b: &[u8]) {
    put_u64(w, b.len() as u64);
    w.extend_from_slice(b);
}

impl Snapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.solution;
        let g = *s.grid();
        let mut w = Vec::with_capacity(64 + 8 * g.len());
        w.extend_from_slice(SNAPSHOT_MAGIC);
        w.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        put_bytes(&mut w, self.config_toml.as_bytes());
        put_bytes(&mut w, serde_json::to_string(&s.boundary).expect("boundary serializes").as_bytes());
        for d in [g.nt, g.nx, g.ny] {
            put_u64(&mut w, d as u64);
        }
        put_f64(&mut w, g.modulus.re);
        put_f64(&mut w, g.modulus.im);
        match &s.profile {
            EpsilonProfile::Constant { eps_tilde } => {
                w.push(0);
                put_f64(&mut w, *eps_tilde);
            }
            EpsilonProfile::Annulus { epsilon } => {
                w.push(1);
                put_f64(&mut w, *epsilon);
            }
            EpsilonProfile::Field(f) => {
                w.push(2);
                put_f64(&mut w, f64::NAN);
                f.values.iter().for_each(|v| put_f64(&mut w, *v));
            }
        }
        w.push(s.converged as u8);
        put_u64(&mut w, s.iterations as u64);
        put_f64(&mut w, s.final_residual);
        put_u64(&mut w, s.report.residual_history.len() as u64);
        s.report.residual_history.iter().for_each(|v| put_f64(&mut w, *v));
        s.phi.values.iter().for_each(|v| put_f64(&mut w, *v));
        w
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, IoError> {
        let mut r = Reader { b, pos: 0 };
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(IoError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != SNAPSHOT_VERSION {
            return Err(IoError::BadVersion(version));
        }
        let config_toml = r.string()?;
        let boundary: BoundarySpec =
            serde_json::from_str(&r.string()?).map_err(|e| IoError::Corrupt(format!("boundary: {e}")))?;
        let (nt, nx, ny) = (r.size()?, r.size()?, r.size()?);
        let modulus = Complex64::new(r.f64()?, r.f64()?);
        let grid = Grid::new(nt, nx, ny, modulus)?;
        let kind = r.take(1)?[0];
        let param = r.f64()?;
        let profile = match kind {
            0 => EpsilonProfile::constant(param)?,
            1 => EpsilonProfile::annulus(param)?,
            2 => EpsilonProfile::field(ScalarField::from_values(grid, r.f64s(grid.len())?)?)?,
            k => return Err(IoError::Corrupt(format!("profile kind {k}"))),
        };
        let converged = r.take(1)?[0] != 0;
        let iterations = r.size()?;
        let final_residual = r.f64()?;
        let nh = r.size()?;
        let residual_history = r.f64s(nh)?;
        let phi = ScalarField::from_values(grid, r.f64s(grid.len())?)?;
        if r.pos != b.len() {
            return Err(IoError::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            config_toml,
            solution: Solution {
                phi,
                profile,
                boundary,
                converged,
                iterations,
                final_residual,
                report: NewtonReport { residual_history, ..Default::default() },
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let mut buf = Vec::new();
        fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| IoError::Corrupt(format!("need {n} bytes at offset {}", self.pos)))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn size(&mut self) -> Result<usize, IoError> {
        usize::try_from(self.u64()?).map_err(|_| IoError::Corrupt("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| IoError::Corrupt("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn string(&mut self) -> Result<String, IoError> {
        let n = self.size()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| IoError::Corrupt("invalid UTF-8".into()))
    }
}
