//! TOML run configuration.
//!
//! Every block has defaults, unknown keys are rejected, and validation
//! errors name the offending key as `section.key`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adjoint::AdjointScheme;
use crate::control::{ControlBox, Mode, OptSettings};
use crate::error::{Error, Result};
use crate::grid::{build_channel_grid, velocity_from_stream, FieldPair, Grid, Velocity};
use crate::potentials::PotentialSpec;
use crate::state::{Schedule, SolverParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Simulate,
    Longtime,
    Tausweep,
    Optimize,
    Gradcheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub velocity: VelocityConfig,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub control: ControlConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Ly")]
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lx: 2.0,
            ly: 1.0,
            nx: 32,
            ny: 17,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Constant,
    Cosine,
    Random,
    Dump,
}

/// Initial order parameter. `cosine` is
/// `mean + amplitude cos(2 pi kx x / Lx) cos(pi ky y / Ly)`; `random` is a
/// smooth random Fourier sum of `modes` modes per direction scaled to
/// `amplitude` in sup norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub mean: f64,
    pub amplitude: f64,
    pub kx: u32,
    pub ky: u32,
    pub modes: u32,
    pub path: Option<PathBuf>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            kind: InitialKind::Cosine,
            mean: 0.1,
            amplitude: 0.5,
            kx: 1,
            ky: 1,
            modes: 3,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityKind {
    Zero,
    /// `psi = A sin(2 pi kx x / Lx) sin^2(pi y / Ly)`: recirculating cells.
    Cells,
    /// `psi = A y`: uniform flow along the channel.
    Uniform,
    /// `psi = A y^2 (3 Ly - 2 y) / Ly^2`: Poiseuille flow of mean speed `A`.
    Poiseuille,
    Random,
}

/// Velocity built from a stream function. With `lambda > 0` it decays as
/// `exp(-lambda t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VelocityConfig {
    pub kind: VelocityKind,
    pub amplitude: f64,
    pub kx: u32,
    pub lambda: f64,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        Self {
            kind: VelocityKind::Zero,
            amplitude: 0.0,
            kx: 1,
            lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub t_end: f64,
    /// Dump the state every this many steps (0: only the final state).
    pub dump_every: usize,
    /// Tolerance for the stationarity metrics of `longtime`.
    pub longtime_tol: f64,
    /// Tolerance for the strong stationary residuals of `longtime`.
    pub residual_tol: f64,
    /// Viscosities of `tausweep`, compared against `tau = 0`.
    pub taus: Vec<f64>,
    /// Mass drift allowed by `simulate`, relative to `1 + |m0|`.
    pub mass_tol: f64,
    /// Energy increase allowed per step, relative to `|E(0)|`, checked by
    /// `simulate` when the velocity is zero.
    pub energy_tol: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dump_every: 0,
            longtime_tol: 1e-4,
            residual_tol: 1e-3,
            taus: vec![0.2, 0.1, 0.05, 0.025],
            mass_tol: 1e-10,
            energy_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSource {
    /// States of a run driven by the `[velocity]` block.
    Reference,
    Constant,
    /// A pair dump used as a static and terminal target.
    Dump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub beta3: f64,
    pub beta4: f64,
    pub beta5: f64,
    pub beta6: f64,
    pub beta7: f64,
    pub targets: TargetSource,
    pub target_value: f64,
    pub target_path: Option<PathBuf>,
    #[serde(rename = "Ubar")]
    pub ubar: f64,
    #[serde(rename = "R0")]
    pub r0: f64,
    pub projection_iters: usize,
    pub mode: Mode,
    pub scheme: AdjointScheme,
    pub max_iter: usize,
    pub armijo_c: f64,
    pub max_halvings: usize,
    pub j_rel_tol: f64,
    pub vi_tol: f64,
    pub fp_tol: f64,
    pub probes: usize,
    /// Random directions of `gradcheck`.
    pub directions: usize,
    pub fd_step: f64,
    pub gradcheck_tol: f64,
    /// Largest ratio of the last to the first adapted-cost gap accepted in
    /// sweep mode.
    pub gap_ratio: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let s = OptSettings::default();
        Self {
            beta3: 1.0,
            beta4: 0.0,
            beta5: 0.0,
            beta6: 0.0,
            beta7: 0.01,
            targets: TargetSource::Reference,
            target_value: 0.0,
            target_path: None,
            ubar: 1.0,
            r0: f64::INFINITY,
            projection_iters: 2000,
            mode: Mode::Pure,
            scheme: AdjointScheme::Exact,
            max_iter: s.max_iter,
            armijo_c: s.armijo_c,
            max_halvings: s.max_halvings,
            j_rel_tol: s.j_rel_tol,
            vi_tol: s.vi_tol,
            fp_tol: s.fp_tol,
            probes: s.probes,
            directions: 5,
            fd_step: 1e-5,
            gradcheck_tol: 1e-2,
            gap_ratio: 0.1,
        }
    }
}

impl ControlConfig {
    pub fn settings(&self, seed: u64) -> OptSettings {
        OptSettings {
            max_iter: self.max_iter,
            armijo_c: self.armijo_c,
            max_halvings: self.max_halvings,
            j_rel_tol: self.j_rel_tol,
            vi_tol: self.vi_tol,
            fp_tol: self.fp_tol,
            probes: self.probes,
            seed,
        }
    }

    pub fn control_box(&self, g: &Grid) -> ControlBox {
        ControlBox {
            r0: self.r0,
            projection_iters: self.projection_iters,
            ..ControlBox::uniform(g, self.ubar)
        }
    }
}

fn keyed(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => Error::Config {
            key: format!("{section}.{name}"),
            reason,
        },
        Error::InvalidGrid(reason) => Error::Config {
            key: section.to_string(),
            reason,
        },
        other => other,
    }
}

fn require(ok: bool, key: &str, reason: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config {
            key: key.to_string(),
            reason: reason.to_string(),
        })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            key: e
                .span()
                .map(|s| text[s].trim().chars().take(40).collect())
                .unwrap_or_default(),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// The effective configuration with all defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().map(|_| ())?;
        self.potential.validate().map_err(|e| keyed("potential", e))?;
        self.solver.validate().map_err(|e| keyed("solver", e))?;
        let r = &self.run;
        require(r.t_end >= 0.0 && r.t_end.is_finite(), "run.t_end", "must be finite and nonnegative")?;
        require(r.longtime_tol > 0.0, "run.longtime_tol", "must be positive")?;
        require(r.residual_tol > 0.0, "run.residual_tol", "must be positive")?;
        require(r.mass_tol > 0.0, "run.mass_tol", "must be positive")?;
        require(r.energy_tol >= 0.0, "run.energy_tol", "must be nonnegative")?;
        require(
            r.taus.iter().all(|t| *t > 0.0 && t.is_finite()),
            "run.taus",
            "viscosities must be positive",
        )?;
        let v = &self.velocity;
        require(v.amplitude.is_finite(), "velocity.amplitude", "must be finite")?;
        require(v.lambda >= 0.0, "velocity.lambda", "must be nonnegative")?;
        require(v.kx >= 1, "velocity.kx", "must be at least 1")?;
        let i = &self.initial;
        require(i.kind != InitialKind::Dump || i.path.is_some(), "initial.path", "required for kind = \"dump\"")?;
        require(i.modes >= 1, "initial.modes", "must be at least 1")?;
        let c = &self.control;
        for (k, b) in [
            ("control.beta3", c.beta3),
            ("control.beta4", c.beta4),
            ("control.beta5", c.beta5),
            ("control.beta6", c.beta6),
            ("control.beta7", c.beta7),
        ] {
            require(b >= 0.0 && b.is_finite(), k, "must be nonnegative")?;
        }
        require(
            [c.beta3, c.beta4, c.beta5, c.beta6, c.beta7].iter().any(|b| *b > 0.0),
            "control.beta3",
            "the betas must not all vanish",
        )?;
        require(c.ubar >= 0.0, "control.Ubar", "must be nonnegative")?;
        require(c.r0 > 0.0, "control.R0", "must be positive")?;
        require(c.projection_iters >= 1, "control.projection_iters", "must be at least 1")?;
        require(c.armijo_c > 0.0 && c.armijo_c < 1.0, "control.armijo_c", "must lie in (0, 1)")?;
        require(c.vi_tol > 0.0, "control.vi_tol", "must be positive")?;
        require(c.fp_tol > 0.0, "control.fp_tol", "must be positive")?;
        require(c.fd_step > 0.0, "control.fd_step", "must be positive")?;
        require(c.gradcheck_tol > 0.0, "control.gradcheck_tol", "must be positive")?;
        require(c.directions >= 1, "control.directions", "must be at least 1")?;
        require(
            c.targets != TargetSource::Dump || c.target_path.is_some(),
            "control.target_path",
            "required for targets = \"dump\"",
        )?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        build_channel_grid(g.lx, g.ly, g.nx, g.ny).map_err(|e| keyed("grid", e))
    }

    pub fn initial_datum(&self, g: &Grid) -> Result<FieldPair> {
        let c = &self.initial;
        let (lx, ly) = (g.lx(), g.ly());
        let pi = std::f64::consts::PI;
        match c.kind {
            InitialKind::Constant => Ok(FieldPair::constant(g, c.mean)),
            InitialKind::Cosine => Ok(FieldPair::from_nodal(
                g,
                g.sample(|x, y| {
                    c.mean
                        + c.amplitude
                            * (2.0 * pi * c.kx as f64 * x / lx).cos()
                            * (pi * c.ky as f64 * y / ly).cos()
                }),
            )),
            InitialKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let m = c.modes as usize;
                let coef: Vec<[f64; 3]> = (0..m * m)
                    .map(|_| {
                        [
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(0.0..std::f64::consts::TAU),
                        ]
                    })
                    .collect();
                let raw = g.sample(|x, y| {
                    let mut v = 0.0;
                    for a in 0..m {
                        for b in 0..m {
                            let k = coef[a * m + b];
                            let decay = 1.0 / (1.0 + (a * a + b * b) as f64);
                            v += decay
                                * (k[0] * (2.0 * pi * (a + 1) as f64 * x / lx + k[2]).cos()
                                    + k[1] * (2.0 * pi * (a + 1) as f64 * x / lx + k[2]).sin())
                                * (pi * b as f64 * y / ly).cos();
                        }
                    }
                    v
                });
                let peak = crate::linalg::max_abs(&raw).max(1e-300);
                Ok(FieldPair::from_nodal(
                    g,
                    raw.iter().map(|v| c.mean + c.amplitude * v / peak).collect(),
                ))
            }
            InitialKind::Dump => {
                let path = c.path.as_ref().expect("validated");
                let d = crate::io::read_dump(path)?;
                if !d.matches(g) {
                    return Err(Error::Config {
                        key: "initial.path".into(),
                        reason: "dump was written on a different grid".into(),
                    });
                }
                match d.pair() {
                    Some(p) => Ok(p),
                    None => Ok(FieldPair::from_nodal(g, d.bulk)),
                }
            }
        }
    }

    pub fn velocity_field(&self, g: &Grid) -> Result<Velocity> {
        let v = &self.velocity;
        let (lx, ly) = (g.lx(), g.ly());
        let pi = std::f64::consts::PI;
        let a = v.amplitude;
        match v.kind {
            VelocityKind::Zero => Ok(Velocity::zeros(g)),
            VelocityKind::Cells => velocity_from_stream(
                &g.sample(|x, y| {
                    a * (2.0 * pi * v.kx as f64 * x / lx).sin() * (pi * y / ly).sin().powi(2)
                }),
                g,
            ),
            VelocityKind::Uniform => velocity_from_stream(&g.sample(|_, y| a * y), g),
            VelocityKind::Poiseuille => {
                velocity_from_stream(&g.sample(|_, y| a * y * y * (3.0 * ly - 2.0 * y) / (ly * ly)), g)
            }
            VelocityKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
                Ok(crate::control::random_divfree(g, &mut rng).scaled(a))
            }
        }
    }

    pub fn schedule(&self, g: &Grid) -> Result<Schedule> {
        let u0 = self.velocity_field(g)?;
        Ok(if self.velocity.lambda > 0.0 {
            Schedule::Decaying {
                u0,
                lambda: self.velocity.lambda,
            }
        } else {
            Schedule::Steady(u0)
        })
    }
}
