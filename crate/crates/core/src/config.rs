//! Run configuration: flat `section.key = value` text.
//!
//! Lines starting with `#` are comments, blank lines are ignored and keys
//! missing from a file keep their defaults. Unknown or repeated keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bfgs::BfgsOptions;
use crate::error::{Error, Result};
use crate::fem::{BodyForce, LoadProfile, Material};
use crate::mesh::Region;
use crate::optimize::MinimizeOptions;
use crate::penalty::PenaltyConfig;
use crate::validate::ValidationOptions;

/// Starting state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialMode {
    /// Plain linear-elastic solve, no penalty.
    Elastic,
    /// Penalized solve from a scaled copy of the elastic solution.
    Symmetric,
    /// Penalized solve from the twisted state that crosses the arms sideways.
    Asymmetric,
    /// Penalized solve from the displacement stored in `init.file`.
    File,
}

impl FromStr for InitialMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "elastic" => Ok(InitialMode::Elastic),
            "symmetric" => Ok(InitialMode::Symmetric),
            "asymmetric" => Ok(InitialMode::Asymmetric),
            "file" => Ok(InitialMode::File),
            other => Err(format!(
                "unknown mode '{other}' (elastic | symmetric | asymmetric | file)"
            )),
        }
    }
}

impl fmt::Display for InitialMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitialMode::Elastic => "elastic",
            InitialMode::Symmetric => "symmetric",
            InitialMode::Asymmetric => "asymmetric",
            InitialMode::File => "file",
        })
    }
}

/// Default NP region: the facing inner surfaces of the two arms over the tips.
pub const DEFAULT_NP_REGION: &str = "box x1=4:6 x3=2.5:2.5 | box x1=4:6 x3=0.5:0.5";
pub const DEFAULT_DIRICHLET_REGION: &str = "plane x1=0";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub level: u32,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub g_load: f64,
    pub load_profile: LoadProfile,
    pub beta: f64,
    pub s_factor: f64,
    pub r_factor: f64,
    pub kernel_a: f64,
    /// `μ_∂Ω / E`.
    pub weight_factor: f64,
    pub dirichlet: Region,
    pub nonpenetration: Region,
    pub mode: InitialMode,
    pub init_file: Option<PathBuf>,
    /// Keep the twist centred on the pincer instead of translating it.
    pub anchor_twist: bool,
    pub gtol: f64,
    pub max_iter: usize,
    pub c1: f64,
    pub c2: f64,
    pub step_factor: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub out_dir: PathBuf,
    pub vtk_name: String,
    pub csv_name: String,
    pub log_name: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bfgs = BfgsOptions::default();
        let val = ValidationOptions::default();
        RunConfig {
            level: 1,
            youngs_modulus: 2e8,
            poisson_ratio: 0.3,
            g_load: 4e5,
            load_profile: LoadProfile::Tips,
            beta: PenaltyConfig::DEFAULT_BETA,
            s_factor: PenaltyConfig::DEFAULT_S,
            r_factor: PenaltyConfig::DEFAULT_R,
            kernel_a: PenaltyConfig::DEFAULT_A,
            weight_factor: PenaltyConfig::DEFAULT_WEIGHT_FACTOR,
            dirichlet: DEFAULT_DIRICHLET_REGION.parse().expect("default region"),
            nonpenetration: DEFAULT_NP_REGION.parse().expect("default region"),
            mode: InitialMode::Elastic,
            init_file: None,
            anchor_twist: false,
            gtol: bfgs.gtol,
            max_iter: bfgs.max_iter,
            c1: bfgs.c1,
            c2: bfgs.c2,
            step_factor: MinimizeOptions::default().step_factor,
            sigma_min: val.sigma_min,
            sigma_max: val.sigma_max,
            rho: val.rho,
            out_dir: PathBuf::from("out"),
            vtk_name: "solution.vtk".into(),
            csv_name: "results.csv".into(),
            log_name: "iterations.log".into(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| format!("invalid value '{raw}' for {key}: {e}"))
}

impl RunConfig {
    /// Every key in serialization order.
    pub const KEYS: &'static [&'static str] = &[
        "mesh.level",
        "material.youngs_modulus",
        "material.poisson_ratio",
        "load.g_load",
        "load.profile",
        "penalty.beta",
        "penalty.s_factor",
        "penalty.r_factor",
        "penalty.a",
        "penalty.weight_factor",
        "regions.dirichlet",
        "regions.nonpenetration",
        "init.mode",
        "init.file",
        "init.anchor_twist",
        "optimizer.gtol",
        "optimizer.max_iter",
        "optimizer.c1",
        "optimizer.c2",
        "optimizer.step_factor",
        "validate.sigma_min",
        "validate.sigma_max",
        "validate.rho",
        "output.dir",
        "output.vtk",
        "output.csv",
        "output.log",
    ];

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), String> {
        let raw = raw.trim();
        match key {
            "mesh.level" => self.level = parse_value(key, raw)?,
            "material.youngs_modulus" => self.youngs_modulus = parse_value(key, raw)?,
            "material.poisson_ratio" => self.poisson_ratio = parse_value(key, raw)?,
            "load.g_load" => self.g_load = parse_value(key, raw)?,
            "load.profile" => self.load_profile = parse_value(key, raw)?,
            "penalty.beta" => self.beta = parse_value(key, raw)?,
            "penalty.s_factor" => self.s_factor = parse_value(key, raw)?,
            "penalty.r_factor" => self.r_factor = parse_value(key, raw)?,
            "penalty.a" => self.kernel_a = parse_value(key, raw)?,
            "penalty.weight_factor" => self.weight_factor = parse_value(key, raw)?,
            "regions.dirichlet" => self.dirichlet = parse_value(key, raw)?,
            "regions.nonpenetration" => self.nonpenetration = parse_value(key, raw)?,
            "init.mode" => self.mode = parse_value(key, raw)?,
            "init.file" => self.init_file = (!raw.is_empty()).then(|| PathBuf::from(raw)),
            "init.anchor_twist" => self.anchor_twist = parse_value(key, raw)?,
            "optimizer.gtol" => self.gtol = parse_value(key, raw)?,
            "optimizer.max_iter" => self.max_iter = parse_value(key, raw)?,
            "optimizer.c1" => self.c1 = parse_value(key, raw)?,
            "optimizer.c2" => self.c2 = parse_value(key, raw)?,
            "optimizer.step_factor" => self.step_factor = parse_value(key, raw)?,
            "validate.sigma_min" => self.sigma_min = parse_value(key, raw)?,
            "validate.sigma_max" => self.sigma_max = parse_value(key, raw)?,
            "validate.rho" => self.rho = parse_value(key, raw)?,
            "output.dir" => self.out_dir = PathBuf::from(raw),
            "output.vtk" => self.vtk_name = raw.to_string(),
            "output.csv" => self.csv_name = raw.to_string(),
            "output.log" => self.log_name = raw.to_string(),
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "mesh.level" => self.level.to_string(),
            "material.youngs_modulus" => self.youngs_modulus.to_string(),
            "material.poisson_ratio" => self.poisson_ratio.to_string(),
            "load.g_load" => self.g_load.to_string(),
            "load.profile" => self.load_profile.to_string(),
            "penalty.beta" => self.beta.to_string(),
            "penalty.s_factor" => self.s_factor.to_string(),
            "penalty.r_factor" => self.r_factor.to_string(),
            "penalty.a" => self.kernel_a.to_string(),
            "penalty.weight_factor" => self.weight_factor.to_string(),
            "regions.dirichlet" => self.dirichlet.to_string(),
            "regions.nonpenetration" => self.nonpenetration.to_string(),
            "init.mode" => self.mode.to_string(),
            "init.file" => self
                .init_file
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "init.anchor_twist" => self.anchor_twist.to_string(),
            "optimizer.gtol" => self.gtol.to_string(),
            "optimizer.max_iter" => self.max_iter.to_string(),
            "optimizer.c1" => self.c1.to_string(),
            "optimizer.c2" => self.c2.to_string(),
            "optimizer.step_factor" => self.step_factor.to_string(),
            "validate.sigma_min" => self.sigma_min.to_string(),
            "validate.sigma_max" => self.sigma_max.to_string(),
            "validate.rho" => self.rho.to_string(),
            "output.dir" => self.out_dir.display().to_string(),
            "output.vtk" => self.vtk_name.clone(),
            "output.csv" => self.csv_name.clone(),
            "output.log" => self.log_name.clone(),
            other => unreachable!("key list out of sync: {other}"),
        }
    }

    /// Parses config text; `origin` is only used in error messages.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: k + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected 'key = value'".into()))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(parse_err(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(parse_err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Text form accepted by [`RunConfig::parse`]; keys grouped by section.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for key in Self::KEYS {
            let sec = key.split('.').next().unwrap_or_default();
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = sec;
            }
            out.push_str(&format!("{key} = {}\n", self.get(key)));
        }
        out
    }

    /// Range checks that do not need a mesh.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.youngs_modulus > 0.0) {
            return bad(format!("youngs_modulus must be positive, got {}", self.youngs_modulus));
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return bad(format!("poisson_ratio must lie in (-1, 0.5), got {}", self.poisson_ratio));
        }
        if !self.g_load.is_finite() {
            return bad("g_load must be finite".into());
        }
        if !(self.s_factor > 0.0 && self.r_factor > 0.0) {
            return bad("penalty s_factor and r_factor must be positive".into());
        }
        if !(self.weight_factor >= 0.0) {
            return bad(format!("weight_factor must be >= 0, got {}", self.weight_factor));
        }
        if self.mode == InitialMode::File && self.init_file.is_none() {
            return bad("init.mode = file needs init.file".into());
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return bad("need 0 < sigma_min < sigma_max".into());
        }
        if !(self.rho >= 0.0) {
            return bad(format!("rho must be >= 0, got {}", self.rho));
        }
        self.minimize_options().bfgs.validate()?;
        self.material()?;
        Ok(())
    }

    pub fn material(&self) -> Result<Material> {
        Material::from_young_poisson(self.youngs_modulus, self.poisson_ratio)
    }

    pub fn body_force(&self) -> BodyForce {
        BodyForce {
            g_load: self.g_load,
            profile: self.load_profile,
        }
    }

    /// Penalty parameters on a mesh of spacing `h`.
    pub fn penalty(&self, h: f64) -> PenaltyConfig {
        PenaltyConfig {
            beta: self.beta,
            epsilon: PenaltyConfig::epsilon_for_spacing(self.s_factor, self.r_factor, h),
            a: self.kernel_a,
            weight: self.weight_factor * self.youngs_modulus,
            s_factor: self.s_factor,
            r_factor: self.r_factor,
        }
    }

    pub fn minimize_options(&self) -> MinimizeOptions {
        MinimizeOptions {
            bfgs: BfgsOptions {
                gtol: self.gtol,
                max_iter: self.max_iter,
                c1: self.c1,
                c2: self.c2,
                ..BfgsOptions::default()
            },
            step_factor: self.step_factor,
        }
    }

    pub fn validation_options(&self) -> ValidationOptions {
        ValidationOptions {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            rho: self.rho,
        }
    }

    pub fn vtk_path(&self) -> PathBuf {
        self.out_dir.join(&self.vtk_name)
    }

    pub fn csv_path(&self) -> PathBuf {
        self.out_dir.join(&self.csv_name)
    }

    pub fn log_path(&self) -> PathBuf {
        self.out_dir.join(&self.log_name)
    }
}
