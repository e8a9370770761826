//! Experiment configuration: a versioned TOML file plus flag and environment overrides.
//!
//! Precedence for `seed`, `threads` and the output directory is
//! flag > environment (`HQO_SEED`, `HQO_THREADS`, `HQO_OUT`) > file.

use std::path::PathBuf;

use hqo_core::hierarchy::HierarchyParams;
use hqo_core::spectral::ModelParams;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// The configuration shipped with the binary.
pub const DEFAULT_CONFIG: &str = include_str!("../default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub threads: usize,
    pub output: OutputSection,
    pub hierarchy: HierarchySection,
    pub model: ModelSection,
    pub beta: BetaSection,
    pub spectral: SpectralSection,
    pub mc: McSection,
    pub rg: RgSection,
    pub bounds: BoundsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchySection {
    pub kappa: u64,
    pub delta: f64,
    /// Switch the inter-site coupling off (θ = 0).
    #[serde(default)]
    pub decoupled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub mass: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSection {
    /// Inverse temperature for single-point runs.
    pub value: f64,
    /// Scan grid for `spectral`; empty means `[value]`.
    #[serde(default)]
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    /// Starting basis size of the adaptive doubling.
    pub k_start: usize,
    /// Highest Matsubara index tabulated.
    pub q_max: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub level: u32,
    pub slices: usize,
    /// Production sweeps per chain.
    pub sweeps: usize,
    pub burn_in: usize,
    pub chains: usize,
    /// Batches per chain.
    pub batches: usize,
    pub measure_every: usize,
    pub k_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RgSection {
    /// Population per replica.
    pub pop: usize,
    pub cutoff: usize,
    pub n_max: u32,
    pub replicas: usize,
    /// Level-0 lattice sampling when b > 0.
    pub slices: usize,
    pub burn_in: usize,
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub epsilon: f64,
    /// Relative bisection tolerance and target β* bracket width.
    pub tol: f64,
    pub n_max: u32,
    pub beta_min: f64,
    pub beta_max: f64,
}

/// 1-based line of `key = …` inside `[section]`, if present.
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut inside = section.is_empty();
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            inside = t.trim_start_matches('[').trim_end_matches(']').trim() == section;
            continue;
        }
        if inside && t.split('=').next().map(str::trim) == Some(key) {
            return Some(i + 1);
        }
    }
    None
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(src).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate().map_err(|(section, key, msg)| {
            let at = locate(src, section, key).map_or(String::new(), |l| format!("line {l}: "));
            let path = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            CliError::Config(format!("{at}{path}: {msg}"))
        })?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn default_config() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("shipped config is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hier(&self) -> HierarchyParams {
        let h = HierarchyParams::new(self.hierarchy.kappa, self.hierarchy.delta).expect("validated");
        if self.hierarchy.decoupled { h.decoupled() } else { h }
    }

    pub fn params_at(&self, beta: f64) -> ModelParams {
        ModelParams { mass: self.model.mass, a: self.model.a, b: self.model.b, beta }
    }

    pub fn params(&self) -> ModelParams {
        self.params_at(self.beta.value)
    }

    pub fn beta_grid(&self) -> Vec<f64> {
        if self.beta.grid.is_empty() {
            vec![self.beta.value]
        } else {
            self.beta.grid.clone()
        }
    }

    /// `(section, key, message)` of the first invalid entry.
    fn validate(&self) -> Result<(), (&'static str, &'static str, String)> {
        let err = |s, k, m: String| Err((s, k, m));
        if self.schema_version != SCHEMA_VERSION {
            return err("", "schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if !(self.hierarchy.delta > 0.0 && self.hierarchy.delta < 0.5) {
            return err("hierarchy", "delta", format!("must lie in (0, 1/2), got {}", self.hierarchy.delta));
        }
        if let Err(e) = HierarchyParams::new(self.hierarchy.kappa, self.hierarchy.delta) {
            return err("hierarchy", "kappa", e.to_string());
        }
        if !(self.model.mass > 0.0) {
            return err("model", "mass", format!("must be positive, got {}", self.model.mass));
        }
        if self.model.b < 0.0 {
            return err("model", "b", format!("must be non-negative, got {}", self.model.b));
        }
        if self.model.b == 0.0 && self.model.a <= 0.0 {
            return err("model", "a", "b = 0 requires a > 0".into());
        }
        if let Some(&b) = std::iter::once(&self.beta.value).chain(&self.beta.grid).find(|b| !(**b > 0.0 && b.is_finite())) {
            return err("beta", if b == self.beta.value { "value" } else { "grid" }, format!("must be positive, got {b}"));
        }
        if self.spectral.k_start < 4 {
            return err("spectral", "k_start", "must be >= 4".into());
        }
        if self.mc.slices < 2 || self.mc.slices % 2 != 0 {
            return err("mc", "slices", format!("must be even and >= 2, got {}", self.mc.slices));
        }
        if self.mc.sweeps * self.mc.chains < 10_000 {
            return err("mc", "sweeps", "need at least 1e4 production sweeps in total".into());
        }
        if self.mc.batches * self.mc.chains < 16 {
            return err("mc", "batches", "need at least 16 batches in total".into());
        }
        if self.mc.chains == 0 || self.mc.measure_every == 0 {
            return err("mc", "chains", "chains and measure_every must be positive".into());
        }
        if self.rg.pop < 1000 {
            return err("rg", "pop", format!("must be >= 1000, got {}", self.rg.pop));
        }
        if self.rg.replicas < 2 {
            return err("rg", "replicas", "need at least 2".into());
        }
        if self.model.b > 0.0 && self.rg.cutoff + 1 > self.rg.slices / 2 {
            return err("rg", "cutoff", format!("needs cutoff < slices/2 = {}", self.rg.slices / 2));
        }
        if self.rg.thin == 0 {
            return err("rg", "thin", "must be positive".into());
        }
        let eps_hi = (1.0 - 2.0 * self.hierarchy.delta) / 4.0;
        if !(self.bounds.epsilon > 0.0 && self.bounds.epsilon < eps_hi) {
            return err("bounds", "epsilon", format!("must lie in (0, {eps_hi})"));
        }
        if !(self.bounds.tol > 0.0 && self.bounds.tol < 1.0) {
            return err("bounds", "tol", "must lie in (0, 1)".into());
        }
        if !(self.bounds.beta_min > 0.0 && self.bounds.beta_min < self.bounds.beta_max) {
            return err("bounds", "beta_min", "need 0 < beta_min < beta_max".into());
        }
        Ok(())
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Apply flag and environment overrides; `env` looks up a variable.
pub fn apply_overrides(
    mut cfg: ExperimentConfig,
    flags: &Overrides,
    env: impl Fn(&str) -> Option<String>,
) -> Result<ExperimentConfig, CliError> {
    fn parse<T: std::str::FromStr>(name: &str, v: String) -> Result<T, CliError> {
        v.trim().parse().map_err(|_| CliError::Config(format!("environment variable {name}: cannot parse {v:?}")))
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    } else if let Some(v) = env("HQO_SEED") {
        cfg.seed = parse("HQO_SEED", v)?;
    }
    if let Some(t) = flags.threads {
        cfg.threads = t;
    } else if let Some(v) = env("HQO_THREADS") {
        cfg.threads = parse("HQO_THREADS", v)?;
    }
    if let Some(o) = &flags.out {
        cfg.output.dir = o.clone();
    } else if let Some(v) = env("HQO_OUT") {
        cfg.output.dir = PathBuf::from(v);
    }
    Ok(cfg)
}
