//! Run configuration: a TOML file, then command-line overrides.
//!
//! Every section and key is optional; missing values take the defaults below.
//! Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use obstacle_core::harness::{default_mu_grid, Refinement, Sampling};
use obstacle_core::{OptimizerOptions, PdasOptions, PsorOptions, Rect, ScalarFn, Side, VISolver};
use serde::{Deserialize, Serialize};

/// Invalid configuration; `field` is the dotted key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub optimizer: OptimizerConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub nx: usize,
    pub ny: usize,
    pub gamma1: Vec<Side>,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0, nx: 8, ny: 8, gamma1: vec![Side::Left, Side::Bottom] }
    }
}

/// A control given by formula or by nodal values read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlSpec {
    File { file: PathBuf },
    Preset(ScalarFn),
}

impl Default for ControlSpec {
    fn default() -> Self {
        ControlSpec::Preset(ScalarFn::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub b: f64,
    /// Control weight `M`.
    pub weight: f64,
    pub q: ScalarFn,
    pub g: ControlSpec,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self { b: 1.0, weight: 1.0, q: ScalarFn::default(), g: ControlSpec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Psor,
    Pdas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    /// Relative complementarity tolerance.
    pub tol: f64,
    /// 0 selects the solver's own limit.
    pub max_iter: usize,
    pub omega: f64,
    /// PDAS weight `c`.
    pub c: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let (ps, pd) = (PsorOptions::default(), PdasOptions::default());
        Self { method: Method::Pdas, tol: pd.tol, max_iter: 0, omega: ps.omega, c: pd.c }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Absent: `1e-8 · max(1, ‖∇J(g0)‖)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gtol: Option<f64>,
    pub max_iter: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub memory: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let o = OptimizerOptions::default();
        Self { gtol: o.gtol, max_iter: o.max_iter, armijo: o.armijo, backtrack: o.backtrack, memory: o.memory }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// State errors and cost gaps under refinement.
    State,
    /// Optimal controls under refinement.
    Control,
    Lipschitz,
    Parallelogram,
    CostBound,
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sweep: SweepKind,
    pub levels: usize,
    pub oracle_extra_levels: usize,
    pub trials: usize,
    pub mu_grid: Vec<f64>,
    pub seed: u64,
    pub amplitude: f64,
    pub smooth: bool,
    /// Gradient check: directions per control and difference step.
    pub directions: usize,
    pub step: f64,
    /// Initial control for `sweep = "control"`.
    pub g0: ScalarFn,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = Sampling::default();
        Self {
            sweep: SweepKind::State,
            levels: 4,
            oracle_extra_levels: 2,
            trials: 50,
            mu_grid: default_mu_grid(),
            seed: 0,
            amplitude: s.amplitude,
            smooth: s.smooth,
            directions: 10,
            step: 1e-5,
            g0: ScalarFn::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub levels: Option<usize>,
    pub method: Option<Method>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // Name the offending key when the parser knows it.
            let field = e
                .span()
                .and_then(|s| key_at(text, s.start))
                .unwrap_or_else(|| "<file>".to_string());
            ConfigError::new(&field, msg)
        })
    }

    /// Reads `path`, or the defaults when `path` is `None`, then applies
    /// overrides and validates.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::new("--config", format!("cannot read {}: {e}", p.display())))?;
                let mut cfg = Self::from_toml(&text)?;
                // Relative control files resolve against the config's directory.
                if let ControlSpec::File { file } = &mut cfg.problem.g {
                    if file.is_relative() {
                        if let Some(dir) = p.parent() {
                            *file = dir.join(&*file);
                        }
                    }
                }
                cfg
            }
            None => Self::default(),
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(d) = &ov.out {
            self.output.dir = d.clone();
        }
        if let Some(s) = ov.seed {
            self.experiment.seed = s;
        }
        if let Some(l) = ov.levels {
            self.experiment.levels = l;
        }
        if let Some(m) = ov.method {
            self.solver.method = m;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.domain;
        for (k, v) in [("domain.x0", d.x0), ("domain.x1", d.x1), ("domain.y0", d.y0), ("domain.y1", d.y1)] {
            finite(k, v)?;
        }
        if d.x1 <= d.x0 {
            return Err(ConfigError::new("domain.x1", "must exceed domain.x0"));
        }
        if d.y1 <= d.y0 {
            return Err(ConfigError::new("domain.y1", "must exceed domain.y0"));
        }
        if d.nx == 0 {
            return Err(ConfigError::new("domain.nx", "must be at least 1"));
        }
        if d.ny == 0 {
            return Err(ConfigError::new("domain.ny", "must be at least 1"));
        }
        if d.gamma1.is_empty() {
            return Err(ConfigError::new("domain.gamma1", "needs at least one side"));
        }

        let p = &self.problem;
        finite("problem.b", p.b)?;
        if p.b < 0.0 {
            return Err(ConfigError::new("problem.b", format!("must be nonnegative, got {}", p.b)));
        }
        finite("problem.weight", p.weight)?;
        if p.weight <= 0.0 {
            return Err(ConfigError::new("problem.weight", format!("must be positive, got {}", p.weight)));
        }
        p.q.validate().map_err(|e| ConfigError::new("problem.q", e.to_string()))?;
        if let ControlSpec::Preset(g) = &p.g {
            g.validate().map_err(|e| ConfigError::new("problem.g", e.to_string()))?;
        }

        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol.is_finite()) {
            return Err(ConfigError::new("solver.tol", format!("must be positive, got {}", s.tol)));
        }
        if !(s.omega > 0.0 && s.omega < 2.0) {
            return Err(ConfigError::new("solver.omega", format!("must lie in (0, 2), got {}", s.omega)));
        }
        if !(s.c > 0.0 && s.c.is_finite()) {
            return Err(ConfigError::new("solver.c", format!("must be positive, got {}", s.c)));
        }

        let o = &self.optimizer;
        if let Some(g) = o.gtol {
            if !(g > 0.0 && g.is_finite()) {
                return Err(ConfigError::new("optimizer.gtol", format!("must be positive, got {g}")));
            }
        }
        self.optimizer_options().validate().map_err(|e| ConfigError::new("optimizer", e.to_string()))?;

        let e = &self.experiment;
        self.refinement()?;
        if e.trials == 0 {
            return Err(ConfigError::new("experiment.trials", "must be at least 1"));
        }
        if let Some(mu) = e.mu_grid.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(ConfigError::new("experiment.mu_grid", format!("values must lie in [0, 1], got {mu}")));
        }
        if e.mu_grid.is_empty() {
            return Err(ConfigError::new("experiment.mu_grid", "must not be empty"));
        }
        if !(e.amplitude > 0.0 && e.amplitude.is_finite()) {
            return Err(ConfigError::new("experiment.amplitude", format!("must be positive, got {}", e.amplitude)));
        }
        if e.directions == 0 {
            return Err(ConfigError::new("experiment.directions", "must be at least 1"));
        }
        if !(e.step > 0.0 && e.step.is_finite()) {
            return Err(ConfigError::new("experiment.step", format!("must be positive, got {}", e.step)));
        }
        e.g0.validate().map_err(|err| ConfigError::new("experiment.g0", err.to_string()))?;
        Ok(())
    }

    pub fn rect(&self) -> Rect {
        let d = &self.domain;
        Rect { x0: d.x0, x1: d.x1, y0: d.y0, y1: d.y1 }
    }

    pub fn solver(&self) -> VISolver {
        let s = &self.solver;
        match s.method {
            Method::Psor => VISolver::Psor(PsorOptions { omega: s.omega, tol: s.tol, max_iter: s.max_iter }),
            Method::Pdas => {
                let max_iter = if s.max_iter == 0 { PdasOptions::default().max_iter } else { s.max_iter };
                VISolver::Pdas(PdasOptions { c: s.c, tol: s.tol, max_iter })
            }
        }
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        let o = &self.optimizer;
        OptimizerOptions {
            gtol: o.gtol,
            max_iter: o.max_iter,
            armijo: o.armijo,
            backtrack: o.backtrack,
            memory: o.memory,
        }
    }

    pub fn refinement(&self) -> Result<Refinement, ConfigError> {
        let e = &self.experiment;
        if e.levels < 3 {
            return Err(ConfigError::new("experiment.levels", format!("must be at least 3, got {}", e.levels)));
        }
        if e.oracle_extra_levels < 2 {
            return Err(ConfigError::new(
                "experiment.oracle_extra_levels",
                format!("must be at least 2, got {}", e.oracle_extra_levels),
            ));
        }
        Refinement::new(e.levels, e.oracle_extra_levels)
            .map_err(|err| ConfigError::new("experiment.levels", err.to_string()))
    }

    pub fn sampling(&self) -> Sampling {
        Sampling { amplitude: self.experiment.amplitude, smooth: self.experiment.smooth }
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(field, format!("must be finite, got {v}")))
    }
}

/// Dotted key path of the entry containing byte offset `at`: the innermost
/// `[section]` header above it plus the key on its line.
fn key_at(text: &str, at: usize) -> Option<String> {
    let before = &text[..at.min(text.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("").trim();
    let section = before[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && !l.starts_with("[["))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    let key = if line.starts_with('[') {
        None
    } else {
        line.split('=').next().map(|k| k.trim().to_string()).filter(|k| !k.is_empty())
    };
    match (section, key) {
        (Some(s), Some(k)) => Some(format!("{s}.{k}")),
        (Some(s), None) => Some(s),
        (None, k) => k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn negative_weight_names_the_field() {
        let cfg = RunConfig::from_toml("[problem]\nweight = -1.0\n").unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.field, "problem.weight");
        assert!(err.to_string().contains("problem.weight"));
    }

    #[test]
    fn wrong_type_names_the_field() {
        let err = RunConfig::from_toml("[domain]\nnx = 4\n\n[problem]\nb = \"high\"\n").unwrap_err();
        assert_eq!(err.field, "problem.b");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_toml("[solver]\nmethd = \"psor\"\n").unwrap_err();
        assert_eq!(err.field, "solver.methd");
    }

    #[test]
    fn presets_and_files_parse() {
        let cfg = RunConfig::from_toml(
            "[problem]\nq = { kind = \"affine\", a0 = 1.0, ax = 0.5, ay = 0.0 }\ng = { file = \"g.csv\" }\n",
        )
        .unwrap();
        assert_eq!(cfg.problem.g, ControlSpec::File { file: "g.csv".into() });
        let cfg = RunConfig::from_toml("[problem.g]\nkind = \"constant\"\nvalue = -3.0\n").unwrap();
        assert_eq!(cfg.problem.g, ControlSpec::Preset(ScalarFn::constant(-3.0)));
    }

    #[test]
    fn overrides_win_and_snapshot_round_trips() {
        let mut cfg = RunConfig::from_toml("[experiment]\nseed = 1\nlevels = 5\n").unwrap();
        cfg.apply(&Overrides { seed: Some(9), levels: Some(3), method: Some(Method::Psor), out: None });
        assert_eq!((cfg.experiment.seed, cfg.experiment.levels, cfg.solver.method), (9, 3, Method::Psor));
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn bad_mu_grid_and_levels_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.experiment.mu_grid = vec![0.5, 1.5];
        assert_eq!(cfg.validate().unwrap_err().field, "experiment.mu_grid");
        let mut cfg = RunConfig::default();
        cfg.experiment.levels = 2;
        assert_eq!(cfg.validate().unwrap_err().field, "experiment.levels");
    }
}
