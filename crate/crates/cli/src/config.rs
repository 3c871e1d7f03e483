//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! model.kind = mlp
//! model.hidden = 8,4
//! optim.kind = adam
//! optim.alpha = 0.01
//! run.steps = 200
//! ```
//!
//! Unknown and duplicate keys are rejected. List values accept `,` or `;`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use precond_core::bnp::{Averaging, DEFAULT_MOMENTUM, DEFAULT_SIGMA_FLOOR};
use precond_core::models::{Activation, LossKind};
use precond_core::optim::{InitConvention, OptimizerConfig};
use precond_core::regularize::{RegKind, RegMode};

use crate::data::{SyntheticSpec, Task};
use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "PRECOND_LAB_SEED";

#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Quadratic {
        dim: usize,
        kappa: f64,
    },
    Linear,
    Logistic,
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
        loss: LossKind,
    },
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Quadratic { .. } => "quadratic",
            ModelConfig::Linear => "linear",
            ModelConfig::Logistic => "logistic",
            ModelConfig::Mlp { .. } => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Gd,
    AdaGrad,
    RmsProp,
    Adam,
}

impl OptimKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimKind::Gd => "gd",
            OptimKind::AdaGrad => "adagrad",
            OptimKind::RmsProp => "rmsprop",
            OptimKind::Adam => "adam",
        }
    }

    pub fn is_adaptive(self) -> bool {
        self != OptimKind::Gd
    }
}

impl FromStr for OptimKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "gd" => OptimKind::Gd,
            "adagrad" => OptimKind::AdaGrad,
            "rmsprop" => OptimKind::RmsProp,
            "adam" => OptimKind::Adam,
            other => return Err(CliError::validation(format!("unknown optimizer '{other}'"))),
        })
    }
}

/// How a fixed preconditioner is derived from the Hessian at the start point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedKind {
    /// `M = H⁻¹`.
    InverseHessian,
    /// `M = diag(1 / H_ii)`.
    Jacobi,
    /// `M = diag(1 / ‖h_i‖)` from the Hessian row norms.
    RowNorm,
}

impl FixedKind {
    pub fn name(self) -> &'static str {
        match self {
            FixedKind::InverseHessian => "inverse_hessian",
            FixedKind::Jacobi => "jacobi",
            FixedKind::RowNorm => "row_norm",
        }
    }
}

impl FromStr for FixedKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Ok(match s {
            "inverse_hessian" => FixedKind::InverseHessian,
            "jacobi" => FixedKind::Jacobi,
            "row_norm" => FixedKind::RowNorm,
            other => {
                return Err(CliError::validation(format!(
                    "unknown fixed preconditioner '{other}'"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PrecondConfig {
    None,
    Fixed(FixedKind),
    /// The optimizer's own diagonal preconditioner.
    Adaptive,
    Bnp {
        sigma_floor: f64,
        averaging: Averaging,
    },
}

impl PrecondConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PrecondConfig::None => "none",
            PrecondConfig::Fixed(_) => "fixed",
            PrecondConfig::Adaptive => "adaptive",
            PrecondConfig::Bnp { .. } => "bnp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    None,
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, targets: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub optim: OptimKind,
    pub optimizer: OptimizerConfig,
    pub reg: RegMode,
    pub precond: PrecondConfig,
    pub steps: usize,
    pub seed: u64,
    pub data: DataSource,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut e = Entries::parse(text)?;
        let cfg = Self::from_entries(&mut e)?;
        e.finish()?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Replaces the seed everywhere it is used, including synthetic data.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let DataSource::Synthetic(spec) = &mut self.data {
            spec.seed = seed;
        }
        self
    }

    fn from_entries(e: &mut Entries) -> CliResult<Self> {
        let model = match e.str_or("model.kind", "quadratic")?.as_str() {
            "quadratic" => ModelConfig::Quadratic {
                dim: e.parse_or("model.dim", 10)?,
                kappa: e.parse_or("model.kappa", 100.0)?,
            },
            "linear" => ModelConfig::Linear,
            "logistic" => ModelConfig::Logistic,
            "mlp" => ModelConfig::Mlp {
                hidden: e.list_or("model.hidden", vec![8])?,
                activation: e.core_parse_or("model.activation", Activation::Tanh)?,
                loss: e.core_parse_or("model.loss", LossKind::SquaredError)?,
            },
            other => {
                return Err(CliError::validation(format!(
                    "unknown model.kind '{other}'"
                )))
            }
        };

        let optim: OptimKind = e.parse_or("optim.kind", OptimKind::Gd)?;
        let defaults = OptimizerConfig::default();
        let optimizer = OptimizerConfig {
            alpha: e.parse_or("optim.alpha", defaults.alpha)?,
            rho: e.parse_or("optim.rho", defaults.rho)?,
            rho_hat: e.parse_or("optim.rho_hat", defaults.rho_hat)?,
            epsilon: e.parse_or("optim.epsilon", defaults.epsilon)?,
            init: e.core_parse_or::<InitConvention>("optim.init", defaults.init)?,
        };
        optimizer.validate()?;

        let reg_kind: RegKind = e.core_parse_or("reg.kind", RegKind::None)?;
        let reg = RegMode::new(reg_kind, e.parse_or("reg.lambda", 0.0)?)?;

        let default_precond = if optim.is_adaptive() {
            "adaptive"
        } else {
            "none"
        };
        let precond = match e.str_or("precond.kind", default_precond)?.as_str() {
            "none" => PrecondConfig::None,
            "adaptive" => PrecondConfig::Adaptive,
            "fixed" => {
                PrecondConfig::Fixed(e.parse_or("precond.fixed", FixedKind::InverseHessian)?)
            }
            "bnp" => {
                let sigma_floor = e.parse_or("precond.sigma_floor", DEFAULT_SIGMA_FLOOR)?;
                let averaging = match e.str_or("precond.averaging", "per_batch")?.as_str() {
                    "per_batch" => Averaging::PerBatch,
                    "running" => {
                        Averaging::Running(e.parse_or("precond.momentum", DEFAULT_MOMENTUM)?)
                    }
                    other => {
                        return Err(CliError::validation(format!(
                            "unknown precond.averaging '{other}'"
                        )))
                    }
                };
                PrecondConfig::Bnp {
                    sigma_floor,
                    averaging,
                }
            }
            other => {
                return Err(CliError::validation(format!(
                    "unknown precond.kind '{other}'"
                )))
            }
        };

        let steps = e.parse_or("run.steps", 100)?;
        let seed = e.parse_or("run.seed", 0u64)?;

        let default_task = match &model {
            ModelConfig::Logistic => Task::Logistic,
            ModelConfig::Mlp {
                loss: LossKind::CrossEntropy,
                ..
            } => Task::Logistic,
            _ => Task::Linear,
        };
        let default_source = match model {
            ModelConfig::Quadratic { .. } => "none",
            _ => "synthetic",
        };
        let data = match e.str_or("data.source", default_source)?.as_str() {
            "none" => DataSource::None,
            "synthetic" => {
                let features: usize = e.parse_or("data.features", 3)?;
                let mut spec = SyntheticSpec::new(features, e.parse_or("data.samples", 100)?, seed);
                spec.scales = e.list_or("data.scales", spec.scales)?;
                spec.means = e.list_or("data.means", spec.means)?;
                spec.noise = e.parse_or("data.noise", spec.noise)?;
                spec.task = e.parse_or("data.task", default_task)?;
                spec.validate()?;
                DataSource::Synthetic(spec)
            }
            "csv" => DataSource::Csv {
                path: PathBuf::from(e.required("data.path")?),
                targets: e.list_or("data.targets", Vec::<String>::new())?,
            },
            other => {
                return Err(CliError::validation(format!(
                    "unknown data.source '{other}'"
                )))
            }
        };

        let output_dir = e.get("output.dir").map(PathBuf::from);

        Ok(Self {
            model,
            optim,
            optimizer,
            reg,
            precond,
            steps,
            seed,
            data,
            output_dir,
        })
    }

    fn check(&self) -> CliResult<()> {
        let quadratic = matches!(self.model, ModelConfig::Quadratic { .. });
        if let ModelConfig::Quadratic { dim, kappa } = self.model {
            if dim == 0 {
                return Err(CliError::validation("model.dim must be at least 1"));
            }
            if !(kappa >= 1.0 && kappa.is_finite()) {
                return Err(CliError::validation("model.kappa must be >= 1"));
            }
        }
        if let ModelConfig::Mlp { hidden, .. } = &self.model {
            if hidden.contains(&0) {
                return Err(CliError::validation(
                    "model.hidden widths must be at least 1",
                ));
            }
        }
        match (quadratic, &self.data) {
            (true, DataSource::None)
            | (false, DataSource::Synthetic(_) | DataSource::Csv { .. }) => {}
            (true, _) => return Err(CliError::validation("quadratic models take no data")),
            (false, DataSource::None) => {
                return Err(CliError::validation(format!(
                    "{} needs data",
                    self.model.name()
                )))
            }
        }
        match &self.precond {
            PrecondConfig::Adaptive if !self.optim.is_adaptive() => {
                return Err(CliError::validation(
                    "precond.kind=adaptive needs optim.kind adagrad, rmsprop or adam",
                ))
            }
            PrecondConfig::None | PrecondConfig::Fixed(_) | PrecondConfig::Bnp { .. }
                if self.optim.is_adaptive() =>
            {
                return Err(CliError::validation(format!(
                    "precond.kind={} needs optim.kind=gd",
                    self.precond.name()
                )))
            }
            PrecondConfig::Bnp { sigma_floor, .. } => {
                if quadratic {
                    return Err(CliError::validation(
                        "bnp needs a linear, logistic or mlp model",
                    ));
                }
                if self.reg.kind() != RegKind::None {
                    return Err(CliError::validation(
                        "bnp runs do not combine with regularization",
                    ));
                }
                if !(*sigma_floor > 0.0) {
                    return Err(CliError::validation("precond.sigma_floor must be positive"));
                }
            }
            _ => {}
        }
        if self.optim.is_adaptive()
            && matches!(self.reg.kind(), RegKind::GradRegInP | RegKind::GradRegInZ)
        {
            return Err(CliError::validation(format!(
                "{} needs optim.kind=gd",
                self.reg.kind()
            )));
        }
        Ok(())
    }
}

/// Seed precedence: command-line flag, then the environment, then the config.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| {
            CliError::validation(format!("{SEED_ENV} must be an unsigned integer, got '{v}'"))
        }),
        None => Ok(config),
    }
}

pub fn seed_from_env() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    used: BTreeSet<String>,
}

impl Entries {
    fn parse(text: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::validation(format!(
                    "line {line_no}: expected 'key = value', got '{line}'"
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::validation(format!("line {line_no}: empty key")));
            }
            if let Some((first, _)) =
                map.insert(key.to_string(), (line_no, value.trim().to_string()))
            {
                return Err(CliError::validation(format!(
                    "line {line_no}: '{key}' already set on line {first}"
                )));
            }
        }
        Ok(Self {
            map,
            used: BTreeSet::new(),
        })
    }

    fn get(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.map.get(key).map(|(_, v)| v.clone())
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map(|(l, _)| *l).unwrap_or(0)
    }

    fn required(&mut self, key: &str) -> CliResult<String> {
        self.get(key)
            .ok_or_else(|| CliError::validation(format!("missing required key '{key}'")))
    }

    fn str_or(&mut self, key: &str, default: &str) -> CliResult<String> {
        Ok(self.get(key).unwrap_or_else(|| default.to_string()))
    }

    fn parse_or<T>(&mut self, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|err| {
                CliError::validation(format!("line {}: {key} = '{v}': {err}", self.line(key)))
            }),
        }
    }

    fn core_parse_or<T>(&mut self, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr<Err = precond_core::Error>,
    {
        self.parse_or(key, default)
    }

    fn list_or<T>(&mut self, key: &str, default: Vec<T>) -> CliResult<Vec<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => split_list(&v)
                .map(|item| {
                    item.parse().map_err(|err| {
                        CliError::validation(format!(
                            "line {}: {key}: bad item '{item}': {err}",
                            self.line(key)
                        ))
                    })
                })
                .collect(),
        }
    }

    fn finish(&self) -> CliResult<()> {
        let unknown: Vec<String> = self
            .map
            .iter()
            .filter(|(k, _)| !self.used.contains(*k))
            .map(|(k, (line, _))| format!("'{k}' (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::validation(format!(
                "unknown or unused keys: {}",
                unknown.join(", ")
            )))
        }
    }
}

/// Splits on `,` or `;`, trimming and dropping empty items.
pub fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split([',', ';']).map(str::trim).filter(|s| !s.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_a_quadratic_gd_run() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(
            cfg.model,
            ModelConfig::Quadratic {
                dim: 10,
                kappa: 100.0
            }
        );
        assert_eq!(cfg.optim, OptimKind::Gd);
        assert_eq!(cfg.precond, PrecondConfig::None);
        assert_eq!(cfg.data, DataSource::None);
        assert_eq!(cfg.steps, 100);
    }

    #[test]
    fn full_mlp_config() {
        let text = "
            # an mlp run
            model.kind = mlp
            model.hidden = 6;4
            model.activation = sigmoid
            model.loss = cross_entropy
            optim.kind = adam
            optim.alpha = 0.005
            optim.init = zero_init_bias_corrected
            reg.kind = decoupled_weight_decay
            reg.lambda = 0.01
            run.steps = 50
            run.seed = 9
            data.features = 4
            data.samples = 64
            data.scales = 1,10,100,1000
            output.dir = out
        ";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(
            cfg.model,
            ModelConfig::Mlp {
                hidden: vec![6, 4],
                activation: Activation::Sigmoid,
                loss: LossKind::CrossEntropy
            }
        );
        assert_eq!(cfg.precond, PrecondConfig::Adaptive);
        assert_eq!(cfg.optimizer.init, InitConvention::ZeroInitBiasCorrected);
        let DataSource::Synthetic(spec) = &cfg.data else {
            panic!("expected synthetic data")
        };
        assert_eq!(spec.task, Task::Logistic);
        assert_eq!(spec.scales, vec![1.0, 10.0, 100.0, 1000.0]);
        assert_eq!(spec.seed, 9);
        assert_eq!(cfg.output_dir, Some(PathBuf::from("out")));
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let err = ExperimentConfig::parse("optim.alhpa = 0.1").unwrap_err();
        assert!(err.to_string().contains("optim.alhpa"), "{err}");
        let err = ExperimentConfig::parse("run.steps = 1\nrun.steps = 2").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(ExperimentConfig::parse("garbage").is_err());
    }

    #[test]
    fn rejects_inconsistent_combinations() {
        for text in [
            "optim.kind = adam\nprecond.kind = fixed",
            "precond.kind = adaptive",
            "precond.kind = bnp",
            "optim.kind = rmsprop\nreg.kind = grad_reg_in_z\nreg.lambda = 0.1",
            "model.kind = linear\ndata.source = none",
            "data.source = synthetic",
            "reg.kind = none\nreg.lambda = 1",
            "model.kind = mlp\nmodel.activation = relu",
            "data.source = csv",
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}: {err}");
        }
    }

    #[test]
    fn bad_numbers_name_the_line() {
        let err = ExperimentConfig::parse("\n\noptim.alpha = fast").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), 3).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), 3).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, 3).unwrap(), 3);
        assert!(resolve_seed(None, Some("x"), 3).is_err());
    }

    #[test]
    fn with_seed_reaches_synthetic_data() {
        let cfg = ExperimentConfig::parse("model.kind = linear\nrun.seed = 1")
            .unwrap()
            .with_seed(77);
        let DataSource::Synthetic(spec) = cfg.data else {
            panic!()
        };
        assert_eq!(spec.seed, 77);
    }
}
