//! Turns a configuration into a model, a start point and an update rule.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use precond_core::bnp::{layer_conditioning_report, BnpTrainer};
use precond_core::linalg::{condition_number, sym_eigvals};
use precond_core::matrix::norm;
use precond_core::models::{LinearRegression, LogisticRegression, Mlp, MlpSpec, Quadratic};
use precond_core::optim::{
    optimal_lr, precond_kappa, run, theoretical_rate, FixedPreconditioner, Method, Optimizer,
    RunRecord, StepRow, Stepper,
};
use precond_core::regularize::Regularized;
use precond_core::{Dataset, Matrix, Objective, ParamVector, SplitMix64};

use crate::config::{
    DataSource, ExperimentConfig, FixedKind, ModelConfig, OptimKind, PrecondConfig,
};
use crate::data::{generate_synthetic, load_csv};
use crate::error::{CliError, CliResult};

/// Hessian-based diagnostics are skipped above this many parameters.
const MAX_DIAGNOSTIC_DIM: usize = 200;

pub struct Experiment {
    config: ExperimentConfig,
    model: Box<dyn Objective>,
    mlp: Option<Mlp>,
    p0: ParamVector,
    fixed: Option<FixedPreconditioner>,
}

impl Experiment {
    /// Builds the model and start point. Quadratics draw `A` and `p0` from
    /// the seed; networks draw their initial weights from `seed + 1` so the
    /// data and the weights come from separate streams.
    pub fn build(config: ExperimentConfig) -> CliResult<Self> {
        let (model, mlp, p0): (Box<dyn Objective>, Option<Mlp>, ParamVector) = match &config.model {
            ModelConfig::Quadratic { dim, kappa } => {
                let mut rng = SplitMix64::new(config.seed);
                let q = Quadratic::random_spd(*dim, *kappa, &mut rng);
                let p0 = rng.normal_vec(*dim);
                (Box::new(q), None, p0)
            }
            ModelConfig::Linear => {
                let lr = LinearRegression::new(load_data(&config)?);
                let mlp = lr.as_mlp();
                let p0 = vec![0.0; lr.dim()];
                (Box::new(lr), Some(mlp), p0)
            }
            ModelConfig::Logistic => {
                let lr = LogisticRegression::new(load_data(&config)?)?;
                let mlp = lr.as_mlp();
                let p0 = vec![0.0; lr.dim()];
                (Box::new(lr), Some(mlp), p0)
            }
            ModelConfig::Mlp {
                hidden,
                activation,
                loss,
            } => {
                let data = load_data(&config)?;
                let mut widths = vec![data.features()];
                widths.extend(hidden);
                widths.push(data.outputs());
                let spec = MlpSpec::new(widths, *activation, *loss)?;
                let p0 = spec.init_params(&mut SplitMix64::new(config.seed.wrapping_add(1)));
                let mlp = Mlp::new(spec, data)?;
                (Box::new(mlp.clone()), Some(mlp), p0)
            }
        };
        let fixed = match config.precond {
            PrecondConfig::Fixed(kind) => Some(fixed_preconditioner(kind, &model.hessian(&p0)?)?),
            _ => None,
        };
        Ok(Self {
            config,
            model,
            mlp,
            p0,
            fixed,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &dyn Objective {
        self.model.as_ref()
    }

    pub fn initial_params(&self) -> &[f64] {
        &self.p0
    }

    fn stepper(&self, alpha: f64) -> CliResult<Box<dyn Stepper>> {
        let mut cfg = self.config.optimizer;
        cfg.alpha = alpha;
        if let PrecondConfig::Bnp {
            sigma_floor,
            averaging,
        } = self.config.precond
        {
            let mlp = self.mlp.clone().expect("checked: bnp needs a data model");
            return Ok(Box::new(BnpTrainer::new(
                mlp,
                alpha,
                sigma_floor,
                averaging,
            )?));
        }
        let method = match (self.config.optim, &self.fixed) {
            (OptimKind::Gd, Some(m)) => Method::Preconditioned(m.clone()),
            (OptimKind::Gd, None) => Method::Gd,
            (OptimKind::AdaGrad, _) => Method::AdaGrad,
            (OptimKind::RmsProp, _) => Method::RmsProp,
            (OptimKind::Adam, _) => Method::Adam,
        };
        let optimizer = Optimizer::new(method, cfg, self.model.dim())?;
        Ok(Box::new(Regularized::new(optimizer, self.config.reg)?))
    }

    /// Trains with the configured learning rate.
    pub fn train(&self) -> CliResult<RunRecord> {
        self.train_with_alpha(self.config.optimizer.alpha)
    }

    pub fn train_with_alpha(&self, alpha: f64) -> CliResult<RunRecord> {
        let mut stepper = self.stepper(alpha)?;
        Ok(run(
            self.model(),
            stepper.as_mut(),
            self.config.steps,
            &self.p0,
        )?)
    }

    /// Hessian at the start point, when small enough to form.
    fn start_hessian(&self) -> Option<Matrix> {
        if self.model.dim() > MAX_DIAGNOSTIC_DIM {
            return None;
        }
        self.model.hessian(&self.p0).ok()
    }

    /// Conditioning at the start point.
    pub fn diagnostics(&self) -> Diagnostics {
        let hessian = self.start_hessian();
        let kappa_hessian = hessian.as_ref().and_then(|h| condition_number(h).ok());
        let kappa_preconditioned = match (&self.fixed, &hessian) {
            (Some(m), Some(h)) => precond_kappa(m, h).ok(),
            _ => None,
        };
        let bnp_input_layer_kappa = match (&self.config.precond, &self.mlp) {
            (PrecondConfig::Bnp { sigma_floor, .. }, Some(mlp)) => {
                layer_conditioning_report(mlp, &self.p0, 1, 0, *sigma_floor)
                    .ok()
                    .map(|(a, b)| [a, b])
            }
            _ => None,
        };
        let governing = match self.config.precond {
            PrecondConfig::None => kappa_hessian,
            PrecondConfig::Fixed(_) => kappa_preconditioned,
            _ => None,
        };
        Diagnostics {
            kappa_hessian,
            kappa_preconditioned,
            theoretical_rate: governing.and_then(|k| theoretical_rate(k).ok()),
            bnp_input_layer_kappa,
        }
    }

    /// `2 / (λ_min + λ_max)` of the Hessian seen by the update, for plain
    /// and fixed-preconditioned gradient descent.
    pub fn optimal_lr(&self) -> Option<f64> {
        let h = self.start_hessian()?;
        let effective = match (&self.config.precond, &self.fixed) {
            (PrecondConfig::None, _) => h,
            (PrecondConfig::Fixed(_), Some(m)) => {
                let p = m.factor();
                p.transpose().matmul(&h).ok()?.matmul(p).ok()?.symmetrized()
            }
            _ => return None,
        };
        let eig = sym_eigvals(&effective).ok()?;
        (eig.min() > 0.0).then(|| optimal_lr(eig.min(), eig.max()))
    }

    pub fn summary(&self, record: &RunRecord, alpha: f64) -> Summary {
        let cfg = &self.config;
        let s = &record.summary;
        Summary {
            model: cfg.model.name().into(),
            optimizer: cfg.optim.name().into(),
            preconditioner: match cfg.precond {
                PrecondConfig::Fixed(kind) => format!("fixed:{}", kind.name()),
                ref other => other.name().into(),
            },
            regularization: cfg.reg.kind().name().into(),
            lambda: cfg.reg.lambda(),
            alpha,
            steps: s.steps,
            seed: cfg.seed,
            parameters: self.model.dim(),
            final_loss: s.final_loss,
            final_grad_norm: s.final_grad_norm,
            final_dist_to_opt: s.final_dist_to_opt,
            empirical_rate: s.empirical_rate,
            diagnostics: self.diagnostics(),
            wall_time_secs: s.wall_time_secs,
        }
    }
}

fn load_data(config: &ExperimentConfig) -> CliResult<Dataset> {
    match &config.data {
        DataSource::Synthetic(spec) => generate_synthetic(spec),
        DataSource::Csv { path, targets } => {
            if targets.is_empty() {
                return Err(CliError::validation(
                    "training on CSV data needs data.targets",
                ));
            }
            load_csv(path, targets)
        }
        DataSource::None => Err(CliError::validation("model needs data")),
    }
}

fn fixed_preconditioner(kind: FixedKind, h: &Matrix) -> CliResult<FixedPreconditioner> {
    let inverse_diag = |v: Vec<f64>, what: &str| -> CliResult<FixedPreconditioner> {
        if let Some(i) = v.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(precond_core::Error::Numerical(format!(
                "{what} {i} of the start Hessian is not positive"
            ))
            .into());
        }
        Ok(FixedPreconditioner::diagonal(
            &v.iter().map(|x| 1.0 / x).collect::<Vec<_>>(),
        )?)
    };
    match kind {
        FixedKind::InverseHessian => Ok(FixedPreconditioner::inverse_of(h)?),
        FixedKind::Jacobi => inverse_diag(h.diagonal(), "diagonal entry"),
        FixedKind::RowNorm => inverse_diag((0..h.rows()).map(|i| norm(h.row(i))).collect(), "row"),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub kappa_hessian: Option<f64>,
    pub kappa_preconditioned: Option<f64>,
    pub theoretical_rate: Option<f64>,
    /// `[raw, preconditioned]` for unit 0 of the first layer.
    pub bnp_input_layer_kappa: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub model: String,
    pub optimizer: String,
    pub preconditioner: String,
    pub regularization: String,
    pub lambda: f64,
    pub alpha: f64,
    pub steps: usize,
    pub seed: u64,
    pub parameters: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub final_dist_to_opt: Option<f64>,
    pub empirical_rate: Option<f64>,
    pub diagnostics: Diagnostics,
    pub wall_time_secs: f64,
}

/// `{:.16e}`: 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Per-step log with columns `step,loss,grad_norm,dist_to_opt`.
pub fn write_steps_csv<W: Write>(rows: &[StepRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
    w.write_record(["step", "loss", "grad_norm", "dist_to_opt"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            fmt_f64(r.loss),
            fmt_f64(r.grad_norm),
            r.dist_to_opt.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub const STEPS_FILE: &str = "steps.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Trains and writes `steps.csv` and `summary.json` into `dir`.
pub fn cmd_train(config: ExperimentConfig, dir: &Path) -> CliResult<Summary> {
    let exp = Experiment::build(config)?;
    let record = exp.train()?;
    let summary = exp.summary(&record, exp.config().optimizer.alpha);
    std::fs::create_dir_all(dir)?;
    write_steps_csv(&record.rows, std::fs::File::create(dir.join(STEPS_FILE))?)?;
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    std::fs::write(dir.join(SUMMARY_FILE), json + "\n")?;
    Ok(summary)
}
