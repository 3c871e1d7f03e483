//! Learning-rate sweeps.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use precond_core::Error;

use crate::config::split_list;
use crate::error::{CliError, CliResult};
use crate::experiment::{fmt_f64, Experiment};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    /// `None` when the run diverged.
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best_alpha: Option<f64>,
    /// `2 / (λ_min + λ_max)` when the Hessian is available.
    pub optimal_lr: Option<f64>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> CliResult<()> {
        writeln!(out, "alpha,final_loss,status")?;
        for r in &self.rows {
            match r.final_loss {
                Some(l) => writeln!(out, "{},{},ok", fmt_f64(r.alpha), fmt_f64(l))?,
                None => writeln!(out, "{},,diverged", fmt_f64(r.alpha))?,
            }
        }
        Ok(())
    }
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>14} {:>24}", "alpha", "final loss")?;
        for r in &self.rows {
            let mark = if Some(r.alpha) == self.best_alpha {
                "  <- best"
            } else {
                ""
            };
            match r.final_loss {
                Some(l) => writeln!(f, "{:>14.6e} {:>24.16e}{mark}", r.alpha, l)?,
                None => writeln!(f, "{:>14.6e} {:>24}", r.alpha, "diverged")?,
            }
        }
        match self.optimal_lr {
            Some(a) => writeln!(f, "theoretical optimum 2/(lambda_min+lambda_max): {a:.6e}"),
            None => writeln!(f, "theoretical optimum: not available for this setup"),
        }
    }
}

pub fn parse_alphas(s: &str) -> CliResult<Vec<f64>> {
    let alphas: Vec<f64> = split_list(s)
        .map(|a| {
            a.parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0 && x.is_finite())
                .ok_or_else(|| CliError::validation(format!("bad learning rate '{a}'")))
        })
        .collect::<CliResult<_>>()?;
    if alphas.is_empty() {
        return Err(CliError::validation("--alphas needs at least one value"));
    }
    Ok(alphas)
}

/// Runs every learning rate (concurrently) and picks the lowest final loss.
/// Rows come back sorted by `α`.
pub fn cmd_sweep(exp: &Experiment, alphas: &[f64]) -> CliResult<SweepReport> {
    let mut alphas = alphas.to_vec();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let rows: Vec<SweepRow> = alphas
        .par_iter()
        .map(|&alpha| match exp.train_with_alpha(alpha) {
            Ok(rec) => Ok(SweepRow {
                alpha,
                final_loss: Some(rec.summary.final_loss),
            }),
            Err(CliError::Core(Error::Diverged { .. })) => Ok(SweepRow {
                alpha,
                final_loss: None,
            }),
            Err(e) => Err(e),
        })
        .collect::<CliResult<_>>()?;
    let best_alpha = rows
        .iter()
        .filter_map(|r| r.final_loss.map(|l| (l, r.alpha)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, a)| a);
    Ok(SweepReport {
        rows,
        best_alpha,
        optimal_lr: exp.optimal_lr(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn best_alpha_is_near_the_optimum_on_quadratics() {
        for seed in 0..3 {
            let cfg = ExperimentConfig::parse(&format!(
                "model.dim = 8\nmodel.kappa = 10\nrun.steps = 200\nrun.seed = {seed}"
            ))
            .unwrap();
            let exp = Experiment::build(cfg).unwrap();
            let alphas: Vec<f64> = (-30..=10).map(|k| 10f64.powf(k as f64 / 10.0)).collect();
            let report = cmd_sweep(&exp, &alphas).unwrap();
            let best = report.best_alpha.unwrap();
            let opt = report.optimal_lr.unwrap();
            assert!(
                best / opt <= 2.0 && opt / best <= 2.0,
                "best {best}, optimum {opt}"
            );
            assert!(report.rows.iter().any(|r| r.final_loss.is_none()));
        }
    }

    #[test]
    fn alpha_parsing() {
        assert_eq!(parse_alphas("0.1, 1e-2;3").unwrap(), vec![0.1, 0.01, 3.0]);
        assert!(parse_alphas("").is_err());
        assert!(parse_alphas("0.1,-1").is_err());
        assert!(parse_alphas("x").is_err());
    }

    #[test]
    fn csv_marks_divergence() {
        let report = SweepReport {
            rows: vec![
                SweepRow {
                    alpha: 0.1,
                    final_loss: Some(1.0),
                },
                SweepRow {
                    alpha: 10.0,
                    final_loss: None,
                },
            ],
            best_alpha: Some(0.1),
            optimal_lr: None,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with(",,diverged"));
        assert!(report.to_string().contains("<- best"));
    }
}
