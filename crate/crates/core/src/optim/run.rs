use std::time::Instant;

use crate::error::{Error, Result};
use crate::matrix::{distance, norm};
use crate::models::{Objective, ParamVector};

/// Losses above this abort a run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Anything that turns `(p, ∇L(p))` into the next iterate.
pub trait Stepper {
    fn step(&mut self, model: &dyn Objective, p: &[f64], g: &[f64]) -> Result<ParamVector>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub dist_to_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub final_dist_to_opt: Option<f64>,
    pub empirical_rate: Option<f64>,
    pub wall_time_secs: f64,
}

/// One trajectory: a row for the starting point and one per step.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rows: Vec<StepRow>,
    pub summary: RunSummary,
    pub final_params: ParamVector,
}

impl RunRecord {
    pub fn distances(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.dist_to_opt).collect()
    }
}

/// Runs `steps` updates from `p0`, recording loss, gradient norm and, when the
/// model knows its minimizer, the distance to it.
pub fn run(
    model: &dyn Objective,
    stepper: &mut dyn Stepper,
    steps: usize,
    p0: &[f64],
) -> Result<RunRecord> {
    model.check_dim(p0)?;
    let start = Instant::now();
    let optimum = model.optimum();
    let mut p = p0.to_vec();
    let mut rows = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let loss = model.loss(&p)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, loss });
        }
        let g = model.gradient(&p)?;
        rows.push(StepRow {
            step,
            loss,
            grad_norm: norm(&g),
            dist_to_opt: optimum.as_ref().map(|o| distance(&p, o)),
        });
        if step == steps {
            break;
        }
        p = stepper.step(model, &p, &g)?;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                step: step + 1,
                loss: f64::NAN,
            });
        }
    }
    let last = *rows.last().expect("at least the initial row");
    let mut record = RunRecord {
        rows,
        summary: RunSummary {
            steps,
            final_loss: last.loss,
            final_grad_norm: last.grad_norm,
            final_dist_to_opt: last.dist_to_opt,
            empirical_rate: None,
            wall_time_secs: 0.0,
        },
        final_params: p,
    };
    if optimum.is_some() && steps > 0 {
        record.summary.empirical_rate = empirical_rate(&record, 0.5).ok();
    }
    record.summary.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Distances at or below this fraction of the initial distance count as
/// converged to round-off.
const CONVERGED_FRACTION: f64 = 1e-14;

/// Geometric mean of the successive distance ratios `‖p_{t+1} − p*‖ / ‖p_t − p*‖`
/// over the trailing `tail_fraction` of the trajectory.
///
/// The trajectory is cut where the distance first reaches round-off level; a
/// run that gets there in one step reports 0.
pub fn empirical_rate(record: &RunRecord, tail_fraction: f64) -> Result<f64> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::validation("tail_fraction must lie in (0, 1]"));
    }
    let dists = record
        .distances()
        .ok_or_else(|| Error::validation("run has no distances to the optimum"))?;
    let Some(&d0) = dists.first() else {
        return Err(Error::validation("empty run"));
    };
    if d0 == 0.0 {
        return Ok(0.0);
    }
    let floor = CONVERGED_FRACTION * d0;
    let live = dists.iter().take_while(|&&d| d > floor).count();
    if live < 2 {
        return Ok(0.0);
    }
    let dists = &dists[..live];
    let ratios: Vec<f64> = dists.windows(2).map(|w| w[1] / w[0]).collect();
    let tail = ((ratios.len() as f64 * tail_fraction).ceil() as usize).clamp(1, ratios.len());
    let tail = &ratios[ratios.len() - tail..];
    if let Some(bad) = tail.iter().find(|&&r| r >= 1.5) {
        return Err(Error::numerical(format!(
            "distances are not contracting (ratio {bad:.3} in the tail)"
        )));
    }
    let log_mean = tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64;
    Ok(log_mean.exp())
}
