use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::staggered::{staggered_step_ctx, LogContext};
use super::{LogRecord, SolveHistory, SolverLog, StaggeredConfig, StaggeredProblem, StepFailure, StepOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("time step refinement exhausted at t = {time} (dt = {dt}): {cause}")]
pub struct RefinementExhausted {
    pub time: f64,
    pub dt: f64,
    pub cause: StepFailure,
}

/// Halves `dt` on failure and doubles it back (never beyond the initial value)
/// after a run of cheap accepted steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeStepController {
    pub dt_initial: f64,
    pub dt: f64,
    pub level: usize,
    pub accepted_in_row: usize,
    pub max_level: usize,
    pub n_recoarsen: usize,
    pub n_field_iter_coarsen: usize,
}

impl TimeStepController {
    pub fn new(cfg: &StaggeredConfig) -> Self {
        Self {
            dt_initial: cfg.initial_dt,
            dt: cfg.initial_dt,
            level: 0,
            accepted_in_row: 0,
            max_level: cfg.max_time_refinement_level,
            n_recoarsen: cfg.n_timesteps_recoarsen,
            n_field_iter_coarsen: cfg.n_field_iter_coarsen,
        }
    }

    /// Returns the halved step, or `None` once the refinement budget is spent.
    pub fn on_failure(&mut self) -> Option<f64> {
        self.accepted_in_row = 0;
        if self.level >= self.max_level {
            return None;
        }
        self.level += 1;
        self.dt *= 0.5;
        Some(self.dt)
    }

    pub fn on_success(&mut self, outcome: &StepOutcome) -> f64 {
        self.accepted_in_row += 1;
        if self.level > 0
            && self.accepted_in_row >= self.n_recoarsen
            && outcome.field_iters_used <= self.n_field_iter_coarsen
        {
            self.level -= 1;
            self.dt = (self.dt * 2.0).min(self.dt_initial);
            self.accepted_in_row = 0;
        }
        self.dt
    }
}

/// Replays a history of step attempts (`None` for a failed attempt) and
/// returns the next step size, or `None` once refinement is exhausted.
pub fn adapt_timestep(history: &[Option<StepOutcome>], cfg: &StaggeredConfig) -> Option<f64> {
    let mut c = TimeStepController::new(cfg);
    for attempt in history {
        match attempt {
            Some(o) => {
                c.on_success(o);
            }
            None => {
                c.on_failure()?;
            }
        }
    }
    Some(c.dt)
}

/// Time-marching state of a run; serializable for checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    pub time: f64,
    pub step: usize,
    pub horizon: f64,
    pub controller: TimeStepController,
    pub history: SolveHistory,
}

impl Driver {
    pub fn new(cfg: &StaggeredConfig, horizon: f64) -> Self {
        Self {
            time: 0.0,
            step: 0,
            horizon,
            controller: TimeStepController::new(cfg),
            history: SolveHistory::default(),
        }
    }

    pub fn finished(&self) -> bool {
        self.time >= self.horizon * (1.0 - 1e-12)
    }

    /// Advances by one accepted step, refining `dt` as needed.
    pub fn advance<P: StaggeredProblem + ?Sized>(
        &mut self,
        problem: &mut P,
        cfg: &StaggeredConfig,
        log: &mut SolverLog,
    ) -> Result<StepOutcome, RefinementExhausted> {
        loop {
            let dt = self.controller.dt.min(self.horizon - self.time);
            let t_new = self.time + dt;
            let ctx = LogContext {
                step: self.step + 1,
                time: t_new,
                dt,
                field_iter: 0,
            };
            problem.begin_step(t_new, dt);
            match staggered_step_ctx(problem, cfg, &mut self.history, log, ctx) {
                Ok(outcome) => {
                    problem.accept_step();
                    self.time = t_new;
                    self.step += 1;
                    log.push(LogRecord::StepAccepted {
                        step: self.step,
                        time: t_new,
                        dt,
                        field_iters: outcome.field_iters_used,
                    });
                    let before = self.controller.dt;
                    let after = self.controller.on_success(&outcome);
                    if after != before {
                        log.push(LogRecord::TimeStep {
                            step: self.step,
                            from: before,
                            to: after,
                            level: self.controller.level,
                        });
                    }
                    return Ok(outcome);
                }
                Err(cause) => {
                    problem.reject_step();
                    self.history = SolveHistory::default();
                    log.push(LogRecord::StepFailed {
                        step: self.step + 1,
                        time: t_new,
                        dt,
                        reason: cause.to_string(),
                    });
                    let before = self.controller.dt;
                    match self.controller.on_failure() {
                        Some(next) => log.push(LogRecord::TimeStep {
                            step: self.step + 1,
                            from: before,
                            to: next,
                            level: self.controller.level,
                        }),
                        None => {
                            return Err(RefinementExhausted {
                                time: self.time,
                                dt,
                                cause,
                            })
                        }
                    }
                }
            }
        }
    }
}
