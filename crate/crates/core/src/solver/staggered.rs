use super::{
    solve_sparse, BackupTrigger, Block, BlockSystem, Field, LogRecord, Regime, SolverLog, StaggeredConfig,
    StaggeredProblem, StepFailure, StepOutcome, Termination,
};

/// Iteration counts of the most recent solve of each block.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolveHistory {
    pub last_iterations: [Option<usize>; 2],
}

/// Where in the load program the solve happens, for logging.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct LogContext {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub field_iter: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockOutcome {
    pub block: Block,
    pub iterations: usize,
    pub regime: Regime,
    pub trigger: Option<BackupTrigger>,
    /// Tolerance-normalized merit of the first residual.
    pub first_merit: f64,
    pub termination: Vec<(Field, Termination)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub passed: bool,
    pub termination: Vec<(Field, Termination)>,
}

fn merit(cfg: &StaggeredConfig, norms: &[(Field, f64)]) -> f64 {
    norms
        .iter()
        .map(|&(f, r)| (r / cfg.tolerances.final_tol[f.index()].residual).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn residual_met(cfg: &StaggeredConfig, regime: Regime, norms: &[(Field, f64)]) -> bool {
    norms.iter().all(|&(f, r)| r <= cfg.tolerances.get(regime, f).residual)
}

/// Per-field convergence by residual or by update norm.
fn field_termination(
    cfg: &StaggeredConfig,
    regime: Regime,
    res: &[(Field, f64)],
    upd: Option<&[(Field, f64)]>,
) -> Option<Vec<(Field, Termination)>> {
    res.iter()
        .enumerate()
        .map(|(i, &(f, r))| {
            let tol = cfg.tolerances.get(regime, f);
            let via = |t| match regime {
                Regime::Final => t,
                Regime::Backup => Termination::Backup,
            };
            if r <= tol.residual {
                Some((f, via(Termination::Residual)))
            } else if upd.is_some_and(|u| u[i].1 <= tol.update) {
                Some((f, via(Termination::FieldUpdate)))
            } else {
                None
            }
        })
        .collect()
}

fn newton_direction(block: Block, sys: &BlockSystem) -> Result<Vec<f64>, StepFailure> {
    let n = sys.residual.len();
    let neg: Vec<f64> = sys.residual.iter().map(|r| -r).collect();
    let trip = sys.tangent.as_deref().unwrap_or(&[]);
    solve_sparse(n, trip, &neg).ok_or(StepFailure::Singular(block))
}

/// Newton iterations on one block with backtracking line search and
/// back-up tolerance switching. Iterates stay in `problem` on success.
pub fn newton_block_solve<P: StaggeredProblem + ?Sized>(
    problem: &mut P,
    block: Block,
    cfg: &StaggeredConfig,
    history: &SolveHistory,
    log: &mut SolverLog,
) -> Result<BlockOutcome, StepFailure> {
    newton_block_solve_ctx(problem, block, cfg, history, log, LogContext::default())
}

pub(crate) fn newton_block_solve_ctx<P: StaggeredProblem + ?Sized>(
    problem: &mut P,
    block: Block,
    cfg: &StaggeredConfig,
    history: &SolveHistory,
    log: &mut SolverLog,
    ctx: LogContext,
) -> Result<BlockOutcome, StepFailure> {
    let mut sys = problem.assemble(block, true)?;
    let first = sys.field_norms(&sys.residual);
    let first_merit = merit(cfg, &first);
    let mut regime = Regime::Final;
    let mut trigger = None;
    let mut backup_iter = None;
    let heavy_previous = [Block::Ug, Block::D]
        .iter()
        .any(|b| history.last_iterations[b.index()].is_some_and(|n| n > cfg.n_iter_backuptols[b.index()]));
    if heavy_previous && !residual_met(cfg, Regime::Backup, &first) {
        regime = Regime::Backup;
        trigger = Some(BackupTrigger::PreviousSolve);
        backup_iter = Some(0);
    }

    let mut shrinks = 0usize;
    let mut iterations = 0usize;
    let mut norms = first.clone();
    let finish = |log: &mut SolverLog,
                  iterations,
                  norms: &[(Field, f64)],
                  regime,
                  trigger,
                  backup_iter,
                  shrinks,
                  converged| {
        log.push(LogRecord::BlockSolve {
            step: ctx.step,
            time: ctx.time,
            dt: ctx.dt,
            field_iter: ctx.field_iter,
            block,
            iterations,
            first_residual: first.clone(),
            residual: norms.to_vec(),
            regime,
            backup_trigger: trigger,
            backup_iter,
            line_search_shrinks: shrinks,
            converged,
        });
    };

    if let Some(termination) = field_termination(cfg, regime, &norms, None) {
        finish(log, 0, &norms, regime, trigger, backup_iter, 0, true);
        return Ok(BlockOutcome {
            block,
            iterations: 0,
            regime,
            trigger,
            first_merit,
            termination,
        });
    }

    let mut current_merit = first_merit;
    loop {
        iterations += 1;
        let delta = match newton_direction(block, &sys) {
            Ok(d) => d,
            Err(e) => {
                finish(log, iterations, &norms, regime, trigger, backup_iter, shrinks, false);
                return Err(e);
            }
        };
        let base = problem.values(block);
        let mut scale = 1.0;
        let mut increases = 0usize;
        loop {
            let trial: Vec<f64> = base.iter().zip(&delta).map(|(b, d)| b + scale * d).collect();
            problem.set_values(block, &trial);
            let candidate = problem.assemble(block, true);
            let accepted = match candidate {
                Ok(s) => {
                    let n = s.field_norms(&s.residual);
                    let m = merit(cfg, &n);
                    if m.is_finite() && m <= current_merit {
                        sys = s;
                        norms = n;
                        current_merit = m;
                        true
                    } else {
                        false
                    }
                }
                Err(_) => false,
            };
            if accepted {
                break;
            }
            increases += 1;
            shrinks += 1;
            if increases > cfg.max_divergence_count {
                problem.set_values(block, &base);
                finish(log, iterations, &norms, regime, trigger, backup_iter, shrinks, false);
                return Err(StepFailure::BlockDiverged { block, iterations });
            }
            scale *= cfg.line_search_factor;
        }

        let applied: Vec<f64> = delta.iter().map(|d| scale * d).collect();
        let upd = sys.field_norms(&applied);
        if let Some(termination) = field_termination(cfg, regime, &norms, Some(&upd)) {
            finish(log, iterations, &norms, regime, trigger, backup_iter, shrinks, true);
            return Ok(BlockOutcome {
                block,
                iterations,
                regime,
                trigger,
                first_merit,
                termination,
            });
        }
        if iterations == cfg.iter_backuptol && regime == Regime::Final && !residual_met(cfg, Regime::Backup, &norms) {
            regime = Regime::Backup;
            trigger = Some(BackupTrigger::SlowConvergence);
            backup_iter = Some(iterations);
        }
        if iterations >= cfg.max_iter {
            if let Some(termination) = field_termination(cfg, Regime::Backup, &norms, Some(&upd)) {
                let trigger = trigger.or(Some(BackupTrigger::IterationCap));
                let backup_iter = backup_iter.or(Some(iterations));
                finish(log, iterations, &norms, Regime::Backup, trigger, backup_iter, shrinks, true);
                return Ok(BlockOutcome {
                    block,
                    iterations,
                    regime: Regime::Backup,
                    trigger,
                    first_merit,
                    termination,
                });
            }
            finish(log, iterations, &norms, regime, trigger, backup_iter, shrinks, false);
            return Err(StepFailure::BlockDiverged { block, iterations });
        }
    }
}

/// Tests whether `block` is converged at the current iterate, by residual or
/// by the norm of the Newton correction it would take. Local variables of the
/// block are refreshed as a side effect.
pub fn check_block<P: StaggeredProblem + ?Sized>(
    problem: &mut P,
    block: Block,
    cfg: &StaggeredConfig,
    log: &mut SolverLog,
) -> Result<CheckOutcome, StepFailure> {
    check_block_ctx(problem, block, cfg, log, LogContext::default())
}

pub(crate) fn check_block_ctx<P: StaggeredProblem + ?Sized>(
    problem: &mut P,
    block: Block,
    cfg: &StaggeredConfig,
    log: &mut SolverLog,
    ctx: LogContext,
) -> Result<CheckOutcome, StepFailure> {
    let sys = problem.assemble(block, true)?;
    let norms = sys.field_norms(&sys.residual);
    let mut termination = field_termination(cfg, Regime::Final, &norms, None);
    if termination.is_none() {
        if let Ok(delta) = newton_direction(block, &sys) {
            let upd = sys.field_norms(&delta);
            termination = field_termination(cfg, Regime::Final, &norms, Some(&upd));
        }
    }
    let passed = termination.is_some();
    log.push(LogRecord::Check {
        step: ctx.step,
        field_iter: ctx.field_iter,
        block,
        residual: norms,
        passed,
    });
    Ok(CheckOutcome {
        passed,
        termination: termination.unwrap_or_default(),
    })
}

/// Alternates block solves until one finishes under final tolerances, the
/// other block passes its check and the solved block still passes after that.
pub fn staggered_step<P: StaggeredProblem + ?Sized>(
    problem: &mut P,
    cfg: &StaggeredConfig,
    history: &mut SolveHistory,
    log: &mut SolverLog,
) -> Result<StepOutcome, StepFailure> {
    staggered_step_ctx(problem, cfg, history, log, LogContext::default())
}

pub(crate) fn staggered_step_ctx<P: StaggeredProblem + ?Sized>(
    problem: &mut P,
    cfg: &StaggeredConfig,
    history: &mut SolveHistory,
    log: &mut SolverLog,
    mut ctx: LogContext,
) -> Result<StepOutcome, StepFailure> {
    let mut field_iter = 0usize;
    let mut first_prev: [Option<f64>; 2] = [None; 2];
    let mut growth = [0usize; 2];
    let mut block = Block::Ug;
    loop {
        if block == Block::Ug {
            field_iter += 1;
            if field_iter > cfg.max_field_iter {
                return Err(StepFailure::FieldIterExhausted);
            }
        }
        ctx.field_iter = field_iter;
        let solved = newton_block_solve_ctx(problem, block, cfg, history, log, ctx);
        let solved = match solved {
            Ok(s) => s,
            Err(e) => {
                if let StepFailure::BlockDiverged { iterations, .. } = e {
                    history.last_iterations[block.index()] = Some(iterations);
                }
                return Err(e);
            }
        };
        history.last_iterations[block.index()] = Some(solved.iterations);

        let b = block.index();
        if let Some(prev) = first_prev[b] {
            if solved.first_merit > prev {
                growth[b] += 1;
                if growth[b] > cfg.max_field_div {
                    return Err(StepFailure::FieldLoopDiverged(block));
                }
            } else {
                growth[b] = 0;
            }
        }
        first_prev[b] = Some(solved.first_merit);

        let check = check_block_ctx(problem, block.other(), cfg, log, ctx)?;
        if solved.regime == Regime::Final && check.passed {
            // the check refreshed the local variables this block depends on
            let recheck = check_block_ctx(problem, block, cfg, log, ctx)?;
            if recheck.passed {
                let mut termination = recheck.termination;
                termination.extend(check.termination);
                termination.sort_by_key(|(f, _)| *f);
                return Ok(StepOutcome {
                    converged: true,
                    field_iters_used: field_iter,
                    termination,
                    dt: ctx.dt,
                });
            }
            if block == Block::D {
                field_iter += 1;
                if field_iter > cfg.max_field_iter {
                    return Err(StepFailure::FieldIterExhausted);
                }
            }
            continue;
        }
        block = block.other();
    }
}
