//! Experiment execution.

use std::time::{Duration, Instant};

use taylored::bounds::{gap_report, GapReport};
use taylored::exact_dp::{policy_evaluation, policy_iteration, PiResult};
use taylored::lattice::{StationaryPolicy, ValueFunction};
use taylored::models::Model;
use taylored::tapi::{tapi_solve, ImprovementMode, TapiOptions, TapiResult};

use crate::config::{ExperimentConfig, Mode};
use crate::output::num;
use crate::CliError;

pub struct Candidate {
    pub policy: StationaryPolicy,
    pub value: ValueFunction,
    pub iterations: usize,
    pub tapi: Option<TapiResult>,
    /// Exact-improvement variant, when requested.
    pub variant: Option<TapiResult>,
    pub elapsed: Duration,
}

pub fn solve_exact(cfg: &ExperimentConfig, model: &Model) -> Result<PiResult, CliError> {
    let mdp = model.mdp();
    Ok(policy_iteration(mdp, StationaryPolicy::first_actions(&mdp.actions), &cfg.solver.options())?)
}

pub fn candidate(cfg: &ExperimentConfig, model: &Model) -> Result<Candidate, CliError> {
    let start = Instant::now();
    let mdp = model.mdp();
    let opts = cfg.solver.options();
    let fixed = |policy: StationaryPolicy| -> Result<Candidate, CliError> {
        let value = policy_evaluation(mdp, &policy, &opts)?;
        Ok(Candidate { policy, value, iterations: 1, tapi: None, variant: None, elapsed: start.elapsed() })
    };
    match cfg.mode {
        Mode::Exact => {
            let pi = solve_exact(cfg, model)?;
            Ok(Candidate {
                policy: pi.policy,
                value: pi.value,
                iterations: pi.iterations,
                tapi: None,
                variant: None,
                elapsed: start.elapsed(),
            })
        }
        Mode::FirstAction => fixed(StationaryPolicy::first_actions(&mdp.actions)),
        Mode::MaxOverflow => match model {
            Model::Routing(r) => fixed(r.max_overflow_policy()),
            _ => Err(CliError::Validation("mode max_overflow needs the routing model".into())),
        },
        Mode::Tapi => {
            let problem = model.problem()?;
            let opts = cfg.tapi_options();
            let r = tapi_solve(&problem, &opts)?;
            let variant = if cfg.tapi.exact_variant && opts.improvement != ImprovementMode::Exact {
                Some(tapi_solve(&problem, &TapiOptions { improvement: ImprovementMode::Exact, one_step: false, ..opts })?)
            } else {
                None
            };
            Ok(Candidate {
                policy: r.fine_policy.clone(),
                value: r.fine_value.clone(),
                iterations: r.iterations,
                tapi: Some(r),
                variant,
                elapsed: start.elapsed(),
            })
        }
    }
}

pub fn gaps(candidate: &[f64], star: &[f64]) -> Result<GapReport, CliError> {
    Ok(gap_report(candidate, star)?)
}

/// One line of `summary.csv`.
pub struct Summary {
    pub model: String,
    pub alpha: f64,
    pub h: Option<i64>,
    pub mode: String,
    pub max_rel_err: Option<f64>,
    pub mean_rel_err: Option<f64>,
    pub iterations: usize,
    pub wall_time: Duration,
}

impl Summary {
    pub const HEADER: [&'static str; 8] = ["model", "alpha", "h", "mode", "max_rel_err", "mean_rel_err", "iters", "wall_time"];

    pub fn new(cfg: &ExperimentConfig, mode: &str, gaps: Option<&GapReport>, iterations: usize, wall_time: Duration) -> Self {
        Self {
            model: cfg.label(),
            alpha: cfg.alpha,
            h: (cfg.mode == Mode::Tapi && mode != "exact").then_some(cfg.tapi.h),
            mode: mode.to_string(),
            max_rel_err: gaps.map(|g| g.max_rel),
            mean_rel_err: gaps.map(|g| g.mean_rel),
            iterations,
            wall_time,
        }
    }

    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or_else(|| "na".to_string(), num);
        vec![
            self.model.clone(),
            num(self.alpha),
            self.h.map_or_else(|| "na".to_string(), |h| h.to_string()),
            self.mode.clone(),
            opt(self.max_rel_err),
            opt(self.mean_rel_err),
            self.iterations.to_string(),
            format!("{:.3}", self.wall_time.as_secs_f64()),
        ]
    }
}
