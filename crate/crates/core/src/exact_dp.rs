//! Exact solvers: policy evaluation, greedy improvement, policy iteration,
//! value iteration and discounted functionals of arbitrary per-state rewards.
//!
//! All solvers maximize. Discounts are per state, so the same code runs on
//! the original chain and on approximating chains.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{LatticeMdp, StationaryPolicy, ValueFunction};
use crate::numeric::{sup_diff, sup_norm};
pub use crate::solver::{LinearSolver, SolveOptions};
use crate::solver::solve_policy_system;

/// Absolute tolerance of argmax comparisons.
pub const ARGMAX_TOL: f64 = 1e-12;

/// `V_U = r_U + diag(d) P_U V_U`.
pub fn policy_evaluation(mdp: &LatticeMdp, policy: &StationaryPolicy, opts: &SolveOptions) -> Result<ValueFunction> {
    if !policy.is_feasible(&mdp.actions) {
        return Err(Error::InvalidParameter("policy is not feasible".into()));
    }
    discounted_functional(mdp, policy, &mdp.policy_rewards(policy), opts)
}

/// `E_x^U[sum_t prod_{s<t} d(X_s) f(X_t)]`, i.e. policy evaluation with
/// reward `f`.
pub fn discounted_functional(mdp: &LatticeMdp, policy: &StationaryPolicy, f: &[f64], opts: &SolveOptions) -> Result<ValueFunction> {
    opts.validate()?;
    if f.len() != mdp.num_states() {
        return Err(Error::InvalidParameter("functional length differs from state count".into()));
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite functional at state index {i}")));
    }
    if !policy.is_feasible(&mdp.actions) {
        return Err(Error::InvalidParameter("policy is not feasible".into()));
    }
    solve_policy_system(mdp, &policy.slots, f, opts)
}

/// `r(x,u) + d(x) E[V(X_1)]` for every slot.
pub fn q_values(mdp: &LatticeMdp, value: &[f64]) -> Vec<f64> {
    let ev = mdp.kernel.expect_all(value);
    let mut q = vec![0.0; ev.len()];
    q.par_iter_mut().enumerate().for_each(|(s, qs)| {
        let x = mdp.actions.state_of(s);
        *qs = mdp.rewards[s] + mdp.discounts[x] * ev[s];
    });
    q
}

#[derive(Debug, Clone)]
pub struct Improvement {
    pub policy: StationaryPolicy,
    /// Attained maximum per state.
    pub q_max: Vec<f64>,
}

fn first_maximizer(q: &[f64], range: std::ops::Range<usize>, tol: f64) -> (usize, f64) {
    let best = q[range.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slot = range.clone().find(|&s| q[s] >= best - tol).unwrap_or(range.start);
    (slot, best)
}

/// Greedy policy: first lexicographic maximizer at every state.
pub fn policy_improvement(mdp: &LatticeMdp, value: &[f64]) -> Result<Improvement> {
    if value.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("value function has non-finite entries".into()));
    }
    let q = q_values(mdp, value);
    Ok(greedy_from_q(mdp, &q))
}

pub fn greedy_from_q(mdp: &LatticeMdp, q: &[f64]) -> Improvement {
    let (slots, q_max): (Vec<usize>, Vec<f64>) =
        (0..mdp.num_states()).into_par_iter().map(|x| first_maximizer(q, mdp.actions.slots(x), ARGMAX_TOL)).unzip();
    Improvement { policy: StationaryPolicy { slots }, q_max }
}

/// Improvement step that keeps the incumbent unless another action beats it
/// by more than a relative tolerance. Returns the number of changed states.
fn improve_keeping_incumbent(mdp: &LatticeMdp, value: &[f64], current: &StationaryPolicy) -> (StationaryPolicy, usize) {
    let q = q_values(mdp, value);
    let slots: Vec<usize> = (0..mdp.num_states())
        .into_par_iter()
        .map(|x| {
            let range = mdp.actions.slots(x);
            let best = q[range.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = ARGMAX_TOL * (1.0 + best.abs());
            let cur = current.slots[x];
            if q[cur] >= best - tol {
                cur
            } else {
                first_maximizer(&q, range, tol).0
            }
        })
        .collect();
    let changed = slots.iter().zip(&current.slots).filter(|(a, b)| a != b).count();
    (StationaryPolicy { slots }, changed)
}

#[derive(Debug, Clone)]
pub struct PiResult {
    pub policy: StationaryPolicy,
    pub value: ValueFunction,
    /// Number of policy evaluations performed.
    pub iterations: usize,
}

/// Policy iteration; `observe` sees every evaluated iterate.
pub fn policy_iteration_with<F>(mdp: &LatticeMdp, initial: StationaryPolicy, opts: &SolveOptions, mut observe: F) -> Result<PiResult>
where
    F: FnMut(usize, &StationaryPolicy, &[f64]),
{
    opts.validate()?;
    let mut policy = initial;
    for k in 1..=opts.max_iterations {
        let value = policy_evaluation(mdp, &policy, opts)?;
        observe(k, &policy, &value);
        let (next, changed) = improve_keeping_incumbent(mdp, &value, &policy);
        if changed == 0 {
            return Ok(PiResult { policy, value, iterations: k });
        }
        policy = next;
    }
    Err(Error::MaxIterationsExceeded { iterations: opts.max_iterations })
}

pub fn policy_iteration(mdp: &LatticeMdp, initial: StationaryPolicy, opts: &SolveOptions) -> Result<PiResult> {
    policy_iteration_with(mdp, initial, opts, |_, _, _| {})
}

/// Value iteration from zero; stops once the sup-norm update drops below
/// `tol (1 - a) / (2 a)` with `tol = vi_tol (1 + |V|)`.
pub fn value_iteration(mdp: &LatticeMdp, opts: &SolveOptions) -> Result<(StationaryPolicy, ValueFunction)> {
    opts.validate()?;
    let a = {
        let m = mdp.max_discount();
        if m < 1.0 {
            m
        } else {
            mdp.alpha
        }
    };
    let mut v = vec![0.0; mdp.num_states()];
    for _ in 0..opts.vi_max_iterations {
        let imp = greedy_from_q(mdp, &q_values(mdp, &v));
        let delta = sup_diff(&imp.q_max, &v);
        v = imp.q_max;
        let tol = opts.vi_tol * (1.0 + sup_norm(&v));
        if delta <= tol * (1.0 - a) / (2.0 * a) {
            let pol = policy_improvement(mdp, &v)?.policy;
            return Ok((pol, v));
        }
    }
    Err(Error::MaxIterationsExceeded { iterations: opts.vi_max_iterations })
}

/// `sup_x |V(x) - max_u {r + d P^u V}(x)|`.
pub fn bellman_residual(mdp: &LatticeMdp, value: &[f64]) -> f64 {
    let imp = greedy_from_q(mdp, &q_values(mdp, value));
    sup_diff(&imp.q_max, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ActionTable, Kernel, SparseKernel, StateLattice, TransitionRow};

    /// Small explicit MDP: rows[x][a] and rewards[x][a].
    pub(crate) fn toy(rows: Vec<Vec<Vec<(usize, f64)>>>, rewards: Vec<Vec<f64>>, alpha: f64) -> LatticeMdp {
        let n = rows.len();
        let lat = StateLattice::from_upper(vec![n as i64 - 1]).unwrap();
        let counts: Vec<usize> = rows.iter().map(|r| r.len()).collect();
        let table = ActionTable::from_fn(&lat, 1, |x| Ok((0..counts[x[0] as usize] as i64).map(|k| vec![k]).collect())).unwrap();
        let flat_rows = rows.into_iter().flatten().map(|e| TransitionRow { entries: e }).collect();
        let r = rewards.into_iter().flatten().collect();
        LatticeMdp::new(lat, table, Kernel::Sparse(SparseKernel::from_rows(flat_rows)), r, vec![alpha; n], alpha).unwrap()
    }

    #[test]
    fn zero_reward_gives_zero_value() {
        let m = toy(vec![vec![vec![(1, 1.0)]], vec![vec![(0, 1.0)]]], vec![vec![0.0], vec![0.0]], 0.9);
        let v = policy_evaluation(&m, &StationaryPolicy::first_actions(&m.actions), &SolveOptions::default()).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn self_loop_is_geometric_series() {
        let m = toy(vec![vec![vec![(0, 1.0)]]], vec![vec![1.0]], 0.9);
        let v = policy_evaluation(&m, &StationaryPolicy::first_actions(&m.actions), &SolveOptions::default()).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);
        let (_, vv) = value_iteration(&toy(vec![vec![vec![(0, 1.0)]]], vec![vec![1.0]], 0.5), &SolveOptions::default()).unwrap();
        assert!((vv[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn two_state_chain_matches_long_value_iteration() {
        let m = toy(vec![vec![vec![(0, 0.5), (1, 0.5)]], vec![vec![(0, 0.2), (1, 0.8)]]], vec![vec![1.0], vec![0.0]], 0.9);
        let v = policy_evaluation(&m, &StationaryPolicy::first_actions(&m.actions), &SolveOptions::default()).unwrap();
        // independent oracle: 10^4 plain Bellman sweeps
        let mut w = [0.0f64; 2];
        for _ in 0..10_000 {
            w = [1.0 + 0.9 * (0.5 * w[0] + 0.5 * w[1]), 0.9 * (0.2 * w[0] + 0.8 * w[1])];
        }
        assert!((v[0] - w[0]).abs() < 1e-8 && (v[1] - w[1]).abs() < 1e-8);
        let iter = discounted_functional(
            &m,
            &StationaryPolicy::first_actions(&m.actions),
            &[1.0, 0.0],
            &SolveOptions { linear: LinearSolver::Iterative, ..Default::default() },
        )
        .unwrap();
        assert!((iter[0] - w[0]).abs() < 1e-8);
    }

    #[test]
    fn myopic_improvement_under_zero_value() {
        let m = toy(vec![vec![vec![(0, 1.0)], vec![(0, 1.0)], vec![(0, 1.0)]]], vec![vec![1.0, 3.0, 3.0]], 0.9);
        let imp = policy_improvement(&m, &[0.0]).unwrap();
        // ties resolve to the first maximizer
        assert_eq!(imp.policy.slots, vec![1]);
        assert_eq!(imp.q_max, vec![3.0]);
    }

    #[test]
    fn policy_iteration_matches_enumeration_on_two_action_toy() {
        let rows = vec![vec![vec![(0, 1.0)], vec![(1, 1.0)]], vec![vec![(1, 0.3), (0, 0.7)], vec![(1, 1.0)]]];
        let rewards = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let m = toy(rows, rewards, 0.9);
        let res = policy_iteration(&m, StationaryPolicy::first_actions(&m.actions), &SolveOptions::default()).unwrap();
        let opts = SolveOptions::default();
        let mut best: Option<(Vec<f64>, Vec<usize>)> = None;
        for a0 in 0..2 {
            for a1 in 2..4 {
                let p = StationaryPolicy { slots: vec![a0, a1] };
                let v = policy_evaluation(&m, &p, &opts).unwrap();
                if best.as_ref().is_none_or(|(bv, _)| v.iter().zip(bv).all(|(a, b)| *a >= *b - 1e-12)) {
                    best = Some((v, p.slots));
                }
            }
        }
        let (bv, bs) = best.unwrap();
        assert_eq!(res.policy.slots, bs);
        assert!(sup_diff(&res.value, &bv) < 1e-10);
    }

    #[test]
    fn single_action_model_converges_in_one_iteration() {
        let m = toy(vec![vec![vec![(1, 1.0)]], vec![vec![(0, 0.5), (1, 0.5)]]], vec![vec![1.0], vec![-1.0]], 0.95);
        let res = policy_iteration(&m, StationaryPolicy::first_actions(&m.actions), &SolveOptions::default()).unwrap();
        assert_eq!(res.iterations, 1);
    }

    #[test]
    fn constant_reward_value_iteration() {
        let m = toy(vec![vec![vec![(1, 1.0)]], vec![vec![(0, 0.5), (1, 0.5)]]], vec![vec![2.0], vec![2.0]], 0.8);
        let (_, v) = value_iteration(&m, &SolveOptions::default()).unwrap();
        assert!(v.iter().all(|x| (x - 10.0).abs() < 1e-6));
    }

    #[test]
    fn infeasible_policy_rejected() {
        let m = toy(vec![vec![vec![(0, 1.0)]]], vec![vec![1.0]], 0.9);
        let bad = StationaryPolicy { slots: vec![3] };
        assert!(policy_evaluation(&m, &bad, &SolveOptions::default()).is_err());
    }
}
