//! Policy iteration on the coarse chain and the maps back to the fine
//! lattice.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::exact_dp::{policy_evaluation, policy_improvement, policy_iteration, SolveOptions, ARGMAX_TOL};
use crate::kd_chain::{build_kd_chain, CoarseGrid, KdChain, KdOptions, Tie};
use crate::lattice::{LatticeMdp, StationaryPolicy, ValueFunction};
use crate::taylor::{generator, TaylorProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImprovementMode {
    /// Greedy step on the coarse chain.
    #[default]
    Approximate,
    /// Greedy step on the fine model against the extended coarse value.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Disaggregation {
    #[default]
    PiecewiseConstant,
    Multilinear,
}

/// How the fine-lattice policy is read off the coarse solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub enum PolicyMap {
    /// Copy the action of the nearest grid point.
    Nearest(Tie),
    /// Copy the action of the grid point below in every coordinate.
    Floor,
    /// Maximize `r_u(x) + a L_u V(x)` at every fine state, with the
    /// derivatives of the coarse value taken on the grid and interpolated.
    /// When the grid is the whole lattice the chain policy is used as is.
    #[default]
    Taylored,
}


#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapiOptions {
    pub kd: KdOptions,
    pub max_iterations: usize,
    pub improvement: ImprovementMode,
    pub disaggregation: Disaggregation,
    pub policy_map: PolicyMap,
    /// Finish with one greedy step on the fine model.
    pub one_step: bool,
    pub solve: SolveOptions,
}

impl TapiOptions {
    pub fn new(h: i64) -> Self {
        Self {
            kd: KdOptions::new(h),
            max_iterations: 100,
            improvement: ImprovementMode::Approximate,
            disaggregation: Disaggregation::PiecewiseConstant,
            policy_map: PolicyMap::default(),
            one_step: false,
            solve: SolveOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kd.h < 1 {
            return Err(Error::InvalidParameter(format!("grid spacing {} must be at least 1", self.kd.h)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("iteration cap must be at least 1".into()));
        }
        self.solve.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TapiResult {
    pub chain: KdChain,
    pub coarse_value: ValueFunction,
    pub coarse_policy: StationaryPolicy,
    /// Fine-lattice policy and its exact value.
    pub fine_policy: StationaryPolicy,
    pub fine_value: ValueFunction,
    /// Result of the final greedy step, when requested.
    pub improved: Option<(StationaryPolicy, ValueFunction)>,
    pub iterations: usize,
    /// Set when the exact-improvement loop hit its cap without settling.
    pub hit_cap: bool,
    pub elapsed: Duration,
}

/// Extends a grid function to every fine state.
pub fn disaggregate_value(coarse: &[f64], grid: &CoarseGrid, mode: Disaggregation) -> ValueFunction {
    let fine = grid.fine_lattice();
    let d = fine.dim();
    let mut x = vec![0i64; d];
    (0..fine.len())
        .map(|i| {
            fine.state_into(i, &mut x);
            match mode {
                Disaggregation::PiecewiseConstant => coarse[grid.nearest(&x, Tie::Lower)],
                Disaggregation::Multilinear => {
                    let cell = grid.cell(&x);
                    let mut acc = 0.0;
                    let mut k = vec![0i64; d];
                    for corner in 0..(1usize << d) {
                        let mut w = 1.0;
                        for (a, &(lo, t)) in cell.iter().enumerate() {
                            let up = corner >> a & 1 == 1;
                            k[a] = (lo + usize::from(up)) as i64;
                            w *= if up { t } else { 1.0 - t };
                        }
                        if w != 0.0 {
                            acc += w * coarse[grid.lattice().index_of(&k).unwrap()];
                        }
                    }
                    acc
                }
            }
        })
        .collect()
}

/// Copies the coarse action of the chosen grid point to every fine state and
/// projects it onto the feasible set there.
///
/// # Panics
/// On [`PolicyMap::Taylored`], which needs the coarse value; use
/// [`taylored_policy`].
pub fn disaggregate_policy(chain: &KdChain, coarse: &StationaryPolicy, fine: &LatticeMdp, map: PolicyMap) -> StationaryPolicy {
    let grid = &chain.grid;
    let slots = (0..fine.num_states())
        .map(|i| {
            let x = fine.lattice.state(i);
            let g = match map {
                PolicyMap::Nearest(t) => grid.nearest(&x, t),
                PolicyMap::Floor => grid.floor(&x),
                PolicyMap::Taylored => panic!("the Taylored map needs the coarse value"),
            };
            fine.actions.project(i, coarse.action(&chain.mdp.actions, g))
        })
        .collect();
    StationaryPolicy { slots }
}

/// Finite-difference gradient and Hessian of grid values at every grid
/// point, honouring unequal spacing; one-sided at the edges.
pub fn grid_derivatives(grid: &CoarseGrid, values: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let lat = grid.lattice();
    let d = lat.dim();
    let pos = |axis: usize, k: i64| grid.points(axis)[k as usize] as f64;
    (0..grid.len())
        .map(|g| {
            let k = lat.state(g);
            let at = |shift: &[(usize, i64)]| -> Option<f64> {
                let mut y = k.clone();
                for &(a, s) in shift {
                    y[a] += s;
                }
                lat.index_of(&y).map(|i| values[i])
            };
            let f0 = values[g];
            let mut grad = vec![0.0; d];
            let mut hess = vec![0.0; d * d];
            // per axis: (step to the used neighbour, its offset) pairs
            let mut steps: Vec<Vec<(i64, f64)>> = vec![Vec::new(); d];
            for i in 0..d {
                let xi = pos(i, k[i]);
                let hp = at(&[(i, 1)]).map(|_| pos(i, k[i] + 1) - xi);
                let hm = at(&[(i, -1)]).map(|_| xi - pos(i, k[i] - 1));
                match (hp, hm) {
                    (Some(hp), Some(hm)) => {
                        let (fp, fm) = (at(&[(i, 1)]).unwrap(), at(&[(i, -1)]).unwrap());
                        grad[i] = (hm * hm * (fp - f0) + hp * hp * (f0 - fm)) / (hp * hm * (hp + hm));
                        hess[i * d + i] = 2.0 * ((fp - f0) / hp - (f0 - fm) / hm) / (hp + hm);
                        steps[i] = vec![(1, hp), (-1, -hm)];
                    }
                    (Some(hp), None) => {
                        let fp = at(&[(i, 1)]).unwrap();
                        grad[i] = (fp - f0) / hp;
                        if let Some(fpp) = at(&[(i, 2)]) {
                            let hp2 = pos(i, k[i] + 2) - pos(i, k[i] + 1);
                            hess[i * d + i] = 2.0 * ((fpp - fp) / hp2 - (fp - f0) / hp) / (hp + hp2);
                        }
                        steps[i] = vec![(1, hp)];
                    }
                    (None, Some(hm)) => {
                        let fm = at(&[(i, -1)]).unwrap();
                        grad[i] = (f0 - fm) / hm;
                        if let Some(fmm) = at(&[(i, -2)]) {
                            let hm2 = pos(i, k[i] - 1) - pos(i, k[i] - 2);
                            hess[i * d + i] = 2.0 * ((f0 - fm) / hm - (fm - fmm) / hm2) / (hm + hm2);
                        }
                        steps[i] = vec![(-1, -hm)];
                    }
                    (None, None) => {}
                }
            }
            for i in 0..d {
                for j in (i + 1)..d {
                    let v = if steps[i].len() == 2 && steps[j].len() == 2 {
                        let w = (steps[i][0].1 - steps[i][1].1) * (steps[j][0].1 - steps[j][1].1);
                        (at(&[(i, 1), (j, 1)]).unwrap() - at(&[(i, 1), (j, -1)]).unwrap() - at(&[(i, -1), (j, 1)]).unwrap()
                            + at(&[(i, -1), (j, -1)]).unwrap())
                            / w
                    } else {
                        let (si, li) = steps[i][0];
                        let (sj, lj) = steps[j][0];
                        (at(&[(i, si), (j, sj)]).unwrap() - at(&[(i, si)]).unwrap() - at(&[(j, sj)]).unwrap() + f0) / (li * lj)
                    };
                    hess[i * d + j] = v;
                    hess[j * d + i] = v;
                }
            }
            (grad, hess)
        })
        .collect()
}

/// Fine policy maximizing `r_u(x) + a(x) L_u V(x)`, with `DV` and `D2V`
/// interpolated multilinearly from the grid derivatives of `coarse_value`.
pub fn taylored_policy(problem: &TaylorProblem<'_>, grid: &CoarseGrid, coarse_value: &[f64]) -> Result<StationaryPolicy> {
    let mdp = problem.mdp;
    let derivs = grid_derivatives(grid, coarse_value);
    let d = mdp.lattice.dim();
    let slots = (0..mdp.num_states())
        .map(|i| {
            let x = mdp.lattice.state(i);
            let cell = grid.cell(&x);
            let (mut grad, mut hess) = (vec![0.0; d], vec![0.0; d * d]);
            let mut k = vec![0i64; d];
            for corner in 0..(1usize << d) {
                let mut w = 1.0;
                for (a, &(lo, t)) in cell.iter().enumerate() {
                    let up = corner >> a & 1 == 1;
                    k[a] = (lo + usize::from(up)) as i64;
                    w *= if up { t } else { 1.0 - t };
                }
                if w == 0.0 {
                    continue;
                }
                let (g, h) = &derivs[grid.lattice().index_of(&k).unwrap()];
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += w * b);
                hess.iter_mut().zip(h).for_each(|(a, b)| *a += w * b);
            }
            let a = mdp.discounts[i];
            let mut best: Option<(usize, f64)> = None;
            for s in mdp.actions.slots(i) {
                let dd = problem.moments_at(s)?;
                let q = mdp.rewards[s] + a * generator(&dd, &grad, &hess);
                if best.is_none_or(|(_, b)| q > b + ARGMAX_TOL) {
                    best = Some((s, q));
                }
            }
            Ok(best.expect("nonempty action set").0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StationaryPolicy { slots })
}

/// Greedy policy of the fine model against `value`.
pub fn one_step_exact_improvement(mdp: &LatticeMdp, value: &[f64]) -> Result<StationaryPolicy> {
    Ok(policy_improvement(mdp, value)?.policy)
}

/// Chain policy that plays the fine policy's action at every grid point.
pub fn restrict_to_grid(chain: &KdChain, fine: &LatticeMdp, policy: &StationaryPolicy) -> StationaryPolicy {
    let slots = (0..chain.grid.len())
        .map(|g| {
            let a = policy.action(&fine.actions, chain.grid.fine_index(g));
            chain.slot_of(g, a).expect("grid actions mirror the fine actions")
        })
        .collect();
    StationaryPolicy { slots }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Policy iteration on the coarse chain followed by disaggregation.
pub fn tapi_solve(problem: &TaylorProblem<'_>, opts: &TapiOptions) -> Result<TapiResult> {
    opts.validate()?;
    if opts.improvement == ImprovementMode::Exact {
        return tapi_exact_improvement_variant(problem, opts);
    }
    let start = Instant::now();
    let fine = problem.mdp;
    let chain = build_kd_chain(problem, &opts.kd)?;
    let solve = SolveOptions { max_iterations: opts.max_iterations, ..opts.solve };
    let pi = policy_iteration(&chain.mdp, StationaryPolicy::first_actions(&chain.mdp.actions), &solve)?;
    let fine_policy = match opts.policy_map {
        // a grid that covers every fine state needs no disaggregation
        PolicyMap::Taylored if chain.grid.len() < fine.num_states() => taylored_policy(problem, &chain.grid, &pi.value)?,
        PolicyMap::Taylored => disaggregate_policy(&chain, &pi.policy, fine, PolicyMap::Floor),
        map => disaggregate_policy(&chain, &pi.policy, fine, map),
    };
    let fine_value = policy_evaluation(fine, &fine_policy, &opts.solve)?;
    let improved = if opts.one_step {
        let v = disaggregate_value(&pi.value, &chain.grid, opts.disaggregation);
        let p = one_step_exact_improvement(fine, &v)?;
        let pv = policy_evaluation(fine, &p, &opts.solve)?;
        Some((p, pv))
    } else {
        None
    };
    Ok(TapiResult {
        chain,
        coarse_value: pi.value,
        coarse_policy: pi.policy,
        fine_policy,
        fine_value,
        improved,
        iterations: pi.iterations,
        hit_cap: false,
        elapsed: start.elapsed(),
    })
}

/// Evaluation on the coarse chain, improvement on the fine model.
///
/// There is no convergence guarantee; the loop stops when the restricted
/// policy repeats or at the cap, and returns the iterate with the largest
/// mean exact value.
pub fn tapi_exact_improvement_variant(problem: &TaylorProblem<'_>, opts: &TapiOptions) -> Result<TapiResult> {
    opts.validate()?;
    let start = Instant::now();
    let fine = problem.mdp;
    let chain = build_kd_chain(problem, &opts.kd)?;
    let mut cp = StationaryPolicy::first_actions(&chain.mdp.actions);
    let mut best: Option<(f64, StationaryPolicy, ValueFunction, StationaryPolicy, ValueFunction)> = None;
    let mut hit_cap = true;
    let mut iterations = 0;
    for k in 1..=opts.max_iterations {
        iterations = k;
        let cv = policy_evaluation(&chain.mdp, &cp, &opts.solve)?;
        let v = disaggregate_value(&cv, &chain.grid, opts.disaggregation);
        let fp = one_step_exact_improvement(fine, &v)?;
        let fv = policy_evaluation(fine, &fp, &opts.solve)?;
        let score = mean(&fv);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, fp.clone(), fv, cp.clone(), cv));
        }
        let next = restrict_to_grid(&chain, fine, &fp);
        if next == cp {
            hit_cap = false;
            break;
        }
        cp = next;
    }
    let (_, fine_policy, fine_value, coarse_policy, coarse_value) = best.expect("at least one iteration");
    Ok(TapiResult {
        chain,
        coarse_value,
        coarse_policy,
        fine_policy,
        fine_value,
        improved: None,
        iterations,
        hit_cap,
        elapsed: start.elapsed(),
    })
}
