//! Locally consistent chains on a coarse grid.
//!
//! Every generator coefficient pair `(mu, sigma2)` at a grid point is turned
//! into jump rates to nearest neighbours whose first and second moments
//! reproduce the coefficients. With `L(x)` the largest total rate over the
//! actions at `x`, the chain moves with probability `rate / L(x)`, discounts
//! by `a L / ((1 - a) + a L)` and collects `r / ((1 - a) + a L)`. In one
//! dimension with uniform spacing `h` this is the classical scheme with
//! `Sigma(x) = h^2 L(x)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Action, ActionTable, Kernel, LatticeMdp, SparseKernel, StateLattice, TransitionRow};
use crate::taylor::{DriftDiffusion, TaylorProblem};

/// Grid of spacing `h` inside a fine lattice; every axis starts at the
/// lattice lower bound and keeps the upper bound as an extra point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    h: i64,
    points: Vec<Vec<i64>>,
    index: StateLattice,
    fine: StateLattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tie {
    #[default]
    Lower,
    Upper,
    /// The candidate farther from the ends of the axis; lower if equal.
    Inward,
}

impl CoarseGrid {
    pub fn new(fine: &StateLattice, h: i64) -> Result<Self> {
        if h < 1 {
            return Err(Error::InvalidParameter(format!("grid spacing {h} must be at least 1")));
        }
        let mut points = Vec::with_capacity(fine.dim());
        for i in 0..fine.dim() {
            let (lo, hi) = (fine.lower()[i], fine.upper()[i]);
            let mut p: Vec<i64> = (0..).map(|k| lo + k * h).take_while(|&v| v <= hi).collect();
            if *p.last().unwrap() != hi {
                p.push(hi);
            }
            if p.len() < 2 {
                return Err(Error::InvalidLattice(format!("axis {i} has a single grid point")));
            }
            points.push(p);
        }
        let index = StateLattice::from_upper(points.iter().map(|p| p.len() as i64 - 1).collect())?;
        Ok(Self { h, points, index, fine: fine.clone() })
    }

    pub fn h(&self) -> i64 {
        self.h
    }

    pub fn points(&self, axis: usize) -> &[i64] {
        &self.points[axis]
    }

    /// Lattice of grid multi-indices.
    pub fn lattice(&self) -> &StateLattice {
        &self.index
    }

    pub fn fine_lattice(&self) -> &StateLattice {
        &self.fine
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn fine_state(&self, g: usize) -> Vec<i64> {
        let k = self.index.state(g);
        k.iter().enumerate().map(|(i, &ki)| self.points[i][ki as usize]).collect()
    }

    pub fn fine_index(&self, g: usize) -> usize {
        self.fine.index_of(&self.fine_state(g)).expect("grid point inside fine lattice")
    }

    /// Grid index of a fine state lying on the grid.
    pub fn grid_index_of(&self, x: &[i64]) -> Option<usize> {
        let k: Option<Vec<i64>> =
            x.iter().enumerate().map(|(i, v)| self.points[i].binary_search(v).ok().map(|k| k as i64)).collect();
        self.index.index_of(&k?)
    }

    fn axis_nearest(&self, axis: usize, v: i64, tie: Tie) -> usize {
        let p = &self.points[axis];
        match p.binary_search(&v) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) if k == p.len() => p.len() - 1,
            Err(k) => {
                let (dl, du) = (v - p[k - 1], p[k] - v);
                let depth = |q: i64| (q - p[0]).min(p[p.len() - 1] - q);
                let lower_wins = match tie {
                    Tie::Lower => true,
                    Tie::Upper => false,
                    Tie::Inward => depth(p[k - 1]) >= depth(p[k]),
                };
                if dl < du || (dl == du && lower_wins) {
                    k - 1
                } else {
                    k
                }
            }
        }
    }

    fn axis_floor(&self, axis: usize, v: i64) -> usize {
        let p = &self.points[axis];
        match p.binary_search(&v) {
            Ok(k) => k,
            Err(0) => 0,
            Err(k) => k - 1,
        }
    }

    /// Coordinate-wise nearest grid point.
    pub fn nearest(&self, x: &[i64], tie: Tie) -> usize {
        let k: Vec<i64> = (0..x.len()).map(|i| self.axis_nearest(i, x[i], tie) as i64).collect();
        self.index.index_of(&k).unwrap()
    }

    /// Largest grid point below `x` in every coordinate.
    pub fn floor(&self, x: &[i64]) -> usize {
        let k: Vec<i64> = (0..x.len()).map(|i| self.axis_floor(i, x[i]) as i64).collect();
        self.index.index_of(&k).unwrap()
    }

    /// Enclosing cell: per axis the lower grid index and the weight of the
    /// upper neighbour.
    pub fn cell(&self, x: &[i64]) -> Vec<(usize, f64)> {
        (0..x.len())
            .map(|i| {
                let p = &self.points[i];
                let k = self.axis_floor(i, x[i]).min(p.len() - 2);
                (k, (x[i] - p[k]) as f64 / (p[k + 1] - p[k]) as f64)
            })
            .collect()
    }
}

/// Probabilities of a one-dimensional row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row1d {
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_stay: f64,
}

/// Central scheme `p = (sigma2 +- mu h) / (2 Sigma)`.
pub fn build_interior_row_1d(mu: f64, sigma2: f64, big_sigma: f64, h: f64) -> Result<Row1d> {
    if !(sigma2 > 0.0 && big_sigma >= sigma2) {
        return Err(Error::InvalidParameter(format!("need 0 < sigma2 <= Sigma, got {sigma2}, {big_sigma}")));
    }
    if sigma2 < mu.abs() * h {
        return Err(Error::SmallDriftViolated { mu, sigma2, h });
    }
    Ok(Row1d {
        p_plus: (sigma2 + mu * h) / (2.0 * big_sigma),
        p_minus: (sigma2 - mu * h) / (2.0 * big_sigma),
        p_stay: 1.0 - sigma2 / big_sigma,
    })
}

/// One-sided scheme `p = (mu^+- h + sigma2 / 2) / Q`, valid for any drift
/// when `Q >= |mu| h + sigma2`.
pub fn build_interior_row_upwind_1d(mu: f64, sigma2: f64, q: f64, h: f64) -> Result<Row1d> {
    if !(sigma2 > 0.0 && q >= mu.abs() * h + sigma2) {
        return Err(Error::InvalidParameter(format!("need sigma2 > 0 and Q >= |mu| h + sigma2, got Q = {q}")));
    }
    Ok(Row1d {
        p_plus: (mu.max(0.0) * h + 0.5 * sigma2) / q,
        p_minus: ((-mu).max(0.0) * h + 0.5 * sigma2) / q,
        p_stay: 1.0 - (mu.abs() * h + sigma2) / q,
    })
}

/// `(1 + h^2 (1/a - 1) / Sigma)^-1`, evaluated as
/// `a Sigma / (a Sigma + h^2 (1 - a))`.
pub fn state_discount(big_sigma: f64, h: f64, alpha: f64) -> f64 {
    if h * h == big_sigma {
        return alpha;
    }
    alpha * big_sigma / (alpha * big_sigma + h * h * (1.0 - alpha))
}

/// Rescaled reward in its two algebraically equal forms
/// `a_h h^2 r / (a Sigma)` and `(1 - a_h) r / (1 - a)`.
pub fn rescale_reward(r: f64, alpha_h: f64, alpha: f64, big_sigma: f64, h: f64) -> (f64, f64) {
    let a = alpha_h * h * h * r / (alpha * big_sigma);
    let b = (1.0 - alpha_h) / (1.0 - alpha) * r;
    debug_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1e-300));
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryRule {
    /// Stencil with a ghost point mirrored back into the grid.
    #[default]
    Mirror,
    /// Deterministic inward step, no reward, no discount.
    Instantaneous,
    /// Drift-only rows along binding coordinates.
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossPolicy {
    /// Reject diffusion matrices that are not diagonally dominant.
    Strict,
    /// Shrink off-diagonal terms until the stencil is nonnegative.
    #[default]
    Clip,
}

/// Stencil used on an axis where central differencing gives a negative rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpwindRule {
    /// Drop the negative rate and keep the drift exact; the second moment
    /// becomes `|mu| h`. Rates are continuous across the switch.
    #[default]
    Minimal,
    /// One-sided drift on top of the full diffusion term; the second moment
    /// becomes `sigma2 + |mu| h`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdOptions {
    pub h: i64,
    pub boundary: BoundaryRule,
    pub cross: CrossPolicy,
    pub upwind: UpwindRule,
}

impl KdOptions {
    pub fn new(h: i64) -> Self {
        Self { h, boundary: BoundaryRule::default(), cross: CrossPolicy::default(), upwind: UpwindRule::default() }
    }
}

/// Stencil diagnostics of one chain row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowInfo {
    pub boundary: bool,
    pub upwind: bool,
    /// Equal spacing on both sides along every axis.
    pub uniform: bool,
    /// Factor applied to the off-diagonal diffusion terms.
    pub theta: f64,
}

impl RowInfo {
    /// Rows whose second moments match exactly.
    pub fn is_central(&self) -> bool {
        !self.boundary && !self.upwind && self.uniform && self.theta == 1.0
    }
}

/// Chain on the grid index lattice with per-state discounts.
#[derive(Debug, Clone)]
pub struct KdChain {
    pub grid: CoarseGrid,
    pub mdp: LatticeMdp,
    /// Fine-model slot behind each chain slot.
    pub fine_slot: Vec<usize>,
    /// Largest total jump rate per grid state.
    pub lambda: Vec<f64>,
    pub info: Vec<RowInfo>,
    pub options: KdOptions,
}

impl KdChain {
    /// `Sigma(x) = h^2 L(x)`.
    pub fn sigma(&self, g: usize) -> f64 {
        (self.grid.h * self.grid.h) as f64 * self.lambda[g]
    }

    /// `a (1 - a_h) / (a_h (1 - a))`, the ratio of chain to model moments.
    pub fn tcp_factor(&self, g: usize) -> f64 {
        let a = self.mdp.alpha;
        let ah = self.mdp.discounts[g];
        a * (1.0 - ah) / (ah * (1.0 - a))
    }

    /// Chain slot of a fine action at grid state `g`.
    pub fn slot_of(&self, g: usize, action: &[i64]) -> Option<usize> {
        self.mdp.actions.find(g, action)
    }
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    hp: f64,
    hm: f64,
    /// Plus neighbour missing: the plus move lands on the minus neighbour.
    no_plus: bool,
    no_minus: bool,
}

/// Rates of one (state, action) as moves `(axis offsets, rate)`.
struct Rates {
    moves: Vec<(Vec<i8>, f64)>,
    upwind: bool,
    theta: f64,
}

fn dominance_entries(dd: &DriftDiffusion) -> Vec<(usize, f64, f64)> {
    let d = dd.dim();
    (0..d).map(|i| (i, dd.s(i, i), (0..d).filter(|&j| j != i).map(|j| dd.s(i, j).abs()).sum())).collect()
}

fn stencil_rates(dd: &DriftDiffusion, axes: &[Axis], drift_only: &[bool], cross: CrossPolicy, rule: UpwindRule) -> std::result::Result<Rates, ()> {
    let d = dd.dim();
    // corner moves and their diagonal / drift contributions at full strength
    let mut corners: Vec<(Vec<i8>, f64)> = Vec::new();
    let mut cdiag = vec![0.0; d];
    let mut cdrift = vec![0.0; d];
    for i in 0..d {
        for j in i + 1..d {
            let a = 0.5 * (dd.s(i, j) + dd.s(j, i));
            if a == 0.0 || drift_only[i] || drift_only[j] {
                continue;
            }
            let (si, sj): ([i8; 2], [i8; 2]) = if a > 0.0 { ([1, -1], [1, -1]) } else { ([1, -1], [-1, 1]) };
            for k in 0..2 {
                let (di, dj) = (si[k], sj[k]);
                let li = if di > 0 { axes[i].hp } else { axes[i].hm };
                let lj = if dj > 0 { axes[j].hp } else { axes[j].hm };
                let rate = a.abs() / (2.0 * li * lj);
                cdiag[i] += rate * li * li;
                cdiag[j] += rate * lj * lj;
                cdrift[i] += rate * li * f64::from(di);
                cdrift[j] += rate * lj * f64::from(dj);
                let mut off = vec![0i8; d];
                off[i] = di;
                off[j] = dj;
                corners.push((off, rate));
            }
        }
    }
    let mut theta: f64 = 1.0;
    for i in 0..d {
        if cdiag[i] > dd.s(i, i) * (1.0 + 1e-12) {
            match cross {
                CrossPolicy::Strict => return Err(()),
                CrossPolicy::Clip => theta = theta.min(dd.s(i, i).max(0.0) / cdiag[i]),
            }
        }
    }
    let mut moves: Vec<(Vec<i8>, f64)> = corners.into_iter().map(|(o, r)| (o, r * theta)).collect();
    let mut upwind = false;
    for i in 0..d {
        let a = (dd.s(i, i) - theta * cdiag[i]).max(0.0);
        let mu = dd.mu[i] - theta * cdrift[i];
        let Axis { hp, hm, no_plus, no_minus } = axes[i];
        let (qp, qm) = if drift_only[i] {
            // keep only the inward part of the drift
            let qp = if no_plus { 0.0 } else { mu.max(0.0) / hp };
            let qm = if no_minus { 0.0 } else { (-mu).max(0.0) / hm };
            (qp, qm)
        } else {
            let w = hp + hm;
            let (cp, cm) = (a / (hp * w) + mu / w, a / (hm * w) - mu / w);
            if cp >= 0.0 && cm >= 0.0 {
                (cp, cm)
            } else {
                upwind = true;
                match rule {
                    UpwindRule::Minimal => (mu.max(0.0) / hp, (-mu).max(0.0) / hm),
                    UpwindRule::Full => (a / (hp * w) + mu.max(0.0) / hp, a / (hm * w) + (-mu).max(0.0) / hm),
                }
            }
        };
        let mut off = vec![0i8; d];
        off[i] = 1;
        moves.push((off.clone(), qp));
        off[i] = -1;
        moves.push((off, qm));
    }
    moves.retain(|m| m.1 > 0.0);
    Ok(Rates { moves, upwind, theta })
}

struct StateBuild {
    rows: Vec<TransitionRow>,
    rewards: Vec<f64>,
    discount: f64,
    lambda: f64,
    info: Vec<RowInfo>,
}

fn build_state(problem: &TaylorProblem<'_>, grid: &CoarseGrid, opts: &KdOptions, g: usize) -> Result<StateBuild> {
    let mdp = problem.mdp;
    let alpha = mdp.alpha;
    let d = grid.index.dim();
    let k = grid.index.state(g);
    let x = grid.fine_state(g);
    let fx = grid.fine.index_of(&x).unwrap();
    let fine_slots = mdp.actions.slots(fx);
    let binding: Vec<bool> = (0..d).map(|i| k[i] == 0 || k[i] == grid.index.upper()[i]).collect();
    let on_boundary = binding.iter().any(|&b| b);
    let n_act = fine_slots.len();

    if on_boundary && opts.boundary == BoundaryRule::Instantaneous {
        let t: Vec<i64> = (0..d)
            .map(|i| {
                if k[i] == 0 {
                    1
                } else if k[i] == grid.index.upper()[i] {
                    k[i] - 1
                } else {
                    k[i]
                }
            })
            .collect();
        let row = TransitionRow { entries: vec![(grid.index.index_of(&t).unwrap(), 1.0)] };
        let info = RowInfo { boundary: true, upwind: false, uniform: false, theta: 1.0 };
        return Ok(StateBuild { rows: vec![row; n_act], rewards: vec![0.0; n_act], discount: 1.0, lambda: 1.0, info: vec![info; n_act] });
    }

    let axes: Vec<Axis> = (0..d)
        .map(|i| {
            let p = &grid.points[i];
            let ki = k[i] as usize;
            let hp = (ki + 1 < p.len()).then(|| (p[ki + 1] - p[ki]) as f64);
            let hm = (ki > 0).then(|| (p[ki] - p[ki - 1]) as f64);
            Axis {
                hp: hp.or(hm).unwrap(),
                hm: hm.or(hp).unwrap(),
                no_plus: hp.is_none(),
                no_minus: hm.is_none(),
            }
        })
        .collect();
    let uniform = axes.iter().all(|a| a.hp == a.hm);
    let drift_only: Vec<bool> = (0..d).map(|i| opts.boundary == BoundaryRule::FirstOrder && binding[i]).collect();

    let mut rates = Vec::with_capacity(n_act);
    for s in fine_slots.clone() {
        let dd = problem.moments_at(s)?;
        match stencil_rates(&dd, &axes, &drift_only, opts.cross, opts.upwind) {
            Ok(r) => rates.push(r),
            Err(()) => {
                return Err(Error::NotDiagonallyDominant {
                    state: x.clone(),
                    action: mdp.actions.action(s).to_vec(),
                    entries: dominance_entries(&dd),
                })
            }
        }
    }
    let totals: Vec<f64> = rates.iter().map(|r| r.moves.iter().map(|m| m.1).sum()).collect();
    let lambda = totals.iter().copied().fold(0.0_f64, f64::max);
    let denom = (1.0 - alpha) + alpha * lambda;
    let h = grid.h as f64;
    let discount = if lambda > 0.0 { state_discount(h * h * lambda, h, alpha) } else { 0.0 };

    let mut rows = Vec::with_capacity(n_act);
    let mut rewards = Vec::with_capacity(n_act);
    let mut info = Vec::with_capacity(n_act);
    let mut t = vec![0i64; d];
    for ((r, s), total) in rates.iter().zip(fine_slots).zip(&totals) {
        let mut entries = Vec::with_capacity(r.moves.len() + 1);
        if lambda > 0.0 {
            for (off, q) in &r.moves {
                for i in 0..d {
                    let step = match off[i] {
                        1 if axes[i].no_plus => -1,
                        -1 if axes[i].no_minus => 1,
                        o => i64::from(o),
                    };
                    t[i] = k[i] + step;
                }
                entries.push((grid.index.index_of(&t).unwrap(), q / lambda));
            }
            entries.push((g, (1.0 - total / lambda).max(0.0)));
        } else {
            entries.push((g, 1.0));
        }
        rows.push(TransitionRow { entries }.normalized_form());
        rewards.push(mdp.rewards[s] / denom);
        info.push(RowInfo { boundary: on_boundary, upwind: r.upwind, uniform, theta: r.theta });
    }
    Ok(StateBuild { rows, rewards, discount, lambda, info })
}

/// Builds the chain for every grid state and every fine action there.
pub fn build_kd_chain(problem: &TaylorProblem<'_>, opts: &KdOptions) -> Result<KdChain> {
    let mdp = problem.mdp;
    let grid = CoarseGrid::new(&mdp.lattice, opts.h)?;
    let actions = ActionTable::from_fn(&grid.index, mdp.actions.dim(), |k| {
        let g = grid.index.index_of(k).unwrap();
        let fx = grid.fine_index(g);
        Ok(mdp.actions.actions(fx).map(|a| a.to_vec()).collect::<Vec<Action>>())
    })?;
    let states: Vec<StateBuild> =
        (0..grid.len()).into_par_iter().map(|g| build_state(problem, &grid, opts, g)).collect::<Result<_>>()?;

    let mut fine_slot = Vec::with_capacity(actions.num_slots());
    for g in 0..grid.len() {
        let start = mdp.actions.slots(grid.fine_index(g)).start;
        fine_slot.extend((0..actions.slots(g).len()).map(|j| start + j));
    }
    let mut rows = Vec::with_capacity(actions.num_slots());
    let mut rewards = Vec::with_capacity(actions.num_slots());
    let mut info = Vec::with_capacity(actions.num_slots());
    let mut discounts = Vec::with_capacity(grid.len());
    let mut lambda = Vec::with_capacity(grid.len());
    for sb in states {
        rows.extend(sb.rows);
        rewards.extend(sb.rewards);
        info.extend(sb.info);
        discounts.push(sb.discount);
        lambda.push(sb.lambda);
    }
    let chain_mdp =
        LatticeMdp::new(grid.index.clone(), actions, Kernel::Sparse(SparseKernel::from_rows(rows)), rewards, discounts, mdp.alpha)?;
    Ok(KdChain { grid, mdp: chain_mdp, fine_slot, lambda, info, options: *opts })
}

/// Worst deviations from the moment and reward identities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TcpReport {
    pub rows_checked: usize,
    pub central_rows: usize,
    pub boundary_rows_skipped: usize,
    /// Relative first-moment error over all checked rows.
    pub worst_first: f64,
    /// Relative second-moment error over central rows.
    pub worst_second_central: f64,
    /// Relative second-moment error over the remaining rows.
    pub worst_second_other: f64,
    pub worst_reward: f64,
    /// Chain slot attaining `worst_first`.
    pub worst_first_slot: Option<usize>,
    /// Largest relative error of the cross moments when the off-diagonal
    /// terms were shrunk.
    pub clip_defect: f64,
}

/// Compares chain-row moments with `factor * (mu, sigma2)` and the rewards
/// with `(1 - a_h) / (1 - a) r` on all non-boundary rows.
pub fn verify_tcp_equivalence(chain: &KdChain, problem: &TaylorProblem<'_>) -> Result<TcpReport> {
    let cm = &chain.mdp;
    let d = cm.lattice.dim();
    let alpha = cm.alpha;
    let mut rep = TcpReport::default();
    for g in 0..chain.grid.len() {
        let x = chain.grid.fine_state(g);
        let f = chain.tcp_factor(g);
        let ah = cm.discounts[g];
        for s in cm.actions.slots(g) {
            let info = chain.info[s];
            if info.boundary {
                rep.boundary_rows_skipped += 1;
                continue;
            }
            rep.rows_checked += 1;
            let fs = chain.fine_slot[s];
            let dd = problem.moments_at(fs)?;
            let mut m1 = vec![0.0; d];
            let mut m2 = vec![0.0; d * d];
            for (t, p) in cm.row(s).entries {
                let y = chain.grid.fine_state(t);
                for i in 0..d {
                    let di = (y[i] - x[i]) as f64;
                    m1[i] += p * di;
                    for j in 0..d {
                        m2[i * d + j] += p * di * (y[j] - x[j]) as f64;
                    }
                }
            }
            let scale = 1.0 + dd.mu.iter().chain(&dd.sigma2).fold(0.0_f64, |m, v| m.max(v.abs()));
            let e1 = (0..d).map(|i| (m1[i] - f * dd.mu[i]).abs()).fold(0.0, f64::max) / (f * scale);
            if e1 > rep.worst_first {
                rep.worst_first = e1;
                rep.worst_first_slot = Some(s);
            }
            let target = |i: usize, j: usize| if i == j { dd.s(i, j) } else { info.theta * dd.s(i, j) };
            let e2 = (0..d * d).map(|k| (m2[k] - f * target(k / d, k % d)).abs()).fold(0.0, f64::max) / (f * scale);
            if info.is_central() {
                rep.central_rows += 1;
                rep.worst_second_central = rep.worst_second_central.max(e2);
            } else {
                rep.worst_second_other = rep.worst_second_other.max(e2);
            }
            if info.theta < 1.0 {
                let defect = (0..d * d)
                    .filter(|k| k / d != k % d)
                    .map(|k| (1.0 - info.theta) * dd.sigma2[k].abs())
                    .fold(0.0, f64::max)
                    / scale;
                rep.clip_defect = rep.clip_defect.max(defect);
            }
            let r = problem.mdp.rewards[fs];
            let expect = (1.0 - ah) / (1.0 - alpha) * r;
            let er = (cm.rewards[s] - expect).abs() / expect.abs().max(1e-300);
            if r != 0.0 {
                rep.worst_reward = rep.worst_reward.max(er);
            }
        }
    }
    Ok(rep)
}

/// One transition of the chain in fine coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub state: Vec<i64>,
    pub action: Vec<i64>,
    pub target: Vec<i64>,
    pub prob: f64,
    pub alpha_h: f64,
    pub r_tilde: f64,
}

pub fn chain_records(chain: &KdChain) -> Vec<ChainRecord> {
    let cm = &chain.mdp;
    let mut out = Vec::new();
    for g in 0..chain.grid.len() {
        let x = chain.grid.fine_state(g);
        for s in cm.actions.slots(g) {
            for (t, p) in cm.row(s).entries {
                out.push(ChainRecord {
                    state: x.clone(),
                    action: cm.actions.action(s).to_vec(),
                    target: chain.grid.fine_state(t),
                    prob: p,
                    alpha_h: cm.discounts[g],
                    r_tilde: cm.rewards[s],
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::{BoundarySpec, MomentProvider, MomentSource};

    #[test]
    fn grid_appends_upper_bound() {
        let lat = StateLattice::new(vec![-3], vec![4]).unwrap();
        let g = CoarseGrid::new(&lat, 3).unwrap();
        assert_eq!(g.points(0), &[-3, 0, 3, 4]);
        assert!(CoarseGrid::new(&lat, 0).is_err());
        assert_eq!(g.fine_state(g.nearest(&[2], Tie::Lower)), vec![3]);
        assert_eq!(g.fine_state(g.nearest(&[-2], Tie::Lower)), vec![-3]);
        let even = CoarseGrid::new(&StateLattice::from_upper(vec![4]).unwrap(), 2).unwrap();
        assert_eq!(even.fine_state(even.nearest(&[1], Tie::Lower)), vec![0]);
        assert_eq!(even.fine_state(even.nearest(&[1], Tie::Upper)), vec![2]);
        assert_eq!(even.fine_state(even.floor(&[3])), vec![2]);
    }

    #[test]
    fn central_row_examples() {
        let r = build_interior_row_1d(0.0, 2.0, 2.0, 1.0).unwrap();
        assert_eq!((r.p_plus, r.p_minus, r.p_stay), (0.5, 0.5, 0.0));
        let r = build_interior_row_1d(0.4, 1.0, 1.0, 1.0).unwrap();
        assert!((r.p_plus - 0.7).abs() < 1e-15 && (r.p_minus - 0.3).abs() < 1e-15 && r.p_stay == 0.0);
        assert!(matches!(build_interior_row_1d(2.0, 1.0, 1.0, 1.0), Err(Error::SmallDriftViolated { .. })));
    }

    #[test]
    fn upwind_row_examples() {
        let c = build_interior_row_1d(0.0, 1.5, 1.5, 1.0).unwrap();
        let u = build_interior_row_upwind_1d(0.0, 1.5, 1.5, 1.0).unwrap();
        assert_eq!(c, u);
        let r = build_interior_row_upwind_1d(2.0, 0.5, 2.5, 1.0).unwrap();
        assert!(r.p_plus >= 0.0 && r.p_minus >= 0.0 && r.p_stay >= 0.0);
        assert!((r.p_plus + r.p_minus + r.p_stay - 1.0).abs() < 1e-15);
        // first moment times Q is the drift
        assert!(((r.p_plus - r.p_minus) * 2.5 - 2.0).abs() < 1e-14);
    }

    #[test]
    fn discount_and_reward_forms() {
        assert_eq!(state_discount(1.0, 1.0, 0.9), 0.9);
        assert!((state_discount(2.0, 1.0, 0.99) - 1.0 / (1.0 + 0.5 * (1.0 / 0.99 - 1.0))).abs() < 1e-15);
        assert!(state_discount(4.0, 1.0, 0.9) > state_discount(2.0, 1.0, 0.9));
        let (a, b) = rescale_reward(-10.0, 0.99, 0.99, 1.0, 1.0);
        assert!((a + 10.0).abs() < 1e-12 && (b + 10.0).abs() < 1e-12);
    }

    struct Const(DriftDiffusion);
    impl MomentProvider for Const {
        fn moments(&self, _: &[i64], _: &[i64]) -> Result<DriftDiffusion> {
            Ok(self.0.clone())
        }
    }

    fn flat(n: i64, d: usize) -> LatticeMdp {
        let lat = StateLattice::from_upper(vec![n; d]).unwrap();
        LatticeMdp::from_fns(lat, 1, 0.9, |_| Ok(vec![vec![0]]), |x, _| vec![(x.to_vec(), 1.0)], |x, _| -(x[0] as f64)).unwrap()
    }

    #[test]
    fn diagonal_diffusion_is_product_of_axis_stencils() {
        let m = flat(8, 2);
        let p = Const(DriftDiffusion::new(vec![0.5, -0.25], vec![2.0, 0.0, 0.0, 1.0]));
        let b = BoundarySpec::oblique(vec![1.0; 2], vec![1.0; 2]);
        let prob = TaylorProblem::new(&m, MomentSource::Analytic(&p), &b).unwrap();
        let c = build_kd_chain(&prob, &KdOptions::new(2)).unwrap();
        let g = c.grid.grid_index_of(&[4, 4]).unwrap();
        let lam = c.lambda[g];
        // rates 2/8 +- 0.5/4 and 1/8 -+ 0.25/4
        assert!((lam - (0.5 + 0.25)).abs() < 1e-15);
        let row = c.mdp.row(c.mdp.actions.slots(g).start);
        assert_eq!(row.entries.len(), 4);
        let rep = verify_tcp_equivalence(&c, &prob).unwrap();
        assert!(rep.worst_first < 1e-12 && rep.worst_second_central < 1e-12 && rep.worst_reward < 1e-12);
        assert!(rep.central_rows > 0);
    }

    #[test]
    fn cross_terms_follow_sign() {
        let m = flat(8, 2);
        let b = BoundarySpec::oblique(vec![1.0; 2], vec![1.0; 2]);
        for sgn in [1.0, -1.0] {
            let p = Const(DriftDiffusion::new(vec![0.1, 0.2], vec![2.0, 0.5 * sgn, 0.5 * sgn, 1.0]));
            let prob = TaylorProblem::new(&m, MomentSource::Analytic(&p), &b).unwrap();
            let c = build_kd_chain(&prob, &KdOptions::new(1)).unwrap();
            let g = c.grid.grid_index_of(&[4, 4]).unwrap();
            let row = c.mdp.row(c.mdp.actions.slots(g).start);
            let diag = if sgn > 0.0 { [5, 5] } else { [5, 3] };
            assert!(row.entries.iter().any(|&(t, p)| t == c.grid.grid_index_of(&diag).unwrap() && p > 0.0));
            assert!(row.entries.len() <= 1 + 4 + 4);
            let rep = verify_tcp_equivalence(&c, &prob).unwrap();
            assert!(rep.worst_first < 1e-12 && rep.worst_second_central < 1e-12, "{rep:?}");
        }
    }

    #[test]
    fn dominance_violation_is_reported_or_clipped() {
        let m = flat(6, 2);
        let b = BoundarySpec::oblique(vec![1.0; 2], vec![1.0; 2]);
        let p = Const(DriftDiffusion::new(vec![0.0, 0.0], vec![1.0, 1.5, 1.5, 4.0]));
        let prob = TaylorProblem::new(&m, MomentSource::Analytic(&p), &b).unwrap();
        let strict = KdOptions { cross: CrossPolicy::Strict, ..KdOptions::new(1) };
        assert!(matches!(build_kd_chain(&prob, &strict), Err(Error::NotDiagonallyDominant { .. })));
        let c = build_kd_chain(&prob, &KdOptions::new(1)).unwrap();
        assert!(c.info.iter().all(|i| (i.theta - 1.0 / 1.5).abs() < 1e-12));
        assert!(c.mdp.actions.slots(0).all(|s| c.mdp.row(s).is_stochastic(1e-12)));
        let rep = verify_tcp_equivalence(&c, &prob).unwrap();
        assert!(rep.worst_first < 1e-12 && rep.clip_defect > 0.0);
    }

    #[test]
    fn instantaneous_boundary_steps_inward() {
        let m = flat(8, 2);
        let p = Const(DriftDiffusion::new(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]));
        let b = BoundarySpec::oblique(vec![0.5, 0.5], vec![1.0; 2]);
        let prob = TaylorProblem::new(&m, MomentSource::Analytic(&p), &b).unwrap();
        let opts = KdOptions { boundary: BoundaryRule::Instantaneous, ..KdOptions::new(2) };
        let c = build_kd_chain(&prob, &opts).unwrap();
        let g = c.grid.grid_index_of(&[0, 0]).unwrap();
        let row = c.mdp.row(c.mdp.actions.slots(g).start);
        assert_eq!(row.entries, vec![(c.grid.grid_index_of(&[2, 2]).unwrap(), 1.0)]);
        assert_eq!(c.mdp.discounts[g], 1.0);
        assert_eq!(c.mdp.rewards[c.mdp.actions.slots(g).start], 0.0);
        let top = c.grid.grid_index_of(&[8, 4]).unwrap();
        assert_eq!(c.mdp.row(c.mdp.actions.slots(top).start).entries, vec![(c.grid.grid_index_of(&[6, 4]).unwrap(), 1.0)]);
    }

    #[test]
    fn ragged_last_cell_stays_first_order_consistent() {
        let m = flat(7, 1);
        let p = Const(DriftDiffusion::scalar(0.3, 1.0));
        let b = BoundarySpec::oblique(vec![1.0], vec![1.0]);
        let prob = TaylorProblem::new(&m, MomentSource::Analytic(&p), &b).unwrap();
        let c = build_kd_chain(&prob, &KdOptions::new(3)).unwrap();
        assert_eq!(c.grid.points(0), &[0, 3, 6, 7]);
        let rep = verify_tcp_equivalence(&c, &prob).unwrap();
        assert!(rep.worst_first < 1e-12, "{rep:?}");
        assert!((0..c.mdp.actions.num_slots()).all(|s| c.mdp.row(s).is_stochastic(1e-12)));
    }
}
