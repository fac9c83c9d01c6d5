//! Multi-pool overflow routing.
//!
//! Pool `i` has `N_i` servers and a buffer of size `M`; `x_i` counts type-`i`
//! customers in the system. An action moves `u_ij` waiting type-`i`
//! customers to idle servers of pool `j`. After the move, pool `i` loses
//! `Binomial(z_i ^ N_i, p_i)` departures and gains `Poisson(lambda_i)`
//! arrivals. Actions are vectors `(u_ij)` over ordered pairs `i != j` in
//! lexicographic order.

use serde::Deserialize;

use super::dist::{binomial, truncated_poisson};
use crate::error::{Error, Result};
use crate::lattice::{enumerate_box_polyhedron, ActionTable, Kernel, LatticeMdp, PostDecisionKernel, StateLattice, StationaryPolicy};
use crate::taylor::{BoundarySpec, DriftDiffusion, MomentProvider};

/// Treatment of arrivals that would exceed the buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalTruncation {
    /// Arrivals to a full buffer are lost.
    #[default]
    Block,
    /// Mass beyond the buffer is dropped and the row rescaled.
    Renormalize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingParams {
    pub n: Vec<i64>,
    pub m: i64,
    pub p: Vec<f64>,
    pub holding: Vec<f64>,
    /// `overflow[i][j]` is the cost of moving one type-`i` customer to pool
    /// `j`; the diagonal is ignored.
    pub overflow: Vec<Vec<f64>>,
    /// Explicit arrival means; otherwise `load * N_i * p_i`.
    pub lambda: Option<Vec<f64>>,
    pub load: Option<f64>,
    pub tail: f64,
    pub truncation: ArrivalTruncation,
}

impl Default for RoutingParams {
    fn default() -> Self {
        Self {
            n: vec![10, 10],
            m: 10,
            p: vec![0.56, 0.56],
            holding: vec![1.0, 4.0],
            overflow: vec![vec![0.0, 5.0], vec![1.0, 0.0]],
            lambda: None,
            load: Some(0.8),
            tail: 1e-12,
            truncation: ArrivalTruncation::Block,
        }
    }
}

impl RoutingParams {
    pub fn pools(&self) -> usize {
        self.n.len()
    }

    /// Ordered pairs `(i, j)`, `i != j`, in action-coordinate order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let j = self.pools();
        (0..j).flat_map(|a| (0..j).filter(move |&b| b != a).map(move |b| (a, b))).collect()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        match (&self.lambda, self.load) {
            (Some(l), _) => l.clone(),
            (None, Some(r)) => self.n.iter().zip(&self.p).map(|(&n, &p)| r * n as f64 * p).collect(),
            (None, None) => vec![f64::NAN; self.pools()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.pools();
        if j == 0 {
            return Err(Error::InvalidParameter("at least one pool required".into()));
        }
        if self.p.len() != j || self.holding.len() != j || self.overflow.len() != j || self.overflow.iter().any(|r| r.len() != j) {
            return Err(Error::InvalidParameter(format!("pool parameters must all have length {j}")));
        }
        if self.lambda.is_some() == self.load.is_some() {
            return Err(Error::InvalidParameter("give exactly one of lambda and load".into()));
        }
        if self.lambda.as_ref().is_some_and(|l| l.len() != j) {
            return Err(Error::InvalidParameter(format!("lambda must have length {j}")));
        }
        if self.n.iter().any(|&n| n < 1) || self.m < 1 {
            return Err(Error::InvalidParameter("need N_i >= 1 and M >= 1".into()));
        }
        if self.p.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidParameter("service probabilities must lie in (0,1]".into()));
        }
        if self.lambdas().iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter("arrival means must be finite and nonnegative".into()));
        }
        let costs = self.holding.iter().chain(self.overflow.iter().flatten());
        if costs.into_iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidParameter("costs must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Post-decision state `x + inflow - outflow`.
    pub fn post_state(&self, x: &[i64], u: &[i64]) -> Vec<i64> {
        let mut z = x.to_vec();
        for (k, &(a, b)) in self.pairs().iter().enumerate() {
            z[a] -= u[k];
            z[b] += u[k];
        }
        z
    }

    /// `sum B_ij u_ij + sum H_i (x_i - sum_j u_ij - N_i)^+`.
    pub fn cost(&self, x: &[i64], u: &[i64]) -> f64 {
        let mut out = vec![0i64; self.pools()];
        let mut c = 0.0;
        for (k, &(a, b)) in self.pairs().iter().enumerate() {
            c += self.overflow[a][b] * u[k] as f64;
            out[a] += u[k];
        }
        for i in 0..self.pools() {
            c += self.holding[i] * (x[i] - out[i] - self.n[i]).max(0) as f64;
        }
        c
    }

    /// Feasible overflow vectors at `x`.
    pub fn actions(&self, x: &[i64]) -> Vec<Vec<i64>> {
        let pairs = self.pairs();
        let waiting: Vec<i64> = (0..self.pools()).map(|i| (x[i] - self.n[i]).max(0)).collect();
        let idle: Vec<i64> = (0..self.pools()).map(|i| (self.n[i] - x[i]).max(0)).collect();
        let lo = vec![0; pairs.len()];
        let hi: Vec<i64> = pairs.iter().map(|&(a, b)| waiting[a].min(idle[b])).collect();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for i in 0..self.pools() {
            rows.push(pairs.iter().map(|&(_, b)| i64::from(b == i)).collect());
            rhs.push(idle[i]);
            rows.push(pairs.iter().map(|&(a, _)| i64::from(a == i)).collect());
            rhs.push(waiting[i]);
        }
        enumerate_box_polyhedron(&lo, &hi, &rows, &rhs)
    }
}

#[derive(Debug, Clone)]
pub struct RoutingModel {
    pub params: RoutingParams,
    pub lambda: Vec<f64>,
    /// Largest arrival count kept per pool.
    pub arrival_max: Vec<i64>,
    pub mdp: LatticeMdp,
    pub boundary: BoundarySpec,
}

fn axis_factor(n: i64, top: i64, p: f64, arrivals: &[f64], trunc: ArrivalTruncation) -> Result<Vec<f64>> {
    let e = (top + 1) as usize;
    let mut f = vec![0.0; e * e];
    for z in 0..=top {
        let busy = z.min(n);
        let dep = binomial(busy as u64, p)?;
        let row = &mut f[z as usize * e..(z as usize + 1) * e];
        for (d, &pd) in dep.iter().enumerate() {
            for (k, &pk) in arrivals.iter().enumerate() {
                let y = z - d as i64 + k as i64;
                if y <= top {
                    row[y as usize] += pd * pk;
                } else if trunc == ArrivalTruncation::Block {
                    row[top as usize] += pd * pk;
                }
            }
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(f)
}

impl RoutingModel {
    pub fn build(params: RoutingParams, alpha: f64) -> Result<Self> {
        params.validate()?;
        let lambda = params.lambdas();
        let tops: Vec<i64> = params.n.iter().map(|&n| n + params.m).collect();
        let lattice = StateLattice::from_upper(tops.clone())?;
        let actions = ActionTable::from_fn(&lattice, params.pairs().len(), |x| Ok(params.actions(x)))?;
        let mut post = Vec::with_capacity(actions.num_slots());
        let mut rewards = Vec::with_capacity(actions.num_slots());
        for s in 0..actions.num_slots() {
            let x = lattice.state(actions.state_of(s));
            let u = actions.action(s);
            let z = params.post_state(&x, u);
            post.push(lattice.index_of(&z).ok_or_else(|| Error::InfeasibleAction { state: x.clone(), action: u.to_vec() })?);
            rewards.push(-params.cost(&x, u));
        }
        let arrivals = lambda.iter().map(|&l| truncated_poisson(l, params.tail)).collect::<Result<Vec<_>>>()?;
        let arrival_max = arrivals.iter().map(|a| a.len() as i64 - 1).collect();
        let factors = (0..params.pools())
            .map(|i| axis_factor(params.n[i], tops[i], params.p[i], &arrivals[i], params.truncation))
            .collect::<Result<Vec<_>>>()?;
        let extents = lattice.extents().to_vec();
        let kernel = Kernel::PostDecision(PostDecisionKernel::new(post, factors, extents));
        let n = lattice.len();
        let mdp = LatticeMdp::new(lattice, actions, kernel, rewards, vec![alpha; n], alpha)?;
        let boundary = BoundarySpec::oblique(params.p.clone(), vec![1.0; params.pools()]);
        Ok(Self { params, lambda, arrival_max, mdp, boundary })
    }

    /// True when no arrival mass of `slot` is clamped or dropped at the top.
    pub fn row_is_untruncated(&self, slot: usize) -> bool {
        let t = &self.mdp.actions;
        let z = self.params.post_state(&self.mdp.lattice.state(t.state_of(slot)), t.action(slot));
        z.iter().zip(&self.arrival_max).zip(self.mdp.lattice.upper()).all(|((&z, &a), &u)| z + a <= u)
    }

    /// Overflows as many customers as possible; ties go to the first action.
    pub fn max_overflow_policy(&self) -> StationaryPolicy {
        let t = &self.mdp.actions;
        let slots = (0..self.mdp.num_states())
            .map(|x| {
                let r = t.slots(x);
                let best = r.clone().map(|s| t.action(s).iter().sum::<i64>()).max().unwrap();
                r.clone().find(|&s| t.action(s).iter().sum::<i64>() == best).unwrap()
            })
            .collect();
        StationaryPolicy { slots }
    }
}

impl MomentProvider for RoutingModel {
    fn moments(&self, state: &[i64], action: &[i64]) -> Result<DriftDiffusion> {
        let p = &self.params;
        let d = p.pools();
        let z = p.post_state(state, action);
        let mut mu = vec![0.0; d];
        let mut var = vec![0.0; d];
        for i in 0..d {
            let busy = z[i].min(p.n[i]) as f64;
            mu[i] = (z[i] - state[i]) as f64 + self.lambda[i] - p.p[i] * busy;
            var[i] = self.lambda[i] + busy * p.p[i] * (1.0 - p.p[i]);
        }
        let sigma2 = (0..d * d)
            .map(|k| {
                let (i, j) = (k / d, k % d);
                mu[i] * mu[j] + if i == j { var[i] } else { 0.0 }
            })
            .collect();
        Ok(DriftDiffusion::new(mu, sigma2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::moments_from_kernel;

    fn small() -> RoutingParams {
        RoutingParams { n: vec![3, 4], m: 3, p: vec![0.5, 0.3], lambda: Some(vec![1.0, 0.8]), load: None, ..Default::default() }
    }

    #[test]
    fn action_sets_respect_both_limits() {
        let p = RoutingParams::default();
        assert_eq!(p.actions(&[5, 5]), vec![vec![0, 0]]);
        let a = p.actions(&[14, 7]);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|u| u[1] == 0 && u[0] <= 3));
        let p3 = RoutingParams {
            n: vec![2, 2, 2],
            p: vec![0.5; 3],
            holding: vec![1.0; 3],
            overflow: vec![vec![1.0; 3]; 3],
            ..Default::default()
        };
        // two waiting in pool 0, one idle server in each of pools 1 and 2
        let a = p3.actions(&[4, 1, 1]);
        assert_eq!(a, vec![vec![0; 6], vec![0, 1, 0, 0, 0, 0], vec![1, 0, 0, 0, 0, 0], vec![1, 1, 0, 0, 0, 0]]);
    }

    #[test]
    fn holding_cost_counts_waiting_customers() {
        let p = RoutingParams::default();
        assert_eq!(p.cost(&[13, 0], &[0, 0]), 3.0);
        assert_eq!(p.cost(&[13, 0], &[2, 0]), 2.0 * 5.0 + 1.0);
    }

    #[test]
    fn analytic_moments_match_rows_where_no_mass_is_clamped() {
        for trunc in [ArrivalTruncation::Block, ArrivalTruncation::Renormalize] {
            let m = RoutingModel::build(RoutingParams { truncation: trunc, m: 20, ..small() }, 0.9).unwrap();
            let d_max: Vec<i64> = m.lambda.iter().map(|&l| truncated_poisson(l, 1e-12).unwrap().len() as i64 - 1).collect();
            let mut checked = 0;
            for s in 0..m.mdp.actions.num_slots() {
                let x = m.mdp.lattice.state(m.mdp.actions.state_of(s));
                let z = m.params.post_state(&x, m.mdp.actions.action(s));
                if (0..2).any(|i| z[i] + d_max[i] > m.mdp.lattice.upper()[i]) {
                    continue;
                }
                checked += 1;
                let k = moments_from_kernel(&m.mdp, s);
                let a = m.moments(&x, m.mdp.actions.action(s)).unwrap();
                for (u, v) in k.mu.iter().zip(&a.mu).chain(k.sigma2.iter().zip(&a.sigma2)) {
                    assert!((u - v).abs() < 1e-9, "{x:?}");
                }
            }
            assert!(checked > 0);
        }
    }

    #[test]
    fn empty_system_moments_are_poisson() {
        let m = RoutingModel::build(small(), 0.9).unwrap();
        let a = m.moments(&[0, 0], &[0, 0]).unwrap();
        assert_eq!(a.mu, vec![1.0, 0.8]);
        assert!((a.s(0, 0) - 2.0).abs() < 1e-15 && (a.s(0, 1) - 0.8).abs() < 1e-15);
        let full = m.moments(&[3, 0], &[0, 0]).unwrap();
        assert!((full.mu[0] - (1.0 - 1.5)).abs() < 1e-15);
    }

    #[test]
    fn rows_are_stochastic_and_blocked_at_the_top() {
        let m = RoutingModel::build(small(), 0.9).unwrap();
        let x = m.mdp.lattice.index_of(&[6, 7]).unwrap();
        let row = m.mdp.row(m.mdp.actions.slots(x).start);
        assert!(row.is_stochastic(1e-12));
        assert!(row.entries.iter().all(|&(t, _)| m.mdp.lattice.contains(&m.mdp.lattice.state(t))));
    }
}
