//! Periodic-review inventory with backlog on `[-M, M]`.
//!
//! Orders arrive immediately; the state moves to `x + u - D` with Poisson
//! demand. The lowest state moves deterministically to `-M + u`.

use serde::Deserialize;

use super::dist::truncated_poisson;
use crate::error::{Error, Result};
use crate::lattice::{LatticeMdp, StateLattice};
use crate::taylor::{BoundarySpec, DriftDiffusion, MomentProvider};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InventoryParams {
    pub lambda: f64,
    /// Per-unit ordering cost.
    pub c: f64,
    pub holding: f64,
    pub backlog: f64,
    pub m: i64,
    pub u_max: i64,
    /// Upper-tail mass dropped from the demand distribution.
    pub tail: f64,
}

impl Default for InventoryParams {
    fn default() -> Self {
        Self { lambda: 5.0, c: 1.0, holding: 1.0, backlog: 4.0, m: 30, u_max: 15, tail: 1e-12 }
    }
}

impl InventoryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter("demand mean must be positive".into()));
        }
        if [self.c, self.holding, self.backlog].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("costs must be finite and nonnegative".into()));
        }
        if self.m < 2 || self.u_max < 1 {
            return Err(Error::InvalidParameter("need M >= 2 and u_max >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InventoryModel {
    pub params: InventoryParams,
    pub demand: Vec<f64>,
    pub mdp: LatticeMdp,
    pub boundary: BoundarySpec,
}

impl InventoryModel {
    pub fn build(params: InventoryParams, alpha: f64) -> Result<Self> {
        params.validate()?;
        let demand = truncated_poisson(params.lambda, params.tail)?;
        let m = params.m;
        let p = &params;
        let dm = &demand;
        let mdp = LatticeMdp::from_fns(
            StateLattice::new(vec![-m], vec![m])?,
            1,
            alpha,
            |x| Ok((0..=p.u_max.min(m - x[0])).map(|u| vec![u]).collect()),
            |x, u| {
                if x[0] == -m {
                    vec![(vec![-m + u[0]], 1.0)]
                } else {
                    dm.iter().enumerate().map(|(d, &q)| (vec![x[0] + u[0] - d as i64], q)).collect()
                }
            },
            |x, u| -expected_cost(p, dm, x[0], u[0]),
        )?;
        Ok(Self { params, demand, mdp, boundary: BoundarySpec::oblique(vec![1.0], vec![1.0]) })
    }

    /// Largest demand kept after truncation.
    pub fn d_max(&self) -> i64 {
        self.demand.len() as i64 - 1
    }
}

/// `c u + H E[(x+u-D)^+] + b E[(D-x-u)^+]` under the truncated demand.
pub fn expected_cost(p: &InventoryParams, demand: &[f64], x: i64, u: i64) -> f64 {
    let y = x + u;
    let (mut over, mut under) = (0.0, 0.0);
    for (d, &q) in demand.iter().enumerate() {
        let net = y - d as i64;
        if net > 0 {
            over += q * net as f64;
        } else {
            under += q * (-net) as f64;
        }
    }
    p.c * u as f64 + p.holding * over + p.backlog * under
}

impl MomentProvider for InventoryModel {
    fn moments(&self, state: &[i64], action: &[i64]) -> Result<DriftDiffusion> {
        let u = action[0] as f64;
        if state[0] == -self.params.m {
            return Ok(DriftDiffusion::scalar(u, u * u));
        }
        let mu = u - self.params.lambda;
        Ok(DriftDiffusion::scalar(mu, mu * mu + self.params.lambda))
    }
}
