//! Benchmark models.

pub mod dist;
pub mod heavy_traffic;
pub mod inventory;
pub mod routing;
pub mod service_rate;

use crate::error::Result;
use crate::lattice::LatticeMdp;
use crate::taylor::{moments_from_kernel, BoundarySpec, MomentSource, TaylorProblem};

pub use heavy_traffic::HeavyTraffic;
pub use inventory::{InventoryModel, InventoryParams};
pub use routing::{ArrivalTruncation, RoutingModel, RoutingParams};
pub use service_rate::{ServiceCost, ServiceRateModel, ServiceRateParams};

/// Birth-death queue wrapped as a model; moments come from its rows.
#[derive(Debug, Clone)]
pub struct QueueModel {
    pub queue: HeavyTraffic,
    pub mdp: LatticeMdp,
    pub boundary: BoundarySpec,
}

impl QueueModel {
    pub fn build(queue: HeavyTraffic, m: i64) -> Result<Self> {
        Ok(Self { mdp: queue.mdp(m)?, queue, boundary: BoundarySpec::oblique(vec![1.0], vec![1.0]) })
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    ServiceRate(ServiceRateModel),
    Inventory(InventoryModel),
    Routing(RoutingModel),
    Queue(QueueModel),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::ServiceRate(_) => "service_rate",
            Model::Inventory(_) => "inventory",
            Model::Routing(_) => "routing",
            Model::Queue(_) => "heavy_traffic",
        }
    }

    pub fn mdp(&self) -> &LatticeMdp {
        match self {
            Model::ServiceRate(m) => &m.mdp,
            Model::Inventory(m) => &m.mdp,
            Model::Routing(m) => &m.mdp,
            Model::Queue(m) => &m.mdp,
        }
    }

    pub fn boundary(&self) -> &BoundarySpec {
        match self {
            Model::ServiceRate(m) => &m.boundary,
            Model::Inventory(m) => &m.boundary,
            Model::Routing(m) => &m.boundary,
            Model::Queue(m) => &m.boundary,
        }
    }

    /// Closed-form moments where the model has them.
    pub fn moments(&self) -> MomentSource<'_> {
        match self {
            Model::ServiceRate(m) => MomentSource::Analytic(m),
            Model::Inventory(m) => MomentSource::Analytic(m),
            Model::Routing(m) => MomentSource::Analytic(m),
            Model::Queue(_) => MomentSource::Kernel,
        }
    }

    pub fn problem(&self) -> Result<TaylorProblem<'_>> {
        TaylorProblem::new(self.mdp(), self.moments(), self.boundary())
    }

    /// Slots whose rows keep every jump, so that closed-form and row moments
    /// must coincide.
    pub fn row_is_untruncated(&self, slot: usize) -> bool {
        let mdp = self.mdp();
        let x = mdp.lattice.state(mdp.actions.state_of(slot));
        match self {
            Model::ServiceRate(m) => x[0] > 0 && x[0] < m.params.m,
            Model::Queue(_) => x[0] > mdp.lattice.lower()[0] && x[0] < mdp.lattice.upper()[0],
            Model::Inventory(m) => {
                let u = mdp.actions.action(slot)[0];
                x[0] > -m.params.m && x[0] + u - m.d_max() >= -m.params.m
            }
            Model::Routing(m) => m.row_is_untruncated(slot),
        }
    }

    /// Largest difference between closed-form and row moments over the
    /// untruncated slots, and the number of slots compared.
    pub fn moment_agreement(&self) -> Result<(f64, usize)> {
        let mdp = self.mdp();
        let problem = self.problem()?;
        let mut worst = 0.0f64;
        let mut checked = 0;
        for s in (0..mdp.actions.num_slots()).filter(|&s| self.row_is_untruncated(s)) {
            let k = moments_from_kernel(mdp, s);
            let a = problem.moments_at(s)?;
            for (u, v) in k.mu.iter().zip(&a.mu).chain(k.sigma2.iter().zip(&a.sigma2)) {
                worst = worst.max((u - v).abs());
            }
            checked += 1;
        }
        Ok((worst, checked))
    }
}
