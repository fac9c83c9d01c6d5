//! Drift and diffusion of the one-step jump, boundary data and the
//! second-order generator.

use faer::{Mat, Side};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::LatticeMdp;
use crate::numeric::KahanSum;

/// First and second moments of `X_1 - x` under one action.
///
/// `sigma2` is the raw second moment `E[(X_1 - x)(X_1 - x)^T]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffusion {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

impl DriftDiffusion {
    pub fn new(mu: Vec<f64>, sigma2: Vec<f64>) -> Self {
        debug_assert_eq!(sigma2.len(), mu.len() * mu.len());
        Self { mu, sigma2 }
    }

    /// One-dimensional moments.
    pub fn scalar(mu: f64, sigma2: f64) -> Self {
        Self { mu: vec![mu], sigma2: vec![sigma2] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn s(&self, i: usize, j: usize) -> f64 {
        self.sigma2[i * self.dim() + j]
    }

    /// Eigenvalues of `sigma2`, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.sigma2, self.dim())
    }

    /// Checks symmetry and that `sigma2 - mu mu^T` is a covariance.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let scale = 1.0 + self.sigma2.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in 0..i {
                if (self.s(i, j) - self.s(j, i)).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParameter(format!("sigma2 not symmetric at ({i},{j})")));
                }
            }
        }
        let cov: Vec<f64> = (0..d * d).map(|k| self.sigma2[k] - self.mu[k / d] * self.mu[k % d]).collect();
        let lo = sym_eigenvalues(&cov, d)[0];
        if lo < -1e-9 * scale {
            return Err(Error::InvalidParameter(format!("jump covariance has eigenvalue {lo:e}")));
        }
        Ok(())
    }
}

fn sym_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![a[0]];
    }
    let m = Mat::<f64>::from_fn(d, d, |i, j| 0.5 * (a[i * d + j] + a[j * d + i]));
    m.self_adjoint_eigenvalues(Side::Lower).unwrap_or_else(|_| vec![f64::NAN; d])
}

/// Closed-form drift and diffusion supplied by a model.
pub trait MomentProvider: Sync {
    fn moments(&self, state: &[i64], action: &[i64]) -> Result<DriftDiffusion>;
}

/// Where the generator coefficients come from.
#[derive(Clone, Copy)]
pub enum MomentSource<'a> {
    /// Summed from the transition rows.
    Kernel,
    Analytic(&'a dyn MomentProvider),
}

impl std::fmt::Debug for MomentSource<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MomentSource::Kernel => f.write_str("Kernel"),
            MomentSource::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryKind {
    /// First-order expansion on the boundary.
    Fot,
    #[default]
    ObliqueDerivative,
}

/// Reflection data on an axis-aligned box.
///
/// At the face `x_i = lower_i` the direction has component `lower[i]`
/// (pointing into the box); at `x_i = upper_i` it has component
/// `-upper[i]`. Components of non-binding coordinates are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySpec {
    pub kind: BoundaryKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Minimal inwardness of a reflection direction.
pub const NU0: f64 = 1e-6;

impl BoundarySpec {
    pub fn oblique(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { kind: BoundaryKind::ObliqueDerivative, lower, upper }
    }

    pub fn fot(dim: usize) -> Self {
        Self { kind: BoundaryKind::Fot, lower: vec![0.0; dim], upper: vec![0.0; dim] }
    }

    /// Reflection direction at `state`, `None` in the interior.
    pub fn eta(&self, mdp: &LatticeMdp, state: &[i64]) -> Option<Vec<f64>> {
        let lat = &mdp.lattice;
        let mut any = false;
        let eta = (0..lat.dim())
            .map(|i| {
                if state[i] == lat.lower()[i] {
                    any = true;
                    self.lower[i]
                } else if state[i] == lat.upper()[i] {
                    any = true;
                    -self.upper[i]
                } else {
                    0.0
                }
            })
            .collect();
        any.then_some(eta)
    }

    /// Every face of the lattice must carry a direction pointing inward.
    pub fn validate(&self, mdp: &LatticeMdp) -> Result<()> {
        let d = mdp.lattice.dim();
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::MissingBoundaryData(format!("need {d} lower and upper coefficients")));
        }
        if self.kind == BoundaryKind::Fot {
            return Ok(());
        }
        for i in 0..d {
            if !(self.lower[i] >= NU0 && self.upper[i] >= NU0) {
                let mut state = mdp.lattice.lower().to_vec();
                if self.lower[i] >= NU0 {
                    state[i] = mdp.lattice.upper()[i];
                }
                return Err(Error::NonInwardEta { state });
            }
        }
        Ok(())
    }
}

/// Moments of the transition row of one slot, by compensated summation.
pub fn moments_from_kernel(mdp: &LatticeMdp, slot: usize) -> DriftDiffusion {
    let lat = &mdp.lattice;
    let d = lat.dim();
    let x = lat.state(mdp.actions.state_of(slot));
    let mut m1 = vec![KahanSum::new(); d];
    let mut m2 = vec![KahanSum::new(); d * d];
    let mut y = vec![0i64; d];
    for (t, p) in mdp.row(slot).entries {
        lat.state_into(t, &mut y);
        for i in 0..d {
            let di = (y[i] - x[i]) as f64;
            m1[i].add(p * di);
            for j in 0..d {
                m2[i * d + j].add(p * di * (y[j] - x[j]) as f64);
            }
        }
    }
    DriftDiffusion::new(m1.iter().map(KahanSum::value).collect(), m2.iter().map(KahanSum::value).collect())
}

/// An MDP together with generator coefficients and boundary data.
#[derive(Debug, Clone, Copy)]
pub struct TaylorProblem<'a> {
    pub mdp: &'a LatticeMdp,
    pub moments: MomentSource<'a>,
    pub boundary: &'a BoundarySpec,
}

impl<'a> TaylorProblem<'a> {
    pub fn new(mdp: &'a LatticeMdp, moments: MomentSource<'a>, boundary: &'a BoundarySpec) -> Result<Self> {
        boundary.validate(mdp)?;
        Ok(Self { mdp, moments, boundary })
    }

    pub fn moments_at(&self, slot: usize) -> Result<DriftDiffusion> {
        match self.moments {
            MomentSource::Kernel => Ok(moments_from_kernel(self.mdp, slot)),
            MomentSource::Analytic(p) => {
                let x = self.mdp.lattice.state(self.mdp.actions.state_of(slot));
                p.moments(&x, self.mdp.actions.action(slot))
            }
        }
    }
}

/// `mu . grad + 1/2 tr(sigma2 hess)` for a given gradient and row-major
/// Hessian.
pub fn generator(dd: &DriftDiffusion, grad: &[f64], hess: &[f64]) -> f64 {
    let d = dd.dim();
    let mut s = KahanSum::new();
    for i in 0..d {
        s.add(dd.mu[i] * grad[i]);
        for j in 0..d {
            s.add(0.5 * dd.s(i, j) * hess[i * d + j]);
        }
    }
    s.value()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticityReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub pairs_checked: usize,
    pub pass: bool,
}

/// Eigenvalue range of `sigma2` over interior states and all their actions.
pub fn ellipticity_check(problem: &TaylorProblem<'_>) -> Result<EllipticityReport> {
    let mdp = problem.mdp;
    let interior: Vec<usize> = (0..mdp.num_states()).filter(|&x| !mdp.lattice.on_boundary(&mdp.lattice.state(x))).collect();
    let ranges = interior
        .par_iter()
        .map(|&x| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in mdp.actions.slots(x) {
                let ev = problem.moments_at(s)?.eigenvalues();
                lo = lo.min(ev[0]);
                hi = hi.max(ev[ev.len() - 1]);
            }
            Ok((lo, hi, mdp.actions.slots(x).len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (lambda_min, lambda_max, pairs_checked) =
        ranges.iter().fold((f64::INFINITY, f64::NEG_INFINITY, 0), |(a, b, n), &(lo, hi, k)| (a.min(lo), b.max(hi), n + k));
    Ok(EllipticityReport { lambda_min, lambda_max, pairs_checked, pass: pairs_checked > 0 && lambda_min > 0.0 })
}

/// One line of the moment diagnostic table.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRecord {
    pub state: Vec<i64>,
    pub action: Vec<i64>,
    pub moments: DriftDiffusion,
    pub eig_min: f64,
    pub eig_max: f64,
}

pub fn moment_table(problem: &TaylorProblem<'_>) -> Result<Vec<MomentRecord>> {
    let mdp = problem.mdp;
    (0..mdp.actions.num_slots())
        .into_par_iter()
        .map(|s| {
            let m = problem.moments_at(s)?;
            let ev = m.eigenvalues();
            Ok(MomentRecord {
                state: mdp.lattice.state(mdp.actions.state_of(s)),
                action: mdp.actions.action(s).to_vec(),
                eig_min: ev[0],
                eig_max: ev[ev.len() - 1],
                moments: m,
            })
        })
        .collect()
}
