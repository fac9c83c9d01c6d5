//! Single-server queue with a controlled service probability.
//!
//! In state `1 <= x <= M - 1` the queue drops by one with probability `u`
//! and grows by one otherwise; `0` always moves to `1` and `M` to `M - 1`.
//! Actions are integers `k` with `u = k / K`.

use serde::Deserialize;

use num_rational::BigRational;
use num_traits::One;

use crate::bounds::{decimal_rational, RationalPolynomial1d};
use crate::error::{Error, Result};
use crate::lattice::{LatticeMdp, StateLattice};
use crate::taylor::{BoundarySpec, DriftDiffusion, MomentProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceCost {
    /// `x^4 + c_s / (1 - u)`.
    #[default]
    Quartic,
    /// `x^2 + 1 / (1 - u)`.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceRateParams {
    pub m: i64,
    /// Action grid size; `u` ranges over `0, 1/K, ..., (K-1)/K`.
    pub k: i64,
    pub cost: ServiceCost,
    pub c_s: f64,
    /// Restricts the action set to this single rate.
    pub fixed_u: Option<f64>,
}

impl Default for ServiceRateParams {
    fn default() -> Self {
        Self { m: 100, k: 100, cost: ServiceCost::Quartic, c_s: 1.0, fixed_u: None }
    }
}

impl ServiceRateParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 4 {
            return Err(Error::InvalidParameter(format!("M = {} must be at least 4", self.m)));
        }
        if self.k < 1 {
            return Err(Error::InvalidParameter("action grid size K must be positive".into()));
        }
        if !(self.c_s >= 0.0 && self.c_s.is_finite()) {
            return Err(Error::InvalidParameter("c_s must be finite and nonnegative".into()));
        }
        self.fixed_action().map(|_| ())
    }

    fn fixed_action(&self) -> Result<Option<i64>> {
        let Some(u) = self.fixed_u else { return Ok(None) };
        let k = (u * self.k as f64).round() as i64;
        if !(0..self.k).contains(&k) || (k as f64 / self.k as f64 - u).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("fixed rate {u} is not on the grid k/{}", self.k)));
        }
        Ok(Some(k))
    }

    pub fn rate(&self, action: &[i64]) -> f64 {
        action[0] as f64 / self.k as f64
    }

    pub fn cost(&self, x: i64, u: f64) -> f64 {
        let x = x as f64;
        match self.cost {
            ServiceCost::Quartic => x.powi(4) + self.c_s / (1.0 - u),
            ServiceCost::Quadratic => x * x + 1.0 / (1.0 - u),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceRateModel {
    pub params: ServiceRateParams,
    pub mdp: LatticeMdp,
    pub boundary: BoundarySpec,
}

impl ServiceRateModel {
    pub fn build(params: ServiceRateParams, alpha: f64) -> Result<Self> {
        params.validate()?;
        let m = params.m;
        let fixed = params.fixed_action()?;
        let kk = params.k;
        let p = params.clone();
        let mdp = LatticeMdp::from_fns(
            StateLattice::from_upper(vec![m])?,
            1,
            alpha,
            |_| Ok(match fixed {
                Some(k) => vec![vec![k]],
                None => (0..kk).map(|k| vec![k]).collect(),
            }),
            |x, a| {
                let u = p.rate(a);
                match x[0] {
                    0 => vec![(vec![1], 1.0)],
                    v if v == m => vec![(vec![m - 1], 1.0)],
                    v => vec![(vec![v - 1], u), (vec![v + 1], 1.0 - u)],
                }
            },
            |x, a| -p.cost(x[0], p.rate(a)),
        )?;
        Ok(Self { params, mdp, boundary: BoundarySpec::oblique(vec![1.0], vec![1.0]) })
    }

    /// Closed-form value of the quartic model under `u = 1/2` on the
    /// half-line, when this instance is that model.
    pub fn closed_form(&self) -> Option<impl Fn(f64) -> f64> {
        let alpha = self.mdp.alpha;
        let c_s = self.params.c_s;
        self.has_closed_form().then_some(move |x: f64| quartic_closed_form(alpha, c_s, x))
    }

    fn has_closed_form(&self) -> bool {
        self.params.cost == ServiceCost::Quartic && self.params.fixed_u == Some(0.5)
    }

    /// Rational form of [`Self::closed_form`].
    pub fn closed_form_exact(&self) -> Option<RationalPolynomial1d> {
        self.has_closed_form().then(|| quartic_closed_form_exact(self.mdp.alpha, self.params.c_s))
    }
}

/// The closed form with rational coefficients, reading `alpha` and `c_s`
/// as their shortest decimals.
pub fn quartic_closed_form_exact(alpha: f64, c_s: f64) -> RationalPolynomial1d {
    let a = decimal_rational(alpha);
    let c = decimal_rational(c_s);
    let one = BigRational::one();
    let b = &one - &a;
    let six = BigRational::from_integer(6.into());
    let two = BigRational::from_integer(2.into());
    let zero = BigRational::from_integer(0.into());
    let c0 = -(&six * &a * &a) / (&b * &b * &b) - &two * &c / &b;
    let c2 = -(&six * &a) / (&b * &b);
    let c4 = -(&one / &b);
    RationalPolynomial1d { coeffs: vec![c0, zero.clone(), c2, zero, c4] }
}

/// Value of the quartic model under `u = 1/2` without truncation:
/// `-x^4/(1-a) - 6 a x^2/(1-a)^2 - 6 a^2/(1-a)^3 - 2 c_s/(1-a)`.
pub fn quartic_closed_form(alpha: f64, c_s: f64, x: f64) -> f64 {
    let b = 1.0 - alpha;
    -x.powi(4) / b - 6.0 * alpha * x * x / (b * b) - 6.0 * alpha * alpha / (b * b * b) - 2.0 * c_s / b
}

impl MomentProvider for ServiceRateModel {
    /// `mu = 1 - 2u` away from zero (the top state included), `mu(0) = 1`,
    /// `sigma2 = 1` everywhere.
    fn moments(&self, state: &[i64], action: &[i64]) -> Result<DriftDiffusion> {
        let u = self.params.rate(action);
        let mu = if state[0] == 0 { 1.0 } else { 1.0 - 2.0 * u };
        Ok(DriftDiffusion::scalar(mu, 1.0))
    }
}
