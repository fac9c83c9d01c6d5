//! Birth-death queue with reward `x` and its diffusion value function.
//!
//! The queue grows with probability `lambda` and shrinks with probability
//! `mu = 1 - lambda`; moves out of `[0, M]` are replaced by staying put.

use crate::error::{Error, Result};
use crate::lattice::{LatticeMdp, StateLattice};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeavyTraffic {
    pub lambda: f64,
    pub alpha: f64,
}

impl HeavyTraffic {
    pub fn new(lambda: f64, alpha: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 0.5) {
            return Err(Error::InvalidParameter(format!("arrival probability {lambda} must lie in (0, 1/2)")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("discount {alpha} outside (0,1)")));
        }
        Ok(Self { lambda, alpha })
    }

    /// Queue whose utilization `lambda / mu` equals `rho`.
    pub fn with_utilization(rho: f64, alpha: f64) -> Result<Self> {
        Self::new(rho / (1.0 + rho), alpha)
    }

    pub fn mu(&self) -> f64 {
        1.0 - self.lambda
    }

    fn delta(&self) -> f64 {
        self.mu() - self.lambda
    }

    /// Negative root `(mu - lambda) - sqrt((mu - lambda)^2 + 2 (1 - a) / a)`.
    pub fn gamma_minus(&self) -> f64 {
        let d = self.delta();
        d - (d * d + 2.0 * (1.0 - self.alpha) / self.alpha).sqrt()
    }

    pub fn c1(&self) -> f64 {
        -1.0 / ((1.0 - self.alpha) * self.gamma_minus())
    }

    pub fn value(&self, x: f64) -> f64 {
        let b = 1.0 - self.alpha;
        -self.alpha * self.delta() / (b * b) + x / b + self.c1() * (self.gamma_minus() * x).exp()
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let g = self.gamma_minus();
        1.0 / (1.0 - self.alpha) + self.c1() * g * (g * x).exp()
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let g = self.gamma_minus();
        self.c1() * g * g * (g * x).exp()
    }

    /// `x + a(-(mu - lambda) V' + V''/2) - (1 - a) V`.
    pub fn ode_residual(&self, x: f64) -> f64 {
        x + self.alpha * (-self.delta() * self.derivative(x) + 0.5 * self.second_derivative(x)) - (1.0 - self.alpha) * self.value(x)
    }

    /// Limit of `(1 - a) V(x)` as `a -> 1`: `1 / (2 (mu - lambda))`.
    pub fn vanishing_discount_limit(&self) -> f64 {
        1.0 / (2.0 * self.delta())
    }

    /// The queue truncated at `M`.
    pub fn mdp(&self, m: i64) -> Result<LatticeMdp> {
        let (l, mu) = (self.lambda, self.mu());
        LatticeMdp::from_fns(
            StateLattice::from_upper(vec![m])?,
            1,
            self.alpha,
            |_| Ok(vec![vec![0]]),
            |x, _| vec![(vec![(x[0] + 1).min(m)], l), (vec![(x[0] - 1).max(0)], mu)],
            |x, _| x[0] as f64,
        )
    }
}

/// `ceil(1 / (1 - rho))`, robust to representation error in `rho`.
pub fn heavy_traffic_state(rho: f64) -> i64 {
    let t = 1.0 / (1.0 - rho);
    let r = t.round();
    if (t - r).abs() < 1e-9 * r.max(1.0) {
        r as i64
    } else {
        t.ceil() as i64
    }
}
