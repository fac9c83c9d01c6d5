//! Gap diagnostics: Taylor remainders, discounted accumulations, derivative
//! proxies, corner occupancy and relative-error scoring.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact_dp::{discounted_functional, SolveOptions};
use crate::lattice::{LatticeMdp, StateLattice, StationaryPolicy, ValueFunction};
use crate::numeric::KahanSum;
use crate::taylor::{generator, TaylorProblem};

/// A function on real vectors with closed-form first and second derivatives.
pub trait SmoothFn: Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
    /// Row-major `d x d` Hessian.
    fn hess(&self, x: &[f64]) -> Vec<f64>;
}

/// Test function for the remainder operator.
#[derive(Clone, Copy)]
pub enum Phi<'a> {
    Smooth(&'a dyn SmoothFn),
    /// Values on the lattice; derivatives by finite differences.
    Grid(&'a [f64]),
}

/// Polynomial in one variable, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial1d {
    pub coeffs: Vec<f64>,
}

impl Polynomial1d {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    fn eval_derivative(&self, k: usize, x: f64) -> f64 {
        let mut acc = 0.0;
        for (n, &c) in self.coeffs.iter().enumerate().skip(k).rev() {
            let falling: f64 = ((n - k + 1)..=n).map(|j| j as f64).product();
            acc = acc * x + c * falling;
        }
        acc
    }
}

impl SmoothFn for Polynomial1d {
    fn value(&self, x: &[f64]) -> f64 {
        self.eval_derivative(0, x[0])
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        vec![self.eval_derivative(1, x[0])]
    }
    fn hess(&self, x: &[f64]) -> Vec<f64> {
        vec![self.eval_derivative(2, x[0])]
    }
}

/// Finite-difference gradient and Hessian of lattice values at one state.
///
/// Centered differences in the interior; one-sided stencils where a
/// neighbour is missing, in which case the flag is set.
pub fn fd_derivatives(lattice: &StateLattice, values: &[f64], index: usize) -> (Vec<f64>, Vec<f64>, bool) {
    let d = lattice.dim();
    let x = lattice.state(index);
    let at = |shift: &[(usize, i64)]| -> Option<f64> {
        let mut y = x.clone();
        for &(a, s) in shift {
            y[a] += s;
        }
        lattice.index_of(&y).map(|i| values[i])
    };
    let f0 = values[index];
    let mut one_sided = false;
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    for i in 0..d {
        match (at(&[(i, 1)]), at(&[(i, -1)])) {
            (Some(p), Some(m)) => {
                grad[i] = 0.5 * (p - m);
                hess[i * d + i] = p - 2.0 * f0 + m;
            }
            (Some(p), None) => {
                one_sided = true;
                grad[i] = p - f0;
                hess[i * d + i] = at(&[(i, 2)]).map_or(0.0, |p2| p2 - 2.0 * p + f0);
            }
            (None, Some(m)) => {
                one_sided = true;
                grad[i] = f0 - m;
                hess[i * d + i] = at(&[(i, -2)]).map_or(0.0, |m2| f0 - 2.0 * m + m2);
            }
            (None, None) => {}
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let central = [(1, 1), (1, -1), (-1, 1), (-1, -1)].map(|(si, sj)| at(&[(i, si), (j, sj)]));
            let v = if let [Some(pp), Some(pm), Some(mp), Some(mm)] = central {
                0.25 * (pp - pm - mp + mm)
            } else {
                one_sided = true;
                let mut v = 0.0;
                'dir: for si in [1i64, -1] {
                    for sj in [1i64, -1] {
                        if let (Some(a), Some(b), Some(c)) = (at(&[(i, si), (j, sj)]), at(&[(i, si)]), at(&[(j, sj)])) {
                            v = (si * sj) as f64 * (a - b - c + f0);
                            break 'dir;
                        }
                    }
                }
                v
            };
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }
    (grad, hess, one_sided)
}

/// `A[Phi](x) = a(x) (E[Phi(X')] - Phi(x)) - a(x) L Phi(x)` under `policy`.
pub fn taylor_remainder(problem: &TaylorProblem<'_>, policy: &StationaryPolicy, phi: Phi<'_>) -> Result<Vec<f64>> {
    let mdp = problem.mdp;
    if policy.slots.len() != mdp.num_states() {
        return Err(Error::LatticeMismatch("policy length differs from state count".into()));
    }
    if let Phi::Grid(v) = phi {
        if v.len() != mdp.num_states() {
            return Err(Error::LatticeMismatch("grid function length differs from state count".into()));
        }
    }
    let lattice = &mdp.lattice;
    (0..mdp.num_states())
        .into_par_iter()
        .map(|i| {
            let slot = policy.slots[i];
            let dd = problem.moments_at(slot)?;
            let row = mdp.row(slot);
            let x = lattice.state(i);
            let (f0, grad, hess, ev) = match phi {
                Phi::Smooth(f) => {
                    let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
                    let mut s = KahanSum::new();
                    for &(t, p) in &row.entries {
                        let y: Vec<f64> = lattice.state(t).iter().map(|&v| v as f64).collect();
                        s.add(p * f.value(&y));
                    }
                    (f.value(&xf), f.grad(&xf), f.hess(&xf), s.value())
                }
                Phi::Grid(v) => {
                    let (g, h, _) = fd_derivatives(lattice, v, i);
                    (v[i], g, h, row.expect(v))
                }
            };
            let a = mdp.discounts[i];
            Ok(a * (ev - f0) - a * generator(&dd, &grad, &hess))
        })
        .collect()
}

/// `E_x[sum_t a^t g(X_t)]` under `policy`; `g` must be nonnegative.
pub fn discounted_accumulation(mdp: &LatticeMdp, policy: &StationaryPolicy, g: &[f64], opts: &SolveOptions) -> Result<ValueFunction> {
    if g.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidParameter("accumulated function must be nonnegative".into()));
    }
    discounted_functional(mdp, policy, g, opts)
}

/// `(V(x+2h) - 2V(x+h) + 2V(x-h) - V(x-2h)) / (2 h^3)` at state `x`.
pub fn third_derivative_proxy_at(v: &[f64], x: usize, h: usize) -> Result<f64> {
    if h == 0 {
        return Err(Error::InvalidParameter("stencil spacing must be positive".into()));
    }
    if x < 2 * h || x + 2 * h >= v.len() {
        return Err(Error::OutOfStencilRange { state: x, needed: 2 * h });
    }
    let num = v[x + 2 * h] - 2.0 * v[x + h] + 2.0 * v[x - h] - v[x - 2 * h];
    Ok(0.5 * num / (h * h * h) as f64)
}

/// The proxy at every state; `None` where the stencil leaves the grid.
pub fn third_derivative_proxy(v: &[f64], h: usize) -> Vec<Option<f64>> {
    (0..v.len()).map(|x| third_derivative_proxy_at(v, x, h).ok()).collect()
}

/// Finite-difference Hessians at every state, with the one-sided flags.
pub fn fd_hessians(lattice: &StateLattice, values: &[f64]) -> (Vec<Vec<f64>>, Vec<bool>) {
    (0..lattice.len())
        .map(|i| {
            let (_, h, flag) = fd_derivatives(lattice, values, i);
            (h, flag)
        })
        .unzip()
}

/// Empirical Hölder seminorm of the Hessian over the box `x +- radius`:
/// the largest `|D2V(y) - D2V(z)|_max / |y - z|^beta` over pairs in the box.
pub fn holder_seminorm_estimate(lattice: &StateLattice, hessians: &[Vec<f64>], radius: f64, beta: f64) -> Result<Vec<f64>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent {beta} outside (0, 1]")));
    }
    if !(radius >= 1.0) {
        return Err(Error::InsufficientNeighborhood { radius, spacing: 1.0 });
    }
    if hessians.len() != lattice.len() {
        return Err(Error::LatticeMismatch("Hessian samples differ from state count".into()));
    }
    let r = radius.floor() as i64;
    Ok((0..lattice.len())
        .into_par_iter()
        .map(|i| {
            let x = lattice.state(i);
            let lo: Vec<i64> = x.iter().zip(lattice.lower()).map(|(&v, &l)| (v - r).max(l)).collect();
            let hi: Vec<i64> = x.iter().zip(lattice.upper()).map(|(&v, &u)| (v + r).min(u)).collect();
            let sub = StateLattice::new(lo, hi).expect("box inside the lattice");
            let idx: Vec<(Vec<i64>, usize)> =
                sub.states().map(|y| (y.clone(), lattice.index_of(&y).unwrap())).collect();
            let mut best = 0.0f64;
            for (a, (ya, ia)) in idx.iter().enumerate() {
                for (yb, ib) in &idx[a + 1..] {
                    let dist = ya.iter().zip(yb).map(|(p, q)| ((p - q) * (p - q)) as f64).sum::<f64>().sqrt();
                    let diff = hessians[*ia].iter().zip(&hessians[*ib]).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                    best = best.max(diff / dist.powf(beta));
                }
            }
            best
        })
        .collect())
}

/// States within `rho` of at least two lower faces.
pub fn corner_set(lattice: &StateLattice, rho: i64) -> Vec<bool> {
    lattice
        .states()
        .map(|x| x.iter().zip(lattice.lower()).filter(|(&v, &l)| v - l <= rho).count() >= 2)
        .collect()
}

/// Discounted time spent in `corner` from every starting state.
pub fn corner_occupancy(mdp: &LatticeMdp, policy: &StationaryPolicy, corner: &[bool], opts: &SolveOptions) -> Result<ValueFunction> {
    let g: Vec<f64> = corner.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    discounted_accumulation(mdp, policy, &g, opts)
}

/// States with `|V*|` below this are left out of the relative errors.
pub const REL_ERR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub abs_gap: Vec<f64>,
    /// `None` at excluded states.
    pub rel_gap: Vec<Option<f64>>,
    pub max_rel: f64,
    pub mean_rel: f64,
    pub excluded: usize,
    pub bound_proxy: Option<Vec<f64>>,
    pub corner_mass: Option<Vec<f64>>,
}

impl GapReport {
    pub fn argmax_rel(&self) -> Option<usize> {
        self.rel_gap
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.map(|r| (i, r)))
            .fold(None, |b: Option<(usize, f64)>, (i, r)| match b {
                Some((_, br)) if br >= r => b,
                _ => Some((i, r)),
            })
            .map(|(i, _)| i)
    }
}

/// Absolute and relative gaps of `candidate` against `star`.
pub fn gap_report(candidate: &[f64], star: &[f64]) -> Result<GapReport> {
    if candidate.len() != star.len() {
        return Err(Error::LatticeMismatch(format!("{} candidate values vs {} reference values", candidate.len(), star.len())));
    }
    let abs_gap: Vec<f64> = candidate.iter().zip(star).map(|(c, s)| (c - s).abs()).collect();
    let rel_gap: Vec<Option<f64>> = abs_gap
        .iter()
        .zip(star)
        .map(|(g, s)| (s.abs() >= REL_ERR_FLOOR).then(|| g / s.abs()))
        .collect();
    let kept: Vec<f64> = rel_gap.iter().flatten().copied().collect();
    let excluded = rel_gap.len() - kept.len();
    let max_rel = kept.iter().copied().fold(0.0, f64::max);
    let mean_rel = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
    Ok(GapReport { abs_gap, rel_gap, max_rel, mean_rel, excluded, bound_proxy: None, corner_mass: None })
}

/// Rational counterpart of [`SmoothFn`] for exact checks.
pub trait RationalSmoothFn {
    /// Value, gradient and row-major Hessian.
    fn eval(&self, x: &[BigRational]) -> (BigRational, Vec<BigRational>, Vec<BigRational>);
}

/// Polynomial in one variable with rational coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalPolynomial1d {
    pub coeffs: Vec<BigRational>,
}

impl RationalSmoothFn for RationalPolynomial1d {
    fn eval(&self, x: &[BigRational]) -> (BigRational, Vec<BigRational>, Vec<BigRational>) {
        let x = &x[0];
        let (mut v, mut d1, mut d2) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
        for c in self.coeffs.iter().rev() {
            d2 = &d2 * x + &d1 * BigRational::from_integer(BigInt::from(2));
            d1 = &d1 * x + &v;
            v = &v * x + c;
        }
        (v, vec![d1], vec![d2])
    }
}

/// The shortest decimal that rounds back to `v`, as an exact rational.
pub fn decimal_rational(v: f64) -> BigRational {
    assert!(v.is_finite(), "finite input");
    let s = v.to_string();
    let (neg, s) = s.strip_prefix('-').map_or((false, s.as_str()), |r| (true, r));
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let num: BigInt = format!("{int}{frac}").parse().expect("decimal digits");
    let den = num_traits::pow(BigInt::from(10), frac.len());
    let r = BigRational::new(num, den);
    if neg { -r } else { r }
}

fn rat(v: f64) -> BigRational {
    decimal_rational(v)
}

/// Solves `A y = b` for several right-hand sides, `A` banded, by Gaussian
/// elimination without pivoting (safe for strictly diagonally dominant `A`).
fn solve_banded(n: usize, w: usize, mut band: Vec<Vec<BigRational>>, mut rhs: Vec<Vec<BigRational>>) -> Result<Vec<Vec<BigRational>>> {
    // band[i][j - i + w] holds A[i][j]
    let at = |i: usize, j: usize| j + w - i;
    for k in 0..n {
        if band[k][w].is_zero() {
            return Err(Error::SingularSystem(format!("zero pivot at row {k}")));
        }
        let end = (k + w).min(n - 1);
        for i in (k + 1)..=end {
            if band[i][at(i, k)].is_zero() {
                continue;
            }
            let f = &band[i][at(i, k)] / &band[k][w];
            for j in k..=(k + w).min(n - 1) {
                let t = &f * &band[k][at(k, j)];
                band[i][at(i, j)] -= t;
            }
            for r in rhs.iter_mut() {
                let t = &f * &r[k];
                r[i] -= t;
            }
        }
    }
    for r in rhs.iter_mut() {
        for k in (0..n).rev() {
            let mut s = r[k].clone();
            for j in (k + 1)..=(k + w).min(n - 1) {
                s -= &band[k][at(k, j)] * &r[j];
            }
            r[k] = s / &band[k][w];
        }
    }
    Ok(rhs)
}

/// Outcome of the exact comparison `|Phi - V_U| <= E[sum a^t |A_U[Phi]|]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactGapCheck {
    pub states: usize,
    pub holds: bool,
    /// Number of states where the two sides are equal.
    pub tight: usize,
    pub violations: Vec<usize>,
    /// Smallest `(bound - gap) / max(bound, 1)`, rounded to `f64`.
    pub min_relative_slack: f64,
    /// Largest `|Phi - r - a(P Phi)|` minus `|A_U[Phi]|`; zero when `Phi`
    /// solves the Taylored equation exactly.
    pub tcp_defect: f64,
    pub gap: Vec<f64>,
    pub bound: Vec<f64>,
}

/// Verifies the fixed-policy gap inequality in exact rational arithmetic.
///
/// Kernel probabilities, rewards, discounts and moments are read as their
/// shortest round-trip decimals (`0.9` is `9/10`), and both sides are then
/// computed without rounding.
pub fn exact_gap_bound_check(problem: &TaylorProblem<'_>, policy: &StationaryPolicy, phi: &dyn RationalSmoothFn) -> Result<ExactGapCheck> {
    let mdp = problem.mdp;
    let n = mdp.num_states();
    if policy.slots.len() != n {
        return Err(Error::LatticeMismatch("policy length differs from state count".into()));
    }
    let lattice = &mdp.lattice;
    let rows: Vec<_> = policy.slots.iter().map(|&s| mdp.row(s)).collect();
    let w = rows
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.entries.iter().map(move |&(t, _)| t.abs_diff(i)))
        .max()
        .unwrap_or(0);
    if (n as f64) * ((w + 1) as f64).powi(2) > 5e7 {
        return Err(Error::InvalidParameter(format!("bandwidth {w} too large for the exact check on {n} states")));
    }
    let point = |i: usize| -> Vec<BigRational> { lattice.state(i).iter().map(|&v| BigRational::from_integer(BigInt::from(v))).collect() };
    let evals: Vec<_> = (0..n).map(|i| phi.eval(&point(i))).collect();
    let d = lattice.dim();
    let half = BigRational::new(BigInt::one(), BigInt::from(2));

    let mut band = vec![vec![BigRational::zero(); 2 * w + 1]; n];
    let mut remainder = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut defect = 0.0f64;
    for i in 0..n {
        let a = rat(mdp.discounts[i]);
        band[i][w] += BigRational::one();
        let mut ev = BigRational::zero();
        for &(t, p) in &rows[i].entries {
            let p = rat(p);
            ev += &p * &evals[t].0;
            band[i][t + w - i] -= &a * &p;
        }
        let dd = problem.moments_at(policy.slots[i])?;
        let (f0, g, h) = &evals[i];
        let mut l = BigRational::zero();
        for k in 0..d {
            l += rat(dd.mu[k]) * &g[k];
            for j in 0..d {
                l += &half * rat(dd.sigma2[k * d + j]) * &h[k * d + j];
            }
        }
        let rem = &a * (&ev - f0) - &a * &l;
        let r = rat(mdp.rewards[policy.slots[i]]);
        let lhs = f0 - &r - &a * &ev;
        let dft = (lhs.abs() - rem.abs()).abs();
        defect = defect.max(dft.to_f64().unwrap_or(f64::INFINITY));
        remainder.push(rem.abs());
        rewards.push(r);
    }
    let sol = solve_banded(n, w, band, vec![rewards, remainder])?;
    let (value, acc) = (&sol[0], &sol[1]);
    let mut out = ExactGapCheck {
        states: n,
        holds: true,
        tight: 0,
        violations: Vec::new(),
        min_relative_slack: f64::INFINITY,
        tcp_defect: defect,
        gap: Vec::with_capacity(n),
        bound: Vec::with_capacity(n),
    };
    for i in 0..n {
        let gap = (&evals[i].0 - &value[i]).abs();
        let slack = &acc[i] - &gap;
        if slack.is_negative() {
            out.holds = false;
            out.violations.push(i);
        } else if slack.is_zero() {
            out.tight += 1;
        }
        let scale = if acc[i] > BigRational::one() { acc[i].clone() } else { BigRational::one() };
        out.min_relative_slack = out.min_relative_slack.min((slack / scale).to_f64().unwrap_or(f64::NAN));
        out.gap.push(gap.to_f64().unwrap_or(f64::INFINITY));
        out.bound.push(acc[i].to_f64().unwrap_or(f64::INFINITY));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ServiceRateModel, ServiceRateParams};
    use crate::taylor::{BoundarySpec, MomentSource};

    fn walk(m: i64, alpha: f64) -> ServiceRateModel {
        ServiceRateModel::build(ServiceRateParams { m, fixed_u: Some(0.5), ..Default::default() }, alpha).unwrap()
    }

    #[test]
    fn remainder_of_cubic_and_quartic_on_the_walk() {
        let m = walk(10, 0.9);
        let b = BoundarySpec::oblique(vec![1.0], vec![1.0]);
        let prob = TaylorProblem::new(&m.mdp, MomentSource::Analytic(&m), &b).unwrap();
        let pol = StationaryPolicy::first_actions(&m.mdp.actions);
        let cubic = Polynomial1d::new(vec![0.0, 0.0, 0.0, 1.0]);
        let quartic = Polynomial1d::new(vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        let a3 = taylor_remainder(&prob, &pol, Phi::Smooth(&cubic)).unwrap();
        let a4 = taylor_remainder(&prob, &pol, Phi::Smooth(&quartic)).unwrap();
        assert!(a3[5].abs() < 1e-12);
        assert!((a4[5] - 0.9).abs() < 1e-12);
        let quad = Polynomial1d::new(vec![1.0, -2.0, 3.0]);
        let aq = taylor_remainder(&prob, &pol, Phi::Smooth(&quad)).unwrap();
        assert!(aq[1..10].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn grid_remainder_matches_smooth_on_interior() {
        let m = walk(12, 0.9);
        let b = BoundarySpec::oblique(vec![1.0], vec![1.0]);
        let prob = TaylorProblem::new(&m.mdp, MomentSource::Analytic(&m), &b).unwrap();
        let pol = StationaryPolicy::first_actions(&m.mdp.actions);
        let cubic = Polynomial1d::new(vec![1.0, 0.5, -0.25, 0.125]);
        let vals: Vec<f64> = (0..=12).map(|x| cubic.value(&[x as f64])).collect();
        let s = taylor_remainder(&prob, &pol, Phi::Smooth(&cubic)).unwrap();
        let g = taylor_remainder(&prob, &pol, Phi::Grid(&vals)).unwrap();
        for x in 1..12 {
            // centered second differences are exact on cubics, centered first differences are not
            let dd = prob.moments_at(pol.slots[x]).unwrap();
            assert_eq!(dd.mu[0], 0.0);
            assert!((s[x] - g[x]).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn proxy_on_cubics_and_edges() {
        let v: Vec<f64> = (0..20).map(|x| (x as f64).powi(3)).collect();
        for x in 2..18 {
            assert_eq!(third_derivative_proxy_at(&v, x, 1).unwrap(), 6.0);
        }
        let v2: Vec<f64> = (0..40).map(|x| (x as f64).powi(3)).collect();
        assert_eq!(third_derivative_proxy_at(&v2, 20, 4).unwrap(), 6.0);
        assert!(matches!(third_derivative_proxy_at(&v, 1, 1), Err(Error::OutOfStencilRange { .. })));
        assert!(third_derivative_proxy(&v, 1)[18].is_none());
    }

    #[test]
    fn holder_estimate() {
        let lat = StateLattice::from_upper(vec![10]).unwrap();
        let q: Vec<f64> = (0..=10).map(|x| 3.0 * (x * x) as f64).collect();
        let (h, _) = fd_hessians(&lat, &q);
        assert!(holder_seminorm_estimate(&lat, &h, 2.0, 1.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(holder_seminorm_estimate(&lat, &h, 0.5, 1.0), Err(Error::InsufficientNeighborhood { .. })));
        let c: Vec<f64> = (0..=10).map(|x| (x as f64).powi(3)).collect();
        let (h, _) = fd_hessians(&lat, &c);
        let est = holder_seminorm_estimate(&lat, &h, 2.0, 1.0).unwrap();
        assert!((est[5] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn gap_report_by_hand() {
        let r = gap_report(&[1.0, 2.0, 4.5, 0.0], &[2.0, 2.0, 3.0, 0.0]).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.rel_gap, vec![Some(0.5), Some(0.0), Some(0.5), None]);
        assert!((r.mean_rel - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.max_rel, 0.5);
        assert_eq!(r.argmax_rel(), Some(0));
        let z = gap_report(&[3.0, -1.0], &[3.0, -1.0]).unwrap();
        assert_eq!((z.max_rel, z.mean_rel), (0.0, 0.0));
        assert!(gap_report(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn corners_in_two_dimensions() {
        let lat = StateLattice::from_upper(vec![3, 3]).unwrap();
        let c = corner_set(&lat, 1);
        assert_eq!(c.iter().filter(|&&b| b).count(), 4);
        assert!(c[lat.index_of(&[1, 1]).unwrap()] && !c[lat.index_of(&[2, 0]).unwrap()]);
    }

    #[test]
    fn decimals_are_read_exactly() {
        let r = |n: i64, d: i64| BigRational::new(BigInt::from(n), BigInt::from(d));
        assert_eq!(decimal_rational(0.9), r(9, 10));
        assert_eq!(decimal_rational(-2.5), r(-5, 2));
        assert_eq!(decimal_rational(160000.0), r(160000, 1));
        assert_eq!(decimal_rational(0.999), r(999, 1000));
    }

    #[test]
    fn rational_polynomial_derivatives() {
        let p = RationalPolynomial1d { coeffs: [1, 2, 3, 4].iter().map(|&c| BigRational::from_integer(BigInt::from(c))).collect() };
        let (v, g, h) = p.eval(&[BigRational::from_integer(BigInt::from(2))]);
        assert_eq!(v, BigRational::from_integer(BigInt::from(49)));
        assert_eq!(g[0], BigRational::from_integer(BigInt::from(2 + 12 + 48)));
        assert_eq!(h[0], BigRational::from_integer(BigInt::from(6 + 48)));
    }

    #[test]
    fn exact_check_on_a_small_walk() {
        let m = walk(20, 0.9);
        let b = BoundarySpec::oblique(vec![1.0], vec![1.0]);
        let prob = TaylorProblem::new(&m.mdp, MomentSource::Analytic(&m), &b).unwrap();
        let pol = StationaryPolicy::first_actions(&m.mdp.actions);
        let phi = m.closed_form_exact().unwrap();
        let r = exact_gap_bound_check(&prob, &pol, &phi).unwrap();
        assert!(r.holds);
        assert_eq!(r.tcp_defect, 0.0);
    }
}
