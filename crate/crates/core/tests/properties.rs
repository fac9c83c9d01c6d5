use num_traits::ToPrimitive;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taylored::bounds::{decimal_rational, gap_report, taylor_remainder, third_derivative_proxy, Phi, SmoothFn};
use taylored::exact_dp::{bellman_residual, policy_evaluation, policy_iteration, policy_iteration_with, value_iteration};
use taylored::kd_chain::{build_kd_chain, verify_tcp_equivalence, CoarseGrid, KdOptions};
use taylored::lattice::{LatticeMdp, StateLattice, StationaryPolicy};
use taylored::models::{HeavyTraffic, ServiceCost, ServiceRateModel, ServiceRateParams};
use taylored::solver::{policy_residual, SolveOptions};
use taylored::tapi::{disaggregate_value, grid_derivatives, Disaggregation};
use taylored::taylor::{BoundarySpec, MomentSource, TaylorProblem};

fn lattice(extents: &[i64]) -> StateLattice {
    StateLattice::from_upper(extents.to_vec()).unwrap()
}

/// Small MDP with random rewards and random jumps of size at most 2,
/// clamped to the box.
fn random_mdp(seed: u64, extents: &[i64], n_actions: i64, alpha: f64) -> LatticeMdp {
    let d = extents.len();
    let jumps: Vec<Vec<(Vec<i64>, f64)>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_actions)
            .map(|_| {
                (0..3)
                    .map(|_| ((0..d).map(|_| rng.random_range(-2..=2)).collect(), rng.random_range(0.1..1.0)))
                    .collect()
            })
            .collect()
    };
    let offsets: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        (0..n_actions).map(|_| rng.random_range(-1.0..1.0)).collect()
    };
    LatticeMdp::from_fns(
        lattice(extents),
        1,
        alpha,
        |_| Ok((0..n_actions).map(|k| vec![k]).collect()),
        |x, u| {
            let row = &jumps[u[0] as usize];
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            let clamp = |i: usize, v: i64| v.clamp(0, extents[i]);
            row.iter()
                .map(|(j, w)| (x.iter().zip(j).enumerate().map(|(i, (a, b))| clamp(i, a + b)).collect(), w / total))
                .collect()
        },
        |x, u| offsets[u[0] as usize] * (1 + u[0]) as f64 - 0.1 * x.iter().map(|v| (v * v) as f64).sum::<f64>(),
    )
    .unwrap()
}

fn arb_extents() -> impl Strategy<Value = Vec<i64>> {
    prop_oneof![prop::collection::vec(2i64..12, 1), prop::collection::vec(2i64..6, 2)]
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Quadratic(Vec<f64>);

impl SmoothFn for Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        let d = x.len();
        (0..d).map(|i| (0..d).map(|j| 0.5 * self.0[i * d + j] * x[i] * x[j]).sum::<f64>() + x[i]).sum()
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        (0..d).map(|i| 1.0 + (0..d).map(|j| self.0[i * d + j] * x[j]).sum::<f64>()).collect()
    }
    fn hess(&self, _: &[f64]) -> Vec<f64> {
        self.0.clone()
    }
}

fn symmetric(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v = rng.random_range(-2.0..2.0);
            a[i * d + j] = v;
            a[j * d + i] = v;
        }
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lattice_index_round_trip(ext in arb_extents()) {
        let lat = lattice(&ext);
        for (i, x) in lat.states().enumerate() {
            prop_assert_eq!(lat.index_of(&x), Some(i));
            prop_assert_eq!(lat.state(i), x);
        }
    }

    #[test]
    fn rows_are_stochastic(seed in any::<u64>(), ext in arb_extents(), na in 1i64..4) {
        let mdp = random_mdp(seed, &ext, na, 0.9);
        for s in 0..mdp.actions.num_slots() {
            prop_assert!(mdp.row(s).is_stochastic(1e-12));
        }
    }

    #[test]
    fn policy_iteration_is_monotone_and_optimal(seed in any::<u64>(), ext in arb_extents(), na in 1i64..4, alpha in 0.5f64..0.98) {
        let mdp = random_mdp(seed, &ext, na, alpha);
        let opts = SolveOptions::default();
        let mut prev: Option<Vec<f64>> = None;
        let mut monotone = true;
        let pi = policy_iteration_with(&mdp, StationaryPolicy::first_actions(&mdp.actions), &opts, |_, _, v| {
            if let Some(p) = &prev {
                monotone &= v.iter().zip(p).all(|(a, b)| *a >= b - 1e-9 * (1.0 + b.abs()));
            }
            prev = Some(v.to_vec());
        }).unwrap();
        prop_assert!(monotone);
        let scale = 1.0 + sup(&pi.value);
        prop_assert!(bellman_residual(&mdp, &pi.value) <= 1e-9 * scale);
        let (_, vi) = value_iteration(&mdp, &opts).unwrap();
        let gap = pi.value.iter().zip(&vi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-6 * scale);
    }

    #[test]
    fn argmax_is_deterministic(seed in any::<u64>(), ext in arb_extents(), na in 1i64..4) {
        let mdp = random_mdp(seed, &ext, na, 0.9);
        let opts = SolveOptions::default();
        let a = policy_iteration(&mdp, StationaryPolicy::first_actions(&mdp.actions), &opts).unwrap();
        let b = policy_iteration(&mdp, StationaryPolicy::first_actions(&mdp.actions), &opts).unwrap();
        prop_assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn evaluation_solves_the_linear_system(seed in any::<u64>(), ext in arb_extents(), na in 1i64..4) {
        let mdp = random_mdp(seed, &ext, na, 0.95);
        let policy = StationaryPolicy { slots: (0..mdp.num_states()).map(|x| mdp.actions.slots(x).end - 1).collect() };
        let v = policy_evaluation(&mdp, &policy, &SolveOptions::default()).unwrap();
        let r = mdp.policy_rewards(&policy);
        prop_assert!(policy_residual(&mdp, &policy.slots, &v, &r) <= 1e-9 * (1.0 + sup(&v)));
    }

    #[test]
    fn remainder_vanishes_on_quadratics_with_row_moments(seed in any::<u64>(), ext in arb_extents(), na in 1i64..3) {
        let mdp = random_mdp(seed, &ext, na, 0.9);
        let d = ext.len();
        let boundary = BoundarySpec::fot(d);
        let problem = TaylorProblem::new(&mdp, MomentSource::Kernel, &boundary).unwrap();
        let q = Quadratic(symmetric(d, seed));
        let rem = taylor_remainder(&problem, &StationaryPolicy::first_actions(&mdp.actions), Phi::Smooth(&q)).unwrap();
        prop_assert!(sup(&rem) <= 1e-9 * (1.0 + ext.iter().map(|&e| (e * e) as f64).sum::<f64>()));
    }

    #[test]
    fn chain_rows_match_moments(m in 8i64..40, k in 2i64..12, alpha in 0.8f64..0.99, h in 1i64..5, quad in any::<bool>()) {
        let cost = if quad { ServiceCost::Quadratic } else { ServiceCost::Quartic };
        let md = ServiceRateModel::build(ServiceRateParams { m, k, cost, ..Default::default() }, alpha).unwrap();
        let problem = TaylorProblem::new(&md.mdp, MomentSource::Analytic(&md), &md.boundary).unwrap();
        let chain = build_kd_chain(&problem, &KdOptions::new(h)).unwrap();
        for s in 0..chain.mdp.actions.num_slots() {
            prop_assert!(chain.mdp.row(s).is_stochastic(1e-12));
        }
        prop_assert!(chain.mdp.discounts.iter().all(|&a| a > 0.0 && a < 1.0));
        let rep = verify_tcp_equivalence(&chain, &problem).unwrap();
        prop_assert!(rep.worst_first <= 1e-9);
        prop_assert!(rep.worst_second_central <= 1e-9);
        prop_assert!(rep.worst_reward <= 1e-9);
    }

    #[test]
    fn grid_derivatives_are_exact_on_quadratics(ext in arb_extents(), h in 1i64..4, seed in any::<u64>()) {
        let fine = lattice(&ext.iter().map(|e| e * 2).collect::<Vec<_>>());
        let grid = CoarseGrid::new(&fine, h).unwrap();
        let d = ext.len();
        let q = Quadratic(symmetric(d, seed));
        let pos = |g: usize| grid.fine_state(g).iter().map(|&v| v as f64).collect::<Vec<_>>();
        let values: Vec<f64> = (0..grid.len()).map(|g| q.value(&pos(g))).collect();
        let derivs = grid_derivatives(&grid, &values);
        for g in 0..grid.len() {
            let k = grid.lattice().state(g);
            let interior = (0..d).all(|i| k[i] > 0 && (k[i] as usize) + 1 < grid.points(i).len());
            if !interior {
                continue;
            }
            let (gr, he) = &derivs[g];
            let x = pos(g);
            for (a, b) in gr.iter().zip(q.grad(&x)) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
            for (a, b) in he.iter().zip(q.hess(&x)) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn multilinear_disaggregation_reproduces_affine_values(ext in arb_extents(), h in 1i64..5, c in prop::collection::vec(-3.0f64..3.0, 3)) {
        let fine = lattice(&ext.iter().map(|e| e * 3).collect::<Vec<_>>());
        let grid = CoarseGrid::new(&fine, h).unwrap();
        let f = |x: &[i64]| c[0] + x.iter().enumerate().map(|(i, &v)| c[1 + i] * v as f64).sum::<f64>();
        let coarse: Vec<f64> = (0..grid.len()).map(|g| f(&grid.fine_state(g))).collect();
        let v = disaggregate_value(&coarse, &grid, Disaggregation::Multilinear);
        for (i, x) in fine.states().enumerate() {
            prop_assert!((v[i] - f(&x)).abs() <= 1e-9 * (1.0 + f(&x).abs()));
        }
        let pc = disaggregate_value(&coarse, &grid, Disaggregation::PiecewiseConstant);
        for g in 0..grid.len() {
            prop_assert_eq!(pc[grid.fine_index(g)], coarse[g]);
        }
    }

    #[test]
    fn decimal_reading_round_trips(v in -1e6f64..1e6) {
        prop_assert_eq!(decimal_rational(v).to_f64().unwrap(), v);
    }

    #[test]
    fn proxy_vanishes_on_quadratics(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 8usize..40) {
        let v: Vec<f64> = (0..n).map(|x| a * (x * x) as f64 + b * x as f64).collect();
        let scale = 1.0 + a.abs() * (n * n) as f64;
        for p in third_derivative_proxy(&v, 1).into_iter().flatten() {
            prop_assert!(p.abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn gap_report_is_consistent(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let star: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
        let cand: Vec<f64> = star.iter().map(|s| s - rng.random_range(0.0..5.0)).collect();
        let g = gap_report(&cand, &star).unwrap();
        prop_assert!(g.abs_gap.iter().all(|&v| v >= 0.0));
        prop_assert!(g.max_rel >= g.mean_rel - 1e-15);
        prop_assert!(g.rel_gap.iter().flatten().all(|&r| r >= 0.0 && r <= g.max_rel));
    }

    #[test]
    fn diffusion_value_solves_its_ode(l in 0.05f64..0.49, alpha in 0.5f64..0.999, x in 0.0f64..50.0) {
        let q = HeavyTraffic::new(l, alpha).unwrap();
        prop_assert!(q.ode_residual(x).abs() <= 1e-8 * (1.0 + q.value(x).abs()));
    }
}
