//! Linear solves for `(I - diag(d) P_U) V = f`.
//!
//! The direct backend assembles the sparse system and factors it with a
//! sparse LU. The iterative backend is matrix-free BiCGSTAB and is used for
//! kernels whose rows are too dense to assemble.

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::solvers::Solve;
use faer::matrix_free::bicgstab::{bicgstab, bicgstab_scratch, BicgParams};
use faer::matrix_free::{IdentityPrecond, InitialGuessStatus, LinOp};
use faer::matrix_free::bicgstab::BicgError;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatMut, MatRef, Par};

use crate::error::{Error, Result};
use crate::lattice::{Kernel, LatticeMdp};
use crate::numeric::sup_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Direct when the assembled system stays below the nonzero budget.
    #[default]
    Auto,
    Direct,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub linear: LinearSolver,
    /// Relative residual target of the iterative backend.
    pub krylov_tol: f64,
    /// Value-iteration tolerance on the sup-norm error.
    pub vi_tol: f64,
    /// Policy-iteration cap.
    pub max_iterations: usize,
    pub vi_max_iterations: usize,
    /// Largest assembled system handed to the direct backend.
    pub direct_nnz_limit: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            linear: LinearSolver::Auto,
            krylov_tol: 1e-13,
            vi_tol: 1e-8,
            max_iterations: 100,
            vi_max_iterations: 2_000_000,
            direct_nnz_limit: 4_000_000,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.krylov_tol > 0.0 && self.vi_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if self.max_iterations == 0 || self.vi_max_iterations == 0 {
            return Err(Error::InvalidParameter("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// `out = v - d .* (P_U v)`.
fn apply_system(mdp: &LatticeMdp, slots: &[usize], v: &[f64], out: &mut [f64]) {
    mdp.kernel.expect_policy(slots, v, out);
    for ((o, &vi), &d) in out.iter_mut().zip(v).zip(&mdp.discounts) {
        *o = vi - d * *o;
    }
}

fn residual(mdp: &LatticeMdp, slots: &[usize], v: &[f64], rhs: &[f64]) -> Vec<f64> {
    let mut av = vec![0.0; v.len()];
    apply_system(mdp, slots, v, &mut av);
    rhs.iter().zip(&av).map(|(b, a)| b - a).collect()
}

fn solve_direct(mdp: &LatticeMdp, slots: &[usize], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = mdp.num_states();
    let mut trips = Vec::with_capacity(n + mdp.kernel.policy_nnz(slots).min(64 * n));
    for x in 0..n {
        trips.push(Triplet::new(x, x, 1.0));
        let d = mdp.discounts[x];
        for (t, p) in mdp.kernel.row(slots[x], &mdp.lattice).entries {
            trips.push(Triplet::new(x, t, -d * p));
        }
    }
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
    let mut b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    lu.solve_in_place(b.as_mut());
    let v: Vec<f64> = (0..n).map(|i| b[(i, 0)]).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }
    Ok(v)
}

#[derive(Debug)]
struct PolicyOperator<'a> {
    mdp: &'a LatticeMdp,
    slots: &'a [usize],
}

impl LinOp<f64> for PolicyOperator<'_> {
    fn apply_scratch(&self, _rhs_ncols: usize, _par: Par) -> StackReq {
        StackReq::EMPTY
    }

    fn nrows(&self) -> usize {
        self.mdp.num_states()
    }

    fn ncols(&self) -> usize {
        self.mdp.num_states()
    }

    fn apply(&self, mut out: MatMut<'_, f64>, rhs: MatRef<'_, f64>, _par: Par, _stack: &mut MemStack) {
        let n = self.nrows();
        let mut v = vec![0.0; n];
        let mut w = vec![0.0; n];
        for j in 0..rhs.ncols() {
            for i in 0..n {
                v[i] = rhs[(i, j)];
            }
            apply_system(self.mdp, self.slots, &v, &mut w);
            for i in 0..n {
                out[(i, j)] = w[i];
            }
        }
    }

    fn conj_apply(&self, out: MatMut<'_, f64>, rhs: MatRef<'_, f64>, par: Par, stack: &mut MemStack) {
        self.apply(out, rhs, par, stack)
    }
}

fn solve_iterative(mdp: &LatticeMdp, slots: &[usize], rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = mdp.num_states();
    let op = PolicyOperator { mdp, slots };
    let precond = IdentityPrecond { dim: n };
    let mut params = BicgParams::<f64>::default();
    // the zero-guess path leaves the residual buffer uninitialized, so start
    // from an explicit zero vector instead
    params.initial_guess = InitialGuessStatus::MaybeNonZero;
    params.rel_tolerance = tol;
    params.abs_tolerance = 0.0;
    params.max_iters = 20 * n + 1000;
    let par = Par::Seq;
    let mut buf = MemBuffer::new(bicgstab_scratch(precond, precond, &op, 1, par));
    let stack = MemStack::new(&mut buf);
    let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let mut x = Mat::<f64>::zeros(n, 1);
    let outcome = bicgstab(x.as_mut(), precond, precond, &op, b.as_ref(), params, |_| {}, par, stack);
    let v: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if let Err(BicgError::NoConvergence { .. }) = outcome {
        // stagnation close to machine precision is left to the correction sweeps
        let r = sup_norm(&residual(mdp, slots, &v, rhs));
        if !(r <= 1e-9 * (1.0 + sup_norm(rhs))) {
            return Err(Error::SingularSystem(format!("iterative solve stalled at residual {r:e}")));
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularSystem("non-finite solution".into()));
    }
    Ok(v)
}

fn use_direct(mdp: &LatticeMdp, slots: &[usize], opts: &SolveOptions) -> bool {
    match opts.linear {
        LinearSolver::Direct => true,
        LinearSolver::Iterative => false,
        LinearSolver::Auto => match &mdp.kernel {
            Kernel::Sparse(_) => mdp.kernel.policy_nnz(slots) <= opts.direct_nnz_limit,
            Kernel::PostDecision(_) => mdp.kernel.policy_nnz(slots) <= opts.direct_nnz_limit / 8,
        },
    }
}

/// Solves `(I - diag(d) P_U) V = rhs` for the policy given as slots, then
/// polishes with a few residual-correction sweeps.
pub fn solve_policy_system(mdp: &LatticeMdp, slots: &[usize], rhs: &[f64], opts: &SolveOptions) -> Result<Vec<f64>> {
    let direct = use_direct(mdp, slots, opts);
    let solve = |b: &[f64]| {
        if direct {
            solve_direct(mdp, slots, b)
        } else {
            solve_iterative(mdp, slots, b, opts.krylov_tol)
        }
    };
    let mut v = solve(rhs)?;
    for _ in 0..3 {
        let r = residual(mdp, slots, &v, rhs);
        if sup_norm(&r) <= 1e-12 * (1.0 + sup_norm(&v)) {
            break;
        }
        let dv = solve(&r)?;
        for (a, b) in v.iter_mut().zip(&dv) {
            *a += b;
        }
    }
    Ok(v)
}

/// Sup-norm residual of a candidate solution.
pub fn policy_residual(mdp: &LatticeMdp, slots: &[usize], v: &[f64], rhs: &[f64]) -> f64 {
    sup_norm(&residual(mdp, slots, v, rhs))
}
