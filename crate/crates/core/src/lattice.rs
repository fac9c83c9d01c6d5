//! Discounted MDPs on truncated integer lattices.
//!
//! States are integer vectors in a box `lower..=upper`, addressed by a
//! row-major flat index. Every state owns a contiguous range of *slots*, one
//! per feasible action in lexicographic order. Rewards and transition rows
//! are stored per slot.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::KahanSum;

pub type Action = Vec<i64>;

/// Per-state real values keyed by flat state index.
pub type ValueFunction = Vec<f64>;

/// Box of integer points with a row-major index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLattice {
    lower: Vec<i64>,
    upper: Vec<i64>,
    extents: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl StateLattice {
    pub fn new(lower: Vec<i64>, upper: Vec<i64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidLattice(format!(
                "bounds must be non-empty and of equal length, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        let mut extents = Vec::with_capacity(lower.len());
        for (l, u) in lower.iter().zip(&upper) {
            if l > u {
                return Err(Error::InvalidLattice(format!("lower {l} exceeds upper {u}")));
            }
            extents.push((u - l + 1) as usize);
        }
        let mut strides = vec![1usize; extents.len()];
        let mut len = 1usize;
        for i in (0..extents.len()).rev() {
            strides[i] = len;
            len = len
                .checked_mul(extents[i])
                .ok_or_else(|| Error::InvalidLattice("too many states".into()))?;
        }
        Ok(Self { lower, upper, extents, strides, len })
    }

    /// Lattice `0..=upper` in every coordinate.
    pub fn from_upper(upper: Vec<i64>) -> Result<Self> {
        Self::new(vec![0; upper.len()], upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn lower(&self) -> &[i64] {
        &self.lower
    }

    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }

    pub fn index_of(&self, x: &[i64]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        Some(x.iter().zip(&self.lower).zip(&self.strides).map(|((v, l), s)| (v - l) as usize * s).sum())
    }

    pub fn state(&self, index: usize) -> Vec<i64> {
        let mut x = vec![0; self.dim()];
        self.state_into(index, &mut x);
        x
    }

    pub fn state_into(&self, mut index: usize, out: &mut [i64]) {
        debug_assert!(index < self.len);
        for i in 0..self.dim() {
            out[i] = self.lower[i] + (index / self.strides[i]) as i64;
            index %= self.strides[i];
        }
    }

    pub fn states(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len).map(move |i| self.state(i))
    }

    /// True when some coordinate sits on a face of the box.
    pub fn on_boundary(&self, x: &[i64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).any(|((v, l), u)| v == l || v == u)
    }
}

/// Lexicographically ordered feasible actions of every state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTable {
    dim: usize,
    offsets: Vec<usize>,
    data: Vec<i64>,
}

impl ActionTable {
    /// Builds the table from a per-state enumerator. Actions are sorted and
    /// deduplicated; an empty set is an error.
    pub fn from_fn<F>(lattice: &StateLattice, dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[i64]) -> Result<Vec<Action>> + Sync,
    {
        let per_state: Vec<Vec<Action>> = (0..lattice.len())
            .into_par_iter()
            .map(|i| {
                let x = lattice.state(i);
                let mut acts = f(&x)?;
                acts.sort();
                acts.dedup();
                if acts.is_empty() {
                    return Err(Error::EmptyActionSet { state: x });
                }
                if acts.iter().any(|a| a.len() != dim) {
                    return Err(Error::InvalidParameter(format!("action dimension differs from {dim}")));
                }
                Ok(acts)
            })
            .collect::<Result<_>>()?;
        let mut offsets = Vec::with_capacity(per_state.len() + 1);
        let mut data = Vec::new();
        offsets.push(0);
        for acts in per_state {
            for a in acts {
                data.extend_from_slice(&a);
            }
            offsets.push(data.len() / dim.max(1));
        }
        Ok(Self { dim, offsets, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_slots(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn slots(&self, state: usize) -> Range<usize> {
        self.offsets[state]..self.offsets[state + 1]
    }

    pub fn action(&self, slot: usize) -> &[i64] {
        &self.data[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn actions(&self, state: usize) -> impl Iterator<Item = &[i64]> + '_ {
        self.slots(state).map(move |s| self.action(s))
    }

    /// Owning state of a slot.
    pub fn state_of(&self, slot: usize) -> usize {
        self.offsets.partition_point(|&o| o <= slot) - 1
    }

    /// Slot of `action` at `state`, if feasible.
    pub fn find(&self, state: usize, action: &[i64]) -> Option<usize> {
        let r = self.slots(state);
        let (mut lo, mut hi) = (r.start, r.end);
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.action(mid).cmp(action) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return Some(mid),
            }
        }
        None
    }

    /// Feasible slot closest to `action` in L1 distance; ties go to the
    /// lexicographically smallest action.
    pub fn project(&self, state: usize, action: &[i64]) -> usize {
        if let Some(s) = self.find(state, action) {
            return s;
        }
        let mut best = self.offsets[state];
        let mut best_d = i64::MAX;
        for s in self.slots(state) {
            let d: i64 = self.action(s).iter().zip(action).map(|(a, b)| (a - b).abs()).sum();
            if d < best_d {
                best_d = d;
                best = s;
            }
        }
        best
    }
}

/// Enumerates integer points of `lo <= u <= hi` with `A u <= b`, in
/// lexicographic order. Branches that cannot satisfy a row are pruned.
pub fn enumerate_box_polyhedron(lo: &[i64], hi: &[i64], a: &[Vec<i64>], b: &[i64]) -> Vec<Action> {
    let n = lo.len();
    let mut out = Vec::new();
    if lo.iter().zip(hi).any(|(l, h)| l > h) {
        return out;
    }
    // min_rest[k][j]: smallest possible contribution of coordinates j.. to row k
    let min_rest: Vec<Vec<i64>> = a
        .iter()
        .map(|row| {
            let mut acc = vec![0i64; n + 1];
            for j in (0..n).rev() {
                acc[j] = acc[j + 1] + (row[j] * lo[j]).min(row[j] * hi[j]);
            }
            acc
        })
        .collect();
    let mut u = lo.to_vec();
    let mut partial = vec![0i64; a.len()];
    fn rec(
        j: usize,
        u: &mut Vec<i64>,
        partial: &mut Vec<i64>,
        lo: &[i64],
        hi: &[i64],
        a: &[Vec<i64>],
        b: &[i64],
        min_rest: &[Vec<i64>],
        out: &mut Vec<Action>,
    ) {
        if j == u.len() {
            out.push(u.clone());
            return;
        }
        for v in lo[j]..=hi[j] {
            let ok = (0..a.len()).all(|k| partial[k] + a[k][j] * v + min_rest[k][j + 1] <= b[k]);
            if !ok {
                continue;
            }
            u[j] = v;
            for k in 0..a.len() {
                partial[k] += a[k][j] * v;
            }
            rec(j + 1, u, partial, lo, hi, a, b, min_rest, out);
            for k in 0..a.len() {
                partial[k] -= a[k][j] * v;
            }
        }
        u[j] = lo[j];
    }
    if (0..a.len()).all(|k| min_rest[k][0] <= b[k]) {
        rec(0, &mut u, &mut partial, lo, hi, a, b, &min_rest, &mut out);
    }
    out
}

/// Sparse probability row over flat state indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionRow {
    pub entries: Vec<(usize, f64)>,
}

impl TransitionRow {
    pub fn total(&self) -> f64 {
        let mut s = KahanSum::new();
        for &(_, p) in &self.entries {
            s.add(p);
        }
        s.value()
    }

    pub fn expect(&self, v: &[f64]) -> f64 {
        let mut s = KahanSum::new();
        for &(t, p) in &self.entries {
            s.add(p * v[t]);
        }
        s.value()
    }

    /// Merges duplicate targets and drops zero entries, sorted by target.
    pub fn normalized_form(mut self) -> Self {
        self.entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.entries.len());
        for (t, p) in self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += p,
                _ => merged.push((t, p)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Self { entries: merged }
    }

    pub fn is_stochastic(&self, tol: f64) -> bool {
        self.entries.iter().all(|e| e.1 >= 0.0) && (self.total() - 1.0).abs() <= tol
    }
}

/// Restricts a raw row (possibly leaving the lattice) to the lattice and
/// rescales it to unit mass.
pub fn truncate_renormalize(
    state: &[i64],
    action: &[i64],
    raw: &[(Vec<i64>, f64)],
    lattice: &StateLattice,
) -> Result<TransitionRow> {
    let mut inside = KahanSum::new();
    let mut entries = Vec::with_capacity(raw.len());
    for (y, p) in raw {
        if let Some(i) = lattice.index_of(y) {
            if *p > 0.0 {
                inside.add(*p);
                entries.push((i, *p));
            }
        }
    }
    let mass = inside.value();
    if !(mass > 0.0) {
        return Err(Error::ZeroInteriorMass { state: state.to_vec(), action: action.to_vec() });
    }
    for e in &mut entries {
        e.1 /= mass;
    }
    Ok(TransitionRow { entries }.normalized_form())
}

/// Per-slot sparse rows in compressed form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    row_ptr: Vec<usize>,
    targets: Vec<usize>,
    probs: Vec<f64>,
}

impl SparseKernel {
    pub fn from_rows(rows: Vec<TransitionRow>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let nnz = rows.iter().map(|r| r.entries.len()).sum();
        let mut targets = Vec::with_capacity(nnz);
        let mut probs = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for r in rows {
            for (t, p) in r.entries {
                targets.push(t);
                probs.push(p);
            }
            row_ptr.push(targets.len());
        }
        Self { row_ptr, targets, probs }
    }

    pub fn row_entries(&self, slot: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[slot]..self.row_ptr[slot + 1];
        self.targets[r.clone()].iter().copied().zip(self.probs[r].iter().copied())
    }

    pub fn row_len(&self, slot: usize) -> usize {
        self.row_ptr[slot + 1] - self.row_ptr[slot]
    }

    fn expect(&self, slot: usize, v: &[f64]) -> f64 {
        let mut s = KahanSum::new();
        for (t, p) in self.row_entries(slot) {
            s.add(p * v[t]);
        }
        s.value()
    }
}

/// Kernel of the form: the action moves the state deterministically to a
/// post-decision point `z`, then every coordinate moves independently with a
/// per-axis distribution depending only on `z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PostDecisionKernel {
    post: Vec<usize>,
    /// Per axis, row-major `extent x extent` matrix: `factors[i][z * e + y]`.
    factors: Vec<Vec<f64>>,
    extents: Vec<usize>,
}

impl PostDecisionKernel {
    pub fn new(post: Vec<usize>, factors: Vec<Vec<f64>>, extents: Vec<usize>) -> Self {
        debug_assert!(factors.iter().zip(&extents).all(|(f, e)| f.len() == e * e));
        Self { post, factors, extents }
    }

    pub fn post_state(&self, slot: usize) -> usize {
        self.post[slot]
    }

    pub fn factor(&self, axis: usize, z: usize) -> &[f64] {
        let e = self.extents[axis];
        &self.factors[axis][z * e..(z + 1) * e]
    }

    /// `W(z) = E[v(Y) | z]` for every post-decision point, by successive
    /// contraction along each axis.
    pub fn conditional_expectation(&self, v: &[f64]) -> Vec<f64> {
        let mut cur = v.to_vec();
        let n = cur.len();
        for (axis, &e) in self.extents.iter().enumerate() {
            let inner: usize = self.extents[axis + 1..].iter().product();
            let outer = n / (e * inner);
            let f = &self.factors[axis];
            let mut next = vec![0.0; n];
            next.par_chunks_mut(e * inner).enumerate().for_each(|(o, block)| {
                let src = &cur[o * e * inner..(o + 1) * e * inner];
                for z in 0..e {
                    let frow = &f[z * e..(z + 1) * e];
                    let dst = &mut block[z * inner..(z + 1) * inner];
                    for (y, &w) in frow.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let s = &src[y * inner..(y + 1) * inner];
                        for k in 0..inner {
                            dst[k] += w * s[k];
                        }
                    }
                }
            });
            debug_assert_eq!(outer * e * inner, n);
            cur = next;
        }
        cur
    }

    fn row(&self, slot: usize, lattice: &StateLattice) -> TransitionRow {
        let z = lattice.state(self.post[slot]);
        let mut entries = vec![(0usize, 1.0f64)];
        for (axis, &e) in self.extents.iter().enumerate() {
            let zi = (z[axis] - lattice.lower()[axis]) as usize;
            let f = self.factor(axis, zi);
            let stride: usize = self.extents[axis + 1..].iter().product();
            let mut next = Vec::with_capacity(entries.len() * e);
            for &(idx, p) in &entries {
                for (y, &w) in f.iter().enumerate() {
                    if w > 0.0 {
                        next.push((idx + y * stride, p * w));
                    }
                }
            }
            entries = next;
        }
        TransitionRow { entries }.normalized_form()
    }

    fn max_jump_sq(&self, slot: usize, x: &[i64], lattice: &StateLattice) -> f64 {
        let z = lattice.state(self.post[slot]);
        let mut total = 0.0;
        for axis in 0..self.extents.len() {
            let zi = (z[axis] - lattice.lower()[axis]) as usize;
            let f = self.factor(axis, zi);
            let xi = x[axis] - lattice.lower()[axis];
            let m = f
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(y, _)| (y as i64 - xi).abs())
                .max()
                .unwrap_or(0);
            total += (m * m) as f64;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Sparse(SparseKernel),
    PostDecision(PostDecisionKernel),
}

impl Kernel {
    /// `E[v(X_1)]` for every slot.
    pub fn expect_all(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Kernel::Sparse(k) => (0..k.row_ptr.len() - 1).into_par_iter().map(|s| k.expect(s, v)).collect(),
            Kernel::PostDecision(k) => {
                let w = k.conditional_expectation(v);
                k.post.iter().map(|&z| w[z]).collect()
            }
        }
    }

    /// `out[x] = E[v(X_1) | slot = slots[x]]`.
    pub fn expect_policy(&self, slots: &[usize], v: &[f64], out: &mut [f64]) {
        match self {
            Kernel::Sparse(k) => out.par_iter_mut().zip(slots.par_iter()).for_each(|(o, &s)| *o = k.expect(s, v)),
            Kernel::PostDecision(k) => {
                let w = k.conditional_expectation(v);
                for (o, &s) in out.iter_mut().zip(slots) {
                    *o = w[k.post[s]];
                }
            }
        }
    }

    pub fn row(&self, slot: usize, lattice: &StateLattice) -> TransitionRow {
        match self {
            Kernel::Sparse(k) => TransitionRow { entries: k.row_entries(slot).collect() },
            Kernel::PostDecision(k) => k.row(slot, lattice),
        }
    }

    /// Number of stored nonzeros for the rows selected by `slots`.
    pub fn policy_nnz(&self, slots: &[usize]) -> usize {
        match self {
            Kernel::Sparse(k) => slots.iter().map(|&s| k.row_len(s)).sum(),
            Kernel::PostDecision(k) => slots.len().saturating_mul(k.extents.iter().product()),
        }
    }
}

/// Discounted MDP with per-slot rewards and per-state discount factors.
///
/// Ordinary models use a uniform discount; approximating chains carry a
/// state-dependent one.
#[derive(Debug, Clone)]
pub struct LatticeMdp {
    pub lattice: StateLattice,
    pub actions: ActionTable,
    pub kernel: Kernel,
    pub rewards: Vec<f64>,
    pub discounts: Vec<f64>,
    pub alpha: f64,
}

impl LatticeMdp {
    pub fn new(
        lattice: StateLattice,
        actions: ActionTable,
        kernel: Kernel,
        rewards: Vec<f64>,
        discounts: Vec<f64>,
        alpha: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("discount {alpha} outside (0,1)")));
        }
        if actions.num_states() != lattice.len() || discounts.len() != lattice.len() {
            return Err(Error::InvalidParameter("state count mismatch".into()));
        }
        if rewards.len() != actions.num_slots() {
            return Err(Error::InvalidParameter("reward count differs from slot count".into()));
        }
        if let Some(s) = rewards.iter().position(|r| !r.is_finite()) {
            let x = lattice.state(actions.state_of(s));
            return Err(Error::InvalidParameter(format!("non-finite reward at state {x:?}")));
        }
        Ok(Self { lattice, actions, kernel, rewards, discounts, alpha })
    }

    /// Builds an MDP with uniform discount from callbacks; raw rows are
    /// truncated to the lattice and renormalized.
    pub fn from_fns<A, K, R>(lattice: StateLattice, action_dim: usize, alpha: f64, actions: A, kernel: K, reward: R) -> Result<Self>
    where
        A: Fn(&[i64]) -> Result<Vec<Action>> + Sync,
        K: Fn(&[i64], &[i64]) -> Vec<(Vec<i64>, f64)> + Sync,
        R: Fn(&[i64], &[i64]) -> f64 + Sync,
    {
        let table = ActionTable::from_fn(&lattice, action_dim, actions)?;
        let slots: Vec<usize> = (0..table.num_slots()).collect();
        let rows: Vec<TransitionRow> = slots
            .par_iter()
            .map(|&s| {
                let x = lattice.state(table.state_of(s));
                let u = table.action(s);
                truncate_renormalize(&x, u, &kernel(&x, u), &lattice)
            })
            .collect::<Result<_>>()?;
        let rewards: Vec<f64> = slots
            .par_iter()
            .map(|&s| {
                let x = lattice.state(table.state_of(s));
                reward(&x, table.action(s))
            })
            .collect();
        let n = lattice.len();
        Self::new(lattice, table, Kernel::Sparse(SparseKernel::from_rows(rows)), rewards, vec![alpha; n], alpha)
    }

    pub fn num_states(&self) -> usize {
        self.lattice.len()
    }

    pub fn row(&self, slot: usize) -> TransitionRow {
        self.kernel.row(slot, &self.lattice)
    }

    /// Largest discount factor over states.
    pub fn max_discount(&self) -> f64 {
        self.discounts.iter().fold(0.0_f64, |m, &d| m.max(d))
    }

    /// Per-state rewards collected by `policy`.
    pub fn policy_rewards(&self, policy: &StationaryPolicy) -> Vec<f64> {
        policy.slots.iter().map(|&s| self.rewards[s]).collect()
    }
}

/// Deterministic stationary policy as one slot per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationaryPolicy {
    pub slots: Vec<usize>,
}

impl StationaryPolicy {
    /// Lexicographically smallest action everywhere.
    pub fn first_actions(table: &ActionTable) -> Self {
        Self { slots: (0..table.num_states()).map(|x| table.slots(x).start).collect() }
    }

    /// Policy from explicit actions; each must be feasible.
    pub fn from_actions(table: &ActionTable, lattice: &StateLattice, actions: &[Action]) -> Result<Self> {
        let slots = actions
            .iter()
            .enumerate()
            .map(|(x, a)| {
                table.find(x, a).ok_or_else(|| Error::InfeasibleAction { state: lattice.state(x), action: a.clone() })
            })
            .collect::<Result<_>>()?;
        Ok(Self { slots })
    }

    pub fn action<'a>(&self, table: &'a ActionTable, state: usize) -> &'a [i64] {
        table.action(self.slots[state])
    }

    pub fn is_feasible(&self, table: &ActionTable) -> bool {
        self.slots.len() == table.num_states() && self.slots.iter().enumerate().all(|(x, &s)| table.slots(x).contains(&s))
    }
}

/// Largest jump, Euclidean and rounded up, over the rows used by `policy`.
pub fn max_jump(mdp: &LatticeMdp, policy: &StationaryPolicy) -> u64 {
    let lat = &mdp.lattice;
    let sq = (0..lat.len())
        .into_par_iter()
        .map(|xi| {
            let x = lat.state(xi);
            let s = policy.slots[xi];
            match &mdp.kernel {
                Kernel::Sparse(k) => k
                    .row_entries(s)
                    .filter(|e| e.1 > 0.0)
                    .map(|(t, _)| {
                        let y = lat.state(t);
                        y.iter().zip(&x).map(|(a, b)| ((a - b) * (a - b)) as f64).sum::<f64>()
                    })
                    .fold(0.0_f64, f64::max),
                Kernel::PostDecision(k) => k.max_jump_sq(s, &x, lat),
            }
        })
        .reduce(|| 0.0, f64::max);
    let r = sq.sqrt();
    // guard against sqrt rounding just above an integer
    let c = r.round();
    if (c * c - sq).abs() < 1e-9 {
        c as u64
    } else {
        r.ceil() as u64
    }
}
