//! Pathwise dilation of a Markov generator into deterministic jumps driven
//! by marked Poisson noise.
//!
//! The environment carries marks from G = E x L, where E is the system's
//! state space and L the set of n^n map labels, so |G| = n^(n+1). A
//! coupling is a bijection phi of E x G. The universal coupling prescribes
//!
//! ```text
//! phi(i, (0, ell)) = (beta_ell(i), (i, ell))
//! ```
//!
//! on marks whose first component is the distinguished state 0, and is
//! filled in on the remaining points by matching, in lexicographic order,
//! the unprescribed domain to the unhit codomain. The prescription, and
//! hence everything with weight in the environment law, depends only on n,
//! never on the generator being dilated.
//!
//! A marked configuration is a finite set of timed marks on a window
//! (lo, hi]. The jump cocycle psi_t threads the system state through the
//! marks in (0, t], replacing each mark (j, ell) by (previous state, ell)
//! as it is consumed; theta_t shifts time; alpha_t composes the two into a
//! group of transformations.

use thiserror::Error;

use crate::markov::{
    decompose, uniformize, DeterministicMap, MarkovError, RateMatrix, StochasticMatrix,
};
use crate::tol;

/// Guard for materializing the full coupling table: |E x G| = n^(n+2)
/// grows past memory-friendly sizes immediately after n = 4 (4096 points).
pub const MAX_DENSE_STATES: usize = 4;

#[derive(Debug, Error)]
pub enum DilationError {
    #[error("state {state} out of range for {n} states")]
    BadState { state: usize, n: usize },
    #[error("mark ({j},{ell}) out of range for {n} states")]
    BadMark { j: usize, ell: u64, n: usize },
    #[error("dense coupling table requested for n = {n}, limit is {max}")]
    TooLargeForDense { n: usize, max: usize },
    #[error("coupling point (state {state}, mark ({j},{ell})) is outside the prescribed region of a lazy coupling")]
    NotMaterialized { state: usize, j: usize, ell: u64 },
    #[error("coupling table is not a bijection: {detail}")]
    NotBijective { detail: String },
    #[error("time {t} is not a finite number usable here")]
    BadTime { t: f64 },
    #[error("window ({lo}, {hi}] does not cover the required interval ({need_lo}, {need_hi}]")]
    WindowTooSmall { lo: f64, hi: f64, need_lo: f64, need_hi: f64 },
    #[error("point times must be strictly increasing: t[{index}] = {t} after {prev}")]
    UnorderedTimes { index: usize, t: f64, prev: f64 },
    #[error("point at time {t} lies outside the window ({lo}, {hi}]")]
    PointOutsideWindow { t: f64, lo: f64, hi: f64 },
    #[error("window ({lo}, {hi}] is empty or has a non-finite orientation")]
    BadWindow { lo: f64, hi: f64 },
    #[error("environment rate {lambda} must be positive and finite")]
    BadRate { lambda: f64 },
    #[error("environment weight {weight} for mark ({j},{ell}) is invalid")]
    BadWeight { j: usize, ell: u64, weight: f64 },
    #[error("duplicate mark ({j},{ell}) in environment law")]
    DuplicateMark { j: usize, ell: u64 },
    #[error("environment weights sum to {sum}, expected 1 within {tol}")]
    WeightSumNotOne { sum: f64, tol: f64 },
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// A mark (j, ell): a state label and a map label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Mark {
    pub j: usize,
    pub ell: u64,
}

impl Mark {
    pub fn new(j: usize, ell: u64) -> Self {
        Self { j, ell }
    }
}

/// The mark alphabet G = E x L for n states; marks are indexed
/// lexicographically by (j, ell) but only materialized on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkSpace {
    n: usize,
}

impl MarkSpace {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "state space must be non-empty");
        Self { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of map labels, n^n.
    pub fn map_count(&self) -> u64 {
        (self.n as u64).pow(self.n as u32)
    }

    /// |G| = n^(n+1).
    pub fn size(&self) -> usize {
        self.n * self.map_count() as usize
    }

    pub fn contains(&self, mark: Mark) -> bool {
        mark.j < self.n && mark.ell < self.map_count()
    }

    pub fn index(&self, mark: Mark) -> usize {
        debug_assert!(self.contains(mark));
        mark.j * self.map_count() as usize + mark.ell as usize
    }

    pub fn mark_at(&self, index: usize) -> Mark {
        debug_assert!(index < self.size());
        let maps = self.map_count() as usize;
        Mark { j: index / maps, ell: (index % maps) as u64 }
    }

    pub fn iter(&self) -> impl Iterator<Item = Mark> + '_ {
        (0..self.size()).map(move |k| self.mark_at(k))
    }
}

/// Where a coupling pair came from: the universal prescription or the
/// lexicographic completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Prescribed,
    Completed,
}

/// One entry of a coupling table: input pair, output pair, and whether the
/// entry was prescribed or filled in by the completion.
pub type CouplingPair = ((usize, Mark), (usize, Mark), Provenance);

#[derive(Debug, Clone, PartialEq)]
enum Table {
    /// Forward and backward permutations of E x G as flat-index tables,
    /// with per-pair provenance keyed by the domain point.
    Dense { forward: Vec<usize>, backward: Vec<usize>, prescribed: Vec<bool> },
    /// Only the prescribed region exists; anything else fails loudly.
    Lazy,
}

/// A bijection phi of E x G, applied as phi(state, mark) -> (state', mark').
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    space: MarkSpace,
    table: Table,
}

impl Coupling {
    /// Universal coupling for n states; dense table when it fits, lazy
    /// (prescribed-only) beyond [`MAX_DENSE_STATES`].
    pub fn universal(n: usize) -> Self {
        if n <= MAX_DENSE_STATES {
            Self::universal_dense(n).expect("within dense guard")
        } else {
            Self::universal_lazy(n)
        }
    }

    pub fn universal_lazy(n: usize) -> Self {
        Self { space: MarkSpace::new(n), table: Table::Lazy }
    }

    pub fn universal_dense(n: usize) -> Result<Self, DilationError> {
        Self::universal_dense_completed(n, false)
    }

    /// Same prescription, but the completion matches leftover codomain
    /// points in reversed lexicographic order. Only used to demonstrate
    /// that induced objects do not depend on the completion choice.
    pub fn universal_dense_reversed(n: usize) -> Result<Self, DilationError> {
        Self::universal_dense_completed(n, true)
    }

    fn universal_dense_completed(n: usize, reversed: bool) -> Result<Self, DilationError> {
        if n > MAX_DENSE_STATES {
            return Err(DilationError::TooLargeForDense { n, max: MAX_DENSE_STATES });
        }
        let space = MarkSpace::new(n);
        let gsize = space.size();
        let total = n * gsize;
        let maps = space.map_count();

        const UNSET: usize = usize::MAX;
        let mut forward = vec![UNSET; total];
        let mut backward = vec![UNSET; total];
        let mut prescribed = vec![false; total];

        for i in 0..n {
            for ell in 0..maps {
                let from = i * gsize + space.index(Mark::new(0, ell));
                let to_state = DeterministicMap::digit(n, ell, i);
                let to = to_state * gsize + space.index(Mark::new(i, ell));
                forward[from] = to;
                backward[to] = from;
                prescribed[from] = true;
            }
        }

        // Flat index order is lexicographic in (state, j, ell) on both
        // sides, which is exactly the canonical completion order.
        let mut leftover_cod: Vec<usize> =
            (0..total).filter(|&x| backward[x] == UNSET).collect();
        if reversed {
            leftover_cod.reverse();
        }
        let mut next = 0;
        for (from, slot) in forward.iter_mut().enumerate() {
            if *slot == UNSET {
                let to = leftover_cod[next];
                next += 1;
                *slot = to;
                backward[to] = from;
            }
        }
        debug_assert_eq!(next, leftover_cod.len());

        Ok(Self { space, table: Table::Dense { forward, backward, prescribed } })
    }

    /// Rebuild a coupling from an explicit forward table over flat indices
    /// (state * |G| + mark index). Validates bijectivity.
    pub fn from_forward_table(
        n: usize,
        forward: Vec<usize>,
        prescribed: Vec<bool>,
    ) -> Result<Self, DilationError> {
        let space = MarkSpace::new(n);
        let total = n * space.size();
        if forward.len() != total || prescribed.len() != total {
            return Err(DilationError::NotBijective {
                detail: format!("table has {} entries, expected {}", forward.len(), total),
            });
        }
        let mut backward = vec![usize::MAX; total];
        for (from, &to) in forward.iter().enumerate() {
            if to >= total {
                return Err(DilationError::NotBijective {
                    detail: format!("target {to} out of range at {from}"),
                });
            }
            if backward[to] != usize::MAX {
                return Err(DilationError::NotBijective {
                    detail: format!("target {to} hit twice, by {} and {from}", backward[to]),
                });
            }
            backward[to] = from;
        }
        Ok(Self { space, table: Table::Dense { forward, backward, prescribed } })
    }

    /// Take a forward table as-is, skipping the bijectivity validation;
    /// the backward table is best-effort (last writer wins). Exists so
    /// verification harnesses can inject faults and watch
    /// [`Coupling::verify_bijection`] catch them.
    pub fn from_forward_table_unchecked(
        n: usize,
        forward: Vec<usize>,
        prescribed: Vec<bool>,
    ) -> Self {
        let space = MarkSpace::new(n);
        let total = n * space.size();
        assert_eq!(forward.len(), total, "table must cover E x G");
        assert_eq!(prescribed.len(), total, "flags must cover E x G");
        let mut backward = vec![usize::MAX; total];
        for (from, &to) in forward.iter().enumerate() {
            if to < total {
                backward[to] = from;
            }
        }
        Self { space, table: Table::Dense { forward, backward, prescribed } }
    }

    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn space(&self) -> &MarkSpace {
        &self.space
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.table, Table::Dense { .. })
    }

    fn flat(&self, state: usize, mark: Mark) -> Result<usize, DilationError> {
        if state >= self.space.n {
            return Err(DilationError::BadState { state, n: self.space.n });
        }
        if !self.space.contains(mark) {
            return Err(DilationError::BadMark { j: mark.j, ell: mark.ell, n: self.space.n });
        }
        Ok(state * self.space.size() + self.space.index(mark))
    }

    fn unflat(&self, flat: usize) -> (usize, Mark) {
        let gsize = self.space.size();
        (flat / gsize, self.space.mark_at(flat % gsize))
    }

    /// phi(state, mark).
    pub fn apply(&self, state: usize, mark: Mark) -> Result<(usize, Mark), DilationError> {
        let from = self.flat(state, mark)?;
        match &self.table {
            Table::Dense { forward, .. } => Ok(self.unflat(forward[from])),
            Table::Lazy => {
                if mark.j != 0 {
                    return Err(DilationError::NotMaterialized {
                        state,
                        j: mark.j,
                        ell: mark.ell,
                    });
                }
                let n = self.space.n;
                let to_state = DeterministicMap::digit(n, mark.ell, state);
                Ok((to_state, Mark::new(state, mark.ell)))
            }
        }
    }

    /// phi^{-1}(state, mark).
    pub fn apply_inverse(&self, state: usize, mark: Mark) -> Result<(usize, Mark), DilationError> {
        let to = self.flat(state, mark)?;
        match &self.table {
            Table::Dense { backward, .. } => Ok(self.unflat(backward[to])),
            Table::Lazy => {
                let n = self.space.n;
                if DeterministicMap::digit(n, mark.ell, mark.j) != state {
                    return Err(DilationError::NotMaterialized {
                        state,
                        j: mark.j,
                        ell: mark.ell,
                    });
                }
                Ok((mark.j, Mark::new(0, mark.ell)))
            }
        }
    }

    /// The system component phi^E(state, mark).
    pub fn system_part(&self, state: usize, mark: Mark) -> Result<usize, DilationError> {
        self.apply(state, mark).map(|(s, _)| s)
    }

    pub fn provenance(&self, state: usize, mark: Mark) -> Result<Provenance, DilationError> {
        let from = self.flat(state, mark)?;
        match &self.table {
            Table::Dense { prescribed, .. } => Ok(if prescribed[from] {
                Provenance::Prescribed
            } else {
                Provenance::Completed
            }),
            Table::Lazy => {
                if mark.j == 0 {
                    Ok(Provenance::Prescribed)
                } else {
                    Err(DilationError::NotMaterialized { state, j: mark.j, ell: mark.ell })
                }
            }
        }
    }

    /// Check that the dense table is a permutation of E x G.
    pub fn verify_bijection(&self) -> Result<(), DilationError> {
        match &self.table {
            Table::Lazy => Ok(()),
            Table::Dense { forward, .. } => {
                let total = forward.len();
                let mut hit = vec![false; total];
                for (from, &to) in forward.iter().enumerate() {
                    if to >= total {
                        return Err(DilationError::NotBijective {
                            detail: format!("target {to} out of range at {from}"),
                        });
                    }
                    if hit[to] {
                        return Err(DilationError::NotBijective {
                            detail: format!("target {to} hit at least twice, last by {from}"),
                        });
                    }
                    hit[to] = true;
                }
                Ok(())
            }
        }
    }

    /// All pairs ((state, mark), (state', mark'), provenance) of a dense
    /// table in domain order.
    pub fn iter_pairs(&self) -> Option<impl Iterator<Item = CouplingPair> + '_> {
        match &self.table {
            Table::Lazy => None,
            Table::Dense { forward, prescribed, .. } => Some(
                forward.iter().enumerate().map(move |(from, &to)| {
                    let prov = if prescribed[from] {
                        Provenance::Prescribed
                    } else {
                        Provenance::Completed
                    };
                    (self.unflat(from), self.unflat(to), prov)
                }),
            ),
        }
    }

    /// Thread the state through marks in order, replacing each consumed
    /// mark: (x_k, h_k) = phi(x_{k-1}, g_k).
    pub fn thread(
        &self,
        state: usize,
        marks: &[Mark],
    ) -> Result<(usize, Vec<Mark>), DilationError> {
        let mut x = state;
        let mut out = Vec::with_capacity(marks.len());
        for &g in marks {
            let (next, h) = self.apply(x, g)?;
            out.push(h);
            x = next;
        }
        Ok((x, out))
    }

    /// Invert [`Coupling::thread`]: recover the original state and marks
    /// from the final state and replaced marks, threading backwards.
    pub fn thread_inverse(
        &self,
        state: usize,
        marks: &[Mark],
    ) -> Result<(usize, Vec<Mark>), DilationError> {
        let mut x = state;
        let mut out = vec![Mark::new(0, 0); marks.len()];
        for (slot, &h) in out.iter_mut().zip(marks.iter()).rev() {
            let (prev, g) = self.apply_inverse(x, h)?;
            *slot = g;
            x = prev;
        }
        Ok((x, out))
    }
}

/// Finitely many timed marks with strictly increasing times, known exactly
/// on the window (lo, hi]; lo may be -inf and hi may be +inf.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedConfiguration {
    points: Vec<(f64, Mark)>,
    lo: f64,
    hi: f64,
}

impl MarkedConfiguration {
    pub fn new(points: Vec<(f64, Mark)>, lo: f64, hi: f64) -> Result<Self, DilationError> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(DilationError::BadWindow { lo, hi });
        }
        let mut prev = f64::NEG_INFINITY;
        for (index, &(t, _)) in points.iter().enumerate() {
            if !t.is_finite() {
                return Err(DilationError::BadTime { t });
            }
            if t <= prev {
                return Err(DilationError::UnorderedTimes { index, t, prev });
            }
            if t <= lo || t > hi {
                return Err(DilationError::PointOutsideWindow { t, lo, hi });
            }
            prev = t;
        }
        Ok(Self { points, lo, hi })
    }

    pub fn empty(lo: f64, hi: f64) -> Result<Self, DilationError> {
        Self::new(Vec::new(), lo, hi)
    }

    pub fn points(&self) -> &[(f64, Mark)] {
        &self.points
    }

    pub fn window(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of points with time in (a, b].
    pub fn count_in(&self, a: f64, b: f64) -> usize {
        self.points.iter().filter(|&&(t, _)| t > a && t <= b).count()
    }
}

/// theta_t: shift every time (and the window) by -t. Marks are untouched.
pub fn theta_shift(t: f64, config: &MarkedConfiguration) -> MarkedConfiguration {
    assert!(t.is_finite(), "shift must be finite");
    MarkedConfiguration {
        points: config.points.iter().map(|&(s, m)| (s - t, m)).collect(),
        lo: config.lo - t,
        hi: config.hi - t,
    }
}

fn require_window(
    config: &MarkedConfiguration,
    need_lo: f64,
    need_hi: f64,
) -> Result<(), DilationError> {
    if config.lo > need_lo || config.hi < need_hi {
        return Err(DilationError::WindowTooSmall {
            lo: config.lo,
            hi: config.hi,
            need_lo,
            need_hi,
        });
    }
    Ok(())
}

/// psi_t: thread the state through the marks in (0, t], replacing each as
/// it is consumed. Times, the window, and points outside (0, t] are
/// untouched. A point at exactly t is consumed.
pub fn psi_apply(
    coupling: &Coupling,
    t: f64,
    state: usize,
    config: &MarkedConfiguration,
) -> Result<(usize, MarkedConfiguration), DilationError> {
    if !t.is_finite() || t < 0.0 {
        return Err(DilationError::BadTime { t });
    }
    if t > 0.0 {
        require_window(config, 0.0, t)?;
    }
    let mut out = config.clone();
    let mut x = state;
    for point in out.points.iter_mut() {
        if point.0 > 0.0 && point.0 <= t {
            let (next, replaced) = coupling.apply(x, point.1)?;
            point.1 = replaced;
            x = next;
        }
    }
    Ok((x, out))
}

/// Inverse of [`psi_apply`] at the same t: threads backwards through the
/// consumed region.
pub fn psi_inverse(
    coupling: &Coupling,
    t: f64,
    state: usize,
    config: &MarkedConfiguration,
) -> Result<(usize, MarkedConfiguration), DilationError> {
    if !t.is_finite() || t < 0.0 {
        return Err(DilationError::BadTime { t });
    }
    if t > 0.0 {
        require_window(config, 0.0, t)?;
    }
    let mut out = config.clone();
    let mut x = state;
    for point in out.points.iter_mut().rev() {
        if point.0 > 0.0 && point.0 <= t {
            let (prev, original) = coupling.apply_inverse(x, point.1)?;
            point.1 = original;
            x = prev;
        }
    }
    Ok((x, out))
}

/// alpha_t: the time-shifted cocycle, a one-parameter group:
/// theta_t . psi_t for t >= 0 and psi_|t|^{-1} . theta_t for t < 0.
pub fn alpha(
    coupling: &Coupling,
    t: f64,
    state: usize,
    config: &MarkedConfiguration,
) -> Result<(usize, MarkedConfiguration), DilationError> {
    if !t.is_finite() {
        return Err(DilationError::BadTime { t });
    }
    if t >= 0.0 {
        let (x, consumed) = psi_apply(coupling, t, state, config)?;
        Ok((x, theta_shift(t, &consumed)))
    } else {
        let shifted = theta_shift(t, config);
        psi_inverse(coupling, -t, state, &shifted)
    }
}

/// Environment law: arrival rate lambda and a mark distribution q given by
/// its support. Weights are positive and sum to 1 within
/// [`tol::ROW_SUM_ABS`]; zero-weight entries are dropped on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentLaw {
    space: MarkSpace,
    lambda: f64,
    weights: Vec<(Mark, f64)>,
}

impl EnvironmentLaw {
    pub fn new(
        n: usize,
        lambda: f64,
        mut weights: Vec<(Mark, f64)>,
    ) -> Result<Self, DilationError> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(DilationError::BadRate { lambda });
        }
        let space = MarkSpace::new(n);
        let mut sum = 0.0;
        for &(mark, w) in &weights {
            if !space.contains(mark) {
                return Err(DilationError::BadMark { j: mark.j, ell: mark.ell, n });
            }
            if !w.is_finite() || w < 0.0 {
                return Err(DilationError::BadWeight { j: mark.j, ell: mark.ell, weight: w });
            }
            sum += w;
        }
        if (sum - 1.0).abs() > tol::ROW_SUM_ABS {
            return Err(DilationError::WeightSumNotOne { sum, tol: tol::ROW_SUM_ABS });
        }
        weights.retain(|&(_, w)| w > 0.0);
        weights.sort_by_key(|&(mark, _)| mark);
        for pair in weights.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(DilationError::DuplicateMark { j: pair[0].0.j, ell: pair[0].0.ell });
            }
        }
        Ok(Self { space, lambda, weights })
    }

    pub fn n(&self) -> usize {
        self.space.n
    }

    pub fn space(&self) -> &MarkSpace {
        &self.space
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Support of q, sorted by mark, weights strictly positive.
    pub fn support(&self) -> &[(Mark, f64)] {
        &self.weights
    }

    pub fn weight_of(&self, mark: Mark) -> f64 {
        match self.weights.binary_search_by_key(&mark, |&(m, _)| m) {
            Ok(k) => self.weights[k].1,
            Err(_) => 0.0,
        }
    }
}

/// A coupling together with an environment law: everything needed to run
/// the noise-driven jump dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dilation {
    coupling: Coupling,
    law: EnvironmentLaw,
}

impl Dilation {
    pub fn new(coupling: Coupling, law: EnvironmentLaw) -> Result<Self, DilationError> {
        if coupling.n() != law.n() {
            return Err(DilationError::BadState { state: law.n(), n: coupling.n() });
        }
        Ok(Self { coupling, law })
    }

    /// Universal dilation of R: uniformize, decompose the jump matrix, and
    /// put weight p_ell on mark (0, ell). The coupling table depends only
    /// on n; dense when n allows it, lazy beyond that.
    pub fn build_universal(r: &RateMatrix) -> Result<Self, DilationError> {
        Self::build(r, Coupling::universal(r.n()))
    }

    /// As [`Dilation::build_universal`] but insists on a dense table.
    pub fn build_universal_dense(r: &RateMatrix) -> Result<Self, DilationError> {
        Self::build(r, Coupling::universal_dense(r.n())?)
    }

    fn build(r: &RateMatrix, coupling: Coupling) -> Result<Self, DilationError> {
        let (lambda, p) = uniformize(r);
        let decomposition = decompose(&p)?;
        let weights = decomposition
            .atoms()
            .iter()
            .map(|atom| (Mark::new(0, atom.map.index()), atom.weight))
            .collect();
        let law = EnvironmentLaw::new(r.n(), lambda, weights)?;
        Ok(Self { coupling, law })
    }

    pub fn n(&self) -> usize {
        self.coupling.n()
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    pub fn law(&self) -> &EnvironmentLaw {
        &self.law
    }

    pub fn space(&self) -> &MarkSpace {
        self.coupling.space()
    }

    /// The generator the noise actually induces on the system:
    /// P_ij = sum_g q_g [phi^E(i, g) = j] and R = lambda (P - I).
    pub fn induced_generator(&self) -> Result<(StochasticMatrix, RateMatrix), DilationError> {
        let n = self.n();
        let mut p = ndarray::Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for &(mark, w) in self.law.support() {
                let j = self.coupling.system_part(i, mark)?;
                p[[i, j]] += w;
            }
        }
        let lambda = self.law.lambda;
        let mut r = p.mapv(|x| x * lambda);
        for i in 0..n {
            r[[i, i]] -= lambda;
        }
        let p = StochasticMatrix::from_computed(p)?;
        let r = RateMatrix::new(r)?;
        Ok((p, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::HashSet;

    use crate::linalg::max_abs_diff_r;

    fn two_state_rate() -> RateMatrix {
        RateMatrix::new(array![[-1.0, 1.0], [2.0, -2.0]]).unwrap()
    }

    /// Dyadic time helper: k / 1024 is exactly representable, so shift
    /// arithmetic in the group-law tests is exact.
    fn dy(k: i64) -> f64 {
        k as f64 / 1024.0
    }

    #[test]
    fn mark_space_sizes() {
        assert_eq!(MarkSpace::new(2).size(), 8);
        assert_eq!(MarkSpace::new(3).size(), 81);
        assert_eq!(MarkSpace::new(4).size(), 1024);
    }

    #[test]
    fn mark_index_round_trips() {
        let space = MarkSpace::new(3);
        for k in 0..space.size() {
            assert_eq!(space.index(space.mark_at(k)), k);
        }
    }

    #[test]
    fn universal_coupling_follows_prescription() {
        // Swap map on two states has label 0*2 + 1... the swap sends
        // 0 -> 1, 1 -> 0, so its image digits are (1, 0): label 2.
        let phi = Coupling::universal_dense(2).unwrap();
        let swap = 2u64;
        assert_eq!(phi.apply(0, Mark::new(0, swap)).unwrap(), (1, Mark::new(0, swap)));
        assert_eq!(phi.apply(1, Mark::new(0, swap)).unwrap(), (0, Mark::new(1, swap)));
        // Identity map has image digits (0, 1): label 1.
        let id = 1u64;
        assert_eq!(phi.apply(0, Mark::new(0, id)).unwrap(), (0, Mark::new(0, id)));
        assert_eq!(phi.apply(1, Mark::new(0, id)).unwrap(), (1, Mark::new(1, id)));
    }

    #[test]
    fn universal_coupling_is_bijective() {
        for n in 1..=4 {
            let phi = Coupling::universal_dense(n).unwrap();
            phi.verify_bijection().unwrap();
            let total = n * phi.space().size();
            let mut seen = HashSet::new();
            for flat in 0..total {
                let (state, mark) = phi.unflat(flat);
                let image = phi.apply(state, mark).unwrap();
                assert!(seen.insert(image));
                // Forward then backward is the identity.
                assert_eq!(phi.apply_inverse(image.0, image.1).unwrap(), (state, mark));
            }
            assert_eq!(seen.len(), total);
        }
    }

    #[test]
    fn universal_coupling_depends_only_on_n() {
        let a = Coupling::universal_dense(3).unwrap();
        let b = Coupling::universal_dense(3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prescribed_pairs_are_flagged() {
        let phi = Coupling::universal_dense(2).unwrap();
        let mut prescribed = 0;
        for ((state, mark), _, prov) in phi.iter_pairs().unwrap() {
            let expect = if mark.j == 0 { Provenance::Prescribed } else { Provenance::Completed };
            assert_eq!(prov, expect, "at ({state}, {mark:?})");
            if prov == Provenance::Prescribed {
                prescribed += 1;
            }
        }
        // n * n^n prescribed pairs.
        assert_eq!(prescribed, 2 * 4);
    }

    #[test]
    fn reversed_completion_differs_but_agrees_on_prescribed() {
        let a = Coupling::universal_dense(2).unwrap();
        let b = Coupling::universal_dense_reversed(2).unwrap();
        assert_ne!(a, b);
        b.verify_bijection().unwrap();
        for ell in 0..4u64 {
            for i in 0..2 {
                assert_eq!(
                    a.apply(i, Mark::new(0, ell)).unwrap(),
                    b.apply(i, Mark::new(0, ell)).unwrap()
                );
            }
        }
    }

    #[test]
    fn lazy_coupling_matches_dense_on_prescribed_region() {
        let dense = Coupling::universal_dense(3).unwrap();
        let lazy = Coupling::universal_lazy(3);
        for ell in 0..27u64 {
            for i in 0..3 {
                let mark = Mark::new(0, ell);
                let image = dense.apply(i, mark).unwrap();
                assert_eq!(lazy.apply(i, mark).unwrap(), image);
                assert_eq!(lazy.apply_inverse(image.0, image.1).unwrap(), (i, mark));
            }
        }
    }

    #[test]
    fn lazy_coupling_fails_loudly_off_prescription() {
        let lazy = Coupling::universal_lazy(5);
        let err = lazy.apply(0, Mark::new(2, 7)).unwrap_err();
        assert!(matches!(err, DilationError::NotMaterialized { .. }));
        // (0, (j, ell)) is invertible only if beta_ell(j) = 0.
        let err = lazy.apply_inverse(4, Mark::new(0, 0)).unwrap_err();
        assert!(matches!(err, DilationError::NotMaterialized { .. }));
    }

    #[test]
    fn coupling_rejects_out_of_range_points() {
        let phi = Coupling::universal_dense(2).unwrap();
        assert!(matches!(
            phi.apply(2, Mark::new(0, 0)),
            Err(DilationError::BadState { .. })
        ));
        assert!(matches!(
            phi.apply(0, Mark::new(0, 4)),
            Err(DilationError::BadMark { .. })
        ));
    }

    #[test]
    fn forward_table_validation_catches_collisions() {
        let phi = Coupling::universal_dense(2).unwrap();
        let (mut forward, prescribed) = match &phi.table {
            Table::Dense { forward, prescribed, .. } => (forward.clone(), prescribed.clone()),
            Table::Lazy => unreachable!(),
        };
        forward[1] = forward[0];
        let err = Coupling::from_forward_table(2, forward, prescribed).unwrap_err();
        assert!(matches!(err, DilationError::NotBijective { .. }));
    }

    #[test]
    fn threading_two_swaps_returns_to_start() {
        let phi = Coupling::universal_dense(2).unwrap();
        let swap = Mark::new(0, 2);
        let (x, marks) = phi.thread(0, &[swap, swap]).unwrap();
        assert_eq!(x, 0);
        // Each consumed mark records the state it acted on.
        assert_eq!(marks, vec![Mark::new(0, 2), Mark::new(1, 2)]);
        let (back, originals) = phi.thread_inverse(x, &marks).unwrap();
        assert_eq!(back, 0);
        assert_eq!(originals, vec![swap, swap]);
    }

    #[test]
    fn thread_on_empty_mark_list_is_identity() {
        let phi = Coupling::universal_dense(2).unwrap();
        assert_eq!(phi.thread(1, &[]).unwrap(), (1, vec![]));
    }

    #[test]
    fn threading_is_a_sector_permutation() {
        // On E x G^2 for n = 2 the threading map must be a bijection.
        let phi = Coupling::universal_dense(2).unwrap();
        let space = *phi.space();
        let mut seen = HashSet::new();
        for state in 0..2 {
            for a in 0..space.size() {
                for b in 0..space.size() {
                    let marks = [space.mark_at(a), space.mark_at(b)];
                    let out = phi.thread(state, &marks).unwrap();
                    assert!(seen.insert(out.clone()), "collision at {out:?}");
                }
            }
        }
        assert_eq!(seen.len(), 2 * 8 * 8);
    }

    #[test]
    fn configuration_validates_order_and_window() {
        let m = Mark::new(0, 0);
        assert!(matches!(
            MarkedConfiguration::new(vec![(1.0, m), (1.0, m)], 0.0, 2.0),
            Err(DilationError::UnorderedTimes { .. })
        ));
        assert!(matches!(
            MarkedConfiguration::new(vec![(3.0, m)], 0.0, 2.0),
            Err(DilationError::PointOutsideWindow { .. })
        ));
        assert!(matches!(
            MarkedConfiguration::new(vec![], 2.0, 2.0),
            Err(DilationError::BadWindow { .. })
        ));
        // Right-closed: a point exactly at hi is inside, at lo is not.
        assert!(MarkedConfiguration::new(vec![(2.0, m)], 0.0, 2.0).is_ok());
        assert!(matches!(
            MarkedConfiguration::new(vec![(0.0, m)], 0.0, 2.0),
            Err(DilationError::PointOutsideWindow { .. })
        ));
    }

    #[test]
    fn theta_shifts_times_and_window() {
        let m = Mark::new(0, 1);
        let config = MarkedConfiguration::new(
            vec![(dy(512), m), (dy(1536), m)],
            f64::NEG_INFINITY,
            f64::INFINITY,
        )
        .unwrap();
        let shifted = theta_shift(1.0, &config);
        assert_eq!(shifted.points()[0].0, dy(-512));
        assert_eq!(shifted.points()[1].0, dy(512));
        assert_eq!(shifted.window(), (f64::NEG_INFINITY, f64::INFINITY));
        // Group law on a bounded window, exact on the dyadic grid.
        let bounded = MarkedConfiguration::new(vec![(dy(512), m)], dy(-1024), dy(2048)).unwrap();
        let back = theta_shift(-dy(300), &theta_shift(dy(300), &bounded));
        assert_eq!(back, bounded);
    }

    #[test]
    fn psi_consumes_exactly_the_marks_up_to_t() {
        let phi = Coupling::universal_dense(2).unwrap();
        let swap = Mark::new(0, 2);
        let config = MarkedConfiguration::new(
            vec![(0.25, swap), (0.75, swap), (1.5, swap)],
            0.0,
            10.0,
        )
        .unwrap();

        // Before the first arrival: identity.
        let (x, c) = psi_apply(&phi, 0.1, 0, &config).unwrap();
        assert_eq!(x, 0);
        assert_eq!(&c, &config);

        // A boundary arrival is consumed: t = 0.75 eats two marks.
        let (x, c) = psi_apply(&phi, 0.75, 0, &config).unwrap();
        assert_eq!(x, 0);
        assert_eq!(c.points()[0].1, Mark::new(0, 2));
        assert_eq!(c.points()[1].1, Mark::new(1, 2));
        assert_eq!(c.points()[2].1, swap);

        // All three.
        let (x, c) = psi_apply(&phi, 2.0, 0, &config).unwrap();
        assert_eq!(x, 1);
        assert_eq!(c.points()[2].1, Mark::new(0, 2));
        // Times never change under psi.
        assert_eq!(
            c.points().iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![0.25, 0.75, 1.5]
        );
    }

    #[test]
    fn psi_ignores_past_marks() {
        let phi = Coupling::universal_dense(2).unwrap();
        let swap = Mark::new(0, 2);
        let config =
            MarkedConfiguration::new(vec![(-0.5, swap), (0.5, swap)], f64::NEG_INFINITY, 10.0)
                .unwrap();
        let (x, c) = psi_apply(&phi, 1.0, 0, &config).unwrap();
        assert_eq!(x, 1);
        assert_eq!(c.points()[0].1, swap, "past mark untouched");
    }

    #[test]
    fn psi_requires_covering_window() {
        let phi = Coupling::universal_dense(2).unwrap();
        let config = MarkedConfiguration::empty(0.5, 2.0).unwrap();
        assert!(matches!(
            psi_apply(&phi, 1.0, 0, &config),
            Err(DilationError::WindowTooSmall { .. })
        ));
        let config = MarkedConfiguration::empty(0.0, 2.0).unwrap();
        assert!(matches!(
            psi_apply(&phi, 3.0, 0, &config),
            Err(DilationError::WindowTooSmall { .. })
        ));
        // t = 0 never needs a window.
        let config = MarkedConfiguration::empty(5.0, 7.0).unwrap();
        assert!(psi_apply(&phi, 0.0, 0, &config).is_ok());
    }

    #[test]
    fn psi_matches_threading_of_consumed_marks() {
        let phi = Coupling::universal_dense(3).unwrap();
        let marks = [Mark::new(0, 5), Mark::new(0, 17), Mark::new(0, 22)];
        let config = MarkedConfiguration::new(
            vec![(0.25, marks[0]), (0.5, marks[1]), (0.75, marks[2])],
            0.0,
            1.0,
        )
        .unwrap();
        let (x, _) = psi_apply(&phi, 0.6, 1, &config).unwrap();
        let (direct, _) = phi.thread(1, &marks[..2]).unwrap();
        assert_eq!(x, direct);
    }

    #[test]
    fn psi_inverse_round_trips() {
        let phi = Coupling::universal_dense(2).unwrap();
        let space = *phi.space();
        // Deterministic sweep over all two-mark configurations.
        for a in 0..space.size() {
            for b in 0..space.size() {
                for state in 0..2 {
                    let config = MarkedConfiguration::new(
                        vec![(dy(256), space.mark_at(a)), (dy(768), space.mark_at(b))],
                        dy(-1024),
                        dy(2048),
                    )
                    .unwrap();
                    let (x, c) = psi_apply(&phi, dy(1024), state, &config).unwrap();
                    let (back, original) = psi_inverse(&phi, dy(1024), x, &c).unwrap();
                    assert_eq!(back, state);
                    assert_eq!(original, config);
                }
            }
        }
    }

    #[test]
    fn cocycle_identity_holds_exactly() {
        let phi = Coupling::universal_dense(2).unwrap();
        let space = *phi.space();
        let t = dy(700);
        let s = dy(900);
        let marks = [
            (dy(100), space.mark_at(3)),
            (dy(700), space.mark_at(6)),
            (dy(1000), space.mark_at(1)),
            (dy(1500), space.mark_at(4)),
        ];
        let config =
            MarkedConfiguration::new(marks.to_vec(), f64::NEG_INFINITY, f64::INFINITY).unwrap();
        for state in 0..2 {
            let lhs = psi_apply(&phi, t + s, state, &config).unwrap();

            let (x1, c1) = psi_apply(&phi, t, state, &config).unwrap();
            let c2 = theta_shift(t, &c1);
            let (x2, c3) = psi_apply(&phi, s, x1, &c2).unwrap();
            let rhs = (x2, theta_shift(-t, &c3));

            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn alpha_is_a_group_exactly() {
        let phi = Coupling::universal_dense(2).unwrap();
        let space = *phi.space();
        let config = MarkedConfiguration::new(
            vec![
                (dy(-1200), space.mark_at(2)),
                (dy(300), space.mark_at(6)),
                (dy(800), space.mark_at(5)),
                (dy(1700), space.mark_at(7)),
            ],
            f64::NEG_INFINITY,
            f64::INFINITY,
        )
        .unwrap();

        // alpha_0 is the identity.
        for state in 0..2 {
            let (x, c) = alpha(&phi, 0.0, state, &config).unwrap();
            assert_eq!((x, c), (state, config.clone()));
        }

        // alpha_{-t} inverts alpha_t.
        for &t in &[dy(512), dy(1024), dy(1999)] {
            for state in 0..2 {
                let (x, c) = alpha(&phi, t, state, &config).unwrap();
                let (back, original) = alpha(&phi, -t, x, &c).unwrap();
                assert_eq!((back, original), (state, config.clone()));
            }
        }

        // alpha_s . alpha_t = alpha_{s+t} with mixed signs.
        for &(t, s) in &[
            (dy(512), dy(256)),
            (dy(512), dy(-256)),
            (dy(-512), dy(900)),
            (dy(-300), dy(-600)),
        ] {
            for state in 0..2 {
                let (x1, c1) = alpha(&phi, t, state, &config).unwrap();
                let lhs = alpha(&phi, s, x1, &c1).unwrap();
                let rhs = alpha(&phi, s + t, state, &config).unwrap();
                assert_eq!(lhs, rhs, "t = {t}, s = {s}");
            }
        }
    }

    #[test]
    fn environment_law_validates() {
        assert!(matches!(
            EnvironmentLaw::new(2, 0.0, vec![(Mark::new(0, 0), 1.0)]),
            Err(DilationError::BadRate { .. })
        ));
        assert!(matches!(
            EnvironmentLaw::new(2, 1.0, vec![(Mark::new(0, 0), 0.5)]),
            Err(DilationError::WeightSumNotOne { .. })
        ));
        assert!(matches!(
            EnvironmentLaw::new(2, 1.0, vec![(Mark::new(0, 9), 1.0)]),
            Err(DilationError::BadMark { .. })
        ));
        assert!(matches!(
            EnvironmentLaw::new(2, 1.0, vec![(Mark::new(0, 1), 0.5), (Mark::new(0, 1), 0.5)]),
            Err(DilationError::DuplicateMark { .. })
        ));
        let law = EnvironmentLaw::new(
            2,
            2.0,
            vec![(Mark::new(0, 2), 0.5), (Mark::new(0, 0), 0.5), (Mark::new(1, 1), 0.0)],
        )
        .unwrap();
        // Sorted, zero weight dropped.
        assert_eq!(law.support().len(), 2);
        assert_eq!(law.support()[0].0, Mark::new(0, 0));
        assert_eq!(law.weight_of(Mark::new(0, 2)), 0.5);
        assert_eq!(law.weight_of(Mark::new(1, 1)), 0.0);
    }

    #[test]
    fn universal_dilation_two_state_law() {
        let d = Dilation::build_universal(&two_state_rate()).unwrap();
        assert_eq!(d.law().lambda(), 2.0);
        // P = [[.5,.5],[1,0]] decomposes into labels 0 and 2, weight 1/2
        // each, all on j = 0 marks.
        let support = d.law().support();
        assert_eq!(support.len(), 2);
        assert_eq!(support[0], (Mark::new(0, 0), 0.5));
        assert_eq!(support[1], (Mark::new(0, 2), 0.5));
    }

    #[test]
    fn universal_dilation_recovers_generator() {
        for r in [
            two_state_rate(),
            RateMatrix::new(array![[-3.0, 1.0, 2.0], [0.0, 0.0, 0.0], [1.0, 1.0, -2.0]]).unwrap(),
        ] {
            let d = Dilation::build_universal(&r).unwrap();
            let (_, induced) = d.induced_generator().unwrap();
            assert!(max_abs_diff_r(induced.as_array(), r.as_array()) < 1e-12);
        }
    }

    #[test]
    fn zero_generator_dilates_to_identity_mark() {
        let r = RateMatrix::new(ndarray::Array2::zeros((2, 2))).unwrap();
        let d = Dilation::build_universal(&r).unwrap();
        assert_eq!(d.law().lambda(), 1.0);
        // Identity map on two states has label 1.
        assert_eq!(d.law().support(), &[(Mark::new(0, 1), 1.0)]);
        let (p, induced) = d.induced_generator().unwrap();
        assert_eq!(p.as_array(), &ndarray::Array2::<f64>::eye(2));
        assert_eq!(induced.as_array(), &ndarray::Array2::<f64>::zeros((2, 2)));
    }

    #[test]
    fn induced_generator_works_in_lazy_mode() {
        // n = 5 exceeds the dense guard; only prescribed marks are used.
        let mut mat = ndarray::Array2::<f64>::zeros((5, 5));
        for i in 0..5 {
            let j = (i + 1) % 5;
            mat[[i, j]] = 1.5;
            mat[[i, i]] = -1.5;
        }
        let r = RateMatrix::new(mat).unwrap();
        let d = Dilation::build_universal(&r).unwrap();
        assert!(!d.coupling().is_dense());
        let (_, induced) = d.induced_generator().unwrap();
        assert!(max_abs_diff_r(induced.as_array(), r.as_array()) < 1e-12);
        assert!(matches!(
            Dilation::build_universal_dense(&r),
            Err(DilationError::TooLargeForDense { .. })
        ));
    }

    #[test]
    fn dilations_of_same_size_share_coupling_and_space() {
        let r1 = two_state_rate();
        let r2 = RateMatrix::new(array![[-0.25, 0.25], [3.0, -3.0]]).unwrap();
        let d1 = Dilation::build_universal(&r1).unwrap();
        let d2 = Dilation::build_universal(&r2).unwrap();
        assert_eq!(d1.coupling(), d2.coupling());
        assert_eq!(d1.space(), d2.space());
        assert_ne!(d1.law(), d2.law());
    }
}
