//! Finite-state Markov generators and their jump-chain structure.
//!
//! A rate matrix R (off-diagonal >= 0, rows summing to 0) generates the
//! semigroup exp(Rt). Uniformization writes R = lambda (P - I) with P row
//! stochastic and lambda >= max_i(-R_ii), turning the continuous dynamics
//! into a discrete chain subordinated to a Poisson clock.
//!
//! Every row-stochastic P on n states is in turn a finite mixture of
//! deterministic maps beta: {0..n-1} -> {0..n-1},
//!
//! ```text
//! P = sum_ell p_ell D_ell,      p_ell = prod_i P[i, beta_ell(i)],
//! ```
//!
//! where D_ell is the 0/1 matrix of beta_ell. Only maps whose rows all lie
//! in the support of P contribute, so the sum is built from the Cartesian
//! product of per-row supports. An entry is "in support" iff it is > 0
//! exactly as stored; inputs are never rounded, so no atom is silently
//! created or destroyed.
//!
//! States are 0-based here and everywhere else in the crate.

use ndarray::Array2;
use thiserror::Error;

use crate::linalg::{self, CVec, RMat};
use crate::tol;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("matrix must be square and non-empty, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },
    #[error("entry ({i},{j}) = {value} is not finite")]
    NonFinite { i: usize, j: usize, value: f64 },
    #[error("entry ({i},{j}) = {value} is negative")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("row {i} sums to {sum}, expected 1 within {tol}")]
    RowSumNotOne { i: usize, sum: f64, tol: f64 },
    #[error("row {i} sums to {sum}, expected 0 within {tol}")]
    RowSumNotZero { i: usize, sum: f64, tol: f64 },
    #[error("time {t} is negative")]
    NegativeTime { t: f64 },
    #[error("uniformization rate {lambda} is below the required {required}")]
    LambdaTooSmall { lambda: f64, required: f64 },
    #[error("Poisson tail mass {tail:.3e} beyond order {m_max} exceeds {bound:.1e}")]
    TailMassTooLarge { tail: f64, m_max: usize, bound: f64 },
    #[error("state space of size {n} exceeds the enumeration guard {max}")]
    TooLarge { n: usize, max: usize },
    #[error("support product would create {atoms} atoms, above the guard {max}")]
    SupportTooLarge { atoms: u128, max: u128 },
    #[error("map image entry {value} is out of range for {n} states")]
    ImageOutOfRange { value: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("decomposition has no atoms")]
    EmptyDecomposition,
    #[error("atom weights sum to {sum}, expected 1 within {tol}")]
    WeightSumNotOne { sum: f64, tol: f64 },
}

fn check_square_finite(mat: &RMat) -> Result<usize, MarkovError> {
    let (rows, cols) = mat.dim();
    if rows == 0 || rows != cols {
        return Err(MarkovError::BadShape { rows, cols });
    }
    for ((i, j), &v) in mat.indexed_iter() {
        if !v.is_finite() {
            return Err(MarkovError::NonFinite { i, j, value: v });
        }
    }
    Ok(rows)
}

/// Conservative rate matrix: off-diagonal entries >= 0 exactly, every row
/// summing to 0 within [`tol::ROW_SUM_ABS`].
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    mat: RMat,
}

impl RateMatrix {
    pub fn new(mat: RMat) -> Result<Self, MarkovError> {
        let n = check_square_finite(&mat)?;
        for i in 0..n {
            for j in 0..n {
                if i != j && mat[[i, j]] < 0.0 {
                    return Err(MarkovError::NegativeEntry { i, j, value: mat[[i, j]] });
                }
            }
            let sum: f64 = mat.row(i).sum();
            if sum.abs() > tol::ROW_SUM_ABS {
                return Err(MarkovError::RowSumNotZero { i, sum, tol: tol::ROW_SUM_ABS });
            }
        }
        Ok(Self { mat })
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_array(&self) -> &RMat {
        &self.mat
    }

    /// Smallest admissible uniformization rate, max_i(-R_ii), floored at 0.
    pub fn min_uniformization_rate(&self) -> f64 {
        (0..self.n()).map(|i| -self.mat[[i, i]]).fold(0.0, f64::max)
    }
}

/// Row-stochastic matrix: entries >= 0 exactly, rows summing to 1 within
/// [`tol::ROW_SUM_ABS`].
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    mat: RMat,
}

impl StochasticMatrix {
    pub fn new(mat: RMat) -> Result<Self, MarkovError> {
        Self::validated(mat, 0.0, tol::ROW_SUM_ABS)
    }

    /// Accepts output of numerical routines: entries in
    /// (-[`tol::NUMERICAL_ENTRY_CLAMP`], 0) are rounding noise and are
    /// clamped to exactly 0, and rows may deviate from 1 by up to
    /// [`tol::NUMERICAL_ROW_SUM`].
    pub fn from_computed(mat: RMat) -> Result<Self, MarkovError> {
        Self::validated(mat, tol::NUMERICAL_ENTRY_CLAMP, tol::NUMERICAL_ROW_SUM)
    }

    fn validated(mut mat: RMat, entry_slack: f64, row_tol: f64) -> Result<Self, MarkovError> {
        let n = check_square_finite(&mat)?;
        for i in 0..n {
            for j in 0..n {
                let v = mat[[i, j]];
                if v < 0.0 {
                    if v > -entry_slack {
                        mat[[i, j]] = 0.0;
                    } else {
                        return Err(MarkovError::NegativeEntry { i, j, value: v });
                    }
                }
            }
            let sum: f64 = mat.row(i).sum();
            if (sum - 1.0).abs() > row_tol {
                return Err(MarkovError::RowSumNotOne { i, sum, tol: row_tol });
            }
        }
        Ok(Self { mat })
    }

    pub fn identity(n: usize) -> Self {
        Self { mat: Array2::eye(n) }
    }

    pub fn n(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_array(&self) -> &RMat {
        &self.mat
    }

    /// Column indices j with P[i, j] > 0 exactly as stored.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.mat[[i, j]] > 0.0).collect()
    }
}

/// Uniformize R as lambda (P - I) with the canonical rate
/// lambda = max_i(-R_ii). A zero generator has no jumps to normalize;
/// it uniformizes as (1, I) by convention.
pub fn uniformize(r: &RateMatrix) -> (f64, StochasticMatrix) {
    let lambda = r.min_uniformization_rate();
    if lambda <= 0.0 {
        return (1.0, StochasticMatrix::identity(r.n()));
    }
    (lambda, jump_matrix(r, lambda))
}

/// Uniformize with a caller-chosen rate, which must be positive and at
/// least max_i(-R_ii).
pub fn uniformize_with(r: &RateMatrix, lambda: f64) -> Result<(f64, StochasticMatrix), MarkovError> {
    let required = r.min_uniformization_rate();
    if lambda.is_nan() || lambda <= 0.0 || lambda < required {
        return Err(MarkovError::LambdaTooSmall { lambda, required: required.max(f64::MIN_POSITIVE) });
    }
    Ok((lambda, jump_matrix(r, lambda)))
}

fn jump_matrix(r: &RateMatrix, lambda: f64) -> StochasticMatrix {
    let n = r.n();
    let mut p = r.as_array().mapv(|x| x / lambda);
    for i in 0..n {
        p[[i, i]] += 1.0;
    }
    StochasticMatrix::from_computed(p).expect("uniformization of a valid rate matrix is stochastic")
}

/// exp(Rt) as a stochastic matrix.
pub fn expm_rate(r: &RateMatrix, t: f64) -> Result<StochasticMatrix, MarkovError> {
    if !t.is_finite() || t < 0.0 {
        return Err(MarkovError::NegativeTime { t });
    }
    let scaled = r.as_array().mapv(|x| x * t);
    StochasticMatrix::from_computed(linalg::expm_real(&scaled))
}

/// Truncated uniformized series sum_{m<=m_max} e^{-lt} (lt)^m / m! P^m.
///
/// An independent route to exp(Rt) when R = lambda (P - I): errors out
/// unless the neglected Poisson tail is below [`tol::SERIES_TAIL`].
pub fn uniformized_series(
    lambda: f64,
    p: &StochasticMatrix,
    t: f64,
    m_max: usize,
) -> Result<RMat, MarkovError> {
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(MarkovError::LambdaTooSmall { lambda, required: f64::MIN_POSITIVE });
    }
    if !t.is_finite() || t < 0.0 {
        return Err(MarkovError::NegativeTime { t });
    }
    let rate = lambda * t;
    let mut pmf = (-rate).exp();
    let mut cdf = pmf;
    for m in 1..=m_max {
        pmf *= rate / m as f64;
        cdf += pmf;
    }
    let tail = 1.0 - cdf;
    if tail > tol::SERIES_TAIL {
        return Err(MarkovError::TailMassTooLarge { tail, m_max, bound: tol::SERIES_TAIL });
    }

    let n = p.n();
    let mut pmf = (-rate).exp();
    let mut power = Array2::<f64>::eye(n);
    let mut sum = power.mapv(|x| x * pmf);
    for m in 1..=m_max {
        pmf *= rate / m as f64;
        power = power.dot(p.as_array());
        sum += &power.mapv(|x| x * pmf);
    }
    Ok(sum)
}

/// A map beta: {0..n-1} -> {0..n-1} stored as its image table.
///
/// Maps are labeled by the base-n integer whose big-endian digits are the
/// image entries, so labels run over 0..n^n-1 and round-trip with tables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeterministicMap {
    image: Vec<usize>,
}

impl DeterministicMap {
    pub fn new(image: Vec<usize>) -> Result<Self, MarkovError> {
        let n = image.len();
        if n == 0 {
            return Err(MarkovError::BadShape { rows: 0, cols: 0 });
        }
        for &v in &image {
            if v >= n {
                return Err(MarkovError::ImageOutOfRange { value: v, n });
            }
        }
        Ok(Self { image })
    }

    pub fn from_index(n: usize, index: u64) -> Result<Self, MarkovError> {
        if n == 0 {
            return Err(MarkovError::BadShape { rows: 0, cols: 0 });
        }
        let total = (n as u64).pow(n as u32);
        if index >= total {
            return Err(MarkovError::ImageOutOfRange { value: index as usize, n });
        }
        let mut image = vec![0usize; n];
        let mut rest = index;
        for slot in image.iter_mut().rev() {
            *slot = (rest % n as u64) as usize;
            rest /= n as u64;
        }
        Ok(Self { image })
    }

    pub fn n(&self) -> usize {
        self.image.len()
    }

    pub fn image(&self) -> &[usize] {
        &self.image
    }

    pub fn apply(&self, i: usize) -> usize {
        self.image[i]
    }

    pub fn index(&self) -> u64 {
        let n = self.image.len() as u64;
        self.image.iter().fold(0u64, |acc, &v| acc * n + v as u64)
    }

    /// beta(i) for the map labeled `index` on `n` states, without
    /// materializing the table: digit i of the base-n label, big-endian.
    pub fn digit(n: usize, index: u64, i: usize) -> usize {
        let shift = (n - 1 - i) as u32;
        ((index / (n as u64).pow(shift)) % n as u64) as usize
    }

    /// The 0/1 matrix D with D[i, beta(i)] = 1.
    pub fn as_matrix(&self) -> RMat {
        let n = self.image.len();
        let mut d = Array2::<f64>::zeros((n, n));
        for (i, &j) in self.image.iter().enumerate() {
            d[[i, j]] = 1.0;
        }
        d
    }
}

/// Enumeration guard: n^n map tables are materialized one at a time, but
/// beyond 8 states even iterating them is unreasonable.
pub const MAX_ENUMERATION_STATES: usize = 8;

/// All n^n deterministic maps on n states in ascending label order.
pub fn enumerate_maps(n: usize) -> Result<impl Iterator<Item = DeterministicMap>, MarkovError> {
    if n == 0 {
        return Err(MarkovError::BadShape { rows: 0, cols: 0 });
    }
    if n > MAX_ENUMERATION_STATES {
        return Err(MarkovError::TooLarge { n, max: MAX_ENUMERATION_STATES });
    }
    let total = (n as u64).pow(n as u32);
    Ok((0..total).map(move |idx| {
        DeterministicMap::from_index(n, idx).expect("index below n^n decodes")
    }))
}

/// One deterministic map with its mixture weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub map: DeterministicMap,
    pub weight: f64,
}

/// Mixture of deterministic maps representing a stochastic matrix.
/// Atoms are sorted by ascending map label; weights are nonnegative and
/// sum to 1 within [`tol::ROW_SUM_ABS`].
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    n: usize,
    atoms: Vec<Atom>,
}

impl Decomposition {
    pub fn new(n: usize, mut atoms: Vec<Atom>) -> Result<Self, MarkovError> {
        if atoms.is_empty() {
            return Err(MarkovError::EmptyDecomposition);
        }
        let mut sum = 0.0;
        for atom in &atoms {
            if atom.map.n() != n {
                return Err(MarkovError::DimensionMismatch { expected: n, got: atom.map.n() });
            }
            if atom.weight.is_nan() || atom.weight < 0.0 {
                return Err(MarkovError::NegativeEntry { i: 0, j: 0, value: atom.weight });
            }
            sum += atom.weight;
        }
        if (sum - 1.0).abs() > tol::ROW_SUM_ABS {
            return Err(MarkovError::WeightSumNotOne { sum, tol: tol::ROW_SUM_ABS });
        }
        atoms.sort_by_key(|a| a.map.index());
        Ok(Self { n, atoms })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }
}

/// Guard against support products that would not fit in memory.
pub const MAX_DECOMPOSITION_ATOMS: u128 = 1_000_000;

/// Decompose P into deterministic maps with product weights.
///
/// Runs over the Cartesian product of per-row supports, in ascending map
/// label order; each map beta in the product carries weight
/// prod_i P[i, beta(i)] > 0, and these weights sum to 1.
pub fn decompose(p: &StochasticMatrix) -> Result<Decomposition, MarkovError> {
    let n = p.n();
    let supports: Vec<Vec<usize>> = (0..n).map(|i| p.row_support(i)).collect();

    let count = supports.iter().map(|s| s.len() as u128).product::<u128>();
    if count > MAX_DECOMPOSITION_ATOMS {
        return Err(MarkovError::SupportTooLarge { atoms: count, max: MAX_DECOMPOSITION_ATOMS });
    }

    let mut atoms = Vec::with_capacity(count as usize);
    // Odometer over per-row support positions; supports are ascending, so
    // images are produced in ascending label order already.
    let mut pos = vec![0usize; n];
    loop {
        let image: Vec<usize> = (0..n).map(|i| supports[i][pos[i]]).collect();
        let weight: f64 = image.iter().enumerate().map(|(i, &j)| p.as_array()[[i, j]]).product();
        atoms.push(Atom { map: DeterministicMap { image }, weight });

        let mut row = n;
        while row > 0 {
            row -= 1;
            pos[row] += 1;
            if pos[row] < supports[row].len() {
                break;
            }
            pos[row] = 0;
            if row == 0 {
                return Decomposition::new(n, atoms);
            }
        }
    }
}

/// Rebuild sum_ell p_ell D_ell as a stochastic matrix.
pub fn recompose(d: &Decomposition) -> Result<StochasticMatrix, MarkovError> {
    let n = d.n();
    let mut mat = Array2::<f64>::zeros((n, n));
    for atom in d.atoms() {
        for (i, &j) in atom.map.image().iter().enumerate() {
            mat[[i, j]] += atom.weight;
        }
    }
    StochasticMatrix::from_computed(mat)
}

/// Compose f with beta: (f . beta)(i) = f(beta(i)), the action of the
/// map's matrix on f.
pub fn apply_map_to_function(map: &DeterministicMap, f: &CVec) -> Result<CVec, MarkovError> {
    if f.len() != map.n() {
        return Err(MarkovError::DimensionMismatch { expected: map.n(), got: f.len() });
    }
    Ok(CVec::from_iter(map.image().iter().map(|&j| f[j])))
}
