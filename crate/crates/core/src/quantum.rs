//! Quantum image of the classical machinery.
//!
//! Functions f on states embed as multiplication operators m_f (diagonal
//! matrices); the coupling phi embeds as the permutation unitary
//!
//! ```text
//! S = sum_{i,g} |phi(i, g)><i, g|
//! ```
//!
//! on the system tensor mark space, with basis |i, g> ordered
//! lexicographically. Environment weights enter through the amplitude
//! vector nu_g = sqrt(lambda q_g), giving Kraus operators
//! R_g = sum_{g'} S_{g g'} nu_{g'} built from the n x n blocks of S.
//!
//! Three independent constructions of the same Lindblad generator live
//! here: from a Kraus family (dissipator with anticommutator), from the
//! blocks of S with the weights spelled out (triple sum over marks), and
//! directly from a deterministic-map mixture. Superoperators act in the
//! Heisenberg picture and are stored as d^2 x d^2 matrices over the
//! column-stacking convention vec(A)[i + j d] = A[i, j].

use num_complex::Complex64;
use thiserror::Error;

use crate::dilation::{Coupling, DilationError, EnvironmentLaw, MarkedConfiguration};
use crate::linalg::{self, dagger, eye_c, expm, vec_col, unvec_col, CMat, CVec};
use crate::markov::{Decomposition, MarkovError, RateMatrix};
use crate::tol;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Hamiltonian is not self-adjoint: residual {residual:.3e}")]
    NotSelfAdjoint { residual: f64 },
    #[error("operation needs a dense coupling table")]
    NeedsDenseCoupling,
    #[error("time {t} must be finite and nonnegative")]
    BadTime { t: f64 },
    #[error(transparent)]
    Dilation(#[from] DilationError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// Multiplication operator m_f = diag(f).
pub fn mult_operator(f: &CVec) -> CMat {
    let n = f.len();
    let mut m = CMat::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = f[i];
    }
    m
}

/// The permutation unitary of a coupling on the system tensor mark space,
/// dimension n * |G|, with |i, g> at flat index i * |G| + index(g).
pub fn permutation_unitary(coupling: &Coupling) -> Result<CMat, QuantumError> {
    if !coupling.is_dense() {
        return Err(QuantumError::NeedsDenseCoupling);
    }
    let space = coupling.space();
    let gsize = space.size();
    let dim = coupling.n() * gsize;
    let mut s = CMat::zeros((dim, dim));
    for state in 0..coupling.n() {
        for g in 0..gsize {
            let mark = space.mark_at(g);
            let (to_state, to_mark) = coupling.apply(state, mark)?;
            let row = to_state * gsize + space.index(to_mark);
            let col = state * gsize + g;
            s[[row, col]] = ONE;
        }
    }
    Ok(s)
}

/// True iff every entry is exactly 0 or 1 with exactly one 1 per row and
/// per column.
pub fn is_permutation_matrix(s: &CMat) -> bool {
    let (rows, cols) = s.dim();
    if rows != cols {
        return false;
    }
    let mut row_ones = vec![0usize; rows];
    let mut col_ones = vec![0usize; cols];
    for ((i, j), &z) in s.indexed_iter() {
        if z == ONE {
            row_ones[i] += 1;
            col_ones[j] += 1;
        } else if z != ZERO {
            return false;
        }
    }
    row_ones.iter().all(|&c| c == 1) && col_ones.iter().all(|&c| c == 1)
}

/// The n x n block S_{g g'} of the permutation unitary:
/// (S_{g g'})[i, j] = <i, g| S |j, g'>.
pub fn unitary_block(s: &CMat, n: usize, gsize: usize, g: usize, gp: usize) -> CMat {
    let mut block = CMat::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            block[[i, j]] = s[[i * gsize + g, j * gsize + gp]];
        }
    }
    block
}

/// Noise amplitudes nu_g = sqrt(lambda q_g), indexed by mark.
pub fn noise_amplitudes(law: &EnvironmentLaw) -> CVec {
    let space = law.space();
    let mut nu = CVec::zeros(space.size());
    for &(mark, q) in law.support() {
        nu[space.index(mark)] = Complex64::new((law.lambda() * q).sqrt(), 0.0);
    }
    nu
}

/// Kraus family R_g = sum_{g'} S_{g g'} nu_{g'}, one n x n operator per
/// mark g.
pub fn kraus_from_unitary(s: &CMat, n: usize, nu: &CVec) -> Result<Vec<CMat>, QuantumError> {
    let gsize = nu.len();
    if s.dim() != (n * gsize, n * gsize) {
        return Err(QuantumError::DimensionMismatch { expected: n * gsize, got: s.nrows() });
    }
    let mut family = Vec::with_capacity(gsize);
    for g in 0..gsize {
        let mut r = CMat::zeros((n, n));
        for (gp, &amp) in nu.iter().enumerate() {
            if amp == ZERO {
                continue;
            }
            for i in 0..n {
                for j in 0..n {
                    r[[i, j]] += s[[i * gsize + g, j * gsize + gp]] * amp;
                }
            }
        }
        family.push(r);
    }
    Ok(family)
}

/// A linear map on d x d operators, stored as its d^2 x d^2 matrix over
/// column-stacked operators: vec(L(a)) = mat . vec(a).
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    mat: CMat,
}

impl Superoperator {
    /// Build from the action on matrix units.
    pub fn from_action(dim: usize, action: impl Fn(&CMat) -> CMat) -> Self {
        let mut mat = CMat::zeros((dim * dim, dim * dim));
        let mut unit = CMat::zeros((dim, dim));
        for j in 0..dim {
            for i in 0..dim {
                unit[[i, j]] = ONE;
                let image = action(&unit);
                unit[[i, j]] = ZERO;
                let col = vec_col(&image);
                let target = i + j * dim;
                for (row, &z) in col.iter().enumerate() {
                    mat[[row, target]] = z;
                }
            }
        }
        Self { dim, mat }
    }

    pub fn from_matrix(dim: usize, mat: CMat) -> Result<Self, QuantumError> {
        if mat.dim() != (dim * dim, dim * dim) {
            return Err(QuantumError::DimensionMismatch { expected: dim * dim, got: mat.nrows() });
        }
        Ok(Self { dim, mat })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn apply(&self, a: &CMat) -> Result<CMat, QuantumError> {
        if a.dim() != (self.dim, self.dim) {
            return Err(QuantumError::DimensionMismatch { expected: self.dim, got: a.nrows() });
        }
        Ok(unvec_col(&self.mat.dot(&vec_col(a)), self.dim))
    }

    /// exp(L t) as a superoperator.
    pub fn exp(&self, t: f64) -> Result<Superoperator, QuantumError> {
        if !t.is_finite() || t < 0.0 {
            return Err(QuantumError::BadTime { t });
        }
        Ok(Self { dim: self.dim, mat: expm(&self.mat.mapv(|z| z * t)) })
    }

    /// Choi matrix sum_{ij} E_ij tensor L(E_ij); positive semidefinite iff
    /// the map is completely positive. Column i + j d of the stored matrix
    /// is already vec(L(E_ij)).
    pub fn choi(&self) -> CMat {
        let d = self.dim;
        let mut c = CMat::zeros((d * d, d * d));
        for j in 0..d {
            for i in 0..d {
                let image = unvec_col(&self.mat.column(i + j * d).to_owned(), d);
                for k in 0..d {
                    for l in 0..d {
                        c[[i * d + k, j * d + l]] = image[[k, l]];
                    }
                }
            }
        }
        c
    }

    /// Smallest Choi eigenvalue; complete positivity within numerical
    /// noise means this is >= -[`tol::PSD_EIG_FLOOR`].
    pub fn min_choi_eigenvalue(&self) -> f64 {
        let eig = linalg::hermitian_eigenvalues(&self.choi());
        eig.first().copied().unwrap_or(0.0)
    }

    /// Max-norm residual of L(I) (0 for a Heisenberg Lindblad generator)
    /// or of exp(Lt)(I) - I (unitality of the semigroup).
    pub fn identity_defect(&self, expect_identity: bool) -> f64 {
        let id = eye_c(self.dim);
        let image = self.apply(&id).expect("identity has the right dimension");
        if expect_identity {
            linalg::max_abs_diff_c(&image, &id)
        } else {
            linalg::max_abs_c(&image)
        }
    }
}

fn anticommutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) + b.dot(a)
}

/// Heisenberg Lindblad generator from a Hamiltonian and a Kraus family:
///
/// ```text
/// L(a) = i [H, a] + sum_g (R_g* a R_g - (1/2){R_g* R_g, a})
/// ```
pub fn lindblad_from_kraus(h: &CMat, kraus: &[CMat]) -> Result<Superoperator, QuantumError> {
    let d = h.nrows();
    if h.ncols() != d {
        return Err(QuantumError::DimensionMismatch { expected: d, got: h.ncols() });
    }
    let sa_residual = linalg::max_abs_diff_c(h, &dagger(h));
    if sa_residual > tol::EXACT_ALGEBRA {
        return Err(QuantumError::NotSelfAdjoint { residual: sa_residual });
    }
    for r in kraus {
        if r.dim() != (d, d) {
            return Err(QuantumError::DimensionMismatch { expected: d, got: r.nrows() });
        }
    }
    let daggered: Vec<CMat> = kraus.iter().map(dagger).collect();
    let mut gram = CMat::zeros((d, d));
    for (r, rd) in kraus.iter().zip(&daggered) {
        gram += &rd.dot(r);
    }
    let i_unit = Complex64::new(0.0, 1.0);
    Ok(Superoperator::from_action(d, |a| {
        let mut out = (h.dot(a) - a.dot(h)).mapv(|z| z * i_unit);
        for (r, rd) in kraus.iter().zip(&daggered) {
            out += &rd.dot(a).dot(r);
        }
        out -= &anticommutator(&gram, a).mapv(|z| z * Complex64::new(0.5, 0.0));
        out
    }))
}

/// The same generator spelled out through the blocks of the permutation
/// unitary and the environment weights:
///
/// ```text
/// L(a) = lambda ( sum_{g, g', g''} sqrt(q_{g'} q_{g''}) S*_{g g'} a S_{g g''} - a )
/// ```
///
/// computed literally as the triple sum, as an independent route to
/// [`lindblad_from_kraus`] with nu = sqrt(lambda q).
pub fn lindblad_from_unitary_weights(
    s: &CMat,
    law: &EnvironmentLaw,
) -> Result<Superoperator, QuantumError> {
    let n = law.n();
    let space = law.space();
    let gsize = space.size();
    if s.dim() != (n * gsize, n * gsize) {
        return Err(QuantumError::DimensionMismatch { expected: n * gsize, got: s.nrows() });
    }
    let lambda = Complex64::new(law.lambda(), 0.0);
    // Cache the blocks S_{g g'} for g' in the support of q.
    let support: Vec<(usize, f64)> =
        law.support().iter().map(|&(mark, q)| (space.index(mark), q)).collect();
    let blocks: Vec<Vec<CMat>> = (0..gsize)
        .map(|g| support.iter().map(|&(gp, _)| unitary_block(s, n, gsize, g, gp)).collect())
        .collect();
    Ok(Superoperator::from_action(n, |a| {
        let mut sum = CMat::zeros((n, n));
        for g_blocks in &blocks {
            for (kp, &(_, qp)) in support.iter().enumerate() {
                for (kpp, &(_, qpp)) in support.iter().enumerate() {
                    let w = Complex64::new((qp * qpp).sqrt(), 0.0);
                    sum += &dagger(&g_blocks[kp]).dot(a).dot(&g_blocks[kpp]).mapv(|z| z * w);
                }
            }
        }
        (sum - a).mapv(|z| z * lambda)
    }))
}

/// The generator written directly from a deterministic-map mixture:
///
/// ```text
/// L(a) = lambda ( sum_{ell, i} p_ell <beta_ell(i)| a |beta_ell(i)> |i><i| - a )
/// ```
pub fn lindblad_from_atoms(d: &Decomposition, lambda: f64) -> Superoperator {
    let n = d.n();
    let lam = Complex64::new(lambda, 0.0);
    Superoperator::from_action(n, |a| {
        let mut out = a.mapv(|z| -z * lam);
        for atom in d.atoms() {
            let w = Complex64::new(atom.weight * lambda, 0.0);
            for (i, &b) in atom.map.image().iter().enumerate() {
                out[[i, i]] += w * a[[b, b]];
            }
        }
        out
    })
}

/// Largest residual of L(m_{e_k}) = m_{R e_k} over the canonical basis
/// functions: the generator-level statement that L extends R.
pub fn generator_residual(l: &Superoperator, r: &RateMatrix) -> Result<f64, QuantumError> {
    let n = r.n();
    if l.dim() != n {
        return Err(QuantumError::DimensionMismatch { expected: n, got: l.dim() });
    }
    let mut worst = 0.0f64;
    for k in 0..n {
        let mut e = CVec::zeros(n);
        e[k] = ONE;
        let lhs = l.apply(&mult_operator(&e))?;
        // (R e_k)(i) = R[i, k].
        let rf = CVec::from_iter((0..n).map(|i| Complex64::new(r.as_array()[[i, k]], 0.0)));
        let rhs = mult_operator(&rf);
        worst = worst.max(linalg::max_abs_diff_c(&lhs, &rhs));
    }
    Ok(worst)
}

/// Residuals of the semigroup extension exp(Lt) m_f = m_{exp(Rt) f} over
/// a time grid and all canonical basis functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtensionReport {
    /// max over t, k of || exp(Lt)(m_{e_k}) - m_{exp(Rt) e_k} ||_max.
    pub max_residual: f64,
    /// max off-diagonal magnitude of exp(Lt)(m_{e_k}): the semigroup must
    /// keep multiplication operators diagonal.
    pub max_off_diagonal: f64,
}

/// Check that exp(Lt) restricted to multiplication operators is the
/// classical semigroup exp(Rt), over the given times.
pub fn check_extension(
    l: &Superoperator,
    r: &RateMatrix,
    times: &[f64],
) -> Result<ExtensionReport, QuantumError> {
    let n = r.n();
    if l.dim() != n {
        return Err(QuantumError::DimensionMismatch { expected: n, got: l.dim() });
    }
    let mut report = ExtensionReport { max_residual: 0.0, max_off_diagonal: 0.0 };
    for &t in times {
        let semigroup = l.exp(t)?;
        let classical = crate::markov::expm_rate(r, t)?;
        for k in 0..n {
            let mut e = CVec::zeros(n);
            e[k] = ONE;
            let evolved = semigroup.apply(&mult_operator(&e))?;
            let pf = CVec::from_iter(
                (0..n).map(|i| Complex64::new(classical.as_array()[[i, k]], 0.0)),
            );
            let expected = mult_operator(&pf);
            report.max_residual =
                report.max_residual.max(linalg::max_abs_diff_c(&evolved, &expected));
            for ((i, j), &z) in evolved.indexed_iter() {
                if i != j {
                    report.max_off_diagonal = report.max_off_diagonal.max(z.norm());
                }
            }
        }
    }
    Ok(report)
}

/// Largest deviation in the block identity
///
/// ```text
/// sum_{g''} S*_{g'' g} m_f S_{g'' g'} = delta_{g g'} sum_i f(phi^E(i, g)) |i><i|
/// ```
///
/// over all block pairs (g, g'). The left side is evaluated as one big
/// matrix product S^* (m_f tensor 1) S; the right side entrywise from the
/// coupling's system component.
pub fn flow_coefficient_residual(
    s: &CMat,
    coupling: &Coupling,
    f: &CVec,
) -> Result<f64, QuantumError> {
    let n = coupling.n();
    let space = coupling.space();
    let gsize = space.size();
    if f.len() != n {
        return Err(QuantumError::DimensionMismatch { expected: n, got: f.len() });
    }
    if s.dim() != (n * gsize, n * gsize) {
        return Err(QuantumError::DimensionMismatch { expected: n * gsize, got: s.nrows() });
    }
    // (m_f tensor 1) S scales row (i, g) by f(i).
    let mut scaled = s.clone();
    for i in 0..n {
        let fi = f[i];
        for g in 0..gsize {
            for col in 0..n * gsize {
                scaled[[i * gsize + g, col]] *= fi;
            }
        }
    }
    let lhs = dagger(s).dot(&scaled);

    let mut rhs = CMat::zeros((n * gsize, n * gsize));
    for g in 0..gsize {
        let mark = space.mark_at(g);
        for i in 0..n {
            let moved = coupling.system_part(i, mark)?;
            rhs[[i * gsize + g, i * gsize + g]] = f[moved];
        }
    }
    Ok(linalg::max_abs_diff_c(&lhs, &rhs))
}

/// Radon-Nikodym density of the law's marks against the uniform mark law,
/// evaluated on the future (t > 0) points of a configuration:
/// prod_k |G| q_{mark_k}.
pub fn rn_density(config: &MarkedConfiguration, law: &EnvironmentLaw) -> f64 {
    let gsize = law.space().size() as f64;
    config
        .points()
        .iter()
        .filter(|&&(t, _)| t > 0.0)
        .map(|&(_, mark)| gsize * law.weight_of(mark))
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilation::{Dilation, Mark};
    use crate::markov::{decompose, uniformize, StochasticMatrix};
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_state_rate() -> RateMatrix {
        RateMatrix::new(array![[-1.0, 1.0], [2.0, -2.0]]).unwrap()
    }

    fn cvec(values: &[(f64, f64)]) -> CVec {
        CVec::from_iter(values.iter().map(|&(re, im)| c(re, im)))
    }

    #[test]
    fn mult_operator_is_diagonal_star_homomorphism() {
        let f = cvec(&[(1.0, 2.0), (-0.5, 0.0), (0.0, 1.0)]);
        let g = cvec(&[(2.0, 0.0), (1.0, 1.0), (3.0, -2.0)]);
        let mf = mult_operator(&f);
        let mg = mult_operator(&g);
        // m_f m_g = m_{fg} and m_f* = m_{conj f}.
        let fg = CVec::from_iter(f.iter().zip(g.iter()).map(|(a, b)| a * b));
        assert_eq!(mf.dot(&mg), mult_operator(&fg));
        let conj = CVec::from_iter(f.iter().map(|z| z.conj()));
        assert_eq!(dagger(&mf), mult_operator(&conj));
        // Spectrum (diagonal) is exactly the range of f.
        for i in 0..3 {
            assert_eq!(mf[[i, i]], f[i]);
        }
    }

    #[test]
    fn constant_one_gives_identity() {
        let one = cvec(&[(1.0, 0.0), (1.0, 0.0)]);
        assert_eq!(mult_operator(&one), eye_c(2));
    }

    #[test]
    fn permutation_unitary_is_a_permutation() {
        let phi = Coupling::universal_dense(2).unwrap();
        let s = permutation_unitary(&phi).unwrap();
        assert_eq!(s.dim(), (16, 16));
        assert!(is_permutation_matrix(&s));
        // Unitarity is exact for a permutation.
        assert_eq!(linalg::max_abs_diff_c(&dagger(&s).dot(&s), &eye_c(16)), 0.0);
        assert_eq!(linalg::max_abs_diff_c(&s.dot(&dagger(&s)), &eye_c(16)), 0.0);
    }

    #[test]
    fn permutation_unitary_requires_dense_coupling() {
        let lazy = Coupling::universal_lazy(5);
        assert!(matches!(
            permutation_unitary(&lazy),
            Err(QuantumError::NeedsDenseCoupling)
        ));
    }

    #[test]
    fn blocks_on_prescribed_marks_are_map_matrices() {
        // S_{(i, ell), (0, ell')} = delta_{ell ell'} |beta_ell(i)><i|.
        let phi = Coupling::universal_dense(2).unwrap();
        let space = *phi.space();
        let s = permutation_unitary(&phi).unwrap();
        for ell in 0..4u64 {
            for i in 0..2usize {
                for ellp in 0..4u64 {
                    let g = space.index(Mark::new(i, ell));
                    let gp = space.index(Mark::new(0, ellp));
                    let block = unitary_block(&s, 2, space.size(), g, gp);
                    let mut want = CMat::zeros((2, 2));
                    if ell == ellp {
                        let beta_i = crate::markov::DeterministicMap::digit(2, ell, i);
                        want[[beta_i, i]] = ONE;
                    }
                    assert_eq!(block, want, "ell={ell} i={i} ellp={ellp}");
                }
            }
        }
    }

    #[test]
    fn identity_coupling_gives_identity_unitary() {
        // A forward table that fixes every point.
        let n = 2;
        let total = n * 8;
        let phi =
            Coupling::from_forward_table(n, (0..total).collect(), vec![false; total]).unwrap();
        let s = permutation_unitary(&phi).unwrap();
        assert_eq!(s, eye_c(total));
    }

    #[test]
    fn amplitudes_square_to_rate_times_weight() {
        let d = Dilation::build_universal(&two_state_rate()).unwrap();
        let nu = noise_amplitudes(d.law());
        assert_eq!(nu.len(), 8);
        let norm2: f64 = nu.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm2 - d.law().lambda()).abs() < 1e-14);
        // Only j = 0 marks carry amplitude.
        let space = d.space();
        for g in 0..space.size() {
            let mark = space.mark_at(g);
            if mark.j != 0 {
                assert_eq!(nu[g], ZERO);
            }
        }
    }

    #[test]
    fn kraus_family_matches_jump_form_and_completeness() {
        // R_{(i, ell)} = sqrt(p_ell lambda) |beta_ell(i)><i| for the
        // universal coupling, and sum_g R_g* R_g = lambda I.
        let d = Dilation::build_universal(&two_state_rate()).unwrap();
        let s = permutation_unitary(d.coupling()).unwrap();
        let nu = noise_amplitudes(d.law());
        let family = kraus_from_unitary(&s, 2, &nu).unwrap();
        assert_eq!(family.len(), 8);

        let space = d.space();
        let lambda = d.law().lambda();
        for (g, kraus) in family.iter().enumerate() {
            let mark = space.mark_at(g);
            let q = d.law().weight_of(Mark::new(0, mark.ell));
            let mut want = CMat::zeros((2, 2));
            if q > 0.0 {
                let beta_i = crate::markov::DeterministicMap::digit(2, mark.ell, mark.j);
                want[[beta_i, mark.j]] = c((q * lambda).sqrt(), 0.0);
            }
            assert!(linalg::max_abs_diff_c(kraus, &want) < 1e-14, "mark {mark:?}");
        }

        let mut gram = CMat::zeros((2, 2));
        for r in &family {
            gram += &dagger(r).dot(r);
        }
        let want = eye_c(2).mapv(|z| z * c(lambda, 0.0));
        assert!(linalg::max_abs_diff_c(&gram, &want) < 1e-13);
    }

    #[test]
    fn zero_amplitudes_give_zero_kraus() {
        let phi = Coupling::universal_dense(2).unwrap();
        let s = permutation_unitary(&phi).unwrap();
        let nu = CVec::zeros(8);
        let family = kraus_from_unitary(&s, 2, &nu).unwrap();
        assert!(family.iter().all(|r| linalg::max_abs_c(r) == 0.0));
    }

    #[test]
    fn superoperator_round_trips_matrix_units() {
        // The action closure sees each unit; identity action gives the
        // identity matrix on vec space.
        let id = Superoperator::from_action(3, |a| a.clone());
        assert_eq!(id.matrix(), &eye_c(9));
        let a = array![
            [c(1.0, 1.0), c(0.0, 2.0), c(3.0, 0.0)],
            [c(0.0, 0.0), c(-1.0, 0.5), c(1.0, 0.0)],
            [c(2.0, -1.0), c(0.0, 0.0), c(0.5, 0.5)]
        ];
        assert_eq!(id.apply(&a).unwrap(), a);
    }

    #[test]
    fn commutator_generator_rotates_pauli_x() {
        // L(a) = i[sz, a]; exp(Lt)(sx) = cos(2t) sx - sin(2t) sy.
        let sz = array![[ONE, ZERO], [ZERO, -ONE]];
        let l = lindblad_from_kraus(&sz, &[]).unwrap();
        let t = 0.31;
        let sx = array![[ZERO, ONE], [ONE, ZERO]];
        let sy = array![[ZERO, c(0.0, -1.0)], [c(0.0, 1.0), ZERO]];
        let rotated = l.exp(t).unwrap().apply(&sx).unwrap();
        let want = sx.mapv(|z| z * c((2.0 * t).cos(), 0.0))
            - sy.mapv(|z| z * c((2.0 * t).sin(), 0.0));
        assert!(linalg::max_abs_diff_c(&rotated, &want) < 1e-12);
    }

    #[test]
    fn unitary_kraus_dissipator() {
        // Single Kraus sx: L(a) = sx a sx - a, so L(sz) = -2 sz.
        let sx = array![[ZERO, ONE], [ONE, ZERO]];
        let l = lindblad_from_kraus(&CMat::zeros((2, 2)), &[sx]).unwrap();
        let sz = array![[ONE, ZERO], [ZERO, -ONE]];
        let out = l.apply(&sz).unwrap();
        assert!(linalg::max_abs_diff_c(&out, &sz.mapv(|z| z * c(-2.0, 0.0))) < 1e-14);
        assert!(l.identity_defect(false) < 1e-14);
    }

    #[test]
    fn lindblad_rejects_crooked_hamiltonian() {
        let h = array![[ZERO, ONE], [ZERO, ZERO]];
        assert!(matches!(
            lindblad_from_kraus(&h, &[]),
            Err(QuantumError::NotSelfAdjoint { .. })
        ));
    }

    fn universal_generator_routes(r: &RateMatrix) -> (Superoperator, Superoperator, Superoperator) {
        let d = Dilation::build_universal(r).unwrap();
        let s = permutation_unitary(d.coupling()).unwrap();
        let from_blocks = lindblad_from_unitary_weights(&s, d.law()).unwrap();
        let nu = noise_amplitudes(d.law());
        let kraus = kraus_from_unitary(&s, r.n(), &nu).unwrap();
        let from_kraus = lindblad_from_kraus(&CMat::zeros((r.n(), r.n())), &kraus).unwrap();
        let (lambda, p) = uniformize(r);
        let from_atoms = lindblad_from_atoms(&decompose(&p).unwrap(), lambda);
        (from_blocks, from_kraus, from_atoms)
    }

    #[test]
    fn three_generator_routes_agree() {
        let r = two_state_rate();
        let (a, b, c_) = universal_generator_routes(&r);
        assert!(linalg::max_abs_diff_c(a.matrix(), b.matrix()) < 1e-12);
        assert!(linalg::max_abs_diff_c(a.matrix(), c_.matrix()) < 1e-12);
        assert!(linalg::max_abs_diff_c(b.matrix(), c_.matrix()) < 1e-12);
    }

    #[test]
    fn generator_routes_annihilate_identity() {
        let r = two_state_rate();
        let (a, b, c_) = universal_generator_routes(&r);
        for l in [&a, &b, &c_] {
            assert!(l.identity_defect(false) < 1e-13);
        }
    }

    #[test]
    fn completion_choice_does_not_touch_the_generator() {
        let r = two_state_rate();
        let d = Dilation::build_universal(&r).unwrap();
        let s1 = permutation_unitary(d.coupling()).unwrap();
        let s2 = permutation_unitary(&Coupling::universal_dense_reversed(2).unwrap()).unwrap();
        assert_ne!(s1, s2);
        let l1 = lindblad_from_unitary_weights(&s1, d.law()).unwrap();
        let l2 = lindblad_from_unitary_weights(&s2, d.law()).unwrap();
        assert!(linalg::max_abs_diff_c(l1.matrix(), l2.matrix()) < 1e-14);
    }

    #[test]
    fn identity_mixture_dephases() {
        // A mixture concentrated on the identity map fixes every state, so
        // the generator kills multiplication operators -- but its Kraus
        // family is the n projectors sqrt(lambda)|j><j|, which dephase
        // off-diagonal operators at rate lambda.
        let lambda = 1.7;
        let p = StochasticMatrix::identity(2);
        let l = lindblad_from_atoms(&decompose(&p).unwrap(), lambda);
        let f = cvec(&[(0.4, 0.0), (-2.0, 0.0)]);
        let mf = mult_operator(&f);
        assert!(linalg::max_abs_c(&l.apply(&mf).unwrap()) < 1e-15);
        let mut unit = CMat::zeros((2, 2));
        unit[[0, 1]] = ONE;
        let out = l.apply(&unit).unwrap();
        assert!(linalg::max_abs_diff_c(&out, &unit.mapv(|z| z * c(-lambda, 0.0))) < 1e-15);
        // The Kraus route sees the same dephasing.
        let d = Dilation::build_universal(
            &RateMatrix::new(ndarray::Array2::zeros((2, 2))).unwrap(),
        )
        .unwrap();
        let s = permutation_unitary(d.coupling()).unwrap();
        let nu = noise_amplitudes(d.law());
        let kraus = kraus_from_unitary(&s, 2, &nu).unwrap();
        let via_kraus = lindblad_from_kraus(&CMat::zeros((2, 2)), &kraus).unwrap();
        let direct = lindblad_from_atoms(&decompose(&p).unwrap(), d.law().lambda());
        assert!(linalg::max_abs_diff_c(via_kraus.matrix(), direct.matrix()) < 1e-14);
    }

    #[test]
    fn generator_extends_the_rate_matrix() {
        let r = two_state_rate();
        let (lambda, p) = uniformize(&r);
        let l = lindblad_from_atoms(&decompose(&p).unwrap(), lambda);
        assert!(generator_residual(&l, &r).unwrap() < 1e-13);
        // Spot check: L(m_{e0}) = m_{R e0} = diag(-1, 2).
        let e0 = cvec(&[(1.0, 0.0), (0.0, 0.0)]);
        let out = l.apply(&mult_operator(&e0)).unwrap();
        let want = array![[c(-1.0, 0.0), ZERO], [ZERO, c(2.0, 0.0)]];
        assert!(linalg::max_abs_diff_c(&out, &want) < 1e-13);
    }

    #[test]
    fn semigroup_extension_holds_on_a_time_grid() {
        let r = two_state_rate();
        let (lambda, p) = uniformize(&r);
        let l = lindblad_from_atoms(&decompose(&p).unwrap(), lambda);
        let report = check_extension(&l, &r, &[0.0, 0.3, 1.0, 2.0]).unwrap();
        assert!(report.max_residual < 1e-10, "residual {}", report.max_residual);
        assert!(report.max_off_diagonal < 1e-12);
    }

    #[test]
    fn semigroup_is_unital_and_completely_positive() {
        let r = two_state_rate();
        let (lambda, p) = uniformize(&r);
        let l = lindblad_from_atoms(&decompose(&p).unwrap(), lambda);
        for &t in &[0.0, 0.5, 2.0] {
            let e = l.exp(t).unwrap();
            assert!(e.identity_defect(true) < tol::IDENTITY_PRESERVATION);
            assert!(e.min_choi_eigenvalue() > -tol::PSD_EIG_FLOOR);
        }
        assert!(matches!(l.exp(-1.0), Err(QuantumError::BadTime { .. })));
    }

    #[test]
    fn semigroup_law_for_superoperators() {
        let r = two_state_rate();
        let (lambda, p) = uniformize(&r);
        let l = lindblad_from_atoms(&decompose(&p).unwrap(), lambda);
        let (s, t) = (0.4, 0.9);
        let combined = l.exp(s + t).unwrap();
        let product = Superoperator::from_matrix(
            2,
            l.exp(s).unwrap().matrix().dot(l.exp(t).unwrap().matrix()),
        )
        .unwrap();
        assert!(linalg::max_abs_diff_c(combined.matrix(), product.matrix()) < 1e-9);
    }

    #[test]
    fn flow_coefficients_reduce_to_shifted_diagonals() {
        let phi = Coupling::universal_dense(2).unwrap();
        let s = permutation_unitary(&phi).unwrap();
        for f in [
            cvec(&[(1.0, 0.0), (1.0, 0.0)]),
            cvec(&[(0.3, -1.2), (2.0, 0.7)]),
            cvec(&[(0.0, 0.0), (1.0, 0.0)]),
        ] {
            let res = flow_coefficient_residual(&s, &phi, &f).unwrap();
            assert!(res < 1e-12, "residual {res}");
        }
    }

    #[test]
    fn flow_coefficient_checks_dimensions() {
        let phi = Coupling::universal_dense(2).unwrap();
        let s = permutation_unitary(&phi).unwrap();
        let f = CVec::zeros(3);
        assert!(matches!(
            flow_coefficient_residual(&s, &phi, &f),
            Err(QuantumError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rn_density_products() {
        let d = Dilation::build_universal(&two_state_rate()).unwrap();
        let law = d.law();
        // Empty product.
        let empty = MarkedConfiguration::empty(0.0, 1.0).unwrap();
        assert_eq!(rn_density(&empty, law), 1.0);
        // Two supported marks: (8 * 0.5)^2 = 16.
        let config = MarkedConfiguration::new(
            vec![(0.25, Mark::new(0, 0)), (0.5, Mark::new(0, 2))],
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(rn_density(&config, law), 16.0);
        // A mark outside the support kills the density.
        let config = MarkedConfiguration::new(
            vec![(0.25, Mark::new(0, 0)), (0.5, Mark::new(1, 1))],
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(rn_density(&config, law), 0.0);
        // Past marks do not contribute.
        let config = MarkedConfiguration::new(
            vec![(-0.5, Mark::new(1, 1)), (0.5, Mark::new(0, 0))],
            f64::NEG_INFINITY,
            1.0,
        )
        .unwrap();
        assert_eq!(rn_density(&config, law), 4.0);
    }
}
