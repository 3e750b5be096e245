//! Dense matrix helpers shared by the real (Markov) and complex (quantum)
//! layers: matrix exponential, linear solves, Kronecker products,
//! column-stacking, and Hermitian eigenvalues.
//!
//! Everything here is self-contained Rust over `ndarray`; there is no BLAS
//! or LAPACK dependency. Matrices are small (at most a few hundred rows),
//! so cubic algorithms with partial pivoting are entirely adequate.

use ndarray::{Array1, Array2};
pub use num_complex::Complex64;

pub type CMat = Array2<Complex64>;
pub type CVec = Array1<Complex64>;
pub type RMat = Array2<f64>;

pub fn eye_c(n: usize) -> CMat {
    Array2::eye(n).mapv(|x: f64| Complex64::new(x, 0.0))
}

pub fn to_complex(a: &RMat) -> CMat {
    a.mapv(|x| Complex64::new(x, 0.0))
}

/// Conjugate transpose.
pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

pub fn max_abs_c(a: &CMat) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

pub fn max_abs_diff_c(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.dim(), b.dim(), "shape mismatch");
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
}

pub fn max_abs_diff_r(a: &RMat, b: &RMat) -> f64 {
    assert_eq!(a.dim(), b.dim(), "shape mismatch");
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Maximum absolute column sum (the induced 1-norm).
fn matrix_1_norm(a: &CMat) -> f64 {
    let (_, cols) = a.dim();
    (0..cols)
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solve A X = B by Gaussian elimination with partial pivoting.
///
/// Panics on a numerically singular pivot; callers only pass
/// well-conditioned systems (Pade denominators of scaled matrices).
pub fn solve_linear(a: &CMat, b: &CMat) -> CMat {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "coefficient matrix must be square");
    assert_eq!(b.nrows(), n, "dimension mismatch between A and B");
    let ncols = b.ncols();

    let mut aug = a.clone();
    let mut rhs = b.clone();

    for k in 0..n {
        let (mut pivot_row, mut pivot_mag) = (k, aug[[k, k]].norm());
        for r in (k + 1)..n {
            let mag = aug[[r, k]].norm();
            if mag > pivot_mag {
                pivot_row = r;
                pivot_mag = mag;
            }
        }
        assert!(pivot_mag > 0.0, "singular system in solve_linear");
        if pivot_row != k {
            for c in 0..n {
                aug.swap([k, c], [pivot_row, c]);
            }
            for c in 0..ncols {
                rhs.swap([k, c], [pivot_row, c]);
            }
        }
        let pivot = aug[[k, k]];
        for r in (k + 1)..n {
            let factor = aug[[r, k]] / pivot;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for c in k..n {
                let v = aug[[k, c]];
                aug[[r, c]] -= factor * v;
            }
            for c in 0..ncols {
                let v = rhs[[k, c]];
                rhs[[r, c]] -= factor * v;
            }
        }
    }

    let mut x = CMat::zeros((n, ncols));
    for c in 0..ncols {
        for r in (0..n).rev() {
            let mut acc = rhs[[r, c]];
            for k in (r + 1)..n {
                acc -= aug[[r, k]] * x[[k, c]];
            }
            x[[r, c]] = acc / aug[[r, r]];
        }
    }
    x
}

// Degree-13 Pade coefficients for exp, and the 1-norm threshold below which
// the [13/13] approximant is accurate to double precision (Higham 2005).
const PADE13_THETA: f64 = 5.371920351148152;
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling-and-squaring with a [13/13] Pade
/// approximant: scale A by 2^-s until its 1-norm is below the Pade-13
/// threshold, evaluate the approximant with a single linear solve, then
/// square the result s times. No diagonalizability assumption.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "expm requires a square matrix");
    assert!(
        a.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
        "expm requires finite entries"
    );
    if n == 0 {
        return CMat::zeros((0, 0));
    }

    let norm = matrix_1_norm(a);
    let s = if norm > PADE13_THETA {
        (norm / PADE13_THETA).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / Complex64::new(2f64.powi(s as i32), 0.0));

    let id = eye_c(n);
    let a2 = scaled.dot(&scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let u_inner = a6.mapv(|z| z * PADE13[13])
        + a4.mapv(|z| z * PADE13[11])
        + a2.mapv(|z| z * PADE13[9]);
    let u_poly = a6.dot(&u_inner)
        + a6.mapv(|z| z * PADE13[7])
        + a4.mapv(|z| z * PADE13[5])
        + a2.mapv(|z| z * PADE13[3])
        + id.mapv(|z| z * PADE13[1]);
    let u = scaled.dot(&u_poly);

    let v_inner = a6.mapv(|z| z * PADE13[12])
        + a4.mapv(|z| z * PADE13[10])
        + a2.mapv(|z| z * PADE13[8]);
    let v = a6.dot(&v_inner)
        + a6.mapv(|z| z * PADE13[6])
        + a4.mapv(|z| z * PADE13[4])
        + a2.mapv(|z| z * PADE13[2])
        + id.mapv(|z| z * PADE13[0]);

    let mut r = solve_linear(&(&v - &u), &(&v + &u));
    for _ in 0..s {
        r = r.dot(&r);
    }
    r
}

/// Matrix exponential of a real matrix.
///
/// Lifts to complex, exponentiates, and drops the imaginary parts, which
/// are exactly zero: every arithmetic operation on complex numbers with
/// zero imaginary part keeps the imaginary part at zero.
pub fn expm_real(a: &RMat) -> RMat {
    expm(&to_complex(a)).mapv(|z| z.re)
}

/// Kronecker product, row-major blocks: (a kron b)[i*p+k, j*q+l] = a[i,j] b[k,l].
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (m, n) = a.dim();
    let (p, q) = b.dim();
    let mut out = CMat::zeros((m * p, n * q));
    for i in 0..m {
        for j in 0..n {
            let aij = a[[i, j]];
            if aij == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..p {
                for l in 0..q {
                    out[[i * p + k, j * q + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Column-stacking: vec(A)[i + j*d] = A[i, j].
pub fn vec_col(a: &CMat) -> CVec {
    let (d, d2) = a.dim();
    assert_eq!(d, d2, "vec_col expects a square matrix");
    let mut v = CVec::zeros(d * d);
    for j in 0..d {
        for i in 0..d {
            v[i + j * d] = a[[i, j]];
        }
    }
    v
}

/// Inverse of [`vec_col`].
pub fn unvec_col(v: &CVec, d: usize) -> CMat {
    assert_eq!(v.len(), d * d, "length must be d^2");
    let mut a = CMat::zeros((d, d));
    for j in 0..d {
        for i in 0..d {
            a[[i, j]] = v[i + j * d];
        }
    }
    a
}

/// Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns the spectrum sorted ascending. Input must be Hermitian; the
/// routine only reads the upper triangle's conjugate structure implicitly
/// through two-sided unitary updates, so a non-Hermitian input gives
/// meaningless results.
pub fn hermitian_eigenvalues(a: &CMat) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "square matrix required");
    let mut m = a.clone();
    let fro: f64 = m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if fro == 0.0 {
        return vec![0.0; n];
    }
    let tol = 1e-14 * fro;

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                let mag = apq.norm();
                if mag <= tol / (n as f64) {
                    continue;
                }
                let phase = apq / Complex64::new(mag, 0.0);
                let app = m[[p, p]].re;
                let aqq = m[[q, q]].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // J = I except J[p,p]=c, J[p,q]=s, J[q,p]=-s*conj(phase),
                // J[q,q]=c*conj(phase); update M <- J^* M J.
                let jqp = -s * phase.conj();
                let jqq = c * phase.conj();
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = mkp * c + mkq * jqp;
                    m[[k, q]] = mkp * s + mkq * jqq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = mpk * c + mqk * jqp.conj();
                    m[[q, k]] = mpk * s + mqk * jqq.conj();
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]].re).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}
