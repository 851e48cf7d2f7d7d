//! Dense complex vectors and matrices for small Hilbert spaces.
//!
//! Dimensions in this crate stay small (two-level systems up to a few dozen
//! levels, spatial grids of order 64), so everything is a flat `Vec` of
//! `Complex64` in row-major order and the algorithms are the plain O(n^2)/O(n^3)
//! ones. The only nontrivial routine is a cyclic Jacobi eigensolver for
//! Hermitian matrices, used to validate density matrices and to exponentiate
//! coupling operators.

use num_complex::Complex64 as C64;

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        CMatrix { dim, data: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let dim = rows.len();
        assert!(rows.iter().all(|r| r.len() == dim), "rows must form a square matrix");
        CMatrix { dim, data: rows.iter().flatten().copied().collect() }
    }

    /// Diagonal matrix with the given real entries.
    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m[(i, i)] = C64::new(e, 0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn conj_transpose(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[(i, j)] = self[(j, i)].conj();
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.dim);
        self.data
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self[(i, k)];
                if aik == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        CMatrix { dim: self.dim, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn axpy_in_place(&mut self, s: C64, other: &Self) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self.matmul(other).sub(&other.matmul(self))
    }

    /// Largest elementwise deviation from the conjugate transpose.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in i..self.dim {
                let d = (self[(i, j)] - self[(j, i)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    /// Outer product |v><w| of two vectors.
    pub fn outer(v: &[C64], w: &[C64]) -> Self {
        assert_eq!(v.len(), w.len());
        let dim = v.len();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = v[i] * w[j].conj();
            }
        }
        m
    }

    /// Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations,
    /// sorted ascending. The matrix is assumed Hermitian; the strictly
    /// upper-triangular part drives the rotations.
    pub fn eigenvalues_hermitian(&self) -> Vec<f64> {
        self.jacobi(false).0
    }

    /// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and
    /// the unitary whose columns are the corresponding eigenvectors.
    pub fn eigh(&self) -> (Vec<f64>, CMatrix) {
        let (vals, vecs) = self.jacobi(true);
        (vals, vecs.expect("jacobi(true) returns eigenvectors"))
    }

    fn jacobi(&self, want_vectors: bool) -> (Vec<f64>, Option<CMatrix>) {
        let n = self.dim;
        let mut a = self.clone();
        let mut v = if want_vectors { Some(Self::identity(n)) } else { None };
        let scale = self.max_abs().max(1.0);
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= 1e-14 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq.norm() <= 1e-300 {
                        continue;
                    }
                    // Unitary 2x2 rotation zeroing a[(p,q)]: diagonalize the
                    // Hermitian block [[app, apq], [apq*, aqq]].
                    let app = a[(p, p)].re;
                    let aqq = a[(q, q)].re;
                    let phase = apq / apq.norm();
                    let tau = (aqq - app) / (2.0 * apq.norm());
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    // Columns rotate as: new_p = c*p - s*conj(phase)*q,
                    // new_q = s*phase*p + c*q.
                    let sp = phase * s;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = akp * c - akq * sp.conj();
                        a[(k, q)] = akp * sp + akq * c;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = apk * c - aqk * sp;
                        a[(q, k)] = apk * sp.conj() + aqk * c;
                    }
                    a[(p, q)] = C64::new(0.0, 0.0);
                    a[(q, p)] = C64::new(0.0, 0.0);
                    if let Some(vm) = v.as_mut() {
                        for k in 0..n {
                            let vkp = vm[(k, p)];
                            let vkq = vm[(k, q)];
                            vm[(k, p)] = vkp * c - vkq * sp.conj();
                            vm[(k, q)] = vkp * sp + vkq * c;
                        }
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).unwrap());
        let vals: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();
        let vecs = v.map(|vm| {
            let mut sorted = Self::zeros(n);
            for (new_col, &old_col) in order.iter().enumerate() {
                for k in 0..n {
                    sorted[(k, new_col)] = vm[(k, old_col)];
                }
            }
            sorted
        });
        (vals, vecs)
    }

    /// exp(z * M) of a Hermitian matrix `M` via eigen-decomposition.
    pub fn exp_hermitian_scaled(&self, z: C64) -> CMatrix {
        let (vals, u) = self.eigh();
        let n = self.dim;
        let udag = u.conj_transpose();
        let mut d = CMatrix::zeros(n);
        for (i, &lam) in vals.iter().enumerate() {
            d[(i, i)] = (z * lam).exp();
        }
        u.matmul(&d).matmul(&udag)
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

pub fn inner(bra: &[C64], ket: &[C64]) -> C64 {
    bra.iter().zip(ket).map(|(b, k)| b.conj() * k).sum()
}

/// Euclidean distance between two state vectors.
pub fn distance(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}
