//! Small dense linear algebra for the `(p+1)`-dimensional regression problems.
//! Matrices are row-major `n × n` slices.

use crate::scalar::Scalar;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n = rows.len();
        Self { n, data: rows.iter().flat_map(|r| r.iter().copied()).collect() }
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n).map(|c| c.to_vec()).collect()
    }

    /// Adds `w · v v'`.
    pub fn add_outer(&mut self, v: &[T], w: T) {
        for i in 0..self.n {
            for j in 0..self.n {
                self[(i, j)] = self[(i, j)] + w * v[i] * v[j];
            }
        }
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n).map(|i| (0..self.n).map(|j| self[(i, j)] * v[j]).sum()).collect()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (0..n).map(|k| self[(i, k)] * other[(k, j)]).sum();
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Principal submatrix on `idx`.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Lower Cholesky factor, or `None` when a pivot falls below
/// `rel_tol · max diagonal`.
pub fn cholesky<T: Scalar>(a: &Matrix<T>, rel_tol: T) -> Option<Matrix<T>> {
    let n = a.n;
    let scale = (0..n).fold(T::zero(), |m, i| m.max(a[(i, i)].abs()));
    if !(scale > T::zero()) {
        return None;
    }
    let mut l = Matrix::zeros(n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if !(d > rel_tol * scale) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `L L' x = b`.
pub fn cholesky_solve<T: Scalar>(l: &Matrix<T>, b: &[T]) -> Vec<T> {
    let n = l.n;
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] = y[i] - l[(i, k)] * y[k];
        }
        y[i] = y[i] / l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] = y[i] - l[(k, i)] * y[k];
        }
        y[i] = y[i] / l[(i, i)];
    }
    y
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors as columns)`.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.n;
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off.sqrt() <= eps * m.max_abs() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)] == T::zero() {
                    continue;
                }
                let two = T::one() + T::one();
                let theta = (m[(q, q)] - m[(p, p)]) / (two * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[(i, i)]).collect(), v)
}

/// Symmetric square root `S` with `S S = A`, or `None` if `A` is not
/// positive definite.
pub fn sym_sqrt<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let (vals, vecs) = symmetric_eigen(a);
    let top = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if vals.iter().any(|&l| !(l > T::epsilon() * top)) {
        return None;
    }
    let n = a.n;
    let mut out = Matrix::zeros(n);
    for (k, l) in vals.iter().enumerate() {
        let r = l.sqrt();
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = out[(i, j)] + r * vecs[(i, k)] * vecs[(j, k)];
            }
        }
    }
    Some(out)
}

/// Nonnegative least squares `min ‖Z γ − y‖, γ ≥ 0` by the Lawson–Hanson
/// active-set method. `rows` are the rows of `Z`.
pub fn nnls<T: Scalar>(rows: &[Vec<T>], y: &[T]) -> Vec<T> {
    let m = rows.first().map_or(0, |r| r.len());
    let mut gram = Matrix::zeros(m);
    let mut zty = vec![T::zero(); m];
    for (r, &yi) in rows.iter().zip(y) {
        gram.add_outer(r, T::one());
        for j in 0..m {
            zty[j] = zty[j] + r[j] * yi;
        }
    }
    let scale = gram.max_abs().max(T::min_positive_value());
    let tol = T::of(1e-12) * scale;
    let mut x = vec![T::zero(); m];
    let mut passive = vec![false; m];
    for _outer in 0..(3 * m + 3) {
        let grad: Vec<T> = (0..m).map(|j| zty[j] - gram.mul_vec(&x)[j]).collect();
        let cand = (0..m).filter(|&j| !passive[j] && grad[j] > tol).max_by(|&a, &b| grad[a].partial_cmp(&grad[b]).unwrap());
        let Some(j) = cand else { break };
        passive[j] = true;
        for _inner in 0..(3 * m + 3) {
            let idx: Vec<usize> = (0..m).filter(|&k| passive[k]).collect();
            let sub = gram.select(&idx);
            let rhs: Vec<T> = idx.iter().map(|&k| zty[k]).collect();
            let Some(l) = cholesky(&sub, T::of(1e-14)) else {
                passive[j] = false;
                break;
            };
            let sol = cholesky_solve(&l, &rhs);
            if sol.iter().all(|&v| v > T::zero()) {
                for (a, &k) in idx.iter().enumerate() {
                    x[k] = sol[a];
                }
                break;
            }
            let mut step = T::one();
            for (a, &k) in idx.iter().enumerate() {
                if sol[a] <= T::zero() {
                    let denom = x[k] - sol[a];
                    if denom > T::zero() {
                        step = step.min(x[k] / denom);
                    }
                }
            }
            for (a, &k) in idx.iter().enumerate() {
                x[k] = x[k] + step * (sol[a] - x[k]);
            }
            let floor = T::of(1e-14) * x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            for &k in &idx {
                if x[k] <= floor {
                    x[k] = T::zero();
                    passive[k] = false;
                }
            }
        }
    }
    x
}
