//! Dense row-major matrices and the few factorizations the pipeline needs.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dims("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dims(
                "Matrix::matmul",
                format!("inner dim {}", self.cols),
                other.rows,
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `out += self * x`
    #[inline]
    pub fn matvec_acc(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ * y`
    #[inline]
    pub fn matvec_t_acc(&self, y: &[T], out: &mut [T]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&yr, row) in y.iter().zip(self.data.chunks_exact(self.cols.max(1))) {
            if yr == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += yr * w;
            }
        }
    }

    /// `self += a bᵀ`
    #[inline]
    pub fn add_outer(&mut self, a: &[T], b: &[T]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        let cols = self.cols.max(1);
        for (&ar, row) in a.iter().zip(self.data.chunks_exact_mut(cols)) {
            if ar == T::zero() {
                continue;
            }
            for (w, &bc) in row.iter_mut().zip(b) {
                *w += ar * bc;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // four accumulators keep the loop vectorizable without reordering between runs
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`, singular values
/// sorted in nonincreasing order, `r = min(m, n)` triplets.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub vt: Matrix<T>,
}

impl<T: Real> Svd<T> {
    /// Number of singular values above `rel_tol * s_max`.
    pub fn rank(&self, rel_tol: T) -> usize {
        let smax = self.s.first().copied().unwrap_or_else(T::zero);
        if smax <= T::zero() {
            return 0;
        }
        self.s.iter().take_while(|&&s| s > rel_tol * smax).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd<T: Real>(a: &Matrix<T>) -> Svd<T> {
    let (m, n) = a.shape();
    if m < n {
        let t = svd(&a.transpose());
        return Svd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        };
    }
    // rows of `w` are the columns of A being orthogonalized; rows of `v` the columns of V
    let mut w = a.transpose();
    let mut v = Matrix::<T>::identity(n);
    let eps = T::epsilon() * lit(4.0);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(w.row(p), w.row(p));
                let beta = dot(w.row(q), w.row(q));
                let gamma = dot(w.row(p), w.row(q));
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (lit::<T>(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(usize, T)> = (0..n)
        .map(|j| (j, dot(w.row(j), w.row(j)).sqrt()))
        .collect();
    order.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal).then(x.0.cmp(&y.0)));
    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &(j, sigma)) in order.iter().enumerate() {
        s.push(sigma);
        if sigma > T::zero() {
            for i in 0..m {
                u[(i, k)] = w[(j, i)] / sigma;
            }
        }
        vt.row_mut(k).copy_from_slice(v.row(j));
    }
    Svd { u, s, vt }
}

fn rotate_rows<T: Real>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Moore–Penrose pseudo-inverse dropping singular values below `rel_tol * s_max`.
pub fn pinv<T: Real>(a: &Matrix<T>, rel_tol: T) -> Matrix<T> {
    let d = svd(a);
    let r = d.rank(rel_tol);
    let (m, n) = a.shape();
    let mut out = Matrix::zeros(n, m);
    for k in 0..r {
        let inv = T::one() / d.s[k];
        for i in 0..n {
            let vik = d.vt[(k, i)] * inv;
            for j in 0..m {
                out[(i, j)] += vik * d.u[(j, k)];
            }
        }
    }
    out
}

/// Eigen-decomposition of a symmetric 2×2 matrix `[[a, b], [b, c]]`.
/// Returns eigenvalues (descending) and unit eigenvectors as columns.
pub fn sym2_eigen<T: Real>(a: T, b: T, c: T) -> ([T; 2], [[T; 2]; 2]) {
    let half = lit::<T>(0.5);
    let mean = half * (a + c);
    let diff = half * (a - c);
    let rad = (diff * diff + b * b).sqrt();
    let l1 = mean + rad;
    let l2 = mean - rad;
    if rad == T::zero() {
        return ([l1, l2], [[T::one(), T::zero()], [T::zero(), T::one()]]);
    }
    // eigenvector for l1: (b, l1 - a) or (l1 - c, b), pick the better conditioned
    let (x1, y1) = (b, l1 - a);
    let (x2, y2) = (l1 - c, b);
    let (x, y) = if x1 * x1 + y1 * y1 >= x2 * x2 + y2 * y2 {
        (x1, y1)
    } else {
        (x2, y2)
    };
    let n = (x * x + y * y).sqrt();
    let (x, y) = (x / n, y / n);
    ([l1, l2], [[x, -y], [y, x]])
}

/// Principal square root of a symmetric positive semidefinite 2×2 matrix.
pub fn sym2_sqrt<T: Real>(m: [[T; 2]; 2]) -> [[T; 2]; 2] {
    let b = lit::<T>(0.5) * (m[0][1] + m[1][0]);
    let (vals, vecs) = sym2_eigen(m[0][0], b, m[1][1]);
    let r0 = vals[0].max(T::zero()).sqrt();
    let r1 = vals[1].max(T::zero()).sqrt();
    let mut out = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = r0 * vecs[i][0] * vecs[j][0] + r1 * vecs[i][1] * vecs[j][1];
        }
    }
    out
}
