//! Dense linear algebra primitives: matrices, SVD, pseudo-inverse, norms,
//! principal angles, and the block dynamics matrix with its Schur factors.

mod schur;
mod svd;

pub use schur::{build_block_h, pad_gradient, schur_factors};
pub use svd::{svd, svd_full, sym_eigen, top_left_singular, truncate_rank, FullSvd, SvdFactors, ThinBasis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    /// Builds a matrix from row-major entries, rejecting NaN/Inf.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "entry count {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite entry in matrix construction".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for values produced by our own kernels.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    /// Square diagonal matrix from the given values.
    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { T::zero() })
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * rhs`
    pub fn mul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch { op: "mul", lhs: self.shape(), rhs: rhs.shape() });
        }
        let (m, n, kk) = (self.rows, rhs.cols, self.cols);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * kk..(i + 1) * kk];
            let orow = &mut out[i * n..(i + 1) * n];
            for (l, &a) in arow.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let brow = &rhs.data[l * n..(l + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { rows: m, cols: n, data: out })
    }

    /// `self^T * rhs`, without materializing the transpose.
    pub fn mul_tn(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch { op: "mul_tn", lhs: self.shape(), rhs: rhs.shape() });
        }
        let (m, n) = (self.cols, rhs.cols);
        let mut out = vec![T::zero(); m * n];
        for l in 0..self.rows {
            let arow = &self.data[l * self.cols..(l + 1) * self.cols];
            let brow = &rhs.data[l * n..(l + 1) * n];
            for (i, &a) in arow.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(Self { rows: m, cols: n, data: out })
    }

    /// `self * rhs^T`, without materializing the transpose.
    pub fn mul_nt(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(Error::ShapeMismatch { op: "mul_nt", lhs: self.shape(), rhs: rhs.shape() });
        }
        let (m, n) = (self.rows, rhs.rows);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            let orow = &mut out[i * n..(i + 1) * n];
            for (q, o) in orow.iter_mut().enumerate() {
                let brow = &rhs.data[q * rhs.cols..(q + 1) * rhs.cols];
                let mut acc = T::zero();
                for (&a, &b) in arow.iter().zip(brow.iter()) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Ok(Self { rows: m, cols: n, data: out })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch { op: "add", lhs: self.shape(), rhs: rhs.shape() });
        }
        let data = self.data.iter().zip(rhs.data.iter()).map(|(&a, &b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch { op: "sub", lhs: self.shape(), rhs: rhs.shape() });
        }
        let data = self.data.iter().zip(rhs.data.iter()).map(|(&a, &b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// `self += s * rhs`
    pub fn add_scaled(&mut self, rhs: &Self, s: T) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch { op: "add_scaled", lhs: self.shape(), rhs: rhs.shape() });
        }
        for (a, &b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn scaled(&self, s: T) -> Self {
        let data = self.data.iter().map(|&a| a * s).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data = self.data.iter().map(|&a| f(a)).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// Columns `lo..hi` as a new matrix.
    pub fn col_block(&self, lo: usize, hi: usize) -> Self {
        assert!(lo <= hi && hi <= self.cols);
        Self::from_fn(self.rows, hi - lo, |i, j| self.get(i, lo + j))
    }

    /// Rows `lo..hi` as a new matrix.
    pub fn row_block(&self, lo: usize, hi: usize) -> Self {
        assert!(lo <= hi && hi <= self.rows);
        Self { rows: hi - lo, cols: self.cols, data: self.data[lo * self.cols..hi * self.cols].to_vec() }
    }

    /// `[self | rhs]`
    pub fn hstack(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch { op: "hstack", lhs: self.shape(), rhs: rhs.shape() });
        }
        let mut out = Self::zeros(self.rows, self.cols + rhs.cols);
        for i in 0..self.rows {
            out.data[i * out.cols..i * out.cols + self.cols].copy_from_slice(self.row(i));
            out.data[i * out.cols + self.cols..(i + 1) * out.cols].copy_from_slice(rhs.row(i));
        }
        Ok(out)
    }

    /// `[self; rhs]`
    pub fn vstack(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(Error::ShapeMismatch { op: "vstack", lhs: self.shape(), rhs: rhs.shape() });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&rhs.data);
        Ok(Self { rows: self.rows + rhs.rows, cols: self.cols, data })
    }

    pub fn frobenius_norm(&self) -> T {
        // Two-pass scaled sum to avoid overflow on divergent iterates.
        let maxabs = self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
        if maxabs == T::zero() || !maxabs.is_finite() {
            return maxabs;
        }
        let mut acc = T::zero();
        for &x in &self.data {
            let r = x / maxabs;
            acc += r * r;
        }
        maxabs * acc.sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }
}

/// Largest singular value.
pub fn op_norm<T: Real>(m: &DenseMatrix<T>) -> Result<T> {
    if m.rows() == 0 || m.cols() == 0 {
        return Ok(T::zero());
    }
    Ok(svd(m)?.s.first().copied().unwrap_or_else(T::zero))
}

/// Frobenius norm (free-function spelling used throughout the diagnostics).
pub fn fro_norm<T: Real>(m: &DenseMatrix<T>) -> T {
    m.frobenius_norm()
}

/// Ratio of the largest to the `rank`-th singular value.
pub fn condition_number<T: Real>(m: &DenseMatrix<T>, rank: usize) -> Result<T> {
    if rank == 0 {
        return Err(Error::InvalidArgument("condition_number needs rank >= 1".into()));
    }
    let f = svd(m)?;
    if rank > f.s.len() {
        return Err(Error::InvalidArgument(format!(
            "rank {} exceeds min dimension {}",
            rank,
            f.s.len()
        )));
    }
    let s1 = f.s[0];
    let sr = f.s[rank - 1];
    if sr <= T::of(1e-12) * s1 {
        return Err(Error::DegenerateInput(format!(
            "singular value {rank} is below the numeric-rank threshold"
        )));
    }
    Ok(s1 / sr)
}

/// Moore-Penrose pseudo-inverse via SVD; singular values at or below
/// `tol * s_max` are zeroed. `tol = 1e-12` is the crate-wide default.
pub fn pseudo_inverse<T: Real>(m: &DenseMatrix<T>, tol: T) -> Result<DenseMatrix<T>> {
    if tol < T::zero() {
        return Err(Error::InvalidArgument("pseudo_inverse tolerance must be >= 0".into()));
    }
    let f = svd(m)?;
    let smax = f.s.first().copied().unwrap_or_else(T::zero);
    let cut = tol * smax;
    // V * S^+ * U^T
    let p = f.s.len();
    let mut vs = DenseMatrix::zeros(m.cols(), p);
    for i in 0..m.cols() {
        for j in 0..p {
            let sj = f.s[j];
            if sj > cut && sj > T::zero() {
                vs.set(i, j, f.vt.get(j, i) / sj);
            }
        }
    }
    vs.mul_nt(&f.u)
}

/// Operator-norm principal-angle statistic `||basis_a^T basis_b||_op`.
///
/// The caller passes an orthogonal-complement basis as `basis_a`; the value
/// is 0 when `basis_b`'s span avoids the complement entirely and 1 when it
/// contains a direction inside it.
pub fn principal_angle_op<T: Real>(basis_a: &DenseMatrix<T>, basis_b: &DenseMatrix<T>) -> Result<T> {
    if basis_a.rows() != basis_b.rows() {
        return Err(Error::ShapeMismatch { op: "principal_angle_op", lhs: basis_a.shape(), rhs: basis_b.shape() });
    }
    check_orthonormal_columns(basis_a, "basis_a")?;
    check_orthonormal_columns(basis_b, "basis_b")?;
    if basis_a.cols() == 0 || basis_b.cols() == 0 {
        return Ok(T::zero());
    }
    let cross = basis_a.mul_tn(basis_b)?;
    op_norm(&cross)
}

fn check_orthonormal_columns<T: Real>(m: &DenseMatrix<T>, name: &str) -> Result<()> {
    let g = m.mul_tn(m)?;
    let mut dev = T::zero();
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let target = if i == j { T::one() } else { T::zero() };
            let d = g.get(i, j) - target;
            dev += d * d;
        }
    }
    if dev.sqrt() > T::of(1e-8) {
        return Err(Error::InvalidArgument(format!("{name} does not have orthonormal columns")));
    }
    Ok(())
}

/// Orthonormal basis of the orthogonal complement of `basis`'s column span.
///
/// `basis` must have full column rank; the result has `rows - cols` columns.
pub fn orthonormal_complement<T: Real>(basis: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let (m, p) = basis.shape();
    if p > m {
        return Err(Error::InvalidArgument("complement of an over-complete basis".into()));
    }
    if p == 0 {
        return Ok(DenseMatrix::identity(m));
    }
    let full = svd_full(basis)?;
    if let Some(&smin) = full.s.last() {
        if smin <= T::of(1e-10) * full.s[0] {
            return Err(Error::DegenerateInput("basis is column rank deficient".into()));
        }
    }
    Ok(full.u.col_block(p, m))
}

/// Modified Gram-Schmidt orthonormalization of `m`'s columns, dropping
/// directions already spanned. Used to build small projection bases.
pub fn orthonormalize_columns<T: Real>(m: &DenseMatrix<T>) -> DenseMatrix<T> {
    let (rows, cols) = m.shape();
    let mut kept: Vec<Vec<T>> = Vec::new();
    for j in 0..cols {
        let mut v: Vec<T> = (0..rows).map(|i| m.get(i, j)).collect();
        // Two MGS passes for numerical orthogonality.
        for _ in 0..2 {
            for q in &kept {
                let mut dot = T::zero();
                for i in 0..rows {
                    dot += q[i] * v[i];
                }
                for i in 0..rows {
                    v[i] -= dot * q[i];
                }
            }
        }
        let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if norm > T::of(1e-12) {
            for x in v.iter_mut() {
                *x /= norm;
            }
            kept.push(v);
        }
    }
    let q = kept.len();
    DenseMatrix::from_fn(rows, q, |i, j| kept[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix<f64> {
        DenseMatrix::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_non_finite_entries() {
        let err = DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mul_variants_agree() {
        let a = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = mat(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let ab = a.mul(&b).unwrap();
        assert_eq!(ab.data(), &[58.0, 64.0, 139.0, 154.0]);
        let at = a.transpose();
        assert_eq!(at.mul_tn(&b).unwrap().data(), ab.data());
        assert_eq!(a.mul_nt(&b.transpose()).unwrap().data(), ab.data());
    }

    #[test]
    fn pseudo_inverse_of_diagonal() {
        let m: DenseMatrix<f64> = DenseMatrix::diag(&[2.0, 0.0]);
        let p = pseudo_inverse(&m, 1e-12).unwrap();
        assert!((p.get(0, 0) - 0.5).abs() < 1e-14);
        assert_eq!(p.get(1, 1), 0.0);

        let id: DenseMatrix<f64> = DenseMatrix::identity(3);
        let pid = pseudo_inverse(&id, 1e-12).unwrap();
        assert!(pid.sub(&id).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn condition_number_examples() {
        let m: DenseMatrix<f64> = DenseMatrix::diag(&[40.0, 30.0, 20.0, 10.0]);
        assert!((condition_number(&m, 4).unwrap() - 4.0).abs() < 1e-12);

        let id: DenseMatrix<f64> = DenseMatrix::identity(5);
        assert!((op_norm(&id).unwrap() - 1.0).abs() < 1e-12);
        assert!((fro_norm(&id) - 5f64.sqrt()).abs() < 1e-12);
        assert!((condition_number(&id, 5).unwrap() - 1.0).abs() < 1e-12);

        let z: DenseMatrix<f64> = DenseMatrix::zeros(3, 2);
        assert_eq!(op_norm(&z).unwrap(), 0.0);

        // Rank past the numeric rank is a degenerate input.
        let lowrank: DenseMatrix<f64> = DenseMatrix::diag(&[1.0, 0.0]);
        assert!(matches!(condition_number(&lowrank, 2), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn principal_angle_axis_cases() {
        // span{e1} with complement span{e2}: angle of e1 against the complement is 0.
        let e1 = mat(2, 1, &[1.0, 0.0]);
        let e2 = mat(2, 1, &[0.0, 1.0]);
        assert!(principal_angle_op(&e2, &e1).unwrap().abs() < 1e-14);
        // e2 itself lies inside the complement: angle statistic is 1.
        assert!((principal_angle_op(&e2, &e2).unwrap() - 1.0).abs() < 1e-12);
        // Non-orthonormal input is rejected.
        let bad = mat(2, 1, &[1.0, 1.0]);
        assert!(principal_angle_op(&e2, &bad).is_err());
    }

    #[test]
    fn complement_spans_the_rest() {
        let basis = mat(3, 1, &[1.0, 0.0, 0.0]);
        let comp = orthonormal_complement(&basis).unwrap();
        assert_eq!(comp.shape(), (3, 2));
        let cross = basis.mul_tn(&comp).unwrap();
        assert!(cross.frobenius_norm() < 1e-12);
    }

    #[test]
    fn f32_kernels_compile_and_run() {
        let a: DenseMatrix<f32> = DenseMatrix::diag(&[3.0f32, 1.0]);
        let f = svd(&a).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-5);
    }
}
