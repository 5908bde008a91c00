//! Dense SVD via Householder bidiagonalization and implicit-shift QR,
//! plus a cyclic Jacobi eigensolver for small symmetric matrices and a
//! Gram-matrix thin SVD for tall-skinny factors.

use super::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Compact SVD: `u` is m x p with orthonormal columns, `s` holds the p
/// singular values in non-increasing order, `vt` is p x n with orthonormal
/// rows, where p = min(m, n).
#[derive(Debug, Clone)]
pub struct SvdFactors<T> {
    pub u: DenseMatrix<T>,
    pub s: Vec<T>,
    pub vt: DenseMatrix<T>,
}

impl<T: Real> SvdFactors<T> {
    /// `U * diag(s) * Vt`.
    pub fn reconstruct(&self) -> DenseMatrix<T> {
        let p = self.s.len();
        let mut us = DenseMatrix::zeros(self.u.rows(), p);
        for i in 0..self.u.rows() {
            for j in 0..p {
                us.set(i, j, self.u.get(i, j) * self.s[j]);
            }
        }
        us.mul(&self.vt).expect("shape by construction")
    }

    /// Number of singular values above `rel_tol * s_max`.
    pub fn numeric_rank(&self, rel_tol: T) -> usize {
        let smax = self.s.first().copied().unwrap_or_else(T::zero);
        if smax == T::zero() {
            return 0;
        }
        self.s.iter().filter(|&&x| x > rel_tol * smax).count()
    }
}

/// Full SVD: `u` is m x m orthogonal, `vt` is n x n orthogonal, `s` holds
/// the min(m, n) singular values in non-increasing order.
#[derive(Debug, Clone)]
pub struct FullSvd<T> {
    pub u: DenseMatrix<T>,
    pub s: Vec<T>,
    pub vt: DenseMatrix<T>,
}

impl<T: Real> FullSvd<T> {
    pub fn compact(&self) -> SvdFactors<T> {
        let p = self.s.len();
        SvdFactors { u: self.u.col_block(0, p), s: self.s.clone(), vt: self.vt.row_block(0, p) }
    }
}

/// Compact SVD with a deterministic sign convention: in each left singular
/// vector the entry of largest absolute value is made positive (ties broken
/// by the lowest row index).
pub fn svd<T: Real>(m: &DenseMatrix<T>) -> Result<SvdFactors<T>> {
    Ok(svd_full(m)?.compact())
}

/// Keeps the top `r` singular triples; the reconstruction is the
/// Frobenius-optimal rank-r approximant of the original matrix.
pub fn truncate_rank<T: Real>(f: &SvdFactors<T>, r: usize) -> Result<SvdFactors<T>> {
    if r == 0 || r > f.s.len() {
        return Err(Error::InvalidArgument(format!(
            "truncation rank {} out of range 1..={}",
            r,
            f.s.len()
        )));
    }
    Ok(SvdFactors { u: f.u.col_block(0, r), s: f.s[..r].to_vec(), vt: f.vt.row_block(0, r) })
}

/// Full SVD with the same convention on the leading min(m, n) triples.
pub fn svd_full<T: Real>(m: &DenseMatrix<T>) -> Result<FullSvd<T>> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument("svd input has non-finite entries".into()));
    }
    let (rows, cols) = m.shape();
    let mut out = if rows >= cols {
        let (u, s, v) = golub_kahan(m)?;
        FullSvd { u, s, vt: v.transpose() }
    } else {
        let (u_t, s, v_t) = golub_kahan(&m.transpose())?;
        // m^T = U' S V'^T implies m = V' S U'^T.
        FullSvd { u: v_t, s, vt: u_t.transpose() }
    };
    apply_sign_convention(&mut out);
    Ok(out)
}

fn apply_sign_convention<T: Real>(f: &mut FullSvd<T>) {
    let p = f.s.len();
    for j in 0..p {
        let mut best = T::zero();
        let mut arg = 0usize;
        for i in 0..f.u.rows() {
            let a = f.u.get(i, j).abs();
            if a > best {
                best = a;
                arg = i;
            }
        }
        if f.u.get(arg, j) < T::zero() {
            for i in 0..f.u.rows() {
                let v = f.u.get(i, j);
                f.u.set(i, j, -v);
            }
            for i in 0..f.vt.cols() {
                let v = f.vt.get(j, i);
                f.vt.set(j, i, -v);
            }
        }
    }
}

/// Householder reflector mapping `x` onto `beta * e1`.
/// Returns `(v, tau, beta)` with `H = I - tau v v^T` and `v` full length.
fn householder<T: Real>(x: &[T]) -> Option<(Vec<T>, T, T)> {
    let norm = {
        let maxabs = x.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if maxabs == T::zero() {
            return None;
        }
        let mut acc = T::zero();
        for &v in x {
            let r = v / maxabs;
            acc += r * r;
        }
        maxabs * acc.sqrt()
    };
    let sign = if x[0] >= T::zero() { T::one() } else { -T::one() };
    let beta = -sign * norm;
    let mut v = x.to_vec();
    v[0] -= beta;
    let vtv = v.iter().fold(T::zero(), |acc, &w| acc + w * w);
    if vtv == T::zero() {
        return None;
    }
    let tau = (T::one() + T::one()) / vtv;
    Some((v, tau, beta))
}

/// Bidiagonalize + QR for a tall matrix (rows >= cols).
/// Returns (U m x m, sigma desc, V n x n) with `a = U diag(sigma) V^T`.
fn golub_kahan<T: Real>(a: &DenseMatrix<T>) -> Result<(DenseMatrix<T>, Vec<T>, DenseMatrix<T>)> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    if n == 0 {
        return Ok((DenseMatrix::identity(m), vec![], DenseMatrix::identity(0)));
    }

    let mut work = a.clone();
    let mut u = DenseMatrix::identity(m);
    let mut v = DenseMatrix::identity(n);
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n.saturating_sub(1)];

    for k in 0..n {
        // Left reflector zeroing work[k+1.., k].
        let col: Vec<T> = (k..m).map(|i| work.get(i, k)).collect();
        if let Some((hv, tau, beta)) = householder(&col) {
            for j in k..n {
                let mut w = T::zero();
                for (idx, &vi) in hv.iter().enumerate() {
                    w += vi * work.get(k + idx, j);
                }
                w *= tau;
                for (idx, &vi) in hv.iter().enumerate() {
                    let cur = work.get(k + idx, j);
                    work.set(k + idx, j, cur - w * vi);
                }
            }
            for i in 0..m {
                let mut w = T::zero();
                for (idx, &vi) in hv.iter().enumerate() {
                    w += u.get(i, k + idx) * vi;
                }
                w *= tau;
                for (idx, &vi) in hv.iter().enumerate() {
                    let cur = u.get(i, k + idx);
                    u.set(i, k + idx, cur - w * vi);
                }
            }
            d[k] = beta;
        } else {
            d[k] = work.get(k, k);
        }

        // Right reflector zeroing work[k, k+2..].
        if k + 1 < n {
            let rowv: Vec<T> = (k + 1..n).map(|j| work.get(k, j)).collect();
            if let Some((hv, tau, beta)) = householder(&rowv) {
                for i in k + 1..m {
                    let mut w = T::zero();
                    for (idx, &vj) in hv.iter().enumerate() {
                        w += work.get(i, k + 1 + idx) * vj;
                    }
                    w *= tau;
                    for (idx, &vj) in hv.iter().enumerate() {
                        let cur = work.get(i, k + 1 + idx);
                        work.set(i, k + 1 + idx, cur - w * vj);
                    }
                }
                for i in 0..n {
                    let mut w = T::zero();
                    for (idx, &vj) in hv.iter().enumerate() {
                        w += v.get(i, k + 1 + idx) * vj;
                    }
                    w *= tau;
                    for (idx, &vj) in hv.iter().enumerate() {
                        let cur = v.get(i, k + 1 + idx);
                        v.set(i, k + 1 + idx, cur - w * vj);
                    }
                }
                e[k] = beta;
            } else {
                e[k] = work.get(k, k + 1);
            }
        }
    }

    bidiagonal_qr(&mut d, &mut e, &mut u, &mut v)?;

    // Non-negative values, sorted non-increasing.
    for i in 0..n {
        if d[i] < T::zero() {
            d[i] = -d[i];
            for r in 0..m {
                let x = u.get(r, i);
                u.set(r, i, -x);
            }
        }
    }
    for i in 0..n {
        let mut arg = i;
        for j in i + 1..n {
            if d[j] > d[arg] {
                arg = j;
            }
        }
        if arg != i {
            d.swap(i, arg);
            for r in 0..m {
                let (x, y) = (u.get(r, i), u.get(r, arg));
                u.set(r, i, y);
                u.set(r, arg, x);
            }
            for r in 0..n {
                let (x, y) = (v.get(r, i), v.get(r, arg));
                v.set(r, i, y);
                v.set(r, arg, x);
            }
        }
    }

    Ok((u, d, v))
}

fn givens<T: Real>(a: T, b: T) -> (T, T) {
    if b == T::zero() {
        return (T::one(), T::zero());
    }
    let r = a.hypot(b);
    (a / r, b / r)
}

fn rotate_cols<T: Real>(m: &mut DenseMatrix<T>, p: usize, q: usize, c: T, s: T) {
    for row in 0..m.rows() {
        let xp = m.get(row, p);
        let xq = m.get(row, q);
        m.set(row, p, c * xp + s * xq);
        m.set(row, q, c * xq - s * xp);
    }
}

/// Implicit-shift QR on the bidiagonal (d, e), accumulating rotations.
fn bidiagonal_qr<T: Real>(
    d: &mut [T],
    e: &mut [T],
    u: &mut DenseMatrix<T>,
    v: &mut DenseMatrix<T>,
) -> Result<()> {
    let n = d.len();
    if n <= 1 {
        return Ok(());
    }
    let eps = T::epsilon();
    let anorm = {
        let mut m = T::zero();
        for &x in d.iter() {
            m = m.max(x.abs());
        }
        for &x in e.iter() {
            m = m.max(x.abs());
        }
        m
    };
    if anorm == T::zero() {
        return Ok(());
    }

    let max_iter = 120 * n;
    let mut iter = 0usize;
    let mut hi = n - 1;

    while hi > 0 {
        if e[hi - 1].abs() <= eps * (d[hi - 1].abs() + d[hi].abs()) + eps * anorm * T::of(1e-3) {
            e[hi - 1] = T::zero();
            hi -= 1;
            continue;
        }
        let mut lo = hi - 1;
        while lo > 0 {
            if e[lo - 1].abs() <= eps * (d[lo - 1].abs() + d[lo].abs()) + eps * anorm * T::of(1e-3) {
                e[lo - 1] = T::zero();
                break;
            }
            lo -= 1;
        }

        iter += 1;
        if iter > max_iter {
            return Err(Error::NumericFailure("bidiagonal QR did not converge".into()));
        }

        // A negligible diagonal entry breaks the shift; chase its off-diagonal
        // off the bottom with left rotations, which splits the problem.
        let mut chased = false;
        for idx in lo..hi {
            if d[idx].abs() <= eps * anorm {
                d[idx] = T::zero();
                let mut z = e[idx];
                e[idx] = T::zero();
                for j in idx + 1..=hi {
                    let (c, s) = givens(d[j], z);
                    d[j] = c * d[j] + s * z;
                    if j < hi {
                        z = -s * e[j];
                        e[j] = c * e[j];
                    }
                    // Left rotation mixes rows j and idx; columns of U follow.
                    for row in 0..u.rows() {
                        let xj = u.get(row, j);
                        let xi = u.get(row, idx);
                        u.set(row, j, c * xj + s * xi);
                        u.set(row, idx, c * xi - s * xj);
                    }
                }
                chased = true;
                break;
            }
        }
        if chased {
            continue;
        }

        // Wilkinson shift from the trailing 2x2 of B^T B.
        let d_hi = d[hi];
        let d_h1 = d[hi - 1];
        let e_h1 = e[hi - 1];
        let e_h2 = if hi >= 2 && hi - 1 > lo { e[hi - 2] } else { T::zero() };
        let t11 = d_h1 * d_h1 + e_h2 * e_h2;
        let t12 = d_h1 * e_h1;
        let t22 = d_hi * d_hi + e_h1 * e_h1;
        let two = T::one() + T::one();
        let diff = (t11 - t22) / two;
        let sgn = if diff >= T::zero() { T::one() } else { -T::one() };
        let denom = diff + sgn * (diff * diff + t12 * t12).sqrt();
        let mu = if denom == T::zero() { t22 } else { t22 - t12 * t12 / denom };

        let mut x = d[lo] * d[lo] - mu;
        let mut z = d[lo] * e[lo];

        for k in lo..hi {
            let (c, s) = givens(x, z);
            if k > lo {
                e[k - 1] = c * x + s * z;
            }
            let dk = d[k];
            let ek = e[k];
            let dk1 = d[k + 1];
            d[k] = c * dk + s * ek;
            e[k] = c * ek - s * dk;
            let bulge = s * dk1;
            d[k + 1] = c * dk1;
            rotate_cols(v, k, k + 1, c, s);

            let (c2, s2) = givens(d[k], bulge);
            d[k] = c2 * d[k] + s2 * bulge;
            let old_ek = e[k];
            let old_dk1 = d[k + 1];
            e[k] = c2 * old_ek + s2 * old_dk1;
            d[k + 1] = c2 * old_dk1 - s2 * old_ek;
            if k + 1 < hi {
                let old_ek1 = e[k + 1];
                x = e[k];
                z = s2 * old_ek1;
                e[k + 1] = c2 * old_ek1;
            }
            rotate_cols(u, k, k + 1, c2, s2);
        }
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(q, lambda)` with eigenvector columns and eigenvalues sorted in
/// non-increasing order; `a = q diag(lambda) q^T`.
pub fn sym_eigen<T: Real>(a: &DenseMatrix<T>) -> Result<(DenseMatrix<T>, Vec<T>)> {
    let (m, n) = a.shape();
    if m != n {
        return Err(Error::InvalidArgument("sym_eigen needs a square matrix".into()));
    }
    if n == 0 {
        return Ok((DenseMatrix::identity(0), vec![]));
    }
    // Symmetrize to wash out round-off asymmetry from Gram products.
    let mut w = DenseMatrix::from_fn(n, n, |i, j| {
        let half = T::of(0.5);
        half * (a.get(i, j) + a.get(j, i))
    });
    let mut q = DenseMatrix::identity(n);
    let fro = w.frobenius_norm();
    if fro == T::zero() {
        return Ok((q, vec![T::zero(); n]));
    }
    let tol = T::epsilon() * fro;

    for _sweep in 0..64 {
        let mut off = T::zero();
        for i in 0..n {
            for j in i + 1..n {
                let x = w.get(i, j);
                off += x * x;
            }
        }
        if (off + off).sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apq = w.get(p, r);
                if apq.abs() <= tol * T::of(1e-3) {
                    continue;
                }
                let app = w.get(p, p);
                let aqq = w.get(r, r);
                let theta = (aqq - app) / (apq * (T::one() + T::one()));
                let t = {
                    let sgn = if theta >= T::zero() { T::one() } else { -T::one() };
                    sgn / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for i in 0..n {
                    let wip = w.get(i, p);
                    let wiq = w.get(i, r);
                    w.set(i, p, c * wip - s * wiq);
                    w.set(i, r, s * wip + c * wiq);
                }
                for j in 0..n {
                    let wpj = w.get(p, j);
                    let wqj = w.get(r, j);
                    w.set(p, j, c * wpj - s * wqj);
                    w.set(r, j, s * wpj + c * wqj);
                }
                for i in 0..n {
                    let qip = q.get(i, p);
                    let qiq = q.get(i, r);
                    q.set(i, p, c * qip - s * qiq);
                    q.set(i, r, s * qip + c * qiq);
                }
            }
        }
    }

    let mut lambda: Vec<T> = (0..n).map(|i| w.get(i, i)).collect();
    for i in 0..n {
        let mut arg = i;
        for j in i + 1..n {
            if lambda[j] > lambda[arg] {
                arg = j;
            }
        }
        if arg != i {
            lambda.swap(i, arg);
            for r in 0..n {
                let (x, y) = (q.get(r, i), q.get(r, arg));
                q.set(r, i, y);
                q.set(r, arg, x);
            }
        }
    }
    // Deterministic eigenvector orientation.
    for j in 0..n {
        let mut best = T::zero();
        let mut argr = 0usize;
        for i in 0..n {
            let v = q.get(i, j).abs();
            if v > best {
                best = v;
                argr = i;
            }
        }
        if q.get(argr, j) < T::zero() {
            for i in 0..n {
                let v = q.get(i, j);
                q.set(i, j, -v);
            }
        }
    }
    Ok((q, lambda))
}

/// Top left singular vectors of a tall-skinny matrix via the n x n Gram
/// matrix. Returns at most `count` orthonormal columns; `deficient` is set
/// when the numeric rank falls short of the request.
#[derive(Debug, Clone)]
pub struct ThinBasis<T> {
    pub basis: DenseMatrix<T>,
    pub sigmas: Vec<T>,
    pub deficient: bool,
}

pub fn top_left_singular<T: Real>(a: &DenseMatrix<T>, count: usize) -> Result<ThinBasis<T>> {
    let gram = a.mul_tn(a)?;
    let (q, lambda) = sym_eigen(&gram)?;
    let smax = lambda.first().copied().unwrap_or_else(T::zero).max(T::zero()).sqrt();
    let rel = T::of(1e-9);
    let mut cols: Vec<Vec<T>> = Vec::new();
    let mut sigmas = Vec::new();
    for j in 0..lambda.len().min(count) {
        let sigma = lambda[j].max(T::zero()).sqrt();
        if smax == T::zero() || sigma <= rel * smax {
            break;
        }
        let mut col = vec![T::zero(); a.rows()];
        for i in 0..a.rows() {
            let mut acc = T::zero();
            for l in 0..a.cols() {
                acc += a.get(i, l) * q.get(l, j);
            }
            col[i] = acc / sigma;
        }
        cols.push(col);
        sigmas.push(sigma);
    }
    // One re-orthonormalization pass keeps the basis clean when singular
    // values cluster.
    for j in 0..cols.len() {
        for l in 0..j {
            let mut dot = T::zero();
            for i in 0..a.rows() {
                dot += cols[l][i] * cols[j][i];
            }
            for i in 0..a.rows() {
                let upd = cols[j][i] - dot * cols[l][i];
                cols[j][i] = upd;
            }
        }
        let norm = cols[j].iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if norm > T::zero() {
            for x in cols[j].iter_mut() {
                *x /= norm;
            }
        }
    }
    let deficient = cols.len() < count;
    let q_out = DenseMatrix::from_fn(a.rows(), cols.len(), |i, j| cols[j][i]);
    Ok(ThinBasis { basis: q_out, sigmas, deficient })
}
