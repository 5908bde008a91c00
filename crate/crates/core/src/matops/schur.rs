//! Block dynamics matrix of the stacked adapter iterate and its Schur
//! factorization. For a d x k gradient G the block matrix
//! `H = [[I_d, eta G], [eta G^T, I_k]]` drives the linearized dynamics;
//! its Schur factors come from the SVD of G, with zero padding to the
//! square case when d != k.

use super::svd::svd_full;
use super::DenseMatrix;
use crate::error::Result;
use crate::scalar::Real;

/// `[[I_d, eta G], [eta G^T, I_k]]`, without padding.
pub fn build_block_h<T: Real>(g: &DenseMatrix<T>, eta: T) -> DenseMatrix<T> {
    let (d, k) = g.shape();
    let n = d + k;
    let mut h = DenseMatrix::identity(n);
    for i in 0..d {
        for j in 0..k {
            let v = eta * g.get(i, j);
            h.set(i, d + j, v);
            h.set(d + j, i, v);
        }
    }
    h
}

/// Zero-pads a rectangular gradient to `s x s` with `s = max(d, k)`.
pub fn pad_gradient<T: Real>(g: &DenseMatrix<T>) -> DenseMatrix<T> {
    let (d, k) = g.shape();
    let s = d.max(k);
    DenseMatrix::from_fn(s, s, |i, j| if i < d && j < k { g.get(i, j) } else { T::zero() })
}

/// Schur factors `(C, T)` of the padded block matrix: `C` orthogonal,
/// `T = diag(I + eta S, I - eta S)` with the padded singular values, and
/// `C T C^T` reconstructs `H` built from the padded gradient.
pub fn schur_factors<T: Real>(g: &DenseMatrix<T>, eta: T) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let (d, k) = g.shape();
    let s = d.max(k);
    let f = svd_full(g)?;

    // Padded singular values and orthogonal factors per the zero-block SVD:
    // the smaller-side factor grows an identity block.
    let mut s_pad = vec![T::zero(); s];
    s_pad[..f.s.len()].copy_from_slice(&f.s);

    let u_pad = if d >= k {
        f.u.clone()
    } else {
        embed_with_identity(&f.u, s)
    };
    let v = f.vt.transpose();
    let v_pad = if k >= d { v } else { embed_with_identity(&v, s) };

    let inv_sqrt2 = T::one() / (T::one() + T::one()).sqrt();
    let mut c = DenseMatrix::zeros(2 * s, 2 * s);
    for i in 0..s {
        for j in 0..s {
            let uij = u_pad.get(i, j) * inv_sqrt2;
            let vij = v_pad.get(i, j) * inv_sqrt2;
            c.set(i, j, uij);
            c.set(i, s + j, -uij);
            c.set(s + i, j, vij);
            c.set(s + i, s + j, vij);
        }
    }

    let mut t = DenseMatrix::zeros(2 * s, 2 * s);
    for i in 0..s {
        t.set(i, i, T::one() + eta * s_pad[i]);
        t.set(s + i, s + i, T::one() - eta * s_pad[i]);
    }
    Ok((c, t))
}

fn embed_with_identity<T: Real>(square: &DenseMatrix<T>, s: usize) -> DenseMatrix<T> {
    let n = square.rows();
    DenseMatrix::from_fn(s, s, |i, j| {
        if i < n && j < n {
            square.get(i, j)
        } else if i == j {
            T::one()
        } else {
            T::zero()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::sym_eigen;
    use crate::rng::{SeedStream, StreamPurpose};

    fn reconstruction_residual(g: &DenseMatrix<f64>, eta: f64) -> f64 {
        let (c, t) = schur_factors(g, eta).unwrap();
        let n = c.rows();
        let ctc = c.mul_tn(&c).unwrap();
        assert!(ctc.sub(&DenseMatrix::identity(n)).unwrap().frobenius_norm() <= 1e-10);
        let h = build_block_h(&pad_gradient(g), eta);
        let rebuilt = c.mul(&t).unwrap().mul_nt(&c).unwrap();
        rebuilt.sub(&h).unwrap().frobenius_norm() / h.frobenius_norm()
    }

    #[test]
    fn zero_gradient_gives_identity() {
        let g: DenseMatrix<f64> = DenseMatrix::zeros(3, 2);
        assert!(build_block_h(&g, 0.7).sub(&DenseMatrix::identity(5)).unwrap().frobenius_norm() < 1e-15);
        let (c, t) = schur_factors(&g, 0.7).unwrap();
        assert!(t.sub(&DenseMatrix::identity(6)).unwrap().frobenius_norm() < 1e-12);
        let ctc = c.mul(&t).unwrap().mul_nt(&c).unwrap();
        assert!(ctc.sub(&DenseMatrix::identity(6)).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn one_by_one_cases() {
        let g = DenseMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let h = build_block_h(&g, 1.0);
        assert_eq!(h.data(), &[1.0, 1.0, 1.0, 1.0]);

        let g2: DenseMatrix<f64> = DenseMatrix::from_vec(1, 1, vec![2.0]).unwrap();
        let (_, t) = schur_factors(&g2, 0.25).unwrap();
        assert!((t.get(0, 0) - 1.5).abs() < 1e-14);
        assert!((t.get(1, 1) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn random_rectangular_reconstruction() {
        let mut rng = SeedStream::new(5, StreamPurpose::Tests);
        let g: DenseMatrix<f64> = rng.gaussian_matrix(4, 3);
        assert!(reconstruction_residual(&g, 0.3) < 1e-10);
        let g2: DenseMatrix<f64> = rng.gaussian_matrix(2, 5);
        assert!(reconstruction_residual(&g2, 0.9) < 1e-10);
    }

    #[test]
    fn eigenvalues_are_one_plus_minus_eta_sigma() {
        // Independent oracle: Jacobi eigen-decomposition of the symmetric H.
        let mut rng = SeedStream::new(6, StreamPurpose::Tests);
        let g: DenseMatrix<f64> = rng.gaussian_matrix(3, 2);
        let eta = 0.5;
        let h = build_block_h(&g, eta);
        let (_, mut eig) = sym_eigen(&h).unwrap();
        let f = crate::matops::svd(&g).unwrap();
        let mut expected: Vec<f64> = vec![1.0; 5];
        for (i, &s) in f.s.iter().enumerate() {
            expected[i] = 1.0 + eta * s;
            expected[4 - i] = 1.0 - eta * s;
        }
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in eig.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-9, "eigenvalue {a} vs expected {b}");
        }
    }
}
