//! Property suites for the dense kernels: factorization round-trips,
//! optimal truncation, pseudo-inverse identities, and principal angles.

use lora_dyn_core::matops::{
    fro_norm, op_norm, orthonormal_complement, principal_angle_op, pseudo_inverse, svd,
    truncate_rank, DenseMatrix,
};
use lora_dyn_core::rng::{SeedStream, StreamPurpose};
use proptest::prelude::*;

type Mat = DenseMatrix<f64>;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Mat {
    SeedStream::new(seed, StreamPurpose::Tests).gaussian_matrix(rows, cols)
}

#[test]
fn svd_round_trip_across_shapes() {
    // 200 random matrices over shapes {2..16} x {2..16}.
    let mut rng = SeedStream::new(424242, StreamPurpose::Tests);
    for case in 0..200u64 {
        let rows = 2 + (rng.next_u64() % 15) as usize;
        let cols = 2 + (rng.next_u64() % 15) as usize;
        let m: Mat = rng.gaussian_matrix(rows, cols);
        let f = svd(&m).unwrap();
        let resid = fro_norm(&f.reconstruct().sub(&m).unwrap());
        assert!(resid <= 1e-10 * fro_norm(&m), "case {case} ({rows}x{cols}): residual {resid:.3e}");
        let p = rows.min(cols);
        let utu = f.u.mul_tn(&f.u).unwrap();
        assert!(fro_norm(&utu.sub(&DenseMatrix::identity(p)).unwrap()) <= 1e-10);
        let vvt = f.vt.mul_nt(&f.vt).unwrap();
        assert!(fro_norm(&vvt.sub(&DenseMatrix::identity(p)).unwrap()) <= 1e-10);
        for w in f.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(f.s.iter().all(|&s| s >= 0.0));
    }
}

#[test]
fn eckart_young_tail_identity() {
    for seed in 0..20u64 {
        let m = random_matrix(9, 7, seed);
        let f = svd(&m).unwrap();
        for r in 1..7 {
            let t = truncate_rank(&f, r).unwrap();
            let resid = fro_norm(&m.sub(&t.reconstruct()).unwrap());
            let tail: f64 = f.s[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
            assert!((resid - tail).abs() <= 1e-10 * f.s[0].max(1.0), "seed {seed} r {r}");
        }
    }
}

#[test]
fn penrose_identities_on_rank_deficient_input() {
    // Random rank-2 5x3 matrix: all four Moore-Penrose identities to 1e-9.
    let left = random_matrix(5, 2, 11);
    let right = random_matrix(2, 3, 12);
    let m = left.mul(&right).unwrap();
    let p = pseudo_inverse(&m, 1e-12).unwrap();
    let mpm = m.mul(&p).unwrap().mul(&m).unwrap();
    assert!(fro_norm(&mpm.sub(&m).unwrap()) <= 1e-9);
    let pmp = p.mul(&m).unwrap().mul(&p).unwrap();
    assert!(fro_norm(&pmp.sub(&p).unwrap()) <= 1e-9);
    let mp = m.mul(&p).unwrap();
    assert!(fro_norm(&mp.sub(&mp.transpose()).unwrap()) <= 1e-9);
    let pm = p.mul(&m).unwrap();
    assert!(fro_norm(&pm.sub(&pm.transpose()).unwrap()) <= 1e-9);
}

#[test]
fn principal_angle_cross_check_and_symmetry() {
    // Independent oracle: the statistic equals the largest singular value
    // of the cross matrix computed by a full SVD.
    let qa = svd(&random_matrix(10, 3, 21)).unwrap().u;
    let qb = svd(&random_matrix(10, 3, 22)).unwrap().u;
    let qa_perp = orthonormal_complement(&qa).unwrap();
    let angle = principal_angle_op(&qa_perp, &qb).unwrap();
    let cross = qa_perp.mul_tn(&qb).unwrap();
    let oracle = svd(&cross).unwrap().s[0];
    assert!((angle - oracle).abs() <= 1e-12);
    assert!(angle <= 1.0 + 1e-10);

    // Swapping complementary roles between equal-dimension subspaces in the
    // same ambient space yields the same value.
    let qb_perp = orthonormal_complement(&qb).unwrap();
    let swapped = principal_angle_op(&qb_perp, &qa).unwrap();
    assert!((angle - swapped).abs() <= 1e-10, "{angle} vs {swapped}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Norms and pseudo-inverse behave consistently on random inputs.
    #[test]
    fn norms_are_consistent(seed in 0u64..5000, rows in 2usize..10, cols in 2usize..10) {
        let m = random_matrix(rows, cols, seed);
        let op = op_norm(&m).unwrap();
        let fro = fro_norm(&m);
        prop_assert!(op <= fro + 1e-12);
        prop_assert!(fro <= op * (rows.min(cols) as f64).sqrt() + 1e-9);
    }

    #[test]
    fn pseudo_inverse_round_trips_full_rank(seed in 0u64..5000, n in 2usize..7) {
        // Gaussian square matrices are almost surely well-conditioned enough.
        let m = random_matrix(n, n, seed);
        if op_norm(&m).unwrap() > 1e-6 {
            let p = pseudo_inverse(&m, 1e-12).unwrap();
            let eye = m.mul(&p).unwrap();
            let err = fro_norm(&eye.sub(&DenseMatrix::identity(n)).unwrap());
            // Tolerance scales with the (random) condition number.
            let f = svd(&m).unwrap();
            let cond = f.s[0] / f.s[n - 1].max(1e-300);
            prop_assert!(err <= 1e-11 * cond.max(1.0) * (n as f64));
        }
    }
}
