//! Synthetic fine-tuning problems: a pre-trained weight, a low-rank shift
//! with a prescribed spectrum, and data generated noiselessly from the
//! shifted teacher. Linear problems use sub-Gaussian (Gaussian or
//! Rademacher) rows; ReLU problems require Gaussian rows.

use crate::error::{Error, Result};
use crate::io_util::*;
use crate::matops::{op_norm, svd, DenseMatrix, SvdFactors};
use crate::rng::{SeedStream, StreamPurpose};
use crate::scalar::Real;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataDist {
    Gaussian,
    Rademacher,
}

/// How the pre-trained weight is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreWeight {
    /// All zeros. Linear-mode adapter dynamics are invariant to the
    /// pre-trained weight, so this is the cheap default for theory checks.
    Zero,
    /// I.i.d. standard normal entries.
    Gaussian,
    /// Columns uniform on the sphere of the given radius.
    SphereColumns { radius: f64 },
}

/// Non-increasing positive singular values for the shift.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    values: Vec<T>,
}

impl<T: Real> Spectrum<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("spectrum must be non-empty".into()));
        }
        for w in values.windows(2) {
            if w[0] < w[1] {
                return Err(Error::InvalidArgument("spectrum must be non-increasing".into()));
            }
        }
        if values.last().copied().unwrap() <= T::zero() {
            return Err(Error::InvalidArgument("spectrum values must be positive".into()));
        }
        Ok(Self { values })
    }

    /// Geometric spectrum from `kappa * lambda_min` down to `lambda_min`.
    pub fn geometric(kappa: T, lambda_min: T, count: usize) -> Result<Self> {
        if kappa < T::one() || lambda_min <= T::zero() || count == 0 {
            return Err(Error::InvalidArgument(
                "geometric spectrum needs kappa >= 1, lambda_min > 0".into(),
            ));
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let expo = if count == 1 {
                T::one()
            } else {
                T::of(1.0 - i as f64 / (count as f64 - 1.0))
            };
            values.push(lambda_min * kappa.powf(expo));
        }
        Self::new(values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A fully materialized synthetic fine-tuning instance.
#[derive(Debug, Clone)]
pub struct Problem<T> {
    pub model_kind: ModelKind,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub r_star: usize,
    pub w_pre: DenseMatrix<T>,
    pub delta: DenseMatrix<T>,
    pub delta_svd: SvdFactors<T>,
    pub x: DenseMatrix<T>,
    pub y: DenseMatrix<T>,
    pub seed: u64,
    /// When set, gradients use the population covariance (identity) instead
    /// of the empirical data; `x`/`y` are empty.
    pub population_covariance: bool,
}

impl<T: Real> Problem<T> {
    pub fn w_tilde(&self) -> DenseMatrix<T> {
        self.w_pre.add(&self.delta).expect("w_pre and delta share shape")
    }

    pub fn lambda_r_star(&self) -> T {
        self.delta_svd.s[self.r_star - 1]
    }

    pub fn kappa(&self) -> T {
        self.delta_svd.s[0] / self.delta_svd.s[self.r_star - 1]
    }

    /// Measured covariance deviation `||X^T X / N - I||_op` (0 in
    /// population mode).
    pub fn covariance_gap(&self) -> Result<T> {
        if self.population_covariance || self.n == 0 {
            return Ok(T::zero());
        }
        let mut sigma = self.x.mul_tn(&self.x)?;
        let inv_n = T::one() / T::of(self.n as f64);
        for i in 0..self.d {
            for j in 0..self.d {
                let v = sigma.get(i, j) * inv_n - if i == j { T::one() } else { T::zero() };
                sigma.set(i, j, v);
            }
        }
        op_norm(&sigma)
    }
}

/// Configuration for [`make_problem`].
#[derive(Debug, Clone)]
pub struct ProblemConfig<T> {
    pub model_kind: ModelKind,
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub r_star: usize,
    pub spectrum: Spectrum<T>,
    pub data_dist: DataDist,
    pub pre_weight: PreWeight,
    pub population_covariance: bool,
    /// ReLU teacher satisfying the per-neuron balance conditions; replaces
    /// `pre_weight`.
    pub teacher: Option<TeacherSpec>,
    /// Linear-only: synthesize a square design matrix whose empirical
    /// covariance deviates from identity by exactly this operator norm.
    pub covariance_gap: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherSpec {
    pub signal_ratio: f64,
}

/// Rank-`r_star` shift `U diag(spectrum) V^T` whose orthonormal factors come
/// from the SVDs of seeded standard-Gaussian matrices.
pub fn make_shift<T: Real>(
    d: usize,
    k: usize,
    r_star: usize,
    spectrum: &Spectrum<T>,
    seed: u64,
) -> Result<(DenseMatrix<T>, SvdFactors<T>)> {
    if spectrum.len() != r_star {
        return Err(Error::InvalidArgument(format!(
            "spectrum length {} != r_star {}",
            spectrum.len(),
            r_star
        )));
    }
    if r_star == 0 || r_star >= d.min(k) {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= r_star < min(d, k); got r_star={r_star}, d={d}, k={k}"
        )));
    }
    let mut rng = SeedStream::new(seed, StreamPurpose::Shift);
    let gu: DenseMatrix<T> = rng.gaussian_matrix(d, r_star);
    let gv: DenseMatrix<T> = rng.gaussian_matrix(k, r_star);
    let u = svd(&gu)?.u;
    let v = svd(&gv)?.u;
    let mut us = DenseMatrix::zeros(d, r_star);
    for i in 0..d {
        for j in 0..r_star {
            us.set(i, j, u.get(i, j) * spectrum.values()[j]);
        }
    }
    let delta = us.mul_nt(&v)?;
    let factors = SvdFactors { u, s: spectrum.values().to_vec(), vt: v.transpose() };
    Ok((delta, factors))
}

/// N x d data matrix with i.i.d. rows from the requested distribution.
pub fn make_data<T: Real>(d: usize, n: usize, dist: DataDist, seed: u64) -> Result<DenseMatrix<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument("make_data needs n >= 1".into()));
    }
    let mut rng = SeedStream::new(seed, StreamPurpose::Data);
    Ok(match dist {
        DataDist::Gaussian => rng.gaussian_matrix(n, d),
        DataDist::Rademacher => rng.rademacher_matrix(n, d),
    })
}

/// ReLU teacher `(W_pre, Delta)` with per-column signal ratios at most
/// `signal_ratio`: pre-trained columns are drawn uniformly on a common
/// sphere whose radius is sized so that
/// `max(lambda_r*, ||Delta_m||) / ||w_tilde_m|| <= signal_ratio` per column.
pub fn make_nonlinear_teacher<T: Real>(
    d: usize,
    k: usize,
    r_star: usize,
    spectrum: &Spectrum<T>,
    signal_ratio: f64,
    seed: u64,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>, SvdFactors<T>)> {
    if signal_ratio <= 0.0 {
        return Err(Error::InvalidArgument(
            "signal_ratio must be positive (a zero ratio would force Delta = 0)".into(),
        ));
    }
    let (delta, delta_svd) = make_shift(d, k, r_star, spectrum, seed)?;
    let lambda_r = delta_svd.s[r_star - 1];

    let mut col_norms = vec![T::zero(); k];
    for (m, norm) in col_norms.iter_mut().enumerate() {
        let mut acc = T::zero();
        for i in 0..d {
            let v = delta.get(i, m);
            acc += v * v;
        }
        *norm = acc.sqrt();
    }
    let worst_numer = col_norms.iter().fold(lambda_r, |acc, &x| acc.max(x));
    let worst_col = col_norms.iter().fold(T::zero(), |acc, &x| acc.max(x));

    let mut radius = (worst_numer / T::of(signal_ratio) + worst_col) * T::of(1.02);
    let mut rng = SeedStream::new(seed, StreamPurpose::Teacher);
    let raw: DenseMatrix<T> = rng.gaussian_matrix(d, k);

    for _attempt in 0..12 {
        let mut w_pre = DenseMatrix::zeros(d, k);
        for m in 0..k {
            let mut norm = T::zero();
            for i in 0..d {
                let v = raw.get(i, m);
                norm += v * v;
            }
            let norm = norm.sqrt();
            for i in 0..d {
                w_pre.set(i, m, raw.get(i, m) / norm * radius);
            }
        }
        let w_tilde = w_pre.add(&delta)?;
        let mut ok = true;
        for m in 0..k {
            let mut tn = T::zero();
            for i in 0..d {
                let v = w_tilde.get(i, m);
                tn += v * v;
            }
            let tn = tn.sqrt();
            let numer = lambda_r.max(col_norms[m]);
            if numer > T::of(signal_ratio) * tn {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok((w_pre, delta, delta_svd));
        }
        radius = radius * T::of(1.1);
    }
    Err(Error::NumericFailure("could not satisfy the teacher signal ratio".into()))
}

/// Square design matrix (N = d rows) whose empirical covariance is exactly
/// `I + eps * E` for a random symmetric unit-norm `E`. Used for checks that
/// are conditional on a covariance concentration level that i.i.d. sampling
/// cannot reach at desk scale.
pub fn make_design_with_gap<T: Real>(d: usize, eps: f64, seed: u64) -> Result<DenseMatrix<T>> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument("covariance gap must lie in [0, 1)".into()));
    }
    let mut rng = SeedStream::new(seed, StreamPurpose::DesignGap);
    let raw: DenseMatrix<T> = rng.gaussian_matrix(d, d);
    let mut sym = DenseMatrix::zeros(d, d);
    let half = T::of(0.5);
    for i in 0..d {
        for j in 0..d {
            sym.set(i, j, half * (raw.get(i, j) + raw.get(j, i)));
        }
    }
    let norm = op_norm(&sym)?;
    if norm == T::zero() {
        return Err(Error::NumericFailure("degenerate symmetric draw".into()));
    }
    let (q, lambda) = crate::matops::sym_eigen(&sym.scaled(T::one() / norm))?;
    // X = sqrt(N) * Q diag(sqrt(1 + eps * lambda_i)) Q^T with N = d.
    let sqrt_n = T::of(d as f64).sqrt();
    let roots: Vec<T> = lambda
        .iter()
        .map(|&l| (T::one() + T::of(eps) * l).max(T::zero()).sqrt() * sqrt_n)
        .collect();
    let qs = q.mul(&DenseMatrix::diag(&roots))?;
    qs.mul_nt(&q)
}

/// Builds the full instance: weights, shift, data, exact labels.
pub fn make_problem<T: Real>(config: &ProblemConfig<T>, seed: u64) -> Result<Problem<T>> {
    let ProblemConfig { model_kind, d, k, n, r_star, .. } = *config;
    if model_kind == ModelKind::Relu && config.data_dist == DataDist::Rademacher {
        return Err(Error::InvalidArgument(
            "the nonlinear data model requires Gaussian inputs; Rademacher is linear-only".into(),
        ));
    }
    if config.covariance_gap.is_some() && (model_kind != ModelKind::Linear || config.population_covariance) {
        return Err(Error::InvalidArgument("covariance_gap designs are empirical linear instances".into()));
    }
    if config.teacher.is_some() && model_kind != ModelKind::Relu {
        return Err(Error::InvalidArgument("teacher construction applies to the relu model".into()));
    }

    let (w_pre, delta, delta_svd) = if let Some(teacher) = &config.teacher {
        make_nonlinear_teacher(d, k, r_star, &config.spectrum, teacher.signal_ratio, seed)?
    } else {
        let (delta, delta_svd) = make_shift(d, k, r_star, &config.spectrum, seed)?;
        let w_pre = match config.pre_weight {
            PreWeight::Zero => DenseMatrix::zeros(d, k),
            PreWeight::Gaussian => SeedStream::new(seed, StreamPurpose::PreWeight).gaussian_matrix(d, k),
            PreWeight::SphereColumns { radius } => {
                let raw: DenseMatrix<T> =
                    SeedStream::new(seed, StreamPurpose::PreWeight).gaussian_matrix(d, k);
                let mut w = DenseMatrix::zeros(d, k);
                for m in 0..k {
                    let mut norm = T::zero();
                    for i in 0..d {
                        let v = raw.get(i, m);
                        norm += v * v;
                    }
                    let norm = norm.sqrt();
                    for i in 0..d {
                        w.set(i, m, raw.get(i, m) / norm * T::of(radius));
                    }
                }
                w
            }
        };
        (w_pre, delta, delta_svd)
    };

    let (x, y, n_eff) = if config.population_covariance {
        (DenseMatrix::zeros(0, d), DenseMatrix::zeros(0, k), 0)
    } else {
        let x = if let Some(eps) = config.covariance_gap {
            make_design_with_gap::<T>(d, eps, seed)?
        } else {
            make_data::<T>(d, n, config.data_dist, seed)?
        };
        let w_tilde = w_pre.add(&delta)?;
        let pre = x.mul(&w_tilde)?;
        let y = match model_kind {
            ModelKind::Linear => pre,
            ModelKind::Relu => pre.map(|v| v.max(T::zero())),
        };
        let n_eff = x.rows();
        (x, y, n_eff)
    };

    Ok(Problem {
        model_kind,
        d,
        k,
        n: n_eff,
        r_star,
        w_pre,
        delta,
        delta_svd,
        x,
        y,
        seed,
        population_covariance: config.population_covariance,
    })
}

const PROBLEM_MAGIC: &[u8; 8] = b"LORAPRB1";

impl<T: Real> Problem<T> {
    /// Serializes into the self-describing binary container:
    /// magic, version, kind/population bytes, dims, seed, then row-major
    /// little-endian f64 blocks for w_pre, delta, the shift SVD factors,
    /// x, and y.
    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(PROBLEM_MAGIC)?;
        write_u64(&mut w, 1)?;
        write_u8(
            &mut w,
            match self.model_kind {
                ModelKind::Linear => 0,
                ModelKind::Relu => 1,
            },
        )?;
        write_u8(&mut w, u8::from(self.population_covariance))?;
        for v in [self.d, self.k, self.n, self.r_star] {
            write_u64(&mut w, v as u64)?;
        }
        write_u64(&mut w, self.seed)?;
        for m in [&self.w_pre, &self.delta, &self.delta_svd.u] {
            write_block(&mut w, m)?;
        }
        let s64: Vec<f64> = self.delta_svd.s.iter().map(|&v| v.to_f64_lossy()).collect();
        write_f64_slice(&mut w, &s64)?;
        for m in [&self.delta_svd.vt, &self.x, &self.y] {
            write_block(&mut w, m)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        expect_magic(&mut r, PROBLEM_MAGIC)?;
        let version = read_u64(&mut r)?;
        if version != 1 {
            return Err(Error::Io(format!("unsupported problem container version {version}")));
        }
        let model_kind = match read_u8(&mut r)? {
            0 => ModelKind::Linear,
            1 => ModelKind::Relu,
            other => return Err(Error::Io(format!("unknown model kind byte {other}"))),
        };
        let population = read_u8(&mut r)? != 0;
        let d = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        let n = read_u64(&mut r)? as usize;
        let r_star = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let w_pre = read_block(&mut r, d, k)?;
        let delta = read_block(&mut r, d, k)?;
        let u = read_block(&mut r, d, r_star)?;
        let s: Vec<T> = read_f64_vec(&mut r, r_star)?.into_iter().map(T::of).collect();
        let vt = read_block(&mut r, r_star, k)?;
        let x = read_block(&mut r, n, d)?;
        let y = read_block(&mut r, n, k)?;
        Ok(Problem {
            model_kind,
            d,
            k,
            n,
            r_star,
            w_pre,
            delta,
            delta_svd: SvdFactors { u, s, vt },
            x,
            y,
            seed,
            population_covariance: population,
        })
    }

    pub fn save_path(&self, path: &Path) -> Result<()> {
        self.save(std::fs::File::create(path)?)
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        Self::load(std::fs::File::open(path)?)
    }
}

fn write_block<T: Real, W: Write>(w: &mut W, m: &DenseMatrix<T>) -> Result<()> {
    let data: Vec<f64> = m.data().iter().map(|&v| v.to_f64_lossy()).collect();
    write_f64_slice(w, &data)
}

fn read_block<T: Real, R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DenseMatrix<T>> {
    let data = read_f64_vec(r, rows * cols)?;
    Ok(DenseMatrix::from_vec_unchecked(rows, cols, data.into_iter().map(T::of).collect()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::matops::fro_norm;

    pub(crate) fn linear_config(
        d: usize,
        k: usize,
        n: usize,
        r_star: usize,
        spectrum: Vec<f64>,
    ) -> ProblemConfig<f64> {
        ProblemConfig {
            model_kind: ModelKind::Linear,
            d,
            k,
            n,
            r_star,
            spectrum: Spectrum::new(spectrum).unwrap(),
            data_dist: DataDist::Gaussian,
            pre_weight: PreWeight::Gaussian,
            population_covariance: false,
            teacher: None,
            covariance_gap: None,
        }
    }

    #[test]
    fn shift_matches_requested_spectrum() {
        let spectrum = Spectrum::new(vec![40.0, 30.0, 20.0, 10.0]).unwrap();
        let (delta, f) = make_shift::<f64>(100, 100, 4, &spectrum, 3).unwrap();
        let full = svd(&delta).unwrap();
        for (a, b) in full.s.iter().take(4).zip(spectrum.values()) {
            assert!((a - b).abs() < 1e-10 * b, "sigma {a} vs requested {b}");
        }
        assert!(full.s[4] < 1e-10 * full.s[0]);
        assert!((fro_norm(&delta) - 3000f64.sqrt()).abs() < 1e-8);
        assert!((crate::matops::condition_number(&delta, 4).unwrap() - 4.0).abs() < 1e-9);
        // Stored factors reconstruct the shift.
        assert!(f.reconstruct().sub(&delta).unwrap().frobenius_norm() < 1e-10 * fro_norm(&delta));

        let rank1 = Spectrum::new(vec![5.0]).unwrap();
        let (d1, _) = make_shift::<f64>(6, 4, 1, &rank1, 9).unwrap();
        assert!((op_norm(&d1).unwrap() - 5.0).abs() < 1e-10);
    }

    #[test]
    fn determinism_is_bitwise() {
        let cfg = linear_config(20, 15, 50, 3, vec![3.0, 2.0, 1.0]);
        let p1 = make_problem(&cfg, 7).unwrap();
        let p2 = make_problem(&cfg, 7).unwrap();
        assert_eq!(p1.delta.data(), p2.delta.data());
        assert_eq!(p1.x.data(), p2.x.data());
        assert_eq!(p1.y.data(), p2.y.data());
        let p3 = make_problem(&cfg, 8).unwrap();
        assert_ne!(p1.delta.data(), p3.delta.data());
    }

    #[test]
    fn labels_are_exact() {
        let mut cfg = linear_config(10, 6, 30, 2, vec![2.0, 1.0]);
        let p = make_problem(&cfg, 1).unwrap();
        let regen = p.x.mul(&p.w_tilde()).unwrap();
        assert_eq!(regen.data(), p.y.data());

        cfg.model_kind = ModelKind::Relu;
        let p = make_problem(&cfg, 1).unwrap();
        let regen = p.x.mul(&p.w_tilde()).unwrap().map(|v| v.max(0.0));
        assert_eq!(regen.data(), p.y.data());
    }

    #[test]
    fn relu_rejects_rademacher() {
        let mut cfg = linear_config(8, 5, 20, 2, vec![2.0, 1.0]);
        cfg.model_kind = ModelKind::Relu;
        cfg.data_dist = DataDist::Rademacher;
        assert!(matches!(make_problem(&cfg, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_row_data_shape() {
        let x = make_data::<f64>(3, 1, DataDist::Gaussian, 5).unwrap();
        assert_eq!(x.shape(), (1, 3));
        let same = make_data::<f64>(3, 1, DataDist::Gaussian, 5).unwrap();
        assert_eq!(x.data(), same.data());
    }

    #[test]
    fn covariance_concentrates_at_scale() {
        // Desk-scale sanity check of the sub-Gaussian covariance bound:
        // N = 128 d keeps the gap comfortably below 0.25 for most seeds.
        let cfg = linear_config(100, 4, 12800, 2, vec![2.0, 1.0]);
        let mut ok = 0;
        for seed in 0..10u64 {
            let p = make_problem(&cfg, seed).unwrap();
            if p.covariance_gap().unwrap() <= 0.25 {
                ok += 1;
            }
        }
        assert!(ok >= 9, "{ok}/10 seeds concentrated");
    }

    #[test]
    fn design_with_gap_is_exact() {
        for &eps in &[1e-5, 1e-2] {
            let x = make_design_with_gap::<f64>(16, eps, 3).unwrap();
            let mut sigma = x.mul_tn(&x).unwrap().scaled(1.0 / 16.0);
            for i in 0..16 {
                let v = sigma.get(i, i) - 1.0;
                sigma.set(i, i, v);
            }
            let gap = op_norm(&sigma).unwrap();
            assert!((gap - eps).abs() < 1e-12 + 1e-9 * eps, "gap {gap} vs eps {eps}");
        }
    }

    #[test]
    fn teacher_meets_its_own_ratio() {
        let spectrum = Spectrum::geometric(4.0, 1.0, 2).unwrap();
        let ratio = 1.0 / (4.0 * 2.0);
        let (w_pre, delta, f) = make_nonlinear_teacher::<f64>(20, 10, 2, &spectrum, ratio, 11).unwrap();
        let w_tilde = w_pre.add(&delta).unwrap();
        let lambda_r = f.s[1];
        for m in 0..10 {
            let col_d: f64 = (0..20).map(|i| delta.get(i, m).powi(2)).sum::<f64>().sqrt();
            let col_t: f64 = (0..20).map(|i| w_tilde.get(i, m).powi(2)).sum::<f64>().sqrt();
            assert!(lambda_r.max(col_d) / col_t <= ratio + 1e-12);
        }
        assert!(matches!(
            make_nonlinear_teacher::<f64>(20, 10, 2, &spectrum, 0.0, 11),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn container_round_trips() {
        let mut cfg = linear_config(7, 5, 12, 2, vec![3.0, 1.5]);
        cfg.model_kind = ModelKind::Relu;
        let p = make_problem(&cfg, 4).unwrap();
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        let q = Problem::<f64>::load(&buf[..]).unwrap();
        assert_eq!(p.x.data(), q.x.data());
        assert_eq!(p.y.data(), q.y.data());
        assert_eq!(p.delta.data(), q.delta.data());
        assert_eq!(p.delta_svd.s, q.delta_svd.s);
        assert_eq!(p.seed, q.seed);
        assert_eq!(p.model_kind, q.model_kind);
    }
}
