//! Adapter state and the initialization strategies under study: standard
//! Gaussian/zero init, spectral init from the one-step full gradient, and
//! the two gradient-alignment baselines (subtracted-offset and fixed-subspace).

use crate::error::{Error, Result};
use crate::io_util::*;
use crate::matops::{svd, DenseMatrix};
use crate::rng::{SeedStream, StreamPurpose};
use crate::scalar::Real;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Frozen subspace metadata for the fixed-subspace baseline: the trainer
/// only ever moves the r x r cores, so `a = u_fix * Ra` and `b = Rb * v_fix^T`
/// hold throughout training.
#[derive(Debug, Clone)]
pub struct FrozenSubspace<T> {
    pub u_fix: DenseMatrix<T>,
    pub v_fix: DenseMatrix<T>,
}

/// Trainable low-rank pair plus optional baseline metadata.
#[derive(Debug, Clone)]
pub struct AdapterPair<T> {
    pub a: DenseMatrix<T>,
    pub b: DenseMatrix<T>,
    pub rank: usize,
    /// Effective multiplier: the adapted weight is
    /// `W + frozen_offset + scaling * A * B`.
    pub scaling: T,
    /// Subtracted-init offset (the offset baseline records
    /// `-scaling * A0 * B0` here so the effective weight starts at `W`).
    pub frozen_offset: Option<DenseMatrix<T>>,
    pub frozen_subspace: Option<FrozenSubspace<T>>,
}

impl<T: Real> AdapterPair<T> {
    pub fn new(a: DenseMatrix<T>, b: DenseMatrix<T>) -> Result<Self> {
        if a.cols() != b.rows() {
            return Err(Error::ShapeMismatch { op: "adapter", lhs: a.shape(), rhs: b.shape() });
        }
        let rank = a.cols();
        Ok(Self { a, b, rank, scaling: T::one(), frozen_offset: None, frozen_subspace: None })
    }

    pub fn d(&self) -> usize {
        self.a.rows()
    }

    pub fn k(&self) -> usize {
        self.b.cols()
    }

    /// `scaling * A * B`
    pub fn product(&self) -> DenseMatrix<T> {
        self.a.mul(&self.b).expect("adapter shapes are consistent").scaled(self.scaling)
    }

    /// `frozen_offset + scaling * A * B`: the full deviation applied to the
    /// pre-trained weight.
    pub fn effective_shift(&self) -> DenseMatrix<T> {
        let mut shift = self.product();
        if let Some(off) = &self.frozen_offset {
            shift = shift.add(off).expect("offset shape matches");
        }
        shift
    }

    pub fn effective_weight(&self, w_pre: &DenseMatrix<T>) -> DenseMatrix<T> {
        w_pre.add(&self.effective_shift()).expect("weight shape matches")
    }

    /// `||A^T A - B B^T||_op` would need an SVD; the raw difference is
    /// enough for callers that take norms themselves.
    pub fn balance_difference(&self) -> DenseMatrix<T> {
        let ata = self.a.mul_tn(&self.a).expect("square");
        let bbt = self.b.mul_nt(&self.b).expect("square");
        ata.sub(&bbt).expect("same rank")
    }
}

/// Initialization strategy. `rank` is the adapter rank r.
#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec<T> {
    pub rank: usize,
    pub kind: InitKind<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitKind<T> {
    /// `A0 ~ N(0, alpha^2)`, `B0 = 0`.
    LoraRandom { alpha: T },
    /// Scaled top-r singular factors of the one-step full gradient.
    /// `normalize_top` divides the singular values by the top one first
    /// (the shipped-algorithm convention); theory checks leave it off.
    Spectral { gamma: T, normalize_top: bool, grad_batch: Option<usize> },
    /// Offset baseline: `A0` from the top-r left factors, `B0` from the
    /// (r+1)..2r right factors, and the initial product subtracted from the
    /// frozen weight.
    LoraGa { stable_c: T, lora_alpha: T, grad_batch: Option<usize> },
    /// Fixed-subspace baseline: factors pinned to the top-r subspaces of
    /// the one-step gradient, only the r x r cores trainable.
    LoraSb { grad_batch: Option<usize> },
}

impl<T: Real> InitKind<T> {
    pub fn grad_batch(&self) -> Option<usize> {
        match self {
            InitKind::LoraRandom { .. } => None,
            InitKind::Spectral { grad_batch, .. }
            | InitKind::LoraGa { grad_batch, .. }
            | InitKind::LoraSb { grad_batch } => *grad_batch,
        }
    }
}

/// `A0 ~ N(0, alpha^2)` i.i.d., `B0 = 0` exactly.
pub fn init_lora_random<T: Real>(
    d: usize,
    k: usize,
    r: usize,
    alpha: T,
    seed: u64,
) -> Result<AdapterPair<T>> {
    if alpha <= T::zero() {
        return Err(Error::InvalidArgument("lora_random needs alpha > 0".into()));
    }
    let mut rng = SeedStream::new(seed, StreamPurpose::Init);
    let a = rng.gaussian_matrix::<T>(d, r).scaled(alpha);
    let b = DenseMatrix::zeros(r, k);
    AdapterPair::new(a, b)
}

/// Spectral initialization from the one-step full gradient:
/// `A0 = sqrt(gamma) U_r S_r^(1/2)`, `B0 = sqrt(gamma) S_r^(1/2) V_r^T`.
/// Always balanced: `A0^T A0 == B0 B0^T`.
pub fn init_spectral<T: Real>(
    g_natural: &DenseMatrix<T>,
    r: usize,
    gamma: T,
    normalize_top: bool,
) -> Result<AdapterPair<T>> {
    let (d, k) = g_natural.shape();
    if r == 0 || r > d.min(k) {
        return Err(Error::InvalidArgument(format!("rank {r} out of range for {d}x{k} gradient")));
    }
    let f = svd(g_natural)?;
    let top = f.s[0];
    if top <= T::zero() {
        return Err(Error::DegenerateInput("spectral init of a zero gradient".into()));
    }
    // Triples past the numeric rank become exact zero columns; square roots
    // of round-off-level singular values would otherwise inject noise at
    // the sqrt(eps) scale.
    let rank_cut = T::of(1e-12) * top;
    let scale = gamma.sqrt();
    let mut a = DenseMatrix::zeros(d, r);
    let mut b = DenseMatrix::zeros(r, k);
    for j in 0..r {
        if f.s[j] <= rank_cut {
            break;
        }
        let s = if normalize_top { f.s[j] / top } else { f.s[j] };
        let root = s.max(T::zero()).sqrt() * scale;
        for i in 0..d {
            a.set(i, j, f.u.get(i, j) * root);
        }
        for i in 0..k {
            b.set(j, i, f.vt.get(j, i) * root);
        }
    }
    AdapterPair::new(a, b)
}

/// Offset baseline init: `A0 = -(k^(1/4)/c) U_(1..r)`,
/// `B0 = (k^(1/4)/c) V_(r+1..2r)^T`, with
/// `frozen_offset = -(lora_alpha/sqrt(r)) A0 B0` so the effective weight
/// equals the pre-trained weight at step 0.
pub fn init_lora_ga<T: Real>(
    g_natural: &DenseMatrix<T>,
    r: usize,
    k_out: usize,
    stable_c: T,
    lora_alpha: T,
) -> Result<AdapterPair<T>> {
    let (d, k) = g_natural.shape();
    if r == 0 || 2 * r > d.min(k) {
        return Err(Error::InvalidArgument(format!("offset init needs 2r <= min(d, k); r={r}, d={d}, k={k}")));
    }
    if stable_c <= T::zero() {
        return Err(Error::InvalidArgument("stable_c must be positive".into()));
    }
    let f = svd(g_natural)?;
    if f.numeric_rank(T::of(1e-12)) == 0 {
        return Err(Error::DegenerateInput("offset init of a zero gradient".into()));
    }
    let scale = T::of(k_out as f64).powf(T::of(0.25)) / stable_c;
    let a = f.u.col_block(0, r).scaled(-scale);
    let b = f.vt.row_block(r, 2 * r).scaled(scale);
    let mut pair = AdapterPair::new(a, b)?;
    pair.scaling = lora_alpha / T::of(r as f64).sqrt();
    let offset = pair.a.mul(&pair.b)?.scaled(-pair.scaling);
    pair.frozen_offset = Some(offset);
    Ok(pair)
}

/// Fixed-subspace baseline init: factors pinned to the top-r singular
/// subspaces of the gradient with the symmetric square-root core split, so
/// the initial product is the best rank-r approximation of the gradient.
pub fn init_lora_sb<T: Real>(g_natural: &DenseMatrix<T>, r: usize) -> Result<AdapterPair<T>> {
    let (d, k) = g_natural.shape();
    if r == 0 || r > d.min(k) {
        return Err(Error::InvalidArgument(format!("rank {r} out of range for {d}x{k} gradient")));
    }
    let f = svd(g_natural)?;
    if f.numeric_rank(T::of(1e-12)) == 0 {
        return Err(Error::DegenerateInput("fixed-subspace init of a zero gradient".into()));
    }
    let u_fix = f.u.col_block(0, r);
    let v_fix = f.vt.row_block(0, r).transpose();
    let rank_cut = T::of(1e-12) * f.s[0];
    let roots: Vec<T> =
        f.s[..r].iter().map(|&s| if s > rank_cut { s.sqrt() } else { T::zero() }).collect();
    let core = DenseMatrix::diag(&roots);
    let a = u_fix.mul(&core)?;
    let b = core.mul_tn(&v_fix.transpose())?;
    let mut pair = AdapterPair::new(a, b)?;
    pair.frozen_subspace = Some(FrozenSubspace { u_fix, v_fix });
    Ok(pair)
}

const ADAPTER_MAGIC: &[u8; 8] = b"LORAADP1";

impl<T: Real> AdapterPair<T> {
    /// Checkpoint in the same binary container family as problems.
    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(ADAPTER_MAGIC)?;
        write_u64(&mut w, 1)?;
        for v in [self.d(), self.rank, self.k()] {
            write_u64(&mut w, v as u64)?;
        }
        write_f64_slice(&mut w, &[self.scaling.to_f64_lossy()])?;
        write_u8(&mut w, u8::from(self.frozen_offset.is_some()))?;
        write_u8(&mut w, u8::from(self.frozen_subspace.is_some()))?;
        write_matrix(&mut w, &self.a)?;
        write_matrix(&mut w, &self.b)?;
        if let Some(off) = &self.frozen_offset {
            write_matrix(&mut w, off)?;
        }
        if let Some(sub) = &self.frozen_subspace {
            write_matrix(&mut w, &sub.u_fix)?;
            write_matrix(&mut w, &sub.v_fix)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        expect_magic(&mut r, ADAPTER_MAGIC)?;
        let version = read_u64(&mut r)?;
        if version != 1 {
            return Err(Error::Io(format!("unsupported adapter container version {version}")));
        }
        let d = read_u64(&mut r)? as usize;
        let rank = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        let scaling = T::of(read_f64_vec(&mut r, 1)?[0]);
        let has_offset = read_u8(&mut r)? != 0;
        let has_subspace = read_u8(&mut r)? != 0;
        let a = read_matrix(&mut r, d, rank)?;
        let b = read_matrix(&mut r, rank, k)?;
        let frozen_offset = if has_offset { Some(read_matrix(&mut r, d, k)?) } else { None };
        let frozen_subspace = if has_subspace {
            Some(FrozenSubspace { u_fix: read_matrix(&mut r, d, rank)?, v_fix: read_matrix(&mut r, k, rank)? })
        } else {
            None
        };
        Ok(Self { a, b, rank, scaling, frozen_offset, frozen_subspace })
    }

    pub fn save_path(&self, path: &Path) -> Result<()> {
        self.save(std::fs::File::create(path)?)
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        Self::load(std::fs::File::open(path)?)
    }
}

fn write_matrix<T: Real, W: Write>(w: &mut W, m: &DenseMatrix<T>) -> Result<()> {
    let data: Vec<f64> = m.data().iter().map(|&v| v.to_f64_lossy()).collect();
    write_f64_slice(w, &data)
}

fn read_matrix<T: Real, R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DenseMatrix<T>> {
    let data = read_f64_vec(r, rows * cols)?;
    Ok(DenseMatrix::from_vec_unchecked(rows, cols, data.into_iter().map(T::of).collect()))
}
