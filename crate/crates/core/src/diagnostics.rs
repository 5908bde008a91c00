//! Per-step metrics, trajectory records, and assumption verifiers.
//!
//! A [`MetricsEngine`] caches the SVD-derived bases (one-step-gradient
//! subspaces and their complements, the shift's right null space) once per
//! run so that per-record work stays proportional to the adapter rank.

use crate::adapters::AdapterPair;
use crate::error::{Error, Result};
use crate::matops::{
    fro_norm, op_norm, orthonormal_complement, orthonormalize_columns, svd, svd_full, sym_eigen,
    top_left_singular, DenseMatrix,
};
use crate::scalar::Real;
use crate::synth::{ModelKind, Problem};
use std::io::Write;

/// One sampled step of a training run.
#[derive(Debug, Clone)]
pub struct StepRecord<T> {
    pub step: usize,
    pub loss: T,
    /// `||shift - Delta||_F` where shift is the adapter's effective weight
    /// deviation.
    pub risk_fro: T,
    pub risk_op: T,
    /// `||U_{r*,perp}(G)^T U_{r*}(A_t)||_op`
    pub angle_a: T,
    /// Right-side analogue on `B_t`.
    pub angle_b: T,
    /// `||B_t V_perp||_F` against the shift's right null space.
    pub b_vperp: T,
    /// `||A^T A - B B^T||_op`
    pub balance_gap: T,
    pub sigma_r_a: T,
    pub sigma_r_b: T,
    /// `||J + 1/2 (A B - Delta)||_F`, the deviation of the empirical
    /// teacher-residual operator from its linearized signal term
    /// (relu mode only).
    pub xi_norm: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Diverged { step: usize },
    Aborted,
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub config_hash: u64,
    pub records: Vec<StepRecord<T>>,
    pub outcome: Outcome,
}

impl<T: Real> Trajectory<T> {
    pub fn final_record(&self) -> Option<&StepRecord<T>> {
        self.records.last()
    }
}

/// Norms of the adapter's effective shift minus the true shift.
pub fn risk<T: Real>(adapter: &AdapterPair<T>, delta: &DenseMatrix<T>) -> Result<(T, T)> {
    let shift = adapter.effective_shift();
    let resid = shift.sub(delta)?;
    Ok((fro_norm(&resid), op_norm(&resid)?))
}

/// Alignment diagnostics of an adapter against a one-step gradient; when the
/// factor rank falls below `r_star` the angle is computed on the available
/// directions and flagged.
#[derive(Debug, Clone)]
pub struct AlignmentMetrics<T> {
    pub angle_a: T,
    pub angle_b: T,
    /// `||B V_{r*,perp}(G)||_F` (the engine variant measures against the
    /// true shift's null space instead).
    pub b_vperp: T,
    pub a_rank_deficient: bool,
    pub b_rank_deficient: bool,
}

pub fn alignment_metrics<T: Real>(
    adapter: &AdapterPair<T>,
    g_natural: &DenseMatrix<T>,
    r_star: usize,
) -> Result<AlignmentMetrics<T>> {
    let full = svd_full(g_natural)?;
    if full.compact().numeric_rank(T::of(1e-10)) < r_star {
        return Err(Error::DegenerateInput("gradient rank below r_star".into()));
    }
    let u_perp = full.u.col_block(r_star, full.u.cols());
    let v = full.vt.transpose();
    let v_perp = v.col_block(r_star, v.cols());
    let (angle_a, a_def) = subspace_angle(&u_perp, &adapter.a, r_star)?;
    let (angle_b, b_def) = subspace_angle(&v_perp, &adapter.b.transpose(), r_star)?;
    let b_vperp = fro_norm(&adapter.b.mul(&v_perp)?);
    Ok(AlignmentMetrics { angle_a, angle_b, b_vperp, a_rank_deficient: a_def, b_rank_deficient: b_def })
}

/// Ablation variant of [`alignment_metrics`]: angles measured against the
/// true shift's singular subspaces instead of the realized one-step
/// gradient's. Strips the covariance-noise rotation of the reference frame
/// out of the statistic.
pub fn alignment_metrics_vs_shift<T: Real>(
    adapter: &AdapterPair<T>,
    delta_svd: &crate::matops::SvdFactors<T>,
    r_star: usize,
) -> Result<AlignmentMetrics<T>> {
    if delta_svd.s.len() < r_star {
        return Err(Error::DegenerateInput("shift rank below r_star".into()));
    }
    let u = delta_svd.u.col_block(0, r_star);
    let v = delta_svd.vt.row_block(0, r_star).transpose();
    let u_perp = orthonormal_complement(&u)?;
    let v_perp = orthonormal_complement(&v)?;
    let (angle_a, a_def) = subspace_angle(&u_perp, &adapter.a, r_star)?;
    let (angle_b, b_def) = subspace_angle(&v_perp, &adapter.b.transpose(), r_star)?;
    let b_vperp = fro_norm(&adapter.b.mul(&v_perp)?);
    Ok(AlignmentMetrics { angle_a, angle_b, b_vperp, a_rank_deficient: a_def, b_rank_deficient: b_def })
}

/// `||perp^T U_{r*}(factor)||_op` with the top-`r_star` left singular basis
/// of `factor`; returns the deficiency flag when fewer directions exist.
fn subspace_angle<T: Real>(
    perp: &DenseMatrix<T>,
    factor: &DenseMatrix<T>,
    r_star: usize,
) -> Result<(T, bool)> {
    let thin = top_left_singular(factor, r_star)?;
    if thin.basis.cols() == 0 {
        return Ok((T::zero(), true));
    }
    let cross = perp.mul_tn(&thin.basis)?;
    let top = top_left_singular(&cross, 1)?;
    let angle = top.sigmas.first().copied().unwrap_or_else(T::zero);
    Ok((angle, thin.deficient))
}

/// Ratios of the per-neuron balance conditions for the nonlinear teacher.
#[derive(Debug, Clone, Copy)]
pub struct Assumption41Report<T> {
    /// `max_m ||W_tilde||_op / ||w_tilde_m||`
    pub balance_ratio: T,
    /// `max_m max(lambda_r*, ||Delta_m||) / ||w_tilde_m||`
    pub signal_ratio: T,
    /// Set when the shift is numerically zero, which makes the second ratio
    /// vacuous.
    pub degenerate_shift: bool,
}

impl<T: Real> Assumption41Report<T> {
    pub fn passes(&self, balance_threshold: T, signal_threshold: T) -> bool {
        !self.degenerate_shift && self.balance_ratio <= balance_threshold && self.signal_ratio <= signal_threshold
    }
}

pub fn verify_assumption_41<T: Real>(
    w_tilde: &DenseMatrix<T>,
    delta: &DenseMatrix<T>,
) -> Result<Assumption41Report<T>> {
    if w_tilde.shape() != delta.shape() {
        return Err(Error::ShapeMismatch { op: "verify_assumption_41", lhs: w_tilde.shape(), rhs: delta.shape() });
    }
    let (d, k) = w_tilde.shape();
    let w_op = op_norm(w_tilde)?;
    let f = svd(delta)?;
    let rank = f.numeric_rank(T::of(1e-12));
    let degenerate = rank == 0;
    let lambda_r = if degenerate { T::zero() } else { f.s[rank - 1] };
    let mut balance = T::zero();
    let mut signal = T::zero();
    for m in 0..k {
        let mut tn = T::zero();
        let mut dn = T::zero();
        for i in 0..d {
            let t = w_tilde.get(i, m);
            let dd = delta.get(i, m);
            tn += t * t;
            dn += dd * dd;
        }
        let tn = tn.sqrt();
        if tn == T::zero() {
            return Err(Error::DegenerateInput(format!("teacher column {m} is zero")));
        }
        balance = balance.max(w_op / tn);
        signal = signal.max(lambda_r.max(dn.sqrt()) / tn);
    }
    Ok(Assumption41Report { balance_ratio: balance, signal_ratio: signal, degenerate_shift: degenerate })
}

/// State shared by all records of one run.
pub struct MetricsEngine<T> {
    delta: DenseMatrix<T>,
    w_tilde: DenseMatrix<T>,
    u_delta: DenseMatrix<T>,
    v_perp_delta: DenseMatrix<T>,
    u_perp_g: DenseMatrix<T>,
    v_perp_g: DenseMatrix<T>,
    r_star: usize,
    relu: bool,
}

impl<T: Real> MetricsEngine<T> {
    /// Caches the shift subspaces and the one-step-gradient complements.
    pub fn new(problem: &Problem<T>, g_natural: &DenseMatrix<T>) -> Result<Self> {
        let r_star = problem.r_star;
        let gf = svd_full(g_natural)?;
        let split = r_star.min(gf.s.len());
        let u_perp_g = gf.u.col_block(split, gf.u.cols());
        let vg = gf.vt.transpose();
        let v_perp_g = vg.col_block(split, vg.cols());
        let v_delta = problem.delta_svd.vt.transpose();
        let v_perp_delta = orthonormal_complement(&v_delta)?;
        Ok(Self {
            delta: problem.delta.clone(),
            w_tilde: problem.w_tilde(),
            u_delta: problem.delta_svd.u.clone(),
            v_perp_delta,
            u_perp_g,
            v_perp_g,
            r_star,
            relu: problem.model_kind == ModelKind::Relu,
        })
    }

    /// Builds the record for one step. `factors` carries the adapter when
    /// one exists (full fine-tuning has none); `grad_full` is the loss
    /// gradient at the effective weight, used for the relu residual
    /// diagnostic.
    pub fn record(
        &self,
        step: usize,
        loss: T,
        shift: &DenseMatrix<T>,
        factors: Option<&AdapterPair<T>>,
        grad_full: Option<&DenseMatrix<T>>,
    ) -> Result<StepRecord<T>> {
        let resid = shift.sub(&self.delta)?;
        let risk_fro = fro_norm(&resid);
        let risk_op = match factors {
            Some(adapter) => {
                // The residual's columns lie inside span(A) + span(U_Delta)
                // (+ the offset's column span, when one is frozen in), so the
                // operator norm comes from a small projected SVD.
                let mut candidates = adapter.a.hstack(&self.u_delta)?;
                if let Some(off) = &adapter.frozen_offset {
                    let off_basis = top_left_singular(off, adapter.rank)?;
                    candidates = candidates.hstack(&off_basis.basis)?;
                }
                let q = orthonormalize_columns(&candidates);
                let projected = q.mul_tn(&resid)?;
                let top = top_left_singular(&projected.transpose(), 1)?;
                top.sigmas.first().copied().unwrap_or_else(T::zero)
            }
            None => op_norm(&resid)?,
        };

        let (angle_a, angle_b, b_vperp, balance_gap, sigma_r_a, sigma_r_b) = match factors {
            Some(adapter) => {
                let (angle_a, _) = subspace_angle(&self.u_perp_g, &adapter.a, self.r_star)?;
                let bt = adapter.b.transpose();
                let (angle_b, _) = subspace_angle(&self.v_perp_g, &bt, self.r_star)?;
                let b_vperp = fro_norm(&adapter.b.mul(&self.v_perp_delta)?);
                let balance = adapter.balance_difference();
                let (_, eig) = sym_eigen(&balance)?;
                let balance_gap = eig.iter().fold(T::zero(), |m, &l| m.max(l.abs()));
                let sa = top_left_singular(&adapter.a, self.r_star)?;
                let sb = top_left_singular(&bt, self.r_star)?;
                let sigma_r_a = if sa.sigmas.len() == self.r_star {
                    sa.sigmas[self.r_star - 1]
                } else {
                    T::zero()
                };
                let sigma_r_b = if sb.sigmas.len() == self.r_star {
                    sb.sigmas[self.r_star - 1]
                } else {
                    T::zero()
                };
                (angle_a, angle_b, b_vperp, balance_gap, sigma_r_a, sigma_r_b)
            }
            None => {
                // Full fine-tuning: measure the shift matrix itself.
                let (angle_a, _) = subspace_angle(&self.u_perp_g, shift, self.r_star)?;
                let shift_t = shift.transpose();
                let (angle_b, _) = subspace_angle(&self.v_perp_g, &shift_t, self.r_star)?;
                let b_vperp = fro_norm(&shift.mul(&self.v_perp_delta)?);
                let thin = top_left_singular(shift, self.r_star)?;
                let sigma = if thin.sigmas.len() == self.r_star {
                    thin.sigmas[self.r_star - 1]
                } else {
                    T::zero()
                };
                (angle_a, angle_b, b_vperp, T::zero(), sigma, sigma)
            }
        };

        let xi_norm = if self.relu {
            grad_full.map(|g| {
                // J = -grad; Xi = J + 1/2 (W - W_tilde) = 1/2 resid - grad.
                let mut xi = resid.scaled(T::of(0.5));
                xi.add_scaled(g, -T::one()).expect("shapes match");
                fro_norm(&xi)
            })
        } else {
            None
        };

        Ok(StepRecord {
            step,
            loss,
            risk_fro,
            risk_op,
            angle_a,
            angle_b,
            b_vperp,
            balance_gap,
            sigma_r_a,
            sigma_r_b,
            xi_norm,
        })
    }

    pub fn w_tilde(&self) -> &DenseMatrix<T> {
        &self.w_tilde
    }
}

/// CSV header, fixed column order.
pub const CSV_HEADER: &str =
    "step,loss,risk_fro,risk_op,angle_a,angle_b,b_vperp,balance_gap,sigma_r_a,sigma_r_b,xi_norm";

/// Writes the trajectory in the canonical CSV layout; the relu-only column
/// is left empty in linear mode.
pub fn write_csv<T: Real, W: Write>(traj: &Trajectory<T>, mut w: W) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &traj.records {
        let xi = r.xi_norm.map(|v| format!("{}", v.to_f64_lossy())).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.loss.to_f64_lossy(),
            r.risk_fro.to_f64_lossy(),
            r.risk_op.to_f64_lossy(),
            r.angle_a.to_f64_lossy(),
            r.angle_b.to_f64_lossy(),
            r.b_vperp.to_f64_lossy(),
            r.balance_gap.to_f64_lossy(),
            r.sigma_r_a.to_f64_lossy(),
            r.sigma_r_b.to_f64_lossy(),
            xi
        )?;
    }
    Ok(())
}
