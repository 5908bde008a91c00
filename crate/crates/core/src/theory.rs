//! Closed-form oracles and bound evaluators: the linearized pseudo-iterate
//! of the stacked adapter dynamics, alignment-time formulas, and
//! theorem-ingredient computation against measured trajectories.

use crate::adapters::{AdapterPair, InitKind, InitSpec};
use crate::diagnostics::Trajectory;
use crate::error::{Error, Result};
use crate::grads::{lora_gradients, one_step_gradient, GradPair};
use crate::matops::{op_norm, svd, svd_full, top_left_singular, DenseMatrix};
use crate::optim::{gd_step, initialize_adapter, OptimKind, OptimSpec};
use crate::scalar::Real;
use crate::synth::{ModelKind, Problem};
use serde::Serialize;
use std::collections::BTreeMap;

/// Stacked iterate `[A; B^T]`, the object the linearized dynamics act on.
#[derive(Debug, Clone)]
pub struct StackedIterate<T> {
    pub z: DenseMatrix<T>,
}

impl<T: Real> StackedIterate<T> {
    pub fn from_adapter(adapter: &AdapterPair<T>) -> Result<Self> {
        Ok(Self { z: adapter.a.vstack(&adapter.b.transpose())? })
    }
}

/// Closed-form linearized iterate after `t` steps from `(A0, 0)`:
/// `A_t = P_t^A A0` and `B_t^T = P_t^B A0` where the operators are built
/// from the gradient's singular triples (zero-padded when d != k), so no
/// repeated matrix powering is involved.
pub fn pseudo_iterate<T: Real>(
    g_natural: &DenseMatrix<T>,
    a0: &DenseMatrix<T>,
    eta: T,
    t: usize,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let (d, k) = g_natural.shape();
    if a0.rows() != d {
        return Err(Error::ShapeMismatch { op: "pseudo_iterate", lhs: a0.shape(), rhs: (d, k) });
    }
    let (p_a, p_b) = pseudo_iterate_operators(g_natural, eta, t)?;
    let s = d.max(k);
    let r = a0.cols();
    let mut a0_pad = DenseMatrix::zeros(s, r);
    for i in 0..d {
        for j in 0..r {
            a0_pad.set(i, j, a0.get(i, j));
        }
    }
    let a_pad = p_a.mul(&a0_pad)?;
    let bt_pad = p_b.mul(&a0_pad)?;
    let a_lin = a_pad.row_block(0, d);
    let b_lin = bt_pad.row_block(0, k).transpose();
    Ok((a_lin, b_lin))
}

/// The padded `(P_t^A, P_t^B)` operators (`s x s` with `s = max(d, k)`):
/// `P_t^A = U (( (I+eta S)^t + (I-eta S)^t ) / 2) U^T` and
/// `P_t^B = V (( (I+eta S)^t - (I-eta S)^t ) / 2) U^T`.
pub fn pseudo_iterate_operators<T: Real>(
    g_natural: &DenseMatrix<T>,
    eta: T,
    t: usize,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let (d, k) = g_natural.shape();
    let s = d.max(k);
    let f = svd_full(g_natural)?;
    let mut s_pad = vec![T::zero(); s];
    s_pad[..f.s.len()].copy_from_slice(&f.s);
    let u_pad = embed(&f.u, s);
    let v_pad = embed(&f.vt.transpose(), s);
    let half = T::of(0.5);
    let mut coef_a = vec![T::zero(); s];
    let mut coef_b = vec![T::zero(); s];
    for i in 0..s {
        let plus = (T::one() + eta * s_pad[i]).powi(t as i32);
        let minus = (T::one() - eta * s_pad[i]).powi(t as i32);
        coef_a[i] = half * (plus + minus);
        coef_b[i] = half * (plus - minus);
    }
    let ua = u_pad.mul(&DenseMatrix::diag(&coef_a))?;
    let p_a = ua.mul_nt(&u_pad)?;
    let vb = v_pad.mul(&DenseMatrix::diag(&coef_b))?;
    let p_b = vb.mul_nt(&u_pad)?;
    Ok((p_a, p_b))
}

fn embed<T: Real>(square: &DenseMatrix<T>, s: usize) -> DenseMatrix<T> {
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

/// Runs true gradient descent from `(a0, 0)` next to the closed-form
/// linearized iterate and returns `||Z_t - Z_t^lin||_op` for t = 0..=t_max.
pub fn linearization_error<T: Real>(
    problem: &Problem<T>,
    a0: &DenseMatrix<T>,
    eta: T,
    t_max: usize,
) -> Result<Vec<T>> {
    if problem.model_kind != ModelKind::Linear {
        return Err(Error::InvalidArgument("linearization tracking is a linear-model oracle".into()));
    }
    let g_nat = one_step_gradient(problem, None)?;
    let mut adapter = AdapterPair::new(a0.clone(), DenseMatrix::zeros(a0.cols(), problem.k))?;
    // Cached Gram keeps the per-step cost independent of N; identical in
    // exact arithmetic to the direct empirical gradient.
    let gram = if problem.population_covariance {
        None
    } else {
        Some(problem.x.mul_tn(&problem.x)?.scaled(T::one() / T::of(problem.n as f64)))
    };
    let w_tilde = problem.w_tilde();
    let mut errs = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        let (a_lin, b_lin) = pseudo_iterate(&g_nat, a0, eta, t)?;
        let da = adapter.a.sub(&a_lin)?;
        let db = adapter.b.sub(&b_lin)?;
        let stacked = da.vstack(&db.transpose())?;
        let top = top_left_singular(&stacked, 1)?;
        errs.push(top.sigmas.first().copied().unwrap_or_else(T::zero));
        if t < t_max {
            let grads = match &gram {
                Some(sigma) => {
                    let resid = adapter.effective_weight(&problem.w_pre).sub(&w_tilde)?;
                    let g_full = sigma.mul(&resid)?;
                    GradPair {
                        ga: g_full.mul_nt(&adapter.b)?.scaled(adapter.scaling),
                        gb: adapter.a.mul_tn(&g_full)?.scaled(adapter.scaling),
                    }
                }
                None => lora_gradients(problem, &problem.w_pre, &adapter)?,
            };
            gd_step(&mut adapter, &grads, eta)?;
        }
    }
    Ok(errs)
}

#[derive(Debug, Clone, Copy)]
pub enum AlignmentMode<T> {
    /// `t* = ln(lambda1 / (3 ||A0||_op^2)) / (3 ln(1 + eta lambda1))`: the
    /// window inside which the linearized dynamics stay trusted.
    EarlyPhase,
    /// `t <= ln(8 ||A0||_op / (theta lambda_min)) / ln(1 + eta lambda_r*)`:
    /// steps needed to align to angle `theta`, given the realized
    /// `lambda_min(U_{r*}^T A0)`.
    ThetaTarget { theta: T, lambda_min_proj: T },
}

/// Evaluates the requested alignment-time formula. The value may be
/// negative or below one; the caller interprets (an empty window signals
/// that the initialization scale is outside the early-phase regime).
pub fn alignment_time<T: Real>(
    g_natural: &DenseMatrix<T>,
    r_star: usize,
    a0_norm_op: T,
    eta: T,
    mode: AlignmentMode<T>,
) -> Result<T> {
    if a0_norm_op <= T::zero() || eta <= T::zero() {
        return Err(Error::InvalidArgument("alignment_time needs positive norm and stepsize".into()));
    }
    let f = svd(g_natural)?;
    let lambda1 = f.s.first().copied().unwrap_or_else(T::zero);
    if lambda1 <= T::zero() {
        return Err(Error::DegenerateInput("zero gradient has no alignment time".into()));
    }
    match mode {
        AlignmentMode::EarlyPhase => {
            let three = T::of(3.0);
            let num = (lambda1 / (three * a0_norm_op * a0_norm_op)).ln();
            let den = three * (T::one() + eta * lambda1).ln();
            Ok(num / den)
        }
        AlignmentMode::ThetaTarget { theta, lambda_min_proj } => {
            if theta <= T::zero() || theta >= T::one() {
                return Err(Error::InvalidArgument("theta must lie in (0, 1)".into()));
            }
            if lambda_min_proj <= T::zero() {
                return Err(Error::DegenerateInput("projected smallest singular value must be positive".into()));
            }
            if r_star == 0 || r_star > f.s.len() {
                return Err(Error::InvalidArgument("r_star out of range".into()));
            }
            let lambda_r = f.s[r_star - 1];
            if lambda_r <= T::zero() {
                return Err(Error::DegenerateInput("gradient rank below r_star".into()));
            }
            let num = (T::of(8.0) * a0_norm_op / (theta * lambda_min_proj)).ln();
            let den = (T::one() + eta * lambda_r).ln();
            Ok(num / den)
        }
    }
}

/// Realized `lambda_min(U_{r*}(G)^T A0)`, the quantity the theta-time
/// formula needs (computed from the draw, not a probabilistic bound).
pub fn lambda_min_projection<T: Real>(
    g_natural: &DenseMatrix<T>,
    r_star: usize,
    a0: &DenseMatrix<T>,
) -> Result<T> {
    let f = svd(g_natural)?;
    if r_star == 0 || r_star > f.s.len() {
        return Err(Error::InvalidArgument("r_star out of range".into()));
    }
    let u_r = f.u.col_block(0, r_star);
    let proj = u_r.mul_tn(a0)?;
    let sv = svd(&proj)?;
    Ok(sv.s.last().copied().unwrap_or_else(T::zero))
}

/// Identifiers of the checkable results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremId {
    AlignmentB,       // exact-zero right alignment under zero-B init
    AlignmentA,       // theta-alignment of the A factor
    OneStepInit,      // spectral-init risk bound at step 0 (linear)
    GdContraction,    // per-step contraction of vanilla GD
    PrecContraction,  // condition-number-free contraction of prec-GD
    NonlinearRate,    // preconditioned rate on the relu model
    EarlyLinearization, // pseudo-iterate tracking window
    NonlinearInit,    // spectral-init risk at step 0 (relu, gamma = 2)
}

impl TheoremId {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "thm_3_1" => TheoremId::AlignmentB,
            "thm_3_2" => TheoremId::AlignmentA,
            "thm_3_6" => TheoremId::OneStepInit,
            "thm_c9" => TheoremId::GdContraction,
            "thm_c13" => TheoremId::PrecContraction,
            "thm_4_2" => TheoremId::NonlinearRate,
            "lemma_c4" => TheoremId::EarlyLinearization,
            "lemma_d6" => TheoremId::NonlinearInit,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            TheoremId::AlignmentB => "thm_3_1",
            TheoremId::AlignmentA => "thm_3_2",
            TheoremId::OneStepInit => "thm_3_6",
            TheoremId::GdContraction => "thm_c9",
            TheoremId::PrecContraction => "thm_c13",
            TheoremId::NonlinearRate => "thm_4_2",
            TheoremId::EarlyLinearization => "lemma_c4",
            TheoremId::NonlinearInit => "lemma_d6",
        }
    }

    pub fn all() -> &'static [&'static str] {
        &["thm_3_1", "thm_3_2", "thm_3_6", "thm_c9", "thm_c13", "thm_4_2", "lemma_c4", "lemma_d6"]
    }
}

/// Pass/fail evaluation of a bound against a measured trajectory, with the
/// bound's ingredients. Serialized as one JSON object per check.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub theorem_id: String,
    pub ingredients: BTreeMap<String, f64>,
    pub holds: bool,
    pub margin: f64,
}

const RATIO_TOL: f64 = 1e-6;

/// Evaluates the theorem's predicted quantity from problem ground truth and
/// compares against the measured trajectory.
pub fn evaluate_bound<T: Real>(
    theorem: TheoremId,
    problem: &Problem<T>,
    init: &InitSpec<T>,
    optim: &OptimSpec<T>,
    traj: &Trajectory<T>,
) -> Result<BoundReport> {
    let mut ing: BTreeMap<String, f64> = BTreeMap::new();
    let lambda1 = problem.delta_svd.s[0].to_f64_lossy();
    let lambda_r = problem.lambda_r_star().to_f64_lossy();
    let kappa = problem.kappa().to_f64_lossy();
    let eta = optim.eta.to_f64_lossy();
    ing.insert("lambda_1".into(), lambda1);
    ing.insert("lambda_r_star".into(), lambda_r);
    ing.insert("kappa".into(), kappa);
    ing.insert("eta".into(), eta);

    let need_linear = matches!(
        theorem,
        TheoremId::AlignmentB
            | TheoremId::AlignmentA
            | TheoremId::OneStepInit
            | TheoremId::GdContraction
            | TheoremId::PrecContraction
            | TheoremId::EarlyLinearization
    );
    if need_linear && problem.model_kind != ModelKind::Linear {
        return Err(Error::InvalidArgument(format!(
            "{} is a linear-model result; got a relu run",
            theorem.name()
        )));
    }
    if matches!(theorem, TheoremId::NonlinearRate | TheoremId::NonlinearInit)
        && problem.model_kind != ModelKind::Relu
    {
        return Err(Error::InvalidArgument(format!(
            "{} is a nonlinear result; got a linear run",
            theorem.name()
        )));
    }
    if traj.records.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    // Contraction statements need motion; an init-only trajectory can back
    // only the initialization bounds.
    if traj.records.len() < 2
        && matches!(
            theorem,
            TheoremId::AlignmentB
                | TheoremId::AlignmentA
                | TheoremId::GdContraction
                | TheoremId::PrecContraction
                | TheoremId::NonlinearRate
        )
    {
        return Err(Error::InvalidArgument(format!(
            "{} is not applicable to an init-only trajectory",
            theorem.name()
        )));
    }

    let (holds, margin) = match theorem {
        TheoremId::AlignmentB => {
            if !matches!(init.kind, InitKind::LoraRandom { .. }) {
                return Err(Error::InvalidArgument("thm_3_1 needs the zero-B random init".into()));
            }
            let max_angle = traj
                .records
                .iter()
                .filter(|r| r.step >= 1)
                .map(|r| r.angle_b.to_f64_lossy())
                .fold(0.0f64, f64::max);
            ing.insert("max_angle_b".into(), max_angle);
            ing.insert("tolerance".into(), 1e-8);
            (max_angle <= 1e-8, 1e-8 - max_angle)
        }
        TheoremId::AlignmentA => {
            let alpha = match init.kind {
                InitKind::LoraRandom { alpha } => alpha,
                _ => return Err(Error::InvalidArgument("thm_3_2 needs the random init".into())),
            };
            let theta = T::of(0.3);
            let g_nat = one_step_gradient(problem, None)?;
            let a0 = initialize_adapter(problem, init)?.a;
            let a0_op = op_norm(&a0)?;
            let lam_min = lambda_min_projection(&g_nat, problem.r_star, &a0)?;
            let t_theta = alignment_time(
                &g_nat,
                problem.r_star,
                a0_op,
                optim.eta,
                AlignmentMode::ThetaTarget { theta, lambda_min_proj: lam_min },
            )?
            .to_f64_lossy();
            ing.insert("alpha".into(), alpha.to_f64_lossy());
            ing.insert("theta".into(), 0.3);
            ing.insert("t_theta".into(), t_theta);
            let window = t_theta.ceil().max(1.0) as usize;
            let min_angle = traj
                .records
                .iter()
                .filter(|r| r.step <= window)
                .map(|r| r.angle_a.to_f64_lossy())
                .fold(f64::INFINITY, f64::min);
            ing.insert("min_angle_a_in_window".into(), min_angle);
            (min_angle <= 0.3, 0.3 - min_angle)
        }
        TheoremId::OneStepInit => {
            if !matches!(init.kind, InitKind::Spectral { normalize_top: false, .. }) {
                return Err(Error::InvalidArgument("thm_3_6 needs theory-mode spectral init".into()));
            }
            let eps = problem.covariance_gap()?.to_f64_lossy();
            let init_op = traj.records[0].risk_op.to_f64_lossy();
            let delta_op = lambda1;
            ing.insert("epsilon".into(), eps);
            ing.insert("init_risk_op".into(), init_op);
            ing.insert("eps_delta_op".into(), eps * delta_op);
            ing.insert("half_lambda_r".into(), 0.5 * lambda_r);
            let ok = init_op <= eps * delta_op + 1e-12 && init_op <= 0.5 * lambda_r;
            ((ok), (eps * delta_op - init_op).min(0.5 * lambda_r - init_op))
        }
        TheoremId::GdContraction => {
            if optim.kind != OptimKind::Gd {
                return Err(Error::InvalidArgument("thm_c9 checks vanilla gd runs".into()));
            }
            let eps = problem.covariance_gap()?.to_f64_lossy();
            let eps_req = (1.0 / (2.0 * kappa))
                .min(lambda_r / (32.0 * kappa * (32.0 * lambda1 + 128.0 * kappa * kappa)));
            let eta_req = (1.0 / (128.0 * kappa * lambda1)).min((1.0 - eps / kappa) / (1152.0 * lambda1));
            let factor = 1.0 - eta * lambda_r / (64.0 * kappa);
            let worst = worst_per_step_ratio(traj, lambda_r);
            ing.insert("epsilon".into(), eps);
            ing.insert("epsilon_required".into(), eps_req);
            ing.insert("eta_required".into(), eta_req);
            ing.insert("predicted_factor".into(), factor);
            ing.insert("measured_factor".into(), worst);
            let conds = eps <= eps_req && eta <= eta_req;
            ing.insert("conditions_satisfied".into(), f64::from(u8::from(conds)));
            (conds && worst <= factor + RATIO_TOL, factor + RATIO_TOL - worst)
        }
        TheoremId::PrecContraction => {
            if !matches!(optim.kind, OptimKind::PrecGd | OptimKind::PrecGdSmoothed) {
                return Err(Error::InvalidArgument("thm_c13 checks preconditioned runs".into()));
            }
            let eps = problem.covariance_gap()?.to_f64_lossy();
            let eta_cap = (0.5 - 2.0 * eps) / ((1.0 + eps) * (1.0 + eps));
            let factor = 1.0 - eta / 2.0;
            let worst = worst_per_step_ratio(traj, lambda_r);
            ing.insert("epsilon".into(), eps);
            ing.insert("eta_cap".into(), eta_cap);
            ing.insert("predicted_factor".into(), factor);
            ing.insert("measured_factor".into(), worst);
            (worst <= factor + RATIO_TOL, factor + RATIO_TOL - worst)
        }
        TheoremId::NonlinearRate => {
            let factor = 1.0 - eta / 4.0;
            let risk0 = traj.records[0].risk_fro.to_f64_lossy();
            let mut worst = 0.0f64;
            for r in traj.records.iter().skip(1) {
                let bound = factor.powi(r.step as i32) * risk0;
                if bound > 0.0 {
                    worst = worst.max(r.risk_fro.to_f64_lossy() / bound);
                }
            }
            ing.insert("predicted_factor".into(), factor);
            ing.insert("risk_0".into(), risk0);
            ing.insert("rho_0".into(), risk0 / lambda_r);
            ing.insert("worst_cumulative_ratio".into(), worst);
            (worst <= 1.0 + 1e-9, 1.0 + 1e-9 - worst)
        }
        TheoremId::EarlyLinearization => {
            let alpha = match init.kind {
                InitKind::LoraRandom { alpha } => alpha,
                _ => return Err(Error::InvalidArgument("lemma_c4 needs the random init".into())),
            };
            let _ = alpha;
            let g_nat = one_step_gradient(problem, None)?;
            let a0 = initialize_adapter(problem, init)?.a;
            let a0_op = op_norm(&a0)?;
            let t_star =
                alignment_time(&g_nat, problem.r_star, a0_op, optim.eta, AlignmentMode::EarlyPhase)?
                    .to_f64_lossy();
            ing.insert("a0_op".into(), a0_op.to_f64_lossy());
            ing.insert("t_star".into(), t_star);
            if t_star < 1.0 {
                // Empty trust window: the initialization scale violates the
                // early-phase precondition outright.
                ing.insert("window".into(), 0.0);
                (false, t_star - 1.0)
            } else {
                let window = (t_star.floor() as usize).min(optim.steps);
                ing.insert("window".into(), window as f64);
                let errs = linearization_error(problem, &a0, optim.eta, window)?;
                let sup = errs.iter().fold(T::zero(), |m, &e| m.max(e)).to_f64_lossy();
                ing.insert("sup_error_op".into(), sup);
                (sup <= a0_op.to_f64_lossy(), a0_op.to_f64_lossy() - sup)
            }
        }
        TheoremId::NonlinearInit => {
            match init.kind {
                InitKind::Spectral { gamma, normalize_top: false, .. } => {
                    ing.insert("gamma".into(), gamma.to_f64_lossy());
                }
                _ => return Err(Error::InvalidArgument("lemma_d6 needs theory-mode spectral init".into())),
            }
            let rho = 1.0 / 20.0;
            let risk0 = traj.records[0].risk_fro.to_f64_lossy();
            ing.insert("rho".into(), rho);
            ing.insert("init_risk_fro".into(), risk0);
            ing.insert("bound".into(), rho * lambda_r);
            (risk0 <= rho * lambda_r, rho * lambda_r - risk0)
        }
    };

    Ok(BoundReport { theorem_id: theorem.name().to_string(), ingredients: ing, holds, margin })
}

/// Worst per-step contraction factor over consecutive records, normalized
/// by the step gap; pairs beneath the floating-point risk floor are skipped.
fn worst_per_step_ratio<T: Real>(traj: &Trajectory<T>, lambda_scale: f64) -> f64 {
    let floor = 1e3 * f64::EPSILON * lambda_scale.max(1e-300);
    let mut worst = 0.0f64;
    for pair in traj.records.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let r0 = prev.risk_fro.to_f64_lossy();
        let r1 = next.risk_fro.to_f64_lossy();
        if r0 <= floor || r1 <= 0.0 {
            continue;
        }
        let gap = (next.step - prev.step) as f64;
        let per_step = (r1 / r0).powf(1.0 / gap);
        worst = worst.max(per_step);
    }
    worst
}
