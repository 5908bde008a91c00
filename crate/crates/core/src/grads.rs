//! Gradient computations: empirical full-fine-tuning and adapter gradients
//! for both model kinds, the closed-form ReLU population gradient built from
//! pairwise column angles, and finite-difference / concentration oracles.

use crate::adapters::AdapterPair;
use crate::error::{Error, Result};
use crate::matops::{fro_norm, DenseMatrix};
use crate::rng::{SeedStream, StreamPurpose};
use crate::scalar::Real;
use crate::synth::{ModelKind, Problem};

/// Adapter-side gradients `(dL/dA, dL/dB)`.
#[derive(Debug, Clone)]
pub struct GradPair<T> {
    pub ga: DenseMatrix<T>,
    pub gb: DenseMatrix<T>,
}

/// Gradient of the fine-tuning loss at weight `w`, together with the loss
/// value (which the same pass computes for free).
pub fn full_gradient_with_loss<T: Real>(
    problem: &Problem<T>,
    w: &DenseMatrix<T>,
) -> Result<(DenseMatrix<T>, T)> {
    if w.shape() != (problem.d, problem.k) {
        return Err(Error::ShapeMismatch { op: "full_gradient", lhs: w.shape(), rhs: (problem.d, problem.k) });
    }
    if problem.population_covariance {
        return population_gradient_with_loss(problem, w);
    }
    let inv_n = T::one() / T::of(problem.n as f64);
    let half = T::of(0.5);
    match problem.model_kind {
        ModelKind::Linear => {
            let xw = problem.x.mul(w)?;
            let resid = xw.sub(&problem.y)?;
            let loss = {
                let f = fro_norm(&resid);
                half * inv_n * f * f
            };
            let grad = problem.x.mul_tn(&resid)?.scaled(inv_n);
            Ok((grad, loss))
        }
        ModelKind::Relu => {
            let xw = problem.x.mul(w)?;
            // Masked residual (sigma(XW) - Y) .* sigma'(XW), with sigma'(0) = 0.
            let mut masked = xw.clone();
            let mut loss_acc = T::zero();
            for (m, (&pre, &label)) in masked
                .data_mut()
                .iter_mut()
                .zip(xw.data().iter().zip(problem.y.data().iter()))
            {
                let act = pre.max(T::zero());
                let diff = act - label;
                loss_acc += diff * diff;
                *m = if pre > T::zero() { diff } else { T::zero() };
            }
            let grad = problem.x.mul_tn(&masked)?.scaled(inv_n);
            Ok((grad, half * inv_n * loss_acc))
        }
    }
}

fn population_gradient_with_loss<T: Real>(
    problem: &Problem<T>,
    w: &DenseMatrix<T>,
) -> Result<(DenseMatrix<T>, T)> {
    let w_tilde = problem.w_tilde();
    let half = T::of(0.5);
    match problem.model_kind {
        ModelKind::Linear => {
            let grad = w.sub(&w_tilde)?;
            let f = fro_norm(&grad);
            Ok((grad, half * f * f))
        }
        ModelKind::Relu => {
            let grad = population_gradient_relu(&w_tilde, w)?;
            let loss = population_loss_relu(&w_tilde, w)?;
            Ok((grad, loss))
        }
    }
}

/// Gradient of the fine-tuning loss at weight `w`.
pub fn full_gradient<T: Real>(problem: &Problem<T>, w: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    Ok(full_gradient_with_loss(problem, w)?.0)
}

/// One-step negative gradient at the pre-trained weight, optionally from a
/// leading row-batch of the data (the deterministic batch choice).
pub fn one_step_gradient<T: Real>(problem: &Problem<T>, batch: Option<usize>) -> Result<DenseMatrix<T>> {
    match batch {
        None => Ok(full_gradient(problem, &problem.w_pre)?.scaled(-T::one())),
        Some(rows) => {
            if problem.population_covariance {
                return Err(Error::InvalidArgument("batched init gradient needs empirical data".into()));
            }
            if rows == 0 || rows > problem.n {
                return Err(Error::InvalidArgument(format!(
                    "gradient batch {rows} out of range for N = {}",
                    problem.n
                )));
            }
            let mut sub = problem.clone();
            sub.x = problem.x.row_block(0, rows);
            sub.y = problem.y.row_block(0, rows);
            sub.n = rows;
            Ok(full_gradient(&sub, &problem.w_pre)?.scaled(-T::one()))
        }
    }
}

/// Chain-rule adapter gradients at the adapter's effective weight:
/// `ga = scaling * G_full * B^T`, `gb = scaling * A^T * G_full`.
pub fn lora_gradients<T: Real>(
    problem: &Problem<T>,
    w_pre: &DenseMatrix<T>,
    adapter: &AdapterPair<T>,
) -> Result<GradPair<T>> {
    let w_eff = {
        let mut w = w_pre.add(&adapter.product())?;
        if let Some(off) = &adapter.frozen_offset {
            w = w.add(off)?;
        }
        w
    };
    let g_full = full_gradient(problem, &w_eff)?;
    let ga = g_full.mul_nt(&adapter.b)?.scaled(adapter.scaling);
    let gb = adapter.a.mul_tn(&g_full)?.scaled(adapter.scaling);
    Ok(GradPair { ga, gb })
}

/// Gradient of the ReLU product expectation
/// `E[sigma(<w, x>) sigma(<v, x>)]` with respect to `w`, for standard
/// Gaussian `x`:
/// `(1/2pi) [ (||v||/||w||) sin(theta) w + (pi - theta) v ]`.
pub fn relu_product_expectation_grad<T: Real>(w: &[T], v: &[T]) -> Result<Vec<T>> {
    let (nw, nv, theta) = column_angle(w, v)?;
    let pi = T::of(std::f64::consts::PI);
    let inv_2pi = T::one() / (pi + pi);
    let coef_w = nv / nw * theta.sin() * inv_2pi;
    let coef_v = (pi - theta) * inv_2pi;
    Ok(w.iter().zip(v.iter()).map(|(&wi, &vi)| coef_w * wi + coef_v * vi).collect())
}

fn column_angle<T: Real>(w: &[T], v: &[T]) -> Result<(T, T, T)> {
    let mut nw = T::zero();
    let mut nv = T::zero();
    let mut dot = T::zero();
    for (&a, &b) in w.iter().zip(v.iter()) {
        nw += a * a;
        nv += b * b;
        dot += a * b;
    }
    let nw = nw.sqrt();
    let nv = nv.sqrt();
    if nw == T::zero() || nv == T::zero() {
        return Err(Error::DegenerateInput("angle with a zero column is undefined".into()));
    }
    let cos = (dot / (nw * nv)).max(-T::one()).min(T::one());
    Ok((nw, nv, cos.acos()))
}

/// Exact population gradient of the ReLU loss at weight `w` under standard
/// Gaussian inputs (the expectation of the negated teacher-residual
/// operator). Column m is
/// `1/2 (w_m - wt_m) - (1/2pi) [ (||wt_m||/||w_m||) sin(theta) w_m - theta wt_m ]`.
pub fn population_gradient_relu<T: Real>(
    w_tilde: &DenseMatrix<T>,
    w: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    if w_tilde.shape() != w.shape() {
        return Err(Error::ShapeMismatch { op: "population_gradient_relu", lhs: w_tilde.shape(), rhs: w.shape() });
    }
    let (d, k) = w.shape();
    let pi = T::of(std::f64::consts::PI);
    let inv_2pi = T::one() / (pi + pi);
    let half = T::of(0.5);
    let mut out = DenseMatrix::zeros(d, k);
    for m in 0..k {
        let wm: Vec<T> = (0..d).map(|i| w.get(i, m)).collect();
        let tm: Vec<T> = (0..d).map(|i| w_tilde.get(i, m)).collect();
        let (nw, nt, theta) = column_angle(&wm, &tm)?;
        let coef_w = nt / nw * theta.sin() * inv_2pi;
        let coef_t = theta * inv_2pi;
        for i in 0..d {
            out.set(i, m, half * (wm[i] - tm[i]) - (coef_w * wm[i] - coef_t * tm[i]));
        }
    }
    Ok(out)
}

/// Exact population loss of the ReLU model: sums
/// `E[(sigma(<w_m,x>) - sigma(<wt_m,x>))^2] / 2` over columns using
/// `E[sigma(<w,x>) sigma(<v,x>)] = (||w|| ||v|| / 2pi)(sin t + (pi - t) cos t)`.
pub fn population_loss_relu<T: Real>(w_tilde: &DenseMatrix<T>, w: &DenseMatrix<T>) -> Result<T> {
    if w_tilde.shape() != w.shape() {
        return Err(Error::ShapeMismatch { op: "population_loss_relu", lhs: w_tilde.shape(), rhs: w.shape() });
    }
    let (d, k) = w.shape();
    let pi = T::of(std::f64::consts::PI);
    let inv_2pi = T::one() / (pi + pi);
    let half = T::of(0.5);
    let mut loss = T::zero();
    for m in 0..k {
        let wm: Vec<T> = (0..d).map(|i| w.get(i, m)).collect();
        let tm: Vec<T> = (0..d).map(|i| w_tilde.get(i, m)).collect();
        let (nw, nt, theta) = column_angle(&wm, &tm)?;
        let cross = nw * nt * inv_2pi * (theta.sin() + (pi - theta) * theta.cos());
        let self_w = half * nw * nw;
        let self_t = half * nt * nt;
        loss += half * (self_w - cross - cross + self_t);
    }
    Ok(loss)
}

/// Deviation of the population gradient from its linearized signal term:
/// `Psi = population_gradient_relu(wt, W) - 1/2 (W - wt)` at the adapter's
/// effective weight. The ratio `||Psi||_F / ||A B - Delta||_F` is the
/// pre-training-dominance diagnostic.
pub fn population_residual<T: Real>(
    w_tilde: &DenseMatrix<T>,
    w_pre: &DenseMatrix<T>,
    adapter: &AdapterPair<T>,
) -> Result<DenseMatrix<T>> {
    let w_eff = adapter.effective_weight(w_pre);
    let grad = population_gradient_relu(w_tilde, &w_eff)?;
    let half = T::of(0.5);
    let mut out = grad;
    for i in 0..out.rows() {
        for j in 0..out.cols() {
            let v = out.get(i, j) - half * (w_eff.get(i, j) - w_tilde.get(i, j));
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Central finite differences of the loss, entry by entry, plus the
/// data/column pairs that sit within `10h` of a ReLU kink at the base point
/// (the caller can resample or move away before trusting those entries).
#[derive(Debug, Clone)]
pub struct FdGradient<T> {
    pub grad: DenseMatrix<T>,
    pub near_kinks: Vec<(usize, usize)>,
}

pub fn finite_difference_gradient<T: Real>(
    problem: &Problem<T>,
    w: &DenseMatrix<T>,
    h: T,
) -> Result<FdGradient<T>> {
    if h <= T::zero() {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let loss_at = |wm: &DenseMatrix<T>| -> Result<T> { Ok(full_gradient_with_loss(problem, wm)?.1) };
    let (d, k) = w.shape();
    let mut grad = DenseMatrix::zeros(d, k);
    let mut probe = w.clone();
    let two = T::one() + T::one();
    for i in 0..d {
        for j in 0..k {
            let base = probe.get(i, j);
            probe.set(i, j, base + h);
            let up = loss_at(&probe)?;
            probe.set(i, j, base - h);
            let down = loss_at(&probe)?;
            probe.set(i, j, base);
            grad.set(i, j, (up - down) / (two * h));
        }
    }
    let mut near_kinks = Vec::new();
    if problem.model_kind == ModelKind::Relu && !problem.population_covariance {
        let xw = problem.x.mul(w)?;
        let threshold = T::of(10.0) * h;
        for i in 0..problem.n {
            for m in 0..k {
                if xw.get(i, m).abs() < threshold {
                    near_kinks.push((i, m));
                }
            }
        }
    }
    Ok(FdGradient { grad, near_kinks })
}

/// One row of the concentration table: the sample size and the measured
/// `||J - E[J]||_F / (sqrt(d) ||W - Wt||_F)`.
#[derive(Debug, Clone, Copy)]
pub struct ConcentrationPoint {
    pub n: usize,
    pub ratio: f64,
}

/// Resamples data at each grid size and measures how fast the empirical
/// teacher-residual operator concentrates around its expectation. The
/// log-log slope against N should sit near -1/2.
pub fn gradient_concentration_check<T: Real>(
    problem: &Problem<T>,
    w: &DenseMatrix<T>,
    n_grid: &[usize],
    seed: u64,
) -> Result<Vec<ConcentrationPoint>> {
    if problem.model_kind != ModelKind::Relu {
        return Err(Error::InvalidArgument("concentration check applies to the relu model".into()));
    }
    let w_tilde = problem.w_tilde();
    let expected_neg = population_gradient_relu(&w_tilde, w)?; // -E[J]
    let denom = {
        let diff = w.sub(&w_tilde)?;
        T::of((problem.d as f64).sqrt()) * fro_norm(&diff)
    };
    if denom == T::zero() {
        return Ok(n_grid.iter().map(|&n| ConcentrationPoint { n, ratio: 0.0 }).collect());
    }
    let mut out = Vec::with_capacity(n_grid.len());
    for (idx, &n) in n_grid.iter().enumerate() {
        let mut rng = SeedStream::substream(seed, StreamPurpose::Concentration, idx as u64);
        let x: DenseMatrix<T> = rng.gaussian_matrix(n, problem.d);
        let labels = x.mul(&w_tilde)?.map(|v| v.max(T::zero()));
        let xw = x.mul(w)?;
        let mut masked = xw.clone();
        for (mval, (&pre, &label)) in masked
            .data_mut()
            .iter_mut()
            .zip(xw.data().iter().zip(labels.data().iter()))
        {
            // J's numerator is (labels - sigma(XW)) gated by sigma'(XW).
            *mval = if pre > T::zero() { label - pre.max(T::zero()) } else { T::zero() };
        }
        let j_emp = x.mul_tn(&masked)?.scaled(T::one() / T::of(n as f64));
        // J - E[J] = J + (-E[J]) with our stored sign.
        let dev = j_emp.add(&expected_neg)?;
        out.push(ConcentrationPoint { n, ratio: (fro_norm(&dev) / denom).to_f64_lossy() });
    }
    Ok(out)
}

/// Least-squares slope of `log(ratio)` against `log(n)`.
pub fn loglog_slope(points: &[ConcentrationPoint]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.ratio.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
