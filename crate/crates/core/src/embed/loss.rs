//! Training losses with analytic gradients. Embedding arguments are plain
//! slices so the gradients can be checked on arbitrary vectors.

use crate::error::{Error, Result};
use crate::real::Real;

use super::euclidean;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioGrad<T = f64> {
    pub value: T,
    pub anchor: Vec<T>,
    pub first: Vec<T>,
    pub second: Vec<T>,
}

fn log_distances<T: Real>(p: &[T], i: &[T], j: &[T]) -> Result<(T, T)> {
    let (di, dj) = (euclidean(i, p), euclidean(j, p));
    if di == T::zero() || dj == T::zero() {
        return Err(Error::Degenerate("coincident embeddings in log-ratio loss".into()));
    }
    Ok((di, dj))
}

/// `(log D(i,p)/D(j,p) − target)²` and its gradients. `target` is the log
/// of the reference distance ratio.
fn log_ratio_target<T: Real>(p: &[T], i: &[T], j: &[T], target: T) -> Result<LogRatioGrad<T>> {
    let (di, dj) = log_distances(p, i, j)?;
    let r = (di / dj).ln() - target;
    let two_r = T::two() * r;
    let (si, sj) = (two_r / (di * di), two_r / (dj * dj));
    let first: Vec<T> = i.iter().zip(p).map(|(&a, &b)| si * (a - b)).collect();
    let second: Vec<T> = j.iter().zip(p).map(|(&a, &b)| -sj * (a - b)).collect();
    let anchor = first.iter().zip(&second).map(|(&a, &b)| -(a + b)).collect();
    Ok(LogRatioGrad {
        value: r * r,
        anchor,
        first,
        second,
    })
}

fn ratio_log<T: Real>(num: T, den: T) -> Result<T> {
    if !(num > T::zero() && den > T::zero()) {
        return Err(Error::Degenerate("reference distances must be positive".into()));
    }
    Ok((num / den).ln())
}

/// Layout-branch loss on anchor `g_p` and neighbours `g_i`, `g_j` whose
/// ground-truth Chamfer distances to the anchor are `ch_i`, `ch_j`.
pub fn log_ratio<T: Real>(g_p: &[T], g_i: &[T], g_j: &[T], ch_i: T, ch_j: T) -> Result<LogRatioGrad<T>> {
    log_ratio_target(g_p, g_i, g_j, ratio_log(ch_i, ch_j)?)
}

/// Cross-modal log-ratio loss: the query embedding `f_p` replaces the
/// anchor. Returns the value and the gradient with respect to `f_p`.
pub fn log_ratio_cross<T: Real>(f_p: &[T], g_i: &[T], g_j: &[T], ch_i: T, ch_j: T) -> Result<(T, Vec<T>)> {
    let g = log_ratio(f_p, g_i, g_j, ch_i, ch_j)?;
    Ok((g.value, g.anchor))
}

/// Distillation variant: the teacher's own distance ratio around `g_p`
/// replaces the Chamfer ratio. Gradient with respect to `f_p` only.
pub fn kd_lr<T: Real>(f_p: &[T], g_p: &[T], g_i: &[T], g_j: &[T]) -> Result<(T, Vec<T>)> {
    let (ti, tj) = log_distances(g_p, g_i, g_j)?;
    let g = log_ratio_target(f_p, g_i, g_j, (ti / tj).ln())?;
    Ok((g.value, g.anchor))
}

/// `‖f − g‖₂` with the gradient with respect to `f`; zero at `f = g`.
pub fn l2<T: Real>(f: &[T], g: &[T]) -> (T, Vec<T>) {
    let d = euclidean(f, g);
    if d == T::zero() {
        return (d, vec![T::zero(); f.len()]);
    }
    (d, f.iter().zip(g).map(|(&a, &b)| (a - b) / d).collect())
}

/// Mean absolute error and its gradient with respect to `pred`.
pub fn decode<T: Real>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Dimension(format!("{} predicted vs {} target values", pred.len(), target.len())));
    }
    let n = T::lit(pred.len() as f64);
    let mut value = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&a, &b)| {
            let r = a - b;
            value += r.abs();
            if r > T::zero() {
                T::one() / n
            } else if r < T::zero() {
                -T::one() / n
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((value / n, grad))
}
