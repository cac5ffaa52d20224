//! Adaptive-moment descent over `(x, y)` with plateau step decay.

use serde::{Deserialize, Serialize};

use super::{DecodeCost, LatentCost, PoseCost};
use crate::embed::{DecodedDepth, EncoderParams, Embedding};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{FloorPlan, Pose, Scene3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpoConfig {
    pub initial_step: f64,
    pub plateau_factor: f64,
    /// Relative improvement below which an iteration counts as stalled.
    pub plateau_threshold: f64,
    pub plateau_patience: usize,
    /// Stop once the best cost improved by less than this over the last
    /// `convergence_window` iterations.
    pub convergence_delta: f64,
    pub convergence_window: usize,
    pub max_iterations: usize,
    pub gradient_mode: GradientMode,
    pub fd_step: f64,
    /// Distance kept from walls when a step is clamped.
    pub wall_margin: f64,
}

impl Default for LpoConfig {
    fn default() -> Self {
        LpoConfig {
            initial_step: 0.01,
            plateau_factor: 0.5,
            plateau_threshold: 0.05,
            plateau_patience: 10,
            convergence_delta: 0.001,
            convergence_window: 20,
            max_iterations: 150,
            gradient_mode: GradientMode::FiniteDifference,
            fd_step: 1e-3,
            wall_margin: 0.02,
        }
    }
}

impl LpoConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if !(self.initial_step > 0.0) {
            return bad("initial step must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        if self.max_iterations < self.convergence_window {
            return bad("max iterations must be at least the convergence window");
        }
        if !(self.fd_step > 0.0) || !(self.wall_margin > 0.0) {
            return bad("finite-difference step and wall margin must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint<T = f64> {
    pub pose: Pose<T>,
    pub cost: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpoOutcome<T = f64> {
    pub pose: Pose<T>,
    pub cost: T,
    pub trace: Vec<TracePoint<T>>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One-sided differences are used where a central probe would leave free
/// space.
fn fd_partial<T: Real>(plan: &FloorPlan<T>, cost: &dyn PoseCost<T>, pose: Pose<T>, c: T, dx: T, dy: T) -> Result<T> {
    let (up, down) = (pose.offset(dx, dy), pose.offset(-dx, -dy));
    let h = dx + dy;
    let probe = |p: Pose<T>| -> Result<Option<T>> {
        if plan.in_free_space(p) {
            cost.cost(p).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(match (probe(up)?, probe(down)?) {
        (Some(a), Some(b)) => (a - b) / (h + h),
        (Some(a), None) => (a - c) / h,
        (None, Some(b)) => (c - b) / h,
        (None, None) => T::zero(),
    })
}

fn cost_and_gradient<T: Real>(
    plan: &FloorPlan<T>,
    cost: &dyn PoseCost<T>,
    pose: Pose<T>,
    config: &LpoConfig,
) -> Result<(T, [T; 2])> {
    match config.gradient_mode {
        GradientMode::Analytic => cost
            .cost_and_gradient(pose)?
            .ok_or_else(|| Error::InvalidParams("this cost has no analytic gradient".into())),
        GradientMode::FiniteDifference => {
            let c = cost.cost(pose)?;
            let h = T::lit(config.fd_step);
            let gx = fd_partial(plan, cost, pose, c, h, T::zero())?;
            let gy = fd_partial(plan, cost, pose, c, T::zero(), h)?;
            Ok((c, [gx, gy]))
        }
    }
}

/// Minimizes `cost` from `init`, returning the best pose seen and the
/// full trace of iterates.
pub fn optimize_pose<T: Real>(
    plan: &FloorPlan<T>,
    init: Pose<T>,
    cost: &dyn PoseCost<T>,
    config: &LpoConfig,
) -> Result<LpoOutcome<T>> {
    config.check()?;
    if !plan.in_free_space(init) {
        return Err(Error::OutsideFreeSpace {
            x: init.x.as_f64(),
            y: init.y.as_f64(),
        });
    }
    let margin = T::lit(config.wall_margin);
    let mut pose = init;
    let mut lr = config.initial_step;
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    let mut trace = Vec::new();
    let mut best_history: Vec<f64> = Vec::new();
    let mut best: Option<TracePoint<T>> = None;
    let mut plateau_best = f64::INFINITY;
    let mut stalled = 0usize;
    for it in 0..config.max_iterations {
        let (c, g) = cost_and_gradient(plan, cost, pose, config)?;
        trace.push(TracePoint { pose, cost: c });
        if best.is_none_or(|b| c < b.cost) {
            best = Some(TracePoint { pose, cost: c });
        }
        let best_cost = best.expect("set above").cost.as_f64();
        best_history.push(best_cost);
        if best_cost == 0.0 {
            break;
        }
        let cf = c.as_f64();
        if cf < plateau_best * (1.0 - config.plateau_threshold) {
            plateau_best = cf;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > config.plateau_patience {
                lr *= config.plateau_factor;
                stalled = 0;
            }
        }
        let w = config.convergence_window;
        if it >= w && best_history[it - w] - best_cost < config.convergence_delta {
            break;
        }
        if it + 1 == config.max_iterations {
            break;
        }
        let t = (it + 1) as i32;
        let mut step = [0.0; 2];
        for k in 0..2 {
            let gk = g[k].as_f64();
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
            let mh = m[k] / (1.0 - BETA1.powi(t));
            let vh = v[k] / (1.0 - BETA2.powi(t));
            step[k] = lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        let target = pose.offset(T::lit(-step[0]), T::lit(-step[1]));
        pose = plan.clamp_step(pose, target, margin);
    }
    let best = best.expect("at least one iteration");
    Ok(LpoOutcome {
        pose: best.pose,
        cost: best.cost,
        trace,
    })
}

/// Pose refinement on the embedding distance between the layout rendered
/// at the current estimate and the query embedding.
pub fn latent_pose_optimize<T: Real>(
    plan: &FloorPlan<T>,
    scene: &Scene3D<T>,
    init: Pose<T>,
    query: &Embedding<T>,
    params: &EncoderParams<T>,
    config: &LpoConfig,
) -> Result<LpoOutcome<T>> {
    let cost = LatentCost { scene, params, query };
    optimize_pose(plan, init, &cost, config)
}

/// The same loop on the L1 difference between a decoded layout and the
/// rendered layout.
pub fn decode_refine<T: Real>(
    plan: &FloorPlan<T>,
    scene: &Scene3D<T>,
    init: Pose<T>,
    target: &DecodedDepth<T>,
    config: &LpoConfig,
) -> Result<LpoOutcome<T>> {
    let cost = DecodeCost { scene, target };
    let config = LpoConfig {
        gradient_mode: GradientMode::FiniteDifference,
        ..config.clone()
    };
    optimize_pose(plan, init, &cost, &config)
}
