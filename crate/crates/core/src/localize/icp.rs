//! Point-to-point ICP between a planar scan and densely sampled walls.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::real::Real;
use crate::scene::{FloorPlan, Pose};
use crate::spatial::KdTree;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Translation update, in meters, below which an iteration counts as
    /// converged.
    pub translation_epsilon: f64,
    /// Converged iterations needed in a row before stopping.
    pub epsilon_streak: usize,
    pub downsample_cell: f64,
    pub estimate_rotation: bool,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 50,
            translation_epsilon: 1e-5,
            epsilon_streak: 3,
            downsample_cell: 0.05,
            estimate_rotation: false,
        }
    }
}

impl IcpConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iterations == 0
            || self.epsilon_streak == 0
            || !(self.translation_epsilon > 0.0)
            || !(self.downsample_cell > 0.0)
        {
            return Err(Error::InvalidParams("ICP settings must all be positive".into()));
        }
        if self.epsilon_streak > self.max_iterations {
            return Err(Error::InvalidParams("epsilon streak exceeds max iterations".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpResult<T = f64> {
    /// Camera position: the translation that maps the scan onto the plan.
    pub pose: Pose<T>,
    /// Estimated heading in radians; zero unless rotation is estimated.
    pub yaw: T,
    pub rmse: T,
    pub iterations: usize,
}

/// Replaces the points of every `cell`-sized square with their mean, one
/// output point per occupied cell in cell order.
pub fn downsample<T: Real>(points: &[Vec2<T>], cell: T) -> Vec<Vec2<T>> {
    let mut cells: BTreeMap<(i64, i64), (T, T, usize)> = BTreeMap::new();
    for p in points {
        let key = (
            (p.x / cell).floor().to_i64().unwrap_or(i64::MAX),
            (p.y / cell).floor().to_i64().unwrap_or(i64::MAX),
        );
        let e = cells.entry(key).or_insert((T::zero(), T::zero(), 0));
        e.0 += p.x;
        e.1 += p.y;
        e.2 += 1;
    }
    cells
        .into_values()
        .map(|(x, y, n)| {
            let n = T::lit(n as f64);
            Vec2::new(x / n, y / n)
        })
        .collect()
}

/// Points every `spacing` meters along every wall, endpoints included.
pub fn plan_cloud<T: Real>(plan: &FloorPlan<T>, spacing: T) -> Vec<Vec2<T>> {
    let mut out = Vec::new();
    for (_, a, b) in plan.wall_segments() {
        let len = (b - a).norm();
        let n = (len / spacing).ceil().to_usize().unwrap_or(1).max(1);
        for k in 0..n {
            let t = T::lit(k as f64 / n as f64);
            out.push(a + (b - a) * t);
        }
    }
    out
}

struct Transform<T> {
    cos: T,
    sin: T,
    yaw: T,
    t: Vec2<T>,
}

impl<T: Real> Transform<T> {
    fn apply(&self, p: Vec2<T>) -> Vec2<T> {
        Vec2::new(self.cos * p.x - self.sin * p.y + self.t.x, self.sin * p.x + self.cos * p.y + self.t.y)
    }
}

fn centroid<T: Real>(pts: &[Vec2<T>]) -> Vec2<T> {
    let n = T::lit(pts.len() as f64);
    let s = pts.iter().fold(Vec2::new(T::zero(), T::zero()), |acc, &p| acc + p);
    Vec2::new(s.x / n, s.y / n)
}

/// Nearest plan point for every transformed scan point, and the RMSE of
/// those pairs.
fn correspond<T: Real>(moved: &[Vec2<T>], tree: &KdTree<T, 2>, plan: &[Vec2<T>]) -> (Vec<Vec2<T>>, T) {
    let mut sum = T::zero();
    let matched: Vec<Vec2<T>> = moved
        .iter()
        .map(|p| {
            let (i, d2) = tree.nearest(&[p.x, p.y]).expect("plan cloud is non-empty");
            sum += d2;
            plan[i]
        })
        .collect();
    (matched, (sum / T::lit(moved.len() as f64)).sqrt())
}

/// Aligns `scan` (camera frame) to `plan_points` (world frame) starting from
/// `init`. Both clouds are grid-averaged at `downsample_cell` first.
pub fn icp_align<T: Real>(
    scan: &[Vec2<T>],
    plan_points: &[Vec2<T>],
    init: Pose<T>,
    config: &IcpConfig,
) -> Result<IcpResult<T>> {
    config.check()?;
    let (scan, plan_points, tree) = prepare(scan, plan_points, config)?;
    align_with_tree(&scan, &plan_points, &tree, init, config)
}

type Prepared<T> = (Vec<Vec2<T>>, Vec<Vec2<T>>, KdTree<T, 2>);

fn prepare<T: Real>(scan: &[Vec2<T>], plan_points: &[Vec2<T>], config: &IcpConfig) -> Result<Prepared<T>> {
    let cell = T::lit(config.downsample_cell);
    let scan = downsample(scan, cell);
    let plan_points = downsample(plan_points, cell);
    if scan.is_empty() || plan_points.is_empty() {
        return Err(Error::Empty("ICP needs a non-empty scan and plan cloud".into()));
    }
    let tree = KdTree::build(&plan_points.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>());
    Ok((scan, plan_points, tree))
}

fn align_with_tree<T: Real>(
    scan: &[Vec2<T>],
    plan_points: &[Vec2<T>],
    tree: &KdTree<T, 2>,
    init: Pose<T>,
    config: &IcpConfig,
) -> Result<IcpResult<T>> {
    let mut x = Transform {
        cos: T::one(),
        sin: T::zero(),
        yaw: T::zero(),
        t: init.point(),
    };
    let eps = T::lit(config.translation_epsilon);
    let mut streak = 0;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        iterations += 1;
        let moved: Vec<Vec2<T>> = scan.iter().map(|&p| x.apply(p)).collect();
        let (matched, _) = correspond(&moved, tree, plan_points);
        let (cw, cm) = (centroid(&moved), centroid(&matched));
        let (dc, ds, dyaw) = if config.estimate_rotation {
            let (mut num, mut den) = (T::zero(), T::zero());
            for (&w, &m) in moved.iter().zip(&matched) {
                let (a, b) = (w - cw, m - cm);
                num += a.x * b.y - a.y * b.x;
                den += a.x * b.x + a.y * b.y;
            }
            let ang = num.atan2(den);
            (ang.cos(), ang.sin(), ang)
        } else {
            (T::one(), T::zero(), T::zero())
        };
        let rot = |p: Vec2<T>| Vec2::new(dc * p.x - ds * p.y, ds * p.x + dc * p.y);
        let dt = cm - rot(cw);
        let t_new = rot(x.t) + dt;
        let step = (t_new - x.t).norm();
        let yaw = x.yaw + dyaw;
        x = Transform {
            cos: yaw.cos(),
            sin: yaw.sin(),
            yaw,
            t: t_new,
        };
        if step < eps {
            streak += 1;
            if streak >= config.epsilon_streak {
                break;
            }
        } else {
            streak = 0;
        }
    }
    let moved: Vec<Vec2<T>> = scan.iter().map(|&p| x.apply(p)).collect();
    let (_, rmse) = correspond(&moved, tree, plan_points);
    Ok(IcpResult {
        pose: Pose::new(x.t.x, x.t.y),
        yaw: x.yaw,
        rmse,
        iterations,
    })
}

/// Runs ICP from every start pose against walls sampled at half the
/// downsampling cell and keeps the run with the lowest RMSE; ties go to the
/// earlier start.
pub fn icp_localize<T: Real>(
    scan: &[Vec2<T>],
    plan: &FloorPlan<T>,
    starts: &[Pose<T>],
    config: &IcpConfig,
) -> Result<IcpResult<T>> {
    config.check()?;
    if starts.is_empty() {
        return Err(Error::Empty("ICP needs at least one start pose".into()));
    }
    let walls = plan_cloud(plan, T::lit(config.downsample_cell / 2.0));
    let (scan, walls, tree) = prepare(scan, &walls, config)?;
    let runs = starts
        .par_iter()
        .map(|&s| align_with_tree(&scan, &walls, &tree, s, config))
        .collect::<Result<Vec<_>>>()?;
    let mut best = runs[0];
    for r in &runs[1..] {
        if r.rmse < best.rmse {
            best = *r;
        }
    }
    Ok(best)
}
