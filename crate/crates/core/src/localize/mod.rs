//! Grid retrieval, Vogel-disc resampling, latent pose optimisation and the
//! decode-refine and ICP baselines.

mod icp;
mod optimize;
mod pipeline;

use rayon::prelude::*;

use crate::embed::{clipped_depth, preprocess, DecodedDepth, EncoderParams, Embedding};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::{depth_pose_jacobian, render_layout_depth, PanoDepth, EMBED_HEIGHT, EMBED_WIDTH};
use crate::scene::{extrude, FloorPlan, Pose, Scene3D};

pub use icp::{downsample, icp_align, icp_localize, plan_cloud, IcpConfig, IcpResult};
pub use optimize::{decode_refine, latent_pose_optimize, optimize_pose, GradientMode, LpoConfig, LpoOutcome, TracePoint};
pub use pipeline::{localize_full, LocalizationResult, PipelineConfig, StageCosts, Stages};

/// Something that assigns a dissimilarity to the layout seen from a pose.
pub trait PoseCost<T: Real>: Sync {
    fn cost(&self, pose: Pose<T>) -> Result<T>;

    /// Cost and its gradient with respect to `(x, y)`, when available in
    /// closed form.
    fn cost_and_gradient(&self, _pose: Pose<T>) -> Result<Option<(T, [T; 2])>> {
        Ok(None)
    }
}

/// Embedding distance between the layout rendered at a pose and a fixed
/// query embedding.
pub struct LatentCost<'a, T = f64> {
    pub scene: &'a Scene3D<T>,
    pub params: &'a EncoderParams<T>,
    pub query: &'a Embedding<T>,
}

impl<T: Real> LatentCost<'_, T> {
    pub fn embed_at(&self, pose: Pose<T>) -> Result<Embedding<T>> {
        let depth = render_layout_depth(self.scene, pose, EMBED_WIDTH, EMBED_HEIGHT)?;
        self.params.encode(&depth)
    }
}

impl<T: Real> PoseCost<T> for LatentCost<'_, T> {
    fn cost(&self, pose: Pose<T>) -> Result<T> {
        Ok(self.embed_at(pose)?.distance(self.query))
    }

    /// Chain rule through the embedding distance, the normalization, the
    /// linear encoder, the depth clip and the depth Jacobian.
    fn cost_and_gradient(&self, pose: Pose<T>) -> Result<Option<(T, [T; 2])>> {
        let depth = render_layout_depth(self.scene, pose, EMBED_WIDTH, EMBED_HEIGHT)?;
        let trace = self.params.encode_input(preprocess(&depth)?)?;
        let e = &trace.embedding;
        let c = e.distance(self.query);
        if c == T::zero() {
            return Ok(Some((c, [T::zero(); 2])));
        }
        let ge: Vec<T> = e.values.iter().zip(&self.query.values).map(|(&a, &b)| (a - b) / c).collect();
        let gz = trace.raw_gradient(&ge);
        let gx = self.params.encoder.apply_transpose(&gz);
        let jac = depth_pose_jacobian(self.scene, pose, EMBED_WIDTH, EMBED_HEIGHT)?;
        let (lo, hi, scale) = (
            T::lit(crate::embed::MIN_DEPTH),
            T::lit(crate::embed::MAX_DEPTH),
            T::lit(crate::embed::MAX_DEPTH),
        );
        let mut g = [T::zero(); 2];
        for (k, &d) in depth.depth.iter().enumerate() {
            if !jac.valid[k] || d <= lo || d >= hi {
                continue;
            }
            let gd = gx[k] / scale;
            g[0] += gd * jac.d_dx[k];
            g[1] += gd * jac.d_dy[k];
        }
        Ok(Some((c, g)))
    }
}

/// Mean absolute difference between a decoded depth image and the clipped
/// layout rendered at a pose.
pub struct DecodeCost<'a, T = f64> {
    pub scene: &'a Scene3D<T>,
    pub target: &'a DecodedDepth<T>,
}

impl<T: Real> PoseCost<T> for DecodeCost<'_, T> {
    fn cost(&self, pose: Pose<T>) -> Result<T> {
        let depth = render_layout_depth(self.scene, pose, self.target.width, self.target.height)?;
        let rendered = clipped_depth(&depth)?;
        let n = T::lit(rendered.len() as f64);
        Ok(rendered
            .iter()
            .zip(&self.target.values)
            .map(|(&a, &b)| (a - b).abs())
            .sum::<T>()
            / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry<T = f64> {
    pub pose: Pose<T>,
    pub embedding: Embedding<T>,
    pub depth: Option<PanoDepth<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDatabase<T = f64> {
    pub resolution: T,
    pub entries: Vec<GridEntry<T>>,
}

impl<T: Real> GridDatabase<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose<T>> {
        self.entries.iter().map(|e| e.pose).collect()
    }
}

/// Grid points `min + (i, j)·resolution` over the plan's bounding box that
/// are inside free space and at least `clearance` from every wall.
pub fn grid_poses<T: Real>(plan: &FloorPlan<T>, resolution: T, clearance: T) -> Result<Vec<Pose<T>>> {
    if !(resolution > T::zero()) {
        return Err(Error::InvalidParams("grid resolution must be positive".into()));
    }
    let (lo, hi) = plan.bounds();
    let slack = T::lit(1e-9);
    let nx = ((hi.x - lo.x) / resolution + slack).floor().to_usize().unwrap_or(0);
    let ny = ((hi.y - lo.y) / resolution + slack).floor().to_usize().unwrap_or(0);
    let mut out = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let p = Pose::new(
                lo.x + resolution * T::lit(i as f64),
                lo.y + resolution * T::lit(j as f64),
            );
            if plan.is_clear(p, clearance) {
                out.push(p);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no grid pose at resolution {resolution} is clear of walls")));
    }
    Ok(out)
}

/// Renders and embeds the layout at every grid pose. Work is spread over
/// the current rayon pool; the result does not depend on its size.
pub fn build_database<T: Real>(
    plan: &FloorPlan<T>,
    resolution: T,
    clearance: T,
    params: &EncoderParams<T>,
    keep_depth: bool,
) -> Result<GridDatabase<T>> {
    let poses = grid_poses(plan, resolution, clearance)?;
    let scene = extrude(plan);
    let entries = poses
        .par_iter()
        .map(|&pose| {
            let depth = render_layout_depth(&scene, pose, EMBED_WIDTH, EMBED_HEIGHT)?;
            let embedding = params.encode(&depth)?;
            Ok(GridEntry {
                pose,
                embedding,
                depth: keep_depth.then_some(depth),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridDatabase { resolution, entries })
}

/// Entry indices with their embedding distances, nearest first; equal
/// distances keep database order.
pub fn retrieve_nn<T: Real>(query: &Embedding<T>, db: &GridDatabase<T>) -> Vec<(usize, T)> {
    let scores: Vec<T> = db.entries.iter().map(|e| e.embedding.distance(query)).collect();
    rank(&scores)
}

/// Indices sorted by ascending score, ties by index.
pub fn rank<T: Real>(scores: &[T]) -> Vec<(usize, T)> {
    let mut ranked: Vec<(usize, T)> = scores.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked
}

/// Golden-angle spiral around `center`: `r_i = radius·√(i/n)`,
/// `θ_i = 2π·i·(1 − 1/φ)` for `i = 1..=n`. The center comes first; points
/// outside free space are dropped.
pub fn vogel_points<T: Real>(plan: &FloorPlan<T>, center: Pose<T>, radius: T, n: usize) -> Vec<Pose<T>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut out = vec![center];
    for i in 1..=n {
        let r = radius.as_f64() * (i as f64 / n as f64).sqrt();
        let theta = std::f64::consts::TAU * i as f64 * (1.0 - 1.0 / phi);
        let p = center.offset(T::lit(r * theta.cos()), T::lit(r * theta.sin()));
        if plan.in_free_space(p) {
            out.push(p);
        }
    }
    out
}

/// Evaluates every Vogel candidate and returns the cheapest with its cost.
/// The center is a candidate, so the cost never exceeds the center's.
pub fn vdr_refine<T: Real>(
    plan: &FloorPlan<T>,
    center: Pose<T>,
    cost: &dyn PoseCost<T>,
    radius: T,
    n: usize,
) -> Result<(Pose<T>, T)> {
    let mut best: Option<(Pose<T>, T)> = None;
    for p in vogel_points(plan, center, radius, n) {
        let c = cost.cost(p)?;
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((p, c));
        }
    }
    Ok(best.expect("center is always a candidate"))
}

#[cfg(test)]
mod tests;
