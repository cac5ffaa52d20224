//! Pose pools and anchor/positive/negative sampling for the log-ratio loss.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::metrics::{chamfer_prepared, PreparedCloud};
use crate::real::Real;
use crate::render::{backproject, render_layout_depth, PanoDepth, EMBED_HEIGHT, EMBED_WIDTH};
use crate::scene::{extrude, sample_clear_poses, FloorPlan, FurnishedScene, Pose};
use crate::seed;

use super::{clipped_depth, preprocess};

pub const POSITIVE_RADIUS: f64 = 0.5;
pub const NEGATIVE_RADIUS: f64 = 2.0;
/// Chamfer labels below this are treated as identical layouts.
pub const CHAMFER_FLOOR: f64 = 1e-6;
/// Points kept per cloud when labelling pairs.
pub const LABEL_POINTS: usize = 512;

/// Poses of one scene with their layout renders, encoder inputs and clouds.
#[derive(Debug, Clone)]
pub struct PosePool<T = f64> {
    pub poses: Vec<Pose<T>>,
    pub renders: Vec<PanoDepth<T>>,
    pub inputs: Vec<Vec<T>>,
    pub targets: Vec<Vec<T>>,
    clouds: Vec<PreparedCloud<T>>,
}

impl<T: Real> PosePool<T> {
    pub fn from_poses(plan: &FloorPlan<T>, poses: Vec<Pose<T>>) -> Result<Self> {
        let scene = extrude(plan);
        let mut renders = Vec::with_capacity(poses.len());
        let mut inputs = Vec::with_capacity(poses.len());
        let mut targets = Vec::with_capacity(poses.len());
        let mut clouds = Vec::with_capacity(poses.len());
        for &p in &poses {
            let r = render_layout_depth(&scene, p, EMBED_WIDTH, EMBED_HEIGHT)?;
            inputs.push(preprocess(&r)?);
            targets.push(clipped_depth(&r)?);
            clouds.push(PreparedCloud::new(backproject(&r).subsample(LABEL_POINTS))?);
            renders.push(r);
        }
        Ok(PosePool {
            poses,
            renders,
            inputs,
            targets,
            clouds,
        })
    }

    /// `base` uniform poses clear of walls and furniture, each followed by a
    /// companion pose less than `POSITIVE_RADIUS` away so that every base
    /// pose has a positive.
    pub fn sample_clear(scene: &FurnishedScene<T>, base: usize, seed: u64, clearance: T) -> Result<Self> {
        let plan = &scene.plan;
        let bases = sample_clear_poses(scene, base, seed::sub_seed(seed, "pool-base"), clearance)?;
        let mut rng = seed::named_rng(seed, "pool-companion");
        let mut poses = Vec::with_capacity(2 * base);
        for b in bases {
            poses.push(b);
            for _ in 0..100 {
                let r = 0.45 * rng.random::<f64>().sqrt();
                let a = std::f64::consts::TAU * rng.random::<f64>();
                let c = b.offset(T::lit(r * a.cos()), T::lit(r * a.sin()));
                if scene.is_clear(c, clearance) {
                    poses.push(c);
                    break;
                }
            }
        }
        Self::from_poses(plan, poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Memoized Chamfer labels keyed by unordered pool index pairs.
#[derive(Debug, Default, Clone)]
pub struct ChamferCache {
    values: HashMap<(usize, usize), f64>,
}

impl ChamferCache {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Chamfer distance between the camera-frame clouds of two pool entries.
pub fn label_chamfer<T: Real>(pool: &PosePool<T>, a: usize, b: usize, cache: &mut ChamferCache) -> Result<f64> {
    let key = (a.min(b), a.max(b));
    if let Some(&v) = cache.values.get(&key) {
        return Ok(v);
    }
    let v = chamfer_prepared(&pool.clouds[a], &pool.clouds[b])?.as_f64();
    cache.values.insert(key, v);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet<T = f64> {
    pub anchor_pose: Pose<T>,
    pub pos_pose: Pose<T>,
    pub neg_pose: Pose<T>,
    pub gt_anchor_pos: f64,
    pub gt_anchor_neg: f64,
}

/// One anchor with its positive first, then its negatives, and the
/// ground-truth Chamfer distance from the anchor to each neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchor: usize,
    pub neighbours: Vec<usize>,
    pub gt: Vec<f64>,
}

impl TripletBatch {
    /// Every ordered pair of distinct neighbour slots.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.neighbours.len();
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    /// The positive paired with each negative.
    pub fn triplets<T: Real>(&self, pool: &PosePool<T>) -> Vec<Triplet<T>> {
        let p = self.neighbours[0];
        self.neighbours[1..]
            .iter()
            .zip(&self.gt[1..])
            .map(|(&n, &g)| Triplet {
                anchor_pose: pool.poses[self.anchor],
                pos_pose: pool.poses[p],
                neg_pose: pool.poses[n],
                gt_anchor_pos: self.gt[0],
                gt_anchor_neg: g,
            })
            .collect()
    }
}

/// Draws one positive (closer than 0.5 m) and `n_neg` negatives (farther
/// than 2 m) for `anchor`. Returns `None`, with a warning, when the pool
/// cannot supply them.
pub fn sample_triplets<T: Real>(
    pool: &PosePool<T>,
    anchor: usize,
    n_neg: usize,
    seed: u64,
    cache: &mut ChamferCache,
) -> Result<Option<TripletBatch>> {
    let a = pool.poses[anchor];
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, &p) in pool.poses.iter().enumerate() {
        if i == anchor {
            continue;
        }
        let d = a.distance(p).as_f64();
        if d < POSITIVE_RADIUS && label_chamfer(pool, anchor, i, cache)? > CHAMFER_FLOOR {
            positives.push(i);
        } else if d > NEGATIVE_RADIUS {
            negatives.push(i);
        }
    }
    if positives.is_empty() {
        log::warn!("anchor {anchor}: no positive within {POSITIVE_RADIUS} m, skipped");
        return Ok(None);
    }
    if negatives.len() < n_neg {
        log::warn!("anchor {anchor}: {} negatives available, {n_neg} needed, skipped", negatives.len());
        return Ok(None);
    }
    let mut rng = seed::rng(seed);
    let mut neighbours = vec![positives[rng.random_range(0..positives.len())]];
    let mut picked: Vec<usize> = sample(&mut rng, negatives.len(), n_neg).into_iter().collect();
    picked.sort_unstable();
    neighbours.extend(picked.into_iter().map(|k| negatives[k]));
    let mut gt = Vec::with_capacity(neighbours.len());
    for &n in &neighbours {
        gt.push(label_chamfer(pool, anchor, n, cache)?);
    }
    if gt.iter().any(|&g| g <= CHAMFER_FLOOR) {
        log::warn!("anchor {anchor}: identical layout among negatives, skipped");
        return Ok(None);
    }
    Ok(Some(TripletBatch {
        anchor,
        neighbours,
        gt,
    }))
}
