//! Seeded procedural floor plans (recursive axis-aligned splits with optional
//! L-shaped merges), furniture clutter and query pose sampling.

use rand::Rng as _;

use super::{FloorPlan, FurnishedScene, FurnitureBox, FurnitureLevel, Pose};
use crate::error::{Error, Result};
use crate::geometry::{self, Vec2};
use crate::real::Real;
use crate::seed;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenerationParams {
    pub width: f64,
    pub height: f64,
    pub min_room_side: f64,
    pub min_rooms: usize,
    pub max_rooms: usize,
    /// Probability, per room, of one extra split followed by a merge that
    /// turns two rectangles into an L-shaped room.
    pub merge_probability: f64,
    /// Probability that a split lands exactly at the midpoint, producing
    /// rooms with duplicated dimensions.
    pub symmetric_split_probability: f64,
    /// Split positions are rounded to multiples of this length.
    pub snap: f64,
    pub ceiling_height: f64,
    pub camera_height: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            width: 10.0,
            height: 8.0,
            min_room_side: 2.0,
            min_rooms: 3,
            max_rooms: 6,
            merge_probability: 0.3,
            symmetric_split_probability: 0.0,
            snap: 0.05,
            ceiling_height: super::DEFAULT_CEILING_HEIGHT,
            camera_height: super::DEFAULT_CAMERA_HEIGHT,
        }
    }
}

impl GenerationParams {
    pub fn with_rooms(mut self, min: usize, max: usize) -> Self {
        self.min_rooms = min;
        self.max_rooms = max;
        self
    }

    pub fn with_size(mut self, width: f64, height: f64) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0 && self.min_room_side > 0.0) {
            return Err(Error::Generation("bounds and min room side must be positive".into()));
        }
        if self.min_rooms == 0 || self.min_rooms > self.max_rooms {
            return Err(Error::Generation(format!(
                "invalid room count range [{}, {}]",
                self.min_rooms, self.max_rooms
            )));
        }
        if self.min_room_side > self.width.min(self.height) {
            return Err(Error::Generation(format!(
                "min room side {} does not fit in {}x{} bounds",
                self.min_room_side, self.width, self.height
            )));
        }
        let capacity = (self.width / self.min_room_side).floor() * (self.height / self.min_room_side).floor();
        if (self.min_rooms as f64) > capacity {
            return Err(Error::Generation(format!(
                "{} rooms of side >= {} cannot fit in {}x{}",
                self.min_rooms, self.min_room_side, self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    fn ring(&self) -> Vec<Vec2<f64>> {
        vec![
            Vec2::new(self.x0, self.y0),
            Vec2::new(self.x1, self.y0),
            Vec2::new(self.x1, self.y1),
            Vec2::new(self.x0, self.y1),
        ]
    }
}

fn split_position(rng: &mut seed::Rng, lo: f64, hi: f64, p: &GenerationParams) -> f64 {
    if rng.random::<f64>() < p.symmetric_split_probability {
        return lo + (hi - lo) * 0.5;
    }
    let raw = rng.random_range((lo + p.min_room_side)..=(hi - p.min_room_side));
    let snapped = (raw / p.snap).round() * p.snap;
    if snapped - lo >= p.min_room_side && hi - snapped >= p.min_room_side {
        snapped
    } else {
        raw
    }
}

fn bsp(rng: &mut seed::Rng, p: &GenerationParams, target: usize) -> Option<Vec<Rect>> {
    let mut rects = vec![Rect {
        x0: 0.0,
        y0: 0.0,
        x1: p.width,
        y1: p.height,
    }];
    let two = 2.0 * p.min_room_side;
    while rects.len() < target {
        let candidates: Vec<usize> = (0..rects.len())
            .filter(|&i| rects[i].x1 - rects[i].x0 >= two || rects[i].y1 - rects[i].y0 >= two)
            .collect();
        if candidates.is_empty() {
            return None;
        }
        let total: f64 = candidates.iter().map(|&i| rects[i].area()).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = candidates[candidates.len() - 1];
        for &i in &candidates {
            pick -= rects[i].area();
            if pick <= 0.0 {
                chosen = i;
                break;
            }
        }
        let r = rects[chosen];
        let (w, h) = (r.x1 - r.x0, r.y1 - r.y0);
        let vertical = match (w >= two, h >= two) {
            (true, false) => true,
            (false, true) => false,
            _ if w > h => true,
            _ if h > w => false,
            _ => rng.random::<bool>(),
        };
        let (a, b) = if vertical {
            let x = split_position(rng, r.x0, r.x1, p);
            (Rect { x1: x, ..r }, Rect { x0: x, ..r })
        } else {
            let y = split_position(rng, r.y0, r.y1, p);
            (Rect { y1: y, ..r }, Rect { y0: y, ..r })
        };
        rects[chosen] = a;
        rects.push(b);
    }
    Some(rects)
}

fn merge_rooms(rng: &mut seed::Rng, mut rooms: Vec<Vec<Vec2<f64>>>, merges: usize) -> Option<Vec<Vec<Vec2<f64>>>> {
    for _ in 0..merges {
        let mut pairs = Vec::new();
        for i in 0..rooms.len() {
            for j in (i + 1)..rooms.len() {
                if rooms[i].len() != 4 || rooms[j].len() != 4 {
                    continue;
                }
                if let Some(u) = geometry::union_adjacent(&rooms[i], &rooms[j]) {
                    if u.len() <= 6 {
                        pairs.push((i, j, u));
                    }
                }
            }
        }
        if pairs.is_empty() {
            return None;
        }
        let k = rng.random_range(0..pairs.len());
        let (i, j, u) = pairs.swap_remove(k);
        rooms[i] = u;
        rooms.remove(j);
    }
    Some(rooms)
}

/// Generates a plan whose rooms tile the `width × height` rectangle anchored
/// at the origin. Pure function of `(seed, params)`.
pub fn generate_floorplan<T: Real>(seed: u64, params: &GenerationParams) -> Result<FloorPlan<T>> {
    params.check()?;
    let mut rng = seed::rng(seed);
    for _ in 0..64 {
        let k = rng.random_range(params.min_rooms..=params.max_rooms);
        let mut merges = 0;
        for _ in 0..k {
            if rng.random::<f64>() < params.merge_probability {
                merges += 1;
            }
        }
        let Some(rects) = bsp(&mut rng, params, k + merges) else {
            continue;
        };
        let rings: Vec<_> = rects.iter().map(Rect::ring).collect();
        let Some(rooms) = merge_rooms(&mut rng, rings, merges) else {
            continue;
        };
        let rooms: Vec<Vec<Vec2<T>>> = rooms.into_iter().map(|r| r.into_iter().map(|v| v.cast()).collect()).collect();
        let plan = FloorPlan::new(
            format!("plan-{seed}"),
            rooms,
            T::lit(params.ceiling_height),
            T::lit(params.camera_height),
        )?;
        return Ok(plan);
    }
    Err(Error::Generation(format!(
        "could not reach {}..{} rooms with min side {} after 64 attempts",
        params.min_rooms, params.max_rooms, params.min_room_side
    )))
}

/// Uniform poses over free space at least `clearance` from every wall.
pub fn sample_query_poses<T: Real>(plan: &FloorPlan<T>, n: usize, seed: u64, clearance: T) -> Result<Vec<Pose<T>>> {
    sample_where(plan, n, seed, clearance, |p| plan.is_clear(p, clearance))
}

/// Like [`sample_query_poses`], additionally keeping `clearance` from every
/// furniture footprint.
pub fn sample_clear_poses<T: Real>(scene: &FurnishedScene<T>, n: usize, seed: u64, clearance: T) -> Result<Vec<Pose<T>>> {
    sample_where(&scene.plan, n, seed, clearance, |p| scene.is_clear(p, clearance))
}

fn sample_where<T: Real>(
    plan: &FloorPlan<T>,
    n: usize,
    seed: u64,
    clearance: T,
    accept: impl Fn(Pose<T>) -> bool,
) -> Result<Vec<Pose<T>>> {
    if n == 0 {
        return Err(Error::Sampling("need at least one pose".into()));
    }
    let mut rng = seed::rng(seed);
    let (lo, hi) = plan.bounds();
    let (lo, hi) = (lo.cast::<f64>(), hi.cast::<f64>());
    let mut out = Vec::with_capacity(n);
    let budget = 20_000 + 2_000 * n;
    for attempt in 0..budget {
        if out.len() == n {
            break;
        }
        if attempt == 20_000 && out.is_empty() {
            break;
        }
        let p = Pose::new(
            T::lit(rng.random_range(lo.x..hi.x)),
            T::lit(rng.random_range(lo.y..hi.y)),
        );
        if accept(p) {
            out.push(p);
        }
    }
    if out.len() < n {
        return Err(Error::Sampling(format!(
            "free space at clearance {clearance} is empty or too small ({} of {n} poses found)",
            out.len()
        )));
    }
    Ok(out)
}

/// True if the segment passes through the open interior of the box footprint.
fn segment_enters_box<T: Real>(a: Vec2<T>, b: Vec2<T>, bx: &FurnitureBox<T>) -> bool {
    let d = b - a;
    let (mut t0, mut t1) = (T::zero(), T::one());
    for (p, q) in [
        (-d.x, a.x - bx.min.x),
        (d.x, bx.max.x - a.x),
        (-d.y, a.y - bx.min.y),
        (d.y, bx.max.y - a.y),
    ] {
        if p == T::zero() {
            if q < T::zero() {
                return false;
            }
        } else {
            let r = q / p;
            if p < T::zero() {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 >= t1 {
        return false;
    }
    let mid = a + d * ((t0 + t1) * T::half());
    mid.x > bx.min.x && mid.x < bx.max.x && mid.y > bx.min.y && mid.y < bx.max.y
}

pub(crate) fn box_inside_ring<T: Real>(ring: &[Vec2<T>], bx: &FurnitureBox<T>) -> bool {
    let c = (bx.min + bx.max) * T::half();
    geometry::contains_strict(ring, c) && !geometry::edges(ring).any(|(a, b)| segment_enters_box(a, b, bx))
}

pub fn place_furniture<T: Real>(plan: &FloorPlan<T>, level: FurnitureLevel, seed: u64) -> Result<FurnishedScene<T>> {
    place_furniture_avoiding(plan, level, seed, &[], T::zero())
}

/// Places axis-aligned boxes room by room. No box footprint, grown by
/// `margin`, covers any of the `keep_clear` poses.
pub fn place_furniture_avoiding<T: Real>(
    plan: &FloorPlan<T>,
    level: FurnitureLevel,
    seed: u64,
    keep_clear: &[Pose<T>],
    margin: T,
) -> Result<FurnishedScene<T>> {
    let mut rng = seed::named_rng(seed, level.name());
    let (lo_count, hi_count) = level.count_range();
    let max_height = (plan.ceiling_height.as_f64() - 0.1).min(2.2);
    let mut furniture = Vec::new();
    for (ri, ring) in plan.rooms.iter().enumerate() {
        if hi_count == 0 {
            break;
        }
        let count = rng.random_range(lo_count..=hi_count);
        let lo = ring.iter().fold(Vec2::new(f64::INFINITY, f64::INFINITY), |m, v| {
            Vec2::new(m.x.min(v.x.as_f64()), m.y.min(v.y.as_f64()))
        });
        let hi = ring.iter().fold(Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |m, v| {
            Vec2::new(m.x.max(v.x.as_f64()), m.y.max(v.y.as_f64()))
        });
        let extent = (hi.x - lo.x).min(hi.y - lo.y);
        let max_side = (0.45 * extent).clamp(0.3, 1.2);
        for bi in 0..count {
            let mut placed = None;
            for _ in 0..500 {
                let w = rng.random_range(0.3..=max_side);
                let d = rng.random_range(0.3..=max_side);
                if hi.x - lo.x <= w || hi.y - lo.y <= d {
                    continue;
                }
                let x0 = rng.random_range(lo.x..(hi.x - w));
                let y0 = rng.random_range(lo.y..(hi.y - d));
                let h = rng.random_range(0.4..=max_height);
                let bx = FurnitureBox {
                    min: Vec2::new(T::lit(x0), T::lit(y0)),
                    max: Vec2::new(T::lit(x0 + w), T::lit(y0 + d)),
                    height: T::lit(h),
                };
                if !box_inside_ring(ring, &bx) {
                    continue;
                }
                if keep_clear.iter().any(|p| bx.covers(p.point(), margin)) {
                    continue;
                }
                placed = Some(bx);
                break;
            }
            match placed {
                Some(bx) => furniture.push(bx),
                None => {
                    return Err(Error::Placement(format!(
                        "room {ri}: could not place box {bi} of {count} after 500 attempts"
                    )))
                }
            }
        }
    }
    let scene = FurnishedScene {
        plan: plan.clone(),
        furniture,
        level,
        seed,
    };
    scene.validate()?;
    Ok(scene)
}
