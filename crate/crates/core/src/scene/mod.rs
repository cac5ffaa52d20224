//! Floor plans, camera poses, furniture clutter and the extruded 3D model.

mod generate;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Vec2};
use crate::real::Real;

pub use generate::{
    generate_floorplan, place_furniture, place_furniture_avoiding, sample_clear_poses, sample_query_poses, GenerationParams,
};
pub use io::{load_plan, load_scene, plan_from_json, plan_to_json, save_plan, save_scene};

pub const DEFAULT_CEILING_HEIGHT: f64 = 2.6;
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.6;
pub const DEFAULT_CLEARANCE: f64 = 0.3;

/// A 2-DoF camera position in plan coordinates (meters). Yaw is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Pose<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn point(self) -> Vec2<T> {
        Vec2::new(self.x, self.y)
    }

    pub fn distance(self, other: Self) -> T {
        (self.point() - other.point()).norm()
    }

    pub fn offset(self, dx: T, dy: T) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn cast<U: Real>(self) -> Pose<U> {
        Pose::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()))
    }
}

impl<T: Real> From<Vec2<T>> for Pose<T> {
    fn from(v: Vec2<T>) -> Self {
        Self::new(v.x, v.y)
    }
}

/// Rooms are simple counter-clockwise polygons with pairwise disjoint
/// interiors; the camera sits at a fixed height below the ceiling.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorPlan<T = f64> {
    pub id: String,
    pub rooms: Vec<Vec<Vec2<T>>>,
    pub ceiling_height: T,
    pub camera_height: T,
}

impl<T: Real> FloorPlan<T> {
    /// Builds and validates a plan.
    pub fn new(id: impl Into<String>, rooms: Vec<Vec<Vec2<T>>>, ceiling_height: T, camera_height: T) -> Result<Self> {
        let plan = Self {
            id: id.into(),
            rooms,
            ceiling_height,
            camera_height,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rooms.is_empty() {
            return Err(Error::Validation("plan has no rooms".into()));
        }
        if !(self.camera_height > T::zero() && self.camera_height < self.ceiling_height) {
            return Err(Error::Validation(format!(
                "need 0 < camera_height ({}) < ceiling_height ({})",
                self.camera_height, self.ceiling_height
            )));
        }
        for (i, room) in self.rooms.iter().enumerate() {
            if room.len() < 4 {
                return Err(Error::Validation(format!("room {i} has {} vertices, need at least 4", room.len())));
            }
            if room.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
                return Err(Error::Validation(format!("room {i} has a non-finite vertex")));
            }
            if !geometry::is_simple(room) {
                return Err(Error::Validation(format!("room {i} is not a simple polygon (self-intersection)")));
            }
            if geometry::signed_area(room) <= T::zero() {
                return Err(Error::Validation(format!("room {i} is not counter-clockwise")));
            }
        }
        for i in 0..self.rooms.len() {
            for j in (i + 1)..self.rooms.len() {
                if geometry::interiors_overlap(&self.rooms[i], &self.rooms[j]) {
                    return Err(Error::Validation(format!("rooms {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// Index of the room whose interior strictly contains the pose.
    pub fn room_containing(&self, pose: Pose<T>) -> Option<usize> {
        let p = pose.point();
        self.rooms.iter().position(|r| geometry::contains_strict(r, p))
    }

    pub fn in_free_space(&self, pose: Pose<T>) -> bool {
        self.room_containing(pose).is_some()
    }

    /// Distance from the pose to the nearest wall of any room.
    pub fn wall_distance(&self, pose: Pose<T>) -> T {
        let p = pose.point();
        self.rooms
            .iter()
            .map(|r| geometry::distance_to_boundary(r, p))
            .fold(T::infinity(), T::min)
    }

    /// Inside free space and at least `clearance` from every wall.
    pub fn is_clear(&self, pose: Pose<T>, clearance: T) -> bool {
        self.in_free_space(pose) && self.wall_distance(pose) >= clearance
    }

    pub fn area(&self) -> T {
        self.rooms.iter().map(|r| geometry::signed_area(r)).sum()
    }

    /// Axis-aligned bounding box `(min, max)` of all rooms.
    pub fn bounds(&self) -> (Vec2<T>, Vec2<T>) {
        let mut lo = Vec2::new(T::infinity(), T::infinity());
        let mut hi = Vec2::new(T::neg_infinity(), T::neg_infinity());
        for v in self.rooms.iter().flatten() {
            lo = Vec2::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Vec2::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    /// All wall segments `(room, a, b)` in room-major order.
    pub fn wall_segments(&self) -> Vec<(usize, Vec2<T>, Vec2<T>)> {
        self.rooms
            .iter()
            .enumerate()
            .flat_map(|(r, ring)| geometry::edges(ring).map(move |(a, b)| (r, a, b)))
            .collect()
    }

    /// Moves `from` toward `to`, stopping `margin` short of the first wall
    /// crossed. Returns `to` when the step crosses no wall.
    pub fn clamp_step(&self, from: Pose<T>, to: Pose<T>, margin: T) -> Pose<T> {
        let p = from.point();
        let q = to.point();
        let len = (q - p).norm();
        if len == T::zero() {
            return to;
        }
        let first = self
            .wall_segments()
            .iter()
            .filter_map(|&(_, a, b)| geometry::segment_hit_param(p, q, a, b))
            .fold(T::infinity(), T::min);
        if first.is_infinite() {
            return to;
        }
        let s = (first - margin / len).max(T::zero());
        Pose::from(p + (q - p) * s)
    }

    pub fn cast<U: Real>(&self) -> FloorPlan<U> {
        FloorPlan {
            id: self.id.clone(),
            rooms: self.rooms.iter().map(|r| r.iter().map(|v| v.cast()).collect()).collect(),
            ceiling_height: U::lit(self.ceiling_height.as_f64()),
            camera_height: U::lit(self.camera_height.as_f64()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FurnitureLevel {
    Empty,
    Simple,
    Full,
}

impl FurnitureLevel {
    pub const ALL: [FurnitureLevel; 3] = [FurnitureLevel::Empty, FurnitureLevel::Simple, FurnitureLevel::Full];

    /// Inclusive per-room box count range.
    pub fn count_range(self) -> (usize, usize) {
        match self {
            FurnitureLevel::Empty => (0, 0),
            FurnitureLevel::Simple => (2, 5),
            FurnitureLevel::Full => (6, 12),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FurnitureLevel::Empty => "empty",
            FurnitureLevel::Simple => "simple",
            FurnitureLevel::Full => "full",
        }
    }
}

impl std::str::FromStr for FurnitureLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empty" => Ok(FurnitureLevel::Empty),
            "simple" => Ok(FurnitureLevel::Simple),
            "full" => Ok(FurnitureLevel::Full),
            other => Err(Error::InvalidParams(format!("unknown furniture level `{other}`"))),
        }
    }
}

/// Axis-aligned box standing on the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FurnitureBox<T = f64> {
    pub min: Vec2<T>,
    pub max: Vec2<T>,
    pub height: T,
}

impl<T: Real> FurnitureBox<T> {
    pub fn footprint(&self) -> [Vec2<T>; 4] {
        [
            self.min,
            Vec2::new(self.max.x, self.min.y),
            self.max,
            Vec2::new(self.min.x, self.max.y),
        ]
    }

    pub fn covers(&self, p: Vec2<T>, margin: T) -> bool {
        p.x >= self.min.x - margin && p.x <= self.max.x + margin && p.y >= self.min.y - margin && p.y <= self.max.y + margin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FurnishedScene<T = f64> {
    pub plan: FloorPlan<T>,
    pub furniture: Vec<FurnitureBox<T>>,
    pub level: FurnitureLevel,
    pub seed: u64,
}

impl<T: Real> FurnishedScene<T> {
    pub fn empty(plan: FloorPlan<T>) -> Self {
        Self {
            plan,
            furniture: Vec::new(),
            level: FurnitureLevel::Empty,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.level == FurnitureLevel::Empty && !self.furniture.is_empty() {
            return Err(Error::Validation("empty furniture level with boxes".into()));
        }
        for (i, b) in self.furniture.iter().enumerate() {
            if !(b.height > T::zero() && b.height < self.plan.ceiling_height) {
                return Err(Error::Validation(format!("box {i} height out of range")));
            }
            if !(b.min.x < b.max.x && b.min.y < b.max.y) {
                return Err(Error::Validation(format!("box {i} has an empty footprint")));
            }
            let inside = self.plan.rooms.iter().any(|r| generate::box_inside_ring(r, b));
            if !inside {
                return Err(Error::Validation(format!("box {i} footprint is not inside a room")));
            }
        }
        Ok(())
    }

    /// Wall clearance plus the same margin around every box footprint.
    pub fn is_clear(&self, pose: Pose<T>, clearance: T) -> bool {
        self.plan.is_clear(pose, clearance) && !self.furniture.iter().any(|b| b.covers(pose.point(), clearance))
    }
}

/// Surface classes recorded per pixel by the renderer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    Floor,
    Ceiling,
    Furniture,
    Wall(u16),
}

impl Surface {
    pub const FLOOR_CODE: u16 = 0;
    pub const CEILING_CODE: u16 = 1;
    pub const FURNITURE_CODE: u16 = 2;
    pub const WALL_BASE: u16 = 3;

    pub fn code(self) -> u16 {
        match self {
            Surface::Floor => Self::FLOOR_CODE,
            Surface::Ceiling => Self::CEILING_CODE,
            Surface::Furniture => Self::FURNITURE_CODE,
            Surface::Wall(id) => Self::WALL_BASE + id,
        }
    }

    pub fn from_code(code: u16) -> Self {
        match code {
            Self::FLOOR_CODE => Surface::Floor,
            Self::CEILING_CODE => Surface::Ceiling,
            Self::FURNITURE_CODE => Surface::Furniture,
            c => Surface::Wall(c - Self::WALL_BASE),
        }
    }
}

/// One vertical wall rectangle spanning `z ∈ [0, height]` over the segment
/// `a -> b`. The normal points into the room the wall bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallQuad<T = f64> {
    pub a: Vec2<T>,
    pub b: Vec2<T>,
    pub normal: Vec2<T>,
    /// `normal · a`; the wall line is `{p : normal · p = offset}`.
    pub offset: T,
    pub height: T,
    pub room: usize,
    pub id: u16,
}

/// The extruded reference model: walls, floors and ceilings only.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene3D<T = f64> {
    pub walls: Vec<WallQuad<T>>,
    pub floors: Vec<Vec<Vec2<T>>>,
    pub ceilings: Vec<Vec<Vec2<T>>>,
    pub ceiling_height: T,
    pub camera_height: T,
}

/// Extrudes every room edge into a wall quad and adds one floor and one
/// ceiling polygon per room. Shared edges keep one quad per room.
pub fn extrude<T: Real>(plan: &FloorPlan<T>) -> Scene3D<T> {
    let mut walls = Vec::new();
    for (room, ring) in plan.rooms.iter().enumerate() {
        for (a, b) in geometry::edges(ring) {
            let dir = b - a;
            let normal = dir.perp() * (T::one() / dir.norm());
            walls.push(WallQuad {
                a,
                b,
                normal,
                offset: normal.dot(a),
                height: plan.ceiling_height,
                room,
                id: walls.len() as u16,
            });
        }
    }
    Scene3D {
        walls,
        floors: plan.rooms.clone(),
        ceilings: plan.rooms.clone(),
        ceiling_height: plan.ceiling_height,
        camera_height: plan.camera_height,
    }
}
