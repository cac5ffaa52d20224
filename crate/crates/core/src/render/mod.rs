//! Equirectangular depth rendering by ray casting, back-projection, and the
//! pose Jacobian of rendered depth.
//!
//! Pixel `(u, v)` looks along azimuth `θ = 2π(u + ½)/W − π` and elevation
//! `φ = π(½ − (v + ½)/H)`; depth is the Euclidean length along the unit ray
//! from the camera at `(x, y, camera_height)`.

mod io;

use crate::error::{Error, Result};
use crate::geometry::{self, Vec2};
use crate::real::Real;
use crate::scene::{FurnitureBox, Pose, Scene3D, Surface};

pub use io::{load_depth, read_depth, save_depth, write_depth};

/// Encoder input resolution (rows × columns).
pub const EMBED_HEIGHT: usize = 32;
pub const EMBED_WIDTH: usize = 64;
/// Default localisation render resolution.
pub const LOC_WIDTH: usize = 128;
pub const LOC_HEIGHT: usize = 64;

/// Rows of `|n · d_h|` below this are too grazing to differentiate.
pub const GRAZING_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PanoDepth<T = f64> {
    pub width: usize,
    pub height: usize,
    /// Row-major depths in meters.
    pub depth: Vec<T>,
    /// Row-major surface codes, see [`Surface::code`].
    pub labels: Vec<u16>,
}

impl<T: Real> PanoDepth<T> {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> T {
        self.depth[v * self.width + u]
    }

    #[inline]
    pub fn surface(&self, u: usize, v: usize) -> Surface {
        Surface::from_code(self.labels[v * self.width + u])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if n == 0 || self.depth.len() != n || self.labels.len() != n {
            return Err(Error::Dimension(format!(
                "{}x{} image with {} depths and {} labels",
                self.width,
                self.height,
                self.depth.len(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.depth.iter().position(|d| !(d.is_finite() && *d > T::zero())) {
            return Err(Error::Render(format!("pixel {i} has invalid depth {}", self.depth[i])));
        }
        Ok(())
    }

    pub fn max_depth(&self) -> T {
        self.depth.iter().copied().fold(T::zero(), T::max)
    }

    pub fn min_depth(&self) -> T {
        self.depth.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn cast<U: Real>(&self) -> PanoDepth<U> {
        PanoDepth {
            width: self.width,
            height: self.height,
            depth: self.depth.iter().map(|d| U::lit(d.as_f64())).collect(),
            labels: self.labels.clone(),
        }
    }
}

#[inline]
pub fn azimuth<T: Real>(u: usize, width: usize) -> T {
    T::TAU() * (T::lit(u as f64) + T::half()) / T::lit(width as f64) - T::PI()
}

#[inline]
pub fn elevation<T: Real>(v: usize, height: usize) -> T {
    T::PI() * (T::half() - (T::lit(v as f64) + T::half()) / T::lit(height as f64))
}

pub fn elevations<T: Real>(height: usize) -> Vec<T> {
    (0..height).map(|v| elevation(v, height)).collect()
}

/// Unit ray for azimuth `theta` and elevation `phi`, camera frame, z up.
#[inline]
pub fn ray_direction<T: Real>(theta: T, phi: T) -> [T; 3] {
    let c = phi.cos();
    [c * theta.cos(), c * theta.sin(), phi.sin()]
}

/// First wall hit along a horizontal direction: `(horizontal distance, wall index)`.
///
/// Only walls seen from their inward side count, so a coincident wall of a
/// neighbouring room never shadows the camera's own room.
fn cast_horizontal<T: Real>(scene: &Scene3D<T>, o: Vec2<T>, dir: Vec2<T>) -> Option<(T, usize)> {
    let mut best: Option<(T, usize)> = None;
    for (i, w) in scene.walls.iter().enumerate() {
        let denom = w.normal.dot(dir);
        if denom >= T::zero() {
            continue;
        }
        let height_above = w.normal.dot(o) - w.offset;
        if height_above < T::zero() {
            continue;
        }
        let s = height_above / -denom;
        let p = o + dir * s;
        let ab = w.b - w.a;
        let lambda = (p - w.a).dot(ab) / ab.norm_sq();
        if lambda < T::zero() || lambda > T::one() {
            continue;
        }
        if best.is_none_or(|(bs, _)| s < bs) {
            best = Some((s, i));
        }
    }
    best
}

/// Layout depth for one elevation given the column's horizontal wall hit.
#[inline]
fn shade_layout<T: Real>(scene: &Scene3D<T>, s: T, wall: usize, phi: T) -> (T, Surface) {
    let (sin, cos) = phi.sin_cos();
    let cam = scene.camera_height;
    let z = cam + s * sin / cos;
    if z > scene.ceiling_height {
        ((scene.ceiling_height - cam) / sin, Surface::Ceiling)
    } else if z < T::zero() {
        (cam / -sin, Surface::Floor)
    } else {
        (s / cos, Surface::Wall(scene.walls[wall].id))
    }
}

/// Horizontal entry/exit distances of a ray through a box footprint.
fn footprint_interval<T: Real>(bx: &FurnitureBox<T>, o: Vec2<T>, dir: Vec2<T>) -> Option<(T, T)> {
    let mut lo = T::neg_infinity();
    let mut hi = T::infinity();
    for (oc, dc, mn, mx) in [(o.x, dir.x, bx.min.x, bx.max.x), (o.y, dir.y, bx.min.y, bx.max.y)] {
        if dc == T::zero() {
            if oc < mn || oc > mx {
                return None;
            }
        } else {
            let a = (mn - oc) / dc;
            let b = (mx - oc) / dc;
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    let lo = lo.max(T::zero());
    (lo <= hi).then_some((lo, hi))
}

/// Ray length to the first box surface within the footprint interval.
fn box_hit<T: Real>(interval: (T, T), height: T, cam: T, phi: T) -> Option<T> {
    let (sin, cos) = phi.sin_cos();
    let tan = sin / cos;
    let (mut lo, mut hi) = interval;
    if tan == T::zero() {
        if cam > height {
            return None;
        }
    } else if tan > T::zero() {
        hi = hi.min((height - cam) / tan);
    } else {
        lo = lo.max((height - cam) / tan);
        hi = hi.min(cam / -tan);
    }
    (lo <= hi).then(|| lo / cos)
}

fn in_scene<T: Real>(scene: &Scene3D<T>, pose: Pose<T>) -> bool {
    scene.floors.iter().any(|r| geometry::contains_strict(r, pose.point()))
}

/// Renders with an explicit list of row elevations. Furniture boxes take part
/// in the depth test and are labelled [`Surface::Furniture`].
pub fn render_rows<T: Real>(
    scene: &Scene3D<T>,
    furniture: &[FurnitureBox<T>],
    pose: Pose<T>,
    width: usize,
    rows: &[T],
) -> Result<PanoDepth<T>> {
    if width == 0 || rows.is_empty() {
        return Err(Error::Dimension("render size must be positive".into()));
    }
    if !in_scene(scene, pose) {
        return Err(Error::Render(format!(
            "camera at ({}, {}) is outside the floor plan",
            pose.x, pose.y
        )));
    }
    let height = rows.len();
    let o = pose.point();
    let mut depth = vec![T::zero(); width * height];
    let mut labels = vec![0u16; width * height];
    let mut intervals: Vec<(usize, (T, T))> = Vec::with_capacity(furniture.len());
    for u in 0..width {
        let theta: T = azimuth(u, width);
        let dir = Vec2::new(theta.cos(), theta.sin());
        let (s, wall) = cast_horizontal(scene, o, dir)
            .ok_or_else(|| Error::Render(format!("ray at azimuth {theta} escapes the geometry")))?;
        intervals.clear();
        intervals.extend(
            furniture
                .iter()
                .enumerate()
                .filter_map(|(i, b)| footprint_interval(b, o, dir).map(|iv| (i, iv))),
        );
        for (v, &phi) in rows.iter().enumerate() {
            let (mut t, mut surf) = shade_layout(scene, s, wall, phi);
            for &(i, iv) in &intervals {
                if let Some(tb) = box_hit(iv, furniture[i].height, scene.camera_height, phi) {
                    if tb < t {
                        t = tb;
                        surf = Surface::Furniture;
                    }
                }
            }
            depth[v * width + u] = t;
            labels[v * width + u] = surf.code();
        }
    }
    Ok(PanoDepth {
        width,
        height,
        depth,
        labels,
    })
}

pub fn render_layout_depth<T: Real>(scene: &Scene3D<T>, pose: Pose<T>, width: usize, height: usize) -> Result<PanoDepth<T>> {
    render_rows(scene, &[], pose, width, &elevations(height))
}

pub fn render_furnished_depth<T: Real>(
    scene: &Scene3D<T>,
    furniture: &[FurnitureBox<T>],
    pose: Pose<T>,
    width: usize,
    height: usize,
) -> Result<PanoDepth<T>> {
    render_rows(scene, furniture, pose, width, &elevations(height))
}

/// Camera-frame 3D points, one per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T = f64> {
    pub points: Vec<[T; 3]>,
}

impl<T: Real> PointCloud<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps every `stride`-th point so that at most `max_points` remain.
    pub fn subsample(&self, max_points: usize) -> PointCloud<T> {
        if self.points.len() <= max_points || max_points == 0 {
            return self.clone();
        }
        let stride = self.points.len().div_ceil(max_points);
        PointCloud {
            points: self.points.iter().step_by(stride).copied().collect(),
        }
    }
}

pub fn backproject<T: Real>(depth: &PanoDepth<T>) -> PointCloud<T> {
    let mut points = Vec::with_capacity(depth.depth.len());
    for v in 0..depth.height {
        let phi: T = elevation(v, depth.height);
        for u in 0..depth.width {
            let d = ray_direction(azimuth(u, depth.width), phi);
            let t = depth.at(u, v);
            points.push([d[0] * t, d[1] * t, d[2] * t]);
        }
    }
    PointCloud { points }
}

/// Index of the row closest to the horizon.
pub fn horizon_row(height: usize) -> usize {
    (height - 1) / 2
}

/// Emulated planar laser scan: the near-horizontal row back-projected with z
/// dropped. One point per column, camera frame.
pub fn horizontal_scan<T: Real>(depth: &PanoDepth<T>) -> Vec<Vec2<T>> {
    let v = horizon_row(depth.height);
    let phi: T = elevation(v, depth.height);
    let c = phi.cos();
    (0..depth.width)
        .map(|u| {
            let theta: T = azimuth(u, depth.width);
            let s = depth.at(u, v) * c;
            Vec2::new(s * theta.cos(), s * theta.sin())
        })
        .collect()
}

/// Per-pixel derivative of depth with respect to camera translation.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthJacobian<T = f64> {
    pub width: usize,
    pub height: usize,
    pub d_dx: Vec<T>,
    pub d_dy: Vec<T>,
    /// False where the entry must be excluded: grazing rays for the analytic
    /// Jacobian, visibility edges for the finite-difference one.
    pub valid: Vec<bool>,
}

/// Analytic Jacobian treating each pixel's hit surface as fixed.
///
/// A wall at horizontal distance `s = (n·o − c)/(−n·d_h)` gives
/// `∂s/∂o = −n/(n·d_h)`, scaled by `1/cos φ` to ray length. Floor and
/// ceiling depths do not depend on horizontal translation.
pub fn depth_pose_jacobian_rows<T: Real>(scene: &Scene3D<T>, pose: Pose<T>, width: usize, rows: &[T]) -> Result<DepthJacobian<T>> {
    if !in_scene(scene, pose) {
        return Err(Error::Render(format!(
            "camera at ({}, {}) is outside the floor plan",
            pose.x, pose.y
        )));
    }
    let height = rows.len();
    let o = pose.point();
    let n = width * height;
    let mut d_dx = vec![T::zero(); n];
    let mut d_dy = vec![T::zero(); n];
    let mut valid = vec![true; n];
    let eps = T::lit(GRAZING_EPS);
    for u in 0..width {
        let theta: T = azimuth(u, width);
        let dir = Vec2::new(theta.cos(), theta.sin());
        let (s, wall) = cast_horizontal(scene, o, dir)
            .ok_or_else(|| Error::Render(format!("ray at azimuth {theta} escapes the geometry")))?;
        let w = &scene.walls[wall];
        let nd = w.normal.dot(dir);
        for (v, &phi) in rows.iter().enumerate() {
            let (_, surf) = shade_layout(scene, s, wall, phi);
            let k = v * width + u;
            if let Surface::Wall(_) = surf {
                if nd.abs() < eps {
                    valid[k] = false;
                    continue;
                }
                let scale = -T::one() / (nd * phi.cos());
                d_dx[k] = w.normal.x * scale;
                d_dy[k] = w.normal.y * scale;
            }
        }
    }
    Ok(DepthJacobian {
        width,
        height,
        d_dx,
        d_dy,
        valid,
    })
}

pub fn depth_pose_jacobian<T: Real>(scene: &Scene3D<T>, pose: Pose<T>, width: usize, height: usize) -> Result<DepthJacobian<T>> {
    depth_pose_jacobian_rows(scene, pose, width, &elevations(height))
}

/// Central-difference Jacobian of the layout render. Pixels whose label
/// changes under any of the four perturbations are flagged invalid.
pub fn fd_depth_jacobian_rows<T: Real>(
    scene: &Scene3D<T>,
    pose: Pose<T>,
    width: usize,
    rows: &[T],
    step: T,
) -> Result<DepthJacobian<T>> {
    if !(step > T::zero()) {
        return Err(Error::InvalidParams("finite-difference step must be positive".into()));
    }
    let base = render_rows(scene, &[], pose, width, rows)?;
    let xp = render_rows(scene, &[], pose.offset(step, T::zero()), width, rows)?;
    let xm = render_rows(scene, &[], pose.offset(-step, T::zero()), width, rows)?;
    let yp = render_rows(scene, &[], pose.offset(T::zero(), step), width, rows)?;
    let ym = render_rows(scene, &[], pose.offset(T::zero(), -step), width, rows)?;
    let two_h = step + step;
    let n = base.depth.len();
    let mut d_dx = Vec::with_capacity(n);
    let mut d_dy = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for k in 0..n {
        d_dx.push((xp.depth[k] - xm.depth[k]) / two_h);
        d_dy.push((yp.depth[k] - ym.depth[k]) / two_h);
        let l = base.labels[k];
        valid.push(xp.labels[k] == l && xm.labels[k] == l && yp.labels[k] == l && ym.labels[k] == l);
    }
    Ok(DepthJacobian {
        width,
        height: rows.len(),
        d_dx,
        d_dy,
        valid,
    })
}

pub fn fd_depth_jacobian<T: Real>(scene: &Scene3D<T>, pose: Pose<T>, width: usize, height: usize, step: T) -> Result<DepthJacobian<T>> {
    fd_depth_jacobian_rows(scene, pose, width, &elevations(height), step)
}
