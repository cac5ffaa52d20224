//! Planar geometry on simple polygons.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> T {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    /// Left-hand perpendicular; the inward normal direction of a CCW edge.
    #[inline]
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn cast<U: Real>(self) -> Vec2<U> {
        Vec2::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()))
    }
}

impl<T: Real> Add for Vec2<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Real> Sub for Vec2<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Real> Mul<T> for Vec2<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl<T: Real> Neg for Vec2<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Iterator over the directed edges `(v[i], v[i+1])` of a closed ring.
pub fn edges<T: Copy>(ring: &[Vec2<T>]) -> impl Iterator<Item = (Vec2<T>, Vec2<T>)> + '_ {
    let n = ring.len();
    (0..n).map(move |i| (ring[i], ring[(i + 1) % n]))
}

pub fn signed_area<T: Real>(ring: &[Vec2<T>]) -> T {
    let twice: T = edges(ring).map(|(a, b)| a.cross(b)).sum();
    twice * T::half()
}

pub fn point_segment_distance<T: Real>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> T {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == T::zero() {
        return (p - a).norm();
    }
    let t = ((p - a).dot(ab) / len_sq).max(T::zero()).min(T::one());
    (p - (a + ab * t)).norm()
}

pub fn distance_to_boundary<T: Real>(ring: &[Vec2<T>], p: Vec2<T>) -> T {
    edges(ring)
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(T::infinity(), T::min)
}

/// Orientation sign of `c` relative to the directed line `a -> b`.
fn orient<T: Real>(a: Vec2<T>, b: Vec2<T>, c: Vec2<T>) -> T {
    (b - a).cross(c - a)
}

fn on_segment<T: Real>(p: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> bool {
    orient(a, b, p) == T::zero()
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

/// True if the closed segments share any point.
pub fn segments_touch<T: Real>(a: Vec2<T>, b: Vec2<T>, c: Vec2<T>, d: Vec2<T>) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    let z = T::zero();
    if ((o1 > z && o2 < z) || (o1 < z && o2 > z)) && ((o3 > z && o4 < z) || (o3 < z && o4 > z)) {
        return true;
    }
    on_segment(c, a, b) || on_segment(d, a, b) || on_segment(a, c, d) || on_segment(b, c, d)
}

/// True if the open segments cross at a single interior point of both.
pub fn segments_cross_properly<T: Real>(a: Vec2<T>, b: Vec2<T>, c: Vec2<T>, d: Vec2<T>) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    let z = T::zero();
    ((o1 > z && o2 < z) || (o1 < z && o2 > z)) && ((o3 > z && o4 < z) || (o3 < z && o4 > z))
}

pub fn on_boundary<T: Real>(ring: &[Vec2<T>], p: Vec2<T>) -> bool {
    edges(ring).any(|(a, b)| on_segment(p, a, b))
}

/// Strict interior test; points on the boundary are outside.
pub fn contains_strict<T: Real>(ring: &[Vec2<T>], p: Vec2<T>) -> bool {
    if on_boundary(ring, p) {
        return false;
    }
    let mut inside = false;
    for (a, b) in edges(ring) {
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Checks that a ring is a simple polygon: no repeated vertices, no
/// zero-length edges, and no contact between non-adjacent edges.
pub fn is_simple<T: Real>(ring: &[Vec2<T>]) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if ring[i] == ring[j] {
                return false;
            }
        }
    }
    let e: Vec<_> = edges(ring).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (a, b) = e[i];
            let (c, d) = e[j];
            if adjacent {
                // Adjacent edges may only meet at their shared vertex.
                let (other_i, other_j) = if j == i + 1 { (a, d) } else { (b, c) };
                if on_segment(other_j, a, b) || on_segment(other_i, c, d) {
                    return false;
                }
            } else if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    signed_area(ring) != T::zero()
}

/// A point strictly inside a simple polygon, found on a horizontal scanline
/// between the two lowest distinct vertex ordinates.
pub fn interior_point<T: Real>(ring: &[Vec2<T>]) -> Option<Vec2<T>> {
    let mut ys: Vec<T> = ring.iter().map(|v| v.y).collect();
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.dedup();
    for w in ys.windows(2) {
        let y = (w[0] + w[1]) * T::half();
        let mut xs: Vec<T> = edges(ring)
            .filter(|(a, b)| (a.y > y) != (b.y > y))
            .map(|(a, b)| a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y))
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if xs.len() >= 2 && xs[1] > xs[0] {
            let p = Vec2::new((xs[0] + xs[1]) * T::half(), y);
            if contains_strict(ring, p) {
                return Some(p);
            }
        }
    }
    None
}

/// Detects interior overlap between two simple polygons.
///
/// Exact for rectilinear polygons: every cell of the coordinate grid spanned
/// by both vertex sets lies wholly inside or outside each polygon, so testing
/// cell centres decides overlap. Proper edge crossings catch the general case.
pub fn interiors_overlap<T: Real>(a: &[Vec2<T>], b: &[Vec2<T>]) -> bool {
    for (p, q) in edges(a) {
        for (r, s) in edges(b) {
            if segments_cross_properly(p, q, r, s) {
                return true;
            }
        }
    }
    let mut xs: Vec<T> = a.iter().chain(b.iter()).map(|v| v.x).collect();
    let mut ys: Vec<T> = a.iter().chain(b.iter()).map(|v| v.y).collect();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    xs.dedup();
    ys.dedup();
    for wx in xs.windows(2) {
        for wy in ys.windows(2) {
            let c = Vec2::new((wx[0] + wx[1]) * T::half(), (wy[0] + wy[1]) * T::half());
            if contains_strict(a, c) && contains_strict(b, c) {
                return true;
            }
        }
    }
    false
}

/// Removes vertices lying on the straight line through their neighbours.
pub fn drop_collinear<T: Real>(ring: &[Vec2<T>]) -> Vec<Vec2<T>> {
    let mut out: Vec<Vec2<T>> = ring.to_vec();
    loop {
        let n = out.len();
        if n < 4 {
            return out;
        }
        let idx = (0..n).find(|&i| {
            let prev = out[(i + n - 1) % n];
            let next = out[(i + 1) % n];
            orient(prev, out[i], next) == T::zero()
        });
        match idx {
            Some(i) => {
                out.remove(i);
            }
            None => return out,
        }
    }
}

/// Union of two polygons with disjoint interiors that share boundary
/// segments. Returns `None` unless the union is bounded by a single ring.
///
/// Both inputs must be counter-clockwise. Shared boundary appears as pairs of
/// opposite directed sub-segments, which cancel.
pub fn union_adjacent<T: Real>(a: &[Vec2<T>], b: &[Vec2<T>]) -> Option<Vec<Vec2<T>>> {
    let split = |ring: &[Vec2<T>], cutters: &[Vec2<T>]| -> Vec<(Vec2<T>, Vec2<T>)> {
        let mut out = Vec::new();
        for (p, q) in edges(ring) {
            let dir = q - p;
            let len_sq = dir.norm_sq();
            let mut cuts: Vec<(T, Vec2<T>)> = cutters
                .iter()
                .filter(|&&c| c != p && c != q && on_segment(c, p, q))
                .map(|&c| ((c - p).dot(dir) / len_sq, c))
                .collect();
            cuts.sort_by(|u, v| u.0.partial_cmp(&v.0).unwrap());
            let mut start = p;
            for (_, c) in cuts {
                out.push((start, c));
                start = c;
            }
            out.push((start, q));
        }
        out
    };
    let mut segs = split(a, b);
    segs.extend(split(b, a));

    let mut keep = vec![true; segs.len()];
    let mut shared = false;
    for i in 0..segs.len() {
        if !keep[i] {
            continue;
        }
        for j in (i + 1)..segs.len() {
            if keep[j] && segs[i].0 == segs[j].1 && segs[i].1 == segs[j].0 {
                keep[i] = false;
                keep[j] = false;
                shared = true;
                break;
            }
        }
    }
    if !shared {
        return None;
    }
    let rest: Vec<_> = segs.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| *s).collect();
    if rest.is_empty() {
        return None;
    }
    let mut ring = vec![rest[0].0];
    let mut used = vec![false; rest.len()];
    used[0] = true;
    let mut cur = rest[0].1;
    while cur != ring[0] {
        let next = (0..rest.len()).find(|&k| !used[k] && rest[k].0 == cur)?;
        used[next] = true;
        ring.push(cur);
        cur = rest[next].1;
    }
    if used.iter().any(|u| !u) {
        return None;
    }
    let ring = drop_collinear(&ring);
    if ring.len() < 4 || !is_simple(&ring) {
        return None;
    }
    Some(ring)
}

/// First parameter `s` in `[0, 1]` at which segment `p -> q` meets segment
/// `a -> b`, if any.
pub fn segment_hit_param<T: Real>(p: Vec2<T>, q: Vec2<T>, a: Vec2<T>, b: Vec2<T>) -> Option<T> {
    let d = q - p;
    let e = b - a;
    let denom = d.cross(e);
    if denom == T::zero() {
        return None;
    }
    let s = (a - p).cross(e) / denom;
    let u = (a - p).cross(d) / denom;
    let z = T::zero();
    let o = T::one();
    if s >= z && s <= o && u >= z && u <= o {
        Some(s)
    } else {
        None
    }
}
