//! Dissimilarities between depth renders and point clouds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::real::Real;
use crate::render::{backproject, PanoDepth, PointCloud};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    Edges,
    Depth,
    RelativeDepth,
    Chamfer3d,
}

impl SimilarityMetric {
    pub const ALL: [SimilarityMetric; 4] = [
        SimilarityMetric::Edges,
        SimilarityMetric::Depth,
        SimilarityMetric::RelativeDepth,
        SimilarityMetric::Chamfer3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SimilarityMetric::Edges => "edges",
            SimilarityMetric::Depth => "depth",
            SimilarityMetric::RelativeDepth => "relative_depth",
            SimilarityMetric::Chamfer3d => "chamfer3d",
        }
    }

    pub fn between<T: Real>(self, a: &PanoDepth<T>, b: &PanoDepth<T>) -> Result<T> {
        match self {
            SimilarityMetric::Edges => edge_chamfer_2d(a, b),
            SimilarityMetric::Depth => l1_depth(a, b),
            SimilarityMetric::RelativeDepth => l1_relative_depth(a, b),
            SimilarityMetric::Chamfer3d => {
                check_dims(a, b)?;
                chamfer_3d(&backproject(a), &backproject(b))
            }
        }
    }
}

impl std::fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SimilarityMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SimilarityMetric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown metric `{s}`")))
    }
}

fn check_dims<T>(a: &PanoDepth<T>, b: &PanoDepth<T>) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn l1_depth<T: Real>(a: &PanoDepth<T>, b: &PanoDepth<T>) -> Result<T> {
    check_dims(a, b)?;
    let sum: T = a.depth.iter().zip(&b.depth).map(|(&x, &y)| (x - y).abs()).sum();
    Ok(sum / T::lit(a.depth.len() as f64))
}

pub fn l1_relative_depth<T: Real>(a: &PanoDepth<T>, b: &PanoDepth<T>) -> Result<T> {
    check_dims(a, b)?;
    let (ma, mb) = (a.max_depth(), b.max_depth());
    if ma <= T::zero() || mb <= T::zero() {
        return Err(Error::Degenerate("relative depth needs a positive maximum".into()));
    }
    let sum: T = a
        .depth
        .iter()
        .zip(&b.depth)
        .map(|(&x, &y)| (x / ma - y / mb).abs())
        .sum();
    Ok(sum / T::lit(a.depth.len() as f64))
}

/// Pixels with a differently labelled 4-neighbour; columns wrap around.
pub fn edge_pixels<T>(img: &PanoDepth<T>) -> Vec<(usize, usize)> {
    let (w, h) = (img.width, img.height);
    let label = |u: usize, v: usize| img.labels[v * w + u];
    let mut out = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let l = label(u, v);
            let edge = label((u + 1) % w, v) != l
                || label((u + w - 1) % w, v) != l
                || (v > 0 && label(u, v - 1) != l)
                || (v + 1 < h && label(u, v + 1) != l);
            if edge {
                out.push((u, v));
            }
        }
    }
    out
}

fn mean_wrapped_nn(from: &[(usize, usize)], to: &[(usize, usize)], width: usize) -> f64 {
    let w = width as f64;
    let mut pts = Vec::with_capacity(to.len() * 3);
    for &(u, v) in to {
        for shift in [-w, 0.0, w] {
            pts.push([u as f64 + shift, v as f64]);
        }
    }
    let tree = KdTree::build(&pts);
    let sum: f64 = from
        .iter()
        .map(|&(u, v)| tree.nearest_dist_sq(&[u as f64, v as f64]).sqrt())
        .sum();
    sum / from.len() as f64
}

/// Symmetric Chamfer distance in pixels between the edge sets of two label
/// images.
pub fn edge_chamfer_2d<T: Real>(a: &PanoDepth<T>, b: &PanoDepth<T>) -> Result<T> {
    check_dims(a, b)?;
    let (ea, eb) = (edge_pixels(a), edge_pixels(b));
    if ea.is_empty() || eb.is_empty() {
        return Err(Error::Degenerate("render has no edge pixels".into()));
    }
    Ok(T::lit(mean_wrapped_nn(&ea, &eb, a.width) + mean_wrapped_nn(&eb, &ea, a.width)))
}

/// A point cloud with its nearest-neighbour index built once.
#[derive(Debug, Clone)]
pub struct PreparedCloud<T = f64> {
    pub cloud: PointCloud<T>,
    tree: KdTree<T, 3>,
}

impl<T: Real> PreparedCloud<T> {
    pub fn new(cloud: PointCloud<T>) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::Empty("point cloud".into()));
        }
        let tree = KdTree::build(&cloud.points);
        Ok(PreparedCloud { cloud, tree })
    }

    /// Mean distance from the points of `other` to this cloud.
    pub fn mean_distance_from(&self, other: &PointCloud<T>) -> T {
        let sum: T = other.points.iter().map(|p| self.tree.nearest_dist_sq(p).sqrt()).sum();
        sum / T::lit(other.len() as f64)
    }
}

/// Non-squared symmetric Chamfer distance, in meters.
pub fn chamfer_3d<T: Real>(a: &PointCloud<T>, b: &PointCloud<T>) -> Result<T> {
    chamfer_prepared(&PreparedCloud::new(a.clone())?, &PreparedCloud::new(b.clone())?)
}

pub fn chamfer_prepared<T: Real>(a: &PreparedCloud<T>, b: &PreparedCloud<T>) -> Result<T> {
    Ok(a.mean_distance_from(&b.cloud) + b.mean_distance_from(&a.cloud))
}

pub fn rmse_points<T: Real>(a: &[Vec2<T>], b: &[Vec2<T>]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} points", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Empty("matched point sets".into()));
    }
    let sum: T = a.iter().zip(b).map(|(&p, &q)| (p - q).norm_sq()).sum();
    Ok((sum / T::lit(a.len() as f64)).sqrt())
}
