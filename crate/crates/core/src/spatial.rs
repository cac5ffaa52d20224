//! Static kd-tree for nearest-neighbour queries in 2 or 3 dimensions.

use crate::real::Real;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node<T> {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: T, left: usize, right: usize },
}

/// Points are copied and reordered at build time; queries return indices
/// into the original slice.
#[derive(Clone, Debug)]
pub struct KdTree<T, const K: usize> {
    points: Vec<[T; K]>,
    index: Vec<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Real, const K: usize> KdTree<T, K> {
    pub fn build(points: &[[T; K]]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            index: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            let mut order: Vec<usize> = (0..points.len()).collect();
            tree.build_node(&mut order, 0);
            let points: Vec<[T; K]> = order.iter().map(|&i| tree.points[i]).collect();
            tree.points = points;
            tree.index = order;
        }
        tree
    }

    fn build_node(&mut self, order: &mut [usize], offset: usize) -> usize {
        let id = self.nodes.len();
        if order.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: offset,
                end: offset + order.len(),
            });
            return id;
        }
        let mut axis = 0;
        let mut best_spread = T::zero();
        for k in 0..K {
            let (lo, hi) = order.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &i| {
                let v = self.points[i][k];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = k;
            }
        }
        if best_spread == T::zero() {
            self.nodes.push(Node::Leaf {
                start: offset,
                end: offset + order.len(),
            });
            return id;
        }
        let mid = order.len() / 2;
        let pts = &self.points;
        order.select_nth_unstable_by(mid, |&a, &b| {
            pts[a][axis].partial_cmp(&pts[b][axis]).unwrap_or(std::cmp::Ordering::Equal)
        });
        let value = self.points[order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let (lo, hi) = order.split_at_mut(mid);
        let left = self.build_node(lo, offset);
        let right = self.build_node(hi, offset + mid);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the closest point, `None` when empty.
    pub fn nearest(&self, q: &[T; K]) -> Option<(usize, T)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, T::infinity());
        self.search(0, q, &mut best);
        Some((self.index[best.0], best.1))
    }

    /// Squared distance to the closest point, infinite when empty.
    pub fn nearest_dist_sq(&self, q: &[T; K]) -> T {
        self.nearest(q).map_or(T::infinity(), |(_, d)| d)
    }

    fn search(&self, node: usize, q: &[T; K], best: &mut (usize, T)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let d = dist_sq(&self.points[i], q);
                    let tie = d == best.1 && best.0 != usize::MAX && self.index[i] < self.index[best.0];
                    if d < best.1 || tie {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < T::zero() { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

pub fn dist_sq<T: Real, const K: usize>(a: &[T; K], b: &[T; K]) -> T {
    let mut s = T::zero();
    for k in 0..K {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute<const K: usize>(pts: &[[f64; K]], q: &[f64; K]) -> (usize, f64) {
        pts.iter()
            .enumerate()
            .map(|(i, p)| (i, dist_sq(p, q)))
            .fold((usize::MAX, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
    }

    #[test]
    fn matches_brute_force_in_3d() {
        let mut rng = crate::seed::rng(3);
        let pts: Vec<[f64; 3]> = (0..700).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let tree = KdTree::build(&pts);
        for _ in 0..300 {
            let q = [rng.random(), rng.random(), rng.random::<f64>() * 2.0 - 0.5];
            let (i, d) = tree.nearest(&q).unwrap();
            let (bi, bd) = brute(&pts, &q);
            assert_eq!(d, bd);
            assert_eq!(i, bi);
        }
    }

    #[test]
    fn handles_planar_and_duplicate_points() {
        let mut pts: Vec<[f64; 2]> = (0..200).map(|i| [1.0, i as f64 * 0.01]).collect();
        pts.extend(std::iter::repeat_n([0.5, 0.5], 50));
        let tree = KdTree::build(&pts);
        let (i, d) = tree.nearest(&[0.0, 0.5]).unwrap();
        assert_eq!(d, 0.25);
        assert_eq!(i, 200);
        let (i, d) = tree.nearest(&[1.0, 0.505]).unwrap();
        assert!(i == 50 || i == 51);
        assert!(d < 1e-4);
    }

    #[test]
    fn empty_tree_has_no_neighbour() {
        let tree: KdTree<f64, 2> = KdTree::build(&[]);
        assert!(tree.nearest(&[0.0, 0.0]).is_none());
        assert!(tree.is_empty());
    }
}
