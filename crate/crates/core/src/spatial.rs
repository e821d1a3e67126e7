//! Exact nearest-neighbor queries over 3D point sets.

use crate::geometry::Vec3;

/// Static k-d tree over a borrowed point slice.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    /// Permutation of point indices; each subtree occupies a contiguous range
    /// with its splitting point in the middle.
    order: Vec<u32>,
    axes: Vec<u8>,
}

const LEAF: usize = 8;

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut axes = vec![0u8; points.len()];
        build_range(points, &mut order, &mut axes, 0);
        Self {
            points,
            order,
            axes,
        }
    }

    /// Index and squared distance of the closest point to `q`, skipping
    /// `exclude`. `None` only when no candidate remains.
    pub fn nearest(&self, q: &Vec3, exclude: Option<usize>) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.order.len(), q, exclude, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, lo: usize, hi: usize, q: &Vec3, exclude: Option<usize>, best: &mut (usize, f64)) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                let i = i as usize;
                if Some(i) == exclude {
                    continue;
                }
                let d = (self.points[i] - q).norm_squared();
                if d < best.1 {
                    *best = (i, d);
                }
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pivot = self.order[mid] as usize;
        let axis = self.axes[mid] as usize;
        if Some(pivot) != exclude {
            let d = (self.points[pivot] - q).norm_squared();
            if d < best.1 {
                *best = (pivot, d);
            }
        }
        let delta = q[axis] - self.points[pivot][axis];
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, exclude, best);
        if delta * delta < best.1 {
            self.search(far.0, far.1, q, exclude, best);
        }
    }
}

fn build_range(points: &[Vec3], order: &mut [u32], axes: &mut [u8], depth: usize) {
    if order.len() <= LEAF {
        return;
    }
    // split on the widest axis of this subset
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(depth % 3);
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a as usize][axis].total_cmp(&points[b as usize][axis]));
    axes[mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    let (left_axes, right_axes) = axes.split_at_mut(mid);
    build_range(points, left, left_axes, depth + 1);
    build_range(points, &mut right[1..], &mut right_axes[1..], depth + 1);
}

/// Distance from every point to its nearest other point.
pub fn nearest_neighbor_distances(points: &[Vec3]) -> Vec<f64> {
    let tree = KdTree::build(points);
    (0..points.len())
        .map(|i| {
            tree.nearest(&points[i], Some(i))
                .map_or(f64::INFINITY, |(_, d2)| d2.sqrt())
        })
        .collect()
}

/// Brute-force reference for [`KdTree::nearest`].
pub fn nearest_brute(points: &[Vec3], q: &Vec3, exclude: Option<usize>) -> Option<(usize, f64)> {
    points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, p)| (i, (p - q).norm_squared()))
        .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
            Some(a) if a.1 <= cur.1 => Some(a),
            _ => Some(cur),
        })
}
