//! Static 2-d tree over points, stored implicitly in a permuted index array.
//!
//! The median of each subslice is the node; its left half holds smaller coordinates
//! on the split axis. Axis alternates with depth (x first).

use crate::geometry::Point;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    order: Vec<usize>,
}

impl KdTree {
    pub fn build(points: Vec<Point>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build_rec(&points, &mut order, 0);
        Self { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    /// Indices of all points with `dist(p, center) <= radius`, ascending.
    pub fn within_radius(&self, center: Point, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if radius >= 0.0 {
            self.radius_rec(0, self.order.len(), 0, center, radius * radius, radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn radius_rec(&self, lo: usize, hi: usize, depth: usize, c: Point, r2: f64, r: f64, out: &mut Vec<usize>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let p = self.points[i];
        if p.dist2(c) <= r2 {
            out.push(i);
        }
        let delta = axis(c, depth) - axis(p, depth);
        if delta <= r {
            self.radius_rec(lo, mid, depth + 1, c, r2, r, out);
        }
        if delta >= -r {
            self.radius_rec(mid + 1, hi, depth + 1, c, r2, r, out);
        }
    }

    /// Nearest point and its distance; ties resolve to the smaller index.
    pub fn nearest(&self, q: Point) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.nearest_rec(0, self.order.len(), 0, q, &mut best);
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    fn nearest_rec(&self, lo: usize, hi: usize, depth: usize, q: Point, best: &mut Option<(usize, f64)>) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let p = self.points[i];
        let d2 = p.dist2(q);
        match best {
            Some((bi, bd)) if d2 > *bd || (d2 == *bd && i > *bi) => {}
            _ => *best = Some((i, d2)),
        }
        let delta = axis(q, depth) - axis(p, depth);
        let (near, far) = if delta < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_rec(near.0, near.1, depth + 1, q, best);
        if best.map_or(true, |(_, bd)| delta * delta <= bd) {
            self.nearest_rec(far.0, far.1, depth + 1, q, best);
        }
    }
}

#[inline]
fn axis(p: Point, depth: usize) -> f64 {
    if depth % 2 == 0 {
        p.x
    } else {
        p.y
    }
}

fn build_rec(points: &[Point], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| axis(points[a], depth).total_cmp(&axis(points[b], depth)));
    let (left, right) = order.split_at_mut(mid);
    build_rec(points, left, depth + 1);
    build_rec(points, &mut right[1..], depth + 1);
}
