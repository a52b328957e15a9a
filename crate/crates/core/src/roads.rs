//! Exact object-to-road distances over large road networks.
//!
//! Every road edge is split into evenly spaced nodes at most `d` meters apart and the
//! nodes go into a k-d tree. A query looks up nodes around the object's centroid,
//! measures the exact polygon-to-polyline distance to the edges those nodes belong to,
//! and then re-queries with a radius wide enough that no closer edge can be missing
//! from the candidate set.

use crate::error::{Error, Result};
use crate::geometry::{centroid, ring_polyline_distance, Point};
use crate::kdtree::KdTree;
use crate::objects::DetectedObject;

pub const DEFAULT_SPLIT_M: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RoadEdge {
    pub id: String,
    pub points: Vec<Point>,
}

impl RoadEdge {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(w[1])).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoadNetwork {
    pub edges: Vec<RoadEdge>,
}

impl RoadNetwork {
    /// Validates edges: consecutive duplicate vertices are dropped and every edge must
    /// keep at least two vertices.
    pub fn new(edges: Vec<RoadEdge>) -> Result<Self> {
        let edges = edges
            .into_iter()
            .map(|mut e| {
                e.points.dedup();
                if e.points.len() < 2 {
                    return Err(Error::Road(format!("edge `{}` has fewer than two distinct vertices", e.id)));
                }
                if e.points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
                    return Err(Error::Road(format!("edge `{}` has non-finite coordinates", e.id)));
                }
                Ok(e)
            })
            .collect::<Result<_>>()?;
        Ok(Self { edges })
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// A node placed along a road edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadNode {
    pub point: Point,
    pub edge: usize,
}

/// Places `2 + floor(D / d)` nodes evenly by arc length along each edge of length `D`.
pub fn split_edges(net: &RoadNetwork, d: f64) -> Result<Vec<RoadNode>> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Config(format!("split length must be positive, got {d}")));
    }
    let mut nodes = Vec::new();
    for (ei, edge) in net.edges.iter().enumerate() {
        let total = edge.length();
        let count = 2 + (total / d).floor() as usize;
        let step = total / (count - 1) as f64;
        let mut seg = 0;
        let mut seg_start = 0.0;
        for k in 0..count {
            let s = if k + 1 == count { total } else { k as f64 * step };
            while seg + 2 < edge.points.len() && seg_start + edge.points[seg].dist(edge.points[seg + 1]) < s {
                seg_start += edge.points[seg].dist(edge.points[seg + 1]);
                seg += 1;
            }
            let (a, b) = (edge.points[seg], edge.points[seg + 1]);
            let len = a.dist(b);
            let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
            let point = if k + 1 == count {
                *edge.points.last().unwrap()
            } else {
                Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
            };
            nodes.push(RoadNode { point, edge: ei });
        }
    }
    Ok(nodes)
}

/// Split road nodes plus a k-d tree over them.
#[derive(Debug, Clone)]
pub struct RoadIndex {
    pub split_length: f64,
    pub nodes: Vec<RoadNode>,
    tree: KdTree,
}

impl RoadIndex {
    pub fn build(nodes: Vec<RoadNode>, split_length: f64) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("road index needs at least one node".into()));
        }
        let tree = KdTree::build(nodes.iter().map(|n| n.point).collect());
        Ok(Self {
            split_length,
            nodes,
            tree,
        })
    }

    /// Splits and indexes a network in one step.
    pub fn from_network(net: &RoadNetwork, d: f64) -> Result<Self> {
        Self::build(split_edges(net, d)?, d)
    }

    /// Node indices within `radius` of `p`, ascending.
    pub fn within_radius(&self, p: Point, radius: f64) -> Vec<usize> {
        self.tree.within_radius(p, radius)
    }

    pub fn nearest(&self, p: Point) -> Option<(usize, f64)> {
        self.tree.nearest(p)
    }

    fn edges_within(&self, p: Point, radius: f64) -> Vec<usize> {
        let mut edges: Vec<usize> = self.within_radius(p, radius).into_iter().map(|i| self.nodes[i].edge).collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }
}

/// Result of a nearest-road query. `edge` is `None` only for an empty network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadDistance {
    pub distance: f64,
    pub edge: Option<usize>,
}

fn best_edge(polygon: &[Point], net: &RoadNetwork, edges: impl IntoIterator<Item = usize>) -> RoadDistance {
    let mut best = RoadDistance {
        distance: f64::INFINITY,
        edge: None,
    };
    for e in edges {
        let d = ring_polyline_distance(polygon, &net.edges[e].points);
        if d < best.distance {
            best = RoadDistance {
                distance: d,
                edge: Some(e),
            };
        }
    }
    best
}

/// Exact minimum distance from a polygon to any road edge (0 when touching or crossing).
///
/// Nodes are first gathered within `2d` of the centroid, doubling the radius until
/// something is found. With `D` the best distance among those candidates and `R` the
/// polygon's radius about its centroid, any closer edge has a node within
/// `D + R + d/2` of the centroid, so a final query at `D + R + d` yields the exact answer.
pub fn nearest_road_distance(polygon: &[Point], idx: Option<&RoadIndex>, net: &RoadNetwork) -> RoadDistance {
    let none = RoadDistance {
        distance: f64::INFINITY,
        edge: None,
    };
    let Some(idx) = idx else { return none };
    if net.is_empty() || polygon.is_empty() {
        return none;
    }
    let c = centroid(polygon);
    let extent = polygon.iter().map(|p| p.dist(c)).fold(0.0, f64::max);
    let d = idx.split_length;

    let mut radius = 2.0 * d;
    let first = loop {
        let edges = idx.edges_within(c, radius);
        if !edges.is_empty() {
            break edges;
        }
        radius *= 2.0;
    };
    let candidate = best_edge(polygon, net, first);
    best_edge(polygon, net, idx.edges_within(c, candidate.distance + extent + d))
}

/// Fills `road_distance` and `road_edge` on each object. Without an index every
/// object gets an infinite distance.
pub fn annotate_road_distances(objs: &mut [DetectedObject], idx: Option<&RoadIndex>, net: &RoadNetwork) {
    for obj in objs {
        let r = nearest_road_distance(&obj.polygon, idx, net);
        obj.road_distance = Some(r.distance);
        obj.road_edge = r.edge.map(|e| net.edges[e].id.clone());
    }
}

/// O(N·M) reference: minimum over every edge.
pub fn brute_force_distance(polygon: &[Point], net: &RoadNetwork) -> RoadDistance {
    best_edge(polygon, net, 0..net.edges.len())
}
