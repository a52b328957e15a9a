//! From probability rasters to polygon objects with shape features.
//!
//! Positive pixels are grouped with 4-connectivity, the outer boundary of each group
//! is traced along pixel edges, and the minimum-area enclosing rectangle of the
//! boundary (rotating calipers over the convex hull) yields area, aspect ratio and
//! orientation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, convex_hull_i64, Point};
use crate::raster::{Dtype, Geotransform, RasterTile};

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub min_row: u32,
    pub min_col: u32,
    pub max_row: u32,
    pub max_col: u32,
}

impl PixelBox {
    pub fn intersects(&self, o: &PixelBox) -> bool {
        self.min_row <= o.max_row && o.min_row <= self.max_row && self.min_col <= o.max_col && o.min_col <= self.max_col
    }
}

/// A maximal 4-connected set of positive pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectedComponent {
    /// `(row, col)` pairs in raster order.
    pub pixels: Vec<(u32, u32)>,
    pub bbox: PixelBox,
}

impl ConnectedComponent {
    pub fn from_pixels(mut pixels: Vec<(u32, u32)>) -> Option<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        let &(r0, c0) = pixels.first()?;
        let mut bbox = PixelBox {
            min_row: r0,
            min_col: c0,
            max_row: r0,
            max_col: c0,
        };
        for &(r, c) in &pixels {
            bbox.min_row = bbox.min_row.min(r);
            bbox.min_col = bbox.min_col.min(c);
            bbox.max_row = bbox.max_row.max(r);
            bbox.max_col = bbox.max_col.max(c);
        }
        Some(Self { pixels, bbox })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Binary mask: 1 where `prob >= tau`.
pub fn threshold(prob: &RasterTile, tau: f64) -> Result<RasterTile> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Range(format!("threshold {tau} outside [0, 1]")));
    }
    let data = prob.band(0).iter().map(|&v| if v as f64 >= tau { 1.0 } else { 0.0 }).collect();
    RasterTile::new(prob.width, prob.height, 1, Dtype::U8, data, prob.geo.clone(), prob.timestamp)
}

/// 4-connected components of the nonzero pixels of band 0, ordered by
/// `(bbox min row, bbox min col)` with ties broken by first pixel in raster order.
pub fn connected_components(mask: &RasterTile) -> Vec<ConnectedComponent> {
    let (w, h) = (mask.width, mask.height);
    let band = mask.band(0);
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if band[start] == 0.0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            pixels.push((r as u32, c as u32));
            let mut visit = |j: usize| {
                if band[j] != 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        comps.extend(ConnectedComponent::from_pixels(pixels));
    }
    comps.sort_by_key(|c| (c.bbox.min_row, c.bbox.min_col, c.pixels[0]));
    comps
}

type Corner = (i64, i64);

/// Outer boundary of a component in corner-lattice coordinates `(x = col, y = -row)`,
/// counter-clockwise, collinear vertices removed.
pub fn trace_corners(comp: &ConnectedComponent) -> Vec<Corner> {
    let inside: std::collections::HashSet<(i64, i64)> =
        comp.pixels.iter().map(|&(r, c)| (r as i64, c as i64)).collect();
    let has = |r: i64, c: i64| inside.contains(&(r, c));

    // Directed boundary edges with the component on the left.
    let mut out: HashMap<Corner, Vec<Corner>> = HashMap::new();
    let mut add = |a: Corner, b: Corner| out.entry(a).or_default().push(b);
    for &(r, c) in &inside {
        let (x, y) = (c, -r);
        if !has(r + 1, c) {
            add((x, y - 1), (x + 1, y - 1));
        }
        if !has(r, c + 1) {
            add((x + 1, y - 1), (x + 1, y));
        }
        if !has(r - 1, c) {
            add((x + 1, y), (x, y));
        }
        if !has(r, c - 1) {
            add((x, y), (x, y - 1));
        }
    }

    // The top edge of the first pixel in raster order lies on the outer boundary.
    let (r0, c0) = (comp.pixels[0].0 as i64, comp.pixels[0].1 as i64);
    let start = (c0 + 1, -r0);
    let mut ring = vec![start];
    let mut cur = start;
    let mut dir = (-1i64, 0i64);
    let mut next = (c0, -r0);
    remove_edge(&mut out, cur, next);
    loop {
        cur = next;
        if cur == start {
            break;
        }
        ring.push(cur);
        let cands = out.get(&cur).map(|v| v.as_slice()).unwrap_or(&[]);
        // At a pinch vertex prefer the left turn so diagonal neighbours stay separate.
        let left = (-dir.1, dir.0);
        let right = (dir.1, -dir.0);
        let pick = [left, dir, right]
            .into_iter()
            .map(|d| (cur.0 + d.0, cur.1 + d.1))
            .find(|p| cands.contains(p))
            .expect("boundary edges form closed loops");
        dir = (pick.0 - cur.0, pick.1 - cur.1);
        next = pick;
        remove_edge(&mut out, cur, next);
    }
    simplify(ring)
}

fn remove_edge(out: &mut HashMap<Corner, Vec<Corner>>, a: Corner, b: Corner) {
    if let Some(v) = out.get_mut(&a) {
        if let Some(i) = v.iter().position(|&p| p == b) {
            v.swap_remove(i);
        }
    }
}

fn simplify(ring: Vec<Corner>) -> Vec<Corner> {
    let n = ring.len();
    (0..n)
        .filter(|&i| {
            let p = ring[(i + n - 1) % n];
            let q = ring[i];
            let s = ring[(i + 1) % n];
            (q.0 - p.0) * (s.1 - q.1) - (q.1 - p.1) * (s.0 - q.0) != 0
        })
        .map(|i| ring[i])
        .collect()
}

fn corner_to_geo(geo: &Geotransform, c: Corner) -> Point {
    geo.pixel_to_geo(-c.1 as f64, c.0 as f64)
}

/// Exterior ring of the component in geographic coordinates (open, counter-clockwise).
pub fn trace_polygon(comp: &ConnectedComponent, geo: &Geotransform) -> Vec<Point> {
    trace_corners(comp).into_iter().map(|c| corner_to_geo(geo, c)).collect()
}

/// Minimum-area enclosing rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinRotatedRect {
    pub center: Point,
    pub long_side: f64,
    pub short_side: f64,
    /// Direction of the long side, degrees counter-clockwise from east, in `[0, 180)`.
    pub angle_deg: f64,
}

impl MinRotatedRect {
    pub fn area(&self) -> f64 {
        self.long_side * self.short_side
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.long_side / self.short_side
    }

    /// Corners, counter-clockwise.
    pub fn corners(&self) -> [Point; 4] {
        let t = self.angle_deg.to_radians();
        let u = Point::new(t.cos() * self.long_side / 2.0, t.sin() * self.long_side / 2.0);
        let v = Point::new(-t.sin() * self.short_side / 2.0, t.cos() * self.short_side / 2.0);
        let c = self.center;
        [
            Point::new(c.x - u.x - v.x, c.y - u.y - v.y),
            Point::new(c.x + u.x - v.x, c.y + u.y - v.y),
            Point::new(c.x + u.x + v.x, c.y + u.y + v.y),
            Point::new(c.x - u.x + v.x, c.y - u.y + v.y),
        ]
    }
}

pub(crate) fn normalize_angle_deg(deg: f64) -> f64 {
    let a = deg.rem_euclid(180.0);
    if a >= 180.0 - 1e-9 {
        0.0
    } else {
        a
    }
}

/// Minimum rotated rectangle of an arbitrary ring.
pub fn min_rotated_rect(ring: &[Point]) -> Result<MinRotatedRect> {
    min_rect_of_hull(&convex_hull(ring))
}

/// Rotating calipers over a counter-clockwise convex hull without collinear vertices.
pub fn min_rect_of_hull(hull: &[Point]) -> Result<MinRotatedRect> {
    let n = hull.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("convex hull has {n} vertices")));
    }
    let at = |i: usize| hull[i % n];
    let edge = |i: usize| {
        let d = at(i + 1).sub(at(i));
        let len = d.norm();
        Point::new(d.x / len, d.y / len)
    };
    let proj = |p: Point, o: Point, d: Point| p.sub(o).dot(d);

    let u0 = edge(0);
    let v0 = Point::new(-u0.y, u0.x);
    let argext = |f: &dyn Fn(usize) -> f64| {
        (0..n).fold(0, |best, i| if f(i) > f(best) { i } else { best })
    };
    let mut j = argext(&|i| proj(at(i), at(0), u0));
    let mut k = argext(&|i| proj(at(i), at(0), v0));
    let mut l = argext(&|i| -proj(at(i), at(0), u0));

    let mut best: Option<(f64, MinRotatedRect)> = None;
    for i in 0..n {
        let o = at(i);
        let u = edge(i);
        let v = Point::new(-u.y, u.x);
        for _ in 0..n {
            if proj(at(j + 1), o, u) >= proj(at(j), o, u) {
                j += 1;
            } else {
                break;
            }
        }
        for _ in 0..n {
            if proj(at(k + 1), o, v) >= proj(at(k), o, v) {
                k += 1;
            } else {
                break;
            }
        }
        for _ in 0..n {
            if proj(at(l + 1), o, u) <= proj(at(l), o, u) {
                l += 1;
            } else {
                break;
            }
        }
        let max_u = proj(at(j), o, u);
        let min_u = proj(at(l), o, u);
        let height = proj(at(k), o, v);
        let width = max_u - min_u;
        let area = width * height;
        if best.as_ref().map_or(true, |(a, _)| area < *a) {
            let mid = (max_u + min_u) / 2.0;
            let center = Point::new(o.x + u.x * mid + v.x * height / 2.0, o.y + u.y * mid + v.y * height / 2.0);
            let (long_side, short_side, dir) = if width >= height { (width, height, u) } else { (height, width, v) };
            best = Some((
                area,
                MinRotatedRect {
                    center,
                    long_side,
                    short_side,
                    angle_deg: normalize_angle_deg(dir.y.atan2(dir.x).to_degrees()),
                },
            ));
        }
    }
    let (_, rect) = best.expect("hull has edges");
    if !(rect.short_side > 0.0) {
        return Err(Error::Degenerate("rectangle has zero width".into()));
    }
    Ok(rect)
}

/// A polygonized component with its object-level features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub id: String,
    /// Exterior ring, open, counter-clockwise, projected meters.
    pub polygon: Vec<Point>,
    pub pixel_count: usize,
    /// Area of the minimum rotated rectangle, m².
    pub area_m2: f64,
    pub aspect_ratio: f64,
    pub orientation_deg: f64,
    pub mean_probability: f64,
    pub year: Option<i32>,
    /// Distance to the nearest road in meters; `None` until computed,
    /// `Some(inf)` when no road data exists.
    pub road_distance: Option<f64>,
    pub road_edge: Option<String>,
}

/// Shape features from the traced ring and probability statistics from the component.
pub fn object_features(comp: &ConnectedComponent, ring: &[Point], prob: &RasterTile) -> Result<DetectedObject> {
    if comp.is_empty() {
        return Err(Error::Empty("component has no pixels".into()));
    }
    // Hull on exact integer corners, then scale.
    let corners: Vec<Corner> = ring
        .iter()
        .map(|&p| {
            let (r, c) = prob.geo.geo_to_pixel(p);
            (c.round() as i64, -(r.round() as i64))
        })
        .collect();
    let hull: Vec<Point> = convex_hull_i64(&corners).into_iter().map(|c| corner_to_geo(&prob.geo, c)).collect();
    let rect = min_rect_of_hull(&hull)?;

    let mut sum = 0.0f64;
    for &(r, c) in &comp.pixels {
        let (r, c) = (r as usize, c as usize);
        if r >= prob.height || c >= prob.width {
            return Err(Error::Shape(format!("pixel ({r}, {c}) outside probability raster")));
        }
        sum += prob.get(0, r, c) as f64;
    }
    Ok(DetectedObject {
        id: String::new(),
        polygon: ring.to_vec(),
        pixel_count: comp.len(),
        area_m2: rect.area(),
        aspect_ratio: rect.aspect_ratio(),
        orientation_deg: rect.angle_deg,
        mean_probability: sum / comp.len() as f64,
        year: prob.timestamp,
        road_distance: None,
        road_edge: None,
    })
}

/// Threshold, group and featurize one probability tile. Object ids are `<tile>:<n>`.
pub fn detect_objects(prob: &RasterTile, tau: f64, tile_id: &str) -> Result<Vec<DetectedObject>> {
    let mask = threshold(prob, tau)?;
    connected_components(&mask)
        .iter()
        .enumerate()
        .map(|(i, comp)| {
            let ring = trace_polygon(comp, &prob.geo);
            let mut obj = object_features(comp, &ring, prob)?;
            obj.id = format!("{tile_id}:{i}");
            Ok(obj)
        })
        .collect()
}
