//! Synthetic world: imagery tiles with planted barns, road lines and bright road-like
//! decoys, written in the pipeline's input layout.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

use barnmap_core::geojson::{polygons_to_string, roads_to_string};
use barnmap_core::geometry::Point;
use barnmap_core::raster::{write_raster, Dtype, Geotransform, RasterTile};
use barnmap_core::roads::{RoadEdge, RoadNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

pub const TILE: usize = 512;
pub const YEAR: i32 = 2018;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorldStats {
    pub tiles: usize,
    pub barns: usize,
    /// Bright objects that are not barns: road strips, road-hugging blocks, blobs.
    pub decoys: usize,
}

/// Pixel-space box `[r0, r1) x [c0, c1)`.
#[derive(Debug, Clone, Copy)]
struct Rect {
    r0: i64,
    r1: i64,
    c0: i64,
    c1: i64,
}

impl Rect {
    fn grow(self, m: i64) -> Rect {
        Rect {
            r0: self.r0 - m,
            r1: self.r1 + m,
            c0: self.c0 - m,
            c1: self.c1 + m,
        }
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.r0 < o.r1 && o.r0 < self.r1 && self.c0 < o.c1 && o.c0 < self.c1
    }

    fn inside(&self, size: usize, margin: i64) -> bool {
        self.r0 >= margin && self.c0 >= margin && self.r1 <= size as i64 - margin && self.c1 <= size as i64 - margin
    }
}

struct Canvas {
    size: usize,
    mask: Vec<f32>,
    image: Vec<f32>,
    taken: Vec<Rect>,
}

impl Canvas {
    fn paint(&mut self, r: usize, c: usize, v: f32) {
        let n = self.size * self.size;
        let i = r * self.size + c;
        self.mask[i] = 1.0;
        for b in 0..4 {
            self.image[b * n + i] = v;
        }
    }

    fn fill(&mut self, rect: Rect, v: f32) {
        for r in rect.r0..rect.r1 {
            for c in rect.c0..rect.c1 {
                self.paint(r as usize, c as usize, v);
            }
        }
        self.taken.push(rect);
    }

    fn free(&self, rect: &Rect, clearance: i64) -> bool {
        rect.inside(self.size, 2) && self.taken.iter().all(|t| !t.grow(clearance).overlaps(rect))
    }
}

fn geo_for(i: usize) -> Geotransform {
    Geotransform::new(500_000.0 + 1000.0 * i as f64, 4_000_000.0, 1.0, 1.0, "EPSG:5070").unwrap()
}

/// A rotated barn: pixels whose centers fall inside the rectangle.
fn plant_barn(canvas: &mut Canvas, rng: &mut ChaCha8Rng, roads: &[Rect]) -> Option<[Point; 4]> {
    let w: f64 = rng.gen_range(12.0..=18.0);
    let l: f64 = rng.gen_range((5.0 * w).max(60.0)..=(12.0 * w).min(150.0));
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (cx, cy) = (rng.gen_range(0.0..canvas.size as f64), rng.gen_range(0.0..canvas.size as f64));
    let u = (theta.cos(), theta.sin());
    let v = (-u.1, u.0);
    let corners: Vec<(f64, f64)> = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|(a, b)| (cx + a * l / 2.0 * u.0 + b * w / 2.0 * v.0, cy + a * l / 2.0 * u.1 + b * w / 2.0 * v.1))
        .collect();
    let bbox = Rect {
        r0: corners.iter().map(|p| p.1.floor() as i64).min().unwrap(),
        r1: corners.iter().map(|p| p.1.ceil() as i64).max().unwrap() + 1,
        c0: corners.iter().map(|p| p.0.floor() as i64).min().unwrap(),
        c1: corners.iter().map(|p| p.0.ceil() as i64).max().unwrap() + 1,
    };
    if !canvas.free(&bbox, 5) || roads.iter().any(|r| r.grow(6).overlaps(&bbox)) {
        return None;
    }
    for r in bbox.r0..bbox.r1 {
        for c in bbox.c0..bbox.c1 {
            let (dx, dy) = (c as f64 + 0.5 - cx, r as f64 + 0.5 - cy);
            if (dx * u.0 + dy * u.1).abs() <= l / 2.0 && (dx * v.0 + dy * v.1).abs() <= w / 2.0 {
                canvas.paint(r as usize, c as usize, 215.0);
            }
        }
    }
    canvas.taken.push(bbox);
    // corners as (col, row) lattice positions
    Some(std::array::from_fn(|k| Point::new(corners[k].0, corners[k].1)))
}

fn place(canvas: &mut Canvas, rng: &mut ChaCha8Rng, h: i64, w: i64, avoid: &[Rect], v: f32) -> bool {
    for _ in 0..500 {
        let r0 = rng.gen_range(0..canvas.size as i64 - h);
        let c0 = rng.gen_range(0..canvas.size as i64 - w);
        let rect = Rect {
            r0,
            r1: r0 + h,
            c0,
            c1: c0 + w,
        };
        if canvas.free(&rect, 5) && avoid.iter().all(|a| !a.grow(6).overlaps(&rect)) {
            canvas.fill(rect, v);
            return true;
        }
    }
    false
}

/// Writes `tiles` synthetic tiles under `input` (imagery, oracle masks, roads, labels).
/// Masks hold barns and decoys; labels hold barns only.
pub fn generate_world(input: &Path, tiles: usize, seed: u64) -> WorldStats {
    for d in ["tiles", "masks", "roads", "labels"] {
        fs::create_dir_all(input.join(d)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = WorldStats {
        tiles,
        ..Default::default()
    };
    let n = TILE * TILE;
    for t in 0..tiles {
        let id = format!("tile{t:02}");
        let geo = geo_for(t);
        let mut canvas = Canvas {
            size: TILE,
            mask: vec![0.0; n],
            image: (0..4 * n).map(|_| rng.gen_range(40..90) as f32).collect(),
            taken: Vec::new(),
        };
        let rh: i64 = rng.gen_range(300..440);
        let cv: i64 = rng.gen_range(120..390);
        let road_h = Rect {
            r0: rh - 1,
            r1: rh + 1,
            c0: -100,
            c1: TILE as i64 + 100,
        };
        let road_v = Rect {
            r0: -100,
            r1: TILE as i64 + 100,
            c0: cv - 1,
            c1: cv + 1,
        };

        // long bright strip along the vertical road: rejected by aspect
        canvas.fill(
            Rect {
                r0: 20,
                r1: rh - 60,
                c0: cv - 3,
                c1: cv + 3,
            },
            195.0,
        );
        stats.decoys += 1;
        // barn-sized blocks straddling the horizontal road: rejected by the road rule
        let mut blocks = 0;
        for _ in 0..200 {
            if blocks == 2 {
                break;
            }
            let c0 = rng.gen_range(10..TILE as i64 - 110);
            let rect = Rect {
                r0: rh - 4,
                r1: rh + 4,
                c0,
                c1: c0 + 100,
            };
            if (c0 - 30..c0 + 130).contains(&cv) || !canvas.free(&rect, 5) {
                continue;
            }
            canvas.fill(rect, 200.0);
            blocks += 1;
        }
        stats.decoys += blocks;
        // small blobs below the area minimum and, on some tiles, one above the maximum
        let roads = [road_h, road_v];
        for _ in 0..2 {
            stats.decoys += place(&mut canvas, &mut rng, 8, 8, &roads, 180.0) as usize;
        }
        if t % 4 == 0 {
            stats.decoys += place(&mut canvas, &mut rng, 100, 100, &roads, 180.0) as usize;
        }

        let mut labels = Vec::new();
        for _ in 0..2000 {
            if labels.len() == 5 {
                break;
            }
            if let Some(corners) = plant_barn(&mut canvas, &mut rng, &roads) {
                let ring: Vec<Point> = corners.iter().map(|p| geo.pixel_to_geo(p.y, p.x)).collect();
                let mut props = Map::new();
                props.insert("id".into(), json!(format!("{id}-b{}", labels.len())));
                props.insert("construction_year".into(), json!(rng.gen_range(2010..=YEAR)));
                labels.push((ring, props));
            }
        }
        stats.barns += labels.len();

        let imagery = RasterTile::new(TILE, TILE, 4, Dtype::U8, canvas.image, geo.clone(), Some(YEAR)).unwrap();
        let mask = RasterTile::new(TILE, TILE, 1, Dtype::U8, canvas.mask, geo.clone(), Some(YEAR)).unwrap();
        write_raster(&imagery, input.join("tiles").join(format!("{id}.bin"))).unwrap();
        write_raster(&mask, input.join("masks").join(format!("{id}.bin"))).unwrap();
        fs::write(input.join("labels").join(format!("{id}.geojson")), polygons_to_string(&labels).unwrap()).unwrap();

        let line = |a: (f64, f64), b: (f64, f64)| vec![geo.pixel_to_geo(a.0, a.1), geo.pixel_to_geo(b.0, b.1)];
        let net = RoadNetwork::new(vec![
            RoadEdge {
                id: "h".into(),
                points: line((rh as f64, -50.0), (rh as f64, TILE as f64 + 50.0)),
            },
            RoadEdge {
                id: "v".into(),
                points: line((-50.0, cv as f64), (TILE as f64 + 50.0, cv as f64)),
            },
        ])
        .unwrap();
        fs::write(input.join("roads").join(format!("{id}.roads.geojson")), roads_to_string(&net).unwrap()).unwrap();
    }
    stats
}

/// Every file under `dir`, relative path to bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn feature_count(path: &Path) -> usize {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["features"].as_array().unwrap().len()
}
