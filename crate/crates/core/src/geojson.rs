//! Minimal GeoJSON reading and writing for detections, road lines and boundary polygons.

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::filter::Rejection;
use crate::geometry::{open_ring, Point, Polygon};
use crate::objects::DetectedObject;
use crate::roads::{RoadEdge, RoadNetwork};

fn ring_json(ring: &[Point]) -> Value {
    let mut coords: Vec<Value> = ring.iter().map(|p| json!([p.x, p.y])).collect();
    if let Some(first) = coords.first().cloned() {
        coords.push(first);
    }
    Value::Array(coords)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Feature for one detection. Properties: `id`, `area_m2`, `aspect_ratio`,
/// `orientation_deg`, `mean_prob`, `year`, plus `road_dist_m`/`road_edge` when the
/// road distance is known and `rejected` when a rule rejected the object.
pub fn object_feature(obj: &DetectedObject, rejected: Option<Rejection>) -> Value {
    let mut props = Map::new();
    props.insert("id".into(), json!(obj.id));
    props.insert("area_m2".into(), finite_or_null(obj.area_m2));
    props.insert("aspect_ratio".into(), finite_or_null(obj.aspect_ratio));
    props.insert("orientation_deg".into(), finite_or_null(obj.orientation_deg));
    props.insert("mean_prob".into(), finite_or_null(obj.mean_probability));
    props.insert("pixel_count".into(), json!(obj.pixel_count));
    props.insert("year".into(), json!(obj.year));
    if let Some(d) = obj.road_distance {
        props.insert("road_dist_m".into(), finite_or_null(d));
        props.insert("road_edge".into(), json!(obj.road_edge));
    }
    if let Some(r) = rejected {
        props.insert("rejected".into(), json!(r.as_str()));
    }
    json!({
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": [ring_json(&obj.polygon)]},
        "properties": Value::Object(props),
    })
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

/// Serialized FeatureCollection of detections, one trailing newline.
pub fn objects_to_string(objs: &[(&DetectedObject, Option<Rejection>)]) -> Result<String> {
    let fc = feature_collection(objs.iter().map(|(o, r)| object_feature(o, *r)).collect());
    let mut s = serde_json::to_string(&fc)?;
    s.push('\n');
    Ok(s)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::GeoJson(msg.into())
}

fn parse_point(v: &Value) -> Result<Point> {
    let a = v.as_array().ok_or_else(|| bad("position is not an array"))?;
    if a.len() < 2 {
        return Err(bad("position has fewer than two coordinates"));
    }
    let x = a[0].as_f64().ok_or_else(|| bad("non-numeric coordinate"))?;
    let y = a[1].as_f64().ok_or_else(|| bad("non-numeric coordinate"))?;
    if !x.is_finite() || !y.is_finite() {
        return Err(bad("non-finite coordinate"));
    }
    Ok(Point::new(x, y))
}

fn parse_line(v: &Value) -> Result<Vec<Point>> {
    v.as_array()
        .ok_or_else(|| bad("coordinate list is not an array"))?
        .iter()
        .map(parse_point)
        .collect()
}

fn parse_polygon(v: &Value) -> Result<Polygon> {
    let rings = v.as_array().ok_or_else(|| bad("polygon coordinates are not an array"))?;
    let mut rings = rings.iter().map(|r| parse_line(r).map(open_ring));
    let exterior = rings.next().ok_or_else(|| bad("polygon without rings"))??;
    if exterior.len() < 3 {
        return Err(bad("polygon ring with fewer than three vertices"));
    }
    Ok(Polygon {
        exterior,
        holes: rings.collect::<Result<_>>()?,
    })
}

/// A parsed feature with (multi)polygon geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonFeature {
    pub polygons: Vec<Polygon>,
    pub properties: Map<String, Value>,
}

impl PolygonFeature {
    pub fn property_str(&self, key: &str) -> Option<String> {
        match self.properties.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }

    pub fn property_f64(&self, key: &str) -> Option<f64> {
        self.properties.get(key)?.as_f64()
    }
}

fn features(text: &str) -> Result<Vec<Value>> {
    let v: Value = serde_json::from_str(text)?;
    match v.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => Ok(v
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("FeatureCollection without a features array"))?
            .clone()),
        Some("Feature") => Ok(vec![v]),
        other => Err(bad(format!("unexpected top-level type {other:?}"))),
    }
}

fn geometry(f: &Value) -> Result<(&str, &Value)> {
    let g = f.get("geometry").ok_or_else(|| bad("feature without geometry"))?;
    let t = g.get("type").and_then(Value::as_str).ok_or_else(|| bad("geometry without type"))?;
    let c = g.get("coordinates").ok_or_else(|| bad("geometry without coordinates"))?;
    Ok((t, c))
}

fn properties(f: &Value) -> Map<String, Value> {
    f.get("properties").and_then(Value::as_object).cloned().unwrap_or_default()
}

/// Polygon and MultiPolygon features; other geometry types are rejected.
pub fn read_polygons(text: &str) -> Result<Vec<PolygonFeature>> {
    features(text)?
        .iter()
        .map(|f| {
            let (t, c) = geometry(f)?;
            let polygons = match t {
                "Polygon" => vec![parse_polygon(c)?],
                "MultiPolygon" => c
                    .as_array()
                    .ok_or_else(|| bad("MultiPolygon coordinates are not an array"))?
                    .iter()
                    .map(parse_polygon)
                    .collect::<Result<_>>()?,
                other => return Err(bad(format!("expected Polygon or MultiPolygon, found {other}"))),
            };
            Ok(PolygonFeature {
                polygons,
                properties: properties(f),
            })
        })
        .collect()
}

/// Road lines. Edge ids come from an `id` property when present, otherwise from the
/// feature index; MultiLineString parts get a `/<k>` suffix.
pub fn read_roads(text: &str) -> Result<RoadNetwork> {
    let mut edges = Vec::new();
    for (i, f) in features(text)?.iter().enumerate() {
        let (t, c) = geometry(f)?;
        let id = match f.get("properties").and_then(|p| p.get("id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => i.to_string(),
        };
        match t {
            "LineString" => edges.push(RoadEdge {
                id,
                points: parse_line(c)?,
            }),
            "MultiLineString" => {
                for (k, part) in c
                    .as_array()
                    .ok_or_else(|| bad("MultiLineString coordinates are not an array"))?
                    .iter()
                    .enumerate()
                {
                    edges.push(RoadEdge {
                        id: format!("{id}/{k}"),
                        points: parse_line(part)?,
                    });
                }
            }
            other => return Err(bad(format!("expected LineString or MultiLineString, found {other}"))),
        }
    }
    RoadNetwork::new(edges)
}

/// Serialized road network as LineString features with `id` properties.
pub fn roads_to_string(net: &RoadNetwork) -> Result<String> {
    let features = net
        .edges
        .iter()
        .map(|e| {
            json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": e.points.iter().map(|p| json!([p.x, p.y])).collect::<Vec<_>>()},
                "properties": {"id": e.id},
            })
        })
        .collect();
    let mut s = serde_json::to_string(&feature_collection(features))?;
    s.push('\n');
    Ok(s)
}

/// Serialized polygons with arbitrary properties.
pub fn polygons_to_string(items: &[(Vec<Point>, Map<String, Value>)]) -> Result<String> {
    let features = items
        .iter()
        .map(|(ring, props)| {
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring_json(ring)]},
                "properties": Value::Object(props.clone()),
            })
        })
        .collect();
    let mut s = serde_json::to_string(&feature_collection(features))?;
    s.push('\n');
    Ok(s)
}
