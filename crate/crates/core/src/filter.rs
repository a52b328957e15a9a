//! Rule-based object classifier: area and aspect-ratio ranges plus a road rule.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objects::DetectedObject;

/// Feature ranges (inclusive) and the road buffer. An object is rejected when its road
/// distance is `<= road_buffer_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(rename = "area_m2")]
    pub area_range: [f64; 2],
    #[serde(rename = "aspect")]
    pub aspect_range: [f64; 2],
    #[serde(rename = "road_buffer_m", default)]
    pub road_buffer: f64,
}

impl Default for RuleSet {
    /// Ranges observed over hand-labeled poultry barn polygons.
    fn default() -> Self {
        Self {
            area_range: [525.0, 8106.0],
            aspect_range: [3.4, 20.49],
            road_buffer: 0.0,
        }
    }
}

impl RuleSet {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("area", self.area_range), ("aspect", self.aspect_range)] {
            if !(lo >= 0.0 && lo <= hi) {
                return Err(Error::Config(format!("{name} range [{lo}, {hi}] is invalid")));
            }
        }
        if !(self.road_buffer >= 0.0) {
            return Err(Error::Config(format!("road buffer {} must be >= 0", self.road_buffer)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rules: RuleSet = serde_json::from_str(&text)?;
        rules.validate()?;
        Ok(rules)
    }
}

/// First failed rule, checked in the order area, aspect, road.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    AreaBelowMin,
    AreaAboveMax,
    AspectBelowMin,
    AspectAboveMax,
    RoadIntersection,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::AreaBelowMin => "area-below-min",
            Rejection::AreaAboveMax => "area-above-max",
            Rejection::AspectBelowMin => "aspect-below-min",
            Rejection::AspectAboveMax => "aspect-above-max",
            Rejection::RoadIntersection => "road-intersection",
        }
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Barn,
    Background(Rejection),
}

/// Feature ranges spanned by a labeled set; the road buffer is 0.
pub fn derive_rules(labeled: &[DetectedObject]) -> Result<RuleSet> {
    if labeled.is_empty() {
        return Err(Error::Empty("no labeled objects to derive rules from".into()));
    }
    let mut area = [f64::INFINITY, f64::NEG_INFINITY];
    let mut aspect = [f64::INFINITY, f64::NEG_INFINITY];
    for o in labeled {
        if !o.area_m2.is_finite() || !o.aspect_ratio.is_finite() {
            return Err(Error::Range(format!("object `{}` has non-finite features", o.id)));
        }
        area = [area[0].min(o.area_m2), area[1].max(o.area_m2)];
        aspect = [aspect[0].min(o.aspect_ratio), aspect[1].max(o.aspect_ratio)];
    }
    Ok(RuleSet {
        area_range: area,
        aspect_range: aspect,
        road_buffer: 0.0,
    })
}

pub fn classify(obj: &DetectedObject, rules: &RuleSet) -> Result<Class> {
    let road = obj.road_distance.ok_or(Error::RoadDistanceUnset)?;
    let [amin, amax] = rules.area_range;
    let [rmin, rmax] = rules.aspect_range;
    let reason = if obj.area_m2 < amin {
        Some(Rejection::AreaBelowMin)
    } else if obj.area_m2 > amax {
        Some(Rejection::AreaAboveMax)
    } else if obj.aspect_ratio < rmin {
        Some(Rejection::AspectBelowMin)
    } else if obj.aspect_ratio > rmax {
        Some(Rejection::AspectAboveMax)
    } else if road <= rules.road_buffer {
        Some(Rejection::RoadIntersection)
    } else {
        None
    };
    Ok(reason.map_or(Class::Barn, Class::Background))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<DetectedObject>,
    pub rejected: Vec<(DetectedObject, Rejection)>,
}

/// Partitions objects into kept and rejected, preserving input order.
pub fn filter_objects(objs: Vec<DetectedObject>, rules: &RuleSet) -> Result<FilterOutcome> {
    let mut out = FilterOutcome::default();
    for o in objs {
        match classify(&o, rules)? {
            Class::Barn => out.kept.push(o),
            Class::Background(r) => out.rejected.push((o, r)),
        }
    }
    Ok(out)
}
