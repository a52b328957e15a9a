//! Detection evaluation: pixel IoU matching, F-beta, facility-proximity validation and
//! orientation histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_ring, ring_ring_distance, Bbox, Point, Polygon};
use crate::objects::{ConnectedComponent, PixelBox};
use crate::raster::Geotransform;

/// A rasterized object: sorted, de-duplicated pixel keys `(row << 32) | col`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PixelSet {
    keys: Vec<u64>,
    bbox: Option<PixelBox>,
}

fn key(r: u32, c: u32) -> u64 {
    ((r as u64) << 32) | c as u64
}

impl PixelSet {
    pub fn from_pixels(pixels: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut keys: Vec<u64> = pixels.into_iter().map(|(r, c)| key(r, c)).collect();
        keys.sort_unstable();
        keys.dedup();
        let bbox = keys.iter().fold(None, |b: Option<PixelBox>, &k| {
            let (r, c) = ((k >> 32) as u32, k as u32);
            Some(match b {
                None => PixelBox {
                    min_row: r,
                    min_col: c,
                    max_row: r,
                    max_col: c,
                },
                Some(b) => PixelBox {
                    min_row: b.min_row.min(r),
                    min_col: b.min_col.min(c),
                    max_row: b.max_row.max(r),
                    max_col: b.max_col.max(c),
                },
            })
        });
        Self { keys, bbox }
    }

    pub fn from_component(comp: &ConnectedComponent) -> Self {
        Self::from_pixels(comp.pixels.iter().copied())
    }

    /// Pixels of a `width x height` grid whose centers fall inside `ring`.
    pub fn rasterize(ring: &[Point], geo: &Geotransform, width: usize, height: usize) -> Self {
        let Some(bb) = Bbox::of(ring) else {
            return Self::default();
        };
        let (r0, c0) = geo.geo_to_pixel(Point::new(bb.min.x, bb.max.y));
        let (r1, c1) = geo.geo_to_pixel(Point::new(bb.max.x, bb.min.y));
        let rows = (r0.floor().max(0.0) as usize)..(r1.ceil().min(height as f64).max(0.0) as usize);
        let cols = (c0.floor().max(0.0) as usize)..(c1.ceil().min(width as f64).max(0.0) as usize);
        let mut px = Vec::new();
        for r in rows {
            for c in cols.clone() {
                if point_in_ring(geo.pixel_to_geo(r as f64 + 0.5, c as f64 + 0.5), ring) {
                    px.push((r as u32, c as u32));
                }
            }
        }
        Self::from_pixels(px)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn bbox(&self) -> Option<PixelBox> {
        self.bbox
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.keys.iter().map(|&k| ((k >> 32) as u32, k as u32))
    }

    pub fn intersection_len(&self, o: &PixelSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.keys.len() && j < o.keys.len() {
            match self.keys[i].cmp(&o.keys[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn iou(a: &PixelSet, b: &PixelSet) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(Error::Empty("IoU of two empty pixel sets".into()));
    }
    let inter = a.intersection_len(b);
    Ok(inter as f64 / (a.len() + b.len() - inter) as f64)
}

/// Object-level match counts. Serializes as
/// `{"tp","fp","fn","precision","recall","f2","pairs":[[pred,label,iou],…]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MatchReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f2: f64,
    pub pairs: Vec<(String, String, f64)>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl MatchReport {
    fn from_counts(tp: usize, fp: usize, fn_: usize, pairs: Vec<(String, String, f64)>) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f2 = f_beta(precision, recall, 2.0).unwrap_or(0.0);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f2,
            pairs,
        }
    }

    /// Prefixes pair ids, e.g. with a tile id before merging.
    pub fn prefix_ids(mut self, prefix: &str) -> Self {
        for (p, l, _) in &mut self.pairs {
            *p = format!("{prefix}:{p}");
            *l = format!("{prefix}:{l}");
        }
        self
    }

    /// Sums counts and recomputes ratios; associative and order independent up to pair order.
    pub fn merge(reports: impl IntoIterator<Item = MatchReport>) -> MatchReport {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        let mut pairs = Vec::new();
        for r in reports {
            tp += r.tp;
            fp += r.fp;
            fn_ += r.fn_;
            pairs.extend(r.pairs);
        }
        MatchReport::from_counts(tp, fp, fn_, pairs)
    }
}

/// A prediction is a true positive when its IoU with some label is strictly greater than
/// `iou_thresh`. Candidate pairs are assigned greedily by descending IoU so that each
/// label and each prediction is used at most once (for thresholds >= 0.5 every
/// candidate pair is already unique).
pub fn match_objects(preds: &[PixelSet], labels: &[PixelSet], iou_thresh: f64) -> Result<MatchReport> {
    if !(iou_thresh >= 0.0) {
        return Err(Error::Range(format!("IoU threshold {iou_thresh} must be >= 0")));
    }
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in preds.iter().enumerate() {
        let Some(pb) = p.bbox() else { continue };
        for (li, l) in labels.iter().enumerate() {
            if !l.bbox().is_some_and(|lb| lb.intersects(&pb)) {
                continue;
            }
            let v = iou(p, l)?;
            if v > iou_thresh {
                cands.push((v, pi, li));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut label_used = vec![false; labels.len()];
    let mut pairs = Vec::new();
    for (v, pi, li) in cands {
        if pred_used[pi] || label_used[li] {
            continue;
        }
        pred_used[pi] = true;
        label_used[li] = true;
        pairs.push((pi, li, v));
    }
    pairs.sort_by_key(|&(p, l, _)| (p, l));
    let tp = pairs.len();
    Ok(MatchReport::from_counts(
        tp,
        preds.len() - tp,
        labels.len() - tp,
        pairs.into_iter().map(|(p, l, v)| (p.to_string(), l.to_string(), v)).collect(),
    ))
}

/// `(1 + β²)·p·r / (β²·p + r)`, 0 when both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Range(format!("beta {beta} must be > 0")));
    }
    if !(0.0..=1.0).contains(&precision) || !(0.0..=1.0).contains(&recall) {
        return Err(Error::Range(format!("precision {precision} / recall {recall} outside [0, 1]")));
    }
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 + b2) * precision * recall / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FacilityClass {
    Poultry,
    Other,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Facility {
    pub polygon: Vec<Point>,
    pub class: FacilityClass,
}

/// Proximity validation against facility-level annotations.
///
/// `precision_in_area` counts only predictions touching the validated area;
/// `precision_lower_bound` treats every prediction outside it as a false positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub predictions_in_area: usize,
    pub predictions_total: usize,
    pub precision_in_area: f64,
    pub precision_lower_bound: f64,
    pub recall: f64,
}

pub fn facility_validation(
    preds: &[Vec<Point>],
    facilities: &[Facility],
    validated_area: &[Polygon],
    radius: f64,
) -> Result<FacilityReport> {
    if !(radius >= 0.0) {
        return Err(Error::Range(format!("radius {radius} must be >= 0")));
    }
    let poultry: Vec<&Facility> = facilities.iter().filter(|f| f.class == FacilityClass::Poultry).collect();
    let in_area: Vec<&Vec<Point>> = preds
        .iter()
        .filter(|p| validated_area.iter().any(|a| ring_ring_distance(p, &a.exterior) == 0.0))
        .collect();
    let near = |a: &[Point], b: &[Point]| ring_ring_distance(a, b) <= radius;

    let tp = in_area.iter().filter(|p| poultry.iter().any(|f| near(p, &f.polygon))).count();
    let fp = in_area.len() - tp;
    let found = poultry.iter().filter(|f| in_area.iter().any(|p| near(p, &f.polygon))).count();
    Ok(FacilityReport {
        tp,
        fp,
        fn_: poultry.len() - found,
        predictions_in_area: in_area.len(),
        predictions_total: preds.len(),
        precision_in_area: ratio(tp, in_area.len()),
        precision_lower_bound: ratio(tp, preds.len()),
        recall: ratio(found, poultry.len()),
    })
}

/// Counts of orientations (degrees, reduced mod 180) in bins `[k·w, (k+1)·w)`.
pub fn orientation_histogram(orientations: &[f64], bin_width: f64) -> Result<Vec<usize>> {
    let bins = 180.0 / bin_width;
    if !(bin_width > 0.0) || (bins - bins.round()).abs() > 1e-9 {
        return Err(Error::Range(format!("bin width {bin_width} does not divide 180")));
    }
    let n = bins.round() as usize;
    let mut counts = vec![0; n];
    for &o in orientations {
        if !o.is_finite() {
            return Err(Error::Range(format!("orientation {o} is not finite")));
        }
        let k = ((o.rem_euclid(180.0) / bin_width).floor() as usize).min(n - 1);
        counts[k] += 1;
    }
    Ok(counts)
}
