//! Report stages: `eval`, `ucb` and `census`, each producing JSON under `reports/`.
//!
//! Inputs under `input_dir`: `labels/<id>.geojson` labeled barn polygons,
//! optional `facilities.geojson` (with a `class` property of `poultry`, `other` or
//! `empty`) plus `validated_area.geojson`, the UCB score and label files, and the
//! county CSV.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use barnmap_core::census::{
    aggregate_by_county, cv_subset_sweep, read_county_csv, threshold_sweep, County, CountyCounts, CvEntry,
};
use barnmap_core::eval::{
    facility_validation, match_objects, orientation_histogram, Facility, FacilityClass, FacilityReport, MatchReport,
    PixelSet,
};
use barnmap_core::geojson::{read_polygons, PolygonFeature};
use barnmap_core::objects::DetectedObject;
use barnmap_core::raster::Geotransform;
use barnmap_core::ucb::{assign_buckets, quantile_edges, Estimate, RoundLog, UcbState};
use barnmap_core::Error as CoreError;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::pipeline::{FILTERED_DIR, OBJECTS_DIR, PROB_DIR, REPORTS_DIR};
use crate::runner::{ensure_dir, list_ids, write_json};

pub const LABELS_DIR: &str = "labels";
pub const FACILITIES_FILE: &str = "facilities.geojson";
pub const VALIDATED_AREA_FILE: &str = "validated_area.geojson";

fn read_features(path: &Path) -> Result<Vec<PolygonFeature>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_polygons(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_features_or_empty(path: &Path) -> Result<Vec<PolygonFeature>> {
    if path.exists() {
        read_features(path)
    } else {
        Ok(Vec::new())
    }
}

/// Size and geotransform from a raster sidecar, without reading the payload.
pub fn read_raster_header(payload: &Path) -> Result<(usize, usize, Geotransform)> {
    let sidecar = barnmap_core::raster::sidecar_path(payload);
    let text = fs::read_to_string(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", sidecar.display()))?;
    let dim = |k: &str| v.get(k).and_then(serde_json::Value::as_u64).map(|d| d as usize);
    let gt: Vec<f64> = v
        .get("geotransform")
        .and_then(serde_json::Value::as_array)
        .map(|a| a.iter().filter_map(serde_json::Value::as_f64).collect())
        .unwrap_or_default();
    let crs = v.get("crs").and_then(serde_json::Value::as_str).unwrap_or_default();
    match (dim("width"), dim("height"), gt.as_slice()) {
        (Some(w), Some(h), [ox, pw, 0.0, oy, 0.0, nph]) => Ok((w, h, Geotransform::new(*ox, *oy, *pw, -nph, crs)?)),
        _ => bail!("{}: malformed raster header", sidecar.display()),
    }
}

fn rasterize_all(features: &[PolygonFeature], geo: &Geotransform, w: usize, h: usize) -> Vec<PixelSet> {
    features
        .iter()
        .map(|f| {
            let px: Vec<(u32, u32)> = f
                .polygons
                .iter()
                .flat_map(|p| PixelSet::rasterize(&p.exterior, geo, w, h).pixels().collect::<Vec<_>>())
                .collect();
            PixelSet::from_pixels(px)
        })
        .collect()
}

fn feature_id(f: &PolygonFeature, index: usize) -> String {
    f.property_str("id").unwrap_or_else(|| index.to_string())
}

/// Match report for one tile with pair ids replaced by feature ids.
fn match_tile(preds: &[PolygonFeature], labels: &[PolygonFeature], geo: &Geotransform, w: usize, h: usize, iou: f64) -> Result<MatchReport> {
    let mut r = match_objects(&rasterize_all(preds, geo, w, h), &rasterize_all(labels, geo, w, h), iou)?;
    for (p, l, _) in &mut r.pairs {
        let (pi, li): (usize, usize) = (p.parse()?, l.parse()?);
        *p = feature_id(&preds[pi], pi);
        *l = feature_id(&labels[li], li);
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrientationReport {
    pub bin_deg: f64,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub tiles: usize,
    pub iou_threshold: f64,
    pub filtered: MatchReport,
    pub unfiltered: MatchReport,
    pub orientation: OrientationReport,
    pub facility: Option<FacilityReport>,
}

/// Object-level precision/recall/F2 of filtered and unfiltered detections against the
/// labeled tiles, the orientation histogram of filtered detections and, when facility
/// annotations exist, the proximity validation. Writes `reports/eval.json`.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalReport> {
    let ids = list_ids(&cfg.input(LABELS_DIR), ".geojson")?;
    if ids.is_empty() {
        bail!("no label files in {}", cfg.input(LABELS_DIR).display());
    }
    let (mut filtered, mut unfiltered) = (Vec::new(), Vec::new());
    for id in &ids {
        let (w, h, geo) = read_raster_header(&cfg.output(PROB_DIR).join(format!("{id}.bin")))?;
        let labels = read_features(&cfg.input(LABELS_DIR).join(format!("{id}.geojson")))?;
        let kept = read_features(&cfg.output(FILTERED_DIR).join(format!("{id}.geojson")))?;
        let all = read_features(&cfg.output(OBJECTS_DIR).join(format!("{id}.geojson")))?;
        filtered.push(match_tile(&kept, &labels, &geo, w, h, cfg.iou_threshold)?);
        unfiltered.push(match_tile(&all, &labels, &geo, w, h, cfg.iou_threshold)?);
    }

    let mut orientations = Vec::new();
    let mut pred_rings = Vec::new();
    for id in list_ids(&cfg.output(FILTERED_DIR), ".geojson")? {
        for f in read_features(&cfg.output(FILTERED_DIR).join(format!("{id}.geojson")))? {
            orientations.extend(f.property_f64("orientation_deg"));
            pred_rings.extend(f.polygons.into_iter().map(|p| p.exterior));
        }
    }
    let counts = orientation_histogram(&orientations, cfg.orientation_bin_deg)?;

    let facilities_path = cfg.input(FACILITIES_FILE);
    let facility = if facilities_path.exists() {
        let facilities = read_facilities(&facilities_path)?;
        let area: Vec<_> = read_features_or_empty(&cfg.input(VALIDATED_AREA_FILE))?
            .into_iter()
            .flat_map(|f| f.polygons)
            .collect();
        Some(facility_validation(&pred_rings, &facilities, &area, cfg.facility_radius_m)?)
    } else {
        None
    };

    let report = EvalReport {
        tiles: ids.len(),
        iou_threshold: cfg.iou_threshold,
        filtered: MatchReport::merge(filtered),
        unfiltered: MatchReport::merge(unfiltered),
        orientation: OrientationReport {
            bin_deg: cfg.orientation_bin_deg,
            counts,
        },
        facility,
    };
    ensure_dir(&cfg.output(REPORTS_DIR))?;
    write_json(&cfg.output(REPORTS_DIR).join("eval.json"), &report)?;
    Ok(report)
}

fn read_facilities(path: &Path) -> Result<Vec<Facility>> {
    let mut out = Vec::new();
    for (i, f) in read_features(path)?.into_iter().enumerate() {
        let class = match f.property_str("class").as_deref() {
            Some("poultry") => FacilityClass::Poultry,
            Some("other") => FacilityClass::Other,
            Some("empty") => FacilityClass::Empty,
            other => bail!("{}: feature {i} has class {other:?}", path.display()),
        };
        out.extend(f.polygons.into_iter().map(|p| Facility {
            polygon: p.exterior,
            class,
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UcbSummary {
    /// Bucket score edges; the last one is unbounded and written as `null`.
    pub edges: Vec<Option<f64>>,
    pub sizes: Vec<usize>,
    pub visits: Vec<u64>,
    pub successes: Vec<u64>,
    pub rounds: usize,
    pub found: u64,
    pub estimate: Estimate,
    /// Positives among all images according to the label file.
    pub true_total: u64,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Runs a labeling campaign against the label file as oracle. Writes one JSON line
/// per round to `reports/ucb.jsonl` and a summary to `reports/ucb_summary.json`.
pub fn cmd_ucb(cfg: &PipelineConfig) -> Result<(Vec<RoundLog>, UcbSummary)> {
    let scores: BTreeMap<String, Vec<f64>> = read_json(&cfg.input(&cfg.ucb.scores))?;
    let labels: BTreeMap<String, bool> = read_json(&cfg.input(&cfg.ucb.labels))?;
    if let Some(id) = scores.keys().find(|id| !labels.contains_key(*id)) {
        bail!("image `{id}` has scores but no label");
    }
    let edges = quantile_edges(&scores, cfg.ucb.buckets)?;
    let buckets = assign_buckets(&scores, &edges)?;
    let mut state = UcbState::new(edges, buckets, cfg.ucb_config())?;
    let logs = state.run_campaign(|id| Ok(labels[id]), cfg.ucb.max_rounds)?;

    let mut lines = String::new();
    for l in &logs {
        lines.push_str(&serde_json::to_string(l)?);
        lines.push('\n');
    }
    let summary = UcbSummary {
        edges: state.edges().iter().map(|e| e.is_finite().then_some(*e)).collect(),
        sizes: state.sizes(),
        visits: state.visits(),
        successes: state.successes(),
        rounds: state.rounds(),
        found: state.found(),
        estimate: state.estimate()?,
        true_total: scores.keys().filter(|id| labels[*id]).count() as u64,
    };
    ensure_dir(&cfg.output(REPORTS_DIR))?;
    barnmap_core::raster::write_atomic(&cfg.output(REPORTS_DIR).join("ucb.jsonl"), lines.as_bytes())?;
    write_json(&cfg.output(REPORTS_DIR).join("ucb_summary.json"), &summary)?;
    Ok((logs, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdEntry {
    pub threshold: u64,
    pub counties: usize,
    /// `None` when undefined (fewer than two counties or constant ranks).
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusReport {
    pub counties: usize,
    /// Present when predicted counts were aggregated from detections.
    pub aggregation: Option<CountyCounts>,
    pub thresholds: Vec<ThresholdEntry>,
    pub cv_threshold: Option<u64>,
    pub cv_sweep: Vec<CvEntry>,
}

fn detections_as_objects(cfg: &PipelineConfig) -> Result<Vec<DetectedObject>> {
    let mut out = Vec::new();
    for id in list_ids(&cfg.output(FILTERED_DIR), ".geojson")? {
        for (i, f) in read_features(&cfg.output(FILTERED_DIR).join(format!("{id}.geojson")))?
            .into_iter()
            .enumerate()
        {
            let fid = feature_id(&f, i);
            out.extend(f.polygons.into_iter().map(|p| DetectedObject {
                id: fid.clone(),
                polygon: p.exterior,
                pixel_count: 0,
                area_m2: 0.0,
                aspect_ratio: 0.0,
                orientation_deg: 0.0,
                mean_probability: 0.0,
                year: None,
                road_distance: None,
                road_edge: None,
            }));
        }
    }
    Ok(out)
}

/// Spearman correlations between predicted barn counts and census operation counts
/// per size threshold and over nested cv subsets. Writes `reports/census.json`.
pub fn cmd_census(cfg: &PipelineConfig) -> Result<CensusReport> {
    let mut records = read_county_csv(cfg.input(&cfg.census.counties_csv))?;
    let aggregation = match &cfg.census.boundaries {
        None => None,
        Some(rel) => {
            let counties: Vec<County> = read_features(&cfg.input(rel))?
                .into_iter()
                .enumerate()
                .map(|(i, f)| {
                    let fips = f
                        .property_str("fips")
                        .with_context(|| format!("boundary feature {i} has no fips property"))?;
                    Ok(County {
                        fips,
                        polygons: f.polygons,
                    })
                })
                .collect::<Result<_>>()?;
            let counts = aggregate_by_county(&detections_as_objects(cfg)?, &counties);
            for r in &mut records {
                r.predicted_barns = counts.counts.get(&r.fips).copied().unwrap_or(0);
            }
            Some(counts)
        }
    };
    let thresholds = match &cfg.census.thresholds {
        Some(t) => t.clone(),
        None => records
            .first()
            .map(|r| r.census_operations.keys().copied().collect())
            .unwrap_or_default(),
    };
    let mut entries = Vec::new();
    for &t in &thresholds {
        let counties = records
            .iter()
            .filter(|r| matches!(r.census_operations.get(&t), Some(Some(_))))
            .count();
        let rho = match threshold_sweep(&records, &[t]) {
            Ok(v) => Some(v[0].1),
            Err(CoreError::Undefined(_)) => None,
            Err(e) => return Err(e.into()),
        };
        entries.push(ThresholdEntry {
            threshold: t,
            counties,
            rho,
        });
    }
    let cv_threshold = cfg.census.cv_threshold.or_else(|| thresholds.iter().copied().min());
    let cv_sweep = match cv_threshold {
        Some(t) => cv_subset_sweep(&records, &cfg.census.cv_cutoffs, t)?,
        None => Vec::new(),
    };
    let report = CensusReport {
        counties: records.len(),
        aggregation,
        thresholds: entries,
        cv_threshold,
        cv_sweep,
    };
    ensure_dir(&cfg.output(REPORTS_DIR))?;
    write_json(&cfg.output(REPORTS_DIR).join("census.json"), &report)?;
    Ok(report)
}
