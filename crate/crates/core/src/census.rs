//! County-level comparison of predicted barn counts with census operation counts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, Polygon};
use crate::objects::DetectedObject;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CountyRecord {
    pub fips: String,
    pub predicted_barns: u64,
    /// Operation counts keyed by minimum operation size; `None` where the census value
    /// is masked.
    pub census_operations: BTreeMap<u64, Option<u64>>,
    pub cv: Option<f64>,
    pub boundary: Vec<Polygon>,
}

/// A county boundary, possibly made of several polygons.
#[derive(Debug, Clone, PartialEq)]
pub struct County {
    pub fips: String,
    pub polygons: Vec<Polygon>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CountyCounts {
    pub counts: BTreeMap<String, u64>,
    pub unassigned: u64,
    /// Objects whose centroid fell inside more than one county.
    pub overlaps: u64,
}

/// Assigns each object to the first county whose boundary contains its centroid.
pub fn aggregate_by_county(objects: &[DetectedObject], counties: &[County]) -> CountyCounts {
    let mut out = CountyCounts {
        counts: counties.iter().map(|c| (c.fips.clone(), 0)).collect(),
        ..Default::default()
    };
    let boxes: Vec<Vec<_>> = counties
        .iter()
        .map(|c| c.polygons.iter().map(Polygon::bbox).collect())
        .collect();
    for obj in objects {
        let p = centroid(&obj.polygon);
        let mut hits = counties.iter().enumerate().filter(|(ci, c)| {
            c.polygons
                .iter()
                .zip(&boxes[*ci])
                .any(|(poly, bb)| bb.is_some_and(|b| b.contains(p)) && poly.contains(p))
        });
        match hits.next() {
            Some((_, c)) => {
                *out.counts.get_mut(&c.fips).expect("county key present") += 1;
                if let Some((_, other)) = hits.next() {
                    log::warn!(
                        "object `{}` lies in overlapping counties {} and {}; assigned to {}",
                        obj.id,
                        c.fips,
                        other.fips,
                        c.fips
                    );
                    out.overlaps += 1;
                }
            }
            None => out.unassigned += 1,
        }
    }
    out
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("spearman inputs have lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Undefined("spearman needs at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Range("spearman input contains NaN".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("ranks have zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn pairs_at(records: &[&CountyRecord], threshold: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in records {
        match r.census_operations.get(&threshold) {
            None => {
                return Err(Error::Range(format!(
                    "county {} has no operation count for threshold {threshold}",
                    r.fips
                )))
            }
            Some(None) => {}
            Some(Some(v)) => {
                xs.push(*v as f64);
                ys.push(r.predicted_barns as f64);
            }
        }
    }
    Ok((xs, ys))
}

/// Spearman correlation between predicted barns and census operations at each size
/// threshold. Counties with a masked count are left out of that threshold only.
pub fn threshold_sweep(records: &[CountyRecord], thresholds: &[u64]) -> Result<Vec<(u64, f64)>> {
    let refs: Vec<&CountyRecord> = records.iter().collect();
    thresholds
        .iter()
        .map(|&t| {
            let (x, y) = pairs_at(&refs, t)?;
            Ok((t, spearman(&x, &y)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub cutoff: f64,
    pub counties: usize,
    /// `None` when fewer than two counties qualify or the ranks are constant.
    pub rho: Option<f64>,
}

/// Spearman correlation at `threshold` over the nested subsets `{cv <= cutoff}`.
/// Counties without a cv value only enter at an infinite cutoff.
pub fn cv_subset_sweep(records: &[CountyRecord], cutoffs: &[f64], threshold: u64) -> Result<Vec<CvEntry>> {
    if cutoffs.iter().any(|c| c.is_nan()) || cutoffs.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("cv cutoffs must be ascending".into()));
    }
    cutoffs
        .iter()
        .map(|&cutoff| {
            let subset: Vec<&CountyRecord> = records
                .iter()
                .filter(|r| r.cv.unwrap_or(f64::INFINITY) <= cutoff)
                .collect();
            let (x, y) = pairs_at(&subset, threshold)?;
            let rho = match spearman(&x, &y) {
                Ok(v) => Some(v),
                Err(Error::Undefined(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(CvEntry {
                cutoff,
                counties: x.len(),
                rho,
            })
        })
        .collect()
}

fn parse_count(field: &str, row: usize, col: &str) -> Result<Option<u64>> {
    let f = field.trim();
    if f.is_empty() || f.eq_ignore_ascii_case("(d)") || f.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    f.parse::<u64>()
        .map(Some)
        .map_err(|_| Error::Csv(format!("row {row}: `{f}` in column {col} is not a count")))
}

/// Reads `fips,predicted_barns,ops_<size>…,cv`. Empty, `(D)` or `NA` cells are masked.
pub fn read_county_csv(path: impl AsRef<Path>) -> Result<Vec<CountyRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_county_csv(&text)
}

pub fn parse_county_csv(text: &str) -> Result<Vec<CountyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let fips_col = col("fips").ok_or_else(|| Error::Csv("missing `fips` column".into()))?;
    let pred_col = col("predicted_barns").ok_or_else(|| Error::Csv("missing `predicted_barns` column".into()))?;
    let cv_col = col("cv");
    let mut ops_cols = Vec::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(t) = h.strip_prefix("ops_") {
            let t: u64 = t
                .parse()
                .map_err(|_| Error::Csv(format!("column `{h}` does not name a size threshold")))?;
            ops_cols.push((i, t));
        }
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let row = row + 2;
        let predicted_barns = parse_count(&rec[pred_col], row, "predicted_barns")?
            .ok_or_else(|| Error::Csv(format!("row {row}: predicted_barns is empty")))?;
        let cv = match cv_col.map(|c| rec[c].trim()) {
            None | Some("") => None,
            Some(s) => {
                let v: f64 = s.parse().map_err(|_| Error::Csv(format!("row {row}: cv `{s}` is not a number")))?;
                if !(v >= 0.0) {
                    return Err(Error::Csv(format!("row {row}: cv {v} is negative")));
                }
                Some(v)
            }
        };
        let mut ops = BTreeMap::new();
        for &(c, t) in &ops_cols {
            ops.insert(t, parse_count(&rec[c], row, &header[c])?);
        }
        out.push(CountyRecord {
            fips: rec[fips_col].to_string(),
            predicted_barns,
            census_operations: ops,
            cv,
            boundary: Vec::new(),
        });
    }
    Ok(out)
}
