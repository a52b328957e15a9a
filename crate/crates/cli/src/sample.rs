//! `sample`: training patch manifest from imagery tiles and labeled barn polygons.
//!
//! Label masks are rasterized from `labels/<id>.geojson`; each feature's `id` and
//! optional `construction_year` properties drive temporal pairing.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use barnmap_core::eval::PixelSet;
use barnmap_core::objects::PixelBox;
use barnmap_core::raster::{read_raster, write_atomic, Dtype, RasterTile};
use barnmap_core::sampler::{manifest_jsonl, sample_patches, SamplerStats, SamplerTile, TemporalPairing};

use crate::config::PipelineConfig;
use crate::pipeline::{REPORTS_DIR, TILES_DIR};
use crate::reports::LABELS_DIR;
use crate::runner::{ensure_dir, list_ids, write_json};

struct LabeledTile {
    id: String,
    imagery: RasterTile,
    mask: RasterTile,
    barns: Vec<(String, PixelBox)>,
    construction_years: BTreeMap<String, i32>,
}

fn load_tile(cfg: &PipelineConfig, id: &str) -> Result<LabeledTile> {
    let imagery = read_raster(cfg.input(TILES_DIR).join(format!("{id}.bin")))?;
    let path = cfg.input(LABELS_DIR).join(format!("{id}.geojson"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let features = barnmap_core::geojson::read_polygons(&text)?;
    let (w, h) = (imagery.width, imagery.height);
    let mut data = vec![0.0f32; w * h];
    let mut barns = Vec::new();
    let mut construction_years = BTreeMap::new();
    for (i, f) in features.iter().enumerate() {
        let bid = f.property_str("id").unwrap_or_else(|| i.to_string());
        if let Some(y) = f.property_f64("construction_year") {
            construction_years.insert(bid.clone(), y as i32);
        }
        for poly in &f.polygons {
            let px = PixelSet::rasterize(&poly.exterior, &imagery.geo, w, h);
            for (r, c) in px.pixels() {
                data[r as usize * w + c as usize] = 1.0;
            }
            if let Some(b) = px.bbox() {
                barns.push((bid.clone(), b));
            }
        }
    }
    let mask = RasterTile::new(w, h, 1, Dtype::U8, data, imagery.geo.clone(), imagery.timestamp)?;
    Ok(LabeledTile {
        id: id.to_string(),
        imagery,
        mask,
        barns,
        construction_years,
    })
}

/// Draws the configured number of patches and writes `manifest.jsonl` plus
/// `reports/sampler_stats.json`.
pub fn cmd_sample(cfg: &PipelineConfig) -> Result<SamplerStats> {
    let ids = list_ids(&cfg.input(LABELS_DIR), ".geojson")?;
    let tiles: Vec<LabeledTile> = ids.iter().map(|id| load_tile(cfg, id)).collect::<Result<_>>()?;
    let sampler_tiles: Vec<SamplerTile> = tiles
        .iter()
        .map(|t| {
            let pairing = match &cfg.sampler.pairing {
                None => None,
                Some(p) => Some(TemporalPairing {
                    mode: p.mode,
                    label_year: t
                        .imagery
                        .timestamp
                        .with_context(|| format!("tile `{}` has no timestamp", t.id))?,
                    imagery_years: p.imagery_years.clone(),
                    construction_years: t.construction_years.clone(),
                }),
            };
            Ok(SamplerTile {
                id: t.id.clone(),
                imagery: &t.imagery,
                mask: &t.mask,
                barns: t.barns.clone(),
                pairing,
            })
        })
        .collect::<Result<_>>()?;
    let (samples, stats) = sample_patches(&sampler_tiles, &cfg.sampler_config())?;
    ensure_dir(&cfg.output_dir)?;
    ensure_dir(&cfg.output(REPORTS_DIR))?;
    write_atomic(&cfg.output("manifest.jsonl"), manifest_jsonl(&samples)?.as_bytes())?;
    write_json(&cfg.output(REPORTS_DIR).join("sampler_stats.json"), &stats)?;
    Ok(stats)
}
