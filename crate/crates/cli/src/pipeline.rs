//! Tile stages: `infer`, `roads-index` and `detect`.
//!
//! Input layout under `input_dir`:
//! `tiles/<id>.bin` imagery, `masks/<id>.bin` truth masks for the oracle scorer,
//! `roads/<id>.roads.geojson` road lines.
//!
//! Output layout under `output_dir`:
//! `prob/<id>.bin` probability rasters, `roads_index/<id>.json` split road nodes,
//! `objects/<id>.geojson` every detection with its rejection reason,
//! `filtered/<id>.geojson` detections passing the rule set.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use barnmap_core::filter::{classify, Class};
use barnmap_core::geojson::{objects_to_string, read_roads};
use barnmap_core::geometry::Point;
use barnmap_core::objects::detect_objects;
use barnmap_core::raster::{make_patch_grid, read_raster, write_atomic, write_raster, RasterTile, Stitcher};
use barnmap_core::roads::{RoadIndex, RoadNetwork, RoadNode};
use barnmap_core::scorer::{patch_seed, score_patch, ScorerKind};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::runner::{ensure_dir, list_ids, raster_complete, run_tiles, write_json, RunSummary, TileOutcome};

pub const TILES_DIR: &str = "tiles";
pub const MASKS_DIR: &str = "masks";
pub const ROADS_DIR: &str = "roads";
pub const PROB_DIR: &str = "prob";
pub const ROADS_INDEX_DIR: &str = "roads_index";
pub const OBJECTS_DIR: &str = "objects";
pub const FILTERED_DIR: &str = "filtered";
pub const REPORTS_DIR: &str = "reports";
pub const ROADS_SUFFIX: &str = ".roads.geojson";

/// Scores one tile patch by patch on the configured grid and stitches the result.
pub fn infer_tile(cfg: &PipelineConfig, id: &str, imagery: &RasterTile, mask: Option<&RasterTile>) -> Result<RasterTile> {
    let scorer = cfg.scorer_config();
    if let Some(m) = mask {
        if m.width != imagery.width || m.height != imagery.height || m.bands != 1 {
            bail!(
                "mask {}x{}x{} does not match imagery {}x{}",
                m.height,
                m.width,
                m.bands,
                imagery.height,
                imagery.width
            );
        }
    }
    let p = cfg.patch_size;
    let grid = make_patch_grid(imagery.width, imagery.height, p, cfg.overlap)?;
    let mut stitcher = Stitcher::new(imagery.width, imagery.height, p);
    for &(r, c) in &grid.origins {
        let patch = imagery.crop(r, c, p, p)?;
        let truth = mask.map(|m| m.crop(r, c, p, p)).transpose()?;
        let prob = score_patch(&patch, truth.as_ref(), &scorer, patch_seed(cfg.seed, id, (r, c)))?;
        stitcher.add((r, c), &prob.data)?;
    }
    Ok(stitcher.finish(imagery.geo.clone(), imagery.timestamp)?)
}

pub fn cmd_infer(cfg: &PipelineConfig) -> Result<RunSummary> {
    let out_dir = cfg.output(PROB_DIR);
    ensure_dir(&out_dir)?;
    let ids = list_ids(&cfg.input(TILES_DIR), ".bin")?;
    log::info!("infer: {} tiles, {} workers", ids.len(), cfg.workers);
    run_tiles(cfg.workers, &ids, |id| {
        let out = out_dir.join(format!("{id}.bin"));
        if raster_complete(&out) {
            return Ok(TileOutcome::Skipped);
        }
        let imagery = read_raster(cfg.input(TILES_DIR).join(format!("{id}.bin")))?;
        let mask = match cfg.scorer.kind {
            ScorerKind::Oracle => Some(read_raster(cfg.input(MASKS_DIR).join(format!("{id}.bin")))?),
            ScorerKind::Heuristic => None,
        };
        let prob = infer_tile(cfg, id, &imagery, mask.as_ref())?;
        write_raster(&prob, &out)?;
        Ok(TileOutcome::Done)
    })
}

/// On-disk form of a split road network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadIndexFile {
    pub split_length_m: f64,
    pub edges: Vec<String>,
    /// `[x, y, edge index]` per node.
    pub nodes: Vec<(f64, f64, usize)>,
}

impl RoadIndexFile {
    pub fn from_network(net: &RoadNetwork, d: f64) -> Result<Self> {
        let idx = RoadIndex::from_network(net, d)?;
        Ok(Self {
            split_length_m: d,
            edges: net.edges.iter().map(|e| e.id.clone()).collect(),
            nodes: idx.nodes.iter().map(|n| (n.point.x, n.point.y, n.edge)).collect(),
        })
    }

    /// Index for `net` if this cache was built from the same edges and split length.
    pub fn index_for(&self, net: &RoadNetwork, d: f64) -> Option<RoadIndex> {
        let same = self.split_length_m == d
            && self.edges.len() == net.edges.len()
            && self.edges.iter().zip(&net.edges).all(|(a, b)| *a == b.id)
            && self.nodes.iter().all(|n| n.2 < net.edges.len());
        if !same {
            return None;
        }
        let nodes = self
            .nodes
            .iter()
            .map(|&(x, y, edge)| RoadNode {
                point: Point::new(x, y),
                edge,
            })
            .collect();
        RoadIndex::build(nodes, d).ok()
    }
}

fn roads_path(cfg: &PipelineConfig, id: &str) -> PathBuf {
    cfg.input(ROADS_DIR).join(format!("{id}{ROADS_SUFFIX}"))
}

fn read_network(cfg: &PipelineConfig, id: &str) -> Result<Option<RoadNetwork>> {
    let path = roads_path(cfg, id);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(read_roads(&text).with_context(|| format!("parsing {}", path.display()))?))
}

pub fn cmd_roads_index(cfg: &PipelineConfig) -> Result<RunSummary> {
    let out_dir = cfg.output(ROADS_INDEX_DIR);
    ensure_dir(&out_dir)?;
    let ids = list_ids(&cfg.input(ROADS_DIR), ROADS_SUFFIX)?;
    run_tiles(cfg.workers, &ids, |id| {
        let out = out_dir.join(format!("{id}.json"));
        let net = read_network(cfg, id)?.unwrap_or_default();
        if net.is_empty() {
            log::warn!("tile {id}: road file has no edges");
            return Ok(TileOutcome::Skipped);
        }
        write_json(&out, &RoadIndexFile::from_network(&net, cfg.split_length_m)?)?;
        Ok(TileOutcome::Done)
    })
}

fn road_index(cfg: &PipelineConfig, id: &str, net: &RoadNetwork) -> Result<Option<RoadIndex>> {
    if net.is_empty() {
        return Ok(None);
    }
    let cached = cfg.output(ROADS_INDEX_DIR).join(format!("{id}.json"));
    if let Ok(text) = fs::read_to_string(&cached) {
        if let Some(idx) = serde_json::from_str::<RoadIndexFile>(&text)
            .ok()
            .and_then(|f| f.index_for(net, cfg.split_length_m))
        {
            return Ok(Some(idx));
        }
        log::warn!("tile {id}: stale road index cache ignored");
    }
    Ok(Some(RoadIndex::from_network(net, cfg.split_length_m)?))
}

/// Unfiltered and filtered GeoJSON for one probability tile.
pub fn detect_tile(cfg: &PipelineConfig, id: &str, prob: &RasterTile, roads: Option<&RoadNetwork>) -> Result<(String, String)> {
    prob.validate_probability()?;
    let rules = cfg.rules()?;
    let mut objs = detect_objects(prob, cfg.tau, id)?;
    let empty = RoadNetwork::default();
    let net = roads.unwrap_or(&empty);
    let idx = road_index(cfg, id, net)?;
    barnmap_core::roads::annotate_road_distances(&mut objs, idx.as_ref(), net);
    let (mut all, mut kept) = (Vec::new(), Vec::new());
    for o in &objs {
        match classify(o, &rules)? {
            Class::Barn => {
                all.push((o, None));
                kept.push((o, None));
            }
            Class::Background(r) => all.push((o, Some(r))),
        }
    }
    Ok((objects_to_string(&all)?, objects_to_string(&kept)?))
}

pub fn cmd_detect(cfg: &PipelineConfig) -> Result<RunSummary> {
    let (obj_dir, filt_dir) = (cfg.output(OBJECTS_DIR), cfg.output(FILTERED_DIR));
    ensure_dir(&obj_dir)?;
    ensure_dir(&filt_dir)?;
    let ids = list_ids(&cfg.output(PROB_DIR), ".bin")?;
    log::info!("detect: {} tiles, {} workers", ids.len(), cfg.workers);
    run_tiles(cfg.workers, &ids, |id| {
        let (obj_out, filt_out) = (obj_dir.join(format!("{id}.geojson")), filt_dir.join(format!("{id}.geojson")));
        // filtered output is written last, so its presence marks a finished tile
        if obj_out.exists() && filt_out.exists() {
            return Ok(TileOutcome::Skipped);
        }
        let prob = read_raster(cfg.output(PROB_DIR).join(format!("{id}.bin")))?;
        let roads = read_network(cfg, id)?;
        if roads.is_none() {
            log::warn!("tile {id}: no road file, road distances set to infinity");
        }
        let (all, kept) = detect_tile(cfg, id, &prob, roads.as_ref())?;
        write_atomic(&obj_out, all.as_bytes())?;
        write_atomic(&filt_out, kept.as_bytes())?;
        Ok(TileOutcome::Done)
    })
}
