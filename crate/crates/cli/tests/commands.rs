mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

use barnmap_cli::config::{CensusSection, UcbSection};
use barnmap_cli::pipeline::{cmd_detect, cmd_infer, cmd_roads_index, detect_tile};
use barnmap_cli::reports::{cmd_census, cmd_eval, cmd_ucb};
use barnmap_cli::sample::cmd_sample;
use barnmap_cli::PipelineConfig;
use barnmap_core::geojson::roads_to_string;
use barnmap_core::geometry::Point;
use barnmap_core::raster::{write_raster, Dtype, Geotransform, RasterTile};
use barnmap_core::roads::{RoadEdge, RoadNetwork};
use serde_json::Value;

fn config(root: &Path) -> PipelineConfig {
    PipelineConfig {
        input_dir: root.join("in"),
        output_dir: root.join("out"),
        ..Default::default()
    }
}

fn geo() -> Geotransform {
    Geotransform::new(600_000.0, 4_100_000.0, 1.0, 1.0, "EPSG:5070").unwrap()
}

/// 300x300 probability tile with blocks `(row, col, h, w)` at 0.9.
fn prob_tile(blocks: &[(usize, usize, usize, usize)]) -> RasterTile {
    let mut data = vec![0.05f32; 300 * 300];
    for &(r0, c0, h, w) in blocks {
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                data[r * 300 + c] = 0.9;
            }
        }
    }
    RasterTile::new(300, 300, 1, Dtype::F32, data, geo(), Some(2018)).unwrap()
}

fn features(text: &str) -> Vec<Value> {
    let v: Value = serde_json::from_str(text).unwrap();
    v["features"].as_array().unwrap().clone()
}

#[test]
fn three_barns_and_a_road_hugging_block() {
    let prob = prob_tile(&[(20, 20, 15, 80), (60, 20, 15, 80), (100, 20, 15, 80), (200, 100, 10, 90)]);
    // road along row 205
    let net = RoadNetwork::new(vec![RoadEdge {
        id: "r1".into(),
        points: vec![geo().pixel_to_geo(205.0, 0.0), geo().pixel_to_geo(205.0, 300.0)],
    }])
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (all, kept) = detect_tile(&config(dir.path()), "t", &prob, Some(&net)).unwrap();
    let all = features(&all);
    assert_eq!(all.len(), 4);
    assert_eq!(features(&kept).len(), 3);
    let rejected: Vec<&Value> = all.iter().filter(|f| f["properties"].get("rejected").is_some()).collect();
    assert_eq!(rejected.len(), 1);
    assert_eq!(rejected[0]["properties"]["rejected"], "road-intersection");
    assert_eq!(rejected[0]["properties"]["road_edge"], "r1");
}

#[test]
fn empty_probability_gives_no_objects_and_missing_roads_give_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let (all, kept) = detect_tile(&config(dir.path()), "t", &prob_tile(&[]), None).unwrap();
    assert!(features(&all).is_empty() && features(&kept).is_empty());

    let (all, kept) = detect_tile(&config(dir.path()), "t", &prob_tile(&[(20, 20, 15, 80)]), None).unwrap();
    let all = features(&all);
    assert_eq!(all.len(), 1);
    assert_eq!(all[0]["properties"]["road_dist_m"], Value::Null);
    assert_eq!(features(&kept).len(), 1);
}

#[test]
fn pipeline_resumes_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    common::generate_world(&dir.path().join("in"), 3, 1);
    let cfg = config(dir.path());
    assert_eq!(cmd_infer(&cfg).unwrap().processed.len(), 3);
    assert_eq!(cmd_detect(&cfg).unwrap().processed.len(), 3);
    let before = common::snapshot(&cfg.output_dir);

    // a finished run is skipped entirely
    let again = cmd_infer(&cfg).unwrap();
    assert_eq!((again.processed.len(), again.skipped.len()), (0, 3));
    assert_eq!(cmd_detect(&cfg).unwrap().skipped.len(), 3);

    // a tile lost mid-run is recomputed to the same bytes
    fs::remove_file(cfg.output("prob/tile01.bin")).unwrap();
    fs::remove_file(cfg.output("filtered/tile01.geojson")).unwrap();
    assert_eq!(cmd_infer(&cfg).unwrap().processed, vec!["tile01"]);
    assert_eq!(cmd_detect(&cfg).unwrap().processed, vec!["tile01"]);
    assert_eq!(common::snapshot(&cfg.output_dir), before);
}

#[test]
fn cached_road_index_gives_identical_detections() {
    let dir = tempfile::tempdir().unwrap();
    common::generate_world(&dir.path().join("in"), 2, 2);
    let cfg = config(dir.path());
    cmd_infer(&cfg).unwrap();
    cmd_detect(&cfg).unwrap();
    let plain = common::snapshot(&cfg.output("filtered"));

    let cached = PipelineConfig {
        output_dir: dir.path().join("out2"),
        ..cfg.clone()
    };
    fs::create_dir_all(&cached.output_dir).unwrap();
    for e in fs::read_dir(cfg.output("prob")).unwrap() {
        let p = e.unwrap().path();
        fs::create_dir_all(cached.output("prob")).unwrap();
        fs::copy(&p, cached.output("prob").join(p.file_name().unwrap())).unwrap();
    }
    assert_eq!(cmd_roads_index(&cached).unwrap().processed.len(), 2);
    cmd_detect(&cached).unwrap();
    assert_eq!(common::snapshot(&cached.output("filtered")), plain);
}

#[test]
fn eval_on_identical_sets_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let world = common::generate_world(&dir.path().join("in"), 2, 3);
    let cfg = config(dir.path());
    cmd_infer(&cfg).unwrap();
    cmd_detect(&cfg).unwrap();
    let r = cmd_eval(&cfg).unwrap();
    assert_eq!(r.filtered.f2, 1.0);
    assert_eq!(r.filtered.tp, world.barns);
    assert_eq!(r.orientation.counts.iter().sum::<usize>(), world.barns);
    assert!(r.facility.is_none());
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(cfg.output("reports/eval.json")).unwrap()).unwrap();
    assert_eq!(on_disk["filtered"]["fn"], 0);
}

#[test]
fn eval_reports_facility_validation_when_annotated() {
    let dir = tempfile::tempdir().unwrap();
    common::generate_world(&dir.path().join("in"), 1, 4);
    let cfg = config(dir.path());
    cmd_infer(&cfg).unwrap();
    cmd_detect(&cfg).unwrap();
    // the labels double as poultry facilities; the validated area is the whole tile
    let labels = fs::read_to_string(cfg.input("labels/tile00.geojson")).unwrap();
    let mut v: Value = serde_json::from_str(&labels).unwrap();
    for f in v["features"].as_array_mut().unwrap() {
        f["properties"]["class"] = "poultry".into();
    }
    fs::write(cfg.input("facilities.geojson"), v.to_string()).unwrap();
    let g = Geotransform::new(500_000.0, 4_000_000.0, 1.0, 1.0, "EPSG:5070").unwrap();
    let area = [(0.0, 0.0), (0.0, 512.0), (512.0, 512.0), (512.0, 0.0)].map(|(r, c)| g.pixel_to_geo(r, c));
    let area_json = serde_json::json!({"type": "FeatureCollection", "features": [{
        "type": "Feature", "properties": {},
        "geometry": {"type": "Polygon", "coordinates": [area.iter().chain([&area[0]]).map(|p| [p.x, p.y]).collect::<Vec<_>>()]}
    }]});
    fs::write(cfg.input("validated_area.geojson"), area_json.to_string()).unwrap();
    let f = cmd_eval(&cfg).unwrap().facility.unwrap();
    assert_eq!((f.precision_in_area, f.recall, f.fn_), (1.0, 1.0, 0));
}

#[test]
fn ucb_with_planted_oracle_stops() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        ucb: UcbSection {
            buckets: 4,
            ..Default::default()
        },
        seed: 11,
        ..config(dir.path())
    };
    let mut scores = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for i in 0..3000u32 {
        let id = format!("img{i:05}");
        let s: Vec<f64> = match i % 3 {
            0 => vec![],
            1 => vec![1.0 + (i % 7) as f64 / 10.0],
            _ => vec![5.0 + (i % 11) as f64],
        };
        labels.insert(id.clone(), i % 3 == 2 && i % 10 != 0);
        scores.insert(id, s);
    }
    fs::create_dir_all(cfg.input("ucb")).unwrap();
    fs::write(cfg.input("ucb/scores.json"), serde_json::to_string(&scores).unwrap()).unwrap();
    fs::write(cfg.input("ucb/labels.json"), serde_json::to_string(&labels).unwrap()).unwrap();
    let (logs, summary) = cmd_ucb(&cfg).unwrap();
    assert!(logs.last().unwrap().stopped);
    assert!(summary.estimate.stop);
    let lines = fs::read_to_string(cfg.output("reports/ucb.jsonl")).unwrap();
    let last: Value = serde_json::from_str(lines.lines().last().unwrap()).unwrap();
    assert_eq!(last["stopped"], true);
    assert_eq!(lines.lines().count(), logs.len());
    assert_eq!(summary.edges.last(), Some(&None));
}

#[test]
fn census_on_monotone_counts_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        census: CensusSection {
            counties_csv: "counties.csv".into(),
            ..Default::default()
        },
        ..config(dir.path())
    };
    let mut csv = String::from("fips,predicted_barns,ops_400,ops_10000,cv\n");
    for i in 0..40u64 {
        let small = if i == 3 { "(D)".to_string() } else { (i * 3 + 1).to_string() };
        csv.push_str(&format!("{:05},{},{},{},{}\n", i, i * i, small, i * 2, (i as f64) / 40.0));
    }
    fs::create_dir_all(&cfg.input_dir).unwrap();
    fs::write(cfg.input("counties.csv"), csv).unwrap();
    let r = cmd_census(&cfg).unwrap();
    assert_eq!(r.thresholds.len(), 2);
    assert_eq!(r.thresholds[0].counties, 39);
    for t in &r.thresholds {
        assert!((t.rho.unwrap() - 1.0).abs() < 1e-12);
    }
    assert_eq!(r.cv_threshold, Some(400));
    assert!(r.cv_sweep.windows(2).all(|w| w[0].counties <= w[1].counties));
}

#[test]
fn census_aggregates_detections_by_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let world = common::generate_world(&dir.path().join("in"), 2, 6);
    let cfg = PipelineConfig {
        census: CensusSection {
            counties_csv: "counties.csv".into(),
            boundaries: Some("counties.geojson".into()),
            ..Default::default()
        },
        ..config(dir.path())
    };
    cmd_infer(&cfg).unwrap();
    cmd_detect(&cfg).unwrap();
    // one county per tile
    let mut feats = Vec::new();
    for t in 0..2 {
        let x0 = 500_000.0 + 1000.0 * t as f64;
        let ring = [[x0, 3_999_400.0], [x0 + 600.0, 3_999_400.0], [x0 + 600.0, 4_000_100.0], [x0, 4_000_100.0], [x0, 3_999_400.0]];
        feats.push(serde_json::json!({"type": "Feature", "properties": {"fips": format!("c{t}")},
            "geometry": {"type": "Polygon", "coordinates": [ring]}}));
    }
    fs::write(
        cfg.input("counties.geojson"),
        serde_json::json!({"type": "FeatureCollection", "features": feats}).to_string(),
    )
    .unwrap();
    fs::write(cfg.input("counties.csv"), "fips,predicted_barns,ops_1000\nc0,0,1\nc1,0,2\n").unwrap();
    let r = cmd_census(&cfg).unwrap();
    let agg = r.aggregation.unwrap();
    assert_eq!(agg.counts.values().sum::<u64>() as usize, world.barns);
    assert_eq!(agg.unassigned, 0);
}

#[test]
fn sample_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    common::generate_world(&dir.path().join("in"), 2, 7);
    let mut cfg = config(dir.path());
    cfg.sampler.n_samples = 200;
    cfg.sampler.rotation_augment = true;
    cfg.sampler.pairing = Some(barnmap_cli::config::PairingSection {
        mode: barnmap_core::sampler::PairingMode::Augmented,
        imagery_years: vec![2008, 2012, 2016],
    });
    let stats = cmd_sample(&cfg).unwrap();
    let manifest = fs::read_to_string(cfg.output("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 200);
    assert!(stats.candidates >= 200);
    for l in manifest.lines() {
        let v: Value = serde_json::from_str(l).unwrap();
        assert!([2008, 2012, 2016, 2018].contains(&v["year"].as_i64().unwrap()));
    }
}

fn barnmap(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_barnmap")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    common::generate_world(&dir.path().join("in"), 2, 8);
    let (input, output) = (dir.path().join("in"), dir.path().join("out"));
    let (i, o) = (input.to_str().unwrap(), output.to_str().unwrap());

    // invalid configuration
    assert_eq!(barnmap(&["infer", "--input", i, "--output", o, "--workers", "0"]).status.code(), Some(2));
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"tau": 1.5}"#).unwrap();
    let c = cfg_path.to_str().unwrap();
    assert_eq!(barnmap(&["infer", "--config", c, "--input", i, "--output", o]).status.code(), Some(2));
    fs::write(&cfg_path, "{not json").unwrap();
    assert_eq!(barnmap(&["infer", "--config", c]).status.code(), Some(2));

    // flags win over the file
    fs::write(&cfg_path, r#"{"tau": 1.5, "workers": 2}"#).unwrap();
    let ok = barnmap(&["infer", "--config", c, "--tau", "0.5", "--input", i, "--output", o]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(barnmap(&["detect", "--input", i, "--output", o]).status.code(), Some(0));
    assert_eq!(barnmap(&["eval", "--input", i, "--output", o]).status.code(), Some(0));

    // one unreadable tile: the rest are written, exit 1
    fs::write(input.join("tiles/tile01.bin"), b"truncated").unwrap();
    let out2 = dir.path().join("out2");
    let partial = barnmap(&["infer", "--input", i, "--output", out2.to_str().unwrap()]);
    assert_eq!(partial.status.code(), Some(1));
    assert!(out2.join("prob/tile00.bin").exists());
    assert!(!out2.join("prob/tile01.bin").exists());
}

#[test]
fn missing_roads_file_is_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    common::generate_world(&dir.path().join("in"), 1, 9);
    let cfg = config(dir.path());
    fs::remove_file(cfg.input("roads/tile00.roads.geojson")).unwrap();
    cmd_infer(&cfg).unwrap();
    assert!(cmd_detect(&cfg).unwrap().is_success());
    let all = features(&fs::read_to_string(cfg.output("objects/tile00.geojson")).unwrap());
    assert!(all.iter().all(|f| f["properties"]["road_dist_m"].is_null()));
    assert!(all.iter().all(|f| f["properties"].get("rejected") != Some(&Value::from("road-intersection"))));
}

#[test]
fn roads_round_trip_through_geojson() {
    let net = RoadNetwork::new(vec![RoadEdge {
        id: "a".into(),
        points: vec![Point::new(0.0, 0.0), Point::new(10.0, 5.0)],
    }])
    .unwrap();
    let back = barnmap_core::geojson::read_roads(&roads_to_string(&net).unwrap()).unwrap();
    assert_eq!(back, net);
    let dir = tempfile::tempdir().unwrap();
    let tile = prob_tile(&[]);
    write_raster(&tile, dir.path().join("p.bin")).unwrap();
    let (w, h, g) = barnmap_cli::reports::read_raster_header(&dir.path().join("p.bin")).unwrap();
    assert_eq!((w, h, g), (300, 300, geo()));
}
