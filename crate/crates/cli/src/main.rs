use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use barnmap_cli::config::{InvalidConfig, PipelineConfig};
use barnmap_cli::{pipeline, reports, sample, RunSummary};
use barnmap_core::scorer::ScorerKind;
use barnmap_core::ucb::Estimator;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "barnmap", version, about = "Barn detection post-processing pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration JSON; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input directory (tiles/, masks/, roads/, labels/, ...).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads; output is identical for any count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Global random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Probability threshold for positive pixels.
    #[arg(long, global = true)]
    tau: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Score imagery tiles into probability rasters.
    Infer {
        /// Patch side in pixels.
        #[arg(long)]
        patch_size: Option<usize>,
        /// Overlap between adjacent patches in pixels.
        #[arg(long)]
        overlap: Option<usize>,
        /// `oracle` (reads masks/) or `heuristic` (reads imagery).
        #[arg(long, value_parser = parse_scorer)]
        scorer: Option<ScorerKind>,
        /// Oracle label smoothing: scores are 1 - noise or noise.
        #[arg(long)]
        noise: Option<f64>,
        /// Oracle per-pixel flip probability.
        #[arg(long)]
        flip_rate: Option<f64>,
    },
    /// Polygonize probability rasters and apply the rule set.
    Detect {
        /// Road split length in meters.
        #[arg(long)]
        split_length: Option<f64>,
        /// Rule set JSON replacing the default thresholds.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Split and cache road networks.
    RoadsIndex {
        /// Road split length in meters.
        #[arg(long)]
        split_length: Option<f64>,
    },
    /// Object-level evaluation against labels.
    Eval {
        /// IoU threshold for a true positive.
        #[arg(long)]
        iou: Option<f64>,
        /// Facility matching radius in meters.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Simulated labeling campaign.
    Ucb {
        /// Exploration weight.
        #[arg(long)]
        alpha: Option<f64>,
        /// Images labeled per round.
        #[arg(long)]
        per_round: Option<usize>,
        /// Number of score buckets.
        #[arg(long)]
        buckets: Option<usize>,
        /// Total estimator: `mu` or `pi`.
        #[arg(long, value_parser = parse_estimator)]
        estimator: Option<Estimator>,
    },
    /// County-level correlation with census counts.
    Census {
        /// County census counts CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// County boundary GeoJSON used to aggregate filtered detections.
        #[arg(long)]
        boundaries: Option<PathBuf>,
    },
    /// Draw a training patch manifest.
    Sample {
        /// Probability of discarding a candidate patch with no barn pixels.
        #[arg(long)]
        alpha: Option<f64>,
        /// Number of patches to draw.
        #[arg(long)]
        n_samples: Option<usize>,
        /// Random 90 degree rotations and flips.
        #[arg(long)]
        rotate: bool,
        /// Also allow 45 degree rotations with a center crop.
        #[arg(long)]
        rotate_45: bool,
    },
}

fn parse_scorer(s: &str) -> Result<ScorerKind, String> {
    match s {
        "oracle" => Ok(ScorerKind::Oracle),
        "heuristic" => Ok(ScorerKind::Heuristic),
        _ => Err(format!("unknown scorer `{s}`")),
    }
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown estimator `{s}`"))
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, InvalidConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let c = &cli.common;
    set(&mut cfg.input_dir, c.input.clone());
    set(&mut cfg.output_dir, c.output.clone());
    set(&mut cfg.workers, c.workers);
    set(&mut cfg.seed, c.seed);
    set(&mut cfg.tau, c.tau);
    match &cli.command {
        Command::Infer {
            patch_size,
            overlap,
            scorer,
            noise,
            flip_rate,
        } => {
            set(&mut cfg.patch_size, *patch_size);
            set(&mut cfg.overlap, *overlap);
            set(&mut cfg.scorer.kind, *scorer);
            set(&mut cfg.scorer.noise, *noise);
            set(&mut cfg.scorer.flip_rate, *flip_rate);
        }
        Command::Detect { split_length, rules } => {
            set(&mut cfg.split_length_m, *split_length);
            if rules.is_some() {
                cfg.ruleset = rules.clone();
            }
        }
        Command::RoadsIndex { split_length } => set(&mut cfg.split_length_m, *split_length),
        Command::Eval { iou, radius } => {
            set(&mut cfg.iou_threshold, *iou);
            set(&mut cfg.facility_radius_m, *radius);
        }
        Command::Ucb {
            alpha,
            per_round,
            buckets,
            estimator,
        } => {
            set(&mut cfg.ucb.alpha, *alpha);
            set(&mut cfg.ucb.images_per_round, *per_round);
            set(&mut cfg.ucb.buckets, *buckets);
            set(&mut cfg.ucb.estimator, *estimator);
        }
        Command::Census { csv, boundaries } => {
            set(&mut cfg.census.counties_csv, csv.clone());
            if boundaries.is_some() {
                cfg.census.boundaries = boundaries.clone();
            }
        }
        Command::Sample {
            alpha,
            n_samples,
            rotate,
            rotate_45,
        } => {
            set(&mut cfg.sampler.alpha, *alpha);
            set(&mut cfg.sampler.n_samples, *n_samples);
            cfg.sampler.rotation_augment |= *rotate || *rotate_45;
            cfg.sampler.rotate_45 |= *rotate_45;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn tile_summary(name: &str, s: &RunSummary) -> ExitCode {
    log::info!(
        "{name}: {} processed, {} skipped, {} failed",
        s.processed.len(),
        s.skipped.len(),
        s.failed.len()
    );
    if s.is_success() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: &Cli, cfg: &PipelineConfig) -> Result<ExitCode> {
    Ok(match cli.command {
        Command::Infer { .. } => tile_summary("infer", &pipeline::cmd_infer(cfg)?),
        Command::Detect { .. } => tile_summary("detect", &pipeline::cmd_detect(cfg)?),
        Command::RoadsIndex { .. } => tile_summary("roads-index", &pipeline::cmd_roads_index(cfg)?),
        Command::Eval { .. } => {
            let r = reports::cmd_eval(cfg)?;
            log::info!(
                "eval: filtered precision {:.4} recall {:.4} f2 {:.4}",
                r.filtered.precision,
                r.filtered.recall,
                r.filtered.f2
            );
            ExitCode::SUCCESS
        }
        Command::Ucb { .. } => {
            let (logs, s) = reports::cmd_ucb(cfg)?;
            log::info!("ucb: {} rounds, found {}, stopped {}", logs.len(), s.found, s.estimate.stop);
            ExitCode::SUCCESS
        }
        Command::Census { .. } => {
            let r = reports::cmd_census(cfg)?;
            log::info!("census: {} counties", r.counties);
            ExitCode::SUCCESS
        }
        Command::Sample { .. } => {
            let s = sample::cmd_sample(cfg)?;
            log::info!("sample: {} candidates drawn", s.candidates);
            ExitCode::SUCCESS
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(2);
        }
    };
    match run(&cli, &cfg) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            if e.downcast_ref::<InvalidConfig>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
