//! Pipeline configuration: one JSON file, overridable from the command line.

use std::fmt;
use std::path::{Path, PathBuf};

use barnmap_core::filter::RuleSet;
use barnmap_core::sampler::PairingMode;
use barnmap_core::scorer::{ScorerConfig, ScorerKind};
use barnmap_core::ucb::{Estimator, UcbConfig, DEFAULT_BUCKETS};
use serde::{Deserialize, Serialize};

/// A configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct InvalidConfig(pub String);

impl fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for InvalidConfig {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    pub kind: ScorerKind,
    pub noise: f64,
    pub flip_rate: f64,
}

impl Default for ScorerSection {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Oracle,
            noise: 0.0,
            flip_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingSection {
    pub mode: PairingMode,
    /// Imagery years paired with each tile's label year.
    #[serde(default)]
    pub imagery_years: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub alpha: f64,
    pub n_samples: usize,
    pub rotation_augment: bool,
    pub rotate_45: bool,
    pub pairing: Option<PairingSection>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            n_samples: 1000,
            rotation_augment: false,
            rotate_45: false,
            pairing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UcbSection {
    pub alpha: f64,
    pub images_per_round: usize,
    pub buckets: usize,
    pub estimator: Estimator,
    pub max_rounds: usize,
    /// JSON object `{image id: [detection scores]}`, relative to the input directory.
    pub scores: PathBuf,
    /// JSON object `{image id: bool}` answering label queries.
    pub labels: PathBuf,
}

impl Default for UcbSection {
    fn default() -> Self {
        let d = UcbConfig::default();
        Self {
            alpha: d.alpha,
            images_per_round: d.images_per_round,
            buckets: DEFAULT_BUCKETS,
            estimator: d.estimator,
            max_rounds: 10_000,
            scores: PathBuf::from("ucb/scores.json"),
            labels: PathBuf::from("ucb/labels.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusSection {
    pub counties_csv: PathBuf,
    /// County boundaries keyed by a `fips` property; when present, predicted barns are
    /// counted from the filtered detections instead of the CSV column.
    pub boundaries: Option<PathBuf>,
    /// Size thresholds to sweep; defaults to every `ops_<n>` column.
    pub thresholds: Option<Vec<u64>>,
    pub cv_cutoffs: Vec<f64>,
    /// Threshold column used for the cv sweep; defaults to the smallest.
    pub cv_threshold: Option<u64>,
}

impl Default for CensusSection {
    fn default() -> Self {
        Self {
            counties_csv: PathBuf::from("census/counties.csv"),
            boundaries: None,
            thresholds: None,
            cv_cutoffs: vec![0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 1.0],
            cv_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub workers: usize,
    pub seed: u64,
    pub tau: f64,
    pub patch_size: usize,
    pub overlap: usize,
    pub scorer: ScorerSection,
    pub split_length_m: f64,
    /// Rule set JSON; the built-in ranges are used when absent.
    pub ruleset: Option<PathBuf>,
    pub iou_threshold: f64,
    pub facility_radius_m: f64,
    pub orientation_bin_deg: f64,
    pub sampler: SamplerSection,
    pub ucb: UcbSection,
    pub census: CensusSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_dir: PathBuf::from("."),
            output_dir: PathBuf::from("out"),
            workers: 1,
            seed: 0,
            tau: 0.5,
            patch_size: 256,
            overlap: 64,
            scorer: ScorerSection::default(),
            split_length_m: barnmap_core::roads::DEFAULT_SPLIT_M,
            ruleset: None,
            iou_threshold: 0.5,
            facility_radius_m: 100.0,
            orientation_bin_deg: 5.0,
            sampler: SamplerSection::default(),
            ucb: UcbSection::default(),
            census: CensusSection::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> InvalidConfig {
    InvalidConfig(msg.into())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, InvalidConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), InvalidConfig> {
        if self.workers == 0 {
            return Err(invalid("workers must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(invalid(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.patch_size == 0 || self.overlap >= self.patch_size {
            return Err(invalid(format!(
                "patch size {} must exceed overlap {}",
                self.patch_size, self.overlap
            )));
        }
        self.scorer_config().validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.split_length_m > 0.0) || !self.split_length_m.is_finite() {
            return Err(invalid(format!("split length {} must be > 0", self.split_length_m)));
        }
        if !(self.iou_threshold >= 0.0 && self.iou_threshold < 1.0) {
            return Err(invalid(format!("IoU threshold {} outside [0, 1)", self.iou_threshold)));
        }
        if !(self.facility_radius_m >= 0.0) {
            return Err(invalid(format!("facility radius {} must be >= 0", self.facility_radius_m)));
        }
        barnmap_core::eval::orientation_histogram(&[], self.orientation_bin_deg).map_err(|e| invalid(e.to_string()))?;
        self.sampler_config().validate().map_err(|e| invalid(e.to_string()))?;
        self.ucb_config().validate().map_err(|e| invalid(e.to_string()))?;
        if self.ucb.buckets == 0 {
            return Err(invalid("ucb buckets must be >= 1"));
        }
        if self.census.cv_cutoffs.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(invalid("cv cutoffs must be ascending"));
        }
        self.rules()?;
        Ok(())
    }

    pub fn scorer_config(&self) -> ScorerConfig {
        ScorerConfig {
            kind: self.scorer.kind,
            noise: self.scorer.noise,
            flip_rate: self.scorer.flip_rate,
            seed: self.seed,
        }
    }

    pub fn sampler_config(&self) -> barnmap_core::sampler::SamplerConfig {
        barnmap_core::sampler::SamplerConfig {
            alpha: self.sampler.alpha,
            patch_size: self.patch_size,
            n_samples: self.sampler.n_samples,
            rotation_augment: self.sampler.rotation_augment,
            rotate_45: self.sampler.rotate_45,
            seed: self.seed,
        }
    }

    pub fn ucb_config(&self) -> UcbConfig {
        UcbConfig {
            alpha: self.ucb.alpha,
            images_per_round: self.ucb.images_per_round,
            estimator: self.ucb.estimator,
            seed: self.seed,
        }
    }

    pub fn rules(&self) -> Result<RuleSet, InvalidConfig> {
        match &self.ruleset {
            None => Ok(RuleSet::default()),
            Some(p) => RuleSet::load(self.input_dir.join(p)).map_err(|e| invalid(e.to_string())),
        }
    }

    pub fn input(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.input_dir.join(rel)
    }

    pub fn output(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.output_dir.join(rel)
    }
}
