//! Active validation campaign: images are bucketed by their highest detection score and
//! sampled for labeling with an upper-confidence-bound distribution over buckets.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the bucket holding images without detections.
pub const EMPTY_BUCKET: usize = 0;

/// Default number of score buckets (excluding the no-detection bucket).
pub const DEFAULT_BUCKETS: usize = 10;

/// Fraction of the estimated total that must be confirmed before stopping.
pub const STOP_FRACTION: f64 = 0.8;

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::Config("bucket edges need at least two boundaries".into()));
    }
    if !(edges[0] <= 1.0) || edges[edges.len() - 1] != f64::INFINITY {
        return Err(Error::Config("bucket edges must cover [1, inf)".into()));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("bucket edges must be strictly ascending".into()));
    }
    Ok(())
}

fn check_score(s: f64) -> Result<()> {
    if !(s >= 1.0) {
        return Err(Error::Range(format!("detection score {s} is below 1")));
    }
    Ok(())
}

/// Bucket index for one image: 0 without detections, otherwise `i` such that the
/// maximum score lies in `[edges[i-1], edges[i])`.
pub fn bucket_of(scores: &[f64], edges: &[f64]) -> Result<usize> {
    check_edges(edges)?;
    let mut max: Option<f64> = None;
    for &s in scores {
        check_score(s)?;
        max = Some(max.map_or(s, |m: f64| m.max(s)));
    }
    Ok(match max {
        None => EMPTY_BUCKET,
        Some(m) => edges.partition_point(|&e| e <= m),
    })
}

/// Image ids per bucket; bucket 0 holds images without detections. Ids within a
/// bucket are sorted.
pub fn assign_buckets(scores: &BTreeMap<String, Vec<f64>>, edges: &[f64]) -> Result<Vec<Vec<String>>> {
    check_edges(edges)?;
    let mut out = vec![Vec::new(); edges.len()];
    for (id, s) in scores {
        out[bucket_of(s, edges)?].push(id.clone());
    }
    Ok(out)
}

/// Edges `[1, q_1, …, q_{k-1}, inf]` at empirical quantiles of the per-image maximum
/// scores. Repeated quantiles are merged, so fewer than `k` buckets may result.
pub fn quantile_edges(scores: &BTreeMap<String, Vec<f64>>, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("bucket count must be >= 1".into()));
    }
    let mut maxes = Vec::new();
    for s in scores.values() {
        for &v in s {
            check_score(v)?;
        }
        if let Some(m) = s.iter().copied().reduce(f64::max) {
            maxes.push(m);
        }
    }
    maxes.sort_by(f64::total_cmp);
    let mut edges = vec![1.0];
    if !maxes.is_empty() {
        for j in 1..k {
            let q = maxes[(j * maxes.len() / k).min(maxes.len() - 1)];
            if q > *edges.last().unwrap() {
                edges.push(q);
            }
        }
    }
    edges.push(f64::INFINITY);
    Ok(edges)
}

/// `S_i = μ_i + α·sqrt(ln(Σn) / n_i)`, with `+inf` for unvisited buckets.
pub fn ucb_scores(mu: &[f64], n: &[u64], alpha: f64) -> Vec<f64> {
    let total: u64 = n.iter().sum();
    let ln_total = if total > 0 { (total as f64).ln() } else { 0.0 };
    mu.iter()
        .zip(n)
        .map(|(&m, &ni)| {
            if ni == 0 {
                f64::INFINITY
            } else if alpha == 0.0 {
                m
            } else {
                m + alpha * (ln_total / ni as f64).sqrt()
            }
        })
        .collect()
}

/// `π_i = S_i / Σ S_j` over `available` buckets. If any available bucket carries the
/// infinite sentinel, π is uniform over those buckets. Unavailable buckets get 0.
pub fn sampling_distribution(scores: &[f64], available: &[bool]) -> Vec<f64> {
    let mut pi = vec![0.0; scores.len()];
    let inf: Vec<usize> = (0..scores.len())
        .filter(|&i| available[i] && scores[i] == f64::INFINITY)
        .collect();
    if !inf.is_empty() {
        for &i in &inf {
            pi[i] = 1.0 / inf.len() as f64;
        }
        return pi;
    }
    let total: f64 = (0..scores.len()).filter(|&i| available[i]).map(|i| scores[i]).sum();
    let avail = available.iter().filter(|&&a| a).count();
    for i in 0..scores.len() {
        if available[i] {
            pi[i] = if total > 0.0 {
                scores[i] / total
            } else {
                1.0 / avail as f64
            };
        }
    }
    pi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// `Σ |B_i| μ_i`
    #[default]
    Mu,
    /// `Σ |B_i| π_i`
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcbConfig {
    pub alpha: f64,
    pub images_per_round: usize,
    pub estimator: Estimator,
    pub seed: u64,
}

impl Default for UcbConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            images_per_round: 50,
            estimator: Estimator::Mu,
            seed: 0,
        }
    }
}

impl UcbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("exploration parameter {} must be finite and >= 0", self.alpha)));
        }
        if self.images_per_round == 0 {
            return Err(Error::Config("images per round must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Bucket {
    images: Vec<String>,
    unexamined: Vec<usize>,
    visits: u64,
    successes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub n_c_mu: f64,
    pub n_c_pi: f64,
    pub stop: bool,
}

/// One JSON line of the campaign log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub pi: Vec<f64>,
    pub sampled: Vec<String>,
    pub labels: BTreeMap<String, bool>,
    pub found: u64,
    pub n: Vec<u64>,
    pub mu: Vec<f64>,
    #[serde(rename = "N_c_mu")]
    pub n_c_mu: f64,
    #[serde(rename = "N_c_pi")]
    pub n_c_pi: f64,
    pub stopped: bool,
}

#[derive(Debug, Clone)]
pub struct UcbState {
    edges: Vec<f64>,
    buckets: Vec<Bucket>,
    cfg: UcbConfig,
    found: u64,
    rounds: usize,
    rng: ChaCha8Rng,
}

impl UcbState {
    /// `buckets[i]` lists the images of bucket `i` (as returned by [`assign_buckets`]).
    pub fn new(edges: Vec<f64>, buckets: Vec<Vec<String>>, cfg: UcbConfig) -> Result<Self> {
        check_edges(&edges)?;
        cfg.validate()?;
        if buckets.len() != edges.len() {
            return Err(Error::Config(format!(
                "{} buckets given for {} edges (expected one per edge)",
                buckets.len(),
                edges.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for id in buckets.iter().flatten() {
            if !seen.insert(id) {
                return Err(Error::Config(format!("image `{id}` assigned to more than one bucket")));
            }
        }
        let buckets = buckets
            .into_iter()
            .map(|images| Bucket {
                unexamined: (0..images.len()).collect(),
                images,
                visits: 0,
                successes: 0,
            })
            .collect();
        Ok(Self {
            edges,
            buckets,
            cfg,
            found: 0,
            rounds: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn from_scores(scores: &BTreeMap<String, Vec<f64>>, edges: Vec<f64>, cfg: UcbConfig) -> Result<Self> {
        let buckets = assign_buckets(scores, &edges)?;
        Self::new(edges, buckets, cfg)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(|b| b.images.len()).collect()
    }

    pub fn visits(&self) -> Vec<u64> {
        self.buckets.iter().map(|b| b.visits).collect()
    }

    pub fn successes(&self) -> Vec<u64> {
        self.buckets.iter().map(|b| b.successes).collect()
    }

    /// Success rates, 0 for unvisited buckets.
    pub fn mu(&self) -> Vec<f64> {
        self.buckets
            .iter()
            .map(|b| {
                if b.visits == 0 {
                    0.0
                } else {
                    b.successes as f64 / b.visits as f64
                }
            })
            .collect()
    }

    pub fn found(&self) -> u64 {
        self.found
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn config(&self) -> &UcbConfig {
        &self.cfg
    }

    fn available(&self) -> Vec<bool> {
        self.buckets.iter().map(|b| !b.unexamined.is_empty()).collect()
    }

    /// True once every image has been labeled.
    pub fn is_complete(&self) -> bool {
        self.buckets.iter().all(|b| b.unexamined.is_empty())
    }

    pub fn scores(&self) -> Vec<f64> {
        ucb_scores(&self.mu(), &self.visits(), self.cfg.alpha)
    }

    /// Sampling distribution for the next round. Buckets with no unexamined images get
    /// probability 0; the first round is uniform over the remaining buckets.
    pub fn distribution(&self) -> Vec<f64> {
        sampling_distribution(&self.scores(), &self.available())
    }

    pub fn estimate(&self) -> Result<Estimate> {
        if self.rounds == 0 {
            return Err(Error::Undefined("no campaign rounds completed".into()));
        }
        let sizes = self.sizes();
        let n_c_mu = sizes.iter().zip(self.mu()).map(|(&s, m)| s as f64 * m).sum();
        let n_c_pi = sizes.iter().zip(self.distribution()).map(|(&s, p)| s as f64 * p).sum();
        let chosen = match self.cfg.estimator {
            Estimator::Mu => n_c_mu,
            Estimator::Pi => n_c_pi,
        };
        Ok(Estimate {
            n_c_mu,
            n_c_pi,
            stop: self.found as f64 >= STOP_FRACTION * chosen,
        })
    }

    fn draw_bucket(&mut self, pi: &[f64], available: &[bool]) -> Option<usize> {
        let total: f64 = (0..pi.len()).filter(|&i| available[i]).map(|i| pi[i]).sum();
        if total > 0.0 {
            let mut u = self.rng.gen::<f64>() * total;
            let mut last = None;
            for i in 0..pi.len() {
                if available[i] && pi[i] > 0.0 {
                    last = Some(i);
                    if u < pi[i] {
                        return Some(i);
                    }
                    u -= pi[i];
                }
            }
            return last;
        }
        // Every bucket with positive mass is exhausted; fall back to uniform.
        let rest: Vec<usize> = (0..pi.len()).filter(|&i| available[i]).collect();
        if rest.is_empty() {
            None
        } else {
            Some(rest[self.rng.gen_range(0..rest.len())])
        }
    }

    /// Draws up to `images_per_round` images, labels them with `oracle` and updates the
    /// bucket statistics in image-id order. Returns `None` when every image has already
    /// been examined.
    pub fn run_round<F>(&mut self, mut oracle: F) -> Result<Option<RoundLog>>
    where
        F: FnMut(&str) -> Result<bool>,
    {
        if self.is_complete() {
            return Ok(None);
        }
        let pi = self.distribution();
        let mut available = self.available();
        let mut drawn: Vec<(usize, String)> = Vec::new();
        for _ in 0..self.cfg.images_per_round {
            let Some(b) = self.draw_bucket(&pi, &available) else {
                break;
            };
            let bucket = &mut self.buckets[b];
            let k = self.rng.gen_range(0..bucket.unexamined.len());
            let img = bucket.unexamined.swap_remove(k);
            if bucket.unexamined.is_empty() {
                available[b] = false;
            }
            drawn.push((b, bucket.images[img].clone()));
        }
        let sampled: Vec<String> = drawn.iter().map(|(_, id)| id.clone()).collect();
        drawn.sort_by(|a, b| a.1.cmp(&b.1));
        let mut labels = BTreeMap::new();
        for (b, id) in drawn {
            let hit = oracle(&id)?;
            let bucket = &mut self.buckets[b];
            bucket.visits += 1;
            if hit {
                bucket.successes += 1;
                self.found += 1;
            }
            labels.insert(id, hit);
        }
        self.rounds += 1;
        let est = self.estimate()?;
        Ok(Some(RoundLog {
            round: self.rounds,
            pi,
            sampled,
            labels,
            found: self.found,
            n: self.visits(),
            mu: self.mu(),
            n_c_mu: est.n_c_mu,
            n_c_pi: est.n_c_pi,
            stopped: est.stop,
        }))
    }

    /// Runs rounds until the stop rule fires, every image is examined, or `max_rounds`
    /// rounds have run.
    pub fn run_campaign<F>(&mut self, mut oracle: F, max_rounds: usize) -> Result<Vec<RoundLog>>
    where
        F: FnMut(&str) -> Result<bool>,
    {
        let mut logs = Vec::new();
        while logs.len() < max_rounds {
            match self.run_round(&mut oracle)? {
                Some(log) => {
                    let stop = log.stopped;
                    logs.push(log);
                    if stop {
                        break;
                    }
                }
                None => break,
            }
        }
        Ok(logs)
    }
}
