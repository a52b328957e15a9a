//! Stand-in probability producers for the segmentation stage.
//!
//! Any external model can take part in the pipeline by writing single-band `f32`
//! probability rasters; the scorers here exist so the rest of the pipeline can be
//! exercised end to end without one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Dtype, RasterTile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Perturbed copy of a truth mask.
    Oracle,
    /// Oriented bright-rectangle matched filter over imagery.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    /// Label smoothing `eps`: mask 1 maps to `1 - eps`, mask 0 to `eps`.
    #[serde(default)]
    pub noise: f64,
    /// Per-pixel probability of replacing `v` by `1 - v`.
    #[serde(default)]
    pub flip_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Oracle,
            noise: 0.0,
            flip_rate: 0.0,
            seed: 0,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Config(format!("oracle noise {} outside [0, 0.5)", self.noise)));
        }
        if !(0.0..1.0).contains(&self.flip_rate) {
            return Err(Error::Config(format!("flip rate {} outside [0, 1)", self.flip_rate)));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable per-patch seed from the run seed, the tile id and the patch origin, so
/// parallel and serial runs draw the same noise.
pub fn patch_seed(seed: u64, tile_id: &str, origin: (usize, usize)) -> u64 {
    // FNV-1a over the tile id
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tile_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mut s = splitmix64(seed ^ h);
    s = splitmix64(s ^ origin.0 as u64);
    splitmix64(s ^ ((origin.1 as u64) << 32))
}

/// Produces a probability patch for `patch`. `patch_seed` should come from [`patch_seed`].
pub fn score_patch(patch: &RasterTile, truth_mask: Option<&RasterTile>, cfg: &ScorerConfig, patch_seed: u64) -> Result<RasterTile> {
    cfg.validate()?;
    let data = match cfg.kind {
        ScorerKind::Oracle => {
            let mask = truth_mask.ok_or_else(|| Error::Config("oracle scorer requires a truth mask".into()))?;
            if mask.bands != 1 || mask.width != patch.width || mask.height != patch.height {
                return Err(Error::Shape(format!(
                    "truth mask {}x{}x{} does not match patch {}x{}",
                    mask.height, mask.width, mask.bands, patch.height, patch.width
                )));
            }
            oracle(&mask.data, cfg, patch_seed)?
        }
        ScorerKind::Heuristic => {
            if patch.bands != 4 {
                return Err(Error::Shape(format!(
                    "heuristic scorer needs 4-band imagery, got {} bands",
                    patch.bands
                )));
            }
            heuristic(patch)
        }
    };
    RasterTile::new(patch.width, patch.height, 1, Dtype::F32, data, patch.geo.clone(), patch.timestamp)
}

fn oracle(mask: &[f32], cfg: &ScorerConfig, seed: u64) -> Result<Vec<f32>> {
    let eps = cfg.noise;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mask.iter()
        .map(|&m| {
            let m = match m {
                v if v == 0.0 => 0.0,
                v if v == 1.0 => 1.0,
                v => return Err(Error::Range(format!("truth mask value {v} not in {{0, 1}}"))),
            };
            let mut v = m * (1.0 - eps) + (1.0 - m) * eps;
            if cfg.flip_rate > 0.0 && rng.gen::<f64>() < cfg.flip_rate {
                v = 1.0 - v;
            }
            Ok(v as f32)
        })
        .collect()
}

const KERNEL_HALF: i64 = 7;
const BAR_HALF_LEN: f64 = 6.5;
const BAR_HALF_WIDTH: f64 = 2.0;
const ORIENTATIONS: usize = 8;

/// Pixel offsets inside and outside a bar at each of the eight orientations.
fn bar_templates() -> Vec<(Vec<(i64, i64)>, Vec<(i64, i64)>)> {
    (0..ORIENTATIONS)
        .map(|k| {
            let theta = std::f64::consts::PI * k as f64 / ORIENTATIONS as f64;
            let (s, c) = theta.sin_cos();
            let mut inside = Vec::new();
            let mut outside = Vec::new();
            for dr in -KERNEL_HALF..=KERNEL_HALF {
                for dc in -KERNEL_HALF..=KERNEL_HALF {
                    let (x, y) = (dc as f64, -(dr as f64));
                    let along = x * c + y * s;
                    let across = -x * s + y * c;
                    if along.abs() <= BAR_HALF_LEN && across.abs() <= BAR_HALF_WIDTH {
                        inside.push((dr, dc));
                    } else {
                        outside.push((dr, dc));
                    }
                }
            }
            (inside, outside)
        })
        .collect()
}

fn heuristic(patch: &RasterTile) -> Vec<f32> {
    let (w, h) = (patch.width, patch.height);
    let scale = match patch.dtype {
        Dtype::U8 => 1.0 / 255.0,
        Dtype::F32 => 1.0,
    };
    let brightness: Vec<f32> = (0..w * h)
        .map(|i| {
            let s: f32 = (0..3).map(|b| patch.data[b * w * h + i]).sum();
            (s / 3.0 * scale).clamp(0.0, 1.0)
        })
        .collect();
    let templates = bar_templates();
    let at = |r: i64, c: i64| {
        let r = r.clamp(0, h as i64 - 1) as usize;
        let c = c.clamp(0, w as i64 - 1) as usize;
        brightness[r * w + c]
    };
    let mut out = vec![0.0f32; w * h];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let mut best = f32::NEG_INFINITY;
            for (inside, outside) in &templates {
                let mi: f32 = inside.iter().map(|&(dr, dc)| at(r + dr, c + dc)).sum::<f32>() / inside.len() as f32;
                let mo: f32 = outside.iter().map(|&(dr, dc)| at(r + dr, c + dc)).sum::<f32>() / outside.len() as f32;
                best = best.max(mi - mo);
            }
            out[r as usize * w + c as usize] = (2.0 * best).clamp(0.0, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Geotransform;

    fn geo() -> Geotransform {
        Geotransform::new(0.0, 0.0, 1.0, 1.0, "EPSG:5070").unwrap()
    }

    fn mask(n: usize, seed: u64) -> RasterTile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * n).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
        RasterTile::new(n, n, 1, Dtype::U8, data, geo(), None).unwrap()
    }

    fn cfg(noise: f64, flip: f64) -> ScorerConfig {
        ScorerConfig {
            kind: ScorerKind::Oracle,
            noise,
            flip_rate: flip,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_oracle_is_identity() {
        let m = mask(32, 1);
        let out = score_patch(&m, Some(&m), &cfg(0.0, 0.0), 3).unwrap();
        assert_eq!(out.data, m.data);
    }

    #[test]
    fn label_smoothing() {
        let m = mask(16, 2);
        let out = score_patch(&m, Some(&m), &cfg(0.1, 0.0), 3).unwrap();
        for (o, t) in out.data.iter().zip(&m.data) {
            let want = if *t == 1.0 { 0.9f32 } else { 0.1f32 };
            assert!((o - want).abs() < 1e-7);
        }
    }

    #[test]
    fn flip_fraction_monte_carlo() {
        let m = RasterTile::new(1000, 1000, 1, Dtype::U8, vec![0.0; 1_000_000], geo(), None).unwrap();
        let out = score_patch(&m, Some(&m), &cfg(0.0, 0.05), 11).unwrap();
        let flipped = out.data.iter().filter(|&&v| v == 1.0).count() as f64 / 1e6;
        assert!((flipped - 0.05).abs() <= 0.01, "flipped fraction {flipped}");
    }

    #[test]
    fn deterministic_and_thresholdable() {
        let m = mask(64, 5);
        let c = cfg(0.2, 0.0);
        let a = score_patch(&m, Some(&m), &c, patch_seed(1, "t", (0, 0))).unwrap();
        let b = score_patch(&m, Some(&m), &c, patch_seed(1, "t", (0, 0))).unwrap();
        assert_eq!(a, b);
        for tau in [0.21f32, 0.5, 0.79] {
            let th: Vec<f32> = a.data.iter().map(|&v| if v >= tau { 1.0 } else { 0.0 }).collect();
            assert_eq!(th, m.data);
        }
    }

    #[test]
    fn config_errors() {
        let m = mask(8, 1);
        assert!(score_patch(&m, None, &cfg(0.0, 0.0), 0).is_err());
        assert!(score_patch(&m, Some(&m), &cfg(0.5, 0.0), 0).is_err());
        assert!(score_patch(&m, Some(&m), &cfg(0.0, 1.0), 0).is_err());
        let h = ScorerConfig {
            kind: ScorerKind::Heuristic,
            ..Default::default()
        };
        assert!(matches!(score_patch(&m, None, &h, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn patch_seeds_differ_by_origin() {
        assert_ne!(patch_seed(1, "a", (0, 0)), patch_seed(1, "a", (0, 192)));
        assert_ne!(patch_seed(1, "a", (0, 0)), patch_seed(1, "b", (0, 0)));
        assert_eq!(patch_seed(9, "a", (5, 6)), patch_seed(9, "a", (5, 6)));
    }

    #[test]
    fn heuristic_responds_to_bright_bar() {
        let n = 48;
        let mut data = vec![40.0f32; n * n * 4];
        for r in 22..26 {
            for c in 10..38 {
                for b in 0..4 {
                    data[b * n * n + r * n + c] = 230.0;
                }
            }
        }
        let img = RasterTile::new(n, n, 4, Dtype::U8, data, geo(), None).unwrap();
        let h = ScorerConfig {
            kind: ScorerKind::Heuristic,
            ..Default::default()
        };
        let out = score_patch(&img, None, &h, 0).unwrap();
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(out.get(0, 23, 24) > 0.5);
        assert!(out.get(0, 3, 3) < 1e-5);
        assert_eq!(score_patch(&img, None, &h, 0).unwrap(), out);
    }
}
