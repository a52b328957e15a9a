//! Training-patch manifests: background rejection sampling, rotation/flip augmentation
//! and temporal pairing of older imagery with current labels.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objects::PixelBox;
use crate::raster::RasterTile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Probability of discarding a candidate patch without positive pixels.
    pub alpha: f64,
    pub patch_size: usize,
    pub n_samples: usize,
    /// Draw rotations from {0, 90, 180, 270} and independent horizontal/vertical flips.
    pub rotation_augment: bool,
    /// Also allow odd multiples of 45 degrees.
    pub rotate_45: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            patch_size: 256,
            n_samples: 1000,
            rotation_augment: false,
            rotate_45: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} must lie in [0, 1)", self.alpha)));
        }
        if self.patch_size == 0 {
            return Err(Error::Config("patch size must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairingMode {
    /// Only the imagery from the label year.
    #[default]
    Single,
    /// Every imagery year with the current label mask.
    All,
    /// Imagery years in which every intersecting labeled barn already existed.
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TemporalPairing {
    pub mode: PairingMode,
    pub label_year: i32,
    pub imagery_years: Vec<i32>,
    /// First year each labeled barn is present.
    #[serde(default)]
    pub construction_years: BTreeMap<String, i32>,
}

/// Imagery years usable with the label mask of a tile or patch intersecting `barns`,
/// each with a validity flag. Years are ascending and always include the label year.
pub fn temporal_pairs(pairing: &TemporalPairing, barns: &[String]) -> Result<Vec<(i32, bool)>> {
    let t = pairing.label_year;
    if pairing.mode == PairingMode::Single {
        return Ok(vec![(t, true)]);
    }
    let mut years = pairing.imagery_years.clone();
    years.push(t);
    years.sort_unstable();
    years.dedup();
    match pairing.mode {
        PairingMode::Single => unreachable!(),
        PairingMode::All => Ok(years.into_iter().map(|y| (y, true)).collect()),
        PairingMode::Augmented => {
            let mut first = i32::MIN;
            for b in barns {
                let y = *pairing
                    .construction_years
                    .get(b)
                    .ok_or_else(|| Error::MissingConstructionYear(b.clone()))?;
                if y > t {
                    return Err(Error::Range(format!(
                        "barn `{b}` is labeled in {t} but first present in {y}"
                    )));
                }
                first = first.max(y);
            }
            Ok(years.into_iter().map(|y| (y, y >= first)).collect())
        }
    }
}

/// One manifest entry:
/// `{"tile","row","col","year","rot","hflip","vflip","positive"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSample {
    pub tile: String,
    pub row: usize,
    pub col: usize,
    pub year: i32,
    /// Counter-clockwise rotation in degrees, a multiple of 45.
    pub rot: u32,
    pub hflip: bool,
    pub vflip: bool,
    pub positive: bool,
}

/// A tile available for sampling.
#[derive(Debug, Clone)]
pub struct SamplerTile<'a> {
    pub id: String,
    pub imagery: &'a RasterTile,
    pub mask: &'a RasterTile,
    /// Labeled barns with their pixel extents; used for per-patch temporal validity.
    pub barns: Vec<(String, PixelBox)>,
    pub pairing: Option<TemporalPairing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplerStats {
    pub candidates: u64,
    pub positive_candidates: u64,
    pub background_candidates: u64,
    pub background_accepted: u64,
}

impl SamplerStats {
    pub fn background_acceptance(&self) -> Option<f64> {
        (self.background_candidates > 0).then(|| self.background_accepted as f64 / self.background_candidates as f64)
    }
}

struct Prepared<'a> {
    tile: &'a SamplerTile<'a>,
    /// Summed-area table of the mask, `(h + 1) x (w + 1)`.
    sums: Vec<u32>,
    origins_r: usize,
    origins_c: usize,
}

impl Prepared<'_> {
    fn positives(&self, r: usize, c: usize, s: usize) -> u32 {
        let w = self.tile.mask.width + 1;
        let at = |r: usize, c: usize| self.sums[r * w + c];
        at(r + s, c + s) + at(r, c) - at(r, c + s) - at(r + s, c)
    }
}

fn summed_area(mask: &RasterTile) -> Vec<u32> {
    let (h, w) = (mask.height, mask.width);
    let mut s = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        let mut row = 0u32;
        for c in 0..w {
            row += (mask.get(0, r, c) == 1.0) as u32;
            s[(r + 1) * (w + 1) + c + 1] = s[r * (w + 1) + c + 1] + row;
        }
    }
    s
}

/// Draws `n_samples` patches. Candidates are uniform over all valid origins of all
/// tiles; a candidate with no positive mask pixel is discarded with probability
/// `alpha` and a new candidate is drawn.
pub fn sample_patches(tiles: &[SamplerTile], cfg: &SamplerConfig) -> Result<(Vec<PatchSample>, SamplerStats)> {
    cfg.validate()?;
    let s = cfg.patch_size;
    let mut prepared = Vec::new();
    let mut weights = Vec::new();
    for t in tiles {
        if (t.imagery.width, t.imagery.height) != (t.mask.width, t.mask.height) {
            return Err(Error::Shape(format!(
                "tile `{}`: imagery {}x{} vs mask {}x{}",
                t.id, t.imagery.width, t.imagery.height, t.mask.width, t.mask.height
            )));
        }
        if t.mask.width < s || t.mask.height < s {
            continue;
        }
        let p = Prepared {
            tile: t,
            sums: summed_area(t.mask),
            origins_r: t.mask.height - s + 1,
            origins_c: t.mask.width - s + 1,
        };
        weights.push((p.origins_r * p.origins_c) as f64);
        prepared.push(p);
    }
    let mut stats = SamplerStats::default();
    if cfg.n_samples == 0 {
        return Ok((Vec::new(), stats));
    }
    if prepared.is_empty() {
        return Err(Error::Empty(format!("no tile is at least {s}x{s} pixels")));
    }
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_samples);
    let rotations: &[u32] = match (cfg.rotation_augment, cfg.rotate_45) {
        (false, _) => &[0],
        (true, false) => &[0, 90, 180, 270],
        (true, true) => &[0, 45, 90, 135, 180, 225, 270, 315],
    };
    while out.len() < cfg.n_samples {
        let mut u = rng.gen::<f64>() * total;
        let mut ti = prepared.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                ti = i;
                break;
            }
            u -= w;
        }
        let p = &prepared[ti];
        let row = rng.gen_range(0..p.origins_r);
        let col = rng.gen_range(0..p.origins_c);
        stats.candidates += 1;
        let positive = p.positives(row, col, s) > 0;
        if positive {
            stats.positive_candidates += 1;
        } else {
            stats.background_candidates += 1;
            if rng.gen::<f64>() < cfg.alpha {
                continue;
            }
            stats.background_accepted += 1;
        }
        let year = patch_year(p.tile, row, col, s, &mut rng)?;
        let (rot, hflip, vflip) = if cfg.rotation_augment {
            (rotations[rng.gen_range(0..rotations.len())], rng.gen(), rng.gen())
        } else {
            (0, false, false)
        };
        out.push(PatchSample {
            tile: p.tile.id.clone(),
            row,
            col,
            year,
            rot,
            hflip,
            vflip,
            positive,
        });
    }
    Ok((out, stats))
}

fn patch_year(tile: &SamplerTile, row: usize, col: usize, s: usize, rng: &mut ChaCha8Rng) -> Result<i32> {
    let Some(pairing) = &tile.pairing else {
        return tile
            .mask
            .timestamp
            .ok_or_else(|| Error::Config(format!("tile `{}` has no label year", tile.id)));
    };
    let window = PixelBox {
        min_row: row as u32,
        min_col: col as u32,
        max_row: (row + s - 1) as u32,
        max_col: (col + s - 1) as u32,
    };
    let barns: Vec<String> = tile
        .barns
        .iter()
        .filter(|(_, b)| b.intersects(&window))
        .map(|(id, _)| id.clone())
        .collect();
    let valid: Vec<i32> = temporal_pairs(pairing, &barns)?
        .into_iter()
        .filter_map(|(y, ok)| ok.then_some(y))
        .collect();
    Ok(valid[rng.gen_range(0..valid.len())])
}

/// One JSON object per line.
pub fn manifest_jsonl(samples: &[PatchSample]) -> Result<String> {
    let mut s = String::new();
    for p in samples {
        s.push_str(&serde_json::to_string(p)?);
        s.push('\n');
    }
    Ok(s)
}

/// Output pixel `(r, c)` takes the source pixel `f(r, c)` in every band.
fn permute(src: &RasterTile, f: impl Fn(usize, usize) -> (usize, usize)) -> RasterTile {
    let mut out = src.clone();
    let mut i = 0;
    for b in 0..src.bands {
        for r in 0..src.height {
            for c in 0..src.width {
                let (sr, sc) = f(r, c);
                out.data[i] = src.get(b, sr, sc);
                i += 1;
            }
        }
    }
    out
}

fn rot90_ccw(src: &RasterTile) -> RasterTile {
    let n = src.width;
    permute(src, |r, c| (c, n - 1 - r))
}

fn hflip(src: &RasterTile) -> RasterTile {
    let w = src.width;
    permute(src, |r, c| (r, w - 1 - c))
}

fn vflip(src: &RasterTile) -> RasterTile {
    let h = src.height;
    permute(src, |r, c| (h - 1 - r, c))
}

/// Side of the largest axis-aligned square that fits inside a square of side `n`
/// rotated by 45 degrees.
pub fn rotated_45_size(n: usize) -> usize {
    (n as f64 / std::f64::consts::SQRT_2).floor() as usize
}

/// Side of the padded crop whose 45-degree rotation still covers `patch_size`.
pub fn padded_45_size(patch_size: usize) -> usize {
    let mut n = (patch_size as f64 * std::f64::consts::SQRT_2).ceil() as usize;
    while rotated_45_size(n) < patch_size {
        n += 1;
    }
    n
}

/// Nearest-neighbour rotation by `deg` (counter-clockwise) into a centred `out x out` grid.
fn rotate_nearest(src: &RasterTile, deg: f64, out: usize) -> RasterTile {
    let (sin, cos) = deg.to_radians().sin_cos();
    let (hw, hh) = (src.width as f64 / 2.0, src.height as f64 / 2.0);
    let ho = out as f64 / 2.0;
    let mut data = vec![0.0; out * out * src.bands];
    for r in 0..out {
        for c in 0..out {
            let x = c as f64 + 0.5 - ho;
            let y = ho - (r as f64 + 0.5);
            // inverse rotation back into the source frame
            let xs = cos * x + sin * y;
            let ys = -sin * x + cos * y;
            let sc = ((xs + hw).floor().max(0.0) as usize).min(src.width - 1);
            let sr = ((hh - ys).floor().max(0.0) as usize).min(src.height - 1);
            for b in 0..src.bands {
                data[(b * out + r) * out + c] = src.get(b, sr, sc);
            }
        }
    }
    RasterTile {
        width: out,
        height: out,
        bands: src.bands,
        dtype: src.dtype,
        data,
        geo: src.geo.clone(),
        timestamp: src.timestamp,
    }
}

/// Rotates counter-clockwise by `sample.rot`, then applies the horizontal and vertical
/// flips. Multiples of 90 degrees are exact permutations; odd multiples of 45 degrees
/// resample with nearest neighbour and shrink the output to [`rotated_45_size`].
pub fn apply_augmentation(patch: &RasterTile, sample: &PatchSample) -> Result<RasterTile> {
    if sample.rot % 45 != 0 || sample.rot >= 360 {
        return Err(Error::Range(format!("rotation {} is not a multiple of 45 in [0, 360)", sample.rot)));
    }
    if sample.rot != 0 && patch.width != patch.height {
        return Err(Error::Shape(format!(
            "rotation needs a square patch, got {}x{}",
            patch.height, patch.width
        )));
    }
    let mut out = if sample.rot % 90 == 0 {
        let mut t = patch.clone();
        for _ in 0..sample.rot / 90 {
            t = rot90_ccw(&t);
        }
        t
    } else {
        rotate_nearest(patch, sample.rot as f64, rotated_45_size(patch.width))
    };
    if sample.hflip {
        out = hflip(&out);
    }
    if sample.vflip {
        out = vflip(&out);
    }
    Ok(out)
}

/// Cuts the patch for `sample` from `imagery` and augments it. For odd multiples of
/// 45 degrees a padded window (zero outside the tile) is rotated and centre-cropped back
/// to `patch_size`.
pub fn extract_patch(imagery: &RasterTile, sample: &PatchSample, patch_size: usize) -> Result<RasterTile> {
    if sample.rot % 90 == 0 {
        let p = imagery.crop(sample.row, sample.col, patch_size, patch_size)?;
        return apply_augmentation(&p, sample);
    }
    let n = padded_45_size(patch_size);
    let off = ((n - patch_size) / 2) as isize;
    let (r0, c0) = (sample.row as isize - off, sample.col as isize - off);
    let mut data = vec![0.0; n * n * imagery.bands];
    for b in 0..imagery.bands {
        for r in 0..n {
            let sr = r0 + r as isize;
            if sr < 0 || sr >= imagery.height as isize {
                continue;
            }
            for c in 0..n {
                let sc = c0 + c as isize;
                if sc >= 0 && sc < imagery.width as isize {
                    data[(b * n + r) * n + c] = imagery.get(b, sr as usize, sc as usize);
                }
            }
        }
    }
    let padded = RasterTile::new(n, n, imagery.bands, imagery.dtype, data, imagery.geo.clone(), imagery.timestamp)?;
    let rotated = apply_augmentation(&padded, sample)?;
    let m = (rotated.width - patch_size) / 2;
    rotated.crop(m, m, patch_size, patch_size)
}
