//! Georeferenced raster tiles, patch grids and overlap-averaged stitching.
//!
//! On disk a raster is a little-endian, band-sequential payload (`<name>.bin`) with a
//! JSON sidecar (`<name>.json`):
//!
//! ```json
//! {"width":2,"height":2,"bands":1,"dtype":"f32",
//!  "geotransform":[500000.0,1.0,0.0,4200000.0,0.0,-1.0],"crs":"EPSG:26918","timestamp":2017}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// EPSG codes of common geographic (degree-based) CRSs.
const GEOGRAPHIC_EPSG: &[u32] = &[4326, 4269, 4267, 4258, 4283, 4230, 4617, 4674, 4759, 4152, 4140, 4979];

/// Affine map between pixel indices and projected coordinates (north-up, no rotation).
#[derive(Debug, Clone, PartialEq)]
pub struct Geotransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
    pub crs: String,
}

impl Geotransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_width: f64, pixel_height: f64, crs: impl Into<String>) -> Result<Self> {
        let gt = Self {
            origin_x,
            origin_y,
            pixel_width,
            pixel_height,
            crs: crs.into(),
        };
        gt.validate()?;
        Ok(gt)
    }

    fn validate(&self) -> Result<()> {
        if !(self.pixel_width > 0.0 && self.pixel_height > 0.0) {
            return Err(Error::Geotransform(format!(
                "pixel size must be positive, got {}x{}",
                self.pixel_width, self.pixel_height
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::Geotransform("origin must be finite".into()));
        }
        check_projected_crs(&self.crs)
    }

    /// Geographic position of the pixel corner lattice point `(row, col)`.
    /// Fractional indices are allowed; `(r + 0.5, c + 0.5)` is a pixel center.
    pub fn pixel_to_geo(&self, row: f64, col: f64) -> Point {
        Point::new(
            self.origin_x + col * self.pixel_width,
            self.origin_y - row * self.pixel_height,
        )
    }

    /// Inverse of [`pixel_to_geo`](Self::pixel_to_geo), returning `(row, col)`.
    pub fn geo_to_pixel(&self, p: Point) -> (f64, f64) {
        (
            (self.origin_y - p.y) / self.pixel_height,
            (p.x - self.origin_x) / self.pixel_width,
        )
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_width * self.pixel_height
    }

    /// The geotransform of a window whose top-left pixel is `(row, col)`.
    pub fn window(&self, row: usize, col: usize) -> Geotransform {
        let o = self.pixel_to_geo(row as f64, col as f64);
        Geotransform {
            origin_x: o.x,
            origin_y: o.y,
            ..self.clone()
        }
    }

    fn to_gdal(&self) -> [f64; 6] {
        [self.origin_x, self.pixel_width, 0.0, self.origin_y, 0.0, -self.pixel_height]
    }
}

pub fn check_projected_crs(crs: &str) -> Result<()> {
    let code = crs
        .strip_prefix("EPSG:")
        .and_then(|c| c.parse::<u32>().ok())
        .ok_or_else(|| Error::Crs(crs.to_string()))?;
    if GEOGRAPHIC_EPSG.contains(&code) {
        return Err(Error::Crs(crs.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "f32")]
    F32,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

/// A multiband pixel grid. Samples are held as `f32` regardless of the on-disk dtype;
/// `u8` rasters carry integral values in `0..=255`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterTile {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: Dtype,
    /// Band-sequential, row-major samples; `len == width * height * bands`.
    pub data: Vec<f32>,
    pub geo: Geotransform,
    pub timestamp: Option<i32>,
}

impl RasterTile {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        dtype: Dtype,
        data: Vec<f32>,
        geo: Geotransform,
        timestamp: Option<i32>,
    ) -> Result<Self> {
        if data.len() != width * height * bands {
            return Err(Error::Shape(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                bands
            )));
        }
        Ok(Self {
            width,
            height,
            bands,
            dtype,
            data,
            geo,
            timestamp,
        })
    }

    /// Single-band `f32` raster filled with `value`.
    pub fn filled(width: usize, height: usize, value: f32, geo: Geotransform) -> Self {
        Self {
            width,
            height,
            bands: 1,
            dtype: Dtype::F32,
            data: vec![value; width * height],
            geo,
            timestamp: None,
        }
    }

    #[inline]
    pub fn index(&self, band: usize, row: usize, col: usize) -> usize {
        (band * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(band, row, col)]
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[band * n..(band + 1) * n]
    }

    /// Copies the `h x w` window at `(row, col)` across all bands.
    pub fn crop(&self, row: usize, col: usize, h: usize, w: usize) -> Result<RasterTile> {
        if row + h > self.height || col + w > self.width {
            return Err(Error::Shape(format!(
                "window {}x{} at ({}, {}) exceeds {}x{} raster",
                h, w, row, col, self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.bands);
        for b in 0..self.bands {
            for r in row..row + h {
                let start = self.index(b, r, col);
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(RasterTile {
            width: w,
            height: h,
            bands: self.bands,
            dtype: self.dtype,
            data,
            geo: self.geo.window(row, col),
            timestamp: self.timestamp,
        })
    }

    pub fn validate_probability(&self) -> Result<()> {
        match self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            Some(v) => Err(Error::Range(format!("probability {v} outside [0, 1]"))),
            None => Ok(()),
        }
    }

    pub fn validate_mask(&self) -> Result<()> {
        match self.data.iter().find(|v| **v != 0.0 && **v != 1.0) {
            Some(v) => Err(Error::Range(format!("mask value {v} not in {{0, 1}}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    bands: usize,
    dtype: String,
    geotransform: [f64; 6],
    crs: String,
    timestamp: Option<i32>,
}

/// Path of the JSON sidecar belonging to a payload file.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterTile> {
    let path = path.as_ref();
    let header_path = sidecar_path(path);
    let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: header_path.clone(),
        reason: e.to_string(),
    })?;
    let dtype = match header.dtype.as_str() {
        "u8" => Dtype::U8,
        "f32" => Dtype::F32,
        other => return Err(Error::Dtype(other.to_string())),
    };
    let gt = header.geotransform;
    if gt[2] != 0.0 || gt[4] != 0.0 {
        return Err(Error::Header {
            path: header_path,
            reason: "rotated geotransforms are not supported".into(),
        });
    }
    let geo = Geotransform::new(gt[0], gt[3], gt[1], -gt[5], header.crs)?;

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let n = header.width * header.height * header.bands;
    let expected = n * dtype.size();
    if bytes.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: bytes.len(),
        });
    }
    let data = match dtype {
        Dtype::U8 => bytes.iter().map(|&b| b as f32).collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    RasterTile::new(header.width, header.height, header.bands, dtype, data, geo, header.timestamp)
}

/// Serializes the payload bytes of a tile.
pub fn encode_payload(tile: &RasterTile) -> Result<Vec<u8>> {
    match tile.dtype {
        Dtype::U8 => tile
            .data
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(Error::Range(format!("value {v} not representable as u8")))
                }
            })
            .collect(),
        Dtype::F32 => Ok(tile.data.iter().flat_map(|v| v.to_le_bytes()).collect()),
    }
}

pub fn encode_header(tile: &RasterTile) -> Result<String> {
    let header = Header {
        width: tile.width,
        height: tile.height,
        bands: tile.bands,
        dtype: match tile.dtype {
            Dtype::U8 => "u8".into(),
            Dtype::F32 => "f32".into(),
        },
        geotransform: tile.geo.to_gdal(),
        crs: tile.geo.crs.clone(),
        timestamp: tile.timestamp,
    };
    Ok(serde_json::to_string(&header)?)
}

/// Writes `path` (payload) and its sidecar. Each file is written to a temporary name
/// and renamed into place, payload first, so a present sidecar implies a complete payload.
pub fn write_raster(tile: &RasterTile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload = encode_payload(tile)?;
    let header = encode_header(tile)?;
    write_atomic(path, &payload)?;
    write_atomic(&sidecar_path(path), header.as_bytes())
}

/// Write-temp-then-rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Top-left corners of overlapping patches covering a tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub width: usize,
    pub height: usize,
    pub patch_size: usize,
    pub overlap: usize,
    /// `(row, col)` origins in row-major order.
    pub origins: Vec<(usize, usize)>,
}

impl PatchGrid {
    pub fn stride(&self) -> usize {
        self.patch_size - self.overlap
    }
}

/// Origins along one axis: stepping by `stride`, with the final origin clamped so the
/// last patch ends exactly at the edge.
fn axis_origins(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut o = 0;
    while o + patch < len {
        o = (o + stride).min(len - patch);
        out.push(o);
    }
    out
}

pub fn make_patch_grid(width: usize, height: usize, patch_size: usize, overlap: usize) -> Result<PatchGrid> {
    if patch_size <= overlap {
        return Err(Error::PatchGrid(format!(
            "patch size {patch_size} must exceed overlap {overlap}"
        )));
    }
    if width < patch_size || height < patch_size {
        return Err(Error::PatchGrid(format!(
            "tile {width}x{height} smaller than one {patch_size}px patch"
        )));
    }
    let stride = patch_size - overlap;
    let rows = axis_origins(height, patch_size, stride);
    let cols = axis_origins(width, patch_size, stride);
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(PatchGrid {
        width,
        height,
        patch_size,
        overlap,
        origins,
    })
}

/// Streaming accumulator that averages overlapping square patches into a tile.
#[derive(Debug, Clone)]
pub struct Stitcher {
    width: usize,
    height: usize,
    patch_size: usize,
    sum: Vec<f64>,
    count: Vec<u16>,
}

impl Stitcher {
    pub fn new(width: usize, height: usize, patch_size: usize) -> Self {
        Self {
            width,
            height,
            patch_size,
            sum: vec![0.0; width * height],
            count: vec![0; width * height],
        }
    }

    pub fn add(&mut self, origin: (usize, usize), patch: &[f32]) -> Result<()> {
        let p = self.patch_size;
        let (row, col) = origin;
        if patch.len() != p * p {
            return Err(Error::Patch(format!("expected {}x{} values, got {}", p, p, patch.len())));
        }
        if row + p > self.height || col + p > self.width {
            return Err(Error::Patch(format!(
                "origin ({row}, {col}) places patch outside {}x{} tile",
                self.height, self.width
            )));
        }
        if let Some(v) = patch.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Range(format!("patch probability {v} outside [0, 1]")));
        }
        for r in 0..p {
            let dst = (row + r) * self.width + col;
            let src = &patch[r * p..(r + 1) * p];
            for (i, &v) in src.iter().enumerate() {
                self.sum[dst + i] += v as f64;
                self.count[dst + i] += 1;
            }
        }
        Ok(())
    }

    /// Per-pixel arithmetic mean of every patch value that covered the pixel.
    pub fn finish(self, geo: Geotransform, timestamp: Option<i32>) -> Result<RasterTile> {
        if let Some(i) = self.count.iter().position(|&c| c == 0) {
            return Err(Error::Patch(format!(
                "pixel ({}, {}) not covered by any patch",
                i / self.width,
                i % self.width
            )));
        }
        let data = self
            .sum
            .iter()
            .zip(&self.count)
            .map(|(&s, &c)| (s / c as f64) as f32)
            .collect();
        RasterTile::new(self.width, self.height, 1, Dtype::F32, data, geo, timestamp)
    }
}

/// Averages `(origin, patch)` outputs into a `width x height` probability raster.
pub fn stitch<'a, I>(patches: I, width: usize, height: usize, patch_size: usize, geo: Geotransform) -> Result<RasterTile>
where
    I: IntoIterator<Item = ((usize, usize), &'a [f32])>,
{
    let mut st = Stitcher::new(width, height, patch_size);
    for (origin, patch) in patches {
        st.add(origin, patch)?;
    }
    st.finish(geo, None)
}
