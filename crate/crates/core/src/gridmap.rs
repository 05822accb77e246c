//! Layered 2.5D grid map with continuous-coordinate access and
//! higher-order interpolation.
//!
//! A [`GridMap`] stores named layers over a common raster. Cell `(0, 0)`
//! is centered at `origin`; column index grows along `+x`, row index
//! along `+y`. Missing cells hold NaN and any interpolation stencil
//! touching one is an error.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

/// Sentinel for cells with no data. Stored as NaN; use
/// [`GridMap::is_missing`] rather than comparing directly.
pub const MISSING: f64 = f64::NAN;

const MAP_MAGIC: &[u8; 4] = b"TPGM";
const MAP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridMapError {
    #[error("unknown layer '{0}'")]
    UnknownLayer(String),
    #[error("index ({row}, {col}) out of bounds for {rows}x{cols} map")]
    OutOfBounds {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("query ({x}, {y}) outside valid footprint")]
    OutsideFootprint { x: f64, y: f64 },
    #[error("interpolation stencil at ({x}, {y}) contains missing cells")]
    MissingInStencil { x: f64, y: f64 },
    #[error("layer data length {got} does not match {rows}x{cols}")]
    DimensionMismatch { got: usize, rows: usize, cols: usize },
    #[error("invalid map geometry: {0}")]
    InvalidGeometry(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a map file (bad magic)")]
    BadMagic,
    #[error("unsupported map file version {0}")]
    VersionMismatch(u32),
    #[error("map file corrupted: {0}")]
    Corrupted(String),
}

pub type Result<T> = std::result::Result<T, GridMapError>;

/// Row/column cell address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// How continuous-coordinate queries read the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InterpolationMethod {
    NearestNeighbor,
    Linear,
    /// Separable 4-point cubic through the stencil samples. Reproduces
    /// bicubic polynomials exactly.
    Bicubic,
    /// Keys cubic convolution kernel with a = -0.5.
    BicubicConvolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    resolution: f64,
    origin: [f64; 2],
    rows: usize,
    cols: usize,
    layers: BTreeMap<String, Vec<f64>>,
}

impl GridMap {
    /// Creates an empty map. `rows` and `cols` must be at least 4 so a
    /// bicubic stencil fits.
    pub fn new(resolution: f64, origin: [f64; 2], rows: usize, cols: usize) -> Result<Self> {
        if !(resolution > 0.0) {
            return Err(GridMapError::InvalidGeometry(format!(
                "resolution must be positive, got {resolution}"
            )));
        }
        if rows < 4 || cols < 4 {
            return Err(GridMapError::InvalidGeometry(format!(
                "map must be at least 4x4, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            resolution,
            origin,
            rows,
            cols,
            layers: BTreeMap::new(),
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.keys().map(|s| s.as_str())
    }

    pub fn has_layer(&self, layer: &str) -> bool {
        self.layers.contains_key(layer)
    }

    pub fn is_missing(v: f64) -> bool {
        v.is_nan()
    }

    /// Inserts or replaces a layer. Data is row-major, `rows * cols` long.
    pub fn add_layer(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        if data.len() != self.rows * self.cols {
            return Err(GridMapError::DimensionMismatch {
                got: data.len(),
                rows: self.rows,
                cols: self.cols,
            });
        }
        self.layers.insert(name.to_string(), data);
        Ok(())
    }

    /// Inserts a layer filled with a constant.
    pub fn add_constant_layer(&mut self, name: &str, value: f64) -> Result<()> {
        self.add_layer(name, vec![value; self.rows * self.cols])
    }

    pub fn layer(&self, name: &str) -> Result<&[f64]> {
        self.layers
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| GridMapError::UnknownLayer(name.to_string()))
    }

    pub fn layer_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        match self.layers.get_mut(name) {
            Some(v) => Ok(v.as_mut_slice()),
            None => Err(GridMapError::UnknownLayer(name.to_string())),
        }
    }

    pub fn at_index(&self, layer: &str, idx: CellIndex) -> Result<f64> {
        let data = self.layer(layer)?;
        if idx.row >= self.rows || idx.col >= self.cols {
            return Err(GridMapError::OutOfBounds {
                row: idx.row,
                col: idx.col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(data[idx.row * self.cols + idx.col])
    }

    pub fn set_at_index(&mut self, layer: &str, idx: CellIndex, value: f64) -> Result<()> {
        let (rows, cols) = (self.rows, self.cols);
        let data = self.layer_mut(layer)?;
        if idx.row >= rows || idx.col >= cols {
            return Err(GridMapError::OutOfBounds {
                row: idx.row,
                col: idx.col,
                rows,
                cols,
            });
        }
        data[idx.row * cols + idx.col] = value;
        Ok(())
    }

    /// World position of a cell center.
    pub fn cell_center(&self, idx: CellIndex) -> [f64; 2] {
        [
            self.origin[0] + idx.col as f64 * self.resolution,
            self.origin[1] + idx.row as f64 * self.resolution,
        ]
    }

    /// Cell containing the given position, if inside the footprint.
    pub fn index_at(&self, xy: [f64; 2]) -> Option<CellIndex> {
        let fx = (xy[0] - self.origin[0]) / self.resolution;
        let fy = (xy[1] - self.origin[1]) / self.resolution;
        let col = fx.round();
        let row = fy.round();
        if col < 0.0 || row < 0.0 || col as usize >= self.cols || row as usize >= self.rows {
            return None;
        }
        Some(CellIndex::new(row as usize, col as usize))
    }

    /// True when `xy` can be queried with the given method (stencil fits).
    pub fn in_footprint(&self, xy: [f64; 2], method: InterpolationMethod) -> bool {
        let fx = (xy[0] - self.origin[0]) / self.resolution;
        let fy = (xy[1] - self.origin[1]) / self.resolution;
        match method {
            InterpolationMethod::NearestNeighbor => {
                fx >= -0.5 && fy >= -0.5 && fx <= self.cols as f64 - 0.5 && fy <= self.rows as f64 - 0.5
            }
            InterpolationMethod::Linear => {
                fx >= 0.0 && fy >= 0.0 && fx <= (self.cols - 1) as f64 && fy <= (self.rows - 1) as f64
            }
            InterpolationMethod::Bicubic | InterpolationMethod::BicubicConvolution => {
                fx >= 1.0 && fy >= 1.0 && fx <= (self.cols - 2) as f64 && fy <= (self.rows - 2) as f64
            }
        }
    }

    /// Interpolated layer value at a continuous position.
    pub fn value_at(&self, layer: &str, xy: [f64; 2], method: InterpolationMethod) -> Result<f64> {
        let data = self.layer(layer)?;
        let fx = (xy[0] - self.origin[0]) / self.resolution;
        let fy = (xy[1] - self.origin[1]) / self.resolution;
        if !self.in_footprint(xy, method) {
            return Err(GridMapError::OutsideFootprint { x: xy[0], y: xy[1] });
        }
        let get = |r: usize, c: usize| data[r * self.cols + c];
        let value = match method {
            InterpolationMethod::NearestNeighbor => {
                get(fy.round().clamp(0.0, (self.rows - 1) as f64) as usize,
                    fx.round().clamp(0.0, (self.cols - 1) as f64) as usize)
            }
            InterpolationMethod::Linear => {
                let c0 = (fx.floor() as usize).min(self.cols - 2);
                let r0 = (fy.floor() as usize).min(self.rows - 2);
                let tx = fx - c0 as f64;
                let ty = fy - r0 as f64;
                let v00 = get(r0, c0);
                let v01 = get(r0, c0 + 1);
                let v10 = get(r0 + 1, c0);
                let v11 = get(r0 + 1, c0 + 1);
                (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11)
            }
            InterpolationMethod::Bicubic | InterpolationMethod::BicubicConvolution => {
                let c0 = (fx.floor() as usize).clamp(1, self.cols - 3);
                let r0 = (fy.floor() as usize).clamp(1, self.rows - 3);
                let tx = fx - c0 as f64;
                let ty = fy - r0 as f64;
                let wx = match method {
                    InterpolationMethod::Bicubic => lagrange_weights(tx),
                    _ => keys_weights(tx),
                };
                let wy = match method {
                    InterpolationMethod::Bicubic => lagrange_weights(ty),
                    _ => keys_weights(ty),
                };
                let mut acc = 0.0;
                for (j, wyj) in wy.iter().enumerate() {
                    let r = r0 + j - 1;
                    let mut row_acc = 0.0;
                    for (i, wxi) in wx.iter().enumerate() {
                        row_acc += wxi * get(r, c0 + i - 1);
                    }
                    acc += wyj * row_acc;
                }
                acc
            }
        };
        if value.is_nan() {
            // a NaN result means the stencil touched a missing cell
            return Err(GridMapError::MissingInStencil { x: xy[0], y: xy[1] });
        }
        Ok(value)
    }

    /// Central-difference gradient of `value_at` in x and y.
    pub fn gradient_at(
        &self,
        layer: &str,
        xy: [f64; 2],
        method: InterpolationMethod,
        step: f64,
    ) -> Result<[f64; 2]> {
        let xp = self.value_at(layer, [xy[0] + step, xy[1]], method)?;
        let xm = self.value_at(layer, [xy[0] - step, xy[1]], method)?;
        let yp = self.value_at(layer, [xy[0], xy[1] + step], method)?;
        let ym = self.value_at(layer, [xy[0], xy[1] - step], method)?;
        Ok([(xp - xm) / (2.0 * step), (yp - ym) / (2.0 * step)])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAP_MAGIC);
        buf.extend_from_slice(&MAP_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.resolution.to_le_bytes());
        buf.extend_from_slice(&self.origin[0].to_le_bytes());
        buf.extend_from_slice(&self.origin[1].to_le_bytes());
        buf.extend_from_slice(&(self.rows as u64).to_le_bytes());
        buf.extend_from_slice(&(self.cols as u64).to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for (name, data) in &self.layers {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            for v in data {
                buf.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let checksum = fnv1a(&buf);
        buf.extend_from_slice(&checksum.to_le_bytes());
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 8 {
            return Err(GridMapError::Corrupted("file too short".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if fnv1a(body) != stored {
            return Err(GridMapError::Corrupted("checksum mismatch".into()));
        }
        let mut cur = Cursor { buf: body, pos: 0 };
        if cur.take(4)? != &MAP_MAGIC[..] {
            return Err(GridMapError::BadMagic);
        }
        let version = cur.u32()?;
        if version != MAP_VERSION {
            return Err(GridMapError::VersionMismatch(version));
        }
        let resolution = cur.f64()?;
        let origin = [cur.f64()?, cur.f64()?];
        let rows = cur.u64()? as usize;
        let cols = cur.u64()? as usize;
        let n_layers = cur.u32()?;
        let mut map = GridMap::new(resolution, origin, rows, cols)?;
        for _ in 0..n_layers {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| GridMapError::Corrupted("layer name not utf8".into()))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_bits(u64::from_le_bytes(
                    cur.take(8)?.try_into().unwrap(),
                )));
            }
            map.add_layer(&name, data)?;
        }
        Ok(map)
    }

    /// Writes one layer as row-major CSV.
    pub fn export_csv<W: Write>(&self, layer: &str, out: &mut W) -> Result<()> {
        let data = self.layer(layer)?;
        for r in 0..self.rows {
            let row = &data[r * self.cols..(r + 1) * self.cols];
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Weights of the unique cubic through samples at offsets -1..=2,
/// evaluated at parameter `t` in [0, 1] past the offset-0 sample.
fn lagrange_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t - 1.0) * (t + 1.0) * (t - 2.0) / 2.0,
        -t * (t + 1.0) * (t - 2.0) / 2.0,
        t * (t + 1.0) * (t - 1.0) / 6.0,
    ]
}

/// Keys cubic convolution weights with a = -0.5.
fn keys_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        -0.5 * t3 + t2 - 0.5 * t,
        1.5 * t3 - 2.5 * t2 + 1.0,
        -1.5 * t3 + 2.0 * t2 + 0.5 * t,
        0.5 * t3 - 0.5 * t2,
    ]
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(GridMapError::Corrupted("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

/// Builds a map by sampling `f(x, y)` at every cell center.
pub fn map_from_fn(
    resolution: f64,
    origin: [f64; 2],
    rows: usize,
    cols: usize,
    layer: &str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<GridMap> {
    let mut map = GridMap::new(resolution, origin, rows, cols)?;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = map.cell_center(CellIndex::new(r, c));
            data.push(f(p[0], p[1]));
        }
    }
    map.add_layer(layer, data)?;
    Ok(map)
}
