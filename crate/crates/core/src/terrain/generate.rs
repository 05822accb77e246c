//! Procedural benchmark terrains: flat, rough, gap, step, and the hole
//! map with a narrow traversable bridge.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TerrainError, LAYER_ELEVATION};
use crate::gridmap::{CellIndex, GridMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainFamily {
    Flat,
    Rough,
    Gap,
    Step,
    Hole,
}

impl std::str::FromStr for TerrainFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "flat" => Ok(Self::Flat),
            "rough" => Ok(Self::Rough),
            "gap" => Ok(Self::Gap),
            "step" => Ok(Self::Step),
            "hole" => Ok(Self::Hole),
            other => Err(format!(
                "unknown terrain family '{other}' (expected flat, rough, gap, step, or hole)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TerrainSpec {
    pub family: TerrainFamily,
    /// In [0, 1]; maps linearly onto the family's physical parameter.
    pub difficulty: f64,
    pub seed: u64,
    /// Map extent in meters, x by y.
    pub extent: [f64; 2],
    /// Cell size in meters.
    pub resolution: f64,
}

/// Generator ground truth, written as a JSON sidecar next to the map so
/// tests can check labels without re-deriving them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub family: TerrainFamily,
    pub difficulty: f64,
    /// Physical size of the family feature: rough amplitude, gap width,
    /// step height (meters). None for flat.
    pub feature_size: Option<f64>,
    /// Column range [start, end] of the feature band (gap, step edge
    /// column, hole band). None for flat/rough.
    pub feature_cols: Option<(usize, usize)>,
    /// Row range of the traversable bridge across the hole band.
    pub bridge_rows: Option<(usize, usize)>,
}

/// Rough amplitude in meters for a difficulty in [0, 1].
pub fn rough_amplitude(d: f64) -> f64 {
    0.25 + 1.75 * d
}

/// Gap width in meters for a difficulty in [0, 1].
pub fn gap_width(d: f64) -> f64 {
    1.0 + 2.5 * d
}

/// Step height in meters for a difficulty in [0, 1].
pub fn step_height(d: f64) -> f64 {
    0.5 + 1.0 * d
}

// gaps and holes are sheer drops: walls steeper than any slope limit,
// and no elevation returns below WALL_DEPTH
const WALL_SLOPE: f64 = 2.75;
const WALL_DEPTH: f64 = 1.0;
const HOLE_BAND_WIDTH: f64 = 3.0;
const BRIDGE_WIDTH: f64 = 1.0;
// ground hidden behind a step edge, per meter of step height
const STEP_SHADOW_PER_HEIGHT: f64 = 0.4;

/// Builds the elevation layer for a terrain spec. Deterministic in
/// (family, difficulty, seed, extent, resolution).
pub fn generate(spec: &TerrainSpec) -> Result<(GridMap, GroundTruth)> {
    if spec.extent[0] <= 0.0 || spec.extent[1] <= 0.0 || spec.resolution <= 0.0 {
        return Err(TerrainError::InvalidSpec(
            "extent and resolution must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.difficulty) {
        return Err(TerrainError::InvalidSpec(format!(
            "difficulty {} outside [0, 1]",
            spec.difficulty
        )));
    }
    let cols = (spec.extent[0] / spec.resolution).round() as usize + 1;
    let rows = (spec.extent[1] / spec.resolution).round() as usize + 1;
    if rows < 4 || cols < 4 {
        return Err(TerrainError::InvalidSpec("extent too small for resolution".into()));
    }
    let mut map = GridMap::new(spec.resolution, [0.0, 0.0], rows, cols)?;
    map.add_constant_layer(LAYER_ELEVATION, 0.0)?;

    let mut truth = GroundTruth {
        family: spec.family,
        difficulty: spec.difficulty,
        feature_size: None,
        feature_cols: None,
        bridge_rows: None,
    };

    match spec.family {
        TerrainFamily::Flat => {}
        TerrainFamily::Rough => {
            let amplitude = rough_amplitude(spec.difficulty);
            truth.feature_size = Some(amplitude);
            let field = value_noise(rows, cols, spec.resolution, spec.seed);
            let max_abs = field.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
            let data: Vec<f64> = field.iter().map(|v| v / max_abs * amplitude).collect();
            map.add_layer(LAYER_ELEVATION, data)?;
        }
        TerrainFamily::Gap => {
            let width = gap_width(spec.difficulty);
            truth.feature_size = Some(width);
            let xc = spec.extent[0] / 2.0;
            let (mut c0, mut c1) = (usize::MAX, 0);
            for r in 0..rows {
                for c in 0..cols {
                    let x = map.cell_center(CellIndex::new(r, c))[0];
                    let inset = width / 2.0 - (x - xc).abs();
                    if inset > 0.0 {
                        let depth = WALL_SLOPE * inset;
                        let v = if depth > WALL_DEPTH { crate::gridmap::MISSING } else { -depth };
                        map.set_at_index(LAYER_ELEVATION, CellIndex::new(r, c), v)?;
                        c0 = c0.min(c);
                        c1 = c1.max(c);
                    }
                }
            }
            truth.feature_cols = Some((c0, c1));
        }
        TerrainFamily::Step => {
            let height = step_height(spec.difficulty);
            truth.feature_size = Some(height);
            let xe = spec.extent[0] / 2.0;
            // a range sensor on the low side cannot see the vertical face
            // or the ground immediately behind the edge: no-data shadow
            // proportional to the step height
            let shadow = STEP_SHADOW_PER_HEIGHT * height;
            let mut edge_col = 0;
            for r in 0..rows {
                for c in 0..cols {
                    let x = map.cell_center(CellIndex::new(r, c))[0];
                    if x >= xe {
                        let v = if x < xe + shadow {
                            crate::gridmap::MISSING
                        } else {
                            height
                        };
                        map.set_at_index(LAYER_ELEVATION, CellIndex::new(r, c), v)?;
                        if edge_col == 0 || c < edge_col {
                            edge_col = c;
                        }
                    }
                }
            }
            truth.feature_cols = Some((edge_col, edge_col));
        }
        TerrainFamily::Hole => {
            // deep band across the map with a bridge at ground level;
            // difficulty has no effect on this family
            let x0 = spec.extent[0] / 2.0 - HOLE_BAND_WIDTH / 2.0;
            let x1 = spec.extent[0] / 2.0 + HOLE_BAND_WIDTH / 2.0;
            let yb0 = spec.extent[1] / 2.0 - BRIDGE_WIDTH / 2.0;
            let yb1 = spec.extent[1] / 2.0 + BRIDGE_WIDTH / 2.0;
            let (mut c0, mut c1) = (usize::MAX, 0);
            let (mut rb0, mut rb1) = (usize::MAX, 0);
            for r in 0..rows {
                for c in 0..cols {
                    let p = map.cell_center(CellIndex::new(r, c));
                    if p[0] > x0 && p[0] < x1 {
                        c0 = c0.min(c);
                        c1 = c1.max(c);
                        if p[1] >= yb0 && p[1] <= yb1 {
                            rb0 = rb0.min(r);
                            rb1 = rb1.max(r);
                        } else {
                            map.set_at_index(
                                LAYER_ELEVATION,
                                CellIndex::new(r, c),
                                crate::gridmap::MISSING,
                            )?;
                        }
                    }
                }
            }
            truth.feature_size = Some(BRIDGE_WIDTH);
            truth.feature_cols = Some((c0, c1));
            truth.bridge_rows = Some((rb0, rb1));
        }
    }
    Ok((map, truth))
}

/// Seeded value noise: three octaves of bilinearly interpolated lattice
/// noise with 4 m base wavelength.
fn value_noise(rows: usize, cols: usize, resolution: f64, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0f64; rows * cols];
    let mut amplitude = 1.0;
    let mut wavelength = 4.0;
    for octave in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ octave);
        let lat_cols = (cols as f64 * resolution / wavelength).ceil() as usize + 2;
        let lat_rows = (rows as f64 * resolution / wavelength).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..lat_rows * lat_cols)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        for r in 0..rows {
            let fy = r as f64 * resolution / wavelength;
            let r0 = fy.floor() as usize;
            let ty = fy - r0 as f64;
            let sy = smoothstep(ty);
            for c in 0..cols {
                let fx = c as f64 * resolution / wavelength;
                let c0 = fx.floor() as usize;
                let tx = fx - c0 as f64;
                let sx = smoothstep(tx);
                let v00 = lattice[r0 * lat_cols + c0];
                let v01 = lattice[r0 * lat_cols + c0 + 1];
                let v10 = lattice[(r0 + 1) * lat_cols + c0];
                let v11 = lattice[(r0 + 1) * lat_cols + c0 + 1];
                let v = (1.0 - sy) * ((1.0 - sx) * v00 + sx * v01)
                    + sy * ((1.0 - sx) * v10 + sx * v11);
                out[r * cols + c] += amplitude * v;
            }
        }
        amplitude *= 0.4;
        wavelength *= 0.5;
    }
    out
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: TerrainFamily, difficulty: f64) -> TerrainSpec {
        TerrainSpec {
            family,
            difficulty,
            seed: 42,
            extent: [15.0, 10.0],
            resolution: 0.1,
        }
    }

    #[test]
    fn flat_is_all_zero() {
        let (map, _) = generate(&spec(TerrainFamily::Flat, 0.7)).unwrap();
        assert!(map.layer(LAYER_ELEVATION).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_midpoint_height() {
        let (map, truth) = generate(&spec(TerrainFamily::Step, 0.5)).unwrap();
        assert_eq!(truth.feature_size, Some(1.0));
        let data = map.layer(LAYER_ELEVATION).unwrap();
        let cols = map.cols();
        let low = data[5 * cols + 5];
        let high = data[5 * cols + cols - 5];
        assert_eq!(high - low, 1.0);
    }

    #[test]
    fn gap_width_measured() {
        let (map, truth) = generate(&spec(TerrainFamily::Gap, 1.0)).unwrap();
        let (c0, c1) = truth.feature_cols.unwrap();
        let measured = (c1 - c0 + 1) as f64 * map.resolution();
        assert!((measured - 3.5).abs() <= map.resolution() + 1e-12, "measured {measured}");
    }

    #[test]
    fn rough_amplitude_scaled() {
        let (map, truth) = generate(&spec(TerrainFamily::Rough, 1.0)).unwrap();
        assert_eq!(truth.feature_size, Some(2.0));
        let max_abs = map
            .layer(LAYER_ELEVATION)
            .unwrap()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((max_abs - 2.0).abs() < 1e-9);
    }

    #[test]
    fn hole_has_bridge_at_ground_level() {
        let (map, truth) = generate(&spec(TerrainFamily::Hole, 0.0)).unwrap();
        let (rb0, rb1) = truth.bridge_rows.unwrap();
        let (c0, c1) = truth.feature_cols.unwrap();
        let data = map.layer(LAYER_ELEVATION).unwrap();
        let cols = map.cols();
        for r in rb0..=rb1 {
            for c in c0..=c1 {
                assert_eq!(data[r * cols + c], 0.0);
            }
        }
        // off the bridge the band has no elevation returns
        assert!(data[cols + (c0 + c1) / 2].is_nan());
    }

    #[test]
    fn deterministic_for_same_spec() {
        let s = spec(TerrainFamily::Rough, 0.6);
        let (a, _) = generate(&s).unwrap();
        let (b, _) = generate(&s).unwrap();
        let (da, db) = (a.layer(LAYER_ELEVATION).unwrap(), b.layer(LAYER_ELEVATION).unwrap());
        assert!(da.iter().zip(db).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = spec(TerrainFamily::Flat, 0.0);
        s.resolution = -1.0;
        assert!(generate(&s).is_err());
        let mut s = spec(TerrainFamily::Flat, 0.0);
        s.extent = [0.0, 10.0];
        assert!(generate(&s).is_err());
    }
}
