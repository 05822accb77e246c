//! Terrain pre-processing: local plane fits, two-scale smoothing,
//! traversability classification, signed distance field, and procedural
//! benchmark terrain generation.
//!
//! Layer names written by this module are the contract with the planner:
//! `elevation_smooth_s`/`normal_x_s`/`normal_y_s` (small radius),
//! `elevation_smooth_l`/`normal_x_l`/`normal_y_l` (large radius),
//! `traversability` (1.0 traversable, 0.0 not), `sdf` (meters, positive
//! inside the traversable set).

mod generate;
mod sdf;

pub use generate::{generate, GroundTruth, TerrainFamily, TerrainSpec};
pub use sdf::compute_sdf;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::gridmap::{CellIndex, GridMap, GridMapError, MISSING};

pub const LAYER_ELEVATION: &str = "elevation";
pub const LAYER_SMOOTH_S: &str = "elevation_smooth_s";
pub const LAYER_SMOOTH_L: &str = "elevation_smooth_l";
pub const LAYER_NORMAL_X_S: &str = "normal_x_s";
pub const LAYER_NORMAL_Y_S: &str = "normal_y_s";
pub const LAYER_NORMAL_X_L: &str = "normal_x_l";
pub const LAYER_NORMAL_Y_L: &str = "normal_y_l";
pub const LAYER_TRAVERSABILITY: &str = "traversability";
pub const LAYER_SDF: &str = "sdf";

/// Default small filter radius in meters.
pub const RADIUS_SMALL: f64 = 0.3;
/// Default large filter radius in meters, roughly the robot footprint.
pub const RADIUS_LARGE: f64 = 2.5;

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("insufficient support: {found} cells within radius (need >= 3)")]
    InsufficientSupport { found: usize },
    #[error("rank-deficient neighborhood at ({x}, {y})")]
    RankDeficient { x: f64, y: f64 },
    #[error("missing prerequisite layer '{0}'")]
    MissingLayer(String),
    #[error("invalid terrain spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    GridMap(#[from] GridMapError),
}

pub type Result<T> = std::result::Result<T, TerrainError>;

/// Local tangent-plane fit around a query point.
///
/// `normal_xy` holds the slope coefficients `(s_x, s_y)` of the fitted
/// plane `h(p + d) = height + s_x d_x + s_y d_y`; the unnormalized surface
/// normal is `[-s_x, -s_y, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct PlaneFit {
    pub normal_xy: [f64; 2],
    pub height: f64,
    pub support_count: usize,
}

impl PlaneFit {
    /// Inclination of the fitted plane against horizontal, radians.
    pub fn tilt(&self) -> f64 {
        self.normal_xy[0].hypot(self.normal_xy[1]).atan()
    }
}

/// Thresholds deciding which cells limbs may touch.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TraversabilityParams {
    /// Max plane inclination, radians.
    pub max_slope: f64,
    /// Max |elevation - elevation_smooth_s| before a cell counts as a
    /// step or gap edge, meters.
    pub height_diff_threshold: f64,
    /// Required clearance from the untraversable boundary, meters.
    pub sdf_margin: f64,
}

impl Default for TraversabilityParams {
    fn default() -> Self {
        Self {
            max_slope: 30f64.to_radians(),
            height_diff_threshold: 0.15,
            sdf_margin: 0.3,
        }
    }
}

/// Least-squares tangent plane through the cells of `layer` within
/// `radius` of `p`. The fitted height is evaluated at `p` itself.
pub fn fit_plane(map: &GridMap, layer: &str, p: [f64; 2], radius: f64) -> Result<PlaneFit> {
    let data = map.layer(layer)?;
    let res = map.resolution();
    let origin = map.origin();
    if radius <= 0.0 {
        return Err(TerrainError::InsufficientSupport { found: 0 });
    }
    // cell range that can contain the disk
    let c_lo = ((p[0] - radius - origin[0]) / res).floor().max(0.0) as usize;
    let r_lo = ((p[1] - radius - origin[1]) / res).floor().max(0.0) as usize;
    let c_hi = (((p[0] + radius - origin[0]) / res).ceil() as usize).min(map.cols().saturating_sub(1));
    let r_hi = (((p[1] + radius - origin[1]) / res).ceil() as usize).min(map.rows().saturating_sub(1));

    // accumulate normal equations for rows [dx dy 1] . theta = h_j
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    let mut count = 0usize;
    for r in r_lo..=r_hi {
        let cy = origin[1] + r as f64 * res;
        let dy = cy - p[1];
        for c in c_lo..=c_hi {
            let h = data[r * map.cols() + c];
            if h.is_nan() {
                continue;
            }
            let cx = origin[0] + c as f64 * res;
            let dx = cx - p[0];
            if dx * dx + dy * dy >= radius * radius {
                continue;
            }
            let row = Vector3::new(dx, dy, 1.0);
            ata += row * row.transpose();
            atb += row * h;
            count += 1;
        }
    }
    if count < 3 {
        return Err(TerrainError::InsufficientSupport { found: count });
    }
    let theta = ata
        .lu()
        .solve(&atb)
        .filter(|t| t.iter().all(|v| v.is_finite()))
        .ok_or(TerrainError::RankDeficient { x: p[0], y: p[1] })?;
    // collinear support leaves the system near-singular; LU may still
    // "solve" it, so check the conditioning explicitly
    if ata.determinant().abs() < 1e-12 * (count as f64).powi(3) * res.powi(4).max(1e-30) {
        return Err(TerrainError::RankDeficient { x: p[0], y: p[1] });
    }
    Ok(PlaneFit {
        normal_xy: [theta[0], theta[1]],
        height: theta[2],
        support_count: count,
    })
}

/// Adds the smoothed-height and normal layers at both filter radii.
pub fn derive_layers(map: &mut GridMap, r_small: f64, r_large: f64) -> Result<()> {
    if !map.has_layer(LAYER_ELEVATION) {
        return Err(TerrainError::MissingLayer(LAYER_ELEVATION.into()));
    }
    if r_small <= 0.0 || r_large <= 0.0 {
        return Err(TerrainError::InsufficientSupport { found: 0 });
    }
    for (radius, h_name, nx_name, ny_name) in [
        (r_small, LAYER_SMOOTH_S, LAYER_NORMAL_X_S, LAYER_NORMAL_Y_S),
        (r_large, LAYER_SMOOTH_L, LAYER_NORMAL_X_L, LAYER_NORMAL_Y_L),
    ] {
        let n = map.rows() * map.cols();
        let mut h = vec![MISSING; n];
        let mut nx = vec![MISSING; n];
        let mut ny = vec![MISSING; n];
        for r in 0..map.rows() {
            for c in 0..map.cols() {
                let p = map.cell_center(CellIndex::new(r, c));
                if let Ok(fit) = fit_plane(map, LAYER_ELEVATION, p, radius) {
                    h[r * map.cols() + c] = fit.height;
                    nx[r * map.cols() + c] = fit.normal_xy[0];
                    ny[r * map.cols() + c] = fit.normal_xy[1];
                }
            }
        }
        map.add_layer(h_name, h)?;
        map.add_layer(nx_name, nx)?;
        map.add_layer(ny_name, ny)?;
    }
    Ok(())
}

/// Adds the binary `traversability` layer. Requires [`derive_layers`].
pub fn classify_traversability(map: &mut GridMap, params: &TraversabilityParams) -> Result<()> {
    for l in [LAYER_ELEVATION, LAYER_SMOOTH_S, LAYER_NORMAL_X_S, LAYER_NORMAL_Y_S] {
        if !map.has_layer(l) {
            return Err(TerrainError::MissingLayer(l.into()));
        }
    }
    let n = map.rows() * map.cols();
    let elev = map.layer(LAYER_ELEVATION)?;
    let smooth = map.layer(LAYER_SMOOTH_S)?;
    let nx = map.layer(LAYER_NORMAL_X_S)?;
    let ny = map.layer(LAYER_NORMAL_Y_S)?;
    let mut trav = vec![0.0; n];
    for i in 0..n {
        if elev[i].is_nan() || smooth[i].is_nan() || nx[i].is_nan() || ny[i].is_nan() {
            continue;
        }
        let tilt = nx[i].hypot(ny[i]).atan();
        if tilt > params.max_slope {
            continue;
        }
        if (elev[i] - smooth[i]).abs() > params.height_diff_threshold {
            continue;
        }
        trav[i] = 1.0;
    }
    map.add_layer(LAYER_TRAVERSABILITY, trav)?;
    Ok(())
}

/// Fills missing elevation cells with the nearest non-missing value.
/// Pre-pass for maps from sparse data; planning layers are derived after.
pub fn fill_missing_nearest(map: &mut GridMap, layer: &str) -> Result<()> {
    let (rows, cols) = (map.rows(), map.cols());
    let data = map.layer(layer)?.to_vec();
    let mut filled = data.clone();
    for r in 0..rows {
        for c in 0..cols {
            if !data[r * cols + c].is_nan() {
                continue;
            }
            let mut best = MISSING;
            let mut best_d2 = f64::INFINITY;
            for (rr, row) in data.chunks(cols).enumerate() {
                for (cc, &v) in row.iter().enumerate() {
                    if v.is_nan() {
                        continue;
                    }
                    let d2 = ((rr as f64 - r as f64).powi(2)) + ((cc as f64 - c as f64).powi(2));
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = v;
                    }
                }
            }
            filled[r * cols + c] = best;
        }
    }
    map.add_layer(layer, filled)?;
    Ok(())
}
