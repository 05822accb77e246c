//! Signed Euclidean distance field over the traversability layer,
//! computed with the exact distance transform of sampled functions
//! (lower envelope of parabolas), one pass per axis.

use super::{Result, TerrainError, LAYER_SDF, LAYER_TRAVERSABILITY};
use crate::gridmap::GridMap;

/// Adds the `sdf` layer in meters: positive inside the traversable set,
/// negative inside the untraversable set, magnitude = distance to the
/// nearest cell of the opposite class.
///
/// A map that is entirely one class gets `+inf` (all traversable) or
/// `-inf` (all untraversable) in every cell.
pub fn compute_sdf(map: &mut GridMap) -> Result<()> {
    if !map.has_layer(LAYER_TRAVERSABILITY) {
        return Err(TerrainError::MissingLayer(LAYER_TRAVERSABILITY.into()));
    }
    let rows = map.rows();
    let cols = map.cols();
    let trav = map.layer(LAYER_TRAVERSABILITY)?.to_vec();
    let res = map.resolution();

    // squared cell distance to the nearest untraversable / traversable cell
    let to_untrav = edt_squared(&trav, rows, cols, |v| v == 0.0);
    let to_trav = edt_squared(&trav, rows, cols, |v| v != 0.0);

    let mut sdf = vec![0.0f64; rows * cols];
    for i in 0..rows * cols {
        sdf[i] = if trav[i] != 0.0 {
            to_untrav[i].sqrt() * res
        } else {
            -(to_trav[i].sqrt() * res)
        };
    }
    map.add_layer(LAYER_SDF, sdf)?;
    Ok(())
}

/// Exact squared Euclidean distance (in cells) to the nearest cell where
/// `is_site` holds. Cells with no site anywhere get `+inf`.
fn edt_squared(data: &[f64], rows: usize, cols: usize, is_site: impl Fn(f64) -> bool) -> Vec<f64> {
    let mut d = vec![0.0f64; rows * cols];
    // column pass: 1D transform of the 0/inf indicator along each column
    let mut col_buf = vec![0.0f64; rows];
    let mut out_buf = vec![0.0f64; rows];
    let mut tmp = vec![0.0f64; rows * cols];
    for c in 0..cols {
        for r in 0..rows {
            col_buf[r] = if is_site(data[r * cols + c]) { 0.0 } else { f64::INFINITY };
        }
        dt_1d(&col_buf, &mut out_buf);
        for r in 0..rows {
            tmp[r * cols + c] = out_buf[r];
        }
    }
    // row pass over the column result
    let mut row_out = vec![0.0f64; cols];
    for r in 0..rows {
        dt_1d(&tmp[r * cols..(r + 1) * cols], &mut row_out);
        d[r * cols..(r + 1) * cols].copy_from_slice(&row_out);
    }
    d
}

/// One-dimensional distance transform of a sampled function `f`:
/// `out[q] = min_p (q - p)^2 + f[p]`.
fn dt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n]; // parabola apex indices
    let mut z = vec![0.0f64; n + 1]; // boundaries between parabolas
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = if f[p].is_infinite() {
                // any finite parabola beats an infinite one everywhere left
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        out[q] = if f[p].is_infinite() {
            f64::INFINITY
        } else {
            ((q as f64 - p as f64).powi(2)) + f[p]
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::{CellIndex, GridMap};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn mask_map(rows: usize, cols: usize, res: f64, mask: &[f64]) -> GridMap {
        let mut m = GridMap::new(res, [0.0, 0.0], rows, cols).unwrap();
        m.add_constant_layer("elevation", 0.0).unwrap();
        m.add_layer(LAYER_TRAVERSABILITY, mask.to_vec()).unwrap();
        m
    }

    fn brute_force_sdf(mask: &[f64], rows: usize, cols: usize, res: f64) -> Vec<f64> {
        let mut out = vec![0.0f64; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let here = mask[r * cols + c];
                let mut best = f64::INFINITY;
                for rr in 0..rows {
                    for cc in 0..cols {
                        if (mask[rr * cols + cc] != 0.0) != (here != 0.0) {
                            let d2 = ((rr as f64 - r as f64).powi(2))
                                + ((cc as f64 - c as f64).powi(2));
                            best = best.min(d2);
                        }
                    }
                }
                let d = best.sqrt() * res;
                out[r * cols + c] = if here != 0.0 { d } else { -d };
            }
        }
        out
    }

    #[test]
    fn single_obstacle_axis_distance() {
        let mut mask = vec![1.0f64; 21 * 21];
        mask[10 * 21 + 10] = 0.0;
        let mut map = mask_map(21, 21, 0.1, &mask);
        compute_sdf(&mut map).unwrap();
        let v = map.at_index(LAYER_SDF, CellIndex::new(10, 15)).unwrap();
        assert!((v - 0.5).abs() <= 0.05 + 1e-12, "got {v}");
        // sign convention: inside the untraversable cell the value is <= 0
        let inside = map.at_index(LAYER_SDF, CellIndex::new(10, 10)).unwrap();
        assert!(inside <= 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let mask: Vec<f64> = (0..50 * 50)
                .map(|_| if rng.gen_bool(0.85) { 1.0 } else { 0.0 })
                .collect();
            let mut map = mask_map(50, 50, 0.1, &mask);
            compute_sdf(&mut map).unwrap();
            let expect = brute_force_sdf(&mask, 50, 50, 0.1);
            let got = map.layer(LAYER_SDF).unwrap();
            for i in 0..mask.len() {
                assert!((got[i] - expect[i]).abs() < 1e-9, "cell {i}: {} vs {}", got[i], expect[i]);
            }
        }
    }

    #[test]
    fn all_traversable_gives_infinity() {
        let mask = vec![1.0f64; 10 * 10];
        let mut map = mask_map(10, 10, 0.1, &mask);
        compute_sdf(&mut map).unwrap();
        assert!(map.layer(LAYER_SDF).unwrap().iter().all(|v| v.is_infinite() && *v > 0.0));
    }

    #[test]
    fn missing_layer_is_error() {
        let mut map = GridMap::new(0.1, [0.0, 0.0], 10, 10).unwrap();
        assert!(matches!(compute_sdf(&mut map), Err(TerrainError::MissingLayer(_))));
    }
}
