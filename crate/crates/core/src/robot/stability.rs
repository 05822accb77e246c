//! Static stability: the ground projection of the center of mass must
//! lie inside the support polygon with a safety margin.

use super::{Result, RobotError};

/// Convex hull of 2D points, counter-clockwise, via Andrew's monotone
/// chain. Returns at least 3 vertices or fewer when degenerate.
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 1e-12
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 1e-12
        {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Signed distance from `p` to the hull boundary: positive inside.
fn signed_interior_distance(hull: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = hull.len();
    let mut min_edge = f64::INFINITY;
    let mut inside = true;
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let ex = b[0] - a[0];
        let ey = b[1] - a[1];
        let len = (ex * ex + ey * ey).sqrt();
        if len < 1e-12 {
            continue;
        }
        // left of the edge (hull is counter-clockwise) means inside
        let cross = ex * (p[1] - a[1]) - ey * (p[0] - a[0]);
        let d = cross / len;
        if d < 0.0 {
            inside = false;
        }
        min_edge = min_edge.min(d);
    }
    if inside {
        min_edge
    } else {
        // outside: use distance to nearest segment, negated
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = hull[i];
            let b = hull[(i + 1) % n];
            let ex = b[0] - a[0];
            let ey = b[1] - a[1];
            let l2 = ex * ex + ey * ey;
            let t = if l2 < 1e-24 {
                0.0
            } else {
                (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / l2).clamp(0.0, 1.0)
            };
            let dx = p[0] - (a[0] + t * ex);
            let dy = p[1] - (a[1] + t * ey);
            best = best.min((dx * dx + dy * dy).sqrt());
        }
        -best
    }
}

/// Tests whether the ground projection of `com` lies inside the convex
/// hull of the contact points, shrunk inward by `margin` meters. Needs
/// at least three contacts.
pub fn support_polygon_contains(
    contacts: &[[f64; 3]],
    com: [f64; 2],
    margin: f64,
) -> Result<bool> {
    if contacts.len() < 3 {
        return Err(RobotError::TooFewContacts(contacts.len()));
    }
    let flat: Vec<[f64; 2]> = contacts.iter().map(|c| [c[0], c[1]]).collect();
    let hull = convex_hull(&flat);
    if hull.len() < 3 {
        return Err(RobotError::TooFewContacts(hull.len()));
    }
    Ok(signed_interior_distance(&hull, com) >= margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square() -> Vec<[f64; 3]> {
        vec![
            [1.0, 1.0, 0.0],
            [-1.0, 1.0, 0.1],
            [-1.0, -1.0, 0.2],
            [1.0, -1.0, 0.0],
        ]
    }

    #[test]
    fn centroid_inside_square() {
        assert!(support_polygon_contains(&square(), [0.0, 0.0], 0.1).unwrap());
    }

    #[test]
    fn point_outside_square() {
        assert!(!support_polygon_contains(&square(), [1.5, 0.0], 0.0).unwrap());
    }

    #[test]
    fn margin_excludes_near_edge_points() {
        // 0.05 m from the x = 1 edge: inside with no margin, outside with 0.1
        assert!(support_polygon_contains(&square(), [0.95, 0.0], 0.0).unwrap());
        assert!(!support_polygon_contains(&square(), [0.95, 0.0], 0.1).unwrap());
    }

    #[test]
    fn two_contacts_rejected() {
        let c = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        assert!(matches!(
            support_polygon_contains(&c, [0.5, 0.0], 0.0),
            Err(RobotError::TooFewContacts(2))
        ));
    }

    #[test]
    fn collinear_contacts_rejected() {
        let c = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        assert!(support_polygon_contains(&c, [1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn interior_point_order_independent() {
        let mut c = square();
        c.swap(0, 2);
        c.swap(1, 3);
        assert!(support_polygon_contains(&c, [0.3, -0.2], 0.1).unwrap());
    }

    proptest! {
        /// Rotating contacts and query point about the origin must not
        /// change the verdict (the polygon test is frame-independent).
        #[test]
        fn yaw_invariance(
            theta in -3.14f64..3.14,
            px in -1.5f64..1.5,
            py in -1.5f64..1.5,
            margin in 0.0f64..0.3,
        ) {
            let rot = |p: [f64; 2]| {
                [
                    theta.cos() * p[0] - theta.sin() * p[1],
                    theta.sin() * p[0] + theta.cos() * p[1],
                ]
            };
            let base = square();
            let d0 = {
                let flat: Vec<[f64; 2]> = base.iter().map(|c| [c[0], c[1]]).collect();
                signed_interior_distance(&convex_hull(&flat), [px, py])
            };
            // skip cases right at the margin boundary where floating point
            // rotation can flip the comparison
            prop_assume!((d0 - margin).abs() > 1e-6);
            let a = support_polygon_contains(&base, [px, py], margin).unwrap();
            let rotated: Vec<[f64; 3]> = base
                .iter()
                .map(|c| {
                    let r = rot([c[0], c[1]]);
                    [r[0], r[1], c[2]]
                })
                .collect();
            let b = support_polygon_contains(&rotated, rot([px, py]), margin).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
