//! Position-only inverse kinematics for a single limb chain, damped
//! least squares with a numeric Jacobian and joint-limit clamping.

use nalgebra::{DMatrix, DVector, Point3};

use super::{limb_frames, LimbModel, Result, RobotError};

const MAX_ITERS: usize = 200;
const TOL: f64 = 1e-4;
const DAMPING: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;

fn tip(limb: &LimbModel, q: &[f64]) -> Point3<f64> {
    Point3::from(limb_frames(limb, q).last().unwrap().translation.vector)
}

/// Solves for joint values reaching `target` (base coordinates) from the
/// `seed` configuration. Iterates inside the joint limits; errors with
/// `IkNonConvergence` when the residual stays above tolerance, e.g. for
/// unreachable targets.
pub fn ik_limb(limb: &LimbModel, target: Point3<f64>, seed: &[f64]) -> Result<Vec<f64>> {
    limb.check_limits(seed)?;
    let n = limb.dof();
    let mut q: Vec<f64> = seed.to_vec();
    let mut residual = (target - tip(limb, &q)).norm();
    for iter in 0..MAX_ITERS {
        if residual <= TOL {
            return Ok(q);
        }
        let err = target - tip(limb, &q);
        // central-difference Jacobian of the tip position
        let mut jac = DMatrix::zeros(3, n);
        for j in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[j] += FD_STEP;
            qm[j] -= FD_STEP;
            let d = (tip(limb, &qp) - tip(limb, &qm)) / (2.0 * FD_STEP);
            jac.set_column(j, &d);
        }
        // dq = J^T (J J^T + lambda I)^-1 err
        let jjt = &jac * jac.transpose() + DMatrix::identity(3, 3) * DAMPING;
        let rhs = DVector::from_column_slice(&[err.x, err.y, err.z]);
        let sol = jjt
            .lu()
            .solve(&rhs)
            .ok_or(RobotError::IkNonConvergence {
                iterations: iter,
                residual,
            })?;
        let dq = jac.transpose() * sol;
        for j in 0..n {
            q[j] = (q[j] + dq[j]).clamp(limb.joints[j].min, limb.joints[j].max);
        }
        residual = (target - tip(limb, &q)).norm();
    }
    if residual <= TOL {
        Ok(q)
    } else {
        Err(RobotError::IkNonConvergence {
            iterations: MAX_ITERS,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::fk_limb_base;
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fk_roundtrip_on_reachable_targets() {
        let model = super::super::default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for limb in &model.limbs {
            let mut solved = 0;
            for _ in 0..40 {
                // pick a target by forward kinematics so it is reachable
                let q_true: Vec<f64> = limb
                    .joints
                    .iter()
                    .map(|j| {
                        let span = j.max - j.min;
                        rng.gen_range(j.min + 0.1 * span..j.max - 0.1 * span)
                    })
                    .collect();
                let target = fk_limb_base(limb, &q_true).unwrap();
                let q = match ik_limb(limb, target, &limb.default_config) {
                    Ok(q) => q,
                    Err(_) => continue, // local minimum from this seed
                };
                let reached = fk_limb_base(limb, &q).unwrap();
                assert!((reached - target).norm() <= 2e-4, "residual too large");
                limb.check_limits(&q).unwrap();
                solved += 1;
            }
            assert!(solved >= 25, "{}: only {solved}/40 solved", limb.name);
        }
    }

    #[test]
    fn unreachable_target_errors() {
        let model = super::super::default_model();
        let (_, leg) = model.limb("leg_lf").unwrap();
        let far = Point3::new(20.0, 0.0, 0.0);
        assert!(matches!(
            ik_limb(leg, far, &leg.default_config),
            Err(RobotError::IkNonConvergence { .. })
        ));
    }

    #[test]
    fn seed_limits_are_enforced() {
        let model = super::super::default_model();
        let (_, leg) = model.limb("leg_lf").unwrap();
        let bad_seed = vec![9.0, 0.0, 0.0];
        assert!(ik_limb(leg, Point3::new(2.0, 1.2, -0.8), &bad_seed).is_err());
    }

    #[test]
    fn solution_stays_within_limits() {
        let model = super::super::default_model();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let (_, leg) = model.limb("leg_rh").unwrap();
        for _ in 0..30 {
            let q_true: Vec<f64> = leg
                .joints
                .iter()
                .map(|j| rng.gen_range(j.min..j.max))
                .collect();
            let target = fk_limb_base(leg, &q_true).unwrap();
            if let Ok(q) = ik_limb(leg, target, &leg.default_config) {
                leg.check_limits(&q).unwrap();
            }
        }
    }
}
