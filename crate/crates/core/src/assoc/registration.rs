//! Least-squares yaw + translation between corresponding point sets.

use thiserror::Error;

use crate::geom3d::{centroid, Point3, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("need at least 3 correspondences, got {0}")]
    InsufficientPoints(usize),
    #[error("source and target lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("source points are collinear or coincident in the ground plane")]
    Degenerate,
}

/// Ratio of the smaller to the larger ground-plane scatter eigenvalue below
/// which the source is treated as collinear.
const COLLINEAR_RATIO: f64 = 1e-10;

/// Best yaw-about-Z rotation and translation taking `src[i]` to `dst[i]`.
///
/// After centering both sets, the 2x2 ground-plane cross-covariance has the
/// rotation-invariant form `[[a, -b], [b, a]]` up to a symmetric part, so the
/// optimal angle is `atan2(b, a)` with `a = sum(xs*xd + ys*yd)` and
/// `b = sum(xs*yd - ys*xd)`. A 2D rotation from `atan2` is always proper, so
/// no reflection correction is needed. Height is matched by the translation.
pub fn svd_rigid_fit(src: &[Point3], dst: &[Point3]) -> Result<RigidTransform, FitError> {
    if src.len() != dst.len() {
        return Err(FitError::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(FitError::InsufficientPoints(src.len()));
    }
    let cs = centroid(src).expect("nonempty");
    let cd = centroid(dst).expect("nonempty");

    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    let (mut a, mut b) = (0.0, 0.0);
    for (s, d) in src.iter().zip(dst) {
        let s = *s - cs;
        let d = *d - cd;
        sxx += s.x * s.x;
        syy += s.y * s.y;
        sxy += s.x * s.y;
        a += s.x * d.x + s.y * d.y;
        b += s.x * d.y - s.y * d.x;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = ((sxx - syy) * (sxx - syy) + 4.0 * sxy * sxy).sqrt();
    let l_max = 0.5 * (tr + disc);
    let l_min = if l_max > 0.0 { det / l_max } else { 0.0 };
    if !(l_max > f64::MIN_POSITIVE) || l_min <= COLLINEAR_RATIO * l_max {
        return Err(FitError::Degenerate);
    }
    let yaw = b.atan2(a);
    Ok(RigidTransform::new(yaw, cd - cs.rotate_z(yaw)))
}

/// Sum of squared residuals of `transform` on the correspondences.
pub fn fit_residual(src: &[Point3], dst: &[Point3], transform: &RigidTransform) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(s, d)| (transform.apply(*s) - *d).norm_sq())
        .sum()
}

/// Mean displacement as a pure translation.
pub fn translation_fit(src: &[Point3], dst: &[Point3]) -> Option<RigidTransform> {
    let n = src.len().min(dst.len());
    if n == 0 {
        return None;
    }
    let mut sum = Point3::ZERO;
    for (s, d) in src.iter().zip(dst) {
        sum += *d - *s;
    }
    Some(RigidTransform::translation(sum * (1.0 / n as f64)))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, PI};

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::geom3d::normalize_angle;

    #[test]
    fn identity_and_quarter_turn() {
        let src = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(-1.0, 0.0, 0.0)];
        let id = svd_rigid_fit(&src, &src).unwrap();
        assert_abs_diff_eq!(id.yaw, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id.t.norm(), 0.0, epsilon = 1e-12);

        let rot = RigidTransform::new(FRAC_PI_2, Point3::ZERO);
        let dst: Vec<Point3> = src.iter().map(|&p| rot.apply(p)).collect();
        let fit = svd_rigid_fit(&src, &dst).unwrap();
        assert_abs_diff_eq!(fit.yaw, FRAC_PI_2, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.t.norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn error_cases() {
        let two = [Point3::ZERO, Point3::new(1.0, 0.0, 0.0)];
        assert_eq!(svd_rigid_fit(&two, &two), Err(FitError::InsufficientPoints(2)));
        let line: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.3 * i as f64)).collect();
        assert_eq!(svd_rigid_fit(&line, &line), Err(FitError::Degenerate));
        let stack: Vec<Point3> = (0..5).map(|i| Point3::new(1.0, 1.0, i as f64)).collect();
        assert_eq!(svd_rigid_fit(&stack, &stack), Err(FitError::Degenerate));
        assert_eq!(svd_rigid_fit(&line, &line[..4]), Err(FitError::LengthMismatch(5, 4)));
    }

    #[test]
    fn half_turn_is_recovered() {
        let src = vec![Point3::new(1.0, 0.2, 0.0), Point3::new(-0.3, 1.0, 0.5), Point3::new(-1.0, -0.7, 0.0), Point3::new(0.4, -0.4, 1.0)];
        let tf = RigidTransform::new(PI, Point3::new(0.5, -2.0, 0.1));
        let dst: Vec<Point3> = src.iter().map(|&p| tf.apply(p)).collect();
        let fit = svd_rigid_fit(&src, &dst).unwrap();
        assert_abs_diff_eq!(normalize_angle(fit.yaw - PI), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!((fit.t - tf.t).norm(), 0.0, epsilon = 1e-9);
    }

    fn cloud() -> impl Strategy<Value = Vec<Point3>> {
        prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64), 4..40)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
    }

    proptest! {
        #[test]
        fn fit_beats_identity_and_translation(
            src in cloud(),
            noise in prop::collection::vec((-0.5..0.5f64, -0.5..0.5f64, -0.5..0.5f64), 40),
            yaw in -PI..PI,
            t in (-5.0..5.0f64, -5.0..5.0f64, -1.0..1.0f64),
        ) {
            let tf = RigidTransform::new(yaw, Point3::new(t.0, t.1, t.2));
            let dst: Vec<Point3> = src.iter().zip(&noise)
                .map(|(&p, &(a, b, c))| tf.apply(p) + Point3::new(a, b, c))
                .collect();
            if let Ok(fit) = svd_rigid_fit(&src, &dst) {
                let r = fit_residual(&src, &dst, &fit);
                prop_assert!(r <= fit_residual(&src, &dst, &RigidTransform::IDENTITY) + 1e-9);
                let tr = translation_fit(&src, &dst).unwrap();
                prop_assert!(r <= fit_residual(&src, &dst, &tr) + 1e-9);
            }
        }

        #[test]
        fn fit_is_equivariant(
            src in cloud(),
            yaw in -PI..PI,
            q in -PI..PI,
        ) {
            let tf = RigidTransform::new(yaw, Point3::new(1.0, -2.0, 0.5));
            let dst: Vec<Point3> = src.iter().map(|&p| tf.apply(p)).collect();
            let rot = RigidTransform::new(q, Point3::ZERO);
            let src_q: Vec<Point3> = src.iter().map(|&p| rot.apply(p)).collect();
            let dst_q: Vec<Point3> = dst.iter().map(|&p| rot.apply(p)).collect();
            if let (Ok(a), Ok(b)) = (svd_rigid_fit(&src, &dst), svd_rigid_fit(&src_q, &dst_q)) {
                // Q T Q^-1: same yaw, translation rotated by Q
                prop_assert!(normalize_angle(a.yaw - b.yaw).abs() < 1e-9);
                prop_assert!((a.t.rotate_z(q) - b.t).norm() < 1e-9);
            }
        }
    }
}
