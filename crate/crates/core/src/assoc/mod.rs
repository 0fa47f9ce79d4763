//! Box association: predict each track into the current frame from the flow
//! of its interior points, score against detections by IoU, and solve the
//! assignment.

mod hungarian;
mod registration;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flowlabel::SceneFlow;
use crate::geom3d::{apply_transform, iou_3d, iou_bev, Box3D, Point3, RigidTransform};

pub use hungarian::{hungarian, Assignment, CostMatrix};
pub use registration::{fit_residual, svd_rigid_fit, translation_fit, FitError};

pub const DEFAULT_IOU_GATE: f64 = 0.1;

/// Which overlap measure drives matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    #[default]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouKind {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            IouKind::Bev => iou_bev(a, b),
            IouKind::ThreeD => iou_3d(a, b),
        }
    }
}

/// Which path produced a predicted box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PredictionTier {
    /// Rigid fit over at least three flowed interior points.
    Rigid,
    /// Too few (or collinear) points: shifted by their mean flow.
    TranslationOnly,
    /// No usable points: the box is carried over unchanged.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub bbox: Box3D,
    pub transform: RigidTransform,
    pub tier: PredictionTier,
    /// Interior points with valid flow.
    pub support: usize,
}

/// Moves `track_box` by the rigid motion its interior points undergo.
pub fn predict_track_box(track_box: &Box3D, cloud_prev: &[Point3], flow: &SceneFlow) -> Result<Prediction> {
    flow.check_aligned(cloud_prev.len(), "scene flow")?;
    let reach = track_box.bev_radius();
    let c = track_box.center();
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (i, &p) in cloud_prev.iter().enumerate() {
        if !flow.valid[i] {
            continue;
        }
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        if dx * dx + dy * dy <= reach * reach + 1e-12 && track_box.contains(p) {
            src.push(p);
            dst.push(p + flow.vectors[i]);
        }
    }
    let support = src.len();
    let (transform, tier) = match svd_rigid_fit(&src, &dst) {
        Ok(t) => (t, PredictionTier::Rigid),
        Err(_) => match translation_fit(&src, &dst) {
            Some(t) => (t, PredictionTier::TranslationOnly),
            None => (RigidTransform::IDENTITY, PredictionTier::Constant),
        },
    };
    Ok(Prediction {
        bbox: apply_transform(track_box, &transform),
        transform,
        tier,
        support,
    })
}

/// Entry `(i, j)` is `1 - IoU(predicted_i, detection_j)`.
pub fn build_cost_matrix(predicted: &[Box3D], detections: &[Box3D], kind: IouKind) -> CostMatrix {
    CostMatrix::from_fn(predicted.len(), detections.len(), |i, j| 1.0 - kind.iou(&predicted[i], &detections[j]))
        .expect("IoU costs are finite")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(track_index, detection_index, iou)`.
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracks: Vec<usize>,
}

/// Optimal assignment on `1 - IoU`; assigned pairs below `iou_gate` are split.
pub fn associate(predicted: &[Box3D], detections: &[Box3D], iou_gate: f64, kind: IouKind) -> MatchResult {
    let cost = build_cost_matrix(predicted, detections, kind);
    let assignment = hungarian(&cost);
    let mut result = MatchResult::default();
    let mut det_used = vec![false; detections.len()];
    for (t, slot) in assignment.row_to_col.iter().enumerate() {
        match *slot {
            Some(d) if 1.0 - cost.get(t, d) >= iou_gate => {
                result.matches.push((t, d, 1.0 - cost.get(t, d)));
                det_used[d] = true;
            }
            _ => result.unmatched_tracks.push(t),
        }
    }
    result.unmatched_detections = (0..detections.len()).filter(|&d| !det_used[d]).collect();
    result
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::flowlabel::scene_flow_labels;
    use crate::geom3d::normalize_angle;
    use crate::kitti::{LabeledFrame, LabeledObject};

    fn car(x: f64, y: f64, theta: f64) -> Box3D {
        Box3D::new(Point3::new(x, y, 0.0), 4.0, 2.0, 1.5, theta)
    }

    fn interior(b: &Box3D, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|i| {
                let u = (i as f64 * 0.618_033_988_7).fract() - 0.5;
                let v = (i as f64 * 0.414_213_562_3).fract() - 0.5;
                let w = (i as f64 * 0.732_050_807_5).fract() - 0.5;
                b.to_world(Point3::new(u * b.l * 0.9, v * b.w * 0.9, w * b.h * 0.9))
            })
            .collect()
    }

    #[test]
    fn zero_flow_keeps_box() {
        let b = car(3.0, 1.0, 0.4);
        let cloud = interior(&b, 30);
        let flow = SceneFlow { vectors: vec![Point3::ZERO; 30], valid: vec![true; 30] };
        let p = predict_track_box(&b, &cloud, &flow).unwrap();
        assert_eq!(p.tier, PredictionTier::Rigid);
        assert_abs_diff_eq!((p.bbox.center() - b.center()).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.bbox.theta, b.theta, epsilon = 1e-12);
    }

    #[test]
    fn uniform_flow_shifts_box() {
        let b = car(3.0, 1.0, 0.4);
        let cloud = interior(&b, 30);
        let flow = SceneFlow { vectors: vec![Point3::new(1.0, 0.0, 0.0); 30], valid: vec![true; 30] };
        let p = predict_track_box(&b, &cloud, &flow).unwrap();
        assert_abs_diff_eq!((p.bbox.center() - Point3::new(4.0, 1.0, 0.0)).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(p.bbox.theta, 0.4, epsilon = 1e-9);
    }

    #[test]
    fn rotation_from_labels_is_recovered() {
        let prev = car(5.0, -2.0, 0.3);
        let next = car(5.0, -2.0, 0.3 + 20f64.to_radians());
        let cloud = interior(&prev, 50);
        let frame = |b: Box3D| LabeledFrame { frame_index: 0, objects: vec![LabeledObject::new(1, b)] };
        let flow = scene_flow_labels(&frame(prev), &frame(next), &cloud);
        let p = predict_track_box(&prev, &cloud, &flow).unwrap();
        assert!(normalize_angle(p.bbox.theta - next.theta).abs() < 1e-6);
        assert!((p.bbox.center() - next.center()).norm() < 1e-6);
    }

    #[test]
    fn fallback_tiers() {
        let b = car(0.0, 0.0, 0.0);
        let cloud = vec![Point3::new(0.5, 0.0, 0.0), Point3::new(-0.5, 0.3, 0.0), Point3::new(50.0, 0.0, 0.0)];
        let flow = SceneFlow {
            vectors: vec![Point3::new(1.0, 0.0, 0.0), Point3::new(3.0, 0.0, 0.0), Point3::ZERO],
            valid: vec![true, true, true],
        };
        let p = predict_track_box(&b, &cloud, &flow).unwrap();
        assert_eq!((p.tier, p.support), (PredictionTier::TranslationOnly, 2));
        assert_abs_diff_eq!(p.bbox.px, 2.0, epsilon = 1e-12);

        let none = SceneFlow { vectors: vec![Point3::ZERO; 3], valid: vec![false; 3] };
        let p = predict_track_box(&b, &cloud, &none).unwrap();
        assert_eq!(p.tier, PredictionTier::Constant);
        assert_eq!(p.bbox, b);

        assert!(predict_track_box(&b, &cloud, &SceneFlow::invalid(2)).is_err());
    }

    #[test]
    fn cost_matrix_examples() {
        let boxes = vec![car(0.0, 0.0, 0.0), car(10.0, 0.0, 0.0)];
        let c = build_cost_matrix(&boxes, &boxes, IouKind::Bev);
        assert_abs_diff_eq!(c.get(0, 0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.get(1, 1), 0.0, epsilon = 1e-12);
        assert_eq!(c.get(0, 1), 1.0);

        let far: Vec<Box3D> = (0..3).map(|i| car(100.0 * i as f64 + 50.0, 0.0, 0.0)).collect();
        let c = build_cost_matrix(&boxes, &far, IouKind::Bev);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(c.get(i, j), 1.0);
            }
        }

        let unit = |x: f64| Box3D::new(Point3::new(x, 0.0, 0.0), 1.0, 1.0, 1.0, 0.0);
        let c = build_cost_matrix(&[unit(0.0)], &[unit(0.5)], IouKind::Bev);
        assert_abs_diff_eq!(c.get(0, 0), 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn associate_examples() {
        let tracks = vec![car(0.0, 0.0, 0.0), car(20.0, 0.0, 0.0)];
        let r = associate(&tracks, &[], 0.1, IouKind::Bev);
        assert_eq!(r.unmatched_tracks, vec![0, 1]);
        assert!(r.matches.is_empty());

        let r = associate(&tracks, &[tracks[1], tracks[0]], 0.1, IouKind::Bev);
        assert_eq!(r.matches.iter().map(|m| (m.0, m.1)).collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        assert!(r.unmatched_detections.is_empty() && r.unmatched_tracks.is_empty());

        // IoU 0.9 for the first pair, 0 for the second
        let shift = 4.0 * (1.0 - 0.9) / (1.0 + 0.9);
        let dets = vec![car(shift, 0.0, 0.0), car(40.0, 0.0, 0.0)];
        assert_abs_diff_eq!(iou_bev(&tracks[0], &dets[0]), 0.9, epsilon = 1e-12);
        let r = associate(&tracks, &dets, 0.1, IouKind::Bev);
        assert_eq!(r.matches.len(), 1);
        assert_eq!((r.matches[0].0, r.matches[0].1), (0, 0));
        assert_eq!(r.unmatched_tracks, vec![1]);
        assert_eq!(r.unmatched_detections, vec![1]);
    }

    proptest! {
        #[test]
        fn associate_partitions_indices(
            ts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -PI..PI), 0..7),
            ds in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -PI..PI), 0..7),
            gate in 0.0..1.0f64,
        ) {
            let tracks: Vec<Box3D> = ts.iter().map(|&(x, y, t)| car(x, y, t)).collect();
            let dets: Vec<Box3D> = ds.iter().map(|&(x, y, t)| car(x, y, t)).collect();
            let r = associate(&tracks, &dets, gate, IouKind::Bev);
            let mut tr: Vec<usize> = r.matches.iter().map(|m| m.0).chain(r.unmatched_tracks.iter().copied()).collect();
            let mut dr: Vec<usize> = r.matches.iter().map(|m| m.1).chain(r.unmatched_detections.iter().copied()).collect();
            tr.sort();
            dr.sort();
            prop_assert_eq!(tr, (0..tracks.len()).collect::<Vec<_>>());
            prop_assert_eq!(dr, (0..dets.len()).collect::<Vec<_>>());
            prop_assert!(r.matches.iter().all(|m| m.2 >= gate));
        }
    }
}
