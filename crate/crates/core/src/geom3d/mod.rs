//! Geometric primitives: points, yaw-only rigid transforms, oriented boxes.
//!
//! Boxes rotate about the vertical axis only. Every angle produced here is
//! normalized to `(-pi, pi]`.

mod iou;

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use iou::{bev_intersection_area, clip_convex, iou_3d, iou_bev, polygon_area};

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn bev_norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotation about the Z axis through the origin.
    pub fn rotate_z(self, yaw: f64) -> Point3 {
        let (s, c) = yaw.sin_cos();
        Point3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    fn add_assign(&mut self, o: Point3) {
        *self = *self + o;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Arithmetic mean; `None` for an empty iterator.
pub fn centroid<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<Point3> {
    let mut sum = Point3::ZERO;
    let mut n = 0usize;
    for p in points {
        sum += *p;
        n += 1;
    }
    (n > 0).then(|| sum * (1.0 / n as f64))
}

/// Rotation about Z by `yaw` followed by translation `t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub yaw: f64,
    pub t: Point3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        yaw: 0.0,
        t: Point3::ZERO,
    };

    pub fn new(yaw: f64, t: Point3) -> Self {
        RigidTransform {
            yaw: normalize_angle(yaw),
            t,
        }
    }

    pub fn translation(t: Point3) -> Self {
        RigidTransform { yaw: 0.0, t }
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        p.rotate_z(self.yaw) + self.t
    }

    /// `self.then(other)` applies `self` first, then `other`.
    pub fn then(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(self.yaw + other.yaw, other.apply(self.t))
    }

    pub fn inverse(&self) -> RigidTransform {
        RigidTransform::new(-self.yaw, -self.t.rotate_z(-self.yaw))
    }

    /// Rotation by `yaw` about `pivot` instead of the origin, then translation by `t`.
    pub fn about_pivot(yaw: f64, pivot: Point3, t: Point3) -> RigidTransform {
        RigidTransform::new(yaw, pivot - pivot.rotate_z(yaw) + t)
    }
}

pub fn transform_point(p: Point3, transform: &RigidTransform) -> Point3 {
    transform.apply(p)
}

/// Object category. KITTI classes plus a catch-all for unrecognized labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum ClassId {
    #[default]
    Car,
    Van,
    Truck,
    Pedestrian,
    PersonSitting,
    Cyclist,
    Tram,
    Misc,
    Ignored,
}

impl ClassId {
    pub const ALL: [ClassId; 9] = [
        ClassId::Car,
        ClassId::Van,
        ClassId::Truck,
        ClassId::Pedestrian,
        ClassId::PersonSitting,
        ClassId::Cyclist,
        ClassId::Tram,
        ClassId::Misc,
        ClassId::Ignored,
    ];

    /// Parses a KITTI `type` column. Unknown names map to [`ClassId::Ignored`].
    pub fn from_kitti(name: &str) -> ClassId {
        match name {
            "Car" => ClassId::Car,
            "Van" => ClassId::Van,
            "Truck" => ClassId::Truck,
            "Pedestrian" => ClassId::Pedestrian,
            "Person_sitting" => ClassId::PersonSitting,
            "Cyclist" => ClassId::Cyclist,
            "Tram" => ClassId::Tram,
            "Misc" => ClassId::Misc,
            _ => ClassId::Ignored,
        }
    }

    pub fn kitti_name(self) -> &'static str {
        match self {
            ClassId::Car => "Car",
            ClassId::Van => "Van",
            ClassId::Truck => "Truck",
            ClassId::Pedestrian => "Pedestrian",
            ClassId::PersonSitting => "Person_sitting",
            ClassId::Cyclist => "Cyclist",
            ClassId::Tram => "Tram",
            ClassId::Misc => "Misc",
            ClassId::Ignored => "Ignored",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ClassId::ALL
            .into_iter()
            .find(|c| c.kitti_name().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class {s:?}")))
    }
}

/// Oriented 3D box in the lidar frame.
///
/// `l` is the extent along the heading, `w` the lateral extent, `h` the
/// vertical extent. `(px, py, pz)` is the geometric center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
    pub class_id: ClassId,
    pub score: f64,
}

impl Box3D {
    /// A car-class box with score 1.
    pub fn new(center: Point3, l: f64, w: f64, h: f64, theta: f64) -> Self {
        Box3D {
            px: center.x,
            py: center.y,
            pz: center.z,
            w,
            l,
            h,
            theta: normalize_angle(theta),
            class_id: ClassId::Car,
            score: 1.0,
        }
    }

    pub fn with_class(mut self, class_id: ClassId) -> Self {
        self.class_id = class_id;
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn with_center(mut self, c: Point3) -> Self {
        self.set_center(c);
        self
    }

    pub fn center(&self) -> Point3 {
        Point3::new(self.px, self.py, self.pz)
    }

    pub fn set_center(&mut self, c: Point3) {
        self.px = c.x;
        self.py = c.y;
        self.pz = c.z;
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.px, self.py, self.pz, self.w, self.l, self.h, self.theta, self.score]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("box has non-finite fields".into()));
        }
        if !(self.w > 0.0 && self.l > 0.0 && self.h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box dimensions must be positive (l={}, w={}, h={})",
                self.l, self.w, self.h
            )));
        }
        if !(self.theta > -std::f64::consts::PI && self.theta <= std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!(
                "box yaw {} outside (-pi, pi]",
                self.theta
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidArgument(format!(
                "box score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    /// Expresses a world point in the box frame (origin at center, x along heading).
    pub fn to_local(&self, p: Point3) -> Point3 {
        (p - self.center()).rotate_z(-self.theta)
    }

    pub fn to_world(&self, local: Point3) -> Point3 {
        local.rotate_z(self.theta) + self.center()
    }

    /// Pose of the box as the transform taking box-frame coordinates to world.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.theta, self.center())
    }

    pub fn contains(&self, p: Point3) -> bool {
        self.contains_with_margin(p, 0.0)
    }

    /// Containment test with the half-extents grown by `margin`.
    pub fn contains_with_margin(&self, p: Point3, margin: f64) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.l / 2.0 + margin
            && q.y.abs() <= self.w / 2.0 + margin
            && q.z.abs() <= self.h / 2.0 + margin
    }

    /// Birds-eye-view footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        let (s, c) = self.theta.sin_cos();
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(x, y)| {
            [c * x - s * y + self.px, s * x + c * y + self.py]
        })
    }

    /// Radius of the circle around the center that encloses the footprint.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.l.hypot(self.w)
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.pz - self.h / 2.0, self.pz + self.h / 2.0)
    }
}

pub fn apply_transform(b: &Box3D, transform: &RigidTransform) -> Box3D {
    let mut out = *b;
    out.set_center(transform.apply(b.center()));
    out.theta = normalize_angle(b.theta + transform.yaw);
    out
}

/// Per-point inside/outside flags over a cloud.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InBoxMask(Vec<bool>);

impl InBoxMask {
    pub fn new(flags: Vec<bool>) -> Self {
        InBoxMask(flags)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&f| f).count()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Indices of the flagged points.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter_map(|(i, &f)| f.then_some(i))
    }
}

pub fn points_in_box(cloud: &[Point3], b: &Box3D) -> InBoxMask {
    let reach = b.bev_radius();
    let c = b.center();
    InBoxMask(
        cloud
            .iter()
            .map(|&p| {
                let dx = p.x - c.x;
                let dy = p.y - c.y;
                dx * dx + dy * dy <= reach * reach + 1e-12 && b.contains(p)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    use super::*;

    fn unit_box() -> Box3D {
        Box3D::new(Point3::ZERO, 1.0, 1.0, 1.0, 0.0)
    }

    #[test]
    fn normalize_boundaries() {
        assert_eq!(normalize_angle(PI), PI);
        assert_abs_diff_eq!(normalize_angle(-PI), PI);
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-FRAC_PI_2), -FRAC_PI_2);
        assert_abs_diff_eq!(normalize_angle(2.5 * PI), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn in_box_examples() {
        let cloud = [Point3::ZERO, Point3::new(10.0, 0.0, 0.0)];
        let mask = points_in_box(&cloud, &Box3D::new(Point3::ZERO, 3.0, 0.2, 7.0, 1.1));
        assert!(mask.get(0));
        let mask = points_in_box(&cloud, &unit_box());
        assert_eq!(mask.as_slice(), &[true, false]);

        // half-extent along world x is w/2 once rotated by 90 degrees
        let rotated = Box3D::new(Point3::ZERO, 2.0, 1.0, 1.0, FRAC_PI_2);
        let mask = points_in_box(&[Point3::new(0.9, 0.0, 0.0)], &rotated);
        assert!(!mask.get(0));
        let mask = points_in_box(&[Point3::new(0.0, 0.9, 0.0)], &rotated);
        assert!(mask.get(0));
    }

    #[test]
    fn empty_cloud_gives_empty_mask() {
        assert!(points_in_box(&[], &unit_box()).is_empty());
    }

    #[test]
    fn transform_examples() {
        let b = Box3D::new(Point3::new(1.0, 0.0, 0.0), 4.0, 2.0, 1.5, 0.3);
        assert_eq!(apply_transform(&b, &RigidTransform::IDENTITY), b);

        let quarter = RigidTransform::new(FRAC_PI_2, Point3::ZERO);
        let r = apply_transform(&b, &quarter);
        assert_abs_diff_eq!(r.px, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.py, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.theta, 0.3 + FRAC_PI_2, epsilon = 1e-12);
        assert_eq!((r.l, r.w, r.h), (b.l, b.w, b.h));

        let shift = RigidTransform::translation(Point3::new(1.0, 2.0, 3.0));
        let s = apply_transform(&Box3D::new(Point3::ZERO, 1.0, 1.0, 1.0, 0.0), &shift);
        assert_eq!(s.center(), Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn point_transform_examples() {
        let quarter = RigidTransform::new(FRAC_PI_2, Point3::ZERO);
        let p = transform_point(Point3::new(1.0, 0.0, 0.0), &quarter);
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 1.0, epsilon = 1e-12);
        let q = Point3::new(-3.0, 4.5, 2.0);
        assert_eq!(transform_point(q, &RigidTransform::IDENTITY), q);
        let axis = transform_point(Point3::new(0.0, 0.0, 1.0), &RigidTransform::new(2.1, Point3::ZERO));
        assert_eq!(axis, Point3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn validate_rejects_bad_boxes() {
        assert!(unit_box().validate().is_ok());
        let mut b = unit_box();
        b.w = 0.0;
        assert!(b.validate().is_err());
        let mut b = unit_box();
        b.score = 1.5;
        assert!(b.validate().is_err());
        let mut b = unit_box();
        b.theta = -PI;
        assert!(b.validate().is_err());
    }

    #[test]
    fn class_names_round_trip() {
        for c in ClassId::ALL {
            assert_eq!(c.kitti_name().parse::<ClassId>().unwrap(), c);
        }
        assert_eq!(ClassId::from_kitti("Unicorn"), ClassId::Ignored);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (-PI..PI, -50.0..50.0f64, -50.0..50.0f64, -5.0..5.0f64)
            .prop_map(|(yaw, x, y, z)| RigidTransform::new(yaw, Point3::new(x, y, z)))
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (
            -20.0..20.0f64,
            -20.0..20.0f64,
            -2.0..2.0f64,
            0.2..6.0f64,
            0.2..3.0f64,
            0.2..3.0f64,
            -PI..PI,
        )
            .prop_map(|(x, y, z, l, w, h, t)| Box3D::new(Point3::new(x, y, z), l, w, h, t))
    }

    proptest! {
        #[test]
        fn transform_inverse_round_trip(b in arb_box(), tf in arb_transform()) {
            let back = apply_transform(&apply_transform(&b, &tf), &tf.inverse());
            prop_assert!((back.center() - b.center()).norm() < 1e-9);
            prop_assert!(normalize_angle(back.theta - b.theta).abs() < 1e-9);
        }

        #[test]
        fn composition_matches_sequential_application(
            a in arb_transform(), b in arb_transform(), p in (-10.0..10.0f64, -10.0..10.0f64, -3.0..3.0f64)
        ) {
            let p = Point3::new(p.0, p.1, p.2);
            let direct = b.apply(a.apply(p));
            let composed = a.then(&b).apply(p);
            prop_assert!((direct - composed).norm() < 1e-9);
        }

        #[test]
        fn in_box_invariant_under_joint_transform(
            b in arb_box(),
            tf in arb_transform(),
            pts in prop::collection::vec((-25.0..25.0f64, -25.0..25.0f64, -4.0..4.0f64), 1..60),
        ) {
            let cloud: Vec<Point3> = pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
            let moved: Vec<Point3> = cloud.iter().map(|&p| tf.apply(p)).collect();
            let before = points_in_box(&cloud, &b);
            let after = points_in_box(&moved, &apply_transform(&b, &tf));
            // points within 1e-9 of a face may flip under rounding
            for (i, (&x, &y)) in before.as_slice().iter().zip(after.as_slice()).enumerate() {
                if x != y {
                    let q = b.to_local(cloud[i]);
                    let slack = (q.x.abs() - b.l / 2.0).abs()
                        .min((q.y.abs() - b.w / 2.0).abs())
                        .min((q.z.abs() - b.h / 2.0).abs());
                    prop_assert!(slack < 1e-9);
                }
            }
        }
    }
}
