//! Offline dataset manipulation: an object database cut from labeled scans,
//! frame-pair augmentation, and the perturbed "hard" variant of a sequence.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowlabel::assign_points;
use crate::geom3d::{apply_transform, iou_bev, points_in_box, Box3D, ClassId, Point3, RigidTransform};
use crate::kitti::{Cloud, LabeledFrame, LabeledObject, Sequence};
use crate::par::{map_range, Execution};

/// One labeled object's points, expressed in its own box frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub class_id: ClassId,
    pub points: Vec<Point3>,
    pub intensity: Vec<f32>,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub source: String,
}

impl ObjectRecord {
    /// Cuts the points of `bbox` out of `cloud`. `None` when the box is empty.
    pub fn extract(bbox: &Box3D, cloud: &Cloud, source: impl Into<String>) -> Option<ObjectRecord> {
        let mask = points_in_box(&cloud.points, bbox);
        if mask.count() == 0 {
            return None;
        }
        let idx: Vec<usize> = mask.indices().collect();
        Some(ObjectRecord {
            class_id: bbox.class_id,
            points: idx.iter().map(|&i| bbox.to_local(cloud.points[i])).collect(),
            intensity: idx.iter().map(|&i| cloud.intensity.get(i).copied().unwrap_or(0.0)).collect(),
            l: bbox.l,
            w: bbox.w,
            h: bbox.h,
            source: source.into(),
        })
    }

    /// The record posed at `center` with heading `yaw`.
    pub fn place(&self, center: Point3, yaw: f64) -> (Box3D, Vec<Point3>) {
        let bbox = Box3D::new(center, self.l, self.w, self.h, yaw).with_class(self.class_id);
        let pts = self.points.iter().map(|&p| bbox.to_world(p)).collect();
        (bbox, pts)
    }

    pub fn is_within_extents(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.x.abs() <= self.l / 2.0 && p.y.abs() <= self.w / 2.0 && p.z.abs() <= self.h / 2.0)
    }
}

/// Every labeled object with at least one interior point, over all frames.
pub fn build_object_database(sequences: &[Sequence]) -> Result<Vec<ObjectRecord>> {
    let mut out = Vec::new();
    for seq in sequences {
        for (t, frame) in seq.frames.iter().enumerate() {
            if frame.objects.is_empty() {
                continue;
            }
            let cloud = seq.cloud(t)?;
            for o in &frame.objects {
                let tag = format!("{}:{}:{}", seq.name, frame.frame_index, o.track_id);
                out.extend(ObjectRecord::extract(&o.bbox, &cloud, tag));
            }
        }
    }
    Ok(out)
}

/// A frame's labels with its scan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledScan {
    pub frame: LabeledFrame,
    pub cloud: Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Objects drawn from the database per pair.
    pub num_objects: usize,
    /// Placement attempts per object before it is skipped.
    pub max_attempts: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Ground height used when a frame carries no labels to estimate it from.
    pub ground_z: f64,
    pub flip_probability: f64,
    /// Global rotation about z, radians.
    pub rotation_range: (f64, f64),
    pub scale_range: (f64, f64),
    /// Upper bound on each object's frame-t displacement, meters.
    pub max_object_translation: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            num_objects: 5,
            max_attempts: 10,
            x_range: (5.0, 50.0),
            y_range: (-20.0, 20.0),
            ground_z: -1.73,
            flip_probability: 0.5,
            rotation_range: (-PI / 4.0, PI / 4.0),
            scale_range: (0.95, 1.05),
            max_object_translation: 0.5,
        }
    }
}

impl AugmentConfig {
    /// No insertion and no random transform at all.
    pub fn identity() -> Self {
        AugmentConfig {
            num_objects: 0,
            flip_probability: 0.0,
            rotation_range: (0.0, 0.0),
            scale_range: (1.0, 1.0),
            max_object_translation: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if !ordered(self.x_range) || !ordered(self.y_range) || !ordered(self.rotation_range) || !ordered(self.scale_range) {
            return Err(Error::InvalidArgument("augmentation ranges must be finite and ordered".into()));
        }
        if self.scale_range.0 <= 0.0 {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) || !(self.max_object_translation >= 0.0) {
            return Err(Error::InvalidArgument("flip probability or translation bound out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AugmentReport {
    pub inserted: usize,
    pub skipped: usize,
    pub attempts: usize,
    pub flipped: bool,
    pub rotation: f64,
    pub scale: f64,
    /// Frame-t displacement per track id.
    pub translations: Vec<(i64, Point3)>,
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

fn planar_offset(rng: &mut ChaCha8Rng, max: f64) -> Point3 {
    if max == 0.0 {
        return Point3::ZERO;
    }
    let r = rng.random_range(0.0..=max);
    let phi = rng.random_range(0.0..2.0 * PI);
    Point3::new(r * phi.cos(), r * phi.sin(), 0.0)
}

fn remove_points_inside(cloud: &mut Cloud, bbox: &Box3D) {
    let mask = points_in_box(&cloud.points, bbox);
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| !mask.get(i)).collect();
    let has_intensity = cloud.intensity.len() == cloud.points.len();
    cloud.points = keep.iter().map(|&i| cloud.points[i]).collect();
    if has_intensity {
        cloud.intensity = keep.iter().map(|&i| cloud.intensity[i]).collect();
    }
}

fn map_scan(scan: &mut LabeledScan, f_point: impl Fn(Point3) -> Point3, f_box: impl Fn(&Box3D) -> Box3D) {
    scan.cloud.points.iter_mut().for_each(|p| *p = f_point(*p));
    scan.frame.objects.iter_mut().for_each(|o| o.bbox = f_box(&o.bbox));
}

/// Augments the pair `(t-1, t)`: database objects are inserted at the same
/// pose in both frames, a global flip / rotation / scale is applied to both,
/// and finally every object in frame `t` is shifted on its own.
pub fn augment_pair(
    prev: &LabeledScan,
    next: &LabeledScan,
    database: &[ObjectRecord],
    seed: u64,
    config: &AugmentConfig,
) -> Result<(LabeledScan, LabeledScan, AugmentReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = (prev.clone(), next.clone());
    let mut report = AugmentReport {
        scale: 1.0,
        ..Default::default()
    };

    if !database.is_empty() && config.num_objects > 0 {
        let existing: Vec<Box3D> = a.frame.boxes().into_iter().chain(b.frame.boxes()).collect();
        let ground = if existing.is_empty() {
            config.ground_z
        } else {
            existing.iter().map(|x| x.z_range().0).sum::<f64>() / existing.len() as f64
        };
        let mut next_id = a.frame.objects.iter().chain(&b.frame.objects).map(|o| o.track_id).max().unwrap_or(-1) + 1;
        let mut occupied = existing;
        for _ in 0..config.num_objects {
            let rec = &database[rng.random_range(0..database.len())];
            let mut placed = None;
            for _ in 0..config.max_attempts {
                report.attempts += 1;
                let center = Point3::new(uniform(&mut rng, config.x_range), uniform(&mut rng, config.y_range), ground + rec.h / 2.0);
                let yaw = rng.random_range(-PI..PI);
                let (bbox, pts) = rec.place(center, yaw);
                if occupied.iter().all(|o| iou_bev(o, &bbox) <= 0.0) {
                    placed = Some((bbox, pts));
                    break;
                }
            }
            let Some((bbox, pts)) = placed else {
                report.skipped += 1;
                continue;
            };
            for scan in [&mut a, &mut b] {
                remove_points_inside(&mut scan.cloud, &bbox);
                for (p, &i) in pts.iter().zip(&rec.intensity) {
                    scan.cloud.push(*p, i);
                }
                scan.frame.objects.push(LabeledObject::new(next_id, bbox));
            }
            occupied.push(bbox);
            next_id += 1;
            report.inserted += 1;
        }
    }

    report.flipped = config.flip_probability > 0.0 && rng.random_bool(config.flip_probability);
    report.rotation = uniform(&mut rng, config.rotation_range);
    report.scale = uniform(&mut rng, config.scale_range);
    for scan in [&mut a, &mut b] {
        if report.flipped {
            map_scan(scan, |p| Point3::new(p.x, -p.y, p.z), |x| {
                let mut y = *x;
                y.py = -y.py;
                y.theta = crate::geom3d::normalize_angle(-y.theta);
                y
            });
        }
        if report.rotation != 0.0 {
            let rot = RigidTransform::new(report.rotation, Point3::ZERO);
            map_scan(scan, |p| rot.apply(p), |x| apply_transform(x, &rot));
        }
        if report.scale != 1.0 {
            let s = report.scale;
            map_scan(scan, |p| p * s, |x| {
                let mut y = x.with_center(x.center() * s);
                y.l *= s;
                y.w *= s;
                y.h *= s;
                y
            });
        }
    }

    let mut order: Vec<usize> = (0..b.frame.objects.len()).collect();
    order.sort_by_key(|&i| b.frame.objects[i].track_id);
    let keyed: Vec<(i64, Box3D)> = b.frame.objects.iter().map(|o| (o.track_id, o.bbox)).collect();
    let owner = assign_points(&b.cloud.points, &keyed);
    let mut shift = vec![Point3::ZERO; keyed.len()];
    for &i in &order {
        shift[i] = planar_offset(&mut rng, config.max_object_translation);
        report.translations.push((keyed[i].0, shift[i]));
    }
    for (p, o) in b.cloud.points.iter_mut().zip(&owner) {
        if let Some(i) = *o {
            *p += shift[i];
        }
    }
    for (obj, d) in b.frame.objects.iter_mut().zip(&shift) {
        obj.bbox = obj.bbox.with_center(obj.bbox.center() + *d);
    }
    Ok((a, b, report))
}

/// Augments consecutive pairs of `seq` (every `stride`-th pair) into
/// two-frame sequences named `<seq>_<t>`.
pub fn augment_sequence(
    seq: &Sequence,
    database: &[ObjectRecord],
    seed: u64,
    stride: usize,
    config: &AugmentConfig,
) -> Result<Vec<(Sequence, AugmentReport)>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for t in (1..seq.len()).step_by(stride) {
        let scan = |i: usize| -> Result<LabeledScan> {
            Ok(LabeledScan {
                frame: seq.frames[i].clone(),
                cloud: seq.cloud(i)?.into_owned(),
            })
        };
        let (a, mut b, report) = augment_pair(&scan(t - 1)?, &scan(t)?, database, seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), config)?;
        let mut a = a;
        a.frame.frame_index = 0;
        b.frame.frame_index = 1;
        let s = Sequence::in_memory(format!("{}_{:06}", seq.name, t), vec![a.frame, b.frame], vec![a.cloud, b.cloud], seq.calib.clone())?;
        out.push((s, report));
    }
    Ok(out)
}

/// Per-target jitter for the hard set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardSetConfig {
    /// Meters.
    pub max_translation: f64,
    /// Radians.
    pub max_rotation: f64,
    /// Rotation sign drawn at random; otherwise always positive.
    pub symmetric_rotation: bool,
    /// A fresh draw for every frame; otherwise one per track for the whole sequence.
    pub per_frame: bool,
}

impl Default for HardSetConfig {
    fn default() -> Self {
        HardSetConfig {
            max_translation: 0.5,
            max_rotation: 20f64.to_radians(),
            symmetric_rotation: true,
            per_frame: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Perturbation {
    pub translation: Point3,
    pub yaw: f64,
}

impl Perturbation {
    /// Rotation about `pivot`, then the translation.
    pub fn about(&self, pivot: Point3) -> RigidTransform {
        RigidTransform::about_pivot(self.yaw, pivot, self.translation)
    }
}

impl HardSetConfig {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Perturbation {
        let r = rng.random_range(0.0..=self.max_translation);
        let phi = rng.random_range(0.0..2.0 * PI);
        let mut yaw = rng.random_range(0.0..=self.max_rotation);
        if self.symmetric_rotation && rng.random_bool(0.5) {
            yaw = -yaw;
        }
        Perturbation {
            translation: Point3::new(r * phi.cos(), r * phi.sin(), 0.0),
            yaw,
        }
    }
}

/// Jitters every labeled target and its interior points about the box
/// center. Background points are untouched. The result is held in memory.
pub fn make_hard_set(seq: &Sequence, seed: u64, config: &HardSetConfig) -> Result<Sequence> {
    let frames = map_range(Execution::default(), seq.len(), |t| -> Result<(LabeledFrame, Cloud)> {
        let mut frame = seq.frames[t].clone();
        let mut cloud = seq.cloud(t)?.into_owned();
        let mut order: Vec<usize> = (0..frame.objects.len()).collect();
        order.sort_by_key(|&i| frame.objects[i].track_id);
        let mut frame_rng = ChaCha8Rng::seed_from_u64(seed);
        frame_rng.set_stream(t as u64);
        let mut tf = vec![RigidTransform::IDENTITY; frame.objects.len()];
        for &i in &order {
            let o = &frame.objects[i];
            let p = if config.per_frame {
                config.sample(&mut frame_rng)
            } else {
                let mut track_rng = ChaCha8Rng::seed_from_u64(seed);
                track_rng.set_stream(o.track_id as u64 ^ (1 << 63));
                config.sample(&mut track_rng)
            };
            tf[i] = p.about(o.bbox.center());
        }
        let keyed: Vec<(i64, Box3D)> = frame.objects.iter().map(|o| (o.track_id, o.bbox)).collect();
        let owner = assign_points(&cloud.points, &keyed);
        for (p, o) in cloud.points.iter_mut().zip(&owner) {
            if let Some(i) = *o {
                *p = tf[i].apply(*p);
            }
        }
        for (o, t) in frame.objects.iter_mut().zip(&tf) {
            o.bbox = apply_transform(&o.bbox, t);
        }
        Ok((frame, cloud))
    });
    let (frames, clouds): (Vec<_>, Vec<_>) = frames.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Sequence::in_memory(seq.name.clone(), frames, clouds, seq.calib.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowlabel::scene_flow_labels;
    use crate::kitti::Calibration;

    fn boxed_points(b: &Box3D, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|i| {
                let f = i as f64 / n as f64 - 0.5;
                b.to_world(Point3::new(f * b.l * 0.9, 0.3 * f * b.w, 0.2 * b.h * (i % 3) as f64 - 0.2 * b.h))
            })
            .collect()
    }

    fn scene() -> LabeledScan {
        let b = Box3D::new(Point3::new(10.0, 0.0, 0.75), 4.0, 2.0, 1.5, 0.3);
        let mut cloud = Cloud::from_points(boxed_points(&b, 40));
        for i in 0..30 {
            cloud.push(Point3::new(i as f64, -8.0, 0.0), 0.5);
        }
        LabeledScan {
            frame: LabeledFrame {
                frame_index: 0,
                objects: vec![LabeledObject::new(3, b)],
            },
            cloud,
        }
    }

    fn seq_of(scans: Vec<LabeledScan>) -> Sequence {
        let (f, c) = scans.into_iter().map(|s| (s.frame, s.cloud)).unzip();
        Sequence::in_memory("s", f, c, Calibration::identity()).unwrap()
    }

    #[test]
    fn record_extract_and_place_round_trip() {
        let s = scene();
        let b = s.frame.objects[0].bbox;
        let rec = ObjectRecord::extract(&b, &s.cloud, "x").unwrap();
        assert_eq!(rec.points.len(), 40);
        assert!(rec.is_within_extents());
        let (placed, pts) = rec.place(b.center(), b.theta);
        let again = ObjectRecord::extract(&placed, &Cloud::from_points(pts), "x").unwrap();
        for (p, q) in rec.points.iter().zip(&again.points) {
            assert!(p.distance(*q) < 1e-12);
        }
    }

    #[test]
    fn database_from_five_points() {
        let b = Box3D::new(Point3::new(0.0, 0.0, 0.0), 2.0, 2.0, 2.0, 0.0);
        let pts = vec![Point3::new(0.1, 0.2, 0.3), Point3::new(-0.5, 0.5, 0.0), Point3::ZERO, Point3::new(0.9, -0.9, 0.9), Point3::new(0.0, 0.0, -0.99), Point3::new(5.0, 0.0, 0.0)];
        let seq = seq_of(vec![LabeledScan {
            frame: LabeledFrame { frame_index: 0, objects: vec![LabeledObject::new(0, b)] },
            cloud: Cloud::from_points(pts.clone()),
        }]);
        let db = build_object_database(&[seq]).unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db[0].points, pts[..5].to_vec());
        assert!(build_object_database(&[]).unwrap().is_empty());
    }

    #[test]
    fn identity_augmentation_is_a_no_op() {
        let s = scene();
        let db = vec![ObjectRecord::extract(&s.frame.objects[0].bbox, &s.cloud, "x").unwrap()];
        let (a, b, rep) = augment_pair(&s, &s, &db, 9, &AugmentConfig::identity()).unwrap();
        assert_eq!(a, s);
        assert_eq!(b, s);
        assert_eq!(rep.inserted, 0);
    }

    #[test]
    fn augmentation_is_deterministic_and_inserts_without_overlap() {
        let s = scene();
        let db = vec![ObjectRecord::extract(&s.frame.objects[0].bbox, &s.cloud, "x").unwrap()];
        let cfg = AugmentConfig { ground_z: 0.0, ..Default::default() };
        let r1 = augment_pair(&s, &s, &db, 5, &cfg).unwrap();
        let r2 = augment_pair(&s, &s, &db, 5, &cfg).unwrap();
        assert_eq!(r1, r2);
        let (a, b, rep) = r1;
        assert_eq!(rep.inserted + rep.skipped, cfg.num_objects);
        assert_eq!(a.frame.objects.len(), 1 + rep.inserted);
        let boxes = a.frame.boxes();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                assert!(iou_bev(&boxes[i], &boxes[j]) < 1e-9);
            }
        }
        assert_eq!(a.cloud.points.len(), a.cloud.intensity.len());
        assert_eq!(b.frame.objects.len(), a.frame.objects.len());
    }

    #[test]
    fn augmented_flow_matches_object_shifts() {
        let s = scene();
        let db = vec![ObjectRecord::extract(&s.frame.objects[0].bbox, &s.cloud, "x").unwrap()];
        let cfg = AugmentConfig { ground_z: 0.0, num_objects: 3, ..Default::default() };
        let (a, b, rep) = augment_pair(&s, &s, &db, 11, &cfg).unwrap();
        let flow = scene_flow_labels(&a.frame, &b.frame, &a.cloud.points);
        let keyed: Vec<(i64, Box3D)> = a.frame.objects.iter().map(|o| (o.track_id, o.bbox)).collect();
        let owner = assign_points(&a.cloud.points, &keyed);
        let mut checked = 0;
        for (i, o) in owner.iter().enumerate() {
            if let Some(k) = *o {
                let d = rep.translations.iter().find(|t| t.0 == keyed[k].0).unwrap().1;
                assert!(flow.valid[i]);
                assert!(flow.vectors[i].distance(d) < 1e-9);
                checked += 1;
            }
        }
        assert!(checked >= 40);
    }

    #[test]
    fn hard_set_samples_stay_in_range() {
        let cfg = HardSetConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let p = cfg.sample(&mut rng);
            assert!(p.translation.norm() <= 0.5 + 1e-12);
            assert!(p.yaw.abs() <= cfg.max_rotation + 1e-12);
        }
        let one_sided = HardSetConfig { symmetric_rotation: false, ..cfg };
        assert!((0..1000).all(|_| one_sided.sample(&mut rng).yaw >= 0.0));
    }

    #[test]
    fn hard_set_moves_points_with_boxes_and_keeps_background() {
        let seq = seq_of(vec![scene(), scene(), scene()]);
        let hard = make_hard_set(&seq, 4, &HardSetConfig::default()).unwrap();
        for t in 0..3 {
            let before = seq.cloud(t).unwrap();
            let after = hard.cloud(t).unwrap();
            assert_eq!(before.len(), after.len());
            assert_eq!(before.points[40..], after.points[40..]);
            let b = hard.frames[t].objects[0].bbox;
            assert!(after.points[..40].iter().all(|p| b.contains_with_margin(*p, 1e-9)));
            assert_ne!(b, seq.frames[t].objects[0].bbox);
        }
        let again = make_hard_set(&seq, 4, &HardSetConfig::default()).unwrap();
        assert_eq!(again.frames, hard.frames);
        let fixed = make_hard_set(&seq, 4, &HardSetConfig { per_frame: false, ..Default::default() }).unwrap();
        let d0 = fixed.frames[0].objects[0].bbox.center() - seq.frames[0].objects[0].bbox.center();
        let d2 = fixed.frames[2].objects[0].bbox.center() - seq.frames[2].objects[0].bbox.center();
        assert!(d0.distance(d2) < 1e-12);
    }
}
