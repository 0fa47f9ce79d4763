//! KITTI tracking dataset I/O: label files, calibration, velodyne scans, and
//! result files in the submission layout.
//!
//! Labels are stored in the rectified camera frame on disk. Everything handed
//! to the rest of the crate is converted to the lidar frame here, and
//! converted back only when writing.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::geom3d::{normalize_angle, Box3D, ClassId, Point3, RigidTransform};

/// Sequences 0000 through 0015.
pub const TRAIN_SEQUENCES: [&str; 16] = [
    "0000", "0001", "0002", "0003", "0004", "0005", "0006", "0007", "0008", "0009", "0010",
    "0011", "0012", "0013", "0014", "0015",
];

/// Sequences 0016 through 0020.
pub const VAL_SEQUENCES: [&str; 5] = ["0016", "0017", "0018", "0019", "0020"];

/// Camera/lidar calibration for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub r_rect: Matrix3<f64>,
    pub tr_velo_cam: Matrix3x4<f64>,
    /// Lines not interpreted here (projection matrices, imu), kept for rewriting.
    pub other_lines: Vec<String>,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration::identity()
    }
}

impl Calibration {
    pub fn identity() -> Self {
        Calibration {
            r_rect: Matrix3::identity(),
            tr_velo_cam: Matrix3x4::identity(),
            other_lines: Vec::new(),
        }
    }

    /// The standard KITTI axis convention (camera x right, y down, z forward)
    /// with an extra lidar-to-camera translation.
    pub fn kitti_axes(translation: [f64; 3]) -> Self {
        #[rustfmt::skip]
        let tr = Matrix3x4::new(
            0.0, -1.0, 0.0, translation[0],
            0.0, 0.0, -1.0, translation[1],
            1.0, 0.0, 0.0, translation[2],
        );
        Calibration {
            tr_velo_cam: tr,
            ..Calibration::identity()
        }
    }

    /// Parses `key: values` or `key values` lines. Both the tracking keys
    /// (`R_rect`, `Tr_velo_cam`) and the object keys (`R0_rect`,
    /// `Tr_velo_to_cam`) are accepted. A missing rectification is identity.
    pub fn parse(text: &str) -> Result<Self> {
        let mut r_rect = None;
        let mut tr = None;
        let mut other_lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default().trim_end_matches(':');
            let values = || -> Result<Vec<f64>> {
                line.split_whitespace()
                    .skip(1)
                    .map(|v| {
                        v.parse::<f64>().map_err(|e| Error::Parse {
                            line: i + 1,
                            message: format!("bad calibration value {v:?}: {e}"),
                        })
                    })
                    .collect()
            };
            match key {
                "R_rect" | "R0_rect" => {
                    let v = values()?;
                    if v.len() != 9 {
                        return Err(Error::Parse {
                            line: i + 1,
                            message: format!("{key} needs 9 values, got {}", v.len()),
                        });
                    }
                    r_rect = Some(Matrix3::from_row_slice(&v));
                }
                "Tr_velo_cam" | "Tr_velo_to_cam" => {
                    let v = values()?;
                    if v.len() != 12 {
                        return Err(Error::Parse {
                            line: i + 1,
                            message: format!("{key} needs 12 values, got {}", v.len()),
                        });
                    }
                    tr = Some(Matrix3x4::from_row_slice(&v));
                }
                _ => other_lines.push(raw.to_string()),
            }
        }
        let tr_velo_cam = tr.ok_or_else(|| Error::Format("calibration lacks Tr_velo_cam".into()))?;
        Ok(Calibration {
            r_rect: r_rect.unwrap_or_else(Matrix3::identity),
            tr_velo_cam,
            other_lines,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in &self.other_lines {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("R_rect");
        for r in 0..3 {
            for c in 0..3 {
                write!(out, " {:e}", self.r_rect[(r, c)]).unwrap();
            }
        }
        out.push_str("\nTr_velo_cam");
        for r in 0..3 {
            for c in 0..4 {
                write!(out, " {:e}", self.tr_velo_cam[(r, c)]).unwrap();
            }
        }
        out.push('\n');
        out
    }

    /// Homogeneous lidar-to-rectified-camera matrix.
    pub fn velo_to_rect(&self) -> Matrix4<f64> {
        let mut tr = Matrix4::identity();
        tr.fixed_view_mut::<3, 4>(0, 0).copy_from(&self.tr_velo_cam);
        let mut rect = Matrix4::identity();
        rect.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r_rect);
        rect * tr
    }

    pub fn rect_to_velo(&self) -> Result<Matrix4<f64>> {
        let m = self.velo_to_rect();
        if m.determinant().abs() < 1e-12 {
            return Err(Error::SingularCalibration);
        }
        m.try_inverse().ok_or(Error::SingularCalibration)
    }
}

fn apply_h(m: &Matrix4<f64>, p: Point3) -> Point3 {
    let v = m * Vector4::new(p.x, p.y, p.z, 1.0);
    Point3::new(v[0], v[1], v[2])
}

/// Box as written in KITTI label files: rectified-camera bottom-center
/// location and rotation about the camera y axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraBox {
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub location: Point3,
    pub rotation_y: f64,
}

pub fn camera_to_lidar(cam: &CameraBox, calib: &Calibration) -> Result<Box3D> {
    let inv = calib.rect_to_velo()?;
    let bottom = apply_h(&inv, cam.location);
    let center = Point3::new(bottom.x, bottom.y, bottom.z + cam.h / 2.0);
    Ok(Box3D::new(center, cam.l, cam.w, cam.h, -cam.rotation_y - FRAC_PI_2))
}

pub fn lidar_to_camera(b: &Box3D, calib: &Calibration) -> CameraBox {
    let m = calib.velo_to_rect();
    let bottom = Point3::new(b.px, b.py, b.pz - b.h / 2.0);
    CameraBox {
        h: b.h,
        w: b.w,
        l: b.l,
        location: apply_h(&m, bottom),
        rotation_y: normalize_angle(-b.theta - FRAC_PI_2),
    }
}

/// Label columns that carry no 3D geometry, kept so files can be rewritten.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMeta {
    pub type_name: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox2d: [f64; 4],
    pub has_score: bool,
}

impl LabelMeta {
    pub fn for_class(class_id: ClassId) -> Self {
        LabelMeta {
            type_name: class_id.kitti_name().to_string(),
            truncated: 0.0,
            occluded: 0,
            alpha: -10.0,
            bbox2d: [-1.0; 4],
            has_score: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledObject {
    pub track_id: i64,
    pub bbox: Box3D,
    pub meta: LabelMeta,
}

impl LabeledObject {
    pub fn new(track_id: i64, bbox: Box3D) -> Self {
        LabeledObject {
            track_id,
            meta: LabelMeta::for_class(bbox.class_id),
            bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledFrame {
    pub frame_index: usize,
    pub objects: Vec<LabeledObject>,
}

impl LabeledFrame {
    pub fn boxes(&self) -> Vec<Box3D> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    pub fn find(&self, track_id: i64) -> Option<&LabeledObject> {
        self.objects.iter().find(|o| o.track_id == track_id)
    }

    pub fn filter_class(&self, class_id: ClassId) -> LabeledFrame {
        LabeledFrame {
            frame_index: self.frame_index,
            objects: self
                .objects
                .iter()
                .filter(|o| o.bbox.class_id == class_id)
                .cloned()
                .collect(),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses a KITTI tracking label (or result) file into contiguous frames.
///
/// Frames `0..=max_frame` are all present; frames without records are empty.
/// `DontCare` records are dropped.
pub fn parse_label_file(text: &str, calib: &Calibration) -> Result<Vec<LabeledFrame>> {
    let mut by_frame: BTreeMap<usize, Vec<LabeledObject>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 17 && f.len() != 18 {
            return Err(parse_err(lineno, format!("expected 17 or 18 fields, got {}", f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("field {} ({:?}): {e}", k + 1, f[k])))
        };
        let frame = f[0]
            .parse::<usize>()
            .map_err(|e| parse_err(lineno, format!("frame index {:?}: {e}", f[0])))?;
        let track_id = f[1]
            .parse::<i64>()
            .map_err(|e| parse_err(lineno, format!("track id {:?}: {e}", f[1])))?;
        let type_name = f[2];
        if type_name == "DontCare" {
            by_frame.entry(frame).or_default();
            continue;
        }
        let occluded = f[4]
            .parse::<i32>()
            .map_err(|e| parse_err(lineno, format!("occluded {:?}: {e}", f[4])))?;
        let cam = CameraBox {
            h: num(10)?,
            w: num(11)?,
            l: num(12)?,
            location: Point3::new(num(13)?, num(14)?, num(15)?),
            rotation_y: num(16)?,
        };
        let score = if f.len() == 18 { Some(num(17)?) } else { None };
        let mut bbox = camera_to_lidar(&cam, calib)?;
        bbox.class_id = ClassId::from_kitti(type_name);
        bbox.score = score.unwrap_or(1.0);
        let meta = LabelMeta {
            type_name: type_name.to_string(),
            truncated: num(3)?,
            occluded,
            alpha: num(5)?,
            bbox2d: [num(6)?, num(7)?, num(8)?, num(9)?],
            has_score: score.is_some(),
        };
        let objects = by_frame.entry(frame).or_default();
        if objects.iter().any(|o| o.track_id == track_id) {
            return Err(parse_err(
                lineno,
                format!("track id {track_id} repeated in frame {frame}"),
            ));
        }
        objects.push(LabeledObject { track_id, bbox, meta });
    }
    let Some((&max_frame, _)) = by_frame.iter().next_back() else {
        return Ok(Vec::new());
    };
    let mut frames: Vec<LabeledFrame> = (0..=max_frame)
        .map(|frame_index| LabeledFrame {
            frame_index,
            objects: Vec::new(),
        })
        .collect();
    for (frame, objects) in by_frame {
        frames[frame].objects = objects;
    }
    Ok(frames)
}

fn write_truncated(out: &mut String, v: f64) {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        write!(out, "{}", v as i64).unwrap();
    } else {
        write!(out, "{v:.6}").unwrap();
    }
}

fn write_record(out: &mut String, frame: usize, track_id: i64, meta: &LabelMeta, b: &Box3D, calib: &Calibration, score: Option<f64>) {
    let cam = lidar_to_camera(b, calib);
    write!(out, "{frame} {track_id} {} ", meta.type_name).unwrap();
    write_truncated(out, meta.truncated);
    write!(out, " {} {:.6}", meta.occluded, meta.alpha).unwrap();
    for v in meta.bbox2d {
        write!(out, " {v:.6}").unwrap();
    }
    write!(
        out,
        " {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        cam.h, cam.w, cam.l, cam.location.x, cam.location.y, cam.location.z, cam.rotation_y
    )
    .unwrap();
    if let Some(s) = score {
        write!(out, " {s:.6}").unwrap();
    }
    out.push('\n');
}

/// Inverse of [`parse_label_file`]: one line per object, in stored order.
pub fn write_labels(frames: &[LabeledFrame], calib: &Calibration) -> String {
    let mut out = String::new();
    for frame in frames {
        for o in &frame.objects {
            let score = o.meta.has_score.then_some(o.bbox.score);
            write_record(&mut out, frame.frame_index, o.track_id, &o.meta, &o.bbox, calib, score);
        }
    }
    out
}

/// One tracker output box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedBox {
    pub track_id: u64,
    pub bbox: Box3D,
}

/// Writes tracker output in the KITTI submission layout: 18 columns per line
/// (17 label columns plus score), sorted by frame then track id. The image
/// box is not known here and is written as `-1`.
pub fn write_results(frames: &[Vec<TrackedBox>], calib: &Calibration) -> String {
    let mut out = String::new();
    for (frame, boxes) in frames.iter().enumerate() {
        let mut sorted: Vec<&TrackedBox> = boxes.iter().collect();
        sorted.sort_by_key(|t| t.track_id);
        for t in sorted {
            let cam = lidar_to_camera(&t.bbox, calib);
            let ray = cam.location.x.atan2(cam.location.z);
            let meta = LabelMeta {
                alpha: normalize_angle(cam.rotation_y - ray),
                ..LabelMeta::for_class(t.bbox.class_id)
            };
            write_record(&mut out, frame, t.track_id as i64, &meta, &t.bbox, calib, Some(t.bbox.score));
        }
    }
    out
}

/// Decodes a velodyne scan: little-endian f32 quadruples `x y z intensity`.
pub fn read_velodyne(bytes: &[u8]) -> Result<Cloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Format(format!(
            "velodyne data length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let mut cloud = Cloud::with_capacity(bytes.len() / 16);
    for chunk in bytes.chunks_exact(16) {
        let v: [f32; 4] = std::array::from_fn(|k| {
            f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().expect("4-byte slice"))
        });
        cloud.points.push(Point3::new(v[0] as f64, v[1] as f64, v[2] as f64));
        cloud.intensity.push(v[3]);
    }
    Ok(cloud)
}

pub fn write_velodyne(cloud: &Cloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points.iter().enumerate() {
        let intensity = cloud.intensity.get(i).copied().unwrap_or(0.0);
        for v in [p.x as f32, p.y as f32, p.z as f32, intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// A lidar scan. `intensity` is either empty or aligned with `points`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cloud {
    pub points: Vec<Point3>,
    pub intensity: Vec<f32>,
}

impl Cloud {
    pub fn with_capacity(n: usize) -> Self {
        Cloud {
            points: Vec::with_capacity(n),
            intensity: Vec::with_capacity(n),
        }
    }

    pub fn from_points(points: Vec<Point3>) -> Self {
        let intensity = vec![0.0; points.len()];
        Cloud { points, intensity }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point3, intensity: f32) {
        self.points.push(p);
        self.intensity.push(intensity);
    }
}

/// Per-frame scans, either resident or read on demand.
#[derive(Debug, Clone)]
pub enum CloudStore {
    Memory(Vec<Cloud>),
    /// One entry per frame; `None` marks a frame without a scan file.
    Files(Vec<Option<PathBuf>>),
}

impl CloudStore {
    pub fn len(&self) -> usize {
        match self {
            CloudStore::Memory(v) => v.len(),
            CloudStore::Files(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, frame: usize) -> Result<Cow<'_, Cloud>> {
        match self {
            CloudStore::Memory(v) => Ok(v.get(frame).map(Cow::Borrowed).unwrap_or_default()),
            CloudStore::Files(v) => match v.get(frame).and_then(|p| p.as_ref()) {
                Some(path) => {
                    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                    read_velodyne(&bytes).map(Cow::Owned)
                }
                None => Ok(Cow::Owned(Cloud::default())),
            },
        }
    }
}

/// A labeled sequence with scans and calibration.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<LabeledFrame>,
    pub clouds: CloudStore,
    pub calib: Calibration,
}

impl Sequence {
    pub fn in_memory(name: impl Into<String>, frames: Vec<LabeledFrame>, clouds: Vec<Cloud>, calib: Calibration) -> Result<Self> {
        if frames.len() != clouds.len() {
            return Err(Error::LengthMismatch {
                what: "sequence clouds",
                expected: frames.len(),
                actual: clouds.len(),
            });
        }
        Ok(Sequence {
            name: name.into(),
            frames,
            clouds: CloudStore::Memory(clouds),
            calib,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn cloud(&self, frame: usize) -> Result<Cow<'_, Cloud>> {
        self.clouds.get(frame)
    }

    /// Loads every scan into memory.
    pub fn materialize(&mut self) -> Result<()> {
        if let CloudStore::Files(_) = self.clouds {
            let clouds = (0..self.len())
                .map(|i| self.cloud(i).map(Cow::into_owned))
                .collect::<Result<Vec<_>>>()?;
            self.clouds = CloudStore::Memory(clouds);
        }
        Ok(())
    }

    /// Pre-transforms each frame's labels and scan, e.g. into a world frame
    /// given ego poses. Loads scans into memory.
    pub fn transform_frames(&mut self, pose: impl Fn(usize) -> RigidTransform) -> Result<()> {
        self.materialize()?;
        let CloudStore::Memory(clouds) = &mut self.clouds else {
            unreachable!("materialized above");
        };
        for (i, (frame, cloud)) in self.frames.iter_mut().zip(clouds.iter_mut()).enumerate() {
            let tf = pose(i);
            for o in &mut frame.objects {
                o.bbox = crate::geom3d::apply_transform(&o.bbox, &tf);
            }
            for p in &mut cloud.points {
                *p = tf.apply(*p);
            }
        }
        Ok(())
    }
}

/// Directory layout `<root>/{label_02,calib,velodyne}`; a `training/`
/// subdirectory is used when present.
#[derive(Debug, Clone)]
pub struct KittiTracking {
    root: PathBuf,
}

impl KittiTracking {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
            ));
        }
        let training = root.join("training");
        let root = if !root.join("label_02").is_dir() && training.join("label_02").is_dir() {
            training
        } else {
            root.to_path_buf()
        };
        Ok(KittiTracking { root })
    }

    /// Creates the layout at `root` for writing.
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in ["label_02", "calib", "velodyne"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(KittiTracking { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn label_path(&self, seq: &str) -> PathBuf {
        self.root.join("label_02").join(format!("{seq}.txt"))
    }

    pub fn calib_path(&self, seq: &str) -> PathBuf {
        self.root.join("calib").join(format!("{seq}.txt"))
    }

    pub fn velodyne_dir(&self, seq: &str) -> PathBuf {
        self.root.join("velodyne").join(seq)
    }

    /// Names of all sequences that have a label file, sorted.
    pub fn sequences(&self) -> Result<Vec<String>> {
        let dir = self.root.join("label_02");
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_string());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn load_calibration(&self, seq: &str) -> Result<Calibration> {
        let path = self.calib_path(seq);
        if !path.exists() {
            return Ok(Calibration::identity());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Calibration::parse(&text).map_err(|e| with_path(e, &path))
    }

    /// Loads labels and calibration; scans are read lazily.
    pub fn load_sequence(&self, seq: &str) -> Result<Sequence> {
        let calib = self.load_calibration(seq)?;
        let label_path = self.label_path(seq);
        let text = fs::read_to_string(&label_path).map_err(|e| Error::io(&label_path, e))?;
        let mut frames = parse_label_file(&text, &calib).map_err(|e| with_path(e, &label_path))?;

        let vdir = self.velodyne_dir(seq);
        let mut scans: BTreeMap<usize, PathBuf> = BTreeMap::new();
        if vdir.is_dir() {
            for entry in fs::read_dir(&vdir).map_err(|e| Error::io(&vdir, e))? {
                let path = entry.map_err(|e| Error::io(&vdir, e))?.path();
                if path.extension().is_some_and(|e| e == "bin") {
                    if let Some(idx) = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .and_then(|s| s.parse::<usize>().ok())
                    {
                        scans.insert(idx, path);
                    }
                }
            }
        }
        let n = frames
            .len()
            .max(scans.keys().next_back().map_or(0, |&m| m + 1));
        while frames.len() < n {
            frames.push(LabeledFrame {
                frame_index: frames.len(),
                objects: Vec::new(),
            });
        }
        let files = (0..n).map(|i| scans.remove(&i)).collect();
        Ok(Sequence {
            name: seq.to_string(),
            frames,
            clouds: CloudStore::Files(files),
            calib,
        })
    }

    /// Writes labels, calibration and scans for `seq` under this root.
    pub fn write_sequence(&self, seq: &Sequence) -> Result<()> {
        let label_path = self.label_path(&seq.name);
        write_atomic(&label_path, write_labels(&seq.frames, &seq.calib).as_bytes())?;
        write_atomic(&self.calib_path(&seq.name), seq.calib.to_text().as_bytes())?;
        let vdir = self.velodyne_dir(&seq.name);
        fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
        for i in 0..seq.len() {
            let cloud = seq.cloud(i)?;
            write_atomic(&vdir.join(format!("{i:06}.bin")), &write_velodyne(&cloud))?;
        }
        Ok(())
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
