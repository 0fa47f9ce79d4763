//! Scene-flow labels derived from tracking ground truth.
//!
//! Objects are matched across two frames by track id. Every point of the
//! earlier scan that lies inside a matched box is moved by that box's rigid
//! inter-frame transform; the displacement is the label. The
//! translation-only variant moves every in-box point by the box-center
//! displacement and is kept as the reference it is compared against.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom3d::{normalize_angle, Box3D, Point3, RigidTransform};
use crate::kitti::LabeledFrame;

/// Per-point displacement from frame t-1 to frame t with validity flags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneFlow {
    pub vectors: Vec<Point3>,
    pub valid: Vec<bool>,
}

impl SceneFlow {
    /// All-invalid zero field.
    pub fn invalid(n: usize) -> Self {
        SceneFlow {
            vectors: vec![Point3::ZERO; n],
            valid: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub(crate) fn check_aligned(&self, n: usize, what: &'static str) -> Result<()> {
        if self.vectors.len() != n || self.valid.len() != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                actual: self.vectors.len().min(self.valid.len()),
            });
        }
        Ok(())
    }
}

/// How a matched box moves the points it contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelMethod {
    /// Full yaw + translation of the box.
    #[default]
    BoxTransform,
    /// Box-center displacement only.
    TranslationOnly,
}

/// Rigid motion carrying `prev` onto `next` (center and heading).
pub fn box_transform_between(prev: &Box3D, next: &Box3D) -> RigidTransform {
    let yaw = normalize_angle(next.theta - prev.theta);
    let t = next.center() - prev.center().rotate_z(yaw);
    RigidTransform::new(yaw, t)
}

/// For each point, the index of the box that owns it: among boxes containing
/// the point, the one with the nearest center, ties to the lower `key`.
pub fn assign_points<K: Ord + Copy>(cloud: &[Point3], boxes: &[(K, Box3D)]) -> Vec<Option<usize>> {
    let mut owner: Vec<Option<(f64, K, usize)>> = vec![None; cloud.len()];
    for (bi, (key, b)) in boxes.iter().enumerate() {
        let c = b.center();
        let reach = b.bev_radius();
        for (pi, &p) in cloud.iter().enumerate() {
            let (dx, dy) = (p.x - c.x, p.y - c.y);
            if dx * dx + dy * dy > reach * reach + 1e-12 || !b.contains(p) {
                continue;
            }
            let d = p.distance(c);
            let better = match owner[pi] {
                None => true,
                Some((od, ok, _)) => d < od || (d == od && *key < ok),
            };
            if better {
                owner[pi] = Some((d, *key, bi));
            }
        }
    }
    owner.into_iter().map(|o| o.map(|(_, _, bi)| bi)).collect()
}

/// Boxes present in both frames, as `(track_id, prev box, next box)` sorted by id.
pub fn matched_boxes(prev: &LabeledFrame, next: &LabeledFrame) -> Vec<(i64, Box3D, Box3D)> {
    let mut out: Vec<(i64, Box3D, Box3D)> = prev
        .objects
        .iter()
        .filter_map(|o| next.find(o.track_id).map(|n| (o.track_id, o.bbox, n.bbox)))
        .collect();
    out.sort_by_key(|m| m.0);
    out
}

pub fn scene_flow_labels_with(
    prev: &LabeledFrame,
    next: &LabeledFrame,
    cloud_prev: &[Point3],
    method: LabelMethod,
) -> SceneFlow {
    let matched = matched_boxes(prev, next);
    let keyed: Vec<(i64, Box3D)> = matched.iter().map(|&(id, p, _)| (id, p)).collect();
    let motions: Vec<RigidTransform> = matched
        .iter()
        .map(|(_, p, n)| match method {
            LabelMethod::BoxTransform => box_transform_between(p, n),
            LabelMethod::TranslationOnly => RigidTransform::translation(n.center() - p.center()),
        })
        .collect();
    let owners = assign_points(cloud_prev, &keyed);
    let mut flow = SceneFlow::invalid(cloud_prev.len());
    for (i, owner) in owners.into_iter().enumerate() {
        if let Some(bi) = owner {
            let p = cloud_prev[i];
            flow.vectors[i] = motions[bi].apply(p) - p;
            flow.valid[i] = true;
        }
    }
    flow
}

/// Labels from the rigid box transformation of each matched track.
pub fn scene_flow_labels(prev: &LabeledFrame, next: &LabeledFrame, cloud_prev: &[Point3]) -> SceneFlow {
    scene_flow_labels_with(prev, next, cloud_prev, LabelMethod::BoxTransform)
}

/// Labels from box-center displacement only; rotation is ignored.
pub fn scene_flow_labels_translation_only(prev: &LabeledFrame, next: &LabeledFrame, cloud_prev: &[Point3]) -> SceneFlow {
    scene_flow_labels_with(prev, next, cloud_prev, LabelMethod::TranslationOnly)
}

/// Exact labels plus i.i.d. Gaussian noise on every valid component.
pub fn oracle_flow(
    prev: &LabeledFrame,
    next: &LabeledFrame,
    cloud_prev: &[Point3],
    noise_sigma: f64,
    seed: u64,
) -> Result<SceneFlow> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be a finite value >= 0, got {noise_sigma}"
        )));
    }
    let mut flow = scene_flow_labels(prev, next, cloud_prev);
    if noise_sigma > 0.0 {
        add_noise(&mut flow, noise_sigma, seed);
    }
    Ok(flow)
}

pub(crate) fn add_noise(flow: &mut SceneFlow, sigma: f64, seed: u64) {
    let normal = Normal::new(0.0, sigma).expect("sigma checked finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (v, &ok) in flow.vectors.iter_mut().zip(&flow.valid) {
        if ok {
            *v += Point3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
}

/// Root-mean-square endpoint error over points valid in `label`.
pub fn flow_rmse(estimate: &SceneFlow, label: &SceneFlow) -> Result<f64> {
    estimate.check_aligned(label.len(), "flow estimate")?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..label.len() {
        if label.valid[i] {
            sum += (estimate.vectors[i] - label.vectors[i]).norm_sq();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoInBoxPoints);
    }
    Ok((sum / n as f64).sqrt())
}

/// Per-point endpoint error, `None` where the label is invalid.
pub fn endpoint_errors(estimate: &SceneFlow, label: &SceneFlow) -> Result<Vec<Option<f64>>> {
    estimate.check_aligned(label.len(), "flow estimate")?;
    Ok((0..label.len())
        .map(|i| label.valid[i].then(|| (estimate.vectors[i] - label.vectors[i]).norm()))
        .collect())
}

/// Binary layout per point: three little-endian f32 displacements, then one
/// validity byte (0 or 1).
pub fn encode_flow(flow: &SceneFlow) -> Vec<u8> {
    let mut out = Vec::with_capacity(flow.len() * 13);
    for (v, &ok) in flow.vectors.iter().zip(&flow.valid) {
        for c in [v.x, v.y, v.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.push(ok as u8);
    }
    out
}

pub fn decode_flow(bytes: &[u8]) -> Result<SceneFlow> {
    if !bytes.len().is_multiple_of(13) {
        return Err(Error::Format(format!(
            "flow data length {} is not a multiple of 13",
            bytes.len()
        )));
    }
    let mut flow = SceneFlow::default();
    for chunk in bytes.chunks_exact(13) {
        let c: [f64; 3] = std::array::from_fn(|k| {
            f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().expect("4-byte slice")) as f64
        });
        let flag = match chunk[12] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("invalid validity byte {b}"))),
        };
        flow.vectors.push(Point3::from(c));
        flow.valid.push(flag);
    }
    Ok(flow)
}
