//! Neighbor search and detection-guided aggregation weights for the cost layer.
//!
//! For a point of frame t-1, its K nearest points in frame t are weighted by
//! the normalized reciprocal of their geometric distance, optionally averaged
//! with the normalized reciprocal of the distance between the detection
//! results the two points belong to. A pluggable match function turns each
//! neighbor into a cost vector; with the default displacement surrogate the
//! weighted sum is a soft nearest-neighbor flow estimate.

mod kdtree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowlabel::{assign_points, SceneFlow};
use crate::geom3d::{Box3D, ClassId, Point3};
use crate::par::{map_range, Execution};

pub use kdtree::KdTree;

/// Reciprocal distances are clamped at this value.
pub const DISTANCE_EPS: f64 = 1e-9;

pub const DEFAULT_K: usize = 16;

/// Tolerance of the probability-simplex checks.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Raw detection result of the box a point belongs to:
/// `(px, py, pz, w, l, h, theta, class, score)`, or background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionVector {
    Object {
        center: Point3,
        w: f64,
        l: f64,
        h: f64,
        theta: f64,
        class_id: ClassId,
        score: f64,
    },
    Background,
}

impl DetectionVector {
    pub fn from_box(b: &Box3D) -> Self {
        DetectionVector::Object {
            center: b.center(),
            w: b.w,
            l: b.l,
            h: b.h,
            theta: b.theta,
            class_id: b.class_id,
            score: b.score,
        }
    }

    /// The 9-tuple as stored, with the class as its enumeration index.
    /// `None` for background.
    pub fn raw(&self) -> Option<[f64; 9]> {
        match *self {
            DetectionVector::Object { center, w, l, h, theta, class_id, score } => Some([
                center.x,
                center.y,
                center.z,
                w,
                l,
                h,
                theta,
                class_id.index() as f64,
                score,
            ]),
            DetectionVector::Background => None,
        }
    }
}

/// Scaling that makes the detection tuple a Euclidean vector.
///
/// Positions and sizes stay in meters. The heading becomes
/// `angle_scale * (cos, sin)`, the class a one-hot block scaled by
/// `class_scale`, the score is multiplied by `score_scale`. Background maps
/// to a vector with a single extra coordinate `background_offset`, far from
/// every object vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetric {
    pub angle_scale: f64,
    pub class_scale: f64,
    pub score_scale: f64,
    pub background_offset: f64,
}

impl Default for DetectionMetric {
    fn default() -> Self {
        DetectionMetric {
            angle_scale: 1.0,
            class_scale: 10.0,
            score_scale: 1.0,
            background_offset: 1000.0,
        }
    }
}

const EMBED_DIM: usize = 6 + 2 + ClassId::ALL.len() + 1 + 1;

impl DetectionMetric {
    pub fn embed(&self, v: &DetectionVector) -> [f64; EMBED_DIM] {
        let mut e = [0.0; EMBED_DIM];
        match *v {
            DetectionVector::Object { center, w, l, h, theta, class_id, score } => {
                e[..6].copy_from_slice(&[center.x, center.y, center.z, w, l, h]);
                e[6] = self.angle_scale * theta.cos();
                e[7] = self.angle_scale * theta.sin();
                e[8 + class_id.index()] = self.class_scale;
                e[EMBED_DIM - 2] = self.score_scale * score;
            }
            DetectionVector::Background => e[EMBED_DIM - 1] = self.background_offset,
        }
        e
    }

    pub fn distance(&self, a: &DetectionVector, b: &DetectionVector) -> f64 {
        let (ea, eb) = (self.embed(a), self.embed(b));
        ea.iter().zip(&eb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }
}

/// K nearest frame-t points of one frame t-1 point, ascending by distance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    /// `query - neighbor` for each entry.
    pub directions: Vec<Point3>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn from_sorted(query: Point3, targets: &[Point3], hits: impl IntoIterator<Item = usize>) -> Self {
        let mut set = NeighborSet::default();
        for j in hits {
            let d = query - targets[j];
            set.indices.push(j);
            set.distances.push(d.norm());
            set.directions.push(d);
        }
        set
    }
}

/// Exhaustive K-nearest search. Ties go to the lower index; `k` larger than
/// the target count returns every target.
pub fn knn(query: Point3, targets: &[Point3], k: usize) -> Result<NeighborSet> {
    if targets.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let mut order: Vec<(f64, usize)> = targets.iter().enumerate().map(|(j, p)| ((*p - query).norm_sq(), j)).collect();
    let k = k.min(order.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    Ok(NeighborSet::from_sorted(query, targets, order.into_iter().map(|(_, j)| j)))
}

/// Same contract as [`knn`], answered from a prebuilt index.
pub fn knn_indexed(query: Point3, index: &KdTree, k: usize) -> Result<NeighborSet> {
    if index.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let hits = index.nearest(query, k);
    Ok(NeighborSet::from_sorted(query, index.points(), hits.into_iter().map(|(j, _)| j)))
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Normalized reciprocals of the clamped distances.
    pub fn from_distances(distances: impl IntoIterator<Item = f64>) -> Self {
        let inv: Vec<f64> = distances.into_iter().map(|d| 1.0 / d.max(DISTANCE_EPS)).collect();
        let total: f64 = inv.iter().sum();
        WeightVector(inv.into_iter().map(|w| w / total).collect())
    }

    /// Wraps weights that must already lie on the simplex.
    pub fn try_new(weights: Vec<f64>) -> Result<Self> {
        let v = WeightVector(weights);
        if !v.on_simplex() {
            return Err(Error::InvalidArgument("weights are not on the probability simplex".into()));
        }
        Ok(v)
    }

    pub fn on_simplex(&self) -> bool {
        !self.0.is_empty()
            && self.0.iter().all(|&w| w >= 0.0 && w.is_finite())
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total weight on the selected entries.
    pub fn mass(&self, mut select: impl FnMut(usize) -> bool) -> f64 {
        self.0.iter().enumerate().filter(|(i, _)| select(*i)).map(|(_, w)| w).sum()
    }
}

pub fn weights_geometric(neighbors: &NeighborSet) -> WeightVector {
    WeightVector::from_distances(neighbors.distances.iter().copied())
}

pub fn weights_detection(
    query_det: &DetectionVector,
    neighbor_dets: &[DetectionVector],
    metric: &DetectionMetric,
) -> WeightVector {
    WeightVector::from_distances(neighbor_dets.iter().map(|d| metric.distance(query_det, d)))
}

/// Elementwise mean of the geometric and detection weights.
pub fn weights_guided(geom: &WeightVector, det: &WeightVector) -> Result<WeightVector> {
    if geom.len() != det.len() {
        return Err(Error::LengthMismatch {
            what: "detection weights",
            expected: geom.len(),
            actual: det.len(),
        });
    }
    Ok(WeightVector(
        geom.0.iter().zip(&det.0).map(|(a, b)| 0.5 * (a + b)).collect(),
    ))
}

/// The per-neighbor match function `h(f_i, f_j, p_i - p_j)`.
pub trait MatchFunction: Sync {
    fn eval(&self, query_feature: &[f64], neighbor_feature: &[f64], direction: Point3) -> Vec<f64>;
}

/// `h = p_j - p_i`: aggregation yields a displacement estimate.
#[derive(Debug, Clone, Copy, Default)]
pub struct DisplacementSurrogate;

impl MatchFunction for DisplacementSurrogate {
    fn eval(&self, _: &[f64], _: &[f64], direction: Point3) -> Vec<f64> {
        (-direction).to_array().to_vec()
    }
}

/// Weighted sum of `h` over the neighborhood.
pub fn aggregate_cost<H: MatchFunction + ?Sized>(
    query_feature: &[f64],
    neighbor_features: &[&[f64]],
    directions: &[Point3],
    weights: &WeightVector,
    h: &H,
) -> Result<Vec<f64>> {
    if directions.len() != weights.len() || neighbor_features.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "neighbor inputs",
            expected: weights.len(),
            actual: directions.len().min(neighbor_features.len()),
        });
    }
    let mut acc: Option<Vec<f64>> = None;
    for ((f_j, &dir), &w) in neighbor_features.iter().zip(directions).zip(weights.as_slice()) {
        let out = h.eval(query_feature, f_j, dir);
        match acc.as_mut() {
            None => acc = Some(out.into_iter().map(|v| v * w).collect()),
            Some(a) => {
                if a.len() != out.len() {
                    return Err(Error::LengthMismatch {
                        what: "match function output",
                        expected: a.len(),
                        actual: out.len(),
                    });
                }
                for (x, v) in a.iter_mut().zip(out) {
                    *x += v * w;
                }
            }
        }
    }
    acc.ok_or(Error::EmptyPointSet)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Geometric,
    #[default]
    Guided,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(WeightMode::Geometric),
            "guided" => Ok(WeightMode::Guided),
            other => Err(Error::InvalidArgument(format!("unknown weight mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftNnParams {
    pub k: usize,
    pub mode: WeightMode,
    pub metric: DetectionMetric,
}

impl Default for SoftNnParams {
    fn default() -> Self {
        SoftNnParams {
            k: DEFAULT_K,
            mode: WeightMode::Guided,
            metric: DetectionMetric::default(),
        }
    }
}

/// Detection vector of every point: the enclosing detection box (nearest
/// center when several contain it), else background.
pub fn point_detections(cloud: &[Point3], detections: &[Box3D]) -> Vec<DetectionVector> {
    let keyed: Vec<(usize, Box3D)> = detections.iter().copied().enumerate().collect();
    assign_points(cloud, &keyed)
        .into_iter()
        .map(|o| o.map_or(DetectionVector::Background, |bi| DetectionVector::from_box(&detections[bi])))
        .collect()
}

/// Neighborhood of one query point together with all three weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBreakdown {
    pub neighbors: NeighborSet,
    pub geometric: WeightVector,
    pub detection: WeightVector,
    pub guided: WeightVector,
}

pub fn weight_breakdown(
    query: Point3,
    query_det: &DetectionVector,
    next_index: &KdTree,
    next_dets: &[DetectionVector],
    k: usize,
    metric: &DetectionMetric,
) -> Result<WeightBreakdown> {
    let neighbors = knn_indexed(query, next_index, k)?;
    let geometric = weights_geometric(&neighbors);
    let dets: Vec<DetectionVector> = neighbors.indices.iter().map(|&j| next_dets[j]).collect();
    let detection = weights_detection(query_det, &dets, metric);
    let guided = weights_guided(&geometric, &detection)?;
    Ok(WeightBreakdown {
        neighbors,
        geometric,
        detection,
        guided,
    })
}

/// Soft nearest-neighbor flow for every point of `cloud_prev` inside a
/// detection box; other points are left invalid.
pub fn estimate_flow_softnn(
    cloud_prev: &[Point3],
    dets_prev: &[Box3D],
    cloud_next: &[Point3],
    dets_next: &[Box3D],
    params: &SoftNnParams,
    exec: Execution,
) -> Result<SceneFlow> {
    if cloud_next.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if params.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let index = KdTree::build(cloud_next);
    let prev_dets = point_detections(cloud_prev, dets_prev);
    let next_dets = match params.mode {
        WeightMode::Guided => point_detections(cloud_next, dets_next),
        WeightMode::Geometric => Vec::new(),
    };
    let h = DisplacementSurrogate;
    let per_point = map_range(exec, cloud_prev.len(), |i| -> Result<Option<Point3>> {
        if prev_dets[i] == DetectionVector::Background {
            return Ok(None);
        }
        let neighbors = knn_indexed(cloud_prev[i], &index, params.k)?;
        let geometric = weights_geometric(&neighbors);
        let weights = match params.mode {
            WeightMode::Geometric => geometric,
            WeightMode::Guided => {
                let dets: Vec<DetectionVector> = neighbors.indices.iter().map(|&j| next_dets[j]).collect();
                weights_guided(&geometric, &weights_detection(&prev_dets[i], &dets, &params.metric))?
            }
        };
        let empty: Vec<&[f64]> = vec![&[]; neighbors.len()];
        let c = aggregate_cost(&[], &empty, &neighbors.directions, &weights, &h)?;
        Ok(Some(Point3::new(c[0], c[1], c[2])))
    });
    let mut flow = SceneFlow::invalid(cloud_prev.len());
    for (i, r) in per_point.into_iter().enumerate() {
        if let Some(v) = r? {
            flow.vectors[i] = v;
            flow.valid[i] = true;
        }
    }
    Ok(flow)
}
