//! Trajectory lifecycle over a sequence.
//!
//! Each frame, every live trajectory is moved into the current frame by the
//! scene flow of its interior points, the moved boxes are matched to the
//! detections, and the match lists drive births, confirmations and deaths.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assoc::{associate, predict_track_box, IouKind, PredictionTier, DEFAULT_IOU_GATE};
use crate::error::{Error, Result};
use crate::flowlabel::{add_noise, scene_flow_labels, SceneFlow};
use crate::geom3d::{Box3D, ClassId, Point3};
use crate::guided::{estimate_flow_softnn, SoftNnParams, WeightMode, DEFAULT_K};
use crate::kitti::{LabeledFrame, Sequence, TrackedBox};
use crate::par::{try_map_slice, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    /// `(frame, box)` for every frame the trajectory was alive.
    pub boxes: Vec<(usize, Box3D)>,
    pub hits: u32,
    pub misses: u32,
    pub state: TrackState,
    /// Whether the latest update was a match (or the birth).
    pub updated: bool,
}

impl Trajectory {
    pub fn last_box(&self) -> &Box3D {
        &self.boxes.last().expect("trajectories start with a box").1
    }
}

/// Where per-frame scene flow comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub enum FlowSpec {
    /// Labels computed from ground truth.
    #[default]
    Oracle,
    /// Ground-truth labels plus Gaussian noise with this sigma (meters).
    Noisy(f64),
    /// Soft nearest-neighbor estimate; `None` takes the configured weight mode.
    SoftNn(Option<WeightMode>),
    /// Zero displacement everywhere: constant-position association.
    Zero,
}


impl FromStr for FlowSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown flow provider {s:?}"));
        match s.split_once(':') {
            None => match s {
                "oracle" => Ok(FlowSpec::Oracle),
                "zero" => Ok(FlowSpec::Zero),
                "softnn" => Ok(FlowSpec::SoftNn(None)),
                _ => Err(bad()),
            },
            Some(("noisy", sigma)) => {
                let sigma: f64 = sigma.parse().map_err(|_| bad())?;
                if !(sigma >= 0.0) || !sigma.is_finite() {
                    return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
                }
                Ok(FlowSpec::Noisy(sigma))
            }
            Some(("softnn", mode)) => Ok(FlowSpec::SoftNn(Some(mode.parse()?))),
            Some(_) => Err(bad()),
        }
    }
}

impl fmt::Display for FlowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowSpec::Oracle => write!(f, "oracle"),
            FlowSpec::Noisy(s) => write!(f, "noisy:{s}"),
            FlowSpec::SoftNn(None) => write!(f, "softnn"),
            FlowSpec::SoftNn(Some(WeightMode::Geometric)) => write!(f, "softnn:geometric"),
            FlowSpec::SoftNn(Some(WeightMode::Guided)) => write!(f, "softnn:guided"),
            FlowSpec::Zero => write!(f, "zero"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Consecutive matches before a trajectory is confirmed.
    pub min_hits: u32,
    /// Consecutive misses tolerated; one more kills the trajectory.
    pub max_misses: u32,
    pub iou_gate: f64,
    pub iou_kind: IouKind,
    pub k: usize,
    pub flow: FlowSpec,
    pub weights: WeightMode,
    /// Also report tentative trajectories.
    pub output_tentative: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            min_hits: 3,
            max_misses: 2,
            iou_gate: DEFAULT_IOU_GATE,
            iou_kind: IouKind::Bev,
            k: DEFAULT_K,
            flow: FlowSpec::Oracle,
            weights: WeightMode::Guided,
            output_tentative: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_hits < 1 {
            return Err(Error::InvalidArgument("min_hits must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.iou_gate) {
            return Err(Error::InvalidArgument(format!("iou_gate {} outside [0, 1]", self.iou_gate)));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if let FlowSpec::Noisy(s) = self.flow {
            if !(s >= 0.0) {
                return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

/// Per-frame counters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FrameStats {
    pub frame: usize,
    pub detections: usize,
    pub matches: usize,
    pub births: usize,
    pub deaths: usize,
    pub mean_match_iou: f64,
    pub rigid: usize,
    pub translation_only: usize,
    pub constant: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub boxes: Vec<TrackedBox>,
    pub stats: FrameStats,
}

/// Online tracker state. Single-threaded; one instance per sequence and class.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    exec: Execution,
    live: Vec<Trajectory>,
    dead: Vec<Trajectory>,
    next_id: u64,
    frame: usize,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tracker {
            config,
            exec: Execution::default(),
            live: Vec::new(),
            dead: Vec::new(),
            next_id: 1,
            frame: 0,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn live(&self) -> &[Trajectory] {
        &self.live
    }

    pub fn dead(&self) -> &[Trajectory] {
        &self.dead
    }

    /// Consumes one frame. `flow` must be aligned with `cloud_prev`, the scan
    /// of the previous frame (empty on the first frame).
    pub fn step(&mut self, detections: &[Box3D], cloud_prev: &[Point3], flow: &SceneFlow) -> Result<FrameOutput> {
        flow.check_aligned(cloud_prev.len(), "scene flow")?;
        let frame = self.frame;
        let mut stats = FrameStats {
            frame,
            detections: detections.len(),
            ..FrameStats::default()
        };

        let predictions = try_map_slice(self.exec, &self.live, |t| predict_track_box(t.last_box(), cloud_prev, flow))?;
        for p in &predictions {
            match p.tier {
                PredictionTier::Rigid => stats.rigid += 1,
                PredictionTier::TranslationOnly => stats.translation_only += 1,
                PredictionTier::Constant => stats.constant += 1,
            }
        }
        let predicted: Vec<Box3D> = predictions.iter().map(|p| p.bbox).collect();
        let result = associate(&predicted, detections, self.config.iou_gate, self.config.iou_kind);

        for &(ti, di, iou) in &result.matches {
            let t = &mut self.live[ti];
            t.boxes.push((frame, detections[di]));
            t.hits += 1;
            t.misses = 0;
            t.updated = true;
            if t.state == TrackState::Tentative && t.hits >= self.config.min_hits {
                t.state = TrackState::Confirmed;
            }
            stats.mean_match_iou += iou;
        }
        stats.matches = result.matches.len();
        if stats.matches > 0 {
            stats.mean_match_iou /= stats.matches as f64;
        }
        for &ti in &result.unmatched_tracks {
            let t = &mut self.live[ti];
            t.hits = 0;
            t.misses += 1;
            t.updated = false;
            if t.misses > self.config.max_misses {
                t.state = TrackState::Dead;
            } else {
                t.boxes.push((frame, predicted[ti]));
            }
        }
        let (dead, live): (Vec<Trajectory>, Vec<Trajectory>) =
            std::mem::take(&mut self.live).into_iter().partition(|t| t.state == TrackState::Dead);
        stats.deaths = dead.len();
        self.dead.extend(dead);
        self.live = live;

        for &di in &result.unmatched_detections {
            let state = if self.config.min_hits <= 1 {
                TrackState::Confirmed
            } else {
                TrackState::Tentative
            };
            self.live.push(Trajectory {
                id: self.next_id,
                boxes: vec![(frame, detections[di])],
                hits: 1,
                misses: 0,
                state,
                updated: true,
            });
            self.next_id += 1;
            stats.births += 1;
        }

        let boxes = self
            .live
            .iter()
            .filter(|t| t.updated && (t.state == TrackState::Confirmed || self.config.output_tentative))
            .map(|t| TrackedBox {
                track_id: t.id,
                bbox: *t.last_box(),
            })
            .collect();
        self.frame += 1;
        Ok(FrameOutput { boxes, stats })
    }
}

/// Everything a flow provider may look at for the pair `(frame - 1, frame)`.
#[derive(Debug, Clone, Copy)]
pub struct FramePair<'a> {
    pub frame: usize,
    pub cloud_prev: &'a [Point3],
    pub cloud_next: &'a [Point3],
    pub labels_prev: Option<&'a LabeledFrame>,
    pub labels_next: Option<&'a LabeledFrame>,
    pub dets_prev: &'a [Box3D],
    pub dets_next: &'a [Box3D],
}

pub trait FlowProvider: Send + Sync {
    fn flow(&self, pair: &FramePair<'_>) -> Result<SceneFlow>;
}

/// Ground-truth flow, optionally with seeded Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleFlow {
    pub sigma: f64,
    pub seed: u64,
}

impl FlowProvider for OracleFlow {
    fn flow(&self, pair: &FramePair<'_>) -> Result<SceneFlow> {
        let (Some(prev), Some(next)) = (pair.labels_prev, pair.labels_next) else {
            return Err(Error::InvalidArgument("oracle flow needs ground-truth labels".into()));
        };
        let mut flow = scene_flow_labels(prev, next, pair.cloud_prev);
        if self.sigma > 0.0 {
            let seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ pair.frame as u64;
            add_noise(&mut flow, self.sigma, seed);
        }
        Ok(flow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftNnFlow {
    pub params: SoftNnParams,
    pub exec: Execution,
}

impl FlowProvider for SoftNnFlow {
    fn flow(&self, pair: &FramePair<'_>) -> Result<SceneFlow> {
        if pair.cloud_next.is_empty() {
            return Ok(SceneFlow::invalid(pair.cloud_prev.len()));
        }
        estimate_flow_softnn(pair.cloud_prev, pair.dets_prev, pair.cloud_next, pair.dets_next, &self.params, self.exec)
    }
}

/// Zero displacement for every point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ZeroFlow;

impl FlowProvider for ZeroFlow {
    fn flow(&self, pair: &FramePair<'_>) -> Result<SceneFlow> {
        let n = pair.cloud_prev.len();
        Ok(SceneFlow {
            vectors: vec![Point3::ZERO; n],
            valid: vec![true; n],
        })
    }
}

/// The constant-position reference: tracking reduces to plain IoU matching
/// of the previous boxes.
pub fn baseline_constant_position() -> ZeroFlow {
    ZeroFlow
}

pub fn make_provider(config: &TrackerConfig, seed: u64, exec: Execution) -> Box<dyn FlowProvider> {
    match config.flow {
        FlowSpec::Oracle => Box::new(OracleFlow { sigma: 0.0, seed }),
        FlowSpec::Noisy(sigma) => Box::new(OracleFlow { sigma, seed }),
        FlowSpec::SoftNn(mode) => Box::new(SoftNnFlow {
            params: SoftNnParams {
                k: config.k,
                mode: mode.unwrap_or(config.weights),
                ..SoftNnParams::default()
            },
            exec,
        }),
        FlowSpec::Zero => Box::new(ZeroFlow),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackingOutput {
    pub frames: Vec<Vec<TrackedBox>>,
    pub stats: Vec<FrameStats>,
    pub trajectories_created: u64,
}

impl TrackingOutput {
    /// `(rigid, translation-only, constant)` prediction counts over the run.
    pub fn tier_totals(&self) -> (usize, usize, usize) {
        self.stats.iter().fold((0, 0, 0), |acc, s| {
            (acc.0 + s.rigid, acc.1 + s.translation_only, acc.2 + s.constant)
        })
    }
}

/// Runs a tracker over every frame of `seq`.
pub fn track_sequence(
    seq: &Sequence,
    detections: &[Vec<Box3D>],
    config: &TrackerConfig,
    provider: &dyn FlowProvider,
) -> Result<TrackingOutput> {
    if detections.len() != seq.len() {
        return Err(Error::LengthMismatch {
            what: "detections per frame",
            expected: seq.len(),
            actual: detections.len(),
        });
    }
    let mut tracker = Tracker::new(*config)?;
    let mut out = TrackingOutput::default();
    let mut prev_cloud: Vec<Point3> = Vec::new();
    for t in 0..seq.len() {
        let cloud = seq.cloud(t)?.into_owned().points;
        let flow = if t == 0 {
            SceneFlow::default()
        } else {
            provider.flow(&FramePair {
                frame: t,
                cloud_prev: &prev_cloud,
                cloud_next: &cloud,
                labels_prev: seq.frames.get(t - 1),
                labels_next: seq.frames.get(t),
                dets_prev: &detections[t - 1],
                dets_next: &detections[t],
            })?
        };
        let frame = tracker.step(&detections[t], &prev_cloud, &flow)?;
        out.frames.push(frame.boxes);
        out.stats.push(frame.stats);
        prev_cloud = cloud;
    }
    out.trajectories_created = tracker.next_id - 1;
    Ok(out)
}

/// Ground-truth boxes of one class, frame by frame, usable as detections.
pub fn ground_truth_detections(seq: &Sequence, class_id: ClassId) -> Vec<Vec<Box3D>> {
    seq.frames
        .iter()
        .map(|f| f.objects.iter().filter(|o| o.bbox.class_id == class_id).map(|o| o.bbox).collect())
        .collect()
}
