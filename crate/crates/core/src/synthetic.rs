//! Seeded synthetic scenes with rigidly moving objects, used where recorded
//! data is unavailable. Each object travels in its own lane with an
//! sinusoidal lateral path, entering and leaving a fixed observation window.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom3d::{Box3D, ClassId, Point3};
use crate::kitti::{Calibration, Cloud, LabeledFrame, LabeledObject, Sequence, VAL_SEQUENCES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub frames: usize,
    pub cars: usize,
    pub pedestrians: usize,
    /// Meters per frame.
    pub car_speed: (f64, f64),
    pub pedestrian_speed: (f64, f64),
    /// Peak lateral offset from the lane center, meters.
    pub lateral_amplitude: f64,
    /// Meters traveled per lateral oscillation.
    pub wavelength: f64,
    pub lane_spacing: f64,
    /// Half-size of the square observation window centered on (half_extent, 0).
    pub half_extent: f64,
    pub car_points: usize,
    pub pedestrian_points: usize,
    pub ground_spacing: f64,
    pub poles: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            frames: 50,
            cars: 5,
            pedestrians: 3,
            car_speed: (1.0, 2.0),
            pedestrian_speed: (0.1, 0.3),
            lateral_amplitude: 1.5,
            wavelength: 40.0,
            lane_spacing: 10.0,
            half_extent: 40.0,
            car_points: 60,
            pedestrian_points: 30,
            ground_spacing: 2.5,
            poles: 8,
        }
    }
}

impl SyntheticConfig {
    /// Faster traffic, the setting where frame-to-frame overlap alone breaks down.
    pub fn fast() -> Self {
        SyntheticConfig {
            car_speed: (2.5, 3.5),
            pedestrian_speed: (0.6, 1.0),
            ..Default::default()
        }
    }

    fn lanes(&self) -> usize {
        ((2.0 * self.half_extent) / self.lane_spacing).floor() as usize
    }
}

struct Agent {
    class_id: ClassId,
    dims: (f64, f64, f64),
    points: Vec<Point3>,
    poses: Vec<Option<(Point3, f64)>>,
}

fn canonical_points(rng: &mut ChaCha8Rng, (l, w, h): (f64, f64, f64), n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| {
            Point3::new(
                rng.random_range(-0.45..0.45) * l,
                rng.random_range(-0.45..0.45) * w,
                rng.random_range(-0.45..0.45) * h,
            )
        })
        .collect()
}

/// One deterministic sequence.
pub fn synthetic_sequence(name: &str, seed: u64, config: &SyntheticConfig) -> Result<Sequence> {
    let lanes = config.lanes();
    if config.cars + config.pedestrians > lanes {
        return Err(Error::InvalidArgument(format!(
            "{} objects do not fit in {lanes} lanes",
            config.cars + config.pedestrians
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x_min, x_max) = (0.0, 2.0 * config.half_extent);
    let y_of_lane = |i: usize| -config.half_extent + config.lane_spacing * (i as f64 + 0.5);
    let mut lane_ids: Vec<usize> = (0..lanes).collect();
    for i in (1..lane_ids.len()).rev() {
        lane_ids.swap(i, rng.random_range(0..=i));
    }

    let mut agents = Vec::new();
    for k in 0..config.cars + config.pedestrians {
        let is_car = k < config.cars;
        let (class_id, dims, speed, n_pts) = if is_car {
            let dims = (rng.random_range(3.8..4.6), rng.random_range(1.6..1.9), rng.random_range(1.4..1.7));
            (ClassId::Car, dims, rng.random_range(config.car_speed.0..=config.car_speed.1), config.car_points)
        } else {
            let dims = (rng.random_range(0.6..0.9), rng.random_range(0.5..0.7), rng.random_range(1.6..1.85));
            (ClassId::Pedestrian, dims, rng.random_range(config.pedestrian_speed.0..=config.pedestrian_speed.1), config.pedestrian_points)
        };
        let forward = rng.random_bool(0.5);
        let dir = if forward { 1.0 } else { -1.0 };
        let kappa = 2.0 * PI / config.wavelength;
        let phase = rng.random_range(0.0..2.0 * PI);
        let lane_y = y_of_lane(lane_ids[k]);
        // start before the window so objects enter at different frames
        let lead = rng.random_range(0.0..0.3 * config.frames as f64) * speed;
        let x0 = if forward { x_min - lead } else { x_max + lead };
        let poses = (0..config.frames)
            .map(|t| {
                let s = speed * t as f64;
                let arg = kappa * s + phase;
                let pos = Point3::new(x0 + dir * s, lane_y + config.lateral_amplitude * arg.sin(), dims.2 / 2.0);
                let heading = (config.lateral_amplitude * kappa * arg.cos()).atan2(dir);
                (x_min..=x_max).contains(&pos.x).then_some((pos, heading))
            })
            .collect();
        agents.push(Agent {
            class_id,
            dims,
            points: canonical_points(&mut rng, dims, n_pts),
            poses,
        });
    }

    let mut background = Cloud::default();
    let steps = (2.0 * config.half_extent / config.ground_spacing) as usize;
    for i in 0..=steps {
        for j in 0..=steps {
            let p = Point3::new(
                x_min + i as f64 * config.ground_spacing,
                -config.half_extent + j as f64 * config.ground_spacing,
                -0.1,
            );
            background.push(p, 0.1);
        }
    }
    for _ in 0..config.poles {
        // poles sit on lane boundaries, away from traffic
        let lane = rng.random_range(0..=lanes) as f64;
        let base = Point3::new(rng.random_range(x_min..x_max), -config.half_extent + lane * config.lane_spacing, 0.0);
        for s in 0..10 {
            background.push(base + Point3::new(0.0, 0.0, 0.3 * s as f64), 0.8);
        }
    }

    let mut frames = Vec::with_capacity(config.frames);
    let mut clouds = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        let mut cloud = background.clone();
        let mut frame = LabeledFrame {
            frame_index: t,
            objects: Vec::new(),
        };
        for (id, a) in agents.iter().enumerate() {
            let Some((c, heading)) = a.poses[t] else { continue };
            let (l, w, h) = a.dims;
            let bbox = Box3D::new(c, l, w, h, heading).with_class(a.class_id);
            for p in &a.points {
                cloud.push(bbox.to_world(*p), 0.5);
            }
            frame.objects.push(LabeledObject::new(id as i64, bbox));
        }
        frames.push(frame);
        clouds.push(cloud);
    }
    Sequence::in_memory(name, frames, clouds, Calibration::kitti_axes([0.0, -0.08, -0.27]))
}

/// Stand-ins for the validation split, one per validation sequence name.
pub fn synthetic_validation_set(seed: u64, config: &SyntheticConfig) -> Result<Vec<Sequence>> {
    VAL_SEQUENCES
        .iter()
        .enumerate()
        .map(|(i, name)| synthetic_sequence(name, seed.wrapping_add(i as u64), config))
        .collect()
}
