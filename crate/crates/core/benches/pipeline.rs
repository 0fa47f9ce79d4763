use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowtrack::geom3d::{iou_3d, Box3D, ClassId, Point3};
use flowtrack::guided::{estimate_flow_softnn, SoftNnParams};
use flowtrack::par::{map_range, Execution};
use flowtrack::synthetic::{synthetic_sequence, SyntheticConfig};
use flowtrack::tracker::{ground_truth_detections, make_provider, track_sequence, FlowSpec, TrackerConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn softnn_flow(c: &mut Criterion) {
    let seq = synthetic_sequence("bench", 1, &SyntheticConfig { frames: 2, ..Default::default() }).unwrap();
    let (a, b) = (seq.cloud(0).unwrap().into_owned(), seq.cloud(1).unwrap().into_owned());
    let (da, db) = (seq.frames[0].boxes(), seq.frames[1].boxes());
    let params = SoftNnParams::default();
    let mut group = c.benchmark_group("softnn_flow");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| estimate_flow_softnn(black_box(&a.points), &da, &b.points, &db, &params, exec).unwrap())
        });
    }
    group.finish();
}

fn iou_batch(c: &mut Criterion) {
    let boxes: Vec<Box3D> = (0..400)
        .map(|i| {
            let f = i as f64;
            Box3D::new(Point3::new((f * 0.37) % 20.0, (f * 0.61) % 12.0, 0.8), 4.2, 1.8, 1.6, f * 0.1)
        })
        .collect();
    let n = boxes.len();
    let mut group = c.benchmark_group("iou_3d_all_pairs");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| map_range(exec, n * n, |k| iou_3d(&boxes[k / n], &boxes[k % n])))
        });
    }
    group.finish();
}

fn tracking(c: &mut Criterion) {
    let seq = synthetic_sequence("bench", 2, &SyntheticConfig { frames: 20, ..Default::default() }).unwrap();
    let dets = ground_truth_detections(&seq, ClassId::Car);
    let config = TrackerConfig {
        flow: FlowSpec::SoftNn(None),
        ..Default::default()
    };
    let mut group = c.benchmark_group("track_softnn_20_frames");
    group.sample_size(10);
    for (name, exec) in MODES {
        let provider = make_provider(&config, 0, exec);
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| track_sequence(&seq, black_box(&dets), &config, provider.as_ref()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, softnn_flow, iou_batch, tracking);
criterion_main!(benches);
