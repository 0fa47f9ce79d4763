use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowtrack::assoc::IouKind;
use flowtrack::dataset::{augment_sequence, build_object_database, make_hard_set, AugmentConfig, HardSetConfig};
use flowtrack::flowlabel::{encode_flow, flow_rmse, scene_flow_labels};
use flowtrack::geom3d::{Box3D, ClassId};
use flowtrack::guided::{point_detections, weight_breakdown, DetectionMetric, DetectionVector, KdTree, WeightMode};
use flowtrack::hota::{accumulate, HotaConfig, HotaCounts};
use flowtrack::kitti::{parse_label_file, write_atomic, write_results, KittiTracking, Sequence, TrackedBox, TRAIN_SEQUENCES, VAL_SEQUENCES};
use flowtrack::par::Execution;
use flowtrack::synthetic::{synthetic_sequence, SyntheticConfig};
use flowtrack::tracker::{make_provider, track_sequence, FlowSpec, FramePair, TrackerConfig};

use crate::config::FileConfig;
use crate::{AugmentArgs, DataArgs, EvalArgs, Failure, FlowArgs, PerturbArgs, SynthArgs, TrackArgs, TrackerArgs};

const DEFAULT_SEQS: &str = "val";
const DEFAULT_CLASS: &str = "car";

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn data_err(m: impl Into<String>) -> Failure {
    Failure::Data(anyhow::anyhow!(m.into()))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| usage(format!("--{flag} is required")))
}

struct Common {
    data: Option<PathBuf>,
    seqs: String,
    classes: Vec<ClassId>,
    seed: u64,
    out: Option<PathBuf>,
}

fn common(a: &DataArgs, f: &FileConfig) -> Result<Common, Failure> {
    let class = a.class.clone().or_else(|| f.class.clone()).unwrap_or_else(|| DEFAULT_CLASS.into());
    let classes = class
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<ClassId>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Common {
        data: a.data.clone().or_else(|| f.data.clone()),
        seqs: a.seqs.clone().or_else(|| f.seqs.clone()).unwrap_or_else(|| DEFAULT_SEQS.into()),
        classes,
        seed: a.seed.or(f.seed).unwrap_or(0),
        out: a.out.clone().or_else(|| f.out.clone()),
    })
}

fn open_dataset(path: Option<&Path>) -> Result<KittiTracking, Failure> {
    let path = required(path, "data")?;
    KittiTracking::open(path).map_err(|e| Failure::Data(e.into()))
}

/// Resolves a sequence selection. Presets keep only sequences present in the dataset.
fn select(spec: &str, ds: Option<&KittiTracking>) -> Result<Vec<String>, Failure> {
    let present = match ds {
        Some(ds) => Some(ds.sequences()?),
        None => None,
    };
    let preset = |names: &[&str]| -> Vec<String> {
        names
            .iter()
            .map(|s| s.to_string())
            .filter(|s| present.as_ref().is_none_or(|p| p.contains(s)))
            .collect()
    };
    let names = match spec.trim() {
        "val" => preset(&VAL_SEQUENCES),
        "train" => preset(&TRAIN_SEQUENCES),
        "all" => match &present {
            Some(p) => p.clone(),
            None => TRAIN_SEQUENCES.iter().chain(&VAL_SEQUENCES).map(|s| s.to_string()).collect(),
        },
        list => {
            let names: Vec<String> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
            if let Some(p) = &present {
                if let Some(missing) = names.iter().find(|n| !p.contains(n)) {
                    return Err(data_err(format!("sequence {missing} not found in dataset")));
                }
            }
            names
        }
    };
    Ok(names)
}

fn tracker_config(t: &TrackerArgs, f: &FileConfig) -> Result<TrackerConfig, Failure> {
    let d = TrackerConfig::default();
    let weights = match t.weights.clone().or_else(|| f.weights.clone()) {
        Some(w) => w.parse::<WeightMode>()?,
        None => d.weights,
    };
    let flow = match t.flow.clone().or_else(|| f.flow.clone()) {
        Some(s) => s.parse::<FlowSpec>()?,
        None => d.flow,
    };
    let config = TrackerConfig {
        min_hits: t.min_hits.or(f.min_hits).unwrap_or(d.min_hits),
        max_misses: t.max_misses.or(f.max_misses).unwrap_or(d.max_misses),
        iou_gate: t.iou_gate.or(f.iou_gate).unwrap_or(d.iou_gate),
        k: t.k.or(f.k).unwrap_or(d.k),
        flow,
        weights,
        ..d
    };
    config.validate()?;
    Ok(config)
}

/// Per-sequence seed that does not depend on processing order.
fn sequence_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h
}

fn for_each_sequence<T, F>(names: &[String], f: F) -> Result<Vec<T>, Failure>
where
    T: Send,
    F: Fn(&str) -> Result<T, Failure> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        names.par_iter().map(|n| f(n)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        names.iter().map(|n| f(n)).collect()
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| Failure::Data(e.into()))
}

fn class_key(c: ClassId) -> String {
    c.kitti_name().to_ascii_lowercase()
}

fn load_sequence(ds: &KittiTracking, name: &str) -> Result<Sequence, Failure> {
    ds.load_sequence(name).map_err(|e| Failure::Data(e.into()))
}

fn result_file(dir: &Path, name: &str) -> Option<PathBuf> {
    [dir.join("data").join(format!("{name}.txt")), dir.join(format!("{name}.txt"))]
        .into_iter()
        .find(|p| p.is_file())
}

fn read_label_frames(path: &Path, seq: &Sequence) -> Result<Vec<Vec<(i64, Box3D)>>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let frames = parse_label_file(&text, &seq.calib).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    if frames.len() > seq.len() {
        return Err(data_err(format!(
            "{}: frame {} beyond the {} frames of sequence {}",
            path.display(),
            frames.len() - 1,
            seq.len(),
            seq.name
        )));
    }
    let mut out: Vec<Vec<(i64, Box3D)>> = frames.into_iter().map(|f| f.objects.into_iter().map(|o| (o.track_id, o.bbox)).collect()).collect();
    out.resize(seq.len(), Vec::new());
    Ok(out)
}

struct TrackSummary {
    frames: usize,
    lines: Vec<String>,
}

pub fn track(a: TrackArgs, f: &FileConfig) -> Result<(), Failure> {
    let c = common(&a.data, f)?;
    let mut config = tracker_config(&a.tracker, f)?;
    config.output_tentative = a.tentative;
    let detections_dir = a.detections.clone().or_else(|| f.detections.clone());
    let ds = open_dataset(c.data.as_deref())?;
    let names = select(&c.seqs, Some(&ds))?;
    if names.is_empty() {
        println!("no sequences selected");
        return Ok(());
    }
    let out = required(c.out.clone(), "out")?;
    let started = Instant::now();

    let summaries = for_each_sequence(&names, |name| {
        let seq = load_sequence(&ds, name)?;
        let all_dets: Vec<Vec<Box3D>> = match &detections_dir {
            Some(dir) => {
                let path = result_file(dir, name).ok_or_else(|| data_err(format!("no detection file for sequence {name} in {}", dir.display())))?;
                read_label_frames(&path, &seq)?.into_iter().map(|f| f.into_iter().map(|(_, b)| b).collect()).collect()
            }
            None => seq.frames.iter().map(|f| f.boxes()).collect(),
        };
        let provider = make_provider(&config, sequence_seed(c.seed, name), Execution::default());
        let mut merged: Vec<Vec<TrackedBox>> = vec![Vec::new(); seq.len()];
        let mut ids: BTreeMap<(usize, u64), u64> = BTreeMap::new();
        let mut csv = String::from("class,frame,detections,matches,births,deaths,mean_match_iou,rigid,translation_only,constant\n");
        let mut lines = Vec::new();
        for (ci, &class) in c.classes.iter().enumerate() {
            let dets: Vec<Vec<Box3D>> = all_dets.iter().map(|f| f.iter().filter(|b| b.class_id == class).copied().collect()).collect();
            let run = track_sequence(&seq, &dets, &config, provider.as_ref())?;
            for (t, boxes) in run.frames.iter().enumerate() {
                for b in boxes {
                    let next = ids.len() as u64 + 1;
                    let id = *ids.entry((ci, b.track_id)).or_insert(next);
                    merged[t].push(TrackedBox { track_id: id, bbox: b.bbox });
                }
            }
            for s in &run.stats {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{:.6},{},{},{}",
                    class_key(class),
                    s.frame,
                    s.detections,
                    s.matches,
                    s.births,
                    s.deaths,
                    s.mean_match_iou,
                    s.rigid,
                    s.translation_only,
                    s.constant
                );
            }
            let (rigid, trans, constant) = run.tier_totals();
            let key = format!("{name}.{}", class_key(class));
            let reported: usize = run.frames.iter().map(Vec::len).sum();
            lines.push(format!("{key}.trajectories_created: {}", run.trajectories_created));
            lines.push(format!("{key}.boxes_reported: {reported}"));
            lines.push(format!("{key}.predictions_rigid: {rigid}"));
            lines.push(format!("{key}.predictions_translation_only: {trans}"));
            lines.push(format!("{key}.predictions_constant: {constant}"));
        }
        write(&out.join("data").join(format!("{name}.txt")), write_results(&merged, &seq.calib).as_bytes())?;
        write(&out.join("plots").join(format!("{name}.csv")), csv.as_bytes())?;
        Ok(TrackSummary {
            frames: seq.len(),
            lines,
        })
    })?;

    let mut text = String::new();
    let _ = writeln!(text, "flow: {}", config.flow);
    let _ = writeln!(text, "sequences: {}", summaries.len());
    let _ = writeln!(text, "frames: {}", summaries.iter().map(|s| s.frames).sum::<usize>());
    for s in &summaries {
        for l in &s.lines {
            let _ = writeln!(text, "{l}");
        }
    }
    let _ = writeln!(text, "wall_time_s: {:.3}", started.elapsed().as_secs_f64());
    write(&out.join("summary.txt"), text.as_bytes())?;
    println!("tracked {} sequences into {}", summaries.len(), out.join("data").display());
    Ok(())
}

pub fn evaluate(a: EvalArgs, f: &FileConfig) -> Result<(), Failure> {
    let c = common(&a.data, f)?;
    let results = required(a.results.clone().or_else(|| f.results.clone()), "results")?;
    let similarity = match a.similarity.clone().or_else(|| f.similarity.clone()).as_deref() {
        None | Some("3d") => IouKind::ThreeD,
        Some("bev") => IouKind::Bev,
        Some(other) => return Err(usage(format!("unknown similarity {other:?} (expected 3d or bev)"))),
    };
    let ds = open_dataset(c.data.as_deref())?;
    let names = select(&c.seqs, Some(&ds))?;
    let hc = HotaConfig {
        similarity,
        ..HotaConfig::default()
    };
    let per_seq = for_each_sequence(&names, |name| {
        let seq = load_sequence(&ds, name)?;
        let path = result_file(&results, name).ok_or_else(|| data_err(format!("no result file for sequence {name} in {}", results.display())))?;
        let pred = read_label_frames(&path, &seq)?;
        let counts: Vec<HotaCounts> = c
            .classes
            .iter()
            .map(|&class| {
                let gt: Vec<Vec<(i64, Box3D)>> = seq
                    .frames
                    .iter()
                    .map(|fr| fr.objects.iter().filter(|o| o.bbox.class_id == class).map(|o| (o.track_id, o.bbox)).collect())
                    .collect();
                let pr: Vec<Vec<(i64, Box3D)>> = pred.iter().map(|fr| fr.iter().filter(|o| o.1.class_id == class).copied().collect()).collect();
                accumulate(&gt, &pr, &hc)
            })
            .collect();
        Ok((name.to_string(), counts))
    })?;

    let mut text = String::new();
    let _ = writeln!(text, "similarity: {}", if similarity == IouKind::ThreeD { "3d" } else { "bev" });
    let _ = writeln!(text, "sequences: {}", names.len());
    let mut overall = HotaCounts::empty(&hc.alphas);
    let mut console = Vec::new();
    for (ci, &class) in c.classes.iter().enumerate() {
        let key = class_key(class);
        let mut total = HotaCounts::empty(&hc.alphas);
        for (name, counts) in &per_seq {
            counts[ci].report().write_text(&format!("{key}.{name}"), &mut text);
            total.merge(&counts[ci]);
        }
        let r = total.report();
        r.write_text(&format!("{key}.all"), &mut text);
        console.push(format!("{key}: HOTA {:.6} DetA {:.6} AssA {:.6} LocA {:.6}", r.hota, r.det_a, r.ass_a, r.loc_a));
        overall.merge(&total);
    }
    if c.classes.len() > 1 {
        overall.report().write_text("all.all", &mut text);
    }
    match &c.out {
        Some(path) => write(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    for l in console {
        println!("{l}");
    }
    Ok(())
}

pub fn flow_labels(a: FlowArgs, f: &FileConfig) -> Result<(), Failure> {
    let c = common(&a.data, f)?;
    let config = tracker_config(&a.tracker, f)?;
    let ds = open_dataset(c.data.as_deref())?;
    let names = select(&c.seqs, Some(&ds))?;
    if names.is_empty() {
        println!("no sequences selected");
        return Ok(());
    }
    let out = required(c.out.clone(), "out")?;
    let histogram = matches!(config.flow, FlowSpec::SoftNn(_));
    for_each_sequence(&names, |name| {
        let seq = load_sequence(&ds, name)?;
        let provider = make_provider(&config, sequence_seed(c.seed, name), Execution::default());
        let mut csv = String::from("frame,points,valid,rmse_vs_labels\n");
        const BINS: usize = 20;
        let mut hist = [[0usize; 2]; BINS];
        let mut prev = if seq.is_empty() { None } else { Some(seq.cloud(0)?.into_owned()) };
        for t in 1..seq.len() {
            let next = seq.cloud(t)?.into_owned();
            let cloud_prev = prev.take().expect("previous scan loaded");
            let (dp, dn) = (seq.frames[t - 1].boxes(), seq.frames[t].boxes());
            let pair = FramePair {
                frame: t,
                cloud_prev: &cloud_prev.points,
                cloud_next: &next.points,
                labels_prev: Some(&seq.frames[t - 1]),
                labels_next: Some(&seq.frames[t]),
                dets_prev: &dp,
                dets_next: &dn,
            };
            let flow = provider.flow(&pair)?;
            write(&out.join(name).join(format!("{:06}.bin", t - 1)), &encode_flow(&flow))?;
            let labels = scene_flow_labels(&seq.frames[t - 1], &seq.frames[t], &cloud_prev.points);
            let rmse = flow_rmse(&flow, &labels).map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(csv, "{},{},{},{rmse}", t - 1, flow.len(), flow.valid_count());

            if histogram && !next.is_empty() {
                let metric = DetectionMetric::default();
                let index = KdTree::build(&next.points);
                let next_dets = point_detections(&next.points, &dn);
                let prev_dets = point_detections(&cloud_prev.points, &dp);
                for (p, q_det) in cloud_prev.points.iter().zip(&prev_dets) {
                    if *q_det == DetectionVector::Background {
                        continue;
                    }
                    let wb = weight_breakdown(*p, q_det, &index, &next_dets, config.k, &metric)?;
                    let off = |s: usize| next_dets[wb.neighbors.indices[s]] == DetectionVector::Background;
                    for (m, mass) in [wb.geometric.mass(off), wb.guided.mass(off)].into_iter().enumerate() {
                        hist[((mass * BINS as f64) as usize).min(BINS - 1)][m] += 1;
                    }
                }
            }
            prev = Some(next);
        }
        write(&out.join("plots").join(format!("{name}_flow.csv")), csv.as_bytes())?;
        if histogram {
            let mut h = String::from("bin_low,bin_high,geometric,guided\n");
            for (i, [g, w]) in hist.iter().enumerate() {
                let _ = writeln!(h, "{:.2},{:.2},{g},{w}", i as f64 / BINS as f64, (i + 1) as f64 / BINS as f64);
            }
            write(&out.join("plots").join(format!("{name}_background_weight.csv")), h.as_bytes())?;
        }
        Ok(())
    })?;
    println!("wrote flow for {} sequences into {}", names.len(), out.display());
    Ok(())
}

pub fn perturb(a: PerturbArgs, f: &FileConfig) -> Result<(), Failure> {
    let c = common(&a.data, f)?;
    if !(a.max_translation >= 0.0) || !(a.max_rotation_deg >= 0.0) {
        return Err(usage("perturbation bounds must be non-negative"));
    }
    let cfg = HardSetConfig {
        max_translation: a.max_translation,
        max_rotation: a.max_rotation_deg.to_radians(),
        symmetric_rotation: !a.one_sided,
        per_frame: !a.per_sequence,
    };
    let ds = open_dataset(c.data.as_deref())?;
    let names = select(&c.seqs, Some(&ds))?;
    if names.is_empty() {
        println!("no sequences selected");
        return Ok(());
    }
    let out = KittiTracking::create(required(c.out.clone(), "out")?)?;
    for_each_sequence(&names, |name| {
        let seq = load_sequence(&ds, name)?;
        let hard = make_hard_set(&seq, sequence_seed(c.seed, name), &cfg)?;
        out.write_sequence(&hard)?;
        Ok(())
    })?;
    println!("perturbed {} sequences", names.len());
    Ok(())
}

pub fn augment(a: AugmentArgs, f: &FileConfig) -> Result<(), Failure> {
    let c = common(&a.data, f)?;
    let ds = open_dataset(c.data.as_deref())?;
    let names = select(&c.seqs, Some(&ds))?;
    if names.is_empty() {
        println!("no sequences selected");
        return Ok(());
    }
    let out_dir = required(c.out.clone(), "out")?;
    let out = KittiTracking::create(&out_dir)?;
    let seqs = names.iter().map(|n| load_sequence(&ds, n)).collect::<Result<Vec<_>, _>>()?;
    let db = build_object_database(&seqs)?;
    let cfg = AugmentConfig {
        num_objects: a.objects,
        ..Default::default()
    };
    let reports = for_each_sequence(&names, |name| {
        let seq = seqs.iter().find(|s| s.name == name).expect("loaded above");
        let pairs = augment_sequence(seq, &db, sequence_seed(c.seed, name), a.stride, &cfg)?;
        let mut lines = Vec::new();
        for (s, r) in &pairs {
            out.write_sequence(s)?;
            lines.push(format!("{}.inserted: {}", s.name, r.inserted));
            lines.push(format!("{}.skipped: {}", s.name, r.skipped));
            lines.push(format!("{}.flipped: {}", s.name, u8::from(r.flipped)));
            lines.push(format!("{}.rotation: {}", s.name, r.rotation));
            lines.push(format!("{}.scale: {}", s.name, r.scale));
        }
        Ok(lines)
    })?;
    let mut text = format!("database_objects: {}\n", db.len());
    for l in reports.iter().flatten() {
        let _ = writeln!(text, "{l}");
    }
    write(&out_dir.join("augment_report.txt"), text.as_bytes())?;
    println!("augmented {} sequences from a database of {} objects", names.len(), db.len());
    Ok(())
}

pub fn synth(a: SynthArgs, f: &FileConfig) -> Result<(), Failure> {
    let c = common(&a.data, f)?;
    let names = select(&c.seqs, None)?;
    if names.is_empty() {
        println!("no sequences selected");
        return Ok(());
    }
    let base = if a.fast { SyntheticConfig::fast() } else { SyntheticConfig::default() };
    let cfg = SyntheticConfig { frames: a.frames, ..base };
    let out = KittiTracking::create(required(c.out.clone(), "out")?)?;
    for_each_sequence(&names, |name| {
        let seq = synthetic_sequence(name, sequence_seed(c.seed, name), &cfg)?;
        out.write_sequence(&seq)?;
        Ok(())
    })?;
    println!("wrote {} synthetic sequences", names.len());
    Ok(())
}
