//! Higher-order tracking accuracy.
//!
//! Scores are accumulated as counts ([`HotaCounts`]) so that sequences can be
//! merged before ratios are taken, then finalized into an [`EvalReport`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::assoc::{hungarian, CostMatrix, IouKind};
use crate::geom3d::Box3D;
use crate::par::{map_slice, Execution};

/// The default localization thresholds 0.05, 0.10, ..., 0.95.
pub fn default_alphas() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

const ALPHA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HotaConfig {
    pub similarity: IouKind,
    pub alphas: Vec<f64>,
}

impl Default for HotaConfig {
    fn default() -> Self {
        HotaConfig {
            similarity: IouKind::ThreeD,
            alphas: default_alphas(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct AlphaCounts {
    pub alpha: f64,
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    /// Sum over true positives of the association score of their pair.
    pub ass_sum: f64,
    /// Sum over true positives of their similarity.
    pub loc_sum: f64,
}

impl AlphaCounts {
    pub fn scores(&self) -> AlphaScores {
        let (tp, fn_, fp) = (self.tp as f64, self.fn_ as f64, self.fp as f64);
        let total = tp + fn_ + fp;
        let (det_a, ass_a, loc_a) = if total == 0.0 {
            (1.0, 1.0, 1.0)
        } else if self.tp == 0 {
            (0.0, 0.0, 1.0)
        } else {
            (tp / total, self.ass_sum / tp, self.loc_sum / tp)
        };
        AlphaScores {
            alpha: self.alpha,
            hota: (det_a * ass_a).sqrt(),
            det_a,
            ass_a,
            loc_a,
            tp: self.tp,
            fn_: self.fn_,
            fp: self.fp,
        }
    }
}

/// Mergeable accumulator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HotaCounts {
    pub per_alpha: Vec<AlphaCounts>,
    pub gt_dets: u64,
    pub pred_dets: u64,
}

impl HotaCounts {
    pub fn empty(alphas: &[f64]) -> Self {
        HotaCounts {
            per_alpha: alphas.iter().map(|&alpha| AlphaCounts { alpha, ..Default::default() }).collect(),
            gt_dets: 0,
            pred_dets: 0,
        }
    }

    /// Adds another accumulator computed over the same alpha grid.
    pub fn merge(&mut self, other: &HotaCounts) {
        assert_eq!(self.per_alpha.len(), other.per_alpha.len(), "alpha grids differ");
        for (a, b) in self.per_alpha.iter_mut().zip(&other.per_alpha) {
            a.tp += b.tp;
            a.fn_ += b.fn_;
            a.fp += b.fp;
            a.ass_sum += b.ass_sum;
            a.loc_sum += b.loc_sum;
        }
        self.gt_dets += other.gt_dets;
        self.pred_dets += other.pred_dets;
    }

    pub fn report(&self) -> EvalReport {
        let per_alpha: Vec<AlphaScores> = self.per_alpha.iter().map(AlphaCounts::scores).collect();
        let n = per_alpha.len().max(1) as f64;
        let mean = |f: fn(&AlphaScores) -> f64| per_alpha.iter().map(f).sum::<f64>() / n;
        EvalReport {
            hota: mean(|s| s.hota),
            det_a: mean(|s| s.det_a),
            ass_a: mean(|s| s.ass_a),
            loc_a: mean(|s| s.loc_a),
            gt_dets: self.gt_dets,
            pred_dets: self.pred_dets,
            per_alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaScores {
    pub alpha: f64,
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub loc_a: f64,
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub loc_a: f64,
    pub gt_dets: u64,
    pub pred_dets: u64,
    pub per_alpha: Vec<AlphaScores>,
}

impl EvalReport {
    /// Appends `key: value` lines, every key prefixed with `prefix.`.
    pub fn write_text(&self, prefix: &str, out: &mut String) {
        let mut line = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{prefix}.{k}: {v}");
        };
        line("HOTA", &self.hota);
        line("DetA", &self.det_a);
        line("AssA", &self.ass_a);
        line("LocA", &self.loc_a);
        line("gt_dets", &self.gt_dets);
        line("pred_dets", &self.pred_dets);
        for s in &self.per_alpha {
            let a = format!("alpha_{:.2}", s.alpha);
            line(&format!("{a}.HOTA"), &s.hota);
            line(&format!("{a}.DetA"), &s.det_a);
            line(&format!("{a}.AssA"), &s.ass_a);
            line(&format!("{a}.LocA"), &s.loc_a);
            line(&format!("{a}.TP"), &s.tp);
            line(&format!("{a}.FN"), &s.fn_);
            line(&format!("{a}.FP"), &s.fp);
        }
    }
}

/// Reads back `key: value` lines whose value is numeric. Other lines are ignored.
pub fn parse_report(text: &str) -> BTreeMap<String, f64> {
    text.lines()
        .filter_map(|l| {
            let (k, v) = l.split_once(": ")?;
            Some((k.trim().to_string(), v.trim().parse().ok()?))
        })
        .collect()
}

fn dense_ids<I: Ord + Copy>(frames: &[Vec<(I, Box3D)>]) -> BTreeMap<I, usize> {
    let mut ids = BTreeMap::new();
    for f in frames {
        for (id, _) in f {
            let n = ids.len();
            ids.entry(*id).or_insert(n);
        }
    }
    ids
}

/// Accumulates counts for one sequence. Frames beyond the shorter input
/// are treated as empty on the other side.
pub fn accumulate<G, P>(gt: &[Vec<(G, Box3D)>], pred: &[Vec<(P, Box3D)>], config: &HotaConfig) -> HotaCounts
where
    G: Ord + Copy,
    P: Ord + Copy,
{
    let gt_ids = dense_ids(gt);
    let pred_ids = dense_ids(pred);
    let (ng, np) = (gt_ids.len(), pred_ids.len());
    let n_frames = gt.len().max(pred.len());
    let (no_gt, no_pred) = (Vec::new(), Vec::new());

    struct Frame {
        g: Vec<usize>,
        p: Vec<usize>,
        sim: Vec<f64>,
    }
    let frames: Vec<Frame> = (0..n_frames)
        .map(|t| {
            let gf = gt.get(t).unwrap_or(&no_gt);
            let pf = pred.get(t).unwrap_or(&no_pred);
            let mut sim = Vec::with_capacity(gf.len() * pf.len());
            for (_, gb) in gf {
                for (_, pb) in pf {
                    sim.push(config.similarity.iou(gb, pb));
                }
            }
            Frame {
                g: gf.iter().map(|(id, _)| gt_ids[id]).collect(),
                p: pf.iter().map(|(id, _)| pred_ids[id]).collect(),
                sim,
            }
        })
        .collect();

    // global alignment from soft per-frame co-occurrence
    let mut potential = vec![0.0; ng * np];
    let mut gt_count = vec![0u64; ng];
    let mut pred_count = vec![0u64; np];
    for f in &frames {
        let (rows, cols) = (f.g.len(), f.p.len());
        let row_sum: Vec<f64> = (0..rows).map(|i| f.sim[i * cols..(i + 1) * cols].iter().sum()).collect();
        let col_sum: Vec<f64> = (0..cols).map(|j| (0..rows).map(|i| f.sim[i * cols + j]).sum()).collect();
        for i in 0..rows {
            for j in 0..cols {
                let s = f.sim[i * cols + j];
                let denom = row_sum[i] + col_sum[j] - s;
                if denom > f64::EPSILON {
                    potential[f.g[i] * np + f.p[j]] += s / denom;
                }
            }
        }
        f.g.iter().for_each(|&g| gt_count[g] += 1);
        f.p.iter().for_each(|&p| pred_count[p] += 1);
    }
    let alignment: Vec<f64> = (0..ng * np)
        .map(|k| {
            let (g, p) = (k / np, k % np);
            let denom = gt_count[g] as f64 + pred_count[p] as f64 - potential[k];
            if denom > 0.0 {
                potential[k] / denom
            } else {
                0.0
            }
        })
        .collect();

    let gt_dets: u64 = gt_count.iter().sum();
    let pred_dets: u64 = pred_count.iter().sum();
    let per_alpha = map_slice(Execution::default(), &config.alphas, |&alpha| {
        let mut matches = vec![0u64; ng * np];
        let mut counts = AlphaCounts { alpha, ..Default::default() };
        for f in &frames {
            let (rows, cols) = (f.g.len(), f.p.len());
            if rows == 0 || cols == 0 {
                continue;
            }
            let eligible = |i: usize, j: usize| f.sim[i * cols + j] >= alpha - ALPHA_EPS;
            let cost = CostMatrix::from_fn(rows, cols, |i, j| {
                if eligible(i, j) {
                    -(alignment[f.g[i] * np + f.p[j]] * f.sim[i * cols + j])
                } else {
                    0.0
                }
            })
            .expect("similarities are finite");
            for (i, j) in hungarian(&cost).pairs() {
                if eligible(i, j) {
                    counts.tp += 1;
                    counts.loc_sum += f.sim[i * cols + j];
                    matches[f.g[i] * np + f.p[j]] += 1;
                }
            }
        }
        counts.fn_ = gt_dets - counts.tp;
        counts.fp = pred_dets - counts.tp;
        for (k, &m) in matches.iter().enumerate() {
            if m > 0 {
                let (g, p) = (k / np, k % np);
                let ass = m as f64 / (gt_count[g] + pred_count[p] - m) as f64;
                counts.ass_sum += m as f64 * ass;
            }
        }
        counts
    });
    HotaCounts {
        per_alpha,
        gt_dets,
        pred_dets,
    }
}

/// Scores one sequence.
pub fn evaluate<G, P>(gt: &[Vec<(G, Box3D)>], pred: &[Vec<(P, Box3D)>], config: &HotaConfig) -> EvalReport
where
    G: Ord + Copy,
    P: Ord + Copy,
{
    accumulate(gt, pred, config).report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom3d::Point3;

    fn b(x: f64, y: f64) -> Box3D {
        Box3D::new(Point3::new(x, y, 0.0), 4.0, 2.0, 1.5, 0.0)
    }

    fn two_tracks(n: usize) -> Vec<Vec<(u64, Box3D)>> {
        (0..n).map(|t| vec![(1, b(t as f64, 0.0)), (2, b(t as f64, 10.0))]).collect()
    }

    #[test]
    fn identical_inputs_score_one() {
        let gt = two_tracks(5);
        let r = evaluate(&gt, &gt, &HotaConfig::default());
        for v in [r.hota, r.det_a, r.ass_a, r.loc_a] {
            assert!((v - 1.0).abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let gt = two_tracks(3);
        let pred: Vec<Vec<(u64, Box3D)>> = vec![vec![]; 3];
        let r = evaluate(&gt, &pred, &HotaConfig::default());
        assert_eq!(r.hota, 0.0);
        assert_eq!(r.per_alpha[0].fn_, 6);
    }

    #[test]
    fn both_empty_scores_one() {
        let e: Vec<Vec<(u64, Box3D)>> = vec![vec![]; 4];
        let r = evaluate(&e, &e, &HotaConfig::default());
        assert_eq!((r.hota, r.det_a, r.ass_a, r.loc_a), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn relabeling_predictions_changes_nothing() {
        let gt = two_tracks(4);
        let pred: Vec<Vec<(u64, Box3D)>> = gt
            .iter()
            .map(|f| f.iter().map(|&(id, bx)| (100 - id, bx.with_center(bx.center() + Point3::new(0.3, 0.0, 0.0)))).collect())
            .collect();
        let a = evaluate(&gt, &pred, &HotaConfig::default());
        let swapped: Vec<Vec<(u64, Box3D)>> =
            pred.iter().map(|f| f.iter().map(|&(id, bx)| (id * 7 + 3, bx)).collect()).collect();
        assert_eq!(a, evaluate(&gt, &swapped, &HotaConfig::default()));
    }

    #[test]
    fn id_swap_lowers_association_only() {
        let gt = two_tracks(4);
        let mut pred = gt.clone();
        for f in pred.iter_mut().skip(2) {
            for o in f.iter_mut() {
                o.0 = 3 - o.0;
            }
        }
        let r = evaluate(&gt, &pred, &HotaConfig::default());
        assert!((r.det_a - 1.0).abs() < 1e-12);
        assert!((r.ass_a - 1.0 / 3.0).abs() < 1e-12, "{}", r.ass_a);
    }

    #[test]
    fn merge_matches_concatenation_of_counts() {
        let gt = two_tracks(3);
        let cfg = HotaConfig::default();
        let mut c = accumulate(&gt, &gt, &cfg);
        c.merge(&accumulate(&gt, &Vec::<Vec<(u64, Box3D)>>::new(), &cfg));
        let r = c.report();
        assert_eq!(r.gt_dets, 12);
        assert!((r.det_a - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_text_round_trips() {
        let gt = two_tracks(3);
        let r = evaluate(&gt, &gt, &HotaConfig::default());
        let mut s = String::new();
        r.write_text("car.all", &mut s);
        let kv = parse_report(&s);
        assert_eq!(kv["car.all.HOTA"], r.hota);
        assert_eq!(kv["car.all.alpha_0.50.TP"], 6.0);
    }
}
