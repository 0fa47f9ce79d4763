#![allow(dead_code)]

use std::collections::HashMap;

use flowtrack::geom3d::{iou_3d, Box3D, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Tracks = Vec<Vec<(u64, Box3D)>>;

/// Scores straight from the metric definitions, enumerating every partial
/// one-to-one frame matching. Returns `(HOTA, DetA, AssA, LocA, per-alpha
/// (HOTA, DetA, AssA))`.
pub fn brute_force_hota(gt: &Tracks, pred: &Tracks, alphas: &[f64]) -> (f64, f64, f64, f64, Vec<(f64, f64, f64)>) {
    let n_frames = gt.len().max(pred.len());
    let empty = Vec::new();
    let frame = |v: &'_ Tracks, t: usize| -> Vec<(u64, Box3D)> { v.get(t).unwrap_or(&empty).clone() };

    let mut gt_n: HashMap<u64, f64> = HashMap::new();
    let mut pr_n: HashMap<u64, f64> = HashMap::new();
    let mut soft: HashMap<(u64, u64), f64> = HashMap::new();
    let mut sims = Vec::new();
    for t in 0..n_frames {
        let (g, p) = (frame(gt, t), frame(pred, t));
        let s: Vec<Vec<f64>> = g.iter().map(|a| p.iter().map(|b| iou_3d(&a.1, &b.1)).collect()).collect();
        for (i, a) in g.iter().enumerate() {
            *gt_n.entry(a.0).or_default() += 1.0;
            for (j, b) in p.iter().enumerate() {
                let row: f64 = s[i].iter().sum();
                let col: f64 = s.iter().map(|r| r[j]).sum();
                let denom = row + col - s[i][j];
                if denom > f64::EPSILON {
                    *soft.entry((a.0, b.0)).or_default() += s[i][j] / denom;
                }
            }
        }
        for b in &p {
            *pr_n.entry(b.0).or_default() += 1.0;
        }
        sims.push((g, p, s));
    }
    let align = |g: u64, p: u64| {
        let m = soft.get(&(g, p)).copied().unwrap_or(0.0);
        let d = gt_n[&g] + pr_n[&p] - m;
        if d > 0.0 { m / d } else { 0.0 }
    };
    let total_gt: f64 = gt_n.values().sum();
    let total_pr: f64 = pr_n.values().sum();

    let mut per_alpha = Vec::new();
    let mut loc_all = 0.0;
    for &alpha in alphas {
        let mut tp = 0.0;
        let mut loc = 0.0;
        let mut pairs: HashMap<(u64, u64), f64> = HashMap::new();
        for (g, p, s) in &sims {
            let best = best_matching(s, alpha, &|i, j| align(g[i].0, p[j].0) * s[i][j]);
            for (i, j) in best {
                tp += 1.0;
                loc += s[i][j];
                *pairs.entry((g[i].0, p[j].0)).or_default() += 1.0;
            }
        }
        let fn_ = total_gt - tp;
        let fp = total_pr - tp;
        let (det, ass, la) = if tp + fn_ + fp == 0.0 {
            (1.0, 1.0, 1.0)
        } else if tp == 0.0 {
            (0.0, 0.0, 1.0)
        } else {
            let ass: f64 = pairs.iter().map(|(&(g, p), &m)| m * m / (gt_n[&g] + pr_n[&p] - m)).sum::<f64>() / tp;
            (tp / (tp + fn_ + fp), ass, loc / tp)
        };
        loc_all += la;
        per_alpha.push(((det * ass).sqrt(), det, ass));
    }
    let n = alphas.len() as f64;
    let mean = |k: usize| per_alpha.iter().map(|v| [v.0, v.1, v.2][k]).sum::<f64>() / n;
    (mean(0), mean(1), mean(2), loc_all / n, per_alpha)
}

/// Highest-scoring set of disjoint pairs among those with similarity >= alpha.
fn best_matching(s: &[Vec<f64>], alpha: f64, score: &dyn Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    fn rec(
        i: usize,
        s: &[Vec<f64>],
        alpha: f64,
        score: &dyn Fn(usize, usize) -> f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if i == s.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        rec(i + 1, s, alpha, score, used, cur, acc, best);
        for j in 0..used.len() {
            if !used[j] && s[i][j] >= alpha - 1e-12 {
                used[j] = true;
                cur.push((i, j));
                rec(i + 1, s, alpha, score, used, cur, acc + score(i, j), best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let cols = s.first().map_or(0, |r| r.len());
    let mut best = (-1.0, Vec::new());
    rec(0, s, alpha, score, &mut vec![false; cols], &mut Vec::new(), 0.0, &mut best);
    best.1
}

/// Up to four ground-truth tracks over up to six frames, with predictions
/// that jitter, drop, swap and hallucinate.
pub fn random_scenario(seed: u64) -> (Tracks, Tracks) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(1..=6);
    let n_gt = rng.random_range(0..=4);
    let starts: Vec<Point3> = (0..n_gt)
        .map(|_| Point3::new(rng.random_range(0.0..8.0), rng.random_range(0.0..6.0), 0.0))
        .collect();
    let vel: Vec<Point3> = (0..n_gt)
        .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0))
        .collect();
    let mut gt = vec![Vec::new(); frames];
    let mut pred = vec![Vec::new(); frames];
    let pred_id: Vec<u64> = (0..n_gt as u64).map(|i| 10 + i).collect();
    for t in 0..frames {
        for k in 0..n_gt {
            if rng.random_bool(0.15) {
                continue;
            }
            let c = starts[k] + vel[k] * t as f64;
            let b = Box3D::new(c, 4.0, 2.0, 1.5, rng.random_range(-0.2..0.2));
            gt[t].push((k as u64 + 1, b));
            if rng.random_bool(0.2) {
                continue;
            }
            let jitter = Point3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3));
            let id = if rng.random_bool(0.15) {
                pred_id[rng.random_range(0..n_gt)]
            } else {
                pred_id[k]
            };
            if pred[t].iter().any(|(i, _)| *i == id) {
                continue;
            }
            pred[t].push((id, b.with_center(c + jitter)));
        }
        if rng.random_bool(0.3) {
            let c = Point3::new(rng.random_range(0.0..8.0), rng.random_range(0.0..6.0), 0.0);
            pred[t].push((99, Box3D::new(c, 4.0, 2.0, 1.5, 0.0)));
        }
    }
    (gt, pred)
}
