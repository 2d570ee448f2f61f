//! Detection accuracy against ground-truth ground-plane positions.

use nalgebra::Vector2;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub moda: f64,
    pub modp: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Mean planar distance over true positives (0 when there are none).
    pub mean_distance: f64,
    /// `(detection, ground truth, distance)` for every true positive.
    #[serde(skip)]
    pub matches: Vec<(usize, usize, f64)>,
}

/// Evaluates detections against ground truth with an optimal one-to-one
/// assignment restricted to pairs closer than `gate`.
pub fn evaluate(dets: &[Vector2<f64>], gt: &[Vector2<f64>], gate: f64) -> Result<EvalResult> {
    if !(gate > 0.0) {
        return Err(Error::Config("evaluation gate must be positive".into()));
    }
    let matches = gated_assignment(dets, gt, gate);
    let mut r = summarize(matches.len(), dets.len(), gt.len(), matches.iter().map(|m| m.2), gate);
    r.matches = matches;
    Ok(r)
}

/// Pools detections and ground truth over several frames: counts and
/// distances are summed before the ratios are formed.
pub fn evaluate_frames<'a>(
    frames: impl IntoIterator<Item = (&'a [Vector2<f64>], &'a [Vector2<f64>])>,
    gate: f64,
) -> Result<EvalResult> {
    if !(gate > 0.0) {
        return Err(Error::Config("evaluation gate must be positive".into()));
    }
    let (mut tp, mut nd, mut ng, mut dist) = (0, 0, 0, Vec::new());
    for (d, g) in frames {
        let r = evaluate(d, g, gate)?;
        tp += r.tp;
        nd += d.len();
        ng += g.len();
        dist.extend(r.matches.iter().map(|m| m.2));
    }
    Ok(summarize(tp, nd, ng, dist.into_iter(), gate))
}

fn summarize(tp: usize, n_det: usize, n_gt: usize, distances: impl Iterator<Item = f64>, gate: f64) -> EvalResult {
    let fp = n_det - tp;
    let fn_ = n_gt - tp;
    let moda = if n_gt == 0 {
        if fp == 0 {
            1.0
        } else {
            -(fp as f64)
        }
    } else {
        1.0 - (fp + fn_) as f64 / n_gt as f64
    };
    let (sd, sp) = distances.fold((0.0, 0.0), |(sd, sp), d| (sd + d, sp + 1.0 - d / gate));
    let (modp, mean_distance) = if tp == 0 { (0.0, 0.0) } else { (sp / tp as f64, sd / tp as f64) };
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if n_gt == 0 { 1.0 } else { tp as f64 / n_gt as f64 };
    EvalResult {
        moda,
        modp,
        precision,
        recall,
        tp,
        fp,
        fn_,
        mean_distance,
        matches: Vec::new(),
    }
}

/// Maximum-cardinality matching within `gate`, minimizing total distance
/// among maximum matchings.
pub fn gated_assignment(a: &[Vector2<f64>], b: &[Vector2<f64>], gate: f64) -> Vec<(usize, usize, f64)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let big = gate * (a.len().min(b.len()) as f64 + 1.0);
    let transpose = a.len() > b.len();
    let (rows, cols) = if transpose { (b, a) } else { (a, b) };
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            cols.iter()
                .map(|c| {
                    let d = (r - c).norm();
                    if d < gate {
                        d - big
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);
    let mut out: Vec<(usize, usize, f64)> = assign
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| {
            let d = (rows[r] - cols[c]).norm();
            (d < gate).then_some(if transpose { (c, r, d) } else { (r, c, d) })
        })
        .collect();
    out.sort_by_key(|m| m.0);
    out
}

/// Minimum-cost assignment of every row to a distinct column (`rows ≤ cols`).
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}
