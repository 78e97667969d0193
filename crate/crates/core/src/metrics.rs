//! Navigation and detection metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, GroundPose};

pub const SUCCESS_RADIUS: f64 = 3.0;

pub fn path_length(path: &[GroundPose]) -> f64 {
    path.windows(2).map(|w| w[0].planar_distance(&w[1])).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub executed_path: Vec<GroundPose>,
    pub goal: [f64; 2],
    pub shortest_path_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavMetrics {
    pub sr: f64,
    pub os: f64,
    pub spl: f64,
    pub dist: f64,
    pub pl: f64,
}

fn goal_distance(p: &GroundPose, goal: &[f64; 2]) -> f64 {
    (p.x - goal[0]).hypot(p.y - goal[1])
}

pub fn nav_metrics(results: &[EpisodeResult], success_radius: f64) -> Result<NavMetrics> {
    if results.is_empty() {
        return Err(Error::Empty("no episode results"));
    }
    let mut m = NavMetrics {
        sr: 0.0,
        os: 0.0,
        spl: 0.0,
        dist: 0.0,
        pl: 0.0,
    };
    for r in results {
        let last = r
            .executed_path
            .last()
            .ok_or_else(|| Error::invalid("executed path must not be empty"))?;
        if !(r.shortest_path_length > 0.0) {
            return Err(Error::invalid("shortest path length must be positive"));
        }
        let d = goal_distance(last, &r.goal);
        let p = path_length(&r.executed_path);
        let success = d <= success_radius;
        let oracle = r.executed_path.iter().any(|q| goal_distance(q, &r.goal) <= success_radius);
        m.dist += d;
        m.pl += p;
        if success {
            m.sr += 1.0;
            m.spl += r.shortest_path_length / p.max(r.shortest_path_length);
        }
        if oracle {
            m.os += 1.0;
        }
    }
    let n = results.len() as f64;
    m.sr /= n;
    m.os /= n;
    m.spl /= n;
    m.dist /= n;
    m.pl /= n;
    Ok(m)
}

pub fn aabb_iou(a: &Aabb, b: &Aabb) -> f64 {
    let inter = a.intersection_volume(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.volume() + b.volume() - inter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub aabb: Aabb,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// Greedy one-to-one matching within categories by descending IoU; ties
/// go to the lower gt index, then the lower prediction index.
fn greedy_matches(pred: &[Detection], gt: &[Detection], threshold: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (j, g) in gt.iter().enumerate() {
        for (i, p) in pred.iter().enumerate() {
            if p.category == g.category {
                let iou = aabb_iou(&p.aabb, &g.aabb);
                if iou >= threshold && iou > 0.0 {
                    pairs.push((iou, j, i));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_gt = vec![false; gt.len()];
    let mut used_pred = vec![false; pred.len()];
    let mut n = 0;
    for (_, j, i) in pairs {
        if !used_gt[j] && !used_pred[i] {
            used_gt[j] = true;
            used_pred[i] = true;
            n += 1;
        }
    }
    n
}

pub fn f1_at_iou(pred: &[Detection], gt: &[Detection], threshold: f64) -> f64 {
    let tp = greedy_matches(pred, gt, threshold) as f64;
    if tp == 0.0 {
        return 0.0;
    }
    let p = tp / pred.len() as f64;
    let r = tp / gt.len() as f64;
    2.0 * p * r / (p + r)
}

/// All-point interpolated AP for one category.
fn category_ap(pred: &[&Detection], gt: &[&Detection], threshold: f64) -> f64 {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = pred[a].confidence.unwrap_or(0.0);
        let cb = pred[b].confidence.unwrap_or(0.0);
        cb.total_cmp(&ca).then(a.cmp(&b))
    });
    let mut used = vec![false; gt.len()];
    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(pred.len());
    for (rank, &i) in order.iter().enumerate() {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, g)| (j, aabb_iou(&pred[i].aabb, &g.aabb)))
            .filter(|(_, iou)| *iou >= threshold && *iou > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((j, _)) = best {
            used[j] = true;
            tp += 1;
        }
        curve.push((tp as f64 / gt.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    // Precision envelope from the right, integrated over recall steps.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..curve.len() {
        let (recall, _) = curve[k];
        if recall > prev_recall {
            let envelope = curve[k..].iter().map(|c| c.1).fold(0.0, f64::max);
            ap += (recall - prev_recall) * envelope;
            prev_recall = recall;
        }
    }
    ap
}

/// Mean AP over the categories present in `gt`.
pub fn average_precision(pred: &[Detection], gt: &[Detection], threshold: f64) -> f64 {
    let cats: BTreeSet<&str> = gt.iter().map(|g| g.category.as_str()).collect();
    if cats.is_empty() {
        return 0.0;
    }
    let total: f64 = cats
        .iter()
        .map(|c| {
            let p: Vec<&Detection> = pred.iter().filter(|d| d.category == *c).collect();
            let g: Vec<&Detection> = gt.iter().filter(|d| d.category == *c).collect();
            category_ap(&p, &g, threshold)
        })
        .sum();
    total / cats.len() as f64
}
