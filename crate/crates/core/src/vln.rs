//! Navigation episodes from free-form camera trajectories.
//!
//! Trajectories are scale-calibrated, projected to the floor, clustered,
//! split at revisits, filtered for kinematic plausibility and encoded into the
//! discrete forward/turn action space.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::geometry::GroundPose;
use crate::geometry::{ground_pose, wrap_deg, Pose, Vec3};

pub const FORWARD_BINS_CM: [u32; 3] = [25, 50, 75];
pub const TURN_BINS_DEG: [u32; 3] = [15, 30, 45];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

/// One discrete action; magnitude in cm for forward, degrees for turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionStep {
    pub kind: ActionKind,
    pub magnitude: Option<u32>,
}

impl ActionStep {
    pub const STOP: ActionStep = ActionStep {
        kind: ActionKind::Stop,
        magnitude: None,
    };

    pub fn forward(cm: u32) -> Self {
        Self {
            kind: ActionKind::Forward,
            magnitude: Some(cm),
        }
    }

    pub fn turn_left(deg: u32) -> Self {
        Self {
            kind: ActionKind::TurnLeft,
            magnitude: Some(deg),
        }
    }

    pub fn turn_right(deg: u32) -> Self {
        Self {
            kind: ActionKind::TurnRight,
            magnitude: Some(deg),
        }
    }
}

/// Encoded actions plus, per path transition, the range of actions it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSequence {
    pub actions: Vec<ActionStep>,
    pub spans: Vec<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub action: String,
    pub landmark: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavEpisode {
    pub episode_id: String,
    pub scene_id: String,
    pub start: GroundPose,
    pub gt_path: Vec<GroundPose>,
    pub actions: Vec<ActionStep>,
    pub summary: Vec<SummaryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VlnParams {
    pub cluster_radius: f64,
    pub min_steps: usize,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub lookaround_deg: f64,
    pub lookaround_min_move: f64,
    pub landmark_radius: f64,
}

impl Default for VlnParams {
    fn default() -> Self {
        Self {
            cluster_radius: 0.5,
            min_steps: 15,
            max_rotation_deg: 90.0,
            max_translation: 0.70,
            lookaround_deg: 45.0,
            lookaround_min_move: 0.05,
            landmark_radius: 2.0,
        }
    }
}

/// Result of sequential clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub representatives: Vec<GroundPose>,
    /// For every input pose, the index of its representative.
    pub assignment: Vec<usize>,
}

/// Sequential clustering: a cluster opens at a pose and keeps absorbing the
/// following poses while they stay within `radius` of that first pose, which
/// is the representative. A later return to the same place opens a new
/// cluster, so revisits stay visible.
pub fn cluster_positions(path: &[GroundPose], radius: f64) -> Result<Clustering> {
    if path.is_empty() {
        return Err(Error::Empty("cannot cluster an empty path"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("cluster radius must be positive"));
    }
    let mut representatives = vec![path[0]];
    let mut assignment = Vec::with_capacity(path.len());
    for p in path {
        let seed = representatives.last().expect("nonempty");
        if seed.planar_distance(p) > radius {
            representatives.push(*p);
        }
        assignment.push(representatives.len() - 1);
    }
    Ok(Clustering {
        representatives,
        assignment,
    })
}

/// Indices that revisit an earlier, non-adjacent pose within `radius`.
pub fn revisit_candidates(path: &[GroundPose], radius: f64) -> Vec<usize> {
    (0..path.len())
        .filter(|&i| (0..i.saturating_sub(1)).any(|j| path[j].planar_distance(&path[i]) <= radius))
        .collect()
}

/// Splits left to right at revisit candidates when the segment before the
/// candidate and the remainder after it both exceed `min_steps` steps.
/// Adjacent sub-paths share the break pose.
pub fn split_subpaths(path: &[GroundPose], min_steps: usize, radius: f64) -> Result<Vec<Vec<GroundPose>>> {
    if min_steps == 0 {
        return Err(Error::invalid("min_steps must be at least 1"));
    }
    if path.is_empty() {
        return Ok(Vec::new());
    }
    let last = path.len() - 1;
    let mut out = Vec::new();
    let mut start = 0;
    for i in revisit_candidates(path, radius) {
        if i - start > min_steps && last - i > min_steps {
            out.push(path[start..=i].to_vec());
            start = i;
        }
    }
    out.push(path[start..].to_vec());
    Ok(out)
}

/// Drops poses whose transition from the last kept pose rotates more than
/// `max_rot` degrees or moves farther than `max_trans`.
pub fn filter_steps(path: &[GroundPose], max_rot: f64, max_trans: f64) -> Vec<GroundPose> {
    let mut out: Vec<GroundPose> = Vec::with_capacity(path.len());
    for p in path {
        match out.last() {
            Some(prev) if wrap_deg(p.theta - prev.theta).abs() > max_rot || prev.planar_distance(p) > max_trans => {}
            _ => out.push(*p),
        }
    }
    out
}

/// Indices of interior poses looking away from the walking direction while
/// actually moving.
pub fn lookaround_indices(path: &[GroundPose], max_deviation: f64, min_move: f64) -> Vec<usize> {
    (1..path.len().saturating_sub(1))
        .filter(|&i| {
            let (p, next) = (&path[i], &path[i + 1]);
            p.planar_distance(next) > min_move && wrap_deg(p.theta - p.bearing_to(next)).abs() > max_deviation
        })
        .collect()
}

pub fn remove_lookaround(path: &[GroundPose], max_deviation: f64, min_move: f64) -> Result<Vec<GroundPose>> {
    if path.len() < 2 {
        return Err(Error::invalid("look-around removal needs at least two poses"));
    }
    let drop = lookaround_indices(path, max_deviation, min_move);
    Ok(path
        .iter()
        .enumerate()
        .filter(|(i, _)| drop.binary_search(i).is_err())
        .map(|(_, p)| *p)
        .collect())
}

fn turn_actions(delta_deg: f64) -> Vec<ActionStep> {
    let q = (delta_deg.abs() / 15.0).round() as u32 * 15;
    let mut parts = vec![45; (q / 45) as usize];
    if q % 45 != 0 {
        parts.push(q % 45);
    }
    parts
        .into_iter()
        .map(|m| if delta_deg > 0.0 { ActionStep::turn_left(m) } else { ActionStep::turn_right(m) })
        .collect()
}

fn forward_action(distance: f64) -> Result<Option<ActionStep>> {
    let cm = distance * 100.0;
    if cm > 87.5 {
        return Err(Error::StepTooLong(distance));
    }
    if cm < 12.5 {
        return Ok(None);
    }
    let bin = FORWARD_BINS_CM
        .into_iter()
        .min_by(|a, b| (*a as f64 - cm).abs().total_cmp(&(*b as f64 - cm).abs()))
        .expect("bins");
    Ok(Some(ActionStep::forward(bin)))
}

/// Per transition: turn first (rounded to 15 degree steps and issued as 45
/// degree chunks plus a remainder), then one forward snapped to the nearest
/// bin. A terminal stop closes the sequence.
pub fn encode_actions(path: &[GroundPose]) -> Result<ActionSequence> {
    let mut actions = Vec::new();
    let mut spans = Vec::new();
    for w in path.windows(2) {
        let start = actions.len();
        actions.extend(turn_actions(wrap_deg(w[1].theta - w[0].theta)));
        actions.extend(forward_action(w[0].planar_distance(&w[1]))?);
        spans.push(start..actions.len());
    }
    actions.push(ActionStep::STOP);
    Ok(ActionSequence { actions, spans })
}

fn apply(pose: &GroundPose, a: &ActionStep) -> GroundPose {
    let m = a.magnitude.unwrap_or(0) as f64;
    match a.kind {
        ActionKind::Forward => {
            let (s, c) = pose.theta.to_radians().sin_cos();
            GroundPose::new(pose.x + c * m / 100.0, pose.y + s * m / 100.0, pose.theta)
        }
        ActionKind::TurnLeft => GroundPose::new(pose.x, pose.y, pose.theta + m),
        ActionKind::TurnRight => GroundPose::new(pose.x, pose.y, pose.theta - m),
        ActionKind::Stop => *pose,
    }
}

/// The start pose followed by the pose after every non-stop action.
pub fn replay_actions(start: &GroundPose, actions: &[ActionStep]) -> Vec<GroundPose> {
    let mut out = vec![*start];
    for a in actions.iter().filter(|a| a.kind != ActionKind::Stop) {
        let next = apply(out.last().expect("nonempty"), a);
        out.push(next);
    }
    out
}

/// Replay error of one transition: |replayed step length - true length| and
/// |replayed heading change - true heading change| for the actions it produced.
pub fn transition_error(from: &GroundPose, to: &GroundPose, actions: &[ActionStep]) -> (f64, f64) {
    let mut length = 0.0;
    let mut turn = 0.0;
    for a in actions {
        let m = a.magnitude.unwrap_or(0) as f64;
        match a.kind {
            ActionKind::Forward => length += m / 100.0,
            ActionKind::TurnLeft => turn += m,
            ActionKind::TurnRight => turn -= m,
            ActionKind::Stop => {}
        }
    }
    let dt = (length - from.planar_distance(to)).abs();
    let dh = wrap_deg(turn - wrap_deg(to.theta - from.theta)).abs();
    (dt, dh)
}

/// One depth anchor: metric (monocular) depth against reconstruction depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleAnchor {
    pub mono_depth: f64,
    pub sfm_depth: f64,
}

/// Mean per-anchor ratio after discarding ratios outside [0.5, 2] times the median.
pub fn calibrate_scale(anchors: &[ScaleAnchor]) -> Result<f64> {
    if anchors.is_empty() {
        return Err(Error::Empty("no scale anchors"));
    }
    if anchors.iter().any(|a| !(a.mono_depth > 0.0 && a.sfm_depth > 0.0 && a.mono_depth.is_finite() && a.sfm_depth.is_finite())) {
        return Err(Error::invalid("anchor depths must be positive and finite"));
    }
    let mut ratios: Vec<f64> = anchors.iter().map(|a| a.mono_depth / a.sfm_depth).collect();
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    let median = if n % 2 == 1 {
        ratios[n / 2]
    } else {
        0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
    };
    let kept: Vec<f64> = ratios
        .into_iter()
        .filter(|r| *r >= 0.5 * median && *r <= 2.0 * median)
        .collect();
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// A landmark candidate for instruction summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub category: String,
    pub centroid: Vec3,
}

/// Nearest landmark (planar distance to its centroid) within `radius`.
pub fn nearest_landmark<'a>(pose: &GroundPose, landmarks: &'a [Landmark], radius: f64) -> Option<&'a Landmark> {
    landmarks
        .iter()
        .map(|l| (l, (l.centroid.x - pose.x).hypot(l.centroid.y - pose.y)))
        .filter(|(_, d)| *d <= radius)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, _)| l)
}

/// Collapses actions into forward segments (each tagged with the nearest
/// landmark to where it ends) and turns (same-direction runs merged, a net
/// turn of 135 degrees or more reads as turning back). Always ends with stop.
pub fn summarize_episode(
    path: &[GroundPose],
    actions: &ActionSequence,
    landmarks: &[Landmark],
    radius: f64,
) -> Vec<SummaryEntry> {
    enum Seg {
        Forward(usize),
        Turn(f64),
    }
    let mut segs: Vec<Seg> = Vec::new();
    for (t, span) in actions.spans.iter().enumerate() {
        for a in &actions.actions[span.clone()] {
            let m = a.magnitude.unwrap_or(0) as f64;
            match (a.kind, segs.last_mut()) {
                (ActionKind::Forward, Some(Seg::Forward(end))) => *end = t,
                (ActionKind::Forward, _) => segs.push(Seg::Forward(t)),
                (ActionKind::TurnLeft | ActionKind::TurnRight, last) => {
                    let signed = if a.kind == ActionKind::TurnLeft { m } else { -m };
                    match last {
                        Some(Seg::Turn(sum)) if *sum * signed > 0.0 => *sum += signed,
                        _ => segs.push(Seg::Turn(signed)),
                    }
                }
                (ActionKind::Stop, _) => {}
            }
        }
    }
    let mut out: Vec<SummaryEntry> = segs
        .into_iter()
        .map(|s| match s {
            Seg::Forward(t) => SummaryEntry {
                action: "forward".into(),
                landmark: nearest_landmark(&path[t + 1], landmarks, radius).map(|l| l.category.clone()),
            },
            Seg::Turn(sum) => SummaryEntry {
                action: if sum.abs() >= 135.0 {
                    "turn back"
                } else if sum > 0.0 {
                    "turn left"
                } else {
                    "turn right"
                }
                .into(),
                landmark: None,
            },
        })
        .collect();
    out.push(SummaryEntry {
        action: "stop".into(),
        landmark: None,
    });
    out
}

/// Intermediate products of the episode pipeline, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPath {
    pub ground: Vec<GroundPose>,
    pub clustering: Clustering,
    pub subpaths: Vec<Vec<GroundPose>>,
    /// Filtered, look-around-free sub-paths, one per entry of `subpaths`.
    pub cleaned: Vec<Vec<GroundPose>>,
}

/// Scale, project, cluster, split and clean a camera trajectory.
pub fn prepare_path(poses: &[Pose], scale: f64, params: &VlnParams) -> Result<PreparedPath> {
    if !(scale > 0.0) {
        return Err(Error::invalid("scale must be positive"));
    }
    let mut ground = Vec::with_capacity(poses.len());
    for p in poses {
        match ground_pose(&p.scaled(scale)) {
            Ok(g) => ground.push(g),
            Err(Error::DegenerateYaw) => log::warn!("frame {}: camera looks straight up or down, skipped", p.frame_id),
            Err(e) => return Err(e),
        }
    }
    let clustering = cluster_positions(&ground, params.cluster_radius)?;
    let subpaths = split_subpaths(&clustering.representatives, params.min_steps, params.cluster_radius)?;
    let mut cleaned = Vec::with_capacity(subpaths.len());
    for sub in &subpaths {
        let f = filter_steps(sub, params.max_rotation_deg, params.max_translation);
        let f = if f.len() >= 2 {
            remove_lookaround(&f, params.lookaround_deg, params.lookaround_min_move)?
        } else {
            f
        };
        // Dropping look-around poses can join two distant neighbors.
        cleaned.push(filter_steps(&f, params.max_rotation_deg, params.max_translation));
    }
    Ok(PreparedPath {
        ground,
        clustering,
        subpaths,
        cleaned,
    })
}

/// Episodes for every cleaned sub-path with at least one transition.
pub fn build_episodes(
    scene_id: &str,
    poses: &[Pose],
    scale: f64,
    landmarks: &[Landmark],
    params: &VlnParams,
) -> Result<Vec<NavEpisode>> {
    let prepared = prepare_path(poses, scale, params)?;
    let mut out = Vec::new();
    for path in prepared.cleaned.iter().filter(|p| p.len() >= 2) {
        let seq = encode_actions(path)?;
        let summary = summarize_episode(path, &seq, landmarks, params.landmark_radius);
        out.push(NavEpisode {
            episode_id: format!("{scene_id}_{:03}", out.len()),
            scene_id: scene_id.to_string(),
            start: path[0],
            gt_path: path.clone(),
            actions: seq.actions,
            summary,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g(x: f64, y: f64, t: f64) -> GroundPose {
        GroundPose::new(x, y, t)
    }

    fn walk(seed: u64, n: usize, step: f64) -> Vec<GroundPose> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = g(0.0, 0.0, 0.0);
        let mut out = vec![p];
        for _ in 1..n {
            let t = p.theta + rng.random_range(-40.0..40.0);
            let d = rng.random_range(0.0..step);
            let (s, c) = t.to_radians().sin_cos();
            p = g(p.x + c * d, p.y + s * d, t);
            out.push(p);
        }
        out
    }

    #[test]
    fn cluster_examples() {
        let c = cluster_positions(&[g(0.0, 0.0, 0.0), g(0.3, 0.0, 0.0), g(2.0, 0.0, 0.0)], 0.5).unwrap();
        assert_eq!(c.representatives, vec![g(0.0, 0.0, 0.0), g(2.0, 0.0, 0.0)]);
        assert_eq!(c.assignment, vec![0, 0, 1]);
        let tight: Vec<GroundPose> = (0..10).map(|i| g(0.04 * i as f64, 0.0, 10.0)).collect();
        assert_eq!(cluster_positions(&tight, 0.5).unwrap().representatives.len(), 1);
        assert!(cluster_positions(&[], 0.5).is_err());
        assert!(cluster_positions(&tight, 0.0).is_err());
    }

    #[test]
    fn cluster_random_walk_seed_8_matches_replay() {
        let path = walk(8, 300, 0.3);
        let c = cluster_positions(&path, 0.5).unwrap();
        // Independent replay of the sequential rule.
        let mut reps = 0;
        let mut seed: Option<GroundPose> = None;
        for p in &path {
            if seed.is_none_or(|s| (p.x - s.x).powi(2) + (p.y - s.y).powi(2) > 0.25) {
                seed = Some(*p);
                reps += 1;
            }
        }
        assert_eq!(c.representatives.len(), reps);
        for (p, &r) in path.iter().zip(&c.assignment) {
            assert!(p.planar_distance(&c.representatives[r]) <= 0.5);
        }
        assert!(c.assignment.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
    }

    fn line(n: usize) -> Vec<GroundPose> {
        (0..n).map(|i| g(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn split_examples() {
        // 40 steps out along x with a detour that comes back to step 0's neighborhood at step 20.
        let mut path: Vec<GroundPose> = (0..=40).map(|i| g(i as f64, 10.0, 0.0)).collect();
        path[20] = g(0.2, 10.2, 0.0);
        let parts = split_subpaths(&path, 15, 0.5).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].len() - 1, 20);
        assert_eq!(parts[1].len() - 1, 20);
        assert_eq!(parts[0].last(), parts[1].first());

        let mut short = line(21);
        short[5] = g(0.1, 0.0, 0.0);
        assert_eq!(split_subpaths(&short, 15, 0.5).unwrap(), vec![short.clone()]);
    }

    #[test]
    fn split_backtracking_seed_12_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut path = Vec::new();
        let mut x = 0.0;
        for _ in 0..120 {
            x += if rng.random_bool(0.7) { 0.6 } else { -0.6 };
            path.push(g(x, rng.random_range(-0.1..0.1), 0.0));
        }
        let parts = split_subpaths(&path, 15, 0.5).unwrap();
        // Oracle: replay candidate evaluation from scratch.
        let mut breaks = Vec::new();
        let mut start = 0usize;
        for i in 0..path.len() {
            let revisit = (0..i).filter(|&j| j + 1 < i).any(|j| {
                let (a, b) = (&path[i], &path[j]);
                ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() <= 0.5
            });
            if revisit && i - start > 15 && path.len() - 1 - i > 15 {
                breaks.push(i);
                start = i;
            }
        }
        assert!(!breaks.is_empty());
        assert_eq!(parts.len(), breaks.len() + 1);
        let mut offset = 0;
        for (part, &b) in parts.iter().zip(&breaks) {
            assert_eq!(offset + part.len() - 1, b);
            offset = b;
        }
        assert!(parts.iter().all(|p| p.len() - 1 > 15));
    }

    #[test]
    fn filter_examples() {
        let ok = vec![g(0.0, 0.0, 0.0), g(0.5, 0.0, 30.0), g(1.0, 0.0, 60.0)];
        assert_eq!(filter_steps(&ok, 90.0, 0.7), ok);
        let turn = vec![g(0.0, 0.0, 0.0), g(0.3, 0.0, 120.0), g(0.6, 0.0, 10.0)];
        assert_eq!(filter_steps(&turn, 90.0, 0.7), vec![turn[0], turn[2]]);
        let mut tele: Vec<GroundPose> = (0..10).map(|i| g(0.4 * i as f64, 0.0, 0.0)).collect();
        tele[5] = g(0.4 * 5.0 + 1.5, 0.0, 0.0);
        let f = filter_steps(&tele, 90.0, 0.7);
        assert!(!f.contains(&tele[5]));
        assert!(f.windows(2).all(|w| w[0].planar_distance(&w[1]) <= 0.7 && wrap_deg(w[1].theta - w[0].theta).abs() <= 90.0));
    }

    #[test]
    fn lookaround_examples() {
        let fwd: Vec<GroundPose> = (0..6).map(|i| g(0.3 * i as f64, 0.0, 0.0)).collect();
        assert_eq!(remove_lookaround(&fwd, 45.0, 0.05).unwrap(), fwd);
        let mut side = fwd.clone();
        side[2].theta = 90.0;
        let out = remove_lookaround(&side, 45.0, 0.05).unwrap();
        assert_eq!(out.len(), 5);
        assert!(!out.contains(&side[2]));
        // Turning in place is kept.
        let spin = vec![g(0.0, 0.0, 0.0), g(0.0, 0.0, 90.0), g(0.0, 0.0, 180.0), g(-0.3, 0.0, 180.0)];
        assert_eq!(remove_lookaround(&spin, 45.0, 0.05).unwrap().len(), 4);
        assert!(remove_lookaround(&spin[..1], 45.0, 0.05).is_err());
    }

    #[test]
    fn encode_examples() {
        let seq = encode_actions(&[g(0.0, 0.0, 0.0), g(0.48, 0.0, 0.0)]).unwrap();
        assert_eq!(seq.actions, vec![ActionStep::forward(50), ActionStep::STOP]);
        let seq = encode_actions(&[g(0.0, 0.0, 0.0), g(0.1, 0.0, -28.0)]).unwrap();
        assert_eq!(seq.actions, vec![ActionStep::turn_right(30), ActionStep::STOP]);
        assert!(matches!(encode_actions(&[g(0.0, 0.0, 0.0), g(0.9, 0.0, 0.0)]), Err(Error::StepTooLong(_))));
        let seq = encode_actions(&[g(0.0, 0.0, 0.0), g(0.0, 0.0, 100.0)]).unwrap();
        assert_eq!(seq.actions, vec![ActionStep::turn_left(45), ActionStep::turn_left(45), ActionStep::turn_left(15), ActionStep::STOP]);
        let seq = encode_actions(&[g(0.0, 0.0, 0.0)]).unwrap();
        assert_eq!(seq.actions, vec![ActionStep::STOP]);
    }

    #[test]
    fn replay_examples() {
        let start = g(0.0, 0.0, 0.0);
        assert_eq!(replay_actions(&start, &[ActionStep::STOP]), vec![start]);
        let poses = replay_actions(
            &start,
            &[ActionStep::turn_left(45), ActionStep::turn_left(45), ActionStep::forward(50), ActionStep::STOP],
        );
        let end = poses.last().unwrap();
        assert!(end.x.abs() < 1e-12 && (end.y - 0.5).abs() < 1e-12 && end.theta == 90.0);
    }

    #[test]
    fn scale_examples() {
        let a = |m, s| ScaleAnchor { mono_depth: m, sfm_depth: s };
        assert_eq!(calibrate_scale(&[a(2.0, 1.0); 4]).unwrap(), 2.0);
        assert_eq!(calibrate_scale(&[a(3.0, 1.5)]).unwrap(), 2.0);
        assert!(calibrate_scale(&[]).is_err());
        assert!(calibrate_scale(&[a(1.0, 0.0)]).is_err());
        assert!(calibrate_scale(&[a(-1.0, 1.0)]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut anchors: Vec<ScaleAnchor> = (0..9)
            .map(|_| {
                let d = rng.random_range(0.5..5.0);
                a(d, d / (1.7 * rng.random_range(0.97..1.03)))
            })
            .collect();
        let d: f64 = rng.random_range(0.5..5.0);
        anchors.push(a(d * 17.0, d));
        let inliers: Vec<f64> = anchors[..9].iter().map(|x| x.mono_depth / x.sfm_depth).collect();
        let expected = inliers.iter().sum::<f64>() / 9.0;
        assert!((calibrate_scale(&anchors).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn summary_examples() {
        let sofa = Landmark {
            category: "sofa".into(),
            centroid: Vec3::new(1.5, 1.0, 0.4),
        };
        let straight: Vec<GroundPose> = (0..4).map(|i| g(0.5 * i as f64, 0.0, 0.0)).collect();
        let seq = encode_actions(&straight).unwrap();
        let s = summarize_episode(&straight, &seq, &[sofa.clone()], 2.0);
        assert_eq!(
            s,
            vec![
                SummaryEntry { action: "forward".into(), landmark: Some("sofa".into()) },
                SummaryEntry { action: "stop".into(), landmark: None }
            ]
        );

        let path = vec![g(0.0, 0.0, 0.0), g(0.5, 0.0, 0.0), g(0.5, 0.0, 90.0), g(0.5, 0.5, 90.0)];
        let seq = encode_actions(&path).unwrap();
        let s = summarize_episode(&path, &seq, &[], 2.0);
        let actions: Vec<&str> = s.iter().map(|e| e.action.as_str()).collect();
        assert_eq!(actions, vec!["forward", "turn left", "forward", "stop"]);
        assert!(s.iter().all(|e| e.landmark.is_none()));

        let back = vec![g(0.0, 0.0, 0.0), g(0.0, 0.0, 90.0), g(0.0, 0.0, 180.0)];
        let s = summarize_episode(&back, &encode_actions(&back).unwrap(), &[], 2.0);
        assert_eq!(s[0].action, "turn back");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn filtered_paths_respect_limits(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let path: Vec<GroundPose> = (0..50)
                .map(|_| g(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-180.0..180.0)))
                .collect();
            let f = filter_steps(&path, 90.0, 0.7);
            for w in f.windows(2) {
                prop_assert!(w[0].planar_distance(&w[1]) <= 0.7);
                prop_assert!(wrap_deg(w[1].theta - w[0].theta).abs() <= 90.0);
            }
        }

        #[test]
        fn encode_replay_step_bounds(seed in 0u64..10_000) {
            let path = filter_steps(&walk(seed, 40, 0.7), 90.0, 0.7);
            let seq = encode_actions(&path).unwrap();
            for (t, span) in seq.spans.iter().enumerate() {
                let (dt, dh) = transition_error(&path[t], &path[t + 1], &seq.actions[span.clone()]);
                prop_assert!(dt <= 0.125 + 1e-9 && dh <= 7.5 + 1e-9);
            }
        }

        #[test]
        fn calibration_order_and_duplication_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let anchors: Vec<ScaleAnchor> = (0..rng.random_range(1..12))
                .map(|_| ScaleAnchor { mono_depth: rng.random_range(0.1..5.0), sfm_depth: rng.random_range(0.1..5.0) })
                .collect();
            let s = calibrate_scale(&anchors).unwrap();
            let mut rev = anchors.clone();
            rev.reverse();
            let doubled: Vec<ScaleAnchor> = anchors.iter().chain(&anchors).copied().collect();
            prop_assert!((s - calibrate_scale(&rev).unwrap()).abs() <= 1e-12 * s);
            prop_assert!((s - calibrate_scale(&doubled).unwrap()).abs() <= 1e-12 * s);
        }

        #[test]
        fn clustering_covers_every_pose(seed in 0u64..10_000) {
            let path = walk(seed, 80, 0.4);
            let c = cluster_positions(&path, 0.5).unwrap();
            for (p, &r) in path.iter().zip(&c.assignment) {
                prop_assert!(p.planar_distance(&c.representatives[r]) <= 0.5);
            }
        }
    }
}
