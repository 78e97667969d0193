//! Lifting per-frame 2D instance masks into 3D instances.
//!
//! Masks are unprojected with their frame's depth, linked by cross-view
//! consensus within a frame window, grouped into connected components and
//! finally merged again by voxel overlap.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, unproject, Aabb, DepthMap, Intrinsics, Pose, Vec3};
use crate::io::LabelImage;
use crate::spatial::voxel_key;

/// Label image of one frame plus optional per-label categories.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMaskSet {
    pub frame_id: u32,
    pub labels: LabelImage,
    pub categories: BTreeMap<u16, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskNode {
    pub frame_id: u32,
    pub mask_label: u16,
    pub points: Vec<Vec3>,
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemberMask {
    pub frame_id: u32,
    pub mask_label: u16,
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance3D {
    pub instance_id: u32,
    pub points: Vec<Vec3>,
    pub aabb: Aabb,
    pub centroid: Vec3,
    pub category: Option<String>,
    /// Sorted by (frame_id, mask_label).
    pub members: Vec<MemberMask>,
}

/// Instance summary as written to `instances.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: u32,
    pub category: Option<String>,
    pub centroid: [f64; 3],
    pub aabb: Aabb,
    pub point_count: usize,
    pub members: Vec<(u32, u16)>,
}

impl Instance3D {
    pub fn record(&self) -> InstanceRecord {
        InstanceRecord {
            id: self.instance_id,
            category: self.category.clone(),
            centroid: self.centroid.into(),
            aabb: self.aabb,
            point_count: self.points.len(),
            members: self.members.iter().map(|m| (m.frame_id, m.mask_label)).collect(),
        }
    }
}

/// One posed frame with its depth and masks.
#[derive(Debug, Clone)]
pub struct FrameView {
    pub pose: Pose,
    pub depth: DepthMap,
    pub labels: LabelImage,
}

/// Frames keyed by id, sharing one camera.
#[derive(Debug, Clone)]
pub struct ViewSet {
    pub intrinsics: Intrinsics,
    pub views: BTreeMap<u32, FrameView>,
}

impl ViewSet {
    fn get(&self, frame_id: u32) -> Result<&FrameView> {
        self.views
            .get(&frame_id)
            .ok_or_else(|| Error::invalid(format!("no view for frame {frame_id}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftParams {
    pub min_pixels: usize,
    /// Reconstruction voxel size; sets the depth tolerance.
    pub voxel_size: f64,
    pub neighbor_window: u32,
    pub merge_threshold: f64,
    pub iou_threshold: f64,
    pub iou_voxel: f64,
    pub min_instance_points: usize,
    /// Merged points are deduplicated on this grid.
    pub dedup_voxel: f64,
}

impl Default for LiftParams {
    fn default() -> Self {
        Self {
            min_pixels: 50,
            voxel_size: 0.02,
            neighbor_window: 10,
            merge_threshold: 0.7,
            iou_threshold: 0.5,
            iou_voxel: 0.05,
            min_instance_points: 100,
            dedup_voxel: 0.01,
        }
    }
}

impl LiftParams {
    pub fn depth_tolerance(&self) -> f64 {
        (3.0 * self.voxel_size).max(0.05)
    }
}

/// One node per label with at least `min_pixels` valid-depth pixels, in label order.
pub fn lift_masks(
    masks: &FrameMaskSet,
    depth: &DepthMap,
    pose: &Pose,
    k: &Intrinsics,
    min_pixels: usize,
) -> Result<Vec<MaskNode>> {
    let dims = (masks.labels.width, masks.labels.height);
    if dims != depth.dims() {
        return Err(Error::DimensionMismatch {
            expected: depth.dims(),
            actual: dims,
        });
    }
    if dims != k.dims() {
        return Err(Error::DimensionMismatch {
            expected: k.dims(),
            actual: dims,
        });
    }
    let mut by_label: BTreeMap<u16, Vec<Vec3>> = BTreeMap::new();
    for y in 0..dims.1 {
        for x in 0..dims.0 {
            let label = masks.labels.get(x, y);
            if label == 0 {
                continue;
            }
            if let Some(d) = depth.get(x, y) {
                by_label
                    .entry(label)
                    .or_default()
                    .push(unproject(x as f64, y as f64, d as f64, pose, k)?);
            }
        }
    }
    Ok(by_label
        .into_iter()
        .filter(|(_, pts)| pts.len() >= min_pixels.max(1))
        .map(|(label, points)| MaskNode {
            frame_id: masks.frame_id,
            mask_label: label,
            points,
            category: masks.categories.get(&label).cloned(),
        })
        .collect())
}

/// Fractions (agreeing, observable) of `a`'s points checked against `b`'s frame.
fn agreement(a: &MaskNode, b: &MaskNode, view: &FrameView, k: &Intrinsics, delta: f64) -> (usize, usize) {
    let (mut agree, mut observable) = (0, 0);
    for p in &a.points {
        let Some((u, v, z)) = project(p, &view.pose, k) else { continue };
        let Some((x, y)) = k.pixel_of(u, v) else { continue };
        let Some(d) = view.depth.get(x, y) else { continue };
        let d = d as f64;
        if z > d + delta {
            // Hidden behind something in b's frame.
            continue;
        }
        observable += 1;
        if view.labels.get(x, y) == b.mask_label && (z - d).abs() <= delta {
            agree += 1;
        }
    }
    (agree, observable)
}

/// Cross-view agreement of two mask nodes: the smaller of the two directed
/// agreement fractions. Each direction counts only points that are in view
/// and unoccluded in the other frame; with none observable it is 0.
pub fn consensus_rate(a: &MaskNode, b: &MaskNode, views: &ViewSet, delta: f64) -> Result<f64> {
    let va = views.get(a.frame_id)?;
    let vb = views.get(b.frame_id)?;
    let k = &views.intrinsics;
    let rate = |(agree, total): (usize, usize)| if total == 0 { 0.0 } else { agree as f64 / total as f64 };
    let ab = rate(agreement(a, b, vb, k, delta));
    if ab == 0.0 {
        return Ok(0.0);
    }
    let ba = rate(agreement(b, a, va, k, delta));
    Ok(ab.min(ba))
}

fn majority(members: &[MemberMask]) -> Option<String> {
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        if let Some(c) = &m.category {
            *votes.entry(c).or_default() += 1;
        }
    }
    // BTreeMap iterates in lexicographic order; keep the first maximum.
    let mut best: Option<(&str, usize)> = None;
    for (c, n) in votes {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c.to_string())
}

fn dedup(points: impl IntoIterator<Item = Vec3>, voxel: f64) -> Vec<Vec3> {
    let mut seen = HashSet::new();
    points.into_iter().filter(|p| seen.insert(voxel_key(p, voxel))).collect()
}

fn build_instance(id: u32, mut members: Vec<(MemberMask, Vec<Vec3>)>, dedup_voxel: f64) -> Instance3D {
    members.sort_by(|a, b| a.0.cmp(&b.0));
    let points = dedup(members.iter().flat_map(|(_, p)| p.iter().copied()), dedup_voxel);
    let members: Vec<MemberMask> = members.into_iter().map(|(m, _)| m).collect();
    instance_from(id, points, members)
}

fn instance_from(id: u32, points: Vec<Vec3>, members: Vec<MemberMask>) -> Instance3D {
    let aabb = Aabb::from_points(&points).unwrap_or(Aabb {
        min: Vec3::zeros(),
        max: Vec3::zeros(),
    });
    let centroid = if points.is_empty() {
        Vec3::zeros()
    } else {
        points.iter().sum::<Vec3>() / points.len() as f64
    };
    Instance3D {
        instance_id: id,
        category: majority(&members),
        points,
        aabb,
        centroid,
        members,
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of the consensus graph. Instance ids follow the
/// smallest (frame_id, mask_label) of each component.
pub fn cluster_masks(nodes: &[MaskNode], views: &ViewSet, params: &LiftParams) -> Result<Vec<Instance3D>> {
    if !(params.merge_threshold > 0.0 && params.merge_threshold <= 1.0) {
        return Err(Error::invalid("merge threshold must lie in (0, 1]"));
    }
    let delta = params.depth_tolerance();
    let pairs: Vec<(usize, usize)> = (0..nodes.len())
        .flat_map(|i| (i + 1..nodes.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| nodes[i].frame_id.abs_diff(nodes[j].frame_id) <= params.neighbor_window)
        .collect();
    let rates: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| consensus_rate(&nodes[i], &nodes[j], views, delta))
        .collect::<Result<_>>()?;
    let mut uf = UnionFind((0..nodes.len()).collect());
    for (&(i, j), &r) in pairs.iter().zip(&rates) {
        if r >= params.merge_threshold {
            uf.union(i, j);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..nodes.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut comps: Vec<Vec<(MemberMask, Vec<Vec3>)>> = groups
        .into_values()
        .map(|ids| {
            ids.into_iter()
                .map(|i| {
                    let n = &nodes[i];
                    let m = MemberMask {
                        frame_id: n.frame_id,
                        mask_label: n.mask_label,
                        category: n.category.clone(),
                    };
                    (m, n.points.clone())
                })
                .collect()
        })
        .collect();
    let key = |c: &Vec<(MemberMask, Vec<Vec3>)>| c.iter().map(|(m, _)| (m.frame_id, m.mask_label)).min();
    comps.sort_by_key(key);
    Ok(comps
        .into_iter()
        .enumerate()
        .map(|(id, c)| build_instance(id as u32, c, params.dedup_voxel))
        .collect())
}

fn voxel_set(points: &[Vec3], voxel: f64) -> HashSet<(i64, i64, i64)> {
    points.iter().map(|p| voxel_key(p, voxel)).collect()
}

fn voxel_iou(a: &HashSet<(i64, i64, i64)>, b: &HashSet<(i64, i64, i64)>) -> f64 {
    let inter = a.iter().filter(|v| b.contains(v)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Voxelized point-set IoU.
pub fn spatial_agreement(a: &[Vec3], b: &[Vec3], voxel: f64) -> f64 {
    voxel_iou(&voxel_set(a, voxel), &voxel_set(b, voxel))
}

/// Repeatedly merges the best pair with IoU at or above the threshold
/// (ties by ids) until no pair qualifies. A merge keeps the smaller id.
pub fn merge_by_spatial_agreement(instances: Vec<Instance3D>, params: &LiftParams) -> Result<Vec<Instance3D>> {
    if !(params.iou_threshold > 0.0 && params.iou_threshold <= 1.0) {
        return Err(Error::invalid("IoU threshold must lie in (0, 1]"));
    }
    let mut current: BTreeMap<u32, (Instance3D, HashSet<(i64, i64, i64)>)> = instances
        .into_iter()
        .map(|inst| {
            let vox = voxel_set(&inst.points, params.iou_voxel);
            (inst.instance_id, (inst, vox))
        })
        .collect();
    let mut iou: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let ids: Vec<u32> = current.keys().copied().collect();
    for (n, &a) in ids.iter().enumerate() {
        for &b in &ids[n + 1..] {
            iou.insert((a, b), voxel_iou(&current[&a].1, &current[&b].1));
        }
    }
    loop {
        let mut best: Option<((u32, u32), f64)> = None;
        for (&pair, &v) in &iou {
            if v >= params.iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((pair, v));
            }
        }
        let Some(((a, b), _)) = best else { break };
        let (ia, _) = current.remove(&a).expect("live id");
        let (ib, _) = current.remove(&b).expect("live id");
        let mut members = ia.members;
        members.extend(ib.members);
        members.sort();
        let points = dedup(ia.points.into_iter().chain(ib.points), params.dedup_voxel);
        let merged = instance_from(a, points, members);
        let vox = voxel_set(&merged.points, params.iou_voxel);
        iou.retain(|&(x, y), _| x != a && x != b && y != a && y != b);
        for (&other, (_, ov)) in &current {
            let pair = if other < a { (other, a) } else { (a, other) };
            iou.insert(pair, voxel_iou(&vox, ov));
        }
        current.insert(a, (merged, vox));
    }
    Ok(current.into_values().map(|(inst, _)| inst).collect())
}

/// Full segmentation: lift every frame, cluster, merge, drop small instances.
pub fn segment(
    frames: &[FrameMaskSet],
    views: &ViewSet,
    params: &LiftParams,
) -> Result<Vec<Instance3D>> {
    let mut nodes = Vec::new();
    for masks in frames {
        let view = views.get(masks.frame_id)?;
        nodes.extend(lift_masks(masks, &view.depth, &view.pose, &views.intrinsics, params.min_pixels)?);
    }
    let clustered = cluster_masks(&nodes, views, params)?;
    let merged = merge_by_spatial_agreement(clustered, params)?;
    Ok(merged
        .into_iter()
        .filter(|i| i.points.len() >= params.min_instance_points)
        .collect())
}
