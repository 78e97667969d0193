//! Box-world scenes with exact ground truth: layouts, rendered depth and
//! label images, camera rings, dense tours and scale anchors.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_deg, Aabb, DepthMap, GroundPose, Intrinsics, Pose, Vec3};
use crate::instancelift::{FrameMaskSet, FrameView, Instance3D, MemberMask, ViewSet};
use crate::io::{self, LabelImage};
use crate::scenegraph::{build_graph, SceneGraph, SceneNode};
use crate::vln::ScaleAnchor;

/// Box corners and sizes snap to this lattice.
pub const LATTICE: f64 = 0.05;

pub const DEFAULT_PALETTE: [&str; 12] = [
    "chair", "table", "sofa", "bed", "cabinet", "desk", "shelf", "lamp", "tv", "plant", "stool", "fridge",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Fixed room size; drawn from the seed when absent.
    pub room: Option<[f64; 3]>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub allow_stacking: bool,
    pub palette: Vec<String>,
    /// Clearance between floor boxes and between boxes and the camera ring.
    pub min_gap: f64,
    pub views: usize,
    pub view_inset: f64,
    pub camera_height: f64,
    pub pitch_deg: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub max_range: f64,
    pub doorway: bool,
    pub tour: TourConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            room: None,
            min_objects: 7,
            max_objects: 10,
            allow_stacking: true,
            palette: DEFAULT_PALETTE.iter().map(|s| s.to_string()).collect(),
            min_gap: 0.3,
            views: 20,
            view_inset: 0.4,
            camera_height: 1.6,
            pitch_deg: 20.0,
            width: 160,
            height: 120,
            focal: 100.0,
            max_range: 10.0,
            doorway: true,
            tour: TourConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::centered(self.focal, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TourConfig {
    pub legs: usize,
    pub step_min: f64,
    pub step_max: f64,
    pub lookaround_prob: f64,
    pub backtrack_prob: f64,
    pub teleport_prob: f64,
    /// Hidden reconstruction scale is drawn from this range.
    pub scale_range: (f64, f64),
    pub anchors: usize,
    pub outlier_fraction: f64,
}

impl Default for TourConfig {
    fn default() -> Self {
        Self {
            legs: 8,
            step_min: 0.1,
            step_max: 0.2,
            lookaround_prob: 0.5,
            backtrack_prob: 0.4,
            teleport_prob: 0.3,
            scale_range: (0.5, 4.0),
            anchors: 20,
            outlier_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub category: String,
    pub aabb: Aabb,
    /// Index of the box this one rests on.
    pub stacked_on: Option<usize>,
}

/// A rectangular opening in the wall at `x = 0`, spanning `y` and `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doorway {
    pub y: (f64, f64),
    pub z: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    /// The room spans `[0, x] x [0, y] x [0, z]`.
    pub room: [f64; 3],
    pub objects: Vec<SynthObject>,
    pub doorways: Vec<Doorway>,
    /// Ground poses of the capture ring.
    pub trajectory: Vec<GroundPose>,
    pub camera_height: f64,
    pub pitch_deg: f64,
}

impl SceneSpec {
    pub fn room_box(&self) -> Aabb {
        Aabb {
            min: Vec3::zeros(),
            max: Vec3::from(self.room),
        }
    }

    pub fn view_poses(&self) -> Vec<Pose> {
        self.trajectory
            .iter()
            .enumerate()
            .map(|(i, g)| Pose::from_ground(i as u32, g, self.camera_height, self.pitch_deg))
            .collect()
    }
}

fn lattice_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let (a, b) = ((lo / LATTICE).round() as i64, (hi / LATTICE).round() as i64);
    rng.random_range(a..=b.max(a)) as f64 * LATTICE
}

/// Closed loop a fixed distance inside the walls, `n` poses facing the room center.
pub fn capture_ring(room: [f64; 3], n: usize, inset: f64) -> Vec<GroundPose> {
    let (w, h) = (room[0] - 2.0 * inset, room[1] - 2.0 * inset);
    let perimeter = 2.0 * (w + h);
    let center = (room[0] / 2.0, room[1] / 2.0);
    (0..n)
        .map(|i| {
            let mut s = perimeter * i as f64 / n as f64;
            let (x, y) = if s < w {
                (inset + s, inset)
            } else if {
                s -= w;
                s < h
            } {
                (inset + w, inset + s)
            } else if {
                s -= h;
                s < w
            } {
                (inset + w - s, inset + h)
            } else {
                s -= w;
                (inset, inset + h - s)
            };
            let theta = (center.1 - y).atan2(center.0 - x).to_degrees();
            GroundPose::new(x, y, theta)
        })
        .collect()
}

/// Deterministic box layout. With four or more objects the first two share
/// a category and the rest are unique, so both repeated and unique
/// categories exist.
pub fn gen_scene(seed: u64, cfg: &SynthConfig) -> Result<SceneSpec> {
    if cfg.min_objects == 0 || cfg.min_objects > cfg.max_objects {
        return Err(Error::invalid("object count range must be nonempty and positive"));
    }
    if cfg.max_objects > cfg.palette.len() + 1 {
        return Err(Error::invalid("palette too small for the requested object count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room = match cfg.room {
        Some(r) => r,
        None => [lattice_range(&mut rng, 5.0, 7.0), lattice_range(&mut rng, 4.5, 6.0), 3.0],
    };
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut palette = cfg.palette.clone();
    palette.shuffle(&mut rng);
    // Boxes stay clear of the capture ring.
    let margin = cfg.view_inset + cfg.min_gap.max(0.6);
    let (lo_x, hi_x) = (margin, room[0] - margin);
    let (lo_y, hi_y) = (margin, room[1] - margin);
    if hi_x - lo_x < 1.0 || hi_y - lo_y < 1.0 {
        return Err(Error::invalid("room too small for object placement"));
    }

    let mut objects: Vec<SynthObject> = Vec::with_capacity(n);
    for i in 0..n {
        let category = if i < 2 { palette[0].clone() } else { palette[i - 1].clone() };
        let floor_boxes: Vec<usize> = (0..objects.len()).filter(|&j| objects[j].stacked_on.is_none()).collect();
        let stack = cfg.allow_stacking && i >= 2 && !floor_boxes.is_empty() && rng.random_bool(0.25);
        let mut placed = None;
        if stack {
            let base_idx = floor_boxes[rng.random_range(0..floor_boxes.len())];
            let base = objects[base_idx].aabb;
            let taken = objects.iter().any(|o| o.stacked_on == Some(base_idx));
            let e = base.extent();
            if !taken && e.x >= 0.3 && e.y >= 0.3 {
                let w = lattice_range(&mut rng, 0.2, e.x.min(0.6));
                let d = lattice_range(&mut rng, 0.2, e.y.min(0.6));
                let h = lattice_range(&mut rng, 0.2, 0.4);
                let x = lattice_range(&mut rng, base.min.x, base.max.x - w);
                let y = lattice_range(&mut rng, base.min.y, base.max.y - d);
                let z = base.max.z;
                placed = Some((Aabb::new(Vec3::new(x, y, z), Vec3::new(x + w, y + d, z + h))?, Some(base_idx)));
            }
        }
        if placed.is_none() {
            for _ in 0..5000 {
                let w = lattice_range(&mut rng, 0.3, 1.0);
                let d = lattice_range(&mut rng, 0.3, 1.0);
                let h = lattice_range(&mut rng, 0.3, 1.1);
                if lo_x + w > hi_x || lo_y + d > hi_y {
                    continue;
                }
                let x = lattice_range(&mut rng, lo_x, hi_x - w);
                let y = lattice_range(&mut rng, lo_y, hi_y - d);
                let cand = Aabb::new(Vec3::new(x, y, 0.0), Vec3::new(x + w, y + d, h))?;
                let clear = objects.iter().all(|o| {
                    let ob = o.aabb;
                    let gx = (ob.min.x - cand.max.x).max(cand.min.x - ob.max.x);
                    let gy = (ob.min.y - cand.max.y).max(cand.min.y - ob.max.y);
                    gx.max(gy) >= cfg.min_gap - 1e-9
                });
                if clear {
                    placed = Some((cand, None));
                    break;
                }
            }
        }
        let (aabb, stacked_on) = placed.ok_or_else(|| Error::invalid(format!("seed {seed}: could not place object {i}")))?;
        objects.push(SynthObject {
            category,
            aabb,
            stacked_on,
        });
    }

    let doorways = if cfg.doorway {
        let y0 = lattice_range(&mut rng, 0.5, room[1] - 1.5);
        vec![Doorway {
            y: (y0, y0 + 0.9),
            z: (0.0, 2.0),
        }]
    } else {
        Vec::new()
    };
    Ok(SceneSpec {
        seed,
        room,
        objects,
        doorways,
        trajectory: capture_ring(room, cfg.views, cfg.view_inset),
        camera_height: cfg.camera_height,
        pitch_deg: cfg.pitch_deg,
    })
}

/// Entry/exit parameters of a ray against a box (slab method).
fn slab(origin: &Vec3, dir: &Vec3, b: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for i in 0..3 {
        if dir[i] == 0.0 {
            if origin[i] < b.min[i] || origin[i] > b.max[i] {
                return None;
            }
        } else {
            let a = (b.min[i] - origin[i]) / dir[i];
            let c = (b.max[i] - origin[i]) / dir[i];
            t0 = t0.max(a.min(c));
            t1 = t1.min(a.max(c));
        }
    }
    (t0 <= t1 && t1 > 0.0).then_some((t0, t1))
}

/// Nearest hit along a ray: `(t, label)` with label 0 for the room shell.
/// `None` when the ray leaves through a doorway.
pub fn cast_ray(spec: &SceneSpec, origin: &Vec3, dir: &Vec3) -> Option<(f64, u16)> {
    let mut best: Option<(f64, u16)> = None;
    for (i, o) in spec.objects.iter().enumerate() {
        if let Some((t0, _)) = slab(origin, dir, &o.aabb) {
            if t0 > 0.0 && best.is_none_or(|(t, _)| t0 < t) {
                best = Some((t0, (i + 1) as u16));
            }
        }
    }
    // Leaving the room: the smallest positive exit parameter across the six planes.
    let room = spec.room_box();
    let (_, exit) = slab(origin, dir, &room)?;
    if best.is_none_or(|(t, _)| exit < t) {
        let hit = origin + dir * exit;
        let through_door = spec.doorways.iter().any(|d| {
            hit.x.abs() < 1e-9 && hit.y > d.y.0 && hit.y < d.y.1 && hit.z > d.z.0 && hit.z < d.z.1
        });
        if through_door {
            return best.filter(|(t, _)| *t < exit);
        }
        return Some((exit, 0));
    }
    best
}

/// Depth and label images from the same ray cast. Depth is camera-frame z;
/// rays that escape or exceed `max_range` stay invalid.
pub fn render_frame(spec: &SceneSpec, pose: &Pose, k: &Intrinsics, max_range: f64) -> (DepthMap, LabelImage) {
    let rows: Vec<(Vec<f32>, Vec<u16>)> = (0..k.height)
        .into_par_iter()
        .map(|y| {
            let mut depth = vec![0f32; k.width];
            let mut label = vec![0u16; k.width];
            for x in 0..k.width {
                let dc = Vec3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                let dir = pose.rotation() * dc;
                if let Some((t, l)) = cast_ray(spec, pose.translation(), &dir) {
                    // The camera-frame z of the hit equals t for this ray scaling.
                    if t > 0.0 && t <= max_range {
                        depth[x] = t as f32;
                        label[x] = l;
                    }
                }
            }
            (depth, label)
        })
        .collect();
    let mut values = Vec::with_capacity(k.width * k.height);
    let mut labels = LabelImage::new(k.width, k.height);
    for (y, (d, l)) in rows.into_iter().enumerate() {
        values.extend(d);
        for (x, v) in l.into_iter().enumerate() {
            labels.set(x, y, v);
        }
    }
    let depth = DepthMap::from_values(k.width, k.height, values).expect("dimensions match");
    (depth, labels)
}

pub fn render_depth(spec: &SceneSpec, pose: &Pose, k: &Intrinsics, max_range: f64) -> DepthMap {
    render_frame(spec, pose, k, max_range).0
}

/// Masks with label = object index + 1 and the matching categories.
pub fn render_masks(spec: &SceneSpec, pose: &Pose, k: &Intrinsics, max_range: f64) -> FrameMaskSet {
    let (_, labels) = render_frame(spec, pose, k, max_range);
    let categories = present_categories(spec, &labels);
    FrameMaskSet {
        frame_id: pose.frame_id,
        labels,
        categories,
    }
}

fn present_categories(spec: &SceneSpec, labels: &LabelImage) -> BTreeMap<u16, String> {
    let mut out = BTreeMap::new();
    for &l in &labels.labels {
        if l > 0 {
            out.entry(l).or_insert_with(|| spec.objects[l as usize - 1].category.clone());
        }
    }
    out
}

/// Rendered capture ring as mask sets plus the view set for lifting.
pub fn render_views(spec: &SceneSpec, k: &Intrinsics, max_range: f64) -> (Vec<FrameMaskSet>, ViewSet) {
    let mut masks = Vec::new();
    let mut views = BTreeMap::new();
    for pose in spec.view_poses() {
        let (depth, labels) = render_frame(spec, &pose, k, max_range);
        masks.push(FrameMaskSet {
            frame_id: pose.frame_id,
            categories: present_categories(spec, &labels),
            labels: labels.clone(),
        });
        views.insert(pose.frame_id, FrameView { pose, depth, labels });
    }
    (
        masks,
        ViewSet {
            intrinsics: *k,
            views,
        },
    )
}

/// Points on the box surface at lattice spacing, corners included.
pub fn surface_points(b: &Aabb, step: f64) -> Vec<Vec3> {
    let e = b.extent();
    let n = |l: f64| ((l / step).round() as usize).max(1);
    let (nx, ny, nz) = (n(e.x), n(e.y), n(e.z));
    let mut out = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            for l in 0..=nz {
                if i == 0 || j == 0 || l == 0 || i == nx || j == ny || l == nz {
                    out.push(Vec3::new(
                        b.min.x + e.x * i as f64 / nx as f64,
                        b.min.y + e.y * j as f64 / ny as f64,
                        b.min.z + e.z * l as f64 / nz as f64,
                    ));
                }
            }
        }
    }
    out
}

/// Ground-truth instances, id = object index, with dense surface samples.
pub fn gt_instances(spec: &SceneSpec) -> Vec<Instance3D> {
    spec.objects
        .iter()
        .enumerate()
        .map(|(i, o)| Instance3D {
            instance_id: i as u32,
            points: surface_points(&o.aabb, LATTICE),
            aabb: o.aabb,
            centroid: o.aabb.center(),
            category: Some(o.category.clone()),
            members: vec![MemberMask {
                frame_id: u32::MAX,
                mask_label: (i + 1) as u16,
                category: Some(o.category.clone()),
            }],
        })
        .collect()
}

/// Scene graph of the true layout; the room extent is the room floor.
pub fn gt_graph(spec: &SceneSpec) -> SceneGraph {
    let nodes: Vec<SceneNode> = gt_instances(spec).iter().map(SceneNode::from).collect();
    let room = spec.room_box();
    build_graph(nodes, Some(&[room.min, room.max]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFact {
    pub a: u32,
    pub b: u32,
    pub distance: f64,
}

/// Analytic answers computed from box arithmetic alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtAnswers {
    pub counts: BTreeMap<String, usize>,
    pub room_area: f64,
    pub sizes_cm: Vec<f64>,
    pub distances: Vec<PairFact>,
    /// (upper, lower) object indices.
    pub above: Vec<(u32, u32)>,
    pub near: Vec<(u32, u32)>,
}

impl GtAnswers {
    pub fn distance(&self, a: u32, b: u32) -> Option<f64> {
        let (a, b) = (a.min(b), a.max(b));
        self.distances.iter().find(|p| p.a == a && p.b == b).map(|p| p.distance)
    }
}

pub fn gt_answers(spec: &SceneSpec) -> GtAnswers {
    let mut counts = BTreeMap::new();
    for o in &spec.objects {
        *counts.entry(o.category.clone()).or_insert(0) += 1;
    }
    let mut distances = Vec::new();
    let mut above = Vec::new();
    let mut near = Vec::new();
    let n = spec.objects.len();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (a, b) = (&spec.objects[i].aabb, &spec.objects[j].aabb);
            if i < j {
                let d = a.distance(b);
                distances.push(PairFact {
                    a: i as u32,
                    b: j as u32,
                    distance: d,
                });
                if d <= crate::scenegraph::NEAR_THRESHOLD {
                    near.push((i as u32, j as u32));
                }
            }
            let on = |p: &Aabb, q: &Aabb| p.min.z >= q.max.z - crate::scenegraph::VERTICAL_EPS && p.footprint_overlaps(q);
            if on(a, b) && (!on(b, a) || a.center().z > b.center().z) {
                above.push((i as u32, j as u32));
            }
        }
    }
    GtAnswers {
        counts,
        room_area: spec.room[0] * spec.room[1],
        sizes_cm: spec.objects.iter().map(|o| 100.0 * o.aabb.extent().max()).collect(),
        distances,
        above,
        near,
    }
}

/// A dense walk with its hidden reconstruction scale and depth anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    /// Metric camera poses.
    pub poses: Vec<Pose>,
    pub scale: f64,
    pub anchors: Vec<ScaleAnchor>,
}

impl Tour {
    /// Poses as a reconstruction would report them, divided by the hidden scale.
    pub fn unscaled_poses(&self) -> Vec<Pose> {
        self.poses.iter().map(|p| p.scaled(1.0 / self.scale)).collect()
    }
}

/// Anchors with `sfm = true / scale`, a fraction of them corrupted far
/// outside the factor-two band.
pub fn gen_anchors(rng: &mut ChaCha8Rng, scale: f64, n: usize, outlier_fraction: f64) -> Vec<ScaleAnchor> {
    let n_out = (n as f64 * outlier_fraction).round() as usize;
    let mut out: Vec<ScaleAnchor> = (0..n)
        .map(|i| {
            let truth: f64 = rng.random_range(0.5..6.0);
            let noise: f64 = rng.random_range(0.998..1.002);
            let mut sfm = truth / scale * noise;
            if i < n_out {
                let f: f64 = rng.random_range(3.0..10.0);
                sfm = if rng.random_bool(0.5) { sfm * f } else { sfm / f };
            }
            ScaleAnchor {
                mono_depth: truth,
                sfm_depth: sfm,
            }
        })
        .collect();
    out.shuffle(rng);
    out
}

/// Walks between random waypoints with turns in place, sideways glances,
/// returns along the previous leg and occasional pose jumps.
pub fn gen_tour(spec: &SceneSpec, seed: u64, cfg: &TourConfig) -> Tour {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let margin = 0.5;
    let (lx, hx) = (margin, spec.room[0] - margin);
    let (ly, hy) = (margin, spec.room[1] - margin);
    let mut cur = GroundPose::new(rng.random_range(lx..hx), rng.random_range(ly..hy), rng.random_range(-180.0..180.0));
    let mut path = vec![cur];
    let walk: &mut dyn FnMut(&mut ChaCha8Rng, &mut GroundPose, &mut Vec<GroundPose>, (f64, f64), bool) =
        &mut |rng, cur, path, goal, glance| {
            let bearing = (goal.1 - cur.y).atan2(goal.0 - cur.x).to_degrees();
            // Turn in place toward the goal in steps of at most 30 degrees.
            loop {
                let d = wrap_deg(bearing - cur.theta);
                if d.abs() < 1.0 {
                    break;
                }
                cur.theta = wrap_deg(cur.theta + d.clamp(-30.0, 30.0));
                path.push(*cur);
            }
            let glance_at = if glance { Some(rng.random_range(2..6)) } else { None };
            let side = if rng.random_bool(0.5) { 90.0 } else { -90.0 };
            let mut k = 0;
            loop {
                let remaining = (goal.0 - cur.x).hypot(goal.1 - cur.y);
                if remaining < 1e-9 {
                    break;
                }
                let step = rng.random_range(cfg.step_min..cfg.step_max).min(remaining);
                let heading = (goal.1 - cur.y).atan2(goal.0 - cur.x);
                cur.x += step * heading.cos();
                cur.y += step * heading.sin();
                let noise = rng.random_range(-5.0..5.0);
                let looking_away = glance_at.is_some_and(|g| k >= g && k < g + 3);
                cur.theta = wrap_deg(heading.to_degrees() + noise + if looking_away { side } else { 0.0 });
                path.push(*cur);
                k += 1;
            }
        };
    for _ in 0..cfg.legs {
        let goal = (rng.random_range(lx..hx), rng.random_range(ly..hy));
        let start = (cur.x, cur.y);
        let glance = rng.random_bool(cfg.lookaround_prob);
        walk(&mut rng, &mut cur, &mut path, goal, glance);
        if rng.random_bool(cfg.backtrack_prob) {
            walk(&mut rng, &mut cur, &mut path, start, false);
        }
        if rng.random_bool(cfg.teleport_prob) {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            cur.x = (cur.x + 1.5 * a.cos()).clamp(lx, hx);
            cur.y = (cur.y + 1.5 * a.sin()).clamp(ly, hy);
            path.push(cur);
        }
    }
    let (s_lo, s_hi) = cfg.scale_range;
    let scale = rng.random_range(s_lo..s_hi);
    let anchors = gen_anchors(&mut rng, scale, cfg.anchors, cfg.outlier_fraction);
    let poses = path
        .iter()
        .enumerate()
        .map(|(i, g)| Pose::from_ground(i as u32, g, 1.5, 10.0))
        .collect();
    Tour { poses, scale, anchors }
}

/// Writes a complete capture in the pipeline's input formats.
pub fn write_dataset(spec: &SceneSpec, cfg: &SynthConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = cfg.intrinsics();
    let poses = spec.view_poses();
    let frames: Vec<(u32, Vec<u8>, Vec<u8>, BTreeMap<u16, String>)> = poses
        .par_iter()
        .map(|pose| {
            let (depth, labels) = render_frame(spec, pose, &k, cfg.max_range);
            let cats = present_categories(spec, &labels);
            (pose.frame_id, io::encode_depth_png(&depth), io::encode_label_png(&labels), cats)
        })
        .collect();
    let mut categories = BTreeMap::new();
    for (id, depth, mask, cats) in frames {
        io::write_atomic(&dir.join(format!("depth_{id}.png")), &depth)?;
        io::write_atomic(&dir.join(format!("mask_{id}.png")), &mask)?;
        for (l, c) in cats {
            categories.insert((id, l), c);
        }
    }
    io::write_atomic(&dir.join("poses.txt"), io::format_poses(&poses).as_bytes())?;
    io::write_atomic(&dir.join("intrinsics.json"), &io::to_json_bytes(&k))?;
    io::write_atomic(&dir.join("categories.json"), &io::format_categories(&categories))?;
    io::write_atomic(&dir.join("scene_spec.json"), &io::to_json_bytes(spec))?;
    let tour = gen_tour(spec, spec.seed, &cfg.tour);
    io::write_atomic(&dir.join("tour.txt"), io::format_poses(&tour.unscaled_poses()).as_bytes())?;
    io::write_atomic(&dir.join("anchors.json"), &io::to_json_bytes(&tour.anchors))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instancelift::lift_masks;

    fn square_room() -> SceneSpec {
        SceneSpec {
            seed: 0,
            room: [4.0, 5.0, 3.0],
            objects: Vec::new(),
            doorways: Vec::new(),
            trajectory: Vec::new(),
            camera_height: 1.5,
            pitch_deg: 0.0,
        }
    }

    #[test]
    fn same_seed_same_spec() {
        let cfg = SynthConfig::default();
        for seed in 0..20 {
            let a = gen_scene(seed, &cfg).unwrap();
            assert_eq!(a, gen_scene(seed, &cfg).unwrap());
            assert!((cfg.min_objects..=cfg.max_objects).contains(&a.objects.len()));
            let room = a.room_box();
            for o in &a.objects {
                assert!(room.contains(&o.aabb.min) && room.contains(&o.aabb.max));
            }
            for (i, x) in a.objects.iter().enumerate() {
                for y in &a.objects[i + 1..] {
                    assert!(x.aabb.intersection_volume(&y.aabb) <= 1e-12);
                }
            }
            let gt = gt_answers(&a);
            assert!(gt.counts.values().any(|&c| c >= 2));
            assert!(gt.counts.values().filter(|&&c| c == 1).count() >= 5);
        }
    }

    #[test]
    fn facing_wall_depth_is_constant() {
        let mut spec = square_room();
        spec.objects.clear();
        let k = Intrinsics::centered(100.0, 40, 30);
        // Level camera facing the x = 4 wall from 3 m.
        let pose = Pose::from_ground(0, &GroundPose::new(1.0, 2.5, 0.0), 1.5, 0.0);
        let d = render_depth(&spec, &pose, &k, 10.0);
        for y in 10..20 {
            for x in 5..35 {
                assert!((d.get(x, y).unwrap() - 3.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn doorway_rays_are_invalid() {
        let mut spec = square_room();
        spec.doorways.push(Doorway { y: (2.0, 3.0), z: (0.0, 2.0) });
        let k = Intrinsics::centered(100.0, 40, 30);
        let pose = Pose::from_ground(0, &GroundPose::new(3.0, 2.5, 180.0), 1.5, 0.0);
        let d = render_depth(&spec, &pose, &k, 10.0);
        assert_eq!(d.get(20, 15), None);
        assert!(d.get(0, 15).is_some());
    }

    #[test]
    fn on_axis_box_face() {
        let mut spec = square_room();
        spec.objects.push(SynthObject {
            category: "box".into(),
            aabb: Aabb::new(Vec3::new(3.0, 2.0, 1.0), Vec3::new(3.5, 3.0, 2.0)).unwrap(),
            stacked_on: None,
        });
        let k = Intrinsics::centered(100.0, 41, 31);
        let pose = Pose::from_ground(0, &GroundPose::new(1.0, 2.5, 0.0), 1.5, 0.0);
        let (d, l) = render_frame(&spec, &pose, &k, 10.0);
        assert_eq!(d.get(20, 15), Some(2.0));
        assert_eq!(l.get(20, 15), 1);
        // Same caster: a label pixel always carries depth.
        for (i, &lab) in l.labels.iter().enumerate() {
            if lab > 0 {
                assert!(d.raw()[i] > 0.0);
            }
        }
        // Filling the view: one label everywhere.
        let close = Pose::from_ground(0, &GroundPose::new(2.95, 2.5, 0.0), 1.5, 0.0);
        let (_, l) = render_frame(&spec, &close, &k, 10.0);
        assert!(l.labels.iter().all(|&v| v == 1));
        let away = Pose::from_ground(0, &GroundPose::new(2.0, 2.5, 180.0), 1.5, 0.0);
        assert!(render_masks(&spec, &away, &k, 10.0).labels.labels.iter().all(|&v| v == 0));
    }

    #[test]
    fn lifted_counts_match_render() {
        let spec = gen_scene(3, &SynthConfig::default()).unwrap();
        let cfg = SynthConfig::default();
        let k = cfg.intrinsics();
        let pose = &spec.view_poses()[0];
        let (depth, labels) = render_frame(&spec, pose, &k, cfg.max_range);
        let masks = render_masks(&spec, pose, &k, cfg.max_range);
        assert_eq!(masks.labels, labels);
        let nodes = lift_masks(&masks, &depth, pose, &k, 1).unwrap();
        for n in nodes {
            let count = labels.labels.iter().zip(depth.raw()).filter(|(&l, &d)| l == n.mask_label && d > 0.0).count();
            assert_eq!(n.points.len(), count);
            let b = spec.objects[n.mask_label as usize - 1].aabb;
            assert!(n.points.iter().all(|p| b.surface_distance(p) < 1e-6));
        }
    }

    #[test]
    fn gt_examples() {
        let mut spec = square_room();
        assert_eq!(gt_answers(&spec).room_area, 20.0);
        spec.objects = vec![
            SynthObject {
                category: "a".into(),
                aabb: Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0)).unwrap(),
                stacked_on: None,
            },
            SynthObject {
                category: "b".into(),
                aabb: Aabb::new(Vec3::new(3.0, 0.0, 0.0), Vec3::new(4.0, 1.0, 1.0)).unwrap(),
                stacked_on: None,
            },
        ];
        assert_eq!(gt_answers(&spec).distance(0, 1), Some(2.0));
        let s2 = gen_scene(2, &SynthConfig::default()).unwrap();
        assert_eq!(gt_answers(&s2), gt_answers(&s2));
    }

    #[test]
    fn tour_scale_and_anchors() {
        let spec = gen_scene(4, &SynthConfig::default()).unwrap();
        let tour = gen_tour(&spec, 4, &TourConfig::default());
        assert!(tour.poses.len() > 50);
        assert!((0.5..4.0).contains(&tour.scale));
        assert_eq!(tour.anchors.len(), 20);
        let un = tour.unscaled_poses();
        let ratio = tour.poses[10].translation().norm() / un[10].translation().norm();
        assert!((ratio - tour.scale).abs() < 1e-9);
        assert_eq!(tour, gen_tour(&spec, 4, &TourConfig::default()));
    }

    #[test]
    fn ring_faces_center() {
        let ring = capture_ring([6.0, 5.0, 3.0], 40, 0.4);
        assert_eq!(ring.len(), 40);
        for g in &ring {
            assert!(g.x >= 0.4 - 1e-9 && g.x <= 5.6 + 1e-9 && g.y >= 0.4 - 1e-9 && g.y <= 4.6 + 1e-9);
            let b = (2.5 - g.y).atan2(3.0 - g.x).to_degrees();
            assert!(wrap_deg(b - g.theta).abs() < 1e-9);
        }
    }

    fn snap(v: f64) -> f64 {
        (v / LATTICE).round() * LATTICE
    }

    #[test]
    fn snapping_is_on_lattice() {
        let spec = gen_scene(11, &SynthConfig::default()).unwrap();
        for o in &spec.objects {
            for v in [o.aabb.min, o.aabb.max] {
                for c in v.iter() {
                    assert!((c - snap(*c)).abs() < 1e-9);
                }
            }
        }
    }
}
