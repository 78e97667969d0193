//! Scene graphs over 3D instances and the spatial facts derived from them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, GroundPose, Vec3};
use crate::instancelift::Instance3D;
use crate::spatial::min_distance;

/// Vertical contact tolerance for above/below.
pub const VERTICAL_EPS: f64 = 0.05;
pub const NEAR_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    Above,
    Below,
    Near,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneNode {
    pub id: u32,
    pub category: Option<String>,
    pub centroid: Vec3,
    pub aabb: Aabb,
    /// Surface points; not serialized with the graph.
    #[serde(skip)]
    pub points: Vec<Vec3>,
}

impl From<&Instance3D> for SceneNode {
    fn from(inst: &Instance3D) -> Self {
        Self {
            id: inst.instance_id,
            category: inst.category.clone(),
            centroid: inst.centroid,
            aabb: inst.aabb,
            points: inst.points.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub relation: Relation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub nodes: Vec<SceneNode>,
    pub edges: Vec<Edge>,
    pub room_extent: [f64; 2],
}

impl SceneGraph {
    pub fn node(&self, id: u32) -> Option<&SceneNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn room_area(&self) -> f64 {
        self.room_extent[0] * self.room_extent[1]
    }
}

/// Closest-point distance between two nodes. Falls back to the box gap when
/// either node carries no points.
pub fn closest_distance(a: &SceneNode, b: &SceneNode) -> f64 {
    min_distance(&a.points, &b.points).unwrap_or_else(|| a.aabb.distance(&b.aabb))
}

fn sits_on(a: &SceneNode, b: &SceneNode) -> bool {
    a.aabb.min.z >= b.aabb.max.z - VERTICAL_EPS && a.aabb.footprint_overlaps(&b.aabb)
}

/// True when `a` is above `b`. If the tolerance admits both directions the
/// higher centroid wins.
pub fn is_above(a: &SceneNode, b: &SceneNode) -> bool {
    match (sits_on(a, b), sits_on(b, a)) {
        (true, false) => true,
        (true, true) => a.centroid.z > b.centroid.z,
        _ => false,
    }
}

/// Quadrant of `target` seen from `observer`: front/behind by the forward
/// component, left/right by the lateral one. Zero components are omitted.
pub fn direction_of(target: &Vec3, observer: &GroundPose) -> BTreeSet<Relation> {
    let (s, c) = observer.theta.to_radians().sin_cos();
    let (dx, dy) = (target.x - observer.x, target.y - observer.y);
    let forward = dx * c + dy * s;
    let left = -dx * s + dy * c;
    let mut out = BTreeSet::new();
    if forward > 0.0 {
        out.insert(Relation::InFrontOf);
    } else if forward < 0.0 {
        out.insert(Relation::Behind);
    }
    if left > 0.0 {
        out.insert(Relation::LeftOf);
    } else if left < 0.0 {
        out.insert(Relation::RightOf);
    }
    out
}

/// Relations of `a` with respect to `b`. Horizontal ones need an observer
/// and describe where `a` lies relative to `b` along the observer's axes.
pub fn pairwise_relations(a: &SceneNode, b: &SceneNode, observer: Option<&GroundPose>) -> BTreeSet<Relation> {
    let mut out = BTreeSet::new();
    if is_above(a, b) {
        out.insert(Relation::Above);
    } else if is_above(b, a) {
        out.insert(Relation::Below);
    }
    if closest_distance(a, b) <= NEAR_THRESHOLD {
        out.insert(Relation::Near);
    }
    if let Some(obs) = observer {
        let at_b = GroundPose {
            x: b.centroid.x,
            y: b.centroid.y,
            theta: obs.theta,
        };
        out.extend(direction_of(&a.centroid, &at_b));
    }
    out
}

/// Floor-plan extent over scene points (x length, y length).
pub fn room_extent(points: &[Vec3]) -> Result<[f64; 2]> {
    let bounds = Aabb::from_points(points).ok_or(Error::Empty("room size needs scene points"))?;
    let e = bounds.extent();
    Ok([e.x, e.y])
}

/// Product of the x and y extents of the scene.
pub fn room_size(points: &[Vec3]) -> Result<f64> {
    let [x, y] = room_extent(points)?;
    Ok(x * y)
}

pub fn longest_dimension_cm(aabb: &Aabb) -> f64 {
    100.0 * aabb.extent().max()
}

/// Stores above/below (both directions) and near (once, smaller id first).
/// The room extent comes from `scene_points` when given, else from the node boxes.
pub fn build_graph(nodes: Vec<SceneNode>, scene_points: Option<&[Vec3]>) -> SceneGraph {
    let mut nodes = nodes;
    nodes.sort_by_key(|n| n.id);
    let pairs: Vec<(usize, usize)> = (0..nodes.len())
        .flat_map(|i| (i + 1..nodes.len()).map(move |j| (i, j)))
        .collect();
    let mut edges: Vec<Edge> = pairs
        .par_iter()
        .flat_map_iter(|&(i, j)| {
            let (a, b) = (&nodes[i], &nodes[j]);
            let rel = pairwise_relations(a, b, None);
            let mut e = Vec::new();
            let edge = |a: u32, b: u32, relation| Edge { a, b, relation };
            if rel.contains(&Relation::Above) {
                e.push(edge(a.id, b.id, Relation::Above));
                e.push(edge(b.id, a.id, Relation::Below));
            } else if rel.contains(&Relation::Below) {
                e.push(edge(a.id, b.id, Relation::Below));
                e.push(edge(b.id, a.id, Relation::Above));
            }
            if rel.contains(&Relation::Near) {
                e.push(edge(a.id, b.id, Relation::Near));
            }
            e
        })
        .collect();
    edges.sort();
    let corners: Vec<Vec3>;
    let extent_points = match scene_points {
        Some(p) => p,
        None => {
            corners = nodes.iter().flat_map(|n| [n.aabb.min, n.aabb.max]).collect();
            &corners
        }
    };
    let room_extent = room_extent(extent_points).unwrap_or([0.0, 0.0]);
    SceneGraph {
        nodes,
        edges,
        room_extent,
    }
}

/// Node ids per category, uncategorized nodes excluded.
pub fn category_index(graph: &SceneGraph) -> BTreeMap<String, Vec<u32>> {
    let mut out: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for n in &graph.nodes {
        if let Some(c) = &n.category {
            out.entry(c.clone()).or_default().push(n.id);
        }
    }
    out
}
