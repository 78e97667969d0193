use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::spatial::PointGrid;

/// Keeps point `i` iff at least `min_neighbors` other points lie within `radius`.
pub fn radius_filter(points: &[Vec3], radius: f64, min_neighbors: usize) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    if min_neighbors == 0 {
        return Ok((0..points.len()).collect());
    }
    let grid = PointGrid::new(points, radius);
    Ok((0..points.len())
        .into_par_iter()
        .filter(|&i| grid.count_within(&points[i], radius, Some(i)) >= min_neighbors)
        .collect())
}

/// Mean distance to the `k` nearest other points, for every point.
pub fn mean_knn_distances(points: &[Vec3], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.len() <= k {
        return Err(Error::invalid(format!("{} points are too few for k = {k}", points.len())));
    }
    let bounds = crate::geometry::Aabb::from_points(points).expect("nonempty");
    // Cells sized for roughly k points each on a surface-like cloud.
    let extent = bounds.extent().max();
    let cell = (extent * (k as f64 / points.len() as f64).sqrt()).max(extent * 1e-6).max(1e-9);
    let grid = PointGrid::new(points, cell);
    Ok((0..points.len())
        .into_par_iter()
        .map(|i| {
            let d = grid.knn_distances(&points[i], k, Some(i));
            d.iter().sum::<f64>() / k as f64
        })
        .collect())
}

/// Keeps points whose mean k-NN distance is at most `mean + std_ratio * std`
/// (population statistics over all points).
pub fn statistical_filter(points: &[Vec3], k: usize, std_ratio: f64) -> Result<Vec<usize>> {
    let means = mean_knn_distances(points, k)?;
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sigma = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / n).sqrt();
    let limit = mu + std_ratio * sigma;
    // Absorb summation noise so exactly uniform spacing keeps everything.
    let slack = 1e-12 * mu.abs().max(1.0);
    Ok((0..means.len()).filter(|&i| means[i] <= limit + slack).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterParams {
    pub radius_enabled: bool,
    pub radius: f64,
    pub min_neighbors: usize,
    pub statistical_enabled: bool,
    pub k: usize,
    pub std_ratio: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            radius_enabled: true,
            radius: 0.05,
            min_neighbors: 4,
            statistical_enabled: true,
            k: 16,
            std_ratio: 2.0,
        }
    }
}

/// Runs the enabled filters on the mesh vertices, drops triangles touching a
/// removed vertex and compacts. Returns the mesh and its surviving vertices.
pub fn filter_mesh(mesh: &TriangleMesh, params: &FilterParams) -> Result<(TriangleMesh, Vec<Vec3>)> {
    let mut kept: Vec<usize> = (0..mesh.vertices.len()).collect();
    if params.radius_enabled && !kept.is_empty() {
        kept = radius_filter(&mesh.vertices, params.radius, params.min_neighbors)?;
    }
    if params.statistical_enabled && kept.len() > params.k {
        let pts: Vec<Vec3> = kept.iter().map(|&i| mesh.vertices[i]).collect();
        kept = statistical_filter(&pts, params.k, params.std_ratio)?
            .into_iter()
            .map(|j| kept[j])
            .collect();
    }
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::with_capacity(kept.len());
    for &i in &kept {
        remap[i] = vertices.len() as u32;
        vertices.push(mesh.vertices[i]);
    }
    let triangles = mesh
        .triangles
        .iter()
        .filter_map(|t| {
            let m = t.map(|i| remap[i as usize]);
            m.iter().all(|&i| i != u32::MAX).then_some(m)
        })
        .collect();
    let out = TriangleMesh { vertices, triangles };
    let cloud = out.vertices.clone();
    Ok((out, cloud))
}
