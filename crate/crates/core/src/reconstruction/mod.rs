//! Dense reconstruction: sparse depth priors, TSDF fusion of metric depth,
//! surface extraction and outlier filtering of the extracted points.

mod filters;
mod marching_cubes;
mod tsdf;

pub use filters::{filter_mesh, radius_filter, statistical_filter, FilterParams};
pub use marching_cubes::extract_mesh;
pub use tsdf::{TsdfParams, TsdfVolume};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, unproject, Aabb, DepthMap, Intrinsics, Pose, Vec3};

/// Sparse structure-from-motion points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseCloud {
    pub points: Vec<Vec3>,
    pub observations: Vec<u32>,
}

impl SparseCloud {
    pub fn new(points: Vec<Vec3>, observations: Vec<u32>) -> Result<Self> {
        if points.len() != observations.len() {
            return Err(Error::invalid("one observation count per point is required"));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) || observations.contains(&0) {
            return Err(Error::invalid("sparse points must be finite with at least one observation"));
        }
        Ok(Self { points, observations })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }
}

/// Rasterizes visible sparse points into a depth map, nearest point winning.
pub fn sparse_depth_prior(cloud: &SparseCloud, pose: &Pose, k: &Intrinsics) -> DepthMap {
    let mut depth = DepthMap::new(k.width, k.height);
    for p in &cloud.points {
        let Some((u, v, z)) = project(p, pose, k) else { continue };
        let Some((x, y)) = k.pixel_of(u, v) else { continue };
        let z = z as f32;
        if depth.get(x, y).is_none_or(|d| z < d) {
            depth.set(x, y, z);
        }
    }
    depth
}

/// Invalidates depths beyond `max_depth`.
pub fn truncate_depth(depth: &DepthMap, max_depth: f64) -> DepthMap {
    let mut out = depth.clone();
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if depth.get(x, y).is_some_and(|d| d as f64 > max_depth) {
                out.invalidate(x, y);
            }
        }
    }
    out
}

/// End-to-end fusion controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructParams {
    pub tsdf: TsdfParams,
    pub max_depth: f64,
    /// Margin added around the union of camera frusta when sizing the volume.
    pub bounds_margin: f64,
    pub filters: FilterParams,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        Self {
            tsdf: TsdfParams::default(),
            max_depth: 10.0,
            bounds_margin: 0.1,
            filters: FilterParams::default(),
        }
    }
}

pub struct Reconstruction {
    pub mesh: TriangleMesh,
    /// Mesh vertices that survived the outlier filters.
    pub cloud: Vec<Vec3>,
    pub volume_dims: [usize; 3],
}

/// Fuses a posed depth sequence, extracts a mesh and filters floating points.
pub fn reconstruct(frames: &[(Pose, DepthMap)], k: &Intrinsics, params: &ReconstructParams) -> Result<Reconstruction> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames to fuse"));
    }
    let truncated: Vec<DepthMap> = frames.iter().map(|(_, d)| truncate_depth(d, params.max_depth)).collect();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for ((pose, _), depth) in frames.iter().zip(&truncated) {
        // Every observed surface point bounds the volume.
        for y in 0..depth.height() {
            for x in 0..depth.width() {
                if let Some(d) = depth.get(x, y) {
                    let p = unproject(x as f64, y as f64, d as f64, pose, k)?;
                    lo = lo.inf(&p);
                    hi = hi.sup(&p);
                }
            }
        }
    }
    if !lo.x.is_finite() {
        return Err(Error::Empty("all depth maps are invalid"));
    }
    let bounds = Aabb { min: lo, max: hi };
    let tau = params.tsdf.truncation(params.tsdf.voxel_size);
    let pad = params.bounds_margin + tau;
    let mut volume = TsdfVolume::covering(
        &Aabb {
            min: bounds.min.add_scalar(-pad),
            max: bounds.max.add_scalar(pad),
        },
        &params.tsdf,
    )?;
    for ((pose, _), depth) in frames.iter().zip(&truncated) {
        volume.integrate_frame(depth, pose, k)?;
    }
    let mesh = extract_mesh(&volume);
    let (mesh, cloud) = filter_mesh(&mesh, &params.filters)?;
    Ok(Reconstruction {
        mesh,
        cloud,
        volume_dims: volume.dims(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GroundPose;

    fn k() -> Intrinsics {
        Intrinsics::new(50.0, 50.0, 20.0, 15.0, 40, 30).unwrap()
    }

    #[test]
    fn empty_cloud_gives_invalid_map() {
        let d = sparse_depth_prior(&SparseCloud::default(), &Pose::identity(0), &k());
        assert_eq!(d.valid_count(), 0);
    }

    #[test]
    fn single_on_axis_point() {
        let cloud = SparseCloud::new(vec![Vec3::new(0.0, 0.0, 2.0)], vec![1]).unwrap();
        let d = sparse_depth_prior(&cloud, &Pose::identity(0), &k());
        assert_eq!(d.valid_count(), 1);
        assert_eq!(d.get(20, 15), Some(2.0));
    }

    #[test]
    fn z_buffer_keeps_nearest() {
        let pose = Pose::from_ground(0, &GroundPose::new(0.0, 0.0, 30.0), 1.2, 10.0);
        let near = unproject(7.0, 9.0, 1.0, &pose, &k()).unwrap();
        let far = unproject(7.0, 9.0, 3.0, &pose, &k()).unwrap();
        let cloud = SparseCloud::new(vec![far, near], vec![2, 3]).unwrap();
        let d = sparse_depth_prior(&cloud, &pose, &k());
        assert!((d.get(7, 9).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(d.valid_count(), 1);
    }

    #[test]
    fn sparse_cloud_validation() {
        assert!(SparseCloud::new(vec![Vec3::zeros()], vec![0]).is_err());
        assert!(SparseCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], vec![1]).is_err());
        assert!(SparseCloud::new(vec![Vec3::zeros()], vec![]).is_err());
    }

    #[test]
    fn truncation_examples() {
        let d = DepthMap::from_values(2, 2, vec![2.0; 4]).unwrap();
        assert_eq!(truncate_depth(&d, 10.0), d);
        let d = DepthMap::from_values(2, 1, vec![12.0, 3.0]).unwrap();
        let t = truncate_depth(&d, 10.0);
        assert_eq!(t.get(0, 0), None);
        assert_eq!(t.get(1, 0), Some(3.0));
    }

    #[test]
    fn truncation_count_matches_elementwise_oracle() {
        let values: Vec<f32> = (0..600).map(|i| ((i * 37) % 160) as f32 * 0.1).collect();
        let d = DepthMap::from_values(30, 20, values.clone()).unwrap();
        let expected = values.iter().filter(|&&v| v > 0.0 && v <= 10.0).count();
        assert_eq!(truncate_depth(&d, 10.0).valid_count(), expected);
    }
}
