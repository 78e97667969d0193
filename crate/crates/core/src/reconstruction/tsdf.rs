// Truncated signed distance volume with voxel-centric integration.
//
// Distances are stored normalized by the truncation distance, so every value
// lies in [-1, 1]. Positive values are in front of the observed surface.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, DepthMap, Intrinsics, Pose, Vec3};

const MAX_VOXELS: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsdfParams {
    pub voxel_size: f64,
    /// Truncation distance in voxels.
    pub truncation_voxels: f64,
    pub max_weight: f32,
}

impl Default for TsdfParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.02,
            truncation_voxels: 4.0,
            max_weight: 64.0,
        }
    }
}

impl TsdfParams {
    pub fn truncation(&self, voxel_size: f64) -> f64 {
        self.truncation_voxels * voxel_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    /// Center of voxel (0, 0, 0).
    origin: Vec3,
    voxel_size: f64,
    dims: [usize; 3],
    truncation: f64,
    max_weight: f32,
    distance: Vec<f32>,
    weight: Vec<f32>,
}

impl TsdfVolume {
    pub fn new(origin: Vec3, voxel_size: f64, dims: [usize; 3], truncation: f64, max_weight: f32) -> Result<Self> {
        if !(voxel_size > 0.0) {
            return Err(Error::invalid("voxel size must be positive"));
        }
        if !(truncation >= voxel_size) {
            return Err(Error::invalid("truncation must be at least one voxel"));
        }
        if !(max_weight > 0.0) {
            return Err(Error::invalid("max weight must be positive"));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 && n <= MAX_VOXELS)
            .ok_or_else(|| Error::invalid(format!("unsupported volume dimensions {dims:?}")))?;
        Ok(Self {
            origin,
            voxel_size,
            dims,
            truncation,
            max_weight,
            distance: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Smallest grid whose voxel centers cover `bounds`.
    pub fn covering(bounds: &Aabb, params: &TsdfParams) -> Result<Self> {
        let v = params.voxel_size;
        if !(v > 0.0) {
            return Err(Error::invalid("voxel size must be positive"));
        }
        let ext = bounds.extent();
        let dims = [0, 1, 2].map(|i| (ext[i] / v).ceil() as usize + 1);
        Self::new(bounds.min, v, dims, params.truncation(v), params.max_weight)
    }

    /// Fills the volume from an analytic signed distance, with unit weight
    /// everywhere.
    pub fn from_sdf(
        origin: Vec3,
        voxel_size: f64,
        dims: [usize; 3],
        truncation: f64,
        sdf: impl Fn(&Vec3) -> f64,
    ) -> Result<Self> {
        let mut vol = Self::new(origin, voxel_size, dims, truncation, 64.0)?;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = vol.index(x, y, z);
                    let d = sdf(&vol.voxel_center(x, y, z)) / truncation;
                    vol.distance[i] = d.clamp(-1.0, 1.0) as f32;
                    vol.weight[i] = 1.0;
                }
            }
        }
        Ok(vol)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn max_weight(&self) -> f32 {
        self.max_weight
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.voxel_size
    }

    pub fn distance_at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.distance[self.index(x, y, z)]
    }

    pub fn weight_at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.weight[self.index(x, y, z)]
    }

    pub fn distances(&self) -> &[f32] {
        &self.distance
    }

    pub fn weights(&self) -> &[f32] {
        &self.weight
    }

    /// Fuses one depth map. Each voxel inside the frustum that projects onto a
    /// valid pixel and lies no further than the truncation distance behind the
    /// measured surface receives a unit-weight running-average update.
    /// Z-slices are processed in parallel; each slice is owned by one task.
    pub fn integrate_frame(&mut self, depth: &DepthMap, pose: &Pose, k: &Intrinsics) -> Result<()> {
        if depth.dims() != k.dims() {
            return Err(Error::DimensionMismatch {
                expected: k.dims(),
                actual: depth.dims(),
            });
        }
        let [nx, ny, _] = self.dims;
        let slice = nx * ny;
        let rt = pose.rotation().transpose();
        // Camera-frame position of voxel (x, y, z) = base + x*step_x + y*step_y + z*step_z.
        let base = rt * (self.origin - pose.translation());
        let step = [Vec3::x(), Vec3::y(), Vec3::z()].map(|e| rt * (e * self.voxel_size));
        let tau = self.truncation;
        let max_w = self.max_weight;
        let (w_img, h_img) = (k.width as f64, k.height as f64);

        self.distance
            .par_chunks_mut(slice)
            .zip(self.weight.par_chunks_mut(slice))
            .enumerate()
            .for_each(|(z, (dist, wgt))| {
                let slice_base = base + step[2] * z as f64;
                for y in 0..ny {
                    let row = slice_base + step[1] * y as f64;
                    for x in 0..nx {
                        let pc = row + step[0] * x as f64;
                        if pc.z <= 0.0 {
                            continue;
                        }
                        let u = (k.fx * pc.x / pc.z + k.cx).round();
                        let v = (k.fy * pc.y / pc.z + k.cy).round();
                        if u < 0.0 || v < 0.0 || u >= w_img || v >= h_img {
                            continue;
                        }
                        let Some(measured) = depth.get(u as usize, v as usize) else { continue };
                        let sdf = measured as f64 - pc.z;
                        if sdf <= -tau {
                            continue;
                        }
                        let i = x + nx * y;
                        let obs = (sdf / tau).clamp(-1.0, 1.0) as f32;
                        let w = wgt[i];
                        dist[i] = (w * dist[i] + obs) / (w + 1.0);
                        wgt[i] = (w + 1.0).min(max_w);
                    }
                }
            });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GroundPose;
    use proptest::prelude::*;

    fn k() -> Intrinsics {
        Intrinsics::centered(40.0, 48, 36)
    }

    /// Camera at the origin looking along +x at a wall x = 2.
    fn wall_frame() -> (Pose, DepthMap, Intrinsics) {
        let k = k();
        let pose = Pose::from_ground(0, &GroundPose::new(0.0, 0.0, 0.0), 0.0, 0.0);
        let mut depth = DepthMap::new(k.width, k.height);
        for y in 0..k.height {
            for x in 0..k.width {
                depth.set(x, y, 2.0);
            }
        }
        (pose, depth, k)
    }

    fn volume() -> TsdfVolume {
        // Voxel centers x in [1.0, 3.0], a slab in front of the camera.
        TsdfVolume::new(Vec3::new(1.0, -0.3, -0.3), 0.05, [41, 13, 13], 0.2, 64.0).unwrap()
    }

    #[test]
    fn empty_depth_leaves_volume_untouched() {
        let (pose, _, k) = wall_frame();
        let mut vol = volume();
        let before = vol.clone();
        vol.integrate_frame(&DepthMap::new(k.width, k.height), &pose, &k).unwrap();
        assert_eq!(vol, before);
    }

    #[test]
    fn wall_normalized_distances() {
        let (pose, depth, k) = wall_frame();
        let mut vol = volume();
        vol.integrate_frame(&depth, &pose, &k).unwrap();
        // Voxel (20, 6, 6) is at x = 2.0 on the optical axis; (16, 6, 6) at 1.8 = 2 - tau.
        assert!(vol.distance_at(20, 6, 6).abs() < 1e-6);
        assert_eq!(vol.distance_at(16, 6, 6), 1.0);
        assert!((vol.distance_at(18, 6, 6) - 0.5).abs() < 1e-6);
        assert!((vol.distance_at(22, 6, 6) + 0.5).abs() < 1e-6);
        // At exactly -tau behind the wall nothing is written.
        assert_eq!(vol.weight_at(24, 6, 6), 0.0);
        assert_eq!(vol.weight_at(20, 6, 6), 1.0);
    }

    #[test]
    fn repeated_integration_is_a_fixed_point() {
        let (pose, depth, k) = wall_frame();
        let mut once = volume();
        once.integrate_frame(&depth, &pose, &k).unwrap();
        let mut twice = volume();
        twice.integrate_frame(&depth, &pose, &k).unwrap();
        twice.integrate_frame(&depth, &pose, &k).unwrap();
        for (a, b) in once.distances().iter().zip(twice.distances()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in once.weights().iter().zip(twice.weights()) {
            assert_eq!(*b, (2.0 * a).min(64.0));
        }
    }

    #[test]
    fn weight_is_capped() {
        let (pose, depth, k) = wall_frame();
        let mut vol = TsdfVolume::new(Vec3::new(1.0, -0.3, -0.3), 0.05, [41, 13, 13], 0.2, 3.0).unwrap();
        for _ in 0..5 {
            vol.integrate_frame(&depth, &pose, &k).unwrap();
        }
        assert!(vol.weights().iter().all(|&w| w <= 3.0));
        assert_eq!(vol.weight_at(20, 6, 6), 3.0);
    }

    #[test]
    fn mismatched_depth_size_is_rejected() {
        let (pose, _, k) = wall_frame();
        let mut vol = volume();
        let err = vol.integrate_frame(&DepthMap::new(10, 10), &pose, &k).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn constructor_validation() {
        assert!(TsdfVolume::new(Vec3::zeros(), 0.0, [2, 2, 2], 0.1, 64.0).is_err());
        assert!(TsdfVolume::new(Vec3::zeros(), 0.1, [2, 2, 2], 0.05, 64.0).is_err());
        assert!(TsdfVolume::new(Vec3::zeros(), 0.1, [0, 2, 2], 0.4, 64.0).is_err());
    }

    fn wavy_depth(k: &Intrinsics, phase: f32) -> DepthMap {
        let mut d = DepthMap::new(k.width, k.height);
        for y in 0..k.height {
            for x in 0..k.width {
                d.set(x, y, 2.0 + 0.1 * ((x as f32 * 0.3 + phase).sin() + (y as f32 * 0.2).cos()));
            }
        }
        d
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn bounds_hold_and_order_does_not_matter(
            views in prop::collection::vec((-0.3..0.3f64, -20.0..20.0f64, 0.0..6.0f32), 1..5),
            rot in 0usize..5,
        ) {
            let k = k();
            let frames: Vec<(Pose, DepthMap)> = views
                .iter()
                .map(|&(y, yaw, phase)| (Pose::from_ground(0, &GroundPose::new(0.0, y, yaw), 0.0, 0.0), wavy_depth(&k, phase)))
                .collect();
            let mut a = volume();
            for (p, d) in &frames {
                a.integrate_frame(d, p, &k).unwrap();
            }
            let mut permuted = frames.clone();
            let r = rot % permuted.len();
            permuted.rotate_left(r);
            permuted.reverse();
            let mut b = volume();
            for (p, d) in &permuted {
                b.integrate_frame(d, p, &k).unwrap();
            }
            for i in 0..a.distances().len() {
                prop_assert!(a.distances()[i].abs() <= 1.0);
                prop_assert!(a.weights()[i] >= 0.0 && a.weights()[i] <= a.max_weight());
                prop_assert!((a.distances()[i] - b.distances()[i]).abs() < 1e-5);
                prop_assert_eq!(a.weights()[i], b.weights()[i]);
            }
        }
    }
}
