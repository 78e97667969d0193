//! Shared geometric types and projection math.
//!
//! # World convention
//!
//! The world frame is right-handed and **z-up**. The ground plane is x-y and
//! yaw is the rotation about +z measured counter-clockwise from +x, in degrees,
//! normalized to (-180, 180]. A positive yaw change is a left turn.
//!
//! Cameras are pinhole without distortion. In the camera frame +z is the
//! optical (forward) axis, +x points right in the image and +y points down.
//! A [`Pose`] maps camera coordinates to world coordinates:
//! `p_world = R * p_cam + t`, so `t` is the camera center.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Wrap an angle in degrees to (-180, 180].
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub frame_id: u32,
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not proper orthonormal.
    pub fn new(frame_id: u32, rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let deviation = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if deviation > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "frame {frame_id}: rotation is not orthonormal with det +1"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("frame {frame_id}: non-finite translation")));
        }
        Ok(Self {
            frame_id,
            rotation,
            translation,
        })
    }

    pub fn identity(frame_id: u32) -> Self {
        Self {
            frame_id,
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Quaternion components are scalar-last, as in the pose file.
    pub fn from_quaternion(frame_id: u32, t: Vec3, q: [f64; 4]) -> Result<Self> {
        let [x, y, z, w] = q;
        let norm = (x * x + y * y + z * z + w * w).sqrt();
        if !(norm.is_finite() && norm > 1e-9) {
            return Err(Error::invalid(format!("frame {frame_id}: zero quaternion")));
        }
        let uq = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Self::new(frame_id, *uq.to_rotation_matrix().matrix(), t)
    }

    /// Camera pose for an observer standing at a ground pose, with the optical
    /// center `height` meters above the floor and pitched down by `pitch_deg`.
    pub fn from_ground(frame_id: u32, ground: &GroundPose, height: f64, pitch_deg: f64) -> Self {
        let (st, ct) = ground.theta.to_radians().sin_cos();
        let (sp, cp) = pitch_deg.to_radians().sin_cos();
        let forward = Vec3::new(ct * cp, st * cp, -sp);
        let right = Vec3::new(st, -ct, 0.0);
        let down = forward.cross(&right);
        Self {
            frame_id,
            rotation: Matrix3::from_columns(&[right, down, forward]),
            translation: Vec3::new(ground.x, ground.y, height),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        [q.i, q.j, q.k, q.w]
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// World-frame direction of the optical axis.
    pub fn forward(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }

    /// Left-multiplies by a rotation about world +z.
    pub fn rotated_about_z(&self, degrees: f64) -> Self {
        let r = *nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), degrees.to_radians()).matrix();
        Self {
            frame_id: self.frame_id,
            rotation: r * self.rotation,
            translation: r * self.translation,
        }
    }

    /// Scales the camera center, e.g. to bring a reconstruction to metric units.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            translation: self.translation * factor,
            ..self.clone()
        }
    }
}

/// Pinhole camera model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Intrinsics with square pixels and a centered principal point.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Pixel index nearest to a continuous image coordinate, if inside the image.
    /// Pixel `(c, r)` is centered on coordinate `(c, r)`.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let (c, r) = (u.round(), v.round());
        if c >= 0.0 && r >= 0.0 && c < self.width as f64 && r < self.height as f64 {
            Some((c as usize, r as usize))
        } else {
            None
        }
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

/// Per-pixel metric depth. Invalid pixels are stored as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    /// An all-invalid map.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    /// Non-finite or non-positive entries become invalid.
    pub fn from_values(width: usize, height: usize, mut values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "depth buffer has {} values for a {width}x{height} image",
                values.len()
            )));
        }
        for v in values.iter_mut() {
            if !(v.is_finite() && *v > 0.0) {
                *v = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f32> {
        let d = self.values[y * self.width + x];
        (d > 0.0).then_some(d)
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] > 0.0
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f32) {
        self.values[y * self.width + x] = if depth.is_finite() && depth > 0.0 { depth } else { 0.0 };
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.values[y * self.width + x] = 0.0;
    }

    /// Raw row-major buffer; 0 marks invalid pixels.
    pub fn raw(&self) -> &[f32] {
        &self.values
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if (0..3).all(|i| min[i] <= max[i]) {
            Ok(Self { min, max })
        } else {
            Err(Error::invalid(format!("aabb min {min:?} exceeds max {max:?}")))
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            min = min.inf(p);
            max = max.sup(p);
        }
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x * e.y * e.z
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    /// Volume of the intersection, 0 when disjoint.
    pub fn intersection_volume(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|i| (self.max[i].min(other.max[i]) - self.min[i].max(other.min[i])).max(0.0))
            .product()
    }

    /// Euclidean gap between two boxes, 0 when they touch or overlap.
    pub fn distance(&self, other: &Aabb) -> f64 {
        (0..3)
            .map(|i| {
                let gap = (other.min[i] - self.max[i]).max(self.min[i] - other.max[i]).max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// True when the x-y footprints share positive area.
    pub fn footprint_overlaps(&self, other: &Aabb) -> bool {
        (0..2).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    /// Distance from a point to the box surface (also for interior points).
    pub fn surface_distance(&self, p: &Vec3) -> f64 {
        if self.contains(p) {
            (0..3)
                .map(|i| (p[i] - self.min[i]).min(self.max[i] - p[i]))
                .fold(f64::INFINITY, f64::min)
        } else {
            let q = p.sup(&self.min).inf(&self.max);
            (p - q).norm()
        }
    }
}

/// Camera position on the floor plane plus yaw in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl GroundPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_deg(theta),
        }
    }

    pub fn planar_distance(&self, other: &GroundPose) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    /// Bearing from this pose's position to another's, in degrees.
    pub fn bearing_to(&self, other: &GroundPose) -> f64 {
        (other.y - self.y).atan2(other.x - self.x).to_degrees()
    }
}

// Serialized as `[x, y, theta]`.
impl Serialize for GroundPose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x, self.y, self.theta].serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroundPose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x, y, theta] = <[f64; 3]>::deserialize(d)?;
        Ok(GroundPose::new(x, y, theta))
    }
}

/// Projects a world point to `(u, v, depth)`; `None` when behind the camera or
/// outside the image.
pub fn project(point: &Vec3, pose: &Pose, k: &Intrinsics) -> Option<(f64, f64, f64)> {
    let pc = pose.world_to_camera(point);
    if pc.z <= 0.0 {
        return None;
    }
    let u = k.fx * pc.x / pc.z + k.cx;
    let v = k.fy * pc.y / pc.z + k.cy;
    let inside = u >= 0.0 && v >= 0.0 && u < k.width as f64 && v < k.height as f64;
    inside.then_some((u, v, pc.z))
}

/// Back-projects an image coordinate at a camera-frame depth to world space.
pub fn unproject(u: f64, v: f64, depth: f64, pose: &Pose, k: &Intrinsics) -> Result<Vec3> {
    if !(depth > 0.0) {
        return Err(Error::invalid(format!("depth must be positive, got {depth}")));
    }
    let pc = Vec3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth);
    Ok(pose.camera_to_world(&pc))
}

/// Ground-plane projection of a camera pose.
pub fn ground_pose(pose: &Pose) -> Result<GroundPose> {
    let f = pose.forward();
    if f.x.hypot(f.y) < 1e-6 {
        return Err(Error::DegenerateYaw);
    }
    let t = pose.translation();
    Ok(GroundPose::new(t.x, t.y, f.y.atan2(f.x).to_degrees()))
}
