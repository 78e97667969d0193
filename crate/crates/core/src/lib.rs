//! Scene-understanding dataset pipeline: curation of video frames, dense
//! reconstruction, 3D instance lifting, scene graphs, and generation plus
//! evaluation of spatial QA and navigation episodes.
//!
//! World frame is right-handed with z up; cameras look along +z with x right
//! and y down.

pub mod curation;
pub mod error;
pub mod geometry;
pub mod instancelift;
pub mod io;
pub mod metrics;
pub mod reconstruction;
pub mod scenegraph;
pub mod spatial;
pub mod synth;
pub mod vln;
pub mod vqa;

pub use error::{Error, Result};
pub use geometry::{ground_pose, project, unproject, wrap_deg, Aabb, DepthMap, GroundPose, Intrinsics, Pose, Vec3};
pub use reconstruction::{extract_mesh, TriangleMesh, TsdfParams, TsdfVolume};
