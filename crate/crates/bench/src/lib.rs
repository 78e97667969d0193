//! Shared fixtures for the benchmarks: rendered synthetic captures.

use vidscene::instancelift::{lift_masks, LiftParams, MaskNode, ViewSet};
use vidscene::synth::{gen_scene, render_views, SceneSpec, SynthConfig};
use vidscene::{DepthMap, Intrinsics, Pose};

pub struct Capture {
    pub spec: SceneSpec,
    pub intrinsics: Intrinsics,
    pub frames: Vec<(Pose, DepthMap)>,
    pub views: ViewSet,
    pub nodes: Vec<MaskNode>,
}

/// A 6 x 5 x 3 m room seen from `views` ring cameras.
pub fn capture(views: usize) -> Capture {
    let cfg = SynthConfig {
        room: Some([6.0, 5.0, 3.0]),
        views,
        ..SynthConfig::default()
    };
    let spec = gen_scene(1, &cfg).expect("synthetic layout");
    let k = cfg.intrinsics();
    let (masks, view_set) = render_views(&spec, &k, cfg.max_range);
    let params = LiftParams::default();
    let mut nodes = Vec::new();
    for m in &masks {
        let v = &view_set.views[&m.frame_id];
        nodes.extend(lift_masks(m, &v.depth, &v.pose, &k, params.min_pixels).expect("lift"));
    }
    let frames = view_set.views.values().map(|v| (v.pose.clone(), v.depth.clone())).collect();
    Capture {
        spec,
        intrinsics: k,
        frames,
        views: view_set,
        nodes,
    }
}
