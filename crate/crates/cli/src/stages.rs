use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vidscene::geometry::GroundPose;
use vidscene::instancelift::{segment, FrameMaskSet, FrameView, InstanceRecord, ViewSet};
use vidscene::io::{self, write_atomic};
use vidscene::metrics::{average_precision, f1_at_iou, nav_metrics, path_length, Detection, EpisodeResult, NavMetrics};
use vidscene::reconstruction::reconstruct;
use vidscene::scenegraph::{build_graph, SceneGraph, SceneNode};
use vidscene::synth::{gen_scene, write_dataset};
use vidscene::vln::{build_episodes, calibrate_scale, Landmark, NavEpisode, ScaleAnchor};
use vidscene::vqa::{self, Prediction, QaItem};
use vidscene::Vec3;

use crate::config::PipelineConfig;

pub struct Ctx {
    pub input: PathBuf,
    pub output: PathBuf,
    pub config: PipelineConfig,
}

pub struct Scene {
    pub id: String,
    pub input: PathBuf,
    pub output: PathBuf,
}

/// Scene directories under `input`, sorted by name. A directory without
/// subdirectories is itself a single scene.
pub fn scenes(ctx: &Ctx) -> Result<Vec<Scene>> {
    let read = std::fs::read_dir(&ctx.input).with_context(|| format!("reading input directory {}", ctx.input.display()))?;
    let mut dirs: Vec<PathBuf> = Vec::new();
    for entry in read {
        let p = entry?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() || ctx.input.join("poses.txt").exists() {
        dirs = vec![ctx.input.clone()];
    }
    Ok(dirs
        .into_iter()
        .map(|d| {
            let id = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "scene".into());
            Scene {
                output: ctx.output.join(&id),
                id,
                input: d,
            }
        })
        .collect())
}

/// Runs `f` over every scene in parallel; the first failure in scene order wins.
pub fn per_scene<F>(ctx: &Ctx, stage: &str, f: F) -> Result<()>
where
    F: Fn(&Scene) -> Result<BTreeMap<String, serde_json::Value>> + Sync,
{
    let scenes = scenes(ctx)?;
    let results: Vec<Result<()>> = scenes
        .par_iter()
        .map(|s| {
            std::fs::create_dir_all(&s.output).with_context(|| format!("creating {}", s.output.display()))?;
            let extra = f(s).with_context(|| format!("scene {}", s.id))?;
            write_meta(&s.output, stage, ctx, extra)
        })
        .collect();
    results.into_iter().collect::<Result<Vec<()>>>()?;
    log::info!("{stage}: {} scene(s) done", scenes.len());
    Ok(())
}

#[derive(Serialize)]
struct Meta<'a> {
    stage: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a PipelineConfig,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    details: BTreeMap<String, serde_json::Value>,
}

fn write_meta(dir: &Path, stage: &str, ctx: &Ctx, details: BTreeMap<String, serde_json::Value>) -> Result<()> {
    let meta = Meta {
        stage,
        version: env!("CARGO_PKG_VERSION"),
        seed: ctx.config.seed,
        config: &ctx.config,
        details,
    };
    write_atomic(&dir.join(format!("{stage}.meta.json")), &io::to_json_bytes(&meta))?;
    Ok(())
}

fn details<const N: usize>(pairs: [(&str, serde_json::Value); N]) -> BTreeMap<String, serde_json::Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn load_views(scene: &Scene) -> Result<ViewSet> {
    let k = io::read_intrinsics(&scene.input.join("intrinsics.json"))?;
    let poses = io::read_poses(&scene.input.join("poses.txt"))?;
    let mut views = BTreeMap::new();
    for pose in poses {
        let id = pose.frame_id;
        let dpath = scene.input.join(format!("depth_{id}.png"));
        let depth = io::decode_depth_png(&io::read_bytes(&dpath)?, &dpath)?;
        let mpath = scene.input.join(format!("mask_{id}.png"));
        let labels = if mpath.exists() {
            io::decode_label_png(&io::read_bytes(&mpath)?, &mpath)?
        } else {
            io::LabelImage::new(depth.width(), depth.height())
        };
        if depth.dims() != k.dims() || (labels.width, labels.height) != k.dims() {
            bail!("frame {id}: image size does not match the intrinsics");
        }
        views.insert(id, FrameView { pose, depth, labels });
    }
    Ok(ViewSet { intrinsics: k, views })
}

pub fn cmd_reconstruct(ctx: &Ctx) -> Result<()> {
    per_scene(ctx, "reconstruct", |scene| {
        let views = load_views(scene)?;
        let frames: Vec<_> = views.views.into_values().map(|v| (v.pose, v.depth)).collect();
        let rec = reconstruct(&frames, &views.intrinsics, &ctx.config.reconstruct)?;
        write_atomic(&scene.output.join("mesh.ply"), &io::encode_mesh_ply(&rec.mesh))?;
        write_atomic(&scene.output.join("cloud.ply"), &io::encode_points_ply(&rec.cloud))?;
        Ok(details([
            ("vertices", rec.mesh.vertices.len().into()),
            ("triangles", rec.mesh.triangles.len().into()),
            ("cloud_points", rec.cloud.len().into()),
            ("volume_dims", serde_json::json!(rec.volume_dims)),
        ]))
    })
}

/// One detection line: a box with its scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene_id: String,
    #[serde(flatten)]
    pub detection: Detection,
}

pub fn cmd_segment(ctx: &Ctx) -> Result<()> {
    per_scene(ctx, "segment", |scene| {
        let views = load_views(scene)?;
        let cpath = scene.input.join("categories.json");
        let categories = if cpath.exists() {
            io::parse_categories(&io::read_string(&cpath)?, &cpath)?
        } else {
            BTreeMap::new()
        };
        let frames: Vec<FrameMaskSet> = views
            .views
            .iter()
            .map(|(&id, v)| FrameMaskSet {
                frame_id: id,
                labels: v.labels.clone(),
                categories: categories.range((id, 0)..=(id, u16::MAX)).map(|((_, l), c)| (*l, c.clone())).collect(),
            })
            .collect();
        let instances = segment(&frames, &views, &ctx.config.lift)?;
        let dir = scene.output.join("instances");
        std::fs::create_dir_all(&dir)?;
        let n_views = views.views.len().max(1) as f64;
        let mut detections = Vec::new();
        for inst in &instances {
            write_atomic(&dir.join(format!("instance_{}.ply", inst.instance_id)), &io::encode_points_ply(&inst.points))?;
            detections.push(DetectionRecord {
                scene_id: scene.id.clone(),
                detection: Detection {
                    aabb: inst.aabb,
                    category: inst.category.clone().unwrap_or_default(),
                    // Share of frames whose masks support the instance.
                    confidence: Some((inst.members.len() as f64 / n_views).min(1.0)),
                },
            });
        }
        let records: Vec<InstanceRecord> = instances.iter().map(|i| i.record()).collect();
        write_atomic(&scene.output.join("instances.json"), &io::to_json_bytes(&records))?;
        write_atomic(&scene.output.join("detections.jsonl"), &io::to_jsonl_bytes(&detections))?;
        Ok(details([("instances", instances.len().into())]))
    })
}

fn load_nodes(scene: &Scene) -> Result<Vec<SceneNode>> {
    let records: Vec<InstanceRecord> = io::read_json(&scene.output.join("instances.json"))?;
    records
        .into_iter()
        .map(|r| {
            let path = scene.output.join("instances").join(format!("instance_{}.ply", r.id));
            let points = io::decode_ply(&io::read_bytes(&path)?, &path)?.vertices;
            Ok(SceneNode {
                id: r.id,
                category: r.category,
                centroid: Vec3::from(r.centroid),
                aabb: r.aabb,
                points,
            })
        })
        .collect()
}

pub fn cmd_scenegraph(ctx: &Ctx) -> Result<()> {
    per_scene(ctx, "scenegraph", |scene| {
        let nodes = load_nodes(scene)?;
        let cloud_path = scene.output.join("cloud.ply");
        let cloud = if cloud_path.exists() {
            io::decode_ply(&io::read_bytes(&cloud_path)?, &cloud_path)?.vertices
        } else {
            nodes.iter().flat_map(|n| n.points.iter().copied()).collect()
        };
        let graph = build_graph(nodes, Some(&cloud));
        write_atomic(&scene.output.join("scene_graph.json"), &io::to_json_bytes(&graph))?;
        Ok(details([
            ("nodes", graph.nodes.len().into()),
            ("edges", graph.edges.len().into()),
            ("room_extent", serde_json::json!(graph.room_extent)),
        ]))
    })
}

fn load_graph(scene: &Scene) -> Result<SceneGraph> {
    let mut graph: SceneGraph = io::read_json(&scene.output.join("scene_graph.json"))?;
    // Points are not stored in the graph; reattach them from the instances.
    let mut points: BTreeMap<u32, Vec<Vec3>> = load_nodes(scene)?.into_iter().map(|n| (n.id, n.points)).collect();
    for n in &mut graph.nodes {
        n.points = points.remove(&n.id).unwrap_or_default();
    }
    Ok(graph)
}

pub fn cmd_gen_vln(ctx: &Ctx) -> Result<()> {
    per_scene(ctx, "gen-vln", |scene| {
        let mut tour = scene.input.join("tour.txt");
        if !tour.exists() {
            tour = scene.input.join("poses.txt");
        }
        let poses = io::read_poses(&tour)?;
        let anchors_path = scene.input.join("anchors.json");
        let scale = if anchors_path.exists() {
            let anchors: Vec<ScaleAnchor> = io::read_json(&anchors_path)?;
            calibrate_scale(&anchors)?
        } else {
            log::warn!("{}: no anchors.json, assuming metric poses", scene.id);
            1.0
        };
        let graph_path = scene.output.join("scene_graph.json");
        let landmarks: Vec<Landmark> = if graph_path.exists() {
            let graph: SceneGraph = io::read_json(&graph_path)?;
            graph
                .nodes
                .iter()
                .filter_map(|n| {
                    Some(Landmark {
                        category: n.category.clone()?,
                        centroid: n.centroid,
                    })
                })
                .collect()
        } else {
            Vec::new()
        };
        let episodes = build_episodes(&scene.id, &poses, scale, &landmarks, &ctx.config.vln)?;
        write_atomic(&scene.output.join("episodes.jsonl"), &io::to_jsonl_bytes(&episodes))?;
        Ok(details([("episodes", episodes.len().into()), ("scale", scale.into())]))
    })
}

pub fn cmd_gen_vqa(ctx: &Ctx) -> Result<()> {
    per_scene(ctx, "gen-vqa", |scene| {
        let graph = load_graph(scene)?;
        let ep_path = scene.output.join("episodes.jsonl");
        let episodes: Vec<NavEpisode> = if ep_path.exists() { io::read_jsonl(&ep_path)? } else { Vec::new() };
        let items = vqa::generate(&scene.id, &graph, &episodes, &ctx.config.vqa)?;
        write_atomic(&scene.output.join("qa.jsonl"), &io::to_jsonl_bytes(&items))?;
        let mut per_task: BTreeMap<&str, usize> = BTreeMap::new();
        for i in &items {
            *per_task.entry(i.task.name()).or_default() += 1;
        }
        Ok(details([("items", items.len().into()), ("per_task", serde_json::json!(per_task))]))
    })
}

fn collect_outputs<T: serde::de::DeserializeOwned>(ctx: &Ctx, file: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for scene in scenes(ctx)? {
        out.extend(io::read_jsonl::<T>(&scene.output.join(file))?);
    }
    Ok(out)
}

fn write_report<T: Serialize>(ctx: &Ctx, stage: &str, file: &str, report: &T) -> Result<()> {
    std::fs::create_dir_all(&ctx.output)?;
    let bytes = io::to_json_bytes(report);
    write_atomic(&ctx.output.join(file), &bytes)?;
    write_meta(&ctx.output, stage, ctx, BTreeMap::new())?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

pub fn cmd_eval_vqa(ctx: &Ctx, predictions: &Path) -> Result<()> {
    let items: Vec<QaItem> = collect_outputs(ctx, "qa.jsonl")?;
    let preds: Vec<Prediction> = io::read_jsonl(predictions)?;
    let report = vqa::evaluate(&items, &preds)?;
    write_report(ctx, "eval-vqa", "vqa_report.json", &report)
}

/// One executed trajectory for an episode.
#[derive(Debug, Clone, Deserialize)]
pub struct NavPrediction {
    pub episode_id: String,
    pub executed_path: Vec<GroundPose>,
}

pub fn cmd_eval_vln(ctx: &Ctx, predictions: &Path) -> Result<()> {
    let episodes: Vec<NavEpisode> = collect_outputs(ctx, "episodes.jsonl")?;
    let preds: Vec<NavPrediction> = io::read_jsonl(predictions)?;
    let by_id: BTreeMap<&str, &NavPrediction> = preds.iter().map(|p| (p.episode_id.as_str(), p)).collect();
    let mut results = Vec::new();
    for ep in &episodes {
        let goal = ep.gt_path.last().context("episode without a path")?;
        // No prediction: the agent never left the start.
        let executed = by_id.get(ep.episode_id.as_str()).map(|p| p.executed_path.clone()).unwrap_or_else(|| vec![ep.start]);
        results.push(EpisodeResult {
            executed_path: executed,
            goal: [goal.x, goal.y],
            shortest_path_length: path_length(&ep.gt_path),
        });
    }
    let metrics: NavMetrics = nav_metrics(&results, ctx.config.success_radius)?;
    #[derive(Serialize)]
    struct Report {
        episodes: usize,
        missing: usize,
        #[serde(flatten)]
        metrics: NavMetrics,
    }
    let missing = episodes.iter().filter(|e| !by_id.contains_key(e.episode_id.as_str())).count();
    write_report(ctx, "eval-vln", "vln_report.json", &Report { episodes: episodes.len(), missing, metrics })
}

pub fn cmd_eval_det(ctx: &Ctx, predictions: Option<&Path>) -> Result<()> {
    let mut gt: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    let mut pred: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for scene in scenes(ctx)? {
        let recs: Vec<DetectionRecord> = io::read_jsonl(&scene.input.join("gt_detections.jsonl"))?;
        gt.entry(scene.id.clone()).or_default().extend(recs.into_iter().map(|r| r.detection));
        if predictions.is_none() {
            let recs: Vec<DetectionRecord> = io::read_jsonl(&scene.output.join("detections.jsonl"))?;
            pred.entry(scene.id.clone()).or_default().extend(recs.into_iter().map(|r| r.detection));
        }
    }
    if let Some(p) = predictions {
        for r in io::read_jsonl::<DetectionRecord>(p)? {
            pred.entry(r.scene_id).or_default().push(r.detection);
        }
    }
    #[derive(Serialize)]
    struct Score {
        iou: f64,
        f1: f64,
        ap: f64,
    }
    #[derive(Serialize)]
    struct Report {
        scenes: usize,
        /// Means over scenes.
        scores: Vec<Score>,
    }
    let empty = Vec::new();
    let mut scores = Vec::new();
    for &t in &ctx.config.det_iou_thresholds {
        let (mut f1, mut ap) = (0.0, 0.0);
        for (scene, g) in &gt {
            let p = pred.get(scene).unwrap_or(&empty);
            f1 += f1_at_iou(p, g, t);
            ap += average_precision(p, g, t);
        }
        let n = gt.len().max(1) as f64;
        scores.push(Score { iou: t, f1: f1 / n, ap: ap / n });
    }
    write_report(ctx, "eval-det", "det_report.json", &Report { scenes: gt.len(), scores })
}

pub fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.config;
    if cfg.synth_scenes == 0 {
        bail!("synth_scenes must be at least 1");
    }
    std::fs::create_dir_all(&ctx.output).with_context(|| format!("creating {}", ctx.output.display()))?;
    let results: Vec<Result<()>> = (0..cfg.synth_scenes)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            let spec = gen_scene(seed, &cfg.synth)?;
            let dir = ctx.output.join(format!("scene_{i:03}"));
            write_dataset(&spec, &cfg.synth, &dir)?;
            let gt: Vec<DetectionRecord> = spec
                .objects
                .iter()
                .map(|o| DetectionRecord {
                    scene_id: format!("scene_{i:03}"),
                    detection: Detection {
                        aabb: o.aabb,
                        category: o.category.clone(),
                        confidence: None,
                    },
                })
                .collect();
            write_atomic(&dir.join("gt_detections.jsonl"), &io::to_jsonl_bytes(&gt))?;
            write_meta(&dir, "synth", ctx, details([("scene_seed", seed.into()), ("objects", spec.objects.len().into())]))
        })
        .collect();
    results.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(())
}
