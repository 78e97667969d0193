//! Spatial question generation from scene graphs and navigation episodes.
//!
//! Question wording comes from fixed templates (see the README). Every item
//! carries a provenance record naming the nodes and values it was built
//! from, and [`recompute_answer`] rebuilds the answer from that record.

mod eval;

pub use eval::{eval_mca, eval_na_mra, evaluate, relative_accuracy, Prediction, QaReport, TaskScore, MRA_THRESHOLDS};

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_deg;
use crate::scenegraph::{category_index, closest_distance, longest_dimension_cm, SceneGraph, SceneNode};
use crate::vln::NavEpisode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QaTask {
    ObjectCount,
    RelativeDistance,
    RelativeDirection,
    ObjectSize,
    AbsoluteDistance,
    RoomSize,
    RoutePlan,
}

impl QaTask {
    pub const ALL: [QaTask; 7] = [
        QaTask::ObjectCount,
        QaTask::RelativeDistance,
        QaTask::RelativeDirection,
        QaTask::ObjectSize,
        QaTask::AbsoluteDistance,
        QaTask::RoomSize,
        QaTask::RoutePlan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QaTask::ObjectCount => "object_count",
            QaTask::RelativeDistance => "relative_distance",
            QaTask::RelativeDirection => "relative_direction",
            QaTask::ObjectSize => "object_size",
            QaTask::AbsoluteDistance => "absolute_distance",
            QaTask::RoomSize => "room_size",
            QaTask::RoutePlan => "route_plan",
        }
    }

    pub fn format(self) -> AnswerFormat {
        match self {
            QaTask::RelativeDistance | QaTask::RelativeDirection | QaTask::RoutePlan => AnswerFormat::Mca,
            _ => AnswerFormat::Na,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnswerFormat {
    #[serde(rename = "MCA")]
    Mca,
    #[serde(rename = "NA")]
    Na,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaOption {
    pub letter: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ObjectCount { category: String, node_ids: Vec<u32> },
    RelativeDistance { target: u32, candidates: Vec<u32>, distances: Vec<f64> },
    RelativeDirection { observer: u32, facing: u32, query: u32, angle_deg: f64 },
    ObjectSize { node: u32, extent: [f64; 3] },
    AbsoluteDistance { a: u32, b: u32, distance: f64 },
    RoomSize { extent: [f64; 2] },
    RoutePlan { episode_id: String, steps: Vec<String>, turns: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub scene_id: String,
    pub task: QaTask,
    pub format: AnswerFormat,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<QaOption>>,
    pub answer: String,
    pub provenance: Provenance,
}

impl QaItem {
    pub fn option_letter(&self, text: &str) -> Option<&str> {
        self.options.as_ref()?.iter().find(|o| o.text == text).map(|o| o.letter.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub seed: u64,
    /// Upper bound on items per task and scene.
    pub max_per_task: usize,
    /// The runner-up in a relative-distance item must be this much farther.
    pub min_margin_m: f64,
    /// Relative-direction items this close to a quadrant boundary are skipped.
    pub direction_deadzone_deg: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_per_task: 10,
            min_margin_m: 0.15,
            direction_deadzone_deg: 10.0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_per_task == 0 || !(self.min_margin_m > 0.0) || !(self.direction_deadzone_deg > 0.0) {
            return Err(Error::invalid("generation caps, margin and dead zone must be positive"));
        }
        Ok(())
    }
}

pub type CategoryIndex = BTreeMap<String, Vec<u32>>;

const LETTERS: [&str; 4] = ["A", "B", "C", "D"];
pub const BLANK: &str = "[please fill in]";
pub const TURN_ALPHABET: [&str; 3] = ["turn left", "turn right", "turn back"];
pub const DIRECTIONS: [&str; 4] = ["front", "left", "back", "right"];

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Independent stream per (seed, scene, task).
fn task_rng(cfg: &GenConfig, scene_id: &str, task: QaTask) -> ChaCha8Rng {
    let key = format!("{scene_id}\u{0}{}", task.name());
    ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()) ^ cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn item_id(scene_id: &str, task: QaTask, n: usize) -> String {
    format!("{scene_id}_{}_{n:03}", task.name())
}

fn lettered(texts: Vec<String>) -> Vec<QaOption> {
    texts
        .into_iter()
        .zip(LETTERS)
        .map(|(text, l)| QaOption {
            letter: l.to_string(),
            text,
        })
        .collect()
}

fn format_options(options: &[QaOption]) -> String {
    options.iter().map(|o| format!("{}. {}", o.letter, o.text)).collect::<Vec<_>>().join(" ")
}

fn unique_nodes<'a>(graph: &'a SceneGraph, index: &CategoryIndex) -> Vec<&'a SceneNode> {
    index
        .values()
        .filter(|ids| ids.len() == 1)
        .filter_map(|ids| graph.node(ids[0]))
        .collect()
}

fn cat(n: &SceneNode) -> &str {
    n.category.as_deref().unwrap_or("object")
}

/// One item per category with two or more instances.
pub fn gen_object_count(scene_id: &str, index: &CategoryIndex, cfg: &GenConfig) -> Vec<QaItem> {
    let task = QaTask::ObjectCount;
    index
        .iter()
        .filter(|(_, ids)| ids.len() >= 2)
        .take(cfg.max_per_task)
        .enumerate()
        .map(|(n, (category, ids))| QaItem {
            id: item_id(scene_id, task, n),
            scene_id: scene_id.to_string(),
            task,
            format: task.format(),
            question: format!("How many {category}(s) are in this room?"),
            options: None,
            answer: ids.len().to_string(),
            provenance: Provenance::ObjectCount {
                category: category.clone(),
                node_ids: ids.clone(),
            },
        })
        .collect()
}

/// Which of four unique-category candidates is closest to a unique-category target.
pub fn gen_relative_distance(scene_id: &str, graph: &SceneGraph, index: &CategoryIndex, cfg: &GenConfig) -> Vec<QaItem> {
    let task = QaTask::RelativeDistance;
    let pool = unique_nodes(graph, index);
    if pool.len() < 5 {
        return Vec::new();
    }
    let mut rng = task_rng(cfg, scene_id, task);
    let mut targets = pool.clone();
    targets.shuffle(&mut rng);
    let mut out = Vec::new();
    for target in targets {
        if out.len() >= cfg.max_per_task {
            break;
        }
        let others: Vec<&SceneNode> = pool.iter().copied().filter(|n| n.id != target.id).collect();
        let candidates: Vec<&SceneNode> = others.choose_multiple(&mut rng, 4).copied().collect();
        let distances: Vec<f64> = candidates.iter().map(|c| closest_distance(target, c)).collect();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
        if distances[order[1]] - distances[order[0]] < cfg.min_margin_m {
            continue;
        }
        let mut texts: Vec<String> = candidates.iter().map(|c| cat(c).to_string()).collect();
        texts.shuffle(&mut rng);
        let options = lettered(texts);
        let answer = options.iter().find(|o| o.text == cat(candidates[order[0]])).map(|o| o.letter.clone()).unwrap_or_default();
        let names: Vec<&str> = candidates.iter().map(|c| cat(c)).collect();
        out.push(QaItem {
            id: item_id(scene_id, task, out.len()),
            scene_id: scene_id.to_string(),
            task,
            format: task.format(),
            question: format!(
                "Measuring from the closest point of each object, which of these objects ({}) is the closest to the {}? {}",
                names.join(", "),
                cat(target),
                format_options(&options)
            ),
            options: Some(options),
            answer,
            provenance: Provenance::RelativeDistance {
                target: target.id,
                candidates: candidates.iter().map(|c| c.id).collect(),
                distances,
            },
        });
    }
    out
}

/// Signed angle of `query` from the heading observer -> facing, in degrees,
/// positive to the left.
pub fn direction_angle(observer: &SceneNode, facing: &SceneNode, query: &SceneNode) -> f64 {
    let (o, f, q) = (observer.centroid, facing.centroid, query.centroid);
    let heading = (f.y - o.y).atan2(f.x - o.x).to_degrees();
    let bearing = (q.y - o.y).atan2(q.x - o.x).to_degrees();
    wrap_deg(bearing - heading)
}

/// Quadrant word for a signed angle; boundaries go to left/right.
pub fn direction_word(angle_deg: f64) -> &'static str {
    let a = angle_deg.abs();
    if a < 45.0 {
        "front"
    } else if a > 135.0 {
        "back"
    } else if angle_deg > 0.0 {
        "left"
    } else {
        "right"
    }
}

/// Standing at A facing B, where is C?
pub fn gen_relative_direction(scene_id: &str, graph: &SceneGraph, index: &CategoryIndex, cfg: &GenConfig) -> Vec<QaItem> {
    let task = QaTask::RelativeDirection;
    let pool = unique_nodes(graph, index);
    if pool.len() < 3 {
        return Vec::new();
    }
    let mut rng = task_rng(cfg, scene_id, task);
    let mut triples = Vec::new();
    for a in &pool {
        for b in &pool {
            for c in &pool {
                if a.id != b.id && a.id != c.id && b.id != c.id {
                    triples.push((*a, *b, *c));
                }
            }
        }
    }
    triples.shuffle(&mut rng);
    let mut out = Vec::new();
    for (a, b, c) in triples {
        if out.len() >= cfg.max_per_task {
            break;
        }
        let planar = |p: &SceneNode, q: &SceneNode| (p.centroid.x - q.centroid.x).hypot(p.centroid.y - q.centroid.y);
        if planar(a, b) < 1e-6 || planar(a, c) < 1e-6 {
            continue;
        }
        let angle = direction_angle(a, b, c);
        let dz = cfg.direction_deadzone_deg;
        if (angle.abs() - 45.0).abs() < dz || (angle.abs() - 135.0).abs() < dz {
            continue;
        }
        let mut texts: Vec<String> = DIRECTIONS.iter().map(|s| s.to_string()).collect();
        texts.shuffle(&mut rng);
        let options = lettered(texts);
        let word = direction_word(angle);
        let answer = options.iter().find(|o| o.text == word).map(|o| o.letter.clone()).unwrap_or_default();
        out.push(QaItem {
            id: item_id(scene_id, task, out.len()),
            scene_id: scene_id.to_string(),
            task,
            format: task.format(),
            question: format!(
                "If I am standing by the {} and facing the {}, is the {} to my front, left, back, or right? {}",
                cat(a),
                cat(b),
                cat(c),
                format_options(&options)
            ),
            options: Some(options),
            answer,
            provenance: Provenance::RelativeDirection {
                observer: a.id,
                facing: b.id,
                query: c.id,
                angle_deg: angle,
            },
        });
    }
    out
}

/// Longest box dimension in whole centimeters, one item per unique-category node.
pub fn gen_object_size(scene_id: &str, graph: &SceneGraph, index: &CategoryIndex, cfg: &GenConfig) -> Vec<QaItem> {
    let task = QaTask::ObjectSize;
    unique_nodes(graph, index)
        .into_iter()
        .take(cfg.max_per_task)
        .enumerate()
        .map(|(n, node)| {
            let e = node.aabb.extent();
            QaItem {
                id: item_id(scene_id, task, n),
                scene_id: scene_id.to_string(),
                task,
                format: task.format(),
                question: format!(
                    "What is the length of the longest dimension (length, width, or height) of the {}, measured in centimeters?",
                    cat(node)
                ),
                options: None,
                answer: format!("{}", longest_dimension_cm(&node.aabb).round() as i64),
                provenance: Provenance::ObjectSize {
                    node: node.id,
                    extent: [e.x, e.y, e.z],
                },
            }
        })
        .collect()
}

/// Closest-point distance in meters between seeded unique-category pairs.
pub fn gen_absolute_distance(scene_id: &str, graph: &SceneGraph, index: &CategoryIndex, cfg: &GenConfig) -> Vec<QaItem> {
    let task = QaTask::AbsoluteDistance;
    let pool = unique_nodes(graph, index);
    let mut pairs = Vec::new();
    for (i, a) in pool.iter().enumerate() {
        for b in &pool[i + 1..] {
            pairs.push((*a, *b));
        }
    }
    let mut rng = task_rng(cfg, scene_id, task);
    pairs.shuffle(&mut rng);
    pairs
        .into_iter()
        .take(cfg.max_per_task)
        .enumerate()
        .map(|(n, (a, b))| {
            let d = closest_distance(a, b);
            QaItem {
                id: item_id(scene_id, task, n),
                scene_id: scene_id.to_string(),
                task,
                format: task.format(),
                question: format!(
                    "Measuring from the closest point of each object, what is the distance between the {} and the {} (in meters)?",
                    cat(a),
                    cat(b)
                ),
                options: None,
                answer: format!("{d:.1}"),
                provenance: Provenance::AbsoluteDistance { a: a.id, b: b.id, distance: d },
            }
        })
        .collect()
}

/// Floor area of the room in square meters.
pub fn gen_room_size(scene_id: &str, graph: &SceneGraph) -> Option<QaItem> {
    let task = QaTask::RoomSize;
    let area = graph.room_area();
    (area > 0.0).then(|| QaItem {
        id: item_id(scene_id, task, 0),
        scene_id: scene_id.to_string(),
        task,
        format: task.format(),
        question: "What is the size of this room (in square meters)? If multiple rooms are shown, estimate the size of the combined space."
            .into(),
        options: None,
        answer: format!("{area:.1}"),
        provenance: Provenance::RoomSize {
            extent: graph.room_extent,
        },
    })
}

fn step_text(action: &str, landmark: Option<&str>) -> String {
    match (action, landmark) {
        ("forward", Some(l)) => format!("go forward until the {l}"),
        ("forward", None) => "go forward".into(),
        (a, _) => a.to_string(),
    }
}

/// Route with its turns blanked out; options are turn sequences.
pub fn gen_route_plan(episode: &NavEpisode, cfg: &GenConfig) -> Option<QaItem> {
    let task = QaTask::RoutePlan;
    let mut steps = Vec::new();
    let mut turns = Vec::new();
    for e in &episode.summary {
        if e.action.starts_with("turn") {
            turns.push(e.action.clone());
            steps.push(BLANK.to_string());
        } else {
            steps.push(step_text(&e.action, e.landmark.as_deref()));
        }
    }
    if turns.is_empty() {
        return None;
    }
    let correct = turns.join(", ");
    let mut rng = task_rng(cfg, &episode.episode_id, task);
    let mut texts = vec![correct.clone()];
    if turns.len() == 1 {
        texts.extend(TURN_ALPHABET.iter().filter(|t| **t != correct).map(|t| t.to_string()));
    } else {
        while texts.len() < 4 {
            let cand = (0..turns.len()).map(|_| TURN_ALPHABET[rng.random_range(0..3)]).collect::<Vec<_>>().join(", ");
            if !texts.contains(&cand) {
                texts.push(cand);
            }
        }
    }
    texts.shuffle(&mut rng);
    let options = lettered(texts);
    let answer = options.iter().find(|o| o.text == correct).map(|o| o.letter.clone())?;
    let route = steps.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join(" ");
    Some(QaItem {
        id: format!("{}_{}", episode.episode_id, task.name()),
        scene_id: episode.scene_id.clone(),
        task,
        format: task.format(),
        question: format!(
            "You are a robot beginning at your starting position. You want to follow this route: {route} \
             Which turns fill in the blanks, in order? {}",
            format_options(&options)
        ),
        options: Some(options),
        answer,
        provenance: Provenance::RoutePlan {
            episode_id: episode.episode_id.clone(),
            steps,
            turns,
        },
    })
}

/// All tasks for one scene, in task order.
pub fn generate(scene_id: &str, graph: &SceneGraph, episodes: &[NavEpisode], cfg: &GenConfig) -> Result<Vec<QaItem>> {
    cfg.validate()?;
    let index = category_index(graph);
    let mut out = gen_object_count(scene_id, &index, cfg);
    out.extend(gen_relative_distance(scene_id, graph, &index, cfg));
    out.extend(gen_relative_direction(scene_id, graph, &index, cfg));
    out.extend(gen_object_size(scene_id, graph, &index, cfg));
    out.extend(gen_absolute_distance(scene_id, graph, &index, cfg));
    out.extend(gen_room_size(scene_id, graph));
    out.extend(episodes.iter().filter_map(|e| gen_route_plan(e, cfg)).take(cfg.max_per_task));
    Ok(out)
}

fn node<'a>(graph: &'a SceneGraph, id: u32) -> Result<&'a SceneNode> {
    graph.node(id).ok_or_else(|| Error::invalid(format!("provenance names missing node {id}")))
}

fn letter_for(item: &QaItem, text: &str) -> Result<String> {
    item.option_letter(text)
        .map(str::to_string)
        .ok_or_else(|| Error::invalid(format!("{}: no option reads {text:?}", item.id)))
}

/// Rebuilds the answer from the provenance record, re-measuring every
/// geometric quantity on `graph`.
pub fn recompute_answer(item: &QaItem, graph: &SceneGraph) -> Result<String> {
    match &item.provenance {
        Provenance::ObjectCount { category, .. } => {
            Ok(graph.nodes.iter().filter(|n| n.category.as_deref() == Some(category)).count().to_string())
        }
        Provenance::RelativeDistance { target, candidates, .. } => {
            let t = node(graph, *target)?;
            let mut best: Option<(f64, &SceneNode)> = None;
            for &c in candidates {
                let n = node(graph, c)?;
                let d = closest_distance(t, n);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, n));
                }
            }
            let (_, winner) = best.ok_or(Error::Empty("relative distance without candidates"))?;
            letter_for(item, cat(winner))
        }
        Provenance::RelativeDirection { observer, facing, query, .. } => {
            let angle = direction_angle(node(graph, *observer)?, node(graph, *facing)?, node(graph, *query)?);
            letter_for(item, direction_word(angle))
        }
        Provenance::ObjectSize { node: id, .. } => {
            Ok(format!("{}", longest_dimension_cm(&node(graph, *id)?.aabb).round() as i64))
        }
        Provenance::AbsoluteDistance { a, b, .. } => {
            Ok(format!("{:.1}", closest_distance(node(graph, *a)?, node(graph, *b)?)))
        }
        Provenance::RoomSize { .. } => Ok(format!("{:.1}", graph.room_area())),
        Provenance::RoutePlan { turns, .. } => letter_for(item, &turns.join(", ")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, GroundPose, Vec3};
    use crate::scenegraph::build_graph;
    use crate::synth::{gen_scene, gt_answers, gt_graph, SynthConfig};
    use crate::vln::SummaryEntry;
    use proptest::prelude::*;

    fn boxed(id: u32, category: &str, min: [f64; 3], max: [f64; 3]) -> SceneNode {
        let aabb = Aabb::new(Vec3::from(min), Vec3::from(max)).unwrap();
        SceneNode {
            id,
            category: Some(category.into()),
            centroid: aabb.center(),
            aabb,
            points: Vec::new(),
        }
    }

    fn unit(id: u32, category: &str, x: f64, y: f64) -> SceneNode {
        boxed(id, category, [x - 0.5, y - 0.5, 0.0], [x + 0.5, y + 0.5, 1.0])
    }

    fn graph(nodes: Vec<SceneNode>) -> SceneGraph {
        build_graph(nodes, None)
    }

    fn synth(seed: u64) -> (crate::synth::SceneSpec, SceneGraph) {
        let spec = gen_scene(seed, &SynthConfig::default()).unwrap();
        let g = gt_graph(&spec);
        (spec, g)
    }

    fn episode(turns: &[&str]) -> NavEpisode {
        let mut summary = Vec::new();
        for t in turns {
            summary.push(SummaryEntry {
                action: "forward".into(),
                landmark: Some("chair".into()),
            });
            summary.push(SummaryEntry {
                action: t.to_string(),
                landmark: None,
            });
        }
        summary.push(SummaryEntry {
            action: "stop".into(),
            landmark: None,
        });
        NavEpisode {
            episode_id: "s_000".into(),
            scene_id: "s".into(),
            start: GroundPose::new(0.0, 0.0, 0.0),
            gt_path: Vec::new(),
            actions: Vec::new(),
            summary,
        }
    }

    #[test]
    fn counts() {
        let g = graph(vec![
            unit(0, "chair", 0.0, 0.0),
            unit(1, "chair", 3.0, 0.0),
            unit(2, "chair", 6.0, 0.0),
            unit(3, "table", 9.0, 0.0),
        ]);
        let items = gen_object_count("s", &category_index(&g), &GenConfig::default());
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].answer, "3");

        for seed in [2, 5] {
            let (spec, g) = synth(seed);
            let mut oracle: BTreeMap<&str, usize> = BTreeMap::new();
            for o in &spec.objects {
                *oracle.entry(&o.category).or_default() += 1;
            }
            for item in gen_object_count("s", &category_index(&g), &GenConfig::default()) {
                let Provenance::ObjectCount { category, .. } = &item.provenance else { panic!() };
                assert_eq!(item.answer, oracle[category.as_str()].to_string());
            }
        }
    }

    #[test]
    fn relative_distance_picks_nearest() {
        let g = graph(vec![
            unit(0, "target", 0.0, 0.0),
            unit(1, "one", 2.0, 0.0),
            unit(2, "two", -3.0, 0.0),
            unit(3, "three", 0.0, 4.0),
            unit(4, "four", 0.0, -5.0),
        ]);
        let cfg = GenConfig::default();
        let items = gen_relative_distance("s", &g, &category_index(&g), &cfg);
        let from_target: Vec<_> = items
            .iter()
            .filter(|i| matches!(i.provenance, Provenance::RelativeDistance { target: 0, .. }))
            .collect();
        assert_eq!(from_target.len(), 1);
        assert_eq!(from_target[0].option_letter("one").unwrap(), from_target[0].answer);

        // Ambiguity guard.
        let g = graph(vec![
            unit(0, "target", 0.0, 0.0),
            unit(1, "one", 2.0, 0.0),
            unit(2, "two", -2.1, 0.0),
            unit(3, "three", 0.0, 4.0),
            unit(4, "four", 0.0, -5.0),
        ]);
        let items = gen_relative_distance("s", &g, &category_index(&g), &cfg);
        assert!(items.iter().all(|i| !matches!(i.provenance, Provenance::RelativeDistance { target: 0, .. })));
    }

    #[test]
    fn relative_distance_matches_brute_force_ranking() {
        let (spec, g) = synth(9);
        let items = gen_relative_distance("s", &g, &category_index(&g), &GenConfig::default());
        assert!(!items.is_empty());
        for item in items {
            let Provenance::RelativeDistance { target, candidates, .. } = &item.provenance else { panic!() };
            // Exhaustive oracle over the analytic box gaps.
            let t = spec.objects[*target as usize].aabb;
            let mut ranked: Vec<(f64, u32)> =
                candidates.iter().map(|&c| (t.distance(&spec.objects[c as usize].aabb), c)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert!(ranked[1].0 - ranked[0].0 >= 0.15 - 1e-9);
            let winner = &spec.objects[ranked[0].1 as usize].category;
            assert_eq!(item.option_letter(winner).unwrap(), item.answer);
        }
    }

    #[test]
    fn direction_examples() {
        let a = unit(0, "a", 0.0, 0.0);
        let b = unit(1, "b", 2.0, 0.0);
        assert_eq!(direction_word(direction_angle(&a, &b, &unit(2, "c", 5.0, 0.0))), "front");
        assert_eq!(direction_word(direction_angle(&a, &b, &unit(2, "c", 0.0, 3.0))), "left");
        assert_eq!(direction_word(direction_angle(&a, &b, &unit(2, "c", 0.0, -3.0))), "right");
        assert_eq!(direction_word(direction_angle(&a, &b, &unit(2, "c", -3.0, 0.1))), "back");
    }

    #[test]
    fn direction_matches_atan2_oracle() {
        let (spec, g) = synth(4);
        let items = gen_relative_direction("s", &g, &category_index(&g), &GenConfig::default());
        assert!(!items.is_empty());
        for item in items {
            let Provenance::RelativeDirection { observer, facing, query, .. } = item.provenance else { panic!() };
            let c = |i: u32| spec.objects[i as usize].aabb.center();
            let (o, f, q) = (c(observer), c(facing), c(query));
            // Rotate into the observer frame: x ahead, y to the left.
            let h = (f.y - o.y).atan2(f.x - o.x);
            let (dx, dy) = (q.x - o.x, q.y - o.y);
            let ahead = dx * h.cos() + dy * h.sin();
            let left = -dx * h.sin() + dy * h.cos();
            let deg = left.atan2(ahead).to_degrees();
            assert!((deg.abs() - 45.0).abs() >= 10.0 && (deg.abs() - 135.0).abs() >= 10.0);
            let word = if ahead > left.abs() {
                "front"
            } else if -ahead > left.abs() {
                "back"
            } else if left > 0.0 {
                "left"
            } else {
                "right"
            };
            assert_eq!(item.option_letter(word).unwrap(), item.answer);
        }
    }

    #[test]
    fn size_and_distance_examples() {
        let g = graph(vec![
            boxed(0, "cabinet", [0.0, 0.0, 0.0], [0.5, 1.2, 0.8]),
            boxed(1, "crate", [5.0, 5.0, 0.0], [6.0, 6.0, 1.0]),
            boxed(2, "sofa", [9.0, 0.0, 0.0], [11.2, 0.9, 0.8]),
        ]);
        let items = gen_object_size("s", &g, &category_index(&g), &GenConfig::default());
        let by: BTreeMap<&str, &str> = items
            .iter()
            .map(|i| {
                let Provenance::ObjectSize { node, .. } = i.provenance else { panic!() };
                (g.node(node).unwrap().category.as_deref().unwrap(), i.answer.as_str())
            })
            .collect();
        assert_eq!(by["cabinet"], "120");
        assert_eq!(by["crate"], "100");
        assert_eq!(by["sofa"], "220");

        let g = graph(vec![unit(0, "a", 0.0, 0.0), unit(1, "b", 3.0, 0.0)]);
        let items = gen_absolute_distance("s", &g, &category_index(&g), &GenConfig::default());
        assert_eq!(items[0].answer, "2.0");
        let g = graph(vec![unit(0, "a", 0.0, 0.0), unit(1, "b", 1.0, 0.0)]);
        let items = gen_absolute_distance("s", &g, &category_index(&g), &GenConfig::default());
        assert_eq!(items[0].answer, "0.0");
    }

    #[test]
    fn absolute_distance_matches_closest_point_oracle() {
        let (spec, g) = synth(6);
        let items = gen_absolute_distance("s", &g, &category_index(&g), &GenConfig::default());
        assert!(!items.is_empty());
        for item in items {
            let Provenance::AbsoluteDistance { a, b, .. } = item.provenance else { panic!() };
            let pa = crate::synth::surface_points(&spec.objects[a as usize].aabb, 0.05);
            let pb = crate::synth::surface_points(&spec.objects[b as usize].aabb, 0.05);
            let brute = pa.iter().flat_map(|p| pb.iter().map(move |q| (p - q).norm())).fold(f64::INFINITY, f64::min);
            let got: f64 = item.answer.parse().unwrap();
            assert!((got - brute).abs() <= 0.05 + 1e-9);
        }
    }

    #[test]
    fn room_size_examples() {
        let mut g = graph(vec![]);
        g.room_extent = [4.0, 5.0];
        assert_eq!(gen_room_size("s", &g).unwrap().answer, "20.0");
        g.room_extent = [3.0, 3.0];
        assert_eq!(gen_room_size("s", &g).unwrap().answer, "9.0");
        let (spec, g) = synth(1);
        let got: f64 = gen_room_size("s", &g).unwrap().answer.parse().unwrap();
        assert!((got - spec.room[0] * spec.room[1]).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn route_plan_options() {
        let cfg = GenConfig::default();
        let one = gen_route_plan(&episode(&["turn left"]), &cfg).unwrap();
        let opts = one.options.as_ref().unwrap();
        assert_eq!(opts.len(), 3);
        assert_eq!(opts.iter().filter(|o| o.text == "turn left").count(), 1);
        assert_eq!(one.option_letter("turn left").unwrap(), one.answer);
        assert!(one.question.contains(BLANK));
        assert!(!one.question.contains("1. go forward until the chair 2. turn"));

        let two = gen_route_plan(&episode(&["turn right", "turn left"]), &cfg).unwrap();
        let opts = two.options.as_ref().unwrap();
        assert_eq!(opts.len(), 4);
        assert_eq!(opts.iter().filter(|o| o.text == "turn right, turn left").count(), 1);
        assert_eq!(two, gen_route_plan(&episode(&["turn right", "turn left"]), &cfg).unwrap());
        assert!(gen_route_plan(&episode(&[]), &cfg).is_none());
    }

    #[test]
    fn provenance_recomputes_and_options_are_distinct() {
        for seed in 0..5 {
            let (spec, g) = synth(seed);
            let items = generate("scene", &g, &[episode(&["turn back", "turn left"])], &GenConfig::default()).unwrap();
            let gt = gt_answers(&spec);
            assert!(QaTask::ALL.iter().all(|t| items.iter().any(|i| i.task == *t)), "seed {seed}");
            for item in &items {
                assert_eq!(recompute_answer(item, &g).unwrap(), item.answer, "{}", item.id);
                match item.format {
                    AnswerFormat::Mca => {
                        let opts = item.options.as_ref().unwrap();
                        assert!(opts.len() == 3 || opts.len() == 4);
                        assert_eq!(opts.iter().filter(|o| o.letter == item.answer).count(), 1);
                        let texts: std::collections::BTreeSet<_> = opts.iter().map(|o| &o.text).collect();
                        assert_eq!(texts.len(), opts.len());
                    }
                    AnswerFormat::Na => {
                        assert!(item.options.is_none());
                        assert!(item.answer.parse::<f64>().is_ok());
                    }
                }
                if let Provenance::ObjectSize { node, .. } = item.provenance {
                    assert_eq!(item.answer, format!("{}", gt.sizes_cm[node as usize].round() as i64));
                }
            }
            let again = generate("scene", &g, &[episode(&["turn back", "turn left"])], &GenConfig::default()).unwrap();
            assert_eq!(crate::io::to_jsonl_bytes(&items), crate::io::to_jsonl_bytes(&again));
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let (_, g) = synth(3);
        let items = generate("scene", &g, &[episode(&["turn left"])], &GenConfig::default()).unwrap();
        let bytes = crate::io::to_jsonl_bytes(&items);
        let back: Vec<QaItem> = crate::io::parse_jsonl(std::str::from_utf8(&bytes).unwrap(), "x".as_ref()).unwrap();
        assert_eq!(back, items);
        let first: serde_json::Value = serde_json::from_slice(bytes.split(|&b| b == b'\n').next().unwrap()).unwrap();
        assert_eq!(first["format"], "NA");
        assert!(first.get("options").is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn seeds_change_only_order(seed in 0u64..1000) {
            let (_, g) = synth(seed % 7);
            let cfg = GenConfig { seed, ..GenConfig::default() };
            for item in generate("scene", &g, &[], &cfg).unwrap() {
                prop_assert_eq!(recompute_answer(&item, &g).unwrap(), item.answer);
            }
        }
    }
}
