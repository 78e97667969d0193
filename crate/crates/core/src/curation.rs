//! Frame selection ahead of sparse reconstruction: parallax keyframing,
//! matching-pair proposal and clip subdivision.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tracked feature observations of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTrack {
    pub frame_id: u32,
    /// `(track_id, u, v)` in pixels.
    pub observations: Vec<(u64, f64, f64)>,
}

/// Global image descriptor, unit-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub frame_id: u32,
    pub vector: Vec<f64>,
}

impl FrameDescriptor {
    pub fn new(frame_id: u32, vector: Vec<f64>) -> Result<Self> {
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("descriptor {frame_id} has norm {norm}")));
        }
        Ok(Self { frame_id, vector })
    }

    /// Normalizes `vector` to unit length.
    pub fn normalized(frame_id: u32, vector: Vec<f64>) -> Result<Self> {
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid(format!("descriptor {frame_id} cannot be normalized")));
        }
        Ok(Self {
            frame_id,
            vector: vector.into_iter().map(|v| v / norm).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeyframeParams {
    /// Fraction of the image diagonal.
    pub parallax_threshold: f64,
    pub min_shared_tracks: usize,
    /// Image diagonal in pixels.
    pub image_diagonal: f64,
}

impl Default for KeyframeParams {
    fn default() -> Self {
        Self {
            parallax_threshold: 0.02,
            min_shared_tracks: 30,
            image_diagonal: 800.0,
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Selects keyframes by median track displacement relative to the previous
/// keyframe. A frame sharing fewer than `min_shared_tracks` tracks with the
/// previous keyframe is forced to be a keyframe.
pub fn select_keyframes(frames: &[FrameTrack], params: &KeyframeParams) -> Result<Vec<u32>> {
    let first = frames.first().ok_or(Error::Empty("no frames to select keyframes from"))?;
    if !(params.parallax_threshold > 0.0) || !(params.image_diagonal > 0.0) {
        return Err(Error::invalid("parallax threshold and image diagonal must be positive"));
    }
    if frames.windows(2).any(|w| w[0].frame_id >= w[1].frame_id) {
        return Err(Error::invalid("frames must be strictly ordered by frame_id"));
    }
    let threshold_px = params.parallax_threshold * params.image_diagonal;
    let index = |f: &FrameTrack| -> HashMap<u64, (f64, f64)> {
        f.observations.iter().map(|&(t, u, v)| (t, (u, v))).collect()
    };

    let mut selected = vec![first.frame_id];
    let mut key = index(first);
    for frame in &frames[1..] {
        let mut disp: Vec<f64> = frame
            .observations
            .iter()
            .filter_map(|(t, u, v)| key.get(t).map(|(ku, kv)| (u - ku).hypot(v - kv)))
            .collect();
        let forced = disp.len() < params.min_shared_tracks;
        if forced || median(&mut disp) > threshold_px {
            selected.push(frame.frame_id);
            key = index(frame);
        }
    }
    Ok(selected)
}

/// All pairs `(i, j)` with `0 < j - i <= window`, lexicographic.
pub fn propose_sequence_pairs(n_frames: usize, window: usize) -> Vec<(usize, usize)> {
    (0..n_frames)
        .flat_map(|i| (i + 1..n_frames.min(i + window + 1)).map(move |j| (i, j)))
        .collect()
}

/// How loop candidates are scored against `score_threshold`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopScore {
    /// Cosine similarity; similar views score high.
    #[default]
    Similarity,
    /// Literal feature distance `1 - cos`; keeps the most dissimilar pairs.
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopParams {
    pub window: u32,
    pub top_k: usize,
    pub score_threshold: f64,
    pub score: LoopScore,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            window: 100,
            top_k: 50,
            score_threshold: 0.4,
            score: LoopScore::Similarity,
        }
    }
}

/// A retained loop pair: frame ids `i < j` and its score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopPair {
    pub i: u32,
    pub j: u32,
    pub score: f64,
}

/// Scores every pair of frames at most `window` frame ids apart and keeps the
/// global `top_k` with score above the threshold, best first.
pub fn propose_loop_pairs(descriptors: &[FrameDescriptor], params: &LoopParams) -> Vec<LoopPair> {
    let mut pairs = Vec::new();
    for (a, da) in descriptors.iter().enumerate() {
        for db in &descriptors[a + 1..] {
            let (i, j) = (da.frame_id.min(db.frame_id), da.frame_id.max(db.frame_id));
            if j - i == 0 || j - i > params.window {
                continue;
            }
            let cos: f64 = da.vector.iter().zip(&db.vector).map(|(x, y)| x * y).sum();
            let score = match params.score {
                LoopScore::Similarity => cos,
                LoopScore::Distance => 1.0 - cos,
            };
            if score > params.score_threshold {
                pairs.push(LoopPair { i, j, score });
            }
        }
    }
    pairs.sort_by(|a, b| b.score.total_cmp(&a.score).then((a.i, a.j).cmp(&(b.i, b.j))));
    pairs.truncate(params.top_k);
    pairs
}

/// Half-open clip ranges of at most `max_len` keyframes, consecutive clips
/// sharing `overlap` keyframes.
pub fn split_clips(n_keyframes: usize, max_len: usize, overlap: usize) -> Result<Vec<(usize, usize)>> {
    if max_len == 0 || overlap >= max_len {
        return Err(Error::invalid(format!(
            "need 0 <= overlap < max_len, got overlap {overlap}, max_len {max_len}"
        )));
    }
    let stride = max_len - overlap;
    let mut clips = Vec::new();
    let mut start = 0;
    while start < n_keyframes {
        let end = (start + max_len).min(n_keyframes);
        clips.push((start, end));
        if end == n_keyframes {
            break;
        }
        start += stride;
    }
    Ok(clips)
}
