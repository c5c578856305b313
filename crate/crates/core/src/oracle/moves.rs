//! The move vocabulary and seeded choreography selection.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pipelines::backend::{Artifact, BackendRole, ModelBackend, StageInputs};
use crate::pipelines::tasks::tokens;
use crate::skeleton::{canonical_standing_pose, Joint, KeypointPose};

use super::sequence::{PoseFrame, PoseSequence};
use super::OracleError;

pub const DEFAULT_MOVE_COUNT: usize = 12;
pub const MOVES_PER_CUE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub move_id: String,
    pub name: String,
    pub frames: PoseSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveLibrary {
    pub moves: Vec<Move>,
}

impl MoveLibrary {
    /// Checks ids are unique and every reference is a valid sequence of at
    /// least two frames.
    pub fn validate(&self) -> Result<(), OracleError> {
        let mut seen = HashSet::new();
        for m in &self.moves {
            if !seen.insert(m.move_id.as_str()) {
                return Err(OracleError::DuplicateMove(m.move_id.clone()));
            }
            m.frames.validate()?;
            if m.frames.len() < 2 {
                return Err(OracleError::TooFewFrames(m.frames.len()));
            }
        }
        Ok(())
    }

    pub fn expect_count(&self, count: usize) -> Result<(), OracleError> {
        if self.moves.len() != count {
            return Err(OracleError::BadConfig(format!(
                "move library has {} moves, expected {count}",
                self.moves.len()
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, OracleError> {
        let lib: Self =
            serde_json::from_str(text).map_err(|e| OracleError::Parse(e.to_string()))?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OracleError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn get(&self, move_id: &str) -> Option<&Move> {
        self.moves.iter().find(|m| m.move_id == move_id)
    }

    /// The selected references performed one after another.
    pub fn reference_for(
        &self,
        move_ids: &[String],
        rest_s: f64,
    ) -> Result<PoseSequence, OracleError> {
        let parts = move_ids
            .iter()
            .map(|id| {
                self.get(id)
                    .map(|m| &m.frames)
                    .ok_or_else(|| OracleError::UnknownMove(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PoseSequence::concat(&parts, rest_s))
    }
}

/// An asset offered to the move selection, with its descriptive tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueSource {
    pub asset_id: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoreographyCue {
    pub show_id: String,
    pub seed: u64,
    pub selected_move_ids: Vec<String>,
    pub poem_text: String,
    pub source_asset_ids: Vec<String>,
}

/// Selection weight per move: one plus the number of (asset, tag) pairs
/// whose tag is a word of the move name.
pub fn move_weights(sources: &[CueSource], library: &MoveLibrary) -> Vec<u64> {
    library
        .moves
        .iter()
        .map(|m| {
            let words: HashSet<String> = tokens(&m.name).into_iter().collect();
            1 + sources
                .iter()
                .map(|s| {
                    let tags: HashSet<&String> = s.tags.iter().collect();
                    tags.iter().filter(|t| words.contains(t.as_str())).count() as u64
                })
                .sum::<u64>()
        })
        .collect()
}

/// Draws three distinct move indices by weighted sampling without
/// replacement.
pub fn draw_moves(weights: &[u64], seed: u64) -> Result<Vec<usize>, OracleError> {
    if weights.len() < MOVES_PER_CUE {
        return Err(OracleError::InsufficientMoves(weights.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(MOVES_PER_CUE);
    for _ in 0..MOVES_PER_CUE {
        let total: u64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.random_range(0..total);
        let pos = remaining
            .iter()
            .position(|&i| {
                if u < weights[i] {
                    true
                } else {
                    u -= weights[i];
                    false
                }
            })
            .expect("u < total");
        picked.push(remaining.remove(pos));
    }
    Ok(picked)
}

/// Picks three moves and asks the poem backend for verses over them.
/// Sources are sorted by asset id first, so their order does not matter.
pub fn select_moves(
    show_id: &str,
    sources: &[CueSource],
    library: &MoveLibrary,
    seed: u64,
    poem: &dyn ModelBackend,
) -> Result<ChoreographyCue, OracleError> {
    if library.moves.len() < MOVES_PER_CUE {
        return Err(OracleError::InsufficientMoves(library.moves.len()));
    }
    let mut sources = sources.to_vec();
    sources.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
    for s in &mut sources {
        s.tags.sort();
        s.tags.dedup();
    }
    let picked = draw_moves(&move_weights(&sources, library), seed)?;
    let chosen: Vec<&Move> = picked.iter().map(|&i| &library.moves[i]).collect();

    let mut inputs = StageInputs::new().param(
        "moves",
        chosen.iter().map(|m| m.name.clone()).collect::<Vec<_>>(),
    );
    for s in &sources {
        inputs = inputs.with(
            &format!("asset:{}", s.asset_id),
            Artifact::Text(s.tags.join(" ")),
        );
    }
    let out = poem
        .invoke(BackendRole::Poem, &inputs)
        .map_err(|e| OracleError::Poem(e.message))?;
    let poem_text = out
        .artifact
        .as_text()
        .map(str::to_string)
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| OracleError::Poem("empty poem".into()))?;
    Ok(ChoreographyCue {
        show_id: show_id.to_string(),
        seed,
        selected_move_ids: chosen.iter().map(|m| m.move_id.clone()).collect(),
        poem_text,
        source_asset_ids: sources.iter().map(|s| s.asset_id.clone()).collect(),
    })
}

/// A seeded subset of at most `n` sources, in asset-id order.
pub fn sample_sources(sources: &[CueSource], n: usize, seed: u64) -> Vec<CueSource> {
    let mut sorted = sources.to_vec();
    sorted.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
    if sorted.len() <= n {
        return sorted;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, sorted.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| sorted[i].clone()).collect()
}

const MOVE_NAMES: [&str; DEFAULT_MOVE_COUNT] = [
    "Grapevine Step",
    "Disco Point",
    "Roller Glide",
    "Wave Arms",
    "Star Jump",
    "Box Step",
    "Hip Sway",
    "Shoulder Roll",
    "Arm Circles",
    "Knee Lift",
    "Heel Tap",
    "Temple Reach",
];

fn offset(pose: &mut KeypointPose, j: Joint, dx: f64, dy: f64) {
    let mut k = pose.get(j);
    k.x += dx;
    k.y += dy;
    pose.set(j, k);
}

fn shift_all(pose: &mut KeypointPose, dx: f64, dy: f64) {
    for k in pose.keypoints.iter_mut() {
        k.x += dx;
        k.y += dy;
    }
}

/// Sine and cosine of `2πp`, approximated with Bhaskara's rational formula.
/// Only field operations are used, so the curves are bit-identical under any
/// optimizer or libm.
fn wave(p: f64) -> (f64, f64) {
    fn half(u: f64) -> f64 {
        let q = u * (1.0 - u);
        16.0 * q / (5.0 - 4.0 * q)
    }
    fn sin_turn(p: f64) -> f64 {
        let f = p - p.floor();
        if f < 0.5 {
            half(2.0 * f)
        } else {
            -half(2.0 * f - 1.0)
        }
    }
    (sin_turn(p), sin_turn(p + 0.25))
}

/// The pose of move `index` at phase `p` in `[0, 1]`.
fn move_pose(index: usize, p: f64) -> KeypointPose {
    use Joint::*;
    let mut pose = canonical_standing_pose();
    let (s, c) = wave(p);
    match index {
        0 => shift_all(&mut pose, 0.08 * s, 0.0),
        1 => {
            offset(&mut pose, RightElbow, -0.05 * (1.0 + s), -0.12 * (1.0 + s));
            offset(&mut pose, RightWrist, -0.08 * (1.0 + s), -0.25 * (1.0 + s));
        }
        2 => {
            shift_all(&mut pose, 0.1 * s, 0.0);
            offset(&mut pose, RightKnee, 0.03 * c, -0.02);
            offset(&mut pose, LeftKnee, -0.03 * c, -0.02);
        }
        3 => {
            for (e, w, side) in [(RightElbow, RightWrist, -1.0), (LeftElbow, LeftWrist, 1.0)] {
                offset(&mut pose, e, side * 0.1, -0.15 + 0.05 * s);
                offset(&mut pose, w, side * 0.2, -0.3 + 0.12 * s);
            }
        }
        4 => {
            let up = s.max(0.0);
            shift_all(&mut pose, 0.0, -0.06 * up);
            offset(&mut pose, RightWrist, -0.15 * up, -0.35 * up);
            offset(&mut pose, LeftWrist, 0.15 * up, -0.35 * up);
            offset(&mut pose, RightAnkle, -0.06 * up, 0.0);
            offset(&mut pose, LeftAnkle, 0.06 * up, 0.0);
        }
        5 => {
            let q = (4.0 * p).floor() as i32 % 4;
            let (dx, dy) = [(0.0, 0.0), (0.05, 0.0), (0.05, 0.04), (0.0, 0.04)][q as usize];
            offset(&mut pose, RightAnkle, dx, -dy);
            offset(&mut pose, LeftAnkle, dx, -dy);
            offset(&mut pose, RightKnee, dx / 2.0, -dy / 2.0);
            offset(&mut pose, LeftKnee, dx / 2.0, -dy / 2.0);
        }
        6 => {
            for j in [RightHip, LeftHip] {
                offset(&mut pose, j, 0.05 * s, 0.0);
            }
            for j in [
                Neck,
                Nose,
                RightShoulder,
                LeftShoulder,
                RightEye,
                LeftEye,
                RightEar,
                LeftEar,
            ] {
                offset(&mut pose, j, -0.02 * s, 0.0);
            }
        }
        7 => {
            offset(&mut pose, RightShoulder, 0.02 * c, -0.03 * s.abs());
            offset(&mut pose, LeftShoulder, -0.02 * c, -0.03 * s.abs());
        }
        8 => {
            offset(&mut pose, RightWrist, -0.12 * s, -0.12 * (1.0 - c));
            offset(&mut pose, LeftWrist, 0.12 * s, -0.12 * (1.0 - c));
            offset(&mut pose, RightElbow, -0.06 * s, -0.06 * (1.0 - c));
            offset(&mut pose, LeftElbow, 0.06 * s, -0.06 * (1.0 - c));
        }
        9 => {
            let (r, l) = (s.max(0.0), (-s).max(0.0));
            offset(&mut pose, RightKnee, 0.0, -0.12 * r);
            offset(&mut pose, RightAnkle, 0.0, -0.12 * r);
            offset(&mut pose, LeftKnee, 0.0, -0.12 * l);
            offset(&mut pose, LeftAnkle, 0.0, -0.12 * l);
        }
        10 => {
            offset(
                &mut pose,
                RightAnkle,
                -0.06 * s.max(0.0),
                -0.02 * s.max(0.0),
            );
            offset(
                &mut pose,
                LeftAnkle,
                0.06 * (-s).max(0.0),
                -0.02 * (-s).max(0.0),
            );
        }
        _ => {
            offset(&mut pose, RightElbow, -0.02, -0.15 * (1.0 + s) / 2.0);
            offset(&mut pose, RightWrist, -0.02, -0.3 * (1.0 + s) / 2.0);
            offset(&mut pose, LeftElbow, 0.02, -0.15 * (1.0 - s) / 2.0);
            offset(&mut pose, LeftWrist, 0.02, -0.3 * (1.0 - s) / 2.0);
        }
    }
    pose
}

/// Twelve procedural moves, each two seconds at ten frames per second.
pub fn builtin_library() -> MoveLibrary {
    const FRAMES: usize = 21;
    let moves = MOVE_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| Move {
            move_id: format!("M{:02}", i + 1),
            name: name.to_string(),
            frames: PoseSequence {
                frames: (0..FRAMES)
                    .map(|f| {
                        let p = f as f64 / (FRAMES - 1) as f64;
                        PoseFrame::new(f as f64 / 10.0, move_pose(i, p))
                    })
                    .collect(),
            },
        })
        .collect();
    MoveLibrary { moves }
}
