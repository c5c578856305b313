//! Timed skeletal recordings and their JSON-lines file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::skeleton::{len2, Keypoint, KeypointPose};

use super::OracleError;

/// One captured skeleton. On disk: `{"t_s": 0.1, "kp": [[x, y, c], …]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub t_s: f64,
    pub kp: KeypointPose,
}

impl PoseFrame {
    pub fn new(t_s: f64, kp: KeypointPose) -> Self {
        Self { t_s, kp }
    }

    pub fn keypoint(&self, i: usize) -> Keypoint {
        self.kp.keypoints[i]
    }

    pub fn visible(&self, i: usize) -> bool {
        self.kp.keypoints[i].c > 0.0
    }

    /// `(min_x, min_y, max_x, max_y)` over visible keypoints.
    pub fn bbox(&self) -> Option<(f64, f64, f64, f64)> {
        self.kp.visible_bbox()
    }

    pub fn bbox_area(&self) -> f64 {
        self.bbox()
            .map(|(x0, y0, x1, y1)| (x1 - x0) * (y1 - y0))
            .unwrap_or(0.0)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox()
            .map(|(x0, y0, x1, y1)| len2(x1 - x0, y1 - y0))
            .unwrap_or(0.0)
    }

    pub fn map_points(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut out = *self;
        for k in out.kp.keypoints.iter_mut() {
            let (x, y) = f(k.x, k.y);
            k.x = x;
            k.y = y;
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseSequence {
    pub frames: Vec<PoseFrame>,
}

impl PoseSequence {
    /// Checks finiteness and strictly increasing timestamps.
    pub fn new(frames: Vec<PoseFrame>) -> Result<Self, OracleError> {
        let seq = Self { frames };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        for (i, f) in self.frames.iter().enumerate() {
            let finite = f.t_s.is_finite()
                && f.kp
                    .keypoints
                    .iter()
                    .all(|k| k.x.is_finite() && k.y.is_finite() && (0.0..=1.0).contains(&k.c));
            if !finite {
                return Err(OracleError::MalformedFrame { index: i });
            }
            if i > 0 && !(f.t_s > self.frames[i - 1].t_s) {
                return Err(OracleError::NonIncreasingTime { index: i });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t_s - a.t_s,
            _ => 0.0,
        }
    }

    pub fn map_points(&self, f: impl Fn(f64, f64) -> (f64, f64) + Copy) -> Self {
        Self {
            frames: self.frames.iter().map(|fr| fr.map_points(f)).collect(),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, OracleError> {
        let frames = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str::<PoseFrame>(l)
                    .map_err(|e| OracleError::Parse(format!("line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(frames)
    }

    pub fn to_jsonl(&self) -> String {
        self.frames
            .iter()
            .map(|f| serde_json::to_string(f).expect("frames serialize") + "\n")
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OracleError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    /// Joins sequences end to end. Between two parts the last pose of the
    /// earlier one is held for `rest_s`, then the next part starts one of its
    /// own frame intervals later.
    pub fn concat(parts: &[&PoseSequence], rest_s: f64) -> Self {
        let mut frames: Vec<PoseFrame> = Vec::new();
        for part in parts.iter().filter(|p| !p.is_empty()) {
            let first = part.frames[0].t_s;
            let offset = match frames.last().copied() {
                None => -first,
                Some(last) => {
                    let mut t = last.t_s;
                    if rest_s > 0.0 {
                        t += rest_s;
                        frames.push(PoseFrame::new(t, last.kp));
                    }
                    let step = part
                        .frames
                        .get(1)
                        .map(|f| f.t_s - first)
                        .unwrap_or(if rest_s > 0.0 { rest_s } else { 1.0 });
                    t + step - first
                }
            };
            frames.extend(
                part.frames
                    .iter()
                    .map(|f| PoseFrame::new(f.t_s + offset, f.kp)),
            );
        }
        Self { frames }
    }
}
