//! Sketch intake: envelope parsing, validation, muse-group assignment and
//! idempotent job admission.

mod groups;
mod sketch;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Millis;
use crate::orchestrator::TaskType;

pub use groups::{GroupAssigner, MuseAssignment, DEFAULT_CAPACITY, DEFAULT_MUSE_GROUPS};
pub use sketch::{
    encode_png, synthetic_sketch, validate_sketch, RejectReason, SketchFormat, SketchImage,
    ValidationResult, DEFAULT_MAX_PIXELS, PNG_SIGNATURE,
};

/// The three sketching moments of a show, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Round {
    #[serde(rename = "R1_BACKGROUND")]
    R1Background,
    #[serde(rename = "R2_POSE")]
    R2Pose,
    #[serde(rename = "R3_OBJECT")]
    R3Object,
}

impl Round {
    pub const ALL: [Round; 3] = [Round::R1Background, Round::R2Pose, Round::R3Object];

    pub fn task(self) -> TaskType {
        match self {
            Round::R1Background => TaskType::T1,
            Round::R2Pose => TaskType::T2,
            Round::R3Object => TaskType::T3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Round::R1Background => "R1_BACKGROUND",
            Round::R2Pose => "R2_POSE",
            Round::R3Object => "R3_OBJECT",
        }
    }

    pub fn parse(s: &str) -> Option<Round> {
        Round::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("round {requested:?} is not open")]
    RoundClosed { requested: Round },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("image {width}x{height} exceeds the {max_pixels} pixel limit")]
    ImageTooLarge {
        width: u32,
        height: u32,
        max_pixels: u64,
    },
    #[error("show is full ({capacity} participants)")]
    ShowFull { capacity: usize },
    #[error("queue refused the job: {0}")]
    QueueRefused(String),
}

impl IngestError {
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::RoundClosed { .. } => "RoundClosed",
            IngestError::MalformedPayload(_) => "MalformedPayload",
            IngestError::ImageTooLarge { .. } => "ImageTooLarge",
            IngestError::ShowFull { .. } => "ShowFull",
            IngestError::QueueRefused(_) => "QueueClosed",
        }
    }
}

/// The JSON `meta` part of a submission. Exactly these four fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmissionMeta {
    pub client_token: String,
    pub muse_id: u8,
    pub round: Round,
    pub device_id: String,
}

/// A submission as it arrives off the wire, before parsing.
#[derive(Debug, Clone)]
pub struct SubmissionEnvelope {
    pub show_id: String,
    pub meta_json: Vec<u8>,
    pub sketch_png: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub submission_id: String,
    pub show_id: String,
    pub client_token: String,
    pub device_id: String,
    pub muse_id: u8,
    pub round: Round,
    pub sketch: SketchImage,
    pub received_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionReceipt {
    pub submission_id: String,
    pub queue_position: usize,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub muse_groups: usize,
    pub capacity: usize,
    pub max_pixels: u64,
    pub assignment_seed: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            muse_groups: DEFAULT_MUSE_GROUPS,
            capacity: DEFAULT_CAPACITY,
            max_pixels: DEFAULT_MAX_PIXELS,
            assignment_seed: 0,
        }
    }
}

/// Per-show intake state. Callers serialize access (one lock per show), which
/// gives admissions a single total order.
#[derive(Debug)]
pub struct Gateway {
    show_id: String,
    config: GatewayConfig,
    open_round: Option<Round>,
    tokens: HashMap<String, SubmissionReceipt>,
    assigner: GroupAssigner,
    next_seq: u64,
}

impl Gateway {
    pub fn new(show_id: impl Into<String>, config: GatewayConfig) -> Self {
        let assigner =
            GroupAssigner::new(config.muse_groups, config.capacity, config.assignment_seed);
        Self {
            show_id: show_id.into(),
            config,
            open_round: None,
            tokens: HashMap::new(),
            assigner,
            next_seq: 1,
        }
    }

    pub fn show_id(&self) -> &str {
        &self.show_id
    }

    /// Opens `round`, closing whichever round was open before.
    pub fn open_round(&mut self, round: Round) {
        self.open_round = Some(round);
    }

    pub fn close_round(&mut self) -> Option<Round> {
        self.open_round.take()
    }

    pub fn current_round(&self) -> Option<Round> {
        self.open_round
    }

    pub fn assign_group(&mut self, device_id: &str) -> Result<MuseAssignment, IngestError> {
        self.assigner.assign(device_id)
    }

    pub fn assigner(&self) -> &GroupAssigner {
        &self.assigner
    }

    /// Restores an admission made before a restart, so a retried upload of
    /// the same token gets its original receipt back.
    pub fn remember(&mut self, client_token: &str, receipt: SubmissionReceipt) {
        self.next_seq += 1;
        self.tokens.insert(client_token.to_string(), receipt);
    }

    /// Parses, gates and validates an envelope, then admits it exactly once
    /// per `client_token`. `enqueue` is called only for a first admission and
    /// returns the job's queue position.
    pub fn accept_submission<F>(
        &mut self,
        envelope: &SubmissionEnvelope,
        now: Millis,
        enqueue: F,
    ) -> Result<SubmissionReceipt, IngestError>
    where
        F: FnOnce(&Submission) -> Result<usize, IngestError>,
    {
        if envelope.show_id != self.show_id {
            return Err(IngestError::MalformedPayload(format!(
                "unknown show {}",
                envelope.show_id
            )));
        }
        let meta: SubmissionMeta = serde_json::from_slice(&envelope.meta_json)
            .map_err(|e| IngestError::MalformedPayload(e.to_string()))?;
        if !(1..=self.config.muse_groups).contains(&(meta.muse_id as usize)) {
            return Err(IngestError::MalformedPayload(format!(
                "muse_id {} outside 1..={}",
                meta.muse_id, self.config.muse_groups
            )));
        }
        if meta.client_token.is_empty() {
            return Err(IngestError::MalformedPayload("empty client_token".into()));
        }
        if let Some(receipt) = self.tokens.get(&meta.client_token) {
            return Ok(receipt.clone());
        }
        if self.open_round != Some(meta.round) {
            return Err(IngestError::RoundClosed {
                requested: meta.round,
            });
        }

        let sketch = SketchImage::from_png(envelope.sketch_png.clone());
        match validate_sketch(&sketch, self.config.max_pixels) {
            ValidationResult::Accept => {}
            ValidationResult::Reject(RejectReason::TooLarge) => {
                return Err(IngestError::ImageTooLarge {
                    width: sketch.width_px,
                    height: sketch.height_px,
                    max_pixels: self.config.max_pixels,
                })
            }
            ValidationResult::Reject(reason) => {
                return Err(IngestError::MalformedPayload(format!(
                    "sketch rejected: {reason:?}"
                )))
            }
        }

        let submission = Submission {
            submission_id: format!("{}-s{:04}", self.show_id, self.next_seq),
            show_id: self.show_id.clone(),
            client_token: meta.client_token.clone(),
            device_id: meta.device_id,
            muse_id: meta.muse_id,
            round: meta.round,
            sketch,
            received_at: now,
        };
        let queue_position = enqueue(&submission)?;
        self.next_seq += 1;
        let receipt = SubmissionReceipt {
            submission_id: submission.submission_id,
            queue_position,
        };
        self.tokens.insert(meta.client_token, receipt.clone());
        Ok(receipt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn envelope(token: &str, muse: u8, round: &str) -> SubmissionEnvelope {
        SubmissionEnvelope {
            show_id: "show".into(),
            meta_json: serde_json::to_vec(&json!({
                "client_token": token, "muse_id": muse, "round": round, "device_id": "phone-1"
            }))
            .unwrap(),
            sketch_png: synthetic_sketch(1, 64, 48),
        }
    }

    fn gateway() -> Gateway {
        let mut g = Gateway::new("show", GatewayConfig::default());
        g.open_round(Round::R1Background);
        g
    }

    #[test]
    fn valid_submission_gets_fresh_id() {
        let mut g = gateway();
        let r = g
            .accept_submission(&envelope("t1", 3, "R1_BACKGROUND"), 10, |_| Ok(0))
            .unwrap();
        assert_eq!(r.submission_id, "show-s0001");
        assert_eq!(r.queue_position, 0);
    }

    #[test]
    fn duplicate_token_is_idempotent() {
        let mut g = gateway();
        let mut jobs = 0;
        let a = g
            .accept_submission(&envelope("tok", 3, "R1_BACKGROUND"), 10, |_| {
                jobs += 1;
                Ok(jobs - 1)
            })
            .unwrap();
        let b = g
            .accept_submission(&envelope("tok", 3, "R1_BACKGROUND"), 20, |_| {
                jobs += 1;
                Ok(jobs - 1)
            })
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(jobs, 1);
    }

    #[test]
    fn muse_out_of_range_is_malformed() {
        let mut g = gateway();
        let err = g
            .accept_submission(&envelope("t", 9, "R1_BACKGROUND"), 0, |_| Ok(0))
            .unwrap_err();
        assert!(matches!(err, IngestError::MalformedPayload(_)));
    }

    #[test]
    fn unknown_meta_field_is_malformed() {
        let mut g = gateway();
        let mut env = envelope("t", 1, "R1_BACKGROUND");
        env.meta_json = serde_json::to_vec(&json!({
            "client_token": "t", "muse_id": 1, "round": "R1_BACKGROUND",
            "device_id": "d", "extra": true
        }))
        .unwrap();
        assert!(matches!(
            g.accept_submission(&env, 0, |_| Ok(0)),
            Err(IngestError::MalformedPayload(_))
        ));
    }

    #[test]
    fn wrong_round_is_refused() {
        let mut g = gateway();
        assert_eq!(
            g.accept_submission(&envelope("t", 1, "R2_POSE"), 0, |_| Ok(0)),
            Err(IngestError::RoundClosed {
                requested: Round::R2Pose
            })
        );
        g.close_round();
        assert!(matches!(
            g.accept_submission(&envelope("t", 1, "R1_BACKGROUND"), 0, |_| Ok(0)),
            Err(IngestError::RoundClosed { .. })
        ));
    }

    #[test]
    fn oversize_sketch_is_refused_without_a_job() {
        let mut g = Gateway::new(
            "show",
            GatewayConfig {
                max_pixels: 100,
                ..Default::default()
            },
        );
        g.open_round(Round::R1Background);
        let mut called = false;
        let err = g
            .accept_submission(&envelope("t", 1, "R1_BACKGROUND"), 0, |_| {
                called = true;
                Ok(0)
            })
            .unwrap_err();
        assert!(matches!(err, IngestError::ImageTooLarge { .. }));
        assert!(!called);
    }

    #[test]
    fn garbage_sketch_creates_no_job() {
        let mut g = gateway();
        let mut env = envelope("t", 1, "R1_BACKGROUND");
        env.sketch_png = b"not a png".to_vec();
        let mut called = false;
        assert!(g
            .accept_submission(&env, 0, |_| {
                called = true;
                Ok(0)
            })
            .is_err());
        assert!(!called);
    }

    #[test]
    fn rounds_map_to_tasks() {
        assert_eq!(Round::R1Background.task(), TaskType::T1);
        assert_eq!(Round::R2Pose.task(), TaskType::T2);
        assert_eq!(Round::R3Object.task(), TaskType::T3);
    }
}
