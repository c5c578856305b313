//! The published record of a show and its live broadcast.
//!
//! Every entry is appended under a gapless sequence number before it is
//! broadcast, so a subscriber that backfills from the manifest and then
//! follows the broadcast sees one ordered stream.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::clock::Millis;
use crate::digest::{canonical_digest, canonical_json, sha256_hex};
use crate::moderation::{Release, ReleaseGate};

pub const BROADCAST_CAPACITY: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EntryKind {
    Asset,
    Feedback,
    Cue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seq: u64,
    pub t_ms: Millis,
    pub kind: EntryKind,
    pub payload_digest: String,
    pub detail: Value,
}

impl ManifestEntry {
    /// The wire form sent to subscribers, one per line.
    pub fn stream_line(&self) -> String {
        let mut detail = self.detail.clone();
        if let Value::Object(map) = &mut detail {
            map.insert("payload_digest".into(), json!(self.payload_digest));
        }
        canonical_json(&json!({
            "seq": self.seq,
            "t_ms": self.t_ms,
            "kind": self.kind,
            "detail": detail,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowManifest {
    pub show_id: String,
    pub entries: Vec<ManifestEntry>,
}

impl ShowManifest {
    pub fn fingerprint(&self) -> String {
        canonical_digest(self)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| canonical_json(e) + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeedbackSource {
    Oracle,
    Override,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLevel {
    pub value: f64,
    pub source: FeedbackSource,
    pub t_ms: Millis,
}

impl FeedbackLevel {
    /// Clamps into `[0, 1]`; NaN becomes 0.
    pub fn new(value: f64, source: FeedbackSource, t_ms: Millis) -> Self {
        let value = if value.is_nan() {
            0.0
        } else {
            value.clamp(0.0, 1.0)
        };
        Self {
            value,
            source,
            t_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SinkEvent {
    Asset {
        release: Release,
        payload_digest: String,
        detail: Value,
    },
    Feedback {
        level: FeedbackLevel,
        report: Option<Value>,
    },
    Cue {
        detail: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SinkError {
    #[error("gate refused release of {asset_id}: {reason}")]
    GateViolation { asset_id: String, reason: String },
    #[error("show {0} is closed")]
    ShowClosed(String),
    #[error("show {0} is still open")]
    ShowOpen(String),
    #[error("manifest write failed: {0}")]
    Io(String),
}

#[derive(Debug)]
pub struct StageSink {
    show_id: String,
    entries: Vec<ManifestEntry>,
    released: HashSet<String>,
    open: bool,
    tx: broadcast::Sender<ManifestEntry>,
    manifest_path: Option<PathBuf>,
}

impl StageSink {
    pub fn new(show_id: &str) -> Self {
        let (tx, _) = broadcast::channel(BROADCAST_CAPACITY);
        Self {
            show_id: show_id.to_string(),
            entries: Vec::new(),
            released: HashSet::new(),
            open: true,
            tx,
            manifest_path: None,
        }
    }

    /// Also appends every entry to `{dir}/{show_id}.manifest.jsonl`.
    pub fn with_manifest_dir(mut self, dir: &Path) -> Result<Self, SinkError> {
        let path = dir.join(manifest_file_name(&self.show_id));
        // a restarted show starts a fresh sequence; keep what the last run wrote
        if path.exists() {
            let mut n = 1;
            let mut old = path.with_extension(format!("jsonl.{n}"));
            while old.exists() {
                n += 1;
                old = path.with_extension(format!("jsonl.{n}"));
            }
            std::fs::rename(&path, &old).map_err(|e| SinkError::Io(e.to_string()))?;
        }
        std::fs::File::create(&path).map_err(|e| SinkError::Io(e.to_string()))?;
        self.manifest_path = Some(path);
        Ok(self)
    }

    pub fn show_id(&self) -> &str {
        &self.show_id
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn publish(
        &mut self,
        event: SinkEvent,
        t_ms: Millis,
        gate: &dyn ReleaseGate,
    ) -> Result<u64, SinkError> {
        if !self.open {
            return Err(SinkError::ShowClosed(self.show_id.clone()));
        }
        let (kind, payload_digest, detail) = match event {
            SinkEvent::Asset {
                release,
                payload_digest,
                detail,
            } => {
                let violation = |reason: String| SinkError::GateViolation {
                    asset_id: release.asset_id().to_string(),
                    reason,
                };
                gate.check_release(&release).map_err(violation)?;
                if self.released.contains(&release.key()) {
                    return Err(violation("already released".into()));
                }
                self.released.insert(release.key());
                let mut d = json!({"release": release, "asset_id": release.asset_id()});
                if let (Value::Object(map), Value::Object(extra)) = (&mut d, detail) {
                    map.extend(extra);
                }
                (EntryKind::Asset, payload_digest, d)
            }
            SinkEvent::Feedback { level, report } => {
                let mut d = json!({"value": level.value, "source": level.source});
                if let Some(r) = report {
                    d["report"] = r;
                }
                (EntryKind::Feedback, canonical_digest(&d), d)
            }
            SinkEvent::Cue { detail } => (EntryKind::Cue, canonical_digest(&detail), detail),
        };
        let entry = ManifestEntry {
            seq: self.entries.len() as u64,
            t_ms,
            kind,
            payload_digest,
            detail,
        };
        if let Some(path) = &self.manifest_path {
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| SinkError::Io(e.to_string()))?;
            writeln!(f, "{}", canonical_json(&entry)).map_err(|e| SinkError::Io(e.to_string()))?;
        }
        self.entries.push(entry.clone());
        // no receivers is fine
        let _ = self.tx.send(entry);
        Ok(self.entries.len() as u64 - 1)
    }

    /// Entries from `from_seq` on plus a receiver for everything after.
    /// Both are taken under the same borrow, so nothing falls in between.
    pub fn subscribe(
        &self,
        from_seq: u64,
    ) -> (Vec<ManifestEntry>, broadcast::Receiver<ManifestEntry>) {
        let rx = self.tx.subscribe();
        (self.backfill(from_seq), rx)
    }

    pub fn backfill(&self, from_seq: u64) -> Vec<ManifestEntry> {
        self.entries
            .get(from_seq as usize..)
            .map(|s| s.to_vec())
            .unwrap_or_default()
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn close(&mut self) {
        self.open = false;
    }

    pub fn manifest(&self) -> ShowManifest {
        ShowManifest {
            show_id: self.show_id.clone(),
            entries: self.entries.clone(),
        }
    }

    pub fn manifest_fingerprint(&self) -> Result<String, SinkError> {
        if self.open {
            return Err(SinkError::ShowOpen(self.show_id.clone()));
        }
        Ok(self.manifest().fingerprint())
    }
}

pub fn manifest_file_name(show_id: &str) -> String {
    format!("{show_id}.manifest.jsonl")
}

/// Reads a manifest written by [`StageSink::with_manifest_dir`] and returns
/// its fingerprint.
pub fn fingerprint_file(path: &Path, show_id: &str) -> Result<String, SinkError> {
    let text = std::fs::read_to_string(path).map_err(|e| SinkError::Io(e.to_string()))?;
    let entries = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(serde_json::from_str)
        .collect::<Result<Vec<ManifestEntry>, _>>()
        .map_err(|e| SinkError::Io(e.to_string()))?;
    Ok(ShowManifest {
        show_id: show_id.to_string(),
        entries,
    }
    .fingerprint())
}

/// Digest helper for payloads that are plain bytes.
pub fn payload_digest(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::moderation::{Decision, ReviewDesk, TimeoutPolicy};
    use crate::orchestrator::TaskType;
    use crate::pipelines::tasks::{AssetKind, GeneratedAsset, StageRecord};

    fn asset(job: &str) -> GeneratedAsset {
        GeneratedAsset {
            asset_id: format!("A-{job}"),
            job_id: job.into(),
            muse_id: 1,
            kind: AssetKind::Mesh,
            payload_digest: "p".into(),
            manifest: vec![StageRecord {
                label: "IMAGE_TO_MESH".into(),
                backend_id: "mock".into(),
                input_digests: vec![],
                output_digest: "p".into(),
                latency_ms: 0,
                detail: Value::Null,
            }],
            tags: vec![],
        }
    }

    fn desk() -> ReviewDesk {
        ReviewDesk::new(
            TimeoutPolicy::default(),
            BTreeMap::from([(1, "fallback-muse-1".to_string())]),
        )
    }

    fn asset_event(release: Release) -> SinkEvent {
        SinkEvent::Asset {
            release,
            payload_digest: "p".into(),
            detail: json!({}),
        }
    }

    #[test]
    fn approved_asset_reaches_two_subscribers() {
        let mut d = desk();
        let mut sink = StageSink::new("s");
        let (_, mut r1) = sink.subscribe(0);
        let (_, mut r2) = sink.subscribe(0);
        let t = d.submit_for_review(&asset("a"), TaskType::T3, 0).unwrap();
        let out = d.decide(&t.ticket_id, Decision::Approve, "op", 1).unwrap();
        let seq = sink.publish(asset_event(out.release), 1, &d).unwrap();
        assert_eq!(seq, 0);
        assert_eq!(sink.entries()[0].kind, EntryKind::Asset);
        assert_eq!(r1.try_recv().unwrap().seq, 0);
        assert_eq!(r2.try_recv().unwrap().seq, 0);
    }

    #[test]
    fn pending_asset_is_a_gate_violation() {
        let mut d = desk();
        let mut sink = StageSink::new("s");
        let t = d.submit_for_review(&asset("a"), TaskType::T3, 0).unwrap();
        let rel = Release::Approved {
            ticket_id: t.ticket_id,
            asset_id: "A-a".into(),
        };
        assert!(matches!(
            sink.publish(asset_event(rel), 1, &d),
            Err(SinkError::GateViolation { .. })
        ));
        assert!(sink.entries().is_empty());
    }

    #[test]
    fn a_release_is_published_once() {
        let mut d = desk();
        let mut sink = StageSink::new("s");
        let t = d.submit_for_review(&asset("a"), TaskType::T3, 0).unwrap();
        let out = d.decide(&t.ticket_id, Decision::Approve, "op", 1).unwrap();
        sink.publish(asset_event(out.release.clone()), 1, &d)
            .unwrap();
        assert!(sink.publish(asset_event(out.release), 2, &d).is_err());
    }

    #[test]
    fn feedback_passes_through() {
        let mut sink = StageSink::new("s");
        let level = FeedbackLevel::new(0.73, FeedbackSource::Oracle, 5);
        sink.publish(
            SinkEvent::Feedback {
                level,
                report: None,
            },
            5,
            &desk(),
        )
        .unwrap();
        let e = &sink.entries()[0];
        assert_eq!(e.kind, EntryKind::Feedback);
        assert_eq!(e.detail["value"], 0.73);
        assert_eq!(
            FeedbackLevel::new(1.7, FeedbackSource::Override, 0).value,
            1.0
        );
    }

    #[test]
    fn fingerprint_needs_a_closed_show() {
        let mut sink = StageSink::new("s");
        assert_eq!(
            sink.manifest_fingerprint(),
            Err(SinkError::ShowOpen("s".into()))
        );
        sink.publish(
            SinkEvent::Cue {
                detail: json!({"moves": ["a"]}),
            },
            0,
            &desk(),
        )
        .unwrap();
        sink.close();
        let fp = sink.manifest_fingerprint().unwrap();
        assert_eq!(fp.len(), 64);
        assert!(matches!(
            sink.publish(SinkEvent::Cue { detail: json!({}) }, 1, &desk()),
            Err(SinkError::ShowClosed(_))
        ));
    }

    #[test]
    fn flipped_decision_changes_fingerprint() {
        let run = |decision| {
            let mut d = desk();
            let mut sink = StageSink::new("s");
            let t = d.submit_for_review(&asset("a"), TaskType::T3, 0).unwrap();
            let out = d.decide(&t.ticket_id, decision, "op", 1).unwrap();
            sink.publish(asset_event(out.release), 1, &d).unwrap();
            sink.close();
            sink.manifest_fingerprint().unwrap()
        };
        assert_ne!(run(Decision::Approve), run(Decision::Reject));
    }

    #[test]
    fn late_subscriber_backfills_identical_stream() {
        let d = desk();
        let mut sink = StageSink::new("s");
        for i in 0..5 {
            sink.publish(
                SinkEvent::Cue {
                    detail: json!({"i": i}),
                },
                i,
                &d,
            )
            .unwrap();
        }
        let (backfill, mut rx) = sink.subscribe(2);
        for i in 5..8 {
            sink.publish(
                SinkEvent::Cue {
                    detail: json!({"i": i}),
                },
                i,
                &d,
            )
            .unwrap();
        }
        let mut seen: Vec<ManifestEntry> = backfill;
        while let Ok(e) = rx.try_recv() {
            seen.push(e);
        }
        assert_eq!(seen, sink.entries()[2..].to_vec());
    }

    #[test]
    fn manifest_file_matches_memory() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = StageSink::new("night")
            .with_manifest_dir(dir.path())
            .unwrap();
        for i in 0..3 {
            sink.publish(
                SinkEvent::Cue {
                    detail: json!({"i": i}),
                },
                i,
                &desk(),
            )
            .unwrap();
        }
        sink.close();
        let fp = fingerprint_file(&dir.path().join("night.manifest.jsonl"), "night").unwrap();
        assert_eq!(fp, sink.manifest_fingerprint().unwrap());

        // a restart keeps the earlier file aside instead of truncating it
        let again = StageSink::new("night")
            .with_manifest_dir(dir.path())
            .unwrap();
        assert!(again.entries().is_empty());
        let kept = std::fs::read_to_string(dir.path().join("night.manifest.jsonl.1")).unwrap();
        assert_eq!(kept.lines().count(), 3);
        let fresh = std::fs::read_to_string(dir.path().join("night.manifest.jsonl")).unwrap();
        assert!(fresh.is_empty());
    }

    #[test]
    fn stream_line_carries_four_fields() {
        let mut sink = StageSink::new("s");
        sink.publish(
            SinkEvent::Cue {
                detail: json!({"x": 1}),
            },
            9,
            &desk(),
        )
        .unwrap();
        let v: Value = serde_json::from_str(&sink.entries()[0].stream_line()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, vec!["detail", "kind", "seq", "t_ms"]);
    }
}
