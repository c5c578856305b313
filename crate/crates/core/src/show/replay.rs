//! Recorded shows and their deterministic replay in virtual time.
//!
//! A recording carries the show config, the seeds and every external event
//! with its arrival time. Replay runs the same engine as a live show against
//! mock backends; stage durations come from the backends' declared
//! latencies, so a whole evening replays in well under a second of wall time.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::Millis;
use crate::ingest::{synthetic_sketch, Round, SubmissionEnvelope};
use crate::moderation::{
    verify_audit, Decision, ModerationError, ReviewTicket, SubstitutionRecord,
};
use crate::oracle::{ChoreographyCue, PoseSequence, ScoreReport};
use crate::orchestrator::sim::EventQueue;
use crate::orchestrator::{ErrorClass, LatencyReport, TaskType};
use crate::pipelines::tasks::{StageKind, StageRecord};
use crate::pipelines::{BackendSet, MockBackend, PipelineError, PipelineRun, StageGraph};
use crate::sink::ShowManifest;

use super::engine::{JobOutcome, Show, ShowOptions, WorkOrder};
use super::{ShowConfig, ShowError, ShowSeeds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchSource {
    /// Procedural sketch, see [`synthetic_sketch`].
    Synthetic {
        seed: u64,
        width: u32,
        height: u32,
    },
    /// PNG file, relative to the recording.
    Path(PathBuf),
    PngBase64(String),
}

impl SketchSource {
    fn png(&self, base: Option<&Path>) -> Result<Vec<u8>, ShowError> {
        match self {
            SketchSource::Synthetic {
                seed,
                width,
                height,
            } => Ok(synthetic_sketch(*seed, *width, *height)),
            SketchSource::Path(p) => {
                let path = resolve(base, p);
                std::fs::read(&path)
                    .map_err(|e| ShowError::MalformedRecording(format!("{}: {e}", path.display())))
            }
            SketchSource::PngBase64(text) => STANDARD
                .decode(text)
                .map_err(|e| ShowError::MalformedRecording(format!("sketch base64: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RecordedEvent {
    OpenRound {
        round: Round,
    },
    CloseRound,
    /// A phone joins and is placed in a muse group.
    Arrive {
        device_id: String,
    },
    Submit {
        client_token: String,
        device_id: String,
        /// The group the phone was assigned when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        muse_id: Option<u8>,
        round: Round,
        sketch: SketchSource,
    },
    /// An operator decision on the asset generated for `client_token`.
    Decide {
        client_token: String,
        decision: Decision,
        operator: String,
    },
    Cue {
        /// The recording's oracle seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Score {
        pose_recording: PathBuf,
    },
    Override {
        composite: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t_ms: Millis,
    #[serde(flatten)]
    pub event: RecordedEvent,
}

/// A backend failure to inject into one attempt of one submission's job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub client_token: String,
    pub attempt: u32,
    pub class: ErrorClass,
    /// How long the attempt runs before failing.
    pub after_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShowRecording {
    pub config: ShowConfig,
    pub seeds: ShowSeeds,
    pub events: Vec<TimedEvent>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Directory relative paths resolve against; set by [`ShowRecording::load`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ShowRecording {
    pub fn empty(config: ShowConfig, seeds: ShowSeeds) -> Self {
        Self {
            config,
            seeds,
            events: Vec::new(),
            faults: Vec::new(),
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ShowError> {
        let malformed = |m: String| ShowError::MalformedRecording(m);
        let value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let seeds = value
            .get("seeds")
            .and_then(Value::as_object)
            .ok_or_else(|| malformed("missing seeds".into()))?;
        for key in ShowSeeds::KEYS {
            if !seeds.get(key).is_some_and(Value::is_u64) {
                return Err(malformed(format!("missing seed {key:?}")));
            }
        }
        let rec: ShowRecording =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        rec.validate()?;
        Ok(rec)
    }

    pub fn load(path: &Path) -> Result<Self, ShowError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ShowError::MalformedRecording(format!("{}: {e}", path.display())))?;
        let mut rec = Self::from_json(&text)?;
        rec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(rec)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("recording serializes")
    }

    /// Checks ordering and cross references without running anything.
    pub fn validate(&self) -> Result<(), ShowError> {
        let malformed = |m: String| Err(ShowError::MalformedRecording(m));
        self.config
            .validate()
            .map_err(|e| ShowError::MalformedRecording(e.to_string()))?;
        let mut last = 0;
        let mut tokens = std::collections::HashSet::new();
        for (i, e) in self.events.iter().enumerate() {
            if e.t_ms < last {
                return malformed(format!("event {i} at {} ms comes before {last} ms", e.t_ms));
            }
            last = e.t_ms;
            match &e.event {
                RecordedEvent::Submit { client_token, .. } => {
                    tokens.insert(client_token.as_str());
                }
                RecordedEvent::Decide { client_token, .. }
                    if !tokens.contains(client_token.as_str()) =>
                {
                    return malformed(format!(
                        "event {i} decides {client_token:?} before it was submitted"
                    ));
                }
                RecordedEvent::Override { composite } if !composite.is_finite() => {
                    return malformed(format!("event {i} has a non-finite override"));
                }
                _ => {}
            }
        }
        for f in &self.faults {
            if !tokens.contains(f.client_token.as_str()) {
                return malformed(format!("fault for unknown submission {:?}", f.client_token));
            }
        }
        Ok(())
    }
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayOutcome {
    pub show_id: String,
    pub fingerprint: String,
    pub entries: usize,
    #[serde(skip)]
    pub manifest: ShowManifest,
    /// `None` when no job completed.
    pub latency: Option<LatencyReport>,
    pub tickets: Vec<ReviewTicket>,
    pub substitutions: Vec<SubstitutionRecord>,
    pub cue: Option<ChoreographyCue>,
    pub scores: Vec<ScoreReport>,
    pub audit_verified: bool,
    /// `(client_token, error code)` for submissions the gateway refused.
    pub refused_submissions: Vec<(String, String)>,
    /// Tickets the operator decided after the timeout policy already had.
    pub late_decisions: Vec<String>,
    pub end_ms: Millis,
}

enum Ev {
    External(usize),
    Stage { job_id: String, label: String },
    Finish { job_id: String },
    Requeue { job_id: String },
    Timeouts,
}

// Same-instant order: generation progress, then the outside world, then the
// timeout policy. An operator who decides exactly at the deadline wins.
const PRI_INTERNAL: u8 = 0;
const PRI_EXTERNAL: u8 = 1;
const PRI_TIMEOUT: u8 = 2;

struct Replayer<'a> {
    rec: &'a ShowRecording,
    show: Show,
    queue: EventQueue<(u8, usize), Ev>,
    results: HashMap<String, Result<PipelineRun, PipelineError>>,
    faults: HashMap<(&'a str, u32), &'a FaultSpec>,
    refused: Vec<(String, String)>,
    late: Vec<String>,
}

/// Runs a recording to completion in virtual time and closes the show.
pub fn replay(rec: &ShowRecording) -> Result<ReplayOutcome, ShowError> {
    rec.validate()?;
    let backends = BackendSet::all(Arc::new(MockBackend::new(rec.config.mock.clone())));
    let show = Show::new(
        rec.config.clone(),
        rec.seeds,
        backends,
        ShowOptions {
            asset_dir: rec.base_dir.clone(),
            ..ShowOptions::default()
        },
    )?;
    let mut r = Replayer {
        rec,
        show,
        queue: EventQueue::new(),
        results: HashMap::new(),
        faults: rec
            .faults
            .iter()
            .map(|f| ((f.client_token.as_str(), f.attempt), f))
            .collect(),
        refused: Vec::new(),
        late: Vec::new(),
    };
    for (i, e) in rec.events.iter().enumerate() {
        r.queue.push(e.t_ms, (PRI_EXTERNAL, i), Ev::External(i));
    }
    let mut now = 0;
    while let Some((t, ev)) = r.queue.pop() {
        now = t;
        r.handle(ev, t)?;
        for order in r.show.dispatch_all(t) {
            r.start(order, t);
        }
    }
    r.show.close(now);

    let show = r.show;
    let manifest = show.manifest();
    Ok(ReplayOutcome {
        show_id: show.show_id().to_string(),
        fingerprint: show.fingerprint()?,
        entries: manifest.entries.len(),
        manifest,
        latency: show.latency_report().ok(),
        tickets: show.desk().tickets().to_vec(),
        substitutions: show.desk().substitutions().to_vec(),
        cue: show.cue().cloned(),
        scores: show.scores().to_vec(),
        audit_verified: verify_audit(show.audit().entries()),
        refused_submissions: r.refused,
        late_decisions: r.late,
        end_ms: now,
    })
}

impl Replayer<'_> {
    fn handle(&mut self, ev: Ev, t: Millis) -> Result<(), ShowError> {
        match ev {
            Ev::External(i) => self.external(&self.rec.events[i].event, t),
            Ev::Stage { job_id, label } => self.show.record_stage(&job_id, &label, t),
            Ev::Finish { job_id } => {
                let result = self.results.remove(&job_id).expect("finish follows start");
                match self.show.finish_job(&job_id, result, t)? {
                    JobOutcome::InReview { .. } => self.schedule_timeouts(),
                    JobOutcome::Retry { retry_at, .. } => {
                        self.queue
                            .push(retry_at, (PRI_INTERNAL, 0), Ev::Requeue { job_id })
                    }
                    JobOutcome::DeadLettered { .. } => {}
                }
                Ok(())
            }
            Ev::Requeue { job_id } => self.show.requeue(&job_id, t).map(|_| ()),
            Ev::Timeouts => {
                self.show.sweep_timeouts(t)?;
                self.schedule_timeouts();
                Ok(())
            }
        }
    }

    fn schedule_timeouts(&mut self) {
        if let Some(at) = self.show.next_timeout_at() {
            self.queue.push(at, (PRI_TIMEOUT, 0), Ev::Timeouts);
        }
    }

    fn external(&mut self, event: &RecordedEvent, t: Millis) -> Result<(), ShowError> {
        match event {
            RecordedEvent::OpenRound { round } => self.show.open_round(*round),
            RecordedEvent::CloseRound => {
                self.show.close_round();
            }
            RecordedEvent::Arrive { device_id } => {
                if let Err(e) = self.show.assign_group(device_id) {
                    self.refused.push((device_id.clone(), e.to_string()));
                }
            }
            RecordedEvent::Submit {
                client_token,
                device_id,
                muse_id,
                round,
                sketch,
            } => {
                let muse_id = match muse_id.or_else(|| self.show.group_of(device_id)) {
                    Some(m) => m,
                    None => {
                        return Err(ShowError::MalformedRecording(format!(
                            "{client_token:?}: device {device_id:?} has no muse group"
                        )))
                    }
                };
                let meta = json!({
                    "client_token": client_token,
                    "muse_id": muse_id,
                    "round": round,
                    "device_id": device_id,
                });
                let envelope = SubmissionEnvelope {
                    show_id: self.show.show_id().to_string(),
                    meta_json: serde_json::to_vec(&meta).expect("meta serializes"),
                    sketch_png: sketch.png(self.rec.base_dir.as_deref())?,
                };
                match self.show.submit(&envelope, t) {
                    Ok(_) => {}
                    Err(ShowError::Ingest(e)) => self
                        .refused
                        .push((client_token.clone(), e.code().to_string())),
                    Err(e) => return Err(e),
                }
            }
            RecordedEvent::Decide {
                client_token,
                decision,
                operator,
            } => {
                let ticket = self
                    .show
                    .job_for_token(client_token)
                    .and_then(|job| self.show.ticket_for_job(job))
                    .map(|t| t.ticket_id.clone())
                    .ok_or_else(|| {
                        ShowError::MalformedRecording(format!(
                            "decision for {client_token:?} before its asset reached review"
                        ))
                    })?;
                match self.show.decide(&ticket, *decision, operator, t) {
                    Ok(_) => {}
                    Err(ShowError::Moderation(ModerationError::AlreadyDecided(id))) => {
                        self.late.push(id)
                    }
                    Err(e) => return Err(e),
                }
            }
            RecordedEvent::Cue { seed } => {
                self.show.trigger_cue(*seed, t)?;
            }
            RecordedEvent::Score { pose_recording } => {
                let path = resolve(self.rec.base_dir.as_deref(), pose_recording);
                let seq = PoseSequence::load(&path)?;
                self.show.score(&seq, t)?;
            }
            RecordedEvent::Override { composite } => {
                self.show.override_feedback(*composite, t)?;
            }
        }
        Ok(())
    }

    /// Runs the attempt right away and schedules its stage completions at
    /// the backends' declared latencies.
    fn start(&mut self, order: WorkOrder, t: Millis) {
        let job_id = order.job_id.clone();
        if let Some(f) = self
            .faults
            .get(&(order.client_token.as_str(), order.attempt))
        {
            self.results
                .insert(job_id.clone(), Err(injected_failure(order.task, f)));
            self.queue
                .push(t + f.after_ms, (PRI_INTERNAL, 0), Ev::Finish { job_id });
            return;
        }
        let mut stages: Vec<StageRecord> = Vec::new();
        let result = order.run(&mut |r: &StageRecord| stages.push(r.clone()));
        let mut at = t;
        for s in stages {
            at += s.latency_ms;
            self.queue.push(
                at,
                (PRI_INTERNAL, 0),
                Ev::Stage {
                    job_id: job_id.clone(),
                    label: s.label,
                },
            );
        }
        self.results.insert(job_id.clone(), result);
        self.queue
            .push(at, (PRI_INTERNAL, 0), Ev::Finish { job_id });
    }
}

fn injected_failure(task: TaskType, f: &FaultSpec) -> PipelineError {
    let stage = StageGraph::for_task(task)
        .stages
        .iter()
        .find_map(|s| match s.kind {
            StageKind::Model(role) => Some(role),
            StageKind::Local => None,
        })
        .expect("every task has a model stage");
    PipelineError::BackendFailure {
        stage,
        class: f.class,
        message: format!("injected fault on attempt {}", f.attempt),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moderation::TicketState;
    use crate::orchestrator::PoolSizes;

    fn small_config() -> ShowConfig {
        let mut c = ShowConfig {
            show_id: "unit".into(),
            ..ShowConfig::default()
        };
        c.pipeline.output_width = 320;
        c.pipeline.output_height = 240;
        c.pipeline.texture_width = 64;
        c.pipeline.texture_height = 96;
        c.pipeline.object_image_size = 64;
        c.orchestrator.pools = PoolSizes::uniform(2);
        c
    }

    fn seeds() -> ShowSeeds {
        ShowSeeds::from_base(7)
    }

    fn submit(t: Millis, token: &str, device: &str, muse: u8, round: Round) -> TimedEvent {
        TimedEvent {
            t_ms: t,
            event: RecordedEvent::Submit {
                client_token: token.into(),
                device_id: device.into(),
                muse_id: Some(muse),
                round,
                sketch: SketchSource::Synthetic {
                    seed: t,
                    width: 40,
                    height: 30,
                },
            },
        }
    }

    fn at(t: Millis, event: RecordedEvent) -> TimedEvent {
        TimedEvent { t_ms: t, event }
    }

    fn small_recording() -> ShowRecording {
        let mut rec = ShowRecording::empty(small_config(), seeds());
        rec.events = vec![
            at(
                0,
                RecordedEvent::OpenRound {
                    round: Round::R1Background,
                },
            ),
            submit(100, "a", "p1", 1, Round::R1Background),
            submit(200, "b", "p2", 2, Round::R1Background),
            submit(300, "c", "p3", 3, Round::R1Background),
            at(
                40_000,
                RecordedEvent::Decide {
                    client_token: "a".into(),
                    decision: Decision::Approve,
                    operator: "op".into(),
                },
            ),
            at(
                40_000,
                RecordedEvent::Decide {
                    client_token: "b".into(),
                    decision: Decision::Reject,
                    operator: "op".into(),
                },
            ),
            at(41_000, RecordedEvent::CloseRound),
            at(200_000, RecordedEvent::Cue { seed: None }),
            at(201_000, RecordedEvent::Override { composite: 0.9 }),
        ];
        rec
    }

    #[test]
    fn replay_is_deterministic() {
        let rec = small_recording();
        let a = replay(&rec).unwrap();
        let b = replay(&rec).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint);
        assert_eq!(a.manifest, b.manifest);
        assert!(a.audit_verified);
    }

    #[test]
    fn flipped_decision_changes_fingerprint() {
        let rec = small_recording();
        let mut flipped = rec.clone();
        if let RecordedEvent::Decide { decision, .. } = &mut flipped.events[4].event {
            *decision = Decision::Reject;
        }
        assert_ne!(
            replay(&rec).unwrap().fingerprint,
            replay(&flipped).unwrap().fingerprint
        );
    }

    #[test]
    fn undecided_ticket_times_out() {
        let out = replay(&small_recording()).unwrap();
        let c = out
            .tickets
            .iter()
            .find(|t| t.job_id == "job-00003")
            .unwrap();
        assert_eq!(c.state, TicketState::Approved);
        assert_eq!(
            c.decided_by.as_deref(),
            Some(crate::moderation::TIMEOUT_OPERATOR)
        );
        assert_eq!(c.decided_at, Some(c.created_at + 20_001));
    }

    #[test]
    fn manifest_has_assets_cue_and_feedback() {
        let out = replay(&small_recording()).unwrap();
        let kinds: Vec<String> = out
            .manifest
            .entries
            .iter()
            .map(|e| {
                serde_json::to_value(e.kind)
                    .unwrap()
                    .as_str()
                    .unwrap()
                    .to_string()
            })
            .collect();
        assert_eq!(kinds.iter().filter(|k| *k == "ASSET").count(), 3);
        assert_eq!(kinds[3], "CUE");
        assert_eq!(kinds[4], "FEEDBACK");
        let cue = out.cue.unwrap();
        assert_eq!(cue.selected_move_ids.len(), 3);
        // the rejected offering is replaced and never feeds the cue
        assert!(!cue.source_asset_ids.contains(&"A-job-00002".to_string()));
        assert_eq!(out.substitutions.len(), 1);
    }

    #[test]
    fn stage_stamps_follow_declared_latencies() {
        let out = replay(&small_recording()).unwrap();
        let report = out.latency.unwrap();
        let job = report.job("job-00001").unwrap();
        // dispatched on arrival: every stage duration is a mock latency
        let describe = &job.stages.iter().find(|s| s.label == "DESCRIBE").unwrap();
        assert!((3_000..=5_000).contains(&describe.duration_ms));
    }

    #[test]
    fn empty_recording_has_empty_manifest() {
        let out = replay(&ShowRecording::empty(small_config(), seeds())).unwrap();
        assert_eq!(out.entries, 0);
        assert!(out.latency.is_none());
        assert!(out.manifest.entries.is_empty());
    }

    #[test]
    fn missing_seed_is_malformed() {
        let rec = small_recording();
        let mut v = serde_json::to_value(&rec).unwrap();
        v["seeds"].as_object_mut().unwrap().remove("pipeline");
        let err = ShowRecording::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, ShowError::MalformedRecording(m) if m.contains("pipeline")));
        v.as_object_mut().unwrap().remove("seeds");
        assert!(matches!(
            ShowRecording::from_json(&v.to_string()),
            Err(ShowError::MalformedRecording(_))
        ));
    }

    #[test]
    fn recording_roundtrips_through_json() {
        let rec = small_recording();
        let back = ShowRecording::from_json(&rec.to_json_pretty()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn out_of_order_events_are_malformed() {
        let mut rec = small_recording();
        rec.events.swap(1, 5);
        assert!(matches!(
            rec.validate(),
            Err(ShowError::MalformedRecording(_))
        ));
    }

    #[test]
    fn transient_faults_retry_then_dead_letter() {
        let mut rec = small_recording();
        for attempt in 0..4 {
            rec.faults.push(FaultSpec {
                client_token: "c".into(),
                attempt,
                class: ErrorClass::Transient,
                after_ms: 1_000,
            });
        }
        let out = replay(&rec).unwrap();
        let dl = out
            .substitutions
            .iter()
            .find(|s| s.job_id == "job-00003")
            .expect("job 3 substituted");
        assert_eq!(dl.reason, crate::moderation::SubstitutionReason::DeadLetter);
        // no review ticket for a job that never produced an asset
        assert!(out.tickets.iter().all(|t| t.job_id != "job-00003"));
    }

    #[test]
    fn one_transient_fault_recovers() {
        let mut rec = small_recording();
        rec.faults.push(FaultSpec {
            client_token: "a".into(),
            attempt: 0,
            class: ErrorClass::Transient,
            after_ms: 2_000,
        });
        // the decision at 40 s now comes before the retried asset is ready
        rec.events.remove(4);
        let out = replay(&rec).unwrap();
        let job = out.latency.unwrap();
        let j = job.job("job-00001").unwrap();
        assert!(j.stages.iter().any(|s| s.label == "failed#1"));
        assert!(out.substitutions.iter().all(|s| s.job_id != "job-00001"));
    }

    #[test]
    fn decision_before_review_is_malformed() {
        let mut rec = small_recording();
        rec.events[4].t_ms = 1_000;
        rec.events.swap(4, 3);
        rec.events.sort_by_key(|e| e.t_ms);
        assert!(matches!(
            replay(&rec),
            Err(ShowError::MalformedRecording(_))
        ));
    }
}
