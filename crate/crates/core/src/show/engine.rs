use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::RgbaImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::Millis;
use crate::digest::derive_seed;
use crate::ingest::{
    encode_png, Gateway, GatewayConfig, IngestError, MuseAssignment, Round, SketchImage,
    Submission, SubmissionEnvelope, SubmissionReceipt,
};
use crate::moderation::{
    AuditLog, Decision, ModerationOutcome, Release, ReviewDesk, ReviewTicket, SubstitutionReason,
    SubstitutionRecord, TicketState,
};
use crate::oracle::moves::sample_sources;
use crate::oracle::{
    builtin_library, score, select_moves, ChoreographyCue, CueSource, MoveLibrary, PoseSequence,
    ScoreReport,
};
use crate::orchestrator::{
    GenerationJob, LatencyReport, Orchestrator, OrchestratorError, TaskType,
};
use crate::pipelines::backend::BackendRole;
use crate::pipelines::mesh::bbox_preview;
use crate::pipelines::tasks::StageObserver;
use crate::pipelines::{
    run_task, Artifact, BackendSet, GeneratedAsset, MuseMedia, PipelineConfig, PipelineError,
    PipelineRun, TaskContext,
};
use crate::sink::{
    FeedbackLevel, FeedbackSource, ManifestEntry, ShowManifest, SinkEvent, StageSink,
};

use super::{ShowConfig, ShowError, ShowSeeds};

const PREVIEW_MESH_SIZE: (u32, u32) = (256, 256);

#[derive(Debug, Clone, Default)]
pub struct ShowOptions {
    /// Orchestrator journal; submissions are kept next to it so queued jobs
    /// survive a restart.
    pub journal: Option<PathBuf>,
    /// Where `{show_id}.manifest.jsonl` is written.
    pub manifest_dir: Option<PathBuf>,
    /// Directory muse artwork paths are relative to.
    pub asset_dir: Option<PathBuf>,
    /// Keep a PNG preview of every generated asset for the review screen.
    pub keep_previews: bool,
}

/// Where a job came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobInfo {
    pub job_id: String,
    pub submission: Submission,
}

impl JobInfo {
    pub fn muse_id(&self) -> u8 {
        self.submission.muse_id
    }

    pub fn task(&self) -> TaskType {
        self.submission.round.task()
    }
}

#[derive(Debug, Clone)]
pub struct AssetRecord {
    pub asset: GeneratedAsset,
    pub preview_png: Option<Vec<u8>>,
}

/// Everything a worker needs to run one attempt without touching the show.
#[derive(Clone)]
pub struct WorkOrder {
    pub job_id: String,
    pub task: TaskType,
    pub worker: usize,
    pub attempt: u32,
    pub client_token: String,
    pub sketch: SketchImage,
    pub muse: Arc<MuseMedia>,
    pub seed: u64,
    pub backends: BackendSet,
    pub pipeline: Arc<PipelineConfig>,
}

impl WorkOrder {
    pub fn run(&self, observer: StageObserver) -> Result<PipelineRun, PipelineError> {
        let sketch = self
            .sketch
            .decode_rgba()
            .ok_or_else(|| PipelineError::AssetLoad {
                reference: format!("sketch of {}", self.job_id),
                message: "undecodable PNG".into(),
            })?;
        let ctx = TaskContext {
            job_id: &self.job_id,
            seed: self.seed,
        };
        run_task(
            self.task,
            &ctx,
            &sketch,
            &self.muse,
            &self.backends,
            &self.pipeline,
            observer,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum JobOutcome {
    InReview {
        ticket: ReviewTicket,
    },
    Retry {
        attempts: u32,
        retry_at: Millis,
    },
    DeadLettered {
        seq: u64,
        substitution: SubstitutionRecord,
    },
}

pub struct Show {
    config: ShowConfig,
    seeds: ShowSeeds,
    gateway: Gateway,
    orch: Orchestrator,
    desk: ReviewDesk,
    sink: StageSink,
    backends: BackendSet,
    pipeline: Arc<PipelineConfig>,
    muses: BTreeMap<u8, Arc<MuseMedia>>,
    fallback_digests: BTreeMap<u8, String>,
    library: MoveLibrary,
    jobs: BTreeMap<String, JobInfo>,
    by_token: HashMap<String, String>,
    assets: BTreeMap<String, AssetRecord>,
    cue: Option<ChoreographyCue>,
    scores: Vec<ScoreReport>,
    keep_previews: bool,
    submissions_log: Option<PathBuf>,
}

impl Show {
    pub fn new(
        config: ShowConfig,
        seeds: ShowSeeds,
        backends: BackendSet,
        options: ShowOptions,
    ) -> Result<Self, ShowError> {
        config.validate()?;
        let pipeline = Arc::new(config.pipeline.clone());
        let fallback_size = (pipeline.output_width, pipeline.output_height);
        let mut muses = BTreeMap::new();
        let mut fallback_digests = BTreeMap::new();
        let mut fallback_ids = BTreeMap::new();
        for profile in config.muse_profiles() {
            let media = profile.resolve_media(options.asset_dir.as_deref(), fallback_size)?;
            fallback_digests.insert(
                profile.muse_id,
                Artifact::Image(media.fallback.clone()).digest(),
            );
            fallback_ids.insert(profile.muse_id, profile.fallback_asset_id());
            muses.insert(profile.muse_id, Arc::new(media));
        }
        for task in TaskType::ALL {
            crate::pipelines::StageGraph::for_task(task).check_bindings(&backends)?;
        }
        if backends.get(BackendRole::Poem).is_none() {
            return Err(PipelineError::MissingBackend(BackendRole::Poem).into());
        }
        let library = match &config.move_library {
            Some(path) => {
                let path = match &options.asset_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                MoveLibrary::load(&path)?
            }
            None => builtin_library(),
        };
        library.validate()?;

        let gateway = Gateway::new(
            config.show_id.clone(),
            GatewayConfig {
                muse_groups: config.muse_groups,
                capacity: config.capacity,
                max_pixels: config.max_pixels,
                assignment_seed: seeds.assignment,
            },
        );
        let orch = match &options.journal {
            Some(path) => Orchestrator::with_journal(
                config.show_id.clone(),
                config.orchestrator.clone(),
                path,
            )?,
            None => Orchestrator::new(config.show_id.clone(), config.orchestrator.clone()),
        };
        let desk = ReviewDesk::new(config.moderation.clone(), fallback_ids);
        let mut sink = StageSink::new(&config.show_id);
        if let Some(dir) = &options.manifest_dir {
            sink = sink.with_manifest_dir(dir)?;
        }

        let mut show = Self {
            seeds,
            gateway,
            orch,
            desk,
            sink,
            backends,
            pipeline,
            muses,
            fallback_digests,
            library,
            jobs: BTreeMap::new(),
            by_token: HashMap::new(),
            assets: BTreeMap::new(),
            cue: None,
            scores: Vec::new(),
            keep_previews: options.keep_previews,
            submissions_log: options.journal.as_ref().map(|p| submissions_path(p)),
            config,
        };
        show.restore_submissions()?;
        Ok(show)
    }

    fn restore_submissions(&mut self) -> Result<(), ShowError> {
        let Some(path) = &self.submissions_log else {
            return Ok(());
        };
        let Ok(text) = std::fs::read_to_string(path) else {
            return Ok(());
        };
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let info: JobInfo = serde_json::from_str(line)
                .map_err(|e| ShowError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
            self.gateway.remember(
                &info.submission.client_token,
                SubmissionReceipt {
                    submission_id: info.submission.submission_id.clone(),
                    queue_position: 0,
                },
            );
            self.by_token
                .insert(info.submission.client_token.clone(), info.job_id.clone());
            self.jobs.insert(info.job_id.clone(), info);
        }
        Ok(())
    }

    pub fn config(&self) -> &ShowConfig {
        &self.config
    }

    pub fn show_id(&self) -> &str {
        &self.config.show_id
    }

    pub fn seeds(&self) -> ShowSeeds {
        self.seeds
    }

    pub fn open_round(&mut self, round: Round) {
        self.gateway.open_round(round);
    }

    pub fn close_round(&mut self) -> Option<Round> {
        self.gateway.close_round()
    }

    pub fn current_round(&self) -> Option<Round> {
        self.gateway.current_round()
    }

    pub fn assign_group(&mut self, device_id: &str) -> Result<MuseAssignment, ShowError> {
        Ok(self.gateway.assign_group(device_id)?)
    }

    pub fn group_of(&self, device_id: &str) -> Option<u8> {
        self.gateway.assigner().lookup(device_id).map(|a| a.muse_id)
    }

    /// Admits a submission and queues its generation job.
    pub fn submit(
        &mut self,
        envelope: &SubmissionEnvelope,
        now: Millis,
    ) -> Result<SubmissionReceipt, ShowError> {
        let orch = &mut self.orch;
        let mut created: Option<JobInfo> = None;
        let receipt = self.gateway.accept_submission(envelope, now, |s| {
            let (job_id, pos) = orch
                .submit(&s.submission_id, s.round.task(), now)
                .map_err(|e| IngestError::QueueRefused(e.to_string()))?;
            created = Some(JobInfo {
                job_id,
                submission: s.clone(),
            });
            Ok(pos)
        })?;
        if let Some(info) = created {
            if let Some(path) = &self.submissions_log {
                let line = serde_json::to_string(&info).expect("job info serializes");
                // same policy as the journal: IO trouble must not stop intake
                if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
                    let _ = writeln!(f, "{line}");
                }
            }
            self.by_token
                .insert(info.submission.client_token.clone(), info.job_id.clone());
            self.jobs.insert(info.job_id.clone(), info);
        }
        Ok(receipt)
    }

    /// Hands every idle worker the next job of its task.
    pub fn dispatch_all(&mut self, now: Millis) -> Vec<WorkOrder> {
        let mut orders = Vec::new();
        for task in TaskType::ALL {
            for a in self.orch.dispatch(task, now) {
                let info = &self.jobs[&a.job_id];
                orders.push(WorkOrder {
                    seed: derive_seed(self.seeds.pipeline, &a.job_id),
                    job_id: a.job_id.clone(),
                    task,
                    worker: a.worker,
                    attempt: a.attempt,
                    client_token: info.submission.client_token.clone(),
                    sketch: info.submission.sketch.clone(),
                    muse: self.muses[&info.muse_id()].clone(),
                    backends: self.backends.clone(),
                    pipeline: self.pipeline.clone(),
                });
            }
        }
        orders
    }

    pub fn record_stage(
        &mut self,
        job_id: &str,
        label: &str,
        now: Millis,
    ) -> Result<(), ShowError> {
        self.orch.record_stage(job_id, label, now)?;
        Ok(())
    }

    /// Takes the result of one attempt: a finished asset goes to review, a
    /// failure is retried or dead-lettered with the muse fallback on stage.
    pub fn finish_job(
        &mut self,
        job_id: &str,
        result: Result<PipelineRun, PipelineError>,
        now: Millis,
    ) -> Result<JobOutcome, ShowError> {
        let info = self
            .jobs
            .get(job_id)
            .ok_or_else(|| ShowError::UnknownJob(job_id.to_string()))?;
        let (muse_id, task) = (info.muse_id(), info.task());
        match result {
            Ok(run) => {
                self.orch.await_moderation(job_id, now)?;
                let ticket = self.desk.submit_for_review(&run.asset, task, now)?;
                let preview_png = self.keep_previews.then(|| preview_of(&run.payload));
                self.assets.insert(
                    run.asset.asset_id.clone(),
                    AssetRecord {
                        asset: run.asset,
                        preview_png,
                    },
                );
                Ok(JobOutcome::InReview { ticket })
            }
            Err(err) => {
                let decision = self
                    .orch
                    .retry_or_deadletter(job_id, err.error_class(), now)?;
                if let Some(retry_at) = decision.retry_at {
                    return Ok(JobOutcome::Retry {
                        attempts: decision.attempts,
                        retry_at,
                    });
                }
                let (release, substitution) =
                    self.desk.substitute_dead_letter(job_id, muse_id, now)?;
                let detail = json!({
                    "job_id": job_id,
                    "muse_id": muse_id,
                    "reason": SubstitutionReason::DeadLetter,
                    "error": err.to_string(),
                });
                let seq = self.publish_asset(
                    release,
                    self.fallback_digests[&muse_id].clone(),
                    detail,
                    now,
                )?;
                self.orch.record_publish(job_id, now)?;
                Ok(JobOutcome::DeadLettered { seq, substitution })
            }
        }
    }

    /// Puts a job that waited out its backoff back on its queue.
    pub fn requeue(&mut self, job_id: &str, now: Millis) -> Result<usize, ShowError> {
        Ok(self.orch.requeue(job_id, now)?)
    }

    fn publish_asset(
        &mut self,
        release: Release,
        digest: String,
        detail: Value,
        now: Millis,
    ) -> Result<u64, ShowError> {
        Ok(self.sink.publish(
            SinkEvent::Asset {
                release,
                payload_digest: digest,
                detail,
            },
            now,
            &self.desk,
        )?)
    }

    fn publish_outcome(
        &mut self,
        outcome: &ModerationOutcome,
        now: Millis,
    ) -> Result<u64, ShowError> {
        let approved = outcome.decision == Decision::Approve;
        self.orch
            .record_moderation(&outcome.job_id, approved, now)?;
        let muse_id = self.jobs[&outcome.job_id].muse_id();
        let mut detail = json!({
            "job_id": outcome.job_id,
            "muse_id": muse_id,
            "decision": outcome.decision,
            "operator": outcome.operator,
        });
        let digest = match &outcome.release {
            Release::Approved { asset_id, .. } => {
                let rec = &self.assets[asset_id].asset;
                detail["kind"] = json!(rec.kind);
                rec.payload_digest.clone()
            }
            Release::Substituted { .. } => {
                detail["reason"] = json!(SubstitutionReason::Rejected);
                if let Some(s) = &outcome.substitution {
                    detail["original_asset_id"] = json!(s.original_asset_id);
                }
                self.fallback_digests[&muse_id].clone()
            }
        };
        let seq = self.publish_asset(outcome.release.clone(), digest, detail, now)?;
        self.orch.record_publish(&outcome.job_id, now)?;
        Ok(seq)
    }

    /// An operator decision, published immediately.
    pub fn decide(
        &mut self,
        ticket_id: &str,
        decision: Decision,
        operator: &str,
        now: Millis,
    ) -> Result<ModerationOutcome, ShowError> {
        let outcome = self.desk.decide(ticket_id, decision, operator, now)?;
        self.publish_outcome(&outcome, now)?;
        Ok(outcome)
    }

    /// Applies the timeout policy to every overdue ticket.
    pub fn sweep_timeouts(&mut self, now: Millis) -> Result<Vec<ModerationOutcome>, ShowError> {
        let outcomes = self.desk.sweep_timeouts(now);
        for o in &outcomes {
            self.publish_outcome(o, now)?;
        }
        Ok(outcomes)
    }

    pub fn next_timeout_at(&self) -> Option<Millis> {
        self.desk.next_timeout_at()
    }

    /// Approved, generated assets with their tags.
    pub fn cue_candidates(&self) -> Vec<CueSource> {
        self.sink
            .entries()
            .iter()
            .filter_map(|e| {
                let release: Release =
                    serde_json::from_value(e.detail.get("release")?.clone()).ok()?;
                match release {
                    Release::Approved { asset_id, .. } => Some(CueSource {
                        tags: self.assets.get(&asset_id)?.asset.tags.clone(),
                        asset_id,
                    }),
                    Release::Substituted { .. } => None,
                }
            })
            .collect()
    }

    /// Picks the three moves and the poem from a seeded sample of the night's
    /// published assets, and announces them.
    pub fn trigger_cue(
        &mut self,
        seed: Option<u64>,
        now: Millis,
    ) -> Result<ChoreographyCue, ShowError> {
        let seed = seed.unwrap_or(self.seeds.oracle);
        let sources = sample_sources(
            &self.cue_candidates(),
            self.config.cue_sources,
            derive_seed(seed, "sources"),
        );
        let poem = self
            .backends
            .get(BackendRole::Poem)
            .expect("checked at start")
            .clone();
        let cue = select_moves(
            &self.config.show_id,
            &sources,
            &self.library,
            seed,
            poem.as_ref(),
        )?;
        self.sink.publish(
            SinkEvent::Cue {
                detail: serde_json::to_value(&cue).expect("cue serializes"),
            },
            now,
            &self.desk,
        )?;
        self.cue = Some(cue.clone());
        Ok(cue)
    }

    /// Scores an audience recording against the current cue and publishes
    /// the composite as the feedback level.
    pub fn score(
        &mut self,
        audience: &PoseSequence,
        now: Millis,
    ) -> Result<ScoreReport, ShowError> {
        let cue = self.cue.as_ref().ok_or(ShowError::NoCue)?;
        let report = score(audience, cue, &self.library, &self.config.score)?;
        self.sink.publish(
            SinkEvent::Feedback {
                level: FeedbackLevel::new(report.composite, FeedbackSource::Oracle, now),
                report: Some(serde_json::to_value(&report).expect("report serializes")),
            },
            now,
            &self.desk,
        )?;
        self.scores.push(report.clone());
        Ok(report)
    }

    /// Operator-chosen feedback level, for when scoring is not trusted.
    pub fn override_feedback(
        &mut self,
        composite: f64,
        now: Millis,
    ) -> Result<FeedbackLevel, ShowError> {
        let level = FeedbackLevel::new(composite, FeedbackSource::Override, now);
        self.sink.publish(
            SinkEvent::Feedback {
                level: level.clone(),
                report: None,
            },
            now,
            &self.desk,
        )?;
        Ok(level)
    }

    /// Stops intake and freezes the manifest.
    pub fn close(&mut self, now: Millis) {
        self.gateway.close_round();
        self.orch.close(now);
        self.sink.close();
    }

    pub fn is_closed(&self) -> bool {
        !self.sink.is_open()
    }

    pub fn latency_report(&self) -> Result<LatencyReport, OrchestratorError> {
        self.orch.latency_report()
    }

    pub fn job(&self, job_id: &str) -> Option<&GenerationJob> {
        self.orch.job(job_id)
    }

    pub fn job_info(&self, job_id: &str) -> Option<&JobInfo> {
        self.jobs.get(job_id)
    }

    pub fn job_for_token(&self, client_token: &str) -> Option<&str> {
        self.by_token.get(client_token).map(String::as_str)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &GenerationJob> {
        self.orch.jobs()
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orch
    }

    pub fn desk(&self) -> &ReviewDesk {
        &self.desk
    }

    pub fn tickets_in(&self, state: TicketState) -> Vec<&ReviewTicket> {
        self.desk.tickets_in(state)
    }

    pub fn ticket(&self, ticket_id: &str) -> Option<&ReviewTicket> {
        self.desk.ticket(ticket_id)
    }

    pub fn ticket_for_job(&self, job_id: &str) -> Option<&ReviewTicket> {
        self.desk
            .ticket_for_asset(&crate::pipelines::tasks::asset_id_for(job_id))
    }

    pub fn audit(&self) -> &AuditLog {
        self.desk.audit()
    }

    pub fn asset(&self, asset_id: &str) -> Option<&AssetRecord> {
        self.assets.get(asset_id)
    }

    pub fn cue(&self) -> Option<&ChoreographyCue> {
        self.cue.as_ref()
    }

    pub fn scores(&self) -> &[ScoreReport] {
        &self.scores
    }

    pub fn library(&self) -> &MoveLibrary {
        &self.library
    }

    /// PNG bytes for a generated asset or a muse fallback.
    pub fn preview_png(&self, asset_id: &str) -> Option<Vec<u8>> {
        if let Some(rec) = self.assets.get(asset_id) {
            return rec.preview_png.clone();
        }
        self.muses
            .values()
            .find(|m| m.profile.fallback_asset_id() == asset_id)
            .map(|m| encode_png(&m.fallback))
    }

    pub fn sink(&self) -> &StageSink {
        &self.sink
    }

    pub fn subscribe(
        &self,
        from_seq: u64,
    ) -> (
        Vec<ManifestEntry>,
        tokio::sync::broadcast::Receiver<ManifestEntry>,
    ) {
        self.sink.subscribe(from_seq)
    }

    pub fn manifest(&self) -> ShowManifest {
        self.sink.manifest()
    }

    pub fn fingerprint(&self) -> Result<String, ShowError> {
        Ok(self.sink.manifest_fingerprint()?)
    }
}

fn submissions_path(journal: &Path) -> PathBuf {
    let mut name = journal
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".submissions");
    journal.with_file_name(name)
}

fn preview_of(payload: &Artifact) -> Vec<u8> {
    match payload {
        Artifact::Image(img) => encode_png(img),
        Artifact::Mesh(obj) => {
            encode_png(&bbox_preview(obj, PREVIEW_MESH_SIZE.0, PREVIEW_MESH_SIZE.1))
        }
        Artifact::Pose(_) | Artifact::Text(_) => encode_png(&RgbaImage::new(1, 1)),
    }
}

impl std::fmt::Debug for Show {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Show")
            .field("show_id", &self.config.show_id)
            .field("jobs", &self.jobs.len())
            .field("published", &self.sink.entries().len())
            .finish()
    }
}
