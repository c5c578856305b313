//! The three generation tasks as linear stage graphs.
//!
//! Each run records one [`StageRecord`] per stage. The final record's output
//! digest is the payload digest of the produced asset.

use image::RgbaImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::clock::Millis;
use crate::digest::derive_seed;
use crate::orchestrator::TaskType;
use crate::skeleton::KeypointPose;

use super::backend::{Artifact, BackendRole, BackendSet, StageInputs};
use super::imaging::{
    composite_frieze, rescale, DEFAULT_FRIEZE_MARGIN, INTERMEDIATE_HEIGHT, INTERMEDIATE_WIDTH,
};
use super::muse::MuseMedia;
use super::pose::{normalize_proportions, pose_validity, LimbRatioTable, ValidityConfig};
use super::schedule::{control_schedule_with, ControlScheduleConfig};
use super::PipelineError;

pub const LOCAL_BACKEND: &str = "local";
pub const STAGE_COMPOSITE: &str = "COMPOSITE_FRIEZE";
pub const STAGE_PROPORTIONS: &str = "NORMALIZE_POSE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageKind {
    Model(BackendRole),
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub label: String,
    pub kind: StageKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageGraph {
    pub task_type: TaskType,
    pub stages: Vec<StageSpec>,
}

impl StageGraph {
    pub fn for_task(task: TaskType) -> Self {
        use BackendRole::*;
        let model = |r: BackendRole| StageSpec {
            label: r.as_str().to_string(),
            kind: StageKind::Model(r),
        };
        let local = |l: &str| StageSpec {
            label: l.to_string(),
            kind: StageKind::Local,
        };
        let stages = match task {
            TaskType::T1 => vec![
                model(Describe),
                model(Stylize),
                model(Variation),
                local(STAGE_COMPOSITE),
            ],
            TaskType::T2 => vec![
                model(GarmentAgent),
                model(PoseAgent),
                model(KeypointAgent),
                local(STAGE_PROPORTIONS),
                model(IdentityPoseGen),
            ],
            TaskType::T3 => vec![
                model(Describe),
                model(SketchRefine),
                model(Variation),
                model(ImageToMesh),
            ],
        };
        Self {
            task_type: task,
            stages,
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        self.stages.iter().map(|s| s.label.as_str()).collect()
    }

    /// Fails on the first model stage with no bound backend.
    pub fn check_bindings(&self, backends: &BackendSet) -> Result<(), PipelineError> {
        for s in &self.stages {
            if let StageKind::Model(role) = s.kind {
                if backends.get(role).is_none() {
                    return Err(PipelineError::MissingBackend(role));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub label: String,
    pub backend_id: String,
    pub input_digests: Vec<String>,
    pub output_digest: String,
    pub latency_ms: Millis,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AssetKind {
    BackgroundImage,
    MuseTexture,
    Mesh,
}

impl AssetKind {
    pub fn for_task(task: TaskType) -> Self {
        match task {
            TaskType::T1 => AssetKind::BackgroundImage,
            TaskType::T2 => AssetKind::MuseTexture,
            TaskType::T3 => AssetKind::Mesh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAsset {
    pub asset_id: String,
    pub job_id: String,
    pub muse_id: u8,
    pub kind: AssetKind,
    pub payload_digest: String,
    pub manifest: Vec<StageRecord>,
    /// Lowercase words from the text stages, used to bias move selection.
    pub tags: Vec<String>,
}

impl GeneratedAsset {
    pub fn total_latency_ms(&self) -> Millis {
        self.manifest.iter().map(|r| r.latency_ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub asset: GeneratedAsset,
    pub payload: Artifact,
}

pub fn asset_id_for(job_id: &str) -> String {
    format!("A-{job_id}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub output_width: u32,
    pub output_height: u32,
    pub frieze_margin: u32,
    pub denoise_steps: u32,
    pub schedule: ControlScheduleConfig,
    pub validity: ValidityConfig,
    pub proportions: LimbRatioTable,
    pub texture_width: u32,
    pub texture_height: u32,
    pub object_image_size: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_width: 1024,
            output_height: 768,
            frieze_margin: DEFAULT_FRIEZE_MARGIN,
            denoise_steps: 30,
            schedule: ControlScheduleConfig::default(),
            validity: ValidityConfig::default(),
            proportions: LimbRatioTable::default(),
            texture_width: 512,
            texture_height: 768,
            object_image_size: 512,
        }
    }
}

/// What every task needs to know about the job it runs for.
#[derive(Debug, Clone, Copy)]
pub struct TaskContext<'a> {
    pub job_id: &'a str,
    /// Seeds every local random choice (frieze x, fallback pose).
    pub seed: u64,
}

/// Called after each stage completes, in stage order.
pub type StageObserver<'a> = &'a mut dyn FnMut(&StageRecord);

struct Runner<'a, 'o> {
    backends: &'a BackendSet,
    manifest: Vec<StageRecord>,
    observer: StageObserver<'o>,
    tags: Vec<String>,
}

impl<'a, 'o> Runner<'a, 'o> {
    fn new(backends: &'a BackendSet, observer: StageObserver<'o>) -> Self {
        Self {
            backends,
            manifest: Vec::new(),
            observer,
            tags: Vec::new(),
        }
    }

    fn push(&mut self, record: StageRecord) {
        (self.observer)(&record);
        self.manifest.push(record);
    }

    /// Invokes `role`, lets `post` adjust the artifact, and records the stage.
    fn model_with(
        &mut self,
        role: BackendRole,
        inputs: StageInputs,
        post: impl FnOnce(Artifact) -> Result<(Artifact, Value), PipelineError>,
    ) -> Result<Artifact, PipelineError> {
        let backend = self
            .backends
            .get(role)
            .ok_or(PipelineError::MissingBackend(role))?;
        let out = backend
            .invoke(role, &inputs)
            .map_err(|e| PipelineError::BackendFailure {
                stage: role,
                class: e.class,
                message: e.message,
            })?;
        let (artifact, detail) = post(out.artifact)?;
        if let Some(text) = artifact.as_text() {
            self.tags.extend(tokens(text));
        }
        self.push(StageRecord {
            label: role.as_str().to_string(),
            backend_id: backend.id(),
            input_digests: inputs.input_digests(),
            output_digest: artifact.digest(),
            latency_ms: out.latency_ms,
            detail,
        });
        Ok(artifact)
    }

    fn finish(
        mut self,
        ctx: &TaskContext,
        muse_id: u8,
        kind: AssetKind,
        payload: Artifact,
    ) -> PipelineRun {
        self.tags.sort();
        self.tags.dedup();
        let payload_digest = payload.digest();
        debug_assert_eq!(
            self.manifest.last().map(|r| r.output_digest.as_str()),
            Some(payload_digest.as_str())
        );
        PipelineRun {
            asset: GeneratedAsset {
                asset_id: asset_id_for(ctx.job_id),
                job_id: ctx.job_id.to_string(),
                muse_id,
                kind,
                payload_digest,
                manifest: self.manifest,
                tags: self.tags,
            },
            payload,
        }
    }
}

/// Lowercase alphabetic words of three or more letters.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| w.len() >= 3)
        .map(|w| w.to_ascii_lowercase())
        .collect()
}

fn expect_text(role: BackendRole, a: Artifact) -> Result<(Artifact, Value), PipelineError> {
    match a {
        Artifact::Text(_) => Ok((a, Value::Null)),
        other => Err(wrong_kind(role, "text", &other)),
    }
}

fn wrong_kind(role: BackendRole, want: &str, got: &Artifact) -> PipelineError {
    PipelineError::BackendFailure {
        stage: role,
        class: crate::orchestrator::ErrorClass::Permanent,
        message: format!("expected {want} output, got {}", got.kind()),
    }
}

/// Accepts an image, rescaling it to `size` when the backend returned
/// something else, and records the final dimensions.
fn image_at(
    role: BackendRole,
    size: (u32, u32),
) -> impl FnOnce(Artifact) -> Result<(Artifact, Value), PipelineError> {
    move |a| match a {
        Artifact::Image(img) => {
            let returned = img.dimensions();
            let img = rescale(img, size.0, size.1);
            let mut detail = json!({"width": size.0, "height": size.1});
            if returned != size {
                detail["rescaled_from"] = json!([returned.0, returned.1]);
            }
            Ok((Artifact::Image(img), detail))
        }
        other => Err(wrong_kind(role, "image", &other)),
    }
}

/// Background scene: describe the sketch, restyle at 512×384, upscale, then
/// place the muse frieze along the bottom edge.
pub fn run_task1(
    ctx: &TaskContext,
    sketch: &RgbaImage,
    muse: &MuseMedia,
    backends: &BackendSet,
    config: &PipelineConfig,
    observer: StageObserver,
) -> Result<PipelineRun, PipelineError> {
    use BackendRole::*;
    StageGraph::for_task(TaskType::T1).check_bindings(backends)?;
    let style_ref = muse
        .style_ref
        .as_ref()
        .ok_or(PipelineError::MissingStyleRef {
            muse_id: muse.profile.muse_id,
        })?;
    let mut run = Runner::new(backends, observer);
    let sketch = Artifact::Image(sketch.clone());

    let text = run.model_with(
        Describe,
        StageInputs::new().with("sketch", sketch.clone()),
        |a| expect_text(Describe, a),
    )?;
    let intermediate = (INTERMEDIATE_WIDTH, INTERMEDIATE_HEIGHT);
    let styled = run.model_with(
        Stylize,
        StageInputs::new()
            .with("text", text)
            .with("style_ref", Artifact::Image(style_ref.clone()))
            .with("sketch", sketch)
            .param("width", intermediate.0)
            .param("height", intermediate.1),
        image_at(Stylize, intermediate),
    )?;
    let out_size = (config.output_width, config.output_height);
    let hires = run.model_with(
        Variation,
        StageInputs::new()
            .with("image", styled)
            .param("width", out_size.0)
            .param("height", out_size.1),
        image_at(Variation, out_size),
    )?;

    let background = hires.as_image().expect("image stage output");
    let seed = derive_seed(ctx.seed, "frieze");
    let (composite, placement) =
        composite_frieze(background, &muse.frieze, seed, config.frieze_margin)?;
    let payload = Artifact::Image(composite);
    let frieze_input = Artifact::Image(muse.frieze.clone());
    run.push(StageRecord {
        label: STAGE_COMPOSITE.to_string(),
        backend_id: LOCAL_BACKEND.to_string(),
        input_digests: vec![
            format!("background:{}", hires.digest()),
            format!("frieze:{}", frieze_input.digest()),
        ],
        output_digest: payload.digest(),
        latency_ms: 0,
        detail: json!({"placement": placement, "seed": seed, "margin": config.frieze_margin}),
    });
    Ok(run.finish(
        ctx,
        muse.profile.muse_id,
        AssetKind::BackgroundImage,
        payload,
    ))
}

/// Muse texture: garment and pose text from two agents, keypoints from the
/// pose text, proportion correction and validity check with library
/// fallback, then identity-preserving generation under the control schedule.
pub fn run_task2(
    ctx: &TaskContext,
    sketch: &RgbaImage,
    muse: &MuseMedia,
    backends: &BackendSet,
    config: &PipelineConfig,
    observer: StageObserver,
) -> Result<PipelineRun, PipelineError> {
    use BackendRole::*;
    StageGraph::for_task(TaskType::T2).check_bindings(backends)?;
    let schedule = control_schedule_with(config.denoise_steps, &config.schedule)?;
    let mut run = Runner::new(backends, observer);
    let garment_ref = Artifact::Image(muse.garment_ref.clone());

    let garment_text = run.model_with(
        GarmentAgent,
        StageInputs::new().with("garment_ref", garment_ref.clone()),
        |a| expect_text(GarmentAgent, a),
    )?;
    let pose_text = run.model_with(
        PoseAgent,
        StageInputs::new().with("sketch", Artifact::Image(sketch.clone())),
        |a| expect_text(PoseAgent, a),
    )?;
    let raw = run.model_with(
        KeypointAgent,
        StageInputs::new().with("pose_text", pose_text),
        |a| match a {
            Artifact::Pose(_) => Ok((a, Value::Null)),
            other => Err(wrong_kind(KeypointAgent, "pose", &other)),
        },
    )?;
    let raw_pose = *raw.as_pose().expect("pose stage output");

    let normalized = normalize_proportions(&raw_pose, &config.proportions).ok();
    let valid = normalized
        .as_ref()
        .is_some_and(|p| pose_validity(p, &config.proportions, &config.validity));
    let (pose, fallback_id) = match (valid, normalized) {
        (true, Some(p)) => (p, None),
        _ => {
            let lib = &muse.profile.pose_library;
            if lib.is_empty() {
                return Err(PipelineError::BackendFailure {
                    stage: KeypointAgent,
                    class: crate::orchestrator::ErrorClass::Permanent,
                    message: "pose failed validity and the pose library is empty".into(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, "fallback-pose"));
            let i = rng.random_range(0..lib.len());
            (lib[i], Some(format!("pose-lib-{i}")))
        }
    };
    let pose_artifact = Artifact::Pose(pose);
    run.push(StageRecord {
        label: STAGE_PROPORTIONS.to_string(),
        backend_id: LOCAL_BACKEND.to_string(),
        input_digests: vec![format!("keypoints:{}", raw.digest())],
        output_digest: pose_artifact.digest(),
        latency_ms: 0,
        detail: json!({
            "validity": valid,
            "keypoints": pose,
            "fallback_pose": fallback_id,
        }),
    });

    let size = (config.texture_width, config.texture_height);
    let texture = run.model_with(
        IdentityPoseGen,
        StageInputs::new()
            .with("identity", garment_ref)
            .with("garment_text", garment_text)
            .with("pose", pose_artifact)
            .param("steps", config.denoise_steps)
            .param(
                "identity_interval",
                json!([schedule.identity.start, schedule.identity.end]),
            )
            .param(
                "pose_interval",
                json!([schedule.pose.start, schedule.pose.end]),
            )
            .param("width", size.0)
            .param("height", size.1),
        image_at(IdentityPoseGen, size),
    )?;
    if let Some(last) = run.manifest.last_mut() {
        last.detail["identity_interval"] = json!(schedule.identity.to_string());
        last.detail["pose_interval"] = json!(format!(
            "[{}, {}]",
            schedule.pose.start,
            schedule.pose.last().unwrap_or(0)
        ));
    }
    Ok(run.finish(ctx, muse.profile.muse_id, AssetKind::MuseTexture, texture))
}

/// Object offering: describe, refine the sketch in the muse style, render a
/// clean image, lift it to a mesh.
pub fn run_task3(
    ctx: &TaskContext,
    sketch: &RgbaImage,
    muse_id: u8,
    style_ref: Option<&RgbaImage>,
    backends: &BackendSet,
    config: &PipelineConfig,
    observer: StageObserver,
) -> Result<PipelineRun, PipelineError> {
    use BackendRole::*;
    StageGraph::for_task(TaskType::T3).check_bindings(backends)?;
    let style_ref = style_ref.ok_or(PipelineError::MissingStyleRef { muse_id })?;
    let mut run = Runner::new(backends, observer);
    let sketch = Artifact::Image(sketch.clone());
    let side = config.object_image_size;

    let text = run.model_with(
        Describe,
        StageInputs::new().with("sketch", sketch.clone()),
        |a| expect_text(Describe, a),
    )?;
    let refined = run.model_with(
        SketchRefine,
        StageInputs::new()
            .with("text", text)
            .with("sketch", sketch)
            .with("style_ref", Artifact::Image(style_ref.clone()))
            .param("width", side)
            .param("height", side),
        image_at(SketchRefine, (side, side)),
    )?;
    let clean = run.model_with(
        Variation,
        StageInputs::new()
            .with("image", refined)
            .param("width", side)
            .param("height", side),
        image_at(Variation, (side, side)),
    )?;
    let mesh = run.model_with(
        ImageToMesh,
        StageInputs::new().with("image", clean),
        |a| match a {
            Artifact::Mesh(_) => Ok((a, Value::Null)),
            other => Err(wrong_kind(ImageToMesh, "mesh", &other)),
        },
    )?;
    Ok(run.finish(ctx, muse_id, AssetKind::Mesh, mesh))
}

/// Runs the task for `task` against one muse.
pub fn run_task(
    task: TaskType,
    ctx: &TaskContext,
    sketch: &RgbaImage,
    muse: &MuseMedia,
    backends: &BackendSet,
    config: &PipelineConfig,
    observer: StageObserver,
) -> Result<PipelineRun, PipelineError> {
    match task {
        TaskType::T1 => run_task1(ctx, sketch, muse, backends, config, observer),
        TaskType::T2 => run_task2(ctx, sketch, muse, backends, config, observer),
        TaskType::T3 => run_task3(
            ctx,
            sketch,
            muse.profile.muse_id,
            muse.style_ref.as_ref(),
            backends,
            config,
            observer,
        ),
    }
}

/// Pose that ended up driving a texture, read back from its manifest.
pub fn manifest_pose(asset: &GeneratedAsset) -> Option<KeypointPose> {
    let rec = asset
        .manifest
        .iter()
        .find(|r| r.label == STAGE_PROPORTIONS)?;
    serde_json::from_value(rec.detail.get("keypoints")?.clone()).ok()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ingest::synthetic_sketch;
    use crate::orchestrator::ErrorClass;
    use crate::pipelines::backend::BackendError;
    use crate::pipelines::mock::{FailingBackend, MockBackend, MockConfig};
    use crate::pipelines::muse::default_muses;

    fn small_config() -> PipelineConfig {
        PipelineConfig {
            output_width: 320,
            output_height: 240,
            texture_width: 64,
            texture_height: 96,
            object_image_size: 64,
            ..PipelineConfig::default()
        }
    }

    fn sketch(seed: u64) -> RgbaImage {
        image::load_from_memory(&synthetic_sketch(seed, 64, 48))
            .unwrap()
            .to_rgba8()
    }

    fn media(i: usize) -> MuseMedia {
        default_muses()[i].resolve_media(None, (320, 240)).unwrap()
    }

    fn mocks() -> BackendSet {
        BackendSet::all(Arc::new(MockBackend::default()))
    }

    fn ctx(job: &str) -> TaskContext<'_> {
        TaskContext {
            job_id: job,
            seed: 7,
        }
    }

    fn run(task: TaskType, seed: u64, backends: &BackendSet) -> Result<PipelineRun, PipelineError> {
        let mut seen = Vec::new();
        let out = run_task(
            task,
            &ctx("job-00001"),
            &sketch(seed),
            &media(0),
            backends,
            &small_config(),
            &mut |r| seen.push(r.label.clone()),
        );
        if let Ok(r) = &out {
            let labels: Vec<String> = r.asset.manifest.iter().map(|m| m.label.clone()).collect();
            assert_eq!(seen, labels, "observer sees stages in manifest order");
        }
        out
    }

    #[test]
    fn task1_records_four_stages_with_intermediate_size() {
        let r = run(TaskType::T1, 1, &mocks()).unwrap();
        let labels: Vec<&str> = r.asset.manifest.iter().map(|m| m.label.as_str()).collect();
        assert_eq!(labels, StageGraph::for_task(TaskType::T1).labels());
        assert_eq!(labels.len(), 4);
        let stylize = &r.asset.manifest[1];
        assert_eq!(stylize.detail["width"], 512);
        assert_eq!(stylize.detail["height"], 384);
        assert_eq!(r.asset.kind, AssetKind::BackgroundImage);
        assert_eq!(r.payload.as_image().unwrap().dimensions(), (320, 240));
        assert_eq!(r.asset.payload_digest, r.asset.manifest[3].output_digest);
    }

    #[test]
    fn same_inputs_same_asset() {
        for task in TaskType::ALL {
            let a = run(task, 3, &mocks()).unwrap();
            let b = run(task, 3, &mocks()).unwrap();
            assert_eq!(a.asset, b.asset);
        }
    }

    #[test]
    fn failing_stylize_yields_no_asset() {
        let failing = Arc::new(FailingBackend {
            inner: MockBackend::default(),
            roles: vec![BackendRole::Stylize],
            error: BackendError::transient("gpu busy"),
        });
        let err = run(TaskType::T1, 1, &BackendSet::all(failing)).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::BackendFailure {
                stage: BackendRole::Stylize,
                class: ErrorClass::Transient,
                ..
            }
        ));
    }

    #[test]
    fn missing_style_ref() {
        let mut m = default_muses()[0].clone();
        m.style_ref.clear();
        let media = m.resolve_media(None, (320, 240)).unwrap();
        let err = run_task1(
            &ctx("j"),
            &sketch(1),
            &media,
            &mocks(),
            &small_config(),
            &mut |_| {},
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::MissingStyleRef { muse_id: 1 }));
    }

    #[test]
    fn task2_valid_pose_is_normalized() {
        let backends = BackendSet::all(Arc::new(MockBackend::new(MockConfig {
            abstract_threshold: 0,
            ..MockConfig::default()
        })));
        let r = run(TaskType::T2, 4, &backends).unwrap();
        assert_eq!(r.asset.manifest.len(), 5);
        let rec = &r.asset.manifest[3];
        assert_eq!(rec.detail["validity"], true);
        assert!(rec.detail["fallback_pose"].is_null());
        let pose = manifest_pose(&r.asset).unwrap();
        let again = normalize_proportions(&pose, &LimbRatioTable::default()).unwrap();
        for (a, b) in pose.keypoints.iter().zip(again.keypoints.iter()) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
        assert_eq!(r.asset.manifest[4].detail["pose_interval"], "[1, 15]");
        assert_eq!(r.asset.kind, AssetKind::MuseTexture);
    }

    #[test]
    fn abstract_pose_falls_back_to_library() {
        let backends = BackendSet::all(Arc::new(MockBackend::new(MockConfig {
            abstract_threshold: 256,
            ..MockConfig::default()
        })));
        let r = run(TaskType::T2, 4, &backends).unwrap();
        let rec = &r.asset.manifest[3];
        assert_eq!(rec.detail["validity"], false);
        let id = rec.detail["fallback_pose"].as_str().unwrap();
        let idx: usize = id.strip_prefix("pose-lib-").unwrap().parse().unwrap();
        assert_eq!(
            manifest_pose(&r.asset).unwrap(),
            default_muses()[0].pose_library[idx]
        );
    }

    #[test]
    fn empty_library_escalates() {
        let backends = BackendSet::all(Arc::new(MockBackend::new(MockConfig {
            abstract_threshold: 256,
            ..MockConfig::default()
        })));
        let mut m = default_muses()[0].clone();
        m.pose_library.clear();
        let media = m.resolve_media(None, (320, 240)).unwrap();
        let err = run_task2(
            &ctx("j"),
            &sketch(1),
            &media,
            &backends,
            &small_config(),
            &mut |_| {},
        )
        .unwrap_err();
        assert!(matches!(
            err,
            PipelineError::BackendFailure {
                stage: BackendRole::KeypointAgent,
                class: ErrorClass::Permanent,
                ..
            }
        ));
    }

    #[test]
    fn task3_emits_mesh() {
        let r = run(TaskType::T3, 5, &mocks()).unwrap();
        assert_eq!(r.asset.kind, AssetKind::Mesh);
        assert_eq!(r.asset.manifest.len(), 4);
        assert!(r.payload.as_mesh().unwrap().contains("v 0.5 0.5 0.5"));

        let failing = Arc::new(FailingBackend {
            inner: MockBackend::default(),
            roles: vec![BackendRole::ImageToMesh],
            error: BackendError::transient("timeout"),
        });
        let err = run(TaskType::T3, 5, &BackendSet::all(failing)).unwrap_err();
        assert_eq!(err.error_class(), ErrorClass::Transient);
    }

    #[test]
    fn manifest_replays_to_same_digests() {
        for task in TaskType::ALL {
            let a = run(task, 9, &mocks()).unwrap();
            let b = run(task, 9, &mocks()).unwrap();
            for (x, y) in a.asset.manifest.iter().zip(&b.asset.manifest) {
                assert_eq!(x.input_digests, y.input_digests);
                assert_eq!(x.output_digest, y.output_digest);
            }
            assert_eq!(
                a.asset.manifest.last().unwrap().output_digest,
                b.payload.digest()
            );
        }
    }

    #[test]
    fn missing_binding_is_reported() {
        let set = BackendSet::new().with(BackendRole::Describe, Arc::new(MockBackend::default()));
        assert!(matches!(
            run(TaskType::T1, 1, &set),
            Err(PipelineError::MissingBackend(BackendRole::Stylize))
        ));
    }
}
