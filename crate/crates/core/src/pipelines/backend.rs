//! The model-backend boundary. Every model call in the pipelines goes through
//! [`ModelBackend::invoke`] with a role, named inputs and JSON parameters.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use base64::Engine as _;
use image::RgbaImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clock::Millis;
use crate::digest::{canonical_json, sha256_parts};
use crate::ingest::encode_png;
use crate::orchestrator::ErrorClass;
use crate::skeleton::KeypointPose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendRole {
    Describe,
    Stylize,
    Variation,
    PoseAgent,
    KeypointAgent,
    GarmentAgent,
    IdentityPoseGen,
    SketchRefine,
    ImageToMesh,
    Poem,
}

impl BackendRole {
    pub const ALL: [BackendRole; 10] = [
        BackendRole::Describe,
        BackendRole::Stylize,
        BackendRole::Variation,
        BackendRole::PoseAgent,
        BackendRole::KeypointAgent,
        BackendRole::GarmentAgent,
        BackendRole::IdentityPoseGen,
        BackendRole::SketchRefine,
        BackendRole::ImageToMesh,
        BackendRole::Poem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendRole::Describe => "DESCRIBE",
            BackendRole::Stylize => "STYLIZE",
            BackendRole::Variation => "VARIATION",
            BackendRole::PoseAgent => "POSE_AGENT",
            BackendRole::KeypointAgent => "KEYPOINT_AGENT",
            BackendRole::GarmentAgent => "GARMENT_AGENT",
            BackendRole::IdentityPoseGen => "IDENTITY_POSE_GEN",
            BackendRole::SketchRefine => "SKETCH_REFINE",
            BackendRole::ImageToMesh => "IMAGE_TO_MESH",
            BackendRole::Poem => "POEM",
        }
    }
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A value passed between stages.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Text(String),
    Image(RgbaImage),
    /// Wavefront OBJ text.
    Mesh(String),
    Pose(KeypointPose),
}

impl Artifact {
    pub fn kind(&self) -> &'static str {
        match self {
            Artifact::Text(_) => "text",
            Artifact::Image(_) => "image",
            Artifact::Mesh(_) => "mesh",
            Artifact::Pose(_) => "pose",
        }
    }

    /// Content digest. Images hash their raw RGBA buffer and dimensions, not
    /// an encoding, so the digest does not depend on the PNG encoder.
    pub fn digest(&self) -> String {
        match self {
            Artifact::Text(s) => sha256_parts([&b"text"[..], s.as_bytes()]),
            Artifact::Mesh(s) => sha256_parts([&b"mesh"[..], s.as_bytes()]),
            Artifact::Image(img) => sha256_parts([
                &b"image"[..],
                &img.width().to_le_bytes(),
                &img.height().to_le_bytes(),
                img.as_raw(),
            ]),
            Artifact::Pose(p) => sha256_parts([&b"pose"[..], canonical_json(p).as_bytes()]),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Artifact::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_image(&self) -> Option<&RgbaImage> {
        match self {
            Artifact::Image(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_pose(&self) -> Option<&KeypointPose> {
        match self {
            Artifact::Pose(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_mesh(&self) -> Option<&str> {
        match self {
            Artifact::Mesh(m) => Some(m),
            _ => None,
        }
    }
}

/// JSON form used by the remote backend adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WireArtifact {
    Text {
        text: String,
    },
    Image {
        width: u32,
        height: u32,
        png_base64: String,
    },
    Mesh {
        obj: String,
    },
    Pose {
        keypoints: KeypointPose,
    },
}

impl From<&Artifact> for WireArtifact {
    fn from(a: &Artifact) -> Self {
        match a {
            Artifact::Text(text) => WireArtifact::Text { text: text.clone() },
            Artifact::Mesh(obj) => WireArtifact::Mesh { obj: obj.clone() },
            Artifact::Pose(p) => WireArtifact::Pose { keypoints: *p },
            Artifact::Image(img) => WireArtifact::Image {
                width: img.width(),
                height: img.height(),
                png_base64: base64::engine::general_purpose::STANDARD.encode(encode_png(img)),
            },
        }
    }
}

impl TryFrom<WireArtifact> for Artifact {
    type Error = String;

    fn try_from(w: WireArtifact) -> Result<Self, Self::Error> {
        Ok(match w {
            WireArtifact::Text { text } => Artifact::Text(text),
            WireArtifact::Mesh { obj } => Artifact::Mesh(obj),
            WireArtifact::Pose { keypoints } => Artifact::Pose(keypoints),
            WireArtifact::Image { png_base64, .. } => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(png_base64)
                    .map_err(|e| e.to_string())?;
                let img = image::load_from_memory(&bytes).map_err(|e| e.to_string())?;
                Artifact::Image(img.to_rgba8())
            }
        })
    }
}

impl Serialize for Artifact {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WireArtifact::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Artifact {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        WireArtifact::deserialize(d)?
            .try_into()
            .map_err(serde::de::Error::custom)
    }
}

/// Named inputs plus free-form parameters for one stage call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageInputs {
    pub inputs: BTreeMap<String, Artifact>,
    pub params: BTreeMap<String, Value>,
}

impl StageInputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, artifact: Artifact) -> Self {
        self.inputs.insert(name.to_string(), artifact);
        self
    }

    pub fn param(mut self, name: &str, value: impl Into<Value>) -> Self {
        self.params.insert(name.to_string(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&Artifact> {
        self.inputs.get(name)
    }

    pub fn param_u32(&self, name: &str) -> Option<u32> {
        self.params.get(name)?.as_u64().map(|v| v as u32)
    }

    /// `name:digest` for every input, in name order, followed by the digest
    /// of the canonical parameters.
    pub fn input_digests(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .inputs
            .iter()
            .map(|(name, a)| format!("{name}:{}", a.digest()))
            .collect();
        if !self.params.is_empty() {
            out.push(format!(
                "params:{}",
                sha256_parts([canonical_json(&self.params).as_bytes()])
            ));
        }
        out
    }

    /// One digest over role and all inputs.
    pub fn digest_for(&self, role: BackendRole) -> String {
        let digests = self.input_digests();
        sha256_parts(
            std::iter::once(role.as_str().as_bytes()).chain(digests.iter().map(|d| d.as_bytes())),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub artifact: Artifact,
    pub latency_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{class:?} backend error: {message}")]
pub struct BackendError {
    pub class: ErrorClass,
    pub message: String,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Transient,
            message: message.into(),
        }
    }

    pub fn permanent(message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Permanent,
            message: message.into(),
        }
    }
}

/// A model endpoint. Implementations must tolerate concurrent calls.
pub trait ModelBackend: Send + Sync {
    fn id(&self) -> String;
    fn invoke(&self, role: BackendRole, inputs: &StageInputs) -> Result<StageOutput, BackendError>;
}

/// Role-to-backend bindings for one show.
#[derive(Clone, Default)]
pub struct BackendSet {
    bindings: HashMap<BackendRole, Arc<dyn ModelBackend>>,
}

impl fmt::Debug for BackendSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut roles: Vec<_> = self.bindings.keys().collect();
        roles.sort();
        f.debug_struct("BackendSet").field("roles", &roles).finish()
    }
}

impl BackendSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Binds one backend to every role.
    pub fn all(backend: Arc<dyn ModelBackend>) -> Self {
        let mut set = Self::new();
        for role in BackendRole::ALL {
            set.bind(role, backend.clone());
        }
        set
    }

    pub fn bind(&mut self, role: BackendRole, backend: Arc<dyn ModelBackend>) -> &mut Self {
        self.bindings.insert(role, backend);
        self
    }

    pub fn with(mut self, role: BackendRole, backend: Arc<dyn ModelBackend>) -> Self {
        self.bind(role, backend);
        self
    }

    pub fn get(&self, role: BackendRole) -> Option<&Arc<dyn ModelBackend>> {
        self.bindings.get(&role)
    }
}
