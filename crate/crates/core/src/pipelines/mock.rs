//! Deterministic stand-in for every model role.
//!
//! Outputs depend only on the role and the digest of the inputs: text roles
//! emit tagged pseudo-text, image roles a gradient of the requested size
//! coloured by the digest, the mesh role a unit cube stamped with the digest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::Millis;
use crate::digest::{digest_seed, sha256_parts};
use crate::skeleton::{canonical_standing_pose, Joint, Keypoint};

use super::backend::{Artifact, BackendError, BackendRole, ModelBackend, StageInputs, StageOutput};
use super::imaging::{digest_gradient, INTERMEDIATE_HEIGHT, INTERMEDIATE_WIDTH};
use super::mesh::unit_cube_obj;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySpec {
    pub min_ms: Millis,
    pub max_ms: Millis,
}

impl LatencySpec {
    pub const fn fixed(ms: Millis) -> Self {
        Self {
            min_ms: ms,
            max_ms: ms,
        }
    }

    pub const fn range(min_ms: Millis, max_ms: Millis) -> Self {
        Self { min_ms, max_ms }
    }

    fn pick(&self, seed: u64) -> Millis {
        let span = self.max_ms.saturating_sub(self.min_ms) + 1;
        self.min_ms + seed % span
    }
}

/// Declared latency per role. The defaults put whole pipelines in the
/// production bands: background and object tasks 20–30 s, pose task 40–60 s.
pub fn default_latencies() -> BTreeMap<BackendRole, LatencySpec> {
    use BackendRole::*;
    BTreeMap::from([
        (Describe, LatencySpec::range(3_000, 5_000)),
        (Stylize, LatencySpec::range(9_000, 13_000)),
        (Variation, LatencySpec::range(8_000, 12_000)),
        (GarmentAgent, LatencySpec::range(4_000, 6_000)),
        (PoseAgent, LatencySpec::range(4_000, 6_000)),
        (KeypointAgent, LatencySpec::range(4_000, 6_000)),
        (IdentityPoseGen, LatencySpec::range(28_000, 42_000)),
        (SketchRefine, LatencySpec::range(5_000, 7_000)),
        (ImageToMesh, LatencySpec::range(4_000, 6_000)),
        (Poem, LatencySpec::range(2_000, 4_000)),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub latencies: BTreeMap<BackendRole, LatencySpec>,
    /// Pose descriptions whose input digest starts with a byte below this
    /// value are marked abstract, and their keypoints come back with low
    /// confidence. 0 disables, 256 makes every pose abstract.
    pub abstract_threshold: u16,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            latencies: default_latencies(),
            abstract_threshold: 32,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    config: MockConfig,
}

pub const ADJECTIVES: [&str; 10] = [
    "neon", "pastel", "glowing", "chrome", "misty", "golden", "marble", "electric", "velvet",
    "sunlit",
];

pub const NOUNS: [&str; 24] = [
    "palm", "column", "sunset", "grid", "roller", "skate", "lyre", "wave", "temple", "dolphin",
    "statue", "disco", "star", "cloud", "mountain", "laurel", "vase", "ribbon", "cassette", "arch",
    "ocean", "moon", "horse", "shell",
];

const GESTURES: [&str; 6] = [
    "reaching skyward",
    "mid-twirl",
    "striding forward",
    "arms akimbo",
    "leaning on a column",
    "kneeling",
];

fn pick<'a>(list: &[&'a str], digest: &str, slot: usize) -> &'a str {
    let seed = digest_seed(&sha256_parts([digest.as_bytes(), &slot.to_le_bytes()]));
    list[(seed % list.len() as u64) as usize]
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    fn latency(&self, role: BackendRole, digest: &str) -> Millis {
        self.config
            .latencies
            .get(&role)
            .map(|l| l.pick(digest_seed(&sha256_parts([b"latency", digest.as_bytes()]))))
            .unwrap_or(0)
    }

    fn image(inputs: &StageInputs, digest: &str, default: (u32, u32)) -> Artifact {
        let w = inputs.param_u32("width").unwrap_or(default.0);
        let h = inputs.param_u32("height").unwrap_or(default.1);
        Artifact::Image(digest_gradient(digest, w, h))
    }

    fn keypoints(inputs: &StageInputs, digest: &str) -> Artifact {
        let text = inputs
            .get("pose_text")
            .and_then(Artifact::as_text)
            .unwrap_or_default();
        let bytes = hex::decode(digest).unwrap_or_default();
        let mut pose = canonical_standing_pose();
        for (i, k) in pose.keypoints.iter_mut().enumerate() {
            let jx = (bytes[i % 32] as f64 / 255.0 - 0.5) * 0.04;
            let jy = (bytes[(i + 7) % 32] as f64 / 255.0 - 0.5) * 0.04;
            *k = Keypoint::new(
                k.x + jx,
                k.y + jy,
                0.6 + 0.4 * bytes[(i + 13) % 32] as f64 / 255.0,
            );
        }
        // raise one arm a little, keyed by the digest
        let lift = bytes[0] as f64 / 255.0 * 0.2;
        let mut w = pose.get(Joint::RightWrist);
        w.y -= lift;
        pose.set(Joint::RightWrist, w);
        if text.contains("abstract") {
            for k in pose.keypoints.iter_mut().take(10) {
                k.c = 0.05;
            }
        }
        Artifact::Pose(pose)
    }

    fn poem(inputs: &StageInputs, digest: &str) -> Artifact {
        let moves: Vec<String> = inputs
            .params
            .get("moves")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        let mut lines = vec![format!(
            "[POEM {}] From {} offerings the oracle wakes,",
            &digest[..8],
            pick(&ADJECTIVES, digest, 0)
        )];
        for (i, m) in moves.iter().enumerate() {
            lines.push(format!(
                "{} like the {} of a {} {},",
                m,
                pick(&["hush", "gleam", "pulse", "drift"], digest, i + 1),
                pick(&ADJECTIVES, digest, i + 10),
                pick(&NOUNS, digest, i + 20)
            ));
        }
        lines.push("and the auditorium rises where you move.".to_string());
        Artifact::Text(lines.join("\n"))
    }
}

impl ModelBackend for MockBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn invoke(&self, role: BackendRole, inputs: &StageInputs) -> Result<StageOutput, BackendError> {
        use BackendRole::*;
        let digest = inputs.digest_for(role);
        let tag = format!("[{} {}]", role, &digest[..8]);
        let artifact = match role {
            Describe => Artifact::Text(format!(
                "{tag} a {} {} beside a {} {} under a {} sky",
                pick(&ADJECTIVES, &digest, 0),
                pick(&NOUNS, &digest, 1),
                pick(&ADJECTIVES, &digest, 2),
                pick(&NOUNS, &digest, 3),
                pick(&ADJECTIVES, &digest, 4),
            )),
            GarmentAgent => Artifact::Text(format!(
                "{tag} a flowing {} gown with {} motifs and {} trim",
                pick(&ADJECTIVES, &digest, 0),
                pick(&NOUNS, &digest, 1),
                pick(&ADJECTIVES, &digest, 2),
            )),
            PoseAgent => {
                let mut text = format!("{tag} a figure {}", pick(&GESTURES, &digest, 0));
                let first = u16::from(hex::decode(&digest[..2]).unwrap_or_default()[0]);
                if first < self.config.abstract_threshold {
                    text.push_str(", abstract");
                }
                Artifact::Text(text)
            }
            KeypointAgent => Self::keypoints(inputs, &digest),
            Stylize => Self::image(inputs, &digest, (INTERMEDIATE_WIDTH, INTERMEDIATE_HEIGHT)),
            Variation => Self::image(inputs, &digest, (1024, 768)),
            SketchRefine => Self::image(inputs, &digest, (512, 512)),
            IdentityPoseGen => Self::image(inputs, &digest, (512, 768)),
            ImageToMesh => Artifact::Mesh(unit_cube_obj(&digest)),
            Poem => Self::poem(inputs, &digest),
        };
        Ok(StageOutput {
            artifact,
            latency_ms: self.latency(role, &digest),
        })
    }
}

/// Wraps a backend and fails the listed roles with a fixed error.
pub struct FailingBackend<B> {
    pub inner: B,
    pub roles: Vec<BackendRole>,
    pub error: BackendError,
}

impl<B: ModelBackend> ModelBackend for FailingBackend<B> {
    fn id(&self) -> String {
        format!("failing({})", self.inner.id())
    }

    fn invoke(&self, role: BackendRole, inputs: &StageInputs) -> Result<StageOutput, BackendError> {
        if self.roles.contains(&role) {
            return Err(self.error.clone());
        }
        self.inner.invoke(role, inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synthetic_sketch;
    use crate::pipelines::imaging::INTERMEDIATE_WIDTH;

    fn sketch_input(seed: u64) -> StageInputs {
        let png = synthetic_sketch(seed, 48, 36);
        let img = image::load_from_memory(&png).unwrap().to_rgba8();
        StageInputs::new().with("sketch", Artifact::Image(img))
    }

    #[test]
    fn same_inputs_same_bytes() {
        let m = MockBackend::default();
        for role in BackendRole::ALL {
            let inputs = sketch_input(1).param("width", 64).param("height", 48);
            let a = m.invoke(role, &inputs).unwrap();
            let b = m.invoke(role, &inputs).unwrap();
            assert_eq!(a, b, "{role}");
        }
    }

    #[test]
    fn stylize_defaults_to_intermediate_size() {
        let out = MockBackend::default()
            .invoke(BackendRole::Stylize, &sketch_input(2))
            .unwrap();
        let img = out.artifact.as_image().unwrap();
        assert_eq!(img.dimensions(), (INTERMEDIATE_WIDTH, 384));
    }

    #[test]
    fn distinct_sketches_give_distinct_digests() {
        use std::collections::HashSet;
        let m = MockBackend::default();
        let mut seen = HashSet::new();
        for seed in 0..1000 {
            let out = m
                .invoke(BackendRole::Describe, &sketch_input(seed))
                .unwrap();
            assert!(
                seen.insert(out.artifact.digest()),
                "collision at seed {seed}"
            );
        }
    }

    #[test]
    fn latency_stays_in_declared_range() {
        let m = MockBackend::default();
        for seed in 0..50 {
            let out = m.invoke(BackendRole::Stylize, &sketch_input(seed)).unwrap();
            assert!((9_000..=13_000).contains(&out.latency_ms));
        }
    }

    #[test]
    fn mesh_role_emits_stamped_cube() {
        let out = MockBackend::default()
            .invoke(BackendRole::ImageToMesh, &sketch_input(3))
            .unwrap();
        let obj = out.artifact.as_mesh().unwrap();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 8);
        assert!(obj.starts_with("# mock mesh"));
    }
}
