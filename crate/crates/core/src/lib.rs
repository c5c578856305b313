//! Show-control engine for a live generative performance: sketch intake,
//! queued generation pipelines, a moderation gate, choreography scoring and
//! the published show manifest.

pub mod clock;
pub mod digest;
pub mod ingest;
pub mod moderation;
pub mod oracle;
pub mod orchestrator;
pub mod pipelines;
pub mod show;
pub mod sink;
pub mod skeleton;

pub(crate) mod serde_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}
