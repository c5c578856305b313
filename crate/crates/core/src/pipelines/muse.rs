//! Per-muse configuration: palette, reference artwork, frieze, fallback media
//! and the fallback pose library.
//!
//! Image references are either file paths (PNG, relative to the profile
//! file) or `builtin:<name>`, which resolves to procedural artwork drawn
//! from the muse palette.

use std::path::{Path, PathBuf};

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use crate::skeleton::{canonical_standing_pose, Joint, KeypointPose};

use super::imaging::{palette_gradient, parse_hex_color, silhouette};
use super::pose::{normalize_proportions, LimbRatioTable};
use super::PipelineError;

pub const STYLE_REF_SIZE: (u32, u32) = (64, 48);
pub const GARMENT_REF_SIZE: (u32, u32) = (48, 96);
pub const FRIEZE_SIZE: (u32, u32) = (256, 96);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuseProfile {
    pub muse_id: u8,
    pub name: String,
    pub palette: Vec<String>,
    #[serde(default)]
    pub style_ref: String,
    #[serde(default)]
    pub garment_ref: String,
    #[serde(default)]
    pub frieze: String,
    #[serde(default)]
    pub fallback_asset: String,
    #[serde(default)]
    pub pose_library: Vec<KeypointPose>,
}

impl MuseProfile {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::AssetLoad {
            reference: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::AssetLoad {
            reference: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Id under which this muse's fallback media is published.
    pub fn fallback_asset_id(&self) -> String {
        format!("fallback-muse-{}", self.muse_id)
    }

    fn primary_color(&self) -> [u8; 3] {
        self.palette
            .first()
            .and_then(|c| parse_hex_color(c))
            .unwrap_or([200, 200, 200])
    }

    fn resolve(
        &self,
        reference: &str,
        base: Option<&Path>,
        size: (u32, u32),
        figure: bool,
    ) -> Result<Option<RgbaImage>, PipelineError> {
        if reference.is_empty() {
            return Ok(None);
        }
        if reference.starts_with("builtin:") {
            let img = if figure {
                silhouette(size.0, size.1, self.primary_color())
            } else {
                palette_gradient(&self.palette, size.0, size.1)
            };
            return Ok(Some(img));
        }
        let path = match base {
            Some(dir) => dir.join(reference),
            None => PathBuf::from(reference),
        };
        image::open(&path)
            .map(|img| Some(img.to_rgba8()))
            .map_err(|e| PipelineError::AssetLoad {
                reference: path.display().to_string(),
                message: e.to_string(),
            })
    }

    /// Loads every referenced image. A missing style reference is kept as
    /// `None` so the tasks that need it can report it.
    pub fn resolve_media(
        &self,
        base: Option<&Path>,
        fallback_size: (u32, u32),
    ) -> Result<MuseMedia, PipelineError> {
        let style_ref = self.resolve(&self.style_ref, base, STYLE_REF_SIZE, false)?;
        let garment_ref = self
            .resolve(&self.garment_ref, base, GARMENT_REF_SIZE, true)?
            .unwrap_or_else(|| {
                silhouette(GARMENT_REF_SIZE.0, GARMENT_REF_SIZE.1, self.primary_color())
            });
        let frieze = self
            .resolve(&self.frieze, base, FRIEZE_SIZE, true)?
            .unwrap_or_else(|| silhouette(FRIEZE_SIZE.0, FRIEZE_SIZE.1, self.primary_color()));
        let fallback = self
            .resolve(&self.fallback_asset, base, fallback_size, false)?
            .unwrap_or_else(|| palette_gradient(&self.palette, fallback_size.0, fallback_size.1));
        Ok(MuseMedia {
            profile: self.clone(),
            style_ref,
            garment_ref,
            frieze,
            fallback,
        })
    }
}

/// A profile with its artwork loaded.
#[derive(Debug, Clone)]
pub struct MuseMedia {
    pub profile: MuseProfile,
    pub style_ref: Option<RgbaImage>,
    pub garment_ref: RgbaImage,
    pub frieze: RgbaImage,
    pub fallback: RgbaImage,
}

const DEFAULT_MUSES: [(&str, [&str; 3]); 7] = [
    ("Calliope", ["#f2b134", "#ef5b5b", "#2b193d"]),
    ("Clio", ["#3ec1d3", "#f6f7d7", "#ff165d"]),
    ("Erato", ["#ff9a8b", "#ff6a88", "#ff99ac"]),
    ("Euterpe", ["#08d9d6", "#252a34", "#ff2e63"]),
    ("Melpomene", ["#6a2c70", "#b83b5e", "#f08a5d"]),
    ("Terpsichore", ["#f9ed69", "#f08a5d", "#b83b5e"]),
    ("Thalia", ["#a8e6cf", "#dcedc1", "#ffd3b6"]),
];

/// Three hand-posed figures normalized to canonical proportions.
pub fn default_pose_library() -> Vec<KeypointPose> {
    let table = LimbRatioTable::default();
    let base = canonical_standing_pose();
    let mut raised = base;
    for (j, dx, dy) in [
        (Joint::RightElbow, -0.05, -0.14),
        (Joint::RightWrist, -0.06, -0.27),
        (Joint::LeftElbow, 0.05, -0.14),
        (Joint::LeftWrist, 0.06, -0.27),
    ] {
        let s = if matches!(j, Joint::RightElbow | Joint::RightWrist) {
            base.get(Joint::RightShoulder)
        } else {
            base.get(Joint::LeftShoulder)
        };
        let mut k = raised.get(j);
        k.x = s.x + dx;
        k.y = s.y + dy;
        raised.set(j, k);
    }
    let mut stride = base;
    for (j, x, y) in [
        (Joint::RightKnee, 0.36, 0.67),
        (Joint::RightAnkle, 0.31, 0.85),
        (Joint::LeftWrist, 0.72, 0.45),
    ] {
        let mut k = stride.get(j);
        k.x = x;
        k.y = y;
        stride.set(j, k);
    }
    [base, raised, stride]
        .iter()
        .map(|p| normalize_proportions(p, &table).expect("hand-posed figures are well formed"))
        .collect()
}

/// The seven muses with builtin artwork.
pub fn default_muses() -> Vec<MuseProfile> {
    DEFAULT_MUSES
        .iter()
        .enumerate()
        .map(|(i, (name, palette))| MuseProfile {
            muse_id: i as u8 + 1,
            name: name.to_string(),
            palette: palette.iter().map(|s| s.to_string()).collect(),
            style_ref: "builtin:style".into(),
            garment_ref: "builtin:garment".into(),
            frieze: "builtin:frieze".into(),
            fallback_asset: "builtin:fallback".into(),
            pose_library: default_pose_library(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipelines::pose::{pose_validity, ValidityConfig};

    #[test]
    fn library_poses_are_valid() {
        let lib = default_pose_library();
        assert_eq!(lib.len(), 3);
        for p in &lib {
            assert!(pose_validity(
                p,
                &LimbRatioTable::default(),
                &ValidityConfig::default()
            ));
        }
    }

    #[test]
    fn seven_distinct_muses() {
        let muses = default_muses();
        assert_eq!(muses.len(), 7);
        let ids: Vec<u8> = muses.iter().map(|m| m.muse_id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn profile_roundtrips_through_json() {
        let m = &default_muses()[2];
        let json = serde_json::to_string(m).unwrap();
        let back: MuseProfile = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, m);
    }

    #[test]
    fn builtin_media_resolves_and_missing_file_errors() {
        let m = &default_muses()[0];
        let media = m.resolve_media(None, (64, 48)).unwrap();
        assert_eq!(media.frieze.dimensions(), FRIEZE_SIZE);
        assert!(media.style_ref.is_some());

        let mut bad = m.clone();
        bad.frieze = "/nonexistent/frieze.png".into();
        assert!(matches!(
            bad.resolve_media(None, (64, 48)),
            Err(PipelineError::AssetLoad { .. })
        ));

        let mut no_style = m.clone();
        no_style.style_ref.clear();
        assert!(no_style
            .resolve_media(None, (64, 48))
            .unwrap()
            .style_ref
            .is_none());
    }
}
