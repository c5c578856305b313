//! Keypoint post-processing for the pose task: proportion correction against
//! a canonical figure and the validity test that decides when to fall back to
//! the pose library.

use serde::{Deserialize, Serialize};

use crate::skeleton::{canonical_standing_pose, len2, Joint, KeypointPose, KEYPOINT_COUNT};

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limb {
    Head,
    Eye,
    Ear,
    Shoulder,
    UpperArm,
    Forearm,
    HipWidth,
    Thigh,
    Shin,
}

/// Limb lengths as multiples of torso length (neck to mid-hip).
///
/// Defaults follow a 7.5-head figure with the torso spanning 2.5 heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimbRatioTable {
    pub head: f64,
    pub eye: f64,
    pub ear: f64,
    pub shoulder: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub hip_width: f64,
    pub thigh: f64,
    pub shin: f64,
}

impl Default for LimbRatioTable {
    fn default() -> Self {
        Self {
            head: 0.28,
            eye: 0.08,
            ear: 0.14,
            shoulder: 0.40,
            upper_arm: 0.60,
            forearm: 0.50,
            hip_width: 0.60,
            thigh: 0.76,
            shin: 0.76,
        }
    }
}

impl LimbRatioTable {
    pub fn ratio(&self, limb: Limb) -> f64 {
        match limb {
            Limb::Head => self.head,
            Limb::Eye => self.eye,
            Limb::Ear => self.ear,
            Limb::Shoulder => self.shoulder,
            Limb::UpperArm => self.upper_arm,
            Limb::Forearm => self.forearm,
            Limb::HipWidth => self.hip_width,
            Limb::Thigh => self.thigh,
            Limb::Shin => self.shin,
        }
    }
}

/// Parent-to-child segments hanging off the torso, in an order where every
/// parent is placed before its children. Hip width is handled separately
/// because it is measured about the mid-hip.
pub const CHAIN_SEGMENTS: [(Joint, Joint, Limb); 15] = [
    (Joint::Neck, Joint::Nose, Limb::Head),
    (Joint::Nose, Joint::RightEye, Limb::Eye),
    (Joint::Nose, Joint::LeftEye, Limb::Eye),
    (Joint::RightEye, Joint::RightEar, Limb::Ear),
    (Joint::LeftEye, Joint::LeftEar, Limb::Ear),
    (Joint::Neck, Joint::RightShoulder, Limb::Shoulder),
    (Joint::RightShoulder, Joint::RightElbow, Limb::UpperArm),
    (Joint::RightElbow, Joint::RightWrist, Limb::Forearm),
    (Joint::Neck, Joint::LeftShoulder, Limb::Shoulder),
    (Joint::LeftShoulder, Joint::LeftElbow, Limb::UpperArm),
    (Joint::LeftElbow, Joint::LeftWrist, Limb::Forearm),
    (Joint::RightHip, Joint::RightKnee, Limb::Thigh),
    (Joint::RightKnee, Joint::RightAnkle, Limb::Shin),
    (Joint::LeftHip, Joint::LeftKnee, Limb::Thigh),
    (Joint::LeftKnee, Joint::LeftAnkle, Limb::Shin),
];

/// Every measured segment, for validity checks.
pub fn all_segments() -> impl Iterator<Item = (Joint, Joint, Limb)> {
    std::iter::once((Joint::RightHip, Joint::LeftHip, Limb::HipWidth)).chain(CHAIN_SEGMENTS)
}

/// Current length of each segment divided by torso length.
pub fn segment_ratios(pose: &KeypointPose) -> Option<Vec<(Limb, f64)>> {
    let torso = pose.torso_length();
    if !(torso > 0.0) {
        return None;
    }
    Some(
        all_segments()
            .map(|(a, b, limb)| (limb, pose.get(a).dist(&pose.get(b)) / torso))
            .collect(),
    )
}

/// Rescales every limb about its proximal joint to the canonical ratio,
/// keeping limb directions. Children follow their parent, so connectivity is
/// preserved; the neck and mid-hip do not move. A zero-length limb takes the
/// direction it has in the canonical standing figure.
pub fn normalize_proportions(
    pose: &KeypointPose,
    table: &LimbRatioTable,
) -> Result<KeypointPose, PipelineError> {
    if !pose.is_finite() {
        return Err(PipelineError::DegeneratePose);
    }
    let torso = pose.torso_length();
    if !(torso > 0.0) {
        return Err(PipelineError::DegeneratePose);
    }
    let reference = canonical_standing_pose();
    let mut out = *pose;

    let (mx, my) = pose.mid_hip();
    let r = pose.get(Joint::RightHip);
    let (mut ux, mut uy) = (r.x - mx, r.y - my);
    let half = len2(ux, uy);
    if half > 0.0 {
        ux /= half;
        uy /= half;
    } else {
        ux = -1.0;
        uy = 0.0;
    }
    let target_half = table.hip_width * torso / 2.0;
    let mut rh = out.get(Joint::RightHip);
    let mut lh = out.get(Joint::LeftHip);
    rh.x = mx + ux * target_half;
    rh.y = my + uy * target_half;
    lh.x = mx - ux * target_half;
    lh.y = my - uy * target_half;
    out.set(Joint::RightHip, rh);
    out.set(Joint::LeftHip, lh);

    for (parent, child, limb) in CHAIN_SEGMENTS {
        let (p_old, c_old) = (pose.get(parent), pose.get(child));
        let (mut dx, mut dy) = (c_old.x - p_old.x, c_old.y - p_old.y);
        let len = len2(dx, dy);
        if len > 0.0 {
            dx /= len;
            dy /= len;
        } else {
            let (p_ref, c_ref) = (reference.get(parent), reference.get(child));
            let (rx, ry) = (c_ref.x - p_ref.x, c_ref.y - p_ref.y);
            let rl = len2(rx, ry);
            dx = rx / rl;
            dy = ry / rl;
        }
        let target = table.ratio(limb) * torso;
        let p_new = out.get(parent);
        let mut c_new = out.get(child);
        c_new.x = p_new.x + dx * target;
        c_new.y = p_new.y + dy * target;
        out.set(child, c_new);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidityConfig {
    pub min_confident_keypoints: usize,
    pub min_confidence: f64,
    pub min_ratio_factor: f64,
    pub max_ratio_factor: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self {
            min_confident_keypoints: 12,
            min_confidence: 0.3,
            min_ratio_factor: 0.25,
            max_ratio_factor: 4.0,
        }
    }
}

pub fn passes_confidence_rule(pose: &KeypointPose, cfg: &ValidityConfig) -> bool {
    pose.keypoints
        .iter()
        .filter(|k| k.c >= cfg.min_confidence)
        .count()
        >= cfg.min_confident_keypoints
}

/// Whether a generated pose is usable, or too abstract and should be
/// replaced from the pose library.
pub fn pose_validity(pose: &KeypointPose, table: &LimbRatioTable, cfg: &ValidityConfig) -> bool {
    if !pose.is_finite() || !passes_confidence_rule(pose, cfg) {
        return false;
    }
    let Some(ratios) = segment_ratios(pose) else {
        return false;
    };
    let ratios_ok = ratios.iter().all(|&(limb, r)| {
        let canon = table.ratio(limb);
        r >= cfg.min_ratio_factor * canon && r <= cfg.max_ratio_factor * canon
    });
    if !ratios_ok {
        return false;
    }
    for i in 0..KEYPOINT_COUNT {
        for j in (i + 1)..KEYPOINT_COUNT {
            let (a, b) = (pose.keypoints[i], pose.keypoints[j]);
            if a.x == b.x && a.y == b.y {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Keypoint;
    use proptest::prelude::*;

    fn table() -> LimbRatioTable {
        LimbRatioTable::default()
    }

    #[test]
    fn canonical_pose_matches_the_table() {
        let ratios = segment_ratios(&canonical_standing_pose()).unwrap();
        for (limb, r) in ratios {
            assert!((r - table().ratio(limb)).abs() < 1e-9, "{limb:?}: {r}");
        }
    }

    #[test]
    fn canonical_pose_is_a_fixed_point() {
        let p = canonical_standing_pose();
        let n = normalize_proportions(&p, &table()).unwrap();
        for (a, b) in p.keypoints.iter().zip(n.keypoints.iter()) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
        }
    }

    #[test]
    fn doubled_arm_is_restored_to_canonical_length() {
        let mut p = canonical_standing_pose();
        // stretch the right upper arm to twice its canonical length; the
        // forearm moves with the elbow
        let s = p.get(Joint::RightShoulder);
        let e = p.get(Joint::RightElbow);
        let w = p.get(Joint::RightWrist);
        let (dx, dy) = (e.x - s.x, e.y - s.y);
        p.set(
            Joint::RightElbow,
            Keypoint::new(s.x + 2.0 * dx, s.y + 2.0 * dy, 1.0),
        );
        p.set(Joint::RightWrist, Keypoint::new(w.x + dx, w.y + dy, 1.0));

        let n = normalize_proportions(&p, &table()).unwrap();
        // recompute straight from coordinates
        let torso = {
            let neck = n.get(Joint::Neck);
            let (rh, lh) = (n.get(Joint::RightHip), n.get(Joint::LeftHip));
            let (mx, my) = ((rh.x + lh.x) / 2.0, (rh.y + lh.y) / 2.0);
            len2(neck.x - mx, neck.y - my)
        };
        let (s2, e2, w2) = (
            n.get(Joint::RightShoulder),
            n.get(Joint::RightElbow),
            n.get(Joint::RightWrist),
        );
        let upper = len2(e2.x - s2.x, e2.y - s2.y);
        let fore = len2(w2.x - e2.x, w2.y - e2.y);
        assert!((upper - 0.60 * torso).abs() < 1e-12);
        assert!((fore - 0.50 * torso).abs() < 1e-12);
        // direction of the upper arm is kept
        assert!((e2.x - s2.x).abs() < 1e-12 && e2.y > s2.y);
    }

    #[test]
    fn coincident_keypoints_are_degenerate() {
        let pose = KeypointPose::new([Keypoint::new(0.3, 0.3, 1.0); 18]);
        assert_eq!(
            normalize_proportions(&pose, &table()),
            Err(PipelineError::DegeneratePose)
        );
    }

    #[test]
    fn canonical_pose_is_valid() {
        assert!(pose_validity(
            &canonical_standing_pose(),
            &table(),
            &ValidityConfig::default()
        ));
    }

    #[test]
    fn ten_blind_keypoints_fail_the_count_rule() {
        let mut p = canonical_standing_pose();
        for k in p.keypoints.iter_mut().take(10) {
            k.c = 0.0;
        }
        assert!(!pose_validity(&p, &table(), &ValidityConfig::default()));
    }

    #[test]
    fn leg_ten_torsos_long_fails_the_ratio_rule() {
        let mut p = canonical_standing_pose();
        let hip = p.get(Joint::RightHip);
        let torso = p.torso_length();
        let knee_y = hip.y + 10.0 * torso;
        p.set(Joint::RightKnee, Keypoint::new(hip.x, knee_y, 1.0));
        p.set(Joint::RightAnkle, Keypoint::new(hip.x, knee_y + 0.19, 1.0));
        assert!(!pose_validity(&p, &table(), &ValidityConfig::default()));
    }

    #[test]
    fn coincident_joints_are_invalid() {
        let mut p = canonical_standing_pose();
        let w = p.get(Joint::LeftWrist);
        p.set(Joint::RightWrist, w);
        assert!(!pose_validity(&p, &table(), &ValidityConfig::default()));
    }

    fn arb_pose() -> impl Strategy<Value = KeypointPose> {
        proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 18).prop_map(|v| {
            let mut kp = [Keypoint::default(); 18];
            for (k, (x, y, c)) in kp.iter_mut().zip(v) {
                *k = Keypoint::new(x, y, c);
            }
            KeypointPose::new(kp)
        })
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(p in arb_pose()) {
            if let Ok(once) = normalize_proportions(&p, &table()) {
                let twice = normalize_proportions(&once, &table()).unwrap();
                for (a, b) in once.keypoints.iter().zip(twice.keypoints.iter()) {
                    prop_assert!((a.x - b.x).abs() <= 1e-9 && (a.y - b.y).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn normalization_only_fixes_ratios(p in arb_pose()) {
            let cfg = ValidityConfig::default();
            if passes_confidence_rule(&p, &cfg) {
                if let Ok(n) = normalize_proportions(&p, &table()) {
                    prop_assert!(pose_validity(&n, &table(), &cfg));
                }
            }
        }
    }
}
