//! The 18-keypoint body skeleton shared by pose generation and choreography
//! scoring. Joint order follows the common OpenPose/COCO-18 layout.

use serde::{Deserialize, Serialize};

pub const KEYPOINT_COUNT: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(usize)]
pub enum Joint {
    Nose = 0,
    Neck,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightHip,
    RightKnee,
    RightAnkle,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    RightEye,
    LeftEye,
    RightEar,
    LeftEar,
}

impl Joint {
    pub const ALL: [Joint; KEYPOINT_COUNT] = [
        Joint::Nose,
        Joint::Neck,
        Joint::RightShoulder,
        Joint::RightElbow,
        Joint::RightWrist,
        Joint::LeftShoulder,
        Joint::LeftElbow,
        Joint::LeftWrist,
        Joint::RightHip,
        Joint::RightKnee,
        Joint::RightAnkle,
        Joint::LeftHip,
        Joint::LeftKnee,
        Joint::LeftAnkle,
        Joint::RightEye,
        Joint::LeftEye,
        Joint::RightEar,
        Joint::LeftEar,
    ];

    pub fn idx(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        JOINT_NAMES[self.idx()]
    }
}

pub const JOINT_NAMES: [&str; KEYPOINT_COUNT] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

/// One keypoint: position in normalized image coordinates plus detector
/// confidence. Serialized as `[x, y, c]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub c: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64, c: f64) -> Self {
        Self { x, y, c }
    }

    pub fn dist(&self, other: &Keypoint) -> f64 {
        len2(self.x - other.x, self.y - other.y)
    }

    pub fn dist_sq(&self, other: &Keypoint) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }
}

impl From<[f64; 3]> for Keypoint {
    fn from([x, y, c]: [f64; 3]) -> Self {
        Self { x, y, c }
    }
}

impl From<Keypoint> for [f64; 3] {
    fn from(k: Keypoint) -> Self {
        [k.x, k.y, k.c]
    }
}

/// Euclidean length of `(dx, dy)`. Plain `sqrt` rather than `hypot`: it is
/// correctly rounded everywhere, which keeps replays bit-identical across
/// platforms and build profiles.
pub fn len2(dx: f64, dy: f64) -> f64 {
    (dx * dx + dy * dy).sqrt()
}

/// A full 18-joint pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointPose {
    pub keypoints: [Keypoint; KEYPOINT_COUNT],
}

impl KeypointPose {
    pub fn new(keypoints: [Keypoint; KEYPOINT_COUNT]) -> Self {
        Self { keypoints }
    }

    pub fn get(&self, j: Joint) -> Keypoint {
        self.keypoints[j.idx()]
    }

    pub fn set(&mut self, j: Joint, k: Keypoint) {
        self.keypoints[j.idx()] = k;
    }

    pub fn is_finite(&self) -> bool {
        self.keypoints
            .iter()
            .all(|k| k.x.is_finite() && k.y.is_finite() && k.c.is_finite())
    }

    /// Midpoint of the two hips, the lower end of the torso.
    pub fn mid_hip(&self) -> (f64, f64) {
        let (r, l) = (self.get(Joint::RightHip), self.get(Joint::LeftHip));
        ((r.x + l.x) / 2.0, (r.y + l.y) / 2.0)
    }

    /// Neck to mid-hip distance.
    pub fn torso_length(&self) -> f64 {
        let n = self.get(Joint::Neck);
        let (mx, my) = self.mid_hip();
        len2(n.x - mx, n.y - my)
    }

    /// Axis-aligned bounding box `(min_x, min_y, max_x, max_y)` of the
    /// keypoints with confidence above zero.
    pub fn visible_bbox(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self.keypoints.iter().filter(|k| k.c > 0.0);
        let first = it.next()?;
        Some(it.fold(
            (first.x, first.y, first.x, first.y),
            |(x0, y0, x1, y1), k| (x0.min(k.x), y0.min(k.y), x1.max(k.x), y1.max(k.y)),
        ))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = *self;
        for k in &mut out.keypoints {
            k.x += dx;
            k.y += dy;
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        for k in &mut out.keypoints {
            k.x *= factor;
            k.y *= factor;
        }
        out
    }
}

/// A standing figure at canonical proportions, facing the viewer, roughly
/// centred in the unit square. Image y grows downwards.
pub fn canonical_standing_pose() -> KeypointPose {
    use Joint::*;
    let mut kp = [Keypoint::default(); KEYPOINT_COUNT];
    let mut put = |j: Joint, x: f64, y: f64| kp[j.idx()] = Keypoint::new(x, y, 1.0);
    // torso length 0.25; the other offsets are ratio · 0.25 along each limb
    put(Neck, 0.5, 0.25);
    put(Nose, 0.5, 0.18);
    put(RightEye, 0.484, 0.168);
    put(LeftEye, 0.516, 0.168);
    put(RightEar, 0.449, 0.168);
    put(LeftEar, 0.551, 0.168);
    put(RightShoulder, 0.40, 0.25);
    put(RightElbow, 0.40, 0.40);
    put(RightWrist, 0.40, 0.525);
    put(LeftShoulder, 0.60, 0.25);
    put(LeftElbow, 0.60, 0.40);
    put(LeftWrist, 0.60, 0.525);
    put(RightHip, 0.425, 0.50);
    put(RightKnee, 0.425, 0.69);
    put(RightAnkle, 0.425, 0.88);
    put(LeftHip, 0.575, 0.50);
    put(LeftKnee, 0.575, 0.69);
    put(LeftAnkle, 0.575, 0.88);
    KeypointPose::new(kp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keypoints_serialize_as_triples() {
        let k = Keypoint::new(0.25, 0.5, 1.0);
        assert_eq!(serde_json::to_string(&k).unwrap(), "[0.25,0.5,1.0]");
        let pose = canonical_standing_pose();
        let json = serde_json::to_string(&pose).unwrap();
        let back: KeypointPose = serde_json::from_str(&json).unwrap();
        assert_eq!(back, pose);
        assert!(json.starts_with("[[0.5,0.18,1.0]"));
    }

    #[test]
    fn canonical_torso_is_a_quarter() {
        assert!((canonical_standing_pose().torso_length() - 0.25).abs() < 1e-12);
    }
}
