//! Frame similarity, sequence alignment and movement energy.

use serde::{Deserialize, Serialize};

use crate::skeleton::KEYPOINT_COUNT;

use super::sequence::{PoseFrame, PoseSequence};
use super::OracleError;

/// Per-keypoint falloff constants in skeleton order. The body joints use
/// twice the usual COCO per-keypoint sigmas; the neck, absent from COCO,
/// gets 0.08.
pub const DEFAULT_KEYPOINT_K: [f64; KEYPOINT_COUNT] = [
    0.052, // nose
    0.080, // neck
    0.158, 0.144, 0.124, // right shoulder, elbow, wrist
    0.158, 0.144, 0.124, // left shoulder, elbow, wrist
    0.214, 0.174, 0.178, // right hip, knee, ankle
    0.214, 0.174, 0.178, // left hip, knee, ankle
    0.050, 0.050, // eyes
    0.070, 0.070, // ears
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OksParams {
    pub k: [f64; KEYPOINT_COUNT],
}

impl Default for OksParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_KEYPOINT_K,
        }
    }
}

/// Object scale of a reference frame: the square root of its visible
/// keypoint bounding-box area.
pub fn reference_scale(reference: &PoseFrame) -> f64 {
    reference.bbox_area().sqrt()
}

/// Keypoint similarity with the scale taken from the reference frame.
pub fn oks(
    frame: &PoseFrame,
    reference: &PoseFrame,
    params: &OksParams,
) -> Result<f64, OracleError> {
    oks_with_scale(frame, reference, params, reference_scale(reference))
}

/// `Σ v_i exp(-d_i² / (2 s² k_i²)) / Σ v_i`, with `v_i` set where the
/// reference keypoint has positive confidence.
pub fn oks_with_scale(
    frame: &PoseFrame,
    reference: &PoseFrame,
    params: &OksParams,
    scale: f64,
) -> Result<f64, OracleError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(OracleError::InvalidScale(scale));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..KEYPOINT_COUNT {
        if !reference.visible(i) {
            continue;
        }
        let d2 = frame.keypoint(i).dist_sq(&reference.keypoint(i));
        let k = params.k[i];
        num += (-d2 / (2.0 * scale * scale * k * k)).exp();
        den += 1.0;
    }
    if den == 0.0 {
        return Err(OracleError::NoVisibleKeypoints);
    }
    Ok(num / den)
}

/// Mean distance over reference-visible keypoints divided by the reference
/// bounding-box diagonal.
pub fn frame_distance(frame: &PoseFrame, reference: &PoseFrame) -> Result<f64, OracleError> {
    let diag = reference.bbox_diagonal();
    if !(diag > 0.0) {
        return Err(OracleError::InvalidScale(diag));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..KEYPOINT_COUNT {
        if reference.visible(i) {
            sum += frame.keypoint(i).dist(&reference.keypoint(i));
            n += 1;
        }
    }
    if n == 0 {
        return Err(OracleError::NoVisibleKeypoints);
    }
    Ok(sum / n as f64 / diag)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub cost: f64,
    /// Optimal alignment from `(0, 0)` to `(n-1, m-1)`.
    pub path: Vec<(usize, usize)>,
}

impl DtwResult {
    pub fn normalized(&self) -> f64 {
        self.cost / self.path.len() as f64
    }
}

/// Full cost matrix of the standard recurrence, row-major `n × m`.
fn accumulate(
    n: usize,
    m: usize,
    cost: &mut dyn FnMut(usize, usize) -> Result<f64, OracleError>,
) -> Result<Vec<f64>, OracleError> {
    let mut d = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cost(i, j)?;
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 {
                    d[(i - 1) * m + j]
                } else {
                    f64::INFINITY
                };
                let left = if j > 0 {
                    d[i * m + j - 1]
                } else {
                    f64::INFINITY
                };
                let diag = if i > 0 && j > 0 {
                    d[(i - 1) * m + j - 1]
                } else {
                    f64::INFINITY
                };
                up.min(left).min(diag)
            };
            d[i * m + j] = c + best;
        }
    }
    Ok(d)
}

/// Alignment of two index ranges under an arbitrary local cost.
pub fn dtw_by(
    n: usize,
    m: usize,
    mut cost: impl FnMut(usize, usize) -> Result<f64, OracleError>,
) -> Result<DtwResult, OracleError> {
    if n == 0 || m == 0 {
        return Err(OracleError::EmptySequence);
    }
    let d = accumulate(n, m, &mut cost)?;
    // walk back, preferring the diagonal, then the row step, on ties
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            d[(i - 1) * m + j - 1]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 {
            d[(i - 1) * m + j]
        } else {
            f64::INFINITY
        };
        let left = if j > 0 {
            d[i * m + j - 1]
        } else {
            f64::INFINITY
        };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult {
        cost: d[n * m - 1],
        path,
    })
}

/// Dynamic time warping over scalar series with `|a - b|` as local cost.
pub fn dtw_scalar(a: &[f64], b: &[f64]) -> Result<DtwResult, OracleError> {
    dtw_by(a.len(), b.len(), |i, j| Ok((a[i] - b[j]).abs()))
}

/// Dynamic time warping of a performance against a reference using
/// [`frame_distance`].
pub fn dtw(seq: &PoseSequence, reference: &PoseSequence) -> Result<DtwResult, OracleError> {
    dtw_by(seq.len(), reference.len(), |i, j| {
        frame_distance(&seq.frames[i], &reference.frames[j])
    })
}

/// Mean joint speed over consecutive frames, counting joints visible in
/// both frames, divided by the mean bounding-box diagonal of the sequence.
pub fn energy(seq: &PoseSequence) -> Result<f64, OracleError> {
    if seq.len() < 2 {
        return Err(OracleError::TooFewFrames(seq.len()));
    }
    let mut speed_sum = 0.0;
    let mut samples = 0usize;
    for w in seq.frames.windows(2) {
        let dt = w[1].t_s - w[0].t_s;
        if !(dt > 0.0) {
            return Err(OracleError::NonIncreasingTime { index: 0 });
        }
        for i in 0..KEYPOINT_COUNT {
            if w[0].visible(i) && w[1].visible(i) {
                speed_sum += w[1].keypoint(i).dist(&w[0].keypoint(i)) / dt;
                samples += 1;
            }
        }
    }
    if samples == 0 {
        return Ok(0.0);
    }
    let diag = seq.frames.iter().map(PoseFrame::bbox_diagonal).sum::<f64>() / seq.len() as f64;
    if !(diag > 0.0) {
        return Err(OracleError::InvalidScale(diag));
    }
    Ok(speed_sum / samples as f64 / diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{canonical_standing_pose, Joint};
    use proptest::prelude::*;

    fn frame(t: f64) -> PoseFrame {
        PoseFrame::new(t, canonical_standing_pose())
    }

    /// Every monotone path from (0,0) to (n-1,m-1), summed by brute force.
    fn brute_dtw(a: &[f64], b: &[f64]) -> f64 {
        fn go(a: &[f64], b: &[f64], i: usize, j: usize, acc: f64, best: &mut f64) {
            let acc = acc + (a[i] - b[j]).abs();
            if i == a.len() - 1 && j == b.len() - 1 {
                *best = best.min(acc);
                return;
            }
            if i + 1 < a.len() {
                go(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.len() {
                go(a, b, i, j + 1, acc, best);
            }
            if i + 1 < a.len() && j + 1 < b.len() {
                go(a, b, i + 1, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        go(a, b, 0, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn identical_frames_score_one() {
        assert_eq!(
            oks(&frame(0.0), &frame(0.0), &OksParams::default()).unwrap(),
            1.0
        );
    }

    #[test]
    fn single_visible_keypoint_at_one_sigma_gives_inverse_e() {
        let mut reference = frame(0.0);
        for k in reference.kp.keypoints.iter_mut() {
            k.c = 0.0;
        }
        reference.kp.keypoints[Joint::RightWrist.idx()].c = 1.0;
        let s = 0.3;
        let k = DEFAULT_KEYPOINT_K[Joint::RightWrist.idx()];
        // d² = 2 s² k²
        let d = (2.0f64).sqrt() * s * k;
        let mut moved = reference;
        moved.kp.keypoints[Joint::RightWrist.idx()].x += d;
        let v = oks_with_scale(&moved, &reference, &OksParams::default(), s).unwrap();
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-9, "{v}");
    }

    #[test]
    fn no_visible_reference_keypoints() {
        let mut reference = frame(0.0);
        for k in reference.kp.keypoints.iter_mut() {
            k.c = 0.0;
        }
        assert_eq!(
            oks_with_scale(&frame(0.0), &reference, &OksParams::default(), 1.0),
            Err(OracleError::NoVisibleKeypoints)
        );
    }

    #[test]
    fn dtw_worked_example() {
        let r = dtw_scalar(&[0.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.cost, 1.0);
        assert_eq!(brute_dtw(&[0.0, 2.0], &[0.0, 1.0, 2.0]), 1.0);
        assert_eq!(r.path.first(), Some(&(0, 0)));
        assert_eq!(r.path.last(), Some(&(1, 2)));
    }

    #[test]
    fn dtw_of_sequence_with_itself_is_zero() {
        let s = PoseSequence::new(vec![frame(0.0), frame(0.1), frame(0.2)]).unwrap();
        let r = dtw(&s, &s).unwrap();
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.path, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(
            dtw(&PoseSequence::default(), &s),
            Err(OracleError::EmptySequence)
        );
    }

    #[test]
    fn energy_hand_example() {
        // corners at (0,0) and (0.6,0.8) give a unit bbox diagonal; joint 5
        // travels corner to corner, one unit, in one second
        use crate::skeleton::Keypoint;
        let mut pose = canonical_standing_pose();
        pose.keypoints[0] = Keypoint::new(0.0, 0.0, 1.0);
        pose.keypoints[1] = Keypoint::new(0.6, 0.8, 1.0);
        for k in pose.keypoints.iter_mut().skip(2) {
            *k = Keypoint::new(0.3, 0.4, 1.0);
        }
        let mut start = pose;
        start.keypoints[5] = Keypoint::new(0.0, 0.0, 1.0);
        let mut end = pose;
        end.keypoints[5] = Keypoint::new(0.6, 0.8, 1.0);
        let s =
            PoseSequence::new(vec![PoseFrame::new(0.0, start), PoseFrame::new(1.0, end)]).unwrap();
        let e = energy(&s).unwrap();

        let mut total = 0.0;
        for i in 0..KEYPOINT_COUNT {
            total += s.frames[1].keypoint(i).dist(&s.frames[0].keypoint(i));
        }
        assert!((total - 1.0).abs() < 1e-12);
        assert!((s.frames[0].bbox_diagonal() - 1.0).abs() < 1e-12);
        assert!((e - total / 18.0).abs() < 1e-12, "{e}");
        assert!((e - 1.0 / 18.0).abs() < 1e-12, "{e}");
    }

    #[test]
    fn static_energy_is_zero() {
        let s = PoseSequence::new(vec![frame(0.0), frame(0.5), frame(1.0)]).unwrap();
        assert_eq!(energy(&s).unwrap(), 0.0);
        assert_eq!(
            energy(&PoseSequence::new(vec![frame(0.0)]).unwrap()),
            Err(OracleError::TooFewFrames(1))
        );
    }

    fn jittered(seed: &[f64]) -> PoseFrame {
        let mut f = frame(0.0);
        for (i, k) in f.kp.keypoints.iter_mut().enumerate() {
            k.x += seed[i % seed.len()] * 0.05;
            k.y += seed[(i + 5) % seed.len()] * 0.05;
        }
        f
    }

    proptest! {
        #[test]
        fn oks_ignores_shared_translation(
            a in prop::collection::vec(-1.0f64..1.0, 18),
            b in prop::collection::vec(-1.0f64..1.0, 18),
            dx in -5.0f64..5.0, dy in -5.0f64..5.0,
        ) {
            let (f, r) = (jittered(&a), jittered(&b));
            let p = OksParams::default();
            let base = oks(&f, &r, &p).unwrap();
            let mv = |x: f64, y: f64| (x + dx, y + dy);
            let moved = oks(&f.map_points(mv), &r.map_points(mv), &p).unwrap();
            prop_assert!((base - moved).abs() <= 1e-9);
        }

        #[test]
        fn oks_ignores_shared_scaling(
            a in prop::collection::vec(-1.0f64..1.0, 18),
            b in prop::collection::vec(-1.0f64..1.0, 18),
            factor in 0.1f64..10.0,
        ) {
            let (f, r) = (jittered(&a), jittered(&b));
            let p = OksParams::default();
            let base = oks(&f, &r, &p).unwrap();
            let sc = |x: f64, y: f64| (x * factor, y * factor);
            let scaled = oks(&f.map_points(sc), &r.map_points(sc), &p).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-9);
        }

        #[test]
        fn oks_drops_when_one_keypoint_moves_away(
            a in prop::collection::vec(-1.0f64..1.0, 18),
            joint in 0usize..18,
            extra in 0.001f64..0.05,
        ) {
            let r = frame(0.0);
            let f = jittered(&a);
            let p = OksParams::default();
            let before = oks(&f, &r, &p).unwrap();
            let mut g = f;
            let (k, rk) = (g.kp.keypoints[joint], r.kp.keypoints[joint]);
            let (dx, dy) = (k.x - rk.x, k.y - rk.y);
            let d = dx.hypot(dy);
            let (ux, uy) = if d > 0.0 { (dx / d, dy / d) } else { (1.0, 0.0) };
            g.kp.keypoints[joint].x = rk.x + ux * (d + extra);
            g.kp.keypoints[joint].y = rk.y + uy * (d + extra);
            prop_assert!(oks(&g, &r, &p).unwrap() < before);
        }

        #[test]
        fn energy_is_homogeneous_and_scale_free(
            a in prop::collection::vec(-1.0f64..1.0, 18),
            b in prop::collection::vec(-1.0f64..1.0, 18),
            factor in 0.1f64..10.0,
        ) {
            let f0 = frame(0.0);
            let f1 = PoseFrame::new(0.5, jittered(&a).kp);
            let f2 = PoseFrame::new(1.0, jittered(&b).kp);
            let s = PoseSequence::new(vec![f0, f1, f2]).unwrap();
            let e = energy(&s).unwrap();
            let sc = |x: f64, y: f64| (x * factor, y * factor);
            prop_assert!((energy(&s.map_points(sc)).unwrap() - e).abs() <= 1e-9 * e.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn dtw_matches_exhaustive_search(
            a in prop::collection::vec(-5i32..5, 1..=6),
            b in prop::collection::vec(-5i32..5, 1..=6),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let r = dtw_scalar(&a, &b).unwrap();
            prop_assert_eq!(r.cost, brute_dtw(&a, &b));
            prop_assert_eq!(r.cost, dtw_scalar(&b, &a).unwrap().cost);
            let path_cost: f64 = r.path.iter().map(|&(i, j)| (a[i] - b[j]).abs()).sum();
            prop_assert_eq!(path_cost, r.cost);
        }
    }
}
