//! Regenerates the sample show under `fixtures/`: the recording, the move
//! library, the audience pose recordings and the golden fingerprint.
//!
//! Operator decisions are scripted relative to when each asset reached
//! review, so the recording is built in passes: one replay without
//! decisions to learn the review times, one with decisions to learn the
//! cue, and a final one that also scores the audience against that cue.
//!
//!     cargo run -p shrine-core --example make_sample_show

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shrine_core::clock::Millis;
use shrine_core::ingest::Round;
use shrine_core::moderation::Decision;
use shrine_core::oracle::{builtin_library, MoveLibrary, PoseFrame, PoseSequence};
use shrine_core::orchestrator::ErrorClass;
use shrine_core::show::{
    replay, FaultSpec, RecordedEvent, ShowConfig, ShowRecording, ShowSeeds, SketchSource,
    TimedEvent,
};
use shrine_core::skeleton::Keypoint;

const AUDIENCE: usize = 65;

fn at(t_ms: Millis, event: RecordedEvent) -> TimedEvent {
    TimedEvent { t_ms, event }
}

fn submissions(
    rng: &mut ChaCha8Rng,
    round: Round,
    devices: &[String],
    start: Millis,
    span: Millis,
) -> Vec<TimedEvent> {
    let mut times: Vec<Millis> = (0..devices.len())
        .map(|_| start + rng.random_range(0..span))
        .collect();
    times.sort_unstable();
    devices
        .iter()
        .zip(times)
        .map(|(d, t)| {
            at(
                t,
                RecordedEvent::Submit {
                    client_token: format!("{}-{d}", round.as_str().to_ascii_lowercase()),
                    device_id: d.clone(),
                    muse_id: None,
                    round,
                    sketch: SketchSource::Synthetic {
                        seed: rng.random(),
                        width: 160,
                        height: 120,
                    },
                },
            )
        })
        .collect()
}

/// The reference performed a little late, a little slow and with jitter.
fn audience_take(
    reference: &PoseSequence,
    rng: &mut ChaCha8Rng,
    slowdown: f64,
    jitter: f64,
) -> PoseSequence {
    let fps = 15.0;
    let lag = 0.2;
    let duration = reference.duration_s() * slowdown + lag;
    let n = (duration * fps).floor() as usize + 1;
    let t0 = reference.frames[0].t_s;
    let frames = (0..n)
        .map(|i| {
            let t = i as f64 / fps;
            let rt = (t0 + (t - lag).max(0.0) / slowdown).min(reference.frames.last().unwrap().t_s);
            let j = reference.frames.partition_point(|f| f.t_s <= rt).max(1) - 1;
            let a = &reference.frames[j];
            let b = reference.frames.get(j + 1).unwrap_or(a);
            let w = if b.t_s > a.t_s {
                (rt - a.t_s) / (b.t_s - a.t_s)
            } else {
                0.0
            };
            let mut kp = a.kp;
            for (k, (ka, kb)) in kp
                .keypoints
                .iter_mut()
                .zip(a.kp.keypoints.iter().zip(b.kp.keypoints.iter()))
            {
                *k = Keypoint::new(
                    ka.x + (kb.x - ka.x) * w + rng.random_range(-jitter..=jitter),
                    ka.y + (kb.y - ka.y) * w + rng.random_range(-jitter..=jitter),
                    ka.c.min(kb.c),
                );
            }
            PoseFrame::new(t, kp)
        })
        .collect();
    PoseSequence::new(frames).expect("valid take")
}

fn still_take(reference: &PoseSequence) -> PoseSequence {
    let kp = reference.frames[0].kp;
    PoseSequence::new(
        (0..60)
            .map(|i| PoseFrame::new(i as f64 / 15.0, kp))
            .collect(),
    )
    .unwrap()
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    std::fs::create_dir_all(root.join("poses")).unwrap();
    std::fs::create_dir_all(root.join("golden")).unwrap();
    let library = builtin_library();
    std::fs::write(
        root.join("moves.json"),
        serde_json::to_string(&library).unwrap() + "\n",
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let config = ShowConfig {
        show_id: "sample-night".into(),
        move_library: Some("moves.json".into()),
        ..ShowConfig::default()
    };
    let seeds = ShowSeeds {
        assignment: 11,
        pipeline: 22,
        oracle: 33,
    };

    let devices: Vec<String> = (1..=AUDIENCE).map(|i| format!("phone-{i:02}")).collect();
    let mut events: Vec<TimedEvent> = devices
        .iter()
        .enumerate()
        .map(|(i, d)| {
            at(
                i as Millis * 500,
                RecordedEvent::Arrive {
                    device_id: d.clone(),
                },
            )
        })
        .collect();

    // round one is drawn in pairs, so one phone per pair submits
    let pair_leads: Vec<String> = devices.iter().step_by(2).cloned().collect();
    let rounds = [
        (Round::R1Background, pair_leads, 60_000, 120_000),
        (Round::R2Pose, devices.clone(), 420_000, 180_000),
        (Round::R3Object, devices.clone(), 900_000, 180_000),
    ];
    for (round, who, start, span) in &rounds {
        events.push(at(
            *start - 1_000,
            RecordedEvent::OpenRound { round: *round },
        ));
        events.extend(submissions(&mut rng, *round, who, *start, *span));
        events.push(at(*start + *span + 1_000, RecordedEvent::CloseRound));
    }
    events.sort_by_key(|e| e.t_ms);

    let tokens: Vec<String> = events
        .iter()
        .filter_map(|e| match &e.event {
            RecordedEvent::Submit { client_token, .. } => Some(client_token.clone()),
            _ => None,
        })
        .collect();
    let fault = |i: usize, attempt: u32, class: ErrorClass| FaultSpec {
        client_token: tokens[i].clone(),
        attempt,
        class,
        after_ms: 6_000,
    };
    let mut faults = vec![
        fault(5, 0, ErrorClass::Transient),
        fault(47, 0, ErrorClass::Transient),
        fault(47, 1, ErrorClass::Transient),
        fault(120, 0, ErrorClass::Permanent),
    ];
    for attempt in 0..4 {
        faults.push(fault(80, attempt, ErrorClass::Transient));
    }

    let mut rec = ShowRecording {
        config,
        seeds,
        events,
        faults,
        base_dir: Some(root.clone()),
    };

    // pass 1: when does each asset reach review?
    let first = replay(&rec).expect("pass 1");
    let mut by_job = BTreeMap::new();
    for t in &first.tickets {
        by_job.insert(t.job_id.clone(), t.created_at);
    }
    let job_of_token: BTreeMap<String, String> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), format!("job-{:05}", i + 1)))
        .collect();

    // operators: most approve within 3–15 s, some reject, some never get to it
    let mut decisions = Vec::new();
    for token in &tokens {
        let Some(&created) = by_job.get(&job_of_token[token]) else {
            continue;
        };
        let roll: f64 = rng.random();
        if roll < 0.1 {
            continue;
        }
        let decision = if roll < 0.22 {
            Decision::Reject
        } else {
            Decision::Approve
        };
        let delay = rng.random_range(3_000..15_000);
        decisions.push(at(
            created + delay,
            RecordedEvent::Decide {
                client_token: token.clone(),
                decision,
                operator: format!("op-{}", 1 + rng.random_range(0..2)),
            },
        ));
    }
    rec.events.extend(decisions);
    let cue_at = 1_500_000;
    rec.events
        .push(at(cue_at, RecordedEvent::Cue { seed: None }));
    rec.events.sort_by_key(|e| e.t_ms);

    // pass 2: which moves does the oracle pick?
    let second = replay(&rec).expect("pass 2");
    let cue = second.cue.expect("cue triggered");
    let reference = library
        .reference_for(&cue.selected_move_ids, rec.config.score.rest_gap_s)
        .unwrap();
    let lib_check: MoveLibrary =
        serde_json::from_str(&std::fs::read_to_string(root.join("moves.json")).unwrap()).unwrap();
    assert_eq!(lib_check, library);
    std::fs::write(
        root.join("poses/audience_night1.jsonl"),
        audience_take(&reference, &mut rng, 1.1, 0.01).to_jsonl(),
    )
    .unwrap();
    std::fs::write(
        root.join("poses/audience_still.jsonl"),
        still_take(&reference).to_jsonl(),
    )
    .unwrap();
    std::fs::write(
        root.join("poses/reference_night1.jsonl"),
        reference.to_jsonl(),
    )
    .unwrap();

    rec.events.push(at(
        cue_at + 60_000,
        RecordedEvent::Score {
            pose_recording: "poses/audience_night1.jsonl".into(),
        },
    ));
    rec.events.push(at(
        cue_at + 90_000,
        RecordedEvent::Override { composite: 0.8 },
    ));
    std::fs::write(root.join("sample_show.json"), rec.to_json_pretty()).unwrap();

    // pass 3: the recording as shipped
    let shipped = ShowRecording::load(&root.join("sample_show.json")).unwrap();
    let out = replay(&shipped).expect("pass 3");
    std::fs::write(
        root.join("golden/sample_show.fingerprint"),
        format!("{}\n", out.fingerprint),
    )
    .unwrap();
    println!(
        "{} entries, fingerprint {}, composite {:.4}",
        out.entries,
        out.fingerprint,
        out.scores.first().map(|s| s.composite).unwrap_or(f64::NAN)
    );
}
