//! Turning a performance into accuracy, timing and energy on a 0–1 scale.

use serde::{Deserialize, Serialize};

use super::metrics::{dtw, energy, oks, OksParams};
use super::moves::{ChoreographyCue, MoveLibrary};
use super::sequence::PoseSequence;
use super::OracleError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub accuracy: f64,
    pub timing: f64,
    pub energy: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            accuracy: 1.0 / 3.0,
            timing: 1.0 / 3.0,
            energy: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub weights: Weights,
    pub threshold: f64,
    pub tau_timing: f64,
    /// Energy that maps to 1.0; the reference's own energy when unset.
    pub e_max: Option<f64>,
    pub rest_gap_s: f64,
    pub oks: OksParams,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            threshold: 0.6,
            tau_timing: 0.5,
            e_max: None,
            rest_gap_s: 0.5,
            oks: OksParams::default(),
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        let w = self.weights;
        let ws = [w.accuracy, w.timing, w.energy];
        if ws.iter().any(|x| !(*x >= 0.0)) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(OracleError::BadConfig(
                "weights must be non-negative and sum to 1".into(),
            ));
        }
        if !(self.tau_timing > 0.0) {
            return Err(OracleError::BadConfig("tau_timing must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(OracleError::BadConfig(
                "threshold must lie in [0, 1]".into(),
            ));
        }
        if let Some(e) = self.e_max {
            if !(e > 0.0) {
                return Err(OracleError::BadConfig("e_max must be positive".into()));
            }
        }
        if !(self.rest_gap_s >= 0.0) {
            return Err(OracleError::BadConfig(
                "rest_gap_s must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub accuracy: f64,
    pub timing: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub oks_mean: f64,
    pub dtw_cost: f64,
    pub dtw_normalized: f64,
    pub energy: f64,
    pub e_max: f64,
    pub normalized: Components,
    pub composite: f64,
    pub threshold: f64,
    pub threshold_crossed: bool,
}

/// Weighted mean of the components, clamped against rounding.
pub fn composite(weights: &Weights, c: &Components) -> f64 {
    (weights.accuracy * c.accuracy + weights.timing * c.timing + weights.energy * c.energy)
        .clamp(0.0, 1.0)
}

pub fn energy_component(energy: f64, e_max: f64) -> f64 {
    if e_max > 0.0 {
        (energy / e_max).min(1.0)
    } else {
        0.0
    }
}

/// Scores a performance against an explicit reference sequence.
pub fn score_against(
    audience: &PoseSequence,
    reference: &PoseSequence,
    config: &ScoreConfig,
) -> Result<ScoreReport, OracleError> {
    config.validate()?;
    if audience.is_empty() || reference.is_empty() {
        return Err(OracleError::EmptySequence);
    }
    audience.validate()?;
    let alignment = dtw(audience, reference)?;
    let mut oks_sum = 0.0;
    for &(i, j) in &alignment.path {
        oks_sum += oks(&audience.frames[i], &reference.frames[j], &config.oks)?;
    }
    let oks_mean = oks_sum / alignment.path.len() as f64;
    let dtw_normalized = alignment.normalized();
    let e = energy(audience)?;
    let e_max = match config.e_max {
        Some(v) => v,
        None => energy(reference)?,
    };
    let normalized = Components {
        accuracy: oks_mean.clamp(0.0, 1.0),
        timing: (-dtw_normalized / config.tau_timing).exp(),
        energy: energy_component(e, e_max),
    };
    let composite = composite(&config.weights, &normalized);
    Ok(ScoreReport {
        oks_mean,
        dtw_cost: alignment.cost,
        dtw_normalized,
        energy: e,
        e_max,
        normalized,
        composite,
        threshold: config.threshold,
        threshold_crossed: composite >= config.threshold,
    })
}

/// Scores a performance against the cue's three moves performed in order.
pub fn score(
    audience: &PoseSequence,
    cue: &ChoreographyCue,
    library: &MoveLibrary,
    config: &ScoreConfig,
) -> Result<ScoreReport, OracleError> {
    if audience.is_empty() {
        return Err(OracleError::EmptySequence);
    }
    let reference = library.reference_for(&cue.selected_move_ids, config.rest_gap_s)?;
    score_against(audience, &reference, config)
}
