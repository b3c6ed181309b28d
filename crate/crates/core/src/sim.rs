//! Deterministic stand-in for a remote model annotator.
//!
//! A simulated prediction is a pure function of the profile, the gold label
//! and a stream position: the generator is seeded from `profile.seed` and
//! switched to stream `position`, so predictions do not depend on the order
//! in which units are visited.

use alloc::string::String;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::label::{Label, TaskKind};
use crate::prediction::{format_trailer, AnnotatorPrediction, GenerationParams};

/// Relative weights of the miss offsets -2, -1, +1, +2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSpread {
    pub minus_two: f64,
    pub minus_one: f64,
    pub plus_one: f64,
    pub plus_two: f64,
}

impl Default for ErrorSpread {
    fn default() -> Self {
        ErrorSpread { minus_two: 0.15, minus_one: 0.35, plus_one: 0.35, plus_two: 0.15 }
    }
}

impl ErrorSpread {
    fn sample(&self, u: f64) -> i64 {
        let weights = [self.minus_two, self.minus_one, self.plus_one, self.plus_two];
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        for (w, off) in weights.iter().zip([-2, -1, 1, 2]) {
            acc += w / total;
            if u < acc {
                return off;
            }
        }
        // rounding can leave `acc` a hair under 1
        [-2, -1, 1, 2]
            .into_iter()
            .zip(weights)
            .rev()
            .find(|&(_, w)| w > 0.0)
            .map_or(1, |(o, _)| o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    /// Probability of emitting the gold label.
    pub hit_rate: f64,
    #[serde(default)]
    pub error_spread: ErrorSpread,
    pub conf_correct_mean: f64,
    pub conf_wrong_mean: f64,
    pub conf_sd: f64,
    pub seed: u64,
    /// When set, repeated runs under different generation settings draw from
    /// different streams; otherwise every setting reproduces the same output.
    #[serde(default)]
    pub varies_with_settings: bool,
}

impl SimProfile {
    pub fn perfect(seed: u64) -> Self {
        SimProfile {
            hit_rate: 1.0,
            error_spread: ErrorSpread::default(),
            conf_correct_mean: 95.0,
            conf_wrong_mean: 95.0,
            conf_sd: 0.0,
            seed,
            varies_with_settings: false,
        }
    }
}

/// Move an out-of-scale label back inside by reflecting at the boundary,
/// so 6 becomes 4 and 0 becomes 2.
pub fn reflect(value: i64) -> Label {
    let v = if value > 5 {
        10 - value
    } else if value < 1 {
        2 - value
    } else {
        value
    };
    Label::new(v.clamp(1, 5)).expect("clamped into scale")
}

/// Draw `(label, confidence)` for one item.
pub fn sim_draw(profile: &SimProfile, gold: Label, position: u64) -> (Label, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(position);
    let hit = rng.random::<f64>() < profile.hit_rate;
    let offset_u = rng.random::<f64>();
    let label = if hit {
        gold
    } else {
        reflect(i64::from(gold.value()) + profile.error_spread.sample(offset_u))
    };
    let correct = label == gold;
    let mean = if correct { profile.conf_correct_mean } else { profile.conf_wrong_mean };
    let confidence = if profile.conf_sd > 0.0 {
        Normal::new(mean, profile.conf_sd)
            .map(|n| n.sample(&mut rng))
            .unwrap_or(mean)
    } else {
        mean
    };
    (label, confidence.clamp(0.0, 100.0))
}

/// Full prediction record for one simulated item.
#[allow(clippy::too_many_arguments)]
pub fn sim_predict(
    profile: &SimProfile,
    annotator_id: &str,
    unit_id: &str,
    task: TaskKind,
    gold: Label,
    position: u64,
    params: GenerationParams,
) -> AnnotatorPrediction {
    let (label, confidence) = sim_draw(profile, gold, position);
    AnnotatorPrediction {
        annotator_id: annotator_id.into(),
        unit_id: unit_id.into(),
        task,
        label,
        confidence,
        raw_response: format_trailer(label, confidence),
        params,
    }
}

/// Stable 64-bit FNV-1a hash, used to derive stream positions from ids.
pub fn stable_hash(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.bytes().chain(core::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Stream position for `(unit, task)` under a given generation setting.
pub fn stream_position(profile: &SimProfile, unit_id: &str, task: TaskKind, setting: &str) -> u64 {
    if profile.varies_with_settings {
        stable_hash(&[unit_id, task.as_str(), setting])
    } else {
        stable_hash(&[unit_id, task.as_str()])
    }
}

/// Canonical setting key for stream derivation.
pub fn setting_key(params: &GenerationParams, variant_id: &str) -> String {
    alloc::format!("t={}|max={}|v={}", params.temperature, params.max_tokens, variant_id)
}
