//! Seeded synthetic imbalanced datasets standing in for encoded, normalized
//! flow features.
//!
//! Each class is an axis-aligned Gaussian truncated at three standard
//! deviations (by clipping the standard-normal draw) and then clamped to
//! `[0, 1]`. Clipping instead of rejection keeps the class counts exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Class, EncodedSample, N_FEATURES};

/// Draws are clipped to this many standard deviations.
pub const TRUNCATION: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("mean vectors must have d = {d} entries")]
    MeanArity { d: usize },
    #[error("means must lie in [0, 1]")]
    MeanRange,
    #[error("spread must be positive and finite")]
    BadSpread,
    #[error("overlap must lie in [0, 1]")]
    BadOverlap,
    #[error("d must be at least 1")]
    ZeroDim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_attack: usize,
    pub n_nonattack: usize,
    pub d: usize,
    pub mean_nonattack: Vec<f64>,
    pub mean_attack: Vec<f64>,
    pub spread_nonattack: f64,
    pub spread_attack: f64,
    /// Fraction of the way the attack centre is pulled toward the
    /// non-attack centre.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Blacklist-sized (60 / 9941). The attack class is shifted by one
    /// spread in the first four features, so the classes overlap heavily.
    fn default() -> Self {
        let mean_nonattack = vec![0.3; N_FEATURES];
        let mut mean_attack = mean_nonattack.clone();
        for m in mean_attack.iter_mut().take(4) {
            *m = 0.4;
        }
        Self {
            n_attack: 60,
            n_nonattack: 9941,
            d: N_FEATURES,
            mean_nonattack,
            mean_attack,
            spread_nonattack: 0.1,
            spread_attack: 0.1,
            overlap: 0.3,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.d == 0 {
            return Err(SynthError::ZeroDim);
        }
        if self.mean_attack.len() != self.d || self.mean_nonattack.len() != self.d {
            return Err(SynthError::MeanArity { d: self.d });
        }
        if self.mean_attack.iter().chain(&self.mean_nonattack).any(|m| !(0.0..=1.0).contains(m)) {
            return Err(SynthError::MeanRange);
        }
        if [self.spread_attack, self.spread_nonattack].iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(SynthError::BadSpread);
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(SynthError::BadOverlap);
        }
        Ok(())
    }

    /// Centre of the attack class after applying `overlap`.
    pub fn attack_centre(&self) -> Vec<f64> {
        self.mean_attack
            .iter()
            .zip(&self.mean_nonattack)
            .map(|(a, n)| a + self.overlap * (n - a))
            .collect()
    }
}

fn draw(rng: &mut ChaCha8Rng, centre: &[f64], spread: f64) -> Vec<f64> {
    centre
        .iter()
        .map(|&m| {
            let z: f64 = rng.sample(StandardNormal);
            (m + spread * z.clamp(-TRUNCATION, TRUNCATION)).clamp(0.0, 1.0)
        })
        .collect()
}

/// Non-attack rows first, then attack rows; callers shuffle when splitting.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<EncodedSample>, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let attack_centre = spec.attack_centre();
    let mut out = Vec::with_capacity(spec.n_attack + spec.n_nonattack);
    for _ in 0..spec.n_nonattack {
        out.push(EncodedSample::new(draw(&mut rng, &spec.mean_nonattack, spec.spread_nonattack), Class::NonAttack));
    }
    for _ in 0..spec.n_attack {
        out.push(EncodedSample::new(draw(&mut rng, &attack_centre, spec.spread_attack), Class::Attack));
    }
    Ok(out)
}
