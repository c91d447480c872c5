//! Generator/discriminator pair trained with plain gradient descent, sample
//! generation and minority-class balancing.
//!
//! Both networks are MLPs with ReLU hidden layers and a sigmoid output. The
//! discriminator gradient is taken through its output logit so the BCE terms
//! stay exact for saturated outputs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralnet::{
    backward, backward_logits, bce_with_logit, forward, init_params, layer_dims, sigmoid, Gradient, MlpModel, NetError,
    PROB_EPS,
};
use crate::optimizer::sgd_update;
use crate::{class_counts, EncodedSample};

#[derive(Debug, Error, PartialEq)]
pub enum GanError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite loss or gradient")]
    NonFinite,
    #[error("feature values must lie in [0, 1]")]
    OutOfRange,
    #[error("expected {expected} features, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("classes are already balanced")]
    AlreadyBalanced,
    #[error("attack is the majority class")]
    MajorityIsAttack,
    #[error("invalid GAN config: {0}")]
    BadConfig(&'static str),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePrior {
    StandardNormal,
    Uniform01,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// `mean ln(1 - D(G(z)))`, minimized.
    Minimax,
    /// `mean -ln D(G(z))`.
    NonSaturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub noise_prior: NoisePrior,
    pub d_lr: f64,
    pub g_lr: f64,
    pub d_steps_per_g_step: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub generator_loss_mode: GeneratorLoss,
    pub hidden_width: usize,
    pub n_hidden: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 16,
            noise_prior: NoisePrior::StandardNormal,
            d_lr: 0.0025,
            g_lr: 0.02,
            d_steps_per_g_step: 1,
            batch_size: 64,
            epochs: 500,
            generator_loss_mode: GeneratorLoss::NonSaturating,
            hidden_width: 32,
            n_hidden: 5,
            seed: 7,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if !(self.d_lr.is_finite() && self.d_lr > 0.0 && self.g_lr.is_finite() && self.g_lr > 0.0) {
            return Err(GanError::BadConfig("learning rates must be positive"));
        }
        if self.batch_size == 0 || self.noise_dim == 0 || self.d_steps_per_g_step == 0 || self.hidden_width == 0 {
            return Err(GanError::BadConfig("batch_size, noise_dim, d_steps_per_g_step and hidden_width must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanState {
    pub generator: MlpModel,
    pub discriminator: MlpModel,
    pub config: GanConfig,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

impl GanState {
    /// Freshly initialized networks for `d`-dimensional samples.
    pub fn new(d: usize, config: GanConfig) -> Result<Self, GanError> {
        config.validate()?;
        let g_dims = layer_dims(config.noise_dim, config.hidden_width, config.n_hidden, d);
        let d_dims = layer_dims(d, config.hidden_width, config.n_hidden, 1);
        let generator = init_params(&g_dims, config.seed)?;
        let discriminator = init_params(&d_dims, config.seed.wrapping_add(1))?;
        Ok(Self { generator, discriminator, config, epoch: 0, history: Vec::new() })
    }

    pub fn sample_dim(&self) -> usize {
        self.generator.output_dim()
    }
}

pub fn sample_noise<R: Rng>(rng: &mut R, prior: NoisePrior, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| match prior {
            NoisePrior::StandardNormal => rng.sample(StandardNormal),
            NoisePrior::Uniform01 => rng.random::<f64>(),
        })
        .collect()
}

/// `mean ln D(real) + mean ln(1 - D(fake))`, probabilities clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn value_function(d_real: &[f64], d_fake: &[f64]) -> Result<f64, GanError> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(GanError::EmptyInput);
    }
    let c = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let real = d_real.iter().map(|&p| c(p).ln()).sum::<f64>() / d_real.len() as f64;
    let fake = d_fake.iter().map(|&p| (1.0 - c(p)).ln()).sum::<f64>() / d_fake.len() as f64;
    Ok(real + fake)
}

fn generate_batch<R: Rng>(state: &GanState, rng: &mut R, n: usize) -> Result<Vec<Vec<f64>>, GanError> {
    (0..n)
        .map(|_| {
            let z = sample_noise(rng, state.config.noise_prior, state.config.noise_dim);
            Ok(state.generator.predict(&z)?)
        })
        .collect()
}

/// Discriminator loss `-V` (logit form) and its mean gradient, with real
/// rows labelled 1 and fake rows 0. Also returns the mean outputs.
pub fn discriminator_loss_grad(disc: &MlpModel, real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<(f64, Gradient, f64, f64), GanError> {
    if real.is_empty() || fake.is_empty() {
        return Err(GanError::EmptyInput);
    }
    let mut grad = Gradient::zeros_like(disc);
    let mut loss = 0.0;
    let mut means = [0.0; 2];
    for (k, (batch, y)) in [(real, 1.0), (fake, 0.0)].into_iter().enumerate() {
        let mut part = Gradient::zeros_like(disc);
        let mut part_loss = 0.0;
        for x in batch {
            let (p, trace) = forward(disc, x)?;
            part_loss += bce_with_logit(trace.logits()[0], y);
            means[k] += p[0];
            part.add_assign(&backward(disc, &trace, y)?);
        }
        let n = batch.len() as f64;
        part.scale(1.0 / n);
        grad.add_assign(&part);
        loss += part_loss / n;
        means[k] /= n;
    }
    Ok((loss, grad, means[0], means[1]))
}

/// Generator loss for the configured mode over the noise batch `zs`, and its
/// gradient with respect to the generator parameters (discriminator frozen).
pub fn generator_loss_grad(state: &GanState, zs: &[Vec<f64>]) -> Result<(f64, Gradient), GanError> {
    if zs.is_empty() {
        return Err(GanError::EmptyInput);
    }
    let n = zs.len() as f64;
    let mut grad = Gradient::zeros_like(&state.generator);
    let mut loss = 0.0;
    for z in zs {
        let (x, g_trace) = forward(&state.generator, z)?;
        let (_, d_trace) = forward(&state.discriminator, &x)?;
        let a = d_trace.logits()[0];
        let p = sigmoid(a);
        let (l, dl_da) = match state.config.generator_loss_mode {
            GeneratorLoss::NonSaturating => (bce_with_logit(a, 1.0), p - 1.0),
            GeneratorLoss::Minimax => (-bce_with_logit(a, 0.0), -p),
        };
        loss += l;
        let (_, dl_dx) = backward_logits(&state.discriminator, &d_trace, &[dl_da / n])?;
        // through the generator's sigmoid output
        let d_logits: Vec<f64> = dl_dx.iter().zip(&x).map(|(g, &xv)| g * xv * (1.0 - xv)).collect();
        let (g, _) = backward_logits(&state.generator, &g_trace, &d_logits)?;
        grad.add_assign(&g);
    }
    Ok((loss / n, grad))
}

fn apply(model: &mut MlpModel, grad: &Gradient, lr: f64) {
    let mut flat = model.to_flat();
    sgd_update(&mut flat, &grad.to_flat(), lr).expect("gradient shaped like its model");
    model.set_flat(&flat);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DStepStats {
    pub d_loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

/// One descent step on the discriminator against a fresh fake batch of the
/// same size as `real_batch`.
pub fn d_step<R: Rng>(state: &mut GanState, real_batch: &[Vec<f64>], lr: f64, rng: &mut R) -> Result<DStepStats, GanError> {
    if real_batch.is_empty() {
        return Err(GanError::EmptyInput);
    }
    let fake = generate_batch(state, rng, real_batch.len())?;
    let (d_loss, grad, mean_d_real, mean_d_fake) = discriminator_loss_grad(&state.discriminator, real_batch, &fake)?;
    if !d_loss.is_finite() || !grad.is_finite() {
        return Err(GanError::NonFinite);
    }
    apply(&mut state.discriminator, &grad, lr);
    Ok(DStepStats { d_loss, mean_d_real, mean_d_fake })
}

/// One descent step on the generator over `n` fresh noise draws.
pub fn g_step<R: Rng>(state: &mut GanState, n: usize, lr: f64, rng: &mut R) -> Result<f64, GanError> {
    let zs: Vec<Vec<f64>> = (0..n).map(|_| sample_noise(rng, state.config.noise_prior, state.config.noise_dim)).collect();
    let (g_loss, grad) = generator_loss_grad(state, &zs)?;
    if !g_loss.is_finite() || !grad.is_finite() {
        return Err(GanError::NonFinite);
    }
    apply(&mut state.generator, &grad, lr);
    Ok(g_loss)
}

fn check_real(real: &[Vec<f64>]) -> Result<usize, GanError> {
    let d = real.first().ok_or(GanError::EmptyInput)?.len();
    if d == 0 {
        return Err(GanError::EmptyInput);
    }
    for r in real {
        if r.len() != d {
            return Err(GanError::DimMismatch { expected: d, found: r.len() });
        }
        if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(GanError::OutOfRange);
        }
    }
    Ok(d)
}

/// Trains for `cfg.epochs` shuffled passes over `real`. Each batch gets
/// `d_steps_per_g_step` discriminator steps and one generator step.
pub fn train_gan(real: &[Vec<f64>], cfg: &GanConfig) -> Result<GanState, GanError> {
    let d = check_real(real)?;
    let mut state = GanState::new(d, cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..real.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut d_loss, mut g_loss, mut d_real, mut d_fake) = (0.0, 0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Vec<f64>> = idx.iter().map(|&i| real[i].clone()).collect();
            let mut last = None;
            for _ in 0..cfg.d_steps_per_g_step {
                last = Some(d_step(&mut state, &batch, cfg.d_lr, &mut rng)?);
            }
            let s = last.expect("at least one discriminator step");
            d_loss += s.d_loss;
            d_real += s.mean_d_real;
            d_fake += s.mean_d_fake;
            g_loss += g_step(&mut state, batch.len(), cfg.g_lr, &mut rng)?;
            n_batches += 1;
        }
        let k = n_batches as f64;
        state.history.push(EpochStats { epoch, d_loss: d_loss / k, g_loss: g_loss / k, mean_d_real: d_real / k, mean_d_fake: d_fake / k });
        state.epoch = epoch + 1;
    }
    Ok(state)
}

/// `n` generated vectors, deterministic per `seed`.
pub fn generate(state: &GanState, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, GanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_batch(state, &mut rng, n)
}

/// Appends `n_nonattack - n_attack` generated attack rows flagged synthetic.
/// Real rows are kept, unchanged and in order, at the front.
pub fn balance_dataset(real: &[EncodedSample], state: &GanState, seed: u64) -> Result<Vec<EncodedSample>, GanError> {
    let (n_attack, n_nonattack) = class_counts(real);
    if n_attack == n_nonattack {
        return Err(GanError::AlreadyBalanced);
    }
    if n_attack > n_nonattack {
        return Err(GanError::MajorityIsAttack);
    }
    let d = state.sample_dim();
    if let Some(s) = real.iter().find(|s| s.features.len() != d) {
        return Err(GanError::DimMismatch { expected: d, found: s.features.len() });
    }
    let mut out = real.to_vec();
    out.extend(generate(state, n_nonattack - n_attack, seed)?.into_iter().map(EncodedSample::synthetic));
    Ok(out)
}

/// Per-feature standard deviation of generated vectors; values near zero
/// indicate mode collapse.
pub fn feature_std(samples: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = samples.first() else { return Vec::new() };
    let n = samples.len() as f64;
    (0..first.len())
        .map(|j| {
            let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
            (samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}
