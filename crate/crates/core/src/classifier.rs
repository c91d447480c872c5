//! Stratified 60/40 splitting and the attack/non-attack MLP classifier,
//! trained full-batch with L-BFGS.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neuralnet::{batch_loss_grad, init_params, layer_dims, MlpModel, NetError};
use crate::optimizer::{lbfgs_minimize, LbfgsConfig, LbfgsResult, LbfgsStatus, OptimError};
use crate::par::{map_collect, Execution};
use crate::preprocess::{EncoderSpec, Normalizer};
use crate::{class_counts, Class, EncodedSample};

pub const TRAIN_FRACTION: f64 = 0.6;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("class {0:?} has no samples")]
    MissingClass(Class),
    #[error("training loss is not finite")]
    NonFinite,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
    pub seed: u64,
    pub train_fraction: f64,
}

/// Rows of one class that go to the training side.
pub fn train_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).round() as usize
}

/// Per-class shuffled 60/40 split; each side is shuffled again so classes
/// are interleaved.
pub fn split(samples: &[EncodedSample], seed: u64) -> Result<SplitDataset, ClassifierError> {
    split_fraction(samples, seed, TRAIN_FRACTION)
}

/// [`split`] with a different training fraction.
pub fn split_fraction(samples: &[EncodedSample], seed: u64, fraction: f64) -> Result<SplitDataset, ClassifierError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [Class::NonAttack, Class::Attack] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == class).collect();
        if idx.is_empty() {
            return Err(ClassifierError::MissingClass(class));
        }
        idx.shuffle(&mut rng);
        let k = train_count(idx.len(), fraction);
        train.extend(idx[..k].iter().map(|&i| samples[i].clone()));
        test.extend(idx[k..].iter().map(|&i| samples[i].clone()));
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(SplitDataset { train, test, seed, train_fraction: fraction })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden_width: usize,
    pub n_hidden: usize,
    pub seed: u64,
    /// Refuse to train on a single class.
    pub strict: bool,
    pub lbfgs: LbfgsConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_width: 32,
            n_hidden: 5,
            seed: 7,
            strict: true,
            lbfgs: LbfgsConfig { initial_step: Some(1e-6), ..LbfgsConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub status: LbfgsStatus,
    pub seed: u64,
    pub n_attack: usize,
    pub n_nonattack: usize,
    pub n_synthetic: usize,
}

/// Model bundle: network, optional preprocessing it expects, and how it was
/// trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub model: MlpModel,
    #[serde(default)]
    pub encoder: Option<EncoderSpec>,
    #[serde(default)]
    pub normalizer: Option<Normalizer>,
    pub meta: TrainingMeta,
}

pub fn train_classifier(
    train: &[EncodedSample],
    cfg: &ClassifierConfig,
    exec: Execution,
) -> Result<(TrainedClassifier, LbfgsResult), ClassifierError> {
    if train.is_empty() {
        return Err(ClassifierError::Net(NetError::EmptyBatch));
    }
    let (n_attack, n_nonattack) = class_counts(train);
    if cfg.strict {
        if n_attack == 0 {
            return Err(ClassifierError::MissingClass(Class::Attack));
        }
        if n_nonattack == 0 {
            return Err(ClassifierError::MissingClass(Class::NonAttack));
        }
    }
    let d = train[0].features.len();
    let dims = layer_dims(d, cfg.hidden_width, cfg.n_hidden, 1);
    let mut model = init_params(&dims, cfg.seed)?;
    let mut scratch = model.clone();
    let mut failure: Option<NetError> = None;
    let objective = |flat: &[f64]| -> (f64, Vec<f64>) {
        scratch.set_flat(flat);
        match batch_loss_grad(&scratch, train, exec) {
            Ok((loss, grad)) if loss.is_finite() && grad.is_finite() => (loss, grad.to_flat()),
            Ok((_, grad)) => (f64::INFINITY, vec![0.0; grad.to_flat().len()]),
            Err(e) => {
                failure.get_or_insert(e);
                (f64::INFINITY, vec![0.0; flat.len()])
            }
        }
    };
    let result = lbfgs_minimize(objective, &model.to_flat(), &cfg.lbfgs);
    if let Some(e) = failure {
        return Err(e.into());
    }
    let result = result.map_err(|e| match e {
        OptimError::NonFiniteStart => ClassifierError::NonFinite,
        e => e.into(),
    })?;
    if !result.f.is_finite() {
        return Err(ClassifierError::NonFinite);
    }
    model.set_flat(&result.x);
    let meta = TrainingMeta {
        iterations: result.iterations,
        initial_loss: result.f0,
        final_loss: result.f,
        status: result.status,
        seed: cfg.seed,
        n_attack,
        n_nonattack,
        n_synthetic: train.iter().filter(|s| s.synthetic).count(),
    };
    Ok((TrainedClassifier { model, encoder: None, normalizer: None, meta }, result))
}

impl TrainedClassifier {
    /// Attack probability for one normalized feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64, NetError> {
        Ok(self.model.predict(x)?[0])
    }

    pub fn scores(&self, samples: &[EncodedSample], exec: Execution) -> Result<Vec<(f64, Class)>, NetError> {
        map_collect(exec, samples, |s| self.predict(&s.features).map(|p| (p, s.label))).into_iter().collect()
    }
}

pub fn classify(score: f64, threshold: f64) -> Class {
    if score >= threshold {
        Class::Attack
    } else {
        Class::NonAttack
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn labelled(n_attack: usize, n_nonattack: usize) -> Vec<EncodedSample> {
        (0..n_nonattack)
            .map(|i| EncodedSample::new(vec![i as f64], Class::NonAttack))
            .chain((0..n_attack).map(|i| EncodedSample::new(vec![-(i as f64) - 1.0], Class::Attack)))
            .collect()
    }

    fn sorted_keys(s: &[EncodedSample]) -> Vec<(i64, u8)> {
        let mut k: Vec<(i64, u8)> = s.iter().map(|x| (x.features[0] as i64, x.label.as_u8())).collect();
        k.sort();
        k
    }

    #[test]
    fn ten_samples_split_six_four() {
        let s = split(&labelled(5, 5), 3).unwrap();
        assert_eq!(class_counts(&s.train), (3, 3));
        assert_eq!(class_counts(&s.test), (2, 2));
    }

    #[test]
    fn blacklist_sized_split() {
        let s = split(&labelled(60, 9941), 11).unwrap();
        let (a, n) = class_counts(&s.train);
        assert!(a.abs_diff(36) <= 1 && n.abs_diff(5965) <= 1, "{a} {n}");
        assert_eq!(s, split(&labelled(60, 9941), 11).unwrap());
    }

    #[test]
    fn split_needs_both_classes() {
        assert!(matches!(split(&labelled(0, 4), 1), Err(ClassifierError::MissingClass(Class::Attack))));
        assert!(matches!(split(&labelled(4, 0), 1), Err(ClassifierError::MissingClass(Class::NonAttack))));
    }

    proptest! {
        #[test]
        fn split_is_a_stratified_partition(n_a in 1usize..80, n_n in 1usize..80, seed in any::<u64>()) {
            let data = labelled(n_a, n_n);
            let s = split(&data, seed).unwrap();
            let mut union = s.train.clone();
            union.extend(s.test.clone());
            prop_assert_eq!(sorted_keys(&union), sorted_keys(&data));
            let (a, n) = class_counts(&s.train);
            prop_assert!((a as f64 - 0.6 * n_a as f64).abs() <= 1.0);
            prop_assert!((n as f64 - 0.6 * n_n as f64).abs() <= 1.0);
        }
    }

    fn two_clusters(n: usize, seed: u64) -> Vec<EncodedSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let attack = i % 2 == 0;
                let c = if attack { 0.75 } else { 0.25 };
                let x = vec![c + rng.random_range(-0.15..0.15), c + rng.random_range(-0.15..0.15)];
                EncodedSample::new(x, if attack { Class::Attack } else { Class::NonAttack })
            })
            .collect()
    }

    fn small_cfg() -> ClassifierConfig {
        ClassifierConfig { hidden_width: 8, n_hidden: 2, lbfgs: LbfgsConfig { max_iter: 200, ..ClassifierConfig::default().lbfgs }, ..Default::default() }
    }

    fn accuracy(clf: &TrainedClassifier, s: &[EncodedSample]) -> f64 {
        let scores = clf.scores(s, Execution::Sequential).unwrap();
        scores.iter().filter(|(p, c)| classify(*p, DEFAULT_THRESHOLD) == *c).count() as f64 / s.len() as f64
    }

    #[test]
    fn separable_clusters_are_learned() {
        let data = two_clusters(200, 1);
        let (clf, res) = train_classifier(&data, &small_cfg(), Execution::Sequential).unwrap();
        assert!(accuracy(&clf, &data) >= 0.99);
        assert!(res.f <= res.f0);
        assert_eq!(clf.meta.final_loss, res.f);
        let held_out = two_clusters(400, 2);
        assert!(accuracy(&clf, &held_out) >= 0.99);
    }

    #[test]
    fn training_is_deterministic() {
        let data = two_clusters(60, 4);
        let cfg = ClassifierConfig { lbfgs: LbfgsConfig { max_iter: 20, ..small_cfg().lbfgs }, ..small_cfg() };
        let a = train_classifier(&data, &cfg, Execution::Sequential).unwrap().0;
        let b = train_classifier(&data, &cfg, Execution::Parallel).unwrap().0;
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn single_class_is_refused_in_strict_mode() {
        let data: Vec<EncodedSample> = two_clusters(20, 1).into_iter().filter(|s| s.label == Class::NonAttack).collect();
        assert!(matches!(train_classifier(&data, &small_cfg(), Execution::Sequential), Err(ClassifierError::MissingClass(Class::Attack))));
        let lax = ClassifierConfig { strict: false, lbfgs: LbfgsConfig { max_iter: 5, ..small_cfg().lbfgs }, ..small_cfg() };
        assert!(train_classifier(&data, &lax, Execution::Sequential).is_ok());
    }

    #[test]
    fn zero_model_scores_one_half() {
        let clf = TrainedClassifier {
            model: MlpModel::zeros(&layer_dims(12, 32, 5, 1)).unwrap(),
            encoder: None,
            normalizer: None,
            meta: TrainingMeta { iterations: 0, initial_loss: 0.0, final_loss: 0.0, status: LbfgsStatus::MaxIter, seed: 0, n_attack: 0, n_nonattack: 0, n_synthetic: 0 },
        };
        for x in [vec![0.0; 12], vec![1.0; 12], vec![0.3; 12]] {
            assert_eq!(clf.predict(&x).unwrap(), 0.5);
        }
        assert_eq!(classify(0.5, 0.5), Class::Attack);
        assert_eq!(classify(0.4999, 0.5), Class::NonAttack);
        assert!(matches!(clf.predict(&[0.0; 3]), Err(NetError::ArityMismatch { .. })));
    }

    #[test]
    fn bundle_json_roundtrip() {
        let data = two_clusters(40, 9);
        let cfg = ClassifierConfig { lbfgs: LbfgsConfig { max_iter: 5, ..small_cfg().lbfgs }, ..small_cfg() };
        let clf = train_classifier(&data, &cfg, Execution::Sequential).unwrap().0;
        let back: TrainedClassifier = serde_json::from_str(&serde_json::to_string(&clf).unwrap()).unwrap();
        assert_eq!(back, clf);
    }
}
