use serde::{Deserialize, Serialize};

/// Binary class of a flow: background traffic or the attack family under
/// study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    NonAttack,
    Attack,
}

impl Class {
    pub fn as_u8(self) -> u8 {
        match self {
            Class::NonAttack => 0,
            Class::Attack => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Class::NonAttack),
            1 => Some(Class::Attack),
            _ => None,
        }
    }

    /// Training target for binary cross-entropy.
    pub fn target(self) -> f64 {
        self.as_u8() as f64
    }
}

/// A numeric feature vector with its class.
///
/// `synthetic` marks GAN-generated rows so reports can tell real from
/// generated samples apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub features: Vec<f64>,
    pub label: Class,
    #[serde(default)]
    pub synthetic: bool,
}

impl EncodedSample {
    pub fn new(features: Vec<f64>, label: Class) -> Self {
        Self { features, label, synthetic: false }
    }

    pub fn synthetic(features: Vec<f64>) -> Self {
        Self { features, label: Class::Attack, synthetic: true }
    }
}

/// `(n_attack, n_nonattack)` over a sample slice.
pub fn class_counts(samples: &[EncodedSample]) -> (usize, usize) {
    let n_attack = samples.iter().filter(|s| s.label == Class::Attack).count();
    (n_attack, samples.len() - n_attack)
}
