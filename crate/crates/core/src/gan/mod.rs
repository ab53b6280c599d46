//! Two-phase semi-supervised classifier: adversarial pretraining of a
//! discriminator on unlabelled images, then supervised fine-tuning of the same
//! discriminator on the few labelled ones.

mod checkpoint;
mod nets;
pub(crate) mod train;

pub use checkpoint::{ModelCheckpoint, Phase, Role, FORMAT_VERSION};
pub use nets::{
    Bound, Discriminator, DiscriminatorOutput, Generator, DROPOUT_RATE, IMAGE_DIMS, IMAGE_SIDE, INIT_STD,
    LEAKY_SLOPE, NOISE_LEN,
};
pub use train::{
    gan_objective, gan_train_step, init_models, supervised_finetune, train_classifier, unsupervised_train, EarlyStopDecision, EarlyStopping,
    EpochRecord, FinetuneOutcome, GanOptimizers, IterationRecord, Phase1Outcome, StepLosses, TrainConfig,
};

use rand::Rng;
use thiserror::Error;

use crate::dataset::Label;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("expected a {expected:?} checkpoint, got {found:?}")]
    WrongPhase { expected: Phase, found: Phase },
    #[error("expected a {expected:?} checkpoint, got {found:?}")]
    WrongRole { expected: Role, found: Role },
    #[error("semi-supervision still requires some labels: no labelled samples")]
    NoLabelledSamples,
    #[error("validation set is empty")]
    NoValidationSamples,
    #[error("training pool is empty")]
    EmptyPool,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// Ordered, named parameter tensors of one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    /// Weights drawn from N(0, 0.02²), everything named `*.bias` zeroed.
    pub fn init<R: Rng + ?Sized>(layout: &[(String, Vec<usize>)], rng: &mut R) -> Self {
        let mut params = Self::default();
        for (name, dims) in layout {
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(dims)
            } else {
                Tensor::randn(dims, INIT_STD, rng)
            };
            params.push(name.clone(), tensor);
        }
        params
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.names.push(name.into());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub(crate) fn check_layout(&self, layout: &[(String, Vec<usize>)]) -> Result<(), TensorError> {
        let ok = self.len() == layout.len()
            && self
                .iter()
                .zip(layout)
                .all(|((n, t), (ln, ld))| n == ln && t.dims() == ld.as_slice());
        if ok {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch {
                op: "parameter layout",
                detail: format!(
                    "expected {:?}, got {:?}",
                    layout.iter().map(|(n, _)| n).collect::<Vec<_>>(),
                    self.names
                ),
            })
        }
    }
}

/// A discriminator together with the phase its weights came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDiscriminator {
    pub network: Discriminator,
    pub phase: Phase,
    pub role: Role,
}

impl TrainedDiscriminator {
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint::new(self.role, self.phase, self.network.params().clone())
    }

    pub fn from_checkpoint(checkpoint: ModelCheckpoint) -> Result<Self, ModelError> {
        if checkpoint.role == Role::Generator {
            return Err(ModelError::WrongRole {
                expected: Role::Discriminator,
                found: checkpoint.role,
            });
        }
        Ok(Self {
            network: Discriminator::from_params(checkpoint.params)?,
            phase: checkpoint.phase,
            role: checkpoint.role,
        })
    }
}

/// Threshold rule: COVID iff p(COVID) > 0.5, strictly.
pub fn label_for(p_covid: f64) -> Label {
    if p_covid > 0.5 {
        Label::Covid
    } else {
        Label::Healthy
    }
}

/// Classifies one preprocessed 1×100×100 image with a fine-tuned network.
pub fn classify(model: &TrainedDiscriminator, image: &Tensor) -> Result<(Label, f64), ModelError> {
    if model.phase != Phase::Phase2 {
        return Err(ModelError::WrongPhase {
            expected: Phase::Phase2,
            found: model.phase,
        });
    }
    let p = model.network.probabilities(image)?[0];
    Ok((label_for(p), p))
}

/// `1 − 2·|p − 0.5|`: 1 when the classifier is maximally unsure, 0 when certain.
pub fn uncertainty_score(p_covid: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&p_covid) {
        return Err(ModelError::InvalidProbability(p_covid));
    }
    Ok(1.0 - 2.0 * (p_covid - 0.5).abs())
}
