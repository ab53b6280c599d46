//! Purely supervised comparator: the discriminator architecture trained from
//! random weights on the labelled pool alone.

use crate::dataset::{Label, LabelledImages};
use crate::gan::train::{seeded, stream};
use crate::gan::{
    classify, train_classifier, Discriminator, EpochRecord, FinetuneOutcome, ModelError, Role, TrainConfig,
    TrainedDiscriminator,
};
use crate::tensor::Tensor;

/// Same loss, optimizer and early stopping as fine-tuning, but starting from
/// a fresh initialization.
pub fn cnn_train_supervised(
    train: &LabelledImages,
    validation: &LabelledImages,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<FinetuneOutcome, ModelError> {
    let init = Discriminator::init(&mut seeded(config.seed, stream::CNN_INIT));
    train_classifier(init, Role::Cnn, train, validation, config, on_epoch)
}

pub fn cnn_predict(model: &TrainedDiscriminator, image: &Tensor) -> Result<(Label, f64), ModelError> {
    if model.role != Role::Cnn {
        return Err(ModelError::WrongRole {
            expected: Role::Cnn,
            found: model.role,
        });
    }
    classify(model, image)
}
