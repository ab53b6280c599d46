use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, Label, Sample};

/// Share of the corpus held out for testing.
pub const TEST_SHARE: f64 = 0.20;
/// Share of the labelled training pool held out for validation.
pub const VALIDATION_SHARE: f64 = 0.20;

/// Four pairwise-disjoint pools. Validation and test samples never reach
/// the unsupervised phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    /// Training samples whose labels are withheld (stripped).
    pub train_unlabelled: Vec<Sample>,
    pub train_labelled: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Every training image with its label removed, for the unsupervised
    /// phase. Never reads a label.
    pub fn unsupervised_pool(&self) -> Vec<Sample> {
        self.train_unlabelled
            .iter()
            .chain(&self.train_labelled)
            .map(Sample::unlabelled)
            .collect()
    }

    pub fn training_len(&self) -> usize {
        self.train_unlabelled.len() + self.train_labelled.len() + self.validation.len()
    }
}

fn round_half_up(x: f64) -> usize {
    // the epsilon absorbs products like 0.05 · 50 landing just under .5
    (x + 0.5 + 1e-9).floor() as usize
}

/// Pool sizes for a corpus of `total` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSizes {
    pub test: usize,
    pub train: usize,
    /// Labelled training pool, validation included.
    pub labelled: usize,
    pub validation: usize,
}

impl PoolSizes {
    pub fn compute(total: usize, labelled_fraction: f64) -> Result<Self, DatasetError> {
        if !(labelled_fraction > 0.0 && labelled_fraction <= 1.0) {
            return Err(DatasetError::BadFraction(labelled_fraction));
        }
        let test = round_half_up(TEST_SHARE * total as f64);
        let train = total - test.min(total);
        let labelled = round_half_up(labelled_fraction * train as f64).min(train);
        let validation = round_half_up(VALIDATION_SHARE * labelled as f64);
        let sizes = Self {
            test,
            train,
            labelled,
            validation,
        };
        let unlabelled_ok = sizes.unlabelled() > 0 || labelled_fraction == 1.0;
        if test == 0 || validation == 0 || sizes.labelled_train() == 0 || !unlabelled_ok {
            return Err(DatasetError::TooFewSamples(format!(
                "{total} samples at labelled fraction {labelled_fraction} give {sizes:?}; every pool must be nonempty"
            )));
        }
        Ok(sizes)
    }

    pub fn labelled_train(&self) -> usize {
        self.labelled - self.validation
    }

    pub fn unlabelled(&self) -> usize {
        self.train - self.labelled
    }
}

/// Interleaves two lists: a0, b0, a1, b1, ... then the leftovers.
fn interleave<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut a = a.into_iter();
    let mut b = b.into_iter();
    loop {
        match (a.next(), b.next()) {
            (None, None) => return out,
            (x, y) => out.extend(x.into_iter().chain(y)),
        }
    }
}

/// Seeded partition into test, validation, labelled and unlabelled training
/// pools. The labelled pool (and the validation share inside it) is
/// class-stratified; only labelled samples are eligible for test, validation
/// and labelled training.
pub fn partition_dataset(samples: &[Sample], labelled_fraction: f64, seed: u64) -> Result<DatasetSplit, DatasetError> {
    let sizes = PoolSizes::compute(samples.len(), labelled_fraction)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (with_label, without): (Vec<usize>, Vec<usize>) = order.into_iter().partition(|&i| samples[i].label().is_some());
    if with_label.len() < sizes.test + sizes.labelled {
        return Err(DatasetError::TooFewSamples(format!(
            "need {} labelled samples for test and labelled pools, corpus has {}",
            sizes.test + sizes.labelled,
            with_label.len()
        )));
    }
    let test: Vec<Sample> = with_label[..sizes.test].iter().map(|&i| samples[i].clone()).collect();
    let rest = &with_label[sizes.test..];

    let (covid, healthy): (Vec<usize>, Vec<usize>) = rest.iter().partition(|&&i| samples[i].label() == Some(Label::Covid));
    let want_covid = sizes.labelled.div_ceil(2).min(covid.len());
    let want_healthy = (sizes.labelled - want_covid).min(healthy.len());
    let want_covid = sizes.labelled - want_healthy;
    let labelled = interleave(covid[..want_covid].to_vec(), healthy[..want_healthy].to_vec());
    let picked: std::collections::HashSet<usize> = labelled.iter().copied().collect();

    let validation = labelled[..sizes.validation].iter().map(|&i| samples[i].clone()).collect();
    let train_labelled = labelled[sizes.validation..].iter().map(|&i| samples[i].clone()).collect();
    let train_unlabelled = rest
        .iter()
        .filter(|i| !picked.contains(i))
        .chain(&without)
        .map(|&i| samples[i].unlabelled())
        .collect();
    Ok(DatasetSplit {
        train_unlabelled,
        train_labelled,
        validation,
        test,
        seed,
    })
}
