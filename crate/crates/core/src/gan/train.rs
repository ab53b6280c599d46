use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabelledImages;
use crate::tensor::{bce_mean, Adam, AdamConfig, Mode, Tape, Tensor};

use super::{Discriminator, Generator, ModelError, Phase, Role, TrainedDiscriminator, IMAGE_DIMS};

/// Independent random streams derived from one seed.
pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const CNN_INIT: u64 = 4;
    pub const FINETUNE: u64 = 5;
}

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Adversarial iterations; one iteration = one discriminator update plus
    /// one generator update.
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub finetune_epochs_max: usize,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            batch_size: 32,
            lr_g: 1e-3,
            lr_d: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            finetune_epochs_max: 100,
            early_stop_patience: 5,
        }
    }
}

impl TrainConfig {
    pub const ITERATION_PRESETS: [usize; 3] = [3500, 4000, 4500];

    pub fn with_iterations(iterations: usize) -> Self {
        Self {
            iterations,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Config(what.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        if self.finetune_epochs_max == 0 || self.early_stop_patience == 0 {
            return bad("finetune_epochs_max and early_stop_patience must be positive");
        }
        Ok(())
    }

    fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Per-iteration losses of one adversarial step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    /// Mean BCE of D on the real batch against target 1.
    pub loss_real: f64,
    /// Mean BCE of D on the generated batch against target 0.
    pub loss_fake: f64,
    /// Mean BCE of D(G(z)) against target 1 after the discriminator update.
    pub loss_gen: f64,
    /// Minimax value `E[ln D(x)] + E[ln(1 − D(G(z)))]` before the update.
    pub objective: f64,
}

/// Minimax value of the adversarial game for the given discriminator
/// outputs on real and generated samples.
pub fn gan_objective(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let real = d_real.iter().map(|p| p.ln()).sum::<f64>() / d_real.len() as f64;
    let fake = d_fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / d_fake.len() as f64;
    real + fake
}

pub struct GanOptimizers {
    pub generator: Adam,
    pub discriminator: Adam,
}

impl GanOptimizers {
    pub fn new(gen: &Generator, disc: &Discriminator, config: &TrainConfig) -> Result<Self, ModelError> {
        Ok(Self {
            generator: Adam::new(config.adam(config.lr_g), gen.params().tensors())?,
            discriminator: Adam::new(config.adam(config.lr_d), disc.params().tensors())?,
        })
    }
}

/// One adversarial iteration on a B×1×100×100 batch of real images.
///
/// The discriminator is updated on real (target 1) and generated (target 0)
/// images; the generator is then updated with the non-saturating objective,
/// i.e. BCE of the refreshed D(G(z)) against target 1.
pub fn gan_train_step<R: Rng + ?Sized>(
    real_batch: &Tensor,
    gen: &mut Generator,
    disc: &mut Discriminator,
    opts: &mut GanOptimizers,
    rng: &mut R,
) -> Result<StepLosses, ModelError> {
    let batch = match real_batch.dims() {
        &[b, 1, 100, 100] if b > 0 => b,
        dims => {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "gan_train_step",
                detail: format!("real batch must be B×1×100×100, got {dims:?}"),
            }
            .into())
        }
    };
    let noise = Generator::sample_noise(batch, rng);
    let mut gen_tape = Tape::new();
    let gen_bound = gen.bind(&mut gen_tape, true);
    let z = gen_tape.constant(noise);
    let fake_var = Generator::forward(&mut gen_tape, &gen_bound, z)?;
    let fake = gen_tape.value(fake_var).clone();

    // Discriminator update.
    let ones = Tensor::filled(&[batch, 1], 1.0);
    let zeros = Tensor::zeros(&[batch, 1]);
    let (loss_real, loss_fake, objective) = {
        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape, true);
        let x_real = tape.constant(real_batch.clone());
        let x_fake = tape.constant(fake.clone());
        let out_real = Discriminator::forward(&mut tape, &bound, x_real, Mode::Train, rng)?;
        let out_fake = Discriminator::forward(&mut tape, &bound, x_fake, Mode::Train, rng)?;
        let l_real = tape.bce_loss(out_real.probability, &ones)?;
        let l_fake = tape.bce_loss(out_fake.probability, &zeros)?;
        let total = tape.add(l_real, l_fake)?;
        tape.backward(total)?;
        let objective = gan_objective(
            tape.value(out_real.probability).data(),
            tape.value(out_fake.probability).data(),
        );
        let losses = (tape.value(l_real).data()[0], tape.value(l_fake).data()[0], objective);
        let grads = bound.grads(&tape);
        opts.discriminator.step(disc.params_mut().tensors_mut(), &grads)?;
        losses
    };

    // Generator update through the refreshed, frozen discriminator.
    let loss_gen = {
        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape, false);
        let x_fake = tape.param(fake);
        let out = Discriminator::forward(&mut tape, &bound, x_fake, Mode::Train, rng)?;
        let loss = tape.bce_loss(out.probability, &ones)?;
        tape.backward(loss)?;
        let seed = tape.grad(x_fake).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(x_fake).len()]);
        gen_tape.backward_from(fake_var, &seed)?;
        let grads = gen_bound.grads(&gen_tape);
        opts.generator.step(gen.params_mut().tensors_mut(), &grads)?;
        tape.value(loss).data()[0]
    };

    Ok(StepLosses {
        loss_real,
        loss_fake,
        loss_gen,
        objective,
    })
}

/// One row of the phase-1 loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss_real: f64,
    pub loss_fake: f64,
    pub loss_gen: f64,
}

pub struct Phase1Outcome {
    pub discriminator: TrainedDiscriminator,
    pub generator: Generator,
    pub curve: Vec<IterationRecord>,
}

/// Fresh generator and discriminator, N(0, 0.02) weights and zero biases.
pub fn init_models(seed: u64) -> (Generator, Discriminator) {
    let mut rng = seeded(seed, stream::INIT);
    let gen = Generator::init(&mut rng);
    let disc = Discriminator::init(&mut rng);
    (gen, disc)
}

/// Stacks 1×100×100 images into a B×1×100×100 batch.
pub(crate) fn stack<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        data.extend_from_slice(img.data());
        n += 1;
    }
    Tensor::new(vec![n, IMAGE_DIMS[0], IMAGE_DIMS[1], IMAGE_DIMS[2]], data).expect("stacked images share one shape")
}

/// Cycles through a pool in minibatches, reshuffling whenever a pass ends.
struct BatchCycler {
    order: Vec<usize>,
    pos: usize,
}

impl BatchCycler {
    fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next<R: Rng + ?Sized>(&mut self, batch: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Phase 1: adversarial training on an image pool that carries no labels.
///
/// `on_iteration` sees every loss record as it is produced.
pub fn unsupervised_train(
    pool: &[Tensor],
    config: &TrainConfig,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<Phase1Outcome, ModelError> {
    config.validate()?;
    if pool.is_empty() {
        return Err(ModelError::EmptyPool);
    }
    if let Some(bad) = pool.iter().find(|t| t.dims() != IMAGE_DIMS) {
        return Err(crate::tensor::TensorError::ShapeMismatch {
            op: "unsupervised_train",
            detail: format!("pool images must be 1×100×100, found {:?}", bad.dims()),
        }
        .into());
    }
    let (mut gen, mut disc) = init_models(config.seed);
    let mut opts = GanOptimizers::new(&gen, &disc, config)?;
    let mut batch_rng = seeded(config.seed, stream::BATCHES);
    let mut step_rng = seeded(config.seed, stream::NOISE);
    let mut cycler = BatchCycler::new(pool.len());
    let mut curve = Vec::with_capacity(config.iterations);
    for iteration in 1..=config.iterations {
        let idx = cycler.next(config.batch_size, &mut batch_rng);
        let batch = stack(idx.iter().map(|&i| &pool[i]));
        let losses = gan_train_step(&batch, &mut gen, &mut disc, &mut opts, &mut step_rng)?;
        let record = IterationRecord {
            iteration,
            loss_real: losses.loss_real,
            loss_fake: losses.loss_fake,
            loss_gen: losses.loss_gen,
        };
        on_iteration(&record);
        curve.push(record);
    }
    Ok(Phase1Outcome {
        discriminator: TrainedDiscriminator {
            network: disc,
            phase: Phase::Phase1,
            role: Role::Discriminator,
        },
        generator: gen,
        curve,
    })
}

/// Verdict after observing one epoch's validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once validation loss has not strictly improved for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> EarlyStopDecision {
        match self.best {
            Some((_, best)) if val_loss >= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    EarlyStopDecision::Stop
                } else {
                    EarlyStopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, val_loss));
                self.stale = 0;
                EarlyStopDecision::Improved
            }
        }
    }

    /// Epoch (1-based) with the lowest validation loss so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// One row of a supervised loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

pub struct FinetuneOutcome {
    pub model: TrainedDiscriminator,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
}

const EVAL_BATCH: usize = 64;

/// Mean BCE and accuracy of `network` over a labelled set, dropout off.
pub(crate) fn evaluate(network: &Discriminator, set: &LabelledImages) -> Result<(f64, f64, Vec<f64>), ModelError> {
    let mut probs = Vec::with_capacity(set.len());
    for chunk in set.images.chunks(EVAL_BATCH) {
        probs.extend(network.probabilities(&stack(chunk))?);
    }
    let targets = set.targets();
    let loss = bce_mean(&probs, &targets);
    let correct = probs
        .iter()
        .zip(&targets)
        .filter(|(p, t)| (**p > 0.5) == (**t > 0.5))
        .count();
    Ok((loss, correct as f64 / set.len() as f64, probs))
}

/// Supervised BCE training of a discriminator-shaped network with early
/// stopping on validation loss. Returns the best-validation weights.
pub fn train_classifier(
    init: Discriminator,
    role: Role,
    train: &LabelledImages,
    validation: &LabelledImages,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FinetuneOutcome, ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::NoLabelledSamples);
    }
    if validation.is_empty() {
        return Err(ModelError::NoValidationSamples);
    }
    let mut network = init;
    let mut adam = Adam::new(config.adam(config.lr_d), network.params().tensors())?;
    let mut rng = seeded(config.seed, stream::FINETUNE);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let targets = train.targets();
    let mut stopper = EarlyStopping::new(config.early_stop_patience);
    let mut best = network.clone();
    let mut curve = Vec::new();
    for epoch in 1..=config.finetune_epochs_max {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch = stack(idx.iter().map(|&i| &train.images[i]));
            let target = Tensor::new(vec![idx.len(), 1], idx.iter().map(|&i| targets[i]).collect())?;
            let mut tape = Tape::new();
            let bound = network.bind(&mut tape, true);
            let x = tape.constant(batch);
            let out = Discriminator::forward(&mut tape, &bound, x, Mode::Train, &mut rng)?;
            let loss = tape.bce_loss(out.probability, &target)?;
            tape.backward(loss)?;
            loss_sum += tape.value(loss).data()[0] * idx.len() as f64;
            let grads = bound.grads(&tape);
            adam.step(network.params_mut().tensors_mut(), &grads)?;
        }
        let (_, train_accuracy, _) = evaluate(&network, train)?;
        let (val_loss, val_accuracy, _) = evaluate(&network, validation)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            train_accuracy,
            val_accuracy,
        };
        on_epoch(&record);
        curve.push(record);
        match stopper.observe(epoch, val_loss) {
            EarlyStopDecision::Improved => best = network.clone(),
            EarlyStopDecision::Continue => {}
            EarlyStopDecision::Stop => break,
        }
    }
    Ok(FinetuneOutcome {
        model: TrainedDiscriminator {
            network: best,
            phase: Phase::Phase2,
            role,
        },
        best_epoch: stopper.best_epoch().unwrap_or(0),
        curve,
    })
}

/// Phase 2: every discriminator weight, head included, is trained on the
/// labelled pool starting from the phase-1 weights.
pub fn supervised_finetune(
    phase1: &TrainedDiscriminator,
    train: &LabelledImages,
    validation: &LabelledImages,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<FinetuneOutcome, ModelError> {
    train_classifier(
        phase1.network.clone(),
        Role::Discriminator,
        train,
        validation,
        config,
        on_epoch,
    )
}
