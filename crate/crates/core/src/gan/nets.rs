//! Generator and discriminator networks.
//!
//! Discriminator: 1×100×100 → conv(16, s2) → 16×50×50 → conv(32, s2) →
//! 32×25×25 → conv(64, s2) → 64×13×13 → flatten → dropout(0.5) → dense → 1.
//!
//! Generator: noise(100) → dense → 64×25×25 → tconv(32, s2) → 32×50×50 →
//! tconv(1, s2) → 1×100×100 → sigmoid.
//!
//! Hidden activations are leaky ReLU with slope 0.01.

use rand::Rng;

use crate::tensor::{Mode, Tape, Tensor, TensorError, Var};

use super::ParamSet;

pub const IMAGE_SIDE: usize = 100;
pub const NOISE_LEN: usize = 100;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const DROPOUT_RATE: f64 = 0.5;
pub const INIT_STD: f64 = 0.02;

const FEATURE_SIDE: usize = 13;
const FEATURE_CHANNELS: usize = 64;
const SEED_SIDE: usize = 25;
const SEED_CHANNELS: usize = 64;

/// Shape of one preprocessed input image.
pub const IMAGE_DIMS: [usize; 3] = [1, IMAGE_SIDE, IMAGE_SIDE];

/// Parameter tensors bound as leaves on a tape, in [`ParamSet`] order.
#[derive(Debug, Clone)]
pub struct Bound(pub Vec<Var>);

impl Bound {
    /// Gradients of every bound parameter, zero where none reached it.
    pub fn grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.0
            .iter()
            .map(|&v| match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tape.value(v).len()],
            })
            .collect()
    }
}

fn bind(params: &ParamSet, tape: &mut Tape, trainable: bool) -> Bound {
    Bound(
        params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect(),
    )
}

/// Nodes of interest from one discriminator forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DiscriminatorOutput {
    /// Activations of the last convolution layer, B×64×13×13.
    pub features: Var,
    /// Pre-sigmoid score, B×1.
    pub logit: Var,
    /// Sigmoid of the logit, B×1.
    pub probability: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    params: ParamSet,
}

impl Discriminator {
    /// Parameter names and shapes, in storage order.
    pub fn layout() -> Vec<(String, Vec<usize>)> {
        let mut layout = Vec::new();
        for (name, c_out, c_in) in [("conv1", 16, 1), ("conv2", 32, 16), ("conv3", 64, 32)] {
            layout.push((format!("{name}.weight"), vec![c_out, c_in, 3, 3]));
            layout.push((format!("{name}.bias"), vec![c_out]));
        }
        let flat = FEATURE_CHANNELS * FEATURE_SIDE * FEATURE_SIDE;
        layout.push(("head.weight".into(), vec![1, flat]));
        layout.push(("head.bias".into(), vec![1]));
        layout
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            params: ParamSet::init(&Self::layout(), rng),
        }
    }

    /// Wraps a parameter set, checking it has the expected names and shapes.
    pub fn from_params(params: ParamSet) -> Result<Self, TensorError> {
        params.check_layout(&Self::layout())?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        bind(&self.params, tape, trainable)
    }

    /// Runs the network on a B×1×100×100 (or 1×100×100) input.
    pub fn forward<R: Rng + ?Sized>(
        tape: &mut Tape,
        bound: &Bound,
        input: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<DiscriminatorOutput, TensorError> {
        let dims = tape.value(input).dims().to_vec();
        let batch = match dims[..] {
            [1, IMAGE_SIDE, IMAGE_SIDE] => 1,
            [b, 1, IMAGE_SIDE, IMAGE_SIDE] => b,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "discriminator",
                    detail: format!("expects 1×100×100 images, got {dims:?}"),
                })
            }
        };
        let p = &bound.0;
        let mut h = input;
        for layer in 0..3 {
            h = tape.conv2d(h, p[2 * layer], p[2 * layer + 1], 2)?;
            h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let features = h;
        let flat = tape.reshape(h, &[batch, FEATURE_CHANNELS * FEATURE_SIDE * FEATURE_SIDE])?;
        let dropped = tape.dropout(flat, DROPOUT_RATE, mode, rng)?;
        let logit = tape.dense(dropped, p[6], p[7])?;
        let probability = tape.sigmoid(logit)?;
        Ok(DiscriminatorOutput {
            features,
            logit,
            probability,
        })
    }

    /// Eval-mode probabilities for a batch of images, one per image.
    pub fn probabilities(&self, images: &Tensor) -> Result<Vec<f64>, TensorError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        // Eval mode never draws from the generator.
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = Self::forward(&mut tape, &bound, x, Mode::Eval, &mut rng)?;
        Ok(tape.value(out.probability).data().to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    params: ParamSet,
}

impl Generator {
    pub fn layout() -> Vec<(String, Vec<usize>)> {
        let seed_len = SEED_CHANNELS * SEED_SIDE * SEED_SIDE;
        vec![
            ("dense.weight".into(), vec![seed_len, NOISE_LEN]),
            ("dense.bias".into(), vec![seed_len]),
            ("tconv1.weight".into(), vec![SEED_CHANNELS, 32, 3, 3]),
            ("tconv2.weight".into(), vec![32, 1, 3, 3]),
        ]
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            params: ParamSet::init(&Self::layout(), rng),
        }
    }

    pub fn from_params(params: ParamSet) -> Result<Self, TensorError> {
        params.check_layout(&Self::layout())?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        bind(&self.params, tape, trainable)
    }

    /// Maps B×100 noise (or a single length-100 vector) to B×1×100×100 images.
    pub fn forward(tape: &mut Tape, bound: &Bound, noise: Var) -> Result<Var, TensorError> {
        let dims = tape.value(noise).dims().to_vec();
        let batch = match dims[..] {
            [NOISE_LEN] => 1,
            [b, NOISE_LEN] => b,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "generator",
                    detail: format!("expects noise of length {NOISE_LEN}, got {dims:?}"),
                })
            }
        };
        let p = &bound.0;
        let h = tape.dense(noise, p[0], p[1])?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = tape.reshape(h, &[batch, SEED_CHANNELS, SEED_SIDE, SEED_SIDE])?;
        let h = tape.conv2d_transpose(h, p[2], 2)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = tape.conv2d_transpose(h, p[3], 2)?;
        let out = tape.sigmoid(h)?;
        if dims.len() == 1 {
            tape.reshape(out, &IMAGE_DIMS)
        } else {
            Ok(out)
        }
    }

    /// Standard-normal noise, `batch`×100.
    pub fn sample_noise<R: Rng + ?Sized>(batch: usize, rng: &mut R) -> Tensor {
        Tensor::randn(&[batch, NOISE_LEN], 1.0, rng)
    }

    pub fn generate(&self, noise: &Tensor) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let z = tape.constant(noise.clone());
        let out = Self::forward(&mut tape, &bound, z)?;
        Ok(tape.value(out).clone())
    }
}
