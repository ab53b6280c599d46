//! Brute-force reference implementations shared by the oracle tests and the
//! acceptance suite.
#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sclld::baselines::{GpHyper, GpModel};
use sclld::dataset::Label;
use sclld::tensor::{Mode, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn extent(n: usize, stride: usize) -> usize {
    (n + stride - 1) / stride
}

/// Nested-loop padded 3×3 cross-correlation. `x` is B×C×H×W, `k` is Co×C×3×3.
#[allow(clippy::too_many_arguments)]
pub fn conv_direct(x: &[f64], b: usize, c: usize, h: usize, w: usize, k: &[f64], co: usize, bias: &[f64], s: usize) -> Vec<f64> {
    let (oh, ow) = (extent(h, s), extent(w, s));
    let mut out = vec![0.0; b * co * oh * ow];
    for n in 0..b {
        for o in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias[o];
                    for ci in 0..c {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (y * s + ky) as isize - 1;
                                let ix = (xo * s + kx) as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((n * c + ci) * h + iy as usize) * w + ix as usize];
                                acc += xv * k[((o * c + ci) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                    out[((n * co + o) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

/// Nested-loop scatter form of the transposed convolution. `x` is
/// B×Ci×H×W, `k` is Ci×Co×3×3, output B×Co×(H·s)×(W·s).
#[allow(clippy::too_many_arguments)]
pub fn tconv_direct(x: &[f64], b: usize, ci: usize, h: usize, w: usize, k: &[f64], co: usize, s: usize) -> Vec<f64> {
    let (oh, ow) = (h * s, w * s);
    let mut out = vec![0.0; b * co * oh * ow];
    for n in 0..b {
        for i in 0..ci {
            for y in 0..h {
                for xi in 0..w {
                    let v = x[((n * ci + i) * h + y) * w + xi];
                    for o in 0..co {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let oy = (y * s + ky) as isize - 1;
                                let ox = (xi * s + kx) as isize - 1;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                out[((n * co + o) * oh + oy as usize) * ow + ox as usize] +=
                                    v * k[((i * co + o) * 3 + ky) * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy)]
enum Layer {
    Conv { c_out: usize, stride: usize },
    Tconv { c_out: usize, stride: usize },
    Leaky,
    Sigmoid,
    Dropout,
}

/// A random composite of conv, transposed conv, pointwise ops and eval-mode
/// dropout, closed by flatten → dense(1) → sigmoid → BCE.
#[derive(Debug, Clone)]
pub struct MicroNet {
    input_dims: Vec<usize>,
    layers: Vec<Layer>,
    /// Every parameter tensor, input image first.
    pub params: Vec<Tensor>,
    targets: Tensor,
}

pub const MAX_MICRO_PARAMS: usize = 200;

impl MicroNet {
    pub fn random(rng: &mut impl Rng) -> Self {
        loop {
            if let Some(net) = Self::try_random(rng) {
                return net;
            }
        }
    }

    fn try_random(rng: &mut impl Rng) -> Option<Self> {
        let batch = rng.gen_range(1..=2);
        let (mut c, mut h, mut w) = (rng.gen_range(1..=2), rng.gen_range(2..=5), rng.gen_range(2..=5));
        let input_dims = vec![batch, c, h, w];
        let mut params = vec![Tensor::new(input_dims.clone(), randn(rng, batch * c * h * w)).unwrap()];
        let mut layers = Vec::new();
        let depth = rng.gen_range(1..=4);
        for _ in 0..depth {
            let layer = match rng.gen_range(0..5) {
                0 => Layer::Conv { c_out: rng.gen_range(1..=2), stride: rng.gen_range(1..=2) },
                1 => Layer::Tconv { c_out: rng.gen_range(1..=2), stride: rng.gen_range(1..=2) },
                2 => Layer::Leaky,
                3 => Layer::Sigmoid,
                _ => Layer::Dropout,
            };
            match layer {
                Layer::Conv { c_out, stride } => {
                    params.push(Tensor::new(vec![c_out, c, 3, 3], scaled(rng, c_out * c * 9, 0.5)).unwrap());
                    params.push(Tensor::new(vec![c_out], scaled(rng, c_out, 0.5)).unwrap());
                    c = c_out;
                    h = extent(h, stride);
                    w = extent(w, stride);
                }
                Layer::Tconv { c_out, stride } => {
                    params.push(Tensor::new(vec![c, c_out, 3, 3], scaled(rng, c_out * c * 9, 0.5)).unwrap());
                    c = c_out;
                    h *= stride;
                    w *= stride;
                }
                _ => {}
            }
            layers.push(layer);
        }
        let features = c * h * w;
        params.push(Tensor::new(vec![1, features], scaled(rng, features, 0.5)).unwrap());
        params.push(Tensor::new(vec![1], scaled(rng, 1, 0.5)).unwrap());
        let count: usize = params[1..].iter().map(Tensor::len).sum();
        if count > MAX_MICRO_PARAMS {
            return None;
        }
        let targets = (0..batch).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
        Some(Self {
            input_dims,
            layers,
            params,
            targets: Tensor::new(vec![batch, 1], targets).unwrap(),
        })
    }

    /// Builds the graph; returns the loss and every leaky-ReLU input.
    fn build(&self, tape: &mut Tape, params: &[Tensor]) -> (Vec<Var>, Var, Vec<Var>) {
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let mut next = 1;
        let mut h = vars[0];
        let mut kinks = Vec::new();
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        for layer in &self.layers {
            h = match *layer {
                Layer::Conv { stride, .. } => {
                    next += 2;
                    tape.conv2d(h, vars[next - 2], vars[next - 1], stride).unwrap()
                }
                Layer::Tconv { stride, .. } => {
                    next += 1;
                    tape.conv2d_transpose(h, vars[next - 1], stride).unwrap()
                }
                Layer::Leaky => {
                    kinks.push(h);
                    tape.leaky_relu(h, 0.01).unwrap()
                }
                Layer::Sigmoid => tape.sigmoid(h).unwrap(),
                Layer::Dropout => tape.dropout(h, 0.5, Mode::Eval, &mut unused).unwrap(),
            };
        }
        let batch = self.input_dims[0];
        let features = tape.value(h).len() / batch;
        let flat = tape.reshape(h, &[batch, features]).unwrap();
        let logit = tape.dense(flat, vars[next], vars[next + 1]).unwrap();
        let p = tape.sigmoid(logit).unwrap();
        let loss = tape.bce_loss(p, &self.targets).unwrap();
        (vars, loss, kinks)
    }

    pub fn loss(&self, params: &[Tensor]) -> f64 {
        let mut tape = Tape::new();
        let (_, loss, _) = self.build(&mut tape, params);
        tape.value(loss).data()[0]
    }

    /// Analytic gradients plus the smallest |leaky-ReLU input| seen.
    pub fn gradients(&self) -> (Vec<Vec<f64>>, f64) {
        let mut tape = Tape::new();
        let (vars, loss, kinks) = self.build(&mut tape, &self.params);
        tape.backward(loss).unwrap();
        let grads = vars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect();
        let margin = kinks
            .iter()
            .flat_map(|k| tape.value(*k).data().iter().map(|x| x.abs()))
            .fold(f64::INFINITY, f64::min);
        (grads, margin)
    }

    /// Largest relative gap between autodiff and central differences, with
    /// relative error |a − n| / max(|a|, |n|, 1e-6).
    pub fn max_relative_error(&self, h: f64) -> f64 {
        let (grads, _) = self.gradients();
        let mut worst: f64 = 0.0;
        for (pi, grad) in grads.iter().enumerate() {
            for i in 0..grad.len() {
                let mut plus = self.params.clone();
                plus[pi].data_mut()[i] += h;
                let mut minus = self.params.clone();
                minus[pi].data_mut()[i] -= h;
                let numeric = (self.loss(&plus) - self.loss(&minus)) / (2.0 * h);
                let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((grad[i] - numeric).abs() / denom);
            }
        }
        worst
    }
}

fn scaled(rng: &mut impl Rng, n: usize, s: f64) -> Vec<f64> {
    randn(rng, n).into_iter().map(|v| v * s).collect()
}

/// Fraction of positive-negative pairs ranked correctly, ties counting ½.
pub fn mann_whitney(scores: &[f64], truths: &[Label]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, ti) in truths.iter().enumerate() {
        for (j, tj) in truths.iter().enumerate() {
            if *ti == Label::Covid && *tj == Label::Healthy {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn prior_cov(xs: &[f64], h: &GpHyper) -> Vec<Vec<f64>> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = xs[i] - xs[j];
                    let noise = if i == j { h.sigma_n * h.sigma_n } else { 0.0 };
                    h.sigma_f * h.sigma_f * (-d * d / (2.0 * h.length * h.length)).exp() + noise
                })
                .collect()
        })
        .collect()
}

fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

/// Exact posterior predictive P(y* = +1 | X, y) for 1-D inputs by
/// self-normalized Monte Carlo over the joint GP prior of (f, f*):
/// E[σ(f*) Π σ(y_i f_i)] / E[Π σ(y_i f_i)].
pub fn exact_predictive_mc(xs: &[f64], ys: &[f64], x_star: f64, h: &GpHyper, samples: usize, seed: u64) -> f64 {
    let mut all = xs.to_vec();
    all.push(x_star);
    let l = cholesky(&prior_cov(&all, h));
    let n = all.len();
    let mut rng = rng(seed);
    let (mut num, mut den) = (0.0, 0.0);
    let mut z = vec![0.0; n];
    let mut f = vec![0.0; n];
    for _ in 0..samples {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..n {
            f[i] = (0..=i).map(|k| l[i][k] * z[k]).sum();
        }
        let like: f64 = ys.iter().zip(&f).map(|(y, fi)| logistic(y * fi)).product();
        num += like * logistic(f[n - 1]);
        den += like;
    }
    num / den
}

/// ∫ σ(f) N(f | mean, var) df by the trapezoidal rule over mean ± 12 sd.
pub fn gaussian_sigmoid_grid(mean: f64, var: f64, points: usize) -> f64 {
    let sd = var.sqrt();
    if sd == 0.0 {
        return logistic(mean);
    }
    let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let step = (hi - lo) / (points - 1) as f64;
    let mut total = 0.0;
    for i in 0..points {
        let f = lo + i as f64 * step;
        let density = (-(f - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        let weight = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        total += weight * logistic(f) * density;
    }
    total * step
}

pub fn latent_of(model: &GpModel, x: f64) -> (f64, f64) {
    model.latent(&[x]).unwrap()
}
