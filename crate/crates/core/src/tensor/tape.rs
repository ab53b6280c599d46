use rand::Rng;

use super::conv::{Geometry, KERNEL};
use super::gemm::gemm;
use super::{arg_err, shape_err, Tensor, TensorError};

/// Lower clamp for probabilities fed to the binary cross-entropy.
pub const BCE_EPSILON: f64 = 1e-7;

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: Geometry,
        batch: usize,
        cols: Vec<f64>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        geometry: Geometry,
        batch: usize,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
        batch: usize,
    },
    LeakyRelu {
        input: Var,
        alpha: f64,
    },
    Sigmoid {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    Bce {
        prediction: Var,
        target: Vec<f64>,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Reshape {
        input: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Records operations in execution order so gradients can be pulled back
/// through them. Nodes only ever reference earlier nodes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn add_into(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
        None => *slot = Some(contribution),
    }
}

/// Splits a (N×)C×H×W shape into (batch, C, H, W).
fn image_dims(op: &'static str, dims: &[usize]) -> Result<(usize, usize, usize, usize), TensorError> {
    match *dims {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(shape_err(op, format!("expected C×H×W or N×C×H×W input, got {dims:?}"))),
    }
}

fn check_stride(op: &'static str, stride: usize) -> Result<(), TensorError> {
    if stride == 1 || stride == 2 {
        Ok(())
    } else {
        Err(arg_err(op, format!("stride must be 1 or 2, got {stride}")))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, var: Var) -> Result<&Node, TensorError> {
        self.nodes.get(var.0).ok_or(TensorError::UnknownVar(var.0))
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf treated as a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Accumulated gradient of `var`, if any backward pass reached it.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.nodes.get(var.0)?.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Padded 3×3 convolution (cross-correlation) with stride 1 or 2.
    ///
    /// `kernel` is C_out×C_in×3×3, `bias` has C_out entries. Output extents are
    /// `ceil(extent / stride)`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var, TensorError> {
        const OP: &str = "conv2d";
        check_stride(OP, stride)?;
        let (batch, channels, height, width) = image_dims(OP, self.node(input)?.value.dims())?;
        let kdims = self.node(kernel)?.value.dims().to_vec();
        let [c_out, c_in, kh, kw] = kdims[..] else {
            return Err(shape_err(OP, format!("kernel must be C_out×C_in×3×3, got {kdims:?}")));
        };
        if kh != KERNEL || kw != KERNEL {
            return Err(arg_err(OP, format!("kernel must be 3×3, got {kh}×{kw}")));
        }
        if c_in != channels {
            return Err(shape_err(OP, format!("kernel expects {c_in} input channels, input has {channels}")));
        }
        if self.node(bias)?.value.len() != c_out {
            return Err(shape_err(OP, format!("bias needs {c_out} entries")));
        }

        let geometry = Geometry::new(channels, height, width, stride);
        let rows = geometry.rows();
        let positions = geometry.positions();
        let mut cols = vec![0.0; batch * rows * positions];
        let mut out = vec![0.0; batch * c_out * positions];
        {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            let b = self.value(bias).data();
            for n in 0..batch {
                let cols_n = &mut cols[n * rows * positions..(n + 1) * rows * positions];
                geometry.im2col(&x[n * geometry.image_len()..(n + 1) * geometry.image_len()], cols_n);
                let out_n = &mut out[n * c_out * positions..(n + 1) * c_out * positions];
                gemm(c_out, rows, positions, k, false, cols_n, false, out_n, false);
                for (co, plane) in out_n.chunks_exact_mut(positions).enumerate() {
                    plane.iter_mut().for_each(|v| *v += b[co]);
                }
            }
        }
        let mut dims = vec![c_out, geometry.out_height, geometry.out_width];
        if self.value(input).dims().len() == 4 {
            dims.insert(0, batch);
        }
        let requires = self.requires(input) || self.requires(kernel) || self.requires(bias);
        Ok(self.push(
            Tensor { dims, data: out },
            requires,
            Op::Conv2d { input, kernel, bias, geometry, batch, cols },
        ))
    }

    /// Exact adjoint of [`Tape::conv2d`] with the same stride and padding:
    /// maps C_in×H×W to C_out×(H·stride)×(W·stride). `kernel` is C_in×C_out×3×3.
    pub fn conv2d_transpose(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var, TensorError> {
        const OP: &str = "conv2d_transpose";
        check_stride(OP, stride)?;
        let (batch, channels, height, width) = image_dims(OP, self.node(input)?.value.dims())?;
        let kdims = self.node(kernel)?.value.dims().to_vec();
        let [c_in, c_out, kh, kw] = kdims[..] else {
            return Err(shape_err(OP, format!("kernel must be C_in×C_out×3×3, got {kdims:?}")));
        };
        if kh != KERNEL || kw != KERNEL {
            return Err(arg_err(OP, format!("kernel must be 3×3, got {kh}×{kw}")));
        }
        if c_in != channels {
            return Err(shape_err(OP, format!("kernel expects {c_in} input channels, input has {channels}")));
        }
        // The forward conv runs over the upsampled grid and lands back on H×W.
        let geometry = Geometry::new(c_out, height * stride, width * stride, stride);
        debug_assert_eq!(geometry.positions(), height * width);
        let positions = height * width;
        let rows = geometry.rows();
        let mut out = vec![0.0; batch * geometry.image_len()];
        {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            let mut cols = vec![0.0; rows * positions];
            for n in 0..batch {
                let x_n = &x[n * c_in * positions..(n + 1) * c_in * positions];
                gemm(rows, c_in, positions, k, true, x_n, false, &mut cols, false);
                geometry.col2im(&cols, &mut out[n * geometry.image_len()..(n + 1) * geometry.image_len()]);
            }
        }
        let mut dims = vec![c_out, height * stride, width * stride];
        if self.value(input).dims().len() == 4 {
            dims.insert(0, batch);
        }
        let requires = self.requires(input) || self.requires(kernel);
        Ok(self.push(
            Tensor { dims, data: out },
            requires,
            Op::ConvTranspose2d { input, kernel, geometry, batch },
        ))
    }

    /// `weights · input + bias`; a 2-D input is treated as a batch of rows.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        const OP: &str = "dense";
        let in_dims = self.node(input)?.value.dims().to_vec();
        let wdims = self.node(weight)?.value.dims().to_vec();
        let [m, n] = wdims[..] else {
            return Err(shape_err(OP, format!("weights must be M×N, got {wdims:?}")));
        };
        let (batch, features) = match in_dims[..] {
            [f] => (1, f),
            [b, f] => (b, f),
            _ => return Err(shape_err(OP, format!("input must be N or B×N, got {in_dims:?}"))),
        };
        if features != n {
            return Err(shape_err(OP, format!("weights take {n} features, input has {features}")));
        }
        if self.node(bias)?.value.len() != m {
            return Err(shape_err(OP, format!("bias needs {m} entries")));
        }
        let mut out = vec![0.0; batch * m];
        {
            let x = self.value(input).data();
            let w = self.value(weight).data();
            let b = self.value(bias).data();
            gemm(batch, n, m, x, false, w, true, &mut out, false);
            for row in out.chunks_exact_mut(m) {
                row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            }
        }
        let dims = if in_dims.len() == 1 { vec![m] } else { vec![batch, m] };
        let requires = self.requires(input) || self.requires(weight) || self.requires(bias);
        Ok(self.push(Tensor { dims, data: out }, requires, Op::Dense { input, weight, bias, batch }))
    }

    /// Elementwise `max(x, αx)`; the slope at exactly zero is α.
    pub fn leaky_relu(&mut self, input: Var, alpha: f64) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(arg_err("leaky_relu", format!("alpha must lie in [0, 1), got {alpha}")));
        }
        let node = self.node(input)?;
        let data = node
            .value
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { alpha * x })
            .collect();
        let value = Tensor { dims: node.value.dims().to_vec(), data };
        let requires = node.requires_grad;
        Ok(self.push(value, requires, Op::LeakyRelu { input, alpha }))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var, TensorError> {
        let node = self.node(input)?;
        let data = node.value.data().iter().map(|&x| logistic(x)).collect();
        let value = Tensor { dims: node.value.dims().to_vec(), data };
        let requires = node.requires_grad;
        Ok(self.push(value, requires, Op::Sigmoid { input }))
    }

    /// Inverted dropout. In [`Mode::Eval`] (or with rate 0) the input is
    /// returned untouched.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(arg_err("dropout", format!("rate must lie in [0, 1), got {rate}")));
        }
        let node = self.node(input)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..node.value.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = node.value.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor { dims: node.value.dims().to_vec(), data };
        let requires = node.requires_grad;
        Ok(self.push(value, requires, Op::Dropout { input, mask }))
    }

    /// Mean binary cross-entropy. Predictions are clamped to
    /// `[BCE_EPSILON, 1 - BCE_EPSILON]` so the loss stays finite.
    pub fn bce_loss(&mut self, prediction: Var, target: &Tensor) -> Result<Var, TensorError> {
        const OP: &str = "bce_loss";
        let node = self.node(prediction)?;
        if node.value.dims() != target.dims() {
            return Err(shape_err(
                OP,
                format!("prediction {:?} vs target {:?}", node.value.dims(), target.dims()),
            ));
        }
        if target.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(arg_err(OP, "targets must lie in [0, 1]"));
        }
        let loss = bce_mean(node.value.data(), target.data());
        let requires = node.requires_grad;
        Ok(self.push(
            Tensor::scalar(loss),
            requires,
            Op::Bce { prediction, target: target.data().to_vec() },
        ))
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var, TensorError> {
        let (a, b) = (&self.node(lhs)?.value, &self.node(rhs)?.value);
        if a.dims() != b.dims() {
            return Err(shape_err("add", format!("{:?} vs {:?}", a.dims(), b.dims())));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor { dims: a.dims().to_vec(), data };
        let requires = self.requires(lhs) || self.requires(rhs);
        Ok(self.push(value, requires, Op::Add { lhs, rhs }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var, TensorError> {
        let node = self.node(input)?;
        let data = node.value.data().iter().map(|x| x * factor).collect();
        let value = Tensor { dims: node.value.dims().to_vec(), data };
        let requires = node.requires_grad;
        Ok(self.push(value, requires, Op::Scale { input, factor }))
    }

    pub fn reshape(&mut self, input: Var, dims: &[usize]) -> Result<Var, TensorError> {
        let node = self.node(input)?;
        let value = node.value.clone().reshape(dims)?;
        let requires = node.requires_grad;
        Ok(self.push(value, requires, Op::Reshape { input }))
    }

    /// Reverse pass from a scalar loss. Gradients add onto whatever earlier
    /// passes left behind; call [`Tape::zero_grad`] to start fresh.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let dims = self.node(loss)?.value.dims().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(dims));
        }
        self.backward_from(loss, &[1.0])
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `output`.
    pub fn backward_from(&mut self, output: Var, seed: &[f64]) -> Result<(), TensorError> {
        let node = self.node(output)?;
        if node.value.len() != seed.len() {
            return Err(shape_err(
                "backward",
                format!("seed has {} entries, output has {}", seed.len(), node.value.len()),
            ));
        }
        let mut upstream: Vec<Option<Vec<f64>>> = Vec::new();
        upstream.resize_with(output.0 + 1, || None);
        upstream[output.0] = Some(seed.to_vec());
        for index in (0..=output.0).rev() {
            let Some(grad) = upstream[index].take() else {
                continue;
            };
            if !self.nodes[index].requires_grad {
                continue;
            }
            self.propagate(index, &grad, &mut upstream);
            add_into(&mut self.nodes[index].grad, grad);
        }
        Ok(())
    }

    fn propagate(&self, index: usize, grad: &[f64], upstream: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[index];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, geometry, batch, cols } => {
                let c_out = self.value(*kernel).dims()[0];
                let rows = geometry.rows();
                let positions = geometry.positions();
                let k = self.value(*kernel).data();
                if self.requires(*kernel) {
                    let mut dk = vec![0.0; c_out * rows];
                    for n in 0..*batch {
                        let g_n = &grad[n * c_out * positions..(n + 1) * c_out * positions];
                        let cols_n = &cols[n * rows * positions..(n + 1) * rows * positions];
                        gemm(c_out, positions, rows, g_n, false, cols_n, true, &mut dk, true);
                    }
                    add_into(&mut upstream[kernel.0], dk);
                }
                if self.requires(*bias) {
                    let mut db = vec![0.0; c_out];
                    for (i, plane) in grad.chunks_exact(positions).enumerate() {
                        db[i % c_out] += plane.iter().sum::<f64>();
                    }
                    add_into(&mut upstream[bias.0], db);
                }
                if self.requires(*input) {
                    let mut dx = vec![0.0; batch * geometry.image_len()];
                    let mut dcols = vec![0.0; rows * positions];
                    for n in 0..*batch {
                        let g_n = &grad[n * c_out * positions..(n + 1) * c_out * positions];
                        gemm(rows, c_out, positions, k, true, g_n, false, &mut dcols, false);
                        geometry.col2im(
                            &dcols,
                            &mut dx[n * geometry.image_len()..(n + 1) * geometry.image_len()],
                        );
                    }
                    add_into(&mut upstream[input.0], dx);
                }
            }
            Op::ConvTranspose2d { input, kernel, geometry, batch } => {
                let c_in = self.value(*kernel).dims()[0];
                let rows = geometry.rows();
                let positions = geometry.positions();
                let need_k = self.requires(*kernel);
                let need_x = self.requires(*input);
                let x = self.value(*input).data();
                let k = self.value(*kernel).data();
                let mut cols = vec![0.0; rows * positions];
                let mut dk = if need_k { vec![0.0; c_in * rows] } else { Vec::new() };
                let mut dx = if need_x { vec![0.0; batch * c_in * positions] } else { Vec::new() };
                for n in 0..*batch {
                    let g_n = &grad[n * geometry.image_len()..(n + 1) * geometry.image_len()];
                    geometry.im2col(g_n, &mut cols);
                    if need_k {
                        let x_n = &x[n * c_in * positions..(n + 1) * c_in * positions];
                        gemm(c_in, positions, rows, x_n, false, &cols, true, &mut dk, true);
                    }
                    if need_x {
                        let dx_n = &mut dx[n * c_in * positions..(n + 1) * c_in * positions];
                        gemm(c_in, rows, positions, k, false, &cols, false, dx_n, false);
                    }
                }
                if need_k {
                    add_into(&mut upstream[kernel.0], dk);
                }
                if need_x {
                    add_into(&mut upstream[input.0], dx);
                }
            }
            Op::Dense { input, weight, bias, batch } => {
                let wdims = self.value(*weight).dims();
                let (m, n) = (wdims[0], wdims[1]);
                if self.requires(*input) {
                    let mut dx = vec![0.0; batch * n];
                    gemm(*batch, m, n, grad, false, self.value(*weight).data(), false, &mut dx, false);
                    add_into(&mut upstream[input.0], dx);
                }
                if self.requires(*weight) {
                    let mut dw = vec![0.0; m * n];
                    gemm(m, *batch, n, grad, true, self.value(*input).data(), false, &mut dw, false);
                    add_into(&mut upstream[weight.0], dw);
                }
                if self.requires(*bias) {
                    let mut db = vec![0.0; m];
                    for row in grad.chunks_exact(m) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    add_into(&mut upstream[bias.0], db);
                }
            }
            Op::LeakyRelu { input, alpha } => {
                let x = self.value(*input).data();
                let dx = grad
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { alpha * g })
                    .collect();
                add_into(&mut upstream[input.0], dx);
            }
            Op::Sigmoid { input } => {
                let y = node.value.data();
                let dx = grad.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                add_into(&mut upstream[input.0], dx);
            }
            Op::Dropout { input, mask } => {
                let dx = grad.iter().zip(mask).map(|(g, m)| g * m).collect();
                add_into(&mut upstream[input.0], dx);
            }
            Op::Bce { prediction, target } => {
                let p = self.value(*prediction).data();
                let scale = grad[0] / p.len() as f64;
                let dp = p
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
                        scale * (p - t) / (p * (1.0 - p))
                    })
                    .collect();
                add_into(&mut upstream[prediction.0], dp);
            }
            Op::Add { lhs, rhs } => {
                if self.requires(*lhs) {
                    add_into(&mut upstream[lhs.0], grad.to_vec());
                }
                if self.requires(*rhs) {
                    add_into(&mut upstream[rhs.0], grad.to_vec());
                }
            }
            Op::Scale { input, factor } => {
                add_into(&mut upstream[input.0], grad.iter().map(|g| g * factor).collect());
            }
            Op::Reshape { input } => add_into(&mut upstream[input.0], grad.to_vec()),
        }
    }
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean clamped binary cross-entropy of `predictions` against `targets`.
pub fn bce_mean(predictions: &[f64], targets: &[f64]) -> f64 {
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    total / predictions.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_tape(x: f64) -> (Tape, Var) {
        let mut tape = Tape::new();
        let v = tape.param(Tensor::scalar(x));
        (tape, v)
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![3], vec![5.0, -2.0, 0.0]).unwrap());
        let y = tape.leaky_relu(x, 0.01).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, -0.02, 0.0]);
        assert!(tape.leaky_relu(x, 1.0).is_err());
    }

    #[test]
    fn leaky_relu_slope_at_zero_is_alpha() {
        let (mut tape, x) = scalar_tape(0.0);
        let y = tape.leaky_relu(x, 0.01).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.01]);
    }

    #[test]
    fn sigmoid_values_and_derivative() {
        let (mut tape, x) = scalar_tape(0.0);
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5]);
        tape.backward(y).unwrap();
        assert!((tape.grad(x).unwrap()[0] - 0.25).abs() < 1e-15);
        assert!((logistic(50.0) - 1.0).abs() < 1e-9);
        for x in [-3.7, -0.2, 0.9, 12.0] {
            assert!((logistic(x) + logistic(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bce_edge_values() {
        let mut tape = Tape::new();
        let one = Tensor::scalar(1.0);
        for (p, expect) in [(0.5, std::f64::consts::LN_2), (0.0, -BCE_EPSILON.ln())] {
            let v = tape.param(Tensor::scalar(p));
            let l = tape.bce_loss(v, &one).unwrap();
            assert!((tape.value(l).data()[0] - expect).abs() < 1e-9);
        }
        let v = tape.param(Tensor::scalar(1.0));
        let l = tape.bce_loss(v, &one).unwrap();
        let loss = tape.value(l).data()[0];
        assert!(loss.is_finite() && loss <= 1e-6);
        assert!(tape.bce_loss(v, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let x = tape.param(Tensor::filled(&[100_000], 1.0));
        assert_eq!(tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
        let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let data = tape.value(y).data();
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(data.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dense_identity_and_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![1.0, -2.0, 3.5]).unwrap());
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let w = tape.param(eye);
        let b = tape.param(Tensor::zeros(&[3]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let w0 = tape.param(Tensor::zeros(&[2, 3]));
        let b2 = tape.param(Tensor::new(vec![2], vec![0.25, -4.0]).unwrap());
        let y = tape.dense(x, w0, b2).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, -4.0]);
        assert!(tape.dense(x, w0, b).is_err());
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_vars() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(TensorError::NonScalarLoss(_))));
        assert!(matches!(tape.backward(Var(99)), Err(TensorError::UnknownVar(99))));
    }

    #[test]
    fn constant_loss_leaves_params_without_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::filled(&[2, 2], 0.3));
        let c = tape.constant(Tensor::scalar(0.4));
        let p = tape.sigmoid(c).unwrap();
        let l = tape.bce_loss(p, &Tensor::scalar(1.0)).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(w).unwrap_or(&[0.0; 4]).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let (mut tape, x) = scalar_tape(0.3);
        let h = tape.scale(x, 3.0).unwrap();
        let y = tape.sigmoid(h).unwrap();
        tape.backward(y).unwrap();
        let once = tape.grad(x).unwrap()[0];
        tape.backward(y).unwrap();
        assert!((tape.grad(x).unwrap()[0] - 2.0 * once).abs() < 1e-15);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 5, 5]));
        let k = tape.param(Tensor::zeros(&[4, 3, 3, 3]));
        let b = tape.param(Tensor::zeros(&[4]));
        assert!(tape.conv2d(x, k, b, 1).is_err());
        let k2 = tape.param(Tensor::zeros(&[4, 2, 3, 3]));
        assert!(tape.conv2d(x, k2, b, 3).is_err());
        assert!(tape.conv2d(x, k2, b, 2).is_ok());
        let k5 = tape.param(Tensor::zeros(&[4, 2, 5, 5]));
        assert!(tape.conv2d(x, k5, b, 1).is_err());
        let kt = tape.param(Tensor::zeros(&[3, 1, 3, 3]));
        assert!(tape.conv2d_transpose(x, kt, 2).is_err());
    }
}
