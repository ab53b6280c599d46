//! Binary Gaussian-process classification with a logistic likelihood and the
//! Laplace approximation.

use std::fs;
use std::num::NonZeroUsize;
use std::path::Path;

use gauss_quad::hermite::GaussHermite;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::BaselineError;
use crate::tensor::logistic;

const MAX_NEWTON: usize = 100;
const NEWTON_TOL: f64 = 1e-8;
const MAX_JITTER: f64 = 1e-6;
const QUADRATURE_NODES: usize = 20;
const MAGIC: &[u8; 4] = b"SGPM";
const VERSION: u32 = 1;

/// Kernel hyperparameters: signal std, noise std and a shared length-scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyper {
    pub sigma_f: f64,
    pub sigma_n: f64,
    pub length: f64,
}

impl GpHyper {
    pub fn new(sigma_f: f64, sigma_n: f64, length: f64) -> Result<Self, BaselineError> {
        let h = Self {
            sigma_f,
            sigma_n,
            length,
        };
        h.validate()?;
        Ok(h)
    }

    fn validate(&self) -> Result<(), BaselineError> {
        if !(self.sigma_f > 0.0 && self.sigma_f.is_finite()) {
            return Err(BaselineError::Hyper(format!("sigma_f must be positive, got {}", self.sigma_f)));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(BaselineError::Hyper(format!("length-scale must be positive, got {}", self.length)));
        }
        if !(self.sigma_n >= 0.0 && self.sigma_n.is_finite()) {
            return Err(BaselineError::Hyper(format!("sigma_n must be nonnegative, got {}", self.sigma_n)));
        }
        Ok(())
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared-exponential covariance between inputs `i` and `j`. The noise term
/// is added when the indices match, whatever the vectors hold.
pub fn se_kernel(ti: &[f64], tj: &[f64], i: usize, j: usize, hyper: &GpHyper) -> Result<f64, BaselineError> {
    hyper.validate()?;
    if ti.len() != tj.len() {
        return Err(BaselineError::Dimension {
            expected: ti.len(),
            found: tj.len(),
        });
    }
    Ok(kernel_from_sq(squared_distance(ti, tj), i == j, hyper))
}

fn kernel_from_sq(sq: f64, same_index: bool, h: &GpHyper) -> f64 {
    let noise = if same_index { h.sigma_n * h.sigma_n } else { 0.0 };
    h.sigma_f * h.sigma_f * (-sq / (2.0 * h.length * h.length)).exp() + noise
}

/// Pairwise squared distances, computed once and shared by every grid point.
fn distance_matrix(x: &[Vec<f64>]) -> DMatrix<f64> {
    let n = x.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = squared_distance(&x[i], &x[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Covariance matrix over a training set.
pub fn kernel_matrix(x: &[Vec<f64>], hyper: &GpHyper) -> Result<DMatrix<f64>, BaselineError> {
    hyper.validate()?;
    check_inputs(x)?;
    Ok(kernel_from_distances(&distance_matrix(x), hyper))
}

fn kernel_from_distances(d: &DMatrix<f64>, hyper: &GpHyper) -> DMatrix<f64> {
    DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| kernel_from_sq(d[(i, j)], i == j, hyper))
}

/// Cholesky with diagonal jitter 1e-12, 1e-11, ... up to 1e-6 on failure.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, BaselineError> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let mut jitter = 1e-12;
    while jitter <= MAX_JITTER * (1.0 + 1e-9) {
        let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * jitter;
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(BaselineError::Cholesky)
}

fn check_inputs(x: &[Vec<f64>]) -> Result<usize, BaselineError> {
    let first = x.first().ok_or(BaselineError::EmptyTrainingSet)?;
    let d = first.len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(BaselineError::Dimension {
            expected: d,
            found: bad.len(),
        });
    }
    Ok(d)
}

fn check_labels(y: &[f64]) -> Result<(), BaselineError> {
    match y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        Some(&bad) => Err(BaselineError::BadLabel(bad)),
        None => Ok(()),
    }
}

fn log_likelihood(y: &DVector<f64>, f: &DVector<f64>) -> f64 {
    // ln σ(z) = −ln(1 + e^{−z}), evaluated stably.
    y.iter()
        .zip(f.iter())
        .map(|(y, f)| {
            let z = y * f;
            if z > 0.0 {
                -(-z).exp().ln_1p()
            } else {
                z - z.exp().ln_1p()
            }
        })
        .sum()
}

/// A fitted Laplace GP classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    pub hyper: GpHyper,
    pub x: Vec<Vec<f64>>,
    /// Labels in {−1, +1}.
    pub y: Vec<f64>,
    /// Posterior mode of the latent function at the training inputs.
    pub f_hat: Vec<f64>,
    /// Newton iterations used.
    pub iterations: usize,
    /// Laplace approximation of the log marginal likelihood.
    pub log_marginal: f64,
    sqrt_w: DVector<f64>,
    grad_loglik: DVector<f64>,
    /// Lower Cholesky factor of I + W½ K W½.
    factor: DMatrix<f64>,
}

struct NewtonState {
    f: DVector<f64>,
    a: DVector<f64>,
    psi: f64,
}

/// Locates the posterior mode by Newton's method on a = K⁻¹f, halving the
/// step whenever the log-posterior would drop.
pub fn gp_fit_laplace(x: &[Vec<f64>], y: &[f64], hyper: &GpHyper) -> Result<GpModel, BaselineError> {
    hyper.validate()?;
    check_inputs(x)?;
    check_labels(y)?;
    if x.len() != y.len() {
        return Err(BaselineError::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    fit_with_kernel(x, y, hyper, kernel_from_distances(&distance_matrix(x), hyper))
}

fn fit_with_kernel(x: &[Vec<f64>], y: &[f64], hyper: &GpHyper, k: DMatrix<f64>) -> Result<GpModel, BaselineError> {
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let targets = yv.map(|v| (v + 1.0) / 2.0);
    let psi = |a: &DVector<f64>, f: &DVector<f64>| -0.5 * a.dot(f) + log_likelihood(&yv, f);

    let mut state = NewtonState {
        f: DVector::zeros(n),
        a: DVector::zeros(n),
        psi: psi(&DVector::zeros(n), &DVector::zeros(n)),
    };
    let mut iterations = 0;
    while iterations < MAX_NEWTON {
        iterations += 1;
        let pi = state.f.map(logistic);
        let w = pi.map(|p| p * (1.0 - p));
        let sqrt_w = w.map(f64::sqrt);
        let grad = &targets - &pi;
        let b_mat = DMatrix::identity(n, n) + DMatrix::from_diagonal(&sqrt_w) * &k * DMatrix::from_diagonal(&sqrt_w);
        let chol = cholesky_with_jitter(&b_mat)?;
        let b = w.component_mul(&state.f) + &grad;
        let kb = &k * &b;
        let inner = chol.solve(&sqrt_w.component_mul(&kb));
        let a_full = &b - sqrt_w.component_mul(&inner);

        let mut step = 1.0;
        let next = loop {
            let a = &state.a + (&a_full - &state.a) * step;
            let f = &k * &a;
            let value = psi(&a, &f);
            if value >= state.psi || step < 1e-10 {
                break NewtonState { f, a, psi: value };
            }
            step /= 2.0;
        };
        let change = (&next.f - &state.f).amax();
        state = next;
        if change < NEWTON_TOL {
            break;
        }
    }

    let pi = state.f.map(logistic);
    let sqrt_w = pi.map(|p| (p * (1.0 - p)).sqrt());
    let grad_loglik = &targets - &pi;
    let b_mat = DMatrix::identity(n, n) + DMatrix::from_diagonal(&sqrt_w) * &k * DMatrix::from_diagonal(&sqrt_w);
    let chol = cholesky_with_jitter(&b_mat)?;
    let factor = chol.l();
    let log_det: f64 = factor.diagonal().iter().map(|v| v.ln()).sum();
    Ok(GpModel {
        hyper: *hyper,
        x: x.to_vec(),
        y: y.to_vec(),
        f_hat: state.f.iter().copied().collect(),
        iterations,
        log_marginal: state.psi - log_det,
        sqrt_w,
        grad_loglik,
        factor,
    })
}

impl GpModel {
    /// Mean and variance of the Laplace latent Gaussian at `x_star`.
    pub fn latent(&self, x_star: &[f64]) -> Result<(f64, f64), BaselineError> {
        let d = self.x[0].len();
        if x_star.len() != d {
            return Err(BaselineError::Dimension {
                expected: d,
                found: x_star.len(),
            });
        }
        let n = self.x.len();
        // x_star is a new index, distinct from every training index.
        let k_star = DVector::from_iterator(
            n,
            self.x.iter().map(|xi| kernel_from_sq(squared_distance(xi, x_star), false, &self.hyper)),
        );
        let mean = k_star.dot(&self.grad_loglik);
        let v = self
            .factor
            .solve_lower_triangular(&self.sqrt_w.component_mul(&k_star))
            .expect("factor diagonal is positive");
        let prior = kernel_from_sq(0.0, true, &self.hyper);
        Ok((mean, (prior - v.dot(&v)).max(0.0)))
    }
}

/// Averaged predictive probability of the positive class: σ(f*) integrated
/// against the latent Gaussian with 20-node Gauss–Hermite quadrature.
pub fn gp_predict(model: &GpModel, x_star: &[f64]) -> Result<f64, BaselineError> {
    let (mean, var) = model.latent(x_star)?;
    let rule = GaussHermite::new(NonZeroUsize::new(QUADRATURE_NODES).expect("nonzero"));
    let scale = (2.0 * var).sqrt();
    let p = rule.integrate(|t| logistic(mean + scale * t)) / std::f64::consts::PI.sqrt();
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// The grid point with the highest Laplace log marginal likelihood. Ties go
/// to the smallest length-scale, then the smallest noise.
pub fn gp_select_hyperparameters(x: &[Vec<f64>], y: &[f64], grid: &[GpHyper]) -> Result<(GpHyper, f64), BaselineError> {
    if grid.is_empty() {
        return Err(BaselineError::EmptyGrid);
    }
    check_inputs(x)?;
    check_labels(y)?;
    let distances = distance_matrix(x);
    let mut ordered = grid.to_vec();
    for h in &ordered {
        h.validate()?;
    }
    ordered.sort_by(|a, b| a.length.total_cmp(&b.length).then(a.sigma_n.total_cmp(&b.sigma_n)));
    let mut best: Option<(GpHyper, f64)> = None;
    for h in ordered {
        let score = fit_with_kernel(x, y, &h, kernel_from_distances(&distances, &h))?.log_marginal;
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((h, score));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

fn put_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], BaselineError> {
        if self.bytes.len() < n {
            return Err(BaselineError::Format("truncated GP model".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, BaselineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, BaselineError> {
        let len = n.checked_mul(8).ok_or_else(|| BaselineError::Format("size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl GpModel {
    /// Versioned little-endian encoding: hyperparameters, inputs, labels,
    /// mode, Newton byproducts and the Cholesky factor.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.x.len();
        let d = self.x[0].len();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(d as u64).to_le_bytes());
        out.extend_from_slice(&(self.iterations as u64).to_le_bytes());
        put_f64s(&mut out, [self.hyper.sigma_f, self.hyper.sigma_n, self.hyper.length, self.log_marginal]);
        put_f64s(&mut out, self.x.iter().flatten().copied());
        put_f64s(&mut out, self.y.iter().copied());
        put_f64s(&mut out, self.f_hat.iter().copied());
        put_f64s(&mut out, self.sqrt_w.iter().copied());
        put_f64s(&mut out, self.grad_loglik.iter().copied());
        put_f64s(&mut out, self.factor.iter().copied());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BaselineError> {
        let mut r = Reader { bytes };
        if r.take(4)? != MAGIC {
            return Err(BaselineError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(BaselineError::Format(format!("unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let d = r.u64()? as usize;
        let iterations = r.u64()? as usize;
        if n == 0 || n.checked_mul(d).is_none() || n.checked_mul(n).is_none() {
            return Err(BaselineError::Format(format!("bad sizes n={n} d={d}")));
        }
        let head = r.f64s(4)?;
        let hyper = GpHyper::new(head[0], head[1], head[2])?;
        let flat = r.f64s(n * d)?;
        let x = if d == 0 { vec![Vec::new(); n] } else { flat.chunks(d).map(<[f64]>::to_vec).collect() };
        let y = r.f64s(n)?;
        check_labels(&y)?;
        let f_hat = r.f64s(n)?;
        let sqrt_w = DVector::from_vec(r.f64s(n)?);
        let grad_loglik = DVector::from_vec(r.f64s(n)?);
        let factor = DMatrix::from_vec(n, n, r.f64s(n * n)?);
        if !r.bytes.is_empty() {
            return Err(BaselineError::Format("trailing bytes".into()));
        }
        Ok(Self {
            hyper,
            x,
            y,
            f_hat,
            iterations,
            log_marginal: head[3],
            sqrt_w,
            grad_loglik,
            factor,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BaselineError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
