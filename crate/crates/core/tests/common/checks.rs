//! Seeded measurement runs. Each returns the worst deviation it saw so the
//! oracle tests can assert and the acceptance suite can print it.

use rand::Rng;

use super::*;
use sclld::baselines::{cholesky_with_jitter, gp_fit_laplace, gp_predict, kernel_matrix};
use sclld::eval::{compute_metrics, roc_auc, ConfusionCounts};
use sclld::imaging::{sobel_gradients, sobel_magnitude, GrayImage};

fn conv_case(rng: &mut impl Rng) -> (usize, usize, usize, usize, usize, usize) {
    (
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(1..=7),
        rng.gen_range(1..=7),
        rng.gen_range(1..=3),
        rng.gen_range(1..=2),
    )
}

/// Max |tape − direct| over `cases` random conv2d cases; shape errors give ∞.
pub fn conv2d_worst(cases: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (b, c, h, w, co, s) = conv_case(&mut rng);
        let x = randn(&mut rng, b * c * h * w);
        let k = randn(&mut rng, co * c * 9);
        let bias = randn(&mut rng, co);
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(vec![b, c, h, w], x.clone()).unwrap());
        let kv = tape.constant(Tensor::new(vec![co, c, 3, 3], k.clone()).unwrap());
        let bv = tape.constant(Tensor::new(vec![co], bias.clone()).unwrap());
        let y = tape.conv2d(xv, kv, bv, s).unwrap();
        if tape.value(y).dims() != [b, co, extent(h, s), extent(w, s)] {
            return f64::INFINITY;
        }
        worst = worst.max(max_abs_diff(tape.value(y).data(), &conv_direct(&x, b, c, h, w, &k, co, &bias, s)));
    }
    worst
}

/// (max |tape − direct|, max relative adjoint gap) over random transposed
/// convolutions.
pub fn conv2d_transpose_worst(cases: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let (mut direct_worst, mut adjoint_worst): (f64, f64) = (0.0, 0.0);
    for _ in 0..cases {
        let (b, ci, h, w, co, s) = conv_case(&mut rng);
        let x = randn(&mut rng, b * ci * h * w);
        let k = randn(&mut rng, ci * co * 9);
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(vec![b, ci, h, w], x.clone()).unwrap());
        let kv = tape.constant(Tensor::new(vec![ci, co, 3, 3], k.clone()).unwrap());
        let y = tape.conv2d_transpose(xv, kv, s).unwrap();
        if tape.value(y).dims() != [b, co, h * s, w * s] {
            return (f64::INFINITY, f64::INFINITY);
        }
        direct_worst = direct_worst.max(max_abs_diff(tape.value(y).data(), &tconv_direct(&x, b, ci, h, w, &k, co, s)));

        // ⟨conv(u), x⟩ = ⟨u, conv_transpose(x)⟩ with the conv kernel C_out=ci, C_in=co
        let u = randn(&mut rng, b * co * h * s * w * s);
        let zero = vec![0.0; ci];
        let cu = conv_direct(&u, b, co, h * s, w * s, &k, ci, &zero, s);
        let lhs = dot(&cu, &x);
        let gap = (lhs - dot(&u, tape.value(y).data())).abs() / (1.0 + lhs.abs());
        adjoint_worst = adjoint_worst.max(gap);
    }
    (direct_worst, adjoint_worst)
}

/// Worst relative finite-difference error over `nets` random micro-networks,
/// skipping draws that sit within 1e-3 of a leaky-ReLU kink.
pub fn micro_gradient_worst(nets: usize, h: f64, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < nets {
        let net = MicroNet::random(&mut rng);
        if net.gradients().1 < 1e-3 {
            continue;
        }
        worst = worst.max(net.max_relative_error(h));
        checked += 1;
    }
    worst
}

/// Number of random confusion tuples whose metrics differ from the formulas.
pub fn metric_mismatches(tuples: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut bad = 0;
    for _ in 0..tuples {
        let c = ConfusionCounts {
            tp: rng.gen_range(0..50),
            fp: rng.gen_range(0..50),
            tn: rng.gen_range(0..50),
            fn_: rng.gen_range(0..50),
        };
        let m = compute_metrics(c, None, None);
        let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
        let div = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        let ok = m.accuracy == div(tp + tn, tp + fp + tn + fn_)
            && m.recall == div(tp, tp + fn_)
            && m.precision == div(tp, tp + fp)
            && m.specificity == div(tn, tn + fp)
            && m.f1 == div(2.0 * tp, 2.0 * tp + fp + fn_);
        bad += usize::from(!ok);
    }
    bad
}

/// Max |AUC − Mann–Whitney| over random tied score sets; a non-monotone ROC
/// counts as ∞.
pub fn auc_worst(sets: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < sets {
        let n = rng.gen_range(2..60);
        let levels = rng.gen_range(2..20);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let truths: Vec<Label> = (0..n).map(|_| if rng.gen() { Label::Covid } else { Label::Healthy }).collect();
        let Ok((curve, auc)) = roc_auc(&scores, &truths) else { continue };
        if curve.points.windows(2).any(|p| p[1].0 < p[0].0 || p[1].1 < p[0].1) {
            return f64::INFINITY;
        }
        worst = worst.max((auc - mann_whitney(&scores, &truths)).abs());
        done += 1;
    }
    worst
}

fn gp_toy(rng: &mut impl Rng, sigma_f: (f64, f64), sigma_n: (f64, f64), length: (f64, f64)) -> (Vec<f64>, Vec<f64>, GpHyper) {
    let n = rng.gen_range(1..=6);
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let ys: Vec<f64> = (0..n).map(|_| if rng.gen() { 1.0 } else { -1.0 }).collect();
    let h = GpHyper::new(
        rng.gen_range(sigma_f.0..sigma_f.1),
        rng.gen_range(sigma_n.0..sigma_n.1),
        rng.gen_range(length.0..length.1),
    )
    .unwrap();
    (xs, ys, h)
}

fn column(xs: &[f64]) -> Vec<Vec<f64>> {
    xs.iter().map(|&v| vec![v]).collect()
}

/// Max gap between the 20-node quadrature and dense-grid integration of the
/// sigmoid under the Laplace latent Gaussian.
pub fn gp_quadrature_worst(toys: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..toys {
        let (xs, ys, h) = gp_toy(&mut rng, (0.5, 3.0), (0.01, 0.3), (0.3, 2.0));
        let model = gp_fit_laplace(&column(&xs), &ys, &h).unwrap();
        let x_star = rng.gen_range(-4.0..4.0);
        let (mean, var) = latent_of(&model, x_star);
        let p = gp_predict(&model, &[x_star]).unwrap();
        worst = worst.max((p - gaussian_sigmoid_grid(mean, var, 20_001)).abs());
    }
    worst
}

/// Max gap between the Laplace prediction and a Monte Carlo estimate of the
/// exact posterior predictive.
pub fn gp_exact_worst(toys: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for case in 0..toys as u64 {
        let (xs, ys, h) = gp_toy(&mut rng, (0.5, 1.5), (0.05, 0.3), (0.5, 2.0));
        let model = gp_fit_laplace(&column(&xs), &ys, &h).unwrap();
        let x_star = rng.gen_range(-3.0..3.0);
        let laplace = gp_predict(&model, &[x_star]).unwrap();
        let exact = exact_predictive_mc(&xs, &ys, x_star, &h, samples, seed ^ case);
        worst = worst.max((laplace - exact).abs());
    }
    worst
}

/// Random kernel matrices that are asymmetric or fail to factorize.
pub fn kernel_failures(sets: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut bad = 0;
    for _ in 0..sets {
        let n = rng.gen_range(1..=50);
        let d = rng.gen_range(1..=5);
        let x: Vec<Vec<f64>> = (0..n).map(|_| randn(&mut rng, d)).collect();
        let h = GpHyper::new(rng.gen_range(0.1..3.0), rng.gen_range(0.01..1.0), rng.gen_range(0.1..3.0)).unwrap();
        let k = kernel_matrix(&x, &h).unwrap();
        bad += usize::from(k != k.transpose() || cholesky_with_jitter(&k).is_err());
    }
    bad
}

pub struct SobelReport {
    pub constant_max: f64,
    pub step_ok: bool,
    pub transpose_worst: f64,
}

pub fn sobel_report(images: usize, seed: u64) -> SobelReport {
    let flat = GrayImage::filled(9, 7, 0.4).unwrap();
    let constant_max = sobel_magnitude(&flat).unwrap().pixels().iter().fold(0.0, |a: f64, &v| a.max(v.abs()));

    let step = GrayImage::new(8, 6, (0..48).map(|i| if i % 8 >= 4 { 1.0 } else { 0.0 }).collect()).unwrap();
    let (gx, gy) = sobel_gradients(&step).unwrap();
    let step_ok = (0..6).all(|y| {
        gx.get(3, y).abs() == 4.0 && gx.get(4, y).abs() == 4.0 && gx.get(1, y) == 0.0 && gx.get(6, y) == 0.0
    }) && gy.pixels().iter().all(|&v| v == 0.0);

    let mut rng = rng(seed);
    let mut transpose_worst: f64 = 0.0;
    for _ in 0..images {
        let (w, h) = (rng.gen_range(3..20), rng.gen_range(3..20));
        let img = GrayImage::new(w, h, (0..w * h).map(|_| rng.gen_range(0.0..255.0)).collect()).unwrap();
        let a = sobel_magnitude(&img.transpose()).unwrap();
        let b = sobel_magnitude(&img).unwrap().transpose();
        transpose_worst = transpose_worst.max(max_abs_diff(a.pixels(), b.pixels()));
    }
    SobelReport {
        constant_max,
        step_ok,
        transpose_worst,
    }
}
