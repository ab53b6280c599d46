//! Two-class synthetic stand-in for a CT corpus.
//!
//! Healthy images are a smooth anisotropic Gaussian blob on a flat background
//! with faint noise. COVID images are the same kind of blob carrying a small
//! patch of high-frequency speckle. Raw mean intensity does not separate the
//! classes. After a Sobel map is scaled by its own maximum, the speckle also
//! shifts global statistics of the map, so the task is easier than a purely
//! local one.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{save_manifest, DatasetError, Label, Sample};
use crate::imaging::{write_pgm, GrayImage};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub side: usize,
    /// Std of per-pixel Gaussian noise, relative to a unit blob.
    pub noise_std: f64,
    /// Amplitude of the speckle texture in COVID images.
    pub speckle_amplitude: f64,
    /// Inclusive range for the number of speckle patches.
    pub patches: (usize, usize),
    /// Range of patch radii in pixels.
    pub patch_radius: (f64, f64),
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            side: 100,
            noise_std: 0.03,
            speckle_amplitude: 0.16,
            patches: (1, 1),
            patch_radius: (4.0, 8.0),
        }
    }
}

/// Renders one image with intensities stretched over 0..=255 (integers).
pub fn render_sample<R: Rng + ?Sized>(label: Label, params: &SyntheticParams, rng: &mut R) -> GrayImage {
    let n = params.side;
    let s = n as f64;
    let background = rng.gen_range(0.1..0.3);
    let amplitude = rng.gen_range(0.5..1.0);
    let cx = rng.gen_range(0.3 * s..0.7 * s);
    let cy = rng.gen_range(0.3 * s..0.7 * s);
    let sx = rng.gen_range(0.10 * s..0.22 * s);
    let sy = rng.gen_range(0.10 * s..0.22 * s);
    let noise = Normal::new(0.0, params.noise_std).expect("noise std is finite");

    let mut pixels: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64, (i / n) as f64);
            let r2 = (x - cx).powi(2) / (2.0 * sx * sx) + (y - cy).powi(2) / (2.0 * sy * sy);
            background + amplitude * (-r2).exp() + noise.sample(rng)
        })
        .collect();

    if label == Label::Covid {
        let count = rng.gen_range(params.patches.0..=params.patches.1);
        for _ in 0..count {
            let px = cx + rng.gen_range(-1.0..1.0) * sx;
            let py = cy + rng.gen_range(-1.0..1.0) * sy;
            let radius = rng.gen_range(params.patch_radius.0..params.patch_radius.1);
            for (i, p) in pixels.iter_mut().enumerate() {
                let (x, y) = ((i % n) as f64, (i / n) as f64);
                let d = ((x - px).powi(2) + (y - py).powi(2)).sqrt() / radius;
                if d < 1.0 {
                    let window = 0.5 * (1.0 + (std::f64::consts::PI * d).cos());
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    *p += params.speckle_amplitude * window * sign * rng.gen_range(0.5..1.0);
                }
            }
        }
    }

    let lo = pixels.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::EPSILON);
    let stretched = pixels.iter().map(|p| ((p - lo) / span * 255.0).round()).collect();
    GrayImage::new(n, n, stretched).expect("side is positive")
}

/// Writes `count` PGM images (half per class) plus `manifest.csv` into
/// `out_dir`, which is created if needed.
pub fn generate_synthetic(count: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<Vec<Sample>, DatasetError> {
    generate_synthetic_with(count, seed, &SyntheticParams::default(), out_dir)
}

pub fn generate_synthetic_with(
    count: usize,
    seed: u64,
    params: &SyntheticParams,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<Sample>, DatasetError> {
    if count == 0 || count % 2 != 0 {
        return Err(DatasetError::OddCount(count));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = count.to_string().len().max(5);
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let label = if i % 2 == 0 { Label::Healthy } else { Label::Covid };
        let image = render_sample(label, params, &mut rng);
        let id = format!("syn{i:0width$}");
        let path = out_dir.join(format!("{id}.pgm"));
        fs::write(&path, write_pgm(&image)?)?;
        samples.push(Sample::new(id, path, Some(label)));
    }
    save_manifest(&samples, out_dir.join(MANIFEST_NAME))?;
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = generate_synthetic(10, 4, a.path()).unwrap();
        let sb = generate_synthetic(10, 4, b.path()).unwrap();
        let covid = sa.iter().filter(|s| s.label() == Some(Label::Covid)).count();
        assert_eq!(covid, 5);
        for (x, y) in sa.iter().zip(&sb) {
            assert_eq!(fs::read(&x.image_path).unwrap(), fs::read(&y.image_path).unwrap());
        }
        assert!(a.path().join(MANIFEST_NAME).is_file());
        assert!(matches!(generate_synthetic(3, 0, a.path()), Err(DatasetError::OddCount(3))));
    }

    #[test]
    fn images_span_full_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for label in [Label::Healthy, Label::Covid] {
            let img = render_sample(label, &SyntheticParams::default(), &mut rng);
            let lo = img.pixels().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = img.pixels().iter().copied().fold(0.0, f64::max);
            assert_eq!((lo, hi), (0.0, 255.0));
        }
    }
}
