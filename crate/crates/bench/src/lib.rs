//! Deterministic inputs for the kernel benchmarks.

use nalgebra::DMatrix;

use cfr_core::backends::toy::AffineToyGenerator;
use cfr_core::backends::{Generator, ImageTensor};
use cfr_core::editing::{ddim_invert, InversionTrajectory};
use cfr_core::perturbation::AdapterWeights;

fn wave(seed: usize, i: usize) -> f64 {
    ((seed * 7919 + i * 104_729) as f64 * 1e-3).sin()
}

pub fn matrix(rows: usize, cols: usize, seed: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |r, c| wave(seed, r * cols + c))
}

pub fn adapter(d: usize, k: usize, r: usize) -> AdapterWeights {
    AdapterWeights::new(matrix(d, k, 1), matrix(d, r, 2), matrix(r, k, 3)).expect("consistent shapes")
}

pub fn vector(n: usize, seed: usize) -> Vec<f64> {
    (0..n).map(|i| wave(seed, i)).collect()
}

pub fn image(id: &str, size: usize) -> ImageTensor {
    let data = (0..3 * size * size).map(|i| 0.5 + 0.5 * wave(5, i)).collect();
    ImageTensor::new(id, 3, size, size, data).expect("values in range")
}

/// A `k`-step editing generator over `size x size` images with its inversion
/// of one image.
pub fn inversion(size: usize, k: usize) -> (AffineToyGenerator, InversionTrajectory) {
    let generator = AffineToyGenerator::for_editing((3, size, size), k, 1.0, 7.5)
        .expect("valid generator")
        .with_inversion_mismatch(0.02);
    let z0 = generator.encode_image(&image("x", size)).expect("encode");
    let c = generator.embed_caption("a dog sled on snow").expect("caption");
    let trajectory = ddim_invert(&z0, &c, k, &generator).expect("invert");
    (generator, trajectory)
}
