//! Synthetic client data.

use privlab_core::federated::ClientDataset;
use privlab_core::models::{LabeledSample, ModelSpec};
use privlab_core::numerics::RngStream;
use privlab_core::Result;

use crate::config::{ClientsConfig, Generator};

const BLOB_STD: f64 = 0.1;

fn draw_label(num_classes: usize, rng: &mut RngStream) -> usize {
    ((rng.uniform() * num_classes as f64) as usize).min(num_classes - 1)
}

/// Blob center coordinate for class `c`, spread evenly inside `(0, 1)`.
fn blob_center(c: usize, num_classes: usize) -> f64 {
    (c + 1) as f64 / (num_classes + 1) as f64
}

pub fn sample(spec: &ModelSpec, generator: Generator, rng: &mut RngStream) -> Result<LabeledSample> {
    let y = draw_label(spec.num_classes, rng);
    let x: Vec<f64> = match generator {
        Generator::UniformBox => (0..spec.input_dim).map(|_| rng.uniform()).collect(),
        Generator::TwoGaussians => {
            let center = blob_center(y, spec.num_classes);
            (0..spec.input_dim)
                .map(|_| (center + BLOB_STD * rng.standard_normal()).clamp(0.0, 1.0))
                .collect()
        }
    };
    LabeledSample::from_slice(&x, y)
}

/// Client `k` draws its samples from `rng.fork(k)`.
pub fn generate_clients(spec: &ModelSpec, cfg: &ClientsConfig, rng: &RngStream) -> Result<Vec<ClientDataset>> {
    (0..cfg.count)
        .map(|k| {
            let mut stream = rng.fork(k as u64);
            let samples = (0..cfg.samples_per_client)
                .map(|_| sample(spec, cfg.generator, &mut stream))
                .collect::<Result<Vec<_>>>()?;
            ClientDataset::new(k as u32, samples)
        })
        .collect()
}

/// `n` independent samples from `rng`.
pub fn generate_points(spec: &ModelSpec, generator: Generator, n: usize, rng: &mut RngStream) -> Result<Vec<LabeledSample>> {
    (0..n).map(|_| sample(spec, generator, rng)).collect()
}
