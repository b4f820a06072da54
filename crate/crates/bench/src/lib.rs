//! Shared fixtures for benchmarks.

use maskinfer_core::enclave::{Enclave, EnclaveConfig};
use maskinfer_core::harness::{build_model, prepare_model, random_input, ArchSpec};
use maskinfer_core::refnet::{Act, PlainModel};
use maskinfer_core::{Mat, SeededRng};

pub fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat<f64> {
    let mut rng = SeededRng::new(seed);
    Mat::from_fn(rows, cols, |_, _| rng.uniform(-1.0, 1.0))
}

/// A prepared template model, an enclave over it and one random input.
pub fn template(name: &str, seed: u64) -> (PlainModel<f64>, Enclave<f64>, Act<f64>) {
    let spec = ArchSpec::template(name).expect("known template");
    let mut rng = SeededRng::new(seed);
    let model =
        prepare_model(&build_model(&spec, &mut rng).expect("template builds")).expect("fusable");
    let x = random_input(model.input_shape(), &mut rng);
    let enclave = Enclave::new(&model, EnclaveConfig::default(), seed).expect("enclave");
    (model, enclave, x)
}
