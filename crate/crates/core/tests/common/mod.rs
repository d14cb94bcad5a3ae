#![allow(dead_code)]

use blindid_core::model::{simulate_dataset, Dataset, Dims, InputPlan, LtvModel};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Instance {
    pub model: LtvModel<f64>,
    pub inputs: InputPlan<f64>,
    pub dataset: Dataset<f64>,
    pub u: DVector<f64>,
    pub a: DVector<f64>,
    pub noise: DVector<f64>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gaussian(rng))
}

/// Random LTV instance with `s_u` inputs on uniformly drawn positions and
/// uniform noise of scale `alpha_w`.
pub fn random_instance(rng: &mut ChaCha8Rng, dims: Dims, s_u: usize, alpha_w: f64) -> Instance {
    let a_mats = (0..dims.k_f).map(|_| gaussian_matrix(rng, dims.n, dims.n)).collect();
    let model = LtvModel::new(dims, a_mats).unwrap();
    let z0: Vec<DVector<f64>> = (0..dims.q)
        .map(|_| DVector::from_fn(dims.n, |_, _| gaussian(rng)))
        .collect();
    let mut inputs = InputPlan::empty(dims);
    for idx in sample(rng, dims.num_measurements(), s_u).into_vec() {
        let (j, k, i) = dims.unflatten(idx);
        let mut v = gaussian(rng);
        while v.abs() < 0.1 {
            v = gaussian(rng);
        }
        inputs.insert(j, k, i, v).unwrap();
    }
    let noise = DVector::from_fn(dims.num_measurements(), |_, _| alpha_w * rng.random_range(-1.0..1.0));
    let dataset = simulate_dataset(&model, &inputs, Some(&noise), &z0).unwrap();
    Instance {
        u: inputs.to_vector(),
        a: model.dynamics_vector(),
        model,
        inputs,
        dataset,
        noise,
    }
}
