//! Seeded parameter initializers.

use rand::Rng;

use super::{Real, Tensor};

/// Glorot-uniform matrix: U(-a, a) with a = √(6 / (fan_in + fan_out)).
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-a..=a) as Real)
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("consistent shape")
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.gen_range(-bound..=bound) as Real)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}
