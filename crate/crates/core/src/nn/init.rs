use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Tensor;

pub fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// He-normal initialization for a layer with `fan_in` inputs.
pub fn he_normal(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    normal(rng, shape, (2.0 / fan_in.max(1) as f64).sqrt())
}
