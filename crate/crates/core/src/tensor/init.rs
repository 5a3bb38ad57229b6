//! Seeded initialization fills.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{Element, Tensor};

/// Independent draws from `N(0, std²)`.
pub fn normal<T: Element, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64(z * std)
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Glorot/Xavier uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<T: Element, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = xavier_uniform(&[40, 20], 40, 20, &mut rng);
        let bound = (6.0f64 / 60.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: Tensor<f64> = normal(&[20000], 1.0, &mut rng);
        let mean = t.data().iter().sum::<f64>() / 20000.0;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20000.0;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
