use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Noise standard deviation as a fraction of the clean samples' rms.
    pub level: f64,
    pub seed: u64,
}

/// `f + level * rms(f) * g` with `g` standard normal draws from `seed`.
pub fn inject_noise(samples: &[f64], spec: NoiseSpec) -> Vec<f64> {
    if spec.level == 0.0 || samples.is_empty() {
        return samples.to_vec();
    }
    let rms = (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    samples
        .iter()
        .map(|v| {
            let g: f64 = StandardNormal.sample(&mut rng);
            v + spec.level * rms * g
        })
        .collect()
}
