//! Toy data: an isotropic Gaussian mixture.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::MixtureSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    spec: MixtureSpec,
    picker: WeightedIndex<f64>,
}

impl GaussianMixture {
    pub fn new(spec: MixtureSpec) -> Result<Self> {
        spec.validate()?;
        let picker = WeightedIndex::new(&spec.weights).map_err(|e| Error::Config(format!("data.weights: {e}")))?;
        Ok(Self { spec, picker })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn components(&self) -> usize {
        self.spec.means.len()
    }

    /// One draw and the component it came from.
    pub fn sample_labeled<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        let c = self.picker.sample(rng);
        let scale = self.spec.scales[c];
        let x = self.spec.means[c].iter().map(|m| m + scale * rng.sample::<f64, _>(StandardNormal)).collect();
        (x, c)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_labeled(rng).0
    }

    /// Index of the nearest component mean.
    pub fn nearest_component(&self, z: &[f64]) -> usize {
        let d2 = |m: &Vec<f64>| m.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (0..self.components())
            .min_by(|&a, &b| d2(&self.spec.means[a]).total_cmp(&d2(&self.spec.means[b])))
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::sample_moments;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_component_moments() {
        let g = GaussianMixture::new(MixtureSpec { means: vec![vec![1.0, -2.0]], weights: vec![1.0], scales: vec![0.5] }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<Vec<f64>> = (0..20_000).map(|_| g.sample(&mut rng)).collect();
        let (m, v) = sample_moments(&xs).unwrap();
        assert!((m[0] - 1.0).abs() < 0.02 && (m[1] + 2.0).abs() < 0.02);
        assert!((v[0] - 0.25).abs() < 0.02 && (v[1] - 0.25).abs() < 0.02);
    }

    #[test]
    fn zero_weight_components_are_never_drawn() {
        let g = GaussianMixture::new(MixtureSpec {
            means: vec![vec![0.0], vec![10.0]],
            weights: vec![0.0, 1.0],
            scales: vec![0.1, 0.1],
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..500).all(|_| g.sample_labeled(&mut rng).1 == 1));
        assert_eq!(g.nearest_component(&[9.0]), 1);
    }
}
