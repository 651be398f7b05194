use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::geometry::{LightSource, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Light {
    /// Unit vector from the subject toward the light.
    pub direction: Vec3,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LightSet {
    pub lights: Vec<Light>,
}

impl LightSet {
    pub fn len(&self) -> usize {
        self.lights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lights.is_empty()
    }

    /// Renderer lights whose radiances sum to `total_intensity` times their colors' mean.
    pub fn sources(&self, total_intensity: f32) -> Vec<LightSource> {
        let scale = if self.lights.is_empty() { 0.0 } else { total_intensity / self.lights.len() as f32 };
        self.lights
            .iter()
            .map(|l| LightSource { direction: l.direction, radiance: l.color.map(|c| c * scale) })
            .collect()
    }
}

/// `count` directional lights with uniform directions on the sphere and uniform RGB colors.
pub fn place_lights(count: usize, seed: u64) -> LightSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lights = (0..count)
        .map(|_| {
            let d: [f64; 3] = UnitSphere.sample(&mut rng);
            let color = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
            Light { direction: Vec3::from(d).normalize(), color }
        })
        .collect();
    LightSet { lights }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        assert!(place_lights(0, 7).is_empty());
        assert_eq!(place_lights(180, 7), place_lights(180, 7));
        assert_ne!(place_lights(180, 7), place_lights(180, 8));
    }

    #[test]
    fn directions_are_uniform() {
        let set = place_lights(10_000, 1);
        let mut mean = Vec3::zeros();
        let mut color_mean = 0.0f64;
        for l in &set.lights {
            assert!((l.direction.norm() - 1.0).abs() < 1e-12);
            assert!(l.color.iter().all(|c| (0.0..=1.0).contains(c)));
            mean += l.direction;
            color_mean += l.color.iter().map(|&c| c as f64).sum::<f64>();
        }
        // The mean of n uniform unit vectors has norm ~ 1/sqrt(n) = 0.01.
        assert!((mean / 10_000.0).norm() < 0.05);
        assert!((color_mean / 30_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn sources_split_intensity() {
        let set = place_lights(4, 3);
        let src = set.sources(2.0);
        assert_eq!(src.len(), 4);
        assert!((src[0].radiance[1] - set.lights[0].color[1] * 0.5).abs() < 1e-7);
    }
}
