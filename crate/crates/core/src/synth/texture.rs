//! Procedural intensity: value-noise albedo, headlight shading and highlights.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureSpec {
    pub seed: u64,
    /// Noise lattice spacing in material units.
    pub cell_size: f64,
    pub specular_strength: f64,
    pub shininess: f64,
    pub tint: [f64; 3],
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            cell_size: 0.002,
            specular_strength: 0.6,
            shininess: 400.0,
            tint: [0.95, 0.55, 0.5],
        }
    }
}

const LATTICE: usize = 64;

pub(crate) struct ValueNoise {
    table: Vec<f64>,
    inv_cell: f64,
}

impl ValueNoise {
    pub(crate) fn new(seed: u64, cell_size: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            table: (0..LATTICE * LATTICE).map(|_| rng.random_range(0.0..1.0)).collect(),
            inv_cell: 1.0 / cell_size,
        }
    }

    fn lattice(&self, i: i64, j: i64) -> f64 {
        let n = LATTICE as i64;
        self.table[(i.rem_euclid(n) * n + j.rem_euclid(n)) as usize]
    }

    fn octave(&self, a: f64, b: f64) -> f64 {
        let (u, v) = (a * self.inv_cell, b * self.inv_cell);
        let (i, j) = (u.floor(), v.floor());
        let (fu, fv) = (u - i, v - j);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let (su, sv) = (s(fu), s(fv));
        let (i, j) = (i as i64, j as i64);
        let top = self.lattice(i, j) * (1.0 - su) + self.lattice(i + 1, j) * su;
        let bottom = self.lattice(i, j + 1) * (1.0 - su) + self.lattice(i + 1, j + 1) * su;
        top * (1.0 - sv) + bottom * sv
    }

    /// Two octaves, in `[0, 1]`.
    pub(crate) fn sample(&self, a: f64, b: f64) -> f64 {
        (2.0 * self.octave(a, b) + self.octave(2.13 * a + 0.37, 2.13 * b - 0.71)) / 3.0
    }
}

/// RGB intensity of a surface point with unit normal `n`, seen from `eye`.
pub(crate) fn shade(
    spec: &TextureSpec,
    noise: &ValueNoise,
    a: f64,
    b: f64,
    x: &Vector3<f64>,
    n: &Vector3<f64>,
    eye: &Vector3<f64>,
) -> Vector3<f64> {
    let l = (eye - x).normalize();
    let lambert = n.dot(&l).max(0.0);
    let albedo = 0.35 + 0.6 * noise.sample(a, b);
    let highlight = spec.specular_strength * lambert.powf(spec.shininess);
    Vector3::from_fn(|c, _| (albedo * spec.tint[c] * (0.25 + 0.75 * lambert) + highlight).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_seeded_and_bounded() {
        let a = ValueNoise::new(1, 0.01);
        let b = ValueNoise::new(1, 0.01);
        let c = ValueNoise::new(2, 0.01);
        let mut differs = false;
        for i in 0..100 {
            let (u, v) = (i as f64 * 0.0037, -(i as f64) * 0.0021);
            assert_eq!(a.sample(u, v), b.sample(u, v));
            assert!((0.0..=1.0).contains(&a.sample(u, v)));
            differs |= a.sample(u, v) != c.sample(u, v);
        }
        assert!(differs);
    }

    #[test]
    fn frontal_highlight_saturates() {
        let spec = TextureSpec {
            specular_strength: 1.0,
            ..Default::default()
        };
        let noise = ValueNoise::new(0, 0.01);
        let x = Vector3::new(0.0, 0.0, 0.1);
        let rgb = shade(&spec, &noise, 0.0, 0.0, &x, &Vector3::new(0.0, 0.0, -1.0), &Vector3::zeros());
        assert!(rgb.iter().all(|&c| c == 1.0));
    }
}
