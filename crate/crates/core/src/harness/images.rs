//! Seeded procedural test images: smooth gradients, textures and shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ndtensor::Tensor;

/// Number of distinct procedural scene kinds.
pub const SCENE_KINDS: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for ImageSetSpec {
    fn default() -> Self {
        Self {
            count: 10,
            height: 32,
            width: 32,
            seed: 0,
        }
    }
}

impl ImageSetSpec {
    pub fn generate(&self) -> Vec<Tensor> {
        (0..self.count)
            .map(|i| procedural_image(i, self.height, self.width, self.seed))
            .collect()
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// RGB image of kind `index % SCENE_KINDS`, on the 1/255 grid.
pub fn procedural_image(index: usize, height: usize, width: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + index as u64);
    let base: [f64; 3] = [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
    let accent: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let freq: f64 = rng.gen_range(1.5..5.0);
    let (cy, cx) = (rng.gen_range(0.25..0.75), rng.gen_range(0.25..0.75));
    let radius: f64 = rng.gen_range(0.12..0.3);
    let noise_amp: f64 = rng.gen_range(0.02..0.08);
    let noise: Vec<f64> = (0..height * width * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let kind = index % SCENE_KINDS;

    Tensor::from_fn(&[height, width, 3], |i| {
        let ch = i % 3;
        let px = i / 3;
        let (y, x) = ((px / width) as f64 / height as f64, (px % width) as f64 / width as f64);
        let u = x * angle.cos() + y * angle.sin();
        let ramp = base[ch] * (0.6 + 0.4 * u);
        let wave = 0.5 + 0.5 * (std::f64::consts::TAU * freq * u).sin();
        let dist = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
        let disk = if dist < radius { 1.0 } else { 0.0 };
        let in_rect = (y - cy).abs() < radius && (x - cx).abs() < radius * 1.4;
        let checker = ((x * freq * 2.0).floor() as i64 + (y * freq * 2.0).floor() as i64) % 2 == 0;
        let v = match kind {
            0 => ramp,
            1 => 0.7 * ramp + 0.3 * wave * accent[ch],
            2 => if disk > 0.0 { accent[ch] } else { ramp },
            3 => if in_rect { accent[ch] } else { base[ch] * wave },
            4 => if checker { base[ch] } else { accent[ch] },
            5 => base[ch] * (1.0 - dist).powi(2) + 0.3 * accent[ch] * wave,
            6 => 0.5 * ramp + 0.5 * accent[ch] * (std::f64::consts::TAU * freq * (x * y)).cos().abs(),
            7 => {
                let ring = ((dist * freq * 6.0).sin() > 0.0) as u8 as f64;
                base[ch] * (1.0 - ring) + accent[ch] * ring
            }
            8 => ramp + if disk > 0.0 { 0.25 * (accent[ch] - 0.5) } else { 0.0 } + 0.15 * (wave - 0.5),
            _ => 0.5 * base[ch] + 0.5 * accent[ch] * (1.0 - dist),
        };
        quantize(v + noise_amp * noise[i])
    })
}
