//! Procedural desk datasets.

use std::f64::consts::PI;

use fgprop_core::{Dataset, RegressionSample, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// 5×4 bitmap glyphs for the digits 0-9.
const GLYPHS: [[&str; 5]; 10] = [
    ["0110", "1001", "1001", "1001", "0110"],
    ["0010", "0110", "0010", "0010", "0111"],
    ["1110", "0001", "0110", "1000", "1111"],
    ["1110", "0001", "0110", "0001", "1110"],
    ["1001", "1001", "1111", "0001", "0001"],
    ["1111", "1000", "1110", "0001", "1110"],
    ["0110", "1001", "1110", "1001", "0110"],
    ["1111", "0001", "0010", "0100", "0100"],
    ["0110", "1001", "0110", "1001", "0110"],
    ["0110", "1001", "0111", "0001", "0110"],
];

pub const DIGIT_CLASSES: usize = 10;

/// Digit-like images of size `side×side` (`side ≥ 5`), row-major in `[0, 1]`
/// plus mild pixel noise, with one-hot targets.
///
/// Each glyph is scaled by `max(1, side / 7)`, placed at a random offset and
/// drawn with a random intensity in `[0.7, 1.0]`.
pub fn digits(count: usize, side: usize, seed: u64) -> Result<Dataset> {
    if side < 5 {
        return Err(fgprop_core::Error::Config(format!("digit images need side >= 5, got {side}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid normal");
    let scale = (side / 7).max(1);
    let (gh, gw) = (5 * scale, 4 * scale);
    let samples = (0..count)
        .map(|_| {
            let digit = rng.random_range(0..DIGIT_CLASSES);
            let oy = rng.random_range(0..=side - gh);
            let ox = rng.random_range(0..=side - gw);
            let intensity = rng.random_range(0.7..1.0);
            let mut img = vec![0.0; side * side];
            for (r, row) in GLYPHS[digit].iter().enumerate() {
                for (c, bit) in row.bytes().enumerate() {
                    if bit == b'1' {
                        for dy in 0..scale {
                            for dx in 0..scale {
                                img[(oy + r * scale + dy) * side + ox + c * scale + dx] = intensity;
                            }
                        }
                    }
                }
            }
            for p in &mut img {
                *p += noise.sample(&mut rng);
            }
            let mut target = vec![0.0; DIGIT_CLASSES];
            target[digit] = 1.0;
            RegressionSample::new(img, target)
        })
        .collect();
    Dataset::new(samples, Some((side, side)))
}

/// Two interleaved half circles in 2-D. Targets are one-hot moon labels.
pub fn moons(count: usize, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| fgprop_core::Error::Config(e.to_string()))?;
    let samples = (0..count)
        .map(|i| {
            let upper = i % 2 == 0;
            let t = rng.random_range(0.0..PI);
            let (x, y) = if upper { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
            let input = vec![x + jitter.sample(&mut rng), y + jitter.sample(&mut rng)];
            let target = if upper { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
            RegressionSample::new(input, target)
        })
        .collect();
    Dataset::new(samples, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digits_are_reproducible_and_labelled() {
        let a = digits(50, 8, 3).unwrap();
        assert_eq!(a, digits(50, 8, 3).unwrap());
        assert_ne!(a, digits(50, 8, 4).unwrap());
        assert_eq!(a.image_shape, Some((8, 8)));
        assert_eq!(a.target_dim, 10);
        for s in &a.samples {
            assert_eq!(s.target.sum(), 1.0);
            assert!(s.input.max() > 0.5);
        }
        assert_eq!(digits(3, 14, 0).unwrap().input_dim, 196);
        assert!(digits(3, 4, 0).is_err());
    }

    #[test]
    fn moons_alternate_labels() {
        let d = moons(10, 0.1, 1).unwrap();
        assert_eq!(d.input_dim, 2);
        assert_eq!(d.samples[0].target[0], 1.0);
        assert_eq!(d.samples[1].target[1], 1.0);
    }
}
