//! Procedural 64x64 grayscale phantoms: a smooth gradient background with
//! soft ellipses and faint line structures, deterministic in the seed.
//! They stand in for restricted medical corpora in tests and demos.

use crate::rng::Stream;
use crate::tensor::Image;

const SIDE: usize = 64;
const SALT_SYNTH: u64 = 0x73796E74;

/// One phantom, fully determined by (seed, index).
pub fn synth_image(seed: u64, index: u64) -> Image<f32> {
    let mut s = Stream::keyed(seed, SALT_SYNTH, index);
    let mut field = vec![0.0f64; SIDE * SIDE];

    let base = s.range_f64(0.15, 0.45);
    let gx = s.range_f64(-0.25, 0.25);
    let gy = s.range_f64(-0.25, 0.25);
    let span = (SIDE - 1) as f64;
    for y in 0..SIDE {
        for x in 0..SIDE {
            field[y * SIDE + x] = base + gx * (x as f64 / span) + gy * (y as f64 / span);
        }
    }

    let ellipses = 1 + s.below(3);
    for _ in 0..ellipses {
        let cx = s.range_f64(12.0, 52.0);
        let cy = s.range_f64(12.0, 52.0);
        let rx = s.range_f64(5.0, 18.0);
        let ry = s.range_f64(5.0, 18.0);
        let rot = s.range_f64(0.0, std::f64::consts::PI);
        let sign = if s.unit_f64() < 0.3 { -1.0 } else { 1.0 };
        let amp = sign * s.range_f64(0.18, 0.45);
        let (sin, cos) = rot.sin_cos();
        for y in 0..SIDE {
            for x in 0..SIDE {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = (dx * cos + dy * sin) / rx;
                let v = (dy * cos - dx * sin) / ry;
                let t = u * u + v * v;
                if t < 1.0 {
                    let edge = 1.0 - t;
                    field[y * SIDE + x] += amp * edge * edge;
                }
            }
        }
    }

    let lines = s.below(3);
    for _ in 0..lines {
        let px = s.range_f64(8.0, 56.0);
        let py = s.range_f64(8.0, 56.0);
        let angle = s.range_f64(0.0, std::f64::consts::PI);
        let (nx, ny) = (-angle.sin(), angle.cos());
        let thickness = s.range_f64(0.8, 2.2);
        let sign = if s.unit_f64() < 0.5 { -1.0 } else { 1.0 };
        let amp = sign * s.range_f64(0.12, 0.3);
        for y in 0..SIDE {
            for x in 0..SIDE {
                let dist = ((x as f64 - px) * nx + (y as f64 - py) * ny).abs();
                if dist < thickness {
                    field[y * SIDE + x] += amp * (1.0 - dist / thickness);
                }
            }
        }
    }

    Image::from_fn(SIDE, SIDE, |y, x| field[y * SIDE + x].clamp(0.02, 0.98) as f32)
}

/// A corpus of n phantoms; image i depends only on (seed, i), so a prefix
/// of a larger corpus equals a smaller one.
pub fn synth_corpus(n: usize, seed: u64) -> Vec<Image<f32>> {
    (0..n).map(|i| synth_image(seed, i as u64)).collect()
}
