//! Procedurally rendered 28x28 digit glyphs: a deterministic, offline
//! stand-in for handwritten-digit data, with enough jitter (placement,
//! rotation, intensity, noise) that classification is learnable but not
//! trivial.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::oracle::ClassLabel;
use crate::seed;
use crate::shape::Shape;
use crate::synth::rotate_image;

use super::Dataset;

/// 5x7 glyphs, row strings of '0'/'1'.
const GLYPHS: [[&str; 7]; 10] = [
    [
        "01110", "10001", "10011", "10101", "11001", "10001", "01110",
    ],
    [
        "00100", "01100", "00100", "00100", "00100", "00100", "01110",
    ],
    [
        "01110", "10001", "00001", "00110", "01000", "10000", "11111",
    ],
    [
        "11111", "00010", "00100", "00110", "00001", "10001", "01110",
    ],
    [
        "00010", "00110", "01010", "10010", "11111", "00010", "00010",
    ],
    [
        "11111", "10000", "11110", "00001", "00001", "10001", "01110",
    ],
    [
        "00110", "01000", "10000", "11110", "10001", "10001", "01110",
    ],
    [
        "11111", "00001", "00010", "00100", "01000", "01000", "01000",
    ],
    [
        "01110", "10001", "10001", "01110", "10001", "10001", "01110",
    ],
    [
        "01110", "10001", "10001", "01111", "00001", "00010", "01100",
    ],
];

const SIDE: usize = 28;
const SCALE: usize = 3; // glyph cell size in pixels -> 15x21 ink box

fn render_one(digit: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<f32> {
    let shape = Shape::new(1, SIDE, SIDE);
    let mut img = vec![0.0f32; SIDE * SIDE];
    let glyph = &GLYPHS[digit];
    let ink_w = 5 * SCALE;
    let ink_h = 7 * SCALE;
    let base_x = (SIDE - ink_w) / 2;
    let base_y = (SIDE - ink_h) / 2;
    let jitter = 4i64;
    let ox = base_x as i64 + rng.random_range(-jitter..=jitter);
    let oy = base_y as i64 + rng.random_range(-jitter..=jitter);
    let intensity = 0.5 + 0.5 * rng.random::<f32>();
    for (gy, row) in glyph.iter().enumerate() {
        for (gx, ch) in row.bytes().enumerate() {
            if ch != b'1' {
                continue;
            }
            // Occasional ink dropout per glyph cell.
            if rng.random::<f32>() < 0.08 {
                continue;
            }
            for py in 0..SCALE {
                for px in 0..SCALE {
                    let y = oy + (gy * SCALE + py) as i64;
                    let x = ox + (gx * SCALE + px) as i64;
                    if (0..SIDE as i64).contains(&y) && (0..SIDE as i64).contains(&x) {
                        // Slight per-pixel ink variation.
                        let wobble = 0.85 + 0.15 * rng.random::<f32>();
                        img[y as usize * SIDE + x as usize] = (intensity * wobble).min(1.0);
                    }
                }
            }
        }
    }
    // Small rotation, then additive noise.
    let degrees = -13.0 + 26.0 * rng.random::<f64>();
    let mut img = rotate_image(&img, shape, degrees);
    let normal = StandardNormal;
    for v in img.iter_mut() {
        let n: f64 = normal.sample(rng);
        *v = (*v + 0.18 * n as f32).clamp(0.0, 1.0);
    }
    img
}

/// A rendered-digit dataset with `per_class` samples per digit, deterministic
/// in `seed_value`.
pub fn rendered_digits(per_class: usize, seed_value: u64, split: &str) -> Dataset {
    let mut images = Vec::with_capacity(per_class * 10 * SIDE * SIDE);
    let mut labels = Vec::with_capacity(per_class * 10);
    for slot in 0..per_class {
        for digit in 0..10usize {
            let mut rng = seed::rng(seed_value, &[digit as u64, slot as u64]);
            images.extend_from_slice(&render_one(digit, &mut rng));
            labels.push(ClassLabel(digit));
        }
    }
    Dataset::new(Shape::new(1, SIDE, SIDE), 10, images, labels, split)
        .expect("rendered pixels are clamped to [0, 1]")
}
