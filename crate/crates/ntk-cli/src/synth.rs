//! Deterministic synthetic digit corpus. Each 28x28 grayscale image renders
//! a digit as lit seven-segment strokes with per-image jitter (translation,
//! endpoint wobble, stroke thickness, contrast), so images of one label are
//! near neighbors while different labels stay well separated. Everything is
//! seeded: the same `(label, variant, seed)` always produces the same
//! pixels, independent of corpus size.

use anyhow::Result;
use ntk_core::ImageSignal;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

/// Side length of every synthetic image.
pub const SYNTH_SIDE: usize = 28;

/// Segment endpoints on the canonical seven-segment frame, before jitter:
/// `(r0, c0, r1, c1)` for segments A (top), B (upper right), C (lower
/// right), D (bottom), E (lower left), F (upper left), G (middle).
const SEGMENTS: [(f64, f64, f64, f64); 7] = [
    (5.0, 9.0, 5.0, 19.0),   // A
    (5.0, 19.0, 14.0, 19.0), // B
    (14.0, 19.0, 23.0, 19.0),// C
    (23.0, 9.0, 23.0, 19.0), // D
    (14.0, 9.0, 23.0, 9.0),  // E
    (5.0, 9.0, 14.0, 9.0),   // F
    (14.0, 9.0, 14.0, 19.0), // G
];

/// Which segments light up for each digit, as masks over `ABCDEFG`.
const DIGIT_SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],    // 0
    [false, true, true, false, false, false, false],// 1
    [true, true, false, true, true, false, true],   // 2
    [true, true, true, true, false, false, true],   // 3
    [false, true, true, false, false, true, true],  // 4
    [true, false, true, true, false, true, true],   // 5
    [true, false, true, true, true, true, true],    // 6
    [true, true, true, false, false, false, false], // 7
    [true, true, true, true, true, true, true],     // 8
    [true, true, true, true, false, true, true],    // 9
];

fn point_segment_distance(pr: f64, pc: f64, seg: (f64, f64, f64, f64)) -> f64 {
    let (r0, c0, r1, c1) = seg;
    let dr = r1 - r0;
    let dc = c1 - c0;
    let len_sq = dr * dr + dc * dc;
    let t = if len_sq > 0.0 {
        (((pr - r0) * dr + (pc - c0) * dc) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let gr = pr - (r0 + t * dr);
    let gc = pc - (c0 + t * dc);
    (gr * gr + gc * gc).sqrt()
}

/// Mix a corpus seed with an image index so each image has its own stream
/// and the corpus is prefix-stable in the number of variants.
fn image_stream(seed: u64, label: u8, variant: u64) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for word in [u64::from(label), variant] {
        h ^= word.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^= h >> 33;
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Render one jittered digit image with pixels in `[0, 1]`.
pub fn synthetic_digit(label: u8, variant: u64, seed: u64) -> ImageSignal {
    assert!(label < 10, "digit labels run 0..=9");
    let mut rng = image_stream(seed, label, variant);
    let shift_r: f64 = rng.gen_range(-1.0..1.0);
    let shift_c: f64 = rng.gen_range(-1.0..1.0);
    let thickness: f64 = rng.gen_range(1.2..1.6);
    let contrast: f64 = rng.gen_range(0.85..1.0);
    let segments: Vec<(f64, f64, f64, f64)> = SEGMENTS
        .iter()
        .zip(DIGIT_SEGMENTS[label as usize])
        .filter(|&(_, lit)| lit)
        .map(|(&(r0, c0, r1, c1), _)| {
            let mut wobble = || rng.gen_range(-0.4..0.4);
            (
                r0 + shift_r + wobble(),
                c0 + shift_c + wobble(),
                r1 + shift_r + wobble(),
                c1 + shift_c + wobble(),
            )
        })
        .collect();
    let two_w_sq = 2.0 * thickness * thickness;
    let mut data = vec![0.0; SYNTH_SIDE * SYNTH_SIDE];
    for row in 0..SYNTH_SIDE {
        for col in 0..SYNTH_SIDE {
            let mut value: f64 = 0.0;
            for &seg in &segments {
                let d = point_segment_distance(row as f64, col as f64, seg);
                value = value.max((-d * d / two_w_sq).exp());
            }
            data[row * SYNTH_SIDE + col] = contrast * value;
        }
    }
    ImageSignal::from_gray(SYNTH_SIDE, SYNTH_SIDE, data).expect("shape is fixed")
}

/// Generate `n_per_label` variants of each digit, interleaved by label so
/// every prefix of the corpus covers all ten classes.
pub fn synthetic_corpus(n_per_label: usize, seed: u64) -> (Vec<ImageSignal>, Vec<u8>) {
    let mut images = Vec::with_capacity(10 * n_per_label);
    let mut labels = Vec::with_capacity(10 * n_per_label);
    for variant in 0..n_per_label {
        for label in 0..10u8 {
            images.push(synthetic_digit(label, variant as u64, seed));
            labels.push(label);
        }
    }
    (images, labels)
}

/// Write a synthetic corpus as a pair of IDX files (`images.idx`,
/// `labels.idx`) in `dir` and return their paths.
pub fn write_synthetic_corpus(dir: &Path, n_per_label: usize, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let (images, labels) = synthetic_corpus(n_per_label, seed);
    let images_path = dir.join("images.idx");
    let labels_path = dir.join("labels.idx");
    crate::idx::write_idx_images(&images_path, &images)?;
    crate::idx::write_idx_labels(&labels_path, &labels)?;
    Ok((images_path, labels_path))
}
