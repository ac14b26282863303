use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ImageDataset, Provenance, Split, NUM_CLASSES};
use crate::error::Result;

type Segment = [(f32, f32); 2];

/// Three strokes per class in unit coordinates, fixed across all calls.
fn prototypes() -> Vec<Vec<Segment>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x00d1_9175);
    (0..NUM_CLASSES)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let mut p = || (rng.random_range(0.15..0.85), rng.random_range(0.15..0.85));
                    [p(), p()]
                })
                .collect()
        })
        .collect()
}

fn segment_distance(px: f32, py: f32, [(ax, ay), (bx, by)]: Segment) -> f32 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Stroke-drawn digit stand-ins with balanced labels (`i mod 10`).
///
/// Each sample jitters its class strokes and adds pixel noise. With `shifted`
/// the images are translated, thickened and drawn at lower contrast over a
/// gray background, giving a second domain with the same classes.
pub fn synthetic_digits(count: usize, side: usize, seed: u64, shifted: bool) -> Result<ImageDataset> {
    let protos = prototypes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (offset, width, gain, floor) = if shifted {
        (0.08f32, 0.11f32, 0.7f32, 0.15f32)
    } else {
        (0.0, 0.07, 1.0, 0.0)
    };
    let mut pixels = Vec::with_capacity(count * side * side);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % NUM_CLASSES;
        let strokes: Vec<Segment> = protos[class]
            .iter()
            .map(|s| {
                let mut j = |(x, y): (f32, f32)| {
                    (
                        x + offset + rng.random_range(-0.05..0.05),
                        y + offset + rng.random_range(-0.05..0.05),
                    )
                };
                [j(s[0]), j(s[1])]
            })
            .collect();
        for r in 0..side {
            for c in 0..side {
                let (px, py) = ((c as f32 + 0.5) / side as f32, (r as f32 + 0.5) / side as f32);
                let ink = strokes
                    .iter()
                    .map(|&s| (1.0 - segment_distance(px, py, s) / width).max(0.0))
                    .fold(0.0f32, f32::max);
                let noise = rng.random_range(-0.05..0.05);
                pixels.push((floor + gain * ink + noise).clamp(0.0, 1.0));
            }
        }
        labels.push(class as u8);
    }
    ImageDataset::new(side, side, pixels, Some(labels), Provenance::Synthetic, Split::Train)
}
