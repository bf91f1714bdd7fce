//! Procedural stand-ins for photo and painting datasets.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::Tensor;

/// Independent generator stream for one (seed, domain, id) triple.
fn image_rng(seed: u64, domain: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id);
    rng
}

fn random_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn finish(size: usize, planes: [Vec<f32>; 3]) -> Tensor {
    let mut data = Vec::with_capacity(3 * size * size);
    for p in planes {
        data.extend(p.into_iter().map(|v| v.clamp(0.0, 1.0)));
    }
    Tensor::new(vec![3, size, size], data).expect("plane sizes are fixed")
}

/// A smooth background with 3 to 8 composited shapes, values in `[0, 1]`.
pub fn synth_content(seed: u64, id: u64, size: usize) -> Tensor {
    let mut rng = image_rng(seed, 1, id);
    let n = size * size;
    let mut planes = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];

    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle: f32 = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (angle.cos(), angle.sin());
    let wobble: f32 = rng.random_range(0.0..0.15);
    let wfreq: f32 = rng.random_range(1.0..3.0);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f32 / size as f32, y as f32 / size as f32);
            let t = (0.5 + (u - 0.5) * dx + (v - 0.5) * dy).clamp(0.0, 1.0);
            let t = (t + wobble * (2.0 * PI * wfreq * (u + v)).sin()).clamp(0.0, 1.0);
            for c in 0..3 {
                planes[c][y * size + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }

    let shapes = rng.random_range(3..=8);
    for _ in 0..shapes {
        let kind = rng.random_range(0..3u8);
        let color = random_color(&mut rng);
        let accent = random_color(&mut rng);
        let alpha: f32 = rng.random_range(0.6..1.0);
        let (cx, cy): (f32, f32) = (rng.random(), rng.random());
        let (rx, ry): (f32, f32) = (rng.random_range(0.05..0.35), rng.random_range(0.05..0.35));
        for y in 0..size {
            for x in 0..size {
                let (u, v) = ((x as f32 + 0.5) / size as f32, (y as f32 + 0.5) / size as f32);
                let (du, dv) = ((u - cx) / rx, (v - cy) / ry);
                let inside = match kind {
                    0 => du.abs() <= 1.0 && dv.abs() <= 1.0,
                    _ => du * du + dv * dv <= 1.0,
                };
                if !inside {
                    continue;
                }
                // kind 2 is a gradient-filled ellipse
                let fill = if kind == 2 {
                    let t = ((du + 1.0) * 0.5).clamp(0.0, 1.0);
                    [0, 1, 2].map(|c| color[c] * (1.0 - t) + accent[c] * t)
                } else {
                    color
                };
                for c in 0..3 {
                    let p = &mut planes[c][y * size + x];
                    *p = *p * (1.0 - alpha) + fill[c] * alpha;
                }
            }
        }
    }
    finish(size, planes)
}

/// A procedural texture (stripes, checkers, filtered noise or palette
/// wash) with per-id channel statistics, values in `[0, 1]`.
pub fn synth_style(seed: u64, id: u64, size: usize) -> Tensor {
    let mut rng = image_rng(seed, 2, id);
    let n = size * size;
    let palette: Vec<[f32; 3]> = (0..rng.random_range(2..=4)).map(|_| random_color(&mut rng)).collect();
    let contrast: f32 = rng.random_range(0.3..1.0);
    let layers = rng.random_range(1..=2);
    let mut field = vec![0f32; n];
    let mut weight_total = 0.0;
    for _ in 0..layers {
        let kind = rng.random_range(0..4u8);
        let angle: f32 = rng.random_range(0.0..PI);
        let freq: f32 = rng.random_range(2.0..10.0);
        let phase: f32 = rng.random_range(0.0..2.0 * PI);
        let waves: Vec<(f32, f32, f32, f32)> = (0..6)
            .map(|_| {
                (
                    rng.random_range(-6.0..6.0),
                    rng.random_range(-6.0..6.0),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.2..1.0),
                )
            })
            .collect();
        let weight: f32 = rng.random_range(0.5..1.0);
        weight_total += weight;
        for y in 0..size {
            for x in 0..size {
                let (u, v) = (x as f32 / size as f32, y as f32 / size as f32);
                let value = match kind {
                    0 => 0.5 + 0.5 * (2.0 * PI * freq * (u * angle.cos() + v * angle.sin()) + phase).sin(),
                    1 => {
                        let a = ((u * freq).floor() as i64 + (v * freq).floor() as i64).rem_euclid(2);
                        a as f32
                    }
                    2 => {
                        let s: f32 = waves
                            .iter()
                            .map(|&(fx, fy, ph, amp)| amp * (2.0 * PI * (fx * u + fy * v) + ph).sin())
                            .sum();
                        let a: f32 = waves.iter().map(|w| w.3).sum();
                        0.5 + 0.5 * s / a
                    }
                    _ => (0.5 * (u * angle.cos() + v * angle.sin()) + 0.5 + 0.1 * (phase + 7.0 * u).sin())
                        .clamp(0.0, 1.0),
                };
                field[y * size + x] += weight * value;
            }
        }
    }
    let mut planes = [vec![0f32; n], vec![0f32; n], vec![0f32; n]];
    let segments = (palette.len() - 1) as f32;
    for (i, f) in field.iter().enumerate() {
        let t = (0.5 + contrast * (f / weight_total - 0.5)).clamp(0.0, 1.0) * segments;
        let k = (t.floor() as usize).min(palette.len() - 2);
        let frac = t - k as f32;
        for c in 0..3 {
            planes[c][i] = palette[k][c] * (1.0 - frac) + palette[k + 1][c] * frac;
        }
    }
    finish(size, planes)
}
