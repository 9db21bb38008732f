//! Shared fixtures: procedural textures, random instances and a central
//! finite-difference checker.
#![allow(dead_code)]

use std::f64::consts::PI;

use texsynth::filterbank::{Filter, FilterBank};
use texsynth::image::Image;
use texsynth::rng::Rng;

pub fn random_image(h: usize, w: usize, rng: &mut Rng) -> Image {
    Image::from_fn(h, w, |_, _, _| rng.uniform())
}

pub fn centered_image(h: usize, w: usize, rng: &mut Rng) -> Image {
    Image::from_fn(h, w, |_, _, _| rng.uniform() - 0.5)
}

/// Filters with i.i.d. uniform weights in `[-1, 1]`, one per entry of
/// `sizes`.
pub fn random_bank(sizes: &[usize], rng: &mut Rng) -> FilterBank {
    let filters = sizes
        .iter()
        .map(|&f| Filter::new(f, (0..3 * f * f).map(|_| 2.0 * rng.uniform() - 1.0).collect()).unwrap())
        .collect();
    FilterBank::custom(filters).unwrap()
}

/// Direct sum over `(c, u, v)` with zero padding.
pub fn naive_conv(bank: &FilterBank, img: &Image) -> Vec<Vec<f64>> {
    let (h, w) = (img.height() as isize, img.width() as isize);
    bank.filters()
        .iter()
        .map(|f| {
            let p = f.padding() as isize;
            let mut out = vec![0.0; (h * w) as usize];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for c in 0..3 {
                        for u in 0..f.size() as isize {
                            for v in 0..f.size() as isize {
                                let (yy, xx) = (y + u - p, x + v - p);
                                if yy >= 0 && yy < h && xx >= 0 && xx < w {
                                    acc += f.weight(c, u as usize, v as usize) * img.get(yy as usize, xx as usize, c);
                                }
                            }
                        }
                    }
                    out[(y * w + x) as usize] = acc;
                }
            }
            out
        })
        .collect()
}

/// Central differences of `f` at `x` for every coordinate.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let o = k as isize - r;
                    let (yy, xx) = if horizontal {
                        (y, (x as isize + o).rem_euclid(w as isize) as usize)
                    } else {
                        ((y as isize + o).rem_euclid(h as isize) as usize, x)
                    };
                    acc += kv * src[yy * w + xx];
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

fn noise_field(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    (0..h * w).map(|_| rng.uniform() - 0.5).collect()
}

/// Number of distinct procedural texture families.
pub const FAMILIES: usize = 10;

/// Grayscale structure of family `kind`, before normalization.
fn structure(kind: usize, h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let phase = 2.0 * PI * rng.uniform();
    let grid =
        |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { (0..h * w).map(|i| f((i / w) as f64, (i % w) as f64)).collect() };
    let jitter: Vec<f64> = blur(&noise_field(h, w, rng), h, w, 6.0);
    match kind % FAMILIES {
        // diagonal grating, period 9
        0 => grid(&|y, x| ((x + y) * 2.0 * PI / 9.0 / 2f64.sqrt() + phase).sin()),
        // fine isotropic noise
        1 => noise_field(h, w, rng),
        // smooth blobs
        2 => blur(&noise_field(h, w, rng), h, w, 4.0),
        // checkerboard, period 16
        3 => grid(&|y, x| {
            let a = ((y / 8.0).floor() + (x / 8.0).floor()) as i64;
            if a % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        }),
        // horizontal stripes with wobble
        4 => {
            let wobble = &jitter;
            grid(&|y, x| {
                let j = wobble[(y as usize) * w + x as usize];
                (y * 2.0 * PI / 6.0 + 40.0 * j + phase).sin().signum()
            })
        }
        // sparse dots
        5 => {
            let mut out = vec![-0.2; h * w];
            let n = h * w / 60;
            for _ in 0..n {
                let (cy, cx) = (rng.below(h) as isize, rng.below(w) as isize);
                for dy in -2..=2isize {
                    for dx in -2..=2isize {
                        if dy * dy + dx * dx <= 4 {
                            let (yy, xx) = ((cy + dy).rem_euclid(h as isize), (cx + dx).rem_euclid(w as isize));
                            out[yy as usize * w + xx as usize] = 1.0;
                        }
                    }
                }
            }
            out
        }
        // cross-hatch of two coarse gratings
        6 => grid(&|y, x| ((x * 2.0 * PI / 20.0) + phase).sin() + ((y * 2.0 * PI / 20.0) - phase).sin()),
        // bricks
        7 => grid(&|y, x| {
            let row = (y / 10.0).floor();
            let shift = if row as i64 % 2 == 0 { 0.0 } else { 12.0 };
            let mortar = (y % 10.0) < 2.0 || ((x + shift) % 24.0) < 2.0;
            if mortar {
                -1.0
            } else {
                0.6
            }
        }),
        // vertically elongated streaks
        8 => {
            let base = noise_field(h, w, rng);
            let mut out = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    out[y * w + x] = (0..12).map(|k| base[((y + k) % h) * w + x]).sum();
                }
            }
            out
        }
        // concentric-ring tiles
        _ => grid(&|y, x| {
            let (ty, tx) = ((y % 24.0) - 12.0, (x % 24.0) - 12.0);
            ((ty * ty + tx * tx).sqrt() * 2.0 * PI / 5.0 + phase).cos()
        }),
    }
}

/// Procedural RGB texture of family `kind`. Every channel is normalized to
/// mean 0.5 and standard deviation 0.15, so raw intensity statistics carry
/// almost no information about the family.
pub fn texture(kind: usize, h: usize, w: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9));
    let base = structure(kind, h, w, &mut rng);
    // a second, weaker structure decorrelates the channels a little
    let tint = blur(&noise_field(h, w, &mut rng), h, w, 2.0);
    let mut channels: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let mix = [0.0, 0.3, -0.3][c];
            base.iter().zip(&tint).map(|(b, t)| b + mix * 4.0 * t).collect()
        })
        .collect();
    for ch in channels.iter_mut() {
        let n = ch.len() as f64;
        let mean = ch.iter().sum::<f64>() / n;
        let sd = (ch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
            .sqrt()
            .max(1e-12);
        for v in ch.iter_mut() {
            *v = (0.5 + 0.15 * (*v - mean) / sd).clamp(0.0, 1.0);
        }
    }
    Image::from_fn(h, w, |y, x, c| channels[c][y * w + x])
}

/// `count` labelled textures from distinct families.
pub fn corpus(count: usize, size: usize, seed: u64) -> Vec<(String, Image)> {
    (0..count)
        .map(|k| (format!("family{k}"), texture(k, size, size, seed)))
        .collect()
}
