//! Stochastic view construction for the self-supervised pretext tasks.

use rand::Rng as _;
use slscom_autograd::Tensor;

use crate::config::AugmentPolicy;
use crate::seed::Rng;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Augmented counterpart of every image in an `[n, 3, h, w]` batch. Row `i` of the
/// result and row `i` of the input form a positive pair.
pub fn construct_views(batch: &Tensor, policy: &AugmentPolicy, rng: &mut Rng) -> Tensor {
    let s = batch.shape();
    assert!(s.len() == 4 && s[1] == 3, "construct_views expects [n, 3, h, w], got {s:?}");
    let (h, w) = (s[2], s[3]);
    let per = 3 * h * w;
    let mut out = batch.clone();
    for img in out.data_mut().chunks_exact_mut(per) {
        augment_one(img, h, w, policy, rng);
    }
    out
}

fn augment_one(img: &mut [f64], h: usize, w: usize, p: &AugmentPolicy, rng: &mut Rng) {
    if rng.gen::<f64>() < p.flip_prob {
        hflip(img, h, w);
    }
    if p.color_enabled {
        if rng.gen::<f64>() < p.jitter_prob {
            let (b, c, s, hue) = p.jitter_strengths;
            let fb = factor(rng, b);
            let fc = factor(rng, c);
            let fs = factor(rng, s);
            let dh = if hue > 0.0 { rng.gen_range(-hue..=hue) } else { 0.0 };
            adjust_brightness(img, fb);
            adjust_contrast(img, fc);
            adjust_saturation(img, fs);
            adjust_hue(img, dh);
        }
        if rng.gen::<f64>() < p.gray_prob {
            grayscale(img);
        }
    }
    if rng.gen::<f64>() < p.blur_prob {
        let sigma = rng.gen_range(p.blur_sigma.0..=p.blur_sigma.1);
        gaussian_blur(img, h, w, p.blur_kernel, sigma);
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

fn factor(rng: &mut Rng, strength: f64) -> f64 {
    if strength > 0.0 {
        rng.gen_range((1.0 - strength).max(0.0)..=1.0 + strength)
    } else {
        1.0
    }
}

pub fn hflip(img: &mut [f64], h: usize, w: usize) {
    for row in img.chunks_exact_mut(w).take(3 * h) {
        row.reverse();
    }
}

fn plane_len(img: &[f64]) -> usize {
    img.len() / 3
}

fn luminance(img: &[f64], i: usize) -> f64 {
    let n = plane_len(img);
    LUMA[0] * img[i] + LUMA[1] * img[n + i] + LUMA[2] * img[2 * n + i]
}

pub fn adjust_brightness(img: &mut [f64], f: f64) {
    for v in img.iter_mut() {
        *v = (*v * f).clamp(0.0, 1.0);
    }
}

/// Blend towards the mean luminance of the image.
pub fn adjust_contrast(img: &mut [f64], f: f64) {
    let n = plane_len(img);
    let mean = (0..n).map(|i| luminance(img, i)).sum::<f64>() / n as f64;
    for v in img.iter_mut() {
        *v = ((*v - mean) * f + mean).clamp(0.0, 1.0);
    }
}

/// Blend each pixel towards its own luminance.
pub fn adjust_saturation(img: &mut [f64], f: f64) {
    let n = plane_len(img);
    for i in 0..n {
        let g = luminance(img, i);
        for k in 0..3 {
            let v = &mut img[k * n + i];
            *v = ((*v - g) * f + g).clamp(0.0, 1.0);
        }
    }
}

/// Rotate hue by `delta` turns (HSV).
pub fn adjust_hue(img: &mut [f64], delta: f64) {
    if delta == 0.0 {
        return;
    }
    let n = plane_len(img);
    for i in 0..n {
        let (hh, s, v) = rgb_to_hsv(img[i], img[n + i], img[2 * n + i]);
        let (r, g, b) = hsv_to_rgb((hh + delta).rem_euclid(1.0), s, v);
        img[i] = r;
        img[n + i] = g;
        img[2 * n + i] = b;
    }
}

pub fn grayscale(img: &mut [f64]) {
    let n = plane_len(img);
    for i in 0..n {
        let g = luminance(img, i);
        for k in 0..3 {
            img[k * n + i] = g;
        }
    }
}

/// Separable Gaussian blur with reflect padding, applied per channel.
pub fn gaussian_blur(img: &mut [f64], h: usize, w: usize, kernel: usize, sigma: f64) {
    let half = (kernel / 2) as isize;
    let weights: Vec<f64> = (-half..=half).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|v| v / total).collect();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if n == 1 {
            return 0;
        }
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let mut tmp = vec![0.0; h * w];
    for plane in img.chunks_exact_mut(h * w) {
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * plane[y * w + reflect(x as isize + k as isize - half, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * tmp[reflect(y as isize + k as isize - half, h) * w + x])
                    .sum();
            }
        }
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}
