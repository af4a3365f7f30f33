//! Pixel-level primitives shared by the tools, degradations and feature
//! extraction.

use image::{DynamicImage, GrayImage, Luma, RgbImage};

/// Applies `f` to each channel plane independently.
pub fn map_planes(img: &DynamicImage, f: impl Fn(&GrayImage) -> GrayImage) -> DynamicImage {
    match img {
        DynamicImage::ImageLuma8(g) => DynamicImage::ImageLuma8(f(g)),
        other => {
            let rgb = other.to_rgb8();
            let planes: Vec<GrayImage> = (0..3).map(|c| f(&channel(&rgb, c))).collect();
            let (w, h) = (planes[0].width(), planes[0].height());
            let mut out = RgbImage::new(w, h);
            for (x, y, p) in out.enumerate_pixels_mut() {
                for (c, plane) in planes.iter().enumerate() {
                    p.0[c] = plane.get_pixel(x, y).0[0];
                }
            }
            DynamicImage::ImageRgb8(out)
        }
    }
}

fn channel(rgb: &RgbImage, c: usize) -> GrayImage {
    GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| Luma([rgb.get_pixel(x, y).0[c]]))
}

/// Applies a 256-entry lookup table to every sample.
pub fn apply_lut(img: &DynamicImage, lut: &[u8; 256]) -> DynamicImage {
    let mut out = img.clone();
    match &mut out {
        DynamicImage::ImageLuma8(g) => g.iter_mut().for_each(|v| *v = lut[*v as usize]),
        DynamicImage::ImageRgb8(g) => g.iter_mut().for_each(|v| *v = lut[*v as usize]),
        other => {
            let mut rgb = other.to_rgb8();
            rgb.iter_mut().for_each(|v| *v = lut[*v as usize]);
            *other = DynamicImage::ImageRgb8(rgb);
        }
    }
    out
}

/// `255 * (v / 255)^gamma`, rounded and clipped.
pub fn gamma_lut(gamma: f64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        let x = 255.0 * (v as f64 / 255.0).powf(gamma);
        *slot = x.round().clamp(0.0, 255.0) as u8;
    }
    lut
}

pub fn histogram(gray: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in gray.as_raw() {
        hist[v as usize] += 1;
    }
    hist
}

/// Smallest value whose cumulative share reaches `pct` percent.
pub fn percentile(hist: &[u64; 256], pct: f64) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let target = (pct / 100.0 * total as f64).max(1.0);
    let mut acc = 0u64;
    for (v, &n) in hist.iter().enumerate() {
        acc += n;
        if acc as f64 >= target {
            return v as u8;
        }
    }
    255
}

pub fn median_value(gray: &GrayImage) -> u8 {
    percentile(&histogram(gray), 50.0)
}

/// Otsu's threshold: the `t` maximizing between-class variance when class 0
/// is `[0, t]`. The first maximum wins.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &n)| v as f64 * n as f64).sum();
    let (mut w0, mut sum0) = (0.0f64, 0.0f64);
    let (mut best_t, mut best_var) = (0u8, -1.0f64);
    for (t, &n) in hist.iter().enumerate() {
        w0 += n as f64;
        sum0 += t as f64 * n as f64;
        let w1 = total as f64 - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(gray: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return gray.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (gray.width() as i64, gray.height() as i64);
    let src = gray.as_raw();
    let mut tmp = vec![0f32; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (i, kv) in kernel.iter().enumerate() {
                let sx = (x + i as i64 - r).clamp(0, w - 1);
                acc += kv * src[(y * w + sx) as usize] as f32;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = GrayImage::new(w as u32, h as u32);
    let dst: &mut [u8] = &mut out;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (i, kv) in kernel.iter().enumerate() {
                let sy = (y + i as i64 - r).clamp(0, h - 1);
                acc += kv * tmp[(sy * w + x) as usize];
            }
            dst[(y * w + x) as usize] = (acc + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// 3x3 median with edge replication.
pub fn median3(gray: &GrayImage) -> GrayImage {
    let (w, h) = (gray.width() as i64, gray.height() as i64);
    let src = gray.as_raw();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let mut win = [0u8; 9];
        let mut k = 0;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let sx = (x as i64 + dx).clamp(0, w - 1);
                let sy = (y as i64 + dy).clamp(0, h - 1);
                win[k] = src[(sy * w + sx) as usize];
                k += 1;
            }
        }
        win.sort_unstable();
        Luma([win[4]])
    })
}

/// Rotates counterclockwise (as displayed) by `degrees` about the centre.
/// The canvas grows to hold the whole rotated frame; uncovered area takes
/// `fill`. Bilinear sampling.
pub fn rotate_expand(img: &DynamicImage, degrees: f64, fill: u8) -> DynamicImage {
    let theta = degrees.to_radians();
    let (c, s) = (theta.cos(), theta.sin());
    let (w, h) = (img.width() as f64, img.height() as f64);
    let snap = |v: f64| (v - 1e-6).ceil().max(1.0) as u32;
    let out_w = snap(w * c.abs() + h * s.abs());
    let out_h = snap(w * s.abs() + h * c.abs());
    let (ocx, ocy) = (out_w as f64 / 2.0, out_h as f64 / 2.0);
    let (icx, icy) = (w / 2.0, h / 2.0);
    map_planes(img, |plane| {
        let (pw, ph) = (plane.width() as i64, plane.height() as i64);
        let src = plane.as_raw();
        let sample = |x: i64, y: i64| -> f64 {
            if x < 0 || y < 0 || x >= pw || y >= ph {
                fill as f64
            } else {
                src[(y * pw + x) as usize] as f64
            }
        };
        GrayImage::from_fn(out_w, out_h, |ox, oy| {
            let dx = ox as f64 + 0.5 - ocx;
            let dy = oy as f64 + 0.5 - ocy;
            let sx = dx * c - dy * s + icx - 0.5;
            let sy = dx * s + dy * c + icy - 0.5;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = sample(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + sample(x0 + 1, y0) * fx * (1.0 - fy)
                + sample(x0, y0 + 1) * (1.0 - fx) * fy
                + sample(x0 + 1, y0 + 1) * fx * fy;
            Luma([v.round().clamp(0.0, 255.0) as u8])
        })
    })
}

/// Chebyshev dilation of a boolean mask by `radius`.
pub fn dilate_mask(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let mut horiz = vec![false; mask.len()];
    for y in 0..height {
        let row = &mask[y * width..(y + 1) * width];
        // distance to the nearest set pixel, via prefix of last-seen positions
        let mut last: Option<usize> = None;
        for x in 0..width {
            if row[x] {
                last = Some(x);
            }
            if let Some(l) = last {
                if x - l <= radius {
                    horiz[y * width + x] = true;
                }
            }
        }
        let mut next: Option<usize> = None;
        for x in (0..width).rev() {
            if row[x] {
                next = Some(x);
            }
            if let Some(n) = next {
                if n - x <= radius {
                    horiz[y * width + x] = true;
                }
            }
        }
    }
    let mut out = vec![false; mask.len()];
    for x in 0..width {
        let mut last: Option<usize> = None;
        for y in 0..height {
            if horiz[y * width + x] {
                last = Some(y);
            }
            if let Some(l) = last {
                if y - l <= radius {
                    out[y * width + x] = true;
                }
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..height).rev() {
            if horiz[y * width + x] {
                next = Some(y);
            }
            if let Some(n) = next {
                if n - y <= radius {
                    out[y * width + x] = true;
                }
            }
        }
    }
    out
}
