//! Synthetic linear scenes for the fusion, photometric stereo and
//! deconvolution benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, RawImage};

use super::{hsv_to_rgb, illuminant_pool};

/// Linear scene colors at unit exposure: random reflectance under a random
/// pool illuminant, with brightness spread log-uniformly over `[1, 20]`.
pub fn random_scene_colors(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = illuminant_pool();
    (0..n)
        .map(|_| {
            let refl = hsv_to_rgb(rng.random(), rng.random_range(0.05..0.9), rng.random_range(0.2..0.95));
            let l = pool[rng.random_range(0..pool.len())];
            let gain = 20f64.powf(rng.random::<f64>());
            std::array::from_fn(|c| gain * l[c] * refl[c].max(0.01))
        })
        .collect()
}

/// Unit normals of a sphere filling a `size x size` image; `None` outside.
pub fn sphere_normals(size: usize) -> Image<Option<[f64; 3]>> {
    let r = 0.45 * size as f64;
    let c = 0.5 * (size as f64 - 1.0);
    Image::from_fn(size, size, |x, y| {
        let dx = (x as f64 - c) / r;
        // Image rows grow downward; the normal's y axis points up.
        let dy = (c - y as f64) / r;
        let d2 = dx * dx + dy * dy;
        if d2 < 0.98 {
            Some([dx, dy, (1.0 - d2).sqrt()])
        } else {
            None
        }
    })
}

/// Ten unit light directions on a ring around the view axis at two elevations.
pub fn ten_lights() -> Vec<[f64; 3]> {
    (0..10)
        .map(|i| {
            let az = 2.0 * std::f64::consts::PI * i as f64 / 10.0 + 0.1;
            let el: f64 = if i % 2 == 0 { 0.9 } else { 1.15 };
            [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
        })
        .collect()
}

/// Lambertian shading `max(0, l . n) * strength * albedo`; zero outside the mask.
pub fn shade(normals: &Image<Option<[f64; 3]>>, albedo: [f64; 3], light: [f64; 3], strength: f64) -> RawImage {
    normals.map(|n| match n {
        Some(n) => {
            let s = (light[0] * n[0] + light[1] * n[1] + light[2] * n[2]).max(0.0) * strength;
            [s * albedo[0], s * albedo[1], s * albedo[2]]
        }
        None => [0.0; 3],
    })
}

/// Piecewise-smooth linear test image: shaded background, colored discs and
/// rectangles, and a band of fine stripes. Values stay in `[0, 1]`.
pub fn procedural_image(width: usize, height: usize, seed: u64) -> RawImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg0 = hsv_to_rgb(rng.random(), 0.3, 0.35);
    let bg1 = hsv_to_rgb(rng.random(), 0.3, 0.6);
    let mut img = Image::from_fn(width, height, |x, y| {
        let t = (x + y) as f64 / (width + height) as f64;
        std::array::from_fn(|c| bg0[c] * (1.0 - t) + bg1[c] * t)
    });
    let w = width as f64;
    let h = height as f64;
    for _ in 0..6 {
        let col = hsv_to_rgb(rng.random(), rng.random_range(0.3..1.0), rng.random_range(0.2..1.0));
        let cx = rng.random_range(0.1..0.9) * w;
        let cy = rng.random_range(0.1..0.9) * h;
        let rad = rng.random_range(0.06..0.18) * w.min(h);
        for y in 0..height {
            for x in 0..width {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < rad * rad {
                    img.set(x, y, col);
                }
            }
        }
    }
    for _ in 0..4 {
        let col = hsv_to_rgb(rng.random(), rng.random_range(0.2..0.9), rng.random_range(0.1..1.0));
        let x0 = rng.random_range(0..width * 3 / 4);
        let y0 = rng.random_range(0..height * 3 / 4);
        let x1 = (x0 + rng.random_range(width / 10..width / 3)).min(width);
        let y1 = (y0 + rng.random_range(height / 10..height / 3)).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                img.set(x, y, col);
            }
        }
    }
    let y0 = rng.random_range(0..height / 2);
    for y in y0..(y0 + height / 8).min(height) {
        for x in 0..width {
            let v = if (x / 3) % 2 == 0 { 0.85 } else { 0.15 };
            img.set(x, y, [v, v, v]);
        }
    }
    img
}

/// Camera-shake-like blur kernel: a smoothed random-walk trajectory on an
/// odd `size x size` support, normalized to unit sum.
pub fn shake_kernel(size: usize, seed: u64) -> Vec<f64> {
    assert!(size % 2 == 1, "kernel size must be odd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut k = vec![0.0; size * size];
    let half = (size / 2) as f64;
    let (mut px, mut py) = (0.0f64, 0.0f64);
    let (mut vx, mut vy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut pts = Vec::new();
    for _ in 0..64 {
        vx = 0.8 * vx + rng.random_range(-0.5..0.5);
        vy = 0.8 * vy + rng.random_range(-0.5..0.5);
        px += 0.35 * vx;
        py += 0.35 * vy;
        pts.push((px, py));
    }
    // Center the trajectory and fit it in the support.
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let ext = pts
        .iter()
        .map(|p| (p.0 - mx).abs().max((p.1 - my).abs()))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let s = if ext > half - 1.0 { (half - 1.0) / ext } else { 1.0 };
    for (x, y) in pts {
        // Bilinear splat.
        let fx = (x - mx) * s + half;
        let fy = (y - my) * s + half;
        let ix = fx.floor() as usize;
        let iy = fy.floor() as usize;
        let ax = fx - ix as f64;
        let ay = fy - iy as f64;
        for (dx, wx) in [(0, 1.0 - ax), (1, ax)] {
            for (dy, wy) in [(0, 1.0 - ay), (1, ay)] {
                let (xx, yy) = (ix + dx, iy + dy);
                if xx < size && yy < size {
                    k[yy * size + xx] += wx * wy;
                }
            }
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_normalized_and_nonnegative() {
        for seed in 0..4 {
            let k = shake_kernel(15, seed);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(k.iter().all(|v| *v >= 0.0));
            assert!(k.iter().filter(|v| **v > 0.0).count() > 5);
        }
    }

    #[test]
    fn sphere_normals_are_unit() {
        let n = sphere_normals(32);
        for v in n.data.iter().flatten() {
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn procedural_images_are_in_range() {
        let img = procedural_image(48, 40, 3);
        assert!(img.data.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}
