//! Procedural test imagery: piecewise-flat polygons over a smooth
//! background, lightly blurred. Provides both corner features and smooth
//! intensity gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{warp_point, HomographyMatrix, PixelPoint};
use crate::image_ops::GrayImage;

struct Polygon(Vec<(f64, f64)>);

impl Polygon {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        self.0.iter().fold((f64::MAX, f64::MAX, f64::MIN, f64::MIN), |(a, b, c, d), &(x, y)| {
            (a.min(x), b.min(y), c.max(x), d.max(y))
        })
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let pts = &self.0;
        let mut inside = false;
        let n = pts.len();
        for i in 0..n {
            let (xi, yi) = pts[i];
            let (xj, yj) = pts[(i + n - 1) % n];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
        }
        inside
    }
}

/// Rotated rectangle or irregular triangle.
fn random_shape(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Polygon {
    let cx = rng.random_range(-10.0..width as f64 + 10.0);
    let cy = rng.random_range(-10.0..height as f64 + 10.0);
    let size = rng.random_range(4.0..16.0);
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = angle.sin_cos();
    if rng.random_bool(0.5) {
        let hw = size;
        let hh = size * rng.random_range(0.4..1.0);
        let corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)];
        Polygon(corners.iter().map(|&(x, y)| (cx + c * x - s * y, cy + s * x + c * y)).collect())
    } else {
        Polygon(
            (0..3)
                .map(|k| {
                    let a = angle + k as f64 * 2.0 * std::f64::consts::PI / 3.0 + rng.random_range(-0.4..0.4);
                    let r = size * rng.random_range(0.7..1.3);
                    (cx + r * a.cos(), cy + r * a.sin())
                })
                .collect(),
        )
    }
}

/// Deterministic textured image with intensities in `[30, 220]`.
pub fn textured_scene(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let wavelength = rng.random_range(60.0..220.0);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / wavelength;
            (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(6.0..14.0))
        })
        .collect();
    let mut canvas: Vec<f64> = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            128.0 + waves.iter().map(|(kx, ky, ph, a)| a * (kx * x + ky * y + ph).sin()).sum::<f64>()
        })
        .collect();

    let count = width * height / 300;
    for _ in 0..count {
        let shape = random_shape(&mut rng, width, height);
        let level = rng.random_range(15.0..240.0);
        let opacity = rng.random_range(0.6..1.0);
        let (x0, y0, x1, y1) = shape.bounds();
        let xs = x0.floor().max(0.0) as usize..=(x1.ceil().min(width as f64 - 1.0).max(0.0) as usize);
        let ys = y0.floor().max(0.0) as usize..=(y1.ceil().min(height as f64 - 1.0).max(0.0) as usize);
        for y in ys {
            for x in xs.clone() {
                if shape.contains(x as f64, y as f64) {
                    let v = &mut canvas[y * width + x];
                    *v = (1.0 - opacity) * *v + opacity * level;
                }
            }
        }
    }

    let raw = GrayImage::from_vec(width, height, canvas.iter().map(|&v| v as f32).collect());
    let smooth = box_blur3(&raw);
    let mut out = smooth;
    for v in out.data_mut() {
        *v = (30.0 + (v.clamp(0.0, 255.0) / 255.0) * 190.0).round();
    }
    out
}

fn box_blur3(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    GrayImage::from_fn(w, h, |x, y| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (xx, yy) = (x as isize + dx, y as isize + dy);
                if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                    let wgt = if dx == 0 && dy == 0 {
                        4.0
                    } else if dx == 0 || dy == 0 {
                        2.0
                    } else {
                        1.0
                    };
                    acc += wgt * img.get(xx as usize, yy as usize);
                    n += wgt;
                }
            }
        }
        acc / n
    })
}

/// Inverse warp: `out(p) = src(H^-1 p)` with bilinear sampling, so a point
/// `p*` of `src` lands at `w(H, p*)` in the output. Unmapped pixels get `fill`.
pub fn warp_image(src: &GrayImage, h: &HomographyMatrix, width: usize, height: usize, fill: f32) -> GrayImage {
    let inv = match h.inverse() {
        Ok(inv) => inv,
        Err(_) => return GrayImage::from_fn(width, height, |_, _| fill),
    };
    GrayImage::from_fn(width, height, |x, y| {
        warp_point(&inv, PixelPoint::new(x as f64, y as f64))
            .ok()
            .and_then(|p| src.bilinear_sample(p))
            .map_or(fill, |v| v as f32)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_deterministic_and_in_range() {
        let a = textured_scene(120, 80, 3);
        assert_eq!(a, textured_scene(120, 80, 3));
        assert_ne!(a, textured_scene(120, 80, 4));
        assert!(a.data().iter().all(|&v| (30.0..=220.0).contains(&v)));
    }

    #[test]
    fn identity_warp_is_exact() {
        let a = textured_scene(60, 40, 1);
        assert_eq!(warp_image(&a, &HomographyMatrix::identity(), 60, 40, 0.0), a);
    }

    #[test]
    fn integer_translation_moves_content() {
        let a = textured_scene(60, 40, 1);
        let b = warp_image(&a, &HomographyMatrix::translation(3.0, -2.0), 60, 40, 0.0);
        assert_eq!(b.get(10 + 3, 20 - 2), a.get(10, 20));
        assert_eq!(b.get(0, 0), 0.0);
    }
}
