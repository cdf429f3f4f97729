use std::path::Path;

use image::{Rgb, RgbImage};

use crate::image_ops::{GrayImage, ImageError};

const LINE_COLOR: Rgb<u8> = Rgb([255, 40, 40]);

/// Clips the segment to `[0, w-1] x [0, h-1]` (Liang-Barsky). `None` when
/// it misses the box.
fn clip(p0: [f64; 2], p1: [f64; 2], w: f64, h: f64) -> Option<([f64; 2], [f64; 2])> {
    let (dx, dy) = (p1[0] - p0[0], p1[1] - p0[1]);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, p0[0]), (dx, w - 1.0 - p0[0]), (-dy, p0[1]), (dy, h - 1.0 - p0[1])] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
            if t0 > t1 {
                return None;
            }
        }
    }
    Some(([p0[0] + t0 * dx, p0[1] + t0 * dy], [p0[0] + t1 * dx, p0[1] + t1 * dy]))
}

fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64, mut plot: impl FnMut(i64, i64)) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        plot(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Pixels of the segment inside a `width x height` frame. Endpoints are
/// clipped to the frame, rounded, and joined by a Bresenham line.
pub fn rasterize_segment(p0: [f64; 2], p1: [f64; 2], width: usize, height: usize) -> Vec<(usize, usize)> {
    if width == 0 || height == 0 || !p0.iter().chain(&p1).all(|v| v.is_finite()) {
        return Vec::new();
    }
    let Some((a, b)) = clip(p0, p1, width as f64, height as f64) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    bresenham(a[0].round() as i64, a[1].round() as i64, b[0].round() as i64, b[1].round() as i64, |x, y| {
        out.push((x as usize, y as usize));
    });
    out
}

/// RGB copy of `frame` with the closed quadrilateral drawn on it.
pub fn draw_quad(frame: &GrayImage, corners: &[[f64; 2]; 4]) -> RgbImage {
    let gray = frame.to_luma8();
    let mut out = RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y)[0];
        Rgb([v, v, v])
    });
    let (w, h) = (frame.width(), frame.height());
    for k in 0..4 {
        for (x, y) in rasterize_segment(corners[k], corners[(k + 1) % 4], w, h) {
            out.put_pixel(x as u32, y as u32, LINE_COLOR);
        }
    }
    out
}

pub fn annotate_frame(frame: &GrayImage, corners: &[[f64; 2]; 4], path: &Path) -> Result<(), ImageError> {
    draw_quad(frame, corners)
        .save(path)
        .map_err(|source| ImageError::Write { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Textbook integer Bresenham over the whole line, filtered afterwards.
    fn reference_line(x0: i64, y0: i64, x1: i64, y1: i64, w: i64, h: i64) -> Vec<(usize, usize)> {
        let steep = (y1 - y0).abs() > (x1 - x0).abs();
        let (mut a0, mut b0, mut a1, mut b1) = if steep { (y0, x0, y1, x1) } else { (x0, y0, x1, y1) };
        if a0 > a1 {
            std::mem::swap(&mut a0, &mut a1);
            std::mem::swap(&mut b0, &mut b1);
        }
        let (da, db) = (a1 - a0, (b1 - b0).abs());
        let step = if b0 < b1 { 1 } else { -1 };
        let mut err = da / 2;
        let mut b = b0;
        let mut pts = Vec::new();
        for a in a0..=a1 {
            let (x, y) = if steep { (b, a) } else { (a, b) };
            if x >= 0 && y >= 0 && x < w && y < h {
                pts.push((x as usize, y as usize));
            }
            err -= db;
            if err < 0 {
                b += step;
                err += da;
            }
        }
        pts.sort();
        pts
    }

    fn sorted(mut v: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
        v.sort();
        v
    }

    #[test]
    fn axis_and_diagonal_lines() {
        assert_eq!(rasterize_segment([1.0, 2.0], [4.0, 2.0], 10, 10), vec![(1, 2), (2, 2), (3, 2), (4, 2)]);
        assert_eq!(rasterize_segment([0.0, 0.0], [3.0, 3.0], 10, 10), vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(rasterize_segment([2.0, 5.0], [2.0, 3.0], 10, 10), vec![(2, 5), (2, 4), (2, 3)]);
    }

    #[test]
    fn in_frame_segments_match_reference() {
        let cases = [(0, 0, 17, 5), (3, 19, 11, 1), (19, 19, 0, 4), (5, 5, 6, 18), (12, 3, 12, 3)];
        for (x0, y0, x1, y1) in cases {
            let got = sorted(rasterize_segment([x0 as f64, y0 as f64], [x1 as f64, y1 as f64], 20, 20));
            let want = reference_line(x0, y0, x1, y1, 20, 20);
            // Both are 8-connected lines of the same length through the same
            // endpoints; tie-breaking may differ by one pixel per step.
            assert_eq!(got.len(), want.len(), "{x0},{y0} -> {x1},{y1}");
            assert!(got.contains(&(x0 as usize, y0 as usize)) && got.contains(&(x1 as usize, y1 as usize)));
            for (g, r) in got.iter().zip(&want) {
                assert!(g.0.abs_diff(r.0) <= 1 && g.1.abs_diff(r.1) <= 1);
            }
        }
    }

    #[test]
    fn lines_without_ties_match_reference_exactly() {
        for (x0, y0, x1, y1) in [(0, 0, 19, 0), (0, 0, 0, 19), (0, 0, 19, 19), (2, 1, 17, 6), (1, 2, 6, 17)] {
            let got = sorted(rasterize_segment([x0 as f64, y0 as f64], [x1 as f64, y1 as f64], 20, 20));
            assert_eq!(got, reference_line(x0, y0, x1, y1, 20, 20));
        }
    }

    #[test]
    fn clipping_keeps_pixels_inside() {
        let pts = rasterize_segment([-50.0, 5.0], [50.0, 5.0], 20, 10);
        assert_eq!(pts.len(), 20);
        assert!(pts.iter().all(|&(x, y)| x < 20 && y == 5));
        assert!(rasterize_segment([-5.0, -5.0], [-1.0, 30.0], 20, 10).is_empty());
        assert!(rasterize_segment([25.0, 0.0], [25.0, 9.0], 20, 10).is_empty());
        assert!(rasterize_segment([0.0, f64::NAN], [3.0, 3.0], 20, 10).is_empty());
        let far = rasterize_segment([-1e12, -1e12], [1e12, 1e12], 20, 10);
        assert!(!far.is_empty() && far.iter().all(|&(x, y)| x < 20 && y < 10));
    }

    #[test]
    fn quad_is_drawn_in_color() {
        let frame = GrayImage::from_fn(30, 30, |_, _| 100.0);
        let out = draw_quad(&frame, &[[5.0, 5.0], [20.0, 5.0], [20.0, 20.0], [5.0, 20.0]]);
        assert_eq!(*out.get_pixel(12, 5), LINE_COLOR);
        assert_eq!(*out.get_pixel(20, 12), LINE_COLOR);
        assert_eq!(*out.get_pixel(12, 12), Rgb([100, 100, 100]));
    }

    #[test]
    fn template_quad_outlines_the_rectangle() {
        let frame = GrayImage::from_fn(40, 30, |_, _| 0.0);
        let out = draw_quad(&frame, &[[10.0, 5.0], [29.0, 5.0], [29.0, 19.0], [10.0, 19.0]]);
        for y in 0..30u32 {
            for x in 0..40u32 {
                let on_edge =
                    ((x == 10 || x == 29) && (5..=19).contains(&y)) || ((y == 5 || y == 19) && (10..=29).contains(&x));
                assert_eq!(*out.get_pixel(x, y) == LINE_COLOR, on_edge, "({x}, {y})");
            }
        }
    }

    #[test]
    fn partly_outside_quad_is_clipped() {
        let dir = tempfile::tempdir().unwrap();
        let frame = GrayImage::from_fn(20, 20, |_, _| 50.0);
        let quad = [[-30.0, -10.0], [15.0, -5.0], [40.0, 30.0], [5.0, 25.0]];
        let path = dir.path().join("q.png");
        annotate_frame(&frame, &quad, &path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (20, 20));
        assert!(back.pixels().any(|p| *p == LINE_COLOR));
        assert!(annotate_frame(&frame, &quad, &dir.path().join("missing/q.png")).is_err());
    }
}
