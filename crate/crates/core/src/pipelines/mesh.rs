//! Minimal OBJ handling: the mock cube and a bounding-box reader for previews.

use image::{Rgba, RgbaImage};

pub fn unit_cube_obj(stamp: &str) -> String {
    let mut s = format!("# mock mesh input={stamp}\no offering\n");
    for &(x, y, z) in &[
        (-0.5, -0.5, -0.5),
        (0.5, -0.5, -0.5),
        (0.5, 0.5, -0.5),
        (-0.5, 0.5, -0.5),
        (-0.5, -0.5, 0.5),
        (0.5, -0.5, 0.5),
        (0.5, 0.5, 0.5),
        (-0.5, 0.5, 0.5),
    ] {
        s.push_str(&format!("v {x} {y} {z}\n"));
    }
    for f in [
        [1, 2, 3],
        [1, 3, 4],
        [5, 7, 6],
        [5, 8, 7],
        [1, 5, 6],
        [1, 6, 2],
        [2, 6, 7],
        [2, 7, 3],
        [3, 7, 8],
        [3, 8, 4],
        [4, 8, 5],
        [4, 5, 1],
    ] {
        s.push_str(&format!("f {} {} {}\n", f[0], f[1], f[2]));
    }
    s
}

/// `(min, max)` corners over all `v` records.
pub fn obj_bounding_box(obj: &str) -> Option<([f64; 3], [f64; 3])> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for line in obj.lines() {
        let mut parts = line.split_whitespace();
        if parts.next() != Some("v") {
            continue;
        }
        let coords: Vec<f64> = parts.take(3).filter_map(|p| p.parse().ok()).collect();
        if coords.len() != 3 {
            continue;
        }
        any = true;
        for i in 0..3 {
            lo[i] = lo[i].min(coords[i]);
            hi[i] = hi[i].max(coords[i]);
        }
    }
    any.then_some((lo, hi))
}

/// Placeholder preview for a mesh: the front (x/y) face of its bounding box
/// drawn as a filled rectangle, with the depth shown as an offset outline.
/// Meshes without vertices render as an empty frame.
pub fn bbox_preview(obj: &str, width: u32, height: u32) -> RgbaImage {
    let mut img = RgbaImage::from_pixel(width, height, Rgba([24, 24, 32, 255]));
    let Some((lo, hi)) = obj_bounding_box(obj) else {
        return img;
    };
    let extent = (hi[0] - lo[0])
        .max(hi[1] - lo[1])
        .max(hi[2] - lo[2])
        .max(1e-9);
    let side = width.min(height) as f64 * 0.6;
    let scale = side / extent;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let depth = ((hi[2] - lo[2]) * scale * 0.3).round() as i64;
    let w = (hi[0] - lo[0]) * scale;
    let h = (hi[1] - lo[1]) * scale;
    let x0 = (cx - w / 2.0).round() as i64;
    let y0 = (cy - h / 2.0).round() as i64;
    let (x1, y1) = (x0 + w.round() as i64, y0 + h.round() as i64);

    let mut put = |x: i64, y: i64, c: Rgba<u8>| {
        if x >= 0 && y >= 0 && (x as u32) < width && (y as u32) < height {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    let back = Rgba([120, 120, 150, 255]);
    for x in x0 + depth..=x1 + depth {
        put(x, y0 - depth, back);
        put(x, y1 - depth, back);
    }
    for y in y0 - depth..=y1 - depth {
        put(x0 + depth, y, back);
        put(x1 + depth, y, back);
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            let edge = x == x0 || x == x1 || y == y0 || y == y1;
            put(
                x,
                y,
                if edge {
                    Rgba([240, 240, 255, 255])
                } else {
                    Rgba([70, 90, 140, 255])
                },
            );
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_draws_box_in_the_middle() {
        let img = bbox_preview(&unit_cube_obj("x"), 100, 80);
        assert_eq!(img.dimensions(), (100, 80));
        assert_eq!(img.get_pixel(50, 40), &Rgba([70, 90, 140, 255]));
        assert_eq!(img.get_pixel(1, 1), &Rgba([24, 24, 32, 255]));
    }

    #[test]
    fn preview_of_empty_mesh_is_blank() {
        let img = bbox_preview("o nothing\n", 10, 10);
        assert!(img.pixels().all(|p| *p == Rgba([24, 24, 32, 255])));
    }

    #[test]
    fn cube_bbox_is_unit() {
        let (lo, hi) = obj_bounding_box(&unit_cube_obj("x")).unwrap();
        assert_eq!(lo, [-0.5; 3]);
        assert_eq!(hi, [0.5; 3]);
    }
}
