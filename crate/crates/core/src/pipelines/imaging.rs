//! Local image work: procedural stand-ins, frieze compositing, rescaling.

use image::{imageops, Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const INTERMEDIATE_WIDTH: u32 = 512;
pub const INTERMEDIATE_HEIGHT: u32 = 384;
pub const DEFAULT_FRIEZE_MARGIN: u32 = 16;

/// Parses `#rrggbb` (the `#` is optional).
pub fn parse_hex_color(s: &str) -> Option<[u8; 3]> {
    let s = s.trim_start_matches('#');
    if s.len() != 6 {
        return None;
    }
    let v = u32::from_str_radix(s, 16).ok()?;
    Some([(v >> 16) as u8, (v >> 8) as u8, v as u8])
}

fn lerp(a: u8, b: u8, t: f32) -> u8 {
    (a as f32 + (b as f32 - a as f32) * t).round() as u8
}

/// Opaque three-colour gradient: left-to-right from `c0` to `c1`, blended
/// toward `c2` going down.
pub fn gradient(width: u32, height: u32, c0: [u8; 3], c1: [u8; 3], c2: [u8; 3]) -> RgbaImage {
    let wx = (width.max(2) - 1) as f32;
    let hy = (height.max(2) - 1) as f32;
    let mut img = RgbaImage::new(width, height);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let u = x as f32 / wx;
        let v = y as f32 / hy * 0.5;
        let mut c = [0u8; 3];
        for i in 0..3 {
            c[i] = lerp(lerp(c0[i], c1[i], u), c2[i], v);
        }
        *px = Rgba([c[0], c[1], c[2], 255]);
    }
    img
}

/// Gradient whose colours come from the leading bytes of a hex digest.
pub fn digest_gradient(hex_digest: &str, width: u32, height: u32) -> RgbaImage {
    let bytes = hex::decode(&hex_digest[..18.min(hex_digest.len())]).unwrap_or_default();
    let b = |i: usize| bytes.get(i).copied().unwrap_or(0);
    gradient(
        width,
        height,
        [b(0), b(1), b(2)],
        [b(3), b(4), b(5)],
        [b(6), b(7), b(8)],
    )
}

/// Gradient over a palette's first three colours.
pub fn palette_gradient(palette: &[String], width: u32, height: u32) -> RgbaImage {
    let color = |i: usize| {
        palette
            .get(i % palette.len().max(1))
            .and_then(|s| parse_hex_color(s))
            .unwrap_or([128, 128, 128])
    };
    gradient(width, height, color(0), color(1), color(2))
}

/// A stylized standing figure on a transparent background, used when a muse
/// has no frieze artwork on disk.
pub fn silhouette(width: u32, height: u32, color: [u8; 3]) -> RgbaImage {
    let mut img = RgbaImage::new(width, height);
    let (w, h) = (width as f32, height as f32);
    let fill = Rgba([color[0], color[1], color[2], 255]);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (fx, fy) = ((x as f32 + 0.5) / w, (y as f32 + 0.5) / h);
        let head = ((fx - 0.5) / 0.12).powi(2) + ((fy - 0.12) / 0.09).powi(2) <= 1.0;
        let body = fy > 0.2 && fy < 1.0 && (fx - 0.5).abs() < 0.14 + 0.22 * (fy - 0.2);
        if head || body {
            *px = fill;
        }
    }
    img
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FriezePlacement {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Alpha-composites `frieze` onto `background` with its bottom edge flush to
/// the background's bottom edge at a seeded uniform x in
/// `[margin, bg.width - frieze.width - margin]`.
pub fn composite_frieze(
    background: &RgbaImage,
    frieze: &RgbaImage,
    seed: u64,
    margin: u32,
) -> Result<(RgbaImage, FriezePlacement), PipelineError> {
    let (bw, bh) = background.dimensions();
    let (fw, fh) = frieze.dimensions();
    if fw as u64 + 2 * margin as u64 > bw as u64 || fh > bh {
        return Err(PipelineError::FriezeTooLarge {
            frieze: (fw, fh),
            background: (bw, bh),
            margin,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rng.random_range(margin..=bw - fw - margin);
    let y = bh - fh;
    let mut out = background.clone();
    imageops::overlay(&mut out, frieze, x as i64, y as i64);
    Ok((
        out,
        FriezePlacement {
            x,
            y,
            width: fw,
            height: fh,
        },
    ))
}

/// Resizes to exactly `width`×`height` unless already there.
pub fn rescale(img: RgbaImage, width: u32, height: u32) -> RgbaImage {
    if img.dimensions() == (width, height) {
        img
    } else {
        imageops::resize(&img, width, height, imageops::FilterType::Triangle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frieze_x_stays_in_bounds() {
        let bg = RgbaImage::new(1024, 64);
        let fr = RgbaImage::new(256, 32);
        for seed in 0..500 {
            let (_, p) = composite_frieze(&bg, &fr, seed, 0).unwrap();
            assert!(p.x <= 768);
            assert_eq!(p.y + p.height, 64);
        }
    }

    #[test]
    fn same_seed_same_place() {
        let bg = RgbaImage::new(300, 40);
        let fr = RgbaImage::new(50, 20);
        let a = composite_frieze(&bg, &fr, 99, 16).unwrap().1;
        let b = composite_frieze(&bg, &fr, 99, 16).unwrap().1;
        assert_eq!(a, b);
    }

    #[test]
    fn oversize_frieze_is_refused() {
        let bg = RgbaImage::new(1024, 64);
        let fr = RgbaImage::new(1100, 32);
        assert!(matches!(
            composite_frieze(&bg, &fr, 0, 0),
            Err(PipelineError::FriezeTooLarge { .. })
        ));
        // fits alone, not with margins
        let fr = RgbaImage::new(1000, 32);
        assert!(composite_frieze(&bg, &fr, 0, 16).is_err());
    }

    #[test]
    fn opaque_frieze_pixels_replace_background() {
        let bg = gradient(64, 32, [0, 0, 0], [10, 10, 10], [20, 20, 20]);
        let fr = RgbaImage::from_pixel(8, 8, Rgba([255, 0, 0, 255]));
        let (out, p) = composite_frieze(&bg, &fr, 3, 0).unwrap();
        assert_eq!(out.get_pixel(p.x, p.y), &Rgba([255, 0, 0, 255]));
    }

    #[test]
    fn hex_colors_parse() {
        assert_eq!(parse_hex_color("#ff8000"), Some([255, 128, 0]));
        assert_eq!(parse_hex_color("12"), None);
    }

    proptest! {
        #[test]
        fn pixels_outside_frieze_are_untouched(seed in any::<u64>(), margin in 0u32..20) {
            let bg = digest_gradient("0123456789abcdef01", 96, 40);
            let fr = silhouette(24, 30, [200, 10, 10]);
            let (out, p) = composite_frieze(&bg, &fr, seed, margin).unwrap();
            prop_assert!(p.x >= margin && p.x + p.width + margin <= 96);
            for (x, y, px) in out.enumerate_pixels() {
                let inside = x >= p.x && x < p.x + p.width && y >= p.y;
                if !inside {
                    prop_assert_eq!(px, bg.get_pixel(x, y));
                }
            }
        }
    }
}
