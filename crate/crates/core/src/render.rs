//! Deterministic PNG rendering of fields, masks and contour overlays.

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::mask::BinaryMask;
use crate::prompt::PointPrompt;
use crate::sdf::mask_from_phi;

pub use crate::dataset::{image_png, mask_png};

const CONTOUR: Rgb<u8> = Rgb([255, 64, 32]);
const PROMPT: Rgb<u8> = Rgb([0, 220, 0]);

fn encode(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

/// Decodes a PNG (any color type) to a grayscale field in `[0, 1]`.
pub fn decode_gray_png(bytes: &[u8]) -> Result<ScalarField> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::InvalidField(format!("cannot decode PNG: {e}")))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    ScalarField::new(
        w,
        h,
        img.into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect(),
    )
}

/// Blue for negative, white at zero, red for positive; `t` in `[-1, 1]`.
pub fn diverging(t: f64) -> Rgb<u8> {
    let t = t.clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        Rgb([255, fade, fade])
    } else {
        Rgb([fade, fade, 255])
    }
}

/// Signed field on a diverging colormap centered at 0, scaled by the
/// field's largest magnitude.
pub fn signed_field_png(field: &ScalarField) -> Vec<u8> {
    let scale = field.max_abs().max(1e-12);
    let img = RgbImage::from_fn(field.width() as u32, field.height() as u32, |x, y| {
        diverging(field.get(x as usize, y as usize) / scale)
    });
    encode(&img)
}

/// Pixels of the inside region with at least one outside 4-neighbor.
pub fn contour_pixels(phi: &ScalarField) -> BinaryMask {
    let inside = mask_from_phi(phi);
    let (w, h) = phi.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        inside.get(x, y)
            && [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                .iter()
                .any(|&(dx, dy)| {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    nx >= 0
                        && ny >= 0
                        && (nx as usize) < w
                        && (ny as usize) < h
                        && !inside.get(nx as usize, ny as usize)
                })
    })
}

/// Grayscale image with the zero level set of `phi` and the prompts drawn on top.
pub fn contour_overlay_png(
    image: &ScalarField,
    phi: &ScalarField,
    prompts: &[PointPrompt],
) -> Vec<u8> {
    let contour = contour_pixels(phi);
    let mut img = RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        if contour.get(x as usize, y as usize) {
            CONTOUR
        } else {
            let g = (image.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([g, g, g])
        }
    });
    for p in prompts
        .iter()
        .filter(|p| p.in_bounds(image.width(), image.height()))
    {
        let (px, py) = p.pixel();
        img.put_pixel(px as u32, py as u32, PROMPT);
    }
    encode(&img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::disk_sdf;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(diverging(0.0), Rgb([255, 255, 255]));
        assert_eq!(diverging(1.0), Rgb([255, 0, 0]));
        assert_eq!(diverging(-1.0), Rgb([0, 0, 255]));
    }

    #[test]
    fn rendering_is_deterministic_and_decodable() {
        let phi = disk_sdf(16, 16, 8.0, 8.0, 4.0);
        let a = signed_field_png(&phi);
        assert_eq!(a, signed_field_png(&phi));
        let img = image::load_from_memory(&a).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (16, 16));
        let center = img.get_pixel(8, 8);
        assert!(center[0] == 255 && center[1] < 200 && center[1] == center[2]);
        let corner = img.get_pixel(0, 0);
        assert_eq!(*corner, Rgb([0, 0, 255]));
        let overlay = contour_overlay_png(
            &ScalarField::zeros(16, 16),
            &phi,
            &[PointPrompt::new(8.0, 8.0)],
        );
        let img = image::load_from_memory(&overlay).unwrap().to_rgb8();
        assert_eq!(*img.get_pixel(8, 8), PROMPT);
        assert_eq!(*img.get_pixel(11, 8), CONTOUR);
    }
}
