use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};

use super::{PyramidError, Raster};

pub const DEFAULT_QUALITY: u8 = 80;
pub const FALLBACK_QUALITY: u8 = 70;
/// Soft per-image budget.
pub const SOFT_BUDGET_BYTES: usize = 10 * 1024;
/// Images above this are re-encoded once at [`FALLBACK_QUALITY`].
pub const HARD_BUDGET_BYTES: usize = 16 * 1024;

/// Baseline JFIF, single 8-bit gray component.
pub fn encode_jpeg(r: &Raster, quality: u8) -> Result<Vec<u8>, PyramidError> {
    if r.width() == 0 || r.height() == 0 {
        return Err(PyramidError::Format("cannot encode an empty raster".into()));
    }
    let mut out = Vec::with_capacity(8 * 1024);
    JpegEncoder::new_with_quality(&mut out, quality.clamp(1, 100))
        .encode(r.pixels(), r.width(), r.height(), ExtendedColorType::L8)
        .map_err(|e| PyramidError::Format(e.to_string()))?;
    Ok(out)
}

/// Encodes at the default quality, retrying once at the fallback quality when
/// the first attempt exceeds the hard budget.
pub fn encode_tile(r: &Raster) -> Result<Vec<u8>, PyramidError> {
    let blob = encode_jpeg(r, DEFAULT_QUALITY)?;
    if blob.len() <= HARD_BUDGET_BYTES {
        return Ok(blob);
    }
    encode_jpeg(r, FALLBACK_QUALITY)
}

pub fn decode_jpeg(blob: &[u8]) -> Result<Raster, PyramidError> {
    let img = image::load_from_memory_with_format(blob, ImageFormat::Jpeg)
        .map_err(|e| PyramidError::Format(e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Raster::new(w, h, img.into_raw())
}

pub fn is_jpeg(blob: &[u8]) -> bool {
    blob.starts_with(&[0xFF, 0xD8])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(w: u32, h: u32) -> Raster {
        // Smooth-ish deterministic texture.
        Raster::from_fn(w, h, |x, y| {
            let (fx, fy) = (x as f64, y as f64);
            (128.0 + 60.0 * (fx / 9.0).sin() * (fy / 13.0).cos() + 30.0 * ((fx + fy) / 5.0).sin())
                as u8
        })
    }

    #[test]
    fn constant_image_is_tiny() {
        let blob = encode_jpeg(&Raster::filled(225, 150, 117), DEFAULT_QUALITY).unwrap();
        assert!(is_jpeg(&blob));
        assert!(blob.len() <= 2048, "{}", blob.len());
    }

    #[test]
    fn shape_survives_double_round_trip() {
        let r = texture(225, 150);
        let once = decode_jpeg(&encode_jpeg(&r, 80).unwrap()).unwrap();
        let twice = decode_jpeg(&encode_jpeg(&once, 80).unwrap()).unwrap();
        assert_eq!((twice.width(), twice.height()), (225, 150));
        for (a, b) in r.pixels().iter().zip(once.pixels()) {
            assert!((*a as i32 - *b as i32).abs() <= 24);
        }
    }

    #[test]
    fn single_component_baseline() {
        let blob = encode_jpeg(&texture(64, 48), 80).unwrap();
        // SOF0 marker followed by: length, precision 8, height, width, 1 component.
        let sof = blob
            .windows(2)
            .position(|w| w == [0xFF, 0xC0])
            .expect("baseline SOF0");
        assert_eq!(blob[sof + 4], 8);
        assert_eq!(u16::from_be_bytes([blob[sof + 5], blob[sof + 6]]), 48);
        assert_eq!(u16::from_be_bytes([blob[sof + 7], blob[sof + 8]]), 64);
        assert_eq!(blob[sof + 9], 1);
        assert!(
            !blob.windows(2).any(|w| w == [0xFF, 0xC2]),
            "not progressive"
        );
    }

    #[test]
    fn empty_raster_rejected() {
        let r = Raster::new(0, 10, vec![]).unwrap();
        assert!(matches!(encode_jpeg(&r, 80), Err(PyramidError::Format(_))));
    }
}
