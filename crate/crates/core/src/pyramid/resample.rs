use super::Raster;

/// Area-weighted (box filter) resampling to an arbitrary smaller size.
///
/// Each output pixel is the mean of the source area it covers, with partial
/// source pixels weighted by overlap. Integer factors reduce to a plain block
/// mean.
pub fn downsample_area(src: &Raster, width: u32, height: u32) -> Raster {
    let width = width.max(1);
    let height = height.max(1);
    if width == src.width() && height == src.height() {
        return src.clone();
    }
    let cols = weights(src.width(), width);
    let rows = weights(src.height(), height);

    // Horizontal pass into f64.
    let mut horiz = vec![0f64; width as usize * src.height() as usize];
    for y in 0..src.height() {
        let row = src.row(y);
        let out = &mut horiz[y as usize * width as usize..(y as usize + 1) * width as usize];
        for (o, taps) in out.iter_mut().zip(&cols) {
            *o = taps.iter().map(|&(i, w)| row[i] as f64 * w).sum();
        }
    }

    let mut pixels = Vec::with_capacity(width as usize * height as usize);
    for taps in &rows {
        for x in 0..width as usize {
            let v: f64 = taps
                .iter()
                .map(|&(i, w)| horiz[i * width as usize + x] * w)
                .sum();
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Raster::new(width, height, pixels).expect("sized buffer")
}

/// Per output index: the source indices it overlaps with normalised weights.
fn weights(src_len: u32, dst_len: u32) -> Vec<Vec<(usize, f64)>> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|o| {
            let start = o as f64 * scale;
            let end = (o as f64 + 1.0) * scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src_len as usize);
            (first..last)
                .filter_map(|i| {
                    let overlap = (end.min(i as f64 + 1.0) - start.max(i as f64)).max(0.0);
                    (overlap > 1e-12).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Halves both dimensions (rounding down).
pub fn halve(src: &Raster) -> Raster {
    downsample_area(src, (src.width() / 2).max(1), (src.height() / 2).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn integer_factor_is_block_mean() {
        let src = Raster::from_fn(16, 8, |x, y| (x * 13 + y * 29) as u8);
        let out = downsample_area(&src, 2, 1);
        for ox in 0..2 {
            let mut sum = 0u32;
            for y in 0..8 {
                for x in ox * 8..ox * 8 + 8 {
                    sum += src.get(x, y) as u32;
                }
            }
            let expected = (sum as f64 / 64.0).round() as u8;
            assert_eq!(out.get(ox, 0), expected);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for (s, d) in [(225, 112), (1190, 232), (10, 3), (7, 7)] {
            for taps in weights(s, d) {
                let total: f64 = taps.iter().map(|t| t.1).sum();
                assert!((total - 1.0).abs() < 1e-9, "{s}->{d}: {total}");
            }
        }
    }

    proptest! {
        #[test]
        fn constant_stays_constant(v: u8, w in 1u32..300, h in 1u32..200, fw in 1u32..8, fh in 1u32..8) {
            let src = Raster::filled(w, h, v);
            let out = downsample_area(&src, (w / fw).max(1), (h / fh).max(1));
            prop_assert!(out.pixels().iter().all(|&p| p == v));
        }

        #[test]
        fn mean_preserved_within_one_level(seed: u64, w in 16u32..200, h in 16u32..200, dw in 1u32..16, dh in 1u32..16) {
            let src = Raster::from_fn(w, h, |x, y| {
                let s = seed ^ ((x as u64) << 32 | y as u64);
                (s.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 56) as u8
            });
            let (ow, oh) = ((w / dw).max(1), (h / dh).max(1));
            let out = downsample_area(&src, ow, oh);
            prop_assert!((out.mean() - src.mean()).abs() <= 1.0);
        }
    }
}
