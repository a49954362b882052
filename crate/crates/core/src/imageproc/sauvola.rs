use super::{BinaryImage, GrayImage, PreprocConfig};
use crate::error::Result;

/// Sauvola threshold from integer window sums: `m (1 + k (s / R - 1))`.
pub fn sauvola_threshold(sum: u64, sum_sq: u64, count: u64, k: f64, r: f64) -> f64 {
    let n = count as f64;
    let mean = sum as f64 / n;
    // n * sum_sq - sum^2 is exact in integers and never negative
    let spread = (count as u128 * sum_sq as u128 - sum as u128 * sum as u128) as f64;
    let std = spread.sqrt() / n;
    mean * (1.0 + k * (std / r - 1.0))
}

/// Local adaptive binarization with a `w x w` window and replicated borders.
///
/// Window sums come from integral images over the replicate-padded raster, so
/// the per-pixel statistics are exact integers.
pub fn sauvola_binarize(img: &GrayImage, cfg: &PreprocConfig) -> Result<BinaryImage> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    let rad = cfg.sauvola_window / 2;
    let (ph, pw) = (h + 2 * rad, w + 2 * rad);
    let stride = pw + 1;
    let mut sum = vec![0u64; (ph + 1) * stride];
    let mut sq = vec![0u64; (ph + 1) * stride];
    for y in 0..ph {
        let sy = y.saturating_sub(rad).min(h - 1);
        let (mut row_s, mut row_q) = (0u64, 0u64);
        for x in 0..pw {
            let sx = x.saturating_sub(rad).min(w - 1);
            let v = img.get(sy, sx) as u64;
            row_s += v;
            row_q += v * v;
            sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_s;
            sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_q;
        }
    }
    let win = cfg.sauvola_window;
    let count = (win * win) as u64;
    let rect = |t: &[u64], y: usize, x: usize| {
        // padded window rows y..y+win, columns x..x+win
        t[(y + win) * stride + x + win] + t[y * stride + x] - t[y * stride + x + win] - t[(y + win) * stride + x]
    };
    let mut out = BinaryImage::blank(h, w)?;
    for y in 0..h {
        for x in 0..w {
            let thr = sauvola_threshold(rect(&sum, y, x), rect(&sq, y, x), count, cfg.sauvola_k, cfg.sauvola_r);
            out.set(y, x, (img.get(y, x) as f64) < thr);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(img: &GrayImage, cfg: &PreprocConfig) -> BinaryImage {
        let (h, w) = (img.height() as i64, img.width() as i64);
        let rad = (cfg.sauvola_window / 2) as i64;
        let mut out = BinaryImage::blank(img.height(), img.width()).unwrap();
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut q) = (0u64, 0u64);
                for dy in -rad..=rad {
                    for dx in -rad..=rad {
                        let v = img.get((y + dy).clamp(0, h - 1) as usize, (x + dx).clamp(0, w - 1) as usize) as u64;
                        s += v;
                        q += v * v;
                    }
                }
                let n = (2 * rad + 1).pow(2) as u64;
                let thr = sauvola_threshold(s, q, n, cfg.sauvola_k, cfg.sauvola_r);
                out.set(y as usize, x as usize, (img.get(y as usize, x as usize) as f64) < thr);
            }
        }
        out
    }

    #[test]
    fn uniform_and_black_images_are_background() {
        let cfg = PreprocConfig::default();
        for v in [0u8, 137, 255] {
            let img = GrayImage::filled(9, 13, v).unwrap();
            assert_eq!(sauvola_binarize(&img, &cfg).unwrap().foreground_count(), 0);
        }
    }

    #[test]
    fn checkerboard_matches_naive() {
        let cfg = PreprocConfig {
            sauvola_window: 3,
            ..Default::default()
        };
        let img = GrayImage::from_fn(6, 7, |y, x| if (x + y) % 2 == 0 { 0 } else { 255 }).unwrap();
        assert_eq!(sauvola_binarize(&img, &cfg).unwrap(), naive(&img, &cfg));
    }

    #[test]
    fn random_images_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for window in [3, 5, 25] {
            let cfg = PreprocConfig {
                sauvola_window: window,
                ..Default::default()
            };
            let (h, w) = (rng.random_range(1..20), rng.random_range(1..30));
            let img = GrayImage::from_fn(h, w, |_, _| 0).unwrap();
            let data: Vec<u8> = img.data().iter().map(|_| rng.random()).collect();
            let img = GrayImage::new(h, w, data).unwrap();
            assert_eq!(sauvola_binarize(&img, &cfg).unwrap(), naive(&img, &cfg));
        }
    }

    #[test]
    fn bilevel_input_stays_bilevel() {
        let img = GrayImage::from_fn(10, 10, |y, x| if (3..6).contains(&x) && y > 1 { 0 } else { 255 }).unwrap();
        let b = sauvola_binarize(&img, &PreprocConfig { sauvola_window: 5, ..Default::default() }).unwrap();
        // dark pixels only, never white ones
        for y in 0..10 {
            for x in 0..10 {
                if b.get(y, x) {
                    assert_eq!(img.get(y, x), 0);
                }
            }
        }
        assert!(b.foreground_count() > 0);
    }
}
