use super::{BinaryImage, PreprocConfig};
use crate::error::Result;

fn shifts(height: usize, angle_deg: f64) -> Vec<i64> {
    let t = angle_deg.to_radians().tan();
    // the bottom row stays put; f64::round is symmetric, so +a and -a cancel exactly
    (0..height).map(|y| ((height - 1 - y) as f64 * t).round() as i64).collect()
}

/// Horizontal shear by `angle_deg`: row `y` moves right by
/// `round((h - 1 - y) * tan(angle))`. The canvas widens to keep every pixel.
pub fn shear(img: &BinaryImage, angle_deg: f64) -> BinaryImage {
    let (h, w) = (img.height(), img.width());
    let s = shifts(h, angle_deg);
    let lo = s.iter().copied().min().unwrap_or(0).min(0);
    let hi = s.iter().copied().max().unwrap_or(0).max(0);
    let out_w = w + (hi - lo) as usize;
    let mut out = BinaryImage::blank(h, out_w).expect("non-empty canvas");
    for y in 0..h {
        let off = (s[y] - lo) as usize;
        for x in 0..w {
            if img.get(y, x) {
                out.set(y, x + off, true);
            }
        }
    }
    out
}

/// Sum over columns of the squared longest vertical foreground run.
pub fn continuity_score(img: &BinaryImage) -> u64 {
    let mut total = 0u64;
    for x in 0..img.width() {
        let (mut best, mut run) = (0u64, 0u64);
        for y in 0..img.height() {
            if img.get(y, x) {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        total += best * best;
    }
    total
}

/// Removes slant by the grid shear maximizing [`continuity_score`]; ties go to
/// the smallest `|angle|`, then to the negative angle. Returns the sheared
/// image and the chosen angle; an image without foreground comes back unchanged.
pub fn deslant(img: &BinaryImage, cfg: &PreprocConfig) -> Result<(BinaryImage, f64)> {
    cfg.validate()?;
    if img.foreground_count() == 0 {
        return Ok((img.clone(), 0.0));
    }
    let mut best: Option<(u64, f64, BinaryImage)> = None;
    for angle in cfg.shear_grid() {
        let candidate = shear(img, angle);
        let score = continuity_score(&candidate);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, angle, candidate));
        }
    }
    let (_, angle, out) = best.expect("non-empty shear grid");
    Ok((out, angle))
}

/// Foreground pixel coordinates relative to the bounding box.
pub fn foreground_shape(img: &BinaryImage) -> Vec<(usize, usize)> {
    let pts: Vec<(usize, usize)> = (0..img.height())
        .flat_map(|y| (0..img.width()).map(move |x| (y, x)))
        .filter(|&(y, x)| img.get(y, x))
        .collect();
    let y0 = pts.iter().map(|p| p.0).min().unwrap_or(0);
    let x0 = pts.iter().map(|p| p.1).min().unwrap_or(0);
    pts.into_iter().map(|(y, x)| (y - y0, x - x0)).collect()
}
