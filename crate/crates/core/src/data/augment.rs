//! Training-time line image augmentation: rotation, scaling, morphology and shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageproc::GrayImage;

/// Pixels darker than this count as ink for the all-background guard.
const INK_THRESHOLD: u8 = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Probability that one morphological operation is applied.
    pub morph_prob: f64,
    pub max_shift: i32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rotation_deg: 2.0,
            scale_min: 0.95,
            scale_max: 1.05,
            morph_prob: 0.5,
            max_shift: 2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_rotation_deg >= 0.0
            && self.max_rotation_deg < 45.0
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && (0.0..=1.0).contains(&self.morph_prob)
            && self.max_shift >= 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation settings {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Morphology {
    None,
    /// Shrinks ink (3x3 max filter on intensity).
    Erode,
    /// Grows ink (3x3 min filter on intensity).
    Dilate,
}

/// One concrete draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub morphology: Morphology,
    pub shift: (i32, i32),
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        scale: 1.0,
        morphology: Morphology::None,
        shift: (0, 0),
    };

    pub fn draw<R: Rng>(rng: &mut R, cfg: &AugmentConfig) -> Self {
        let r = cfg.max_rotation_deg;
        let rotation_deg = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let scale = if cfg.scale_max > cfg.scale_min {
            rng.random_range(cfg.scale_min..=cfg.scale_max)
        } else {
            cfg.scale_min
        };
        let morphology = if rng.random_bool(cfg.morph_prob) {
            if rng.random_bool(0.5) {
                Morphology::Erode
            } else {
                Morphology::Dilate
            }
        } else {
            Morphology::None
        };
        let s = cfg.max_shift;
        let shift = (rng.random_range(-s..=s), rng.random_range(-s..=s));
        AugmentParams {
            rotation_deg,
            scale,
            morphology,
            shift,
        }
    }
}

/// Seeded augmentation; equal seeds give equal images.
pub fn augment(img: &GrayImage, seed: u64, cfg: &AugmentConfig) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    apply(img, &AugmentParams::draw(&mut rng, cfg))
}

fn has_ink(img: &GrayImage) -> bool {
    img.data().iter().any(|&v| v < INK_THRESHOLD)
}

/// Applies `p`. If the result loses all ink the input is returned unchanged.
pub fn apply(img: &GrayImage, p: &AugmentParams) -> GrayImage {
    let mut out = warp(img, p.rotation_deg, p.scale);
    out = match p.morphology {
        Morphology::None => out,
        Morphology::Erode => morph(&out, |a, b| a.max(b)),
        Morphology::Dilate => morph(&out, |a, b| a.min(b)),
    };
    if p.shift != (0, 0) {
        out = translate(&out, p.shift.0, p.shift.1);
    }
    if has_ink(img) && !has_ink(&out) {
        return img.clone();
    }
    out
}

/// 3x3 neighborhood filter with replicated borders.
pub fn morph(img: &GrayImage, pick: impl Fn(u8, u8) -> u8) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    GrayImage::from_fn(h, w, |y, x| {
        let mut v = img.get(y, x);
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                v = pick(v, img.get(yy, xx));
            }
        }
        v
    })
    .expect("same extents")
}

/// Moves content by `(dy, dx)`, filling uncovered pixels with the brightest value.
pub fn translate(img: &GrayImage, dy: i32, dx: i32) -> GrayImage {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let fill = img.data().iter().copied().max().unwrap_or(255);
    GrayImage::from_fn(img.height(), img.width(), |y, x| {
        let (sy, sx) = (y as i64 - dy as i64, x as i64 - dx as i64);
        if (0..h).contains(&sy) && (0..w).contains(&sx) {
            img.get(sy as usize, sx as usize)
        } else {
            fill
        }
    })
    .expect("same extents")
}

/// Rotation about the center combined with isotropic scaling. The output canvas
/// is the bounding box of the transformed image; uncovered pixels take the
/// brightest input value.
pub fn warp(img: &GrayImage, rotation_deg: f64, scale: f64) -> GrayImage {
    if rotation_deg == 0.0 && scale == 1.0 {
        return img.clone();
    }
    let (h, w) = (img.height() as f64, img.width() as f64);
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let nw = ((w * cos.abs() + h * sin.abs()) * scale).round().max(1.0);
    let nh = ((w * sin.abs() + h * cos.abs()) * scale).round().max(1.0);
    let fill = img.data().iter().copied().max().unwrap_or(255) as f64;
    let (cx, cy, ncx, ncy) = (w / 2.0, h / 2.0, nw / 2.0, nh / 2.0);
    let sample = |sy: f64, sx: f64| -> f64 {
        // pixel-center convention: pixel (r, c) covers [r, r+1) x [c, c+1)
        let (fy, fx) = (sy - 0.5, sx - 0.5);
        if fy < -0.5 || fx < -0.5 || fy > h - 0.5 || fx > w - 0.5 {
            return fill;
        }
        let clamp = |v: f64, hi: f64| v.clamp(0.0, hi - 1.0);
        let (fy, fx) = (clamp(fy, h), clamp(fx, w));
        let (y0, x0) = (fy.floor(), fx.floor());
        let (ty, tx) = (fy - y0, fx - x0);
        let (y0, x0) = (y0 as usize, x0 as usize);
        let (y1, x1) = ((y0 + 1).min(h as usize - 1), (x0 + 1).min(w as usize - 1));
        let p = |y: usize, x: usize| img.get(y, x) as f64;
        let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
        let bottom = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
        top * (1.0 - ty) + bottom * ty
    };
    GrayImage::from_fn(nh as usize, nw as usize, |y, x| {
        let (dx, dy) = ((x as f64 + 0.5 - ncx) / scale, (y as f64 + 0.5 - ncy) / scale);
        // inverse rotation
        let sx = cos * dx + sin * dy + cx;
        let sy = -sin * dx + cos * dy + cy;
        sample(sy, sx).round().clamp(0.0, 255.0) as u8
    })
    .expect("positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> GrayImage {
        GrayImage::from_fn(20, 60, |y, x| if (6..14).contains(&y) && x % 9 < 3 { 20 } else { 240 }).unwrap()
    }

    #[test]
    fn seeded_and_deterministic() {
        let cfg = AugmentConfig::default();
        let img = line();
        assert_eq!(augment(&img, 5, &cfg), augment(&img, 5, &cfg));
        let distinct = (0..10).filter(|&s| augment(&img, s, &cfg) != augment(&img, 5, &cfg)).count();
        assert!(distinct >= 8);
    }

    #[test]
    fn identity_draw_is_a_no_op() {
        let img = line();
        assert_eq!(apply(&img, &AugmentParams::IDENTITY), img);
        let zero = AugmentConfig {
            max_rotation_deg: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            morph_prob: 0.0,
            max_shift: 0,
        };
        for s in 0..5 {
            assert_eq!(augment(&img, s, &zero), img);
        }
    }

    #[test]
    fn dilating_a_dot_gives_a_block() {
        let mut img = GrayImage::filled(7, 7, 255).unwrap();
        img.set(3, 3, 0);
        let d = morph(&img, |a, b| a.min(b));
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&y) && (2..=4).contains(&x);
                assert_eq!(d.get(y, x) == 0, inside, "({y}, {x})");
            }
        }
        let e = morph(&d, |a, b| a.max(b));
        assert_eq!(e, img);
    }

    #[test]
    fn erosion_never_erases_everything() {
        let mut img = GrayImage::filled(9, 9, 255).unwrap();
        img.set(4, 4, 0);
        let p = AugmentParams {
            morphology: Morphology::Erode,
            ..AugmentParams::IDENTITY
        };
        assert_eq!(apply(&img, &p), img);
        let cfg = AugmentConfig::default();
        for s in 0..50 {
            assert!(has_ink(&augment(&img, s, &cfg)));
            assert!(has_ink(&augment(&line(), s, &cfg)));
        }
    }

    #[test]
    fn draws_respect_bounds() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut morphs = [0usize; 3];
        for _ in 0..2000 {
            let p = AugmentParams::draw(&mut rng, &cfg);
            assert!(p.rotation_deg.abs() <= 2.0);
            assert!((0.95..=1.05).contains(&p.scale));
            assert!(p.shift.0.abs() <= 2 && p.shift.1.abs() <= 2);
            morphs[p.morphology as usize] += 1;
        }
        // half the draws apply morphology, split evenly
        assert!((900..1100).contains(&morphs[0]), "{morphs:?}");
        assert!((400..600).contains(&morphs[1]) && (400..600).contains(&morphs[2]), "{morphs:?}");
    }

    #[test]
    fn warp_geometry() {
        let img = line();
        let up = warp(&img, 0.0, 1.05);
        assert_eq!((up.height(), up.width()), (21, 63));
        let rot = warp(&img, 2.0, 1.0);
        assert!(rot.width() >= 60 && rot.height() > 20);
        // a quarter turn maps rows to columns
        let tall = GrayImage::from_fn(4, 8, |y, x| (y * 8 + x) as u8).unwrap();
        let q = warp(&tall, 90.0, 1.0);
        assert_eq!((q.height(), q.width()), (8, 4));
    }

    #[test]
    fn shift_moves_content() {
        let mut img = GrayImage::filled(5, 5, 250).unwrap();
        img.set(2, 2, 0);
        let t = translate(&img, 1, -2);
        assert_eq!(t.get(3, 0), 0);
        assert_eq!(t.data().iter().filter(|&&v| v == 0).count(), 1);
    }
}
