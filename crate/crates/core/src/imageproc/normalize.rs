use super::{GrayImage, PreprocConfig};
use crate::error::Result;
use crate::nn::Tensor;

/// Placement of the scaled line inside the normalized canvas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub scale: f64,
    pub height: usize,
    pub width: usize,
}

/// Aspect-preserving fit of an `h x w` image into the target canvas.
pub fn fit(h: usize, w: usize, cfg: &PreprocConfig) -> Placement {
    let scale = (cfg.target_h as f64 / h as f64).min(cfg.target_w as f64 / w as f64);
    Placement {
        scale,
        height: ((h as f64 * scale).round() as usize).clamp(1, cfg.target_h),
        width: ((w as f64 * scale).round() as usize).clamp(1, cfg.target_w),
    }
}

/// Bilinear resample to `nh x nw` using pixel-center alignment and replicated borders.
pub fn resize(img: &GrayImage, nh: usize, nw: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (ry, rx) = (h as f64 / nh as f64, w as f64 / nw as f64);
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        let sy = ((y as f64 + 0.5) * ry - 0.5).clamp(0.0, (h - 1) as f64);
        let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
        let y1 = (y0 + 1).min(h - 1);
        for x in 0..nw {
            let sx = ((x as f64 + 0.5) * rx - 0.5).clamp(0.0, (w - 1) as f64);
            let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
            let x1 = (x0 + 1).min(w - 1);
            let top = img.get(y0, x0) as f64 * (1.0 - fx) + img.get(y0, x1) as f64 * fx;
            let bottom = img.get(y1, x0) as f64 * (1.0 - fx) + img.get(y1, x1) as f64 * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Scales the line to fit the target canvas, pastes it at the left edge of a
/// white canvas and maps intensities to `[0, 1]`. Output shape `[target_h, target_w, 1]`.
pub fn normalize_size(img: &GrayImage, cfg: &PreprocConfig) -> Result<Tensor> {
    cfg.validate()?;
    let p = fit(img.height(), img.width(), cfg);
    let (th, tw) = (cfg.target_h, cfg.target_w);
    let mut canvas = vec![1.0; th * tw];
    let pixels = if p.height == img.height() && p.width == img.width() {
        img.data().iter().map(|&v| v as f64).collect()
    } else {
        resize(img, p.height, p.width)
    };
    for y in 0..p.height {
        for x in 0..p.width {
            canvas[y * tw + x] = (pixels[y * p.width + x] / 255.0).clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec(&[th, tw, 1], canvas)
}
