use super::GrayImage;
use crate::error::{Error, Result};

/// Sobel magnitudes above this (on the stretched 0..255 scale) count as edges.
const EDGE_THRESHOLD: f64 = 64.0;
/// Edges are grown by this many pixels to cover the strokes between them.
const TEXT_RADIUS: usize = 3;
/// Background pixels darker than `fit - OUTLIER_SIGMAS * sigma` are dropped before refitting.
const OUTLIER_SIGMAS: f64 = 2.0;

/// Flattens uneven lighting: stretches the contrast, locates text through edge
/// density, fits a quadratic light surface to the remaining background and
/// divides it out, so the background maps to white.
pub fn illumination_compensate(img: &GrayImage) -> Result<GrayImage> {
    let (h, w) = (img.height(), img.width());
    if h < 3 || w < 3 {
        return Err(Error::DegenerateInput(format!(
            "illumination compensation needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let stretched = contrast_stretch(img);
    let edges = sobel_edges(&stretched, h, w);
    let text = dilate(&edges, h, w, TEXT_RADIUS);
    let surface = background_surface(&stretched, &text, h, w);
    let data = stretched
        .iter()
        .zip(&surface)
        .map(|(&v, &b)| (255.0 * v / b.max(1.0)).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(h, w, data)
}

fn contrast_stretch(img: &GrayImage) -> Vec<f64> {
    let max = img.data().iter().copied().max().unwrap_or(0);
    let gain = if max == 0 { 1.0 } else { 255.0 / max as f64 };
    img.data().iter().map(|&v| v as f64 * gain).collect()
}

fn sobel_edges(v: &[f64], h: usize, w: usize) -> Vec<bool> {
    let at = |y: isize, x: isize| v[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y - 1, x)
                - at(y - 1, x + 1);
            out[y as usize * w + x as usize] = gx.hypot(gy) > EDGE_THRESHOLD;
        }
    }
    out
}

fn dilate(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    // separable square dilation: rows, then columns
    let mut rows = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = mask[y * w + lo..=y * w + hi].iter().any(|&b| b);
        }
    }
    let mut out = vec![false; h * w];
    for x in 0..w {
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            out[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
        }
    }
    out
}

fn basis(y: usize, x: usize, h: usize, w: usize) -> [f64; 6] {
    let u = 2.0 * x as f64 / (w - 1) as f64 - 1.0;
    let v = 2.0 * y as f64 / (h - 1) as f64 - 1.0;
    [1.0, u, v, u * u, u * v, v * v]
}

fn solve6(mut a: [[f64; 6]; 6], mut b: [f64; 6]) -> Option<[f64; 6]> {
    for col in 0..6 {
        let piv = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..6 {
            let f = a[row][col] / a[col][col];
            for k in col..6 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 6];
    for row in (0..6).rev() {
        let s: f64 = (row + 1..6).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn fit_quadratic(v: &[f64], keep: &[bool], h: usize, w: usize) -> Option<[f64; 6]> {
    let mut ata = [[0.0; 6]; 6];
    let mut atb = [0.0; 6];
    for y in 0..h {
        for x in 0..w {
            if !keep[y * w + x] {
                continue;
            }
            let p = basis(y, x, h, w);
            for i in 0..6 {
                for j in 0..6 {
                    ata[i][j] += p[i] * p[j];
                }
                atb[i] += p[i] * v[y * w + x];
            }
        }
    }
    solve6(ata, atb)
}

fn eval(c: &[f64; 6], y: usize, x: usize, h: usize, w: usize) -> f64 {
    basis(y, x, h, w).iter().zip(c).map(|(p, c)| p * c).sum()
}

fn background_surface(v: &[f64], text: &[bool], h: usize, w: usize) -> Vec<f64> {
    let flat = |value: f64| vec![value; h * w];
    let max = v.iter().copied().fold(0.0, f64::max);
    let mut keep: Vec<bool> = text.iter().map(|&t| !t).collect();
    let mut coef = None;
    for _ in 0..2 {
        match fit_quadratic(v, &keep, h, w) {
            Some(c) => coef = Some(c),
            None => break,
        }
        let c = coef.unwrap();
        let residuals: Vec<f64> = (0..h * w)
            .filter(|&i| keep[i])
            .map(|i| v[i] - eval(&c, i / w, i % w, h, w))
            .collect();
        let sigma = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len().max(1) as f64).sqrt();
        for i in 0..h * w {
            if keep[i] && v[i] < eval(&c, i / w, i % w, h, w) - OUTLIER_SIGMAS * sigma {
                keep[i] = false;
            }
        }
    }
    match coef {
        // the light surface is never darker than what it illuminates
        Some(c) => (0..h * w).map(|i| eval(&c, i / w, i % w, h, w).max(v[i])).collect(),
        None => flat(max),
    }
}
