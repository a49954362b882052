//! Synthetic line corpus over a five-character alphabet for desk-scale runs.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_image, Partition, Sample};
use crate::error::Result;
use crate::imageproc::GrayImage;
use crate::wbs::CharSet;

pub const ALPHABET: [char; 5] = [' ', 'a', 'b', 'c', 'd'];
pub const GLYPH: usize = 16;
pub const MARGIN_X: usize = 4;
pub const MARGIN_Y: usize = 2;
pub const MAX_DY: usize = 2;
pub const MAX_GAP: usize = 3;
pub const HEIGHT: usize = GLYPH + MAX_DY + 2 * MARGIN_Y;
pub const MIN_LEN: usize = 3;
pub const MAX_LEN: usize = 12;
pub const SPLIT: (usize, usize, usize) = (200, 40, 40);
const VOCAB: usize = 12;
const INK: u8 = 40;

pub type Glyph = [[bool; GLYPH]; GLYPH];

/// Bitmap of a glyph; `None` for characters outside the alphabet.
pub fn glyph(c: char) -> Option<Glyph> {
    let mut g = [[false; GLYPH]; GLYPH];
    let mut fill = |y0: usize, y1: usize, x0: usize, x1: usize| {
        for row in &mut g[y0..=y1] {
            for v in &mut row[x0..=x1] {
                *v = true;
            }
        }
    };
    match c {
        ' ' => {}
        // ring
        'a' => {
            for y in 0..GLYPH {
                for x in 0..GLYPH {
                    let (dy, dx) = (y as f64 - 7.5, x as f64 - 7.5);
                    let r = (dy * dy + dx * dx).sqrt();
                    g[y][x] = (4.0..6.5).contains(&r);
                }
            }
        }
        // E shape
        'b' => {
            fill(1, 14, 3, 4);
            fill(1, 2, 3, 12);
            fill(7, 8, 3, 10);
            fill(13, 14, 3, 12);
        }
        // cross
        'c' => {
            for i in 1..15 {
                for d in 0..2 {
                    g[i][(i + d).min(15)] = true;
                    g[i][(15 - i + d).min(15)] = true;
                }
            }
        }
        // H shape
        'd' => {
            fill(1, 14, 2, 3);
            fill(1, 14, 12, 13);
            fill(7, 8, 2, 13);
        }
        _ => return None,
    }
    Some(g)
}

/// Deterministic vocabulary of distinct words with 2 to 4 letters.
fn vocabulary(rng: &mut ChaCha8Rng) -> Vec<String> {
    let letters = &ALPHABET[1..];
    let mut words: Vec<String> = Vec::new();
    while words.len() < VOCAB {
        let len = rng.random_range(2..=4);
        let w: String = (0..len).map(|_| *letters.choose(rng).expect("nonempty")).collect();
        if !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

fn transcript(rng: &mut ChaCha8Rng, vocab: &[String]) -> String {
    loop {
        let n = rng.random_range(1..=4);
        let text = (0..n)
            .map(|_| vocab.choose(rng).expect("nonempty").as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if (MIN_LEN..=MAX_LEN).contains(&text.chars().count()) {
            return text;
        }
    }
}

/// Renders `text` with per-glyph vertical jitter and random inter-glyph gaps on
/// a softly shaded background.
pub fn render(text: &str, rng: &mut ChaCha8Rng) -> Result<GrayImage> {
    let glyphs: Vec<Glyph> = text
        .chars()
        .map(|c| glyph(c).ok_or_else(|| crate::Error::Data(format!("no glyph for {c:?}"))))
        .collect::<Result<_>>()?;
    let mut placed = Vec::with_capacity(glyphs.len());
    let mut x = MARGIN_X;
    for (i, g) in glyphs.iter().enumerate() {
        if i > 0 {
            x += rng.random_range(0..=MAX_GAP);
        }
        placed.push((x, MARGIN_Y + rng.random_range(0..=MAX_DY), g));
        x += GLYPH;
    }
    let width = x + MARGIN_X;
    let mut img = GrayImage::from_fn(HEIGHT, width, |y, x| {
        (255.0 - 30.0 * x as f64 / width as f64 - 10.0 * y as f64 / HEIGHT as f64).round() as u8
    })?;
    for (x0, y0, g) in placed {
        for (gy, row) in g.iter().enumerate() {
            for (gx, &on) in row.iter().enumerate() {
                if on {
                    img.set(y0 + gy, x0 + gx, INK);
                }
            }
        }
    }
    Ok(img)
}

/// Template-matching reader that knows only the rendering constants, not the
/// glyph positions. Returns the transcript when exactly one parse exists.
pub fn read_rendered(img: &GrayImage) -> Option<String> {
    if img.height() != HEIGHT || img.width() < 2 * MARGIN_X + GLYPH {
        return None;
    }
    let ink = |y: usize, x: usize| img.get(y, x) < 128;
    let end = img.width() - MARGIN_X;
    let blank_cols = |x0: usize, x1: usize| (x0..x1).all(|x| (0..HEIGHT).all(|y| !ink(y, x)));
    if !blank_cols(0, MARGIN_X) || !blank_cols(end, img.width()) {
        return None;
    }
    let matches = |c: char, x: usize| -> bool {
        let g = glyph(c).expect("alphabet glyph");
        (0..=MAX_DY).any(|dy| {
            let top = MARGIN_Y + dy;
            (0..HEIGHT).all(|y| {
                (0..GLYPH).all(|gx| {
                    let want = (top..top + GLYPH).contains(&y) && g[y - top][gx];
                    ink(y, x + gx) == want
                })
            })
        })
    };
    // distinct readings of columns x..end, at most two kept
    fn go(
        x: usize,
        first: bool,
        end: usize,
        matches: &dyn Fn(char, usize) -> bool,
        blank: &dyn Fn(usize, usize) -> bool,
        memo: &mut HashMap<usize, Vec<String>>,
    ) -> Vec<String> {
        if let Some(r) = memo.get(&x).filter(|_| !first) {
            return r.clone();
        }
        let mut readings: Vec<String> = Vec::new();
        let gaps = if first { 0..=0 } else { 0..=MAX_GAP };
        for gap in gaps {
            let gx = x + gap;
            if gx + GLYPH > end || !blank(x, gx) {
                continue;
            }
            for c in ALPHABET {
                if !matches(c, gx) {
                    continue;
                }
                let next = gx + GLYPH;
                let rests = if next == end {
                    vec![String::new()]
                } else {
                    go(next, false, end, matches, blank, memo)
                };
                for rest in rests {
                    let text = format!("{c}{rest}");
                    if readings.len() < 2 && !readings.contains(&text) {
                        readings.push(text);
                    }
                }
            }
        }
        if !first {
            memo.insert(x, readings.clone());
        }
        readings
    }
    let mut memo = HashMap::new();
    let mut readings = go(MARGIN_X, true, end, &matches, &blank_cols, &mut memo);
    if readings.len() == 1 {
        readings.pop()
    } else {
        None
    }
}

/// In-memory corpus: `(id, transcript, image)` for all 280 lines, in split order.
pub fn generate(seed: u64) -> Result<Vec<(String, String, GrayImage)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary(&mut rng);
    let total = SPLIT.0 + SPLIT.1 + SPLIT.2;
    (0..total)
        .map(|i| {
            let text = transcript(&mut rng, &vocab);
            let img = render(&text, &mut rng)?;
            Ok((format!("micro-{i:04}"), text, img))
        })
        .collect()
}

/// Writes the micro corpus under `out` (manifests, images, charset files and
/// the training-transcript corpus) and returns its partition.
pub fn gen_micro_dataset(out: &Path, seed: u64) -> Result<Partition> {
    let lines = generate(seed)?;
    let images = out.join("images");
    std::fs::create_dir_all(&images).map_err(|e| crate::Error::io(&images, e))?;
    let mut samples = Vec::with_capacity(lines.len());
    for (id, text, img) in &lines {
        let path = images.join(format!("{id}.pgm"));
        write_image(img, &path)?;
        samples.push(Sample {
            id: id.clone(),
            image_path: path,
            transcript: text.clone(),
        });
    }
    let test = samples.split_off(SPLIT.0 + SPLIT.1);
    let valid = samples.split_off(SPLIT.0);
    let charset = CharSet::from_texts(samples.iter().chain(&valid).chain(&test).map(|s| s.transcript.as_str()))?;
    let partition = Partition {
        train: samples,
        valid,
        test,
        charset,
    };
    partition.write(out)?;
    Ok(partition)
}
