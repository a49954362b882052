//! Line datasets: manifest loading and writing, split bookkeeping, augmentation
//! and the synthetic micro corpus.
//!
//! A dataset directory holds `train.txt`, `valid.txt` and `test.txt`, each with
//! one `<id>\t<transcript>` line per sample (UTF-8, LF endings), and the images
//! as `images/<id>.pgm`. An optional `chars.txt` declares the allowed characters.

pub mod augment;
pub mod micro;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use augment::{augment, AugmentConfig, AugmentParams, Morphology};
pub use micro::gen_micro_dataset;

use crate::error::{Error, Result};
use crate::imageproc::GrayImage;
use crate::wbs::CharSet;

/// Environment variable naming a directory with real dataset copies.
pub const DATA_DIR_ENV: &str = "HTR_DATA_DIR";

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

/// Largest tolerated fraction of bad manifest lines.
pub const MAX_BAD_FRACTION: f64 = 0.01;

/// Published split sizes and charset size of a benchmark corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub charset: usize,
}

pub const IAM_SIZES: SplitSizes = SplitSizes {
    train: 6161,
    valid: 900,
    test: 1861,
    charset: 79,
};

pub const GW_SIZES: SplitSizes = SplitSizes {
    train: 325,
    valid: 168,
    test: 163,
    charset: 82,
};

/// `$HTR_DATA_DIR`, if set and non-empty.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    pub transcript: String,
}

impl Sample {
    pub fn load_image(&self) -> Result<GrayImage> {
        GrayImage::read_pgm(&self.image_path)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
    pub charset: CharSet,
}

/// A manifest line that was dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub split: String,
    pub line: usize,
    pub id: String,
    pub problem: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.txt:{} [{}]: {}", self.split, self.line, self.id, self.problem)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadReport {
    pub sizes: SplitSizes,
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.sizes;
        write!(
            f,
            "train {} / valid {} / test {}, charset {}, {} dropped",
            s.train,
            s.valid,
            s.test,
            s.charset,
            self.diagnostics.len()
        )
    }
}

fn read_manifest(dir: &Path, split: &str) -> Result<Vec<(usize, String, String)>> {
    let path = dir.join(format!("{split}.txt"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, transcript) = line.split_once('\t').unwrap_or((line, ""));
        rows.push((i + 1, id.to_string(), if line.contains('\t') { transcript.to_string() } else { "\0".into() }));
    }
    Ok(rows)
}

fn line_problem(id: &str, transcript: &str, declared: Option<&CharSet>) -> Option<String> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Some(format!("invalid id {id:?}"));
    }
    if transcript == "\0" {
        return Some("missing tab separator".into());
    }
    if transcript.contains('\r') {
        return Some("CR in line (manifests use LF endings)".into());
    }
    if transcript.is_empty() {
        return Some("empty transcript".into());
    }
    if let Some(cs) = declared {
        if let Some(c) = transcript.chars().find(|&c| cs.index_of(c).is_none()) {
            return Some(format!("character {c:?} outside the declared charset"));
        }
    }
    None
}

/// Loads and validates a dataset directory. Bad lines are dropped with a
/// diagnostic; more than 1% bad lines is an error.
pub fn load_partition(dir: &Path) -> Result<(Partition, LoadReport)> {
    let declared_path = dir.join("chars.txt");
    let declared = if declared_path.exists() {
        Some(CharSet::with_default_wordchars(CharSet::parse_list(
            &std::fs::read_to_string(&declared_path).map_err(|e| Error::io(&declared_path, e))?,
        )?)?)
    } else {
        None
    };
    let mut diagnostics = Vec::new();
    let mut seen = HashSet::new();
    let mut splits: Vec<Vec<Sample>> = Vec::new();
    let mut total = 0usize;
    for split in SPLITS {
        let rows = read_manifest(dir, split)?;
        total += rows.len();
        let mut candidates = Vec::new();
        for (line, id, transcript) in rows {
            let problem = line_problem(&id, &transcript, declared.as_ref())
                .or_else(|| (!seen.insert(id.clone())).then(|| "duplicate id".to_string()));
            match problem {
                Some(problem) => diagnostics.push(Diagnostic {
                    split: split.into(),
                    line,
                    id,
                    problem,
                }),
                None => candidates.push((line, id, transcript)),
            }
        }
        let checked: Vec<std::result::Result<Sample, Diagnostic>> = candidates
            .into_par_iter()
            .map(|(line, id, transcript)| {
                let image_path = dir.join("images").join(format!("{id}.pgm"));
                match GrayImage::read_pgm(&image_path) {
                    Ok(_) => Ok(Sample {
                        id,
                        image_path,
                        transcript,
                    }),
                    Err(e) => Err(Diagnostic {
                        split: split.into(),
                        line,
                        id,
                        problem: format!("unreadable image: {e}"),
                    }),
                }
            })
            .collect();
        let mut samples = Vec::new();
        for r in checked {
            match r {
                Ok(s) => samples.push(s),
                Err(d) => diagnostics.push(d),
            }
        }
        splits.push(samples);
    }
    for d in &diagnostics {
        log::warn!("{d}");
    }
    if total > 0 && diagnostics.len() as f64 > MAX_BAD_FRACTION * total as f64 {
        return Err(Error::Data(format!(
            "{} of {total} manifest lines are bad (first: {})",
            diagnostics.len(),
            diagnostics[0]
        )));
    }
    let test = splits.pop().expect("three splits");
    let valid = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    if train.is_empty() {
        return Err(Error::Data(format!("{}: training split is empty", dir.display())));
    }
    let charset = CharSet::from_texts(train.iter().chain(&valid).chain(&test).map(|s| s.transcript.as_str()))?;
    let sizes = SplitSizes {
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
        charset: charset.len(),
    };
    let report = LoadReport { sizes, diagnostics };
    log::info!("{}: {report}", dir.display());
    Ok((
        Partition {
            train,
            valid,
            test,
            charset,
        },
        report,
    ))
}

pub(crate) fn write_image(img: &GrayImage, path: &Path) -> Result<()> {
    img.write_pgm(path)
}

impl Partition {
    pub fn split(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "valid" => Some(&self.valid),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            charset: self.charset.len(),
        }
    }

    /// Training transcripts, one per line (the decoder's language-model corpus).
    pub fn corpus(&self) -> String {
        let mut s = String::new();
        for sample in &self.train {
            s.push_str(&sample.transcript);
            s.push('\n');
        }
        s
    }

    /// Writes the three manifests plus `chars.txt`, `wordchars.txt` and
    /// `corpus.txt` into `dir`. Images are not copied.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        for split in SPLITS {
            let mut text = String::new();
            for s in self.split(split).expect("known split") {
                text.push_str(&s.id);
                text.push('\t');
                text.push_str(&s.transcript);
                text.push('\n');
            }
            put(&format!("{split}.txt"), text)?;
        }
        put("chars.txt", CharSet::format_list(self.charset.chars()))?;
        put("wordchars.txt", CharSet::format_list(&self.charset.wordchars()))?;
        put("corpus.txt", self.corpus())
    }
}
