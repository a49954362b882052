use std::fmt::Write as _;

use serde::Serialize;

use super::edit::{char_ops, word_ops, EditOps};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleEval {
    pub id: String,
    pub gt: String,
    pub hyp: String,
    pub char_ops: EditOps,
    pub word_ops: EditOps,
    pub cer: f64,
    pub wer: f64,
}

/// Corpus-level error rates: total edit operations over total ground-truth length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub samples: Vec<SampleEval>,
    /// Samples excluded because their ground truth is empty.
    pub skipped: Vec<String>,
    pub char_ops: EditOps,
    pub word_ops: EditOps,
    pub cer: f64,
    pub wer: f64,
}

impl EvalReport {
    /// Evaluates `(id, gt, hyp)` triples.
    pub fn aggregate<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        let mut samples = Vec::new();
        let mut skipped = Vec::new();
        for (id, gt, hyp) in pairs {
            let (id, gt, hyp) = (id.into(), gt.into(), hyp.into());
            let c = char_ops(&gt, &hyp);
            let w = word_ops(&gt, &hyp);
            match (c.rate(), w.rate()) {
                (Ok(cer), Ok(wer)) => samples.push(SampleEval {
                    id,
                    gt,
                    hyp,
                    char_ops: c,
                    word_ops: w,
                    cer,
                    wer,
                }),
                _ => {
                    log::warn!("sample {id}: empty ground truth, excluded from the aggregate");
                    skipped.push(id);
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::Data("no sample with a non-empty ground truth".into()));
        }
        let char_total: EditOps = samples.iter().map(|s| s.char_ops).sum();
        let word_total: EditOps = samples.iter().map(|s| s.word_ops).sum();
        Ok(EvalReport {
            cer: char_total.rate()?,
            wer: word_total.rate()?,
            char_ops: char_total,
            word_ops: word_total,
            samples,
            skipped,
        })
    }

    /// Human-readable per-sample table followed by the totals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let idw = self.samples.iter().map(|x| x.id.len()).max().unwrap_or(2).max(2);
        let _ = writeln!(s, "{:<idw$}  {:>4} {:>4} {:>4} {:>5}  {:>8}  {:>8}", "id", "S", "D", "I", "N", "CER", "WER");
        for x in &self.samples {
            let c = &x.char_ops;
            let _ = writeln!(
                s,
                "{:<idw$}  {:>4} {:>4} {:>4} {:>5}  {:>7.2}%  {:>7.2}%",
                x.id,
                c.substitutions,
                c.deletions,
                c.insertions,
                c.reference_len,
                100.0 * x.cer,
                100.0 * x.wer
            );
        }
        let c = &self.char_ops;
        let _ = writeln!(
            s,
            "{:<idw$}  {:>4} {:>4} {:>4} {:>5}  {:>7.2}%  {:>7.2}%",
            "total",
            c.substitutions,
            c.deletions,
            c.insertions,
            c.reference_len,
            100.0 * self.cer,
            100.0 * self.wer
        );
        if !self.skipped.is_empty() {
            let _ = writeln!(s, "skipped {} sample(s) with empty ground truth", self.skipped.len());
        }
        s
    }

    /// One JSON object per sample and line.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for x in &self.samples {
            s.push_str(&serde_json::to_string(x).expect("sample serializes"));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_average() {
        let r = EvalReport::aggregate([("a", "abcdefghij", "abcdefghix"), ("b", "abcdefghij", "abcdefghij")]).unwrap();
        assert!((r.cer - 0.05).abs() < 1e-15);
        let single = EvalReport::aggregate([("a", "abc", "axc")]).unwrap();
        assert_eq!(single.cer, single.samples[0].cer);
        let perfect = EvalReport::aggregate([("a", "x y", "x y"), ("b", "z", "z")]).unwrap();
        assert_eq!((perfect.cer, perfect.wer), (0.0, 0.0));
    }

    #[test]
    fn empty_ground_truth_is_skipped() {
        let r = EvalReport::aggregate([("a", "", "x"), ("b", "ab", "ab")]).unwrap();
        assert_eq!(r.skipped, vec!["a".to_string()]);
        assert_eq!(r.samples.len(), 1);
        assert!(EvalReport::aggregate([("a", "", "x")]).is_err());
    }

    #[test]
    fn writers() {
        let r = EvalReport::aggregate([("l1", "ab c", "ab d")]).unwrap();
        let line = r.to_jsonl();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["id"], "l1");
        assert_eq!(v["char_ops"]["substitutions"], 1);
        assert!(r.to_table().contains("total"));
    }
}
