use rayon::prelude::*;

use super::{check_input_size, checkpoint_charset, input_tensor};
use crate::ctc::{best_path_decode, log_prob};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::imageproc::{GrayImage, PreprocConfig};
use crate::metrics::EvalReport;
use crate::model::Model;
use crate::nn::checkpoint::Checkpoint;
use crate::prob::ProbMatrix;
use crate::wbs::WordBeamSearch;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub best_path: String,
    /// `ln P_ctc` of the best-path transcript.
    pub best_path_log_prob: f64,
    pub text: String,
    /// Decoder score of `text`.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub best_path: EvalReport,
    pub wbs: EvalReport,
}

/// Preprocessing, network and decoder bundled for inference.
pub struct Predictor {
    model: Model,
    decoder: WordBeamSearch,
    preprocess: PreprocConfig,
}

impl Predictor {
    pub fn new(model: Model, decoder: WordBeamSearch, preprocess: PreprocConfig) -> Result<Self> {
        preprocess.validate()?;
        check_input_size(&model, &preprocess)?;
        if model.classes() != decoder.charset().len() + 1 {
            return Err(Error::Config(format!(
                "charset mismatch: model emits {} classes, decoder charset has {} characters",
                model.classes(),
                decoder.charset().len()
            )));
        }
        Ok(Predictor {
            model,
            decoder,
            preprocess,
        })
    }

    /// Like [`Predictor::new`], additionally requiring the charset stored in the
    /// checkpoint (if any) to equal the decoder's.
    pub fn from_checkpoint(ck: &Checkpoint, decoder: WordBeamSearch, preprocess: PreprocConfig) -> Result<Self> {
        if let Some(cs) = checkpoint_charset(ck)? {
            if cs.chars() != decoder.charset().chars() {
                return Err(Error::Config(format!(
                    "charset mismatch: checkpoint {:?}, decoder {:?}",
                    cs.chars().iter().collect::<String>(),
                    decoder.charset().chars().iter().collect::<String>()
                )));
            }
        }
        Self::new(Model::from_checkpoint(ck)?, decoder, preprocess)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn decoder(&self) -> &WordBeamSearch {
        &self.decoder
    }

    pub fn probabilities(&self, img: &GrayImage) -> Result<ProbMatrix> {
        self.model.forward(&input_tensor(img, &self.preprocess, None)?)
    }

    pub fn predict(&self, img: &GrayImage) -> Result<Prediction> {
        self.decode(&self.probabilities(img)?)
    }

    pub fn decode(&self, probs: &ProbMatrix) -> Result<Prediction> {
        let charset = self.decoder.charset();
        let best_path = best_path_decode(probs, charset)?;
        let best_path_log_prob = log_prob(probs, &charset.encode(&best_path)?)?;
        let d = self.decoder.decode(probs)?;
        Ok(Prediction {
            best_path,
            best_path_log_prob,
            text: d.text,
            score: d.score,
        })
    }

    /// Best-path and decoder error rates over `samples`.
    pub fn evaluate(&self, samples: &[Sample]) -> Result<Evaluation> {
        let preds: Vec<Result<Prediction>> = samples
            .par_iter()
            .map(|s| self.predict(&s.load_image()?))
            .collect();
        let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
        let rows = |pick: fn(&Prediction) -> &str| {
            samples
                .iter()
                .zip(&preds)
                .map(move |(s, p)| (s.id.clone(), s.transcript.clone(), pick(p).to_string()))
        };
        Ok(Evaluation {
            best_path: EvalReport::aggregate(rows(|p| &p.best_path))?,
            wbs: EvalReport::aggregate(rows(|p| &p.text))?,
        })
    }
}
