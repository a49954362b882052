//! Training loop with CTC loss, plateau-driven learning-rate schedule and early
//! stopping, plus prediction with word beam search.

mod config;
mod controller;
mod optim;
mod predict;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::TrainConfig;
pub use controller::{Decision, PlateauController};
pub use optim::{Optimizer, RmsProp, Sgd};
pub use predict::{Evaluation, Prediction, Predictor};

use crate::ctc::{ctc_loss_logits, required_steps};
use crate::data::{augment, Partition, Sample};
use crate::error::{Error, Result};
use crate::imageproc::{preprocess, GrayImage, PreprocConfig};
use crate::model::Model;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{ForwardCtx, Tensor};
use crate::wbs::CharSet;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

/// Checkpoint metadata keys written by the trainer.
pub mod meta {
    pub const CHARSET: &str = "charset";
    pub const WORDCHARS: &str = "wordchars";
    pub const EPOCH: &str = "train.epoch";
    /// Validation loss as the hex bit pattern of the `f64`.
    pub const VALID_LOSS_BITS: &str = "train.valid_loss_bits";
    pub const TRAIN_CONFIG: &str = "train.config";
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainState {
    pub epoch: usize,
    pub best_valid_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improve: usize,
    pub current_lr: f64,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,valid_loss,lr\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss, r.valid_loss, r.lr);
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// No validation improvement within the stop tolerance.
    Plateau,
    EpochCap,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Weights of the epoch with the lowest validation loss.
    pub best: Model,
    pub state: TrainState,
    pub stop: StopReason,
}

/// Per-purpose seed derived from the run seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

struct Item {
    id: String,
    image: GrayImage,
    label: Vec<usize>,
}

fn load_items(samples: &[Sample], charset: &CharSet, steps: usize, split: &str) -> Result<Vec<Item>> {
    let loaded: Vec<Result<Option<Item>>> = samples
        .par_iter()
        .map(|s| {
            let label = charset.encode(&s.transcript)?;
            if required_steps(&label) > steps {
                log::warn!(
                    "{split} sample {}: label needs {} frames but the model emits {steps}; skipped",
                    s.id,
                    required_steps(&label)
                );
                return Ok(None);
            }
            Ok(Some(Item {
                id: s.id.clone(),
                image: s.load_image()?,
                label,
            }))
        })
        .collect();
    loaded.into_iter().filter_map(|r| r.transpose()).collect()
}

/// Network input for one line, optionally augmented.
pub fn input_tensor(
    img: &GrayImage,
    preproc: &PreprocConfig,
    augmentation: Option<(u64, &crate::data::AugmentConfig)>,
) -> Result<Tensor> {
    match augmentation {
        Some((seed, cfg)) => preprocess(&augment(img, seed, cfg), preproc),
        None => preprocess(img, preproc),
    }
}

/// Mean CTC loss over the items, no augmentation or dropout.
fn mean_loss(model: &Model, items: &[Item], preproc: &PreprocConfig) -> Result<f64> {
    if items.is_empty() {
        return Ok(f64::INFINITY);
    }
    let losses: Vec<Result<f64>> = items
        .par_iter()
        .map(|it| {
            let x = input_tensor(&it.image, preproc, None)?;
            let (logits, _) = model.forward_train(&x, &mut ForwardCtx::inference())?;
            Ok(ctc_loss_logits(&logits, &it.label)?.value)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / items.len() as f64)
}

/// Mean validation loss of `model` on `samples` (skipping infeasible labels).
pub fn validation_loss(model: &Model, samples: &[Sample], charset: &CharSet, preproc: &PreprocConfig) -> Result<f64> {
    let items = load_items(samples, charset, model.time_steps(), "valid")?;
    mean_loss(model, &items, preproc)
}

pub fn model_checkpoint(model: &Model, charset: &CharSet) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    ck.set_meta(meta::CHARSET, CharSet::format_list(charset.chars()));
    ck.set_meta(meta::WORDCHARS, CharSet::format_list(&charset.wordchars()));
    ck
}

/// Character set recorded in a trainer checkpoint.
pub fn checkpoint_charset(ck: &Checkpoint) -> Result<Option<CharSet>> {
    let Some(chars) = ck.meta(meta::CHARSET) else {
        return Ok(None);
    };
    let chars = CharSet::parse_list(chars)?;
    let cs = match ck.meta(meta::WORDCHARS) {
        Some(w) => CharSet::new(chars, CharSet::parse_list(w)?)?,
        None => CharSet::with_default_wordchars(chars)?,
    };
    Ok(Some(cs))
}

/// Training configuration recorded in a trainer checkpoint.
pub fn checkpoint_train_config(ck: &Checkpoint) -> Result<Option<TrainConfig>> {
    ck.meta(meta::TRAIN_CONFIG).map(TrainConfig::from_toml).transpose()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The normalized image must have the model's input extents.
pub fn check_input_size(model: &Model, preproc: &PreprocConfig) -> Result<()> {
    let [h, w, _] = model.config().input;
    if (h, w) != (preproc.target_h, preproc.target_w) {
        return Err(Error::Config(format!(
            "model input is {h}x{w} but preprocessing targets {}x{}",
            preproc.target_h, preproc.target_w
        )));
    }
    Ok(())
}

pub struct Trainer {
    cfg: TrainConfig,
    optimizer: Box<dyn Optimizer>,
    out: Option<PathBuf>,
}

impl Trainer {
    /// RMSProp trainer; with `out` set, the best checkpoint and the history CSV
    /// are written there as training progresses.
    pub fn new(cfg: TrainConfig, out: Option<&Path>) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            cfg,
            optimizer: Box::new(RmsProp::default()),
            out: out.map(Path::to_path_buf),
        })
    }

    pub fn with_optimizer(mut self, optimizer: Box<dyn Optimizer>) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn train(mut self, mut model: Model, partition: &Partition) -> Result<TrainOutcome> {
        let cfg = self.cfg.clone();
        let charset = &partition.charset;
        if model.classes() != charset.len() + 1 {
            return Err(Error::Config(format!(
                "model emits {} classes but the dataset charset has {} characters",
                model.classes(),
                charset.len()
            )));
        }
        check_input_size(&model, &cfg.preprocess)?;
        if let Some(out) = &self.out {
            std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        }
        let steps = model.time_steps();
        let train = load_items(&partition.train, charset, steps, "train")?;
        let valid = load_items(&partition.valid, charset, steps, "valid")?;
        if train.is_empty() || valid.is_empty() {
            return Err(Error::Data("training and validation splits need feasible samples".into()));
        }
        log::info!(
            "training on {} lines, validating on {}, {} parameters",
            train.len(),
            valid.len(),
            model.enumerated_params()
        );
        let mut controller = PlateauController::new(
            cfg.lr,
            cfg.stop_tolerance,
            cfg.reduce_tolerance,
            cfg.reduce_factor,
            cfg.min_delta,
        );
        let mut history = Vec::new();
        let mut best = model.clone();
        let mut best_epoch = 0;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let stop = loop {
            let epoch = controller.epoch + 1;
            let lr = controller.lr;
            order.sort_unstable();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE, epoch as u64)));
            let mut loss_sum = 0.0;
            for batch in order.chunks(cfg.batch) {
                let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
                    .par_iter()
                    .map(|&i| sample_gradient(&cfg, &model, &train[i], epoch, i))
                    .collect();
                let mut total: Option<Vec<Tensor>> = None;
                for r in results {
                    let (loss, grads) = r?;
                    loss_sum += loss;
                    match &mut total {
                        None => total = Some(grads),
                        Some(t) => t.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                    }
                }
                let mut grads = total.expect("nonempty batch");
                grads.iter_mut().for_each(|g| g.scale(1.0 / batch.len() as f64));
                self.optimizer.step(&mut model.params_mut(), &grads, lr)?;
            }
            let train_loss = loss_sum / train.len() as f64;
            let valid_loss = mean_loss(&model, &valid, &cfg.preprocess)?;
            if !train_loss.is_finite() {
                return Err(Error::Training(format!("training loss {train_loss} at epoch {epoch}")));
            }
            let decision = controller.observe(valid_loss)?;
            history.push(EpochRecord {
                epoch,
                train_loss,
                valid_loss,
                lr,
            });
            log::info!(
                "epoch {epoch}: train {train_loss:.5} valid {valid_loss:.5} lr {lr:.3e}{}",
                if decision.improved { " *" } else { "" }
            );
            if decision.improved {
                best = model.clone();
                best_epoch = epoch;
                if let Some(out) = &self.out {
                    let mut ck = model_checkpoint(&best, charset);
                    ck.set_meta(meta::EPOCH, epoch.to_string());
                    ck.set_meta(meta::VALID_LOSS_BITS, format!("{:016x}", valid_loss.to_bits()));
                    ck.set_meta(meta::TRAIN_CONFIG, toml::to_string(&cfg).expect("config serializes"));
                    ck.save(&out.join(CHECKPOINT_FILE))?;
                }
            }
            if decision.reduced {
                log::info!("learning rate reduced to {:.3e}", controller.lr);
            }
            let state = TrainState {
                epoch,
                best_valid_loss: controller.best,
                best_epoch,
                epochs_since_improve: controller.since_improve,
                current_lr: controller.lr,
                history: history.clone(),
            };
            if let Some(out) = &self.out {
                write_file(&out.join(HISTORY_FILE), &state.history_csv())?;
            }
            if decision.stop {
                break StopReason::Plateau;
            }
            if epoch >= cfg.epochs {
                break StopReason::EpochCap;
            }
        };
        Ok(TrainOutcome {
            best,
            state: TrainState {
                epoch: controller.epoch,
                best_valid_loss: controller.best,
                best_epoch,
                epochs_since_improve: controller.since_improve,
                current_lr: controller.lr,
                history,
            },
            stop,
        })
    }

}

fn sample_gradient(cfg: &TrainConfig, model: &Model, item: &Item, epoch: usize, index: usize) -> Result<(f64, Vec<Tensor>)> {
    let key = (epoch as u64) << 32 | index as u64;
    let aug = cfg
        .augment
        .then(|| (derive_seed(cfg.seed, STREAM_AUGMENT, key), &cfg.augmentation));
    let x = input_tensor(&item.image, &cfg.preprocess, aug)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_DROPOUT, key));
    let mut ctx = ForwardCtx {
        training: true,
        rng: Some(&mut rng),
    };
    let (logits, trace) = model.forward_train(&x, &mut ctx)?;
    let loss = ctc_loss_logits(&logits, &item.label)?;
    if !loss.value.is_finite() {
        return Err(Error::Training(format!("non-finite loss on sample {}", item.id)));
    }
    let grads = model.backward(&trace, &loss.grad)?;
    Ok((loss.value, grads.into_iter().flatten().collect()))
}

/// Trains `model` on `partition` with the default optimizer.
pub fn train(model: Model, partition: &Partition, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone(), out)?.train(model, partition)
}

#[cfg(test)]
mod tests;
