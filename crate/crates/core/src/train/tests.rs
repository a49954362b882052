use super::*;
use crate::data::gen_micro_dataset;
use crate::model::ModelConfig;
use crate::wbs::{DecoderConfig, WordBeamSearch};

const SMALL: &str = r#"
name = "small"
input = [32, 256, 1]
layout = "C--C"
padding = "same"
charset_size = 5
dropout_rate = 0.1

[[blocks]]
filters = 4
kernel = [3, 3]
stride = [2, 2]

[[blocks]]
filters = 8
kernel = [3, 3]
stride = [2, 2]
dropout = true

[recurrent]
layers = 1
units = 16
"#;

fn small_setup(dir: &Path, n_train: usize) -> (Model, Partition, TrainConfig) {
    let mut p = gen_micro_dataset(dir, 11).unwrap();
    p.train.truncate(n_train);
    p.valid.truncate(6);
    let model = Model::build(&ModelConfig::from_toml(SMALL).unwrap(), 1).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch: 4,
        lr: 3e-3,
        preprocess: PreprocConfig {
            target_h: 32,
            target_w: 256,
            ..PreprocConfig::default()
        },
        ..TrainConfig::default()
    };
    (model, p, cfg)
}

#[test]
fn defaults_match_the_schedule() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.batch, c.stop_tolerance, c.reduce_tolerance), (1000, 16, 20, 15));
    assert_eq!((c.lr, c.reduce_factor), (0.001, 0.2));
    assert!(TrainConfig { batch: 0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig { reduce_factor: 1.0, ..c.clone() }.validate().is_err());
    assert!(TrainConfig::from_toml("epochs = 5\nlr = 0.01\n").is_ok());
    assert!(TrainConfig::from_toml("epoch = 5\n").is_err());
}

#[test]
fn seeded_runs_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (model, p, cfg) = small_setup(dir.path(), 8);
    let a = train(model.clone(), &p, &cfg, None).unwrap();
    let b = train(model, &p, &cfg, None).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.best, b.best);
    assert_eq!(a.state.history.len(), 3);
    assert_eq!(a.stop, StopReason::EpochCap);
}

#[test]
fn best_checkpoint_reproduces_its_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (model, p, cfg) = small_setup(&dir.path().join("data"), 8);
    let outcome = train(model, &p, &cfg, Some(&out)).unwrap();
    let ck = Checkpoint::load(&out.join(CHECKPOINT_FILE)).unwrap();
    let stored = u64::from_str_radix(ck.meta(meta::VALID_LOSS_BITS).unwrap(), 16).unwrap();
    assert_eq!(stored, outcome.state.best_valid_loss.to_bits());
    let reloaded = Model::from_checkpoint(&ck).unwrap();
    assert_eq!(reloaded, outcome.best);
    let again = validation_loss(&reloaded, &p.valid, &p.charset, &cfg.preprocess).unwrap();
    assert_eq!(again.to_bits(), stored);
    assert_eq!(checkpoint_charset(&ck).unwrap().unwrap(), p.charset);
    let csv = std::fs::read_to_string(out.join(HISTORY_FILE)).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,train_loss,valid_loss,lr"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn charset_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (_, p, cfg) = small_setup(dir.path(), 4);
    let wrong = Model::build(&ModelConfig::from_toml(SMALL).unwrap().with_charset_size(7).unwrap(), 0).unwrap();
    assert!(matches!(train(wrong.clone(), &p, &cfg, None), Err(Error::Config(_))));

    let decoder = WordBeamSearch::from_corpus(p.charset.clone(), &p.corpus(), DecoderConfig::default()).unwrap();
    assert!(Predictor::new(wrong, decoder.clone(), cfg.preprocess.clone()).is_err());
    let model = Model::build(&ModelConfig::from_toml(SMALL).unwrap(), 0).unwrap();
    let mut ck = model_checkpoint(&model, &p.charset);
    ck.set_meta(meta::CHARSET, "a\nb\nc\nd\ne\n");
    assert!(Predictor::from_checkpoint(&ck, decoder.clone(), cfg.preprocess.clone()).is_err());
    let ok = Predictor::from_checkpoint(&model_checkpoint(&model, &p.charset), decoder, cfg.preprocess.clone()).unwrap();
    let img = p.test[0].load_image().unwrap();
    let pred = ok.predict(&img).unwrap();
    assert!(pred.score.is_finite() && pred.best_path_log_prob.is_finite());
}

#[test]
fn wider_beam_never_scores_lower() {
    let dir = tempfile::tempdir().unwrap();
    let (model, p, cfg) = small_setup(dir.path(), 12);
    let trained = train(model, &p, &cfg, None).unwrap().best;
    let decoder = |bw| {
        WordBeamSearch::from_corpus(
            p.charset.clone(),
            &p.corpus(),
            DecoderConfig {
                beam_width: bw,
                ..DecoderConfig::default()
            },
        )
        .unwrap()
    };
    let narrow = Predictor::new(trained.clone(), decoder(1), cfg.preprocess.clone()).unwrap();
    let wide = Predictor::new(trained, decoder(50), cfg.preprocess.clone()).unwrap();
    for s in p.test.iter().take(5) {
        let probs = wide.probabilities(&s.load_image().unwrap()).unwrap();
        assert!(wide.decode(&probs).unwrap().score >= narrow.decode(&probs).unwrap().score - 1e-9);
    }
}
