use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use htr_core::data::{gen_micro_dataset, load_partition};
use htr_core::imageproc::{normalize_size, preprocess_stages};
use htr_core::metrics::{anova_one_way, EvalReport};
use htr_core::model::{cost, table5_report};
use htr_core::nn::checkpoint::Checkpoint;
use htr_core::train::{self, checkpoint_charset, checkpoint_train_config, Predictor, TrainConfig};
use htr_core::wbs::WordBeamSearch;
use htr_core::{CharSet, DecoderConfig, DecoderMode, GrayImage, LayoutString, Model, ModelConfig, PreprocConfig, Tensor};

use crate::Usage;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Handwritten text-line recognition toolkit.
#[derive(Debug, Parser)]
#[command(name = "htr", version, about)]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    command: Command,
}

impl Cli {
    pub fn log_level(&self) -> &'static str {
        if self.quiet {
            "warn"
        } else {
            "info"
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean and normalize one line image.
    Preprocess(PreprocessArgs),
    /// Render the synthetic micro dataset.
    GenData(GenDataArgs),
    /// Train a recognizer.
    Train(TrainArgs),
    /// Transcribe line images with best-path and word beam search decoding.
    Predict(PredictArgs),
    /// Character and word error rates of a hypothesis file.
    Evaluate(EvaluateArgs),
    /// Parameter and multiplication counts of a model layout.
    Cost(CostArgs),
    /// One-way ANOVA over grouped measurements.
    Anova(AnovaArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Input line image (binary PGM).
    #[arg(long)]
    image: PathBuf,
    /// Normalized output image (PGM).
    #[arg(long)]
    out: PathBuf,
    /// Also write every intermediate stage into this directory.
    #[arg(long)]
    dump_stages: Option<PathBuf>,
    /// Preprocessing settings (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Arch {
    /// Six-block reference recognizer.
    Flor,
    /// Two-block recognizer for the micro dataset.
    Micro,
}

impl Arch {
    fn config(self) -> ModelConfig {
        match self {
            Arch::Flor => ModelConfig::flor_base(),
            Arch::Micro => ModelConfig::micro(),
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Built-in architecture.
    #[arg(long, value_enum, default_value = "flor")]
    arch: Arch,
    /// Model configuration file (TOML); overrides --arch.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Per-block C/D layout, e.g. "C--C--C--D--D--C".
    #[arg(long)]
    layout: Option<String>,
}

impl ModelArgs {
    fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.model_config {
            Some(p) => ModelConfig::load(p)?,
            None => self.arch.config(),
        };
        if let Some(l) = &self.layout {
            cfg = cfg.with_layout(l.parse::<LayoutString>()?)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory (defaults to $HTR_DATA_DIR).
    #[arg(long, env = "HTR_DATA_DIR")]
    data_dir: PathBuf,
    /// Output directory for the checkpoint and history.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Training settings (TOML); explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Maximum number of epochs [default: 1000]
    #[arg(long)]
    epochs: Option<usize>,
    /// Lines per optimizer step [default: 16]
    #[arg(long)]
    batch: Option<usize>,
    /// Initial learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without validation improvement before stopping [default: 20]
    #[arg(long)]
    stop_tolerance: Option<usize>,
    /// Epochs without validation improvement before the learning rate drops [default: 15]
    #[arg(long)]
    reduce_tolerance: Option<usize>,
    /// Learning-rate multiplier applied on a plateau [default: 0.2]
    #[arg(long)]
    reduce_factor: Option<f64>,
    /// Seed for initialization, shuffling, augmentation and dropout [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Disable training-time augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Debug, Args)]
struct DecoderArgs {
    /// Beam width.
    #[arg(long, default_value_t = 50)]
    bw: usize,
    /// Decoder mode: words or ngrams.
    #[arg(long, default_value = "ngrams")]
    mode: DecoderMode,
    /// Additive smoothing of the word bigram model.
    #[arg(long, default_value_t = 0.01)]
    smooth: f64,
}

impl DecoderArgs {
    fn config(&self) -> DecoderConfig {
        DecoderConfig {
            beam_width: self.bw,
            mode: self.mode,
            smooth: self.smooth,
        }
    }
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Line image(s) to transcribe.
    #[arg(long, conflicts_with = "data_dir")]
    image: Vec<PathBuf>,
    /// Dataset directory; transcribes and scores one split.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Split to transcribe with --data-dir.
    #[arg(long, default_value = "test")]
    split: String,
    /// Lexicon / language-model corpus, one line per sentence
    /// (default: corpus.txt in --data-dir).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Character list (default: chars.txt in --data-dir, else the checkpoint's).
    #[arg(long)]
    chars: Option<PathBuf>,
    /// Word-character list (default: wordchars.txt next to the character list).
    #[arg(long)]
    wordchars: Option<PathBuf>,
    #[command(flatten)]
    decoder: DecoderArgs,
    /// Ground-truth transcript of a single --image.
    #[arg(long, requires = "image")]
    gt: Option<String>,
    /// Write per-line results (JSON lines) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Ground-truth file: one transcript per line, or `id<TAB>transcript`.
    #[arg(long)]
    gt: PathBuf,
    /// Hypothesis file in the same format.
    #[arg(long)]
    hyp: PathBuf,
    /// Write per-line results (JSON lines) here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Report all six published layout variants instead of one layout.
    #[arg(long)]
    table5: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct AnovaArgs {
    /// CSV with `group,value` rows (header optional).
    #[arg(long)]
    input: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Cost(a) => cost_cmd(a),
        Command::Anova(a) => anova(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn tensor_to_image(t: &Tensor) -> Result<GrayImage> {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    Ok(GrayImage::from_fn(h, w, |y, x| (t.at3(y, x, 0) * 255.0).round().clamp(0.0, 255.0) as u8)?)
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => toml::from_str::<PreprocConfig>(&read_text(p)?)
            .map_err(|e| htr_core::Error::Config(format!("{}: {e}", p.display())))?,
        None => PreprocConfig::default(),
    };
    cfg.validate()?;
    let img = GrayImage::read_pgm(&a.image)?;
    let stages = preprocess_stages(&img, &cfg)?;
    let normalized = normalize_size(&stages.cleaned(), &cfg)?;
    if let Some(dir) = &a.dump_stages {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        img.write_pgm(&dir.join("0_input.pgm"))?;
        stages.illuminated.write_pgm(&dir.join("1_illumination.pgm"))?;
        stages.binary.to_gray().write_pgm(&dir.join("2_sauvola.pgm"))?;
        stages.deslanted.to_gray().write_pgm(&dir.join("3_deslant.pgm"))?;
        tensor_to_image(&normalized)?.write_pgm(&dir.join("4_normalized.pgm"))?;
    }
    tensor_to_image(&normalized)?.write_pgm(&a.out)?;
    log::info!("shear angle {:.1} degrees, output {}", stages.shear_angle, a.out.display());
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let p = gen_micro_dataset(&a.out, a.seed)?;
    let s = p.sizes();
    println!(
        "wrote {}: train {} / valid {} / test {}, charset {}",
        a.out.display(),
        s.train,
        s.valid,
        s.test,
        s.charset
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! flag {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
    }
    flag!(epochs, batch, lr, stop_tolerance, reduce_tolerance, reduce_factor, seed);
    if a.no_augment {
        cfg.augment = false;
    }
    let (partition, report) = load_partition(&a.data_dir)?;
    println!("{}: {report}", a.data_dir.display());
    let mcfg = a.model.resolve()?;
    let mcfg = if mcfg.charset_size != partition.charset.len() {
        log::info!(
            "output layer sized for the dataset charset ({} characters)",
            partition.charset.len()
        );
        mcfg.with_charset_size(partition.charset.len())?
    } else {
        mcfg
    };
    let [h, w, _] = mcfg.input;
    cfg.preprocess.target_h = h;
    cfg.preprocess.target_w = w;
    cfg.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_text(&a.out.join("train_config.toml"), &toml::to_string(&cfg)?)?;
    write_text(&a.out.join("model_config.toml"), &mcfg.to_toml())?;
    let model = Model::build(&mcfg, cfg.seed)?;
    let outcome = train::train(model, &partition, &cfg, Some(&a.out))?;
    println!(
        "stopped after epoch {} ({:?}); best valid loss {:.5} at epoch {}; checkpoint {}",
        outcome.state.epoch,
        outcome.stop,
        outcome.state.best_valid_loss,
        outcome.state.best_epoch,
        a.out.join(train::CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn load_charset(chars: &Path, wordchars: Option<&Path>) -> Result<CharSet> {
    let sibling = chars.with_file_name("wordchars.txt");
    let wordchars = wordchars.map(Path::to_path_buf).or_else(|| sibling.exists().then_some(sibling));
    Ok(CharSet::load(chars, wordchars.as_deref())?)
}

fn predict(a: PredictArgs) -> Result<()> {
    if a.image.is_empty() && a.data_dir.is_none() {
        return Err(usage("predict needs --image or --data-dir"));
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    let in_data = |name: &str| a.data_dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists());
    let charset = match a.chars.clone().or_else(|| in_data("chars.txt")) {
        Some(p) => load_charset(&p, a.wordchars.as_deref())?,
        None => checkpoint_charset(&ck)?
            .ok_or_else(|| usage("no character list: pass --chars (the checkpoint records none)"))?,
    };
    let corpus_path = a
        .corpus
        .clone()
        .or_else(|| in_data("corpus.txt"))
        .ok_or_else(|| usage("no lexicon corpus: pass --corpus"))?;
    let decoder = WordBeamSearch::from_corpus(charset, &read_text(&corpus_path)?, a.decoder.config())?;
    let model_input = Model::from_checkpoint(&ck)?.config().input;
    let preproc = match checkpoint_train_config(&ck)? {
        Some(c) => c.preprocess,
        None => PreprocConfig {
            target_h: model_input[0],
            target_w: model_input[1],
            ..PreprocConfig::default()
        },
    };
    let predictor = Predictor::from_checkpoint(&ck, decoder, preproc)?;

    if let Some(dir) = &a.data_dir {
        let (partition, _) = load_partition(dir)?;
        let samples = partition
            .split(&a.split)
            .ok_or_else(|| usage(format!("unknown split {:?} (train, valid or test)", a.split)))?;
        let ev = predictor.evaluate(samples)?;
        for s in &ev.wbs.samples {
            println!("{}\t{}", s.id, s.hyp);
        }
        println!(
            "best path: CER {:.4} WER {:.4}\nword beam search: CER {:.4} WER {:.4}",
            ev.best_path.cer, ev.best_path.wer, ev.wbs.cer, ev.wbs.wer
        );
        if let Some(out) = &a.out {
            write_text(out, &ev.wbs.to_jsonl())?;
        }
        return Ok(());
    }

    let mut lines = String::new();
    for path in &a.image {
        let pred = predictor.predict(&GrayImage::read_pgm(path)?)?;
        println!("{}\t{}", path.display(), pred.text);
        log::info!("best path {:?}, decoder score {:.4}", pred.best_path, pred.score);
        if let Some(gt) = &a.gt {
            let r = EvalReport::aggregate([(path.display().to_string(), gt.clone(), pred.text.clone())])?;
            println!("CER {:.4} WER {:.4}", r.cer, r.wer);
        }
        lines.push_str(&format!("{}\t{}\n", path.display(), pred.text));
    }
    if let Some(out) = &a.out {
        write_text(out, &lines)?;
    }
    Ok(())
}

/// Lines of a transcript file as `(id, text)`; ids come from a leading tab field
/// when every line has one, else from line numbers.
fn transcript_lines(text: &str) -> Vec<(String, String)> {
    let lines: Vec<&str> = text.lines().collect();
    let tabbed = !lines.is_empty() && lines.iter().all(|l| l.contains('\t'));
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| match (tabbed, l.split_once('\t')) {
            (true, Some((id, t))) => (id.to_string(), t.to_string()),
            _ => (format!("line{}", i + 1), l.to_string()),
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let gt = transcript_lines(&read_text(&a.gt)?);
    let hyp = transcript_lines(&read_text(&a.hyp)?);
    if gt.len() != hyp.len() {
        return Err(usage(format!("{} ground-truth lines but {} hypotheses", gt.len(), hyp.len())));
    }
    let mut rows = Vec::with_capacity(gt.len());
    for ((gid, g), (hid, h)) in gt.into_iter().zip(hyp) {
        if gid != hid {
            return Err(usage(format!("line ids differ: {gid} vs {hid}")));
        }
        rows.push((gid, g, h));
    }
    let report = EvalReport::aggregate(rows)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        write_text(out, &report.to_jsonl())?;
    }
    Ok(())
}

fn cost_cmd(a: CostArgs) -> Result<()> {
    let cfg = a.model.resolve()?;
    if a.table5 {
        let report = table5_report(&cfg)?;
        if a.json {
            println!("{}", report.to_json());
        } else {
            println!("{report}");
        }
        return Ok(());
    }
    let report = cost(&cfg)?;
    if a.json {
        let doc = serde_json::json!({ "layout": cfg.layout.to_string(), "cost": report });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!("layout {}", cfg.layout);
        println!("{report}");
    }
    Ok(())
}

fn anova(a: AnovaArgs) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let mut names: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", a.input.display())))?;
        if rec.len() != 2 {
            return Err(usage(format!("row {}: expected `group,value`", i + 1)));
        }
        let value: f64 = match rec[1].parse() {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(_) => return Err(usage(format!("row {}: {:?} is not a number", i + 1, &rec[1]))),
        };
        match names.iter().position(|n| n == &rec[0]) {
            Some(g) => groups[g].push(value),
            None => {
                names.push(rec[0].to_string());
                groups.push(vec![value]);
            }
        }
    }
    let r = anova_one_way(&groups)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        for (n, (g, m)) in names.iter().zip(groups.iter().zip(&r.group_means)) {
            println!("{n}: n={} mean={m:.6}", g.len());
        }
        println!("F({}, {}) = {:.6}, p = {:.6}", r.df_between, r.df_within, r.f, r.p);
    }
    Ok(())
}
