//! The `taglab` command-line front end.
//!
//! Subcommands cover the whole experimental protocol: `split` writes a k-fold
//! split file, `train` fits any model family on one fold, `tag` labels raw
//! token files, `eval` scores predictions against gold, `crossval` runs all
//! folds and aggregates `mean (std)`, `tune` grid-searches hyperparameters on
//! dev, and `ablate` sweeps the embedding features of the biLSTM-CRF tagger.
//!
//! Flags override values from an optional TOML `--config` file. Every report
//! embeds the fully resolved configuration and seed. `TAGLAB_THREADS` caps
//! how many folds or grid cells run in parallel; sub-runs are deterministic
//! either way.
//!
//! Exit codes: 0 ok, 2 usage, 3 I/O, 4 file format/version, 5 numeric
//! failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{self, Baseline};
use crate::container::{self, AnyModel, ModelKind};
use crate::corpus::{
    self, parse_split_file, parse_token_lines, parse_vertical_corpus, FeatureFlags, FoldSplit,
    LowercaseMode, TaggedSentence, VocabOptions, Vocabulary,
};
use crate::crf::{self, CrfConfig};
use crate::error::{Error, Result};
use crate::evaluation::{self, StdMode, TagReport};
use crate::neural::{self, EncoderKind, NeuralConfig, PredictorKind};
use crate::training::{self, EpochRecord, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "taglab", version, about = "Sequence-labeling toolkit: baselines, CRF, and neural POS taggers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a deterministic k-fold cross-validation split file.
    Split(SplitArgs),
    /// Train one model on one fold (or on the whole corpus).
    Train(TrainArgs),
    /// Tag a file of tokens with a trained model.
    Tag(TagArgs),
    /// Score a model against gold tags.
    Eval(EvalArgs),
    /// Train and evaluate on every fold; aggregate mean (std).
    Crossval(CrossvalArgs),
    /// Grid-search hyperparameters against the dev portion of a fold.
    Tune(TuneArgs),
    /// Cumulative feature ablation of the biLSTM-CRF tagger on dev.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by the training-style commands. Everything is optional here;
/// `resolve` merges CLI > config file > defaults.
#[derive(Args, Debug, Default, Clone)]
struct ModelArgs {
    /// TOML file providing defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// major | memo | crf | neural
    #[arg(long)]
    model_kind: Option<String>,
    /// ff | bilstm
    #[arg(long)]
    encoder: Option<String>,
    /// softmax | crf
    #[arg(long)]
    predictor: Option<String>,
    /// Comma list drawn from: words,prefix,suffix,chars (words is mandatory).
    #[arg(long)]
    features: Option<String>,
    /// Context window size d.
    #[arg(long)]
    window: Option<usize>,
    /// CRF L2 coefficient c.
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Gradient-norm clip threshold.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<u32>,
    /// Comma list of character CNN filter widths, e.g. "3" or "2,3".
    #[arg(long)]
    char_widths: Option<String>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    affix_dim: Option<usize>,
    #[arg(long)]
    char_dim: Option<usize>,
    #[arg(long)]
    char_filters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Words below this training count become UNK.
    #[arg(long)]
    word_min: Option<u32>,
    /// Affixes below this training count become UNK.
    #[arg(long)]
    affix_min: Option<u32>,
    /// words | all | none
    #[arg(long)]
    lowercase_mode: Option<String>,
    /// Minimum training count for a CRF feature.
    #[arg(long)]
    feature_cutoff: Option<u32>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
    /// Write per-epoch history as JSON lines.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TagArgs {
    #[arg(long)]
    model: PathBuf,
    /// Require this model kind in the file.
    #[arg(long)]
    model_kind: Option<String>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    model_kind: Option<String>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Which portion of the fold to score: train | dev | test.
    #[arg(long, default_value = "test")]
    portion: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the confusion matrix as CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Reuse an existing split file instead of splitting here.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also save the per-fold trained models.
    #[arg(long, default_value_t = false)]
    save_models: bool,
    /// Report population instead of sample standard deviation.
    #[arg(long, default_value_t = false)]
    population_std: bool,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[command(flatten)]
    model: ModelArgs,
    /// Grid like "lr=0.001,0.0005;dropout=0.2,0.5" over keys
    /// lr, dropout, window, l2, width.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    out: PathBuf,
}

/// Optional TOML defaults, same keys as the flags.
#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model_kind: Option<String>,
    encoder: Option<String>,
    predictor: Option<String>,
    features: Option<String>,
    window: Option<usize>,
    l2: Option<f64>,
    lr: Option<f64>,
    dropout: Option<f64>,
    batch_size: Option<usize>,
    clip: Option<f64>,
    seed: Option<u64>,
    max_epochs: Option<u32>,
    char_widths: Option<String>,
    word_dim: Option<usize>,
    affix_dim: Option<usize>,
    char_dim: Option<usize>,
    char_filters: Option<usize>,
    hidden: Option<usize>,
    word_min: Option<u32>,
    affix_min: Option<u32>,
    lowercase_mode: Option<String>,
    feature_cutoff: Option<u32>,
}

/// Fully resolved settings of one run; embedded verbatim in reports.
#[derive(Debug, Clone, Serialize)]
pub struct RunSettings {
    pub model_kind: ModelKind,
    pub vocab: VocabOptions,
    pub train: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neural: Option<NeuralConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crf: Option<CrfSettings>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrfSettings {
    pub window: usize,
    pub l2: f64,
    pub feature_cutoff: u32,
}

fn parse_features(spec: &str) -> Result<FeatureFlags> {
    let mut flags = FeatureFlags {
        prefix: false,
        suffix: false,
        chars: false,
    };
    let mut words = false;
    for item in spec.split(',') {
        match item.trim() {
            "words" => words = true,
            "prefix" => flags.prefix = true,
            "suffix" => flags.suffix = true,
            "chars" => flags.chars = true,
            "" => {}
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown feature {other:?} (expected words,prefix,suffix,chars)"
                )))
            }
        }
    }
    if !words {
        return Err(Error::InvalidInput(
            "the feature list must include `words`".into(),
        ));
    }
    Ok(flags)
}

fn parse_widths(spec: &str) -> Result<Vec<usize>> {
    let widths: std::result::Result<Vec<usize>, _> =
        spec.split(',').map(|w| w.trim().parse::<usize>()).collect();
    widths.map_err(|_| Error::InvalidInput(format!("bad filter width list {spec:?}")))
}

impl ModelArgs {
    /// CLI flags > config file > built-in defaults.
    fn resolve(&self) -> Result<RunSettings> {
        let file: FileConfig = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                toml::from_str(&text)
                    .map_err(|e| Error::InvalidInput(format!("bad config file: {e}")))?
            }
            None => FileConfig::default(),
        };

        let kind_str = self
            .model_kind
            .clone()
            .or(file.model_kind)
            .ok_or_else(|| Error::InvalidInput("--model-kind is required".into()))?;
        let model_kind: ModelKind = kind_str.parse()?;

        let vocab = VocabOptions {
            word_min: self.word_min.or(file.word_min).unwrap_or(2),
            affix_min: self.affix_min.or(file.affix_min).unwrap_or(5),
            mode: match self.lowercase_mode.clone().or(file.lowercase_mode) {
                Some(m) => m.parse::<LowercaseMode>()?,
                None => LowercaseMode::WordsOnly,
            },
        };

        let train = TrainConfig {
            batch_size: self.batch_size.or(file.batch_size).unwrap_or(8),
            clip_norm: self.clip.or(file.clip).unwrap_or(1.0),
            initial_lr: self.lr.or(file.lr).unwrap_or(1e-3),
            seed: self.seed.or(file.seed).unwrap_or(0),
            max_epochs: self.max_epochs.or(file.max_epochs).unwrap_or(200),
            ..Default::default()
        };

        let neural = if model_kind == ModelKind::Neural {
            let defaults = NeuralConfig::default();
            let cfg = NeuralConfig {
                features: match self.features.clone().or(file.features.clone()) {
                    Some(f) => parse_features(&f)?,
                    None => FeatureFlags::ALL,
                },
                encoder: match self.encoder.clone().or(file.encoder.clone()) {
                    Some(e) => e.parse::<EncoderKind>()?,
                    None => EncoderKind::Bilstm,
                },
                predictor: match self.predictor.clone().or(file.predictor.clone()) {
                    Some(p) => p.parse::<PredictorKind>()?,
                    None => PredictorKind::Crf,
                },
                window: self.window.or(file.window).unwrap_or(2),
                dropout: self.dropout.or(file.dropout).unwrap_or(0.5),
                char_filter_widths: match self.char_widths.clone().or(file.char_widths.clone()) {
                    Some(w) => parse_widths(&w)?,
                    None => defaults.char_filter_widths.clone(),
                },
                word_dim: self.word_dim.or(file.word_dim).unwrap_or(defaults.word_dim),
                affix_dim: self.affix_dim.or(file.affix_dim).unwrap_or(defaults.affix_dim),
                char_dim: self.char_dim.or(file.char_dim).unwrap_or(defaults.char_dim),
                char_filters: self
                    .char_filters
                    .or(file.char_filters)
                    .unwrap_or(defaults.char_filters),
                hidden: self.hidden.or(file.hidden).unwrap_or(defaults.hidden),
            };
            cfg.validate()?;
            Some(cfg)
        } else {
            None
        };

        let crf = if model_kind == ModelKind::Crf {
            Some(CrfSettings {
                window: self.window.or(file.window).unwrap_or(1),
                l2: self.l2.or(file.l2).unwrap_or(1e-3),
                feature_cutoff: self.feature_cutoff.or(file.feature_cutoff).unwrap_or(1),
            })
        } else {
            None
        };

        Ok(RunSettings {
            model_kind,
            vocab,
            train,
            neural,
            crf,
        })
    }
}

/// Run the CLI; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful exits.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("taglab: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Tag(args) => cmd_tag(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Crossval(args) => cmd_crossval(args),
        Command::Tune(args) => cmd_tune(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn read_corpus(path: &Path) -> Result<Vec<TaggedSentence>> {
    let text = fs::read_to_string(path)?;
    parse_vertical_corpus(&text)
}

fn subset(corpus: &[TaggedSentence], ids: &[usize]) -> Vec<TaggedSentence> {
    ids.iter().map(|&i| corpus[i].clone()).collect()
}

/// Train/dev/test selection for one fold; without a split file the whole
/// corpus plays every role (useful for smoke runs and overfit checks).
fn fold_portions(
    corpus: &[TaggedSentence],
    split: Option<&Path>,
    fold: usize,
) -> Result<(Vec<TaggedSentence>, Vec<TaggedSentence>, Vec<TaggedSentence>)> {
    match split {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let splits = parse_split_file(&text, corpus.len())?;
            let split = splits.get(fold).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "fold {fold} out of range (split has {} folds)",
                    splits.len()
                ))
            })?;
            Ok((
                subset(corpus, &split.train_ids),
                subset(corpus, &split.dev_ids),
                subset(corpus, &split.test_ids),
            ))
        }
        None => Ok((corpus.to_vec(), corpus.to_vec(), corpus.to_vec())),
    }
}

/// Train any model family on explicit train/dev sets.
pub fn train_any(
    settings: &RunSettings,
    train: &[TaggedSentence],
    dev: &[TaggedSentence],
) -> Result<(AnyModel, Vec<EpochRecord>)> {
    match settings.model_kind {
        ModelKind::Major => Ok((
            AnyModel::Baseline(Baseline::Major(baselines::fit_major(train)?)),
            Vec::new(),
        )),
        ModelKind::Memo => Ok((
            AnyModel::Baseline(Baseline::Memo(baselines::fit_memo(train)?)),
            Vec::new(),
        )),
        ModelKind::Crf => {
            let s = settings.crf.as_ref().expect("crf settings");
            let cfg = CrfConfig {
                window: s.window,
                l2: s.l2,
                feature_cutoff: s.feature_cutoff,
                train: settings.train.clone(),
            };
            let (model, history) = crf::train_crf(&cfg, train, dev)?;
            Ok((AnyModel::Crf(model), history))
        }
        ModelKind::Neural => {
            let ncfg = settings.neural.as_ref().expect("neural settings");
            let vocab = Vocabulary::build(train, &settings.vocab)?;
            let enc_train: Vec<_> = train
                .iter()
                .map(|s| vocab.encode(s, ncfg.features))
                .collect::<Result<_>>()?;
            let enc_dev: Vec<_> = dev
                .iter()
                .map(|s| vocab.encode(s, ncfg.features))
                .collect::<Result<_>>()?;
            let (model, history) =
                neural::train_neural(ncfg, &settings.train, vocab, &enc_train, &enc_dev)?;
            Ok((AnyModel::Neural(model), history))
        }
    }
}

/// Gold vs predicted tags over a sentence set.
pub fn evaluate_model(
    model: &AnyModel,
    sentences: &[TaggedSentence],
) -> Result<(TagReport, evaluation::ConfusionMatrix)> {
    let mut gold = Vec::with_capacity(sentences.len());
    let mut pred = Vec::with_capacity(sentences.len());
    for s in sentences {
        gold.push(s.gold()?.to_vec());
        pred.push(model.tag(&s.tokens)?);
    }
    let cm = evaluation::confusion(&gold, &pred)?;
    let report = evaluation::tag_report(&cm)?;
    Ok((report, cm))
}

fn settings_json(settings: &RunSettings) -> String {
    serde_json::to_string(settings).expect("settings serialize")
}

fn report_text(command: &str, settings: Option<&RunSettings>, report: &TagReport) -> String {
    let mut out = format!("# taglab {command} report\n");
    if let Some(s) = settings {
        let _ = writeln!(out, "config\t{}", settings_json(s));
        let _ = writeln!(out, "seed\t{}", s.train.seed);
    }
    out.push_str(&evaluation::render_report(report));
    out
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let corpus = read_corpus(&args.corpus)?;
    let splits = corpus::make_folds(corpus.len(), args.k, args.seed)?;
    fs::write(&args.out, corpus::write_split_file(&splits))?;
    println!(
        "wrote {} folds over {} sentences to {} (seed {})",
        splits.len(),
        corpus.len(),
        args.out.display(),
        args.seed
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let settings = args.model.resolve()?;
    let corpus = read_corpus(&args.corpus)?;
    let (train, dev, _test) = fold_portions(&corpus, args.split.as_deref(), args.fold)?;
    let (model, history) = train_any(&settings, &train, &dev)?;
    container::save_model(&args.out, &model)?;
    if let Some(path) = &args.history {
        fs::write(path, training::render_history(&history))?;
    }
    if let Some(last) = history.last() {
        let best = history
            .iter()
            .map(|r| r.dev_f1)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "trained {} for {} epochs; best dev F1 {:.2}",
            settings.model_kind,
            last.epoch,
            best * 100.0
        );
    } else {
        println!("trained {}", settings.model_kind);
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_tag(args: TagArgs) -> Result<()> {
    let expected = args
        .model_kind
        .as_deref()
        .map(str::parse::<ModelKind>)
        .transpose()?;
    let model = container::load_model_expecting(&args.model, expected)?;
    let text = fs::read_to_string(&args.input)?;
    let sentences = parse_token_lines(&text)?;
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let tags = model.tag(&s.tokens)?;
        for (tok, tag) in s.tokens.iter().zip(&tags) {
            let _ = writeln!(out, "{tok}\t{tag}");
        }
    }
    fs::write(&args.out, out)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let expected = args
        .model_kind
        .as_deref()
        .map(str::parse::<ModelKind>)
        .transpose()?;
    let model = container::load_model_expecting(&args.model, expected)?;
    let corpus = read_corpus(&args.corpus)?;
    let (train, dev, test) = fold_portions(&corpus, args.split.as_deref(), args.fold)?;
    let portion = match args.portion.as_str() {
        "train" => train,
        "dev" => dev,
        "test" => test,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown portion {other:?} (expected train|dev|test)"
            )))
        }
    };
    let (report, cm) = evaluate_model(&model, &portion)?;
    fs::write(&args.out, report_text("eval", None, &report))?;
    if let Some(path) = &args.confusion {
        fs::write(path, cm.to_csv())?;
    }
    println!(
        "weighted F1 {:.2}, accuracy {:.2} over {} tokens",
        report.weighted_f1 * 100.0,
        report.accuracy * 100.0,
        report.total
    );
    Ok(())
}

/// Worker-pool map that preserves item order; `TAGLAB_THREADS` caps workers.
fn parallel_map<T, R, F>(items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let threads = std::env::var("TAGLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(1)
        .min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<R>>>> =
        items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker finished"))
        .collect()
}

fn cmd_crossval(args: CrossvalArgs) -> Result<()> {
    let settings = args.model.resolve()?;
    let corpus = read_corpus(&args.corpus)?;
    let splits: Vec<FoldSplit> = match &args.split {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            parse_split_file(&text, corpus.len())?
        }
        None => corpus::make_folds(corpus.len(), args.k, settings.train.seed)?,
    };
    fs::create_dir_all(&args.out_dir)?;

    struct FoldJob {
        fold: usize,
        train: Vec<TaggedSentence>,
        dev: Vec<TaggedSentence>,
        test: Vec<TaggedSentence>,
    }
    let jobs: Vec<FoldJob> = splits
        .iter()
        .map(|s| FoldJob {
            fold: s.fold_id,
            train: subset(&corpus, &s.train_ids),
            dev: subset(&corpus, &s.dev_ids),
            test: subset(&corpus, &s.test_ids),
        })
        .collect();

    let out_dir = args.out_dir.clone();
    let save_models = args.save_models;
    let settings_ref = &settings;
    let scores = parallel_map(jobs, move |job| {
        let (model, history) = train_any(settings_ref, &job.train, &job.dev)?;
        let (report, cm) = evaluate_model(&model, &job.test)?;
        let base = out_dir.join(format!("fold{}", job.fold));
        fs::write(
            base.with_extension("report.txt"),
            report_text("crossval", Some(settings_ref), &report),
        )?;
        fs::write(base.with_extension("confusion.csv"), cm.to_csv())?;
        if !history.is_empty() {
            fs::write(
                base.with_extension("history.jsonl"),
                training::render_history(&history),
            )?;
        }
        if save_models {
            container::save_model(&base.with_extension("model"), &model)?;
        }
        Ok((report.weighted_f1, report.accuracy))
    })?;

    let f1s: Vec<f64> = scores.iter().map(|(f1, _)| *f1).collect();
    let accs: Vec<f64> = scores.iter().map(|(_, acc)| *acc).collect();
    let mode = if args.population_std {
        StdMode::Population
    } else {
        StdMode::Sample
    };
    let (f1_mean, f1_std) = evaluation::aggregate_folds(&f1s, mode)?;
    let (acc_mean, acc_std) = evaluation::aggregate_folds(&accs, mode)?;

    let mut out = String::from("# taglab crossval aggregate\n");
    let _ = writeln!(out, "config\t{}", settings_json(&settings));
    let _ = writeln!(out, "seed\t{}", settings.train.seed);
    let _ = writeln!(out, "fold\tweighted_f1\taccuracy");
    for (i, (f1, acc)) in scores.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{:.2}\t{:.2}", f1 * 100.0, acc * 100.0);
    }
    let _ = writeln!(out, "weighted_f1\t{:.2} ({:.2})", f1_mean * 100.0, f1_std * 100.0);
    let _ = writeln!(out, "accuracy\t{:.2} ({:.2})", acc_mean * 100.0, acc_std * 100.0);
    let path = args.out_dir.join("aggregate.txt");
    fs::write(&path, &out)?;
    println!(
        "{}: weighted F1 {:.2} ({:.2}) over {} folds",
        settings.model_kind,
        f1_mean * 100.0,
        f1_std * 100.0,
        scores.len()
    );
    Ok(())
}

/// One grid axis; `width` sets a single CNN filter width.
#[derive(Debug, Clone, Copy, PartialEq)]
enum GridValue {
    Lr(f64),
    Dropout(f64),
    Window(usize),
    L2(f64),
    Width(usize),
}

impl std::fmt::Display for GridValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridValue::Lr(v) => write!(f, "lr={v}"),
            GridValue::Dropout(v) => write!(f, "dropout={v}"),
            GridValue::Window(v) => write!(f, "window={v}"),
            GridValue::L2(v) => write!(f, "l2={v}"),
            GridValue::Width(v) => write!(f, "width={v}"),
        }
    }
}

/// A full grid cell.
#[derive(Debug, Clone)]
struct GridCell(Vec<GridValue>);

impl std::fmt::Display for GridCell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

fn parse_grid(spec: &str) -> Result<Vec<Vec<GridValue>>> {
    let mut axes: Vec<Vec<GridValue>> = Vec::new();
    for axis in spec.split(';') {
        let axis = axis.trim();
        if axis.is_empty() {
            continue;
        }
        let (key, values) = axis.split_once('=').ok_or_else(|| {
            Error::InvalidInput(format!("bad grid axis {axis:?} (expected key=v1,v2)"))
        })?;
        let mut parsed = Vec::new();
        for v in values.split(',') {
            let v = v.trim();
            let value = match key.trim() {
                "lr" => GridValue::Lr(v.parse().map_err(|_| bad_grid(axis))?),
                "dropout" => GridValue::Dropout(v.parse().map_err(|_| bad_grid(axis))?),
                "window" => GridValue::Window(v.parse().map_err(|_| bad_grid(axis))?),
                "l2" => GridValue::L2(v.parse().map_err(|_| bad_grid(axis))?),
                "width" => GridValue::Width(v.parse().map_err(|_| bad_grid(axis))?),
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown grid key {other:?} (expected lr|dropout|window|l2|width)"
                    )))
                }
            };
            parsed.push(value);
        }
        if parsed.is_empty() {
            return Err(bad_grid(axis));
        }
        axes.push(parsed);
    }
    if axes.is_empty() {
        return Err(Error::InvalidInput("empty grid specification".into()));
    }
    Ok(axes)
}

fn bad_grid(axis: &str) -> Error {
    Error::InvalidInput(format!("bad grid axis {axis:?}"))
}

fn cartesian(axes: &[Vec<GridValue>]) -> Vec<GridCell> {
    let mut cells = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(cells.len() * axis.len());
        for cell in &cells {
            for &v in axis {
                let mut c = cell.clone();
                c.push(v);
                next.push(c);
            }
        }
        cells = next;
    }
    cells.into_iter().map(GridCell).collect()
}

fn apply_cell(settings: &RunSettings, cell: &GridCell) -> Result<RunSettings> {
    let mut s = settings.clone();
    for v in &cell.0 {
        match v {
            GridValue::Lr(lr) => s.train.initial_lr = *lr,
            GridValue::Dropout(p) => match &mut s.neural {
                Some(n) => n.dropout = *p,
                None => return Err(Error::InvalidInput("dropout grid needs a neural model".into())),
            },
            GridValue::Window(d) => {
                if let Some(n) = &mut s.neural {
                    n.window = *d;
                } else if let Some(c) = &mut s.crf {
                    c.window = *d;
                }
            }
            GridValue::L2(c) => match &mut s.crf {
                Some(crf) => crf.l2 = *c,
                None => return Err(Error::InvalidInput("l2 grid needs a crf model".into())),
            },
            GridValue::Width(w) => match &mut s.neural {
                Some(n) => n.char_filter_widths = vec![*w],
                None => return Err(Error::InvalidInput("width grid needs a neural model".into())),
            },
        }
    }
    if let Some(n) = &s.neural {
        n.validate()?;
    }
    Ok(s)
}

fn default_grid(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Crf => "l2=0.0001,0.001,0.01,0.1,1",
        _ => "lr=0.001,0.0005,0.0001;dropout=0.2,0.5",
    }
}

fn cmd_tune(args: TuneArgs) -> Result<()> {
    let settings = args.model.resolve()?;
    if matches!(settings.model_kind, ModelKind::Major | ModelKind::Memo) {
        return Err(Error::InvalidInput(
            "baselines have no hyperparameters to tune".into(),
        ));
    }
    let corpus = read_corpus(&args.corpus)?;
    let (train, dev, _test) = fold_portions(&corpus, args.split.as_deref(), args.fold)?;
    let spec = args
        .grid
        .clone()
        .unwrap_or_else(|| default_grid(settings.model_kind).to_string());
    let cells = cartesian(&parse_grid(&spec)?);

    let settings_ref = &settings;
    let train_ref = &train;
    let dev_ref = &dev;
    let scored = parallel_map(cells.clone(), move |cell| {
        let cell_settings = apply_cell(settings_ref, cell)?;
        let (model, _history) = train_any(&cell_settings, train_ref, dev_ref)?;
        let (report, _cm) = evaluate_model(&model, dev_ref)?;
        Ok((cell.to_string(), report.weighted_f1))
    })?;
    let board = training::rank_leaderboard(scored);

    let mut out = String::from("# taglab tune leaderboard\n");
    let _ = writeln!(out, "config\t{}", settings_json(&settings));
    let _ = writeln!(out, "seed\t{}", settings.train.seed);
    let _ = writeln!(out, "grid\t{spec}");
    let _ = writeln!(out, "rank\tdev_f1\tcell");
    for (rank, r) in board.iter().enumerate() {
        let _ = writeln!(out, "{}\t{:.2}\t{}", rank + 1, r.dev_f1 * 100.0, r.label);
    }
    let _ = writeln!(out, "best\t{}", board[0].label);
    fs::write(&args.out, &out)?;
    println!(
        "best cell: {} (dev F1 {:.2})",
        board[0].label,
        board[0].dev_f1 * 100.0
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let mut settings = args.model.resolve()?;
    if settings.model_kind != ModelKind::Neural {
        return Err(Error::InvalidInput(
            "ablate sweeps the neural tagger; pass --model-kind neural".into(),
        ));
    }
    // The ablation ladder is defined for the best architecture.
    if let Some(n) = &mut settings.neural {
        n.encoder = EncoderKind::Bilstm;
        n.predictor = PredictorKind::Crf;
    }
    let corpus = read_corpus(&args.corpus)?;
    let (train, dev, _test) = fold_portions(&corpus, args.split.as_deref(), args.fold)?;

    let ladder = [
        ("words", FeatureFlags::WORDS_ONLY),
        (
            "+chars",
            FeatureFlags {
                prefix: false,
                suffix: false,
                chars: true,
            },
        ),
        (
            "+prefix",
            FeatureFlags {
                prefix: true,
                suffix: false,
                chars: true,
            },
        ),
        ("+suffix", FeatureFlags::ALL),
    ];

    let settings_ref = &settings;
    let train_ref = &train;
    let dev_ref = &dev;
    let rows = parallel_map(ladder.to_vec(), move |(label, flags)| {
        let mut s = settings_ref.clone();
        s.neural.as_mut().expect("neural settings").features = *flags;
        let (model, _history) = train_any(&s, train_ref, dev_ref)?;
        let (report, _cm) = evaluate_model(&model, dev_ref)?;
        Ok((label.to_string(), report.weighted_f1))
    })?;

    let mut out = String::from("# taglab ablate report\n");
    let _ = writeln!(out, "config\t{}", settings_json(&settings));
    let _ = writeln!(out, "seed\t{}", settings.train.seed);
    let _ = writeln!(out, "features\tdev_f1\tdelta");
    let mut prev = rows[0].1;
    for (label, f1) in &rows {
        let _ = writeln!(
            out,
            "{label}\t{:.2}\t{:+.2}",
            f1 * 100.0,
            (f1 - prev) * 100.0
        );
        prev = *f1;
    }
    fs::write(&args.out, &out)?;
    for (label, f1) in &rows {
        println!("{label}\t{:.2}", f1 * 100.0);
    }
    Ok(())
}
