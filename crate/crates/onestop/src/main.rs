//! Batch command-line interface: prepare corpora, train models, generate
//! question–answer pairs, score them, and compare the one-model route
//! against the two-model pipeline.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or malformed inputs, excessive rejections), 3 numeric error
//! (non-finite loss or a failed numeric operation).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use onestop::config::{self, AppConfig, ConfigError};
use onestop::data::{
    self, parse_corpus, tokenize, tokenize_record, DataError, Example, TokenizedRecord,
    Vocabulary, WindowConfig,
};
use onestop::inference::{
    extract_span, generate_qa_pairs, generate_question, pipeline_qa_pairs, InferError, QaConfig,
    QaPair,
};
use onestop::manifest::RunManifest;
use onestop::metrics::{QuestionMetrics, SpanMetrics};
use onestop::model::{ModelError, OneStopModel};
use onestop::numcore::NumError;
use onestop::training::{
    evaluate, make_denoising_examples, pretrain_config, run_schedule, TrainError, TrainEvent,
    ValReport,
};

// ---------------------------------------------------------------------------
// Error taxonomy

#[derive(Debug)]
enum CliError {
    /// Bad flags, bad config values, or incompatible settings. Exit 1.
    Usage(String),
    /// Unreadable or malformed inputs, or rejection rate over the limit. Exit 2.
    Data(String),
    /// Non-finite loss or a failed numeric operation. Exit 3.
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(m) => write!(f, "{m}"),
            CliError::Numeric(m) => write!(f, "{m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NumError> for CliError {
    fn from(e: NumError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Num(n) => CliError::Numeric(n.to_string()),
            ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::Checkpoint(_) | ModelError::ConfigJson(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<InferError> for CliError {
    fn from(e: InferError) -> Self {
        match e {
            InferError::Num(n) => CliError::Numeric(n.to_string()),
            InferError::Config(_) => CliError::Usage(e.to_string()),
            InferError::EmptyDocument => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Num(n) => CliError::Numeric(n.to_string()),
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Config(_) | TrainError::InvalidStageOrder { .. } => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

fn read_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot read {}: {e}", path.display()))
}

fn write_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot write {}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Parser)]
#[command(
    name = "onestop",
    version,
    about = "Joint question generation and answer extraction for text corpora"
)]
struct Cli {
    /// TOML config file; flags and ONESTOP_* variables override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for model init, splits, shuffling, and dropout.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DecodeFlags {
    /// Decoding mode: greedy or beam.
    #[arg(long, value_name = "MODE")]
    mode: Option<String>,
    #[arg(long, value_name = "N")]
    beam_width: Option<usize>,
    /// Longest answer span, in tokens.
    #[arg(long, value_name = "N")]
    max_answer_len: Option<usize>,
    /// Pairs kept per document after ranking.
    #[arg(long, value_name = "N")]
    top_n: Option<usize>,
    /// Document window length, in tokens.
    #[arg(long, value_name = "N")]
    window: Option<usize>,
    /// Window stride, in tokens.
    #[arg(long, value_name = "N")]
    stride: Option<usize>,
}

impl DecodeFlags {
    fn apply(&self, cfg: &mut AppConfig) {
        if let Some(m) = &self.mode {
            cfg.decode.mode = m.clone();
        }
        if let Some(w) = self.beam_width {
            cfg.decode.beam_width = w;
        }
        if let Some(m) = self.max_answer_len {
            cfg.decode.max_answer_len = m;
        }
        if let Some(t) = self.top_n {
            cfg.decode.top_n = t;
        }
        if let Some(w) = self.window {
            cfg.data.window = w;
        }
        if let Some(s) = self.stride {
            cfg.data.stride = s;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse, tokenise, and window a raw corpus; build the vocabulary.
    Prep {
        /// JSONL corpus: one record per line with document, question,
        /// answer_start_char, answer_end_char.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Directory for prepared.jsonl, vocab.txt, rejections.jsonl.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long, value_name = "N")]
        window: Option<usize>,
        #[arg(long, value_name = "N")]
        stride: Option<usize>,
        /// Tokens rarer than this become <unk>.
        #[arg(long, value_name = "N")]
        min_count: Option<usize>,
        /// Fail when more than this fraction of records is rejected.
        #[arg(long, value_name = "RATE")]
        max_reject_rate: Option<f64>,
    },
    /// Train a model on a prepared corpus.
    Train {
        /// prepared.jsonl from `prep`.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// vocab.txt from `prep`.
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        /// Model checkpoint to write.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Optional JSONL training log (one event per line).
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        /// Loss mix: lambda weights question generation, 1 - lambda the span
        /// terms.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, value_name = "N")]
        batch_size: Option<usize>,
        /// Fraction of examples held out for validation (0 disables).
        #[arg(long, value_name = "RATE")]
        val_fraction: Option<f64>,
        /// Denoising pretraining epochs before the curriculum.
        #[arg(long, value_name = "N")]
        pretrain_epochs: Option<usize>,
    },
    /// Generate question–answer pairs for raw documents.
    Generate {
        /// Joint model checkpoint (one model answers its own questions).
        #[arg(long, value_name = "FILE", conflicts_with_all = ["qg_model", "span_model"])]
        model: Option<PathBuf>,
        /// Question-generation checkpoint for the two-model pipeline.
        #[arg(long, value_name = "FILE", requires = "span_model")]
        qg_model: Option<PathBuf>,
        /// Answer-extraction checkpoint for the two-model pipeline.
        #[arg(long, value_name = "FILE", requires = "qg_model")]
        span_model: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        /// Plain text, one document per line.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// JSONL output, one pair per line with its source doc_id.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// Score a model against a prepared corpus with gold questions and spans.
    Eval {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        /// prepared.jsonl with gold questions and answer spans.
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Report JSON path; omitted prints the report to stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// Run the one-model route and the two-model pipeline side by side.
    Compare {
        /// Joint model checkpoint.
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Pipeline question-generation checkpoint (defaults to --model).
        #[arg(long, value_name = "FILE")]
        qg_model: Option<PathBuf>,
        /// Pipeline answer-extraction checkpoint (defaults to --model).
        #[arg(long, value_name = "FILE")]
        span_model: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        vocab: PathBuf,
        /// Plain text, one document per line.
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Directory for joint.jsonl, pipeline.jsonl, compare.json.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[command(flatten)]
        decode: DecodeFlags,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = config::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Prep {
            input,
            out_dir,
            window,
            stride,
            min_count,
            max_reject_rate,
        } => {
            if let Some(w) = window {
                cfg.data.window = w;
            }
            if let Some(s) = stride {
                cfg.data.stride = s;
            }
            if let Some(m) = min_count {
                cfg.data.min_count = m;
            }
            if let Some(r) = max_reject_rate {
                cfg.data.max_reject_rate = r;
            }
            cmd_prep(cfg, argv, &input, &out_dir)
        }
        Command::Train {
            data,
            vocab,
            out,
            log,
            lambda,
            lr,
            batch_size,
            val_fraction,
            pretrain_epochs,
        } => {
            if let Some(l) = lambda {
                cfg.train.lambda = l;
            }
            if let Some(l) = lr {
                cfg.train.lr = l;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(v) = val_fraction {
                cfg.train.val_fraction = v;
            }
            if let Some(p) = pretrain_epochs {
                cfg.train.pretrain_epochs = p;
            }
            cmd_train(cfg, argv, &data, &vocab, &out, log.as_deref())
        }
        Command::Generate {
            model,
            qg_model,
            span_model,
            vocab,
            input,
            out,
            decode,
        } => {
            decode.apply(&mut cfg);
            let route = match (model, qg_model, span_model) {
                (Some(m), None, None) => Route::Joint(m),
                (None, Some(q), Some(s)) => Route::Pipeline(q, s),
                _ => {
                    return Err(CliError::Usage(
                        "pass either --model, or --qg-model with --span-model".into(),
                    ))
                }
            };
            cmd_generate(cfg, argv, route, &vocab, &input, &out)
        }
        Command::Eval {
            model,
            vocab,
            data,
            out,
            decode,
        } => {
            decode.apply(&mut cfg);
            cmd_eval(cfg, argv, &model, &vocab, &data, out.as_deref())
        }
        Command::Compare {
            model,
            qg_model,
            span_model,
            vocab,
            input,
            out_dir,
            decode,
        } => {
            decode.apply(&mut cfg);
            cmd_compare(
                cfg,
                argv,
                &model,
                qg_model.as_deref(),
                span_model.as_deref(),
                &vocab,
                &input,
                &out_dir,
            )
        }
    }
}

// ---------------------------------------------------------------------------
// prep

fn cmd_prep(
    cfg: AppConfig,
    argv: Vec<String>,
    input: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("prep", argv, cfg.seed, cfg.clone());
    manifest.input(input);

    let file = File::open(input).map_err(|e| read_err(input, e))?;
    let window_cfg = WindowConfig {
        window: cfg.data.window,
        stride: cfg.data.stride,
    };
    let prepared = data::prepare(BufReader::new(file), &window_cfg)?;
    if prepared.total_lines == 0 {
        return Err(CliError::Data(format!(
            "{}: no records found",
            input.display()
        )));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| write_err(out_dir, e))?;
    let rejections_path = out_dir.join("rejections.jsonl");
    data::write_jsonl(&rejections_path, &prepared.rejections)?;
    manifest.output(&rejections_path);

    let reject_rate = prepared.rejections.len() as f64 / prepared.total_lines as f64;
    if reject_rate > cfg.data.max_reject_rate {
        return Err(CliError::Data(format!(
            "rejected {} of {} records ({:.1}%), over the {:.1}% limit; see {}",
            prepared.rejections.len(),
            prepared.total_lines,
            100.0 * reject_rate,
            100.0 * cfg.data.max_reject_rate,
            rejections_path.display(),
        )));
    }

    let mut tokens = Vec::new();
    for r in &prepared.records {
        tokens.extend(tokenize(&r.document));
        tokens.extend(tokenize(&r.question));
    }
    let vocab = Vocabulary::build(tokens.iter().map(|t| t.text.as_str()), cfg.data.min_count);

    let prepared_path = out_dir.join("prepared.jsonl");
    data::write_jsonl(&prepared_path, &prepared.records)?;
    manifest.output(&prepared_path);
    let vocab_path = out_dir.join("vocab.txt");
    vocab.save(&vocab_path)?;
    manifest.output(&vocab_path);

    let manifest_path = out_dir.join("prep.manifest.json");
    manifest
        .write(&manifest_path)
        .map_err(|e| write_err(&manifest_path, e))?;

    println!(
        "prepared {} records from {} lines ({} rejected, rate {:.3}); vocabulary {} tokens -> {}",
        prepared.records.len(),
        prepared.total_lines,
        prepared.rejections.len(),
        reject_rate,
        vocab.len(),
        out_dir.display(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared loading helpers

fn load_prepared(path: &Path) -> Result<Vec<TokenizedRecord>, CliError> {
    let file = File::open(path).map_err(|e| read_err(path, e))?;
    let (raw, rejections) = parse_corpus(BufReader::new(file))?;
    if let Some(rej) = rejections.first() {
        return Err(CliError::Data(format!(
            "{} line {}: {} (run `prep` first; {} lines bad in total)",
            path.display(),
            rej.line,
            rej.reason,
            rejections.len(),
        )));
    }
    let mut out = Vec::with_capacity(raw.len());
    for (line, record) in &raw {
        match tokenize_record(*line, record) {
            Ok(t) => out.push(t),
            Err(rej) => {
                return Err(CliError::Data(format!(
                    "{} line {}: {}",
                    path.display(),
                    rej.line,
                    rej.reason
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no records found",
            path.display()
        )));
    }
    Ok(out)
}

fn encode_examples(
    records: &[TokenizedRecord],
    vocab: &Vocabulary,
    max_doc: usize,
    max_question: usize,
    path: &Path,
) -> Result<Vec<Example>, CliError> {
    let (examples, rejections) = data::build_examples(records, vocab, max_doc, max_question);
    if let Some(rej) = rejections.first() {
        return Err(CliError::Data(format!(
            "{} line {}: {} — shrink the prep window or raise the model limits",
            path.display(),
            rej.line,
            rej.reason
        )));
    }
    Ok(examples)
}

fn load_model(path: &Path) -> Result<OneStopModel<f32>, CliError> {
    Ok(OneStopModel::<f32>::load(path)?)
}

fn read_documents(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let file = File::open(path).map_err(|e| read_err(path, e))?;
    let mut docs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| read_err(path, e))?;
        if !line.trim().is_empty() {
            docs.push((idx + 1, line));
        }
    }
    if docs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no documents found",
            path.display()
        )));
    }
    Ok(docs)
}

fn qa_config(cfg: &AppConfig) -> Result<QaConfig, CliError> {
    Ok(QaConfig {
        window: WindowConfig {
            window: cfg.data.window,
            stride: cfg.data.stride,
        },
        mode: cfg.decode.decode_mode()?,
        max_answer_len: cfg.decode.max_answer_len,
        top_n: cfg.decode.top_n,
    })
}

// ---------------------------------------------------------------------------
// train

fn cmd_train(
    cfg: AppConfig,
    argv: Vec<String>,
    data_path: &Path,
    vocab_path: &Path,
    out: &Path,
    log: Option<&Path>,
) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&cfg.train.lambda) {
        return Err(CliError::Usage(format!(
            "train.lambda must be in [0, 1], got {}",
            cfg.train.lambda
        )));
    }
    if !(0.0..0.9).contains(&cfg.train.val_fraction) {
        return Err(CliError::Usage(format!(
            "train.val_fraction must be in [0, 0.9), got {}",
            cfg.train.val_fraction
        )));
    }
    let mut manifest = RunManifest::start("train", argv, cfg.seed, cfg.clone());
    manifest.input(data_path);
    manifest.input(vocab_path);

    let vocab = Vocabulary::load(vocab_path)?;
    let records = load_prepared(data_path)?;
    let model_cfg = cfg.model.to_model_config(vocab.len());
    let examples = encode_examples(
        &records,
        &vocab,
        model_cfg.max_doc,
        model_cfg.max_question,
        data_path,
    )?;

    // Seeded split so reruns train on the same examples.
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    let val_n = ((examples.len() as f64) * cfg.train.val_fraction).round() as usize;
    let val_n = val_n.min(examples.len().saturating_sub(1));
    let val: Vec<Example> = order[..val_n].iter().map(|&i| examples[i].clone()).collect();
    let train: Vec<Example> = order[val_n..].iter().map(|&i| examples[i].clone()).collect();

    let mut model = OneStopModel::<f32>::new(model_cfg, cfg.seed)?;
    let train_cfg = cfg.train.to_train_config(cfg.seed);

    let mut log_file = match log {
        Some(p) => Some(BufWriter::new(
            File::create(p).map_err(|e| write_err(p, e))?,
        )),
        None => None,
    };
    let mut log_error: Option<std::io::Error> = None;
    let mut on_event = |event: &TrainEvent| {
        let value = match event {
            TrainEvent::StageStart {
                stage,
                planned_steps,
            } => serde_json::json!({
                "event": "stage_start",
                "stage": stage,
                "planned_steps": planned_steps,
            }),
            TrainEvent::Step(step) => {
                let mut v = serde_json::to_value(step).expect("step log serializes");
                v["event"] = "step".into();
                v
            }
            TrainEvent::Epoch(epoch) => {
                if let Some(val) = &epoch.val {
                    println!(
                        "stage={:?} epoch={} val_phi={:.4} em={:.3} f1={:.3}{}",
                        epoch.stage,
                        epoch.epoch,
                        val.phi_total,
                        val.exact_match,
                        val.token_f1,
                        if epoch.improved { " *" } else { "" },
                    );
                }
                let mut v = serde_json::to_value(epoch).expect("epoch log serializes");
                v["event"] = "epoch".into();
                v
            }
        };
        if let Some(w) = log_file.as_mut() {
            if log_error.is_none() {
                if let Err(e) = writeln!(w, "{value}") {
                    log_error = Some(e);
                }
            }
        }
    };

    if cfg.train.pretrain_epochs > 0 {
        let docs: Vec<Vec<u32>> = train.iter().map(|e| e.doc.clone()).collect();
        let mut den_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let denoising =
            make_denoising_examples(&docs, cfg.train.pretrain_corrupt_rate, &mut den_rng)?;
        let pre_cfg = pretrain_config(&train_cfg, cfg.train.pretrain_epochs);
        println!(
            "pretraining on {} denoising examples for {} epochs",
            denoising.len(),
            cfg.train.pretrain_epochs
        );
        run_schedule(&mut model, &denoising, &[], &pre_cfg, None, &mut on_event)?;
    }

    let report = run_schedule(&mut model, &train, &val, &train_cfg, Some(out), &mut on_event)?;
    if let Some(mut w) = log_file {
        w.flush()
            .map_err(|e| write_err(log.expect("log path set"), e))?;
    }
    if let Some(e) = log_error {
        return Err(write_err(log.expect("log path set"), e));
    }
    manifest.output(out);
    if let Some(p) = log {
        manifest.output(p);
    }
    let manifest_path = RunManifest::path_for(out);
    manifest
        .write(&manifest_path)
        .map_err(|e| write_err(&manifest_path, e))?;

    let last = report.stages.last();
    println!(
        "trained {} examples ({} validation) over {} steps; final stage best phi={} -> {}",
        train.len(),
        val.len(),
        report.total_steps,
        last.and_then(|s| s.best_val_phi)
            .map_or("n/a".to_string(), |v| format!("{v:.4}")),
        out.display(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// generate

enum Route {
    Joint(PathBuf),
    Pipeline(PathBuf, PathBuf),
}

#[derive(Serialize)]
struct PairRecord {
    doc_id: usize,
    #[serde(flatten)]
    pair: QaPair,
}

fn generate_for_docs(
    route: &Route,
    vocab: &Vocabulary,
    docs: &[(usize, String)],
    qa_cfg: &QaConfig,
) -> Result<(Vec<PairRecord>, u64), CliError> {
    let mut out = Vec::new();
    let encodes = match route {
        Route::Joint(model_path) => {
            let model = load_model(model_path)?;
            for (doc_id, text) in docs {
                let pairs = generate_qa_pairs(&model, vocab, text, qa_cfg)
                    .map_err(|e| at_doc(*doc_id, e))?;
                out.extend(pairs.into_iter().map(|pair| PairRecord {
                    doc_id: *doc_id,
                    pair,
                }));
            }
            model.encode_count()
        }
        Route::Pipeline(qg_path, span_path) => {
            let qg = load_model(qg_path)?;
            let span = load_model(span_path)?;
            for (doc_id, text) in docs {
                let pairs = pipeline_qa_pairs(&qg, &span, vocab, text, qa_cfg)
                    .map_err(|e| at_doc(*doc_id, e))?;
                out.extend(pairs.into_iter().map(|pair| PairRecord {
                    doc_id: *doc_id,
                    pair,
                }));
            }
            qg.encode_count() + span.encode_count()
        }
    };
    Ok((out, encodes))
}

fn at_doc(doc_id: usize, e: InferError) -> CliError {
    match CliError::from(e) {
        CliError::Usage(m) => CliError::Usage(m),
        CliError::Data(m) => CliError::Data(format!("document {doc_id}: {m}")),
        CliError::Numeric(m) => CliError::Numeric(format!("document {doc_id}: {m}")),
    }
}

fn cmd_generate(
    cfg: AppConfig,
    argv: Vec<String>,
    route: Route,
    vocab_path: &Path,
    input: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("generate", argv, cfg.seed, cfg.clone());
    manifest.input(input);
    manifest.input(vocab_path);
    match &route {
        Route::Joint(m) => {
            manifest.input(m);
        }
        Route::Pipeline(q, s) => {
            manifest.input(q);
            manifest.input(s);
        }
    }

    let vocab = Vocabulary::load(vocab_path)?;
    let docs = read_documents(input)?;
    let qa_cfg = qa_config(&cfg)?;
    let (pairs, encodes) = generate_for_docs(&route, &vocab, &docs, &qa_cfg)?;

    data::write_jsonl(out, &pairs)?;
    manifest.output(out);
    let manifest_path = RunManifest::path_for(out);
    manifest
        .write(&manifest_path)
        .map_err(|e| write_err(&manifest_path, e))?;

    println!(
        "{} documents -> {} pairs ({} encoder passes) -> {}",
        docs.len(),
        pairs.len(),
        encodes,
        out.display(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Serialize)]
struct EvalReport {
    /// Question metrics are computed on this tokenisation; scores are not
    /// comparable across systems with different tokenisers.
    tokenization: &'static str,
    examples: usize,
    lambda: f64,
    /// Teacher-forced losses and span accuracy on the gold questions.
    teacher_forced: ValReport,
    /// Generated questions scored against the gold questions.
    question: QuestionMetrics,
    /// Spans extracted for the gold questions, scored against gold spans.
    span: SpanMetrics,
}

fn cmd_eval(
    cfg: AppConfig,
    argv: Vec<String>,
    model_path: &Path,
    vocab_path: &Path,
    data_path: &Path,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("eval", argv, cfg.seed, cfg.clone());
    manifest.input(model_path);
    manifest.input(vocab_path);
    manifest.input(data_path);

    let model = load_model(model_path)?;
    let vocab = Vocabulary::load(vocab_path)?;
    if model.config.vocab_size != vocab.len() {
        return Err(CliError::Usage(format!(
            "model expects a vocabulary of {} tokens but {} has {}",
            model.config.vocab_size,
            vocab_path.display(),
            vocab.len(),
        )));
    }
    let records = load_prepared(data_path)?;
    let examples = encode_examples(
        &records,
        &vocab,
        model.config.max_doc,
        model.config.max_question,
        data_path,
    )?;
    let mode = cfg.decode.decode_mode()?;

    let teacher_forced = evaluate(&model, &examples, cfg.train.lambda)?;

    let mut hyps = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    let mut pred_spans = Vec::with_capacity(examples.len());
    let mut gold_spans = Vec::with_capacity(examples.len());
    for (record, ex) in records.iter().zip(&examples) {
        let enc = model.encode_doc(&ex.doc, ex.doc.len())?;
        let generated = generate_question(&model, &enc, mode)?;
        let hyp: Vec<String> = vocab
            .decode(&generated.tokens)
            .split_whitespace()
            .map(str::to_string)
            .collect();
        hyps.push(hyp);
        refs.push(record.question.iter().map(|t| t.text.clone()).collect());

        let q_eos = model.force_decode(&enc, &ex.question)?;
        let (p_start, p_end) = model.span_distributions(&enc, &q_eos)?;
        let (s, e, _) = extract_span(&p_start, &p_end, ex.doc.len(), ex.doc.len());
        pred_spans.push((s, e));
        gold_spans.push((ex.start, ex.end));
    }
    let question = QuestionMetrics::compute(&hyps, &refs).map_err(|e| {
        CliError::Data(format!("question metrics: {e}"))
    })?;
    let span = SpanMetrics::compute(&pred_spans, &gold_spans)
        .map_err(|e| CliError::Data(format!("span metrics: {e}")))?;

    let report = EvalReport {
        tokenization: "builtin lowercasing word/punctuation tokenizer",
        examples: examples.len(),
        lambda: cfg.train.lambda,
        teacher_forced,
        question,
        span,
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("cannot serialize report: {e}")))?;
    match out {
        Some(p) => {
            std::fs::write(p, json + "\n").map_err(|e| write_err(p, e))?;
            manifest.output(p);
            let manifest_path = RunManifest::path_for(p);
            manifest
                .write(&manifest_path)
                .map_err(|e| write_err(&manifest_path, e))?;
            println!(
                "evaluated {} examples: span em {:.3}, token f1 {:.3}, bleu-4 {:.3} -> {}",
                report.examples,
                report.span.exact_match,
                report.span.token_f1,
                report.question.bleu4,
                p.display(),
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// compare

#[derive(Serialize)]
struct CompareReport {
    documents: usize,
    joint_pairs: usize,
    pipeline_pairs: usize,
    /// Documents whose full ranked pair lists match exactly.
    identical_documents: usize,
    joint_encoder_passes: u64,
    pipeline_encoder_passes: u64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    cfg: AppConfig,
    argv: Vec<String>,
    model_path: &Path,
    qg_path: Option<&Path>,
    span_path: Option<&Path>,
    vocab_path: &Path,
    input: &Path,
    out_dir: &Path,
) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("compare", argv, cfg.seed, cfg.clone());
    manifest.input(model_path);
    manifest.input(vocab_path);
    manifest.input(input);

    let vocab = Vocabulary::load(vocab_path)?;
    let docs = read_documents(input)?;
    let qa_cfg = qa_config(&cfg)?;

    let joint_model = load_model(model_path)?;
    let qg_model = match qg_path {
        Some(p) => {
            manifest.input(p);
            load_model(p)?
        }
        None => load_model(model_path)?,
    };
    let span_model = match span_path {
        Some(p) => {
            manifest.input(p);
            load_model(p)?
        }
        None => load_model(model_path)?,
    };

    let mut joint_records = Vec::new();
    let mut pipeline_records = Vec::new();
    let mut identical = 0usize;
    for (doc_id, text) in &docs {
        let joint = generate_qa_pairs(&joint_model, &vocab, text, &qa_cfg)
            .map_err(|e| at_doc(*doc_id, e))?;
        let pipe = pipeline_qa_pairs(&qg_model, &span_model, &vocab, text, &qa_cfg)
            .map_err(|e| at_doc(*doc_id, e))?;
        if joint == pipe {
            identical += 1;
        }
        joint_records.extend(joint.into_iter().map(|pair| PairRecord {
            doc_id: *doc_id,
            pair,
        }));
        pipeline_records.extend(pipe.into_iter().map(|pair| PairRecord {
            doc_id: *doc_id,
            pair,
        }));
    }

    std::fs::create_dir_all(out_dir).map_err(|e| write_err(out_dir, e))?;
    let joint_path = out_dir.join("joint.jsonl");
    let pipeline_path = out_dir.join("pipeline.jsonl");
    data::write_jsonl(&joint_path, &joint_records)?;
    data::write_jsonl(&pipeline_path, &pipeline_records)?;
    manifest.output(&joint_path);
    manifest.output(&pipeline_path);

    let report = CompareReport {
        documents: docs.len(),
        joint_pairs: joint_records.len(),
        pipeline_pairs: pipeline_records.len(),
        identical_documents: identical,
        joint_encoder_passes: joint_model.encode_count(),
        pipeline_encoder_passes: qg_model.encode_count() + span_model.encode_count(),
    };
    let compare_path = out_dir.join("compare.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("cannot serialize report: {e}")))?;
    std::fs::write(&compare_path, json + "\n").map_err(|e| write_err(&compare_path, e))?;
    manifest.output(&compare_path);
    let manifest_path = out_dir.join("compare.manifest.json");
    manifest
        .write(&manifest_path)
        .map_err(|e| write_err(&manifest_path, e))?;

    println!(
        "{} documents: joint {} pairs / {} encoder passes, pipeline {} pairs / {} encoder passes, {} documents identical -> {}",
        report.documents,
        report.joint_pairs,
        report.joint_encoder_passes,
        report.pipeline_pairs,
        report.pipeline_encoder_passes,
        report.identical_documents,
        out_dir.display(),
    );
    Ok(())
}
