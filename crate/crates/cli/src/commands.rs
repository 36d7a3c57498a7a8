use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use tgnet::checkpoint::Checkpoint;
use tgnet::data::{
    build_vocab, encode_document, load_corpus, Document, EncodedDocument, Vocabulary,
};
use tgnet::eval::{
    bucket_by_title_ratio, default_stopwords, evaluate, title_related_stats, EvalInput,
    BUCKET_COUNT,
};
use tgnet::model::build_model;
use tgnet::search::{parse_prediction_line, predict_documents};
use tgnet::train::train_loop;

use crate::{CliError, Command, Resolved};

pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Training corpus, one JSON record per line.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Reuse this vocabulary instead of building one from `--train`.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output directory for `vocab.txt` and `<split>.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `preprocess`; needs the train and valid splits.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log; defaults to the checkpoint path plus `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Predictions file: one line per document, phrases separated by `;`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Preprocessed directory holding the gold split.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Raw corpus to score against instead of a preprocessed split.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Adds present F1@5 per bucket.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn run(command: Command, resolved: Resolved) -> Result<(), CliError> {
    let (name, args) = match &command {
        Command::Preprocess(a) => ("preprocess", format!("{a:?}")),
        Command::Train(a) => ("train", format!("{a:?}")),
        Command::Predict(a) => ("predict", format!("{a:?}")),
        Command::Eval(a) => ("eval", format!("{a:?}")),
        Command::Stats(a) => ("stats", format!("{a:?}")),
    };
    log::info!(
        "{name} {args} config {}",
        serde_json::to_string(&resolved.config).unwrap_or_default()
    );
    match command {
        Command::Preprocess(a) => preprocess(&a, &resolved),
        Command::Train(a) => train(&a, &resolved),
        Command::Predict(a) => predict(&a, &resolved),
        Command::Eval(a) => eval(&a),
        Command::Stats(a) => stats(&a),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn split_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn read_encoded(dir: &Path, split: &str) -> Result<Vec<EncodedDocument>, CliError> {
    let path = split_path(dir, split);
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| io_err(&path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

fn read_corpus(path: &Path) -> Result<Vec<Document>, CliError> {
    let corpus = load_corpus(path)?;
    for (line, reason) in &corpus.skipped {
        log::warn!("{}:{line}: skipped, {reason}", path.display());
    }
    Ok(corpus.documents)
}

fn read_predictions(path: &Path, expected: usize) -> Result<Vec<Vec<Vec<String>>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let preds: Vec<Vec<Vec<String>>> = text.lines().map(parse_prediction_line).collect();
    if preds.len() != expected {
        return Err(CliError::Data(format!(
            "{}: {} prediction lines for {expected} documents",
            path.display(),
            preds.len()
        )));
    }
    Ok(preds)
}

fn preprocess(a: &PreprocessArgs, r: &Resolved) -> Result<(), CliError> {
    let train = read_corpus(&a.train)?;
    let vocab = match &a.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => build_vocab(&train, r.config.hp.vocab_size)?,
    };
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    vocab.save(&a.out.join(VOCAB_FILE))?;
    let max_len = r.config.hp.max_context_len;
    let mut splits = vec![("train", train)];
    for (name, path) in [("valid", &a.valid), ("test", &a.test)] {
        if let Some(p) = path {
            splits.push((name, read_corpus(p)?));
        }
    }
    for (name, docs) in &splits {
        let encoded: Vec<EncodedDocument> = docs
            .iter()
            .map(|d| encode_document(d, &vocab, max_len))
            .collect();
        write_jsonl(&split_path(&a.out, name), &encoded)?;
        let triplets: usize = encoded.iter().map(|d| d.targets.len()).sum();
        log::info!("{name}: {} documents, {triplets} triplets", encoded.len());
    }
    log::info!("vocabulary: {} entries", vocab.len());
    Ok(())
}

fn train(a: &TrainArgs, r: &Resolved) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&a.data.join(VOCAB_FILE))?;
    let train_docs = read_encoded(&a.data, "train")?;
    let valid_docs = read_encoded(&a.data, "valid")?;
    let mut hp = r.config.hp.clone();
    if hp.vocab_size != vocab.len() {
        log::info!("vocab_size set to the vocabulary's {} entries", vocab.len());
        hp.vocab_size = vocab.len();
    }
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut sink = BufWriter::new(file);
    let header = json!({
        "command": "train",
        "data": a.data,
        "out": a.out,
        "config": r.config,
        "resolved_vocab_size": hp.vocab_size,
    });
    writeln!(sink, "{header}").map_err(|e| io_err(&log_path, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(r.config.seed);
    let params = build_model(&hp, r.config.ablation, &mut rng)?;
    log::info!(
        "{} model with {} parameters, {} training documents",
        r.config.ablation,
        params.parameter_count(),
        train_docs.len()
    );
    let out = train_loop(
        params,
        None,
        &train_docs,
        &valid_docs,
        &hp,
        &r.config.schedule,
        &mut rng,
        Some(&mut sink),
    )?;
    sink.flush().map_err(|e| io_err(&log_path, e))?;
    log::info!(
        "{} epochs, best validation perplexity {:.4}{}",
        out.epochs,
        out.best_perplexity,
        if out.stopped_early {
            ", stopped early"
        } else {
            ""
        }
    );
    let ckpt = Checkpoint {
        hyperparams: hp,
        params: out.best,
        vocab,
        optimizer: Some(out.optimizer),
        best_perplexity: out
            .best_perplexity
            .is_finite()
            .then_some(out.best_perplexity),
    };
    ckpt.save(&a.out)?;
    Ok(())
}

fn predict(a: &PredictArgs, r: &Resolved) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if r.explicit.contains("ablation") {
        ckpt.require_ablation(r.config.ablation)?;
    }
    let vocab = Vocabulary::load(&a.data.join(VOCAB_FILE))?;
    if vocab != ckpt.vocab {
        return Err(CliError::Data(format!(
            "{} was encoded with a different vocabulary than {}",
            a.data.display(),
            a.checkpoint.display()
        )));
    }
    let docs = read_encoded(&a.data, &a.split)?;
    let beam = r.config.beam();
    log::info!(
        "beam size {}, max depth {}, post-processing {}",
        beam.beam_size,
        beam.max_depth,
        r.config.post_mode
    );
    let preds = predict_documents(&ckpt.params, &docs, &ckpt.vocab, &beam, r.config.post_mode)?;
    let mut text = String::new();
    for p in &preds {
        text.push_str(&p.to_line());
        text.push('\n');
    }
    write_file(&a.out, &text)
}

fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let gold: Vec<(Vec<String>, usize, Vec<Vec<String>>)> = match (&a.data, &a.corpus) {
        (_, Some(c)) => read_corpus(c)?
            .into_iter()
            .map(|d| (d.context(), d.title.len(), d.keyphrases))
            .collect(),
        (Some(dir), None) => read_encoded(dir, &a.split)?
            .into_iter()
            .map(|d| (d.context_tokens, d.title_len, d.keyphrases))
            .collect(),
        (None, None) => return Err(CliError::Usage("eval needs --data or --corpus".into())),
    };
    let preds = read_predictions(&a.predictions, gold.len())?;
    let inputs: Vec<EvalInput> = gold
        .into_iter()
        .zip(preds)
        .map(|((context, title_len, targets), predictions)| EvalInput {
            context,
            title_len,
            targets,
            predictions,
        })
        .collect();
    let report = evaluate(&inputs);
    print!("{}", report.to_table());
    if let Some(p) = &a.json {
        let s = serde_json::to_string_pretty(&report).map_err(|e| io_err(p, e))?;
        write_file(p, &s)?;
    }
    Ok(())
}

fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let docs = read_corpus(&a.corpus)?;
    let tr = title_related_stats(&docs, &default_stopwords());
    let mut counts = [0usize; BUCKET_COUNT];
    for d in &docs {
        if let Some(b) = bucket_by_title_ratio(d.title.len(), d.context_len()) {
            counts[usize::from(b - 1)] += 1;
        }
    }
    let f1 = match &a.predictions {
        Some(p) => {
            let preds = read_predictions(p, docs.len())?;
            let inputs: Vec<EvalInput> = docs
                .iter()
                .zip(preds)
                .map(|(d, predictions)| EvalInput {
                    context: d.context(),
                    title_len: d.title.len(),
                    targets: d.keyphrases.clone(),
                    predictions,
                })
                .collect();
            Some(evaluate(&inputs).buckets)
        }
        None => None,
    };

    let mut s = format!("documents: {}\n\n", docs.len());
    s.push_str("keyphrases  total  title-related  percent\n");
    for (name, c) in [("present", tr.present), ("absent", tr.absent)] {
        s.push_str(&format!(
            "{name:<10}  {:>5}  {:>13}  {:>6.2}%\n",
            c.total, c.title_related, c.percentage
        ));
    }
    s.push_str("\ntitle ratio  docs");
    if f1.is_some() {
        s.push_str("  present F1@5");
    }
    s.push('\n');
    let labels = ["<3%", "3-6%", "6-9%", "9-12%", ">=12%"];
    for (i, label) in labels.iter().enumerate() {
        s.push_str(&format!("{label:<11}  {:>4}", counts[i]));
        if let Some(b) = &f1 {
            s.push_str(&format!("  {:.4}", b[i].present_f1_at_5));
        }
        s.push('\n');
    }
    print!("{s}");

    if let Some(p) = &a.json {
        let buckets: Vec<serde_json::Value> = (0..BUCKET_COUNT)
            .map(|i| {
                json!({
                    "bucket": i + 1,
                    "documents": counts[i],
                    "present_f1_at_5": f1.as_ref().map(|b| b[i].present_f1_at_5),
                })
            })
            .collect();
        let v = json!({ "documents": docs.len(), "title_related": tr, "buckets": buckets });
        write_file(
            p,
            &serde_json::to_string_pretty(&v).map_err(|e| io_err(p, e))?,
        )?;
    }
    Ok(())
}
