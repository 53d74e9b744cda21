use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use textrec_core::catalog::{
    build_model_input, load_interactions, load_items, Catalog, InputLimits, InteractionSequence, Vocabulary,
};
use textrec_core::encoder::{EncoderConfig, Model};
use textrec_core::evaluator::{cold_start_split, evaluate, leave_one_out, EvalReport};
use textrec_core::numeric::{RngStream, SeededRng};
use textrec_core::objectives::cosine_scores;
use textrec_core::trainer::{encode_all_items, pretrain, two_stage_finetune, EpochLog, ItemFeatureMatrix, NdcgValidator};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::synthetic::{generate, SyntheticConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "textrec", version, about = "Text-only sequential recommender")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a word vocabulary over one or more item files.
    BuildVocab {
        #[arg(long, required = true)]
        items: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain from random initialization.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Epoch log (JSON lines); defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Two-stage finetuning on the configured dataset.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Starting checkpoint; random initialization when absent.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Leave-one-out test evaluation; report JSON on stdout.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Re-encode items with the checkpoint parameters, ignoring any stored matrix.
        #[arg(long)]
        zero_shot: bool,
        /// Report in-set and cold-start buckets separately.
        #[arg(long)]
        cold_start: bool,
        /// Item matrix written by `encode-items`.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Encode every item into a matrix file.
    EncodeItems {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-K next items for a comma-separated history, oldest first.
    Recommend {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        history: String,
        #[arg(long, default_value_t = 10)]
        topk: usize,
    },
    /// Write synthetic domains to `<out>/domain<k>/`.
    MakeSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        domains: usize,
        #[arg(long, default_value_t = 50)]
        items_per_domain: usize,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0.0)]
        cold_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `args`, run the command, return the process exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::BuildVocab { items, min_count, out } => build_vocab(&items, min_count, &out),
        Command::Pretrain { config, out, log } => cmd_pretrain(&config, &out, log.as_deref()),
        Command::Finetune { config, init, out, log } => cmd_finetune(&config, init.as_deref(), &out, log.as_deref()),
        Command::Evaluate {
            ckpt,
            data,
            zero_shot,
            cold_start,
            matrix,
            csv,
        } => cmd_evaluate(&ckpt, &data, zero_shot, cold_start, matrix.as_deref(), csv.as_deref(), stdout),
        Command::EncodeItems { ckpt, items, out } => cmd_encode_items(&ckpt, &items, &out),
        Command::Recommend {
            ckpt,
            items,
            history,
            topk,
        } => cmd_recommend(&ckpt, &items, &history, topk, stdout),
        Command::MakeSynthetic {
            seed,
            domains,
            items_per_domain,
            users,
            noise,
            cold_fraction,
            out,
        } => {
            let cfg = SyntheticConfig {
                seed,
                domains,
                items_per_domain,
                users,
                noise,
                cold_fraction,
                ..SyntheticConfig::default()
            };
            for d in generate(&cfg)? {
                d.write(&out.join(&d.name))?;
                log::info!("{}: {} items, {} users", d.name, d.items.len(), d.interactions.len());
            }
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_stdout(stdout: &mut dyn Write, line: &str) -> Result<(), CliError> {
    writeln!(stdout, "{line}").map_err(|e| CliError::Data(format!("cannot write output: {e}")))
}

/// Vocabulary file: one token per line, line index = id.
pub fn build_vocab(items: &[PathBuf], min_count: usize, out: &Path) -> Result<(), CliError> {
    let mut all = Vec::new();
    for p in items {
        all.extend(load_items(p)?);
    }
    let vocab = Vocabulary::build(&all, min_count)?;
    let mut text = vocab.tokens().join("\n");
    text.push('\n');
    write_file(out, text.as_bytes())
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read vocabulary {}: {e}", path.display())))?;
    Ok(Vocabulary::from_tokens(text.lines().map(str::to_string).collect())?)
}

/// Items and interactions of a data directory, checked for dangling ids.
pub fn load_dataset(dir: &Path) -> Result<(Catalog, Vec<InteractionSequence>), CliError> {
    let catalog = Catalog::new(load_items(&dir.join("items.jsonl"))?)?;
    let seqs = load_interactions(&dir.join("interactions.jsonl"))?;
    catalog.check_sequences(&seqs)?;
    Ok((catalog, seqs))
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<(), CliError> {
    let mut text = String::new();
    for line in log {
        text.push_str(&serde_json::to_string(line).expect("log serializes"));
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

fn default_log(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

fn fresh_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Model<f32>, CliError> {
    let mut rng = SeededRng::stream(cfg.train.seed, RngStream::Init);
    Ok(Model::new(cfg.model.encoder(vocab.len()), &mut rng)?)
}

pub fn cmd_pretrain(config: &Path, out: &Path, log_path: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    if cfg.data.pretrain.is_empty() {
        return Err(CliError::Config("data.pretrain lists no data directories".into()));
    }
    let vocab = load_vocab(&cfg.data.vocab)?;
    let limits = cfg.model.limits();
    let mut items = Vec::new();
    let mut seqs = Vec::new();
    for dir in &cfg.data.pretrain {
        let (c, s) = load_dataset(dir)?;
        items.extend(c.items().iter().cloned());
        seqs.extend(s);
    }
    let catalog = Catalog::new(items)?;
    let mut model = fresh_model(&cfg, &vocab)?;

    let valid = match &cfg.data.pretrain_valid {
        Some(dir) => {
            let (c, s) = load_dataset(dir)?;
            Some((c, leave_one_out(&s).valid))
        }
        None => None,
    };
    let threads = cfg.train.threads;
    let mut validate = |m: &Model<f32>| -> textrec_core::Result<f64> {
        let (c, cases) = valid.as_ref().expect("only called with validation data");
        let matrix = encode_all_items(m, c, &vocab, &limits, threads)?;
        Ok(evaluate(m, &matrix, cases, c, &vocab, &limits, threads)?.ndcg())
    };
    let validator: Option<&mut dyn FnMut(&Model<f32>) -> textrec_core::Result<f64>> =
        if valid.is_some() { Some(&mut validate) } else { None };
    let log = pretrain(&mut model, &seqs, &catalog, &vocab, &limits, &cfg.train, &cfg.loss, validator)?;
    Checkpoint::from_model(&model, &vocab, &limits, None).save(out)?;
    write_log(&log_path.map_or_else(|| default_log(out), Path::to_path_buf), &log)
}

fn check_same_architecture(config: &EncoderConfig, ck: &EncoderConfig) -> Result<(), CliError> {
    let pairs = [
        ("d_model", config.d_model, ck.d_model),
        ("n_layers", config.n_layers, ck.n_layers),
        ("n_heads", config.n_heads, ck.n_heads),
        ("window", config.window, ck.window),
        ("ffn_dim", config.ffn_dim, ck.ffn_dim),
        ("vocab_size", config.vocab_size, ck.vocab_size),
        ("max_tokens", config.max_tokens, ck.max_tokens),
        ("max_items", config.max_items, ck.max_items),
    ];
    let bad: Vec<String> = pairs
        .iter()
        .filter(|(_, a, b)| a != b)
        .map(|(name, a, b)| format!("{name}: config {a}, checkpoint {b}"))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("checkpoint does not match config ({})", bad.join("; "))))
    }
}

pub fn cmd_finetune(config: &Path, init: Option<&Path>, out: &Path, log_path: Option<&Path>) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let dir = cfg
        .data
        .finetune
        .clone()
        .ok_or_else(|| CliError::Config("data.finetune is required for finetuning".into()))?;
    let vocab = load_vocab(&cfg.data.vocab)?;
    let limits = cfg.model.limits();
    let encoder = cfg.model.encoder(vocab.len());
    let model = match init {
        Some(path) => {
            let (m, ck_vocab, _) = Checkpoint::load(path)?.model()?;
            check_same_architecture(&encoder, m.config())?;
            if ck_vocab != vocab {
                return Err(CliError::Config("checkpoint vocabulary differs from data.vocab".into()));
            }
            Model::from_params(encoder, m.into_params())?
        }
        None => fresh_model(&cfg, &vocab)?,
    };
    let (catalog, seqs) = load_dataset(&dir)?;
    let split = leave_one_out(&seqs);
    let mut validator = NdcgValidator::new(&split.valid, &catalog, &vocab, limits, cfg.train.threads)?;
    let outcome = two_stage_finetune(model, &split.train, &catalog, &vocab, &limits, &cfg.train, &cfg.loss, &mut validator)?;
    Checkpoint::from_model(&outcome.model, &vocab, &limits, Some(&outcome.items)).save(out)?;
    write_log(&log_path.map_or_else(|| default_log(out), Path::to_path_buf), &outcome.log)
}

fn matrix_for(
    ck: &Checkpoint,
    model: &Model<f32>,
    catalog: &Catalog,
    vocab: &Vocabulary,
    limits: &InputLimits,
    reencode: bool,
    external: Option<&Path>,
) -> Result<ItemFeatureMatrix<f32>, CliError> {
    let matches = |m: &ItemFeatureMatrix<f32>| m.ids().iter().map(String::as_str).eq(catalog.ids());
    if let Some(path) = external {
        let m = Checkpoint::load(path)?
            .items()?
            .ok_or_else(|| CliError::Checkpoint(format!("{} holds no item matrix", path.display())))?;
        if !matches(&m) {
            return Err(CliError::Data("item matrix ids do not match the catalog".into()));
        }
        return Ok(m);
    }
    if !reencode {
        if let Some(m) = ck.items()?.filter(|m| matches(m)) {
            return Ok(m);
        }
    }
    Ok(encode_all_items(model, catalog, vocab, limits, 0)?)
}

#[derive(Serialize)]
struct ColdStartReport {
    in_set: EvalReport,
    cold: EvalReport,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_evaluate(
    ckpt: &Path,
    data: &Path,
    zero_shot: bool,
    cold_start: bool,
    matrix: Option<&Path>,
    csv: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let ck = Checkpoint::load(ckpt)?;
    let (model, vocab, limits) = ck.model()?;
    let (catalog, seqs) = load_dataset(data)?;
    let split = leave_one_out(&seqs);
    if split.test.is_empty() {
        return Err(CliError::Data(format!("no user in {} has three or more interactions", data.display())));
    }
    let items = matrix_for(&ck, &model, &catalog, &vocab, &limits, zero_shot, matrix)?;
    let report = |cases| -> Result<EvalReport, CliError> {
        Ok(evaluate(&model, &items, cases, &catalog, &vocab, &limits, 0)?)
    };
    let (json, rows) = if cold_start {
        let buckets = cold_start_split(&split);
        let r = ColdStartReport {
            in_set: report(&buckets.in_set)?,
            cold: report(&buckets.cold)?,
        };
        let rows = vec![r.in_set.csv_row(), r.cold.csv_row()];
        (serde_json::to_string(&r).expect("report serializes"), rows)
    } else {
        let r = report(&split.test)?;
        (r.to_json(), vec![r.csv_row()])
    };
    write_stdout(stdout, &json)?;
    if let Some(path) = csv {
        let mut text = format!("{}\n", EvalReport::CSV_HEADER);
        for row in rows {
            text.push_str(&row);
            text.push('\n');
        }
        write_file(path, text.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_encode_items(ckpt: &Path, items: &Path, out: &Path) -> Result<(), CliError> {
    let (model, vocab, limits) = Checkpoint::load(ckpt)?.model()?;
    let catalog = Catalog::new(load_items(items)?)?;
    let matrix = encode_all_items(&model, &catalog, &vocab, &limits, 0)?;
    Checkpoint::from_items(&matrix).save(out)
}

#[derive(Debug, PartialEq, Serialize)]
pub struct Recommendation {
    pub item_id: String,
    pub score: f32,
}

/// Top-`k` items by cosine score, descending; equal scores in id order.
pub fn recommend(
    model: &Model<f32>,
    matrix: &ItemFeatureMatrix<f32>,
    history: &[String],
    catalog: &Catalog,
    vocab: &Vocabulary,
    limits: &InputLimits,
    k: usize,
) -> Result<Vec<Recommendation>, CliError> {
    let x = build_model_input(history, catalog, vocab, limits)?;
    let h = model.sequence_vector(&x)?;
    let scores = cosine_scores(&h, matrix.rows())?;
    let mut ranked: Vec<Recommendation> = matrix
        .ids()
        .iter()
        .zip(scores)
        .map(|(id, score)| Recommendation {
            item_id: id.clone(),
            score,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.item_id.cmp(&b.item_id)));
    ranked.truncate(k);
    Ok(ranked)
}

pub fn cmd_recommend(ckpt: &Path, items: &Path, history: &str, k: usize, stdout: &mut dyn Write) -> Result<(), CliError> {
    let ck = Checkpoint::load(ckpt)?;
    let (model, vocab, limits) = ck.model()?;
    let catalog = Catalog::new(load_items(items)?)?;
    let history: Vec<String> = history.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect();
    if history.is_empty() {
        return Err(CliError::Data("history is empty".into()));
    }
    let matrix = matrix_for(&ck, &model, &catalog, &vocab, &limits, false, None)?;
    let recs = recommend(&model, &matrix, &history, &catalog, &vocab, &limits, k)?;
    write_stdout(stdout, &serde_json::to_string(&recs).expect("recommendations serialize"))
}
