//! Command-line interface: `prep`, `train`, `eval`, `recommend`, `sweep`.
//!
//! Every command resolves an [`ExperimentConfig`] from defaults, an optional
//! `--config` file (JSON object or `key = value` lines) and flags, in that
//! order of precedence, and echoes the result as `config.json` next to its
//! outputs.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::baselines::{bpr_train, BprConfig, PopularityTable};
use crate::data::{filter_and_remap, leave_one_out_split, load_interactions_from_path, load_split, save_split, Format, SplitDataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalConfig, EvalReport, SummaryRow, Target};
use crate::models::{DncrParams, FusionConfig, Model, ModelHeader, ModelKind, NbprParams, NeuprParams, TowerShape};
use crate::numerics::RngSeed;
use crate::ranking::Recommender;
use crate::trainer::{pretrain_pipeline, train, PretrainConfig, TrainConfig, TrainHistory};

pub const MODEL_FILE: &str = "model.ncr";
pub const HISTORY_FILE: &str = "history.json";
pub const CONFIG_FILE: &str = "config.json";
pub const STATS_FILE: &str = "stats.json";
pub const EVAL_FILE: &str = "eval.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Seed key separating test negatives from every training stream.
const TEST_NEGATIVES_KEY: u64 = (1 << 40) + 16;

/// Exit status for usage errors.
pub const EXIT_USAGE: i32 = 1;
/// Exit status for data, I/O and compatibility errors.
pub const EXIT_DATA: i32 = 2;
/// Exit status for divergence and other numeric failures.
pub const EXIT_NUMERIC: i32 = 3;

/// Every setting a command can consume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: Option<PathBuf>,
    pub format: Format,
    pub min_count: usize,
    pub model: ModelKind,
    pub factors: usize,
    pub layers: usize,
    /// Defaults to 0.001 (Adam) or, for BPR, 0.1 (SGD).
    pub lr: Option<f64>,
    pub batch: usize,
    pub ratio: usize,
    pub alpha: f64,
    pub pretrain: bool,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub k: usize,
    pub threads: usize,
    pub max_epochs: usize,
    pub plateau: f64,
    pub min_epochs: usize,
    pub negatives: usize,
    /// λ for BPR.
    pub regularization: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: None,
            format: Format::MovielensDat,
            min_count: crate::data::DEFAULT_MIN_COUNT,
            model: ModelKind::Neupr,
            factors: 8,
            layers: 4,
            lr: None,
            batch: 256,
            ratio: 1,
            alpha: 0.5,
            pretrain: false,
            seed: 0,
            out: None,
            k: 10,
            threads: 1,
            max_epochs: 100,
            plateau: 0.001,
            min_epochs: 0,
            negatives: 100,
            regularization: 0.01,
        }
    }
}

impl ExperimentConfig {
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.model {
            ModelKind::Bpr => BprConfig::default().learning_rate,
            _ => TrainConfig::default().learning_rate,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate(),
            batch_size: self.batch,
            ratio: self.ratio,
            max_epochs: self.max_epochs,
            seed: RngSeed(self.seed),
            plateau: self.plateau,
            min_epochs: self.min_epochs,
            threads: self.threads,
            eval_negatives: self.negatives,
        }
    }

    pub fn bpr_config(&self) -> BprConfig {
        BprConfig {
            learning_rate: self.learning_rate(),
            regularization: self.regularization,
            max_epochs: self.max_epochs,
            seed: RngSeed(self.seed),
            plateau: self.plateau,
            min_epochs: self.min_epochs,
            eval_negatives: self.negatives,
        }
    }

    /// Protocol for test-set evaluation.
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k: self.k,
            negatives: self.negatives,
            seed: RngSeed(self.seed).derive(TEST_NEGATIVES_KEY),
            threads: self.threads,
        }
    }

    fn data_path(&self) -> Result<&Path> {
        let path = self.data.as_deref().ok_or_else(|| Error::InvalidArgument("--data is required".into()))?;
        if !path.exists() {
            return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        Ok(path)
    }

    fn out_dir(&self) -> Result<&Path> {
        let out = self.out.as_deref().ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(out)
    }
}

/// Parses a config file: a JSON object, or `key = value` lines where `#`
/// starts a comment and values are read as JSON when possible.
pub fn parse_config_text(text: &str) -> Result<Map<String, Value>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return match serde_json::from_str(trimmed)? {
            Value::Object(map) => Ok(map),
            _ => unreachable!("text starts with an object"),
        };
    }
    let mut map = Map::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: format!("expected key = value, found {line:?}"),
        })?;
        let value = value.trim();
        let parsed = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        map.insert(key.trim().replace('-', "_"), parsed);
    }
    Ok(map)
}

#[derive(Parser, Debug)]
#[command(name = "ncr", version, about = "Pairwise neural collaborative ranking for implicit feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Filter a rating log, split it leave-one-out and write the split.
    Prep(ConfigArgs),
    /// Train a model on a prepared split.
    Train(ConfigArgs),
    /// Evaluate a model on the test items of a prepared split.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model_file: PathBuf,
        /// Append the summary row to this CSV file.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Print the top-K unseen items for one user as JSON.
    Recommend {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model_file: PathBuf,
        /// External user id.
        #[arg(long)]
        user: String,
    },
    /// HR@K and NDCG@K for K = 1..=k as CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model_file: PathBuf,
    },
}

/// Flags mirroring every [`ExperimentConfig`] field.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// Config file, JSON or key = value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Raw rating log for `prep`, prepared split directory otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `movielens-dat` or `csv`.
    #[arg(long)]
    pub format: Option<Format>,
    #[arg(long)]
    pub min_count: Option<usize>,
    /// itempop, bpr, nbpr, dncr or neupr.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Predictive factors.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Hidden layers of the DNCR tower.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Negatives per observed interaction.
    #[arg(long)]
    pub ratio: Option<usize>,
    /// NBPR weight when fusing pre-trained models.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Pre-train NBPR and DNCR before NeuPR.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub pretrain: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub plateau: Option<f64>,
    /// Epochs run before the plateau rule applies.
    #[arg(long)]
    pub min_epochs: Option<usize>,
    /// Sampled negatives per user at evaluation.
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub regularization: Option<f64>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut map = match serde_json::to_value(ExperimentConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!("config serialises to an object"),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            map.extend(parse_config_text(&text)?);
        }
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                map.insert(key.to_string(), v);
            }
        };
        set("data", self.data.as_ref().map(to_json));
        set("format", self.format.as_ref().map(to_json));
        set("min_count", self.min_count.map(Value::from));
        set("model", self.model.as_ref().map(to_json));
        set("factors", self.factors.map(Value::from));
        set("layers", self.layers.map(Value::from));
        set("lr", self.lr.map(Value::from));
        set("batch", self.batch.map(Value::from));
        set("ratio", self.ratio.map(Value::from));
        set("alpha", self.alpha.map(Value::from));
        set("pretrain", self.pretrain.map(Value::from));
        set("seed", self.seed.map(Value::from));
        set("out", self.out.as_ref().map(to_json));
        set("k", self.k.map(Value::from));
        set("threads", self.threads.map(Value::from));
        set("max_epochs", self.max_epochs.map(Value::from));
        set("plateau", self.plateau.map(Value::from));
        set("min_epochs", self.min_epochs.map(Value::from));
        set("negatives", self.negatives.map(Value::from));
        set("regularization", self.regularization.map(Value::from));
        let mut cfg: ExperimentConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.lr = Some(cfg.learning_rate());
        Ok(cfg)
    }
}

fn to_json<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("plain value serialises")
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Prep(args) => cmd_prep(&args.resolve()?),
        Command::Train(args) => cmd_train(&args.resolve()?),
        Command::Eval {
            config,
            model_file,
            summary,
        } => cmd_eval(&config.resolve()?, model_file, summary.as_deref()).map(drop),
        Command::Recommend {
            config,
            model_file,
            user,
        } => {
            let line = cmd_recommend(&config.resolve()?, model_file, user)?;
            println!("{line}");
            Ok(())
        }
        Command::Sweep { config, model_file } => cmd_sweep(&config.resolve()?, model_file),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

pub fn cmd_prep(cfg: &ExperimentConfig) -> Result<()> {
    let data = cfg.data_path()?;
    let out = cfg.out_dir()?;
    let raw = load_interactions_from_path(data, cfg.format)?;
    let filtered = filter_and_remap(&raw, cfg.min_count)?;
    let stats = DatasetStats {
        users: filtered.num_users(),
        items: filtered.num_items(),
        interactions: filtered.num_interactions(),
        density: filtered.density(),
    };
    info!(
        "{} users, {} items, {} interactions after filtering",
        stats.users, stats.items, stats.interactions
    );
    let split = leave_one_out_split(filtered)?;
    save_split(&split, out)?;
    write_json(&out.join(STATS_FILE), &stats)?;
    write_json(&out.join(CONFIG_FILE), cfg)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    let split = load_split(cfg.data_path()?)?;
    let out = cfg.out_dir()?;
    let (m, n) = (split.num_users(), split.num_items());
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    let seed = RngSeed(cfg.seed);
    let (model, history) = match cfg.model {
        ModelKind::ItemPop => (Model::ItemPop(PopularityTable::from_train(&split.train)), TrainHistory::default()),
        ModelKind::Bpr => {
            let (p, h) = bpr_train(&split, cfg.factors, &cfg.bpr_config())?;
            (Model::Bpr(p), h)
        }
        ModelKind::Nbpr => {
            let (p, h) = train(NbprParams::random(m, n, cfg.factors, seed)?, &split, &tcfg)?;
            (Model::Nbpr(p), h)
        }
        ModelKind::Dncr => {
            let shape = TowerShape::for_factors(cfg.factors, cfg.layers)?;
            let (p, h) = train(DncrParams::random(m, n, &shape, seed)?, &split, &tcfg)?;
            (Model::Dncr(p), h)
        }
        ModelKind::Neupr if cfg.pretrain => {
            let pcfg = PretrainConfig::uniform(tcfg, FusionConfig::new(cfg.alpha)?);
            let outcome = pretrain_pipeline(&split, cfg.factors, cfg.layers, &pcfg)?;
            write_json(&out.join("history_nbpr.json"), &outcome.nbpr_history)?;
            write_json(&out.join("history_dncr.json"), &outcome.dncr_history)?;
            (Model::Neupr(outcome.model), outcome.neupr_history)
        }
        ModelKind::Neupr => {
            let init = NeuprParams::random(m, n, cfg.factors, cfg.layers, seed)?;
            let (p, h) = train(init, &split, &tcfg)?;
            (Model::Neupr(p), h)
        }
    };
    let mut header = model.header();
    header.dataset = Some(split.fingerprint());
    header.metadata = serde_json::to_value(cfg)?;
    model.save(&header, &out.join(MODEL_FILE))?;
    write_json(&out.join(HISTORY_FILE), &history)?;
    write_json(&out.join(CONFIG_FILE), cfg)
}

/// Loads a model and checks it against the split it will be applied to.
fn load_compatible(path: &Path, split: &SplitDataset) -> Result<(ModelHeader, Model)> {
    let (header, model) = Model::load(path)?;
    let fingerprint = split.fingerprint();
    let trained_on = header.dataset.clone().unwrap_or_else(|| "unknown".into());
    let users_ok = header.kind == ModelKind::ItemPop || header.num_users == split.num_users();
    if !users_ok || header.num_items != split.num_items() {
        return Err(Error::DatasetMismatch {
            model: format!("{trained_on} ({} users x {} items)", header.num_users, header.num_items),
            split: format!("{fingerprint} ({} users x {} items)", split.num_users(), split.num_items()),
        });
    }
    if trained_on != fingerprint {
        warn!("model was trained on dataset {trained_on}, evaluating on {fingerprint}");
    }
    Ok((header, model))
}

fn header_field(header: &ModelHeader, key: &str) -> usize {
    header.metadata.get(key).and_then(Value::as_u64).unwrap_or(0) as usize
}

fn summary_row(header: &ModelHeader, report: &EvalReport) -> SummaryRow {
    SummaryRow {
        model: header.kind.to_string(),
        factors: header_field(header, "factors"),
        ratio: header_field(header, "ratio"),
        k: report.k,
        hr: report.hr,
        ndcg: report.ndcg,
    }
}

pub fn cmd_eval(cfg: &ExperimentConfig, model_file: &Path, summary: Option<&Path>) -> Result<EvalReport> {
    let split = load_split(cfg.data_path()?)?;
    let out = cfg.out_dir()?;
    let (header, model) = load_compatible(model_file, &split)?;
    let report = evaluate(&model, &split, Target::Test, &cfg.eval_config())?;
    info!("{}: HR@{k} {:.4}, NDCG@{k} {:.4}", header.kind, report.hr, report.ndcg, k = report.k);
    write_json(&out.join(EVAL_FILE), &report)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    if let Some(path) = summary {
        let fresh = !path.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        if fresh {
            text.push_str(SummaryRow::CSV_HEADER);
            text.push('\n');
        }
        text.push_str(&summary_row(&header, &report).to_csv());
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(report)
}

/// Top-K over every item the user has not interacted with, as a JSON line
/// of external ids.
pub fn cmd_recommend(cfg: &ExperimentConfig, model_file: &Path, user: &str) -> Result<String> {
    let split = load_split(cfg.data_path()?)?;
    let (_, model) = load_compatible(model_file, &split)?;
    let u = split
        .train
        .user_index(user)
        .ok_or_else(|| Error::Data(format!("unknown user {user:?}")))?;
    let candidates: Vec<usize> = (0..split.num_items()).filter(|&i| !split.is_known(u, i)).collect();
    if candidates.is_empty() {
        return Err(Error::Data(format!("user {user:?} has interacted with every item")));
    }
    let ranked = model.recommend(u, &candidates, cfg.k)?;
    let ids = split.train.item_ids();
    let line = serde_json::json!({
        "user": user,
        "items": ranked.items.iter().map(|&i| ids[i].as_str()).collect::<Vec<_>>(),
    });
    Ok(line.to_string())
}

/// One evaluation at K, reported for every cut-off 1..=K.
pub fn cmd_sweep(cfg: &ExperimentConfig, model_file: &Path) -> Result<()> {
    let split = load_split(cfg.data_path()?)?;
    let out = cfg.out_dir()?;
    let (header, model) = load_compatible(model_file, &split)?;
    let report = evaluate(&model, &split, Target::Test, &cfg.eval_config())?;
    let mut text = format!("{}\n", SummaryRow::CSV_HEADER);
    for k in 1..=report.k {
        text.push_str(&summary_row(&header, &report.truncated(k)?).to_csv());
        text.push('\n');
    }
    let path = out.join(SWEEP_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_json(&out.join(CONFIG_FILE), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_and_json_configs_agree() {
        let kv = parse_config_text("# experiment\nmodel = nbpr\nfactors=16\nlr = 0.0005 # grid\nmin-count = 5\n").unwrap();
        let json = parse_config_text(r#"{"model": "nbpr", "factors": 16, "lr": 0.0005, "min_count": 5}"#).unwrap();
        assert_eq!(kv, json);
        assert!(matches!(parse_config_text("factors 16"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        fs::write(&path, "factors = 16\nseed = 3\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            seed: Some(9),
            ..ConfigArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.factors, cfg.seed, cfg.batch), (16, 9, 256));
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        fs::write(&path, "factorz = 16\n").unwrap();
        let err = ConfigArgs {
            config: Some(path),
            ..ConfigArgs::default()
        }
        .resolve()
        .unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::EmptyDataset), EXIT_DATA);
        assert_eq!(exit_code(&Error::Diverged { epoch: 1, batch: 1, loss: f64::NAN }), EXIT_NUMERIC);
        assert_eq!(run(["ncr", "--help"]), 0);
        assert_eq!(run(["ncr", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["ncr", "train", "--factors", "many"]), EXIT_USAGE);
    }
}
