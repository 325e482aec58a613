//! The `tweetsense` command line: train, evaluate, learning curves, serve, predict.
//!
//! Every flag can also be set through a `SENTIMENT_`-prefixed environment variable.
//! Reports go to stdout as JSON; logs go to stderr.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;
use tweetsense_core::api::ModelSelector;
use tweetsense_core::bilstm::{BiLstmConfig, EpochStats, TrainRunConfig};
use tweetsense_core::corpus::{self, CorpusError, SplitCorpus, DEFAULT_SAMPLE_SIZE, DEFAULT_TRAIN_FRACTION};
use tweetsense_core::logreg::LogRegConfig;
use tweetsense_core::metrics::{self, report, LearningCurve, MetricsReport};
use tweetsense_core::modelstore::{self, artifact_paths, ArtifactManifest, LoadedModel};
use tweetsense_core::ndnum::AdamHyper;
use tweetsense_core::pipeline::{encode_split, ClassicalModel, NeuralModel};
use tweetsense_core::textprep::{preprocess, TokenSeq, Vocabulary};
use tweetsense_core::tfidf::TfidfModel;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
}

impl CliError {
    /// Process exit status: 1 usage, 2 data, 3 training or artifact problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Training(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn training(e: impl std::fmt::Display) -> CliError {
    CliError::Training(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "tweetsense", version, about = "Tweet sentiment: TF-IDF + logistic regression and a BiLSTM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a seeded sample, save the artifact, print the test-split report.
    Train(TrainArgs),
    /// Re-create the seeded split and report a saved artifact's test-split metrics.
    Evaluate(EvaluateArgs),
    /// Write a learning curve CSV (by training size for lr, by epoch for bilstm).
    Curve(CurveArgs),
    /// Serve the saved models over HTTP until interrupted.
    Serve(ServeArgs),
    /// Ask a running service for a prediction.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Lr,
    Bilstm,
}

impl ModelArg {
    fn prefix(&self) -> &'static str {
        match self {
            ModelArg::Lr => "lr",
            ModelArg::Bilstm => "bilstm",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Sentiment140 CSV (headerless, Latin-1).
    #[arg(long, env = "SENTIMENT_DATA")]
    pub data: PathBuf,
    /// Tweets drawn from the corpus, balanced across classes.
    #[arg(long, env = "SENTIMENT_SAMPLE", default_value_t = DEFAULT_SAMPLE_SIZE)]
    pub sample: usize,
    /// Fraction of the sample used for training.
    #[arg(long, env = "SENTIMENT_TRAIN_FRAC", default_value_t = DEFAULT_TRAIN_FRACTION)]
    pub train_frac: f64,
    /// Seed for sampling, splitting, initialization and batching.
    #[arg(long, env = "SENTIMENT_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct LrArgs {
    /// Gradient-descent step size for logistic regression.
    #[arg(long, env = "SENTIMENT_GD_LEARNING_RATE", default_value_t = 1.0)]
    pub gd_learning_rate: f64,
    /// Gradient-descent iteration cap.
    #[arg(long, env = "SENTIMENT_MAX_ITERS", default_value_t = 1000)]
    pub max_iters: usize,
    /// Stop when the relative cost decrease falls below this.
    #[arg(long, env = "SENTIMENT_TOL", default_value_t = 1e-4)]
    pub tol: f64,
    /// L2 penalty strength (bias excluded).
    #[arg(long, env = "SENTIMENT_L2_LAMBDA", default_value_t = 1.0)]
    pub l2_lambda: f64,
}

impl LrArgs {
    pub fn config(&self) -> LogRegConfig {
        LogRegConfig {
            l2_lambda: self.l2_lambda,
            learning_rate: self.gd_learning_rate,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

impl Default for LrArgs {
    fn default() -> Self {
        let c = LogRegConfig::default();
        LrArgs {
            gd_learning_rate: c.learning_rate,
            max_iters: c.max_iters,
            tol: c.tol,
            l2_lambda: c.l2_lambda,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BilstmArgs {
    #[arg(long, env = "SENTIMENT_EPOCHS", default_value_t = 6)]
    pub epochs: usize,
    #[arg(long, env = "SENTIMENT_BATCH_SIZE", default_value_t = 64)]
    pub batch_size: usize,
    /// Adam step size.
    #[arg(long, env = "SENTIMENT_ADAM_LEARNING_RATE", default_value_t = 1e-3)]
    pub adam_learning_rate: f64,
    #[arg(long, env = "SENTIMENT_EMB_DIM", default_value_t = 128)]
    pub emb_dim: usize,
    /// Hidden units per direction.
    #[arg(long, env = "SENTIMENT_HIDDEN", default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, env = "SENTIMENT_LAYERS", default_value_t = 2)]
    pub layers: usize,
    #[arg(long, env = "SENTIMENT_DROPOUT", default_value_t = 0.3)]
    pub dropout: f64,
    /// Tokens kept per tweet.
    #[arg(long, env = "SENTIMENT_MAX_LEN", default_value_t = 50)]
    pub max_len: usize,
}

impl BilstmArgs {
    /// Architecture with the vocabulary size left at zero; it is fixed by the training split.
    pub fn architecture(&self) -> BiLstmConfig {
        BiLstmConfig {
            vocab: 0,
            emb_dim: self.emb_dim,
            hidden: self.hidden,
            num_layers: self.layers,
            dropout: self.dropout,
            max_len: self.max_len,
        }
    }

    pub fn run_config(&self, seed: u64) -> TrainRunConfig {
        TrainRunConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            adam: AdamHyper {
                learning_rate: self.adam_learning_rate,
                ..Default::default()
            },
        }
    }
}

impl Default for BilstmArgs {
    fn default() -> Self {
        let a = BiLstmConfig::reference(0);
        let r = TrainRunConfig::default();
        BilstmArgs {
            epochs: r.epochs,
            batch_size: r.batch_size,
            adam_learning_rate: r.adam.learning_rate,
            emb_dim: a.emb_dim,
            hidden: a.hidden,
            layers: a.num_layers,
            dropout: a.dropout,
            max_len: a.max_len,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, env = "SENTIMENT_MODEL")]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory; artifacts are written as `<out>/<model>.manifest.json` and friends.
    #[arg(long, env = "SENTIMENT_OUT", default_value = "artifacts")]
    pub out: PathBuf,
    #[command(flatten)]
    pub lr: LrArgs,
    #[command(flatten)]
    pub bilstm: BilstmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Artifact prefix (e.g. `artifacts/lr`) or its manifest path.
    #[arg(long, env = "SENTIMENT_ARTIFACT")]
    pub artifact: PathBuf,
    #[arg(long, env = "SENTIMENT_DATA")]
    pub data: PathBuf,
    /// Defaults to the sample size recorded in the artifact.
    #[arg(long, env = "SENTIMENT_SAMPLE")]
    pub sample: Option<usize>,
    /// Defaults to the train fraction recorded in the artifact.
    #[arg(long, env = "SENTIMENT_TRAIN_FRAC")]
    pub train_frac: Option<f64>,
    /// Defaults to the seed recorded in the artifact.
    #[arg(long, env = "SENTIMENT_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    #[arg(long, value_enum, env = "SENTIMENT_MODEL")]
    pub model: ModelArg,
    #[command(flatten)]
    pub data: DataArgs,
    /// CSV destination.
    #[arg(long, env = "SENTIMENT_OUT", default_value = "curve.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub lr: LrArgs,
    #[command(flatten)]
    pub bilstm: BilstmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SENTIMENT_LR_ARTIFACT")]
    pub lr_artifact: Option<PathBuf>,
    #[arg(long, env = "SENTIMENT_BILSTM_ARTIFACT")]
    pub bilstm_artifact: Option<PathBuf>,
    #[arg(long, env = "SENTIMENT_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Restrict CORS to this origin (any origin when unset).
    #[arg(long, env = "SENTIMENT_CORS_ORIGIN")]
    pub cors_origin: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    /// Tweet text to classify.
    pub text: String,
    /// lr, bilstm or both.
    #[arg(long, env = "SENTIMENT_PREDICT_MODEL", default_value = "both", value_parser = parse_selector)]
    pub model: ModelSelector,
    #[arg(long, env = "SENTIMENT_SERVER", default_value = "http://127.0.0.1:8080")]
    pub server: String,
}

fn parse_selector(s: &str) -> Result<ModelSelector, String> {
    ModelSelector::parse(s).ok_or_else(|| format!("expected one of {}", ModelSelector::VALID))
}

/// Loads the corpus and draws the seeded split.
pub fn load_split(data: &Path, sample: usize, train_frac: f64, seed: u64) -> Result<SplitCorpus, CliError> {
    let tweets = corpus::load_sentiment140(data)?;
    tracing::info!(path = %data.display(), tweets = tweets.len(), "corpus loaded");
    Ok(corpus::sample_and_split(&tweets, sample, train_frac, seed)?)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub report: MetricsReport,
    pub manifest: ArtifactManifest,
    pub prefix: PathBuf,
    /// Per-epoch statistics; empty for the classical model.
    pub history: Vec<EpochStats>,
}

fn split_echo(split: &SplitCorpus, train_frac: f64) -> Value {
    json!({
        "sample": split.sample_size,
        "train_frac": train_frac,
        "seed": split.seed,
        "train_size": split.train.len(),
        "test_size": split.test.len(),
    })
}

fn with(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

pub fn fit_classical(split: &SplitCorpus, lr: &LrArgs) -> Result<(ClassicalModel, MetricsReport, Value), CliError> {
    let cfg = lr.config();
    let (model, outcome) = ClassicalModel::fit(&split.train, &cfg).map_err(training)?;
    tracing::info!(
        features = model.vectorizer.dim(),
        iterations = outcome.objective.len() - 1,
        converged = outcome.converged,
        "logistic regression trained"
    );
    let rep = report(&model.evaluate(&split.test).map_err(training)?).map_err(training)?;
    let echo = json!({
        "logreg": cfg,
        "iterations": outcome.objective.len() - 1,
        "converged": outcome.converged,
        "final_cost": outcome.objective.last(),
    });
    Ok((model, rep, echo))
}

pub fn fit_neural(
    split: &SplitCorpus,
    args: &BilstmArgs,
) -> Result<(NeuralModel, MetricsReport, Vec<EpochStats>, Value), CliError> {
    let run = args.run_config(split.seed);
    let (model, history, encoded) = NeuralModel::fit(split, args.architecture(), split.seed, &run, |e| {
        tracing::info!(
            epoch = e.epoch,
            loss = e.train_loss,
            train_accuracy = e.train_accuracy,
            validation_accuracy = e.validation_accuracy,
            "epoch finished"
        )
    })
    .map_err(training)?;
    let rep = report(&model.evaluate(&split.test).map_err(training)?).map_err(training)?;
    let echo = json!({
        "epochs": run.epochs,
        "batch_size": run.batch_size,
        "adam": run.adam,
        "dropped_empty_train": encoded.dropped_empty_train,
        "history": history,
        "parameter_count": model.model.parameter_count(),
    });
    Ok((model, rep, history, echo))
}

pub fn train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let d = &args.data;
    let split = load_split(&d.data, d.sample, d.train_frac, d.seed)?;
    let prefix = args.out.join(args.model.prefix());
    let base = with(split_echo(&split, d.train_frac), json!({"model": args.model.prefix()}));
    let (rep, manifest, history) = match args.model {
        ModelArg::Lr => {
            let (model, rep, echo) = fit_classical(&split, &args.lr)?;
            let config = with(with(base, echo), json!({"test_accuracy": rep.accuracy, "report": rep}));
            (rep, modelstore::save_classical(&model, &prefix, config).map_err(training)?, Vec::new())
        }
        ModelArg::Bilstm => {
            let (model, rep, history, echo) = fit_neural(&split, &args.bilstm)?;
            let config = with(with(base, echo), json!({"test_accuracy": rep.accuracy, "report": rep}));
            (rep, modelstore::save_neural(&model, &prefix, config).map_err(training)?, history)
        }
    };
    tracing::info!(artifact = %artifact_paths(&prefix).0.display(), "artifact saved");
    Ok(TrainSummary {
        report: rep,
        manifest,
        prefix,
        history,
    })
}

fn train_tokens(split: &SplitCorpus) -> Vec<TokenSeq> {
    split.train.iter().map(|t| preprocess(&t.text)).collect()
}

pub fn evaluate(args: &EvaluateArgs) -> Result<MetricsReport, CliError> {
    let loaded = modelstore::load(&args.artifact).map_err(training)?;
    let cfg = &loaded.manifest.config;
    let recorded_usize = |k: &str| cfg.get(k).and_then(Value::as_u64);
    let sample = args
        .sample
        .or(recorded_usize("sample").map(|v| v as usize))
        .unwrap_or(DEFAULT_SAMPLE_SIZE);
    let train_frac = args
        .train_frac
        .or(cfg.get("train_frac").and_then(Value::as_f64))
        .unwrap_or(DEFAULT_TRAIN_FRACTION);
    let seed = args.seed.or(recorded_usize("seed")).unwrap_or(DEFAULT_SEED);
    let split = load_split(&args.data, sample, train_frac, seed)?;
    let cm = match &loaded.model {
        LoadedModel::Classical(m) => {
            let rebuilt = TfidfModel::fit(&train_tokens(&split)).map_err(training)?;
            if rebuilt.features() != m.vectorizer.features() {
                return Err(CliError::Training(format!(
                    "artifact/corpus mismatch: artifact has {} features, this split yields {}",
                    m.vectorizer.dim(),
                    rebuilt.dim()
                )));
            }
            m.evaluate(&split.test).map_err(training)?
        }
        LoadedModel::Neural(m) => {
            let rebuilt = Vocabulary::build(&train_tokens(&split)).map_err(training)?;
            if rebuilt != m.vocab {
                return Err(CliError::Training(format!(
                    "artifact/corpus mismatch: artifact vocabulary has {} entries, this split yields {}",
                    m.vocab.size(),
                    rebuilt.size()
                )));
            }
            m.evaluate(&split.test).map_err(training)?
        }
    };
    report(&cm).map_err(training)
}

pub fn curve(args: &CurveArgs) -> Result<LearningCurve, CliError> {
    let d = &args.data;
    let split = load_split(&d.data, d.sample, d.train_frac, d.seed)?;
    let curve = match args.model {
        ModelArg::Lr => {
            metrics::ml_learning_curve(&split, &metrics::default_curve_sizes(), d.seed, &args.lr.config())
                .map_err(training)?
        }
        ModelArg::Bilstm => {
            // Fails early on an unusable split before the long training run.
            encode_split(&split, args.bilstm.max_len).map_err(training)?;
            let (_, _, history, _) = fit_neural(&split, &args.bilstm)?;
            metrics::dl_learning_curve(&history)
        }
    };
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Training(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(&args.out, curve.to_csv()).map_err(|e| CliError::Training(format!("{}: {e}", args.out.display())))?;
    Ok(curve)
}

pub async fn serve(args: &ServeArgs) -> Result<(), CliError> {
    use tweetsense_inferd::{router, AppState, ModelSet};
    if args.lr_artifact.is_none() && args.bilstm_artifact.is_none() {
        return Err(CliError::Usage(
            "serve needs at least one of --lr-artifact, --bilstm-artifact".into(),
        ));
    }
    let models = ModelSet::load(args.lr_artifact.as_deref(), args.bilstm_artifact.as_deref()).map_err(training)?;
    let cors = args
        .cors_origin
        .as_deref()
        .map(|o| o.parse().map_err(|_| CliError::Usage(format!("invalid --cors-origin {o:?}"))))
        .transpose()?;
    let listener = tokio::net::TcpListener::bind(args.listen)
        .await
        .map_err(|e| CliError::Usage(format!("cannot listen on {}: {e}", args.listen)))?;
    tracing::info!(
        listen = %listener.local_addr().map(|a| a.to_string()).unwrap_or_default(),
        models = ?models.loaded_ids(),
        "serving"
    );
    tweetsense_inferd::serve(listener, router(AppState::new(models), cors), shutdown_signal())
        .await
        .map_err(|e| CliError::Training(format!("server error: {e}")))?;
    tracing::info!("shut down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub async fn predict(args: &PredictArgs) -> Result<Value, CliError> {
    let client = tweetsense_client::Client::new(&args.server);
    let results = client.predict(&args.text, args.model).await.map_err(|e| match e {
        tweetsense_client::ClientError::Status { status, .. } if status.is_client_error() => CliError::Usage(e.to_string()),
        other => CliError::Training(other.to_string()),
    })?;
    Ok(serde_json::to_value(results).expect("responses serialize"))
}
