//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "ft2ra", version, about = "Retrieval-augmented next-token prediction on a toy code model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic base corpus and domain train/test corpora.
    GenCorpus(GenCorpusArgs),
    /// Build a vocabulary file from one or more corpora.
    BuildVocab(BuildVocabArgs),
    /// Train a model from scratch, or fine-tune one given with --model.
    Train(TrainArgs),
    /// Store (hidden state, target, logits) for every position of a corpus.
    BuildDatastore(BuildDatastoreArgs),
    /// Greedily complete a prompt.
    Complete(CompleteArgs),
    /// Token accuracy and line EM/ES of one method on a test corpus.
    Eval(EvalArgs),
    /// Evaluate a grid of FT2Ra and kNN-LM settings.
    Sweep(SweepArgs),
    /// Compare retrieval augmentation with genuine fine-tuning, epoch by epoch.
    CompareFinetune(CompareFinetuneArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Original,
    Ft2ra,
    Knnlm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyArg {
    Rec,
    Uni,
    Smax,
    Smaxt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    L2,
    L2sq,
}

#[derive(Debug, Args, Serialize)]
pub struct Runtime {
    /// Seed for initialization and shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel evaluation (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Run log path; defaults to `<out>.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenCorpusArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200_000)]
    pub base_tokens: usize,
    #[arg(long, default_value_t = 40_000)]
    pub domain_tokens: usize,
    #[arg(long, default_value_t = 50)]
    pub patterns: usize,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildVocabArgs {
    /// Corpus files, in order; ids are assigned by first occurrence.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub corpus: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Training corpora, concatenated in order.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub corpus: Vec<PathBuf>,
    /// Vocabulary file; built from the corpora and written if it does not exist.
    #[arg(long)]
    pub vocab: PathBuf,
    /// Model to continue training from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    /// Parameter-space learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Context length of a new model.
    #[arg(long, default_value_t = 5)]
    pub context: usize,
    #[arg(long, default_value_t = 16)]
    pub d_emb: usize,
    #[arg(long, default_value_t = 32)]
    pub dmodel: usize,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Args, Serialize)]
pub struct BuildDatastoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

/// Retrieval settings shared by every augmented method.
#[derive(Debug, Args, Serialize)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Ft2ra)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 20)]
    pub neighbors: usize,
    /// Logits-space learning rate.
    #[arg(long, default_value_t = 5.0)]
    pub eta: f64,
    /// Retrieval epochs.
    #[arg(long, default_value_t = 7)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Rec)]
    pub strategy: StrategyArg,
    /// Temperature of the smaxt strategy.
    #[arg(long, default_value_t = 10.0)]
    pub temperature: f64,
    /// kNN-LM interpolation weight.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    pub metric: MetricArg,
    /// Write neighbor updates back to the datastore (sequential evaluation).
    #[arg(long)]
    pub persist_updates: bool,
    /// Re-base the query on the model logits every epoch.
    #[arg(long)]
    pub reset_query: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long, default_value_t = 100)]
    pub max_tokens: usize,
    /// Tokens that end a completion.
    #[arg(long, value_delimiter = ',', default_value = "<EOL>")]
    pub stop_tokens: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompleteArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub datastore: Option<PathBuf>,
    #[arg(long)]
    pub prompt: String,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Print the per-epoch trace of every generated token.
    #[arg(long)]
    pub trace: bool,
    /// Also write the completion here (and the updated datastore next to it
    /// with --persist-updates).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub datastore: Option<PathBuf>,
    /// Test corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Skip line-level completion.
    #[arg(long)]
    pub token_only: bool,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub datastore: PathBuf,
    /// Test corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Methods to include.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "original,ft2ra,knnlm")]
    pub method: Vec<MethodArg>,
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub neighbors: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub eta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "7")]
    pub iters: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "rec")]
    pub strategy: Vec<StrategyArg>,
    #[arg(long, default_value_t = 10.0)]
    pub temperature: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub lambda: Vec<f64>,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    pub metric: MetricArg,
    #[arg(long)]
    pub reset_query: bool,
    /// Also run line-level completion for every point.
    #[arg(long)]
    pub lines: bool,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Report file (JSON); curves go to `<stem>.curveN.tsv` beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareFinetuneArgs {
    /// Pretrained model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Domain training corpus (fine-tuning data and datastore source).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub test_corpus: PathBuf,
    /// Augmentors to compare against the bare model.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ft2ra,knnlm")]
    pub method: Vec<MethodArg>,
    #[arg(long, default_value_t = 20)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 5.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 7)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Rec)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 10.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = MetricArg::L2)]
    pub metric: MetricArg,
    #[arg(long)]
    pub reset_query: bool,
    /// Last fine-tuning epoch.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub runtime: Runtime,
}
