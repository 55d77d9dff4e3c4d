use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "gam", version, about = "Mention-graph augmented event argument extraction")]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Build mention graphs for one split and report their statistics.
    BuildGraph(GraphArgs),
    /// Train a model and write its checkpoint and loss log.
    Train(TrainArgs),
    /// Generate and ground arguments for one split.
    Predict(PredictArgs),
    /// Score predictions against gold arguments.
    Eval(EvalArgs),
    /// Train and score ablation variants over several seeds.
    Ablate(AblateArgs),
    /// Train and score over a grid of lambda, alpha or beta values.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Output directory (relative paths resolve under $GAM_OUTPUT_ROOT when set).
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
pub struct CorpusArgs {
    /// Corpus directory holding ontology.json and train/dev/test.jsonl.
    #[arg(long)]
    pub corpus: Option<PathBuf>,

    /// train, dev or test.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct GraphFlags {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Drop the co-existence relation.
    #[arg(long)]
    pub no_coexistence: bool,
    /// Drop the co-reference relation.
    #[arg(long)]
    pub no_coreference: bool,
    /// Drop the co-type relation.
    #[arg(long)]
    pub no_cotype: bool,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[command(flatten)]
    pub graph: GraphFlags,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_k: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub graph_layers: Option<usize>,
    /// Where node embeddings are added before the second encoder pass:
    /// embedding or encoder-output.
    #[arg(long)]
    pub fusion_source: Option<String>,
    /// Add the graph bias only in the first graph-transformer layer.
    #[arg(long)]
    pub bias_first_layer_only: bool,
    /// Apply an ablation variant, e.g. "w/o co-ref" or no-bias.
    #[arg(long)]
    pub variant: Option<String>,

    /// Start from the pretrained fine-tuning schedule (lr 3e-5, 4 epochs, batch 4).
    #[arg(long)]
    pub finetune_preset: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop once training-split AC head-match F1 reaches this value.
    #[arg(long)]
    pub early_stop_f1: Option<f64>,
    #[arg(long)]
    pub max_gen_len: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct ScoreFlags {
    /// Head token of a span: last or first.
    #[arg(long)]
    pub head: Option<String>,
    /// Coref match also accepts a head match against any cluster mention.
    #[arg(long)]
    pub coref_head_within_cluster: bool,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training documents.
    #[arg(long)]
    pub docs: Option<usize>,
    #[arg(long)]
    pub dev_docs: Option<usize>,
    #[arg(long)]
    pub test_docs: Option<usize>,
    #[arg(long)]
    pub alias_rate: Option<f64>,
    #[arg(long)]
    pub fill_rate: Option<f64>,
    #[arg(long)]
    pub event_types: Option<usize>,
    #[arg(long)]
    pub name_pool: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub graph: GraphFlags,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub max_gen_len: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Prediction JSONL written by `predict`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[command(flatten)]
    pub score: ScoreFlags,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub score: ScoreFlags,
    /// Comma-separated variants (default: all).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub score: ScoreFlags,
    /// lambda, alpha or beta.
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}
