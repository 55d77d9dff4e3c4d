//! End-to-end runs: train, predict, evaluate, ablate, sweep.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Ontology};
use crate::error::{GamError, Result};
use crate::evaluation::{evaluate, EvalReport, MatchMode, ScoreOptions, Task};
use crate::extraction::{extract_predictions, DocumentPredictions};
use crate::model::{Instance, Model, ModelConfig};
use crate::train::{train, Control, TrainConfig, TrainSummary};
use crate::vocab::Vocab;

/// Everything a training run needs besides data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub max_gen_len: usize,
    pub score: ScoreOptions,
    /// Stop once training-split AC head-match F1 reaches this value.
    pub early_stop_f1: Option<f64>,
    /// Epochs between early-stop checks.
    pub eval_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 13,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            max_gen_len: 64,
            score: ScoreOptions::default(),
            early_stop_f1: None,
            eval_every: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.max_gen_len == 0 || self.eval_every == 0 {
            return Err(GamError::Config("max_gen_len and eval_every must be positive".into()));
        }
        if let Some(f) = self.early_stop_f1 {
            if !(0.0..=1.0).contains(&f) {
                return Err(GamError::Config(format!("early_stop_f1 {f} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub fn build_instances(model: &Model, docs: &[Document], ontology: &Ontology) -> Result<Vec<Instance>> {
    docs.iter().map(|d| model.instance(d, ontology)).collect()
}

/// Greedy generation, parsing and grounding for every document, in order.
pub fn predict_documents(
    model: &Model,
    docs: &[Document],
    ontology: &Ontology,
    max_len: usize,
) -> Result<(Vec<DocumentPredictions>, Vec<String>)> {
    let per: Vec<(DocumentPredictions, Vec<String>)> = docs
        .par_iter()
        .map(|doc| {
            let inst = model.instance(doc, ontology)?;
            let generated = model.generate_tokens(&inst, max_len)?;
            extract_predictions(&generated, doc, ontology)
        })
        .collect::<Result<_>>()?;
    let mut preds = Vec::with_capacity(per.len());
    let mut diags = Vec::new();
    for (p, d) in per {
        preds.push(p);
        diags.extend(d);
    }
    Ok((preds, diags))
}

pub fn evaluate_model(
    model: &Model,
    docs: &[Document],
    ontology: &Ontology,
    config: &ExperimentConfig,
) -> Result<EvalReport> {
    let (preds, _) = predict_documents(model, docs, ontology, config.max_gen_len)?;
    evaluate(&preds, docs, ontology, &config.score)
}

pub struct TrainedModel {
    pub model: Model,
    pub summary: TrainSummary,
    /// Training-split report from the last early-stop check, if any ran.
    pub last_check: Option<EvalReport>,
}

/// Builds the vocabulary from `corpus`, initializes from the seed and trains
/// on the training split.
pub fn train_on_corpus<W: Write>(corpus: &Corpus, config: &ExperimentConfig, log: &mut W) -> Result<TrainedModel> {
    config.validate()?;
    let mut model = Model::new(config.model.clone(), Vocab::from_corpus(corpus), config.seed)?;
    let instances = build_instances(&model, &corpus.train, &corpus.ontology)?;
    let mut last_check = None;
    let epochs = config.train.epochs;
    let summary = train(&mut model, &instances, &config.train, config.seed, log, |epoch, m| {
        let Some(target) = config.early_stop_f1 else {
            return Ok(Control::Continue);
        };
        if epoch % config.eval_every != 0 && epoch != epochs {
            return Ok(Control::Continue);
        }
        let report = evaluate_model(m, &corpus.train, &corpus.ontology, config)?;
        let f1 = report.ac_head_f1();
        log::info!("epoch {epoch}: train AC head F1 {f1:.4}");
        last_check = Some(report);
        Ok(if f1 >= target { Control::Stop } else { Control::Continue })
    })?;
    Ok(TrainedModel {
        model,
        summary,
        last_check,
    })
}

/// Ablation variants named after the rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Full,
    NoCoexistence,
    NoCoreference,
    NoCotype,
    NoGraphTransformer,
    NoNodeEmbedding,
    NoBias,
    AllOff,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoCoexistence,
        Variant::NoCoreference,
        Variant::NoCotype,
        Variant::NoGraphTransformer,
        Variant::NoNodeEmbedding,
        Variant::NoBias,
        Variant::AllOff,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "GAM",
            Variant::NoCoexistence => "w/o co-ex",
            Variant::NoCoreference => "w/o co-ref",
            Variant::NoCotype => "w/o co-typ",
            Variant::NoGraphTransformer => "w/o G.T.",
            Variant::NoNodeEmbedding => "w/o N.E.",
            Variant::NoBias => "w/o bias",
            Variant::AllOff => "all-off",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoCoexistence => c.use_coexistence = false,
            Variant::NoCoreference => c.use_coreference = false,
            Variant::NoCotype => c.use_cotype = false,
            Variant::NoGraphTransformer => c.use_graph_transformer = false,
            Variant::NoNodeEmbedding => c.use_node_embedding = false,
            Variant::NoBias => c.use_bias = false,
            Variant::AllOff => {
                c.use_graph_transformer = false;
                c.use_node_embedding = false;
                c.use_bias = false;
            }
        }
        c
    }
}

impl FromStr for Variant {
    type Err = GamError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Ok(match key.as_str() {
            "full" | "gam" => Variant::Full,
            "wocoex" | "nocoex" => Variant::NoCoexistence,
            "wocoref" | "nocoref" => Variant::NoCoreference,
            "wocotyp" | "nocotyp" | "nocotype" => Variant::NoCotype,
            "wogt" | "nogt" => Variant::NoGraphTransformer,
            "wone" | "none" => Variant::NoNodeEmbedding,
            "wobias" | "nobias" => Variant::NoBias,
            "alloff" => Variant::AllOff,
            _ => return Err(GamError::Config(format!("unknown ablation variant `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub runs: Vec<SeedResult>,
}

impl TableRow {
    /// Mean F1 of one metric family over seeds.
    pub fn mean_f1(&self, task: Task, mode: MatchMode) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        self.runs.iter().map(|r| r.report.get(task, mode).f1).sum::<f64>() / self.runs.len() as f64
    }
}

/// Rows of mean F1 per metric family; used for ablation and sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub first_column: String,
    pub rows: Vec<TableRow>,
}

const COLUMNS: [(Task, MatchMode, &str); 4] = [
    (Task::Identification, MatchMode::Head, "AI-Head"),
    (Task::Classification, MatchMode::Head, "AC-Head"),
    (Task::Identification, MatchMode::Coref, "AI-Coref"),
    (Task::Classification, MatchMode::Coref, "AC-Coref"),
];

impl ResultTable {
    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{:<12}", self.first_column);
        for (_, _, name) in COLUMNS {
            let _ = write!(s, " {name:>9}");
        }
        let _ = writeln!(s, " {:>6}", "seeds");
        for row in &self.rows {
            let _ = write!(s, "{:<12}", row.label);
            for (task, mode, _) in COLUMNS {
                let _ = write!(s, " {:>9.2}", 100.0 * row.mean_f1(task, mode));
            }
            let _ = writeln!(s, " {:>6}", row.runs.len());
        }
        s
    }
}

/// Trains and scores one configuration on `corpus` for each seed; scores on
/// the dev split, or on train when dev is empty.
pub fn run_seeds(corpus: &Corpus, base: &ExperimentConfig, seeds: &[u64], label: String) -> Result<TableRow> {
    let docs = if corpus.dev.is_empty() { &corpus.train } else { &corpus.dev };
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let config = ExperimentConfig { seed, ..base.clone() };
            let trained = train_on_corpus(corpus, &config, &mut std::io::sink())?;
            let report = evaluate_model(&trained.model, docs, &corpus.ontology, &config)?;
            Ok(SeedResult { seed, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TableRow { label, runs })
}

pub fn run_ablation(corpus: &Corpus, base: &ExperimentConfig, variants: &[Variant], seeds: &[u64]) -> Result<ResultTable> {
    base.validate()?;
    let rows = variants
        .iter()
        .map(|v| {
            let config = ExperimentConfig {
                model: v.apply(&base.model),
                ..base.clone()
            };
            run_seeds(corpus, &config, seeds, v.label().to_string())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable {
        first_column: "variant".into(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Lambda,
    Alpha,
    Beta,
}

impl FromStr for SweepParam {
    type Err = GamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lambda" | "λ" => Ok(SweepParam::Lambda),
            "alpha" | "α" => Ok(SweepParam::Alpha),
            "beta" | "β" => Ok(SweepParam::Beta),
            _ => Err(GamError::Config(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
        }
    }

    pub fn set(self, model: &mut ModelConfig, value: f64) {
        match self {
            SweepParam::Lambda => model.lambda = value,
            SweepParam::Alpha => model.alpha = value,
            SweepParam::Beta => model.beta = value,
        }
    }
}

/// One row per value of `param`, all other settings fixed.
pub fn run_sweep(
    corpus: &Corpus,
    base: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
) -> Result<ResultTable> {
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            param.set(&mut c.model, v);
            c.validate()?;
            Ok((v, c))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = configs
        .iter()
        .map(|(v, c)| run_seeds(corpus, c, seeds, format!("{v}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable {
        first_column: param.name().into(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_corpus, SynthConfig};

    fn tiny_experiment() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig {
                d_model: 8,
                heads: 2,
                d_k: 4,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            max_gen_len: 8,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("no-coref".parse::<Variant>().unwrap(), Variant::NoCoreference);
        assert_eq!("w/o magic".parse::<Variant>().unwrap_err().code(), "E_CONFIG");
        let off = Variant::AllOff.apply(&ModelConfig::default());
        assert!(!off.use_bias && !off.use_graph_transformer && off.effective_lambda() == 0.0);
        assert!(!Variant::NoCoreference.apply(&ModelConfig::default()).graph_options().use_coreference);
    }

    #[test]
    fn ablation_grid_shape() {
        let corpus = generate_synthetic_corpus(
            2,
            4,
            &SynthConfig {
                dev_docs: 2,
                ..SynthConfig::default()
            },
        );
        let table = run_ablation(
            &corpus,
            &tiny_experiment(),
            &[Variant::Full, Variant::NoCoreference],
            &[1, 2, 3],
        )
        .unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.runs.len() == 3));
        assert_eq!(table.rows[1].label, "w/o co-ref");
        let text = table.to_text();
        assert!(text.contains("w/o co-ref") && text.contains("AC-Head"));
    }

    #[test]
    fn sweep_has_one_row_per_value() {
        let corpus = generate_synthetic_corpus(3, 3, &SynthConfig::default());
        let values = [0.01, 0.015, 0.02, 0.03, 0.04, 0.05];
        let table = run_sweep(&corpus, &tiny_experiment(), SweepParam::Lambda, &values, &[1]).unwrap();
        assert_eq!(table.rows.len(), 6);
        assert_eq!(table.rows[1].label, "0.015");
        let err = run_sweep(&corpus, &tiny_experiment(), SweepParam::Alpha, &[0.9], &[1]).unwrap_err();
        assert_eq!(err.code(), "E_COEF");
    }
}
