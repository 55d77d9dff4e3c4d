//! Resolved run configuration: defaults, then the optional JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use gam_core::corpus::Split;
use gam_core::evaluation::HeadRule;
use gam_core::experiment::{ExperimentConfig, SweepParam, Variant};
use gam_core::graph::GraphOptions;
use gam_core::model::FusionSource;
use gam_core::synth::SynthConfig;
use gam_core::train::TrainConfig;
use gam_core::{GamError, Result};
use serde::{Deserialize, Serialize};

use crate::args::{Common, CorpusArgs, GraphFlags, ModelFlags, ScoreFlags};

pub const OUTPUT_ROOT_ENV: &str = "GAM_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub corpus: Option<PathBuf>,
    pub split: Option<Split>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub experiment: ExperimentConfig,
    pub synth: SynthConfig,
    pub synth_docs: usize,
    /// Applied on top of `experiment.model` by `train`.
    pub variant: Option<Variant>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub sweep_param: SweepParam,
    pub sweep_values: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            corpus: None,
            split: None,
            checkpoint: None,
            predictions: None,
            output_dir: None,
            experiment: ExperimentConfig::default(),
            synth: SynthConfig {
                dev_docs: 8,
                test_docs: 8,
                ..SynthConfig::default()
            },
            synth_docs: 32,
            variant: None,
            variants: Variant::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            sweep_param: SweepParam::Lambda,
            sweep_values: vec![0.01, 0.015, 0.02, 0.03, 0.04, 0.05],
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunConfig {
    /// Defaults, overlaid by the `--config` file when given.
    pub fn load(command: &str, common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| GamError::Io {
                    path: path.clone(),
                    source: e,
                })?;
                serde_json::from_str(&text).map_err(|e| GamError::Parse {
                    location: path.display().to_string(),
                    detail: e.to_string(),
                })?
            }
            None => RunConfig::default(),
        };
        cfg.command = command.to_string();
        set(&mut cfg.experiment.seed, common.seed);
        if common.out.is_some() {
            cfg.output_dir = common.out.clone();
        }
        Ok(cfg)
    }

    pub fn apply_corpus(&mut self, a: &CorpusArgs) -> Result<()> {
        if a.corpus.is_some() {
            self.corpus = a.corpus.clone();
        }
        if let Some(s) = &a.split {
            self.split = Some(s.parse()?);
        }
        Ok(())
    }

    pub fn apply_graph(&mut self, g: &GraphFlags) {
        let m = &mut self.experiment.model;
        set(&mut m.alpha, g.alpha);
        set(&mut m.beta, g.beta);
        if g.no_coexistence {
            m.use_coexistence = false;
        }
        if g.no_coreference {
            m.use_coreference = false;
        }
        if g.no_cotype {
            m.use_cotype = false;
        }
    }

    pub fn apply_model(&mut self, f: &ModelFlags) -> Result<()> {
        self.apply_graph(&f.graph);
        if f.finetune_preset {
            self.experiment.train = TrainConfig::fine_tune();
        }
        let m = &mut self.experiment.model;
        set(&mut m.lambda, f.lambda);
        set(&mut m.d_model, f.d_model);
        set(&mut m.heads, f.heads);
        set(&mut m.d_k, f.d_k);
        set(&mut m.encoder_layers, f.encoder_layers);
        set(&mut m.decoder_layers, f.decoder_layers);
        set(&mut m.graph_layers, f.graph_layers);
        if let Some(src) = &f.fusion_source {
            m.fusion_source = match src.as_str() {
                "embedding" => FusionSource::Embedding,
                "encoder-output" | "encoder_output" => FusionSource::EncoderOutput,
                other => return Err(GamError::Config(format!("unknown fusion source `{other}`"))),
            };
        }
        if f.bias_first_layer_only {
            m.bias_every_layer = false;
        }
        if let Some(v) = &f.variant {
            self.variant = Some(v.parse()?);
        }
        let t = &mut self.experiment.train;
        set(&mut t.learning_rate, f.lr);
        set(&mut t.epochs, f.epochs);
        set(&mut t.batch_size, f.batch_size);
        if f.early_stop_f1.is_some() {
            self.experiment.early_stop_f1 = f.early_stop_f1;
        }
        set(&mut self.experiment.max_gen_len, f.max_gen_len);
        Ok(())
    }

    pub fn apply_score(&mut self, s: &ScoreFlags) -> Result<()> {
        if let Some(h) = &s.head {
            self.experiment.score.head = match h.as_str() {
                "last" => HeadRule::LastToken,
                "first" => HeadRule::FirstToken,
                other => return Err(GamError::Config(format!("unknown head rule `{other}`"))),
            };
        }
        if s.coref_head_within_cluster {
            self.experiment.score.coref_head_within_cluster = true;
        }
        Ok(())
    }

    pub fn graph_options(&self) -> GraphOptions {
        self.experiment.model.graph_options()
    }

    /// Model configuration with the single `variant` applied.
    pub fn effective_experiment(&self) -> ExperimentConfig {
        let mut e = self.experiment.clone();
        if let Some(v) = self.variant {
            e.model = v.apply(&e.model);
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        let s = &self.synth;
        if !(0.0..=1.0).contains(&s.alias_rate) || !(0.0..=1.0).contains(&s.fill_rate) {
            return Err(GamError::Config("alias_rate and fill_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn require_corpus(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| GamError::Config(format!("{}: --corpus is required", self.command)))
    }

    /// Output directory, resolved under the output-root variable when relative.
    pub fn resolve_output(&mut self) -> Result<PathBuf> {
        let dir = self
            .output_dir
            .clone()
            .ok_or_else(|| GamError::Config(format!("{}: --out is required", self.command)))?;
        let dir = match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        };
        self.output_dir = Some(dir.clone());
        Ok(dir)
    }
}
