//! Adam and the mini-batch training loop.

use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GamError, Result};
use crate::model::{Instance, Model};
use crate::tape::{ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            epochs: 300,
            batch_size: 4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning settings for a pretrained model: lr 3e-5, 4 epochs, batch 4.
    pub fn fine_tune() -> Self {
        TrainConfig {
            learning_rate: 3e-5,
            epochs: 4,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GamError::Config(format!("invalid training settings {self:?}")))
        }
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (id, g) in grads {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = store.get_mut(*id).data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Mean per-instance loss over the batch.
    pub loss: f64,
    pub seed: u64,
}

pub const LOG_HEADER: &str = "epoch\tbatch\tloss\tseed";

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{:?}\t{}", self.epoch, self.batch, self.loss, self.seed)
    }
}

/// Mean loss and mean gradient over a batch. Per-instance work runs in
/// parallel; the reduction follows batch order so results do not depend on
/// thread scheduling.
pub fn batch_gradient(model: &Model, batch: &[&Instance]) -> Result<(f64, Vec<(ParamId, Vec<f64>)>)> {
    let per: Vec<_> = batch
        .par_iter()
        .map(|inst| model.loss_and_gradients(inst))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut acc: Vec<(ParamId, Vec<f64>)> = model
        .store
        .ids()
        .map(|id| (id, vec![0.0; model.store.get(id).numel()]))
        .collect();
    for (loss, grads) in per {
        total += loss;
        for (id, g) in grads {
            for (a, x) in acc[id.0].1.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
    for (_, g) in &mut acc {
        g.iter_mut().for_each(|x| *x *= scale);
    }
    Ok((total * scale, acc))
}

/// What the epoch callback asks the loop to do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub records: Vec<LossRecord>,
}

/// Trains `model` in place. Every batch appends one record to `log`; after
/// each epoch `on_epoch(epoch, model)` may stop training early.
pub fn train<W, F>(
    model: &mut Model,
    instances: &[Instance],
    config: &TrainConfig,
    seed: u64,
    log: &mut W,
    mut on_epoch: F,
) -> Result<TrainSummary>
where
    W: Write,
    F: FnMut(usize, &Model) -> Result<Control>,
{
    config.validate()?;
    if instances.is_empty() {
        return Err(GamError::Config("no training instances".into()));
    }
    let io = |e| GamError::io("training log", e);
    writeln!(log, "{LOG_HEADER}").map_err(io)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model.store, config);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut records = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &instances[i]).collect();
            let (loss, grads) = batch_gradient(model, &batch)?;
            adam.step(&mut model.store, &grads);
            let rec = LossRecord {
                epoch,
                batch: b + 1,
                loss,
                seed,
            };
            writeln!(log, "{rec}").map_err(io)?;
            records.push(rec);
        }
        epochs_run = epoch;
        log::debug!("epoch {epoch} done");
        if on_epoch(epoch, model)? == Control::Stop {
            break;
        }
    }
    Ok(TrainSummary { epochs_run, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::to_bytes;
    use crate::model::ModelConfig;
    use crate::synth::{generate_synthetic_corpus, SynthConfig};
    use crate::tensor::Tensor;
    use crate::vocab::Vocab;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0, -2.0]).unwrap());
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut adam = Adam::new(&store, &cfg);
        adam.step(&mut store, &[(id, vec![0.5, -3.0])]);
        // bias-corrected first step is lr · sign(g) up to eps
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.9).abs() < 1e-6);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![3.0]).unwrap());
        let mut adam = Adam::new(&store, &TrainConfig { learning_rate: 0.05, ..TrainConfig::default() });
        for _ in 0..2000 {
            let w = store.get(id).data()[0];
            adam.step(&mut store, &[(id, vec![2.0 * (w - 1.0)])]);
        }
        assert!((store.get(id).data()[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn fine_tune_preset() {
        let p = TrainConfig::fine_tune();
        assert_eq!((p.learning_rate, p.epochs, p.batch_size), (3e-5, 4, 4));
        assert!(TrainConfig { batch_size: 0, ..p }.validate().is_err());
    }

    fn setup(seed: u64) -> (Model, Vec<Instance>) {
        let corpus = generate_synthetic_corpus(seed, 6, &SynthConfig::default());
        let config = ModelConfig {
            d_model: 16,
            heads: 2,
            d_k: 8,
            ..ModelConfig::default()
        };
        let model = Model::new(config, Vocab::from_corpus(&corpus), seed).unwrap();
        let inst = corpus
            .train
            .iter()
            .map(|d| model.instance(d, &corpus.ontology).unwrap())
            .collect();
        (model, inst)
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let (mut model, inst) = setup(4);
            let mut log = Vec::new();
            let s = train(&mut model, &inst, &cfg, 4, &mut log, |_, _| Ok(Control::Continue)).unwrap();
            (log, to_bytes(&model).unwrap(), s)
        };
        let (log_a, ck_a, s) = run();
        let (log_b, ck_b, _) = run();
        assert_eq!(log_a, log_b);
        assert_eq!(ck_a, ck_b);
        assert_eq!(s.epochs_run, 5);
        assert_eq!(s.records.len(), 10);
        let text = String::from_utf8(log_a).unwrap();
        assert!(text.starts_with(LOG_HEADER));
        assert_eq!(text.lines().count(), 11);
        let first: f64 = s.records[..2].iter().map(|r| r.loss).sum();
        let last: f64 = s.records[8..].iter().map(|r| r.loss).sum();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn callback_can_stop_early() {
        let (mut model, inst) = setup(2);
        let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
        let s = train(&mut model, &inst, &cfg, 2, &mut std::io::sink(), |e, _| {
            Ok(if e == 2 { Control::Stop } else { Control::Continue })
        })
        .unwrap();
        assert_eq!(s.epochs_run, 2);
    }

    #[test]
    fn batch_gradient_is_mean_of_instance_gradients() {
        let (model, inst) = setup(3);
        let batch: Vec<&Instance> = inst.iter().take(3).collect();
        let (loss, grads) = batch_gradient(&model, &batch).unwrap();
        let each: Vec<_> = batch.iter().map(|i| model.loss_and_gradients(i).unwrap()).collect();
        let mean_loss = each.iter().map(|e| e.0).sum::<f64>() / 3.0;
        assert!((loss - mean_loss).abs() < 1e-12);
        let (id, g) = &grads[model.net.output.0];
        for k in 0..g.len() {
            let m = each
                .iter()
                .map(|e| e.1.iter().find(|(i, _)| i == id).unwrap().1[k])
                .sum::<f64>()
                / 3.0;
            assert!((g[k] - m).abs() < 1e-12);
        }
    }
}
