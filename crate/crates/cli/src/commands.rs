use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use gam_core::checkpoint::{load_checkpoint, save_checkpoint};
use gam_core::corpus::{load_corpus, save_corpus, Corpus, Document, Split};
use gam_core::evaluation::evaluate;
use gam_core::experiment::{predict_documents, run_ablation, run_sweep, train_on_corpus, ResultTable};
use gam_core::extraction::DocumentPredictions;
use gam_core::graph::{build_graph, GraphRecord, GraphStats};
use gam_core::synth::generate_synthetic_corpus;
use gam_core::{GamError, Result};
use serde::Serialize;

use crate::args::{AblateArgs, EvalArgs, GraphArgs, PredictArgs, SweepArgs, SynthArgs, TrainArgs};
use crate::config::RunConfig;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GamError + '_ {
    move |e| GamError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Validates the config, creates the output directory and records the config there.
fn prepare(cfg: &mut RunConfig) -> Result<std::path::PathBuf> {
    cfg.validate()?;
    let dir = cfg.resolve_output()?;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(dir)
}

fn load(cfg: &RunConfig) -> Result<Corpus> {
    load_corpus(cfg.require_corpus()?)
}

fn split_docs(corpus: &Corpus, split: Split) -> &[Document] {
    corpus.split(split)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = RunConfig::load("synth", &a.common)?;
    let s = &mut cfg.synth;
    if let Some(v) = a.dev_docs {
        s.dev_docs = v;
    }
    if let Some(v) = a.test_docs {
        s.test_docs = v;
    }
    if let Some(v) = a.alias_rate {
        s.alias_rate = v;
    }
    if let Some(v) = a.fill_rate {
        s.fill_rate = v;
    }
    if let Some(v) = a.event_types {
        s.event_types = v;
    }
    if let Some(v) = a.name_pool {
        s.name_pool = v;
    }
    if let Some(v) = a.docs {
        cfg.synth_docs = v;
    }
    let dir = prepare(&mut cfg)?;
    let corpus = generate_synthetic_corpus(cfg.experiment.seed, cfg.synth_docs, &cfg.synth);
    save_corpus(&corpus, &dir)?;
    println!(
        "wrote {} train / {} dev / {} test documents to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        dir.display()
    );
    Ok(())
}

pub fn build_graph_cmd(a: GraphArgs) -> Result<()> {
    let mut cfg = RunConfig::load("build-graph", &a.common)?;
    cfg.apply_corpus(&a.corpus)?;
    cfg.apply_graph(&a.graph);
    let corpus = load(&cfg)?;
    let dir = prepare(&mut cfg)?;
    let opts = cfg.graph_options();
    let split = cfg.split.unwrap_or(Split::Train);
    let path = dir.join("graphs.jsonl");
    let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let mut graphs = Vec::new();
    for doc in split_docs(&corpus, split) {
        let g = build_graph(doc, &corpus.ontology, &opts)?;
        serde_json::to_writer(&mut out, &GraphRecord::new(&doc.doc_id, &g))?;
        out.write_all(b"\n").map_err(io_err(&path))?;
        graphs.push(g);
    }
    out.flush().map_err(io_err(&path))?;
    let stats = GraphStats::from_graphs(&graphs);
    write_json(&dir.join("stats.json"), &stats)?;
    println!(
        "{} graphs, mean nodes {:.2}, mean degree ex {:.2} ref {:.2} typ {:.2}",
        stats.documents, stats.mean_nodes, stats.mean_degree_ex, stats.mean_degree_ref, stats.mean_degree_typ
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load("train", &a.common)?;
    cfg.apply_corpus(&a.corpus)?;
    cfg.apply_model(&a.model)?;
    let corpus = load(&cfg)?;
    let dir = prepare(&mut cfg)?;
    let experiment = cfg.effective_experiment();
    let log_path = dir.join("loss.tsv");
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let trained = train_on_corpus(&corpus, &experiment, &mut log)?;
    log.flush().map_err(io_err(&log_path))?;
    save_checkpoint(&trained.model, &dir.join("model.ckpt"))?;
    if let Some(report) = &trained.last_check {
        write_json(&dir.join("train_report.json"), report)?;
    }
    let last = trained.summary.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} epochs, final batch loss {last:.4}, checkpoint {}",
        trained.summary.epochs_run,
        dir.join("model.ckpt").display()
    );
    Ok(())
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let mut cfg = RunConfig::load("predict", &a.common)?;
    cfg.apply_corpus(&a.corpus)?;
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if let Some(m) = a.max_gen_len {
        cfg.experiment.max_gen_len = m;
    }
    let ckpt = cfg
        .checkpoint
        .clone()
        .ok_or_else(|| GamError::Config("predict: --checkpoint is required".into()))?;
    let corpus = load(&cfg)?;
    let dir = prepare(&mut cfg)?;
    let model = load_checkpoint(&ckpt)?;
    let split = cfg.split.unwrap_or(Split::Test);
    let docs = split_docs(&corpus, split);
    let (preds, diags) = predict_documents(&model, docs, &corpus.ontology, cfg.experiment.max_gen_len)?;
    let path = dir.join("predictions.jsonl");
    let mut text = String::new();
    for p in &preds {
        text.push_str(&serde_json::to_string(p)?);
        text.push('\n');
    }
    write_text(&path, &text)?;
    let mut diag_text = diags.join("\n");
    if !diag_text.is_empty() {
        diag_text.push('\n');
    }
    write_text(&dir.join("diagnostics.txt"), &diag_text)?;
    let n: usize = preds.iter().map(|p| p.predictions.len()).sum();
    println!("{} documents, {n} predicted arguments, {} diagnostics", preds.len(), diags.len());
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<DocumentPredictions>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| GamError::Parse {
            location: format!("{}:{}", path.display(), i + 1),
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::load("eval", &a.common)?;
    cfg.apply_corpus(&a.corpus)?;
    cfg.apply_score(&a.score)?;
    if a.predictions.is_some() {
        cfg.predictions = a.predictions.clone();
    }
    let pred_path = cfg
        .predictions
        .clone()
        .ok_or_else(|| GamError::Config("eval: --predictions is required".into()))?;
    let corpus = load(&cfg)?;
    let preds = read_predictions(&pred_path)?;
    let dir = prepare(&mut cfg)?;
    let split = cfg.split.unwrap_or(Split::Test);
    let report = evaluate(&preds, split_docs(&corpus, split), &corpus.ontology, &cfg.experiment.score)?;
    let text = report.to_text();
    write_text(&dir.join("report.txt"), &text)?;
    write_json(&dir.join("report.json"), &report)?;
    print!("{text}");
    Ok(())
}

fn write_table(dir: &Path, stem: &str, table: &ResultTable) -> Result<()> {
    let text = table.to_text();
    write_text(&dir.join(format!("{stem}.txt")), &text)?;
    write_json(&dir.join(format!("{stem}.json")), table)?;
    print!("{text}");
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = RunConfig::load("ablate", &a.common)?;
    cfg.apply_corpus(&a.corpus)?;
    cfg.apply_model(&a.model)?;
    cfg.apply_score(&a.score)?;
    if let Some(vs) = &a.variants {
        cfg.variants = vs.iter().map(|v| v.parse()).collect::<Result<_>>()?;
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    let corpus = load(&cfg)?;
    let dir = prepare(&mut cfg)?;
    let table = run_ablation(&corpus, &cfg.effective_experiment(), &cfg.variants, &cfg.seeds)?;
    write_table(&dir, "ablation", &table)
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load("sweep", &a.common)?;
    cfg.apply_corpus(&a.corpus)?;
    cfg.apply_model(&a.model)?;
    cfg.apply_score(&a.score)?;
    if let Some(p) = &a.param {
        cfg.sweep_param = p.parse()?;
    }
    if let Some(v) = &a.values {
        cfg.sweep_values = v.clone();
    }
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    } else if a.common.config.is_none() {
        cfg.seeds = vec![cfg.experiment.seed];
    }
    let corpus = load(&cfg)?;
    let dir = prepare(&mut cfg)?;
    let table = run_sweep(
        &corpus,
        &cfg.effective_experiment(),
        cfg.sweep_param,
        &cfg.sweep_values,
        &cfg.seeds,
    )?;
    write_table(&dir, "sweep", &table)
}
