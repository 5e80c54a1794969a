use std::path::Path;

use serde::Serialize;

use super::config::{load_examples, read_input, sha256_hex, DatasetHash, RunConfig, Split};
use super::heatmap;
use super::manifest::RunManifest;
use super::{CommonArgs, EvalArgs, ParamsArgs, PredictArgs, Preset, SweepArgs, TagArgs, TraceArgs, TrainArgs};
use crate::data::{split_words, Vocab};
use crate::encoder::{parameter_breakdown, Checkpoint, ModelParams};
use crate::error::{Error, Result};
use crate::heads::write_predictions;
use crate::integration::Strategy;
use crate::model;
use crate::pos::{format_pretagged, tag_words, TaggedWord};
use crate::training::{
    ablation_sweep_with, evaluate, full_factorial, predictions, train as train_model, Experiment, Prepared,
};

/// Defaults, then the config file, then flags.
fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.model.seed = s;
        cfg.train.seed = s;
    }
    if let Some(t) = common.turns {
        cfg.model.max_turns = t;
    }
    if let Some(s) = common.strategy {
        cfg.model.strategy = s;
    }
    if let Some(p) = common.pos_embedding {
        cfg.model.pos_embedding = p.enabled();
    }
    if let Some(r) = common.corrupt_rate {
        cfg.data.corrupt_rate = r;
    }
    if let Some(t) = common.task {
        cfg.data.task = t;
    }
    if let Some(d) = &common.data {
        cfg.data.data = Some(d.clone());
    }
    if let Some(s) = common.data_seed {
        cfg.data.data_seed = s;
    }
    if let Some(p) = common.pos_dependency {
        cfg.data.pos_dependency = p.enabled();
    }
    if let Some(k) = common.facts {
        cfg.data.facts = k;
    }
    Ok(cfg)
}

/// Validates, prints and stores the final config.
fn announce(cfg: &RunConfig, out_dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let text = serde_json::to_string_pretty(cfg)?;
    println!("{text}");
    manifest.config = cfg.clone();
    manifest.seed = cfg.model.seed;
    manifest.write(out_dir, "config.json", &text)?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Config(format!("file not found: {}", path.display())));
    }
    Checkpoint::load(path)
}

/// Model from a checkpoint with explicit co-attention flags applied. POS
/// embedding cannot change after training.
fn checkpoint_model(path: &Path, common: &CommonArgs, cfg: &mut RunConfig) -> Result<(ModelParams, Vocab)> {
    let (params, vocab) = load_checkpoint(path)?.into_params(None)?;
    if let Some(p) = common.pos_embedding {
        if p.enabled() != params.config().pos_embedding {
            return Err(Error::Checkpoint(format!(
                "checkpoint has pos_embedding = {}, flag asks for {}",
                params.config().pos_embedding,
                p.enabled()
            )));
        }
    }
    let turns = common.turns.unwrap_or(params.config().max_turns);
    let strategy = common.strategy.unwrap_or(params.config().strategy);
    let params = params.with_coattention(turns, strategy);
    cfg.model = params.config().clone();
    Ok((params, vocab))
}

fn prepared_dev(cfg: &RunConfig, vocab: &Vocab, manifest: &mut RunManifest) -> Result<Prepared> {
    let (examples, hash) = load_examples(&cfg.data, Split::Dev)?;
    manifest.datasets.push(hash);
    let data = examples.prepare(vocab, &cfg.assemble())?;
    if cfg.data.corrupt_rate > 0.0 {
        data.with_corrupted_tags(cfg.data.corrupt_rate, cfg.model.seed)
    } else {
        Ok(data)
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if let Some(d) = &args.dev {
        cfg.data.dev = Some(d.clone());
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(n) = args.train_size {
        cfg.data.train_size = n;
    }
    if let Some(n) = args.dev_size {
        cfg.data.dev_size = n;
    }
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("train", &cfg);
    let (examples, hash) = manifest.time("load", || load_examples(&cfg.data, Split::Train))?;
    manifest.datasets.push(hash);
    let vocab = examples.vocab();
    cfg.model.vocab_size = vocab.len();
    announce(&cfg, out, &mut manifest)?;

    let data = examples.prepare(&vocab, &cfg.assemble())?;
    let mut params = ModelParams::init(&cfg.model)?;
    let report = manifest.time("train", || train_model(&mut params, &data, &cfg.train))?;
    eprintln!(
        "trained {} steps, final epoch loss {:.6}",
        report.steps,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let ckpt = out.join("checkpoint.json");
    Checkpoint::new(&params, &vocab).save(&ckpt)?;
    manifest.artifacts.push(ckpt);
    manifest.write(out, "train_report.json", &serde_json::to_string_pretty(&report)?)?;

    if cfg.data.task.is_synthetic() || cfg.data.dev.is_some() {
        let dev = prepared_dev(&cfg, &vocab, &mut manifest)?;
        let eval = manifest.time("dev_eval", || evaluate(&params, &dev, None))?;
        eprintln!("dev {:?}: headline {:.4}", eval.task, eval.headline());
        manifest.write(out, "dev_report.json", &eval.to_json()?)?;
    }
    manifest.save(out)?;
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if args.common.data.is_some() {
        cfg.data.dev = None;
    }
    if let Some(n) = args.dev_size {
        cfg.data.dev_size = n;
    }
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("eval", &cfg);
    let (params, vocab) = checkpoint_model(&args.checkpoint, &args.common, &mut cfg)?;
    manifest.checkpoint = Some(args.checkpoint.clone());
    announce(&cfg, out, &mut manifest)?;
    let data = prepared_dev(&cfg, &vocab, &mut manifest)?;
    let report = manifest.time("eval", || evaluate(&params, &data, args.delta))?;
    println!("{}", report_summary(&report));
    manifest.write(out, "eval_report.json", &report.to_json()?)?;
    manifest.write(out, "eval_report.tsv", &report.to_tsv())?;
    manifest.save(out)?;
    Ok(())
}

fn report_summary(report: &crate::training::EvalReport) -> String {
    let mut s = format!("task={:?} count={} accuracy={:.6}", report.task, report.count, report.accuracy);
    if let (Some(em), Some(f1)) = (report.em, report.f1) {
        s.push_str(&format!(" em={em:.6} f1={f1:.6}"));
    }
    if let Some(d) = report.delta {
        s.push_str(&format!(" delta={d:.6}"));
    }
    s
}

#[derive(Serialize)]
struct ChoicePrediction<'a> {
    id: &'a str,
    option: usize,
    probabilities: Vec<f64>,
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if args.common.data.is_some() {
        cfg.data.dev = None;
    }
    if let Some(n) = args.dev_size {
        cfg.data.dev_size = n;
    }
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("predict", &cfg);
    let (params, vocab) = checkpoint_model(&args.checkpoint, &args.common, &mut cfg)?;
    manifest.checkpoint = Some(args.checkpoint.clone());
    announce(&cfg, out, &mut manifest)?;
    let data = prepared_dev(&cfg, &vocab, &mut manifest)?;
    let lines = manifest.time("predict", || match &data {
        Prepared::Extractive(items) => {
            let delta = match args.delta {
                Some(d) => d,
                None => evaluate(&params, &data, None)?.delta.unwrap_or(0.0),
            };
            write_predictions(&predictions(&params, items, delta)?)
        }
        Prepared::Choice(items) => {
            let mut out = String::new();
            for item in items {
                let p = model::predict_choice(&params, &item.inputs)?;
                let option = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
                out.push_str(&serde_json::to_string(&ChoicePrediction {
                    id: &item.example.id,
                    option,
                    probabilities: p,
                })?);
                out.push('\n');
            }
            Ok(out)
        }
    })?;
    manifest.write(out, "predictions.jsonl", &lines)?;
    eprintln!("wrote {} predictions", data.len());
    manifest.save(out)?;
    Ok(())
}

pub fn tag(args: TagArgs) -> Result<()> {
    let cfg = resolve(&args.common)?;
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("tag", &cfg);
    let path = args
        .common
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("tag needs --data <text file>".into()))?;
    let text = read_input(path)?;
    announce(&cfg, out, &mut manifest)?;
    let sequences: Vec<Vec<TaggedWord>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let words: Vec<String> = split_words(line).into_iter().map(|w| w.text).collect();
            let tags = tag_words(&words);
            words
                .into_iter()
                .zip(tags)
                .map(|(surface, tag)| TaggedWord { surface, tag })
                .collect()
        })
        .collect();
    manifest.datasets.push(DatasetHash {
        role: "input".into(),
        source: path.display().to_string(),
        sha256: sha256_hex(text.as_bytes()),
    });
    manifest.write(out, "tagged.tsv", &format_pretagged(&sequences))?;
    eprintln!("tagged {} sequences", sequences.len());
    manifest.save(out)?;
    Ok(())
}

pub fn params(args: ParamsArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("params", &cfg);
    match args.vocab_size {
        Some(v) => cfg.model.vocab_size = v,
        // Without an explicit size, account for the task's training vocabulary.
        None if cfg.model.vocab_size == 0 => {
            let (examples, hash) = load_examples(&cfg.data, Split::Train)?;
            manifest.datasets.push(hash);
            cfg.model.vocab_size = examples.vocab().len();
        }
        None => {}
    }
    announce(&cfg, out, &mut manifest)?;
    let b = parameter_breakdown(&ModelParams::init(&cfg.model)?);
    let table = format!(
        "component\tparameters\nembedding\t{}\npos_embedding\t{}\nencoder\t{}\nco_attention\t{}\nheads\t{}\ntotal\t{}\n",
        b.embedding, b.pos_embedding, b.encoder, b.co_attention, b.heads, b.total
    );
    print!("{table}");
    manifest.write(out, "params.tsv", &table)?;
    manifest.write(out, "params.json", &serde_json::to_string_pretty(&b)?)?;
    manifest.save(out)?;
    Ok(())
}

pub fn trace(args: TraceArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if args.common.data.is_some() {
        cfg.data.dev = None;
    }
    if let Some(n) = args.dev_size {
        cfg.data.dev_size = n;
    }
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("trace", &cfg);
    let (params, vocab) = match &args.checkpoint {
        Some(path) => {
            manifest.checkpoint = Some(path.clone());
            checkpoint_model(path, &args.common, &mut cfg)?
        }
        None => {
            let (examples, hash) = load_examples(&cfg.data, Split::Train)?;
            manifest.datasets.push(hash);
            let vocab = examples.vocab();
            cfg.model.vocab_size = vocab.len();
            cfg.validate()?;
            (ModelParams::init(&cfg.model)?, vocab)
        }
    };
    announce(&cfg, out, &mut manifest)?;
    let data = prepared_dev(&cfg, &vocab, &mut manifest)?;
    if args.index >= data.len() {
        return Err(Error::Config(format!("index {} outside 0..{}", args.index, data.len())));
    }
    let input = match &data {
        Prepared::Extractive(items) => &items[args.index].input,
        Prepared::Choice(items) => items[args.index]
            .inputs
            .get(args.option)
            .ok_or_else(|| Error::Config(format!("option {} does not exist", args.option)))?,
    };
    let (_, trace) = model::representation(&params, input)?;
    let tokens: Vec<String> = input
        .token_ids
        .iter()
        .map(|&id| vocab.token(id).unwrap_or("?").to_string())
        .collect();
    let map = heatmap::render(&trace, &tokens);
    print!("{map}");
    manifest.write(out, "trace.json", &trace.to_json()?)?;
    manifest.write(out, "heatmap.txt", &map)?;
    manifest.save(out)?;
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(n) = args.train_size {
        cfg.data.train_size = n;
    }
    if let Some(n) = args.dev_size {
        cfg.data.dev_size = n;
    }
    let out = &args.common.out_dir;
    let mut manifest = RunManifest::new("sweep", &cfg);
    let (train_ex, hash) = load_examples(&cfg.data, Split::Train)?;
    manifest.datasets.push(hash);
    let (dev_ex, hash) = load_examples(&cfg.data, Split::Dev)?;
    manifest.datasets.push(hash);
    let vocab = train_ex.vocab();
    cfg.model.vocab_size = vocab.len();
    announce(&cfg, out, &mut manifest)?;

    let m = &cfg.model;
    let (mut pos, mut turns, mut strategies, mut corruption) = match args.preset {
        Preset::Pos => (vec![true, false], vec![m.max_turns], vec![m.strategy], vec![0.0]),
        Preset::Turns => (vec![m.pos_embedding], (0..=4).collect(), Strategy::ALL.to_vec(), vec![0.0]),
        Preset::Corruption => (vec![true], vec![m.max_turns], vec![m.strategy], vec![0.0, 0.05, 0.10, 0.20]),
        Preset::Full => (
            vec![true, false],
            (0..=4).collect(),
            Strategy::ALL.to_vec(),
            vec![0.0, 0.05, 0.10, 0.20],
        ),
    };
    if let Some(v) = &args.pos_axis {
        pos = v.iter().map(|s| s.enabled()).collect();
    }
    if let Some(v) = &args.turns_axis {
        turns = v.clone();
    }
    if let Some(v) = &args.strategy_axis {
        strategies = v.clone();
    }
    if let Some(v) = &args.corruption_axis {
        corruption = v.clone();
    }
    let cells = full_factorial(&pos, &turns, &strategies, &corruption);
    if cells.is_empty() {
        return Err(Error::Config("sweep has no cells".into()));
    }

    let assemble = cfg.assemble();
    let exp = Experiment::new(
        cfg.model.clone(),
        cfg.train.clone(),
        vocab.clone(),
        train_ex.prepare(&vocab, &assemble)?,
        dev_ex.prepare(&vocab, &assemble)?,
    )?;
    let table = manifest.time("sweep", || {
        ablation_sweep_with(&exp, &cells, &args.seeds, |cell, value| {
            eprintln!(
                "pos={} turns={} strategy={} corruption={:.2} -> {value:.4}",
                cell.pos_embedding, cell.turns, cell.strategy, cell.corruption
            );
        })
    })?;
    print!("{}", table.to_tsv());
    manifest.write(out, "sweep.json", &table.to_json()?)?;
    manifest.write(out, "sweep.tsv", &table.to_tsv())?;
    manifest.save(out)?;
    Ok(())
}
