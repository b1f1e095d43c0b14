mod config;
mod http;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use wakeline::classes::{ActivityClass, EntityClass};
use wakeline::features::FeatureConfig;
use wakeline::ingest::{format_json_record, format_record, normalize_message, parse_line, LineFormat, NormalizeConfig};
use wakeline::model::{Checkpoint, ModelConfig};
use wakeline::serve::{detect_format, run_lines, run_stream};
use wakeline::synth::{generate_dataset_with, write_tracks_csv, DatasetConfig};
use wakeline::training::{
    evaluate, examples_from_windows, read_labeled_jsonl, train_and_select, write_labeled_jsonl, write_log_csv,
    TrainConfig,
};

use crate::config::ServiceConfig;

#[derive(Parser)]
#[command(name = "wakeline", version, about = "AIS vessel-behaviour classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for LineFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => LineFormat::Csv,
            Format::Jsonl => LineFormat::Jsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Activity,
    Entity,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Full,
}

#[derive(clap::Args)]
struct ServiceArgs {
    /// TOML service configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration value, e.g. `--set engine.cpd.sog_window_k=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    activity_checkpoint: Option<PathBuf>,
    #[arg(long)]
    entity_checkpoint: Option<PathBuf>,
    #[arg(long)]
    geofences: Option<PathBuf>,
    /// Where to write dead-letter records (default stderr).
    #[arg(long)]
    dead_letters: Option<PathBuf>,
}

impl ServiceArgs {
    fn load(&self) -> Result<ServiceConfig> {
        let mut cfg = ServiceConfig::load(self.config.as_deref(), &self.overrides)?;
        if let Some(p) = &self.activity_checkpoint {
            cfg.activity_checkpoint = Some(p.clone());
        }
        if let Some(p) = &self.entity_checkpoint {
            cfg.entity_checkpoint = Some(p.clone());
        }
        if let Some(p) = &self.geofences {
            cfg.geofences = Some(p.clone());
        }
        Ok(cfg)
    }

    fn dead_letter_sink(&self) -> Result<Box<dyn Write + Send>> {
        Ok(match &self.dead_letters {
            Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
            None => Box::new(io::stderr()),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate position reports and convert between CSV and JSON lines.
    Ingest {
        #[arg(default_value = "-")]
        input: PathBuf,
        #[arg(long, default_value = "-")]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        to: Format,
        /// Input format; detected per line when omitted.
        #[arg(long, value_enum)]
        from: Option<Format>,
        /// Fold courses and clamp sentinel speeds.
        #[arg(long)]
        normalize: bool,
        /// Exit with an error if any line is rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Generate a labelled synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DatasetConfig::default().track_duration_s)]
        duration_s: i64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train an activity or entity model.
    Train {
        #[arg(value_enum)]
        task: Task,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch loss log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "toy")]
        preset: Preset,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Newest messages of each window used for training.
        #[arg(long, default_value_t = 2048)]
        max_len: usize,
        #[arg(long, default_value_t = FeatureConfig::default().n_anchor)]
        n_anchor: usize,
        /// Comma-separated class weights; inverse frequency when omitted.
        #[arg(long, value_delimiter = ',')]
        class_weights: Option<Vec<f64>>,
    },
    /// Report a confusion matrix for a checkpoint on a labelled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 2048)]
        max_len: usize,
        #[arg(long)]
        json: bool,
    },
    /// Run a file of position reports through the pipeline and write events.
    Infer {
        #[command(flatten)]
        service: ServiceArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "-")]
        output: PathBuf,
    },
    /// Stream reports from stdin or TCP and emit events on stdout.
    Serve {
        #[command(flatten)]
        service: ServiceArgs,
        /// Accept line streams on this TCP address instead of stdin.
        #[arg(long)]
        listen: Option<String>,
        /// Stop after the first TCP connection closes.
        #[arg(long)]
        once: bool,
        /// Serve the metrics snapshot as JSON over HTTP on this address.
        #[arg(long)]
        metrics_addr: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        queue_depth: Option<usize>,
    },
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    Ok(if path == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
    })
}

fn open_output(path: &Path) -> Result<Box<dyn Write + Send>> {
    Ok(if path == Path::new("-") {
        Box::new(io::stdout())
    } else {
        Box::new(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
    })
}

fn ingest(input: &Path, output: &Path, to: Format, from: Option<Format>, normalize: bool, strict: bool) -> Result<()> {
    let mut out = open_output(output)?;
    let ncfg = NormalizeConfig::default();
    let (mut lines, mut valid, mut rejected, mut clamped) = (0u64, 0u64, 0u64, 0u64);
    for (i, line) in open_input(input)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let format = from.map_or_else(|| detect_format(&line), LineFormat::from);
        match parse_line(&line, format) {
            Ok(mut m) => {
                if normalize {
                    let n = normalize_message(&m, &ncfg);
                    clamped += u64::from(n.sog_clamped);
                    m = n.message;
                }
                valid += 1;
                match to {
                    Format::Csv => writeln!(out, "{}", format_record(&m))?,
                    Format::Jsonl => writeln!(out, "{}", format_json_record(&m))?,
                }
            }
            Err(e) => {
                rejected += 1;
                eprintln!("{}", json!({"line_number": i + 1, "field": e.field().name(), "error": e.to_string(), "line": line}));
            }
        }
    }
    out.flush()?;
    eprintln!("{}", json!({"lines": lines, "valid": valid, "rejected": rejected, "sog_clamped": clamped}));
    if strict && rejected > 0 {
        bail!("{rejected} of {lines} lines rejected");
    }
    Ok(())
}

fn synth(n_per_class: usize, seed: u64, duration_s: i64, out_dir: &Path) -> Result<()> {
    let data = generate_dataset_with(&DatasetConfig { n_per_class, seed, track_duration_s: duration_s })?;
    std::fs::create_dir_all(out_dir)?;
    let create = |name: &str| -> Result<BufWriter<File>> {
        let p = out_dir.join(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    };
    write_labeled_jsonl(create("activity.jsonl")?, &data.activity_windows())?;
    write_labeled_jsonl(create("entity.jsonl")?, &data.entity_windows())?;
    // one replayable stream ordered by time across all tracks
    let mut msgs: Vec<_> = data.tracks().flat_map(|t| t.track.messages.iter()).collect();
    msgs.sort_by(|a, b| (a.timestamp, &a.entity_id).cmp(&(b.timestamp, &b.entity_id)));
    let mut w = create("stream.csv")?;
    for m in msgs {
        writeln!(w, "{}", format_record(m))?;
    }
    w.flush()?;
    write_tracks_csv(create("tracks.csv")?, data.tracks())?;
    eprintln!(
        "{}",
        json!({"activity_tracks": data.activity.len(), "buoy_tracks": data.buoys.len(), "out_dir": out_dir})
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    task: Task,
    data: &Path,
    out: &Path,
    log: Option<&Path>,
    preset: Preset,
    tcfg: TrainConfig,
    max_len: usize,
    n_anchor: usize,
) -> Result<()> {
    let windows = read_labeled_jsonl(open_input(data)?)?;
    let features = FeatureConfig { n_anchor, ..FeatureConfig::default() };
    features.validate()?;
    let w = features.width();
    let (classes, model) = match (task, preset) {
        (Task::Activity, Preset::Toy) => (ActivityClass::names(), ModelConfig::toy_activity(w)),
        (Task::Activity, Preset::Full) => (ActivityClass::names(), ModelConfig::full_activity(w)),
        (Task::Entity, Preset::Toy) => (EntityClass::names(), ModelConfig::toy_entity(w)),
        (Task::Entity, Preset::Full) => (EntityClass::names(), ModelConfig::full_entity(w)),
    };
    let examples = examples_from_windows(&windows, &classes, &features, max_len.min(model.max_seq_len))?;
    let outcome = train_and_select(&examples, &model, &tcfg, |e| {
        eprintln!("{}", json!({"epoch": e.epoch, "train_loss": e.train_loss, "val_loss": e.val_loss}));
    })?;
    if let Some(p) = log {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_log_csv(BufWriter::new(f), &outcome.log)?;
    }
    Checkpoint::new(model, features, classes, outcome.weights)?.save(out)?;
    eprintln!(
        "{}",
        json!({"best_epoch": outcome.best_epoch, "class_weights": outcome.class_weights, "checkpoint": out})
    );
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, max_len: usize, as_json: bool) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let windows = read_labeled_jsonl(open_input(data)?)?;
    let len = max_len.min(ckpt.model.max_seq_len);
    let examples = examples_from_windows(&windows, &ckpt.classes, &ckpt.features, len)?;
    let ev = evaluate(&ckpt.model, &ckpt.weights, &examples)?;
    if as_json {
        println!("{}", json!({"classes": ckpt.classes, "evaluation": ev}));
        return Ok(());
    }
    let width = ckpt.classes.iter().map(String::len).max().unwrap_or(5).max(7);
    print!("{:>width$}", "truth");
    for c in &ckpt.classes {
        print!(" {c:>width$}");
    }
    println!(" {:>width$}", "recall");
    for (i, row) in ev.confusion.counts.iter().enumerate() {
        print!("{:>width$}", ckpt.classes[i]);
        for v in row {
            print!(" {v:>width$}");
        }
        match ev.recall[i] {
            Some(r) => println!(" {r:>width$.4}"),
            None => println!(" {:>width$}", "-"),
        }
    }
    println!("accuracy {:.4} over {} examples", ev.accuracy, ev.confusion.total());
    Ok(())
}

fn infer(service: &ServiceArgs, input: &Path, output: &Path) -> Result<()> {
    let cfg = service.load()?;
    let mut engine = cfg.build_engines()?.into_iter().next().expect("one worker");
    let mut out = open_output(output)?;
    let mut dead = service.dead_letter_sink()?;
    let mut events = 0u64;
    for line in open_input(input)?.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let format = cfg.serve.format.unwrap_or_else(|| detect_format(&line));
        match engine.on_line(&line, format) {
            Ok(Some(e)) => {
                serde_json::to_writer(&mut out, &e)?;
                out.write_all(b"\n")?;
                events += 1;
            }
            Ok(None) => {}
            Err(d) => {
                serde_json::to_writer(&mut dead, &d)?;
                dead.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    dead.flush()?;
    eprintln!("{}", json!({"events": events, "metrics": engine.metrics_snapshot()}));
    Ok(())
}

fn serve(
    service: &ServiceArgs,
    listen: Option<String>,
    once: bool,
    metrics_addr: Option<String>,
    workers: Option<usize>,
    queue_depth: Option<usize>,
) -> Result<()> {
    let mut cfg = service.load()?;
    if let Some(w) = workers {
        if w == 0 {
            bail!("workers must be at least 1");
        }
        cfg.workers = w;
    }
    if let Some(d) = queue_depth {
        cfg.serve.queue_depth = d;
    }
    cfg.listen = listen.or(cfg.listen);
    cfg.metrics_addr = metrics_addr.or(cfg.metrics_addr);

    let engines = cfg.build_engines()?;
    let metrics = engines[0].metrics().clone();
    if let Some(addr) = &cfg.metrics_addr {
        let bound = http::spawn_metrics_server(addr, metrics.clone()).with_context(|| format!("binding {addr}"))?;
        eprintln!("{}", json!({"metrics_addr": bound.to_string()}));
    }
    let dead = service.dead_letter_sink()?;
    let stdout = io::stdout();

    let summary = match &cfg.listen {
        None => run_stream(io::stdin().lock(), stdout, dead, engines, &cfg.serve)?.0,
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("{}", json!({"listen_addr": listener.local_addr()?.to_string()}));
            let (tx, rx) = sync_channel::<io::Result<String>>(cfg.serve.queue_depth.max(1));
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let tx = tx.clone();
                    let reader = std::thread::spawn(move || {
                        for line in BufReader::new(stream).lines() {
                            if tx.send(line).is_err() {
                                break;
                            }
                        }
                    });
                    if once {
                        let _ = reader.join();
                        break;
                    }
                }
            });
            run_lines(rx, stdout, dead, engines, &cfg.serve)?.0
        }
    };
    eprintln!("{}", json!({"summary": summary, "metrics": metrics.snapshot()}));
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest { input, output, to, from, normalize, strict } => ingest(&input, &output, to, from, normalize, strict),
        Command::Synth { n_per_class, seed, duration_s, out_dir } => synth(n_per_class, seed, duration_s, &out_dir),
        Command::Train { task, data, out, log, preset, epochs, lr, batch_size, seed, max_len, n_anchor, class_weights } => {
            let base = match preset {
                Preset::Toy => TrainConfig::toy(),
                Preset::Full => TrainConfig::full(),
            };
            let tcfg = TrainConfig {
                n_epochs: epochs.unwrap_or(base.n_epochs),
                learning_rate: lr.unwrap_or(base.learning_rate),
                batch_size: batch_size.unwrap_or(base.batch_size),
                seed,
                class_weights,
                ..base
            };
            train(task, &data, &out, log.as_deref(), preset, tcfg, max_len, n_anchor)
        }
        Command::Eval { checkpoint, data, max_len, json } => eval(&checkpoint, &data, max_len, json),
        Command::Infer { service, input, output } => infer(&service, &input, &output),
        Command::Serve { service, listen, once, metrics_addr, workers, queue_depth } => {
            serve(&service, listen, once, metrics_addr, workers, queue_depth)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
