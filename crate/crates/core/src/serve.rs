//! Line-oriented streaming front end.
//!
//! A reader parses lines and routes each message to a worker chosen by
//! entity hash, so one entity always lands on the same worker and keeps its
//! order. Queues are bounded: when a worker falls behind, reading blocks.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{DeadLetter, Engine, Stage};
use crate::ingest::{parse_line, AisMessage, LineFormat};
use crate::postprocess::ClassificationEvent;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    /// In-flight messages per worker before reading blocks.
    pub queue_depth: usize,
    /// Input format; `None` picks JSON for lines starting with `{`, CSV otherwise.
    pub format: Option<LineFormat>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self { queue_depth: 1024, format: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ServeSummary {
    pub lines: u64,
    pub events: u64,
    pub dead_letters: u64,
    pub elapsed_s: f64,
}

enum Output {
    Event(ClassificationEvent),
    Dead(DeadLetter),
}

pub fn detect_format(line: &str) -> LineFormat {
    if line.trim_start().starts_with('{') {
        LineFormat::Jsonl
    } else {
        LineFormat::Csv
    }
}

fn shard_of(entity_id: &str, n: usize) -> usize {
    let mut h = DefaultHasher::new();
    entity_id.hash(&mut h);
    (h.finish() % n as u64) as usize
}

fn worker(mut engine: Engine, rx: Receiver<AisMessage>, out: SyncSender<Output>) -> Engine {
    for msg in rx {
        let item = match engine.on_message(msg) {
            Ok(Some(e)) => Output::Event(e),
            Ok(None) => continue,
            Err(d) => Output::Dead(d),
        };
        if out.send(item).is_err() {
            break;
        }
    }
    engine
}

/// Stream `input` through `engines` (one per worker), writing events and
/// dead letters as JSON lines. Returns the engines for inspection.
pub fn run_stream<R, E, D>(
    input: R,
    events: E,
    dead_letters: D,
    engines: Vec<Engine>,
    cfg: &ServeConfig,
) -> std::io::Result<(ServeSummary, Vec<Engine>)>
where
    R: BufRead,
    E: Write + Send,
    D: Write + Send,
{
    run_lines(input.lines(), events, dead_letters, engines, cfg)
}

/// [`run_stream`] over any source of lines, e.g. lines gathered from sockets.
pub fn run_lines<L, E, D>(
    lines: L,
    events: E,
    dead_letters: D,
    engines: Vec<Engine>,
    cfg: &ServeConfig,
) -> std::io::Result<(ServeSummary, Vec<Engine>)>
where
    L: IntoIterator<Item = std::io::Result<String>>,
    E: Write + Send,
    D: Write + Send,
{
    assert!(!engines.is_empty(), "at least one engine is required");
    let start = Instant::now();
    let n = engines.len();
    let depth = cfg.queue_depth.max(1);
    let metrics = engines[0].metrics().clone();

    std::thread::scope(|s| {
        let (out_tx, out_rx) = sync_channel::<Output>(depth);
        let writer = s.spawn(move || -> std::io::Result<(u64, u64, E, D)> {
            let (mut events, mut dead_letters) = (events, dead_letters);
            let (mut n_events, mut n_dead) = (0u64, 0u64);
            for item in out_rx {
                match item {
                    Output::Event(e) => {
                        serde_json::to_writer(&mut events, &e)?;
                        events.write_all(b"\n")?;
                        n_events += 1;
                    }
                    Output::Dead(d) => {
                        serde_json::to_writer(&mut dead_letters, &d)?;
                        dead_letters.write_all(b"\n")?;
                        n_dead += 1;
                    }
                }
            }
            events.flush()?;
            dead_letters.flush()?;
            Ok((n_events, n_dead, events, dead_letters))
        });

        let mut senders = Vec::with_capacity(n);
        let mut handles = Vec::with_capacity(n);
        for engine in engines {
            let (tx, rx) = sync_channel::<AisMessage>(depth);
            let out = out_tx.clone();
            senders.push(tx);
            handles.push(s.spawn(move || worker(engine, rx, out)));
        }

        let mut n_lines = 0u64;
        let mut read_err = None;
        for line in lines {
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    read_err = Some(e);
                    break;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            n_lines += 1;
            let format = cfg.format.unwrap_or_else(|| detect_format(&line));
            match parse_line(&line, format) {
                Ok(msg) => {
                    let shard = shard_of(&msg.entity_id, n);
                    if senders[shard].send(msg).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    metrics.message_ingested();
                    metrics.dead_letter();
                    let d = DeadLetter { stage: Stage::Parse, error: e.to_string(), entity_id: None, timestamp: None, line: Some(line) };
                    if out_tx.send(Output::Dead(d)).is_err() {
                        break;
                    }
                }
            }
        }
        drop(senders);
        drop(out_tx);
        let engines: Vec<Engine> = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
        let (n_events, n_dead, _, _) = writer.join().expect("writer panicked")?;
        if let Some(e) = read_err {
            return Err(e);
        }
        let summary = ServeSummary { lines: n_lines, events: n_events, dead_letters: n_dead, elapsed_s: start.elapsed().as_secs_f64() };
        Ok((summary, engines))
    })
}
