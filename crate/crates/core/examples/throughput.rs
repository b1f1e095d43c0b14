//! Time end-to-end classifications on 512-message windows.
//!
//! `cargo run --release --example throughput -- [n_entities] [events_per_entity]`

use std::sync::Arc;
use std::time::Instant;

use wakeline::classes::ActivityClass;
use wakeline::engine::{Classifier, Engine, EngineConfig};
use wakeline::features::FeatureConfig;
use wakeline::ingest::AisMessage;
use wakeline::model::{init_weights, Checkpoint, ModelConfig};
use wakeline::trackstore::StoreConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_entities: usize = args.get(1).map_or(4, |s| s.parse().unwrap());
    let per_entity: usize = args.get(2).map_or(100, |s| s.parse().unwrap());
    let features = FeatureConfig::default();
    let model = ModelConfig::toy_activity(features.width());
    let ckpt = Checkpoint::new(model, features, ActivityClass::names(), init_weights(&model, 1).unwrap()).unwrap();
    let cfg = EngineConfig { store: StoreConfig { max_window_len: 512, ..StoreConfig::default() }, ..EngineConfig::default() };
    let mut engine = Engine::new(cfg.clone(), Arc::new(Classifier::new(ckpt)), None, cfg.new_metrics()).unwrap();
    let msg = |e: usize, t: i64| AisMessage {
        entity_id: e.to_string(),
        timestamp: t,
        lat: 10.0 + e as f64 * 0.1,
        lon: 20.0 + t as f64 * 1e-6,
        sog: 6.0,
        cog: 45.0,
        vessel_type: None,
    };
    let mut t = 1_700_000_000i64;
    for _ in 0..512 {
        t += 60;
        for e in 0..n_entities {
            engine.on_message(msg(e, t)).unwrap();
        }
    }
    let start = Instant::now();
    let mut events = 0;
    for _ in 0..per_entity {
        t += 7 * 3600;
        for e in 0..n_entities {
            events += usize::from(engine.on_message(msg(e, t)).unwrap().is_some());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    println!("{events} classifications in {secs:.3}s = {:.1}/s", events as f64 / secs);
}
