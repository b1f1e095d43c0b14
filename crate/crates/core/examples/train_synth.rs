//! Train a small model on generated tracks and report held-out accuracy.
//!
//! `cargo run --release --example train_synth -- [activity|entity] [n_per_class] [epochs] [track_messages]`

use std::time::Instant;

use wakeline::classes::{ActivityClass, EntityClass};
use wakeline::engine::Classifier;
use wakeline::features::FeatureConfig;
use wakeline::model::{Checkpoint, ModelConfig};
use wakeline::synth::{generate_dataset_with, generate_track, DatasetConfig, Regime, RegimeSpec, SYNTH_EPOCH};
use wakeline::training::{evaluate, examples_from_windows, train_and_select, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let entity = args.get(1).is_some_and(|s| s == "entity");
    let n: usize = args.get(2).map_or(200, |s| s.parse().unwrap());
    let epochs: usize = args.get(3).map_or(25, |s| s.parse().unwrap());
    let track_messages: i64 = args.get(4).map_or(128, |s| s.parse().unwrap());

    let fcfg = FeatureConfig::default();
    let (classes, cfg) = if entity {
        (EntityClass::names(), ModelConfig::toy_entity(fcfg.width()))
    } else {
        (ActivityClass::names(), ModelConfig::toy_activity(fcfg.width()))
    };
    let windows = |seed| {
        let d = generate_dataset_with(&DatasetConfig { n_per_class: n, seed, track_duration_s: track_messages * 60 }).unwrap();
        if entity { d.entity_windows() } else { d.activity_windows() }
    };
    let train = examples_from_windows(&windows(1), &classes, &fcfg, 2048).unwrap();
    let test = examples_from_windows(&windows(2), &classes, &fcfg, 2048).unwrap();
    let tcfg = TrainConfig { n_epochs: epochs, ..TrainConfig::toy() };
    let start = Instant::now();
    let out = train_and_select(&train, &cfg, &tcfg, |e| {
        eprintln!("epoch {:2} train {:.4} val {:.4} ({:.0}s)", e.epoch, e.train_loss, e.val_loss, start.elapsed().as_secs_f64())
    })
    .unwrap();
    let ev = evaluate(&cfg, &out.weights, &test).unwrap();
    println!("best epoch {} accuracy {:.4} recall {:?}", out.best_epoch, ev.accuracy, ev.recall);
    println!("{:?}", ev.confusion.counts);

    if entity {
        let clf = Classifier::new(Checkpoint::new(cfg, fcfg, classes, out.weights).unwrap());
        for regime in Regime::ALL {
            let mut hits = 0;
            for seed in 0..20 {
                let t = generate_track(&RegimeSpec::new(regime, 600 * 60, 1000 + seed), (30.0, 10.0), SYNTH_EPOCH).unwrap();
                hits += usize::from(EntityClass::from_index(clf.predict(&t.track.messages).unwrap()) == Some(regime.entity()));
            }
            println!("600-message {regime:?}: {hits}/20 correct");
        }
    }
}
