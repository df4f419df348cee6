//! Trains one topology on a generated corpus and prints slot scores.
//!
//! cargo run --release -p dcmtl-core --example synthetic -- dcmtl 5 0

use std::time::Instant;

use dcmtl_core::corpus::synth::{default_templates, generate_splits, synthetic_dictionary};
use dcmtl_core::corpus::Tokenization;
use dcmtl_core::model::{ModelConfig, TrainedModel};
use dcmtl_core::TaskId;

fn main() -> dcmtl_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let topology = args.first().map_or("dcmtl", String::as_str).parse()?;
    let epochs = args.get(1).map_or(5, |s| s.parse().expect("epochs"));
    let seed = args.get(2).map_or(0, |s| s.parse().expect("seed"));

    let splits = generate_splits(
        synthetic_dictionary(10, 2024)?,
        &default_templates(),
        2000,
        300,
        2024,
    )?;
    let config = ModelConfig {
        topology,
        epochs,
        seed,
        ..ModelConfig::default()
    };
    let start = Instant::now();
    let model = TrainedModel::fit(config, &splits.train, Tokenization::Char, &mut ())?;
    let trained = start.elapsed();
    let iv = model.evaluate(&splits.test_iv)?;
    let oov = model.evaluate(&splits.test_oov)?;
    println!(
        "{topology} seed {seed}: train {:.1}s, in-dict F1 {:.4}, held-out F1 {:.4}",
        trained.as_secs_f64(),
        iv[&TaskId::Slot].f1,
        oov[&TaskId::Slot].f1
    );
    Ok(())
}
