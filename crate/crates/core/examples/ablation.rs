//! Trains the three variants on a synthetic dataset and prints the table.
//!
//! `cargo run --release --example ablation -- [seed] [epochs] [noise] [identity_scale]`

use attkgcn_core::data::{generate_synthetic, split, SplitProtocol, SynthConfig};
use attkgcn_core::experiment::{run_ablation, EvalOptions};
use attkgcn_core::{TrainConfig, Variant};

fn main() -> attkgcn_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let seed: u64 = arg(0, "7").parse().expect("seed");
    let epochs: usize = arg(1, "30").parse().expect("epochs");
    let mut synth = SynthConfig::with_blocks(200, 6, 12, 32, 3, seed);
    synth.noise_scale = arg(2, "0.5").parse().expect("noise");
    synth.identity_scale = arg(3, "0").parse().expect("identity_scale");
    let data = generate_synthetic(&synth)?;
    let s = split(&data.records, &SplitProtocol::Fraction { train: 0.5, seed })?;
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let table = run_ablation(&s, &data.schema, &cfg, &Variant::ALL, &EvalOptions::default())?;
    print!("{}", table.to_table());
    eprintln!("{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
