//! Normalised propensity curves learned by DLA and UPE next to the true
//! `1/k` curve, after one online run each.
//!
//! `cargo run --release --example propensity_comparison -- [steps] [seed]`

use ultr_lab::data::{generate_synthetic_split, Split};
use ultr_lab::experiment::{run, Algorithm, ExperimentConfig};
use ultr_lab::metrics::{normalized_propensity, propensity_error};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(1000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let train = generate_synthetic_split(500, 10, 16, 1, Split::Train)?;
    let test = generate_synthetic_split(200, 10, 16, 1, Split::Test)?;

    let mut rows = Vec::new();
    for algorithm in [Algorithm::IpwOracle, Algorithm::Dla, Algorithm::Upe] {
        let cfg = ExperimentConfig {
            algorithm,
            total_steps: steps,
            seed,
            ..ExperimentConfig::default()
        };
        let r = run(&cfg, &train, &test)?;
        let curve = cfg.position_curve()?;
        let err = propensity_error(&r.final_propensity, &curve, cfg.simulation.eta);
        let norm = normalized_propensity(&r.final_propensity, r.final_propensity.len());
        rows.push((algorithm.name(), norm, err));
    }
    print!("{:>8}", "position");
    for (name, _, _) in &rows {
        print!(" {name:>11}");
    }
    println!();
    for k in 0..rows[0].1.len() {
        print!("{:>8}", k + 1);
        for (_, norm, _) in &rows {
            print!(" {:>11.3}", norm[k]);
        }
        println!();
    }
    print!("{:>8}", "error");
    for (_, _, err) in &rows {
        print!(" {err:>11.3}");
    }
    println!();
    Ok(())
}
