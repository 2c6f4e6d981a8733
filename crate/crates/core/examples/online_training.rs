//! Online (OnD) training: the logging policy is refreshed from the learner
//! every `refresh_interval` steps. Compares UPE, DLA, Naive and the oracle
//! propensity on one synthetic split.
//!
//! `cargo run --release --example online_training -- [steps] [seed]`

use ultr_lab::data::{generate_synthetic_split, Split};
use ultr_lab::experiment::{run, Algorithm, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(1000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let train = generate_synthetic_split(500, 10, 16, 1, Split::Train)?;
    let test = generate_synthetic_split(200, 10, 16, 1, Split::Test)?;

    println!(
        "{:<11} {:>9} {:>9} {:>12}",
        "algorithm", "ndcg@10", "err@10", "norm_prop@1"
    );
    for algorithm in Algorithm::ALL {
        let cfg = ExperimentConfig {
            algorithm,
            total_steps: steps,
            seed,
            ..ExperimentConfig::default()
        };
        let r = run(&cfg, &train, &test)?;
        println!(
            "{:<11} {:>9.4} {:>9.4} {:>12.2}",
            algorithm.name(),
            r.final_ndcg10(),
            r.final_metrics.err[3],
            r.normalized_propensity_at_1()
        );
    }
    println!("true ratio rho_1 / rho_10 = 10");
    Ok(())
}
