//! Offline (Off) training: a weak linear policy fitted on 1% of the training
//! queries logs every impression; the learner never changes what is shown.
//!
//! `cargo run --release --example offline_training -- [steps] [seed]`

use ultr_lab::data::{generate_synthetic_split, Split};
use ultr_lab::experiment::{run_offline, train_weak_policy, Algorithm, ExperimentConfig, Paradigm};
use ultr_lab::metrics::ndcg_at_k;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(1000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let train = generate_synthetic_split(500, 10, 16, 1, Split::Train)?;
    let test = generate_synthetic_split(200, 10, 16, 1, Split::Test)?;

    let policy = train_weak_policy(&train, 0.01, seed)?;
    let policy_ndcg: f64 = test
        .groups
        .iter()
        .map(|g| {
            policy
                .display(g, test.feature_dim)
                .map(|(r, _)| ndcg_at_k(&r.labels(), 10))
        })
        .sum::<Result<f64, _>>()?
        / test.groups.len() as f64;
    println!("weak policy test ndcg@10 {policy_ndcg:.4}");

    for algorithm in [Algorithm::Upe, Algorithm::Dla, Algorithm::Naive] {
        let cfg = ExperimentConfig {
            paradigm: Paradigm::Off,
            algorithm,
            total_steps: steps,
            seed,
            ..ExperimentConfig::default()
        };
        let r = run_offline(&cfg, &train, &test, &policy)?;
        println!(
            "{:<6} ndcg@10 {:.4}  norm_prop@1 {:.2}",
            algorithm.name(),
            r.final_ndcg10(),
            r.normalized_propensity_at_1()
        );
    }
    Ok(())
}
