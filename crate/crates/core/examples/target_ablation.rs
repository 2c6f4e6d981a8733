//! Confounding-effect fitting targets (logging scores, MRR, DCG) and the
//! single-step variant that does not freeze the confounder during the joint
//! step.
//!
//! `cargo run --release --example target_ablation -- [steps] [seed]`

use ultr_lab::data::{generate_synthetic_split, Split};
use ultr_lab::experiment::{run, ExperimentConfig};
use ultr_lab::propensity::ConfoundingTarget;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(1000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;
    let train = generate_synthetic_split(500, 10, 16, 1, Split::Train)?;
    let test = generate_synthetic_split(200, 10, 16, 1, Split::Test)?;

    let variants = [
        ("logging scores", ConfoundingTarget::LoggingScores, true),
        ("mrr", ConfoundingTarget::Mrr, true),
        ("dcg", ConfoundingTarget::Dcg, true),
        ("one-step", ConfoundingTarget::LoggingScores, false),
    ];
    for (name, target_variant, two_step) in variants {
        let cfg = ExperimentConfig {
            total_steps: steps,
            seed,
            target_variant,
            two_step,
            ..ExperimentConfig::default()
        };
        let r = run(&cfg, &train, &test)?;
        println!(
            "{name:<15} ndcg@10 {:.4}  norm_prop@1 {:.2}",
            r.final_ndcg10(),
            r.normalized_propensity_at_1()
        );
    }
    Ok(())
}
