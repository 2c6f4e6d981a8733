//! Simulated impressions under the position-based click model: empirical
//! click-through rate per position against `ρ_k^η · P(perceived relevant)`.
//!
//! `cargo run --release --example click_simulation -- [sessions]`

use rand::SeedableRng;
use ultr_lab::click::{
    examination_probability, perceived_relevance_probability, sample_session_with, PositionBiasCurve, SimulationConfig,
};
use ultr_lab::data::{generate_synthetic, DEFAULT_Y_MAX};
use ultr_lab::seeding::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sessions: usize = std::env::args().nth(1).map_or(Ok(20_000), |s| s.parse())?;
    let data = generate_synthetic(1, 10, 8, 5)?;
    let mut group = data.groups[0].clone();
    group.docs.sort_by_key(|d| std::cmp::Reverse(d.relevance));
    let cfg = SimulationConfig::default();
    let curve = PositionBiasCurve::reciprocal(cfg.top_n);
    let scores = vec![0.0; group.docs.len()];

    let mut rng = Rng::seed_from_u64(0);
    let mut clicks = vec![0usize; cfg.top_n];
    for _ in 0..sessions {
        let log = sample_session_with(&group, &scores, data.feature_dim, &cfg, &curve, &mut rng)?;
        for (k, &c) in log.clicks.iter().enumerate() {
            clicks[k] += c as usize;
        }
    }
    println!("{sessions} sessions, eta {}, epsilon {}", cfg.eta, cfg.epsilon);
    println!(
        "{:>8} {:>6} {:>10} {:>10}",
        "position", "label", "empirical", "expected"
    );
    for (k, doc) in group.docs.iter().enumerate().take(cfg.top_n) {
        let expected = examination_probability(k + 1, &curve, cfg.eta)?
            * perceived_relevance_probability(doc.relevance, cfg.epsilon, DEFAULT_Y_MAX);
        println!(
            "{:>8} {:>6} {:>10.4} {:>10.4}",
            k + 1,
            doc.relevance,
            clicks[k] as f64 / sessions as f64,
            expected
        );
    }
    Ok(())
}
