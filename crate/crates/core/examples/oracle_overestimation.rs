//! Exact enumeration of the toy causal model: how a strong logging policy
//! inflates the position-only propensity at the top position, and how the
//! backdoor sum recovers the interventional value.
//!
//! `cargo run --example oracle_overestimation`

use ultr_lab::causal::{
    backdoor_sum, interventional, overestimation_report, render_report_table, Event, ToyCausalModel,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (name, model) in [
        ("strong policy", ToyCausalModel::reference_strong()),
        ("position-blind policy", ToyCausalModel::reference_weak()),
    ] {
        println!("{name}");
        print!("{}", render_report_table(&overestimation_report(&model)?));
        for k in 1..=model.num_positions() {
            let adjusted = backdoor_sum(&model, k, true, false)?;
            let cut = interventional(&model, k, &Event::any().e(true), &Event::any().c(false))?;
            println!("  P(E=1 | do(K={k}), C=0): backdoor {adjusted:.6}, mutilated graph {cut:.6}");
        }
        println!();
    }
    Ok(())
}
