//! Synthetic LETOR data written as SVMlight text and parsed back.
//!
//! `cargo run --example svmlight_roundtrip`

use ultr_lab::data::{generate_synthetic_split, parse_svmlight, to_svmlight, Split, DEFAULT_Y_MAX};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_synthetic_split(20, 10, 16, 7, Split::Train)?;
    let text = to_svmlight(&data);
    println!("{}", text.lines().next().unwrap_or_default());
    let back = parse_svmlight(&text)?.with_split(Split::Train);
    assert_eq!(back, data);
    println!(
        "{} queries, {} documents, {} features, grade histogram {:?}",
        back.groups.len(),
        back.num_docs(),
        back.feature_dim,
        back.grade_histogram(DEFAULT_Y_MAX)
    );
    println!("round trip exact: {}", back == data);
    Ok(())
}
