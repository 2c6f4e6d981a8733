//! Central finite differences against reverse-mode gradients of the ranker's
//! IPW listwise loss.
//!
//! `cargo run --example gradient_check`

use rand::SeedableRng;
use ultr_lab::autodiff::{Matrix, Mode, Tape};
use ultr_lab::click::PositionBiasCurve;
use ultr_lab::propensity::PropensityEstimate;
use ultr_lab::ranking::{ipw_coefficients, RankerMlp, PROPENSITY_FLOOR};
use ultr_lab::seeding::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (n, dim) = (6, 5);
    let x = Matrix::from_shape_fn((n, dim), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
    let clicks = [true, false, true, false, false, true];
    let prop = PropensityEstimate::oracle(&PositionBiasCurve::reciprocal(n), 1.0);
    let coeffs = ipw_coefficients(&clicks, &prop, PROPENSITY_FLOOR);
    let mut model = RankerMlp::new(dim, &[8, 4], 0.2, 3);

    let loss = |m: &RankerMlp| {
        let mut tape = Tape::new();
        let mut rng = Rng::seed_from_u64(1);
        let s = m.forward(&mut tape, x.clone(), Mode::Train, &mut rng).unwrap();
        let l = tape
            .weighted_log_softmax(s, &coeffs, std::slice::from_ref(&(0..n)))
            .unwrap();
        (tape, l)
    };

    let (tape, l) = loss(&model);
    model.store_mut().zero_grad();
    tape.backward(l, model.store_mut())?;
    let params: Vec<_> = model
        .store()
        .iter()
        .map(|(id, p)| (id, p.name.clone(), p.grad.clone()))
        .collect();

    let h = 1e-5;
    for (id, name, grad) in params {
        let mut worst = 0.0f64;
        for ((i, j), &analytic) in grad.indexed_iter() {
            let orig = model.store().value(id)[[i, j]];
            model.store_mut().value_mut(id)[[i, j]] = orig + h;
            let (t, v) = loss(&model);
            let up = t.scalar(v);
            model.store_mut().value_mut(id)[[i, j]] = orig - h;
            let (t, v) = loss(&model);
            let down = t.scalar(v);
            model.store_mut().value_mut(id)[[i, j]] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4));
        }
        println!("{name:<16} {:>3} entries, worst relative error {worst:.2e}", grad.len());
    }
    Ok(())
}
