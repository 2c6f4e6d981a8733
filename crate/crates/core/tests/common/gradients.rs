//! Finite-difference checks of every tape primitive and of the full ranking
//! and propensity models.

use rand::{Rng as _, SeedableRng};
use ultr_lab::autodiff::{record_listwise_ce, Matrix, Mode, ParamGroup, ParamId, ParamStore, Tape, Var};
use ultr_lab::click::ClickLog;
use ultr_lab::propensity::{
    batch_features, batch_groups, batch_positions, LppConfig, LppModel, PositionPropensityModel,
};
use ultr_lab::ranking::RankerMlp;
use ultr_lab::seeding::Rng;

use super::max_gradient_error;

pub const RELATIVE_TOLERANCE: f64 = 1e-4;

fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_shape_fn((r, c), |_| rng.random_range(-1.5..1.5))
}

/// Parameters `a, b: 4×3`, `w: 3×2`, `bias: 1×2`, `table: 5×3`, `v: 3×1`,
/// `c: 1×1` and a fixed random projection used to reduce any output to a
/// scalar.
struct Fixture {
    store: ParamStore,
    a: ParamId,
    b: ParamId,
    w: ParamId,
    bias: ParamId,
    table: ParamId,
    v: ParamId,
    c: ParamId,
    seed: u64,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Ranker, random_matrix(&mut rng, 4, 3));
        let b = store.add("b", ParamGroup::Ranker, random_matrix(&mut rng, 4, 3));
        let w = store.add("w", ParamGroup::Ranker, random_matrix(&mut rng, 3, 2));
        let bias = store.add("bias", ParamGroup::Ranker, random_matrix(&mut rng, 1, 2));
        let table = store.add("table", ParamGroup::Ranker, random_matrix(&mut rng, 5, 3));
        let v = store.add("v", ParamGroup::Ranker, random_matrix(&mut rng, 3, 1));
        let c = store.add("c", ParamGroup::Ranker, random_matrix(&mut rng, 1, 1));
        Self {
            store,
            a,
            b,
            w,
            bias,
            table,
            v,
            c,
            seed,
        }
    }

    /// `table · v + c`, a `5×1` logit column.
    fn logits(&self, tape: &mut Tape) -> Var {
        let (x, v, c) = (
            tape.param(&self.store, self.table),
            tape.param(&self.store, self.v),
            tape.param(&self.store, self.c),
        );
        tape.affine(x, v, c).unwrap()
    }

    /// `Σ out ⊙ P` for a projection `P` fixed by the seed and shape.
    fn project(&self, tape: &mut Tape, out: Var) -> Var {
        let (r, c) = tape.value(out).dim();
        let mut rng = Rng::seed_from_u64(self.seed ^ 0x9e37_79b9);
        let p = tape.constant(random_matrix(&mut rng, r, c));
        let m = tape.mul(out, p).unwrap();
        tape.sum(m)
    }
}

type PrimitiveLoss = fn(&Fixture, &mut Tape) -> Var;

fn primitives() -> Vec<(&'static str, PrimitiveLoss)> {
    vec![
        ("affine", |f, t| {
            let (a, w, b) = (
                t.param(&f.store, f.a),
                t.param(&f.store, f.w),
                t.param(&f.store, f.bias),
            );
            let o = t.affine(a, w, b).unwrap();
            f.project(t, o)
        }),
        ("add", |f, t| {
            let (a, b) = (t.param(&f.store, f.a), t.param(&f.store, f.b));
            let o = t.add(a, b).unwrap();
            f.project(t, o)
        }),
        ("mul", |f, t| {
            let (a, b) = (t.param(&f.store, f.a), t.param(&f.store, f.b));
            let o = t.mul(a, b).unwrap();
            f.project(t, o)
        }),
        ("scale", |f, t| {
            let a = t.param(&f.store, f.a);
            let o = t.scale(a, -1.7);
            f.project(t, o)
        }),
        ("elu", |f, t| {
            let a = t.param(&f.store, f.a);
            let o = t.elu(a);
            f.project(t, o)
        }),
        ("sigmoid", |f, t| {
            let a = t.param(&f.store, f.a);
            let o = t.sigmoid(a);
            f.project(t, o)
        }),
        ("dropout", |f, t| {
            let a = t.param(&f.store, f.a);
            let mut rng = Rng::seed_from_u64(f.seed);
            let o = t.dropout(a, 0.3, &mut rng);
            f.project(t, o)
        }),
        ("gather", |f, t| {
            let table = t.param(&f.store, f.table);
            let o = t.gather(table, &[4, 0, 2, 2, 1]).unwrap();
            f.project(t, o)
        }),
        ("mean", |f, t| {
            let a = t.param(&f.store, f.a);
            let e = t.elu(a);
            let o = t.mean(e);
            t.scale(o, 3.0)
        }),
        ("sum", |f, t| {
            let a = t.param(&f.store, f.a);
            let s = t.sigmoid(a);
            t.sum(s)
        }),
        ("weighted_log_softmax", |f, t| {
            let z = f.logits(t);
            t.weighted_log_softmax(z, &[1.0, 0.0, 2.5, 0.0, 0.7], &[0..2, 2..5])
                .unwrap()
        }),
        ("listwise_ce", |f, t| {
            let z = f.logits(t);
            record_listwise_ce(t, z, &[0.3, -1.0, 2.0, 0.0, 0.5], &[0..3, 3..5]).unwrap()
        }),
    ]
}

fn toy_batch(seed: u64, dim: usize) -> Vec<ClickLog> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..3)
        .map(|q| {
            let n = 4 + q;
            let mut clicks: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            clicks[0] = true;
            ClickLog::new(
                format!("q{q}"),
                (0..n).map(|d| format!("d{d}")).collect(),
                random_matrix(&mut rng, n, dim),
                (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                clicks,
            )
        })
        .collect()
}

fn click_coeffs(batch: &[ClickLog], seed: u64) -> Vec<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    batch
        .iter()
        .flat_map(|l| l.clicks.clone())
        .map(|c| if c { rng.random_range(1.0..5.0) } else { 0.0 })
        .collect()
}

fn ranker_error(seed: u64) -> f64 {
    let dim = 6;
    let batch = toy_batch(seed, dim);
    let coeffs = click_coeffs(&batch, seed);
    let groups = batch_groups(&batch);
    let x = batch_features(&batch);
    let mut model = RankerMlp::new(dim, &[8, 5, 3], 0.2, seed);
    max_gradient_error(&mut model, RankerMlp::store_mut, |m, t| {
        let mut rng = Rng::seed_from_u64(seed);
        let s = m.forward(t, x.clone(), Mode::Train, &mut rng).unwrap();
        t.weighted_log_softmax(s, &coeffs, &groups).unwrap()
    })
}

fn position_model_error(seed: u64) -> f64 {
    let batch = toy_batch(seed, 2);
    let coeffs = click_coeffs(&batch, seed);
    let groups = batch_groups(&batch);
    let positions = batch_positions(&batch);
    let mut rng = Rng::seed_from_u64(seed);
    let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut model = PositionPropensityModel::from_logits(&logits);
    max_gradient_error(&mut model, PositionPropensityModel::store_mut, |m, t| {
        let z = m.forward(t, &positions).unwrap();
        t.weighted_log_softmax(z, &coeffs, &groups).unwrap()
    })
}

fn lpp_model(seed: u64, dim: usize) -> LppModel {
    let cfg = LppConfig {
        latent_dim: 5,
        encoder_hidden: vec![6],
        ffn_hidden: vec![4, 7],
        ..LppConfig::default()
    };
    let mut model = LppModel::new(dim, 6, &cfg, seed);
    let mut rng = Rng::seed_from_u64(seed ^ 7);
    let (r, c) = model.position_table().dim();
    *model.position_table_mut() = random_matrix(&mut rng, r, c);
    model
}

fn lpp_confounder_error(seed: u64) -> f64 {
    let dim = 5;
    let batch = toy_batch(seed, dim);
    let targets: Vec<f64> = batch.iter().flat_map(|l| l.logging_scores.clone()).collect();
    let groups = batch_groups(&batch);
    let x = batch_features(&batch);
    let mut model = lpp_model(seed, dim);
    max_gradient_error(&mut model, LppModel::store_mut, |m, t| {
        let o = m.confounder_forward(t, x.clone()).unwrap();
        record_listwise_ce(t, o, &targets, &groups).unwrap()
    })
}

fn lpp_joint_error(seed: u64) -> f64 {
    let dim = 5;
    let batch = toy_batch(seed, dim);
    let positions = batch_positions(&batch);
    let targets: Vec<f64> = positions.iter().map(|&k| -((k + 1) as f64).ln()).collect();
    let groups = batch_groups(&batch);
    let x = batch_features(&batch);
    let mut model = lpp_model(seed, dim);
    max_gradient_error(&mut model, LppModel::store_mut, |m, t| {
        let o = m.joint_forward(t, x.clone(), &positions).unwrap();
        record_listwise_ce(t, o, &targets, &groups).unwrap()
    })
}

/// `(check name, worst relative error over all trials)`.
pub fn gradient_suite(trials: u64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (name, loss) in primitives() {
        let worst = (0..trials)
            .map(|s| {
                let mut f = Fixture::new(s);
                max_gradient_error(&mut f, |f| &mut f.store, loss)
            })
            .fold(0.0, f64::max);
        out.push((name.to_owned(), worst));
    }
    type ModelCheck = (&'static str, fn(u64) -> f64);
    let models: [ModelCheck; 4] = [
        ("ranker_mlp", ranker_error),
        ("position_model", position_model_error),
        ("lpp_confounder", lpp_confounder_error),
        ("lpp_joint", lpp_joint_error),
    ];
    for (name, check) in models {
        let worst = (0..trials).map(check).fold(0.0, f64::max);
        out.push((name.to_owned(), worst));
    }
    out
}
