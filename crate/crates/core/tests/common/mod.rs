//! Random-point finite-difference cases shared by the gradient and acceptance tests.

#![allow(dead_code)]

use charlee::data::slice_boundaries;
use charlee::models::{Architecture, Charlee, Classifier, TapeEncoding};
use charlee::numerics::gradcheck::{check_gradients, GradCheck};
use charlee::numerics::{ConvGeom, ParamId, ParamStore, ParamTensor, RngStream, Stream, Tape, Var};
use charlee::ranking::GroupAssignment;
use charlee::Result;
use rand::Rng;

pub type Case = fn(&mut RngStream) -> GradCheck;

fn uniform(rng: &mut RngStream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn param(store: &mut ParamStore, name: &str, values: Vec<f64>) -> ParamId {
    let mut t = ParamTensor::zeros(name, &[values.len()]);
    t.values = values;
    store.insert(t).unwrap()
}

/// Scalar `r · v` for a fixed random `r`.
fn project(tape: &mut Tape, v: Var, r: &[f64]) -> Result<Var> {
    let w = tape.input(r.to_vec());
    let b = tape.input(vec![0.0]);
    tape.dense(v, w, b)
}

fn run(store: &mut ParamStore, rng: &mut RngStream, coords: Option<usize>, f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>) -> GradCheck {
    let mut local = RngStream::new(rng.random(), Stream::Init, 9);
    check_gradients(store, f, coords, &mut local).unwrap()
}

fn unary(rng: &mut RngStream, op: fn(&mut Tape, Var) -> Var) -> GradCheck {
    let mut s = ParamStore::new();
    let x = param(&mut s, "x", uniform(rng, 8, -3.0, 3.0));
    let r = uniform(rng, 8, -1.0, 1.0);
    run(&mut s, rng, None, |t, s| {
        let v = t.param(s, x);
        let y = op(t, v);
        project(t, y, &r)
    })
}

pub fn dense(rng: &mut RngStream) -> GradCheck {
    let mut s = ParamStore::new();
    let x = param(&mut s, "x", uniform(rng, 5, -2.0, 2.0));
    let w = param(&mut s, "w", uniform(rng, 15, -1.0, 1.0));
    let b = param(&mut s, "b", uniform(rng, 3, -1.0, 1.0));
    let r = uniform(rng, 3, -1.0, 1.0);
    run(&mut s, rng, None, |t, s| {
        let (xv, wv, bv) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = t.dense(xv, wv, bv)?;
        project(t, y, &r)
    })
}

fn conv(rng: &mut RngStream, geom: ConvGeom) -> GradCheck {
    let mut s = ParamStore::new();
    let x = param(&mut s, "x", uniform(rng, geom.cin * geom.t_in, -2.0, 2.0));
    let w = param(&mut s, "w", uniform(rng, geom.cout * geom.cin * geom.k, -1.0, 1.0));
    let b = param(&mut s, "b", uniform(rng, geom.cout, -1.0, 1.0));
    let r = uniform(rng, geom.cout * geom.t_out(), -1.0, 1.0);
    run(&mut s, rng, None, |t, s| {
        let (xv, wv, bv) = (t.param(s, x), t.param(s, w), t.param(s, b));
        let y = t.conv1d(xv, wv, bv, geom)?;
        project(t, y, &r)
    })
}

pub fn conv_same(rng: &mut RngStream) -> GradCheck {
    conv(rng, ConvGeom::same(2, 3, 3, 7))
}

pub fn conv_causal(rng: &mut RngStream) -> GradCheck {
    let hist = rng.random_range(0..5);
    conv(rng, ConvGeom::causal_with_history(2, 3, 5, 5 + hist, hist))
}

pub fn relu(rng: &mut RngStream) -> GradCheck {
    unary(rng, |t, v| t.relu(v))
}

pub fn sigmoid(rng: &mut RngStream) -> GradCheck {
    unary(rng, |t, v| t.sigmoid(v))
}

pub fn softplus(rng: &mut RngStream) -> GradCheck {
    unary(rng, |t, v| t.softplus(v))
}

pub fn add_const(rng: &mut RngStream) -> GradCheck {
    unary(rng, |t, v| t.add_const(v, 1.7))
}

pub fn mean_pool(rng: &mut RngStream) -> GradCheck {
    let mut s = ParamStore::new();
    let x = param(&mut s, "x", uniform(rng, 18, -2.0, 2.0));
    let r = uniform(rng, 3, -1.0, 1.0);
    run(&mut s, rng, None, |t, s| {
        let v = t.param(s, x);
        let y = t.mean_pool(v, 3)?;
        project(t, y, &r)
    })
}

pub fn concat_pick_lin_comb(rng: &mut RngStream) -> GradCheck {
    let mut s = ParamStore::new();
    let a = param(&mut s, "a", uniform(rng, 3, -2.0, 2.0));
    let b = param(&mut s, "b", uniform(rng, 4, -2.0, 2.0));
    let idx = rng.random_range(0..7);
    let r = uniform(rng, 7, -1.0, 1.0);
    run(&mut s, rng, None, |t, s| {
        let (av, bv) = (t.param(s, a), t.param(s, b));
        let cat = t.concat(&[av, bv]);
        let p = project(t, cat, &r)?;
        let picked = t.pick(cat, idx);
        let sq = t.squared_error(picked, 0.3);
        Ok(t.lin_comb(&[(p, 0.7), (sq, -1.3), (picked, 2.5)]))
    })
}

pub fn softmax_ce(rng: &mut RngStream) -> GradCheck {
    let mut s = ParamStore::new();
    let z = param(&mut s, "z", uniform(rng, 6, -3.0, 3.0));
    let label = rng.random_range(0..6);
    run(&mut s, rng, None, |t, s| {
        let v = t.param(s, z);
        t.softmax_cross_entropy(v, label)
    })
}

pub fn beta_log_prob(rng: &mut RngStream) -> GradCheck {
    let mut s = ParamStore::new();
    let a = param(&mut s, "alpha", uniform(rng, 1, 1.0, 8.0));
    let b = param(&mut s, "beta", uniform(rng, 1, 1.0, 8.0));
    let x = rng.random_range(0.01..0.99);
    run(&mut s, rng, None, |t, s| {
        let (av, bv) = (t.param(s, a), t.param(s, b));
        t.beta_log_prob(x, av, bv)
    })
}

pub fn bce(rng: &mut RngStream) -> GradCheck {
    let mut s = ParamStore::new();
    let z = param(&mut s, "z", uniform(rng, 1, -3.0, 3.0));
    let target = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    run(&mut s, rng, None, |t, s| {
        let v = t.param(s, z);
        let p = t.sigmoid(v);
        Ok(t.bce(p, target))
    })
}

pub fn squared_error(rng: &mut RngStream) -> GradCheck {
    let mut s = ParamStore::new();
    let x = param(&mut s, "x", uniform(rng, 1, -3.0, 3.0));
    let target = rng.random_range(-2.0..2.0);
    run(&mut s, rng, None, |t, s| {
        let v = t.param(s, x);
        Ok(t.squared_error(v, target))
    })
}

pub fn pooled_stats(rng: &mut RngStream) -> GradCheck {
    let mut s = ParamStore::new();
    let (maps, l0, l1) = (2, rng.random_range(1..5), rng.random_range(1..5));
    let c0 = param(&mut s, "c0", uniform(rng, maps * l0, -2.0, 2.0));
    let c1 = param(&mut s, "c1", uniform(rng, maps * l1, -2.0, 2.0));
    let r = uniform(rng, maps * 6, -1.0, 1.0);
    run(&mut s, rng, None, |t, s| {
        let (a, b) = (t.param(s, c0), t.param(s, c1));
        let y = t.pooled_stats(&[a, b], &[0, l0], maps, l0 + l1 + 3)?;
        project(t, y, &r)
    })
}

/// A small full model on random weights with a random input sample.
fn small_model(rng: &mut RngStream) -> (Charlee, ParamStore, Vec<f64>) {
    let mut arch = Architecture::new(4, 24, 3, 3);
    arch.kernels_per_group = 4;
    arch.kernel_len = 5;
    arch.head_hidden = vec![16, 16];
    arch.classifier_maps = 6;
    arch.classifier_kernel = 5;
    let groups = GroupAssignment::from_priority(&[2, 0, 3, 1], 3).unwrap();
    let (m, store) = Charlee::new(arch, groups, slice_boundaries(24, 3).unwrap(), rng.random()).unwrap();
    let x = uniform(rng, 4 * 24, -2.0, 2.0);
    (m, store, x)
}

const HEAD_COORDS: Option<usize> = Some(40);

pub fn encoder(rng: &mut RngStream) -> GradCheck {
    let (m, mut s, x) = small_model(rng);
    let drop_after = rng.random_range(1..4);
    let r = uniform(rng, m.encoder.stats_len(), -1.0, 1.0);
    run(&mut s, rng, HEAD_COORDS, |t, s| {
        let mut enc = TapeEncoding::default();
        for (n, &slice) in m.slices.boundaries.iter().enumerate() {
            let active: Vec<bool> = (0..3).map(|g| n < drop_after || g == 0).collect();
            m.encoder.encode_slice_tape(t, s, &mut enc, &x, slice, &active)?;
        }
        let stats = m.encoder.stats_tape(t, &enc)?;
        project(t, stats, &r)
    })
}

fn random_state(rng: &mut RngStream, m: &Charlee) -> Vec<f64> {
    uniform(rng, m.state_len(), -1.5, 1.5)
}

pub fn filter_head(rng: &mut RngStream) -> GradCheck {
    let (m, mut s, _) = small_model(rng);
    let state = random_state(rng, &m);
    let x = rng.random_range(0.01..0.99);
    run(&mut s, rng, HEAD_COORDS, |t, s| {
        let sv = t.input(state.clone());
        let (a, b) = m.filter.forward_tape(t, s, sv)?;
        t.beta_log_prob(x, a, b)
    })
}

pub fn stop_head(rng: &mut RngStream) -> GradCheck {
    let (m, mut s, _) = small_model(rng);
    let state = random_state(rng, &m);
    let (f, target) = (rng.random_range(0.0..1.0), if rng.random_bool(0.5) { 1.0 } else { 0.0 });
    run(&mut s, rng, HEAD_COORDS, |t, s| {
        let sv = t.input(state.clone());
        let p = m.stop.forward_tape(t, s, sv, f)?;
        Ok(t.bce(p, target))
    })
}

pub fn baseline_head(rng: &mut RngStream) -> GradCheck {
    let (m, mut s, _) = small_model(rng);
    let state = random_state(rng, &m);
    let target = rng.random_range(-1.0..1.0);
    run(&mut s, rng, HEAD_COORDS, |t, s| {
        let sv = t.input(state.clone());
        let b = m.baseline.forward_tape(t, s, sv)?;
        Ok(t.squared_error(b, target))
    })
}

pub fn classifier(rng: &mut RngStream) -> GradCheck {
    let (m, mut s, x) = small_model(rng);
    let label = rng.random_range(0..3);
    run(&mut s, rng, HEAD_COORDS, |t, s| {
        let xv = t.input(x.clone());
        let z = m.classifier.forward_tape(t, s, xv)?;
        t.softmax_cross_entropy(z, label)
    })
}

/// State built on the tape from the encoder, feeding the filter head.
pub fn policy_path(rng: &mut RngStream) -> GradCheck {
    let (m, mut s, x) = small_model(rng);
    let xa = rng.random_range(0.01..0.99);
    run(&mut s, rng, HEAD_COORDS, |t, s| {
        let mut enc = TapeEncoding::default();
        m.encoder.encode_slice_tape(t, s, &mut enc, &x, m.slices.boundaries[0], &[true; 3])?;
        m.encoder.encode_slice_tape(t, s, &mut enc, &x, m.slices.boundaries[1], &[true, true, false])?;
        let state = m.state_tape(t, &enc, &[0.75], 2)?;
        let (a, b) = m.filter.forward_tape(t, s, state)?;
        t.beta_log_prob(xa, a, b)
    })
}

pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("dense", dense),
        ("conv1d same", conv_same),
        ("conv1d causal", conv_causal),
        ("relu", relu),
        ("sigmoid", sigmoid),
        ("softplus", softplus),
        ("add_const", add_const),
        ("mean_pool", mean_pool),
        ("concat/pick/lin_comb", concat_pick_lin_comb),
        ("softmax cross-entropy", softmax_ce),
        ("beta log-density", beta_log_prob),
        ("binary cross-entropy", bce),
        ("squared error", squared_error),
        ("pooled statistics", pooled_stats),
        ("encoder", encoder),
        ("filter head", filter_head),
        ("stop head", stop_head),
        ("baseline head", baseline_head),
        ("classifier", classifier),
        ("encoder to filter head", policy_path),
    ]
}

/// Runs `case` at `points` random points and merges the results.
pub fn check_case(case: Case, points: usize, seed: u64) -> GradCheck {
    let mut rng = RngStream::new(seed, Stream::Data, 77);
    let mut total = GradCheck::default();
    for _ in 0..points {
        total.merge(&case(&mut rng));
    }
    total
}
