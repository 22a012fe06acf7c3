use charlee::data::synthetic::{generate_synthetic, SyntheticSpec};
use charlee::data::{mask_apply, slice_boundaries, Dataset};
use charlee::evaluation::run_episode_eval;
use charlee::models::{Architecture, Charlee, Classifier};
use charlee::numerics::{ParamStore, RngStream, Stream, Tape};
use charlee::ranking::GroupAssignment;
use charlee::training::{
    episode_loss, fit, loss_baseline, loss_filter, loss_stop, returns, rollout, ActionSource, TrainConfig,
};

fn synth(n_per_class: usize, noise_std: f64, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        n_per_class,
        noise_std,
        seed,
    })
    .unwrap()
    .dataset
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 5,
        warmup_epochs: 2,
        n_checkpoints: 3,
        n_groups: Some(4),
        normalize: false,
        head_hidden: vec![16, 16],
        classifier_maps: 8,
        ..TrainConfig::default()
    }
}

fn bits(store: &ParamStore) -> Vec<u64> {
    store.iter().flat_map(|t| t.values.iter().map(|v| v.to_bits())).collect()
}

fn model() -> (Charlee, ParamStore) {
    let mut arch = Architecture::new(4, 96, 8, 3);
    arch.head_hidden = vec![16, 16];
    arch.classifier_maps = 8;
    let groups = GroupAssignment::from_priority(&[3, 2, 1, 0], 4).unwrap();
    Charlee::new(arch, groups, slice_boundaries(96, 3).unwrap(), 7).unwrap()
}

#[test]
fn same_seed_gives_identical_training() {
    // 64 training episodes in minibatches of 32: 10 optimizer steps over 5 epochs
    let data = synth(10, 0.1, 0);
    let a = fit(&data, &small_cfg(), None).unwrap();
    let b = fit(&data, &small_cfg(), None).unwrap();
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.history, b.history);
    let c = fit(&data, &TrainConfig { seed: 1, ..small_cfg() }, None).unwrap();
    assert_ne!(bits(&a.params), bits(&c.params));
}

#[test]
fn resumed_training_continues_identically() {
    let data = synth(10, 0.1, 0);
    let dir = tempfile::tempdir().unwrap();
    let full = fit(&data, &small_cfg(), None).unwrap();
    fit(&data, &TrainConfig { epochs: 2, ..small_cfg() }, Some(dir.path())).unwrap();
    let resumed = fit(&data, &small_cfg(), Some(dir.path())).unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(bits(&resumed.params), bits(&full.params));
}

#[test]
fn full_savings_factor_exits_immediately() {
    let data = synth(20, 0.1, 3);
    let test = synth(10, 0.1, 4);
    let mut total = 0.0;
    for seed in 0..5 {
        let cfg = TrainConfig {
            delta: 1.0,
            seed,
            epochs: 8,
            ..small_cfg()
        };
        let f = fit(&data, &cfg, None).unwrap();
        let r = charlee::evaluation::evaluate(&f.model, &f.params, &test, 1.0, 0.0).unwrap();
        total += r.mean_savings;
    }
    assert!(total / 5.0 >= 0.7, "mean savings {}", total / 5.0);
}

#[test]
fn accuracy_only_training_separates_noiseless_data() {
    let data = synth(25, 0.0, 5);
    for seed in 0..5 {
        let cfg = TrainConfig {
            delta: 0.0,
            seed,
            epochs: 25,
            warmup_epochs: 20,
            n_checkpoints: 3,
            n_groups: Some(4),
            normalize: false,
            ..TrainConfig::default()
        };
        let f = fit(&data, &cfg, None).unwrap();
        let best = f.history[f.best_epoch].val_f1;
        assert!(best >= 0.99, "seed {seed}: best validation F1 {best}");
    }
}

#[test]
fn zero_advantage_gives_no_filter_gradient() {
    let (m, mut store) = model();
    let data = synth(1, 0.1, 0);
    let mut tape = Tape::new();
    let mut rng = RngStream::new(0, Stream::Beta, 0);
    let (traj, vars) = rollout(&m, &store, &mut tape, data.sample(2), 2, 0.2, 0.0, &mut ActionSource::Sample(&mut rng)).unwrap();
    let zeros = vec![0.0; traj.checkpoints.len()];
    let loss = loss_filter(&mut tape, &vars.log_probs, &zeros);
    store.zero_grads();
    tape.backward(loss, 1.0).accumulate(&tape, &mut store);
    assert!(store.iter().all(|t| t.grads.iter().all(|&g| g == 0.0)));
}

#[test]
fn stop_and_baseline_losses_touch_only_their_heads() {
    let (m, mut store) = model();
    let data = synth(1, 0.1, 0);
    let stop_names: Vec<String> = m.stop.0.param_ids().iter().map(|&i| store.get(i).name.clone()).collect();
    let base_names: Vec<String> = m.baseline.0.param_ids().iter().map(|&i| store.get(i).name.clone()).collect();
    for (which, owned) in [("stop", &stop_names), ("baseline", &base_names)] {
        let mut tape = Tape::new();
        let (traj, vars) = rollout(&m, &store, &mut tape, data.sample(5), 5, 0.2, 0.0, &mut ActionSource::Mean).unwrap();
        let n = traj.checkpoints.len();
        let loss = if which == "stop" {
            loss_stop(&mut tape, &vars.stops, &vec![1.0; n])
        } else {
            loss_baseline(&mut tape, &vars.baselines, &vec![0.7; n])
        };
        store.zero_grads();
        tape.backward(loss, 1.0).accumulate(&tape, &mut store);
        let mut touched = 0;
        for t in store.iter() {
            if t.grads.iter().any(|&g| g != 0.0) {
                assert!(owned.contains(&t.name), "{which} loss reached {}", t.name);
                touched += 1;
            }
        }
        assert!(touched > 0);
    }
}

#[test]
fn positive_advantage_raises_log_probability() {
    let (m, mut store) = model();
    let data = synth(1, 0.1, 0);
    let replay = [0.62, 0.41, 0.3];
    let log_prob = |store: &ParamStore| {
        let mut tape = Tape::new();
        let (traj, _) = rollout(&m, store, &mut tape, data.sample(6), 6, 0.2, 0.0, &mut ActionSource::Replay(&replay)).unwrap();
        traj.checkpoints[0].log_prob
    };
    let before = log_prob(&store);
    let mut tape = Tape::new();
    let (_, vars) = rollout(&m, &store, &mut tape, data.sample(6), 6, 0.2, 0.0, &mut ActionSource::Replay(&replay)).unwrap();
    let loss = loss_filter(&mut tape, &vars.log_probs[..1], &[1.0]);
    store.zero_grads();
    tape.backward(loss, 1.0).accumulate(&tape, &mut store);
    for t in store.iter_mut() {
        for (v, g) in t.values.iter_mut().zip(&t.grads) {
            *v -= 1e-3 * g;
        }
    }
    assert!(log_prob(&store) > before);
}

#[test]
fn intermediate_predictions_match_truncated_masks() {
    let (m, store) = model();
    let data = synth(2, 0.1, 1);
    let replay = [0.8, 0.55, 0.3];
    for i in 0..data.len() {
        let mut tape = Tape::new();
        let (traj, _) = rollout(&m, &store, &mut tape, data.sample(i), data.labels()[i], 0.2, 0.0, &mut ActionSource::Replay(&replay)).unwrap();
        let full = traj.utilization.clone();
        for (n, c) in traj.checkpoints.iter().enumerate() {
            let mut u = full[..=n].to_vec();
            u.resize(full.len(), 0.0);
            let masked = mask_apply(data.sample(i), &u, &m.groups, &m.slices, 0.0).unwrap();
            assert_eq!(c.intermediate_prediction, m.classifier.predict(&store, &masked).unwrap());
            assert!((c.intermediate_cost - u.iter().sum::<f64>()).abs() < 1e-12);
        }
    }
}

#[test]
fn mean_action_rollout_matches_inference_without_stop() {
    let (m, mut store) = model();
    // silence the stop head
    let (w, b) = m.stop.0.last_layer();
    store.get_mut(w).values.iter_mut().for_each(|v| *v = 0.0);
    store.get_mut(b).values[0] = -60.0;
    let data = synth(2, 0.1, 2);
    for i in 0..data.len() {
        let mut tape = Tape::new();
        let (traj, _) = rollout(&m, &store, &mut tape, data.sample(i), data.labels()[i], 0.0, 0.0, &mut ActionSource::Mean).unwrap();
        let trace = run_episode_eval(&m, &store, data.sample(i), data.labels()[i], i, 0.0, 0.0).unwrap();
        assert_eq!(traj.utilization, trace.utilization);
        assert_eq!(traj.final_prediction, trace.prediction);
        assert!(traj.checkpoints.iter().all(|c| c.state.len() == m.state_len()));
    }
}

#[test]
fn episode_losses_are_finite_and_returns_discount() {
    let (m, store) = model();
    let data = synth(2, 0.1, 3);
    let cfg = small_cfg();
    let mut rng = RngStream::new(1, Stream::Beta, 0);
    for i in 0..data.len() {
        let ep = episode_loss(&m, &store, data.sample(i), data.labels()[i], &cfg, &mut ActionSource::Sample(&mut rng)).unwrap();
        assert!(ep.terms.all_finite());
        assert!(ep.tape.scalar(ep.total).is_finite());
        let r = returns(ep.trajectory.reward.total, ep.trajectory.checkpoints.len(), cfg.gamma);
        assert_eq!(*r.last().unwrap(), ep.trajectory.reward.total);
    }
}
