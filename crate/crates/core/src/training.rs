//! Policy-gradient training of the encoder, heads and classifier.
//!
//! Every episode is recorded on its own tape. The filter head is trained with
//! REINFORCE on the discounted terminal reward minus a learned baseline, the
//! baseline by squared error, the stop head by binary cross-entropy against
//! labels derived from per-checkpoint stopping rewards, and the classifier by
//! cross-entropy on the masked input (plus the unmasked input when wrong).

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{mask_with_counts, slice_boundaries, split_train_val, znormalize, Dataset};
use crate::episode::{savings_reward, total_reward, ActionOutcome, Episode, RewardBreakdown, Termination};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, f1_macro};
use crate::models::{argmax, Architecture, Charlee, Classifier, DeskClassifier, ModelSidecar, TapeEncoding};
use crate::numerics::beta::BETA_EPS;
use crate::numerics::{beta_mean, beta_sample, AdamState, ParamStore, RngStream, Stream, Tape, Var};
use crate::ranking::{group_channels, weighted_rank};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub delta: f64,
    pub gamma: f64,
    pub epochs: usize,
    /// Classifier-only epochs on unmasked samples before policy training.
    pub warmup_epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub n_checkpoints: usize,
    /// Defaults to `min(C, 10)`.
    pub n_groups: Option<usize>,
    pub w_last: f64,
    /// Per-sample, per-channel z-normalization before anything else.
    pub normalize: bool,
    pub mask_value: f64,
    pub val_fraction: f64,
    pub kernels_per_group: usize,
    pub kernel_len: usize,
    pub head_hidden: Vec<usize>,
    pub classifier_maps: usize,
    pub classifier_kernel: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            delta: 0.2,
            gamma: 0.99,
            epochs: 100,
            warmup_epochs: 20,
            minibatch: 32,
            learning_rate: 1e-3,
            seed: 0,
            n_checkpoints: 4,
            n_groups: None,
            w_last: 0.1,
            normalize: true,
            mask_value: 0.0,
            val_fraction: 0.2,
            kernels_per_group: 8,
            kernel_len: 9,
            head_hidden: vec![64, 64],
            classifier_maps: 32,
            classifier_kernel: 9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta {} outside [0, 1]", self.delta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if self.minibatch == 0 || self.n_checkpoints == 0 {
            return bad("minibatch and checkpoint count must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("validation fraction {} outside (0, 1)", self.val_fraction));
        }
        Ok(())
    }

    pub fn architecture(&self, n_channels: usize, series_len: usize, n_classes: usize) -> Architecture {
        Architecture {
            n_channels,
            series_len,
            n_classes,
            n_checkpoints: self.n_checkpoints,
            kernels_per_group: self.kernels_per_group,
            kernel_len: self.kernel_len,
            head_hidden: self.head_hidden.clone(),
            classifier_maps: self.classifier_maps,
            classifier_kernel: self.classifier_kernel,
        }
    }
}

/// Where filter actions come from during a rollout.
pub enum ActionSource<'a> {
    /// Draw from the Beta distribution.
    Sample(&'a mut RngStream),
    /// Take the distribution mean.
    Mean,
    /// Replay recorded raw draws, one per checkpoint.
    Replay(&'a [f64]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub state: Vec<f64>,
    pub raw_sample: f64,
    pub alpha: f64,
    pub beta: f64,
    pub log_prob: f64,
    pub snapped_fraction: f64,
    pub baseline: f64,
    pub stop_prob: f64,
    /// Prediction on the input observed up to this checkpoint.
    pub intermediate_prediction: usize,
    /// Cost of stopping here.
    pub intermediate_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub checkpoints: Vec<CheckpointRecord>,
    pub utilization: Vec<f64>,
    pub termination: Termination,
    pub final_prediction: usize,
    pub label: usize,
    pub reward: RewardBreakdown,
}

/// Tape nodes of a rollout that the losses are built from.
pub struct RolloutVars {
    pub log_probs: Vec<Var>,
    pub baselines: Vec<Var>,
    pub stops: Vec<Var>,
    pub final_logits: Var,
}

/// Runs one training episode with the stop head recorded but not acted on.
pub fn rollout(
    model: &Charlee,
    store: &ParamStore,
    tape: &mut Tape,
    sample: &[f64],
    label: usize,
    delta: f64,
    mask_value: f64,
    actions: &mut ActionSource,
) -> Result<(Trajectory, RolloutVars)> {
    let s = model.n_slices();
    let g = model.groups.n_groups;
    let mut episode = Episode::new(model.qset.clone(), s)?;
    let mut enc = TapeEncoding::default();
    model
        .encoder
        .encode_slice_tape(tape, store, &mut enc, sample, model.slices.boundaries[0], &vec![true; g])?;
    let mut kept_counts = vec![g];
    let mut history = Vec::new();
    let mut records = Vec::new();
    let (mut log_probs, mut baselines, mut stops) = (Vec::new(), Vec::new(), Vec::new());
    loop {
        let n = episode.checkpoint();
        let state = model.state_tape(tape, &enc, &history, n)?;
        let (a, b) = model.filter.forward_tape(tape, store, state)?;
        let (alpha, beta) = (tape.scalar(a), tape.scalar(b));
        let raw = match actions {
            ActionSource::Sample(rng) => beta_sample(alpha, beta, *rng)?,
            ActionSource::Mean => beta_mean(alpha, beta).clamp(BETA_EPS, 1.0 - BETA_EPS),
            ActionSource::Replay(draws) => *draws
                .get(n - 1)
                .ok_or_else(|| Error::Input(format!("no recorded action for checkpoint {n}")))?,
        };
        let lp = tape.beta_log_prob(raw, a, b)?;
        let outcome = ActionOutcome::new(episode.kept(), raw, &model.qset, false)?;
        let frozen = tape.detach(state);
        let bv = model.baseline.forward_tape(tape, store, frozen)?;
        let sv = model.stop.forward_tape(tape, store, frozen, outcome.snapped_fraction)?;

        let mut counts = kept_counts.clone();
        counts.resize(s, 0);
        let masked = mask_with_counts(sample, &counts, &model.groups, &model.slices, mask_value)?;
        records.push(CheckpointRecord {
            state: tape.value(state).to_vec(),
            raw_sample: raw,
            alpha,
            beta,
            log_prob: tape.scalar(lp),
            snapped_fraction: outcome.snapped_fraction,
            baseline: tape.scalar(bv),
            stop_prob: tape.scalar(sv),
            intermediate_prediction: model.classifier.predict(store, &masked)?,
            intermediate_cost: episode.cost(),
        });
        log_probs.push(lp);
        baselines.push(bv);
        stops.push(sv);
        history.push(outcome.snapped_fraction);

        let next = episode.step(outcome)?;
        kept_counts = episode
            .observed()
            .iter()
            .map(|&f| model.groups.groups_for_fraction(f))
            .collect::<Result<_>>()?;
        match next {
            Some(f) => {
                let slice = model.slices.boundaries[episode.checkpoint() - 1];
                let active = model.active_groups(f)?;
                model.encoder.encode_slice_tape(tape, store, &mut enc, sample, slice, &active)?;
            }
            None => break,
        }
    }
    let mut counts = kept_counts;
    counts.resize(s, 0);
    let masked = mask_with_counts(sample, &counts, &model.groups, &model.slices, mask_value)?;
    let xv = tape.input(masked);
    let logits = model.classifier.forward_tape(tape, store, xv)?;
    let prediction = argmax(tape.value(logits));
    let vars = RolloutVars {
        log_probs,
        baselines,
        stops,
        final_logits: logits,
    };
    let reward = total_reward(prediction == label, episode.cost(), s, delta)?;
    let trajectory = Trajectory {
        checkpoints: records,
        utilization: episode.utilization(),
        termination: episode.termination().expect("loop ends on a terminal episode"),
        final_prediction: prediction,
        label,
        reward,
    };
    Ok((trajectory, vars))
}

/// Discounted terminal reward at each of `n_checkpoints` decisions.
pub fn returns(reward: f64, n_checkpoints: usize, gamma: f64) -> Vec<f64> {
    (0..n_checkpoints)
        .map(|n| gamma.powi((n_checkpoints - 1 - n) as i32) * reward)
        .collect()
}

/// 1 where the stopping reward beats every later one; the last entry is always 1.
pub fn stop_labels(r_stop: &[f64]) -> Vec<f64> {
    let mut labels = vec![0.0; r_stop.len()];
    let mut best_later = f64::NEG_INFINITY;
    for i in (0..r_stop.len()).rev() {
        if r_stop[i] > best_later {
            labels[i] = 1.0;
        }
        best_later = best_later.max(r_stop[i]);
    }
    labels
}

/// Reward of stopping at every checkpoint of `trajectory`, followed by the
/// final reward when the episode ran out of slices.
pub fn stop_rewards(trajectory: &Trajectory, delta: f64, n_slices: usize) -> Result<Vec<f64>> {
    let mut out = trajectory
        .checkpoints
        .iter()
        .map(|c| {
            let r_class = if c.intermediate_prediction == trajectory.label { 1.0 } else { -1.0 };
            Ok((1.0 - delta) * r_class + delta * savings_reward(c.intermediate_cost, n_slices)?)
        })
        .collect::<Result<Vec<_>>>()?;
    if trajectory.termination == Termination::Exhausted {
        out.push(trajectory.reward.total);
    }
    Ok(out)
}

/// `−Σ log π · advantage`, advantages held constant.
pub fn loss_filter(tape: &mut Tape, log_probs: &[Var], advantages: &[f64]) -> Var {
    let terms: Vec<(Var, f64)> = log_probs.iter().zip(advantages).map(|(&v, &a)| (v, -a)).collect();
    tape.lin_comb(&terms)
}

/// Mean squared error between baseline outputs and returns.
pub fn loss_baseline(tape: &mut Tape, baselines: &[Var], returns: &[f64]) -> Var {
    let sq: Vec<Var> = baselines.iter().zip(returns).map(|(&b, &r)| tape.squared_error(b, r)).collect();
    mean(tape, &sq)
}

/// Mean binary cross-entropy of stop probabilities against labels.
pub fn loss_stop(tape: &mut Tape, stops: &[Var], labels: &[f64]) -> Var {
    let terms: Vec<Var> = stops.iter().zip(labels).map(|(&s, &l)| tape.bce(s, l)).collect();
    mean(tape, &terms)
}

fn mean(tape: &mut Tape, terms: &[Var]) -> Var {
    let w = 1.0 / terms.len().max(1) as f64;
    let t: Vec<(Var, f64)> = terms.iter().map(|&v| (v, w)).collect();
    tape.lin_comb(&t)
}

/// Cross-entropy on the masked input, plus on the full input when the
/// masked prediction was wrong. Returns `(l_acc, l_full)`.
pub fn loss_classification(
    tape: &mut Tape,
    classifier: &dyn Classifier,
    store: &ParamStore,
    final_logits: Var,
    full_sample: &[f64],
    label: usize,
) -> Result<(Var, Option<Var>)> {
    let l_acc = tape.softmax_cross_entropy(final_logits, label)?;
    if argmax(tape.value(final_logits)) == label {
        return Ok((l_acc, None));
    }
    let x = tape.input(full_sample.to_vec());
    let z = classifier.forward_tape(tape, store, x)?;
    Ok((l_acc, Some(tape.softmax_cross_entropy(z, label)?)))
}

/// Per-episode loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub acc: f64,
    pub full: f64,
    pub filter: f64,
    pub baseline: f64,
    pub stop: f64,
}

impl LossTerms {
    pub fn all_finite(&self) -> bool {
        [self.acc, self.full, self.filter, self.baseline, self.stop].iter().all(|v| v.is_finite())
    }

    fn add_scaled(&mut self, o: &LossTerms, w: f64) {
        self.acc += w * o.acc;
        self.full += w * o.full;
        self.filter += w * o.filter;
        self.baseline += w * o.baseline;
        self.stop += w * o.stop;
    }
}

pub struct EpisodeLoss {
    pub tape: Tape,
    pub total: Var,
    pub terms: LossTerms,
    pub trajectory: Trajectory,
}

/// Rolls out one episode and records the summed loss on its tape.
pub fn episode_loss(
    model: &Charlee,
    store: &ParamStore,
    sample: &[f64],
    label: usize,
    cfg: &TrainConfig,
    actions: &mut ActionSource,
) -> Result<EpisodeLoss> {
    let mut tape = Tape::new();
    let (trajectory, vars) = rollout(model, store, &mut tape, sample, label, cfg.delta, cfg.mask_value, actions)?;
    let rets = returns(trajectory.reward.total, trajectory.checkpoints.len(), cfg.gamma);
    let adv: Vec<f64> = rets.iter().zip(&trajectory.checkpoints).map(|(r, c)| r - c.baseline).collect();
    let l_filter = loss_filter(&mut tape, &vars.log_probs, &adv);
    let l_base = loss_baseline(&mut tape, &vars.baselines, &rets);
    let labels = stop_labels(&stop_rewards(&trajectory, cfg.delta, model.n_slices())?);
    let l_stop = loss_stop(&mut tape, &vars.stops, &labels[..vars.stops.len()]);
    let (l_acc, l_full) = loss_classification(&mut tape, &model.classifier, store, vars.final_logits, sample, label)?;
    let mut parts = vec![(l_acc, 1.0), (l_filter, 1.0), (l_base, 1.0), (l_stop, 1.0)];
    if let Some(f) = l_full {
        parts.push((f, 1.0));
    }
    let total = tape.lin_comb(&parts);
    let terms = LossTerms {
        acc: tape.scalar(l_acc),
        full: l_full.map_or(0.0, |f| tape.scalar(f)),
        filter: tape.scalar(l_filter),
        baseline: tape.scalar(l_base),
        stop: tape.scalar(l_stop),
    };
    Ok(EpisodeLoss {
        tape,
        total,
        terms,
        trajectory,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_acc: f64,
    pub loss_full: f64,
    pub loss_filter: f64,
    pub loss_baseline: f64,
    pub loss_stop: f64,
    pub train_reward: f64,
    pub val_reward: f64,
    pub val_f1: f64,
    pub val_savings: f64,
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Everything needed to continue training after an interruption.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epochs_done: usize,
    pub params: ParamStore,
    pub best: ParamStore,
    pub best_score: f64,
    pub best_epoch: usize,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    epochs_done: usize,
    best_score: f64,
    best_epoch: usize,
    adam_step: u64,
    learning_rate: f64,
    history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn fresh(params: ParamStore, lr: f64) -> Self {
        TrainState {
            epochs_done: 0,
            adam: AdamState::new(&params, lr),
            best: params.clone(),
            params,
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            history: Vec::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.params.save(&dir.join("last.bin"))?;
        self.best.save(&dir.join("best.bin"))?;
        self.adam.moments_as_store(&self.params)?.save(&dir.join("optimizer.bin"))?;
        let meta = StateMeta {
            epochs_done: self.epochs_done,
            best_score: self.best_score,
            best_epoch: self.best_epoch,
            adam_step: self.adam.step,
            learning_rate: self.adam.lr,
            history: self.history.clone(),
        };
        std::fs::write(dir.join("train_state.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join("train_state.json").is_file()
    }

    /// Loads a saved state into stores shaped like `template`.
    pub fn load(dir: &Path, template: &ParamStore) -> Result<Self> {
        let meta: StateMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("train_state.json"))?)?;
        let mut params = template.clone();
        params.copy_values_from(&ParamStore::load(&dir.join("last.bin"))?)?;
        params.zero_grads();
        let mut best = template.clone();
        best.copy_values_from(&ParamStore::load(&dir.join("best.bin"))?)?;
        let mut adam = AdamState::new(&params, meta.learning_rate);
        adam.restore_moments(&params, &ParamStore::load(&dir.join("optimizer.bin"))?)?;
        adam.step = meta.adam_step;
        Ok(TrainState {
            epochs_done: meta.epochs_done,
            params,
            best,
            best_score: meta.best_score,
            best_epoch: meta.best_epoch,
            adam,
            history: meta.history,
        })
    }
}

fn dump_nonfinite(dir: Option<&Path>, store: &ParamStore, what: &str) -> Error {
    if let Some(dir) = dir {
        let _ = std::fs::create_dir_all(dir);
        let _ = store.save(&dir.join("nonfinite_params.bin"));
        if let Ok(mut f) = std::fs::File::create(dir.join("nonfinite.txt")) {
            let _ = writeln!(f, "{what}");
            for t in store.iter() {
                let bad = t.values.iter().chain(&t.grads).filter(|v| !v.is_finite()).count();
                let _ = writeln!(f, "{} non-finite entries: {bad}", t.name);
            }
        }
    }
    Error::Numeric(what.to_string())
}

/// Runs the remaining epochs of `state` on `train`, selecting parameters by
/// mean validation reward. With `state_dir`, the state is saved after every epoch.
pub fn train(
    model: &Charlee,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut state: TrainState,
    state_dir: Option<&Path>,
) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input("training and validation splits must be nonempty".into()));
    }
    for epoch in state.epochs_done..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut RngStream::new(cfg.seed, Stream::Shuffle, epoch as u32));
        let mut beta_rng = RngStream::new(cfg.seed, Stream::Beta, epoch as u32);
        let mut sums = LossTerms::default();
        let mut reward_sum = 0.0;
        for batch in order.chunks(cfg.minibatch) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ep = episode_loss(
                    model,
                    &state.params,
                    train_set.sample(i),
                    train_set.labels()[i],
                    cfg,
                    &mut ActionSource::Sample(&mut beta_rng),
                )?;
                if !ep.terms.all_finite() {
                    return Err(dump_nonfinite(
                        state_dir,
                        &state.params,
                        &format!("non-finite loss {:?} at epoch {epoch}, sample {i}", ep.terms),
                    ));
                }
                ep.tape.backward(ep.total, scale).accumulate(&ep.tape, &mut state.params);
                sums.add_scaled(&ep.terms, 1.0);
                reward_sum += ep.trajectory.reward.total;
            }
            state.adam.step(&mut state.params);
            if !state.params.all_finite() {
                return Err(dump_nonfinite(
                    state_dir,
                    &state.params,
                    &format!("non-finite parameters after an update in epoch {epoch}"),
                ));
            }
        }
        let n = train_set.len() as f64;
        let mut mean_terms = LossTerms::default();
        mean_terms.add_scaled(&sums, 1.0 / n);
        let report = evaluate(model, &state.params, val_set, cfg.delta, cfg.mask_value)?;
        let rec = EpochRecord {
            epoch,
            loss_acc: mean_terms.acc,
            loss_full: mean_terms.full,
            loss_filter: mean_terms.filter,
            loss_baseline: mean_terms.baseline,
            loss_stop: mean_terms.stop,
            train_reward: reward_sum / n,
            val_reward: report.mean_reward,
            val_f1: report.macro_f1,
            val_savings: report.mean_savings,
        };
        log::info!(
            "epoch {epoch}: train reward {:.4}, val reward {:.4}, val f1 {:.4}, val savings {:.4}",
            rec.train_reward,
            rec.val_reward,
            rec.val_f1,
            rec.val_savings
        );
        if report.mean_reward > state.best_score {
            state.best_score = report.mean_reward;
            state.best_epoch = epoch;
            state.best = state.params.clone();
        }
        state.history.push(rec);
        state.epochs_done = epoch + 1;
        if let Some(dir) = state_dir {
            state.save(dir)?;
        }
    }
    Ok(state)
}

/// Trains only the classifier on unmasked samples, with its own optimizer state.
pub fn warmup_classifier(model: &Charlee, store: &mut ParamStore, train_set: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let mut adam = AdamState::new(store, cfg.learning_rate);
    for epoch in 0..cfg.warmup_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut RngStream::new(cfg.seed, Stream::Warmup, epoch as u32));
        for batch in order.chunks(cfg.minibatch) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new();
                let x = tape.input(train_set.sample(i).to_vec());
                let z = model.classifier.forward_tape(&mut tape, store, x)?;
                let loss = tape.softmax_cross_entropy(z, train_set.labels()[i])?;
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::Numeric(format!("non-finite warmup loss at epoch {epoch}")));
                }
                tape.backward(loss, scale).accumulate(&tape, store);
            }
            adam.step(store);
        }
    }
    Ok(())
}

/// A trained model with everything needed to evaluate it.
pub struct Fitted {
    pub model: Charlee,
    /// Parameters of the best validation epoch.
    pub params: ParamStore,
    pub sidecar: ModelSidecar,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Normalises (if configured), splits, ranks, groups, builds and trains.
/// With `state_dir`, an existing saved state there is resumed.
pub fn fit(dataset: &Dataset, cfg: &TrainConfig, state_dir: Option<&Path>) -> Result<Fitted> {
    cfg.validate()?;
    let data = if cfg.normalize { znormalize(dataset) } else { dataset.clone() };
    let (train_set, val_set) = split_train_val(&data, cfg.val_fraction, cfg.seed)?;
    let slices = slice_boundaries(data.series_len(), cfg.n_checkpoints)?;
    let ranking = weighted_rank(&train_set, &slices, cfg.w_last)?;
    let n_groups = cfg.n_groups.unwrap_or(data.n_channels().min(10));
    let groups = group_channels(&ranking, n_groups)?;
    let arch = cfg.architecture(data.n_channels(), data.series_len(), data.n_classes());
    let (model, params) = Charlee::new(arch.clone(), groups.clone(), slices.clone(), cfg.seed)?;
    let state = match state_dir {
        Some(dir) if TrainState::exists(dir) => TrainState::load(dir, &params)?,
        _ => {
            let mut params = params;
            warmup_classifier(&model, &mut params, &train_set, cfg)?;
            TrainState::fresh(params, cfg.learning_rate)
        }
    };
    let state = train(&model, &train_set, &val_set, cfg, state, state_dir)?;
    let sidecar = ModelSidecar {
        arch,
        groups,
        slices,
        ranking,
        class_names: data.class_names().to_vec(),
        normalize: cfg.normalize,
        mask_value: cfg.mask_value,
        seed: cfg.seed,
    };
    Ok(Fitted {
        model,
        params: state.best,
        sidecar,
        history: state.history,
        best_epoch: state.best_epoch,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub maps: usize,
    pub kernel_len: usize,
    pub val_fraction: f64,
    pub normalize: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 100,
            minibatch: 32,
            learning_rate: 1e-3,
            maps: 32,
            kernel_len: 9,
            val_fraction: 0.2,
            normalize: true,
        }
    }
}

/// Trains a standalone desk classifier, keeping the epoch with the best
/// validation macro F1. Returns the classifier and its parameters.
pub fn train_classifier(dataset: &Dataset, cfg: &ClassifierConfig, seed: u64) -> Result<(DeskClassifier, ParamStore)> {
    if cfg.minibatch == 0 {
        return Err(Error::Config("minibatch must be positive".into()));
    }
    let (train_set, val_set) = split_train_val(dataset, cfg.val_fraction, seed)?;
    let mut store = ParamStore::new();
    let mut rng = RngStream::new(seed, Stream::Init, 1);
    let clf = DeskClassifier::new(
        &mut store,
        dataset.n_channels(),
        dataset.series_len(),
        dataset.n_classes(),
        cfg.maps,
        cfg.kernel_len,
        &mut rng,
    )?;
    let mut adam = AdamState::new(&store, cfg.learning_rate);
    let mut best = store.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut RngStream::new(seed, Stream::Shuffle, epoch as u32));
        for batch in order.chunks(cfg.minibatch) {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new();
                let x = tape.input(train_set.sample(i).to_vec());
                let z = clf.forward_tape(&mut tape, &store, x)?;
                let loss = tape.softmax_cross_entropy(z, train_set.labels()[i])?;
                if !tape.scalar(loss).is_finite() {
                    return Err(Error::Numeric(format!("non-finite classifier loss at epoch {epoch}")));
                }
                tape.backward(loss, scale).accumulate(&tape, &mut store);
            }
            adam.step(&mut store);
        }
        let preds = (0..val_set.len())
            .map(|i| clf.predict(&store, val_set.sample(i)))
            .collect::<Result<Vec<_>>>()?;
        let f1 = f1_macro(&preds, val_set.labels(), dataset.n_classes());
        if f1 > best_f1 {
            best_f1 = f1;
            best = store.clone();
        }
    }
    Ok((clf, best))
}
