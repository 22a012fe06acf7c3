//! Inference-mode episodes, metrics, the time-only baseline and comparisons.

use serde::{Deserialize, Serialize};

use crate::data::synthetic::IdealTable;
use crate::data::{mask_apply, slice_columns, truncate, truncated_len, znormalize, Dataset};
use crate::episode::{total_reward, ActionOutcome, Episode, EpisodeTrace};
use crate::error::{Error, Result};
use crate::models::{state_vector, Charlee, Classifier, RunningStats};
use crate::numerics::beta::BETA_EPS;
use crate::numerics::{beta_mean, ParamStore};
use crate::training::{train_classifier, ClassifierConfig};

/// Stop-head threshold for a savings factor.
pub fn stop_threshold(delta: f64) -> f64 {
    (1.0 - delta).clamp(0.05, 0.999)
}

/// Deterministic episode: mean filter action, stop head active.
pub fn run_episode_eval(
    model: &Charlee,
    store: &ParamStore,
    sample: &[f64],
    label: usize,
    sample_id: usize,
    delta: f64,
    mask_value: f64,
) -> Result<EpisodeTrace> {
    let s = model.n_slices();
    let t = model.arch.series_len;
    let tau = stop_threshold(delta);
    let mut episode = Episode::new(model.qset.clone(), s)?;
    let mut stats = RunningStats::new(&model.encoder);
    let (a0, b0) = model.slices.boundaries[0];
    stats.encode_slice(
        &model.encoder,
        store,
        &slice_columns(sample, t, a0, b0),
        &vec![true; model.groups.n_groups],
    )?;
    let mut history = Vec::new();
    loop {
        let n = episode.checkpoint();
        let state = state_vector(&stats.derived(), &history, n, model.arch.n_checkpoints)?;
        let (alpha, beta) = model.filter.forward(store, &state)?;
        let raw = beta_mean(alpha, beta).clamp(BETA_EPS, 1.0 - BETA_EPS);
        let mut outcome = ActionOutcome::new(episode.kept(), raw, &model.qset, false)?;
        outcome.stopped = model.stop.forward(store, &state, outcome.snapped_fraction)? > tau;
        history.push(outcome.snapped_fraction);
        match episode.step(outcome)? {
            Some(f) => {
                let (a, b) = model.slices.boundaries[episode.checkpoint() - 1];
                let active = model.active_groups(f)?;
                stats.encode_slice(&model.encoder, store, &slice_columns(sample, t, a, b), &active)?;
            }
            None => break,
        }
    }
    let utilization = episode.utilization();
    let masked = mask_apply(sample, &utilization, &model.groups, &model.slices, mask_value)?;
    let prediction = model.classifier.predict(store, &masked)?;
    Ok(EpisodeTrace {
        sample_id,
        cost: episode.cost(),
        savings: episode.savings(),
        stop_checkpoint: episode.stop_checkpoint(),
        prediction,
        label,
        reward: total_reward(prediction == label, episode.cost(), s, delta)?,
        utilization,
    })
}

/// Unweighted mean of per-class F1 over `n_classes` classes.
pub fn f1_macro(predictions: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    if n_classes == 0 {
        return 0.0;
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[l] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let sum: f64 = (0..n_classes)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fn_[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .sum();
    sum / n_classes as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub macro_f1: f64,
    pub accuracy: f64,
    pub mean_savings: f64,
    pub mean_reward: f64,
    /// Mean utilization vector per class (empty for classes without samples).
    pub per_class_utilization: Vec<Vec<f64>>,
    pub class_names: Vec<String>,
    pub delta: f64,
    pub mask_value: f64,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub traces: Vec<EpisodeTrace>,
}

impl EvalReport {
    pub fn from_traces(traces: Vec<EpisodeTrace>, class_names: &[String], delta: f64, mask_value: f64) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::Input("cannot evaluate an empty dataset".into()));
        }
        let n = traces.len() as f64;
        let k = class_names.len();
        let preds: Vec<usize> = traces.iter().map(|t| t.prediction).collect();
        let labels: Vec<usize> = traces.iter().map(|t| t.label).collect();
        let s = traces[0].utilization.len();
        let mut sums = vec![vec![0.0; s]; k];
        let mut counts = vec![0usize; k];
        for t in &traces {
            counts[t.label] += 1;
            for (acc, u) in sums[t.label].iter_mut().zip(&t.utilization) {
                *acc += u;
            }
        }
        let per_class_utilization = sums
            .into_iter()
            .zip(&counts)
            .map(|(v, &c)| if c == 0 { Vec::new() } else { v.into_iter().map(|x| x / c as f64).collect() })
            .collect();
        Ok(EvalReport {
            macro_f1: f1_macro(&preds, &labels, k),
            accuracy: preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / n,
            mean_savings: traces.iter().map(|t| t.savings).sum::<f64>() / n,
            mean_reward: traces.iter().map(|t| t.reward.total).sum::<f64>() / n,
            per_class_utilization,
            class_names: class_names.to_vec(),
            delta,
            mask_value,
            seed: None,
            traces,
        })
    }
}

/// Runs [`run_episode_eval`] on every sample of an already preprocessed dataset.
pub fn evaluate(model: &Charlee, store: &ParamStore, dataset: &Dataset, delta: f64, mask_value: f64) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot evaluate an empty dataset".into()));
    }
    if dataset.n_channels() != model.arch.n_channels || dataset.series_len() != model.arch.series_len {
        return Err(Error::Input(format!(
            "dataset is {}x{} but the model expects {}x{}",
            dataset.n_channels(),
            dataset.series_len(),
            model.arch.n_channels,
            model.arch.series_len
        )));
    }
    let traces = (0..dataset.len())
        .map(|i| run_episode_eval(model, store, dataset.sample(i), dataset.labels()[i], i, delta, mask_value))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_traces(traces, dataset.class_names(), delta, mask_value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToeeResult {
    pub target_savings: f64,
    pub kept_len: usize,
    pub seeds: Vec<u64>,
    pub f1_per_seed: Vec<f64>,
    pub mean_f1: f64,
}

/// Time-only early exit: every channel truncated at the same timestep,
/// a standalone classifier trained per seed on the truncated training data.
pub fn toee_baseline(
    train_set: &Dataset,
    test_set: &Dataset,
    target_savings: f64,
    cfg: &ClassifierConfig,
    seeds: &[u64],
) -> Result<ToeeResult> {
    if !(0.0..1.0).contains(&target_savings) {
        return Err(Error::Input(format!("target savings {target_savings} outside [0, 1)")));
    }
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let fraction = 1.0 - target_savings;
    let kept_len = truncated_len(train_set.series_len(), fraction)?;
    let prep = |d: &Dataset| -> Result<Dataset> {
        let d = if cfg.normalize { znormalize(d) } else { d.clone() };
        truncate(&d, fraction)
    };
    let (tr, te) = (prep(train_set)?, prep(test_set)?);
    let mut f1s = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (clf, store) = train_classifier(&tr, cfg, seed)?;
        f1s.push(classifier_f1(&clf, &store, &te)?);
    }
    Ok(ToeeResult {
        target_savings,
        kept_len,
        seeds: seeds.to_vec(),
        mean_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
        f1_per_seed: f1s,
    })
}

pub fn classifier_f1(clf: &dyn Classifier, store: &ParamStore, dataset: &Dataset) -> Result<f64> {
    let preds = (0..dataset.len())
        .map(|i| clf.predict(store, dataset.sample(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(f1_macro(&preds, dataset.labels(), dataset.n_classes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViabilityPoint {
    pub fraction: f64,
    pub accuracy: f64,
}

/// The 20 truncation fractions 0.05, 0.10, …, 1.0.
pub fn viability_fractions() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.05).collect()
}

/// Test accuracy of a classifier trained on each truncated prefix length.
pub fn viability_curve(
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Vec<ViabilityPoint>> {
    viability_fractions()
        .into_iter()
        .map(|fraction| {
            let prep = |d: &Dataset| -> Result<Dataset> {
                let d = if cfg.normalize { znormalize(d) } else { d.clone() };
                truncate(&d, fraction)
            };
            let (tr, te) = (prep(train_set)?, prep(test_set)?);
            let (clf, store) = train_classifier(&tr, cfg, seed)?;
            let correct = (0..te.len())
                .map(|i| Ok(clf.predict(&store, te.sample(i))? == te.labels()[i]))
                .collect::<Result<Vec<bool>>>()?;
            Ok(ViabilityPoint {
                fraction,
                accuracy: correct.iter().filter(|&&c| c).count() as f64 / te.len() as f64,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub class: String,
    pub achieved_utilization: Vec<f64>,
    pub ideal_utilization: Vec<f64>,
    pub l1: f64,
    pub achieved_savings: f64,
    pub ideal_savings: f64,
    pub savings_gap: f64,
}

/// Per class, distance between the achieved mean utilization and the ideal one.
pub fn synthetic_alignment(report: &EvalReport, ideal: &IdealTable) -> Result<Vec<AlignmentRow>> {
    let mut rows = Vec::new();
    for (k, name) in report.class_names.iter().enumerate() {
        let achieved = &report.per_class_utilization[k];
        if achieved.is_empty() {
            continue;
        }
        let entry = ideal
            .get(name)
            .ok_or_else(|| Error::Input(format!("class {name} has no ideal utilization")))?;
        if entry.ideal_utilization.len() != achieved.len() {
            return Err(Error::Input(format!("class {name}: utilization lengths differ")));
        }
        let s = achieved.len() as f64;
        let achieved_savings = (s - achieved.iter().sum::<f64>()) / s;
        rows.push(AlignmentRow {
            class: name.clone(),
            l1: achieved.iter().zip(&entry.ideal_utilization).map(|(a, b)| (a - b).abs()).sum(),
            achieved_utilization: achieved.clone(),
            ideal_utilization: entry.ideal_utilization.clone(),
            achieved_savings,
            ideal_savings: entry.ideal_savings,
            savings_gap: achieved_savings - entry.ideal_savings,
        });
    }
    Ok(rows)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Tie,
    Loss,
}

/// Compares two mean F1 scores with a margin (0.01 in reports).
pub fn verdict(ours: f64, theirs: f64, margin: f64) -> Verdict {
    if ours > theirs + margin {
        Verdict::Win
    } else if theirs > ours + margin {
        Verdict::Loss
    } else {
        Verdict::Tie
    }
}
