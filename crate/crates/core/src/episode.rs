//! The observation environment: quantised filter actions, utilization and
//! cost accounting, rewards, termination, and search-space counting.

use std::io::Write;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRACTION_TOL: f64 = 1e-9;

/// `{0}` plus the cumulative channel fraction of the first `k` groups, ascending.
pub fn quantized_set(group_sizes: &[usize], n_channels: usize) -> Result<Vec<f64>> {
    if group_sizes.iter().sum::<usize>() != n_channels || n_channels == 0 {
        return Err(Error::Config(format!(
            "group sizes {group_sizes:?} do not sum to {n_channels} channels"
        )));
    }
    let mut out = vec![0.0];
    let mut acc = 0;
    for &s in group_sizes {
        acc += s;
        out.push(acc as f64 / n_channels as f64);
    }
    Ok(out)
}

fn position_in(qset: &[f64], value: f64) -> Option<usize> {
    qset.iter().position(|&q| (q - value).abs() < FRACTION_TOL)
}

/// Scales the raw draw by the currently kept fraction and snaps the product
/// to the nearest element of `qset`, resolving ties toward the smaller one.
pub fn apply_filter_action(kept: f64, raw_sample: f64, qset: &[f64]) -> Result<f64> {
    let Some(k) = position_in(qset, kept) else {
        return Err(Error::Invariant(format!("kept fraction {kept} is not in {qset:?}")));
    };
    if !(0.0..=1.0).contains(&raw_sample) {
        return Err(Error::Invariant(format!("raw action {raw_sample} outside [0, 1]")));
    }
    let product = raw_sample * qset[k];
    let mut best = 0;
    for (i, &q) in qset.iter().enumerate().take(k + 1).skip(1) {
        if (q - product).abs() < (qset[best] - product).abs() - 1e-12 {
            best = i;
        }
    }
    Ok(qset[best])
}

/// Sum of per-slice utilizations, optionally weighted per slice.
pub fn inference_cost(utilization: &[f64], weights: Option<&[f64]>) -> f64 {
    match weights {
        Some(w) => utilization.iter().zip(w).map(|(u, w)| u * w).sum(),
        None => utilization.iter().sum(),
    }
}

pub fn savings_fraction(utilization: &[f64], n_slices: usize) -> f64 {
    let s = n_slices as f64;
    (s - inference_cost(utilization, None)) / s
}

/// Maps cost in `[1, S]` linearly onto `[1, −1]`.
pub fn savings_reward(cost: f64, n_slices: usize) -> Result<f64> {
    let s = n_slices as f64;
    if n_slices < 2 || cost < 1.0 - FRACTION_TOL || cost > s + FRACTION_TOL {
        return Err(Error::Invariant(format!("cost {cost} outside [1, {s}]")));
    }
    Ok((1.0 - 2.0 * (cost - 1.0) / (s - 1.0)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_class: f64,
    pub r_savings: f64,
    pub delta: f64,
    pub total: f64,
}

pub fn total_reward(correct: bool, cost: f64, n_slices: usize, delta: f64) -> Result<RewardBreakdown> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Config(format!("savings factor {delta} outside [0, 1]")));
    }
    let r_class = if correct { 1.0 } else { -1.0 };
    let r_savings = savings_reward(cost, n_slices)?;
    Ok(RewardBreakdown {
        r_class,
        r_savings,
        delta,
        total: (1.0 - delta) * r_class + delta * r_savings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub raw_sample: f64,
    pub product: f64,
    pub snapped_fraction: f64,
    pub stopped: bool,
}

impl ActionOutcome {
    pub fn new(kept: f64, raw_sample: f64, qset: &[f64], stopped: bool) -> Result<Self> {
        Ok(ActionOutcome {
            raw_sample,
            product: raw_sample * kept,
            snapped_fraction: apply_filter_action(kept, raw_sample, qset)?,
            stopped,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The filter action kept no channels.
    ZeroFraction,
    /// The stop head fired.
    Stopped,
    /// Every slice was observed.
    Exhausted,
}

/// Step-by-step bookkeeping of one sample's observation schedule.
///
/// Slice 1 is always observed in full. Checkpoint `n` follows slice `n`;
/// its action decides the fraction observed in slice `n + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    qset: Vec<f64>,
    n_slices: usize,
    utilization: Vec<f64>,
    termination: Option<Termination>,
    outcomes: Vec<ActionOutcome>,
}

impl Episode {
    pub fn new(qset: Vec<f64>, n_slices: usize) -> Result<Self> {
        if n_slices < 2 {
            return Err(Error::Config("an episode needs at least two slices".into()));
        }
        Ok(Episode {
            qset,
            n_slices,
            utilization: vec![1.0],
            termination: None,
            outcomes: Vec::new(),
        })
    }

    pub fn qset(&self) -> &[f64] {
        &self.qset
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    /// Current checkpoint (1-based), i.e. number of slices observed so far.
    pub fn checkpoint(&self) -> usize {
        self.utilization.len()
    }

    pub fn kept(&self) -> f64 {
        *self.utilization.last().unwrap()
    }

    pub fn is_terminal(&self) -> bool {
        self.termination.is_some()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    pub fn outcomes(&self) -> &[ActionOutcome] {
        &self.outcomes
    }

    /// Observed utilization so far (no trailing zeros).
    pub fn observed(&self) -> &[f64] {
        &self.utilization
    }

    /// Full-length utilization vector, zero after the stop point.
    pub fn utilization(&self) -> Vec<f64> {
        let mut u = self.utilization.clone();
        u.resize(self.n_slices, 0.0);
        u
    }

    pub fn cost(&self) -> f64 {
        inference_cost(&self.utilization, None)
    }

    pub fn savings(&self) -> f64 {
        savings_fraction(&self.utilization, self.n_slices)
    }

    /// Checkpoint at which processing ended early, if it did.
    pub fn stop_checkpoint(&self) -> Option<usize> {
        match self.termination {
            Some(Termination::ZeroFraction | Termination::Stopped) => Some(self.checkpoint()),
            _ => None,
        }
    }

    /// Applies the outcome of the current checkpoint's action. Returns the
    /// fraction to observe in the next slice, or `None` once terminal.
    pub fn step(&mut self, outcome: ActionOutcome) -> Result<Option<f64>> {
        if self.is_terminal() {
            return Err(Error::State("step on a terminated episode".into()));
        }
        let f = outcome.snapped_fraction;
        if position_in(&self.qset, f).is_none() || f > self.kept() + FRACTION_TOL {
            return Err(Error::Invariant(format!(
                "fraction {f} is not a grid point at or below {}",
                self.kept()
            )));
        }
        self.outcomes.push(outcome);
        if outcome.stopped {
            self.termination = Some(Termination::Stopped);
            return Ok(None);
        }
        if f == 0.0 {
            self.termination = Some(Termination::ZeroFraction);
            return Ok(None);
        }
        self.utilization.push(f);
        if self.utilization.len() == self.n_slices {
            self.termination = Some(Termination::Exhausted);
            return Ok(None);
        }
        Ok(Some(f))
    }
}

/// One JSON line per evaluated sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub sample_id: usize,
    pub utilization: Vec<f64>,
    pub cost: f64,
    pub savings: f64,
    pub stop_checkpoint: Option<usize>,
    pub prediction: usize,
    pub label: usize,
    pub reward: RewardBreakdown,
}

pub fn write_traces(traces: &[EpisodeTrace], mut w: impl Write) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_traces(text: &str) -> Result<Vec<EpisodeTrace>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Number of per-timestep channel-subset paths: `(2^C)^T`.
pub fn count_paths_unconstrained(n_channels: u32, n_timesteps: u32) -> BigUint {
    BigUint::from(1u8) << (n_channels as u64 * n_timesteps as u64)
}

/// Number of non-increasing sequences `k_1 ≥ … ≥ k_N` with `k_n ∈ {0..G}`.
pub fn count_paths_constrained(n_groups: usize, n_checkpoints: usize) -> BigUint {
    // ways[k] = sequences so far ending at value k
    let mut ways: Vec<BigUint> = vec![BigUint::from(1u8); n_groups + 1];
    for _ in 1..n_checkpoints {
        let mut next = vec![BigUint::from(0u8); n_groups + 1];
        let mut running = BigUint::from(0u8);
        for k in (0..=n_groups).rev() {
            running += &ways[k];
            next[k] = running.clone();
        }
        ways = next;
    }
    ways.into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const Q4: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

    #[test]
    fn quantized_sets() {
        assert_eq!(quantized_set(&[1, 1, 1, 1], 4).unwrap(), Q4.to_vec());
        let q = quantized_set(&[4, 3, 3], 10).unwrap();
        assert_eq!(q.len(), 4);
        for (a, b) in q.iter().zip([0.0, 0.4, 0.7, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(quantized_set(&[7], 7).unwrap(), vec![0.0, 1.0]);
        assert!(quantized_set(&[1, 1], 3).is_err());
    }

    #[test]
    fn snapping() {
        assert_eq!(apply_filter_action(1.0, 0.8, &Q4).unwrap(), 0.75);
        assert_eq!(apply_filter_action(0.75, 0.4, &Q4).unwrap(), 0.25);
        assert_eq!(apply_filter_action(0.5, 0.25, &Q4).unwrap(), 0.0);
        assert!(matches!(apply_filter_action(0.3, 0.5, &Q4), Err(Error::Invariant(_))));
    }

    #[test]
    fn ties_go_to_smaller_fraction() {
        for k in 1..Q4.len() {
            for j in 0..k {
                let mid = (Q4[j] + Q4[j + 1]) / 2.0;
                let raw = mid / Q4[k];
                assert_eq!(apply_filter_action(Q4[k], raw, &Q4).unwrap(), Q4[j]);
            }
        }
    }

    #[test]
    fn costs_and_savings() {
        assert_eq!(inference_cost(&[1.0, 0.5, 0.5, 0.25], None), 2.25);
        assert_eq!(inference_cost(&[1.0, 0.75, 0.5, 0.0], None), 2.25);
        assert_eq!(inference_cost(&[1.0, 0.0, 0.0, 0.0], None), 1.0);
        assert_eq!(inference_cost(&[1.0; 4], None), 4.0);
        assert_eq!(inference_cost(&[1.0, 0.5], Some(&[2.0, 4.0])), 4.0);
        assert_eq!(savings_fraction(&[1.0, 0.5, 0.5, 0.25], 4), 0.4375);
        assert_eq!(savings_fraction(&[1.0; 4], 4), 0.0);
        assert_eq!(savings_fraction(&[1.0, 0.0, 0.0, 0.0], 4), 0.75);
    }

    #[test]
    fn savings_rewards() {
        assert_eq!(savings_reward(1.0, 4).unwrap(), 1.0);
        assert_eq!(savings_reward(4.0, 4).unwrap(), -1.0);
        assert_abs_diff_eq!(savings_reward(2.25, 4).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
        assert!(matches!(savings_reward(0.5, 4), Err(Error::Invariant(_))));
        assert!(savings_reward(4.5, 4).is_err());
    }

    #[test]
    fn total_rewards() {
        assert_eq!(total_reward(true, 3.0, 4, 0.0).unwrap().total, 1.0);
        assert_eq!(total_reward(false, 1.0, 4, 1.0).unwrap().total, 1.0);
        assert_eq!(total_reward(true, 1.0, 4, 1.0).unwrap().total, 1.0);
        let r = total_reward(true, 2.25, 4, 0.2).unwrap();
        assert_abs_diff_eq!(r.total, 0.8 + 0.2 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.total, 0.8333, epsilon = 1e-4);
    }

    fn outcome(kept: f64, raw: f64, stopped: bool) -> ActionOutcome {
        ActionOutcome::new(kept, raw, &Q4, stopped).unwrap()
    }

    #[test]
    fn zero_fraction_terminates() {
        let mut e = Episode::new(Q4.to_vec(), 4).unwrap();
        assert_eq!(e.step(outcome(1.0, 0.05, false)).unwrap(), None);
        assert_eq!(e.termination(), Some(Termination::ZeroFraction));
        assert_eq!(e.utilization(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(e.stop_checkpoint(), Some(1));
        assert!(matches!(e.step(outcome(1.0, 0.5, false)), Err(Error::State(_))));
    }

    #[test]
    fn never_filtering_exhausts() {
        let mut e = Episode::new(Q4.to_vec(), 4).unwrap();
        for _ in 0..3 {
            e.step(outcome(1.0, 1.0, false)).unwrap();
        }
        assert_eq!(e.termination(), Some(Termination::Exhausted));
        assert_eq!(e.utilization(), vec![1.0; 4]);
        assert_eq!(e.stop_checkpoint(), None);
    }

    #[test]
    fn stop_at_second_checkpoint() {
        let mut e = Episode::new(Q4.to_vec(), 4).unwrap();
        assert_eq!(e.step(outcome(1.0, 0.5, false)).unwrap(), Some(0.5));
        assert_eq!(e.step(outcome(0.5, 1.0, true)).unwrap(), None);
        assert_eq!(e.utilization(), vec![1.0, 0.5, 0.0, 0.0]);
        assert_eq!(e.cost(), 1.5);
        assert_eq!(e.stop_checkpoint(), Some(2));
    }

    #[test]
    fn path_counts() {
        assert_eq!(count_paths_unconstrained(1, 1), BigUint::from(2u8));
        assert_eq!(count_paths_unconstrained(2, 3), BigUint::from(64u8));
        assert_eq!(count_paths_unconstrained(10, 5), BigUint::from(1u64 << 50));
        assert_eq!(count_paths_constrained(1, 1), BigUint::from(2u8));
        assert_eq!(count_paths_constrained(4, 3), BigUint::from(35u8));
    }

    #[test]
    fn trace_lines_round_trip() {
        let t = EpisodeTrace {
            sample_id: 3,
            utilization: vec![1.0, 0.25, 0.0, 0.0],
            cost: 1.25,
            savings: 0.6875,
            stop_checkpoint: Some(2),
            prediction: 1,
            label: 1,
            reward: total_reward(true, 1.25, 4, 0.2).unwrap(),
        };
        let mut buf = Vec::new();
        write_traces(&[t.clone(), t.clone()], &mut buf).unwrap();
        let back = read_traces(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, vec![t.clone(), t]);
    }
}
