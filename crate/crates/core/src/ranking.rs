//! Channel ranking on growing prefixes and grouping into keep-priority blocks.
//!
//! Each channel is scored, per checkpoint prefix, by how far apart the class
//! centroids lie on that channel. Per-checkpoint scores are min-max
//! normalised and combined with weights falling linearly from 1 at the first
//! checkpoint to `w_last` at the last. Channels with the lowest combined
//! score are kept longest; the most discriminative early channels are dropped
//! first, since their information has already been consumed.

use serde::{Deserialize, Serialize};

use crate::data::{truncate, Dataset, SliceSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanking {
    /// Raw centroid scores, one row of `C` per checkpoint.
    pub per_checkpoint_scores: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub weighted_scores: Vec<f64>,
    /// Channel indices, kept-longest first.
    pub keep_priority: Vec<usize>,
}

impl ChannelRanking {
    /// Ordinal rank (0 = highest score) of every channel at every checkpoint.
    pub fn ordinal_ranks(&self) -> Vec<Vec<usize>> {
        self.per_checkpoint_scores
            .iter()
            .map(|row| {
                let order = sort_indices(row, true);
                let mut rank = vec![0; row.len()];
                for (r, &c) in order.iter().enumerate() {
                    rank[c] = r;
                }
                rank
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub n_groups: usize,
    pub group_of_channel: Vec<usize>,
    pub group_sizes: Vec<usize>,
}

impl GroupAssignment {
    /// Splits `keep_priority` into `n_groups` contiguous blocks whose sizes
    /// differ by at most one, larger blocks first.
    pub fn from_priority(keep_priority: &[usize], n_groups: usize) -> Result<Self> {
        let c = keep_priority.len();
        if n_groups == 0 || n_groups > c {
            return Err(Error::Config(format!("cannot split {c} channels into {n_groups} groups")));
        }
        let mut seen = vec![false; c];
        for &ch in keep_priority {
            if ch >= c || std::mem::replace(&mut seen[ch], true) {
                return Err(Error::Invariant(format!("{keep_priority:?} is not a permutation")));
            }
        }
        let base = c / n_groups;
        let rem = c % n_groups;
        let group_sizes: Vec<usize> = (0..n_groups).map(|g| base + usize::from(g < rem)).collect();
        let mut group_of_channel = vec![0; c];
        let mut pos = 0;
        for (g, &size) in group_sizes.iter().enumerate() {
            for &ch in &keep_priority[pos..pos + size] {
                group_of_channel[ch] = g;
            }
            pos += size;
        }
        Ok(GroupAssignment {
            n_groups,
            group_of_channel,
            group_sizes,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.group_of_channel.len()
    }

    /// Channels of group `g` in ascending channel order.
    pub fn channels_of(&self, g: usize) -> Vec<usize> {
        (0..self.n_channels()).filter(|&c| self.group_of_channel[c] == g).collect()
    }

    /// Fraction of channels observed when the first `k` groups are kept.
    pub fn fraction_for_groups(&self, k: usize) -> f64 {
        self.group_sizes[..k].iter().sum::<usize>() as f64 / self.n_channels() as f64
    }

    /// Inverse of [`fraction_for_groups`](Self::fraction_for_groups).
    pub fn groups_for_fraction(&self, fraction: f64) -> Result<usize> {
        (0..=self.n_groups)
            .find(|&k| (self.fraction_for_groups(k) - fraction).abs() < 1e-9)
            .ok_or_else(|| Error::Invariant(format!("fraction {fraction} is not a whole number of groups")))
    }
}

/// Sum over unordered pairs of present classes of the Euclidean distance
/// between class-mean series, separately for every channel.
pub fn centroid_scores(dataset: &Dataset) -> Result<Vec<f64>> {
    let c = dataset.n_channels();
    let t = dataset.series_len();
    let counts = dataset.class_counts();
    let present: Vec<usize> = (0..dataset.n_classes()).filter(|&k| counts[k] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Input("channel scoring needs at least two classes present".into()));
    }
    let block = c * t;
    let mut means = vec![0.0; dataset.n_classes() * block];
    for (i, &l) in dataset.labels().iter().enumerate() {
        for (m, &v) in means[l * block..(l + 1) * block].iter_mut().zip(dataset.sample(i)) {
            *m += v;
        }
    }
    for &k in &present {
        let n = counts[k] as f64;
        means[k * block..(k + 1) * block].iter_mut().for_each(|m| *m /= n);
    }
    let mut scores = vec![0.0; c];
    for (a_pos, &a) in present.iter().enumerate() {
        for &b in &present[a_pos + 1..] {
            for (ch, s) in scores.iter_mut().enumerate() {
                let ma = &means[a * block + ch * t..a * block + (ch + 1) * t];
                let mb = &means[b * block + ch * t..b * block + (ch + 1) * t];
                *s += ma.iter().zip(mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            }
        }
    }
    Ok(scores)
}

/// Linearly decreasing checkpoint weights from 1 to `w_last`.
pub fn checkpoint_weights(n_checkpoints: usize, w_last: f64) -> Vec<f64> {
    if n_checkpoints == 1 {
        return vec![1.0];
    }
    let step = (w_last - 1.0) / (n_checkpoints - 1) as f64;
    (0..n_checkpoints).map(|n| 1.0 + step * n as f64).collect()
}

/// Rescales to [0, 1]; a constant row maps to all zeros.
pub fn min_max_normalize(row: &[f64]) -> Vec<f64> {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.0; row.len()];
    }
    row.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Combines raw per-checkpoint score rows into a ranking.
pub fn aggregate_scores(per_checkpoint_scores: Vec<Vec<f64>>, w_last: f64) -> Result<ChannelRanking> {
    let Some(c) = per_checkpoint_scores.first().map(Vec::len) else {
        return Err(Error::Config("no checkpoints to rank over".into()));
    };
    let weights = checkpoint_weights(per_checkpoint_scores.len(), w_last);
    let mut weighted_scores = vec![0.0; c];
    for (row, &w) in per_checkpoint_scores.iter().zip(&weights) {
        for (acc, s) in weighted_scores.iter_mut().zip(min_max_normalize(row)) {
            *acc += w * s;
        }
    }
    let keep_priority = sort_indices(&weighted_scores, false);
    Ok(ChannelRanking {
        per_checkpoint_scores,
        weights,
        weighted_scores,
        keep_priority,
    })
}

/// Scores every checkpoint prefix of `dataset` and aggregates.
pub fn weighted_rank(dataset: &Dataset, slices: &SliceSpec, w_last: f64) -> Result<ChannelRanking> {
    if slices.series_len() != dataset.series_len() {
        return Err(Error::Config(format!(
            "slices cover {} timesteps but the dataset has {}",
            slices.series_len(),
            dataset.series_len()
        )));
    }
    let t = dataset.series_len() as f64;
    let rows = (1..=slices.n_checkpoints)
        .map(|n| {
            let prefix = truncate(dataset, slices.prefix_end(n) as f64 / t)?;
            centroid_scores(&prefix)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_scores(rows, w_last)
}

pub fn group_channels(ranking: &ChannelRanking, n_groups: usize) -> Result<GroupAssignment> {
    GroupAssignment::from_priority(&ranking.keep_priority, n_groups)
}

/// Indices sorted by value (ascending unless `descending`), ties by index.
fn sort_indices(values: &[f64], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = values[a].total_cmp(&values[b]);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    idx
}

/// JSON document describing a ranking and its grouping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub keep_priority: Vec<usize>,
    pub weighted_scores: Vec<f64>,
    pub per_checkpoint_scores: Vec<Vec<f64>>,
    pub ordinal_ranks: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub groups: GroupAssignment,
}

impl RankingReport {
    pub fn new(ranking: &ChannelRanking, groups: &GroupAssignment) -> Self {
        RankingReport {
            keep_priority: ranking.keep_priority.clone(),
            weighted_scores: ranking.weighted_scores.clone(),
            per_checkpoint_scores: ranking.per_checkpoint_scores.clone(),
            ordinal_ranks: ranking.ordinal_ranks(),
            weights: ranking.weights.clone(),
            groups: groups.clone(),
        }
    }
}
