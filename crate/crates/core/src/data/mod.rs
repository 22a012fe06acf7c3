//! Datasets, slicing, masking and the synthetic generator.

mod long_csv;
pub mod synthetic;
mod ts;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Stream};
use crate::ranking::GroupAssignment;

pub use long_csv::{load_csv, write_csv};
pub use synthetic::{generate_synthetic, IdealTable, SyntheticData, SyntheticSpec};
pub use ts::{load_ts, write_ts};

/// Equal-length multivariate series stored sample-major as `samples × channels × timesteps`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n_samples: usize,
    n_channels: usize,
    series_len: usize,
    labels: Vec<usize>,
    class_names: Vec<String>,
    channel_names: Vec<String>,
    pub source: String,
}

impl Dataset {
    pub fn new(
        values: Vec<f64>,
        n_channels: usize,
        series_len: usize,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let n_samples = labels.len();
        if n_channels == 0 || series_len == 0 {
            return Err(Error::Input("dataset needs at least one channel and one timestep".into()));
        }
        if values.len() != n_samples * n_channels * series_len {
            return Err(Error::Input(format!(
                "{} values do not fill {n_samples}x{n_channels}x{series_len}",
                values.len()
            )));
        }
        if class_names.len() < 2 {
            return Err(Error::Input("dataset needs at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Input(format!("label {bad} out of range")));
        }
        Ok(Dataset {
            values,
            n_samples,
            n_channels,
            series_len,
            labels,
            class_names,
            channel_names: (0..n_channels).map(|c| format!("ch{c}")).collect(),
            source: String::new(),
        })
    }

    pub fn with_channel_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_channels {
            return Err(Error::Input("channel name count does not match channels".into()));
        }
        self.channel_names = names;
        Ok(self)
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn len(&self) -> usize {
        self.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn series_len(&self) -> usize {
        self.series_len
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `channels × timesteps` block of sample `i`.
    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.n_channels * self.series_len;
        &self.values[i * n..(i + 1) * n]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[f64] {
        let s = self.sample(i);
        &s[c * self.series_len..(c + 1) * self.series_len]
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.n_channels * self.series_len);
        for &i in indices {
            values.extend_from_slice(self.sample(i));
        }
        Dataset {
            values,
            n_samples: indices.len(),
            n_channels: self.n_channels,
            series_len: self.series_len,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            channel_names: self.channel_names.clone(),
            source: self.source.clone(),
        }
    }

    /// Re-expresses labels in terms of another class-name list (e.g. the
    /// training split's), appending any names it lacks.
    pub fn align_classes(&mut self, class_names: &[String]) {
        let mut names = class_names.to_vec();
        let remap: Vec<usize> = self
            .class_names
            .iter()
            .map(|n| match names.iter().position(|m| m == n) {
                Some(i) => i,
                None => {
                    names.push(n.clone());
                    names.len() - 1
                }
            })
            .collect();
        self.labels.iter_mut().for_each(|l| *l = remap[*l]);
        self.class_names = names;
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Per-sample, per-channel z-normalization. Channels with standard deviation
/// below 1e-8 become all zeros.
pub fn znormalize(dataset: &Dataset) -> Dataset {
    let mut out = dataset.clone();
    let t = dataset.series_len;
    for row in out.values.chunks_mut(t) {
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let std = var.sqrt();
        if std < 1e-8 {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
    out
}

/// Stratified split; `fraction` of every class goes to validation.
///
/// Classes with fewer than two samples stay entirely in training. Both
/// splits keep the original sample order.
pub fn split_train_val(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} not in (0,1)")));
    }
    let mut rng = RngStream::new(seed, Stream::Split, 0);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut val = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            log::warn!(
                "class {} has {} sample(s); keeping it in the training split",
                dataset.class_names[class],
                idx.len()
            );
            continue;
        }
        idx.shuffle(&mut rng);
        let n_val = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        val.extend_from_slice(&idx[..n_val]);
    }
    val.sort_unstable();
    let mut in_val = vec![false; dataset.len()];
    val.iter().for_each(|&i| in_val[i] = true);
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| !in_val[i]).collect();
    Ok((dataset.select(&train), dataset.select(&val)))
}

/// Number of timesteps kept when truncating a length-`series_len` series to `fraction`.
pub fn truncated_len(series_len: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Input(format!("truncation fraction {fraction} not in (0,1]")));
    }
    // tolerance absorbs representation error such as 0.3 * 10 = 3.0000000000000004
    let len = (fraction * series_len as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(len.min(series_len))
}

/// Keeps the first `ceil(fraction · T)` timesteps of every sample.
pub fn truncate(dataset: &Dataset, fraction: f64) -> Result<Dataset> {
    let len = truncated_len(dataset.series_len, fraction)?;
    let t = dataset.series_len;
    let mut values = Vec::with_capacity(dataset.n_samples * dataset.n_channels * len);
    for row in dataset.values.chunks(t) {
        values.extend_from_slice(&row[..len]);
    }
    Ok(Dataset {
        values,
        series_len: len,
        ..dataset.clone()
    })
}

/// Partition of `[0, T)` into `N + 1` contiguous slices separated by `N` checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub n_checkpoints: usize,
    pub boundaries: Vec<(usize, usize)>,
}

impl SliceSpec {
    pub fn n_slices(&self) -> usize {
        self.boundaries.len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.boundaries.iter().map(|&(a, b)| b - a).collect()
    }

    pub fn series_len(&self) -> usize {
        self.boundaries.last().map_or(0, |b| b.1)
    }

    /// End of the prefix observed at checkpoint `n` (1-based): the end of slice `n`.
    pub fn prefix_end(&self, n: usize) -> usize {
        self.boundaries[n - 1].1
    }
}

/// Splits `T` timesteps into `N + 1` slices of near-equal length; the
/// remainder goes to the earliest slices.
pub fn slice_boundaries(series_len: usize, n_checkpoints: usize) -> Result<SliceSpec> {
    if n_checkpoints < 1 {
        return Err(Error::Config("need at least one checkpoint".into()));
    }
    let n_slices = n_checkpoints + 1;
    if series_len < n_slices {
        return Err(Error::Config(format!(
            "{series_len} timesteps cannot form {n_slices} nonempty slices"
        )));
    }
    let base = series_len / n_slices;
    let rem = series_len % n_slices;
    let mut start = 0;
    let boundaries = (0..n_slices)
        .map(|s| {
            let len = base + usize::from(s < rem);
            let b = (start, start + len);
            start += len;
            b
        })
        .collect();
    Ok(SliceSpec {
        n_checkpoints,
        boundaries,
    })
}

/// Writes `mask_value` over every entry not observed under `utilization`.
///
/// `utilization[s]` is the fraction of channels kept during slice `s`; it
/// must be non-increasing and each entry must correspond to a whole number
/// of groups in keep-priority order. A channel is observed in slice `s` iff
/// its group index is below the number of groups kept in that slice.
pub fn mask_apply(
    sample: &[f64],
    utilization: &[f64],
    groups: &GroupAssignment,
    slices: &SliceSpec,
    mask_value: f64,
) -> Result<Vec<f64>> {
    if utilization.len() != slices.n_slices() {
        return Err(Error::Invariant(format!(
            "schedule has {} entries for {} slices",
            utilization.len(),
            slices.n_slices()
        )));
    }
    if utilization.windows(2).any(|w| w[1] > w[0] + 1e-12) {
        return Err(Error::Invariant(format!("schedule {utilization:?} is increasing")));
    }
    let kept: Vec<usize> = utilization
        .iter()
        .map(|&u| groups.groups_for_fraction(u))
        .collect::<Result<_>>()?;
    mask_with_counts(sample, &kept, groups, slices, mask_value)
}

/// As [`mask_apply`] but with the number of kept groups per slice.
pub fn mask_with_counts(
    sample: &[f64],
    kept_groups: &[usize],
    groups: &GroupAssignment,
    slices: &SliceSpec,
    mask_value: f64,
) -> Result<Vec<f64>> {
    let t = slices.series_len();
    let c = groups.group_of_channel.len();
    if sample.len() != c * t {
        return Err(Error::Input(format!(
            "sample has {} values, expected {c}x{t}",
            sample.len()
        )));
    }
    let mut out = sample.to_vec();
    for (ch, row) in out.chunks_mut(t).enumerate() {
        let g = groups.group_of_channel[ch];
        for (&(a, b), &k) in slices.boundaries.iter().zip(kept_groups) {
            if g >= k {
                row[a..b].iter_mut().for_each(|v| *v = mask_value);
            }
        }
    }
    Ok(out)
}

/// Timesteps `[a, b)` of every channel of a `C × T` sample, as a `C × (b − a)` block.
pub fn slice_columns(sample: &[f64], series_len: usize, a: usize, b: usize) -> Vec<f64> {
    sample
        .chunks(series_len)
        .flat_map(|row| row[a..b].iter().copied())
        .collect()
}
