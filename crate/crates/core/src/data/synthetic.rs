//! Synthetic 8-class, 4-channel, 96-timestep dataset with known ideal
//! observation schedules.
//!
//! Every class is a fixed prototype built from raised-cosine bumps confined
//! to single (channel, slice) cells, plus i.i.d. Gaussian noise. The cells
//! that differ between classes are arranged so that, with channels dropped
//! in the order 1, 2, 3, 4 (channel 4 kept longest), each class pair is
//! separable exactly under its ideal utilization and no smaller one:
//!
//! | classes | discriminating cells                       | ideal utilization   |
//! |---------|--------------------------------------------|---------------------|
//! | 1, 2    | slice 1 (channel 2)                        | [1, 0, 0, 0]        |
//! | 3, 4    | slice 4 of channel 4                       | [1, .25, .25, .25]  |
//! | 5, 6    | slice 4 of channel 3; slice 2 of channel 1 separates them from 7, 8 | [1, 1, .5, .5] |
//! | 7, 8    | slice 4 of channel 1                       | [1, 1, 1, 1]        |
//!
//! Slice 1 also carries a code on channels 1–3 separating {1}, {2}, {3,4}
//! and {5..8}; its amplitude decreases from channel 1 to channel 3 and is
//! absent on channel 4, so prefix-based channel ranking drops channel 1
//! first and keeps channel 4 longest.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Stream};

pub const SYNTH_CLASSES: usize = 8;
pub const SYNTH_CHANNELS: usize = 4;
pub const SYNTH_LEN: usize = 96;
pub const SYNTH_SLICES: usize = 4;
const SLICE_LEN: usize = SYNTH_LEN / SYNTH_SLICES;

/// Ideal per-slice utilization for each class, indexed by class.
pub const IDEAL_UTILIZATION: [[f64; SYNTH_SLICES]; SYNTH_CLASSES] = [
    [1.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0, 0.0],
    [1.0, 0.25, 0.25, 0.25],
    [1.0, 0.25, 0.25, 0.25],
    [1.0, 1.0, 0.5, 0.5],
    [1.0, 1.0, 0.5, 0.5],
    [1.0, 1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0],
];

/// (channel, slice, per-class amplitude) for every bump cell.
const CELLS: [(usize, usize, [f64; SYNTH_CLASSES]); 7] = [
    (0, 0, [1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0]),
    (1, 0, [0.6, -0.6, 0.6, 0.6, -0.6, -0.6, -0.6, -0.6]),
    (2, 0, [0.4, 0.4, -0.4, -0.4, -0.4, -0.4, -0.4, -0.4]),
    (0, 1, [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, -1.0]),
    (3, 3, [0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0]),
    (2, 3, [0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 1.0]),
    (0, 3, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Samples generated per class.
    pub n_per_class: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_per_class: 50,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealEntry {
    pub ideal_utilization: Vec<f64>,
    pub ideal_savings: f64,
}

/// Ground truth emitted alongside the synthetic data, keyed by class name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdealTable(pub BTreeMap<String, IdealEntry>);

impl IdealTable {
    pub fn get(&self, class: &str) -> Option<&IdealEntry> {
        self.0.get(class)
    }

    /// Mean ideal savings with every class weighted equally.
    pub fn balanced_mean_savings(&self) -> f64 {
        self.0.values().map(|e| e.ideal_savings).sum::<f64>() / self.0.len() as f64
    }
}

pub struct SyntheticData {
    pub dataset: Dataset,
    pub ideal: IdealTable,
}

pub fn class_names() -> Vec<String> {
    (1..=SYNTH_CLASSES).map(|c| c.to_string()).collect()
}

pub fn ideal_table() -> IdealTable {
    let map = class_names()
        .into_iter()
        .zip(IDEAL_UTILIZATION.iter())
        .map(|(name, u)| {
            let cost: f64 = u.iter().sum();
            (
                name,
                IdealEntry {
                    ideal_utilization: u.to_vec(),
                    ideal_savings: (SYNTH_SLICES as f64 - cost) / SYNTH_SLICES as f64,
                },
            )
        })
        .collect();
    IdealTable(map)
}

/// Raised-cosine bump spanning the middle two thirds of a slice, zero elsewhere.
fn bump(offset_in_slice: usize) -> f64 {
    let width = SLICE_LEN * 2 / 3;
    let lead = (SLICE_LEN - width) / 2;
    if offset_in_slice < lead || offset_in_slice >= lead + width {
        return 0.0;
    }
    let u = (offset_in_slice - lead) as f64 + 0.5;
    0.5 * (1.0 - (2.0 * std::f64::consts::PI * u / width as f64).cos())
}

/// Noiseless `channels × timesteps` prototype of `class` (0-based).
pub fn prototype(class: usize) -> Vec<f64> {
    let mut x = vec![0.0; SYNTH_CHANNELS * SYNTH_LEN];
    for &(ch, slice, amps) in &CELLS {
        let a = amps[class];
        if a == 0.0 {
            continue;
        }
        for j in 0..SLICE_LEN {
            x[ch * SYNTH_LEN + slice * SLICE_LEN + j] += a * bump(j);
        }
    }
    x
}

/// Generates `n_per_class` samples of every class, interleaved by class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if spec.n_per_class == 0 {
        return Err(Error::Config("n_per_class must be positive".into()));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(Error::Config(format!("noise_std {} must be non-negative", spec.noise_std)));
    }
    let protos: Vec<Vec<f64>> = (0..SYNTH_CLASSES).map(prototype).collect();
    let mut rng = RngStream::new(spec.seed, Stream::Data, 0);
    let noise = Normal::new(0.0, spec.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let n = spec.n_per_class * SYNTH_CLASSES;
    let mut values = Vec::with_capacity(n * SYNTH_CHANNELS * SYNTH_LEN);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..spec.n_per_class {
        for (class, proto) in protos.iter().enumerate() {
            if spec.noise_std > 0.0 {
                values.extend(proto.iter().map(|&v| v + noise.sample(&mut rng)));
            } else {
                values.extend_from_slice(proto);
            }
            labels.push(class);
        }
    }
    let dataset = Dataset::new(values, SYNTH_CHANNELS, SYNTH_LEN, labels, class_names())?
        .with_source("synthetic");
    Ok(SyntheticData {
        dataset,
        ideal: ideal_table(),
    })
}
