//! Trainable components and their assembly into one model.

mod classifier;
mod encoder;
mod heads;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classifier::{argmax, Classifier, DeskClassifier};
pub use encoder::{state_vector, Encoder, RunningStats, TapeEncoding};
pub use heads::{BaselineHead, FilterHead, Mlp, StopHead};

use crate::data::SliceSpec;
use crate::episode::quantized_set;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, RngStream, Stream, Tape, Var};
use crate::ranking::{ChannelRanking, GroupAssignment};

/// Sizes of every component.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_channels: usize,
    pub series_len: usize,
    pub n_classes: usize,
    pub n_checkpoints: usize,
    pub kernels_per_group: usize,
    pub kernel_len: usize,
    pub head_hidden: Vec<usize>,
    pub classifier_maps: usize,
    pub classifier_kernel: usize,
}

impl Architecture {
    pub fn new(n_channels: usize, series_len: usize, n_classes: usize, n_checkpoints: usize) -> Self {
        Architecture {
            n_channels,
            series_len,
            n_classes,
            n_checkpoints,
            kernels_per_group: 8,
            kernel_len: 9,
            head_hidden: vec![64, 64],
            classifier_maps: 32,
            classifier_kernel: 9,
        }
    }
}

/// All components of a policy-plus-classifier model. Parameter values live
/// in a separate [`ParamStore`] so that training can update them while the
/// structure is borrowed.
#[derive(Clone, Debug)]
pub struct Charlee {
    pub arch: Architecture,
    pub groups: GroupAssignment,
    pub slices: SliceSpec,
    pub qset: Vec<f64>,
    pub encoder: Encoder,
    pub filter: FilterHead,
    pub stop: StopHead,
    pub baseline: BaselineHead,
    pub classifier: DeskClassifier,
}

impl Charlee {
    /// Builds the structure and a freshly initialised parameter store.
    pub fn new(arch: Architecture, groups: GroupAssignment, slices: SliceSpec, seed: u64) -> Result<(Self, ParamStore)> {
        if groups.n_channels() != arch.n_channels {
            return Err(Error::Config("group assignment does not cover the channels".into()));
        }
        if slices.n_checkpoints != arch.n_checkpoints || slices.series_len() != arch.series_len {
            return Err(Error::Config("slice layout does not match the architecture".into()));
        }
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(seed, Stream::Init, 0);
        let encoder = Encoder::new(
            &mut store,
            &groups,
            arch.kernels_per_group,
            arch.kernel_len,
            arch.series_len,
            &mut rng,
        )?;
        let state_len = encoder.stats_len() + arch.n_checkpoints + 1;
        let filter = FilterHead::new(&mut store, state_len, &arch.head_hidden, &mut rng)?;
        let stop = StopHead::new(&mut store, state_len, &arch.head_hidden, &mut rng)?;
        let baseline = BaselineHead::new(&mut store, state_len, &arch.head_hidden, &mut rng)?;
        let classifier = DeskClassifier::new(
            &mut store,
            arch.n_channels,
            arch.series_len,
            arch.n_classes,
            arch.classifier_maps,
            arch.classifier_kernel,
            &mut rng,
        )?;
        let qset = quantized_set(&groups.group_sizes, arch.n_channels)?;
        Ok((
            Charlee {
                arch,
                groups,
                slices,
                qset,
                encoder,
                filter,
                stop,
                baseline,
                classifier,
            },
            store,
        ))
    }

    pub fn state_len(&self) -> usize {
        self.encoder.stats_len() + self.arch.n_checkpoints + 1
    }

    pub fn n_slices(&self) -> usize {
        self.slices.n_slices()
    }

    /// Active-group mask for a kept channel fraction.
    pub fn active_groups(&self, fraction: f64) -> Result<Vec<bool>> {
        let k = self.groups.groups_for_fraction(fraction)?;
        Ok((0..self.groups.n_groups).map(|g| g < k).collect())
    }

    /// Tape version of the state: statistics block followed by history and checkpoint fraction.
    pub fn state_tape(&self, tape: &mut Tape, enc: &TapeEncoding, history: &[f64], n: usize) -> Result<Var> {
        let stats = self.encoder.stats_tape(tape, enc)?;
        let rest = tape.input(encoder::history_block(history, n, self.arch.n_checkpoints)?);
        Ok(tape.concat(&[stats, rest]))
    }
}

/// Everything besides parameter values needed to rebuild a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub arch: Architecture,
    pub groups: GroupAssignment,
    pub slices: SliceSpec,
    pub ranking: ChannelRanking,
    pub class_names: Vec<String>,
    pub normalize: bool,
    pub mask_value: f64,
    pub seed: u64,
}

impl ModelSidecar {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Rebuilds the model and fills it with the parameters stored at `params`.
    pub fn restore(&self, params: &Path) -> Result<(Charlee, ParamStore)> {
        let (model, mut store) = Charlee::new(self.arch.clone(), self.groups.clone(), self.slices.clone(), self.seed)?;
        store.copy_values_from(&ParamStore::load(params)?)?;
        Ok((model, store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::slice_boundaries;

    #[test]
    fn state_length_is_fixed() {
        let arch = Architecture::new(4, 96, 8, 3);
        let groups = GroupAssignment::from_priority(&[3, 2, 1, 0], 4).unwrap();
        let (m, store) = Charlee::new(arch, groups, slice_boundaries(96, 3).unwrap(), 0).unwrap();
        assert_eq!(m.state_len(), 4 * 8 * 6 + 3 + 1);
        assert_eq!(m.qset, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(store.all_finite());
        assert_eq!(m.active_groups(0.5).unwrap(), vec![true, true, false, false]);
    }
}
