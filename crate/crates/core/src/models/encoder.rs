//! Grouped causal convolution encoder with pooled running statistics.
//!
//! Every channel group owns a bank of `K` kernels spanning its channels.
//! Convolutions are causal: the output at timestep `t` depends on inputs in
//! `[t − k + 1, t]` (zero before the series start), so a prefix can be
//! processed slice by slice, carrying the last `k − 1` inputs of each group
//! as a tail cache, with results identical to one pass over the prefix.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::kernels::conv1d;
use crate::numerics::{ConvGeom, ParamId, ParamStore, StatsAccumulator, Tape, Var, STATS_PER_MAP};
use crate::ranking::GroupAssignment;

#[derive(Clone, Debug)]
pub struct Encoder {
    groups: Vec<Vec<usize>>,
    n_channels: usize,
    n_kernels: usize,
    kernel_len: usize,
    series_len: usize,
    banks: Vec<(ParamId, ParamId)>,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        groups: &GroupAssignment,
        n_kernels: usize,
        kernel_len: usize,
        series_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel_len.is_multiple_of(2) || n_kernels == 0 {
            return Err(Error::Config(format!(
                "encoder needs an odd kernel length and at least one kernel, got {n_kernels}x{kernel_len}"
            )));
        }
        let groups: Vec<Vec<usize>> = (0..groups.n_groups).map(|g| groups.channels_of(g)).collect();
        let mut banks = Vec::with_capacity(groups.len());
        for (g, chans) in groups.iter().enumerate() {
            let cin = chans.len();
            let w = store.glorot(
                &format!("enc.g{g}.w"),
                &[n_kernels, cin, kernel_len],
                cin * kernel_len,
                n_kernels * kernel_len,
                rng,
            )?;
            let b = store.zeros(&format!("enc.g{g}.b"), &[n_kernels])?;
            banks.push((w, b));
        }
        Ok(Encoder {
            n_channels: groups.iter().map(Vec::len).sum(),
            groups,
            n_kernels,
            kernel_len,
            series_len,
            banks,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_kernels(&self) -> usize {
        self.n_kernels
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    /// Length of the flattened statistics block: `G · K · 6`.
    pub fn stats_len(&self) -> usize {
        self.groups.len() * self.n_kernels * STATS_PER_MAP
    }

    pub fn banks(&self) -> &[(ParamId, ParamId)] {
        &self.banks
    }

    /// `history ++ current` rows of group `g` for timesteps `[a, b)` of a
    /// full `C × T` sample, with up to `k − 1` steps of history.
    fn group_window(&self, g: usize, sample: &[f64], a: usize, b: usize) -> (Vec<f64>, usize) {
        let t = self.series_len;
        let hist = a.min(self.kernel_len - 1);
        let mut x = Vec::with_capacity(self.groups[g].len() * (b - a + hist));
        for &ch in &self.groups[g] {
            x.extend_from_slice(&sample[ch * t + a - hist..ch * t + b]);
        }
        (x, hist)
    }

    /// Records the convolution of timesteps `[a, b)` for every active group.
    pub fn encode_slice_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        enc: &mut TapeEncoding,
        sample: &[f64],
        (a, b): (usize, usize),
        active: &[bool],
    ) -> Result<()> {
        if b <= a {
            return Err(Error::Input("cannot encode an empty slice".into()));
        }
        if sample.len() != self.n_channels * self.series_len {
            return Err(Error::Input("sample shape does not match the encoder".into()));
        }
        if enc.leaves.is_empty() {
            enc.leaves = self
                .banks
                .iter()
                .map(|&(w, b)| (tape.param(store, w), tape.param(store, b)))
                .collect();
            enc.chunks = vec![Vec::new(); self.groups.len()];
        }
        for (g, _) in active.iter().enumerate().filter(|(_, &on)| on) {
            let (x, hist) = self.group_window(g, sample, a, b);
            let geom = ConvGeom::causal_with_history(self.groups[g].len(), self.n_kernels, self.kernel_len, x.len() / self.groups[g].len(), hist);
            let xv = tape.input(x);
            let (w, bias) = enc.leaves[g];
            let y = tape.conv1d(xv, w, bias, geom)?;
            enc.chunks[g].push((y, a));
        }
        Ok(())
    }

    /// Pooled statistics of all groups, each over the chunks it has seen.
    pub fn stats_tape(&self, tape: &mut Tape, enc: &TapeEncoding) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.groups.len());
        for chunks in &enc.chunks {
            if chunks.is_empty() {
                return Err(Error::State("statistics requested before any slice was encoded".into()));
            }
            let vars: Vec<Var> = chunks.iter().map(|c| c.0).collect();
            let starts: Vec<usize> = chunks.iter().map(|c| c.1).collect();
            parts.push(tape.pooled_stats(&vars, &starts, self.n_kernels, self.series_len)?);
        }
        Ok(tape.concat(&parts))
    }
}

/// Per-episode record of the tape nodes produced by [`Encoder::encode_slice_tape`].
#[derive(Debug, Default)]
pub struct TapeEncoding {
    leaves: Vec<(Var, Var)>,
    chunks: Vec<Vec<(Var, usize)>>,
}

/// Inference-time running statistics of an [`Encoder`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    maps: Vec<StatsAccumulator>,
    tails: Vec<Vec<Vec<f64>>>,
    frozen: Vec<bool>,
    position: usize,
    series_len: usize,
    n_kernels: usize,
    macs: u64,
}

impl RunningStats {
    pub fn new(encoder: &Encoder) -> Self {
        RunningStats {
            maps: vec![StatsAccumulator::default(); encoder.n_groups() * encoder.n_kernels],
            tails: encoder.groups.iter().map(|g| vec![Vec::new(); g.len()]).collect(),
            frozen: vec![false; encoder.n_groups()],
            position: 0,
            series_len: encoder.series_len,
            n_kernels: encoder.n_kernels,
            macs: 0,
        }
    }

    /// Timesteps consumed so far.
    pub fn position(&self) -> usize {
        self.position
    }

    /// Multiply-accumulate operations spent in convolutions so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn is_frozen(&self, g: usize) -> bool {
        self.frozen[g]
    }

    pub fn freeze(&mut self, g: usize) {
        self.frozen[g] = true;
    }

    pub fn accumulators(&self, g: usize) -> &[StatsAccumulator] {
        &self.maps[g * self.n_kernels..(g + 1) * self.n_kernels]
    }

    /// Convolves the next slice (`C × len`, all channels) for the active
    /// groups and folds the outputs into their accumulators. Inactive groups
    /// are frozen from here on.
    pub fn encode_slice(&mut self, encoder: &Encoder, store: &ParamStore, slice: &[f64], active: &[bool]) -> Result<()> {
        if slice.is_empty() || !slice.len().is_multiple_of(encoder.n_channels) {
            return Err(Error::Input(format!(
                "slice of {} values does not fit {} channels",
                slice.len(),
                encoder.n_channels
            )));
        }
        if active.len() != encoder.n_groups() {
            return Err(Error::Config("active set does not match the group count".into()));
        }
        let len = slice.len() / encoder.n_channels;
        if self.position + len > self.series_len {
            return Err(Error::Input("slice runs past the end of the series".into()));
        }
        for (g, &on) in active.iter().enumerate() {
            if !on {
                self.frozen[g] = true;
                continue;
            }
            if self.frozen[g] {
                return Err(Error::State(format!("group {g} was dropped and cannot resume")));
            }
            let chans = &encoder.groups[g];
            let hist = self.tails[g][0].len();
            let mut x = Vec::with_capacity(chans.len() * (hist + len));
            for (i, &ch) in chans.iter().enumerate() {
                x.extend_from_slice(&self.tails[g][i]);
                x.extend_from_slice(&slice[ch * len..(ch + 1) * len]);
            }
            let geom = ConvGeom::causal_with_history(chans.len(), encoder.n_kernels, encoder.kernel_len, hist + len, hist);
            let (w, b) = encoder.banks[g];
            let y = conv1d(&x, &store.get(w).values, &store.get(b).values, &geom);
            self.macs += geom.macs();
            for (m, row) in y.chunks(len).enumerate() {
                self.maps[g * self.n_kernels + m].update(row, self.position);
            }
            let keep = encoder.kernel_len - 1;
            for (i, row) in x.chunks(hist + len).enumerate() {
                let from = row.len().saturating_sub(keep);
                self.tails[g][i] = row[from..].to_vec();
            }
        }
        self.position += len;
        Ok(())
    }

    /// Six derived statistics per feature map, groups in order.
    pub fn derived(&self) -> Vec<f64> {
        self.maps.iter().flat_map(|m| m.derived(self.series_len)).collect()
    }
}

/// Statistics block followed by the action history (zero-padded to `N`)
/// and the checkpoint fraction `n / N`.
pub fn state_vector(stats: &[f64], history: &[f64], n: usize, n_checkpoints: usize) -> Result<Vec<f64>> {
    let mut v = stats.to_vec();
    v.extend(history_block(history, n, n_checkpoints)?);
    Ok(v)
}

pub(crate) fn history_block(history: &[f64], n: usize, n_checkpoints: usize) -> Result<Vec<f64>> {
    if n == 0 || n > n_checkpoints || history.len() > n_checkpoints {
        return Err(Error::Invariant(format!(
            "checkpoint {n} with {} actions is invalid for N = {n_checkpoints}",
            history.len()
        )));
    }
    let mut v = history.to_vec();
    v.resize(n_checkpoints, 0.0);
    v.push(n as f64 / n_checkpoints as f64);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngStream, Stream};

    fn setup(c: usize, g: usize, t: usize) -> (Encoder, ParamStore) {
        let mut store = ParamStore::new();
        let groups = GroupAssignment::from_priority(&(0..c).collect::<Vec<_>>(), g).unwrap();
        let mut rng = RngStream::new(1, Stream::Init, 0);
        let e = Encoder::new(&mut store, &groups, 3, 5, t, &mut rng).unwrap();
        (e, store)
    }

    fn slice_of(sample: &[f64], c: usize, t: usize, a: usize, b: usize) -> Vec<f64> {
        (0..c).flat_map(|ch| sample[ch * t + a..ch * t + b].to_vec()).collect()
    }

    #[test]
    fn zero_input_gives_zero_stats() {
        let (e, store) = setup(2, 2, 6);
        let mut rs = RunningStats::new(&e);
        rs.encode_slice(&e, &store, &[0.0; 12], &[true, true]).unwrap();
        assert!(rs.derived().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn incremental_matches_tape_and_one_pass() {
        let (c, t) = (3, 10);
        let (e, store) = setup(c, 2, t);
        let sample: Vec<f64> = (0..c * t).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
        let mut rs = RunningStats::new(&e);
        let mut tape = Tape::new();
        let mut enc = TapeEncoding::default();
        for (a, b) in [(0, 1), (1, 4), (4, 10)] {
            rs.encode_slice(&e, &store, &slice_of(&sample, c, t, a, b), &[true, true]).unwrap();
            e.encode_slice_tape(&mut tape, &store, &mut enc, &sample, (a, b), &[true, true]).unwrap();
        }
        let s = e.stats_tape(&mut tape, &enc).unwrap();
        assert_eq!(tape.value(s), rs.derived().as_slice());
        let mut one = RunningStats::new(&e);
        one.encode_slice(&e, &store, &sample, &[true, true]).unwrap();
        for (x, y) in one.derived().iter().zip(rs.derived()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn dropped_groups_freeze() {
        let (c, t) = (2, 8);
        let (e, store) = setup(c, 2, t);
        let sample: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let mut rs = RunningStats::new(&e);
        rs.encode_slice(&e, &store, &slice_of(&sample, c, t, 0, 4), &[true, true]).unwrap();
        let before = rs.accumulators(1).to_vec();
        let macs = rs.macs();
        rs.encode_slice(&e, &store, &slice_of(&sample, c, t, 4, 8), &[true, false]).unwrap();
        assert_eq!(rs.accumulators(1), before.as_slice());
        // one group of one channel, 3 kernels of length 5, 4 outputs
        assert_eq!(rs.macs() - macs, 3 * 5 * 4);
        assert!(rs.is_frozen(1));
        assert!(rs.encode_slice(&e, &store, &[0.0; 0], &[true, false]).is_err());
    }

    #[test]
    fn state_layout() {
        let v = state_vector(&[9.0, 9.0], &[], 1, 3).unwrap();
        assert_eq!(v, vec![9.0, 9.0, 0.0, 0.0, 0.0, 1.0 / 3.0]);
        let v = state_vector(&[], &[0.75, 0.5], 3, 3).unwrap();
        assert_eq!(v, vec![0.75, 0.5, 0.0, 1.0]);
        assert!(state_vector(&[], &[], 4, 3).is_err());
    }
}
