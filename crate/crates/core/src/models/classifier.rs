//! Classifiers consuming a full-shape masked sample.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::kernels::{conv1d, dense};
use crate::numerics::{relu, ConvGeom, ParamId, ParamStore, Tape, Var};

/// Anything mapping a `C × T` masked sample to class logits.
pub trait Classifier {
    fn n_classes(&self) -> usize;

    /// Records the forward pass on `tape`; `x` holds the `C × T` input.
    fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var>;

    /// Forward pass without recording.
    fn logits(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, store: &ParamStore, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(store, x)?))
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Two same-padded convolution blocks with relu, global average pooling and a dense output.
#[derive(Clone, Debug)]
pub struct DeskClassifier {
    n_channels: usize,
    series_len: usize,
    n_classes: usize,
    maps: usize,
    kernel_len: usize,
    conv: [(ParamId, ParamId); 2],
    out: (ParamId, ParamId),
}

impl DeskClassifier {
    pub fn new(
        store: &mut ParamStore,
        n_channels: usize,
        series_len: usize,
        n_classes: usize,
        maps: usize,
        kernel_len: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel_len.is_multiple_of(2) || maps == 0 {
            return Err(Error::Config(format!("classifier needs odd kernels and maps > 0, got {maps}x{kernel_len}")));
        }
        let k = kernel_len;
        let c1w = store.glorot("clf.c1.w", &[maps, n_channels, k], n_channels * k, maps * k, rng)?;
        let c1b = store.zeros("clf.c1.b", &[maps])?;
        let c2w = store.glorot("clf.c2.w", &[maps, maps, k], maps * k, maps * k, rng)?;
        let c2b = store.zeros("clf.c2.b", &[maps])?;
        let ow = store.glorot("clf.out.w", &[n_classes, maps], maps, n_classes, rng)?;
        let ob = store.zeros("clf.out.b", &[n_classes])?;
        Ok(DeskClassifier {
            n_channels,
            series_len,
            n_classes,
            maps,
            kernel_len,
            conv: [(c1w, c1b), (c2w, c2b)],
            out: (ow, ob),
        })
    }

    fn geoms(&self) -> [ConvGeom; 2] {
        [
            ConvGeom::same(self.n_channels, self.maps, self.kernel_len, self.series_len),
            ConvGeom::same(self.maps, self.maps, self.kernel_len, self.series_len),
        ]
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n_channels * self.series_len {
            return Err(Error::Input(format!(
                "classifier expects {}x{} inputs, got {len} values",
                self.n_channels, self.series_len
            )));
        }
        Ok(())
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.conv[0].0, self.conv[0].1, self.conv[1].0, self.conv[1].1, self.out.0, self.out.1]
    }
}

impl Classifier for DeskClassifier {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.check(tape.value(x).len())?;
        let mut h = x;
        for (&(w, b), geom) in self.conv.iter().zip(self.geoms()) {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let y = tape.conv1d(h, wv, bv, geom)?;
            h = tape.relu(y);
        }
        let pooled = tape.mean_pool(h, self.maps)?;
        let wv = tape.param(store, self.out.0);
        let bv = tape.param(store, self.out.1);
        tape.dense(pooled, wv, bv)
    }

    fn logits(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let mut h = x.to_vec();
        for (&(w, b), geom) in self.conv.iter().zip(self.geoms()) {
            h = conv1d(&h, &store.get(w).values, &store.get(b).values, &geom);
            h.iter_mut().for_each(|v| *v = relu(*v));
        }
        let t = self.series_len as f64;
        let pooled: Vec<f64> = h.chunks(self.series_len).map(|r| r.iter().sum::<f64>() / t).collect();
        Ok(dense(
            &pooled,
            &store.get(self.out.0).values,
            &store.get(self.out.1).values,
            self.n_classes,
            self.maps,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{RngStream, Stream};

    #[test]
    fn tape_and_direct_agree() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(5, Stream::Init, 0);
        let clf = DeskClassifier::new(&mut store, 2, 7, 3, 4, 3, &mut rng).unwrap();
        let x: Vec<f64> = (0..14).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let z = clf.forward_tape(&mut tape, &store, xv).unwrap();
        let direct = clf.logits(&store, &x).unwrap();
        for (a, b) in tape.value(z).iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(clf.logits(&store, &x).unwrap(), direct);
        assert!(matches!(clf.logits(&store, &x[..13]), Err(Error::Input(_))));
    }

    #[test]
    fn argmax_first_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[-1.0]), 0);
    }
}
