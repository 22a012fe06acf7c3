//! Central finite-difference checks of tape gradients against parameter leaves.

use rand::Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-2;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates whose one-sided differences disagree, i.e. a kink lies within the step.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// `(tensor name, index, analytic, numeric)` of the largest error.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheck {
    pub fn merge(&mut self, other: &GradCheck) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.max_rel_err > self.max_rel_err || self.worst.is_none() {
            self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
            if other.worst.is_some() {
                self.worst = other.worst.clone();
            }
        }
    }
}

fn eval(store: &ParamStore, f: &impl Fn(&mut Tape, &ParamStore) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::Invariant("gradient checks need a scalar loss".into()));
    }
    Ok(tape.scalar(loss))
}

/// Compares the backward pass of the scalar loss `f` with central differences
/// for every parameter entry, or for `max_coords` entries drawn from `rng`.
pub fn check_gradients(
    store: &mut ParamStore,
    f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
    max_coords: Option<usize>,
    rng: &mut impl Rng,
) -> Result<GradCheck> {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, 1.0).accumulate(&tape, store);
    let f0 = tape.scalar(loss);
    let mut coords: Vec<(usize, usize)> = store
        .iter()
        .enumerate()
        .flat_map(|(t, p)| (0..p.len()).map(move |i| (t, i)))
        .collect();
    if let Some(k) = max_coords.filter(|&k| k < coords.len()) {
        let picks = rand::seq::index::sample(rng, coords.len(), k);
        coords = picks.iter().map(|i| coords[i]).collect();
    }
    let ids: Vec<_> = store.ids().collect();
    let mut report = GradCheck::default();
    for (t, i) in coords {
        let id = ids[t];
        let v = store.get(id).values[i];
        let h = FD_STEP * v.abs().max(1.0);
        store.get_mut(id).values[i] = v + h;
        let fp = eval(store, &f)?;
        store.get_mut(id).values[i] = v - h;
        let fm = eval(store, &f)?;
        store.get_mut(id).values[i] = v;
        let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1.0) {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let analytic = store.get(id).grads[i];
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((store.get(id).name.clone(), i, analytic, numeric));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamTensor, RngStream, Stream};

    #[test]
    fn catches_a_wrong_gradient() {
        let mut store = ParamStore::new();
        let mut t = ParamTensor::zeros("x", &[3]);
        t.values = vec![0.3, -0.2, 1.1];
        let id = store.insert(t).unwrap();
        let mut rng = RngStream::new(0, Stream::Init, 0);
        let ok = check_gradients(
            &mut store,
            |tape, s| {
                let x = tape.param(s, id);
                let y = tape.sigmoid(x);
                let w = tape.input(vec![1.0, 2.0, -1.0]);
                let b = tape.input(vec![0.0]);
                tape.dense(y, w, b)
            },
            None,
            &mut rng,
        )
        .unwrap();
        assert_eq!(ok.checked, 3);
        assert!(ok.max_rel_err < 1e-8, "{ok:?}");
        // a constant-valued shortcut has zero analytic gradient but nonzero numeric one
        let bad = check_gradients(
            &mut store,
            |tape, s| {
                let x = tape.param(s, id);
                let v = tape.value(x).iter().sum::<f64>();
                Ok(tape.input(vec![v]))
            },
            None,
            &mut rng,
        )
        .unwrap();
        assert!(bad.max_rel_err > 0.5);
    }

    #[test]
    fn kinks_are_skipped() {
        let mut store = ParamStore::new();
        let id = store.insert(ParamTensor::zeros("x", &[1])).unwrap();
        let mut rng = RngStream::new(0, Stream::Init, 0);
        let r = check_gradients(
            &mut store,
            |tape, s| {
                let x = tape.param(s, id);
                Ok(tape.relu(x))
            },
            None,
            &mut rng,
        )
        .unwrap();
        assert_eq!((r.checked, r.skipped), (0, 1));
    }
}
