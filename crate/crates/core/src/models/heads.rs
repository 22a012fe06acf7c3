//! Small feed-forward heads reading the episode state.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::kernels::dense;
use crate::numerics::{relu, sigmoid, softplus, ParamId, ParamStore, Tape, Var};

/// Dense layers with relu between them and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId, usize, usize)>,
}

impl Mlp {
    /// `sizes = [input, hidden…, output]`.
    pub fn new(store: &mut ParamStore, prefix: &str, sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?} for {prefix}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, w) in sizes.windows(2).enumerate() {
            let (cols, rows) = (w[0], w[1]);
            let wid = store.glorot(&format!("{prefix}.l{i}.w"), &[rows, cols], cols, rows, rng)?;
            let bid = store.zeros(&format!("{prefix}.l{i}.b"), &[rows])?;
            layers.push((wid, bid, rows, cols));
        }
        Ok(Mlp { layers })
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].3
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().2
    }

    /// Parameter tensors of the output layer.
    pub fn last_layer(&self) -> (ParamId, ParamId) {
        let l = self.layers.last().unwrap();
        (l.0, l.1)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.0, l.1]).collect()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.input_len() {
            return Err(Error::Input(format!("head expects {} inputs, got {len}", self.input_len())));
        }
        Ok(())
    }

    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        self.check(tape.value(x).len())?;
        let mut h = x;
        for (i, &(w, b, _, _)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            h = tape.dense(h, wv, bv)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len())?;
        let mut h = x.to_vec();
        for (i, &(w, b, rows, cols)) in self.layers.iter().enumerate() {
            h = dense(&h, &store.get(w).values, &store.get(b).values, rows, cols);
            if i + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = relu(*v));
            }
        }
        Ok(h)
    }
}

/// Beta-distribution parameters of the filter action, each `softplus(·) + 1`.
#[derive(Clone, Debug)]
pub struct FilterHead(pub Mlp);

impl FilterHead {
    pub fn new(store: &mut ParamStore, state_len: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(state_len).chain(hidden.iter().copied()).chain([2]).collect();
        Ok(FilterHead(Mlp::new(store, "filter", &sizes, rng)?))
    }

    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, state: Var) -> Result<(Var, Var)> {
        let raw = self.0.forward_tape(tape, store, state)?;
        let mut out = [raw; 2];
        for (i, o) in out.iter_mut().enumerate() {
            let r = tape.pick(raw, i);
            let s = tape.softplus(r);
            *o = tape.add_const(s, 1.0);
        }
        Ok((out[0], out[1]))
    }

    pub fn forward(&self, store: &ParamStore, state: &[f64]) -> Result<(f64, f64)> {
        let raw = self.0.forward(store, state)?;
        Ok((softplus(raw[0]) + 1.0, softplus(raw[1]) + 1.0))
    }
}

/// Stop probability from the state and the snapped filter fraction.
#[derive(Clone, Debug)]
pub struct StopHead(pub Mlp);

impl StopHead {
    pub fn new(store: &mut ParamStore, state_len: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(state_len + 1).chain(hidden.iter().copied()).chain([1]).collect();
        Ok(StopHead(Mlp::new(store, "stop", &sizes, rng)?))
    }

    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, state: Var, fraction: f64) -> Result<Var> {
        let f = tape.input(vec![fraction]);
        let x = tape.concat(&[state, f]);
        let z = self.0.forward_tape(tape, store, x)?;
        Ok(tape.sigmoid(z))
    }

    pub fn forward(&self, store: &ParamStore, state: &[f64], fraction: f64) -> Result<f64> {
        let mut x = state.to_vec();
        x.push(fraction);
        Ok(sigmoid(self.0.forward(store, &x)?[0]))
    }
}

/// State-value estimate used to centre returns.
#[derive(Clone, Debug)]
pub struct BaselineHead(pub Mlp);

impl BaselineHead {
    pub fn new(store: &mut ParamStore, state_len: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(state_len).chain(hidden.iter().copied()).chain([1]).collect();
        Ok(BaselineHead(Mlp::new(store, "baseline", &sizes, rng)?))
    }

    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, state: Var) -> Result<Var> {
        let z = self.0.forward_tape(tape, store, state)?;
        Ok(tape.pick(z, 0))
    }

    pub fn forward(&self, store: &ParamStore, state: &[f64]) -> Result<f64> {
        Ok(self.0.forward(store, state)?[0])
    }
}
