//! Dense building blocks recorded on a [`Tape`]: tanh MLPs (with an explicit
//! input-gradient graph for scalar heads) and GRU cells.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        MlpConfig { in_dim, out_dim, hidden: vec![64, 64], activation: Activation::Tanh }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidInput(format!("MLP dims must be ≥ 1: {self:?}")));
        }
        Ok(())
    }
}

/// Tanh MLP with a linear output layer. Weights are stored `fan_in × fan_out`
/// so a batch `x` (rows) maps as `x·W + b`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub cfg: MlpConfig,
    layers: Vec<(ParamId, ParamId)>,
}

/// An [`Mlp`] whose parameters have been placed on a tape once, so repeated
/// evaluations (RK4 stages, rollouts) share the same leaves.
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
    in_dim: usize,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: MlpConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut dims = vec![cfg.in_dim];
        dims.extend(&cfg.hidden);
        dims.push(cfg.out_dim);
        let mut layers = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            let wid = store.add_uniform(&format!("{prefix}.w{l}"), (w[0], w[1]), w[0], rng)?;
            let bid = store.add_uniform(&format!("{prefix}.b{l}"), (1, w[1]), w[0], rng)?;
            layers.push((wid, bid));
        }
        Ok(Mlp { cfg, layers })
    }

    /// Re-attach to parameters already present in `store` (after loading a
    /// checkpoint).
    pub fn attach(store: &ParamStore, prefix: &str, cfg: MlpConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.hidden.len() + 1;
        let mut layers = Vec::with_capacity(n);
        for l in 0..n {
            let get = |n: String| store.id(&n).ok_or_else(|| Error::Data(format!("missing parameter {n}")));
            layers.push((get(format!("{prefix}.w{l}"))?, get(format!("{prefix}.b{l}"))?));
        }
        Ok(Mlp { cfg, layers })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundMlp<'t> {
        BoundMlp {
            layers: self.layers.iter().map(|&(w, b)| (tape.param(store, w), tape.param(store, b))).collect(),
            in_dim: self.cfg.in_dim,
        }
    }

    /// Single forward pass on a fresh binding.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        self.bind(tape, store).forward(x)
    }
}

impl<'t> BoundMlp<'t> {
    fn check(&self, x: Var<'t>) -> Result<()> {
        if x.shape().1 != self.in_dim {
            return Err(Error::Shape(format!("MLP expects input width {}, got {:?}", self.in_dim, x.shape())));
        }
        Ok(())
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.check(x)?;
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w) + b;
            if l < last {
                h = h.tanh();
            }
        }
        Ok(h)
    }

    /// Output and `∇ₓ` of a scalar-output MLP, both as tape nodes so a loss
    /// built on the gradient can itself be differentiated with respect to
    /// the weights.
    pub fn forward_with_input_grad(&self, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check(x)?;
        let last = self.layers.len() - 1;
        if self.layers[last].0.shape().1 != 1 {
            return Err(Error::Shape("input gradient needs a scalar-output MLP".into()));
        }
        let mut acts = Vec::with_capacity(last);
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(w) + b;
            if l < last {
                h = h.tanh();
                acts.push(h);
            }
        }
        // g starts as ∂H/∂a_last = W_lastᵀ (broadcast over the batch).
        let mut g = self.layers[last].0.t();
        for l in (0..last).rev() {
            let a = acts[l];
            let dact = 1.0 - a.square();
            g = (g * dact).matmul(self.layers[l].0.t());
        }
        if g.shape().0 != x.shape().0 {
            // Zero-hidden-layer case: the gradient is the same for every row.
            let ones = x.tape().constant(Array2::ones((x.shape().0, 1)));
            g = ones.matmul(g);
        }
        Ok((h, g))
    }
}

/// Standard GRU cell with gates ordered (reset, update, candidate):
///
/// r = σ(x W_r + b_r + h U_r + c_r), u = σ(x W_u + b_u + h U_u + c_u),
/// n = tanh(x W_n + b_n + r ⊙ (h U_n + c_n)), h' = (1 − u) ⊙ n + u ⊙ h.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    w_x: ParamId,
    w_h: ParamId,
    b_x: ParamId,
    b_h: ParamId,
}

pub struct BoundGru<'t> {
    w_x: Var<'t>,
    w_h: Var<'t>,
    b_x: Var<'t>,
    b_h: Var<'t>,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidInput("GRU dims must be ≥ 1".into()));
        }
        Ok(GruCell {
            input,
            hidden,
            w_x: store.add_uniform(&format!("{prefix}.w_x"), (input, 3 * hidden), hidden, rng)?,
            w_h: store.add_uniform(&format!("{prefix}.w_h"), (hidden, 3 * hidden), hidden, rng)?,
            b_x: store.add_uniform(&format!("{prefix}.b_x"), (1, 3 * hidden), hidden, rng)?,
            b_h: store.add_uniform(&format!("{prefix}.b_h"), (1, 3 * hidden), hidden, rng)?,
        })
    }

    pub fn attach(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            let name = format!("{prefix}.{n}");
            store.id(&name).ok_or_else(|| Error::Data(format!("missing parameter {name}")))
        };
        let w_x = get("w_x")?;
        let (input, three_h) = store.value(w_x).dim();
        Ok(GruCell { input, hidden: three_h / 3, w_x, w_h: get("w_h")?, b_x: get("b_x")?, b_h: get("b_h")? })
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w_x, self.w_h, self.b_x, self.b_h]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, store: &ParamStore) -> BoundGru<'t> {
        BoundGru {
            w_x: tape.param(store, self.w_x),
            w_h: tape.param(store, self.w_h),
            b_x: tape.param(store, self.b_x),
            b_h: tape.param(store, self.b_h),
            input: self.input,
            hidden: self.hidden,
        }
    }
}

impl<'t> BoundGru<'t> {
    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// One step over a batch: `x` is `B × input`, `h` is `B × hidden`.
    pub fn step(&self, x: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let (bx, ix) = x.shape();
        let (bh, ih) = h.shape();
        if ix != self.input || ih != self.hidden || bx != bh {
            return Err(Error::Shape(format!(
                "GRU({}→{}) got x {:?}, h {:?}",
                self.input,
                self.hidden,
                (bx, ix),
                (bh, ih)
            )));
        }
        let hd = self.hidden;
        let gx = x.matmul(self.w_x) + self.b_x;
        let gh = h.matmul(self.w_h) + self.b_h;
        let r = (gx.slice_cols(0, hd) + gh.slice_cols(0, hd)).sigmoid();
        let u = (gx.slice_cols(hd, 2 * hd) + gh.slice_cols(hd, 2 * hd)).sigmoid();
        let n = (gx.slice_cols(2 * hd, 3 * hd) + r * gh.slice_cols(2 * hd, 3 * hd)).tanh();
        Ok((1.0 - u) * n + u * h)
    }
}
