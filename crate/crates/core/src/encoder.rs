//! Windowed state inference: a stacked (optionally bidirectional) GRU reads
//! an observation window and a linear head maps the final hidden states to
//! a latent vector.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GruCell, ParamId, ParamStore, Tape, Var};
use crate::error::{ensure_finite, Error, Result};
use crate::odeint::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Half-width `w`; a bidirectional window spans `2w + 1` frames.
    pub window: usize,
    pub layers: usize,
    pub hidden: usize,
    pub bidirectional: bool,
    pub latent_dim: usize,
    /// Use only `o_{t−w..t}`.
    pub causal_mode: bool,
    /// Dropout between stacked GRU layers, training only.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            window: 10,
            layers: 2,
            hidden: 128,
            bidirectional: true,
            latent_dim: 2,
            causal_mode: false,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 || self.layers < 1 || self.hidden < 1 || self.latent_dim < 1 {
            return Err(Error::Config(format!("encoder dims must be ≥ 1: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Frames per window.
    pub fn frames(&self) -> usize {
        if self.causal_mode {
            self.window + 1
        } else {
            2 * self.window + 1
        }
    }

    /// First row of the window anchored at `t`.
    pub fn window_start(&self, t: usize) -> usize {
        t - self.window
    }

    /// Anchors whose full bidirectional window fits in a series of length
    /// `n`. The causal ablation uses the same anchor set.
    pub fn valid_anchors(&self, n: usize) -> std::ops::RangeInclusive<usize> {
        if n < 2 * self.window + 1 {
            #[allow(clippy::reversed_empty_ranges)]
            return 1..=0;
        }
        self.window..=n - 1 - self.window
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState(pub Vec<f64>);

/// Windows for a batch, stored time-major: `steps[k]` is `B × d_g`.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    pub steps: Vec<Array2<f64>>,
}

impl WindowBatch {
    pub fn batch_size(&self) -> usize {
        self.steps.first().map_or(0, |s| s.nrows())
    }

    /// Builds windows for `(trajectory, anchor)` pairs.
    pub fn gather(trajs: &[Trajectory], anchors: &[(usize, usize)], cfg: &EncoderConfig) -> Result<Self> {
        let frames = cfg.frames();
        let dg = trajs.first().map_or(1, |t| t.observations.ncols());
        let mut steps = vec![Array2::zeros((anchors.len(), dg)); frames];
        for (row, &(ti, t)) in anchors.iter().enumerate() {
            let traj = trajs.get(ti).ok_or_else(|| Error::InvalidInput(format!("trajectory {ti} out of range")))?;
            let n = traj.len();
            if t < cfg.window || t + cfg.window >= n {
                return Err(Error::InvalidInput(format!("anchor {t} has no full window in a series of length {n}")));
            }
            let start = cfg.window_start(t);
            for (k, step) in steps.iter_mut().enumerate() {
                step.row_mut(row).assign(&traj.observations.row(start + k));
            }
        }
        Ok(WindowBatch { steps })
    }

    /// A single window given as frames in time order.
    pub fn single(frames: &[Vec<f64>]) -> Result<Self> {
        let dg = frames.first().map_or(0, |f| f.len());
        let mut steps = Vec::with_capacity(frames.len());
        for f in frames {
            if f.len() != dg {
                return Err(Error::Shape("observation widths differ within the window".into()));
            }
            ensure_finite(f, "observation")?;
            steps.push(Array2::from_shape_vec((1, dg), f.clone()).expect("row"));
        }
        Ok(WindowBatch { steps })
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub obs_dim: usize,
    forward: Vec<GruCell>,
    backward: Vec<GruCell>,
    head_w: ParamId,
    head_b: ParamId,
}

impl Encoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: EncoderConfig,
        obs_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let dirs = if cfg.bidirectional { 2 } else { 1 };
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        for l in 0..cfg.layers {
            let input = if l == 0 { obs_dim } else { dirs * cfg.hidden };
            forward.push(GruCell::new(store, &format!("{prefix}.gru{l}.fwd"), input, cfg.hidden, rng)?);
            if cfg.bidirectional {
                backward.push(GruCell::new(store, &format!("{prefix}.gru{l}.bwd"), input, cfg.hidden, rng)?);
            }
        }
        let feat = dirs * cfg.hidden;
        let head_w = store.add_uniform(&format!("{prefix}.head.w"), (feat, cfg.latent_dim), feat, rng)?;
        let head_b = store.add_uniform(&format!("{prefix}.head.b"), (1, cfg.latent_dim), feat, rng)?;
        Ok(Encoder { cfg, obs_dim, forward, backward, head_w, head_b })
    }

    pub fn attach(store: &ParamStore, prefix: &str, cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut forward = Vec::new();
        let mut backward = Vec::new();
        for l in 0..cfg.layers {
            forward.push(GruCell::attach(store, &format!("{prefix}.gru{l}.fwd"))?);
            if cfg.bidirectional {
                backward.push(GruCell::attach(store, &format!("{prefix}.gru{l}.bwd"))?);
            }
        }
        let get = |n: &str| {
            let name = format!("{prefix}.{n}");
            store.id(&name).ok_or_else(|| Error::Data(format!("missing parameter {name}")))
        };
        let obs_dim = forward[0].input;
        Ok(Encoder { cfg, obs_dim, forward, backward, head_w: get("head.w")?, head_b: get("head.b")? })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.forward.iter().chain(&self.backward).flat_map(|c| c.param_ids()).collect();
        ids.extend([self.head_w, self.head_b]);
        ids
    }

    /// Encodes a batch of windows to `B × d_z`. Passing an RNG enables
    /// training-mode dropout; `None` is evaluation mode.
    pub fn encode<'t, R: Rng>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        batch: &WindowBatch,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<Var<'t>> {
        if batch.steps.len() != self.cfg.frames() {
            return Err(Error::InvalidInput(format!(
                "window has {} frames, encoder expects {}",
                batch.steps.len(),
                self.cfg.frames()
            )));
        }
        let b = batch.batch_size();
        if batch.steps.iter().any(|s| s.ncols() != self.obs_dim || s.nrows() != b) {
            return Err(Error::Shape(format!("window frames must be {b} × {}", self.obs_dim)));
        }
        let mut inputs: Vec<Var<'t>> = batch.steps.iter().map(|s| tape.constant(s.clone())).collect();
        let zeros = tape.constant(Array2::zeros((b, self.cfg.hidden)));
        let mut last_fwd = zeros;
        let mut last_bwd = zeros;
        for l in 0..self.cfg.layers {
            if l > 0 && self.cfg.dropout > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let keep = 1.0 - self.cfg.dropout;
                    let width = inputs[0].shape().1;
                    inputs = inputs
                        .into_iter()
                        .map(|x| {
                            let mask = Array2::from_shape_simple_fn((b, width), || {
                                if rng.gen::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            });
                            x * tape.constant(mask)
                        })
                        .collect();
                }
            }
            let fwd = self.forward[l].bind(tape, store);
            let mut h = zeros;
            let mut outs_f = Vec::with_capacity(inputs.len());
            for x in &inputs {
                h = fwd.step(*x, h)?;
                outs_f.push(h);
            }
            last_fwd = h;
            if self.cfg.bidirectional {
                let bwd = self.backward[l].bind(tape, store);
                let mut h = zeros;
                let mut outs_b = vec![zeros; inputs.len()];
                for (k, x) in inputs.iter().enumerate().rev() {
                    h = bwd.step(*x, h)?;
                    outs_b[k] = h;
                }
                last_bwd = h;
                if l + 1 < self.cfg.layers {
                    inputs = outs_f.iter().zip(&outs_b).map(|(f, bk)| Var::concat_cols(&[*f, *bk])).collect();
                }
            } else if l + 1 < self.cfg.layers {
                inputs = outs_f;
            }
        }
        let feat = if self.cfg.bidirectional { Var::concat_cols(&[last_fwd, last_bwd]) } else { last_fwd };
        let w = tape.param(store, self.head_w);
        let c = tape.param(store, self.head_b);
        Ok(feat.matmul(w) + c)
    }

    /// Evaluation-mode latents as a plain array, batched in chunks to keep
    /// the tape small.
    pub fn encode_values(&self, store: &ParamStore, batch: &WindowBatch, chunk: usize) -> Result<Array2<f64>> {
        let b = batch.batch_size();
        let mut out = Array2::zeros((b, self.cfg.latent_dim));
        let chunk = chunk.max(1);
        let mut start = 0;
        while start < b {
            let end = (start + chunk).min(b);
            let sub = WindowBatch {
                steps: batch.steps.iter().map(|s| s.slice(ndarray::s![start..end, ..]).to_owned()).collect(),
            };
            let tape = Tape::new();
            let z = self.encode::<rand::rngs::ThreadRng>(&tape, store, &sub, None)?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&z.value());
            start = end;
        }
        Ok(out)
    }

    /// Latent for one window (`2w + 1` frames, or `w + 1` in causal mode).
    pub fn encode_window(&self, store: &ParamStore, window: &[Vec<f64>]) -> Result<LatentState> {
        if window.len() != self.cfg.frames() {
            return Err(Error::InvalidInput(format!(
                "window has {} frames, expected {}",
                window.len(),
                self.cfg.frames()
            )));
        }
        let z = self.encode_values(store, &WindowBatch::single(window)?, 1)?;
        Ok(LatentState(z.row(0).to_vec()))
    }

    /// One latent per valid anchor `t ∈ [w, N−1−w]`, in anchor order.
    pub fn encode_series(&self, store: &ParamStore, traj: &Trajectory) -> Result<Vec<LatentState>> {
        let n = traj.len();
        if n < 2 * self.cfg.window + 1 {
            return Err(Error::InvalidInput(format!(
                "series of length {n} is shorter than a window of {}",
                2 * self.cfg.window + 1
            )));
        }
        let anchors: Vec<(usize, usize)> = self.cfg.valid_anchors(n).map(|t| (0, t)).collect();
        let batch = WindowBatch::gather(std::slice::from_ref(traj), &anchors, &self.cfg)?;
        let z = self.encode_values(store, &batch, 512)?;
        Ok(z.rows().into_iter().map(|r| LatentState(r.to_vec())).collect())
    }
}
