//! Contrastive identification: an encoder plus latent field trained with
//! multi-horizon InfoNCE, the one-stage port-Hamiltonian variant trained
//! the same way, and the supervised control trained with plain MSE.

use std::collections::VecDeque;
use std::rc::Rc;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adamw_step, clip_grad_norm, cosine_lr, ContrastiveIndex, Mlp, MlpConfig, OptimizerConfig, ParamStore, Tape, Var,
};
use crate::dynamics::{FieldKind, LatentField, PhField};
use crate::encoder::{Encoder, EncoderConfig, WindowBatch};
use crate::error::{Error, Result};
use crate::odeint::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub horizons: Vec<usize>,
    pub temperature: f64,
    /// Same-trajectory candidates within this many steps of the target are
    /// never negatives.
    pub exclusion: usize,
    /// Negative quota per prediction; batch candidates first, the rest from
    /// the memory bank.
    pub n_local_negatives: usize,
    pub memory_bank_capacity: usize,
    pub ema_decay: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            horizons: vec![1, 3, 5, 10],
            temperature: 0.05,
            exclusion: 10,
            n_local_negatives: 2048,
            memory_bank_capacity: 16384,
            ema_decay: 0.995,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config("horizons must be a non-empty set of positive steps".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.n_local_negatives == 0 {
            return Err(Error::Config("n_local_negatives must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay must lie in [0, 1], got {}", self.ema_decay)));
        }
        Ok(())
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Contrastive,
    Supervised,
}

/// Where a latent came from: training trajectory index and time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentTag {
    pub traj: usize,
    pub time: usize,
}

/// Negative-eligibility rule for a prediction of `(traj, target_time)`.
pub fn is_eligible(candidate: LatentTag, traj: usize, target_time: usize, exclusion: usize) -> bool {
    candidate.traj != traj || candidate.time.abs_diff(target_time) > exclusion
}

/// FIFO ring of detached latents with their tags.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    capacity: usize,
    rows: VecDeque<(Vec<f64>, LatentTag)>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        MemoryBank { capacity, rows: VecDeque::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, latent: &[f64], tag: LatentTag) {
        if self.capacity == 0 {
            return;
        }
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
        }
        self.rows.push_back((latent.to_vec(), tag));
    }

    pub fn tag(&self, i: usize) -> LatentTag {
        self.rows[i].1
    }

    /// Current contents as an array whose row `i` matches [`Self::tag`]`(i)`.
    pub fn snapshot(&self, dim: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), dim));
        for (i, (v, _)) in self.rows.iter().enumerate() {
            out.row_mut(i).assign(&ndarray::ArrayView1::from(v.as_slice()));
        }
        out
    }

    /// Up to `n` distinct eligible rows, drawn uniformly.
    pub fn sample_eligible<R: Rng>(
        &self,
        traj: usize,
        target_time: usize,
        exclusion: usize,
        n: usize,
        rng: &mut R,
    ) -> Vec<usize> {
        let len = self.rows.len();
        if n == 0 || len == 0 {
            return Vec::new();
        }
        // Ineligible rows are rare in a bank spanning many trajectories, so
        // oversample a little and filter.
        let draw = (n + n / 4 + 16).min(len);
        let mut out: Vec<usize> = index::sample(rng, len, draw)
            .into_iter()
            .filter(|&i| is_eligible(self.rows[i].1, traj, target_time, exclusion))
            .take(n)
            .collect();
        if out.len() < n && draw < len {
            let eligible: Vec<usize> =
                (0..len).filter(|&i| is_eligible(self.rows[i].1, traj, target_time, exclusion)).collect();
            let take = n.min(eligible.len());
            out = index::sample(rng, eligible.len(), take).into_iter().map(|k| eligible[k]).collect();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeSet {
    /// Rows of the batch candidate matrix.
    pub local: Vec<usize>,
    /// Rows of the memory bank snapshot.
    pub bank: Vec<usize>,
}

/// Negatives for a prediction of `(traj, target_time)`: up to `quota`
/// eligible batch candidates without replacement, the remainder from the
/// bank. `positive` is excluded even if it were eligible.
#[allow(clippy::too_many_arguments)]
pub fn sample_negatives<R: Rng>(
    tags: &[LatentTag],
    positive: usize,
    traj: usize,
    target_time: usize,
    quota: usize,
    exclusion: usize,
    bank: &MemoryBank,
    rng: &mut R,
) -> Result<NegativeSet> {
    let eligible: Vec<usize> = tags
        .iter()
        .enumerate()
        .filter(|&(i, &t)| i != positive && is_eligible(t, traj, target_time, exclusion))
        .map(|(i, _)| i)
        .collect();
    let take = quota.min(eligible.len());
    let local: Vec<usize> = index::sample(rng, eligible.len(), take).into_iter().map(|k| eligible[k]).collect();
    let bank_rows = bank.sample_eligible(traj, target_time, exclusion, quota - take, rng);
    if local.is_empty() && bank_rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no eligible negatives for trajectory {traj} at t={target_time}; the batch is too small"
        )));
    }
    Ok(NegativeSet { local, bank: bank_rows })
}

/// InfoNCE for a single prediction, `−log softmax` of the positive score
/// under similarity `−‖·‖²/τ`.
pub fn infonce_loss(pred: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::InvalidInput("infonce needs at least one negative".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {tau}")));
    }
    let d = pred.len();
    let mut cand = Array2::zeros((1 + negatives.len(), d));
    cand.row_mut(0).assign(&ndarray::ArrayView1::from(positive));
    for (i, n) in negatives.iter().enumerate() {
        if n.len() != d {
            return Err(Error::Shape("negative width differs from prediction".into()));
        }
        cand.row_mut(i + 1).assign(&ndarray::ArrayView1::from(n.as_slice()));
    }
    let idx =
        ContrastiveIndex { positive: vec![0], local: vec![(1..=negatives.len()).collect()], bank_rows: vec![vec![]] };
    let tape = Tape::new();
    let p = tape.row(pred);
    let c = tape.constant(cand);
    Ok(tape.infonce(p, c, Rc::new(idx), Rc::new(Array2::zeros((0, d))), tau)?.item())
}

/// `ema ← decay·ema + (1 − decay)·live`.
pub fn ema_update(live: &ParamStore, ema: &mut ParamStore, decay: f64) -> Result<()> {
    if !live.same_schema(ema) {
        return Err(Error::Shape("EMA store schema differs from the live store".into()));
    }
    for (e, l) in ema.entries_mut().iter_mut().zip(live.entries()) {
        e.value.zip_mut_with(&l.value, |a, &b| *a = decay * *a + (1.0 - decay) * b);
    }
    Ok(())
}

/// Architecture of an encoder + latent field pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherArch {
    pub encoder: EncoderConfig,
    pub field: FieldKind,
    pub field_hidden: Vec<usize>,
    /// Only read for the port-Hamiltonian field.
    pub dissipative: bool,
}

#[derive(Clone, Debug)]
pub struct TeacherModel {
    pub arch: TeacherArch,
    pub encoder: Encoder,
    pub field: LatentField,
}

impl TeacherModel {
    pub fn new<R: Rng>(store: &mut ParamStore, arch: &TeacherArch, obs_dim: usize, rng: &mut R) -> Result<Self> {
        let dz = arch.encoder.latent_dim;
        let encoder = Encoder::new(store, "enc", arch.encoder.clone(), obs_dim, rng)?;
        let field = match arch.field {
            FieldKind::UnconstrainedMlp => {
                let cfg = MlpConfig { hidden: arch.field_hidden.clone(), ..MlpConfig::new(dz, dz) };
                LatentField::Mlp(Mlp::new(store, "field", cfg, rng)?)
            }
            FieldKind::PortHamiltonian => LatentField::PortHamiltonian(PhField::new(
                store,
                "field",
                dz,
                &arch.field_hidden,
                arch.dissipative,
                rng,
            )?),
        };
        Ok(TeacherModel { arch: arch.clone(), encoder, field })
    }

    pub fn attach(store: &ParamStore, arch: &TeacherArch) -> Result<Self> {
        let dz = arch.encoder.latent_dim;
        let encoder = Encoder::attach(store, "enc", arch.encoder.clone())?;
        let field = match arch.field {
            FieldKind::UnconstrainedMlp => {
                let cfg = MlpConfig { hidden: arch.field_hidden.clone(), ..MlpConfig::new(dz, dz) };
                LatentField::Mlp(Mlp::attach(store, "field", cfg)?)
            }
            FieldKind::PortHamiltonian => {
                LatentField::PortHamiltonian(PhField::attach(store, "field", dz, &arch.field_hidden, arch.dissipative)?)
            }
        };
        Ok(TeacherModel { arch: arch.clone(), encoder, field })
    }
}

/// Anchors plus the windows for the anchors and every horizon target,
/// stacked as `[anchors; targets(h₁); targets(h₂); …]`.
#[derive(Clone, Debug)]
pub struct TeacherBatch {
    pub anchors: Vec<(usize, usize)>,
    pub windows: WindowBatch,
    pub tags: Vec<LatentTag>,
}

/// Uniform anchors over `(trajectory, t)` with every horizon target still
/// owning a full window.
pub fn sample_batch<R: Rng>(
    trajs: &[Trajectory],
    enc: &EncoderConfig,
    horizons: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Result<TeacherBatch> {
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let w = enc.window;
    let mut pool = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        let n = t.len();
        if n >= 2 * w + 1 + max_h {
            pool.push((i, n - 1 - w - max_h));
        }
    }
    if pool.is_empty() {
        return Err(Error::InvalidInput(format!("no trajectory is long enough for window {w} and horizon {max_h}")));
    }
    let mut anchors = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (traj, last) = pool[rng.gen_range(0..pool.len())];
        anchors.push((traj, rng.gen_range(w..=last)));
    }
    let mut all = anchors.clone();
    for &h in horizons {
        all.extend(anchors.iter().map(|&(i, t)| (i, t + h)));
    }
    let tags = all.iter().map(|&(traj, time)| LatentTag { traj, time }).collect();
    let windows = WindowBatch::gather(trajs, &all, enc)?;
    Ok(TeacherBatch { anchors, windows, tags })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// Mutable training context: live and EMA parameters, memory bank and the
/// batch RNG.
pub struct TeacherTrainer {
    pub model: TeacherModel,
    pub live: ParamStore,
    pub ema: ParamStore,
    pub bank: MemoryBank,
    pub contrastive: ContrastiveConfig,
    pub optimizer: OptimizerConfig,
    pub objective: Objective,
    pub batch_size: usize,
    pub dt: f64,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl TeacherTrainer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: TeacherModel,
        live: ParamStore,
        contrastive: ContrastiveConfig,
        optimizer: OptimizerConfig,
        objective: Objective,
        batch_size: usize,
        dt: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        contrastive.validate()?;
        optimizer.validate()?;
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        let ema = live.clone();
        let bank = MemoryBank::new(contrastive.memory_bank_capacity);
        Ok(TeacherTrainer { model, live, ema, bank, contrastive, optimizer, objective, batch_size, dt, step: 0, rng })
    }

    /// Loss node plus the latent values of every batch row.
    fn loss<'t>(&mut self, tape: &'t Tape, batch: &TeacherBatch) -> Result<(Var<'t>, Array2<f64>)> {
        let b = batch.anchors.len();
        let z_all = self.model.encoder.encode(tape, &self.live, &batch.windows, Some(&mut self.rng))?;
        let z0 = z_all.gather_rows(Rc::new((0..b).collect()));
        let field = self.model.field.bind(tape, &self.live)?;
        let horizons = self.contrastive.horizons.clone();
        let preds = field.flow_at(z0, &horizons, self.dt)?;
        let mut total: Option<Var<'t>> = None;
        let dz = z_all.shape().1;
        let bank = Rc::new(self.bank.snapshot(dz));
        for (hi, (&h, pred)) in horizons.iter().zip(&preds).enumerate() {
            let offset = b * (1 + hi);
            let term = match self.objective {
                Objective::Supervised => {
                    let target = z_all.gather_rows(Rc::new((offset..offset + b).collect()));
                    (*pred - target).square().sum_rows().mean()
                }
                Objective::Contrastive => {
                    let mut idx = ContrastiveIndex::default();
                    for (i, &(traj, t)) in batch.anchors.iter().enumerate() {
                        let neg = sample_negatives(
                            &batch.tags,
                            offset + i,
                            traj,
                            t + h,
                            self.contrastive.n_local_negatives,
                            self.contrastive.exclusion,
                            &self.bank,
                            &mut self.rng,
                        )?;
                        idx.positive.push(offset + i);
                        idx.local.push(neg.local);
                        idx.bank_rows.push(neg.bank);
                    }
                    tape.infonce(*pred, z_all, Rc::new(idx), bank.clone(), self.contrastive.temperature)?
                }
            };
            total = Some(match total {
                None => term,
                Some(acc) => acc + term,
            });
        }
        let total = total.expect("at least one horizon");
        Ok((total * (1.0 / horizons.len() as f64), z_all.value()))
    }

    /// One optimizer step on a fresh batch.
    pub fn train_step(&mut self, trajs: &[Trajectory]) -> Result<StepStats> {
        let started = Instant::now();
        let batch =
            sample_batch(trajs, &self.model.arch.encoder, &self.contrastive.horizons, self.batch_size, &mut self.rng)?;
        self.live.zero_grad();
        let (loss, latents) = {
            let tape = Tape::new();
            let (loss, latents) = self.loss(&tape, &batch)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("teacher loss is {value} at step {}", self.step)));
            }
            tape.backward(loss, &mut self.live)?;
            (value, latents)
        };
        let grad_norm = crate::autodiff::grad_norm(&self.live);
        clip_grad_norm(&mut self.live, self.optimizer.clip_norm);
        let lr = cosine_lr(self.step.min(self.optimizer.total_steps), &self.optimizer)?;
        adamw_step(&mut self.live, &self.optimizer, lr)?;
        if self.objective == Objective::Contrastive {
            // Targets enter the bank detached and only after the loss, so
            // they never serve as negatives for the step that produced them.
            let b = batch.anchors.len();
            for (row, tag) in latents.rows().into_iter().zip(&batch.tags).skip(b) {
                self.bank.push(&row.to_vec(), *tag);
            }
        }
        ema_update(&self.live, &mut self.ema, self.contrastive.ema_decay)?;
        let stats = StepStats { step: self.step, loss, lr, grad_norm, wall_ms: started.elapsed().as_secs_f64() * 1e3 };
        self.step += 1;
        Ok(stats)
    }

    /// Loss on a batch without updating anything.
    pub fn probe_loss(&mut self, trajs: &[Trajectory]) -> Result<f64> {
        let batch =
            sample_batch(trajs, &self.model.arch.encoder, &self.contrastive.horizons, self.batch_size, &mut self.rng)?;
        let tape = Tape::new();
        Ok(self.loss(&tape, &batch)?.0.item())
    }
}
