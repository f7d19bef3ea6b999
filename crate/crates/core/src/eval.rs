//! Measurement suite: affine alignment of latents to physical states,
//! per-horizon R² for identification and projection, energy diagnostics
//! along rollouts, Hamiltonian grid export and the metrics report.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::dynamics::{LatentField, PhField};
use crate::encoder::{Encoder, WindowBatch};
use crate::error::{Error, Result};
use crate::odeint::{Split, Trajectory};
use crate::student::Student;

/// Ridge added to the centred normal equations (not to the intercept),
/// relative to the mean diagonal of the Gram matrix.
pub const ALIGNMENT_RIDGE: f64 = 1e-14;
/// Designs whose centred Gram matrix is worse conditioned than this are
/// rejected.
pub const MAX_CONDITION: f64 = 1e12;
/// Anchors per parallel evaluation chunk.
const CHUNK: usize = 64;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Shape(format!("solve needs square a and matching b, got {:?} {:?}", a.dim(), b.dim())));
    }
    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs())).expect("non-empty range");
        if m[[piv, col]] == 0.0 || !m[[piv, col]].is_finite() {
            return Err(Error::Numerical("singular system".into()));
        }
        if piv != col {
            for k in 0..n {
                m.swap([piv, k], [col, k]);
            }
            for k in 0..x.ncols() {
                x.swap([piv, k], [col, k]);
            }
        }
        for row in col + 1..n {
            let f = m[[row, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[[row, k]] -= f * m[[col, k]];
            }
            for k in 0..x.ncols() {
                x[[row, k]] -= f * x[[col, k]];
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..x.ncols() {
            let mut s = x[[col, k]];
            for j in col + 1..n {
                s -= m[[col, j]] * x[[j, k]];
            }
            x[[col, k]] = s / m[[col, col]];
        }
    }
    Ok(x)
}

fn norm1(a: &Array2<f64>) -> f64 {
    a.axis_iter(Axis(1)).map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `‖a‖₁ ‖a⁻¹‖₁`, infinite when `a` is singular.
pub fn condition_estimate(a: &Array2<f64>) -> f64 {
    match solve(a, &Array2::eye(a.nrows())) {
        Ok(inv) => norm1(a) * norm1(&inv),
        Err(_) => f64::INFINITY,
    }
}

/// `s ≈ W z + c`, fitted on one split.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineAlignment {
    /// `d_s × d_z`.
    pub w: Array2<f64>,
    pub c: Vec<f64>,
    /// Mean squared residual on the fit set.
    pub fit_residual: f64,
    pub fit_split: Split,
}

impl AffineAlignment {
    /// Applies the map to each row of `z`.
    pub fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.w.t()) + &Array1::from(self.c.clone())
    }
}

/// Least squares `min Σ‖W z + c − s‖²` over rows.
pub fn fit_alignment(latents: &Array2<f64>, states: &Array2<f64>, split: Split) -> Result<AffineAlignment> {
    let (n, dz) = latents.dim();
    if states.nrows() != n {
        return Err(Error::Shape(format!("{n} latents but {} states", states.nrows())));
    }
    if n < dz + 1 {
        return Err(Error::InvalidInput(format!("alignment needs at least {} pairs, got {n}", dz + 1)));
    }
    let zm = latents.mean_axis(Axis(0)).expect("non-empty");
    let sm = states.mean_axis(Axis(0)).expect("non-empty");
    let zc = latents - &zm;
    let sc = states - &sm;
    let raw = zc.t().dot(&zc);
    let cond = condition_estimate(&raw);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Numerical(format!("alignment design is rank-deficient (condition ≈ {cond:e})")));
    }
    let scale = raw.diag().mean().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let gram = raw + Array2::<f64>::eye(dz) * (ALIGNMENT_RIDGE * scale);
    // Solve for Wᵀ (d_z × d_s).
    let wt = solve(&gram, &zc.t().dot(&sc))?;
    let w = wt.t().to_owned();
    let c = (&sm - &w.dot(&zm)).to_vec();
    let align = AffineAlignment { w, c, fit_residual: 0.0, fit_split: split };
    let resid = &align.apply(latents) - states;
    let fit_residual = resid.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(AffineAlignment { fit_residual, ..align })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct R2Curve {
    /// Entry `h − 1` is the score at horizon `h`.
    pub per_horizon: Vec<f64>,
    pub auc: f64,
    /// Std over anchors of each anchor's share of the AUC. Anchor `i` scores
    /// `mean_h (1 − e_ih / v_h)` with `e_ih` its squared error and `v_h` the
    /// pooled per-anchor variance, so these average to `auc` exactly.
    pub auc_std_anchors: f64,
}

impl R2Curve {
    pub fn from_scores(per_horizon: Vec<f64>) -> Self {
        let auc = per_horizon.iter().sum::<f64>() / per_horizon.len().max(1) as f64;
        R2Curve { per_horizon, auc, auc_std_anchors: 0.0 }
    }

    /// Curve from predictions and targets at horizons `1..=k`.
    pub fn from_predictions(preds: &[Array2<f64>], truths: &[Array2<f64>]) -> Result<Self> {
        if preds.len() != truths.len() || preds.is_empty() {
            return Err(Error::Shape("r2 curve needs matching non-empty horizon lists".into()));
        }
        let n = truths[0].nrows();
        let mut per_anchor = vec![0.0; n];
        let mut scores = Vec::with_capacity(preds.len());
        for (p, t) in preds.iter().zip(truths) {
            scores.push(r2_score(p, t)?);
            let mean = t.mean_axis(Axis(0)).expect("non-empty");
            let v = (t - &mean).iter().map(|x| x * x).sum::<f64>() / n as f64;
            for (i, (pr, tr)) in p.rows().into_iter().zip(t.rows()).enumerate() {
                let e: f64 = pr.iter().zip(tr.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                per_anchor[i] += (1.0 - e / v) / preds.len() as f64;
            }
        }
        let mut curve = R2Curve::from_scores(scores);
        curve.auc_std_anchors = std_dev(&per_anchor);
        Ok(curve)
    }
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `1 − Σ‖ŷ − y‖² / Σ‖y − ȳ‖²` pooled over rows.
pub fn r2_score(pred: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred.dim() != truth.dim() || truth.nrows() == 0 {
        return Err(Error::Shape(format!(
            "r2 needs matching non-empty arrays, got {:?} {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    let mean = truth.mean_axis(Axis(0)).expect("non-empty");
    let ss_res: f64 = (pred - truth).iter().map(|v| v * v).sum();
    let ss_tot: f64 = (truth - &mean).iter().map(|v| v * v).sum();
    if ss_tot == 0.0 {
        return Err(Error::Numerical("r2 target has zero variance".into()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Anchors `t₀` at `stride` with a full window and `t₀ + k` in range, thinned
/// evenly to at most `cap`.
pub fn eval_anchors(trajs: &[Trajectory], window: usize, k: usize, stride: usize, cap: usize) -> Vec<(usize, usize)> {
    let mut all = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        let n = t.len();
        let mut t0 = window;
        while t0 + k.max(window) < n {
            all.push((i, t0));
            t0 += stride.max(1);
        }
    }
    if cap > 0 && all.len() > cap {
        let step = all.len() as f64 / cap as f64;
        all = (0..cap).map(|j| all[(j as f64 * step) as usize]).collect();
    }
    all
}

/// True states at `t₀ + h` for every anchor.
pub fn true_states(trajs: &[Trajectory], anchors: &[(usize, usize)], h: usize) -> Array2<f64> {
    let ds = trajs.first().map_or(2, |t| t.states.ncols());
    let mut out = Array2::zeros((anchors.len(), ds));
    for (row, &(i, t)) in anchors.iter().enumerate() {
        out.row_mut(row).assign(&trajs[i].states.row(t + h));
    }
    out
}

/// Something that infers a state at an anchor and rolls it forward.
pub trait LatentModel: Sync {
    fn encode(&self, trajs: &[Trajectory], anchors: &[(usize, usize)]) -> Result<Array2<f64>>;
    /// `n + 1` states starting with `z0`.
    fn rollout(&self, z0: &Array2<f64>, n: usize) -> Result<Vec<Array2<f64>>>;
}

/// Encoder plus latent field, e.g. the (EMA) teacher.
pub struct FlowModel<'a> {
    pub encoder: &'a Encoder,
    pub field: &'a LatentField,
    pub store: &'a ParamStore,
    pub dt: f64,
}

impl LatentModel for FlowModel<'_> {
    fn encode(&self, trajs: &[Trajectory], anchors: &[(usize, usize)]) -> Result<Array2<f64>> {
        let batch = WindowBatch::gather(trajs, anchors, &self.encoder.cfg)?;
        self.encoder.encode_values(self.store, &batch, 256)
    }

    fn rollout(&self, z0: &Array2<f64>, n: usize) -> Result<Vec<Array2<f64>>> {
        crate::dynamics::rollout(self.field, self.store, z0, n, self.dt)
    }
}

/// Student rolled out in its own coordinates `x = A z + b`, starting from the
/// teacher's anchor latent.
pub struct StudentModel<'a> {
    pub teacher: &'a FlowModel<'a>,
    pub student: &'a Student,
    pub store: &'a ParamStore,
    pub dt: f64,
}

impl StudentModel<'_> {
    /// Rollout mapped back to teacher coordinates.
    pub fn rollout_teacher_frame(&self, z0: &Array2<f64>, n: usize) -> Result<Vec<Array2<f64>>> {
        Ok(crate::student::student_rollout(self.student, self.store, z0, n, self.dt)?.z)
    }
}

impl LatentModel for StudentModel<'_> {
    fn encode(&self, trajs: &[Trajectory], anchors: &[(usize, usize)]) -> Result<Array2<f64>> {
        let z = self.teacher.encode(trajs, anchors)?;
        Ok(self.student.chart.values(self.store)?.forward(&z))
    }

    fn rollout(&self, x0: &Array2<f64>, n: usize) -> Result<Vec<Array2<f64>>> {
        crate::dynamics::rollout(&self.student.field(), self.store, x0, n, self.dt)
    }
}

/// Ground-truth states and dynamics, for sanity checks.
pub struct OracleModel<F> {
    pub field: F,
    pub dt: f64,
}

impl<F> LatentModel for OracleModel<F>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    fn encode(&self, trajs: &[Trajectory], anchors: &[(usize, usize)]) -> Result<Array2<f64>> {
        Ok(true_states(trajs, anchors, 0))
    }

    fn rollout(&self, z0: &Array2<f64>, n: usize) -> Result<Vec<Array2<f64>>> {
        let mut out = vec![Array2::zeros(z0.dim()); n + 1];
        for (row, x) in z0.rows().into_iter().enumerate() {
            let traj = crate::odeint::rollout(&self.field, &x.to_vec(), n, self.dt)?;
            for (k, s) in traj.iter().enumerate() {
                out[k].row_mut(row).assign(&Array1::from(s.clone()));
            }
        }
        Ok(out)
    }
}

/// Rollouts of `k` steps from every anchor, concatenated per step. Chunks of
/// anchors run in parallel.
pub fn batched_rollouts(
    model: &dyn LatentModel,
    trajs: &[Trajectory],
    anchors: &[(usize, usize)],
    k: usize,
) -> Result<Vec<Array2<f64>>> {
    let chunks: Vec<&[(usize, usize)]> = anchors.chunks(CHUNK).collect();
    let parts = crate::par::try_map_range(chunks.len(), |c| {
        let z0 = model.encode(trajs, chunks[c])?;
        model.rollout(&z0, k)
    })?;
    stack_steps(parts, k)
}

fn stack_steps(parts: Vec<Vec<Array2<f64>>>, k: usize) -> Result<Vec<Array2<f64>>> {
    (0..=k)
        .map(|h| {
            let views: Vec<_> = parts.iter().map(|p| p[h].view()).collect();
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
        })
        .collect()
}

/// Model states at every anchor, chunks encoded in parallel.
pub fn encode_anchors(
    model: &dyn LatentModel,
    trajs: &[Trajectory],
    anchors: &[(usize, usize)],
) -> Result<Array2<f64>> {
    let chunks: Vec<&[(usize, usize)]> = anchors.chunks(CHUNK).collect();
    let parts = crate::par::try_map_range(chunks.len(), |c| model.encode(trajs, chunks[c]))?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Fits the alignment from model latents at training anchors.
pub fn fit_model_alignment(
    model: &dyn LatentModel,
    train: &[Trajectory],
    anchors: &[(usize, usize)],
) -> Result<AffineAlignment> {
    let z = encode_anchors(model, train, anchors)?;
    fit_alignment(&z, &true_states(train, anchors, 0), Split::Train)
}

/// Identification curve `R²_id(h)`, `h = 1..=k`, of aligned rollouts against
/// true states.
pub fn r2_identification(
    model: &dyn LatentModel,
    alignment: &AffineAlignment,
    test: &[Trajectory],
    anchors: &[(usize, usize)],
    k: usize,
) -> Result<R2Curve> {
    if alignment.fit_split != Split::Train {
        return Err(Error::InvalidInput(format!(
            "alignment was fitted on the {:?} split; it must come from train",
            alignment.fit_split
        )));
    }
    if anchors.is_empty() {
        return Err(Error::InvalidInput("empty anchor pool".into()));
    }
    let rolls = batched_rollouts(model, test, anchors, k)?;
    let preds: Vec<_> = (1..=k).map(|h| alignment.apply(&rolls[h])).collect();
    let truths: Vec<_> = (1..=k).map(|h| true_states(test, anchors, h)).collect();
    R2Curve::from_predictions(&preds, &truths)
}

/// Projection curve `R²_proj(h)`: back-charted student rollouts against the
/// teacher rollout from the same anchor latent.
pub fn r2_projection(
    student: &StudentModel<'_>,
    test: &[Trajectory],
    anchors: &[(usize, usize)],
    k: usize,
) -> Result<R2Curve> {
    if anchors.is_empty() {
        return Err(Error::InvalidInput("empty anchor pool".into()));
    }
    let chunks: Vec<&[(usize, usize)]> = anchors.chunks(CHUNK).collect();
    let parts = crate::par::try_map_range(chunks.len(), |c| {
        let z0 = student.teacher.encode(test, chunks[c])?;
        Ok::<_, Error>((student.teacher.rollout(&z0, k)?, student.rollout_teacher_frame(&z0, k)?))
    })?;
    let (t_parts, s_parts): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    let zt = stack_steps(t_parts, k)?;
    let zs = stack_steps(s_parts, k)?;
    R2Curve::from_predictions(&zs[1..], &zt[1..])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyProfile {
    pub steps: Vec<usize>,
    pub h_values: Vec<f64>,
    pub dh_dt: Vec<f64>,
    pub max_rise: f64,
    pub monotone_fraction: f64,
}

impl EnergyProfile {
    /// Energy samples along one rollout at spacing `dt`.
    pub fn from_values(h_values: Vec<f64>, dt: f64) -> Result<Self> {
        let n = h_values.len();
        if n == 0 {
            return Err(Error::InvalidInput("energy profile of an empty rollout".into()));
        }
        let dh_dt = (0..n)
            .map(|k| match (k, n) {
                (_, 1) => 0.0,
                (0, _) => (h_values[1] - h_values[0]) / dt,
                (k, n) if k == n - 1 => (h_values[k] - h_values[k - 1]) / dt,
                (k, _) => (h_values[k + 1] - h_values[k - 1]) / (2.0 * dt),
            })
            .collect();
        let rises: Vec<f64> = h_values.windows(2).map(|w| w[1] - w[0]).collect();
        let max_rise = rises.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let monotone_fraction = if rises.is_empty() {
            1.0
        } else {
            rises.iter().filter(|&&r| r <= 0.0).count() as f64 / rises.len() as f64
        };
        Ok(EnergyProfile {
            steps: (0..n).collect(),
            h_values,
            dh_dt,
            max_rise: if max_rise.is_finite() { max_rise } else { 0.0 },
            monotone_fraction,
        })
    }

    /// Fraction of steps with `H_{k+1} ≤ H_k + slack`.
    pub fn monotone_fraction_within(&self, slack: f64) -> f64 {
        let rises: Vec<f64> = self.h_values.windows(2).map(|w| w[1] - w[0]).collect();
        if rises.is_empty() {
            return 1.0;
        }
        rises.iter().filter(|&&r| r <= slack).count() as f64 / rises.len() as f64
    }

    pub fn max_abs_drift(&self) -> f64 {
        let h0 = self.h_values[0];
        self.h_values.iter().map(|h| (h - h0).abs()).fold(0.0, f64::max)
    }
}

/// `H` along a rollout of states.
pub fn energy_diagnostics<F>(rollout: &[Vec<f64>], dt: f64, h: F) -> Result<EnergyProfile>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    EnergyProfile::from_values(rollout.iter().map(|s| h(s)).collect::<Result<Vec<_>>>()?, dt)
}

/// Pooled energy behaviour over many rollouts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergySummary {
    /// What `H` was evaluated: "learned" or "ground_truth".
    pub source: String,
    pub max_rise: f64,
    pub monotone_fraction: f64,
    /// `max |H_k − H_0|` divided by the spread of `H_0` across rollouts.
    pub max_rel_drift: f64,
}

impl EnergySummary {
    pub fn from_profiles(source: &str, profiles: &[EnergyProfile], slack: f64) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::InvalidInput("no energy profiles".into()));
        }
        let h0: Vec<f64> = profiles.iter().map(|p| p.h_values[0]).collect();
        let spread =
            h0.iter().copied().fold(f64::NEG_INFINITY, f64::max) - h0.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = if spread > 0.0 { spread } else { h0.iter().map(|h| h.abs()).fold(0.0, f64::max).max(1e-12) };
        let steps: usize = profiles.iter().map(|p| p.h_values.len().saturating_sub(1)).sum();
        let good: f64 = profiles
            .iter()
            .map(|p| p.monotone_fraction_within(slack) * p.h_values.len().saturating_sub(1) as f64)
            .sum();
        Ok(EnergySummary {
            source: source.to_string(),
            max_rise: profiles.iter().map(|p| p.max_rise).fold(f64::NEG_INFINITY, f64::max),
            monotone_fraction: if steps == 0 { 1.0 } else { good / steps as f64 },
            max_rel_drift: profiles.iter().map(|p| p.max_abs_drift()).fold(0.0, f64::max) / scale,
        })
    }
}

/// Energy `H` of a port-Hamiltonian field at each row of `x`.
pub fn ph_energy(ph: &PhField, store: &ParamStore, x: &Array2<f64>) -> Result<Vec<f64>> {
    let tape = crate::autodiff::Tape::new();
    let h = ph.bind(&tape, store)?.energy(tape.constant(x.clone()))?;
    Ok(h.value().column(0).to_vec())
}

/// One profile per row of batched rollouts, energy from a learned `H`.
pub fn learned_energy_profiles(
    ph: &PhField,
    store: &ParamStore,
    rollouts: &[Array2<f64>],
    dt: f64,
) -> Result<Vec<EnergyProfile>> {
    let per_step: Vec<Vec<f64>> = rollouts.iter().map(|x| ph_energy(ph, store, x)).collect::<Result<_>>()?;
    let n_rows = rollouts.first().map_or(0, |x| x.nrows());
    (0..n_rows).map(|i| EnergyProfile::from_values(per_step.iter().map(|h| h[i]).collect(), dt)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub x1: f64,
    pub x2: f64,
    pub h: f64,
    pub grad_norm: f64,
    /// `∇Hᵀu`, the energy rate along the field.
    pub dh_dt: f64,
    pub u1: f64,
    pub u2: f64,
}

/// Energy and field on a row-major `resolution × resolution` grid. `f`
/// returns `(H, ∇H, u)` at a point.
pub fn hamiltonian_grid_export<F>(f: F, bounds: [(f64, f64); 2], resolution: usize) -> Result<Vec<GridRow>>
where
    F: Fn(&[f64]) -> Result<(f64, [f64; 2], [f64; 2])>,
{
    if resolution < 2 {
        return Err(Error::InvalidInput(format!("grid resolution must be ≥ 2, got {resolution}")));
    }
    let coord = |(lo, hi): (f64, f64), i: usize| lo + (hi - lo) * i as f64 / (resolution - 1) as f64;
    let mut rows = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            let x = [coord(bounds[0], j), coord(bounds[1], i)];
            let (h, g, u) = f(&x)?;
            rows.push(GridRow {
                x1: x[0],
                x2: x[1],
                h,
                grad_norm: (g[0] * g[0] + g[1] * g[1]).sqrt(),
                dh_dt: g[0] * u[0] + g[1] * u[1],
                u1: u[0],
                u2: u[1],
            });
        }
    }
    Ok(rows)
}

/// `(H, ∇H, u)` of a port-Hamiltonian field, for [`hamiltonian_grid_export`].
pub fn ph_grid_point(ph: &PhField, store: &ParamStore, x: &[f64]) -> Result<(f64, [f64; 2], [f64; 2])> {
    let tape = crate::autodiff::Tape::new();
    let e = ph.bind(&tape, store)?.eval(tape.row(x))?;
    let (g, u) = (e.grad_h.value(), e.u.value());
    Ok((e.h.item(), [g[[0, 0]], g[[0, 1]]], [u[[0, 0]], u[[0, 1]]]))
}

pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<()> {
    let mut out = String::from("x1,x2,h,grad_norm,dh_dt,u1,u2\n");
    for r in rows {
        out.push_str(&format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.x1, r.x2, r.h, r.grad_norm, r.dh_dt, r.u1, r.u2
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_grid_csv(path: &Path) -> Result<Vec<GridRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("x1,x2,h,grad_norm,dh_dt,u1,u2") {
        return Err(Error::Data(format!("{}: unexpected grid header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v = l
                .split(',')
                .map(|f| f.parse::<f64>().map_err(|e| Error::Data(format!("bad grid value {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != 7 {
                return Err(Error::Data(format!("grid row has {} fields", v.len())));
            }
            Ok(GridRow { x1: v[0], x2: v[1], h: v[2], grad_norm: v[3], dh_dt: v[4], u1: v[5], u2: v[6] })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub model: String,
    pub seed: u64,
    pub auc_r2_id: f64,
    pub auc_r2_id_std_anchors: f64,
    pub r2_id_curve: Vec<f64>,
    pub auc_r2_proj: Option<f64>,
    pub auc_r2_proj_std_anchors: Option<f64>,
    pub r2_proj_curve: Option<Vec<f64>>,
    pub energy: Option<EnergySummary>,
    pub wall_seconds: f64,
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// `h,r2_id[,r2_proj]` rows.
    pub fn write_curves_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(if self.r2_proj_curve.is_some() { "h,r2_id,r2_proj\n" } else { "h,r2_id\n" });
        for (i, r) in self.r2_id_curve.iter().enumerate() {
            match &self.r2_proj_curve {
                Some(p) => out.push_str(&format!("{},{r:?},{:?}\n", i + 1, p[i])),
                None => out.push_str(&format!("{},{r:?}\n", i + 1)),
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}
