//! Projection stage: an affine chart `x = exp(B)·z + b` and a
//! port-Hamiltonian field fitted to frozen teacher tangents by matching
//! direction, log-magnitude and energy rate.

use std::time::Instant;

use ndarray::{array, Array2};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adamw_step, clip_grad_norm, cosine_lr, expm, grad_norm, matrix_exp, OptimizerConfig, ParamId, ParamStore, Tape, Var,
};
use crate::dynamics::{canonical_j, LatentField, PhField};
use crate::error::{ensure_finite, Error, Result};
use crate::teacher::StepStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentLossWeights {
    pub lambda_dir: f64,
    pub lambda_mag_initial: f64,
    pub lambda_mag_final: f64,
    /// Linear ramp of the magnitude weight between these steps.
    pub mag_warmup_start: usize,
    pub mag_warmup_end: usize,
    pub lambda_rate: f64,
    pub lambda_chart: f64,
    pub eps: f64,
}

impl Default for StudentLossWeights {
    fn default() -> Self {
        StudentLossWeights {
            lambda_dir: 1.0,
            lambda_mag_initial: 0.1,
            lambda_mag_final: 1.0,
            mag_warmup_start: 10_000,
            mag_warmup_end: 20_000,
            lambda_rate: 0.1,
            lambda_chart: 1e-4,
            eps: 1e-8,
        }
    }
}

impl StudentLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_dir,
            self.lambda_mag_initial,
            self.lambda_mag_final,
            self.lambda_rate,
            self.lambda_chart,
            self.eps,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("student loss weights must be finite and ≥ 0: {self:?}")));
        }
        if self.mag_warmup_end < self.mag_warmup_start {
            return Err(Error::Config("mag_warmup_end precedes mag_warmup_start".into()));
        }
        Ok(())
    }

    pub fn lambda_mag(&self, step: usize) -> f64 {
        let (a, b) = (self.lambda_mag_initial, self.lambda_mag_final);
        if step <= self.mag_warmup_start {
            a
        } else if step >= self.mag_warmup_end {
            b
        } else {
            let f = (step - self.mag_warmup_start) as f64 / (self.mag_warmup_end - self.mag_warmup_start) as f64;
            a + f * (b - a)
        }
    }
}

/// Chart parameters `B` (`d × d`) and `b` (`1 × d`).
#[derive(Clone, Debug)]
pub struct AffineChart {
    pub b_mat: ParamId,
    pub bias: ParamId,
}

/// Evaluated chart with its cached inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartValues {
    pub b_mat: Array2<f64>,
    pub bias: Vec<f64>,
    pub a: Array2<f64>,
    pub a_inv: Array2<f64>,
}

impl ChartValues {
    pub fn new(b_mat: Array2<f64>, bias: Vec<f64>) -> Result<Self> {
        let a = expm(&b_mat)?;
        let a_inv = expm(&(-&b_mat))?;
        Ok(ChartValues { b_mat, bias, a, a_inv })
    }

    pub fn identity(d: usize) -> Self {
        ChartValues { b_mat: Array2::zeros((d, d)), bias: vec![0.0; d], a: Array2::eye(d), a_inv: Array2::eye(d) }
    }

    /// `x = A z + b` for each row of `z`.
    pub fn forward(&self, z: &Array2<f64>) -> Array2<f64> {
        let bias = ndarray::ArrayView1::from(self.bias.as_slice());
        z.dot(&self.a.t()) + bias
    }

    /// `z = A⁻¹ (x − b)` for each row of `x`.
    pub fn inverse(&self, x: &Array2<f64>) -> Array2<f64> {
        let bias = ndarray::ArrayView1::from(self.bias.as_slice());
        (x - &bias).dot(&self.a_inv.t())
    }
}

impl AffineChart {
    /// Identity chart, `B = 0`, `b = 0`.
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        let b_mat = store.add(&format!("{prefix}.B"), Array2::zeros((d, d)))?;
        let bias = store.add(&format!("{prefix}.b"), Array2::zeros((1, d)))?;
        Ok(AffineChart { b_mat, bias })
    }

    pub fn attach(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: &str| {
            let name = format!("{prefix}.{n}");
            store.id(&name).ok_or_else(|| Error::Data(format!("missing parameter {name}")))
        };
        Ok(AffineChart { b_mat: get("B")?, bias: get("b")? })
    }

    pub fn values(&self, store: &ParamStore) -> Result<ChartValues> {
        ChartValues::new(store.value(self.b_mat).clone(), store.value(self.bias).row(0).to_vec())
    }
}

/// `1 − ⟨u,v⟩/(‖u‖‖v‖ + ε)`, averaged over rows.
pub fn loss_dir<'t>(u: Var<'t>, v: Var<'t>, eps: f64) -> Var<'t> {
    let dot = (u * v).sum_rows();
    let denom = row_norm(u, eps) * row_norm(v, eps) + eps;
    (1.0 - dot / denom).mean()
}

/// `|log(‖u‖ + ε) − log(‖v‖ + ε)|`, averaged over rows.
pub fn loss_mag<'t>(u: Var<'t>, v: Var<'t>, eps: f64) -> Var<'t> {
    ((row_norm(u, eps) + eps).ln() - (row_norm(v, eps) + eps).ln()).abs().mean()
}

/// `|∇Hᵀv + ∇HᵀR∇H|`, averaged over rows.
pub fn loss_rate<'t>(grad_h: Var<'t>, r: Var<'t>, v: Var<'t>) -> Var<'t> {
    let along = (grad_h * v).sum_rows();
    let dissipated = (grad_h.matmul(r) * grad_h).sum_rows();
    (along + dissipated).abs().mean()
}

/// `‖B‖_F² + ‖b‖²`.
pub fn loss_chart<'t>(b_mat: Var<'t>, bias: Var<'t>) -> Var<'t> {
    b_mat.square().sum() + bias.square().sum()
}

/// Row norms. `ε²` under the root keeps the gradient finite at zero rows and
/// moves the value by at most `ε`.
fn row_norm(x: Var<'_>, eps: f64) -> Var<'_> {
    (x.square().sum_rows() + eps * eps).sqrt()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct StudentLosses {
    pub total: f64,
    pub dir: f64,
    pub mag: f64,
    pub rate: f64,
    pub chart: f64,
}

#[derive(Clone, Debug)]
pub struct Student {
    pub chart: AffineChart,
    pub ph: PhField,
}

impl Student {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        hidden: &[usize],
        dissipative: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let chart = AffineChart::new(store, "chart", d)?;
        let ph = PhField::new(store, "ph", d, hidden, dissipative, rng)?;
        Ok(Student { chart, ph })
    }

    pub fn attach(store: &ParamStore, d: usize, hidden: &[usize], dissipative: bool) -> Result<Self> {
        Ok(Student {
            chart: AffineChart::attach(store, "chart")?,
            ph: PhField::attach(store, "ph", d, hidden, dissipative)?,
        })
    }

    pub fn field(&self) -> LatentField {
        LatentField::PortHamiltonian(self.ph.clone())
    }

    /// Total and per-term losses on a batch of anchors `z` with detached
    /// teacher tangents `f_t`.
    pub fn losses<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: &Array2<f64>,
        f_t: &Array2<f64>,
        weights: &StudentLossWeights,
        step: usize,
    ) -> Result<(Var<'t>, StudentLosses)> {
        if z.dim() != f_t.dim() {
            return Err(Error::Shape(format!("anchors {:?} and tangents {:?} differ", z.dim(), f_t.dim())));
        }
        let b_mat = tape.param(store, self.chart.b_mat);
        let bias = tape.param(store, self.chart.bias);
        let a_t = matrix_exp(b_mat)?.t();
        let x = tape.constant(z.clone()).matmul(a_t) + bias;
        let v = tape.constant(f_t.clone()).matmul(a_t);
        let ph = self.ph.bind(tape, store)?;
        let e = ph.eval(x)?;
        let dir = loss_dir(e.u, v, weights.eps);
        let mag = loss_mag(e.u, v, weights.eps);
        let rate = loss_rate(e.grad_h, ph.r(), v);
        let chart = loss_chart(b_mat, bias);
        let total = dir * weights.lambda_dir
            + mag * weights.lambda_mag(step)
            + rate * weights.lambda_rate
            + chart * weights.lambda_chart;
        let parts = StudentLosses {
            total: total.item(),
            dir: dir.item(),
            mag: mag.item(),
            rate: rate.item(),
            chart: chart.item(),
        };
        Ok((total, parts))
    }
}

pub struct StudentTrainer {
    pub student: Student,
    pub store: ParamStore,
    pub weights: StudentLossWeights,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl StudentTrainer {
    pub fn new(
        student: Student,
        store: ParamStore,
        weights: StudentLossWeights,
        optimizer: OptimizerConfig,
        batch_size: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        weights.validate()?;
        optimizer.validate()?;
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        Ok(StudentTrainer { student, store, weights, optimizer, batch_size, step: 0, rng })
    }

    /// One step on a uniform minibatch of the anchor pool. Teacher tangents
    /// arrive as plain arrays, so nothing here can reach teacher parameters.
    pub fn train_step(&mut self, z: &Array2<f64>, f_t: &Array2<f64>) -> Result<(StepStats, StudentLosses)> {
        let started = Instant::now();
        let n = z.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("empty anchor pool".into()));
        }
        let rows: Vec<usize> = if n <= self.batch_size {
            (0..n).collect()
        } else {
            index::sample(&mut self.rng, n, self.batch_size).into_vec()
        };
        let zb = z.select(ndarray::Axis(0), &rows);
        let fb = f_t.select(ndarray::Axis(0), &rows);
        self.store.zero_grad();
        let parts = {
            let tape = Tape::new();
            let (total, parts) = self.student.losses(&tape, &self.store, &zb, &fb, &self.weights, self.step)?;
            if !parts.total.is_finite() {
                return Err(Error::Numerical(format!("student loss is not finite at step {}: {parts:?}", self.step)));
            }
            tape.backward(total, &mut self.store)?;
            parts
        };
        let gnorm = grad_norm(&self.store);
        clip_grad_norm(&mut self.store, self.optimizer.clip_norm);
        let lr = cosine_lr(self.step.min(self.optimizer.total_steps), &self.optimizer)?;
        adamw_step(&mut self.store, &self.optimizer, lr)?;
        let stats = StepStats {
            step: self.step,
            loss: parts.total,
            lr,
            grad_norm: gnorm,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.step += 1;
        Ok((stats, parts))
    }
}

/// Student trajectory in its own coordinates and mapped back to teacher
/// latent coordinates.
#[derive(Clone, Debug)]
pub struct StudentRollout {
    pub x: Vec<Array2<f64>>,
    pub z: Vec<Array2<f64>>,
}

pub fn student_rollout(
    student: &Student,
    store: &ParamStore,
    z0: &Array2<f64>,
    n: usize,
    dt: f64,
) -> Result<StudentRollout> {
    if n == 0 {
        return Err(Error::InvalidInput("student rollout needs n ≥ 1".into()));
    }
    let chart = student.chart.values(store)?;
    let x = crate::dynamics::rollout(&student.field(), store, &chart.forward(z0), n, dt)?;
    let z = x.iter().map(|xk| chart.inverse(xk)).collect();
    Ok(StudentRollout { x, z })
}

/// Energy `H_θ` of the student at each row of `x`.
pub fn student_energy(student: &Student, store: &ParamStore, x: &Array2<f64>) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let h = student.ph.bind(&tape, store)?.energy(tape.constant(x.clone()))?;
    Ok(h.value().column(0).to_vec())
}

/// A scalar energy with its gradient, for value-level checks.
pub trait Hamiltonian {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn grad(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// `H(x) = ½ xᵀQx + cᵀx` with symmetric `Q`.
#[derive(Clone, Debug)]
pub struct QuadraticHamiltonian {
    pub q: Array2<f64>,
    pub c: Vec<f64>,
}

impl Hamiltonian for QuadraticHamiltonian {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let xv = ndarray::ArrayView1::from(x);
        Ok(0.5 * xv.dot(&self.q.dot(&xv)) + xv.dot(&ndarray::ArrayView1::from(self.c.as_slice())))
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xv = ndarray::ArrayView1::from(x);
        Ok((self.q.dot(&xv) + ndarray::ArrayView1::from(self.c.as_slice())).to_vec())
    }
}

/// The learned energy of a port-Hamiltonian field.
pub struct LearnedHamiltonian<'a> {
    pub ph: &'a PhField,
    pub store: &'a ParamStore,
}

impl Hamiltonian for LearnedHamiltonian<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let tape = Tape::new();
        Ok(self.ph.bind(&tape, self.store)?.energy(tape.row(x))?.item())
    }

    fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let e = self.ph.bind(&tape, self.store)?.eval(tape.row(x))?;
        Ok(e.grad_h.value().row(0).to_vec())
    }
}

/// `(H, J, R)` with constant structure matrices.
#[derive(Clone, Debug)]
pub struct PhTriple<H> {
    pub j: Array2<f64>,
    pub r: Array2<f64>,
    pub h: H,
}

impl<H: Hamiltonian> PhTriple<H> {
    pub fn canonical(r: Array2<f64>, h: H) -> Self {
        PhTriple { j: canonical_j(), r, h }
    }

    /// `(J − R)∇H(x)`.
    pub fn field(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = ndarray::Array1::from(self.h.grad(x)?);
        Ok((&self.j - &self.r).dot(&g).to_vec())
    }
}

/// Energy of a triple seen through `y = A x + b`.
#[derive(Clone, Debug)]
pub struct Transported<H> {
    pub inner: H,
    pub a_inv: Array2<f64>,
    pub b: Vec<f64>,
}

impl<H: Hamiltonian> Transported<H> {
    fn pull_back(&self, y: &[f64]) -> Vec<f64> {
        let d = ndarray::ArrayView1::from(y).to_owned() - ndarray::ArrayView1::from(self.b.as_slice());
        self.a_inv.dot(&d).to_vec()
    }
}

impl<H: Hamiltonian> Hamiltonian for Transported<H> {
    fn value(&self, y: &[f64]) -> Result<f64> {
        self.inner.value(&self.pull_back(y))
    }

    fn grad(&self, y: &[f64]) -> Result<Vec<f64>> {
        let g = ndarray::Array1::from(self.inner.grad(&self.pull_back(y))?);
        Ok(self.a_inv.t().dot(&g).to_vec())
    }
}

/// Inverse of a 2×2 matrix, rejecting near-singular input.
pub fn inverse_2x2(a: &Array2<f64>) -> Result<Array2<f64>> {
    if a.dim() != (2, 2) {
        return Err(Error::Shape(format!("expected a 2×2 matrix, got {:?}", a.dim())));
    }
    ensure_finite(&a.iter().copied().collect::<Vec<_>>(), "matrix")?;
    let det = a[[0, 0]] * a[[1, 1]] - a[[0, 1]] * a[[1, 0]];
    let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if det.abs() <= 1e-12 * scale * scale {
        return Err(Error::Numerical(format!("matrix is singular (det = {det:e})")));
    }
    Ok(array![[a[[1, 1]], -a[[0, 1]]], [-a[[1, 0]], a[[0, 0]]]] / det)
}

/// `(H̃, J̃, R̃)` with `H̃(y) = H(A⁻¹(y − b))`, `J̃ = AJAᵀ`, `R̃ = ARAᵀ`.
pub fn affine_covariance_transport<H: Hamiltonian>(
    triple: PhTriple<H>,
    a: &Array2<f64>,
    b: &[f64],
) -> Result<PhTriple<Transported<H>>> {
    let a_inv = inverse_2x2(a)?;
    if b.len() != 2 {
        return Err(Error::Shape("offset must have length 2".into()));
    }
    Ok(PhTriple {
        j: a.dot(&triple.j).dot(&a.t()),
        r: a.dot(&triple.r).dot(&a.t()),
        h: Transported { inner: triple.h, a_inv, b: b.to_vec() },
    })
}
