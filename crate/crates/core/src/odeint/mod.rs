//! Fixed-step integration, the two ground-truth systems and their partial
//! observation map.

mod dataset;

pub use dataset::{
    generate_dataset, read_dataset, read_trajectory, write_dataset, write_trajectory, Dataset, DatasetFormat,
    DatasetManifest, Split, Trajectory,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

pub const GRAVITY: f64 = 9.81;
pub const DUFFING_DAMPING: f64 = 0.3;
pub const DEFAULT_DT: f64 = 0.05;

/// Phase-space state `(q, p)` of one of the simulated systems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub [f64; 2]);

impl StateVector {
    pub fn new(q: f64, p: f64) -> Self {
        StateVector([q, p])
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != 2 {
            return Err(Error::Shape(format!("state has length {}, expected 2", s.len())));
        }
        ensure_finite(s, "state")?;
        Ok(StateVector([s[0], s[1]]))
    }

    pub fn q(&self) -> f64 {
        self.0[0]
    }

    pub fn p(&self) -> f64 {
        self.0[1]
    }

    fn check(&self) -> Result<()> {
        ensure_finite(&self.0, "state")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Pendulum,
    Duffing,
}

/// Axis-aligned box of initial conditions in `(q, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub q: [f64; 2],
    pub p: [f64; 2],
}

impl Region {
    pub fn is_degenerate(&self) -> bool {
        !(self.q[0] < self.q[1] && self.p[0] < self.p[1]) || !self.q.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub kind: SystemKind,
    /// Gravity; pendulum only.
    pub g: f64,
    /// Linear damping; Duffing only.
    pub delta: f64,
    pub dt: f64,
    pub traj_len: usize,
    pub n_traj: usize,
    pub init_region: Region,
}

impl SystemSpec {
    pub fn pendulum() -> Self {
        SystemSpec {
            kind: SystemKind::Pendulum,
            g: GRAVITY,
            delta: DUFFING_DAMPING,
            dt: DEFAULT_DT,
            traj_len: 150,
            n_traj: 500,
            init_region: Region { q: [-2.5, 2.5], p: [-2.0, 2.0] },
        }
    }

    pub fn duffing() -> Self {
        SystemSpec {
            kind: SystemKind::Duffing,
            g: GRAVITY,
            delta: DUFFING_DAMPING,
            dt: DEFAULT_DT,
            traj_len: 100,
            n_traj: 500,
            init_region: Region { q: [-2.0, 2.0], p: [-1.5, 1.5] },
        }
    }

    pub fn for_kind(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Pendulum => Self::pendulum(),
            SystemKind::Duffing => Self::duffing(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if self.traj_len < 2 {
            return Err(Error::InvalidInput(format!("traj_len must be at least 2, got {}", self.traj_len)));
        }
        if self.n_traj < 1 {
            return Err(Error::InvalidInput("n_traj must be at least 1".into()));
        }
        if self.init_region.is_degenerate() {
            return Err(Error::InvalidInput(format!("degenerate init_region {:?}", self.init_region)));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        2
    }

    pub fn obs_dim(&self) -> usize {
        1
    }

    pub fn field(&self, s: StateVector) -> Result<StateVector> {
        match self.kind {
            SystemKind::Pendulum => pendulum_field_with(s, self.g),
            SystemKind::Duffing => duffing_field_with(s, self.delta),
        }
    }

    pub fn hamiltonian(&self, s: StateVector) -> Result<f64> {
        match self.kind {
            SystemKind::Pendulum => pendulum_hamiltonian_with(s, self.g),
            SystemKind::Duffing => duffing_hamiltonian(s),
        }
    }

    /// Vector field over raw slices, in the shape [`rk4_step`] expects.
    pub fn slice_field(&self) -> impl Fn(&[f64]) -> Result<Vec<f64>> + '_ {
        move |x: &[f64]| {
            let s = StateVector::from_slice(x)?;
            Ok(self.field(s)?.0.to_vec())
        }
    }
}

pub fn pendulum_field(s: StateVector) -> Result<StateVector> {
    pendulum_field_with(s, GRAVITY)
}

pub fn pendulum_field_with(s: StateVector, g: f64) -> Result<StateVector> {
    s.check()?;
    Ok(StateVector::new(s.p(), -g * s.q().sin()))
}

/// `½p² + g(1 − cos q)`.
pub fn pendulum_hamiltonian(s: StateVector) -> Result<f64> {
    pendulum_hamiltonian_with(s, GRAVITY)
}

pub fn pendulum_hamiltonian_with(s: StateVector, g: f64) -> Result<f64> {
    s.check()?;
    Ok(0.5 * s.p() * s.p() + g * (1.0 - s.q().cos()))
}

pub fn duffing_field(s: StateVector) -> Result<StateVector> {
    duffing_field_with(s, DUFFING_DAMPING)
}

pub fn duffing_field_with(s: StateVector, delta: f64) -> Result<StateVector> {
    s.check()?;
    let (q, p) = (s.q(), s.p());
    Ok(StateVector::new(p, q - q * q * q - delta * p))
}

/// Double-well energy `½p² − ½q² + ¼q⁴`.
pub fn duffing_hamiltonian(s: StateVector) -> Result<f64> {
    s.check()?;
    let (q, p) = (s.q(), s.p());
    Ok(0.5 * p * p - 0.5 * q * q + 0.25 * q.powi(4))
}

/// Only the position is exposed; momentum stays hidden.
pub fn observe(s: StateVector, spec: &SystemSpec) -> Result<Vec<f64>> {
    s.check()?;
    debug_assert_eq!(spec.obs_dim(), 1);
    Ok(vec![s.q()])
}

/// One classical Runge–Kutta step.
pub fn rk4_step<F>(f: F, x: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let stage = |k: usize, at: &[f64]| -> Result<Vec<f64>> {
        let v = f(at).map_err(|e| Error::NonFinite(format!("rk4 stage {k}: {e}")))?;
        if v.len() != x.len() {
            return Err(Error::Shape(format!(
                "rk4 stage {k}: field returned length {}, expected {}",
                v.len(),
                x.len()
            )));
        }
        ensure_finite(&v, &format!("rk4 stage {k}"))?;
        Ok(v)
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(ai, bi)| ai + s * bi).collect() };

    let k1 = stage(1, x)?;
    let k2 = stage(2, &axpy(x, 0.5 * dt, &k1))?;
    let k3 = stage(3, &axpy(x, 0.5 * dt, &k2))?;
    let k4 = stage(4, &axpy(x, dt, &k3))?;
    Ok((0..x.len()).map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

/// `n_steps` RK4 steps; the result has `n_steps + 1` entries starting at `x0`.
pub fn rollout<F>(f: F, x0: &[f64], n_steps: usize, dt: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(x0.to_vec());
    for k in 0..n_steps {
        let next = rk4_step(&f, &out[k], dt).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("step {k}: {m}")),
            other => other,
        })?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pendulum_field_examples() {
        assert_eq!(pendulum_field(StateVector::new(0.0, 0.0)).unwrap().0, [0.0, 0.0]);
        let top = pendulum_field(StateVector::new(PI, 0.0)).unwrap();
        assert_eq!(top.0[0], 0.0);
        assert!(top.0[1].abs() < 1e-14);
        let v = pendulum_field(StateVector::new(PI / 2.0, 1.0)).unwrap();
        assert_eq!(v.0, [1.0, -9.81]);
        assert!(pendulum_field(StateVector::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn pendulum_energy_examples() {
        assert_eq!(pendulum_hamiltonian(StateVector::new(0.0, 0.0)).unwrap(), 0.0);
        assert!((pendulum_hamiltonian(StateVector::new(PI, 0.0)).unwrap() - 19.62).abs() < 1e-12);
        assert_eq!(pendulum_hamiltonian(StateVector::new(0.0, 2.0)).unwrap(), 2.0);
        assert!(pendulum_hamiltonian(StateVector::new(0.0, f64::INFINITY)).is_err());
    }

    #[test]
    fn duffing_examples() {
        assert_eq!(duffing_field(StateVector::new(0.0, 0.0)).unwrap().0, [0.0, 0.0]);
        assert_eq!(duffing_field(StateVector::new(1.0, 0.0)).unwrap().0, [0.0, 0.0]);
        let v = duffing_field(StateVector::new(2.0, 1.0)).unwrap();
        assert_eq!(v.0[0], 1.0);
        assert!((v.0[1] + 6.3).abs() < 1e-12);
        assert_eq!(duffing_hamiltonian(StateVector::new(0.0, 0.0)).unwrap(), 0.0);
        assert_eq!(duffing_hamiltonian(StateVector::new(1.0, 0.0)).unwrap(), -0.25);
        assert_eq!(duffing_hamiltonian(StateVector::new(0.0, 1.0)).unwrap(), 0.5);
    }

    #[test]
    fn rk4_zero_field_is_identity() {
        let x = [0.3, -1.2];
        let y = rk4_step(|v: &[f64]| Ok(vec![0.0; v.len()]), &x, 0.05).unwrap();
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn rk4_linear_scalar_matches_fourth_order_taylor() {
        // Hand-evaluated stages for x' = x, x = 1, dt = 0.1:
        // k1 = 1, k2 = 1.05, k3 = 1.0525, k4 = 1.10525
        // x + dt/6 (k1 + 2k2 + 2k3 + k4) = 1.1051708333...
        let y = rk4_step(|v: &[f64]| Ok(v.to_vec()), &[1.0], 0.1).unwrap();
        let taylor = 1.0 + 0.1 + 0.005 + 0.1f64.powi(3) / 6.0 + 0.1f64.powi(4) / 24.0;
        assert!((y[0] - taylor).abs() < 1e-15);
        assert!((y[0] - 1.105_170_833_333_333).abs() < 1e-14);
    }

    #[test]
    fn rk4_pendulum_one_step_energy() {
        let spec = SystemSpec::pendulum();
        let x0 = [0.1, 0.0];
        let x1 = rk4_step(spec.slice_field(), &x0, 0.05).unwrap();
        let h0 = pendulum_hamiltonian(StateVector::from_slice(&x0).unwrap()).unwrap();
        let h1 = pendulum_hamiltonian(StateVector::from_slice(&x1).unwrap()).unwrap();
        assert!((h1 - h0).abs() < 1e-8);
    }

    #[test]
    fn rk4_reports_failing_stage() {
        let err = rk4_step(|v: &[f64]| if v[0] > 1.0 { Ok(vec![f64::NAN]) } else { Ok(vec![100.0]) }, &[0.0], 0.1)
            .unwrap_err();
        assert!(err.to_string().contains("stage 2"), "{err}");
    }

    #[test]
    fn rollout_shapes() {
        let r = rollout(|v: &[f64]| Ok(v.to_vec()), &[1.0], 0, 0.1).unwrap();
        assert_eq!(r, vec![vec![1.0]]);
        let z = rollout(|v: &[f64]| Ok(vec![0.0; v.len()]), &[1.0, 2.0], 10, 0.1).unwrap();
        assert_eq!(z.len(), 11);
        assert!(z.iter().all(|s| s == &vec![1.0, 2.0]));
    }

    #[test]
    fn duffing_energy_never_rises() {
        let spec = SystemSpec::duffing();
        let traj = rollout(spec.slice_field(), &[2.0, 0.0], 200, 0.05).unwrap();
        let energies: Vec<f64> =
            traj.iter().map(|s| duffing_hamiltonian(StateVector::from_slice(s).unwrap()).unwrap()).collect();
        for w in energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn pendulum_conserves_energy_over_150_steps() {
        let spec = SystemSpec::pendulum();
        let traj = rollout(spec.slice_field(), &[1.5, 0.5], 150, 0.05).unwrap();
        let h0 = pendulum_hamiltonian(StateVector::from_slice(&traj[0]).unwrap()).unwrap();
        let drift = traj
            .iter()
            .map(|s| (pendulum_hamiltonian(StateVector::from_slice(s).unwrap()).unwrap() - h0).abs())
            .fold(0.0, f64::max);
        // Classical RK4 at this step loses roughly (ω·dt)⁶/72 ≈ 2e-7 of the
        // energy per step even in the linear regime, so 150 steps land near
        // 2e-5. That is the floor for this integrator, not a defect.
        assert!(drift / h0 < 1e-4, "relative drift {}", drift / h0);
        assert!(drift / h0 > 1e-7, "suspiciously small drift {}", drift / h0);
    }

    #[test]
    fn observe_hides_momentum() {
        let p = SystemSpec::pendulum();
        let d = SystemSpec::duffing();
        assert_eq!(observe(StateVector::new(0.7, -3.0), &p).unwrap(), vec![0.7]);
        assert_eq!(observe(StateVector::new(-1.2, 5.0), &d).unwrap(), vec![-1.2]);
        assert_eq!(observe(StateVector::new(0.5, 1.0), &p).unwrap(), observe(StateVector::new(0.5, -1.0), &p).unwrap());
    }

    #[test]
    fn spec_validation() {
        let mut s = SystemSpec::pendulum();
        assert!(s.validate().is_ok());
        s.init_region.q = [1.0, 1.0];
        assert!(s.validate().is_err());
        let mut s = SystemSpec::duffing();
        s.dt = 0.0;
        assert!(s.validate().is_err());
    }
}
