//! Central finite-difference oracle for checking tape gradients.

use ndarray::Array2;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

fn eval_scalar<F>(f: &F, store: &ParamStore) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let out = f(&tape, store)?;
    Ok(out.item())
}

/// Compares every parameter gradient of the scalar `f` against central
/// differences; errors if any coordinate exceeds `tol` relative error.
pub fn check_param_grads<F>(store: &mut ParamStore, tol: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>>,
{
    store.zero_grad();
    {
        let tape = Tape::new();
        let out = f(&tape, store)?;
        tape.backward(out, store)?;
    }
    let mut report = GradCheck { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let dim = store.value(id).dim();
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                let orig = store.value(id)[[r, c]];
                store.value_mut(id)[[r, c]] = orig + FD_STEP;
                let up = eval_scalar(&f, store)?;
                store.value_mut(id)[[r, c]] = orig - FD_STEP;
                let down = eval_scalar(&f, store)?;
                store.value_mut(id)[[r, c]] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let analytic = store.grad(id)[[r, c]];
                let e = rel_err(analytic, numeric);
                report.checked += 1;
                if e > report.max_rel_err {
                    report.max_rel_err = e;
                    report.worst = format!("{}[{r},{c}]: analytic {analytic:e}, numeric {numeric:e}", store.name(id));
                }
            }
        }
    }
    store.zero_grad();
    if report.max_rel_err > tol {
        return Err(Error::Numerical(format!(
            "gradient check failed (rel err {:e} > {tol:e}) at {}",
            report.max_rel_err, report.worst
        )));
    }
    Ok(report)
}

/// Same check for the gradient with respect to an input array.
pub fn check_input_grad<F>(x0: &Array2<f64>, tol: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let x = tape.constant(x0.clone());
        let out = f(&tape, x)?;
        tape.gradients(out)?.wrt(x)
    };
    let eval = |x: Array2<f64>| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(x);
        Ok(f(&tape, v)?.item())
    };
    let mut report = GradCheck { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    for ((r, c), &a) in analytic.indexed_iter() {
        let mut up = x0.clone();
        up[[r, c]] += FD_STEP;
        let mut down = x0.clone();
        down[[r, c]] -= FD_STEP;
        let numeric = (eval(up)? - eval(down)?) / (2.0 * FD_STEP);
        let e = rel_err(a, numeric);
        report.checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = format!("input[{r},{c}]: analytic {a:e}, numeric {numeric:e}");
        }
    }
    if report.max_rel_err > tol {
        return Err(Error::Numerical(format!(
            "input gradient check failed (rel err {:e} > {tol:e}) at {}",
            report.max_rel_err, report.worst
        )));
    }
    Ok(report)
}
