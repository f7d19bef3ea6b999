//! Differentiable matrix exponential by scaling and squaring a truncated
//! Taylor series. Every multiply and add goes on the tape, so the backward
//! pass needs nothing special and stays defined for defective matrices.

use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::error::{ensure_finite, Error, Result};

pub const TAYLOR_TERMS: usize = 18;
pub const SCALED_NORM: f64 = 0.5;

/// Number of squarings needed to bring `‖m‖₁` down to [`SCALED_NORM`].
pub fn squarings_for(m: &Array2<f64>) -> u32 {
    let norm = (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut s = 0;
    let mut n = norm;
    while n > SCALED_NORM {
        n *= 0.5;
        s += 1;
    }
    s
}

/// `exp(m)` for a square matrix node.
pub fn matrix_exp<'t>(m: Var<'t>) -> Result<Var<'t>> {
    let value = m.value();
    let (r, c) = value.dim();
    if r != c {
        return Err(Error::Shape(format!("matrix_exp needs a square matrix, got {r}×{c}")));
    }
    let flat: Vec<f64> = value.iter().copied().collect();
    ensure_finite(&flat, "matrix_exp input")?;
    let s = squarings_for(&value);
    let tape = m.tape();
    let x = m.scale(0.5f64.powi(s as i32));
    let mut term = tape.constant(Array2::eye(r));
    let mut sum = term;
    for k in 1..TAYLOR_TERMS {
        term = term.matmul(x).scale(1.0 / k as f64);
        sum = sum + term;
    }
    for _ in 0..s {
        sum = sum.matmul(sum);
    }
    Ok(sum)
}

/// Value-only convenience wrapper.
pub fn expm(m: &Array2<f64>) -> Result<Array2<f64>> {
    let tape = Tape::new();
    Ok(matrix_exp(tape.constant(m.clone()))?.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_input_grad;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a - b).mapv(f64::abs).fold(0.0, |m, &v| m.max(v))
    }

    #[test]
    fn zero_gives_identity() {
        assert_eq!(expm(&Array2::zeros((2, 2))).unwrap(), Array2::<f64>::eye(2));
    }

    #[test]
    fn skew_generator_gives_rotation() {
        let t = FRAC_PI_2;
        let a = expm(&array![[0.0, t], [-t, 0.0]]).unwrap();
        assert!(max_abs_diff(&a, &array![[0.0, 1.0], [-1.0, 0.0]]) < 1e-10, "{a}");
        let a = expm(&array![[0.0, -t], [t, 0.0]]).unwrap();
        assert!(max_abs_diff(&a, &array![[0.0, -1.0], [1.0, 0.0]]) < 1e-10);
    }

    #[test]
    fn diagonal_and_nilpotent_closed_forms() {
        let a = expm(&array![[1.0, 0.0], [0.0, -2.0]]).unwrap();
        assert!((a[[0, 0]] - 1f64.exp()).abs() < 1e-13);
        assert!((a[[1, 1]] - (-2f64).exp()).abs() < 1e-15);
        // Defective: exp([[0,1],[0,0]]) = [[1,1],[0,1]].
        let a = expm(&array![[0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(max_abs_diff(&a, &array![[1.0, 1.0], [0.0, 1.0]]) < 1e-15);
    }

    #[test]
    fn inverse_and_positive_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let b = Array2::from_shape_fn((2, 2), |_| rng.gen_range(-3.0..3.0));
            let a = expm(&b).unwrap();
            let ai = expm(&(-&b)).unwrap();
            assert!(max_abs_diff(&a.dot(&ai), &Array2::eye(2)) < 1e-8);
            let det = a[[0, 0]] * a[[1, 1]] - a[[0, 1]] * a[[1, 0]];
            assert!(det > 0.0);
            // det(exp B) = exp(tr B)
            assert!((det - (b[[0, 0]] + b[[1, 1]]).exp()).abs() < 1e-9 * det.max(1.0));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let b = Array2::from_shape_fn((2, 2), |_| rng.gen_range(-1.5..1.5));
            check_input_grad(&b, 1e-5, |_, m| Ok(matrix_exp(m)?.sum())).unwrap();
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(expm(&array![[f64::NAN, 0.0], [0.0, 0.0]]).is_err());
        assert!(expm(&Array2::zeros((2, 3))).is_err());
    }
}
