use nalgebra::DMatrix;

use super::Hyperparameters;
use crate::error::{Error, Result};

/// A covariance function over `D`-dimensional inputs with log-space parameters.
pub trait Kernel: Send + Sync {
    /// Input dimensionality.
    fn dim(&self) -> usize;

    /// Number of kernel parameters (excluding observation noise).
    fn n_params(&self) -> usize;

    fn eval(&self, a: &[f64], b: &[f64]) -> f64;

    /// k(x, x).
    fn prior_variance(&self, x: &[f64]) -> f64;

    /// Covariance between the rows of `x1` (n1 × D) and `x2` (n2 × D).
    fn matrix(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// For each kernel parameter θ_p, returns Σ_ij W_ij ∂K_ij/∂θ_p where
    /// `k = self.matrix(x, x)` and `w` is symmetric.
    fn contract_gradients(&self, x: &DMatrix<f64>, k: &DMatrix<f64>, w: &DMatrix<f64>) -> Vec<f64>;
}

/// Squared-exponential kernel with one lengthscale per input dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfArd {
    lengthscales: Vec<f64>,
    signal_variance: f64,
}

impl RbfArd {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid("lengthscales must be positive and finite"));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::invalid("signal variance must be positive and finite"));
        }
        Ok(RbfArd {
            lengthscales,
            signal_variance,
        })
    }

    pub fn from_hyperparameters(hyp: &Hyperparameters) -> Self {
        RbfArd {
            lengthscales: hyp.lengthscales(),
            signal_variance: hyp.signal_variance(),
        }
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    fn check_cols(&self, x: &DMatrix<f64>, what: &str) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "{what} has {} columns, kernel expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }
}

impl Kernel for RbfArd {
    fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn n_params(&self) -> usize {
        self.dim() + 1
    }

    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((ai, bi), l)| {
                let t = (ai - bi) / l;
                t * t
            })
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }

    fn prior_variance(&self, _x: &[f64]) -> f64 {
        self.signal_variance
    }

    fn matrix(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_cols(x1, "X1")?;
        self.check_cols(x2, "X2")?;
        let (n1, n2) = (x1.nrows(), x2.nrows());
        let mut r2 = DMatrix::<f64>::zeros(n1, n2);
        for (d, l) in self.lengthscales.iter().enumerate() {
            let a = x1.column(d);
            let b = x2.column(d);
            for j in 0..n2 {
                let bj = b[j];
                let mut out = r2.column_mut(j);
                for i in 0..n1 {
                    let t = (a[i] - bj) / l;
                    out[i] += t * t;
                }
            }
        }
        let sf2 = self.signal_variance;
        r2.apply(|v| *v = sf2 * (-0.5 * *v).exp());
        Ok(r2)
    }

    fn contract_gradients(&self, x: &DMatrix<f64>, k: &DMatrix<f64>, w: &DMatrix<f64>) -> Vec<f64> {
        let n = x.nrows();
        let mut out = Vec::with_capacity(self.n_params());
        // ∂K_ij/∂log ℓ_d = K_ij (x_id − x_jd)² / ℓ_d²
        for (d, l) in self.lengthscales.iter().enumerate() {
            let col = x.column(d);
            let inv_l2 = 1.0 / (l * l);
            let mut acc = 0.0;
            for j in 0..n {
                let xj = col[j];
                let kj = k.column(j);
                let wj = w.column(j);
                let mut s = 0.0;
                for i in 0..n {
                    let diff = col[i] - xj;
                    s += wj[i] * kj[i] * diff * diff;
                }
                acc += s;
            }
            out.push(acc * inv_l2);
        }
        // ∂K/∂log σ_f = 2K
        out.push(2.0 * w.component_mul(k).sum());
        out
    }
}

/// Covariance matrix between the rows of `x1` and `x2` under the RBF-ARD
/// kernel described by `hyp`.
pub fn kernel_matrix(x1: &DMatrix<f64>, x2: &DMatrix<f64>, hyp: &Hyperparameters) -> Result<DMatrix<f64>> {
    hyp.kernel().matrix(x1, x2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hyp(ls: &[f64], sf: f64) -> Hyperparameters {
        Hyperparameters::from_natural(ls, sf, 0.1).unwrap()
    }

    #[test]
    fn zero_distance_gives_signal_variance() {
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let k = kernel_matrix(&x, &x, &hyp(&[1.0], 1.0)).unwrap();
        assert!((k[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_distance() {
        let a = DMatrix::from_row_slice(1, 1, &[0.0]);
        let b = DMatrix::from_row_slice(1, 1, &[1.0]);
        let k = kernel_matrix(&a, &b, &hyp(&[1.0], 1.0)).unwrap();
        assert!((k[(0, 0)] - 0.606_530_659_712_633_4).abs() < 1e-14);
    }

    #[test]
    fn ard_lengthscales() {
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let k = kernel_matrix(&a, &b, &hyp(&[1.0, 2.0], 2.0)).unwrap();
        assert!((k[(0, 0)] - 4.0 * (-1.0f64).exp()).abs() < 1e-13);
        assert!((k[(0, 0)] - 1.4715).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let b = DMatrix::<f64>::zeros(2, 3);
        let err = kernel_matrix(&a, &b, &hyp(&[1.0, 1.0], 1.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn matrix_agrees_with_pointwise_eval() {
        let x = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -1.0, 0.5, 2.0, -0.3]);
        let kern = hyp(&[0.7, 1.3], 1.1).kernel();
        let k = kern.matrix(&x, &x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a: Vec<f64> = x.row(i).iter().copied().collect();
                let b: Vec<f64> = x.row(j).iter().copied().collect();
                assert!((k[(i, j)] - kern.eval(&a, &b)).abs() < 1e-14);
            }
        }
    }

    fn points(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_permutation_invariant(
            x in points(6, 3),
            ls in proptest::collection::vec(0.2f64..3.0, 3),
            sf in 0.3f64..2.0,
            perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let h = hyp(&ls, sf);
            let k = kernel_matrix(&x, &x, &h).unwrap();
            let sf2 = sf * sf;
            for i in 0..6 {
                prop_assert!((k[(i, i)] - sf2).abs() < 1e-12);
                for j in 0..6 {
                    prop_assert!((k[(i, j)] - k[(j, i)]).abs() < 1e-14);
                    prop_assert!(k[(i, j)] <= sf2 * (1.0 + 1e-14));
                }
            }
            let xp = x.select_rows(&perm);
            let kp = kernel_matrix(&xp, &xp, &h).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert!((kp[(i, j)] - k[(perm[i], perm[j])]).abs() < 1e-14);
                }
            }
        }

        #[test]
        fn distinct_points_fall_strictly_below_signal_variance(
            a in proptest::collection::vec(-2.0f64..2.0, 2),
            shift in 0.01f64..1.0,
        ) {
            let h = hyp(&[1.0, 1.0], 1.0);
            let kern = h.kernel();
            let b = vec![a[0] + shift, a[1]];
            prop_assert!(kern.eval(&a, &b) < 1.0);
            prop_assert_eq!(kern.eval(&a, &a), 1.0);
        }
    }
}
