use super::{NumericsError, Scalar, Tensor};

const MAX_SWEEPS: usize = 100;

/// Eigenpairs of a symmetric matrix, eigenvalues in descending order.
/// Column `k` of `vectors` belongs to `values[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricEigen<S> {
    pub values: Vec<S>,
    pub vectors: Tensor<S>,
}

/// Cyclic Jacobi eigendecomposition. Sweeps until the off-diagonal
/// Frobenius norm is at most `tol · max(1, ‖A‖_F)`.
pub fn symmetric_eigen<S: Scalar>(a: &Tensor<S>, tol: S) -> Result<SymmetricEigen<S>, NumericsError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumericsError::Dimension {
            op: "symmetric_eigen",
            left: a.shape().to_vec(),
            right: vec![n, n],
        });
    }
    if !a.all_finite() {
        return Err(NumericsError::NonFinite { op: "symmetric_eigen" });
    }
    let mut m = a.data().to_vec();
    let mut v = Tensor::<S>::identity(n).into_data();
    let frob = m.iter().map(|&x| x * x).sum::<S>().sqrt();
    let limit = tol * frob.max(S::one());
    let off = |m: &[S]| {
        let mut s = S::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s = s + m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    for _ in 0..MAX_SWEEPS {
        if off(&m) <= limit {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (S::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].partial_cmp(&m[i * n + i]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![S::zero(); n * n];
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + col] = v[k * n + src];
        }
    }
    Ok(SymmetricEigen {
        values,
        vectors: Tensor::new(vec![n, n], vectors)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn random_symmetric(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = RngStream::new(seed, 0);
        let b: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = b[i * n + j] + b[j * n + i];
            }
        }
        Tensor::new(vec![n, n], a).unwrap()
    }

    #[test]
    fn reconstructs_and_orthonormal() {
        for (n, seed) in [(1, 0), (2, 1), (5, 2), (16, 3)] {
            let a = random_symmetric(n, seed);
            let e = symmetric_eigen(&a, 1e-12).unwrap();
            let v = &e.vectors;
            let vtv = v.transpose().matmul(v).unwrap();
            let eye = Tensor::<f64>::identity(n);
            for (x, y) in vtv.data().iter().zip(eye.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            let mut lam = Tensor::zeros(&[n, n]);
            for k in 0..n {
                lam.data_mut()[k * n + k] = e.values[k];
            }
            let back = v.matmul(&lam).unwrap().matmul(&v.transpose()).unwrap();
            for (x, y) in back.data().iter().zip(a.data()) {
                assert!((x - y).abs() < 1e-10);
            }
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn matches_nalgebra_spectrum() {
        let n = 9;
        let a = random_symmetric(n, 7);
        let ours = symmetric_eigen(&a, 1e-12).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(n, n, a.data());
        let mut theirs: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (x, y) in ours.values.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn diagonal_input_and_f32() {
        let a = Tensor::new(vec![3, 3], vec![1.0f32, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let e = symmetric_eigen(&a, 1e-6).unwrap();
        assert_eq!(e.values, vec![3.0, 2.0, 1.0]);
        assert!(matches!(
            symmetric_eigen(&Tensor::<f64>::zeros(&[2, 3]), 1e-12),
            Err(NumericsError::Dimension { .. })
        ));
    }
}
