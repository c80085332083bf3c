//! Dense tensors, reverse-mode autodiff, Adam, and seeded random streams.

mod adam;
mod error;
mod gradcheck;
mod jacobi;
mod params;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::NumericsError;
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use jacobi::{symmetric_eigen, SymmetricEigen};
pub use params::{ParamStore, ParamVars};
pub use rng::RngStream;
pub use scalar::Scalar;
pub use tape::{BackwardMutation, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

/// `x / ‖x‖`, skipped when `x` is already unit-norm to within `1e-12`.
/// Vectors whose squared norm over- or underflows are first divided by their
/// largest magnitude; the returned norm is that of the original vector.
pub fn unit_normalize(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 && (norm.is_infinite() || norm < 1e-150) {
        for v in x.iter_mut() {
            *v /= peak;
        }
        let scaled = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in x.iter_mut() {
            *v /= scaled;
        }
        return peak * scaled;
    }
    if norm > 0.0 && (norm - 1.0).abs() > 1e-12 {
        for v in x.iter_mut() {
            *v /= norm;
        }
    }
    norm
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_normalize_survives_extreme_magnitudes() {
        for (mut x, want) in [
            (vec![3e300, 4e300], vec![0.6, 0.8]),
            (vec![3e-320, 4e-320], vec![0.6, 0.8]),
            (vec![3.0, 4.0], vec![0.6, 0.8]),
        ] {
            let norm = unit_normalize(&mut x);
            assert!(norm > 0.0);
            for (a, b) in x.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{x:?}");
            }
        }
        let mut zero = vec![0.0, 0.0];
        assert_eq!(unit_normalize(&mut zero), 0.0);
        assert_eq!(zero, vec![0.0, 0.0]);
    }
}
