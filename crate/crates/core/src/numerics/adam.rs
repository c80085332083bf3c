use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators and step counter for bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub first_moment: ParamStore<S>,
    pub second_moment: ParamStore<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            t: 0,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &ParamStore<S>,
    state: &mut AdamState<S>,
) -> Result<(), NumericsError> {
    params.check_same_layout(grads)?;
    params.check_same_layout(&state.first_moment)?;
    state.t += 1;
    let c = state.config;
    let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
    let lr = S::lit(c.lr);
    let eps = S::lit(c.epsilon);
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let corr1 = S::one() - b1.powi(t);
    let corr2 = S::one() - b2.powi(t);

    for (name, p) in params.iter_mut() {
        let g = grads.get(name).expect("layout checked");
        let m = state.first_moment.get_mut(name).expect("layout checked");
        for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
            *mi = b1 * *mi + (S::one() - b1) * gi;
        }
        let v = state.second_moment.get_mut(name).expect("layout checked");
        for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = b2 * *vi + (S::one() - b2) * gi * gi;
        }
        let m = state.first_moment.get(name).expect("layout checked");
        let v = state.second_moment.get(name).expect("layout checked");
        for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = mi / corr1;
            let v_hat = vi / corr2;
            *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
