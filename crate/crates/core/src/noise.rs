//! Per-type label-flip channel between the clean-type belief `z` and the
//! observed noisy label `y`: `Pr(y_i) = p_i·z_i + (1 − p_i)·(1 − z_i)`.
//!
//! `p` is stored as a plain parameter vector (`noise.p`, shape `1×T`),
//! initialised to 1 (identity channel) and clamped into `[P_FLOOR, 1]`
//! after every optimizer step.

use crate::tensor::{ParamStore, Tensor};

pub const P_FLOOR: f64 = 0.01;
pub const NOISE_PARAM: &str = "noise.p";

pub fn apply_noise(z: &[f64], p: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), p.len());
    z.iter()
        .zip(p)
        .map(|(&z, &p)| p * z + (1.0 - p) * (1.0 - z))
        .collect()
}

pub fn project_noise_params(p: &mut [f64]) {
    for v in p {
        *v = v.clamp(P_FLOOR, 1.0);
    }
}

pub fn init_noise_params(params: &mut ParamStore, n_types: usize) {
    params.insert(NOISE_PARAM, Tensor::row(vec![1.0; n_types]));
}

/// Clamps `noise.p` in place when present.
pub fn project_store(params: &mut ParamStore) {
    if let Some(p) = params.get_mut(NOISE_PARAM) {
        project_noise_params(p.data_mut());
    }
}
