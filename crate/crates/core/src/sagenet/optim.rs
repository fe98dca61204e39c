use super::params::Params;
use super::TrainConfig;

/// First and second moment estimates for AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One decoupled-weight-decay Adam update of `params` in place.
pub fn adamw_step(params: &mut Params, grads: &Params, state: &mut AdamState, cfg: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.learning_rate;
    for (((p, g), m), v) in params.data.iter_mut().zip(&grads.data).zip(&mut state.m).zip(&mut state.v) {
        *p -= lr * cfg.weight_decay * *p;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}
