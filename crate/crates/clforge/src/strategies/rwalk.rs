//! RWalk: Fisher EMA combined with a path-based score, anchored per
//! experience.

/// Running Fisher EMA plus score accumulators and per-experience anchors.
#[derive(Debug, Clone)]
pub struct RwalkState {
    pub lambda: f64,
    pub alpha: f64,
    pub xi: f64,
    pub f_ema: Vec<f64>,
    pub s_accum: Vec<f64>,
    s_prev: Vec<f64>,
    pub anchors: Vec<(Vec<f64>, Vec<f64>)>, // (theta_star, importance)
    initialized: bool,
}

impl RwalkState {
    pub fn new(lambda: f64, alpha: f64, xi: f64) -> Self {
        RwalkState {
            lambda,
            alpha,
            xi,
            f_ema: Vec::new(),
            s_accum: Vec::new(),
            s_prev: Vec::new(),
            anchors: Vec::new(),
            initialized: false,
        }
    }

    pub fn ensure_initialized(&mut self, dim: usize) {
        if !self.initialized {
            self.f_ema = vec![0.0; dim];
            self.s_accum = vec![0.0; dim];
            self.s_prev = vec![0.0; dim];
            self.initialized = true;
        }
    }
}

/// Update the Fisher EMA and the path score after one optimizer step, using
/// the task-loss gradient (penalty gradient excluded).
pub fn rwalk_after_step(
    state: &mut RwalkState,
    task_grads: &[f64],
    theta_before: &[f64],
    theta_after: &[f64],
) {
    state.ensure_initialized(task_grads.len());
    for i in 0..task_grads.len() {
        let g = task_grads[i];
        state.f_ema[i] = state.alpha * state.f_ema[i] + (1.0 - state.alpha) * g * g;
        let delta = theta_after[i] - theta_before[i];
        let gain = (-g * delta).max(0.0);
        state.s_accum[i] += gain / (0.5 * state.f_ema[i] * delta * delta + state.xi);
    }
}

/// End-of-experience consolidation: importance = F_ema + running-average
/// score; append the anchor and reset the score accumulator.
pub fn rwalk_consolidate(state: &mut RwalkState, theta_now: &[f64]) {
    state.ensure_initialized(theta_now.len());
    let mut importance = Vec::with_capacity(theta_now.len());
    for i in 0..theta_now.len() {
        let s_norm = (state.s_prev[i] + state.s_accum[i]) / 2.0;
        importance.push(state.f_ema[i] + s_norm);
        state.s_prev[i] = s_norm;
        state.s_accum[i] = 0.0;
    }
    state.anchors.push((theta_now.to_vec(), importance));
}

/// lambda * sum over anchors of importance_i (theta_i - theta*_i)^2 with
/// analytic gradient 2 lambda importance (theta - theta*).
pub fn rwalk_penalty(theta: &[f64], state: &RwalkState) -> (f64, Option<Vec<f64>>) {
    if state.anchors.is_empty() || state.lambda == 0.0 {
        return (0.0, None);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for (theta_star, importance) in &state.anchors {
        for i in 0..theta.len() {
            let d = theta[i] - theta_star[i];
            loss += importance[i] * d * d;
            grad[i] += 2.0 * state.lambda * importance[i] * d;
        }
    }
    (state.lambda * loss, Some(grad))
}
