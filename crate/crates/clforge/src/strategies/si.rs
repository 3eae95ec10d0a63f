//! Synaptic intelligence: per-parameter path-integral importance.

/// Path-integral accumulator and consolidated importance.
#[derive(Debug, Clone)]
pub struct SiState {
    pub c: f64,
    pub xi: f64,
    pub omega: Vec<f64>,
    pub big_omega: Vec<f64>,
    pub anchor: Vec<f64>,
    initialized: bool,
}

impl SiState {
    pub fn new(c: f64, xi: f64) -> Self {
        SiState {
            c,
            xi,
            omega: Vec::new(),
            big_omega: Vec::new(),
            anchor: Vec::new(),
            initialized: false,
        }
    }

    /// Lazily size the accumulators and anchor on first sight of theta.
    pub fn ensure_initialized(&mut self, theta: &[f64]) {
        if !self.initialized {
            self.omega = vec![0.0; theta.len()];
            self.big_omega = vec![0.0; theta.len()];
            self.anchor = theta.to_vec();
            self.initialized = true;
        }
    }
}

/// Accumulate the path integral after one optimizer step, using the
/// task-loss gradient (penalty gradient excluded).
pub fn si_after_step(
    state: &mut SiState,
    task_grads: &[f64],
    theta_before: &[f64],
    theta_after: &[f64],
) {
    state.ensure_initialized(theta_before);
    for i in 0..task_grads.len() {
        state.omega[i] += -task_grads[i] * (theta_after[i] - theta_before[i]);
    }
}

/// End-of-experience consolidation: fold omega into Omega (clamped at 0),
/// reset omega, move the anchor.
pub fn si_consolidate(state: &mut SiState, theta_now: &[f64]) {
    state.ensure_initialized(theta_now);
    for i in 0..theta_now.len() {
        let delta = theta_now[i] - state.anchor[i];
        let contribution = state.omega[i] / (delta * delta + state.xi);
        state.big_omega[i] += contribution.max(0.0);
        state.omega[i] = 0.0;
    }
    state.anchor = theta_now.to_vec();
}

/// c * sum Omega_i (theta_i - anchor_i)^2 with analytic gradient
/// 2c * Omega (theta - anchor).
pub fn si_penalty(theta: &[f64], state: &SiState) -> (f64, Option<Vec<f64>>) {
    if !state.initialized || state.c == 0.0 {
        return (0.0, None);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let d = theta[i] - state.anchor[i];
        loss += state.big_omega[i] * d * d;
        grad[i] = 2.0 * state.c * state.big_omega[i] * d;
    }
    (state.c * loss, Some(grad))
}
