//! Elastic weight consolidation: quadratic penalties around per-experience
//! anchors weighted by the empirical Fisher diagonal.

use crate::corpus::MethodSample;
use crate::error::Result;
use crate::numcore::Rng;
use crate::strategies::GradOracle;

/// One consolidated experience: parameter snapshot plus Fisher diagonal.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub theta_star: Vec<f64>,
    pub fisher: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EwcState {
    pub lambda: f64,
    pub n_fisher: usize,
    pub anchors: Vec<Anchor>,
}

impl EwcState {
    pub fn new(lambda: f64, n_fisher: usize) -> Self {
        EwcState { lambda, n_fisher, anchors: Vec::new() }
    }
}

/// Empirical Fisher diagonal: mean over sampled examples of the squared
/// per-example NLL gradient, paired with the current parameter snapshot.
/// When `n_fisher` exceeds the pool, all samples are used.
pub fn ewc_consolidate(
    state: &mut EwcState,
    oracle: &mut dyn GradOracle,
    experience_train: &[MethodSample],
    rng: &mut Rng,
) -> Result<()> {
    let theta_star = oracle.param_vector();
    let n = state.n_fisher.min(experience_train.len());
    let mut picks = rng.sample_indices(experience_train.len(), n);
    picks.sort_unstable();
    let mut fisher = vec![0.0; theta_star.len()];
    for &i in &picks {
        let grad = oracle.sample_nll_grad(&experience_train[i])?;
        for (f, g) in fisher.iter_mut().zip(&grad) {
            *f += g * g;
        }
    }
    for f in fisher.iter_mut() {
        *f /= n as f64;
    }
    state.anchors.push(Anchor { theta_star, fisher });
    Ok(())
}

/// (lambda/2) * sum over anchors of F_i (theta_i - theta*_i)^2, plus the
/// analytic gradient lambda * F (theta - theta*) summed over anchors.
pub fn ewc_penalty(theta: &[f64], state: &EwcState) -> (f64, Option<Vec<f64>>) {
    if state.anchors.is_empty() || state.lambda == 0.0 {
        return (0.0, None);
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.len()];
    for anchor in &state.anchors {
        for i in 0..theta.len() {
            let d = theta[i] - anchor.theta_star[i];
            loss += anchor.fisher[i] * d * d;
            grad[i] += state.lambda * anchor.fisher[i] * d;
        }
    }
    (0.5 * state.lambda * loss, Some(grad))
}
