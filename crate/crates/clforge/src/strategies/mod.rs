//! The five continual fine-tuning strategies behind one hook contract:
//! Naive, Replay, Cumulative, EWC, SI, RWalk.

pub mod ewc;
pub mod replay;
pub mod rwalk;
pub mod si;

use serde::{Deserialize, Serialize};

use crate::corpus::MethodSample;
use crate::error::{Error, Result};
use crate::numcore::Rng;

pub use ewc::{ewc_consolidate, ewc_penalty, Anchor, EwcState};
pub use replay::{replay_update, replay_view, ReplayBuffer};
pub use rwalk::{rwalk_after_step, rwalk_consolidate, rwalk_penalty, RwalkState};
pub use si::{si_after_step, si_consolidate, si_penalty, SiState};

/// Model access the harness lends to strategies at consolidation time.
pub trait GradOracle {
    /// Canonical flat parameter vector.
    fn param_vector(&mut self) -> Vec<f64>;
    /// Gradient of the single-example NLL w.r.t. the canonical vector.
    fn sample_nll_grad(&mut self, sample: &MethodSample) -> Result<Vec<f64>>;
}

pub const DEFAULT_REPLAY_CAPACITY: usize = 200;
pub const DEFAULT_EWC_LAMBDA: f64 = 100.0;
pub const DEFAULT_EWC_N_FISHER: usize = 256;
pub const DEFAULT_SI_C: f64 = 0.1;
pub const DEFAULT_SI_XI: f64 = 0.1;
pub const DEFAULT_RWALK_LAMBDA: f64 = 1.0;
pub const DEFAULT_RWALK_ALPHA: f64 = 0.9;
pub const DEFAULT_RWALK_XI: f64 = 0.1;

/// Strategy block of the run config: a name plus strategy-specific params.
/// Unknown params are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub name: String,
    #[serde(default = "empty_params")]
    pub params: serde_json::Value,
}

fn empty_params() -> serde_json::Value {
    serde_json::json!({})
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayParams {
    #[serde(default = "d_capacity")]
    capacity: usize,
}
fn d_capacity() -> usize {
    DEFAULT_REPLAY_CAPACITY
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EwcParams {
    #[serde(default = "d_ewc_lambda")]
    lambda: f64,
    #[serde(default = "d_ewc_n")]
    n_fisher: usize,
}
fn d_ewc_lambda() -> f64 {
    DEFAULT_EWC_LAMBDA
}
fn d_ewc_n() -> usize {
    DEFAULT_EWC_N_FISHER
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SiParams {
    #[serde(default = "d_si_c")]
    c: f64,
    #[serde(default = "d_si_xi")]
    xi: f64,
}
fn d_si_c() -> f64 {
    DEFAULT_SI_C
}
fn d_si_xi() -> f64 {
    DEFAULT_SI_XI
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RwalkParams {
    #[serde(default = "d_rw_lambda")]
    lambda: f64,
    #[serde(default = "d_rw_alpha")]
    alpha: f64,
    #[serde(default = "d_rw_xi")]
    xi: f64,
}
fn d_rw_lambda() -> f64 {
    DEFAULT_RWALK_LAMBDA
}
fn d_rw_alpha() -> f64 {
    DEFAULT_RWALK_ALPHA
}
fn d_rw_xi() -> f64 {
    DEFAULT_RWALK_XI
}

impl StrategyConfig {
    pub fn naive() -> Self {
        StrategyConfig { name: "naive".into(), params: empty_params() }
    }

    pub fn named(name: &str, params: serde_json::Value) -> Self {
        StrategyConfig { name: name.into(), params }
    }

    /// Validate and instantiate. Fails before any training on bad names or
    /// unknown params.
    pub fn build(&self) -> Result<Strategy> {
        let p = self.params.clone();
        let bad = |e: serde_json::Error| {
            Error::Data(format!("strategy '{}': invalid params: {e}", self.name))
        };
        match self.name.as_str() {
            "naive" => {
                let _: NoParams = serde_json::from_value(p).map_err(bad)?;
                Ok(Strategy::Naive)
            }
            "replay" => {
                let rp: ReplayParams = serde_json::from_value(p).map_err(bad)?;
                if rp.capacity == 0 {
                    return Err(Error::Data("replay capacity must be positive".into()));
                }
                Ok(Strategy::Replay(ReplayBuffer::new(rp.capacity)))
            }
            "cumulative" => {
                let _: NoParams = serde_json::from_value(p).map_err(bad)?;
                Ok(Strategy::Cumulative(ReplayBuffer::new(usize::MAX)))
            }
            "ewc" => {
                let ep: EwcParams = serde_json::from_value(p).map_err(bad)?;
                Ok(Strategy::Ewc(EwcState::new(ep.lambda, ep.n_fisher)))
            }
            "si" => {
                let sp: SiParams = serde_json::from_value(p).map_err(bad)?;
                Ok(Strategy::Si(SiState::new(sp.c, sp.xi)))
            }
            "rwalk" => {
                let rp: RwalkParams = serde_json::from_value(p).map_err(bad)?;
                Ok(Strategy::Rwalk(RwalkState::new(rp.lambda, rp.alpha, rp.xi)))
            }
            other => Err(Error::Data(format!(
                "unknown strategy '{other}' (expected naive|replay|cumulative|ewc|si|rwalk)"
            ))),
        }
    }
}

/// One continual-learning strategy with its memory. Naive implements every
/// hook as identity/zero.
#[derive(Debug, Clone)]
pub enum Strategy {
    Naive,
    Replay(ReplayBuffer),
    Cumulative(ReplayBuffer),
    Ewc(EwcState),
    Si(SiState),
    Rwalk(RwalkState),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Replay(_) => "replay",
            Strategy::Cumulative(_) => "cumulative",
            Strategy::Ewc(_) => "ewc",
            Strategy::Si(_) => "si",
            Strategy::Rwalk(_) => "rwalk",
        }
    }

    pub fn before_experience(&mut self, theta: &[f64], _experience_index: usize) {
        match self {
            Strategy::Si(state) => state.ensure_initialized(theta),
            Strategy::Rwalk(state) => state.ensure_initialized(theta.len()),
            _ => {}
        }
    }

    /// Regularizers see the current data unchanged; replay-based strategies
    /// append their buffered samples.
    pub fn training_view(&self, current_train: &[MethodSample]) -> Vec<MethodSample> {
        match self {
            Strategy::Replay(buffer) | Strategy::Cumulative(buffer) => {
                replay_view(buffer, current_train)
            }
            _ => current_train.to_vec(),
        }
    }

    /// Penalty term and its gradient contribution at theta; inert hooks
    /// return exactly (0, None).
    pub fn penalty(&self, theta: &[f64]) -> (f64, Option<Vec<f64>>) {
        match self {
            Strategy::Ewc(state) => ewc_penalty(theta, state),
            Strategy::Si(state) => si_penalty(theta, state),
            Strategy::Rwalk(state) => rwalk_penalty(theta, state),
            _ => (0.0, None),
        }
    }

    /// Bookkeeping after each optimizer step; receives the task-loss
    /// gradient (penalty excluded) and the actual parameter movement.
    pub fn after_step(&mut self, task_grads: &[f64], theta_before: &[f64], theta_after: &[f64]) {
        match self {
            Strategy::Si(state) => si_after_step(state, task_grads, theta_before, theta_after),
            Strategy::Rwalk(state) => {
                rwalk_after_step(state, task_grads, theta_before, theta_after)
            }
            _ => {}
        }
    }

    /// End-of-experience consolidation / buffer rebalancing.
    pub fn after_experience(
        &mut self,
        oracle: &mut dyn GradOracle,
        experience_train: &[MethodSample],
        experience_index: usize,
        rng: &mut Rng,
    ) -> Result<()> {
        match self {
            Strategy::Naive => Ok(()),
            Strategy::Replay(buffer) | Strategy::Cumulative(buffer) => {
                replay_update(buffer, experience_train, experience_index, rng);
                Ok(())
            }
            Strategy::Ewc(state) => ewc_consolidate(state, oracle, experience_train, rng),
            Strategy::Si(state) => {
                let theta = oracle.param_vector();
                si_consolidate(state, &theta);
                Ok(())
            }
            Strategy::Rwalk(state) => {
                let theta = oracle.param_vector();
                rwalk_consolidate(state, &theta);
                Ok(())
            }
        }
    }

    /// Buffer occupancy for diagnostics (replay-based strategies only).
    pub fn buffer_len(&self) -> Option<usize> {
        match self {
            Strategy::Replay(b) | Strategy::Cumulative(b) => Some(b.len()),
            _ => None,
        }
    }
}
