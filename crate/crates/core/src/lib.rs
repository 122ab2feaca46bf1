//! Bayes-optimal approximate message passing for low-rank decomposition of
//! noisy order-p tensors of arbitrary shape, its state-evolution prediction,
//! phase-boundary search and an alternating-least-squares baseline.

pub mod als;
pub mod amp;
pub mod bp;
pub mod error;
pub mod harness;
pub mod io;
pub mod overlap;
pub mod phase;
pub mod priors;
pub mod quadrature;
pub mod rng;
pub mod state_evolution;
pub mod tensor;

pub use error::{Error, Result};
pub use overlap::{overlap, self_overlap, OverlapSet};
pub use priors::{posterior_cov, posterior_mean, prior_moments, sample_prior, ChannelState, PriorSpec};
pub use state_evolution::{ModeScaling, SeOutcome, SeParams};
pub use tensor::{
    add_noise, low_rank_tensor, make_shape, mttkrp_all, mttkrp_exclude, DenseTensor, FactorSet, Observation,
    TensorShape,
};
