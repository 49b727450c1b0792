//! Actor-critic networks and action distributions.

pub mod checkpoint;
mod distribution;
mod network;

pub use distribution::{
    actions_to_tensor, entropy_taped, kl_taped, log_prob_taped, log_softmax, ActionDistribution, DistBatch, HeadKind,
};
pub use network::{orthogonal, Bound, NetSpec, PolicyNetwork, LOG_STD_MAX, LOG_STD_MIN};
