//! The variational training objective: KDE likelihood, entropy and depth
//! regularizer.

mod entropy;
mod kde;
mod loss;

pub use entropy::{
    entropy_estimate, entropy_graph, entropy_mc, EntropyDraws, EntropyEstimate, EntropyVars,
};
pub use kde::{kde_graph, kde_loglik};
pub use loss::{batch_loss, loss_graph, LossBreakdown, LossConfig, LossVars, TrainBatch};
