//! Functional operators: every forward has an explicit, hand-written
//! backward. Layers in [`crate::nn`] wrap these with parameter storage and
//! caching; the functions themselves are pure (no hidden state), which keeps
//! them directly checkable against finite differences and naive reference
//! loops.

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod pool;
mod softmax;

pub use activation::{activate, activate_backward, Activation};
pub use batchnorm::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache, BnStats, BN_EPS,
};
pub use conv::{conv2d, conv2d_backward, conv_out_dim};
pub use linear::{linear, linear_backward};
pub use pool::{
    global_pool, global_pool_backward, pool2d, pool2d_backward, pool2d_cached, GlobalPoolKind,
    PoolCache, PoolKind, STATS_EPS,
};
pub use softmax::{log_softmax, softmax_xent, softmax_xent_backward};
