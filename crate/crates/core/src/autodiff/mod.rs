//! Dense-tensor engine with hand-derived reverse-mode passes for MLPs.

mod activation;
mod layernorm;
mod optim;
mod pass;
mod tensor;

pub use activation::{Activation, DEFAULT_LEAKY_SLOPE};
pub use layernorm::{
    layernorm, layernorm_backward, NormCache, NormGrads, NormPlacement, LAYERNORM_EPS,
};
pub use optim::sgd_step;
pub use pass::{
    argmax_rows, backward_loss, backward_scalar, cross_entropy, forward, hidden_gradients,
    hidden_layer, log_softmax, logits_from, loss_seed, softmax, ActivationTrace, GradSource,
    GradientBundle, HiddenTrace, Selector,
};
pub use tensor::Tensor;
