//! Numeric kernel: dense `f64` arrays, a tape for reverse-mode
//! differentiation, the layer primitives the models are built from, and the
//! training plumbing around them (parameter store, seeded randomness, Adam,
//! checkpoints, gradient checking).

pub mod array;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;

pub use array::DenseArray;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{KernelError, Result};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use nn::{
    gru_forward, gru_unroll, gumbel_softmax_sample, gumbel_softmax_with_noise, kl_diag_gaussians, mlp_forward, mse,
    Activation, GruCell,
};
pub use optim::{Adam, StepDecay};
pub use params::{Init, ParameterStore};
pub use rng::SeededRng;
pub use tape::{Gradients, Tape, Var};
