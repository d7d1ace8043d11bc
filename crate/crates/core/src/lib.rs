//! Neural product autoencoders over the AWGN channel.
//!
//! The crate contains a small reverse-mode autodiff engine ([`autodiff`]),
//! fully connected networks and Adam ([`nn`]), the two-dimensional product
//! encoder and iterative decoder ([`model`]), the channel ([`channel`]),
//! alternating training ([`train`]), Monte-Carlo evaluation ([`eval`]) and
//! exact GF(2) product codes used as a reference ([`classical`]).

pub mod autodiff;
pub mod channel;
pub mod checkpoint;
pub mod classical;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod real;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, ParamId, Parameter, Tape, Var};
pub use channel::{ebn0_db_from_snr_db, snr_db_from_ebn0_db, AwgnChannel, ChannelParams};
pub use checkpoint::Checkpoint;
pub use classical::{LinearCode, ProductCodeParams};
pub use error::{CheckpointError, Error, Result};
pub use eval::{monte_carlo_eval, sweep, EvalOptions, EvalResult, Link, StopRule, UncodedBpsk};
pub use model::{ModelConfig, ProductAe, ProductDecoder, ProductEncoder, Role};
pub use nn::{Adam, AdamConfig, Fcnn, FcnnShape};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{Batch, FinetuneConfig, SnrPolicy, Trainer, TrainingConfig};
