//! Equilibrated recurrent cells at desk scale.
//!
//! Recurrent cells whose per-timestep hidden state is driven toward the
//! equilibrium of a self-feedback map by a handful of inexact-Newton
//! residual steps with learnable step sizes, trained end to end with
//! exact reverse-accumulation gradients. The crate carries everything
//! needed to reproduce the behavior at small scale:
//!
//! - [`linalg`]: the dense `f64` kernel (matvec, axpy, power-iteration
//!   spectral norms, Frobenius distances);
//! - [`fixed_point`]: the inexact-Newton solver with convergence traces,
//!   the scalar equilibrium map Φ of h = tanh(h + α), and the exact /
//!   Neumann-approximated linear fixed points;
//! - [`cells`]: the cell family (vanilla RNN, the tanh equilibrium cell,
//!   the Neumann exemplar, FastRNN as its U = 0, K = 1 special case) and
//!   the taped full-sequence forward pass;
//! - [`train`]: softmax cross-entropy, exact backpropagation through the
//!   space-time unrolling, a finite-difference gradient checker, Adam
//!   with periodic learning-rate halving, training and evaluation;
//! - [`data`]: the 2-D random-walk task, CSV ingestion, stratified
//!   splits, standardization;
//! - [`diagnostics`]: parameter-trajectory distances, per-timestep class
//!   discriminability, η trend reports, contraction-norm statistics;
//! - [`checkpoint`]: the versioned text checkpoint format and a spillable
//!   per-epoch snapshot store.
//!
//! Determinism is a design constraint throughout: a fixed seed produces
//! bit-identical datasets, initializations, loss traces and checkpoints
//! (see [`rng`] for the fully specified generator).

pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fixed_point;
pub mod linalg;
pub mod rng;
pub mod train;

pub use cells::{
    forward_sequence, Activation, CellKind, ErnnParams, Forward, ForwardTape, ModelConfig,
    SequenceView,
};
pub use checkpoint::{load_checkpoint_file, save_checkpoint_file, CheckpointStore};
pub use data::{gen_random_walks, split, SequenceDataset};
pub use error::{Error, Result};
pub use fixed_point::{
    check_contraction, inexact_newton_solve, phi_curve, phi_derivative, phi_scalar,
    ResidualSystem, SolveTrace,
};
pub use linalg::{DenseMatrix, DenseVector};
pub use train::{evaluate, train, AdamState, EpochRecord, GradientSet, TrainConfig, TrainOutcome};
