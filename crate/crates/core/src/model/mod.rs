//! The learned field approximator and its training machinery.

pub mod io;
pub mod mlp;
pub mod optim;

pub use io::{load_weights, save_weights};
pub use mlp::{Activation, FieldApproximator, Layer, Parameters};
pub use optim::{ema_apply, ema_update, optimizer_step, EmaState, OptimizerState};

/// Hidden widths of the default toy network.
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 128, 128];
