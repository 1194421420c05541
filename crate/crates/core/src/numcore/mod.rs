//! Dense arrays, reverse-mode differentiation, seeded randomness, and the optimizer.

mod array;
mod gradcheck;
mod optim;
mod params;
mod rng;
mod tape;

pub use array::Array;
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use rng::{Rng, RngState};
pub use tape::{Elementwise, Gradients, Tape, Var};
