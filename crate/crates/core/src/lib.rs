pub mod error;
pub mod hyperband;
pub mod io;
pub mod metrics;
pub mod optimizers;
pub mod protocols;
pub mod search;
pub mod seed;
pub mod tasks;
pub mod verify;

pub use error::{Diverged, Error, Result};
