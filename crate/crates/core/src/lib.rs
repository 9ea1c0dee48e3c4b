pub mod asymptotics;
pub mod error;
pub mod instrument;
pub mod linop;
pub mod model;
mod serde_rows;
pub mod thermometer;
pub mod trajectory;

pub use error::{Error, Result};
