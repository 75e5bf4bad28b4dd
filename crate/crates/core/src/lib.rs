pub mod channels;
pub mod dynamics;
pub mod disturbance;
pub mod error;
pub mod indirect;
pub mod lie;
pub mod matrix;
pub mod observer;
pub mod random;
pub mod reconstruction;
pub mod scenario;

pub use error::{Error, Result};
