pub mod error;
pub mod fock;
pub mod measurement;
pub mod numerics;
pub mod protocol;
pub mod seeding;
pub mod tomography;

pub use error::{Error, Result};
