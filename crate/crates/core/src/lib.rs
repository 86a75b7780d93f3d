pub mod als;
pub mod bench;
pub mod dense;
pub mod error;
pub mod io;
pub mod krp;
pub mod lstsq;
pub mod segtree;
pub mod tensor;

pub use error::{Error, Result};
