pub mod bitstats;
pub mod codecs;
pub mod corpus;
pub mod error;
pub mod imaging;
mod special;
pub mod tracing;
pub mod whitening;

pub use error::{Error, Result};
