//! A small inference engine that decides everything it can before the first
//! inference: convolution algorithms and backends are picked by an explicit
//! cost model, Winograd transforms are generated for the chosen tile sizes,
//! and every intermediate tensor gets a fixed offset in a memory pool.

pub mod backend;
pub mod bench;
pub mod compare;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod preinference;
pub mod presets;
pub mod reference;
pub mod tensor;
pub mod winograd;

pub use error::{Error, Result};
